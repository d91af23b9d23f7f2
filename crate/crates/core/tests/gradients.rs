mod common;

use shiftadapt::nets::Family;

use common::gradcheck;

#[test]
fn miniature_classifier_cross_entropy() {
    let err = gradcheck::miniature_classifier(5, 20);
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn encoder_families_cross_entropy() {
    for family in Family::ENCODERS {
        let err = gradcheck::encoder_family(family, 4, 20);
        assert!(err <= 1e-4, "{family}: relative error {err}");
    }
}

#[test]
fn miniature_variational_autoencoder() {
    let err = gradcheck::miniature_variational(6, 20);
    assert!(err <= 1e-4, "relative error {err}");
}
