mod common;

use common::arch::{self, desk, probe, values};

use candle_core::{DType, Device, Tensor};
use shiftadapt::nets::{
    build_autoencoder, build_classifier_head, build_discriminator, build_encoder,
    head_parameter_count, parameter_count, Family, Mode, NetworkSpec,
};

#[test]
fn every_encoder_family_is_deterministic_and_finite() {
    let x = probe(&[2, 4, 32, 32], 1);
    for family in Family::ENCODERS {
        let spec = desk(family);
        let a = build_encoder(&spec).unwrap();
        let b = build_encoder(&spec).unwrap();
        assert_eq!(
            a.store().digest().unwrap(),
            b.store().digest().unwrap(),
            "{family}"
        );
        let za = a.forward(&x, Mode::Eval).unwrap();
        assert_eq!(za.dims(), &[2, 16], "{family}");
        assert!(values(&za).iter().all(|v| v.is_finite()), "{family}");
        assert_eq!(
            values(&za),
            values(&b.forward(&x, Mode::Eval).unwrap()),
            "{family}"
        );
        let other = build_encoder(&spec.clone().with_seed(12)).unwrap();
        assert_ne!(a.store().digest().unwrap(), other.store().digest().unwrap());
    }
}

#[test]
fn grouped_residual50_at_full_input_size() {
    let spec = NetworkSpec::new(Family::GroupedResidual50, (10, 256, 256))
        .with_width(4)
        .with_cardinality(8);
    let enc = build_encoder(&spec).unwrap();
    let z = enc
        .forward(&probe(&[1, 10, 256, 256], 2), Mode::Eval)
        .unwrap();
    assert_eq!(z.dims(), &[1, 512]);
    assert!(values(&z).iter().all(|v| v.is_finite()));
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = NetworkSpec::new(Family::GroupedResidual50, (10, 64, 64)).with_cardinality(5);
    assert!(build_encoder(&bad).is_err());
    assert!(parameter_count(&bad).is_err());
    assert!(build_encoder(&NetworkSpec::new(Family::Residual18, (10, 16, 16))).is_err());
    assert!(parameter_count(&NetworkSpec::discriminator(0)).is_err());
}

#[test]
fn grouping_reduces_parameter_count() {
    let grouped = NetworkSpec::new(Family::GroupedResidual50, (10, 256, 256));
    let ungrouped = grouped.clone().with_cardinality(1);
    assert!(parameter_count(&grouped).unwrap() < parameter_count(&ungrouped).unwrap());
}

#[test]
fn parameter_count_matches_built_network() {
    for family in Family::ENCODERS {
        let spec = desk(family);
        assert_eq!(
            parameter_count(&spec).unwrap(),
            build_encoder(&spec).unwrap().store().parameter_count(),
            "{family}"
        );
    }
}

#[test]
fn residual18_parameter_count_at_standard_width() {
    // Standard 18-layer residual body on 3-channel input is 11,176,512
    // parameters without the final 1000-way layer. Here the stem sees 10
    // channels (7*7*7*64 more weights) and no projection is needed.
    let spec = NetworkSpec::new(Family::Residual18, (10, 256, 256));
    assert_eq!(parameter_count(&spec).unwrap(), 11_176_512 + 7 * 7 * 7 * 64);
}

#[test]
fn head_is_affine() {
    assert_eq!(head_parameter_count(4).unwrap(), 10);
    let head = build_classifier_head(4, 3).unwrap();
    let zero = Tensor::zeros((1, 4), DType::F32, &Device::Cpu).unwrap();
    let logits = head.forward(&zero).unwrap();
    assert_eq!(values(&logits), values(head.bias()));
    assert!(head
        .forward(&Tensor::zeros((1, 5), DType::F32, &Device::Cpu).unwrap())
        .is_err());
    let again = build_classifier_head(4, 3).unwrap();
    let p = probe(&[3, 4], 9);
    assert_eq!(
        values(&head.forward(&p).unwrap()),
        values(&again.forward(&p).unwrap())
    );
}

#[test]
fn autoencoder_geometry_and_range() {
    arch::autoencoder_geometry_and_range();
}

#[test]
fn variational_encoder_emits_two_vectors() {
    let spec = NetworkSpec::new(Family::Autoencoder, (3, 32, 32))
        .with_width(2)
        .with_latent(5)
        .with_downsamples(3)
        .variational(true);
    let ae = build_autoencoder(&spec).unwrap();
    let (mean, log_var) = ae
        .encoder
        .forward_dist(&probe(&[4, 3, 32, 32], 5), Mode::Eval)
        .unwrap();
    assert_eq!(mean.dims(), &[4, 5]);
    assert_eq!(log_var.unwrap().dims(), &[4, 5]);
}

#[test]
fn discriminator_contract() {
    let spec = NetworkSpec::discriminator(6).with_seed(2);
    let d = build_discriminator(&spec).unwrap();
    let z = probe(&[7, 6], 6);
    let logits = d.forward(&z).unwrap();
    assert_eq!(logits.dims(), &[7]);
    assert!(values(&logits).iter().all(|v| v.is_finite()));
    let again = build_discriminator(&spec).unwrap();
    assert_eq!(values(&logits), values(&again.forward(&z).unwrap()));
}

#[test]
fn grouped_convolution_isolates_groups() {
    arch::grouped_convolution_isolates_groups();
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    arch::checkpoint_round_trip_is_bitwise();
}

#[test]
fn volumetric_family_is_slice_order_sensitive() {
    arch::volumetric_family_is_slice_order_sensitive();
}

#[test]
fn channel_families_are_permutation_equivariant_with_permuted_stem() {
    arch::channel_families_are_permutation_equivariant_with_permuted_stem();
}
