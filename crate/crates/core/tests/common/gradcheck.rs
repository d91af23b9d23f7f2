use candle_core::{DType, Device, Tensor};
use shiftadapt::anomaly::vae_loss;
use shiftadapt::nets::layers::{
    global_avg_pool, max_pool_3x3_s2, BatchNorm, Conv2d, ConvOpts, Linear, Mode,
};
use shiftadapt::nets::{
    build_autoencoder_with, build_classifier_with, Family, NetworkSpec, ParamBuilder,
};

use super::gradient_relative_error;

fn probe(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|i| ((((i as u64 + 7) * 2654435761 + seed * 40503) % 2000) as f64) / 1000.0 - 1.0)
        .collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn labels() -> Tensor {
    Tensor::new(&[0u32, 1, 1, 0], &Device::Cpu).unwrap()
}

/// Cross-entropy through conv, grouped conv, batch norm, max pool and two
/// linear layers, parameters drawn from `seed`. Returns the relative error.
pub fn miniature_classifier(seed: u64, points: usize) -> f64 {
    let mut b = ParamBuilder::new(seed, DType::F64);
    let c1 = Conv2d::new(&mut b, "c1", 2, 4, ConvOpts::new(3, 2, 1)).unwrap();
    let bn1 = BatchNorm::new(&mut b, "bn1", 4).unwrap();
    let c2 = Conv2d::new(&mut b, "c2", 4, 4, ConvOpts::new(3, 1, 1).groups(2)).unwrap();
    let bn2 = BatchNorm::new(&mut b, "bn2", 4).unwrap();
    let fc = Linear::new(&mut b, "fc", 4, 3).unwrap();
    let head = Linear::new(&mut b, "head", 3, 2).unwrap();
    let store = b.finish();
    assert!(store.parameter_count() <= 1000);
    let x = probe(&[4, 2, 12, 12], seed);
    let y = labels();
    let loss = || {
        let h = bn1
            .forward(&c1.forward(&x).unwrap(), Mode::Train)
            .unwrap()
            .relu()
            .unwrap();
        let h = max_pool_3x3_s2(&h).unwrap();
        let h = bn2
            .forward(&c2.forward(&h).unwrap(), Mode::Train)
            .unwrap()
            .relu()
            .unwrap();
        let z = fc.forward(&global_avg_pool(&h).unwrap()).unwrap();
        let logits = head.forward(&z).unwrap();
        candle_nn::loss::cross_entropy(&logits, &y).unwrap()
    };
    gradient_relative_error(&store.trainable(), &loss, points, seed, 1e-6)
}

/// Cross-entropy through a full encoder family at desk width.
pub fn encoder_family(family: Family, seed: u64, points: usize) -> f64 {
    let spec = NetworkSpec::new(family, (2, 32, 32))
        .with_width(2)
        .with_latent(4)
        .with_cardinality(2)
        .with_seed(seed);
    let spec = if family == Family::CompoundB3 {
        spec.with_width(8)
    } else {
        spec
    };
    let net = build_classifier_with(&spec, DType::F64).unwrap();
    let x = probe(&[4, 2, 32, 32], seed);
    let y = labels();
    let loss =
        || candle_nn::loss::cross_entropy(&net.forward(&x, Mode::Train).unwrap(), &y).unwrap();
    gradient_relative_error(&net.trainable(), &loss, points, seed, 1e-6)
}

/// MSE + KL of a variational autoencoder under 1e3 parameters.
pub fn miniature_variational(seed: u64, points: usize) -> f64 {
    let spec = NetworkSpec::new(Family::Autoencoder, (1, 32, 32))
        .with_width(1)
        .with_latent(2)
        .with_downsamples(3)
        .variational(true)
        .with_seed(seed);
    let ae = build_autoencoder_with(&spec, DType::F64).unwrap();
    let mut vars = ae.encoder.store().trainable();
    vars.extend(ae.decoder.store().trainable());
    let count: usize = vars.iter().map(|v| v.elem_count()).sum();
    assert!(count <= 1000, "{count} parameters");
    let x = probe(&[3, 1, 32, 32], seed).tanh().unwrap();
    let eps = probe(&[3, 2], seed + 1);
    let loss = || vae_loss(&ae, &x, &eps, 1.0).unwrap().0;
    gradient_relative_error(&vars, &loss, points, seed, 1e-6)
}
