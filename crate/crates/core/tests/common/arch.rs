use candle_core::{DType, Device, Tensor};
use shiftadapt::nets::layers::{Conv2d, ConvOpts};
use shiftadapt::nets::{
    build_autoencoder, build_classifier, build_encoder, Checkpoint, Family, Mode, NetworkSpec,
    ParamBuilder, TrainingMeta,
};

pub fn probe(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let values: Vec<f32> = (0..n)
        .map(|i| (((i as u64 + 1) * 2654435761 + seed * 97) % 1000) as f32 / 500.0 - 1.0)
        .collect();
    Tensor::from_vec(values, shape, &Device::Cpu).unwrap()
}

pub fn values(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
}

pub fn desk(family: Family) -> NetworkSpec {
    let spec = NetworkSpec::new(family, (4, 32, 32))
        .with_latent(16)
        .with_seed(11);
    match family {
        Family::CompoundB3 => spec.with_width(8),
        Family::GroupedResidual50 => spec.with_width(4).with_cardinality(4),
        _ => spec.with_width(4),
    }
}

/// Bottleneck geometry at 256x256 and reconstructions inside [-1, 1] even
/// for inputs scaled by 1e3.
pub fn autoencoder_geometry_and_range() {
    let spec = NetworkSpec::new(Family::Autoencoder, (2, 256, 256))
        .with_width(2)
        .with_latent(8);
    let ae = build_autoencoder(&spec).unwrap();
    let x = probe(&[1, 2, 256, 256], 4);
    assert_eq!(ae.bottleneck_features(&x).unwrap().dims(), &[1, 32, 8, 8]);
    let loud = (x * 1e3).unwrap();
    let y = ae.reconstruct(&loud).unwrap();
    assert_eq!(y.dims(), &[1, 2, 256, 256]);
    assert!(values(&y).iter().all(|v| (-1.0..=1.0).contains(v)));
}

/// Perturbing one input group moves only that group's outputs, exactly.
pub fn grouped_convolution_isolates_groups() {
    let mut b = ParamBuilder::new(1, DType::F32);
    let conv = Conv2d::new(&mut b, "g", 8, 8, ConvOpts::new(3, 1, 1).groups(4)).unwrap();
    let x = probe(&[1, 8, 6, 6], 7);
    let base = conv.forward(&x).unwrap();
    // Perturb input channels 2..4 (group 1).
    let bump = Tensor::cat(
        &[
            Tensor::zeros((1, 2, 6, 6), DType::F32, &Device::Cpu).unwrap(),
            Tensor::ones((1, 2, 6, 6), DType::F32, &Device::Cpu).unwrap(),
            Tensor::zeros((1, 4, 6, 6), DType::F32, &Device::Cpu).unwrap(),
        ],
        1,
    )
    .unwrap();
    let moved = conv.forward(&(x + bump).unwrap()).unwrap();
    let diff = (moved - base).unwrap().abs().unwrap();
    for g in 0..4 {
        let d = diff
            .narrow(1, 2 * g, 2)
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        if g == 1 {
            assert!(d > 0.0);
        } else {
            assert_eq!(d, 0.0, "group {g} changed");
        }
    }
}

/// Save, load and compare forward outputs bit for bit; corrupt files fail.
pub fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let net = build_classifier(&desk(Family::Residual18)).unwrap();
    let x = probe(&[2, 4, 32, 32], 8);
    // Move running statistics away from their initial values first.
    net.forward(&x, Mode::Train).unwrap();
    let meta = TrainingMeta {
        dataset_id: "probe".into(),
        epochs: 1,
        learning_rate: 1e-3,
        loss_curve_digest: shiftadapt::nets::loss_curve_digest(&[0.5]),
    };
    net.checkpoint(meta.clone()).unwrap().save(&path).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt.training_meta, meta);
    let loaded = shiftadapt::nets::Classifier::from_checkpoint(&ckpt).unwrap();
    assert_eq!(
        values(&net.forward(&x, Mode::Eval).unwrap()),
        values(&loaded.forward(&x, Mode::Eval).unwrap())
    );

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(0);
    assert!(Checkpoint::from_bytes(&bytes, &path).is_err());
    bytes[0] = b'X';
    assert!(Checkpoint::from_bytes(&bytes, &path).is_err());
}

pub fn volumetric_family_is_slice_order_sensitive() {
    let enc = build_encoder(&desk(Family::Residual18_3d)).unwrap();
    let x = probe(&[1, 4, 32, 32], 9);
    let swapped = x
        .index_select(&Tensor::new(&[1u32, 0, 2, 3], &Device::Cpu).unwrap(), 1)
        .unwrap();
    let a = values(&enc.forward(&x, Mode::Eval).unwrap());
    let b = values(&enc.forward(&swapped, Mode::Eval).unwrap());
    assert!(a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-4));
}

/// Permuting input slices together with the stem's input channels leaves
/// channel-stacked encoders unchanged.
pub fn channel_families_are_permutation_equivariant_with_permuted_stem() {
    let perm = [2u32, 0, 3, 1];
    for family in [
        Family::Residual18,
        Family::CompoundB3,
        Family::GroupedResidual50,
    ] {
        let spec = desk(family);
        let enc = build_encoder(&spec).unwrap();
        let permuted = enc.duplicate().unwrap();
        let stem_name = if family == Family::CompoundB3 {
            "stem.weight"
        } else {
            "stem.conv.weight"
        };
        let idx = Tensor::new(&perm, &Device::Cpu).unwrap();
        let stem = permuted.store().get(stem_name).unwrap();
        let w = stem.var.as_tensor().index_select(&idx, 1).unwrap();
        stem.var.set(&w).unwrap();
        let x = probe(&[2, 4, 32, 32], 10);
        let xp = x.index_select(&idx, 1).unwrap();
        let a = values(&enc.forward(&x, Mode::Eval).unwrap());
        let b = values(&permuted.forward(&xp, Mode::Eval).unwrap());
        let scale = a.iter().fold(0f32, |m, v| m.max(v.abs())).max(1.0);
        let worst = a
            .iter()
            .zip(&b)
            .fold(0f32, |m, (p, q)| m.max((p - q).abs()));
        assert!(worst <= 1e-5 * scale, "{family}: {worst}");
    }
}
