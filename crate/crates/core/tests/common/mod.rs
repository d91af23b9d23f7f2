#![allow(dead_code)]

pub mod arch;
pub mod gradcheck;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftadapt::dataio::{DatasetSplit, Label, SliceStack};

pub fn stack(id: &str, label: Label, slices: Array3<f32>) -> SliceStack {
    SliceStack {
        slices,
        label,
        subject_id: id.to_string(),
        normalization_stats: (0.0, 1.0),
    }
}

/// Per-stack z-scored samples whose class decides which half of the image
/// is bright; noise keeps samples distinct.
pub fn half_bright(n_per_class: usize, shape: (usize, usize, usize), seed: u64) -> Vec<SliceStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..2 * n_per_class {
        let label = if i % 2 == 0 {
            Label::Normal
        } else {
            Label::Demented
        };
        let mut a = Array3::from_shape_fn(shape, |(_, _, x)| {
            let left = x < shape.2 / 2;
            let bright = left == (label == Label::Normal);
            (if bright { 1.0 } else { -1.0 }) + rng.random_range(-0.5..0.5)
        });
        let mean = a.mean().unwrap();
        let std = a.std(0.0);
        a.mapv_inplace(|v| (v - mean) / std);
        out.push(stack(&format!("s{i:03}"), label, a));
    }
    out
}

pub fn split(train: Vec<SliceStack>, val: Vec<SliceStack>, test: Vec<SliceStack>) -> DatasetSplit {
    DatasetSplit {
        train,
        val,
        test,
        split_seed: 0,
        quarantined: Vec::new(),
    }
}

pub fn flatten(s: &SliceStack) -> Vec<f64> {
    s.slices.iter().map(|&v| v as f64).collect()
}

/// Plain logistic regression by full-batch gradient descent; returns the
/// training accuracy reached.
pub fn logistic_accuracy(samples: &[SliceStack], steps: usize) -> f64 {
    let xs: Vec<Vec<f64>> = samples.iter().map(flatten).collect();
    let ys: Vec<f64> = samples
        .iter()
        .map(|s| if s.label.is_positive() { 1.0 } else { 0.0 })
        .collect();
    let d = xs[0].len();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let lr = 0.1 / d as f64;
    for _ in 0..steps {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let z: f64 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - y;
            for (g, a) in gw.iter_mut().zip(x) {
                *g += err * a;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g;
        }
        b -= lr * gb;
    }
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, y)| {
            let z: f64 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            (z > 0.0) == (**y > 0.5)
        })
        .count();
    correct as f64 / xs.len() as f64
}

use candle_core::{Tensor, Var};

/// Central finite-difference check of `loss` with respect to `vars` at
/// `points` coordinates drawn uniformly (by seed) across all variables.
/// Returns ||g_analytic - g_numeric|| / (||g_analytic|| + ||g_numeric||).
pub fn gradient_relative_error(
    vars: &[Var],
    loss: &dyn Fn() -> Tensor,
    points: usize,
    seed: u64,
    h: f64,
) -> f64 {
    let value = loss();
    let grads = value.backward().unwrap();
    let sizes: Vec<usize> = vars.iter().map(|v| v.elem_count()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for _ in 0..points {
        let mut k = rng.random_range(0..total);
        let mut vi = 0;
        while k >= sizes[vi] {
            k -= sizes[vi];
            vi += 1;
        }
        let var = &vars[vi];
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1::<f64>().unwrap()[k],
            None => 0.0,
        };
        let original = var
            .as_tensor()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let eval_at = |delta: f64| {
            let mut v = original.clone();
            v[k] += delta;
            var.set(&Tensor::from_vec(v, var.shape(), var.device()).unwrap())
                .unwrap();
            loss().to_scalar::<f64>().unwrap()
        };
        let numeric = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        var.set(&Tensor::from_vec(original, var.shape(), var.device()).unwrap())
            .unwrap();
        diff += (analytic - numeric).powi(2);
        na += analytic * analytic;
        nn += numeric * numeric;
    }
    let denom = na.sqrt() + nn.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}
