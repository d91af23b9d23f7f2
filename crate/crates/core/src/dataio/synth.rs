use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    DataError, DatasetConfig, DatasetSplit, DomainTag, Label, Result, SplitFractions,
    SubjectRecord, VolumeSample,
};

/// Acquisition differences applied to every target-domain volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainShift {
    /// Gaussian smoothing width in voxels.
    pub blur_sigma: f64,
    /// Exponent of the intensity response curve.
    pub gamma: f64,
    /// Global gain and offset (scanner units).
    pub gain: f64,
    pub offset: f64,
    /// Relative amplitude of a linear multiplicative bias field along the
    /// axial axis.
    pub bias_field: f64,
    /// Field-of-view magnification; anatomy appears `zoom` times larger.
    pub zoom: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            blur_sigma: 1.5,
            gamma: 0.5,
            gain: 1.6,
            offset: 35.0,
            bias_field: 0.3,
            zoom: 1.25,
        }
    }
}

impl DomainShift {
    pub fn none() -> Self {
        Self {
            blur_sigma: 0.0,
            gamma: 1.0,
            gain: 1.0,
            offset: 0.0,
            bias_field: 0.0,
            zoom: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// In-plane size (coronal = axial).
    pub image_size: usize,
    pub slices: usize,
    pub sagittal_extent: usize,
    pub subjects_per_class: usize,
    pub seed: u64,
    /// When false the lesion size is drawn independently of the label.
    pub class_signal: bool,
    pub fractions: SplitFractions,
    pub shift: DomainShift,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            slices: 8,
            sagittal_extent: 32,
            subjects_per_class: 100,
            seed: 0,
            class_signal: true,
            fractions: SplitFractions::default(),
            shift: DomainShift::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0
            || self.slices == 0
            || self.sagittal_extent == 0
            || self.subjects_per_class == 0
        {
            return Err(DataError::Config(
                "synthetic sizes and counts must be positive".into(),
            ));
        }
        if self.slices > self.sagittal_extent {
            return Err(DataError::TooManySlices {
                requested: self.slices,
                extent: self.sagittal_extent,
            });
        }
        if !(self.shift.gamma > 0.0)
            || self.shift.blur_sigma < 0.0
            || !(self.shift.gain > 0.0)
            || !(self.shift.zoom > 0.0)
        {
            return Err(DataError::Config(
                "shift needs gamma > 0, gain > 0, zoom > 0, blur_sigma >= 0".into(),
            ));
        }
        self.fractions.validate()
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            slices: self.slices,
            height: self.image_size,
            width: self.image_size,
            fractions: self.fractions,
            split_seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSubject {
    pub record: SubjectRecord,
    pub volume: VolumeSample,
}

const TISSUE: f32 = 100.0;
const BACKGROUND: f32 = 10.0;
const NOISE_STD: f32 = 4.0;
const LESION_DEPTH: f32 = 0.75;
const NORMAL_RADIUS: (f32, f32) = (0.14, 0.20);
const DEMENTED_RADIUS: (f32, f32) = (0.24, 0.30);

fn subject_seed(seed: u64, domain: u64, class: u64, index: u64) -> u64 {
    // splitmix64 over the packed coordinates
    let mut z = seed
        .wrapping_add(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(class.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// A head-shaped ellipsoid with smooth texture and a dark central lesion
/// whose size depends on the class.
fn render(cfg: &SynthConfig, label: Label, zoom: f32, rng: &mut ChaCha8Rng) -> Array3<f32> {
    let (e, n) = (cfg.sagittal_extent, cfg.image_size);
    let jitter = |rng: &mut ChaCha8Rng, a: f32| rng.random_range(-a..a);
    let head = [
        0.85 + jitter(rng, 0.05),
        0.9 + jitter(rng, 0.05),
        0.8 + jitter(rng, 0.05),
    ];
    let waves: Vec<([f32; 3], f32, f32)> = (0..4)
        .map(|_| {
            let f = [jitter(rng, 4.0), jitter(rng, 4.0), jitter(rng, 4.0)];
            (
                f,
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.0..0.06),
            )
        })
        .collect();
    let (lo, hi) = if !cfg.class_signal {
        (NORMAL_RADIUS.0, DEMENTED_RADIUS.1)
    } else if label.is_positive() {
        DEMENTED_RADIUS
    } else {
        NORMAL_RADIUS
    };
    let r = rng.random_range(lo..hi);
    let lesion_radii = [1.6 * r, r, 1.3 * r];
    let center = [jitter(rng, 0.05), jitter(rng, 0.08), jitter(rng, 0.08)];
    let noise = Normal::new(0.0f32, NOISE_STD).unwrap();

    let coord = |i: usize, len: usize| ((i as f32 + 0.5) / len as f32 * 2.0 - 1.0) / zoom;
    let mut vol = Array3::zeros((e, n, n));
    for ((x, y, z), v) in vol.indexed_iter_mut() {
        let p = [coord(x, e), coord(y, n), coord(z, n)];
        let head_r = (0..3).map(|k| (p[k] / head[k]).powi(2)).sum::<f32>().sqrt();
        let inside = sigmoid((1.0 - head_r) / 0.04);
        let texture: f32 = waves
            .iter()
            .map(|(f, phase, amp)| {
                amp * (std::f32::consts::PI * (f[0] * p[0] + f[1] * p[1] + f[2] * p[2]) + phase)
                    .cos()
            })
            .sum();
        let lesion_d = (0..3)
            .map(|k| ((p[k] - center[k]) / lesion_radii[k]).powi(2))
            .sum::<f32>()
            .sqrt();
        let lesion = LESION_DEPTH * sigmoid((1.0 - lesion_d) / 0.08);
        let tissue = TISSUE * (1.0 + texture) * (1.0 - lesion);
        *v = BACKGROUND + inside * (tissue - BACKGROUND) + noise.sample(rng);
    }
    vol
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| (w / total) as f32).collect()
}

fn blur_axis(vol: &Array3<f32>, axis: usize, kernel: &[f32]) -> Array3<f32> {
    let radius = (kernel.len() / 2) as i64;
    let mut out = Array3::zeros(vol.dim());
    for (src, mut dst) in vol
        .lanes(Axis(axis))
        .into_iter()
        .zip(out.lanes_mut(Axis(axis)))
    {
        let len = src.len() as i64;
        for i in 0..len {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = (i + k as i64 - radius).clamp(0, len - 1);
                acc += w * src[j as usize];
            }
            dst[i as usize] = acc;
        }
    }
    out
}

fn apply_shift(vol: Array3<f32>, shift: &DomainShift) -> Array3<f32> {
    let mut vol = vol;
    if shift.blur_sigma > 0.0 {
        let kernel = gaussian_kernel(shift.blur_sigma);
        for axis in 0..3 {
            vol = blur_axis(&vol, axis, &kernel);
        }
    }
    let width = vol.dim().2;
    let gamma = shift.gamma as f32;
    for ((_, _, z), v) in vol.indexed_iter_mut() {
        let response = TISSUE * (v.max(0.0) / TISSUE).powf(gamma);
        let bias = 1.0 + shift.bias_field as f32 * ((z as f32 + 0.5) / width as f32 - 0.5);
        *v = response * bias * shift.gain as f32 + shift.offset as f32;
    }
    vol
}

/// Raw synthetic volumes for both domains, in (domain, class, index) order.
pub fn synth_volumes(cfg: &SynthConfig) -> Result<Vec<SynthSubject>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(4 * cfg.subjects_per_class);
    for (d, domain) in [DomainTag::Source, DomainTag::Target]
        .into_iter()
        .enumerate()
    {
        for label in [Label::Normal, Label::Demented] {
            for i in 0..cfg.subjects_per_class {
                let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(
                    cfg.seed,
                    d as u64,
                    label.index() as u64,
                    i as u64,
                ));
                let zoom = if domain == DomainTag::Target {
                    cfg.shift.zoom as f32
                } else {
                    1.0
                };
                let mut voxels = render(cfg, label, zoom, &mut rng);
                if domain == DomainTag::Target {
                    voxels = apply_shift(voxels, &cfg.shift);
                }
                let prefix = if domain == DomainTag::Source {
                    "src"
                } else {
                    "tgt"
                };
                let tag = if label.is_positive() { "d" } else { "n" };
                let subject_id = format!("{prefix}-{tag}{i:04}");
                let cdr = match label {
                    Label::Normal => 0.0,
                    Label::Demented if i % 2 == 0 => 0.5,
                    Label::Demented => 1.0,
                };
                out.push(SynthSubject {
                    record: SubjectRecord {
                        subject_id: subject_id.clone(),
                        domain: domain.clone(),
                        cdr: Some(cdr),
                        age: Some(60.0 + (i % 37) as f64),
                    },
                    volume: VolumeSample::new(subject_id, voxels)?,
                });
            }
        }
    }
    Ok(out)
}

/// Source and target splits of the synthetic benchmark; a pure function of
/// `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(DatasetSplit, DatasetSplit)> {
    let dataset = cfg.dataset_config();
    let mut source = Vec::new();
    let mut target = Vec::new();
    for subject in synth_volumes(cfg)? {
        let label = subject
            .record
            .label()
            .expect("synthetic subjects carry a cdr");
        let stack = dataset.stack_from_volume(&subject.volume, label)?;
        match subject.record.domain {
            DomainTag::Source => source.push(stack),
            _ => target.push(stack),
        }
    }
    Ok((
        DatasetSplit::from_stacks(source, cfg.fractions, cfg.seed, Vec::new())?,
        DatasetSplit::from_stacks(target, cfg.fractions, cfg.seed, Vec::new())?,
    ))
}
