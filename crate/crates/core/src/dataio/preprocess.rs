use ndarray::{s, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{DataError, Label, Result, VolumeSample};

/// Mean and standard deviation used by a z-score transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Preprocessed training unit: `S x H x W` slices of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    pub slices: Array3<f32>,
    pub label: Label,
    pub subject_id: String,
    /// Volume-level (mean, std) in raw scanner units.
    pub normalization_stats: (f64, f64),
}

impl SliceStack {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.slices.dim()
    }
}

fn moments(voxels: &Array3<f32>) -> (f64, f64) {
    let n = voxels.len().max(1) as f64;
    let mean = voxels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = voxels
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

fn zscore(voxels: &Array3<f32>, what: &str) -> Result<(Array3<f32>, NormStats)> {
    let (mean, std) = moments(voxels);
    if !(std > 0.0) || !std.is_finite() {
        return Err(DataError::Degenerate(what.to_string()));
    }
    let out = voxels.mapv(|v| ((v as f64 - mean) / std) as f32);
    Ok((out, NormStats { mean, std }))
}

/// Z-scores the whole volume with its own mean and (population) standard
/// deviation.
pub fn normalize_volume(v: &VolumeSample) -> Result<(VolumeSample, NormStats)> {
    let (voxels, stats) = zscore(&v.voxels, &v.subject_id)?;
    Ok((
        VolumeSample {
            subject_id: v.subject_id.clone(),
            voxels,
        },
        stats,
    ))
}

/// Re-standardizes an extracted stack in place so it has zero mean and unit
/// standard deviation.
pub fn standardize_slices(slices: &mut Array3<f32>, what: &str) -> Result<NormStats> {
    let (out, stats) = zscore(slices, what)?;
    *slices = out;
    Ok(stats)
}

/// Round-half-up of `num / den` for non-negative integers.
fn round_ratio(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Sagittal slice indices for `count` slices out of `extent`.
///
/// Indices are equally spaced over the central half of the axis:
/// `round(E * (0.25 + 0.5 * k / (count - 1)))`. A single slice is the
/// mid-sagittal plane `E / 2`. When the central band cannot hold `count`
/// distinct indices the spacing widens to the full axis,
/// `round(k * (E - 1) / (count - 1))`, which is the identity for
/// `count == E`.
pub fn sagittal_indices(extent: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(DataError::Config("slice count must be positive".into()));
    }
    if count > extent {
        return Err(DataError::TooManySlices {
            requested: count,
            extent,
        });
    }
    if count == 1 {
        return Ok(vec![extent / 2]);
    }
    let steps = count - 1;
    let central: Vec<usize> = (0..count)
        .map(|k| round_ratio(extent * (steps + 2 * k), 4 * steps).min(extent - 1))
        .collect();
    if central.windows(2).all(|w| w[0] < w[1]) {
        return Ok(central);
    }
    Ok((0..count)
        .map(|k| round_ratio(k * (extent - 1), steps))
        .collect())
}

/// Extracts `count` sagittal slices (axis 0), medial band order preserved.
pub fn slice_sagittal(v: &VolumeSample, count: usize) -> Result<(Array3<f32>, Vec<usize>)> {
    let (extent, coronal, axial) = v.extents();
    let indices = sagittal_indices(extent, count)?;
    let mut out = Array3::zeros((count, coronal, axial));
    for (dst, &src) in indices.iter().enumerate() {
        out.slice_mut(s![dst, .., ..])
            .assign(&v.voxels.slice(s![src, .., ..]));
    }
    Ok((out, indices))
}

/// Bilinear resampling of every slice to `height x width` using pixel-center
/// alignment.
pub fn resize_bilinear(slices: &Array3<f32>, height: usize, width: usize) -> Array3<f32> {
    let (n, h, w) = slices.dim();
    if (h, w) == (height, width) {
        return slices.clone();
    }
    let coords = |out: usize, src: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / out as f64;
        (0..out)
            .map(|i| {
                let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = x.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, (x - lo as f64) as f32)
            })
            .collect()
    };
    let rows = coords(height, h);
    let cols = coords(width, w);
    let mut out = Array3::zeros((n, height, width));
    for (k, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let src = slices.index_axis(Axis(0), k);
        for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
                let bottom = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
                plane[[i, j]] = top * (1.0 - fr) + bottom * fr;
            }
        }
    }
    out
}

/// Dataset-level percentile clip and affine map onto [-1, 1], used for the
/// autoencoder pipelines (their decoders end in tanh).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitRange {
    pub low: f32,
    pub high: f32,
}

impl UnitRange {
    pub const LOW_PERCENTILE: f64 = 0.01;
    pub const HIGH_PERCENTILE: f64 = 0.99;

    /// Fits the 1st and 99th percentiles of all voxels in `stacks`.
    pub fn fit(stacks: &[SliceStack]) -> Result<Self> {
        let mut pooled: Vec<f32> = stacks
            .iter()
            .flat_map(|s| s.slices.iter().copied())
            .collect();
        if pooled.is_empty() {
            return Err(DataError::Config(
                "cannot fit an intensity range on no data".into(),
            ));
        }
        let n = pooled.len();
        let rank = |p: f64| ((n - 1) as f64 * p).round() as usize;
        let (lo_rank, hi_rank) = (rank(Self::LOW_PERCENTILE), rank(Self::HIGH_PERCENTILE));
        let low = *pooled.select_nth_unstable_by(lo_rank, f32::total_cmp).1;
        let high = *pooled.select_nth_unstable_by(hi_rank, f32::total_cmp).1;
        if !(high > low) {
            return Err(DataError::Degenerate("pooled intensity range".into()));
        }
        Ok(Self { low, high })
    }

    pub fn apply(&self, stack: &SliceStack) -> SliceStack {
        let span = self.high - self.low;
        SliceStack {
            slices: stack.slices.mapv(|v| {
                (2.0 * (v.clamp(self.low, self.high) - self.low) / span - 1.0).clamp(-1.0, 1.0)
            }),
            ..stack.clone()
        }
    }

    pub fn apply_all(&self, stacks: &[SliceStack]) -> Vec<SliceStack> {
        stacks.iter().map(|s| self.apply(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn volume(dims: (usize, usize, usize), values: Vec<f32>) -> VolumeSample {
        VolumeSample::new("v", Array3::from_shape_vec(dims, values).unwrap()).unwrap()
    }

    #[test]
    fn zscore_of_one_two_three() {
        let (out, stats) = normalize_volume(&volume((1, 1, 3), vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(stats.mean, 2.0);
        let (mean, std) = moments(&out.voxels);
        assert!(mean.abs() < 1e-7);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_volume_is_degenerate() {
        let err = normalize_volume(&volume((1, 1, 3), vec![5.0; 3])).unwrap_err();
        assert!(matches!(err, DataError::Degenerate(_)));
    }

    #[test]
    fn indices_for_extent_176() {
        assert_eq!(
            sagittal_indices(176, 10).unwrap(),
            vec![44, 54, 64, 73, 83, 93, 103, 112, 122, 132]
        );
    }

    #[test]
    fn full_coverage_and_single_slice() {
        assert_eq!(
            sagittal_indices(12, 12).unwrap(),
            (0..12).collect::<Vec<_>>()
        );
        assert_eq!(sagittal_indices(176, 1).unwrap(), vec![88]);
        assert_eq!(sagittal_indices(33, 1).unwrap(), vec![16]);
    }

    #[test]
    fn too_many_slices() {
        assert!(matches!(
            sagittal_indices(8, 9),
            Err(DataError::TooManySlices {
                requested: 9,
                extent: 8
            })
        ));
    }

    #[test]
    fn slicing_copies_planes() {
        let v = volume((4, 2, 2), (0..16).map(|x| x as f32).collect());
        let (stack, idx) = slice_sagittal(&v, 4).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(stack, v.voxels);
    }

    #[test]
    fn resize_identity_and_constant() {
        let a = Array3::from_shape_fn((2, 4, 4), |(k, i, j)| (k * 16 + i * 4 + j) as f32);
        assert_eq!(resize_bilinear(&a, 4, 4), a);
        let c = Array3::from_elem((1, 5, 7), 3.0f32);
        assert!(resize_bilinear(&c, 8, 8)
            .iter()
            .all(|&v| (v - 3.0).abs() < 1e-6));
    }

    #[test]
    fn unit_range_maps_into_bounds() {
        let stack = SliceStack {
            slices: Array3::from_shape_fn((1, 10, 10), |(_, i, j)| (i * 10 + j) as f32),
            label: Label::Normal,
            subject_id: "a".into(),
            normalization_stats: (0.0, 1.0),
        };
        let range = UnitRange::fit(std::slice::from_ref(&stack)).unwrap();
        assert_eq!((range.low, range.high), (1.0, 98.0));
        let mapped = range.apply(&stack);
        assert!(mapped.slices.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(mapped.slices[[0, 0, 0]], -1.0);
        assert_eq!(mapped.slices[[0, 9, 9]], 1.0);
    }

    proptest! {
        #[test]
        fn indices_distinct_increasing(extent in 1usize..300, frac in 0.0f64..1.0) {
            let count = 1 + ((extent - 1) as f64 * frac) as usize;
            let idx = sagittal_indices(extent, count).unwrap();
            prop_assert_eq!(idx.len(), count);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(*idx.last().unwrap() < extent);
        }

        #[test]
        fn zscore_postconditions_and_idempotence(
            dims in (1usize..6, 1usize..6, 2usize..6),
            seed in any::<u64>(),
            scale in 0.01f32..1000.0,
            offset in -500.0f32..500.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = dims.0 * dims.1 * dims.2;
            let values: Vec<f32> = (0..n).map(|_| rng.random::<f32>() * scale + offset).collect();
            let v = volume(dims, values);
            if let Ok((once, _)) = normalize_volume(&v) {
                let (mean, std) = moments(&once.voxels);
                prop_assert!(mean.abs() < 1e-5);
                prop_assert!((std - 1.0).abs() < 1e-5);
                let (twice, _) = normalize_volume(&once).unwrap();
                for (a, b) in once.voxels.iter().zip(twice.voxels.iter()) {
                    prop_assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }
}
