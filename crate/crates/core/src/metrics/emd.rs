use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::dataio::SliceStack;

/// Upper bound on the number of pooled intensities kept per set in
/// [`emd_report`]; larger pools are subsampled with a fixed seed.
pub const MAX_POOLED_VALUES: usize = 1_000_000;
const POOL_SEED: u64 = 0x5eed_e3d0;

/// Uniformly weighted point masses on the real line, stored sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite("distribution"));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }
}

/// Wasserstein-1 distance between two empirical distributions, computed as
/// the integral of |F_p - F_q| over the merged support.
pub fn emd_1d(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> f64 {
    let (a, b) = (&p.sorted, &q.sorted);
    if a.len() == b.len() {
        let n = a.len() as f64;
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
    }

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let gap = (i as f64 / na - j as f64 / nb).abs();
        total += gap * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// Affine map from the autoencoder's working range back to a reporting
/// intensity scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    pub scale: f64,
    pub offset: f64,
}

impl IntensityMap {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset: 0.0,
        }
    }

    /// [-1, 1] onto the 8-bit range [0, 255].
    pub fn unit_to_byte() -> Self {
        Self {
            scale: 127.5,
            offset: 127.5,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        v * self.scale + self.offset
    }
}

impl Default for IntensityMap {
    fn default() -> Self {
        Self::unit_to_byte()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmdReport {
    pub generated: f64,
    pub reconstructed: f64,
}

fn pooled(set: &[SliceStack], map: IntensityMap) -> Result<EmpiricalDistribution, MetricsError> {
    let total: usize = set.iter().map(|s| s.slices.len()).sum();
    let mut values = Vec::with_capacity(total.min(MAX_POOLED_VALUES));
    if total <= MAX_POOLED_VALUES {
        for stack in set {
            values.extend(stack.slices.iter().map(|&v| map.apply(v as f64)));
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(POOL_SEED);
        let mut picks = sample(&mut rng, total, MAX_POOLED_VALUES).into_vec();
        picks.sort_unstable();
        let mut offsets = Vec::with_capacity(set.len());
        let mut acc = 0;
        for stack in set {
            offsets.push(acc);
            acc += stack.slices.len();
        }
        let mut which = 0;
        for idx in picks {
            while which + 1 < set.len() && offsets[which + 1] <= idx {
                which += 1;
            }
            let flat = set[which]
                .slices
                .as_slice()
                .expect("slice stacks are stored in standard layout");
            values.push(map.apply(flat[idx - offsets[which]] as f64));
        }
    }
    EmpiricalDistribution::new(values)
}

fn check_geometry(real: &[SliceStack], other: &[SliceStack]) -> Result<(), MetricsError> {
    let shape = real[0].shape();
    for s in real.iter().chain(other) {
        if s.shape() != shape {
            return Err(MetricsError::Geometry(shape, s.shape()));
        }
    }
    Ok(())
}

/// Pooled-intensity EMD of generated and reconstructed sets against the real
/// set, measured after mapping all three through `map`.
pub fn emd_report(
    real: &[SliceStack],
    generated: &[SliceStack],
    reconstructed: &[SliceStack],
    map: IntensityMap,
) -> Result<EmdReport, MetricsError> {
    if real.is_empty() || generated.is_empty() || reconstructed.is_empty() {
        return Err(MetricsError::Empty);
    }
    check_geometry(real, generated)?;
    check_geometry(real, reconstructed)?;
    let real = pooled(real, map)?;
    Ok(EmdReport {
        generated: emd_1d(&real, &pooled(generated, map)?),
        reconstructed: emd_1d(&real, &pooled(reconstructed, map)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Label;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::new(v.to_vec()).unwrap()
    }

    /// Optimal assignment by enumeration: for equal-size uniform sets the
    /// transport plan is a permutation.
    fn assignment_oracle(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &mut Vec<f64>, k: usize, acc: f64, best: &mut f64) {
            if k == a.len() {
                *best = best.min(acc);
                return;
            }
            for i in k..b.len() {
                b.swap(k, i);
                go(a, b, k + 1, acc + (a[k] - b[k]).abs(), best);
                b.swap(k, i);
            }
        }
        let mut best = f64::INFINITY;
        go(a, &mut b.to_vec(), 0, 0.0, &mut best);
        best / a.len() as f64
    }

    #[test]
    fn identical_is_zero() {
        assert_eq!(
            emd_1d(&dist(&[1.0, 3.0, 2.0]), &dist(&[2.0, 1.0, 3.0])),
            0.0
        );
    }

    #[test]
    fn unit_point_masses() {
        assert_eq!(emd_1d(&dist(&[0.0]), &dist(&[1.0])), 1.0);
    }

    #[test]
    fn two_points_against_spread_pair() {
        assert_eq!(emd_1d(&dist(&[0.0, 0.0]), &dist(&[1.0, 3.0])), 2.0);
    }

    #[test]
    fn unequal_sizes_use_cdf_integration() {
        // {0} vs {0, 2}: half the mass moves distance 2.
        assert!((emd_1d(&dist(&[0.0]), &dist(&[0.0, 2.0])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_is_rejected() {
        assert_eq!(EmpiricalDistribution::new(vec![]), Err(MetricsError::Empty));
    }

    fn stack(values: Vec<f32>) -> SliceStack {
        SliceStack {
            slices: Array3::from_shape_vec((1, 2, values.len() / 2), values).unwrap(),
            label: Label::Normal,
            subject_id: "s".into(),
            normalization_stats: (0.0, 1.0),
        }
    }

    #[test]
    fn report_translation_and_identity() {
        let real = vec![
            stack(vec![0.1, -0.4, 0.3, 0.9]),
            stack(vec![-0.2, 0.0, 0.5, 0.25]),
        ];
        let shifted: Vec<SliceStack> = real
            .iter()
            .map(|s| stack(s.slices.iter().map(|v| v + 0.125).collect()))
            .collect();
        let r = emd_report(&real, &real, &shifted, IntensityMap::identity()).unwrap();
        assert_eq!(r.generated, 0.0);
        assert!((r.reconstructed - 0.125).abs() < 1e-6);
        let r = emd_report(&real, &real, &shifted, IntensityMap::unit_to_byte()).unwrap();
        assert!((r.reconstructed - 0.125 * 127.5).abs() < 1e-4);
    }

    #[test]
    fn report_rejects_geometry_mismatch() {
        let real = vec![stack(vec![0.0; 4])];
        let other = vec![stack(vec![0.0; 6])];
        assert!(matches!(
            emd_report(&real, &other, &real, IntensityMap::identity()),
            Err(MetricsError::Geometry(..))
        ));
    }

    proptest! {
        #[test]
        fn equal_size_matches_assignment(
            pair in (1usize..6).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            ))
        ) {
            let (a, b) = pair;
            let d = emd_1d(&dist(&a), &dist(&b));
            prop_assert!((d - assignment_oracle(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(d, emd_1d(&dist(&b), &dist(&a)));
        }

        #[test]
        fn translation_identity(
            a in prop::collection::vec(-10.0f64..10.0, 1..20),
            c in -4.0f64..4.0,
        ) {
            let b: Vec<f64> = a.iter().map(|v| v + c).collect();
            prop_assert!((emd_1d(&dist(&a), &dist(&b)) - c.abs()).abs() <= 1e-12);
        }
    }
}
