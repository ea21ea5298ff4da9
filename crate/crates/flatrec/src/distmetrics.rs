//! Distribution-shape diagnostics for transformed rating matrices.
//!
//! The central quantity is flatness `F`: the KL divergence from the observed
//! value distribution to the uniform distribution over its support,
//! `F = sum_v D(v) * ln(|V| * D(v))`. A perfectly flat distribution scores 0;
//! a point mass scores `ln |V|`. Kurtosis `K` (fourth standardized moment,
//! non-excess) complements it as a peakedness measure: 1.8 for uniform, 3 for
//! normal.

use std::io::Write;

use serde::Serialize;

use crate::data::{RatingScale, UserId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transform::{TransformSpec, ValueMatrix};

/// Probability mass over an ordered support of labels (rating levels or bin
/// midpoints).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution<T> {
    labels: Vec<T>,
    mass: Vec<T>,
}

impl<T: Scalar> DiscreteDistribution<T> {
    pub fn new(labels: Vec<T>, mass: Vec<T>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if labels.len() != mass.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: mass.len(),
            });
        }
        if mass.iter().any(|&m| m < T::zero() || !m.is_finite()) {
            return Err(Error::InvalidDistribution(
                "masses must be finite and non-negative".into(),
            ));
        }
        let total: T = mass.iter().copied().sum();
        if (total - T::one()).abs() > T::from_f64(1e-9).unwrap() {
            return Err(Error::InvalidDistribution(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(DiscreteDistribution { labels, mass })
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Empirical distribution of `values` over the levels of `scale`. Levels that
/// never occur get mass 0.
pub fn discrete_distribution<T: Scalar>(
    values: &[T],
    scale: &RatingScale<T>,
) -> Result<DiscreteDistribution<T>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0usize; scale.len()];
    for &v in values {
        let idx = scale.level_index(v).ok_or_else(|| Error::NotOnScale {
            value: v.to_string(),
        })?;
        counts[idx] += 1;
    }
    let total = T::from_count(values.len());
    let mass = counts.iter().map(|&c| T::from_count(c) / total).collect();
    DiscreteDistribution::new(scale.values().to_vec(), mass)
}

/// Flatness `F = sum_v mass(v) * ln(n * mass(v))` with `n` the support size.
/// Zero-mass terms contribute 0. Clamped at 0 against rounding, so uniform
/// distributions report exactly the analytic minimum.
pub fn flatness<T: Scalar>(dist: &DiscreteDistribution<T>) -> T {
    let n = T::from_count(dist.len());
    let f = dist
        .mass()
        .iter()
        .filter(|&&m| m > T::zero())
        .map(|&m| m * (n * m).ln())
        .sum::<T>();
    f.max(T::zero())
}

/// Population kurtosis `m4 / m2^2` (non-excess).
pub fn kurtosis<T: Scalar>(values: &[T]) -> Result<T> {
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    let n = T::from_count(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let mut m2 = T::zero();
    let mut m4 = T::zero();
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    if m2 <= T::zero() {
        return Err(Error::ZeroVariance);
    }
    Ok(m4 / (m2 * m2))
}

/// Histogram of `values` over `n_bins` equal-width bins spanning `[lo, hi]`.
///
/// Bins are upper-inclusive: bin `i` covers `(lo + i*w, lo + (i+1)*w]`, a
/// value exactly at a boundary goes to the bin below it, and `lo` itself goes
/// to the first bin. Labels are bin midpoints.
pub fn bin_values<T: Scalar>(
    values: &[T],
    n_bins: usize,
    range: (T, T),
) -> Result<DiscreteDistribution<T>> {
    let (lo, hi) = range;
    if n_bins < 2 {
        return Err(Error::InvalidBins(n_bins));
    }
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::DegenerateRange {
            lo: lo.to_string(),
            hi: hi.to_string(),
        });
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        if v < lo || v > hi {
            return Err(Error::OutOfRange {
                value: v.to_string(),
                lo: lo.to_string(),
                hi: hi.to_string(),
            });
        }
        counts[bin_index(v, n_bins, lo, hi)] += 1;
    }
    let width = (hi - lo) / T::from_count(n_bins);
    let labels = (0..n_bins)
        .map(|i| lo + width * (T::from_count(i) + T::half()))
        .collect();
    let total = T::from_count(values.len());
    let mass = counts.iter().map(|&c| T::from_count(c) / total).collect();
    DiscreteDistribution::new(labels, mass)
}

fn bin_index<T: Scalar>(v: T, n_bins: usize, lo: T, hi: T) -> usize {
    let width = (hi - lo) / T::from_count(n_bins);
    let idx = ((v - lo) / width).ceil() - T::one();
    let idx = idx.to_isize().unwrap_or(0).max(0) as usize;
    idx.min(n_bins - 1)
}

/// Pearson product-moment correlation of two equally long series.
pub fn pearson_correlation<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: xs.len(),
        });
    }
    let n = T::from_count(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let mut sxx = T::zero();
    let mut syy = T::zero();
    let mut sxy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(Error::ZeroVariance);
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// One histogram bin of a report: `(lo, hi]` and its probability mass. For a
/// discrete (identity) distribution `lo == hi == level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinRow<T> {
    pub lo: T,
    pub hi: T,
    pub mass: T,
}

/// Fraction of users whose whole profile sits on one rating level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CensusLevel<T> {
    pub level: T,
    pub fraction: T,
}

/// Shape diagnostics for one transformed matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport<T> {
    pub transform: TransformSpec,
    pub flatness: T,
    /// `None` when undefined (zero variance).
    pub kurtosis: Option<T>,
    pub binned: DiscreteDistribution<T>,
    pub n_bins: usize,
    pub bins: Vec<BinRow<T>>,
    /// Per-level fraction of users with uniform (single repeated raw value)
    /// profiles.
    pub uniform_profile_census: Vec<CensusLevel<T>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyzeOptions {
    /// Compute kurtosis on bin midpoints instead of the raw value population.
    pub kurtosis_on_binned: bool,
}

/// Diagnostics for `matrix`: binned (or, for identity, per-level) value
/// distribution, flatness, kurtosis, and the uniform-profile census.
///
/// Identity matrices are tallied per rating level directly; continuous
/// transforms are split into `|scale|` equal-width bins over the transform's
/// value range.
pub fn analyze<T: Scalar>(
    matrix: &ValueMatrix<T>,
    scale: &RatingScale<T>,
) -> Result<DistributionReport<T>> {
    analyze_with(matrix, scale, AnalyzeOptions::default())
}

pub fn analyze_with<T: Scalar>(
    matrix: &ValueMatrix<T>,
    scale: &RatingScale<T>,
    options: AnalyzeOptions,
) -> Result<DistributionReport<T>> {
    if matrix.n_entries() == 0 {
        return Err(Error::EmptyInput);
    }
    let values: Vec<T> = matrix.entries().iter().map(|e| e.value).collect();
    let transform = matrix.provenance();
    let n_bins = scale.len();

    let (binned, bins) = if transform.is_identity() {
        let dist = discrete_distribution(&values, scale)?;
        let bins = dist
            .labels()
            .iter()
            .zip(dist.mass())
            .map(|(&level, &mass)| BinRow {
                lo: level,
                hi: level,
                mass,
            })
            .collect();
        (dist, bins)
    } else {
        let (mut lo, mut hi) = matrix.value_range();
        if hi <= lo {
            // all entries equal: widen so the point mass lands in a real bin
            lo -= T::half();
            hi += T::half();
        }
        let dist = bin_values(&values, n_bins, (lo, hi))?;
        let width = (hi - lo) / T::from_count(n_bins);
        let bins = (0..n_bins)
            .map(|i| BinRow {
                lo: lo + width * T::from_count(i),
                hi: lo + width * T::from_count(i + 1),
                mass: dist.mass()[i],
            })
            .collect();
        (dist, bins)
    };

    let kurtosis_values: Vec<T> = if options.kurtosis_on_binned && !transform.is_identity() {
        let (lo, hi) = matrix.value_range();
        if hi > lo {
            let width = (hi - lo) / T::from_count(n_bins);
            values
                .iter()
                .map(|&v| {
                    let i = bin_index(v, n_bins, lo, hi);
                    lo + width * (T::from_count(i) + T::half())
                })
                .collect()
        } else {
            values.clone()
        }
    } else {
        values.clone()
    };

    Ok(DistributionReport {
        transform,
        flatness: flatness(&binned),
        kurtosis: kurtosis(&kurtosis_values).ok(),
        binned,
        n_bins,
        bins,
        uniform_profile_census: uniform_profile_census(matrix, scale),
    })
}

/// Per-level fraction of users whose raw profile is one repeated value.
pub fn uniform_profile_census<T: Scalar>(
    matrix: &ValueMatrix<T>,
    scale: &RatingScale<T>,
) -> Vec<CensusLevel<T>> {
    let mut counts = vec![0usize; scale.len()];
    for u in 0..matrix.n_users() {
        let mut sources = matrix.user_entries(UserId(u as u32)).map(|e| e.source);
        let first = match sources.next() {
            Some(v) => v,
            None => continue,
        };
        if sources.all(|v| v == first) {
            if let Some(idx) = scale.level_index(first) {
                counts[idx] += 1;
            }
        }
    }
    let total = T::from_count(matrix.n_users().max(1));
    scale
        .values()
        .iter()
        .zip(&counts)
        .map(|(&level, &c)| CensusLevel {
            level,
            fraction: T::from_count(c) / total,
        })
        .collect()
}

impl<T: Scalar> DistributionReport<T> {
    /// JSON form: `{transform, flatness, kurtosis, bins:[{lo,hi,mass}],
    /// census:[{level,fraction}]}`.
    pub fn to_json(&self) -> String {
        let as_f64 = |v: T| v.to_f64().unwrap_or(f64::NAN);
        let bins: Vec<serde_json::Value> = self
            .bins
            .iter()
            .map(|b| {
                serde_json::json!({
                    "lo": as_f64(b.lo),
                    "hi": as_f64(b.hi),
                    "mass": as_f64(b.mass),
                })
            })
            .collect();
        let census: Vec<serde_json::Value> = self
            .uniform_profile_census
            .iter()
            .map(|c| {
                serde_json::json!({
                    "level": as_f64(c.level),
                    "fraction": as_f64(c.fraction),
                })
            })
            .collect();
        let report = serde_json::json!({
            "transform": self.transform.to_string(),
            "flatness": as_f64(self.flatness),
            "kurtosis": self.kurtosis.map(as_f64),
            "n_bins": self.n_bins,
            "bins": bins,
            "census": census,
        });
        serde_json::to_string_pretty(&report).expect("report serializes")
    }

    /// Plot-ready CSV: one `bin_midpoint,mass` row per bin.
    pub fn write_plot_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_midpoint,mass")?;
        for (label, mass) in self.binned.labels().iter().zip(self.binned.mass()) {
            writeln!(
                w,
                "{},{}",
                label.to_f64().unwrap_or(f64::NAN),
                mass.to_f64().unwrap_or(f64::NAN)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::transform::{identity_transform, transform_user, IndexRule};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discrete_distribution_counts_levels() {
        let scale = RatingScale::five_star();
        let d = discrete_distribution(&[3.0, 3.0, 3.0], &scale).unwrap();
        assert_eq!(d.mass(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        let d = discrete_distribution(&[1.0, 2.0, 3.0, 4.0, 5.0], &scale).unwrap();
        assert!(d.mass().iter().all(|&m| m == 0.2));
    }

    #[test]
    fn discrete_distribution_rejects_bad_input() {
        let scale = RatingScale::five_star();
        assert!(matches!(
            discrete_distribution::<f64>(&[], &scale),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            discrete_distribution(&[2.5], &scale),
            Err(Error::NotOnScale { .. })
        ));
    }

    #[test]
    fn flatness_of_uniform_is_zero_and_point_mass_is_log_n() {
        let labels: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let uniform = DiscreteDistribution::new(labels.clone(), vec![0.1; 10]).unwrap();
        assert!(flatness(&uniform).abs() < 1e-12);

        let mut mass = vec![0.0; 10];
        mass[3] = 1.0;
        let point = DiscreteDistribution::new(labels, mass).unwrap();
        assert_relative_eq!(flatness(&point), 10.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn flatness_is_nonnegative_and_shrinks_under_equalizing_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(3..12);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mut mass: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let labels: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let before = flatness(&DiscreteDistribution::new(labels.clone(), mass.clone()).unwrap());
            assert!(before >= 0.0);

            // move a sliver of mass from the heaviest to the lightest bin
            let hi = (0..n).max_by(|&a, &b| mass[a].partial_cmp(&mass[b]).unwrap()).unwrap();
            let lo = (0..n).min_by(|&a, &b| mass[a].partial_cmp(&mass[b]).unwrap()).unwrap();
            if hi == lo {
                continue;
            }
            let eps = (mass[hi] - mass[lo]) / 4.0;
            mass[hi] -= eps;
            mass[lo] += eps;
            let after = flatness(&DiscreteDistribution::new(labels, mass).unwrap());
            assert!(
                after < before + 1e-12,
                "equalizing move raised flatness: {before} -> {after}"
            );
        }
    }

    #[test]
    fn kurtosis_of_known_shapes() {
        // two-point symmetric sample: analytic kurtosis 1
        assert_relative_eq!(kurtosis(&[-1.0, 1.0, -1.0, 1.0]).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let uniform: Vec<f64> = (0..200_000).map(|_| rng.gen::<f64>()).collect();
        assert_relative_eq!(kurtosis(&uniform).unwrap(), 1.8, epsilon = 0.05);

        // Box-Muller standard normal sample
        let normal: Vec<f64> = (0..100_000)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        assert_relative_eq!(kurtosis(&normal).unwrap(), 3.0, epsilon = 0.1);
    }

    #[test]
    fn kurtosis_is_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..500).map(|_| rng.gen_range(-3.0..7.0)).collect();
        let base = kurtosis(&xs).unwrap();
        for (a, b) in [(2.5, 1.0), (-0.3, 4.0), (100.0, -50.0)] {
            let ys: Vec<f64> = xs.iter().map(|&x| a * x + b).collect();
            assert_relative_eq!(kurtosis(&ys).unwrap(), base, max_relative = 1e-9);
        }
    }

    #[test]
    fn kurtosis_rejects_degenerate_input() {
        assert!(matches!(
            kurtosis(&[1.0]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            kurtosis(&[2.0, 2.0, 2.0]),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn bin_values_uses_upper_inclusive_boundaries() {
        let d = bin_values(&[10.0], 10, (0.0, 100.0)).unwrap();
        assert_eq!(d.mass()[0], 1.0, "boundary value 10 belongs to (0,10]");
        let d = bin_values(&[10.0001], 10, (0.0, 100.0)).unwrap();
        assert_eq!(d.mass()[1], 1.0);
        let d = bin_values(&[100.0], 10, (0.0, 100.0)).unwrap();
        assert_eq!(d.mass()[9], 1.0, "hi goes to the last bin");
        let d = bin_values(&[0.0], 10, (0.0, 100.0)).unwrap();
        assert_eq!(d.mass()[0], 1.0, "lo goes to the first bin");
    }

    #[test]
    fn bin_values_point_and_uniform_grids() {
        let d = bin_values(&[55.0; 7], 10, (0.0, 100.0)).unwrap();
        assert_eq!(d.mass()[5], 1.0);

        let grid: Vec<f64> = (0..10).map(|i| 5.0 + 10.0 * i as f64).collect();
        let d = bin_values(&grid, 10, (0.0, 100.0)).unwrap();
        assert!(d.mass().iter().all(|&m| (m - 0.1).abs() < 1e-12));
        assert_relative_eq!(d.labels()[0], 5.0);
        assert_relative_eq!(d.labels()[9], 95.0);
    }

    #[test]
    fn bin_values_validates_input() {
        assert!(matches!(
            bin_values(&[1.0], 1, (0.0, 10.0)),
            Err(Error::InvalidBins(1))
        ));
        assert!(matches!(
            bin_values(&[1.0], 4, (5.0, 5.0)),
            Err(Error::DegenerateRange { .. })
        ));
        assert!(matches!(
            bin_values(&[11.0], 4, (0.0, 10.0)),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            bin_values::<f64>(&[], 4, (0.0, 10.0)),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn bin_masses_sum_to_one_for_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.gen_range(1..200);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
            let bins = rng.gen_range(2..15);
            let d = bin_values(&values, bins, (0.0, 100.0)).unwrap();
            let total: f64 = d.mass().iter().sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn pearson_correlation_basics() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert_relative_eq!(pearson_correlation(&xs, &ys).unwrap(), 1.0);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_relative_eq!(pearson_correlation(&xs, &neg).unwrap(), -1.0);
        assert_relative_eq!(
            pearson_correlation(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            0.5
        );
    }

    #[test]
    fn pearson_correlation_validates_input() {
        assert!(matches!(
            pearson_correlation(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            pearson_correlation(&[1.0], &[1.0]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            pearson_correlation(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::ZeroVariance)
        ));
    }

    fn skewed_dataset() -> Dataset<f64> {
        // most mass on 4s and 5s, a couple of uniform profiles
        Dataset::from_triples(
            vec![
                ("u1", "a", 4.0),
                ("u1", "b", 5.0),
                ("u1", "c", 4.0),
                ("u2", "a", 5.0),
                ("u2", "b", 5.0),
                ("u2", "c", 4.0),
                ("u3", "a", 5.0),
                ("u3", "b", 5.0),
                ("u4", "a", 2.0),
                ("u4", "b", 4.0),
                ("u4", "c", 5.0),
                ("u5", "a", 3.0),
                ("u5", "b", 3.0),
            ],
            Some(RatingScale::five_star()),
        )
        .unwrap()
    }

    #[test]
    fn analyze_identity_uses_per_level_distribution() {
        let d = skewed_dataset();
        let report = analyze(&identity_transform(&d), d.scale()).unwrap();
        assert_eq!(report.n_bins, 5);
        assert_eq!(report.binned.len(), 5);
        assert!(report.flatness > 0.0);
        assert!(report.kurtosis.is_some());
        // bins for identity carry the level itself as both edges
        assert_eq!(report.bins[0].lo, report.bins[0].hi);
        let mass_total: f64 = report.binned.mass().iter().sum();
        assert_relative_eq!(mass_total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn analyze_flattens_skewed_data_under_percentile() {
        // two-user fixture with 9-rating profiles skewed toward high values
        let alice = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0, 5.0];
        let bob = [3.0, 3.0, 4.0, 4.0, 4.0, 5.0, 5.0, 5.0, 5.0];
        let mut triples = Vec::new();
        for (i, &v) in alice.iter().enumerate() {
            triples.push(("alice".to_string(), format!("i{i}"), v));
        }
        for (i, &v) in bob.iter().enumerate() {
            triples.push(("bob".to_string(), format!("i{i}"), v));
        }
        let d = Dataset::from_triples(triples, Some(RatingScale::five_star())).unwrap();
        let raw = analyze(&identity_transform(&d), d.scale()).unwrap();
        let per = analyze(&transform_user(&d, IndexRule::Last), d.scale()).unwrap();
        assert!(
            per.flatness <= raw.flatness,
            "percentile should not be less flat: raw {} vs per {}",
            raw.flatness,
            per.flatness
        );
        assert_eq!(per.n_bins, d.scale().len());
        // continuous transform bins span the percentile range
        assert_relative_eq!(per.bins[0].lo, 0.0);
        assert_relative_eq!(per.bins.last().unwrap().hi, 100.0);
    }

    #[test]
    fn census_counts_uniform_profiles_per_level() {
        let d = skewed_dataset();
        let report = analyze(&identity_transform(&d), d.scale()).unwrap();
        // u3 is uniform at 5, u5 uniform at 3; 5 users total
        let census = &report.uniform_profile_census;
        assert_eq!(census.len(), 5);
        assert_relative_eq!(census[2].fraction, 0.2); // level 3
        assert_relative_eq!(census[4].fraction, 0.2); // level 5
        assert_relative_eq!(census[0].fraction, 0.0);
        let all_uniform = Dataset::from_triples(
            vec![("a", "x", 5.0), ("a", "y", 5.0), ("b", "x", 5.0)],
            Some(RatingScale::five_star()),
        )
        .unwrap();
        let r = analyze(&identity_transform(&all_uniform), all_uniform.scale()).unwrap();
        assert_relative_eq!(r.uniform_profile_census[4].fraction, 1.0);
    }

    #[test]
    fn analyze_survives_constant_transformed_values() {
        // every profile uniform: z-scores all collapse to 0
        let d = Dataset::from_triples(
            vec![("a", "x", 5.0), ("a", "y", 5.0), ("b", "x", 3.0), ("b", "y", 3.0)],
            Some(RatingScale::five_star()),
        )
        .unwrap();
        let m = crate::transform::zscore_transform(
            &d,
            crate::transform::Orientation::User,
            crate::transform::OffsetPolicy::ShiftMinToZero,
        );
        let report = analyze(&m, d.scale()).unwrap();
        assert_relative_eq!(report.flatness, (5.0f64).ln(), epsilon = 1e-9);
        assert!(report.kurtosis.is_none());
    }

    #[test]
    fn report_json_and_csv_have_expected_shape() {
        let d = skewed_dataset();
        let report = analyze(&transform_user(&d, IndexRule::Last), d.scale()).unwrap();
        let json = report.to_json();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["transform"], "per:last:user");
        assert!(parsed["flatness"].is_number());
        assert_eq!(parsed["bins"].as_array().unwrap().len(), 5);
        assert!(parsed["bins"][0]["mass"].is_number());
        assert_eq!(parsed["census"].as_array().unwrap().len(), 5);

        let mut csv = Vec::new();
        report.write_plot_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "bin_midpoint,mass");
        assert_eq!(lines.count(), 5);
    }

    #[test]
    fn kurtosis_on_binned_flag_changes_the_population() {
        let d = skewed_dataset();
        let m = transform_user(&d, IndexRule::Last);
        let raw = analyze(&m, d.scale()).unwrap();
        let binned = analyze_with(
            &m,
            d.scale(),
            AnalyzeOptions {
                kurtosis_on_binned: true,
            },
        )
        .unwrap();
        assert!(raw.kurtosis.is_some());
        assert!(binned.kurtosis.is_some());
        assert_ne!(raw.kurtosis, binned.kurtosis);
        assert_eq!(raw.flatness, binned.flatness);
    }
}
