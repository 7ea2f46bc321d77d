//! Kernel density estimators on the unit cube.
//!
//! [`MirrorKdeModel::evaluate`] is the mirror-image estimator: every sample
//! is augmented with its reflections `t -> -t` and `t -> 2 - t` on each axis
//! (3^|S| images in total, the sample itself included) and the resulting
//! kernel sum is restricted to `[0, 1]^|S|`. Because the reflected kernel
//! mass that leaves the cube is folded back in, the estimator integrates to
//! one on the cube and has no first-order bias at the faces.
//!
//! [`MirrorKdeModel::evaluate_plain`] is the uncorrected estimator, kept to
//! exhibit the boundary bias.
//!
//! Samples are stored sorted by their first coordinate so that evaluation
//! only visits samples whose first coordinate (or one of its reflections)
//! lies within one bandwidth of the query. Reflection terms whose kernel
//! factor vanishes are skipped; the pruned sum visits the surviving terms in
//! the same order as the full `3^|S|` sum and is therefore bit-identical to
//! [`MirrorKdeModel::evaluate_unpruned`].

use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::combinatorics::FeatureSubset;
use crate::data::DataMatrix;
use crate::error::{IsdeError, Result};
use crate::kernel::Kernel;

pub const MIN_BANDWIDTH: f64 = 1e-6;
pub const MAX_BANDWIDTH: f64 = 0.5 - 1e-9;

/// Bandwidth `h = scale * m^(-1 / (2 beta + |S|))`, clamped into `(0, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRule {
    /// Hölder smoothness, in `(0, 2]`.
    pub beta: f64,
    pub scale: f64,
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule { beta: 2.0, scale: 1.0 }
    }
}

impl BandwidthRule {
    pub fn new(beta: f64, scale: f64) -> Result<Self> {
        let rule = BandwidthRule { beta, scale };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 2.0) {
            return Err(IsdeError::param(format!("beta must be in (0, 2], got {}", self.beta)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(IsdeError::param(format!(
                "bandwidth scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

pub fn select_bandwidth(rule: &BandwidthRule, m: usize, subset_size: usize) -> Result<f64> {
    rule.validate()?;
    if m < 2 {
        return Err(IsdeError::param(format!("need at least 2 samples, got {m}")));
    }
    if subset_size == 0 {
        return Err(IsdeError::param("subset size must be positive"));
    }
    let exponent = -1.0 / (2.0 * rule.beta + subset_size as f64);
    let h = rule.scale * (m as f64).powf(exponent);
    Ok(h.clamp(MIN_BANDWIDTH, MAX_BANDWIDTH))
}

/// A fitted marginal estimator for one feature subset.
#[derive(Debug, Clone, PartialEq)]
pub struct MirrorKdeModel {
    subset: FeatureSubset,
    bandwidth: f64,
    kernel: Kernel,
    /// `m × |S|`, row-major, sorted by the first column.
    samples: Vec<f64>,
    m: usize,
}

impl MirrorKdeModel {
    /// Projects `data` onto `subset` and picks the bandwidth from `rule`.
    pub fn fit(
        data: &DataMatrix,
        subset: FeatureSubset,
        rule: &BandwidthRule,
        kernel: Kernel,
    ) -> Result<Self> {
        let h = select_bandwidth(rule, data.n_rows(), subset.len())?;
        Self::fit_with_bandwidth(data, subset, h, kernel)
    }

    pub fn fit_with_bandwidth(
        data: &DataMatrix,
        subset: FeatureSubset,
        bandwidth: f64,
        kernel: Kernel,
    ) -> Result<Self> {
        if data.n_cols() != subset.dim() {
            return Err(IsdeError::structural(format!(
                "data has {} columns but subset is over {} features",
                data.n_cols(),
                subset.dim()
            )));
        }
        if data.n_rows() < 2 {
            return Err(IsdeError::param(format!(
                "need at least 2 samples, got {}",
                data.n_rows()
            )));
        }
        let p = subset.len();
        let mut samples = Vec::with_capacity(data.n_rows() * p);
        for (r, row) in data.rows().enumerate() {
            for c in subset.indices() {
                let v = row[c];
                if !(0.0..=1.0).contains(&v) {
                    return Err(IsdeError::DataRange { row: r + 1, col: c + 1, value: v });
                }
                samples.push(v);
            }
        }
        Self::from_samples(subset, bandwidth, kernel, samples)
    }

    /// Builds a model from already projected samples (`m × |S|`, row-major).
    pub fn from_samples(
        subset: FeatureSubset,
        bandwidth: f64,
        kernel: Kernel,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth < 0.5) {
            return Err(IsdeError::param(format!(
                "bandwidth must be in (0, 1/2), got {bandwidth}"
            )));
        }
        let p = subset.len();
        if samples.is_empty() || samples.len() % p != 0 {
            return Err(IsdeError::structural(format!(
                "{} sample values do not form rows of width {p}",
                samples.len()
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !(0.0..=1.0).contains(v)) {
            let col = subset.indices().nth(pos % p).unwrap_or(0);
            return Err(IsdeError::DataRange {
                row: pos / p + 1,
                col: col + 1,
                value: samples[pos],
            });
        }
        let m = samples.len() / p;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| samples[a * p].total_cmp(&samples[b * p]));
        let sorted: Vec<f64> = order
            .iter()
            .flat_map(|&i| samples[i * p..(i + 1) * p].iter().copied())
            .collect();
        Ok(MirrorKdeModel { subset, bandwidth, kernel, samples: sorted, m })
    }

    pub fn subset(&self) -> FeatureSubset {
        self.subset
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Number of fitted samples `m`.
    pub fn n_samples(&self) -> usize {
        self.m
    }

    /// `|S|`.
    pub fn dim(&self) -> usize {
        self.subset.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let p = self.dim();
        &self.samples[i * p..(i + 1) * p]
    }

    fn normalizer(&self) -> f64 {
        self.m as f64 * self.bandwidth.powi(self.dim() as i32)
    }

    /// Index range of samples whose first coordinate lies in `[lo, hi]`.
    fn window(&self, lo: f64, hi: f64) -> Range<usize> {
        let p = self.dim();
        let first = |i: usize| self.samples[i * p];
        let start = partition_point(self.m, |i| first(i) < lo);
        let end = partition_point(self.m, |i| first(i) <= hi);
        start..end.max(start)
    }

    fn slack(&self) -> f64 {
        1e-12 + 1e-9 * self.bandwidth
    }

    /// Uncorrected KDE, defined on all of `R^|S|`.
    pub fn evaluate_plain(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "query has wrong dimension");
        let h = self.bandwidth;
        let eps = self.slack();
        let mut acc = 0.0;
        for i in self.window(x[0] - h - eps, x[0] + h + eps) {
            let w = self.sample(i);
            let mut prod = 1.0;
            for (wk, xk) in w.iter().zip(x) {
                prod *= self.kernel.evaluate((wk - xk) / h);
                if prod == 0.0 {
                    break;
                }
            }
            acc += prod;
        }
        acc / self.normalizer()
    }

    /// Mirror-image KDE; zero outside `[0, 1]^|S|`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "query has wrong dimension");
        if !in_unit_cube(x) {
            return 0.0;
        }
        let p = self.dim();
        let h = self.bandwidth;
        let eps = self.slack();
        let x0 = x[0];
        let mut ranges = [
            // -w within h of x0
            self.window(-x0 - h - eps, -x0 + h + eps),
            self.window(x0 - h - eps, x0 + h + eps),
            // 2 - w within h of x0
            self.window(2.0 - x0 - h - eps, 2.0 - x0 + h + eps),
        ];
        ranges.sort_by_key(|r| r.start);

        // per-coordinate surviving kernel factors, in reflection order -1, 0, 1
        let mut factors = vec![[0.0f64; 3]; p];
        let mut counts = vec![0usize; p];
        let mut cursor = vec![0usize; p];
        let mut acc = 0.0;
        let mut next = 0usize;
        for r in ranges {
            let start = r.start.max(next);
            if start >= r.end {
                continue;
            }
            for i in start..r.end {
                let w = self.sample(i);
                let mut empty = false;
                for k in 0..p {
                    let mut c = 0;
                    for a in REFLECTIONS {
                        let v = self.kernel.evaluate((reflect(a, w[k]) - x[k]) / h);
                        if v != 0.0 {
                            factors[k][c] = v;
                            c += 1;
                        }
                    }
                    counts[k] = c;
                    if c == 0 {
                        empty = true;
                        break;
                    }
                }
                if empty {
                    continue;
                }
                cursor.iter_mut().for_each(|c| *c = 0);
                'terms: loop {
                    let mut prod = 1.0;
                    for k in 0..p {
                        prod *= factors[k][cursor[k]];
                    }
                    acc += prod;
                    // odometer, last coordinate fastest
                    let mut k = p;
                    loop {
                        if k == 0 {
                            break 'terms;
                        }
                        k -= 1;
                        cursor[k] += 1;
                        if cursor[k] < counts[k] {
                            break;
                        }
                        cursor[k] = 0;
                    }
                }
            }
            next = next.max(r.end);
        }
        acc / self.normalizer()
    }

    /// The mirror-image estimator summed over all samples and all `3^|S|`
    /// reflections without pruning. Reference implementation for tests.
    pub fn evaluate_unpruned(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "query has wrong dimension");
        if !in_unit_cube(x) {
            return 0.0;
        }
        let p = self.dim();
        let h = self.bandwidth;
        let total = 3usize.pow(p as u32);
        let mut acc = 0.0;
        for i in 0..self.m {
            let w = self.sample(i);
            for code in 0..total {
                let mut prod = 1.0;
                let mut div = total;
                for k in 0..p {
                    div /= 3;
                    let a = REFLECTIONS[(code / div) % 3];
                    prod *= self.kernel.evaluate((reflect(a, w[k]) - x[k]) / h);
                }
                acc += prod;
            }
        }
        acc / self.normalizer()
    }

    /// `ln` of [`evaluate`](Self::evaluate); `-inf` where the density is zero.
    pub fn log_evaluate(&self, x: &[f64]) -> f64 {
        self.evaluate(x).ln()
    }

    /// Breakpoints of the estimator along `axis` inside `[0, 1]`: the
    /// estimator is a polynomial in that coordinate between consecutive
    /// breakpoints. Sorted, deduplicated, and including 0 and 1.
    pub fn breakpoints(&self, axis: usize) -> Vec<f64> {
        let h = self.bandwidth;
        let mut cuts = vec![0.0, 1.0];
        let mut offsets = vec![-h, h];
        offsets.extend(self.kernel.interior_breakpoints().iter().map(|b| b * h));
        for i in 0..self.m {
            let w = self.sample(i)[axis];
            for a in REFLECTIONS {
                for off in &offsets {
                    let c = reflect(a, w) + off;
                    if c > 0.0 && c < 1.0 {
                        cuts.push(c);
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts
    }
}

const REFLECTIONS: [i8; 3] = [-1, 0, 1];

#[inline]
fn reflect(a: i8, t: f64) -> f64 {
    match a {
        -1 => -t,
        0 => t,
        _ => 2.0 - t,
    }
}

fn in_unit_cube(x: &[f64]) -> bool {
    x.iter().all(|v| (0.0..=1.0).contains(v))
}

fn partition_point(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    d: usize,
    subset: Vec<usize>,
    bandwidth: f64,
    kernel: Kernel,
    samples: Vec<f64>,
}

impl Serialize for MirrorKdeModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelRepr {
            d: self.subset.dim(),
            subset: self.subset.one_based(),
            bandwidth: self.bandwidth,
            kernel: self.kernel,
            samples: self.samples.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MirrorKdeModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let r = ModelRepr::deserialize(d)?;
        let subset = FeatureSubset::from_one_based(&r.subset, r.d).map_err(D::Error::custom)?;
        MirrorKdeModel::from_samples(subset, r.bandwidth, r.kernel, r.samples)
            .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelKind;
    use crate::quadrature::GaussLegendre;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_1d(points: &[f64], h: f64) -> MirrorKdeModel {
        let s = FeatureSubset::from_indices(&[0], 1).unwrap();
        MirrorKdeModel::from_samples(s, h, Kernel::EPANECHNIKOV, points.to_vec()).unwrap()
    }

    #[test]
    fn bandwidth_rule_examples() {
        let rule = BandwidthRule::new(2.0, 1.0).unwrap();
        let h = select_bandwidth(&rule, 10_000, 1).unwrap();
        assert!((h - 10_000f64.powf(-0.2)).abs() < 1e-15);
        assert!((h - 0.158489).abs() < 1e-6);
        assert!(select_bandwidth(&rule, 1, 1).is_err());
        let wide = BandwidthRule::new(2.0, 10.0).unwrap();
        assert_eq!(select_bandwidth(&wide, 100, 2).unwrap(), 0.5 - 1e-9);
        let tiny = BandwidthRule::new(0.01, 1e-9).unwrap();
        assert_eq!(select_bandwidth(&tiny, 100, 1).unwrap(), MIN_BANDWIDTH);
        assert!(BandwidthRule::new(2.5, 1.0).is_err());
        assert!(BandwidthRule::new(0.0, 1.0).is_err());
        assert!(BandwidthRule::new(2.0, 0.0).is_err());
    }

    #[test]
    fn fit_projects_columns() {
        let data = DataMatrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6]]).unwrap();
        let rule = BandwidthRule::default();
        let s1 = FeatureSubset::from_one_based(&[1], 3).unwrap();
        let m1 = MirrorKdeModel::fit(&data, s1, &rule, Kernel::EPANECHNIKOV).unwrap();
        assert_eq!(m1.n_samples(), 2);
        assert_eq!(m1.samples(), &[0.1, 0.4]);
        let s13 = FeatureSubset::from_one_based(&[1, 3], 3).unwrap();
        let m13 = MirrorKdeModel::fit(&data, s13, &rule, Kernel::EPANECHNIKOV).unwrap();
        assert_eq!(m13.samples(), &[0.1, 0.3, 0.4, 0.6]);
    }

    #[test]
    fn fit_rejects_out_of_range() {
        let data = DataMatrix::from_rows(&[vec![0.1, 0.2], vec![1.2, 0.5]]).unwrap();
        let s = FeatureSubset::from_one_based(&[1], 2).unwrap();
        let err = MirrorKdeModel::fit(&data, s, &BandwidthRule::default(), Kernel::EPANECHNIKOV)
            .unwrap_err();
        assert!(matches!(err, IsdeError::DataRange { row: 2, col: 1, .. }), "{err}");
        let one = DataMatrix::from_rows(&[vec![0.1, 0.2]]).unwrap();
        assert!(MirrorKdeModel::fit(&one, s, &BandwidthRule::default(), Kernel::EPANECHNIKOV).is_err());
    }

    #[test]
    fn plain_examples() {
        let m = model_1d(&[0.5, 0.5], 0.25);
        assert_eq!(m.evaluate_plain(&[0.5]), 3.0);
        assert_eq!(m.evaluate_plain(&[0.9]), 0.0);
        let two = model_1d(&[0.4, 0.6], 0.25);
        // brute force: (1 / (m h)) * sum K((w - x) / h)
        let k = Kernel::EPANECHNIKOV;
        let oracle = (k.evaluate((0.4 - 0.5) / 0.25) + k.evaluate((0.6 - 0.5) / 0.25)) / (2.0 * 0.25);
        assert!((oracle - 2.52).abs() < 1e-12);
        assert!((two.evaluate_plain(&[0.5]) - 2.52).abs() < 1e-12);
    }

    #[test]
    fn mirror_examples() {
        let m = model_1d(&[0.5, 0.5], 0.25);
        assert_eq!(m.evaluate(&[0.5]), 3.0);
        let corner = model_1d(&[0.0, 0.0], 0.25);
        assert_eq!(corner.evaluate(&[0.0]), 6.0);
        assert_eq!(corner.evaluate_plain(&[0.0]), 3.0);

        let s = FeatureSubset::from_indices(&[0, 1], 2).unwrap();
        let m2 = MirrorKdeModel::from_samples(s, 0.25, Kernel::EPANECHNIKOV, vec![0.5, 0.5, 0.2, 0.7])
            .unwrap();
        assert_eq!(m2.evaluate(&[1.5, 0.5]), 0.0);
        assert_eq!(m2.log_evaluate(&[1.5, 0.5]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_values() {
        let m = model_1d(&[0.5, 0.5], 0.25);
        assert!((m.log_evaluate(&[0.5]) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(m.log_evaluate(&[0.95]), f64::NEG_INFINITY);
        // a single sample at 0.5 with h = 0.375 gives density 2 at the centre
        let one = model_1d(&[0.5, 0.5], 0.375);
        assert!((one.evaluate(&[0.5]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn nine_images_in_two_dimensions() {
        // a sample at the corner sees all four images (-w, w) coincide with the
        // query point; edges contribute the remaining images
        let s = FeatureSubset::from_indices(&[0, 1], 2).unwrap();
        let h = 0.3;
        let m = MirrorKdeModel::from_samples(s, h, Kernel::EPANECHNIKOV, vec![0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let expected = 4.0 * 0.75 * 0.75 / (h * h);
        assert!((m.evaluate(&[0.0, 0.0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn pruned_matches_unpruned_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let p = 1 + trial % 3;
            let m = 1 + rng.random_range(0..6);
            let h = rng.random_range(0.01..0.49);
            let kind = KernelKind::ALL[trial % 3];
            let mut samples: Vec<f64> = (0..m * p).map(|_| rng.random::<f64>()).collect();
            // push some samples onto the faces
            if trial % 5 == 0 {
                samples[0] = 0.0;
            }
            if trial % 7 == 0 {
                *samples.last_mut().unwrap() = 1.0;
            }
            let idx: Vec<usize> = (0..p).collect();
            let s = FeatureSubset::from_indices(&idx, p).unwrap();
            let model = MirrorKdeModel::from_samples(s, h, Kernel::new(kind), samples).unwrap();
            let x: Vec<f64> = (0..p)
                .map(|_| match rng.random_range(0..4) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random::<f64>(),
                })
                .collect();
            let a = model.evaluate(&x);
            let b = model.evaluate_unpruned(&x);
            assert_eq!(a.to_bits(), b.to_bits(), "trial {trial}: {a} vs {b}");
        }
    }

    #[test]
    fn mirror_symmetry() {
        // samples closed under t -> 1 - t give a symmetric estimate
        let s = FeatureSubset::from_indices(&[0, 1], 2).unwrap();
        let base = [[0.1, 0.3], [0.05, 0.8], [0.6, 0.45]];
        let mut samples = Vec::new();
        for b in base {
            samples.extend_from_slice(&b);
            samples.extend_from_slice(&[1.0 - b[0], 1.0 - b[1]]);
        }
        let m = MirrorKdeModel::from_samples(s, 0.2, Kernel::EPANECHNIKOV, samples).unwrap();
        for x in [[0.0, 0.0], [0.1, 0.9], [0.33, 0.47], [0.5, 0.5]] {
            let a = m.evaluate(&x);
            let b = m.evaluate(&[1.0 - x[0], 1.0 - x[1]]);
            assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn integrates_to_one_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gl = GaussLegendre::new(3);
        for kind in KernelKind::ALL {
            let pts: Vec<f64> = (0..25).map(|_| rng.random::<f64>().powi(3)).collect();
            let m = MirrorKdeModel::from_samples(
                FeatureSubset::from_indices(&[0], 1).unwrap(),
                0.17,
                Kernel::new(kind),
                pts,
            )
            .unwrap();
            let cuts = m.breakpoints(0);
            let total = gl.integrate_piecewise(&cuts, |x| m.evaluate(&[x]));
            assert!((total - 1.0).abs() < 1e-10, "{kind}: {total}");
            let plain = gl.integrate_piecewise(&cuts, |x| m.evaluate_plain(&[x]));
            assert!(plain < 1.0 - 1e-3, "plain KDE should leak mass, got {plain}");
        }
    }

    #[test]
    fn plain_estimator_halves_at_the_boundary() {
        // uniform truth: E[plain(0)] -> 1/2 while E[mirror(0)] -> 1
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<f64> = (0..200_000).map(|_| rng.random::<f64>()).collect();
        let m = model_1d(&pts, 0.02);
        assert!((m.evaluate_plain(&[0.0]) - 0.5).abs() < 0.05);
        assert!((m.evaluate(&[0.0]) - 1.0).abs() < 0.1);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = FeatureSubset::from_one_based(&[2, 3], 4).unwrap();
        let samples: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let m = MirrorKdeModel::from_samples(s, 0.123456789, Kernel::EPANECHNIKOV, samples).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: MirrorKdeModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let x = [0.3, 0.01];
        assert_eq!(back.evaluate(&x).to_bits(), m.evaluate(&x).to_bits());
        assert!(json.contains("\"subset\":[2,3]"));
    }
}
