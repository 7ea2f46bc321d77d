//! Kullback–Leibler and Jensen–Shannon divergences, exact on finite supports
//! and by Monte Carlo for densities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{IsdeError, Result};

/// A density on `R^d` (or a subset of it) evaluated in log scale.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// A density that can also draw from itself.
pub trait Sampler: LogDensity {
    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()>;
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() {
        return Err(IsdeError::param(format!("{name} is empty")));
    }
    if p.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(IsdeError::param(format!("{name} has a negative or non-finite mass")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(IsdeError::param(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// `Σ p_i ln(p_i/q_i)`, `+inf` when `q` misses mass of `p`.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if p.len() != q.len() {
        return Err(IsdeError::structural("p and q have different supports"));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b == 0.0 {
                return Ok(f64::INFINITY);
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total)
}

/// `½ KL(p‖m) + ½ KL(q‖m)` with `m = (p+q)/2`; at most `ln 2`.
pub fn js_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if p.len() != q.len() {
        return Err(IsdeError::structural("p and q have different supports"));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    Ok(total)
}

/// Outcome of comparing `KL(p‖q)` against `8(1+A|S|)/(2 ln 2 - 1) · JS(p‖q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlJsCheck {
    pub kl: f64,
    pub js: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks the KL-by-JS control for two distributions on `N` points whose
/// densities relative to the uniform law, `N p_i` and `N q_i`, lie in
/// `[e^{-A|S|}, e^{A|S|}]`. Outside that envelope nothing is claimed and a
/// precondition error is returned.
pub fn kl_js_bound_check(p: &[f64], q: &[f64], a: f64, subset_size: usize) -> Result<KlJsCheck> {
    if !(a > 0.0 && a.is_finite()) || subset_size == 0 {
        return Err(IsdeError::param("A must be positive and the subset nonempty"));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if p.len() != q.len() {
        return Err(IsdeError::structural("p and q have different supports"));
    }
    let n = p.len() as f64;
    let edge = a * subset_size as f64;
    let (lo, hi) = ((-edge).exp(), edge.exp());
    // relative slack for masses that were normalized in floating point
    let slack = 1e-12;
    for (name, dist) in [("p", p), ("q", q)] {
        for &v in dist {
            let rel = n * v;
            if rel < lo * (1.0 - slack) || rel > hi * (1.0 + slack) {
                return Err(IsdeError::Precondition(format!(
                    "{name} leaves the envelope [{lo}, {hi}] with relative density {rel}"
                )));
            }
        }
    }
    let kl = kl_discrete(p, q)?;
    let js = js_discrete(p, q)?;
    let bound = 8.0 * (1.0 + edge) / (2.0 * std::f64::consts::LN_2 - 1.0) * js;
    Ok(KlJsCheck { kl, js, bound, holds: kl <= bound })
}

/// Mean and standard error of `ln f(X) - ln f̂(X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloKl {
    pub estimate: f64,
    pub std_error: f64,
    /// Points with a finite log-ratio.
    pub n_used: usize,
    /// Points where either log-density was `-inf` (excluded from the mean).
    pub failures: usize,
}

impl MonteCarloKl {
    /// Set when some points had to be dropped.
    pub fn warning(&self) -> bool {
        self.failures > 0
    }
}

/// `n` draws from `truth`, reproducible from `seed`.
pub fn draw<S: Sampler + ?Sized>(truth: &S, n: usize, seed: u64) -> Result<DataMatrix> {
    let d = truth.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; n * d];
    for row in values.chunks_exact_mut(d.max(1)) {
        truth.sample_into(&mut rng, row)?;
    }
    DataMatrix::new(n, d, values)
}

/// Log-ratio statistics on given points (usually draws from the first density).
pub fn log_ratio_stats<F, G>(points: &DataMatrix, log_f: F, log_g: G) -> MonteCarloKl
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let ratios: Vec<f64> = (0..points.n_rows())
        .into_par_iter()
        .map(|i| {
            let x = points.row(i);
            let a = log_f(x);
            let b = log_g(x);
            if a.is_finite() && b.is_finite() {
                a - b
            } else {
                f64::NAN
            }
        })
        .collect();
    summarize(&ratios)
}

/// Mean and standard error of the finite entries; NaN entries count as failures.
pub(crate) fn summarize(values: &[f64]) -> MonteCarloKl {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let failures = values.len() - finite.len();
    let n = finite.len();
    if n == 0 {
        return MonteCarloKl { estimate: f64::NAN, std_error: f64::NAN, n_used: 0, failures };
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MonteCarloKl { estimate: mean, std_error: (var / n as f64).sqrt(), n_used: n, failures }
}

/// `KL(f‖f̂)` estimated from `n_mc` draws of `f`.
pub fn monte_carlo_kl<S, E>(truth: &S, estimate: &E, n_mc: usize, seed: u64) -> Result<MonteCarloKl>
where
    S: Sampler + ?Sized,
    E: LogDensity + ?Sized,
{
    if n_mc < 100 {
        return Err(IsdeError::param(format!("n_mc must be at least 100, got {n_mc}")));
    }
    if truth.dim() != estimate.dim() {
        return Err(IsdeError::structural(format!(
            "truth has dimension {}, estimate {}",
            truth.dim(),
            estimate.dim()
        )));
    }
    let points = draw(truth, n_mc, seed)?;
    Ok(log_ratio_stats(&points, |x| truth.log_density(x), |x| estimate.log_density(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_oracle::{kl_block_projection, GaussianBlockSpec, GaussianCopula};
    use rand::Rng;

    fn random_pair(n: usize, a: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let gen = |rng: &mut ChaCha8Rng| {
            // relative densities drawn well inside the envelope, then normalized
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-0.45 * a..0.45 * a).exp()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        (gen(rng), gen(rng))
    }

    #[test]
    fn identical_distributions() {
        let p = [0.2, 0.3, 0.5];
        let c = kl_js_bound_check(&p, &p, 1.0, 1).unwrap();
        assert_eq!((c.kl, c.js, c.holds), (0.0, 0.0, true));
    }

    #[test]
    fn js_is_at_most_ln2() {
        assert!((js_discrete(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (p, q) = random_pair(6, 3.0, &mut rng);
            assert!(js_discrete(&p, &q).unwrap() <= std::f64::consts::LN_2);
        }
    }

    #[test]
    fn kl_js_control_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let n = rng.random_range(2..12);
            let (p, q) = random_pair(n, 1.0, &mut rng);
            assert!(kl_js_bound_check(&p, &q, 1.0, 1).unwrap().holds);
        }
    }

    #[test]
    fn envelope_violation_is_precondition() {
        let p = [0.98, 0.02];
        let q = [0.5, 0.5];
        assert!(matches!(kl_js_bound_check(&p, &q, 0.5, 1), Err(IsdeError::Precondition(_))));
    }

    #[test]
    fn kl_known_value() {
        let v = kl_discrete(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((v - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
        assert_eq!(kl_discrete(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), f64::INFINITY);
        assert!(kl_discrete(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn self_kl_is_exactly_zero() {
        let c = GaussianCopula::from_spec(&GaussianBlockSpec::new(4, 2, 0.5, 0.0).unwrap()).unwrap();
        let r = monte_carlo_kl(&c, &c, 500, 9).unwrap();
        assert_eq!((r.estimate, r.std_error, r.failures), (0.0, 0.0, 0));
        assert!(monte_carlo_kl(&c, &c, 99, 9).is_err());
    }

    #[test]
    fn copula_kl_matches_gaussian_projection() {
        let spec = GaussianBlockSpec::new(4, 2, 0.6, 0.1).unwrap();
        let truth = GaussianCopula::from_spec(&spec).unwrap();
        let part = spec.block_partition().unwrap();
        let proj = truth.projection(&part).unwrap();
        let exact = kl_block_projection(&spec.covariance(), &part).unwrap();
        let small = monte_carlo_kl(&truth, &proj, 20_000, 4).unwrap();
        assert!((small.estimate - exact).abs() < 3.0 * small.std_error, "{small:?} vs {exact}");
        let big = monte_carlo_kl(&truth, &proj, 80_000, 4).unwrap();
        let ratio = small.std_error / big.std_error;
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }
}
