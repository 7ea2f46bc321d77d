//! Envelope constants, the Hoeffding selection bound and the final risk bound.

use serde::{Deserialize, Serialize};

use crate::combinatorics::count_subsets;
use crate::error::{IsdeError, Result};
use crate::mirror_kde::MirrorKdeModel;

/// Constants entering the risk bounds. `a` is the bounding constant with
/// `e^{-a|S|} <= f_S <= e^{a|S|}`, `c_k` the user-supplied envelope constant
/// of the estimator's uniform deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub a: f64,
    pub delta_n: f64,
    pub delta_m: f64,
    pub beta: f64,
    pub c_k: f64,
}

impl BoundParams {
    /// `a = 1`, `δ_n = δ_m = 0.05`, `β = 2`, `C_k = 1`.
    pub fn new(d: usize, k: usize, n: usize, m: usize) -> Self {
        BoundParams { d, k, n, m, a: 1.0, delta_n: 0.05, delta_m: 0.05, beta: 2.0, c_k: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        count_subsets(self.d, self.k)?;
        if self.n == 0 || self.m == 0 {
            return Err(IsdeError::param("n and m must be positive"));
        }
        check_a(self.a)?;
        for (name, v) in [("delta_n", self.delta_n), ("delta_m", self.delta_m)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(IsdeError::param(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 2.0) {
            return Err(IsdeError::param(format!("beta must be in (0, 2], got {}", self.beta)));
        }
        if !(self.c_k > 0.0 && self.c_k.is_finite()) {
            return Err(IsdeError::param(format!("C_k must be positive, got {}", self.c_k)));
        }
        Ok(())
    }
}

fn check_a(a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(IsdeError::param(format!("bounding constant A must be positive, got {a}")))
    }
}

fn check_size(subset_size: usize) -> Result<()> {
    if subset_size == 0 {
        return Err(IsdeError::param("subset size must be at least 1"));
    }
    Ok(())
}

/// `(e^{-cA|S|}, e^{cA|S|})` with `c = 2` for the estimator (`hatted`) and
/// `c = 1` for the true marginal.
pub fn bc_envelope(a: f64, subset_size: usize, hatted: bool) -> Result<(f64, f64)> {
    check_a(a)?;
    check_size(subset_size)?;
    let c = if hatted { 2.0 } else { 1.0 };
    let e = c * a * subset_size as f64;
    Ok(((-e).exp(), e.exp()))
}

/// Strict cap `e^{-A|S|}(1 - e^{-A|S|})` on the uniform deviation `ε_S`.
pub fn uc_threshold(a: f64, subset_size: usize) -> Result<f64> {
    check_a(a)?;
    check_size(subset_size)?;
    let q = (-a * subset_size as f64).exp();
    Ok(q * (1.0 - q))
}

/// `2d √(2Ak/n) √(ln(2 S_d^k / δ_n))`.
pub fn selection_bound(params: &BoundParams) -> Result<f64> {
    params.validate()?;
    let s = count_subsets(params.d, params.k)? as f64;
    let (d, k, n) = (params.d as f64, params.k as f64, params.n as f64);
    Ok(2.0 * d * (2.0 * params.a * k / n).sqrt() * (2.0 * s / params.delta_n).ln().sqrt())
}

/// `KL(f_S‖f̂_S) <= e^{2A|S|} ε` when `ε` is below [`uc_threshold`].
pub fn kl_upper_from_uc(a: f64, subset_size: usize, eps: f64) -> Result<f64> {
    let cap = uc_threshold(a, subset_size)?;
    if !(eps >= 0.0) {
        return Err(IsdeError::param(format!("eps must be nonnegative, got {eps}")));
    }
    if eps >= cap {
        return Err(IsdeError::Precondition(format!(
            "eps = {eps} is not below the uniform-control threshold {cap}"
        )));
    }
    Ok((2.0 * a * subset_size as f64).exp() * eps)
}

/// The two summands of [`final_bound`]: estimation and selection.
pub fn final_bound_terms(params: &BoundParams, p_star_block_count: usize) -> Result<(f64, f64)> {
    params.validate()?;
    if p_star_block_count == 0 || p_star_block_count > params.d {
        return Err(IsdeError::param(format!(
            "block count must be in 1..={}, got {p_star_block_count}",
            params.d
        )));
    }
    let s = count_subsets(params.d, params.k)? as f64;
    let (d, k, n, m) = (params.d as f64, params.k as f64, params.n as f64, params.m as f64);
    let a = params.a;
    let first = (2.0 * a * k).exp()
        * std::f64::consts::SQRT_2
        * p_star_block_count as f64
        * params.c_k
        * (m.ln() + s.ln()).sqrt()
        * (1.0 / m).powf(params.beta / (2.0 * params.beta + k));
    let second = 2.0 * d * (n.ln() + s.ln()).sqrt() * (a * k / n).sqrt();
    Ok((first, second))
}

/// `e^{2Ak} √2 |P*| C_k √(ln m + ln S_d^k) m^{-β/(2β+k)} + 2d √(ln n + ln S_d^k) √(Ak/n)`.
pub fn final_bound(params: &BoundParams, p_star_block_count: usize) -> Result<f64> {
    let (a, b) = final_bound_terms(params, p_star_block_count)?;
    Ok(a + b)
}

/// Heuristic estimate of the bounding constant from fitted block models:
/// the largest `|ln f̂_S(x)| / (2|S|)` over a regular interior grid. Not a
/// certified value; returns `+inf` when some estimate vanishes on the grid.
pub fn estimate_bounding_constant(models: &[MirrorKdeModel], points_per_axis: usize) -> Result<f64> {
    if points_per_axis == 0 {
        return Err(IsdeError::param("grid needs at least one point per axis"));
    }
    let mut worst: f64 = 0.0;
    for model in models {
        let p = model.dim();
        let total = points_per_axis
            .checked_pow(p as u32)
            .filter(|&t| t <= 1 << 22)
            .ok_or_else(|| IsdeError::param("grid too large for block dimension"))?;
        let mut x = vec![0.0; p];
        for idx in 0..total {
            let mut r = idx;
            for c in x.iter_mut().rev() {
                *c = ((r % points_per_axis) as f64 + 0.5) / points_per_axis as f64;
                r /= points_per_axis;
            }
            let v = model.log_evaluate(&x).abs() / (2.0 * p as f64);
            worst = worst.max(v);
        }
    }
    Ok(worst)
}
