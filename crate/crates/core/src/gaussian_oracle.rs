//! Closed forms for centered Gaussians with block-equicorrelated covariance,
//! and Gaussian-copula data on the unit cube.
//!
//! `A^p_σ` is the `p × p` matrix with unit diagonal and off-diagonal `σ`.
//! `Σ^{(d,k)}_{σ,ε}` has `d/k` diagonal blocks `A^k_σ` and `ε` everywhere
//! outside them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::combinatorics::{FeaturePartition, FeatureSubset};
use crate::data::DataMatrix;
use crate::divergences::{LogDensity, Sampler};
use crate::error::{IsdeError, Result};

/// Standard normal CDF, `Φ(z) = erfc(-z/√2)/2`, with the `erfc` of the
/// `libm` crate (the FreeBSD/musl rational approximations, error below one
/// ulp, so absolute error on `Φ` stays far under 1e-12).
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `Φ^{-1}(u)` for `u ∈ [0, 1]`; infinite at the end points. Starts from
/// statrs' `erfc_inv` and takes one Newton step on [`std_normal_cdf`].
pub fn std_normal_quantile(u: f64) -> f64 {
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
    if !z.is_finite() {
        return z;
    }
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        z - (std_normal_cdf(z) - u) / pdf
    } else {
        z
    }
}

/// Parameters of `Σ^{(d,k*)}_{σ,ε}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlockSpec {
    pub d: usize,
    pub k_star: usize,
    pub sigma: f64,
    pub epsilon: f64,
}

impl GaussianBlockSpec {
    pub fn new(d: usize, k_star: usize, sigma: f64, epsilon: f64) -> Result<Self> {
        let s = GaussianBlockSpec { d, k_star, sigma, epsilon };
        s.validate()?;
        Ok(s)
    }

    /// `k* | d`, `σ ∈ [0, 1)`, `ε >= 0` and all three eigenvalues positive.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k_star == 0 || self.d % self.k_star != 0 {
            return Err(IsdeError::param(format!(
                "block size {} must divide d = {}",
                self.k_star, self.d
            )));
        }
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(IsdeError::param(format!("sigma must be in [0, 1), got {}", self.sigma)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(IsdeError::param(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        let [(top, _), _, (low, mult)] = self.eigen_triplet();
        if top <= 0.0 || (mult > 0 && low <= 0.0) {
            return Err(IsdeError::param(format!(
                "covariance is not positive definite for sigma = {}, epsilon = {}",
                self.sigma, self.epsilon
            )));
        }
        Ok(())
    }

    /// `(value, multiplicity)` for the three eigenvalues, in the order
    /// `1+(k-1)σ+(d-k)ε`, `1-σ`, `1+(k-1)σ-kε`.
    fn eigen_triplet(&self) -> [(f64, usize); 3] {
        let (d, k) = (self.d as f64, self.k_star as f64);
        let blocks = self.d / self.k_star;
        let base = 1.0 + (k - 1.0) * self.sigma;
        [
            (base + (d - k) * self.epsilon, 1),
            (1.0 - self.sigma, blocks * (self.k_star - 1)),
            (base - k * self.epsilon, blocks - 1),
        ]
    }

    /// Consecutive blocks of size `k*`.
    pub fn block_partition(&self) -> Result<FeaturePartition> {
        FeaturePartition::consecutive(&vec![self.k_star; self.d / self.k_star])
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let k = self.k_star;
        DMatrix::from_fn(self.d, self.d, |i, j| {
            if i == j {
                1.0
            } else if i / k == j / k {
                self.sigma
            } else {
                self.epsilon
            }
        })
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma < 1.0 {
        Ok(())
    } else {
        Err(IsdeError::param(format!("sigma must be in (0, 1), got {sigma}")))
    }
}

/// `A^p_σ`.
pub fn equicorrelated_matrix(p: usize, sigma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { sigma })
}

/// `det A^p_σ = (1-σ)^{p-1} (1+(p-1)σ)`.
pub fn det_equicorrelated(p: usize, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if p == 0 {
        return Err(IsdeError::param("p must be at least 1"));
    }
    Ok((1.0 - sigma).powi(p as i32 - 1) * (1.0 + (p as f64 - 1.0) * sigma))
}

/// `det Σ^{(d,k)}_{σ,ε} = (1-σ)^{(d/k)(k-1)} (1+(k-1)σ+(d-k)ε) (1+(k-1)σ-kε)^{d/k-1}`.
pub fn det_block_perturbed(spec: &GaussianBlockSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec
        .eigen_triplet()
        .iter()
        .map(|&(v, m)| v.powi(m as i32))
        .product())
}

/// Distinct eigenvalues of `Σ^{(d,k)}_{σ,ε}` with multiplicities (entries with
/// multiplicity zero are dropped; coinciding values are not merged).
pub fn block_perturbed_eigenvalues(spec: &GaussianBlockSpec) -> Result<Vec<(f64, usize)>> {
    spec.validate()?;
    Ok(spec.eigen_triplet().into_iter().filter(|&(_, m)| m > 0).collect())
}

fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| IsdeError::Factorization("matrix is not positive definite".into()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn principal_submatrix(cov: &DMatrix<f64>, subset: &FeatureSubset) -> DMatrix<f64> {
    let idx: Vec<usize> = subset.indices().collect();
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| cov[(idx[i], idx[j])])
}

/// `Σ_P`: the block-diagonal projection of `cov` on `partition`.
pub fn block_projection(cov: &DMatrix<f64>, partition: &FeaturePartition) -> DMatrix<f64> {
    let mut label = vec![0usize; partition.dim()];
    for (b, block) in partition.blocks().iter().enumerate() {
        for i in block.indices() {
            label[i] = b;
        }
    }
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
        if label[i] == label[j] {
            cov[(i, j)]
        } else {
            0.0
        }
    })
}

/// `KL(N(0,Σ) ‖ N(0,Σ_P)) = ½(Σ_{S∈P} ln det Σ(S) - ln det Σ)`.
pub fn kl_block_projection(cov: &DMatrix<f64>, partition: &FeaturePartition) -> Result<f64> {
    if !cov.is_square() || cov.nrows() != partition.dim() {
        return Err(IsdeError::structural(format!(
            "covariance is {}x{}, partition is over {} features",
            cov.nrows(),
            cov.ncols(),
            partition.dim()
        )));
    }
    let full = log_det_spd(cov)?;
    let mut blocks = 0.0;
    for b in partition.blocks() {
        blocks += log_det_spd(&principal_submatrix(cov, b))?;
    }
    Ok(0.5 * (blocks - full))
}

/// `KL(N(0,Σ_{σ,ε}) ‖ N(0,Σ_σ))`, exact and its `ε²` leading term
/// `d(d-k)ε² / (4(1+(k-1)σ)²)`.
pub fn kl_almost_independent(spec: &GaussianBlockSpec) -> Result<(f64, f64)> {
    spec.validate()?;
    let (d, k, eps) = (spec.d as f64, spec.k_star as f64, spec.epsilon);
    let base = 1.0 + (k - 1.0) * spec.sigma;
    let exact = -0.5 * ((d - k) * eps / base).ln_1p() - 0.5 * (d / k - 1.0) * (-k * eps / base).ln_1p();
    let leading = d * (d - k) * eps * eps / (4.0 * base * base);
    Ok((exact, leading))
}

/// Block sizes of a consecutive-feature partition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Structure {
    pub sizes: Vec<usize>,
}

impl Structure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(IsdeError::structural("structure sizes must be positive"));
        }
        Ok(Structure { sizes })
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn to_partition(&self) -> Result<FeaturePartition> {
        FeaturePartition::consecutive(&self.sizes)
    }

    /// Sizes sorted in decreasing order.
    pub fn sorted(&self) -> Vec<usize> {
        let mut s = self.sizes.clone();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }
}

/// `½(Σ_i ln((1+(s_i-1)σ)/(1-σ)) - ln((1+(d-1)σ)/(1-σ)))`: the divergence of
/// `A^d_σ` from its projection on the structure's blocks.
pub fn kl_equicorrelated_structure(d: usize, sigma: f64, structure: &Structure) -> Result<f64> {
    check_sigma(sigma)?;
    if structure.dim() != d {
        return Err(IsdeError::structural(format!(
            "structure sizes sum to {}, expected {d}",
            structure.dim()
        )));
    }
    let term = |s: usize| ((1.0 + (s as f64 - 1.0) * sigma) / (1.0 - sigma)).ln();
    let blocks: f64 = structure.sizes.iter().map(|&s| term(s)).sum();
    Ok(0.5 * (blocks - term(d)))
}

/// `(k, …, k, r)` with `d = pk + r`, omitting `r` when it is zero.
pub fn optimal_structure(d: usize, k: usize, sigma: f64) -> Result<Structure> {
    check_sigma(sigma)?;
    if k == 0 || k > d {
        return Err(IsdeError::param(format!("k must be in 1..={d}, got {k}")));
    }
    let mut sizes = vec![k; d / k];
    if d % k > 0 {
        sizes.push(d % k);
    }
    Structure::new(sizes)
}

/// Every structure with parts at most `k`, as nonincreasing size lists.
pub fn enumerate_structures(d: usize, k: usize) -> Vec<Structure> {
    fn rec(left: usize, cap: usize, cur: &mut Vec<usize>, out: &mut Vec<Structure>) {
        if left == 0 {
            out.push(Structure { sizes: cur.clone() });
            return;
        }
        for s in (1..=cap.min(left)).rev() {
            cur.push(s);
            rec(left - s, s, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if d > 0 && k > 0 {
        rec(d, k, &mut Vec::new(), &mut out);
    }
    out
}

/// Partition used to bound the bias when blocks are capped at `k < k*`:
/// every true block is cut into consecutive runs `(k, …, k, r)`.
pub fn bias_construction_partition(spec: &GaussianBlockSpec, k: usize) -> Result<FeaturePartition> {
    spec.validate()?;
    if k == 0 || k >= spec.k_star {
        return Err(IsdeError::param(format!(
            "k must be in 1..{}, got {k}",
            spec.k_star
        )));
    }
    let mut sizes = vec![k; spec.k_star / k];
    if spec.k_star % k > 0 {
        sizes.push(spec.k_star % k);
    }
    let all: Vec<usize> = sizes.iter().copied().cycle().take(sizes.len() * spec.d / spec.k_star).collect();
    FeaturePartition::consecutive(&all)
}

/// Upper bound on `KL(f_Σ ‖ f_{P*})` for `Σ = Σ^{(d,k*)}_{σ,ε}` and blocks
/// capped at `k < k*`:
/// `KL_ε + (dp/2k*) ln((1+(k-1)σ)/(1-σ)) + (d/2k*) ln((1+(r-1)σ)/(1-σ))
///  - (d/2k*) ln((1+(k*-1)σ)/(1-σ))` with `k* = pk + r`.
pub fn bias_upper_bound(spec: &GaussianBlockSpec, k: usize) -> Result<f64> {
    spec.validate()?;
    if k == 0 || k >= spec.k_star {
        return Err(IsdeError::param(format!(
            "k must be in 1..{}, got {k}",
            spec.k_star
        )));
    }
    let (kl_eps, _) = kl_almost_independent(spec)?;
    let (d, ks, s) = (spec.d as f64, spec.k_star as f64, spec.sigma);
    let p = (spec.k_star / k) as f64;
    let r = (spec.k_star % k) as f64;
    let term = |size: f64| ((1.0 + (size - 1.0) * s) / (1.0 - s)).ln();
    Ok(kl_eps + d * p / (2.0 * ks) * term(k as f64) + d / (2.0 * ks) * term(r)
        - d / (2.0 * ks) * term(ks))
}

/// `N(0, Σ)` through its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct CenteredGaussian {
    d: usize,
    /// Row-major lower factor.
    chol: Vec<f64>,
    log_det: f64,
}

impl CenteredGaussian {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(IsdeError::structural("covariance must be a nonempty square matrix"));
        }
        let d = cov.nrows();
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| IsdeError::Factorization("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let chol = (0..d * d).map(|i| l[(i / d, i % d)]).collect();
        Ok(CenteredGaussian { d, chol, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `|L^{-1} x|²`.
    fn mahalanobis(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let mut y = [0.0f64; 32];
        let mut heap;
        let y: &mut [f64] = if d <= 32 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut q = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i];
            let s: f64 = row.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            y[i] = (x[i] - s) / self.chol[i * d + i];
            q += y[i] * y[i];
        }
        q
    }

    /// `z = L g` for standard normal `g`.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.d;
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            out[i] = self.chol[i * d..i * d + i + 1].iter().zip(&g).map(|(a, b)| a * b).sum();
        }
    }
}

impl LogDensity for CenteredGaussian {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        -0.5 * (self.d as f64 * ln2pi + self.log_det + self.mahalanobis(x))
    }
}

impl Sampler for CenteredGaussian {
    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
        self.sample_point(rng, out);
        Ok(())
    }
}

/// Law of `(Φ(Z_1), …, Φ(Z_d))` for `Z ~ N(0, Σ)` with unit-diagonal `Σ`.
#[derive(Debug, Clone)]
pub struct GaussianCopula {
    cov: DMatrix<f64>,
    gaussian: CenteredGaussian,
}

impl GaussianCopula {
    /// `cov` must be a correlation matrix.
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if cov.diagonal().iter().any(|&v| (v - 1.0).abs() > 1e-12) {
            return Err(IsdeError::param("copula covariance must have unit diagonal"));
        }
        let gaussian = CenteredGaussian::new(&cov)?;
        Ok(GaussianCopula { cov, gaussian })
    }

    pub fn from_spec(spec: &GaussianBlockSpec) -> Result<Self> {
        spec.validate()?;
        Self::new(spec.covariance())
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Copula of the features in `subset`.
    pub fn marginal(&self, subset: &FeatureSubset) -> Result<GaussianCopula> {
        if subset.dim() != self.cov.nrows() {
            return Err(IsdeError::structural("subset dimension does not match the copula"));
        }
        Self::new(principal_submatrix(&self.cov, subset))
    }

    /// Copula of the block-diagonal projection on `partition`.
    pub fn projection(&self, partition: &FeaturePartition) -> Result<GaussianCopula> {
        Self::new(block_projection(&self.cov, partition))
    }

    pub fn density(&self, u: &[f64]) -> f64 {
        self.log_density(u).exp()
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<DataMatrix> {
        let d = self.cov.nrows();
        let mut values = vec![0.0; n * d];
        for row in values.chunks_exact_mut(d) {
            self.sample_into(rng, row)?;
        }
        DataMatrix::new(n, d, values)
    }
}

impl LogDensity for GaussianCopula {
    fn dim(&self) -> usize {
        self.cov.nrows()
    }

    /// `-½ ln det Σ - ½ zᵀ(Σ^{-1} - I)z` with `z = Φ^{-1}(u)`; `-inf` off the
    /// open cube.
    fn log_density(&self, u: &[f64]) -> f64 {
        if u.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return f64::NEG_INFINITY;
        }
        let z: Vec<f64> = u.iter().map(|&v| std_normal_quantile(v)).collect();
        let zz: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (self.gaussian.log_det + self.gaussian.mahalanobis(&z) - zz)
    }
}

impl Sampler for GaussianCopula {
    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
        self.gaussian.sample_point(rng, out);
        for v in out.iter_mut() {
            *v = std_normal_cdf(*v);
        }
        Ok(())
    }
}

/// `n` draws of the Gaussian copula with covariance `Σ^{(d,k*)}_{σ,ε}`.
pub fn sample_gaussian_copula_block(spec: &GaussianBlockSpec, n: usize, seed: u64) -> Result<DataMatrix> {
    if n == 0 {
        return Err(IsdeError::param("n must be at least 1"));
    }
    let copula = GaussianCopula::from_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    copula.sample(n, &mut rng)
}
