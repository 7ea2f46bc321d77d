//! The estimation pipeline: split, fit every admissible block, score on the
//! hold-out half, and keep the best partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{enumerate_partitions, enumerate_subsets, FeaturePartition, FeatureSubset};
use crate::data::{AffineMap, DataMatrix};
use crate::divergences::{draw, summarize, LogDensity, MonteCarloKl, Sampler};
use crate::error::{IsdeError, Result};
use crate::gaussian_oracle::{kl_block_projection, GaussianCopula};
use crate::kernel::Kernel;
use crate::mirror_kde::{BandwidthRule, MirrorKdeModel};
use crate::partition_solver::{solve_dp, Solution};
use crate::scoring::{build_score_table, ScoreTable};

pub use crate::divergences::monte_carlo_kl;

/// Largest dimension accepted by [`run`].
pub const MAX_RUN_DIM: usize = 20;
/// Relative tolerance for the summation error in the risk report's slack.
const ROUNDING_SLACK: f64 = 1e-12;
/// Largest dimension for which the risk report enumerates all partitions.
pub const MAX_REPORT_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsdeConfig {
    /// Largest block size.
    pub k: usize,
    /// Share of the rows used for fitting; the rest is the hold-out.
    pub split_fraction: f64,
    pub beta: f64,
    pub kernel: Kernel,
    pub bandwidth_scale: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl IsdeConfig {
    pub fn new(k: usize) -> Self {
        IsdeConfig {
            k,
            split_fraction: 0.5,
            beta: 2.0,
            kernel: Kernel::EPANECHNIKOV,
            bandwidth_scale: 1.0,
            seed: 0,
            shuffle: true,
        }
    }

    pub fn bandwidth_rule(&self) -> Result<BandwidthRule> {
        BandwidthRule::new(self.beta, self.bandwidth_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(IsdeError::param("k must be at least 1"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(IsdeError::param(format!(
                "split fraction must be in (0, 1), got {}",
                self.split_fraction
            )));
        }
        self.bandwidth_rule().map(|_| ())
    }
}

/// Fitting and hold-out halves with the full score table and every block model.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub w: DataMatrix,
    pub z: DataMatrix,
    pub table: ScoreTable,
    /// One model per subset, in the table's mask order.
    pub models: Vec<MirrorKdeModel>,
}

impl Fitted {
    pub fn model(&self, subset: &FeatureSubset) -> Option<&MirrorKdeModel> {
        self.models.iter().find(|m| m.subset() == *subset)
    }
}

/// Shuffles (if enabled), splits, fits and scores.
pub fn fit_all(data: &DataMatrix, config: &IsdeConfig) -> Result<Fitted> {
    config.validate()?;
    let (n_rows, d) = (data.n_rows(), data.n_cols());
    if n_rows < 4 {
        return Err(IsdeError::param(format!("need at least 4 observations, got {n_rows}")));
    }
    if d == 0 || d > MAX_RUN_DIM {
        return Err(IsdeError::param(format!("d must be in 1..={MAX_RUN_DIM}, got {d}")));
    }
    if config.k > d {
        return Err(IsdeError::param(format!("k = {} exceeds d = {d}", config.k)));
    }
    data.check_unit_cube()?;
    let mut order: Vec<usize> = (0..n_rows).collect();
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        order.shuffle(&mut rng);
    }
    let m = (config.split_fraction * n_rows as f64).floor() as usize;
    if m < 2 || m >= n_rows {
        return Err(IsdeError::param(format!(
            "split fraction {} leaves {m} fitting and {} hold-out rows",
            config.split_fraction,
            n_rows - m.min(n_rows)
        )));
    }
    let w = data.select_rows(&order[..m]);
    let z = data.select_rows(&order[m..]);
    let (table, models) = build_score_table(&w, &z, config.k, &config.bandwidth_rule()?, config.kernel)?;
    Ok(Fitted { w, z, table, models })
}

/// Selected partition, its block models and the evidence behind the choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsdeResult {
    pub partition: FeaturePartition,
    /// `Σ_{S∈P̂} ℓ_n(S)`.
    #[serde(with = "crate::scoring::score_value")]
    pub score: f64,
    /// One model per block, in the partition's block order.
    pub models: Vec<MirrorKdeModel>,
    pub score_table: ScoreTable,
    pub config: IsdeConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Affine map applied to the raw data before fitting, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<AffineMap>,
}

/// Runs the full pipeline on data in `[0, 1]^d`.
pub fn run(data: &DataMatrix, config: &IsdeConfig) -> Result<IsdeResult> {
    let fitted = fit_all(data, config)?;
    let solution = solve_dp(&fitted.table)?;
    Ok(assemble(fitted, solution, config))
}

/// Result for a solved table: keeps the selected blocks' models.
pub fn assemble(fitted: Fitted, solution: Solution, config: &IsdeConfig) -> IsdeResult {
    let models = solution
        .partition
        .blocks()
        .iter()
        .map(|b| fitted.model(b).cloned().expect("every admissible block was fitted"))
        .collect();
    let mut warnings = Vec::new();
    if solution.score == f64::NEG_INFINITY {
        warnings.push(
            "every partition has score -inf: some hold-out points get zero estimated density \
             under all block models; the selected partition is the singleton fallback"
                .to_string(),
        );
    }
    IsdeResult {
        partition: solution.partition,
        score: solution.score,
        models,
        score_table: fitted.table,
        config: config.clone(),
        warnings,
        rescale: None,
    }
}

impl IsdeResult {
    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    /// `Σ_{S∈P̂} ln f̂_S(x_S)`; `-inf` outside the cube.
    pub fn log_evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(IsdeError::structural(format!(
                "point has {} coordinates, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.log_density(x))
    }

    /// Raw point mapped through the stored rescale map, if any.
    pub fn prepare_point(&self, raw: &[f64]) -> Vec<f64> {
        match &self.rescale {
            Some(map) => map.apply(raw),
            None => raw.to_vec(),
        }
    }
}

impl LogDensity for IsdeResult {
    fn dim(&self) -> usize {
        self.partition.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return f64::NEG_INFINITY;
        }
        self.models.iter().map(|m| m.log_evaluate(&m.subset().project(x))).sum()
    }
}

/// `f̂_{P̂}(x) = Π_{S∈P̂} f̂_S(x_S)`, zero outside the cube.
pub fn evaluate_joint(result: &IsdeResult, x: &[f64]) -> Result<f64> {
    if x.len() != result.dim() {
        return Err(IsdeError::structural(format!(
            "point has {} coordinates, model expects {}",
            x.len(),
            result.dim()
        )));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Ok(0.0);
    }
    Ok(result
        .models
        .iter()
        .map(|m| m.evaluate(&m.subset().project(x)))
        .product())
}

/// A product of block models over an arbitrary partition.
pub struct ProductModel<'a> {
    d: usize,
    blocks: Vec<&'a MirrorKdeModel>,
}

impl<'a> ProductModel<'a> {
    pub fn new(fitted: &'a Fitted, partition: &FeaturePartition) -> Result<Self> {
        let blocks = partition
            .blocks()
            .iter()
            .map(|b| {
                fitted
                    .model(b)
                    .ok_or_else(|| IsdeError::structural(format!("no fitted model for block {b}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProductModel { d: partition.dim(), blocks })
    }
}

impl LogDensity for ProductModel<'_> {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.blocks.iter().map(|m| m.log_evaluate(&m.subset().project(x))).sum()
    }
}

/// A data-generating law whose marginals can be evaluated.
pub trait BlockTruth: Sampler {
    /// Density of the features in `subset`, evaluated at projected points.
    fn marginal(&self, subset: &FeatureSubset) -> Result<Box<dyn LogDensity + '_>>;

    /// `KL(f ‖ Π_{S∈P} f_S)` in closed form, when known.
    fn exact_projection_kl(&self, _partition: &FeaturePartition) -> Option<f64> {
        None
    }
}

impl BlockTruth for GaussianCopula {
    fn marginal(&self, subset: &FeatureSubset) -> Result<Box<dyn LogDensity + '_>> {
        Ok(Box::new(GaussianCopula::marginal(self, subset)?))
    }

    /// The copula maps each coordinate by the same monotone `Φ` under both
    /// laws, so the divergence equals the Gaussian one.
    fn exact_projection_kl(&self, partition: &FeaturePartition) -> Option<f64> {
        kl_block_projection(self.covariance(), partition).ok()
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub value: f64,
    pub std_error: f64,
}

impl From<MonteCarloKl> for McValue {
    fn from(m: MonteCarloKl) -> Self {
        McValue { value: m.estimate, std_error: m.std_error }
    }
}

/// Terms of `KL(f‖f̂_{P̂}) <= KL(f‖f_{P*}) + Σ_{S∈P*} KL(f_S‖f̂_S) + (P - P_n)(ln f̂_{P̃} - ln f̂_{P̂})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// Selected from the hold-out scores.
    pub partition_hat: FeaturePartition,
    /// Best partition for the fitted models under the true law.
    pub partition_tilde: FeaturePartition,
    /// Best partition of the true law.
    pub partition_star: FeaturePartition,
    /// `KL(f‖f̂_{P̂})`.
    pub kl_hat: McValue,
    /// `KL(f‖f_{P*})`, exact when the truth provides it.
    pub bias: McValue,
    pub bias_is_exact: bool,
    /// `Σ_{S∈P*} KL(f_S‖f̂_S)`.
    pub approximation: McValue,
    /// `(P - P_n)(ln f̂_{P̃} - ln f̂_{P̂})`.
    pub selection: McValue,
    /// `P ln f̂_{P̃} - P ln f̂_{P̂}` (Monte Carlo part of the selection term).
    pub selection_population: McValue,
    /// `P_n ln f̂_{P̃} - P_n ln f̂_{P̂}` (exact on the hold-out).
    pub selection_holdout: f64,
    pub rhs: f64,
    /// `rhs - kl_hat`.
    pub slack: f64,
    /// Standard error of the per-draw difference behind `slack`.
    pub combined_std_error: f64,
    /// `slack >= -3 · combined_std_error`, up to floating-point rounding.
    pub holds: bool,
    pub n_mc: usize,
    /// Draws dropped because some log-density was `-inf`.
    pub dropped: usize,
    pub m: usize,
    pub n: usize,
}

fn tie_better(score: f64, p: &FeaturePartition, best: &Option<(f64, FeaturePartition)>) -> bool {
    match best {
        None => true,
        Some((b, bp)) => {
            score > *b
                || (score == *b
                    && (p.len() > bp.len() || (p.len() == bp.len() && p.lex_cmp(bp).is_lt())))
        }
    }
}

/// Splits `data`, fits, selects, and measures each term of the risk
/// decomposition against `truth` on `n_mc` common draws.
pub fn risk_decomposition_report<T: BlockTruth>(
    truth: &T,
    data: &DataMatrix,
    config: &IsdeConfig,
    n_mc: usize,
    mc_seed: u64,
) -> Result<RiskReport> {
    let d = data.n_cols();
    if d > MAX_REPORT_DIM {
        return Err(IsdeError::param(format!(
            "risk report enumerates all partitions and supports d <= {MAX_REPORT_DIM}, got {d}"
        )));
    }
    if truth.dim() != d {
        return Err(IsdeError::structural("truth and data dimensions differ"));
    }
    if n_mc < 100 {
        return Err(IsdeError::param(format!("n_mc must be at least 100, got {n_mc}")));
    }
    let fitted = fit_all(data, config)?;
    let hat = solve_dp(&fitted.table)?.partition;
    let subsets = enumerate_subsets(d, config.k)?;
    let partitions = enumerate_partitions(d, config.k)?;

    let points = draw(truth, n_mc, mc_seed)?;
    let marginals = subsets
        .iter()
        .map(|s| truth.marginal(s))
        .collect::<Result<Vec<_>>>()?;
    let index_of = |s: &FeatureSubset| subsets.iter().position(|t| t == s).expect("admissible block");

    // per draw: ln f, then ln f̂_S and ln f_S for every subset
    let rows: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let x = points.row(i);
            let mut est = Vec::with_capacity(subsets.len());
            let mut tru = Vec::with_capacity(subsets.len());
            for ((s, marg), model) in subsets.iter().zip(&marginals).zip(&fitted.models) {
                let xs = s.project(x);
                est.push(model.log_evaluate(&xs));
                tru.push(marg.log_density(&xs));
            }
            (truth.log_density(x), est, tru)
        })
        .collect();
    let keep: Vec<&(f64, Vec<f64>, Vec<f64>)> = rows
        .iter()
        .filter(|(f, e, t)| f.is_finite() && e.iter().all(|v| v.is_finite()) && t.iter().all(|v| v.is_finite()))
        .collect();
    let dropped = n_mc - keep.len();
    if keep.len() < 2 {
        return Err(IsdeError::Precondition(
            "almost every Monte Carlo draw has zero estimated density".into(),
        ));
    }
    let block_sum = |p: &FeaturePartition, v: &[f64]| -> f64 {
        p.blocks().iter().map(|b| v[index_of(b)]).sum()
    };
    let mean = |f: &dyn Fn(&(f64, Vec<f64>, Vec<f64>)) -> f64| -> McValue {
        let vals: Vec<f64> = keep.iter().map(|r| f(r)).collect();
        summarize(&vals).into()
    };

    // P̃ maximizes P ln f̂_P; P* minimizes KL(f‖f_P)
    let mut tilde: Option<(f64, FeaturePartition)> = None;
    let mut star: Option<(f64, FeaturePartition)> = None;
    let mut bias_is_exact = true;
    for p in &partitions {
        let pop = keep.iter().map(|r| block_sum(p, &r.1)).sum::<f64>() / keep.len() as f64;
        if tie_better(pop, p, &tilde) {
            tilde = Some((pop, p.clone()));
        }
        let kl = match truth.exact_projection_kl(p) {
            Some(v) => v,
            None => {
                bias_is_exact = false;
                keep.iter().map(|r| r.0 - block_sum(p, &r.2)).sum::<f64>() / keep.len() as f64
            }
        };
        // maximize -KL so the same tie rule applies
        if tie_better(-kl, p, &star) {
            star = Some((-kl, p.clone()));
        }
    }
    let (_, tilde) = tilde.expect("nonempty");
    let (neg_bias, star) = star.expect("nonempty");

    let kl_hat = mean(&|r| r.0 - block_sum(&hat, &r.1));
    let approximation = mean(&|r| block_sum(&star, &r.2) - block_sum(&star, &r.1));
    let bias = if bias_is_exact {
        McValue { value: -neg_bias, std_error: 0.0 }
    } else {
        mean(&|r| r.0 - block_sum(&star, &r.2))
    };
    let selection_population = mean(&|r| block_sum(&tilde, &r.1) - block_sum(&hat, &r.1));
    let table_sum = |p: &FeaturePartition| fitted.table.partition_score(p.blocks().iter());
    let selection_holdout = table_sum(&tilde)? - table_sum(&hat)?;
    let selection = McValue {
        value: selection_population.value - selection_holdout,
        std_error: selection_population.std_error,
    };
    let rhs = bias.value + approximation.value + selection.value;
    let slack = rhs - kl_hat.value;
    // slack = bias - P(ln f - ln f_{P*}) + P(ln f̂_{P̃} - ln f̂_{P*}) - P_n(...), estimated per draw
    let diff = mean(&|r| {
        let lhs = r.0 - block_sum(&hat, &r.1);
        let app = block_sum(&star, &r.2) - block_sum(&star, &r.1);
        let sel = block_sum(&tilde, &r.1) - block_sum(&hat, &r.1);
        let b = if bias_is_exact { 0.0 } else { r.0 - block_sum(&star, &r.2) };
        b + app + sel - lhs
    });
    let combined_std_error = diff.std_error;
    Ok(RiskReport {
        partition_hat: hat,
        partition_tilde: tilde,
        partition_star: star,
        kl_hat,
        bias,
        bias_is_exact,
        approximation,
        selection,
        selection_population,
        selection_holdout,
        rhs,
        slack,
        combined_std_error,
        holds: slack >= -3.0 * combined_std_error - ROUNDING_SLACK * (1.0 + kl_hat.value.abs()),
        n_mc,
        dropped,
        m: fitted.w.n_rows(),
        n: fitted.z.n_rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_oracle::{sample_gaussian_copula_block, GaussianBlockSpec};
    use rand::Rng;

    fn uniform(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::new(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn k_one_is_singletons() {
        let data = uniform(200, 3, 1);
        let r = run(&data, &IsdeConfig::new(1)).unwrap();
        assert_eq!(r.partition, FeaturePartition::singletons(3).unwrap());
        assert_eq!(r.models.len(), 3);
    }

    #[test]
    fn score_is_table_sum() {
        let data = uniform(300, 4, 2);
        let r = run(&data, &IsdeConfig::new(2)).unwrap();
        assert_eq!(r.score, r.score_table.partition_score(r.partition.blocks().iter()).unwrap());
        assert!(r.partition.max_block_size() <= 2);
    }

    #[test]
    fn deterministic() {
        let data = uniform(200, 3, 3);
        let cfg = IsdeConfig { seed: 17, ..IsdeConfig::new(2) };
        let a = run(&data, &cfg).unwrap();
        let b = run(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let tiny = uniform(3, 2, 1);
        assert!(matches!(run(&tiny, &IsdeConfig::new(1)), Err(IsdeError::Parameter(_))));
        let mut rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 0.5]).collect();
        rows[4][1] = -0.1;
        let bad = DataMatrix::from_rows(&rows).unwrap();
        match run(&bad, &IsdeConfig::new(1)) {
            Err(IsdeError::DataRange { row, col, .. }) => assert_eq!((row, col), (5, 2)),
            other => panic!("{other:?}"),
        }
        let ok = uniform(10, 2, 1);
        let cfg = IsdeConfig { split_fraction: 0.05, ..IsdeConfig::new(1) };
        assert!(matches!(run(&ok, &cfg), Err(IsdeError::Parameter(_))));
    }

    #[test]
    fn joint_evaluation() {
        let data = uniform(400, 3, 4);
        let r = run(&data, &IsdeConfig::new(2)).unwrap();
        assert_eq!(evaluate_joint(&r, &[1.2, 0.5, 0.5]).unwrap(), 0.0);
        assert!(evaluate_joint(&r, &[0.5, 0.5]).is_err());
        let x = [0.3, 0.6, 0.2];
        let p = evaluate_joint(&r, &x).unwrap();
        let l = r.log_evaluate(&x).unwrap();
        assert!((p - l.exp()).abs() < 1e-12 * p.max(1.0));
    }

    #[test]
    fn json_round_trip() {
        let data = uniform(120, 3, 5);
        let r = run(&data, &IsdeConfig::new(3)).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let back: IsdeResult = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn report_on_block_independent_truth() {
        let spec = GaussianBlockSpec::new(4, 2, 0.6, 0.0).unwrap();
        let truth = GaussianCopula::from_spec(&spec).unwrap();
        let data = sample_gaussian_copula_block(&spec, 600, 1).unwrap();
        let rep = risk_decomposition_report(&truth, &data, &IsdeConfig::new(2), 4000, 2).unwrap();
        assert!(rep.bias.value.abs() < 1e-12);
        assert_eq!(rep.partition_star, spec.block_partition().unwrap());
        if rep.partition_hat == rep.partition_tilde {
            assert_eq!(rep.selection.value, 0.0);
        }
        assert!(rep.holds, "{rep:?}");
    }
}
