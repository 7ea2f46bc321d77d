//! Hold-out log-likelihood scores `ℓ_n(S) = (1/n) Σ_i log f̂_S((Z_i)_S)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::combinatorics::{enumerate_subsets, FeatureSubset};
use crate::data::DataMatrix;
use crate::error::{IsdeError, Result};
use crate::kernel::Kernel;
use crate::mirror_kde::{BandwidthRule, MirrorKdeModel};

/// Environment variable capping the worker pool used for subset fitting.
pub const THREADS_ENV: &str = "ISDE_THREADS";

/// Scores for every subset of `Set_d^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    d: usize,
    k: usize,
    /// Hold-out sample count (0 for hand-built tables).
    n: usize,
    /// Fitting sample count (0 for hand-built tables).
    m: usize,
    beta: Option<f64>,
    kernel: Option<Kernel>,
    entries: BTreeMap<FeatureSubset, f64>,
}

impl ScoreTable {
    /// Empty table; fill with [`ScoreTable::insert`].
    pub fn new(d: usize, k: usize) -> Result<Self> {
        // validates d and k
        enumerate_subsets(d, k.min(d).max(1))?;
        if k == 0 || k > d {
            return Err(IsdeError::param(format!("k must be in 1..={d}, got {k}")));
        }
        Ok(ScoreTable { d, k, n: 0, m: 0, beta: None, kernel: None, entries: BTreeMap::new() })
    }

    /// Table filled from a score function over all of `Set_d^k`.
    pub fn from_fn(d: usize, k: usize, mut score: impl FnMut(FeatureSubset) -> f64) -> Result<Self> {
        let mut t = Self::new(d, k)?;
        for s in enumerate_subsets(d, k)? {
            t.insert(s, score(s))?;
        }
        Ok(t)
    }

    /// Scores must be finite or `-inf`.
    pub fn insert(&mut self, subset: FeatureSubset, score: f64) -> Result<()> {
        if subset.dim() != self.d {
            return Err(IsdeError::structural(format!(
                "subset {subset} is over {} features, table over {}",
                subset.dim(),
                self.d
            )));
        }
        if subset.len() > self.k {
            return Err(IsdeError::structural(format!(
                "subset {subset} exceeds the block size limit {}",
                self.k
            )));
        }
        if score.is_nan() || score == f64::INFINITY {
            return Err(IsdeError::structural(format!("invalid score {score} for {subset}")));
        }
        self.entries.insert(subset, score);
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, subset: &FeatureSubset) -> Option<f64> {
        self.entries.get(subset).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending mask order.
    pub fn iter(&self) -> impl Iterator<Item = (FeatureSubset, f64)> + '_ {
        self.entries.iter().map(|(s, v)| (*s, *v))
    }

    /// Errors unless every subset of `Set_d^k` has a score.
    pub fn check_complete(&self) -> Result<()> {
        for s in enumerate_subsets(self.d, self.k)? {
            if !self.entries.contains_key(&s) {
                return Err(IsdeError::structural(format!("score table has no entry for {s}")));
            }
        }
        Ok(())
    }

    /// `Σ_{S ∈ blocks} ℓ(S)`, summed right to left (the order the solvers use).
    pub fn partition_score<'a>(
        &self,
        blocks: impl DoubleEndedIterator<Item = &'a FeatureSubset>,
    ) -> Result<f64> {
        let mut total = 0.0;
        for b in blocks.rev() {
            let v = self
                .get(b)
                .ok_or_else(|| IsdeError::structural(format!("score table has no entry for {b}")))?;
            total = v + total;
        }
        Ok(total)
    }

    /// Same table with every score multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> ScoreTable {
        let mut t = self.clone();
        for v in t.entries.values_mut() {
            *v *= factor;
        }
        t
    }
}

/// Mean hold-out log-density of `model`; `-inf` as soon as one hold-out
/// point has zero density.
pub fn score_subset(model: &MirrorKdeModel, holdout: &DataMatrix) -> Result<f64> {
    if holdout.is_empty() {
        return Err(IsdeError::param("hold-out sample is empty"));
    }
    let subset = model.subset();
    if holdout.n_cols() != subset.dim() {
        return Err(IsdeError::structural(format!(
            "hold-out has {} columns, model expects {}",
            holdout.n_cols(),
            subset.dim()
        )));
    }
    let mut point = vec![0.0; subset.len()];
    let mut total = 0.0;
    for (r, row) in holdout.rows().enumerate() {
        for c in subset.indices() {
            if !(0.0..=1.0).contains(&row[c]) {
                return Err(IsdeError::DataRange { row: r + 1, col: c + 1, value: row[c] });
            }
        }
        subset.project_into(row, &mut point);
        total += model.log_evaluate(&point);
    }
    Ok(total / holdout.n_rows() as f64)
}

/// Worker count from `ISDE_THREADS`, defaulting to the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Fits one model per subset of `Set_d^k` on `w_split` and scores it on
/// `z_split`. Models are returned in the table's mask order.
pub fn build_score_table(
    w_split: &DataMatrix,
    z_split: &DataMatrix,
    k: usize,
    rule: &BandwidthRule,
    kernel: Kernel,
) -> Result<(ScoreTable, Vec<MirrorKdeModel>)> {
    if w_split.n_cols() != z_split.n_cols() {
        return Err(IsdeError::structural(format!(
            "fitting split has {} columns, hold-out split has {}",
            w_split.n_cols(),
            z_split.n_cols()
        )));
    }
    if w_split.is_empty() || z_split.is_empty() {
        return Err(IsdeError::param("both splits must be nonempty"));
    }
    rule.validate()?;
    w_split.check_unit_cube()?;
    z_split.check_unit_cube()?;
    let d = w_split.n_cols();
    let subsets = enumerate_subsets(d, k)?;

    let job = |s: &FeatureSubset| -> Result<(MirrorKdeModel, f64)> {
        let model = MirrorKdeModel::fit(w_split, *s, rule, kernel)?;
        let score = score_subset(&model, z_split)?;
        Ok((model, score))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| IsdeError::param(format!("cannot start worker pool: {e}")))?;
    let fitted: Vec<(MirrorKdeModel, f64)> =
        pool.install(|| subsets.par_iter().map(job).collect::<Result<Vec<_>>>())?;

    let mut table = ScoreTable::new(d, k)?;
    table.n = z_split.n_rows();
    table.m = w_split.n_rows();
    table.beta = Some(rule.beta);
    table.kernel = Some(kernel);
    let mut models = Vec::with_capacity(fitted.len());
    for (s, (model, score)) in subsets.iter().zip(fitted) {
        table.insert(*s, score)?;
        models.push(model);
    }
    Ok((table, models))
}

/// JSON form of a score: a number, or the string `"-inf"`.
pub(crate) mod score_value {
    use super::*;

    pub fn to_json(v: f64) -> serde_json::Value {
        if v == f64::NEG_INFINITY {
            serde_json::Value::String("-inf".into())
        } else {
            serde_json::json!(v)
        }
    }

    pub fn from_json(v: &serde_json::Value) -> std::result::Result<f64, String> {
        match v {
            serde_json::Value::String(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| format!("bad score {n}")),
            other => Err(format!("bad score {other}")),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_json(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        from_json(&v).map_err(D::Error::custom)
    }
}

struct ScoresRef<'a>(&'a BTreeMap<FeatureSubset, f64>);

impl Serialize for ScoresRef<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0 {
            map.serialize_entry(&k.key(), &score_value::to_json(*v))?;
        }
        map.end()
    }
}

impl Serialize for ScoreTable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            d: usize,
            k: usize,
            n: usize,
            m: usize,
            beta: Option<f64>,
            kernel: Option<Kernel>,
            scores: ScoresRef<'a>,
        }
        Repr {
            d: self.d,
            k: self.k,
            n: self.n,
            m: self.m,
            beta: self.beta,
            kernel: self.kernel,
            scores: ScoresRef(&self.entries),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScoreTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            d: usize,
            k: usize,
            n: usize,
            m: usize,
            beta: Option<f64>,
            kernel: Option<Kernel>,
            scores: BTreeMap<String, serde_json::Value>,
        }
        let r = Repr::deserialize(d)?;
        let mut t = ScoreTable::new(r.d, r.k).map_err(D::Error::custom)?;
        t.n = r.n;
        t.m = r.m;
        t.beta = r.beta;
        t.kernel = r.kernel;
        for (key, v) in &r.scores {
            let s = FeatureSubset::parse_key(key, r.d).map_err(D::Error::custom)?;
            let v = score_value::from_json(v).map_err(D::Error::custom)?;
            t.insert(s, v).map_err(D::Error::custom)?;
        }
        Ok(t)
    }
}
