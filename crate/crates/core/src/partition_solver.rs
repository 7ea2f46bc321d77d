//! Exact maximization of `Σ_{S∈P} ℓ(S)` over partitions with blocks of size
//! at most `k`.
//!
//! Ties are broken towards more blocks, then towards the lexicographically
//! smallest canonical form. A partition's score is always summed right to
//! left over its canonical block order, `ℓ(S₁) + (ℓ(S₂) + (… + ℓ(S_r)))`, so
//! both solvers and brute-force enumeration produce bit-identical values.
//! When every partition scores `-inf` the all-singleton partition is returned.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::combinatorics::{
    full_mask, lex_cmp_masks, BitIter, FeaturePartition, FeatureSubset, MAX_PARTITION_DIM,
    MAX_SUBSET_DIM,
};
use crate::error::{IsdeError, Result};
use crate::scoring::ScoreTable;

/// An optimal partition and its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub partition: FeaturePartition,
    #[serde(with = "crate::scoring::score_value")]
    pub score: f64,
}

/// `true` when `(a_score, a_blocks, a)` beats `(b_score, b_blocks, b)`.
fn better(a_score: f64, a_blocks: usize, b_score: f64, b_blocks: usize, lex: Ordering) -> bool {
    match a_score.partial_cmp(&b_score).unwrap_or(Ordering::Equal) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a_blocks.cmp(&b_blocks) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => lex == Ordering::Less,
        },
    }
}

/// Right-to-left sum of block scores.
fn right_fold(scores: &[f64]) -> f64 {
    scores.iter().rev().fold(0.0, |acc, &s| s + acc)
}

fn singleton_solution(table: &ScoreTable) -> Result<Solution> {
    let partition = FeaturePartition::singletons(table.d())?;
    let score = table.partition_score(partition.blocks().iter())?;
    Ok(Solution { partition, score })
}

/// Block score lookup that reports missing entries as structural errors.
fn lookup(table: &ScoreTable, mask: u32) -> Result<f64> {
    let s = FeatureSubset::from_mask(mask, table.d())?;
    table
        .get(&s)
        .ok_or_else(|| IsdeError::structural(format!("score table has no entry for {s}")))
}

/// Calls `f` with every subset of `bits` of size at most `max`, each OR-ed
/// with `base`.
fn for_each_combination(bits: &[u32], max: usize, base: u32, f: &mut impl FnMut(u32)) {
    f(base);
    if max == 0 {
        return;
    }
    for (i, &b) in bits.iter().enumerate() {
        for_each_combination(&bits[i + 1..], max - 1, base | b, f);
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    score: f64,
    blocks: u8,
    first: u32,
}

/// Best first block and completion value per reachable feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpTrace {
    pub d: usize,
    /// Keyed by the remaining-feature mask.
    pub states: BTreeMap<u32, DpState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpState {
    #[serde(with = "crate::scoring::score_value")]
    pub best_score: f64,
    /// 1-based features of the best first block.
    pub first_block: Vec<usize>,
}

struct Dp<'a> {
    table: &'a ScoreTable,
    k: usize,
    scores: Vec<f64>,
    memo: Vec<Option<Cell>>,
}

impl Dp<'_> {
    fn best(&mut self, u: u32) -> Result<Cell> {
        if u == 0 {
            return Ok(Cell { score: 0.0, blocks: 0, first: 0 });
        }
        if let Some(c) = self.memo[u as usize] {
            return Ok(c);
        }
        let low = u & u.wrapping_neg();
        let rest: Vec<u32> = BitIter(u ^ low).map(|i| 1u32 << i).collect();
        let mut candidates = Vec::new();
        for_each_combination(&rest, self.k - 1, low, &mut |s| candidates.push(s));
        let mut best: Option<Cell> = None;
        for s in candidates {
            let ts = self.scores[s as usize];
            if ts.is_nan() {
                return Err(IsdeError::structural(format!(
                    "score table has no entry for {}",
                    FeatureSubset::from_mask(s, self.table.d())?
                )));
            }
            let tail = self.best(u ^ s)?;
            let cand = Cell { score: ts + tail.score, blocks: tail.blocks + 1, first: s };
            let wins = match &best {
                None => true,
                Some(b) => better(
                    cand.score,
                    cand.blocks as usize,
                    b.score,
                    b.blocks as usize,
                    lex_cmp_masks(cand.first, b.first),
                ),
            };
            if wins {
                best = Some(cand);
            }
        }
        let best = best.expect("a nonempty set always admits its lowest singleton");
        self.memo[u as usize] = Some(best);
        Ok(best)
    }
}

fn dense_scores(table: &ScoreTable) -> Vec<f64> {
    let mut scores = vec![f64::NAN; 1usize << table.d()];
    for (s, v) in table.iter() {
        scores[s.mask() as usize] = v;
    }
    scores
}

fn check_dims(table: &ScoreTable, cap: usize) -> Result<()> {
    if table.d() > cap {
        return Err(IsdeError::param(format!(
            "partition solver supports d <= {cap}, got {}",
            table.d()
        )));
    }
    Ok(())
}

/// Dynamic program over feature sets: the best partition of `U` picks a block
/// containing the lowest feature of `U` and recurses on the remainder.
/// Requires `d <= 20`.
pub fn solve_dp(table: &ScoreTable) -> Result<Solution> {
    solve_dp_traced(table).map(|(s, _)| s)
}

/// [`solve_dp`] plus the memo table of every visited state.
pub fn solve_dp_traced(table: &ScoreTable) -> Result<(Solution, DpTrace)> {
    check_dims(table, MAX_PARTITION_DIM)?;
    let d = table.d();
    let mut dp = Dp {
        table,
        k: table.k(),
        scores: dense_scores(table),
        memo: vec![None; 1usize << d],
    };
    let full = full_mask(d);
    let top = dp.best(full)?;
    let mut states = BTreeMap::new();
    for (u, c) in dp.memo.iter().enumerate() {
        if let Some(c) = c {
            states.insert(
                u as u32,
                DpState {
                    best_score: c.score,
                    first_block: BitIter(c.first).map(|i| i + 1).collect(),
                },
            );
        }
    }
    let trace = DpTrace { d, states };
    if top.score == f64::NEG_INFINITY {
        return Ok((singleton_solution(table)?, trace));
    }
    let mut blocks = Vec::new();
    let mut u = full;
    while u != 0 {
        let c = dp.memo[u as usize].expect("visited");
        blocks.push(FeatureSubset::from_mask(c.first, d)?);
        u ^= c.first;
    }
    let partition = FeaturePartition::new(blocks, d)?;
    Ok((Solution { partition, score: top.score }, trace))
}

struct Search {
    d: usize,
    /// Blocks whose lowest feature is `j`, best score first.
    by_lowest: Vec<Vec<(u32, f64)>>,
    /// `max_{S∋j} ℓ(S)/|S|`.
    amortized: Vec<f64>,
    stack: Vec<(u32, f64)>,
    incumbent: Option<(f64, Vec<u32>)>,
}

impl Search {
    fn bound(&self, uncovered: u32) -> f64 {
        BitIter(uncovered).map(|j| self.amortized[j]).sum()
    }

    fn visit(&mut self, covered: u32, partial: f64) {
        let full = full_mask(self.d);
        if covered == full {
            self.leaf();
            return;
        }
        let uncovered = full ^ covered;
        let optimistic = partial + self.bound(uncovered);
        if optimistic == f64::NEG_INFINITY {
            return;
        }
        if let Some((inc, _)) = &self.incumbent {
            if optimistic < inc - 1e-9 * (1.0 + inc.abs()) {
                return;
            }
        }
        let j = uncovered.trailing_zeros() as usize;
        for idx in 0..self.by_lowest[j].len() {
            let (s, ts) = self.by_lowest[j][idx];
            if s & covered != 0 {
                continue;
            }
            self.stack.push((s, ts));
            self.visit(covered | s, partial + ts);
            self.stack.pop();
        }
    }

    fn leaf(&mut self) {
        let scores: Vec<f64> = self.stack.iter().map(|&(_, t)| t).collect();
        let score = right_fold(&scores);
        if score == f64::NEG_INFINITY {
            return;
        }
        let masks: Vec<u32> = self.stack.iter().map(|&(s, _)| s).collect();
        let wins = match &self.incumbent {
            None => true,
            Some((inc, inc_masks)) => better(
                score,
                masks.len(),
                *inc,
                inc_masks.len(),
                lex_cmp_block_lists(&masks, inc_masks),
            ),
        };
        if wins {
            self.incumbent = Some((score, masks));
        }
    }
}

fn lex_cmp_block_lists(a: &[u32], b: &[u32]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match lex_cmp_masks(*x, *y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Depth-first branch and bound. Each node extends the partial partition by
/// a block containing the lowest uncovered feature; children are tried in
/// decreasing score order. Requires `d <= 24`.
///
/// The bound on the best completion of an uncovered set `U` is
/// `Σ_{i∈U} a(i)` with `a(i) = max_{S∋i} ℓ(S)/|S|`. Any completion splits
/// `U` into blocks `B`, and `Σ_B ℓ(B) = Σ_B Σ_{i∈B} ℓ(B)/|B| ≤ Σ_{i∈U} a(i)`,
/// so the bound never underestimates and pruning keeps the optimum.
pub fn solve_branch_and_bound(table: &ScoreTable) -> Result<Solution> {
    check_dims(table, MAX_SUBSET_DIM)?;
    table.check_complete()?;
    let d = table.d();
    let mut by_lowest: Vec<Vec<(u32, f64)>> = vec![Vec::new(); d];
    let mut amortized = vec![f64::NEG_INFINITY; d];
    for (s, v) in table.iter() {
        by_lowest[s.lowest()].push((s.mask(), v));
        let share = v / s.len() as f64;
        for i in s.indices() {
            if share > amortized[i] {
                amortized[i] = share;
            }
        }
    }
    for list in &mut by_lowest {
        list.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.count_ones().cmp(&b.0.count_ones()))
                .then_with(|| lex_cmp_masks(a.0, b.0))
        });
    }
    let mut search = Search {
        d,
        by_lowest,
        amortized,
        stack: Vec::with_capacity(d),
        incumbent: None,
    };
    search.visit(0, 0.0);
    match search.incumbent {
        None => singleton_solution(table),
        Some((score, masks)) => {
            let blocks = masks
                .into_iter()
                .map(|m| FeatureSubset::from_mask(m, d))
                .collect::<Result<Vec<_>>>()?;
            Ok(Solution { partition: FeaturePartition::new(blocks, d)?, score })
        }
    }
}

/// Exhaustive reference solver over every partition (`d <= 12`).
pub fn solve_exhaustive(table: &ScoreTable) -> Result<Solution> {
    table.check_complete()?;
    let mut best: Option<Solution> = None;
    for p in crate::combinatorics::enumerate_partitions(table.d(), table.k())? {
        let scores: Vec<f64> = p
            .blocks()
            .iter()
            .map(|b| lookup(table, b.mask()))
            .collect::<Result<_>>()?;
        let score = right_fold(&scores);
        let wins = match &best {
            None => true,
            Some(b) => better(score, p.len(), b.score, b.partition.len(), p.lex_cmp(&b.partition)),
        };
        if wins {
            best = Some(Solution { partition: p, score });
        }
    }
    let best = best.expect("at least one partition exists");
    if best.score == f64::NEG_INFINITY {
        return singleton_solution(table);
    }
    Ok(best)
}
