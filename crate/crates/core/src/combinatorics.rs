//! Feature subsets, feature partitions, and their enumeration.
//!
//! Features are 0-based internally. Everything user-facing (JSON, CSV
//! headers, `Display`) uses 1-based indices.

use std::cmp::Ordering;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{IsdeError, Result};

/// Largest dimension accepted by subset enumeration.
pub const MAX_SUBSET_DIM: usize = 24;
/// Largest dimension accepted by partition counting and the DP solver.
pub const MAX_PARTITION_DIM: usize = 20;

/// A nonempty subset of `{0, .., d-1}` stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureSubset {
    mask: u32,
    d: u8,
}

impl FeatureSubset {
    pub fn from_mask(mask: u32, d: usize) -> Result<Self> {
        if d == 0 || d > MAX_SUBSET_DIM {
            return Err(IsdeError::param(format!(
                "dimension must be in 1..={MAX_SUBSET_DIM}, got {d}"
            )));
        }
        if mask == 0 {
            return Err(IsdeError::structural("feature subset must be nonempty"));
        }
        if mask >> d != 0 {
            return Err(IsdeError::structural(format!(
                "mask {mask:#b} references a feature beyond dimension {d}"
            )));
        }
        Ok(FeatureSubset { mask, d: d as u8 })
    }

    /// Builds a subset from 0-based feature indices.
    pub fn from_indices(indices: &[usize], d: usize) -> Result<Self> {
        let mut mask = 0u32;
        for &i in indices {
            if i >= d {
                return Err(IsdeError::structural(format!(
                    "feature index {} out of range for dimension {d}",
                    i + 1
                )));
            }
            mask |= 1 << i;
        }
        Self::from_mask(mask, d)
    }

    /// Builds a subset from 1-based feature indices.
    pub fn from_one_based(indices: &[usize], d: usize) -> Result<Self> {
        if indices.contains(&0) {
            return Err(IsdeError::structural("feature indices are 1-based"));
        }
        let zero: Vec<usize> = indices.iter().map(|i| i - 1).collect();
        Self::from_indices(&zero, d)
    }

    pub fn full(d: usize) -> Result<Self> {
        if d == 0 || d > MAX_SUBSET_DIM {
            return Err(IsdeError::param(format!("dimension must be in 1..={MAX_SUBSET_DIM}")));
        }
        Self::from_mask(full_mask(d), d)
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn dim(&self) -> usize {
        self.d as usize
    }

    /// `|S|`.
    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, feature: usize) -> bool {
        feature < 32 && self.mask & (1 << feature) != 0
    }

    pub fn lowest(&self) -> usize {
        self.mask.trailing_zeros() as usize
    }

    /// 0-based feature indices in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = usize> {
        BitIter(self.mask)
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices().map(|i| i + 1).collect()
    }

    pub fn is_disjoint(&self, other: &FeatureSubset) -> bool {
        self.mask & other.mask == 0
    }

    /// Copies the coordinates of `row` selected by this subset into `out`.
    pub fn project_into(&self, row: &[f64], out: &mut [f64]) {
        for (slot, i) in out.iter_mut().zip(self.indices()) {
            *slot = row[i];
        }
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.indices().map(|i| row[i]).collect()
    }

    /// Key used in JSON maps: 1-based indices joined by commas, e.g. `"1,3"`.
    pub fn key(&self) -> String {
        self.one_based()
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_key(key: &str, d: usize) -> Result<Self> {
        let idx = key
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| IsdeError::structural(format!("bad subset key '{key}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_one_based(&idx, d)
    }
}

impl fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.key())
    }
}

pub(crate) fn full_mask(d: usize) -> u32 {
    if d >= 32 {
        u32::MAX
    } else {
        (1u32 << d) - 1
    }
}

/// Ascending set-bit positions of a mask.
#[derive(Clone, Copy)]
pub(crate) struct BitIter(pub u32);

impl Iterator for BitIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            None
        } else {
            let i = self.0.trailing_zeros() as usize;
            self.0 &= self.0 - 1;
            Some(i)
        }
    }
}

/// Lexicographic comparison of two masks read as ascending index lists.
pub(crate) fn lex_cmp_masks(a: u32, b: u32) -> Ordering {
    BitIter(a).cmp(BitIter(b))
}

/// Disjoint blocks covering `{0, .., d-1}`, sorted by their lowest feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeaturePartition {
    blocks: Vec<FeatureSubset>,
    d: usize,
}

impl FeaturePartition {
    /// Validates disjointness and cover, then sorts the blocks into
    /// canonical order.
    pub fn new(blocks: Vec<FeatureSubset>, d: usize) -> Result<Self> {
        canonicalize(FeaturePartition { blocks, d })
    }

    pub fn singletons(d: usize) -> Result<Self> {
        let blocks = (0..d)
            .map(|i| FeatureSubset::from_mask(1 << i, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks, d)
    }

    /// Partition into consecutive runs of the given sizes.
    pub fn consecutive(sizes: &[usize]) -> Result<Self> {
        let d: usize = sizes.iter().sum();
        let mut start = 0;
        let mut blocks = Vec::with_capacity(sizes.len());
        for &s in sizes {
            if s == 0 {
                return Err(IsdeError::structural("block sizes must be positive"));
            }
            let idx: Vec<usize> = (start..start + s).collect();
            blocks.push(FeatureSubset::from_indices(&idx, d)?);
            start += s;
        }
        Self::new(blocks, d)
    }

    /// Builds a partition from 1-based index lists such as `[[1, 2], [3]]`.
    pub fn from_one_based(lists: &[Vec<usize>]) -> Result<Self> {
        let d: usize = lists.iter().map(Vec::len).sum();
        let blocks = lists
            .iter()
            .map(|l| FeatureSubset::from_one_based(l, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks, d)
    }

    pub fn blocks(&self) -> &[FeatureSubset] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(FeatureSubset::len).max().unwrap_or(0)
    }

    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(FeatureSubset::one_based).collect()
    }

    /// Canonical-form check: disjoint, covering, sorted by lowest feature.
    pub fn is_canonical(&self) -> bool {
        let mut seen = 0u32;
        for b in &self.blocks {
            if b.dim() != self.d || b.mask() & seen != 0 {
                return false;
            }
            seen |= b.mask();
        }
        seen == full_mask(self.d)
            && self.blocks.windows(2).all(|w| w[0].lowest() < w[1].lowest())
    }

    /// Lexicographic order on canonical block lists.
    pub fn lex_cmp(&self, other: &FeaturePartition) -> Ordering {
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            match lex_cmp_masks(a.mask(), b.mask()) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        self.blocks.len().cmp(&other.blocks.len())
    }
}

impl fmt::Display for FeaturePartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .blocks
            .iter()
            .map(|b| format!("[{}]", b.key()))
            .collect();
        write!(f, "[{}]", parts.join(","))
    }
}

impl Serialize for FeaturePartition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeaturePartition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let lists = Vec::<Vec<usize>>::deserialize(d)?;
        FeaturePartition::from_one_based(&lists).map_err(D::Error::custom)
    }
}

/// Checks that the blocks are disjoint and cover `{0, .., d-1}`, and sorts
/// them by their lowest feature. Idempotent.
pub fn canonicalize(partition: FeaturePartition) -> Result<FeaturePartition> {
    let FeaturePartition { mut blocks, d } = partition;
    let mut seen = 0u32;
    for b in &blocks {
        if b.dim() != d {
            return Err(IsdeError::structural(format!(
                "block {b} has dimension {} but partition has {d}",
                b.dim()
            )));
        }
        if b.mask() & seen != 0 {
            return Err(IsdeError::structural(format!("block {b} overlaps another block")));
        }
        seen |= b.mask();
    }
    if seen != full_mask(d) {
        return Err(IsdeError::structural(format!(
            "blocks do not cover all {d} features"
        )));
    }
    blocks.sort_by_key(FeatureSubset::lowest);
    Ok(FeaturePartition { blocks, d })
}

fn check_dims(d: usize, k: usize, cap: usize) -> Result<()> {
    if d == 0 || d > cap {
        return Err(IsdeError::param(format!("d must be in 1..={cap}, got {d}")));
    }
    if k == 0 || k > d {
        return Err(IsdeError::param(format!("k must be in 1..=d ({d}), got {k}")));
    }
    Ok(())
}

/// All nonempty subsets of size at most `k`, in ascending mask order.
pub fn enumerate_subsets(d: usize, k: usize) -> Result<Vec<FeatureSubset>> {
    check_dims(d, k, MAX_SUBSET_DIM)?;
    let mut out = Vec::with_capacity(count_subsets(d, k)? as usize);
    for mask in 1..=full_mask(d) {
        if mask.count_ones() as usize <= k {
            out.push(FeatureSubset { mask, d: d as u8 });
        }
    }
    Ok(out)
}

/// `S_d^k = Σ_{j=1..k} C(d, j)`.
pub fn count_subsets(d: usize, k: usize) -> Result<u64> {
    check_dims(d, k, MAX_SUBSET_DIM)?;
    Ok((1..=k).map(|j| binomial(d as u64, j as u64)).sum())
}

pub fn binomial(n: u64, r: u64) -> u64 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u64 = 1;
    for i in 0..r {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// `P_d^k`, the number of partitions of `d` features into blocks of size at
/// most `k`. `d = 0` counts the empty partition and returns 1.
pub fn count_partitions(d: usize, k: usize) -> Result<u64> {
    if d == 0 {
        return Ok(1);
    }
    check_dims(d, k, MAX_PARTITION_DIM)?;
    let mut p = vec![0u64; d + 1];
    p[0] = 1;
    for n in 1..=d {
        p[n] = (1..=k.min(n))
            .map(|j| binomial((n - 1) as u64, (j - 1) as u64) * p[n - j])
            .sum();
    }
    Ok(p[d])
}

/// Every partition in `Part_d^k`, canonical, generated from restricted
/// growth strings filtered by block size.
pub fn enumerate_partitions(d: usize, k: usize) -> Result<Vec<FeaturePartition>> {
    check_dims(d, k, 12)?;
    let mut out = Vec::new();
    let mut labels = vec![0usize; d];
    let mut sizes = vec![0usize; d];
    fn rec(
        pos: usize,
        used: usize,
        d: usize,
        k: usize,
        labels: &mut [usize],
        sizes: &mut [usize],
        out: &mut Vec<FeaturePartition>,
    ) {
        if pos == d {
            let mut masks = vec![0u32; used];
            for (i, &l) in labels.iter().enumerate() {
                masks[l] |= 1 << i;
            }
            let blocks = masks
                .into_iter()
                .map(|m| FeatureSubset { mask: m, d: d as u8 })
                .collect();
            // restricted growth strings already list blocks by lowest element
            out.push(FeaturePartition { blocks, d });
            return;
        }
        for l in 0..=used.min(d - 1) {
            if sizes[l] == k {
                continue;
            }
            labels[pos] = l;
            sizes[l] += 1;
            let next_used = if l == used { used + 1 } else { used };
            rec(pos + 1, next_used, d, k, labels, sizes, out);
            sizes[l] -= 1;
        }
    }
    rec(0, 0, d, k, &mut labels, &mut sizes, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u64) -> u64 {
        (1..=n).product()
    }

    #[test]
    fn subset_counts() {
        assert_eq!(enumerate_subsets(4, 2).unwrap().len(), 10);
        assert_eq!(enumerate_subsets(3, 3).unwrap().len(), 7);
        let one = enumerate_subsets(1, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].one_based(), vec![1]);
    }

    #[test]
    fn subset_counts_match_factorial_formula() {
        for d in 1..=12u64 {
            for k in 1..=d {
                let expected: u64 = (1..=k)
                    .map(|j| factorial(d) / (factorial(j) * factorial(d - j)))
                    .sum();
                let subsets = enumerate_subsets(d as usize, k as usize).unwrap();
                assert_eq!(subsets.len() as u64, expected);
                assert!(subsets.windows(2).all(|w| w[0].mask() < w[1].mask()));
                assert!(subsets.iter().all(|s| s.len() <= k as usize));
            }
        }
    }

    #[test]
    fn subset_parameter_errors() {
        assert!(enumerate_subsets(4, 0).is_err());
        assert!(enumerate_subsets(4, 5).is_err());
        assert!(enumerate_subsets(25, 1).is_err());
        assert!(enumerate_subsets(24, 1).is_ok());
    }

    #[test]
    fn partition_counts() {
        assert_eq!(count_partitions(4, 2).unwrap(), 10);
        assert_eq!(count_partitions(3, 3).unwrap(), 5);
        for n in 1..=10 {
            assert_eq!(count_partitions(n, 1).unwrap(), 1);
        }
        let bell = [1u64, 1, 2, 5, 15, 52, 203];
        for (d, &b) in bell.iter().enumerate() {
            assert_eq!(count_partitions(d, d).unwrap(), b);
        }
        assert!(count_partitions(21, 2).is_err());
        assert!(count_partitions(5, 6).is_err());
        assert_eq!(count_partitions(20, 20).unwrap(), 51_724_158_235_372);
    }

    #[test]
    fn enumeration_matches_counts() {
        for d in 1..=8 {
            for k in 1..=d {
                let parts = enumerate_partitions(d, k).unwrap();
                assert_eq!(parts.len() as u64, count_partitions(d, k).unwrap());
                for p in &parts {
                    assert!(p.is_canonical());
                    assert!(p.max_block_size() <= k);
                }
            }
        }
    }

    #[test]
    fn canonicalize_examples() {
        let d = 3;
        let s = |v: &[usize]| FeatureSubset::from_one_based(v, d).unwrap();
        let p = FeaturePartition::new(vec![s(&[3]), s(&[1, 2])], d).unwrap();
        assert_eq!(p.to_one_based(), vec![vec![1, 2], vec![3]]);
        let q = FeaturePartition::new(vec![s(&[1]), s(&[2]), s(&[3])], d).unwrap();
        assert_eq!(q.to_one_based(), vec![vec![1], vec![2], vec![3]]);
        let s4 = |v: &[usize]| FeatureSubset::from_one_based(v, 4).unwrap();
        let r = FeaturePartition::new(vec![s4(&[2, 4]), s4(&[1, 3])], 4).unwrap();
        assert_eq!(r.to_one_based(), vec![vec![1, 3], vec![2, 4]]);
        assert_eq!(canonicalize(r.clone()).unwrap(), r);
    }

    #[test]
    fn canonicalize_errors() {
        let s = |v: &[usize]| FeatureSubset::from_one_based(v, 3).unwrap();
        assert!(FeaturePartition::new(vec![s(&[1, 2]), s(&[2, 3])], 3).is_err());
        assert!(FeaturePartition::new(vec![s(&[1, 2])], 3).is_err());
    }

    #[test]
    fn json_shape() {
        let p = FeaturePartition::from_one_based(&[vec![3], vec![1, 2]]).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[[1,2],[3]]");
        let back: FeaturePartition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<FeaturePartition>("[[1,2],[2]]").is_err());
    }

    #[test]
    fn subset_keys() {
        let s = FeatureSubset::from_one_based(&[1, 3], 4).unwrap();
        assert_eq!(s.key(), "1,3");
        assert_eq!(FeatureSubset::parse_key("1,3", 4).unwrap(), s);
        assert!(FeatureSubset::parse_key("0,3", 4).is_err());
        assert!(FeatureSubset::from_mask(0, 3).is_err());
        assert!(FeatureSubset::from_mask(0b1000, 3).is_err());
    }

    #[test]
    fn lexicographic_block_order() {
        assert_eq!(lex_cmp_masks(0b011, 0b101), Ordering::Less);
        assert_eq!(lex_cmp_masks(0b001, 0b011), Ordering::Less);
        assert_eq!(lex_cmp_masks(0b110, 0b011), Ordering::Greater);
    }
}
