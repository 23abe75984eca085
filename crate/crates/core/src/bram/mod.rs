//! Packing of TT / TTM factor arrays into fixed-capacity memory blocks.
//!
//! Each array must serve `rank` parallel reads per cycle, which is met
//! either by partitioning it across `rank` blocks or by reshaping it into
//! `B_w·rank`-bit words. Arrays that are never read in the same stage can
//! additionally be concatenated along depth into one group to fill blocks.

mod inventory;

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inventory::{tt_arrays, ttm_arrays};

/// Largest instance solved by exact subset search; larger ones are grouped
/// greedily.
pub const EXACT_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    /// Bits per block.
    pub capacity: u64,
    /// Legal `(width, depth)` configurations; none exceeds `capacity`.
    pub configs: Vec<(u64, u64)>,
    pub ports: u32,
}

impl BlockSpec {
    /// 36 Kb block RAM with its seven aspect ratios.
    pub fn bram36() -> Self {
        BlockSpec {
            capacity: 36_864,
            configs: vec![(1, 32768), (2, 16384), (4, 8192), (9, 4096), (18, 2048), (36, 1024), (72, 512)],
            ports: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::InvalidArgument("block spec lists no configurations".into()));
        }
        // Widths below 9 have no parity bit, so they hold 32768 bits.
        for &(w, d) in &self.configs {
            if w == 0 || d == 0 || w * d > self.capacity {
                return Err(Error::InvalidArgument(format!(
                    "configuration {w}×{d} exceeds a {}-bit block",
                    self.capacity
                )));
            }
        }
        Ok(())
    }

    fn check(&self, w: u64, d: u64) -> Result<()> {
        if self.configs.contains(&(w, d)) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{w}×{d} is not a legal block configuration")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorArray {
    pub name: String,
    /// Element bit-width `B_w`.
    pub bits: u64,
    /// Parallel reads per cycle (the logical width in elements).
    pub rank: u64,
    /// Rows, i.e. elements / rank.
    pub depth: u64,
    /// Arrays sharing a key are read in the same stage and may not share a
    /// block group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub co_access: Option<String>,
}

impl FactorArray {
    pub fn new(name: impl Into<String>, bits: u64, rank: u64, depth: u64) -> Self {
        FactorArray {
            name: name.into(),
            bits,
            rank,
            depth,
            co_access: None,
        }
    }

    pub fn total_bits(&self) -> u64 {
        self.bits * self.rank * self.depth
    }

    fn conflicts(&self, other: &FactorArray) -> bool {
        matches!((&self.co_access, &other.co_access), (Some(a), Some(b)) if a == b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Partition,
    Reshape,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Partition => "partition",
            Strategy::Reshape => "reshape",
        }
    }

    fn width_blocks(self, arr: &FactorArray, w: u64) -> u64 {
        match self {
            Strategy::Partition => arr.rank * arr.bits.div_ceil(w),
            Strategy::Reshape => (arr.bits * arr.rank).div_ceil(w),
        }
    }
}

/// `(n_w, n_d)` with `n_w = r·⌈B_w/W⌉` and `n_d = ⌈depth/D⌉`.
pub fn blocks_partitioning(arr: &FactorArray, spec: &BlockSpec, w: u64, d: u64) -> Result<(u64, u64)> {
    spec.check(w, d)?;
    Ok((Strategy::Partition.width_blocks(arr, w), arr.depth.div_ceil(d)))
}

/// `(n_w, n_d)` with `n_w = ⌈B_w·r/W⌉` and `n_d = ⌈depth/D⌉`.
pub fn blocks_reshaping(arr: &FactorArray, spec: &BlockSpec, w: u64, d: u64) -> Result<(u64, u64)> {
    spec.check(w, d)?;
    Ok((Strategy::Reshape.width_blocks(arr, w), arr.depth.div_ceil(d)))
}

/// `(n_w, n_d)` of a group concatenated along depth: the widest member sets
/// `n_w`, and `n_d = ⌈Σ depth / D⌉`.
fn group_dims(members: &[&FactorArray], strategy: Strategy, w: u64, d: u64) -> (u64, u64) {
    let nw = members.iter().map(|a| strategy.width_blocks(a, w)).max().unwrap_or(0);
    let depth: u64 = members.iter().map(|a| a.depth).sum();
    (nw, depth.div_ceil(d))
}

fn group_cost(members: &[&FactorArray], strategy: Strategy, w: u64, d: u64) -> u64 {
    let (nw, nd) = group_dims(members, strategy, w, d);
    nw * nd
}

/// Blocks when `arrays` are grouped `g` at a time in the given order, the
/// last group taking the remainder.
pub fn blocks_grouped(arrays: &[FactorArray], spec: &BlockSpec, strategy: Strategy, w: u64, d: u64, g: usize) -> Result<u64> {
    spec.check(w, d)?;
    if g == 0 {
        return Err(Error::InvalidArgument("group size must be at least 1".into()));
    }
    Ok(arrays
        .chunks(g)
        .map(|c| group_cost(&c.iter().collect::<Vec<_>>(), strategy, w, d))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedGroup {
    pub members: Vec<String>,
    pub n_w: u64,
    pub n_d: u64,
    pub blocks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BramPlan {
    pub strategy: Strategy,
    pub width: u64,
    pub depth: u64,
    /// Largest group size allowed when the plan was chosen.
    pub group_size: usize,
    pub groups: Vec<PlacedGroup>,
    pub total_blocks: u64,
    pub min_blocks: u64,
    pub efficiency: f64,
}

impl BramPlan {
    pub const CSV_HEADER: &'static str = "strategy,W,D,g,N_total,N_min,eta";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6}",
            self.strategy.name(),
            self.width,
            self.depth,
            self.group_size,
            self.total_blocks,
            self.min_blocks,
            self.efficiency
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        writeln!(s, "{}", self.csv_row()).expect("write to string");
        s
    }
}

/// `⌈total bits / C⌉`.
pub fn min_blocks(arrays: &[FactorArray], spec: &BlockSpec) -> u64 {
    let bits: u64 = arrays.iter().map(FactorArray::total_bits).sum();
    bits.div_ceil(spec.capacity).max(1)
}

/// Minimum-cost partition of `arrays` into conflict-free groups of at most
/// `g` members, as lists of indices.
fn best_grouping(arrays: &[FactorArray], strategy: Strategy, w: u64, d: u64, g: usize) -> Vec<Vec<usize>> {
    if arrays.len() <= EXACT_LIMIT {
        exact_grouping(arrays, strategy, w, d, g)
    } else {
        greedy_grouping(arrays, strategy, w, d, g)
    }
}

fn exact_grouping(arrays: &[FactorArray], strategy: Strategy, w: u64, d: u64, g: usize) -> Vec<Vec<usize>> {
    let n = arrays.len();
    let full = (1usize << n) - 1;
    // cost of every conflict-free subset of size ≤ g (None when illegal)
    let subset_cost: Vec<Option<u64>> = (0..=full)
        .map(|mask| {
            let members: Vec<&FactorArray> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &arrays[i]).collect();
            if members.is_empty() || members.len() > g {
                return None;
            }
            for (i, a) in members.iter().enumerate() {
                if members[i + 1..].iter().any(|b| a.conflicts(b)) {
                    return None;
                }
            }
            Some(group_cost(&members, strategy, w, d))
        })
        .collect();
    let mut best = vec![u64::MAX; full + 1];
    let mut choice = vec![0usize; full + 1];
    best[0] = 0;
    for mask in 1..=full {
        let low = mask & mask.wrapping_neg();
        let rest = mask ^ low;
        // enumerate groups containing the lowest member
        let mut sub = rest;
        loop {
            let grp = sub | low;
            if let Some(c) = subset_cost[grp] {
                let prev = best[mask ^ grp];
                if prev != u64::MAX && prev + c < best[mask] {
                    best[mask] = prev + c;
                    choice[mask] = grp;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    let mut groups = Vec::new();
    let mut mask = full;
    while mask != 0 {
        let grp = choice[mask];
        groups.push((0..n).filter(|i| grp >> i & 1 == 1).collect());
        mask ^= grp;
    }
    groups
}

fn greedy_grouping(arrays: &[FactorArray], strategy: Strategy, w: u64, d: u64, g: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..arrays.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&arrays[a], &arrays[b]);
        strategy
            .width_blocks(y, w)
            .cmp(&strategy.width_blocks(x, w))
            .then(y.depth.cmp(&x.depth))
            .then(x.name.cmp(&y.name))
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let alone = group_cost(&[&arrays[i]], strategy, w, d);
        let mut pick: Option<(u64, usize)> = None;
        for (gi, grp) in groups.iter().enumerate() {
            if grp.len() >= g || grp.iter().any(|&j| arrays[j].conflicts(&arrays[i])) {
                continue;
            }
            let mut members: Vec<&FactorArray> = grp.iter().map(|&j| &arrays[j]).collect();
            let before = group_cost(&members, strategy, w, d);
            members.push(&arrays[i]);
            let inc = group_cost(&members, strategy, w, d) - before;
            if inc <= alone && pick.is_none_or(|(best, _)| inc < best) {
                pick = Some((inc, gi));
            }
        }
        match pick {
            Some((_, gi)) => groups[gi].push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

fn place(arrays: &[FactorArray], groups: &[Vec<usize>], strategy: Strategy, w: u64, d: u64) -> Vec<PlacedGroup> {
    groups
        .iter()
        .map(|grp| {
            let members: Vec<&FactorArray> = grp.iter().map(|&i| &arrays[i]).collect();
            let (n_w, n_d) = group_dims(&members, strategy, w, d);
            PlacedGroup {
                members: members.iter().map(|a| a.name.clone()).collect(),
                n_w,
                n_d,
                blocks: n_w * n_d,
            }
        })
        .collect()
}

/// Best plan for one fixed strategy and group-size bound, searching every
/// legal configuration.
pub fn plan_with(arrays: &[FactorArray], spec: &BlockSpec, strategy: Strategy, g: usize) -> Result<BramPlan> {
    search(arrays, spec, &[strategy], g..=g)
}

/// Searches every configuration, both strategies, and group sizes `1..=g_max`.
///
/// Ties prefer fewer blocks, then smaller g, then wider words, then
/// reshaping over partitioning.
pub fn optimize(arrays: &[FactorArray], spec: &BlockSpec, g_max: usize) -> Result<BramPlan> {
    search(arrays, spec, &[Strategy::Reshape, Strategy::Partition], 1..=g_max.max(1))
}

fn search(
    arrays: &[FactorArray],
    spec: &BlockSpec,
    strategies: &[Strategy],
    gs: std::ops::RangeInclusive<usize>,
) -> Result<BramPlan> {
    spec.validate()?;
    if arrays.is_empty() {
        return Err(Error::InvalidArgument("no factor arrays to place".into()));
    }
    if let Some(a) = arrays.iter().find(|a| a.bits == 0 || a.rank == 0 || a.depth == 0) {
        return Err(Error::InvalidArgument(format!("array {} has a zero dimension", a.name)));
    }
    let mut configs = spec.configs.clone();
    configs.sort_by_key(|c| std::cmp::Reverse(c.0));
    // (blocks, g, W, D, strategy, groups)
    type Candidate = (u64, usize, u64, u64, Strategy, Vec<Vec<usize>>);
    let mut best: Option<Candidate> = None;
    for g in gs {
        for &(w, d) in &configs {
            for &s in strategies {
                let groups = best_grouping(arrays, s, w, d, g);
                let total: u64 = groups
                    .iter()
                    .map(|grp| group_cost(&grp.iter().map(|&i| &arrays[i]).collect::<Vec<_>>(), s, w, d))
                    .sum();
                if best.as_ref().is_none_or(|b| total < b.0) {
                    best = Some((total, g, w, d, s, groups));
                }
            }
        }
    }
    let (total, g, w, d, s, groups) = best.expect("at least one candidate");
    let n_min = min_blocks(arrays, spec);
    Ok(BramPlan {
        strategy: s,
        width: w,
        depth: d,
        group_size: g,
        groups: place(arrays, &groups, s, w, d),
        total_blocks: total,
        min_blocks: n_min,
        efficiency: n_min as f64 / total as f64,
    })
}

pub fn read_manifest(json: &str) -> Result<Vec<FactorArray>> {
    Ok(serde_json::from_str(json)?)
}

pub fn write_manifest(arrays: &[FactorArray]) -> Result<String> {
    Ok(serde_json::to_string_pretty(arrays)?)
}
