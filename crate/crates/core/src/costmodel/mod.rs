//! Closed-form multiplication and memory counts for dense, TTM,
//! right-to-left TT and bi-directional TT layers, plus sweeps and kernel
//! schedules.
//!
//! Memory counts are in elements. Intermediates are counted as persistent
//! from production until backward, so the activation figure is the total of
//! every stored intermediate; inputs, outputs and weights are excluded.

mod schedule;

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use schedule::{schedule_fused_bp, schedule_qkv, schedule_qkv_with, Kernel, ScheduleTrace, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub out_modes: Vec<usize>,
    pub in_modes: Vec<usize>,
    /// `r_0,…,r_{2d}` with unit boundaries.
    pub ranks: Vec<usize>,
    /// Workload columns (batch × sequence length).
    pub k: usize,
}

impl LayerConfig {
    pub fn new(out_modes: Vec<usize>, in_modes: Vec<usize>, ranks: Vec<usize>, k: usize) -> Result<Self> {
        let cfg = LayerConfig {
            out_modes,
            in_modes,
            ranks,
            k,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every interior rank set to `r`.
    pub fn uniform(out_modes: Vec<usize>, in_modes: Vec<usize>, r: usize, k: usize) -> Result<Self> {
        let d = out_modes.len();
        let mut ranks = vec![r; 2 * d + 1];
        ranks[0] = 1;
        ranks[2 * d] = 1;
        Self::new(out_modes, in_modes, ranks, k)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.out_modes.len();
        if d == 0 || self.in_modes.len() != d {
            return Err(Error::InvalidArgument(format!(
                "layer config needs equal, nonzero mode counts (got {} and {})",
                d,
                self.in_modes.len()
            )));
        }
        if self.ranks.len() != 2 * d + 1 || self.ranks[0] != 1 || self.ranks[2 * d] != 1 {
            return Err(Error::InvalidArgument(format!(
                "rank vector {:?} must have {} entries with unit boundaries",
                self.ranks,
                2 * d + 1
            )));
        }
        if self.k == 0 || self.ranks.contains(&0) || self.out_modes.iter().chain(&self.in_modes).any(|&m| m == 0) {
            return Err(Error::InvalidArgument("modes, ranks and K must be positive".into()));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.out_modes.len()
    }

    pub fn rows(&self) -> u64 {
        self.out_modes.iter().map(|&m| m as u64).product()
    }

    pub fn cols(&self) -> u64 {
        self.in_modes.iter().map(|&m| m as u64).product()
    }

    pub fn with_k(&self, k: usize) -> Self {
        LayerConfig { k, ..self.clone() }
    }

    /// Same modes and K with every interior rank set to `r`.
    pub fn with_rank(&self, r: usize) -> Self {
        let mut ranks = vec![r; self.ranks.len()];
        ranks[0] = 1;
        *ranks.last_mut().expect("nonempty") = 1;
        LayerConfig { ranks, ..self.clone() }
    }

    /// `r_k` as u64, indexed as in the closed forms.
    fn r(&self, k: usize) -> u64 {
        self.ranks[k] as u64
    }

    /// `Π_{i=a}^{b} m_i` (1-based, inclusive; empty product is 1).
    fn pm(&self, a: usize, b: usize) -> u64 {
        (a..=b).map(|i| self.out_modes[i - 1] as u64).product()
    }

    fn pn(&self, a: usize, b: usize) -> u64 {
        (a..=b).map(|i| self.in_modes[i - 1] as u64).product()
    }

    /// TTM rank vector of length d+1 derived from the TT ranks.
    pub fn ttm_ranks(&self) -> Vec<usize> {
        let d = self.d();
        let mut r = self.ranks[..d].to_vec();
        r.push(1);
        r
    }
}

pub fn mul_mm(cfg: &LayerConfig) -> u64 {
    cfg.k as u64 * cfg.rows() * cfg.cols()
}

/// Dense weights `M·N`; a dense layer stores no intermediates.
pub fn mem_mm(cfg: &LayerConfig) -> u64 {
    cfg.rows() * cfg.cols()
}

pub fn tt_params(cfg: &LayerConfig) -> u64 {
    let modes: Vec<usize> = cfg.out_modes.iter().chain(&cfg.in_modes).copied().collect();
    modes
        .iter()
        .enumerate()
        .map(|(k, &s)| cfg.r(k) * s as u64 * cfg.r(k + 1))
        .sum()
}

pub fn ttm_params(cfg: &LayerConfig) -> u64 {
    let r = cfg.ttm_ranks();
    (0..cfg.d())
        .map(|k| (r[k] * cfg.out_modes[k] * cfg.in_modes[k] * r[k + 1]) as u64)
        .sum()
}

pub fn mul_tt_rtl(cfg: &LayerConfig) -> u64 {
    let d = cfg.d();
    let k = cfg.k as u64;
    (0..d)
        .map(|s| {
            cfg.r(2 * d - s - 1) * cfg.r(2 * d - s) * cfg.pn(1, d - s)
                + cfg.r(d - s - 1) * cfg.r(d - s) * cfg.pm(d - s, d)
        })
        .sum::<u64>()
        * k
}

pub fn mem_tt_rtl(cfg: &LayerConfig) -> u64 {
    let d = cfg.d();
    let k = cfg.k as u64;
    let sum: u64 = (0..d.saturating_sub(1))
        .map(|s| cfg.r(2 * d - s - 1) * cfg.pn(1, d - s - 1) + cfg.r(d - s - 1) * cfg.pm(d - s, d))
        .sum();
    k * cfg.r(d) + k * sum
}

/// The first sum is independent of K.
pub fn mul_btt(cfg: &LayerConfig) -> u64 {
    let d = cfg.d();
    let chains: u64 = (0..d.saturating_sub(1))
        .map(|s| {
            cfg.r(2 * d - s - 1) * cfg.r(2 * d - s - 2) * cfg.pn(d - s - 1, d)
                + cfg.r(s + 1) * cfg.r(s + 2) * cfg.pm(1, s + 2)
        })
        .sum();
    chains + cfg.k as u64 * cfg.r(d) * (cfg.rows() + cfg.cols())
}

/// Stored chain partials plus the `r_d × K` boundary product. The left
/// partial after step s has trailing rank `r_{s+2}`.
pub fn mem_btt(cfg: &LayerConfig) -> u64 {
    let d = cfg.d();
    let chains: u64 = (0..d.saturating_sub(1))
        .map(|s| cfg.r(2 * d - s - 2) * cfg.pn(d - s - 1, d) + cfg.r(s + 2) * cfg.pm(1, s + 2))
        .sum();
    chains + cfg.k as u64 * cfg.r(d)
}

pub fn mul_ttm(cfg: &LayerConfig) -> u64 {
    let d = cfg.d();
    let r = cfg.ttm_ranks();
    (0..d)
        .map(|s| (r[d - s - 1] * r[d - s]) as u64 * cfg.pn(1, d - s) * cfg.pm(d - s, d))
        .sum::<u64>()
        * cfg.k as u64
}

pub fn mem_ttm(cfg: &LayerConfig) -> u64 {
    let d = cfg.d();
    let r = cfg.ttm_ranks();
    (0..d.saturating_sub(1))
        .map(|s| r[d - s - 1] as u64 * cfg.pn(1, d - s - 1) * cfg.pm(d - s, d))
        .sum::<u64>()
        * cfg.k as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "MM")]
    Mm,
    #[serde(rename = "TTM")]
    Ttm,
    #[serde(rename = "TT_RTL")]
    TtRtl,
    #[serde(rename = "BTT")]
    Btt,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Mm, Scheme::Ttm, Scheme::TtRtl, Scheme::Btt];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mm => "MM",
            Scheme::Ttm => "TTM",
            Scheme::TtRtl => "TT_RTL",
            Scheme::Btt => "BTT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeCost {
    pub scheme: Scheme,
    pub muls: u64,
    pub weight_mem: u64,
    pub act_mem: u64,
}

impl SchemeCost {
    pub fn total_mem(&self) -> u64 {
        self.weight_mem + self.act_mem
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub config: LayerConfig,
    /// Factor applied to every multiplication count (1 for a forward pass,
    /// 3 for a rough training step).
    pub multiplier: u64,
    pub schemes: Vec<SchemeCost>,
}

pub fn compare_report(cfg: &LayerConfig, multiplier: u64) -> Result<CostReport> {
    cfg.validate()?;
    let schemes = Scheme::ALL
        .iter()
        .map(|&scheme| {
            let (muls, weight_mem, act_mem) = match scheme {
                Scheme::Mm => (mul_mm(cfg), mem_mm(cfg), 0),
                Scheme::Ttm => (mul_ttm(cfg), ttm_params(cfg), mem_ttm(cfg)),
                Scheme::TtRtl => (mul_tt_rtl(cfg), tt_params(cfg), mem_tt_rtl(cfg)),
                Scheme::Btt => (mul_btt(cfg), tt_params(cfg), mem_btt(cfg)),
            };
            SchemeCost {
                scheme,
                muls: muls * multiplier,
                weight_mem,
                act_mem,
            }
        })
        .collect();
    Ok(CostReport {
        config: cfg.clone(),
        multiplier,
        schemes,
    })
}

impl CostReport {
    pub fn get(&self, scheme: Scheme) -> &SchemeCost {
        self.schemes.iter().find(|s| s.scheme == scheme).expect("all schemes present")
    }

    /// `MM muls / scheme muls`.
    pub fn compute_ratio(&self, scheme: Scheme) -> f64 {
        self.get(Scheme::Mm).muls as f64 / self.get(scheme).muls as f64
    }

    /// `MM memory / scheme memory`, weights plus intermediates.
    pub fn memory_ratio(&self, scheme: Scheme) -> f64 {
        self.get(Scheme::Mm).total_mem() as f64 / self.get(scheme).total_mem() as f64
    }

    pub const CSV_HEADER: &'static str = "scheme,muls,weight_mem,act_mem,ratio_muls,ratio_mem";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.schemes {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6}",
                s.scheme.name(),
                s.muls,
                s.weight_mem,
                s.act_mem,
                self.compute_ratio(s.scheme),
                self.memory_ratio(s.scheme)
            )
            .expect("write to string");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    Rank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub report: CostReport,
}

pub fn sweep(cfg: &LayerConfig, axis: SweepAxis, values: &[usize], multiplier: u64) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .map(|&value| {
            let c = match axis {
                SweepAxis::K => cfg.with_k(value),
                SweepAxis::Rank => cfg.with_rank(value),
            };
            Ok(SweepPoint {
                value,
                report: compare_report(&c, multiplier)?,
            })
        })
        .collect()
}

pub fn sweep_csv(axis: SweepAxis, points: &[SweepPoint]) -> String {
    let name = match axis {
        SweepAxis::K => "k",
        SweepAxis::Rank => "rank",
    };
    let mut out = format!("{name},{}\n", CostReport::CSV_HEADER);
    for p in points {
        for line in p.report.to_csv().lines().skip(1) {
            writeln!(out, "{},{line}", p.value).expect("write to string");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text_cfg(k: usize) -> LayerConfig {
        LayerConfig::uniform(vec![8, 8, 12], vec![12, 8, 8], 12, k).unwrap()
    }

    fn table2_cfg(k: usize) -> LayerConfig {
        LayerConfig::uniform(vec![12, 8, 8], vec![8, 8, 12], 12, k).unwrap()
    }

    #[test]
    fn dense_counts() {
        let c = table2_cfg(32);
        assert_eq!(mul_mm(&c), 18_874_368);
        assert_eq!(mem_mm(&c), 589_824);
        assert_eq!(compare_report(&c, 3).unwrap().get(Scheme::Mm).muls, 56_623_104);
        let one = LayerConfig::uniform(vec![1], vec![1], 1, 1).unwrap();
        assert_eq!(mul_mm(&one), 1);
    }

    #[test]
    fn btt_text_example() {
        let c = text_cfg(32);
        // 2·(12·12·64) + 2·(12·12·768) + 32·12·1536
        assert_eq!(mul_btt(&c), 2 * 12 * 12 * 64 + 2 * 12 * 12 * 768 + 32 * 12 * 1536);
        assert_eq!(mul_btt(&c), 829_440);
        assert_eq!(mem_btt(&c), 20_352);
    }

    #[test]
    fn btt_k_term_only_doubles() {
        let a = text_cfg(32);
        let b = text_cfg(64);
        assert_eq!(mul_btt(&b) - mul_btt(&a), 32 * 12 * (768 + 768));
    }

    #[test]
    fn degenerate_chain() {
        for d in 1..4 {
            let c = LayerConfig::uniform(vec![1; d], vec![1; d], 1, 7).unwrap();
            assert_eq!(mul_tt_rtl(&c), 2 * d as u64 * 7);
        }
    }

    #[test]
    fn single_pair_forms() {
        let c = LayerConfig::new(vec![5], vec![7], vec![1, 3, 1], 4).unwrap();
        assert_eq!(mul_tt_rtl(&c), 4 * 3 * 7 + 4 * 3 * 5);
        assert_eq!(mem_tt_rtl(&c), 4 * 3);
        assert_eq!(mul_ttm(&c), 4 * 7 * 5);
        assert_eq!(mem_ttm(&c), 0);
    }

    #[test]
    fn ttm_two_core_hand_expansion() {
        // m = n = (a, b), ranks (1, r, 1)
        let (a, b, r, k) = (3u64, 4u64, 5u64, 2u64);
        let c = LayerConfig::uniform(vec![3, 4], vec![3, 4], 5, 2).unwrap();
        let step0 = r * (a * b) * b;
        let step1 = r * a * (a * b);
        assert_eq!(mul_ttm(&c), k * (step0 + step1));
        assert_eq!(mem_ttm(&c), k * r * a * b);
    }

    #[test]
    fn report_ratios_and_csv() {
        let r = compare_report(&table2_cfg(32), 1).unwrap();
        assert_eq!(r.compute_ratio(Scheme::Mm), 1.0);
        assert_eq!(r.get(Scheme::Btt).weight_mem, 4896);
        let csv = r.to_csv();
        assert!(csv.starts_with(CostReport::CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn rank_sweep_sets_interior_ranks() {
        let pts = sweep(&table2_cfg(32), SweepAxis::Rank, &[1, 2], 1).unwrap();
        assert_eq!(pts[1].report.config.ranks, vec![1, 2, 2, 2, 2, 2, 1]);
        assert_eq!(sweep_csv(SweepAxis::Rank, &pts).lines().count(), 9);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(LayerConfig::new(vec![2], vec![2], vec![2, 2, 1], 1).is_err());
        assert!(LayerConfig::new(vec![2], vec![2, 2], vec![1, 2, 1], 1).is_err());
        assert!(LayerConfig::uniform(vec![2], vec![2], 2, 0).is_err());
    }
}
