//! Step-level kernel schedules for fused QKV forward and fused core
//! gradients. One kernel invocation occupies one abstract time step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LayerConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kernel {
    #[serde(rename = "MUL0")]
    Mul0,
    #[serde(rename = "MUL1")]
    Mul1,
    #[serde(rename = "MUL2")]
    Mul2,
    #[serde(rename = "MUL3")]
    Mul3,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub label: String,
    pub kernel: Kernel,
    pub time: usize,
    /// Elements produced; live from `time` until the last consumer's step.
    pub output_elems: u64,
    pub deps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub tasks: Vec<Task>,
    /// Kernel instances needed: most tasks of one kernel in a single step.
    pub instances: BTreeMap<Kernel, usize>,
    pub makespan: usize,
    pub peak_buffer: u64,
}

impl ScheduleTrace {
    fn build(tasks: Vec<Task>) -> Self {
        let makespan = tasks.iter().map(|t| t.time + 1).max().unwrap_or(0);
        let mut per_step: BTreeMap<(Kernel, usize), usize> = BTreeMap::new();
        for t in &tasks {
            *per_step.entry((t.kernel, t.time)).or_default() += 1;
        }
        let mut instances = BTreeMap::new();
        for ((k, _), n) in per_step {
            let e = instances.entry(k).or_insert(0);
            *e = (*e).max(n);
        }
        let mut last_use: Vec<usize> = tasks.iter().map(|t| t.time).collect();
        for t in &tasks {
            for &d in &t.deps {
                last_use[d] = last_use[d].max(t.time);
            }
        }
        let peak_buffer = (0..makespan)
            .map(|step| {
                tasks
                    .iter()
                    .zip(&last_use)
                    .filter(|(t, &end)| t.time <= step && step <= end)
                    .map(|(t, _)| t.output_elems)
                    .sum::<u64>()
            })
            .max()
            .unwrap_or(0);
        ScheduleTrace {
            tasks,
            instances,
            makespan,
            peak_buffer,
        }
    }

    pub fn instances_of(&self, k: Kernel) -> usize {
        self.instances.get(&k).copied().unwrap_or(0)
    }

    /// Every task starts strictly after all of its dependencies.
    pub fn check_dependencies(&self) -> Result<()> {
        for t in &self.tasks {
            for &d in &t.deps {
                let dep = self
                    .tasks
                    .get(d)
                    .ok_or_else(|| Error::InvalidArgument(format!("{} depends on missing task {d}", t.label)))?;
                if dep.time >= t.time {
                    return Err(Error::InvalidArgument(format!(
                        "{} at step {} does not follow {} at step {}",
                        t.label, t.time, dep.label, dep.time
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Forward BTT for `layers` linear layers sharing one input.
///
/// Each layer's left and right weight-side chains (MUL0) run as a pair;
/// `Z_right·X` (MUL1) and `Z_left·Z2` (MUL2) each have a single shared
/// kernel instance, so layers pass through them one per step. The naive
/// schedule issues every MUL0 pair at step 0; the rescheduled one delays
/// each pair to the step just before its first consumer.
pub fn schedule_qkv_with(cfg: &LayerConfig, layers: usize, naive: bool) -> ScheduleTrace {
    let d = cfg.d();
    let rd = cfg.ranks[d] as u64;
    let (m, n, k) = (cfg.rows(), cfg.cols(), cfg.k as u64);
    let mut tasks = Vec::with_capacity(4 * layers);
    for l in 0..layers {
        let mul1_time = 1 + l;
        let mul2_time = 2 + l;
        let mul0_time = if naive { 0 } else { mul1_time.min(mul2_time) - 1 };
        let base = tasks.len();
        tasks.push(Task {
            label: format!("L{l}.left"),
            kernel: Kernel::Mul0,
            time: mul0_time,
            output_elems: m * rd,
            deps: vec![],
        });
        tasks.push(Task {
            label: format!("L{l}.right"),
            kernel: Kernel::Mul0,
            time: mul0_time,
            output_elems: rd * n,
            deps: vec![],
        });
        tasks.push(Task {
            label: format!("L{l}.z2"),
            kernel: Kernel::Mul1,
            time: mul1_time,
            output_elems: rd * k,
            deps: vec![base + 1],
        });
        tasks.push(Task {
            label: format!("L{l}.y"),
            kernel: Kernel::Mul2,
            time: mul2_time,
            output_elems: 0,
            deps: vec![base, base + 2],
        });
    }
    ScheduleTrace::build(tasks)
}

/// Q, K and V projections of the given layer shape.
pub fn schedule_qkv(cfg: &LayerConfig, naive: bool) -> ScheduleTrace {
    schedule_qkv_with(cfg, 3, naive)
}

/// Core-gradient stage split into slices over the first d−1 input modes.
///
/// MUL2(i) produces an `r_d` slice that MUL3(i) consumes. Unfused runs all
/// MUL2 slices before any MUL3, so the whole `n_1⋯n_{d-1}·r_d` tensor is
/// live; fused alternates them and keeps one slice live.
pub fn schedule_fused_bp(cfg: &LayerConfig, fused: bool) -> ScheduleTrace {
    let d = cfg.d();
    let rd = cfg.ranks[d] as u64;
    let p: usize = cfg.in_modes[..d - 1].iter().product();
    let mut tasks = Vec::with_capacity(2 * p);
    for i in 0..p {
        let (t2, t3) = if fused { (2 * i, 2 * i + 1) } else { (i, p + i) };
        tasks.push(Task {
            label: format!("mul2[{i}]"),
            kernel: Kernel::Mul2,
            time: t2,
            output_elems: rd,
            deps: vec![],
        });
        tasks.push(Task {
            label: format!("mul3[{i}]"),
            kernel: Kernel::Mul3,
            time: t3,
            output_elems: 0,
            deps: vec![2 * i],
        });
    }
    ScheduleTrace::build(tasks)
}
