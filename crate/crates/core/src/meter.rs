//! Multiplication and buffer counters for contraction passes.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    pub stage: String,
    pub muls: u64,
    /// Live intermediate elements at the end of the stage.
    pub peak_elems: u64,
}

/// Counts scalar multiplications and tracks live intermediate elements.
///
/// Counters only grow within a pass; call [`reset`](Self::reset) between
/// passes.
#[derive(Debug, Clone, Default)]
pub struct BufferMeter {
    muls: u64,
    live: u64,
    peak: u64,
    stages: Vec<StageRecord>,
}

pub const CSV_HEADER: &str = "layer,scheme,stage,muls,peak_elems";

impl BufferMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn add_muls(&mut self, n: u64) {
        self.muls += n;
    }

    pub fn alloc(&mut self, elems: u64) {
        self.live += elems;
        self.peak = self.peak.max(self.live);
    }

    pub fn free(&mut self, elems: u64) {
        debug_assert!(elems <= self.live, "freeing more than is live");
        self.live -= elems;
    }

    /// Records one contraction stage producing `produced` persistent
    /// elements.
    pub fn stage(&mut self, label: impl Into<String>, muls: u64, produced: u64) {
        self.add_muls(muls);
        self.alloc(produced);
        self.stages.push(StageRecord {
            stage: label.into(),
            muls,
            peak_elems: self.peak,
        });
    }

    pub fn muls(&self) -> u64 {
        self.muls
    }

    pub fn live(&self) -> u64 {
        self.live
    }

    pub fn peak(&self) -> u64 {
        self.peak
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    /// CSV rows (no header) for this pass.
    pub fn csv_rows(&self, layer: &str, scheme: &str) -> String {
        let mut out = String::new();
        for s in &self.stages {
            writeln!(out, "{layer},{scheme},{},{},{}", s.stage, s.muls, s.peak_elems).expect("write to string");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tracks_high_water_mark() {
        let mut m = BufferMeter::new();
        m.alloc(5);
        m.alloc(3);
        m.free(6);
        m.alloc(1);
        assert_eq!(m.peak(), 8);
        assert_eq!(m.live(), 3);
    }

    #[test]
    fn stages_accumulate_and_reset() {
        let mut m = BufferMeter::new();
        m.stage("s0", 10, 4);
        m.stage("s1", 7, 2);
        assert_eq!(m.muls(), 17);
        assert_eq!(m.peak(), 6);
        assert_eq!(m.csv_rows("q", "btt"), "q,btt,s0,10,4\nq,btt,s1,7,6\n");
        m.reset();
        assert_eq!((m.muls(), m.peak(), m.stages().len()), (0, 0, 0));
    }
}
