use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bram::{tt_arrays, ttm_arrays};
use crate::bram::FactorArray;
use crate::costmodel::LayerConfig;
use crate::error::{Error, Result};

/// Shape of one TTM embedding table. A single vocabulary mode gives a dense
/// table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub vocab_modes: Vec<usize>,
    pub embed_modes: Vec<usize>,
    pub rank: usize,
}

impl EmbeddingConfig {
    pub fn vocab(&self) -> usize {
        self.vocab_modes.iter().product()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let d = self.vocab_modes.len();
        let mut r = vec![self.rank; d + 1];
        r[0] = 1;
        r[d] = 1;
        r
    }

    fn validate(&self, what: &str, hidden: usize) -> Result<()> {
        if self.vocab_modes.is_empty() || self.vocab_modes.len() != self.embed_modes.len() {
            return Err(Error::InvalidArgument(format!("{what}: vocab and embed modes must have equal, nonzero length")));
        }
        if self.vocab_modes.iter().chain(&self.embed_modes).any(|&m| m == 0) || self.rank == 0 {
            return Err(Error::InvalidArgument(format!("{what}: modes and rank must be positive")));
        }
        if self.embed_modes.iter().product::<usize>() != hidden {
            return Err(Error::InvalidArgument(format!("{what}: embed modes do not multiply to the hidden width {hidden}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub count: usize,
    pub classes: usize,
    /// Indicative tokens per class.
    #[serde(default = "default_band")]
    pub band: usize,
    /// Probability that a non-CLS position carries an indicative token.
    #[serde(default = "default_signal")]
    pub signal: f64,
}

fn default_band() -> usize {
    4
}

fn default_signal() -> f64 {
    0.25
}

/// Model, optimizer, data and planning settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub num_encoders: usize,
    pub heads: usize,
    /// Output modes of every square TT layer.
    pub hidden_out_modes: Vec<usize>,
    /// Input modes of every square TT layer.
    pub hidden_in_modes: Vec<usize>,
    pub attention_rank: usize,
    pub ffn_rank: usize,
    pub classifier_rank: usize,
    pub token_embedding: EmbeddingConfig,
    pub position_embedding: EmbeddingConfig,
    pub segment_embedding: EmbeddingConfig,
    pub num_intents: usize,
    /// Slot classes; 0 disables slot filling.
    pub num_slots: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub epochs: usize,
    pub seed: u64,
    /// JSON-Lines dataset; when absent the synthetic generator is used.
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    /// Bits per stored factor element for memory planning.
    #[serde(default = "default_bits")]
    pub element_bits: u64,
    /// Largest block group the memory planner may form.
    #[serde(default = "default_group")]
    pub max_group: usize,
}

fn default_bits() -> u64 {
    32
}

fn default_group() -> usize {
    8
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn hidden(&self) -> usize {
        self.hidden_out_modes.iter().product()
    }

    pub fn d(&self) -> usize {
        self.hidden_out_modes.len()
    }

    pub fn tt_ranks(&self, r: usize) -> Vec<usize> {
        let d = self.d();
        let mut ranks = vec![r; 2 * d + 1];
        ranks[0] = 1;
        ranks[2 * d] = 1;
        ranks
    }

    /// Cost-model view of one square TT layer at the configured sequence
    /// length.
    pub fn layer_config(&self, rank: usize) -> Result<LayerConfig> {
        LayerConfig::new(
            self.hidden_out_modes.clone(),
            self.hidden_in_modes.clone(),
            self.tt_ranks(rank),
            self.seq_len,
        )
    }

    /// Every TT / TTM factor the model stores, for memory planning. Tables
    /// with a single vocabulary mode are dense and not listed.
    pub fn factor_inventory(&self) -> Vec<FactorArray> {
        let (om, im, bits) = (&self.hidden_out_modes, &self.hidden_in_modes, self.element_bits);
        let mut arrays = Vec::new();
        for (name, e) in [
            ("tok", &self.token_embedding),
            ("pos", &self.position_embedding),
            ("seg", &self.segment_embedding),
        ] {
            if e.vocab_modes.len() > 1 {
                arrays.extend(ttm_arrays(name, &e.vocab_modes, &e.embed_modes, &e.ranks(), bits));
            }
        }
        let (att, ffn) = (self.tt_ranks(self.attention_rank), self.tt_ranks(self.ffn_rank));
        for i in 0..self.num_encoders {
            for (name, r) in [("q", &att), ("k", &att), ("v", &att), ("o", &att), ("ffn1", &ffn), ("ffn2", &ffn)] {
                arrays.extend(tt_arrays(&format!("enc{i}.{name}"), om, im, r, bits));
            }
        }
        arrays.extend(tt_arrays("pool", om, im, &self.tt_ranks(self.classifier_rank), bits));
        arrays
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden_out_modes.is_empty() || self.hidden_out_modes.len() != self.hidden_in_modes.len() {
            return bad("hidden modes must have equal, nonzero length".into());
        }
        if self.hidden_out_modes.iter().chain(&self.hidden_in_modes).any(|&m| m == 0) {
            return bad("hidden modes must be positive".into());
        }
        let h = self.hidden();
        if self.hidden_in_modes.iter().product::<usize>() != h {
            return bad("hidden input and output modes multiply to different widths".into());
        }
        if self.heads == 0 || !h.is_multiple_of(self.heads) {
            return bad(format!("{} heads do not divide hidden width {h}", self.heads));
        }
        for (name, v) in [
            ("attention_rank", self.attention_rank),
            ("ffn_rank", self.ffn_rank),
            ("classifier_rank", self.classifier_rank),
            ("num_intents", self.num_intents),
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite nonnegative number".into());
        }
        self.token_embedding.validate("token_embedding", h)?;
        self.position_embedding.validate("position_embedding", h)?;
        self.segment_embedding.validate("segment_embedding", h)?;
        if self.position_embedding.vocab() < self.seq_len {
            return bad(format!(
                "position table covers {} positions but seq_len is {}",
                self.position_embedding.vocab(),
                self.seq_len
            ));
        }
        if let Some(s) = &self.synthetic {
            if s.classes == 0 || s.count == 0 || s.band == 0 || !(0.0..=1.0).contains(&s.signal) {
                return bad("synthetic: count, classes and band must be positive and signal in [0, 1]".into());
            }
            if 1 + s.classes * s.band >= self.token_embedding.vocab() {
                return bad("synthetic: vocabulary too small for the indicative bands".into());
            }
            if s.classes > self.num_intents {
                return bad("synthetic: more classes than intents".into());
            }
        }
        if self.dataset.is_none() && self.synthetic.is_none() {
            return bad("either dataset or synthetic must be set".into());
        }
        if self.element_bits == 0 || self.max_group == 0 {
            return bad("element_bits and max_group must be positive".into());
        }
        Ok(())
    }
}
