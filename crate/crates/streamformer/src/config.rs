//! Model, objective and decoding configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task the engine is being used for. Affects target construction and the
/// default CTC decoding weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Spoken language understanding: intent token followed by the transcript.
    Slu,
    /// Speech translation: target-language text, source transcript as auxiliary.
    St,
}

impl Task {
    /// Default CTC weight μ used during joint decoding (0.5 for SLU, 0.3 for ST).
    pub fn default_ctc_weight(self) -> f64 {
        match self {
            Task::Slu => 0.5,
            Task::St => 0.3,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "slu" => Ok(Task::Slu),
            "st" => Ok(Task::St),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected slu|st)"
            ))),
        }
    }
}

/// Architecture hyper-parameters. Every tensor shape in [`crate::params::ModelParams`]
/// is derivable from this struct alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Encoder layer whose activations feed the auxiliary CTC head (1-based).
    pub intermediate_layer: usize,
    pub feature_dim: usize,
    pub subsample_factor: usize,
    pub vocab_size: usize,
    /// Duration of one pre-subsampling feature frame in milliseconds.
    pub frame_ms: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 256,
            n_heads: 4,
            ff_dim: 2048,
            enc_layers: 12,
            dec_layers: 6,
            intermediate_layer: 8,
            feature_dim: 80,
            subsample_factor: 4,
            vocab_size: 0,
            frame_ms: 10,
        }
    }
}

impl ModelConfig {
    /// Small deterministic configuration convenient for tests and examples.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            ff_dim: 32,
            enc_layers: 3,
            dec_layers: 2,
            intermediate_layer: 2,
            feature_dim: 8,
            subsample_factor: 4,
            vocab_size,
            frame_ms: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
            Ok(())
        }
        positive("d_model", self.d_model)?;
        positive("n_heads", self.n_heads)?;
        positive("ff_dim", self.ff_dim)?;
        positive("enc_layers", self.enc_layers)?;
        positive("dec_layers", self.dec_layers)?;
        positive("feature_dim", self.feature_dim)?;
        positive("subsample_factor", self.subsample_factor)?;
        positive("vocab_size", self.vocab_size)?;
        if self.frame_ms == 0 {
            return Err(Error::Config("frame_ms must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "n_heads ({}) must divide d_model ({})",
                self.n_heads, self.d_model
            )));
        }
        if self.intermediate_layer < 1 || self.intermediate_layer > self.enc_layers {
            return Err(Error::Config(format!(
                "intermediate_layer ({}) must lie in [1, enc_layers={}]",
                self.intermediate_layer, self.enc_layers
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Multi-task loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    /// SLU weight on the two CTC terms.
    pub lambda: f64,
    /// ST weight on the main (translation) CTC term.
    pub beta: f64,
    /// ST weight on the auxiliary (transcript) CTC term.
    pub gamma: f64,
    /// Cross-entropy label smoothing.
    pub smoothing: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 0.3,
            beta: 0.3,
            gamma: 0.3,
            smoothing: 0.1,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!(
                "smoothing must lie in [0, 1), got {}",
                self.smoothing
            )));
        }
        Ok(())
    }
}

/// Hop and look-ahead sizes at 20% of the block size each, the default split.
pub fn default_hop_lookahead(block_size: usize) -> (usize, usize) {
    let part = (block_size / 5).max(1);
    (part, part)
}

/// Beam search and block processing settings for decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// CTC weight μ in the joint score μ·S_ctc + (1−μ)·S_att.
    pub ctc_weight: f64,
    /// Block size N_b in post-subsampling frames.
    pub block_size: usize,
    /// Hop N_h (central output width) in post-subsampling frames.
    pub hop: usize,
    /// Look-ahead N_r in post-subsampling frames.
    pub look_ahead: usize,
    /// Output length cap: ceil(max_len_ratio × encoded frames) + max_len_margin.
    pub max_len_ratio: f64,
    pub max_len_margin: usize,
    /// Candidates rescored by CTC per expansion; None means min(2·beam, vocab).
    pub candidate_pool: Option<usize>,
    /// Tokens compared against when testing a candidate for repetition.
    pub repeat_window: usize,
    pub task: Task,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let (hop, look_ahead) = default_hop_lookahead(40);
        DecodeConfig {
            beam_size: 10,
            ctc_weight: Task::St.default_ctc_weight(),
            block_size: 40,
            hop,
            look_ahead,
            max_len_ratio: 0.5,
            max_len_margin: 10,
            candidate_pool: None,
            repeat_window: 1,
            task: Task::St,
        }
    }
}

impl DecodeConfig {
    pub fn for_task(task: Task) -> Self {
        DecodeConfig {
            ctc_weight: task.default_ctc_weight(),
            task,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(Error::Config(format!(
                "ctc_weight must lie in [0, 1], got {}",
                self.ctc_weight
            )));
        }
        if self.hop == 0 {
            return Err(Error::Config("hop must be at least 1".into()));
        }
        if self.hop + self.look_ahead > self.block_size {
            return Err(Error::Config(format!(
                "hop ({}) + look_ahead ({}) must not exceed block_size ({})",
                self.hop, self.look_ahead, self.block_size
            )));
        }
        if self.max_len_ratio < 0.0 {
            return Err(Error::Config("max_len_ratio must be non-negative".into()));
        }
        Ok(())
    }

    /// Output length cap for a given number of encoded frames.
    pub fn max_output_len(&self, encoded_frames: usize) -> usize {
        (self.max_len_ratio * encoded_frames as f64).ceil() as usize + self.max_len_margin
    }

    /// Number of attention candidates rescored by the CTC prefix score.
    pub fn pool_size(&self, vocab_size: usize) -> usize {
        self.candidate_pool
            .unwrap_or(2 * self.beam_size)
            .min(vocab_size)
            .max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_config_is_valid() {
        ModelConfig::tiny(8).validate().unwrap();
    }

    #[test]
    fn heads_must_divide_d_model() {
        let mut c = ModelConfig::tiny(8);
        c.n_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn intermediate_layer_bounds() {
        let mut c = ModelConfig::tiny(8);
        c.intermediate_layer = 0;
        assert!(c.validate().is_err());
        c.intermediate_layer = c.enc_layers + 1;
        assert!(c.validate().is_err());
        c.intermediate_layer = c.enc_layers;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn twenty_percent_split() {
        assert_eq!(default_hop_lookahead(20), (4, 4));
        assert_eq!(default_hop_lookahead(40), (8, 8));
        // Never degenerates to a zero hop.
        assert_eq!(default_hop_lookahead(3), (1, 1));
    }

    #[test]
    fn hop_lookahead_must_fit_block() {
        let c = DecodeConfig {
            block_size: 10,
            hop: 8,
            look_ahead: 8,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn task_defaults() {
        assert_eq!(Task::Slu.default_ctc_weight(), 0.5);
        assert_eq!(Task::St.default_ctc_weight(), 0.3);
    }
}
