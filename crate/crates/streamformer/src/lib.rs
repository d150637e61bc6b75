//! Blockwise streaming sequence transduction engine.
//!
//! The library encodes feature streams in overlapping blocks with context
//! inheritance, decodes them with a blockwise synchronous beam search that
//! mixes attention and CTC prefix scores, evaluates SLU/ST multi-task
//! objectives, and reports streaming latency (average lagging and endpoint
//! latency). See the `examples/` directory for one runnable walk-through
//! per capability; the `streamformer` binary wraps the same entry points
//! behind a small CLI.
//!
//! ```
//! use ndarray::Array2;
//! use streamformer::{decode_offline, DecodeConfig, ModelConfig, ModelParams, Task, Vocabulary};
//!
//! let vocab = Vocabulary::with_tokens(["yes", "no"])?;
//! let params = ModelParams::init(&ModelConfig::tiny(vocab.len()), 7)?;
//! let features = Array2::from_shape_fn((40, 8), |(t, d)| ((t * 3 + d) as f64 * 0.21).sin());
//! let cfg = DecodeConfig { beam_size: 3, ..DecodeConfig::for_task(Task::St) };
//! let best = decode_offline(&params, &features.view(), &cfg)?;
//! println!("{} (joint score {:.3})", vocab.decode(&best.tokens), best.score);
//! # Ok::<(), streamformer::Error>(())
//! ```

pub mod beam;
pub mod config;
pub mod ctc;
pub mod decoder;
pub mod encoder;
pub mod error;
mod fsio;
pub mod harness;
pub mod latency;
pub mod layers;
pub mod numerics;
pub mod objectives;
pub mod params;
pub mod vocab;

pub use beam::{
    decode_blockwise, decode_offline, is_unreliable, joint_score, ClockMode, FinishedHypothesis,
    Hypothesis, StreamState,
};
pub use config::{default_hop_lookahead, DecodeConfig, ModelConfig, ObjectiveConfig, Task};
pub use ctc::{
    brute_force_exact_prob, brute_force_prefix_prob, ctc_greedy_collapse, ctc_head, ctc_loss,
    ctc_prefix_eos, ctc_prefix_extend, ctc_prefix_init, CtcHeadKind, CtcLogProbs, CtcPrefixState,
};
pub use decoder::{decoder_step, sequence_logprob, DecoderState};
pub use encoder::{
    encode_block, encode_full, init_context, make_block_schedule, subsample, BlockSchedule,
    ContextState, EncodedBlocks, StreamingEncoder,
};
pub use error::{Error, Result};
pub use latency::{
    average_lagging, endpoint_latency, latency_report, read_emission_log, write_emission_log,
    EmissionEvent, EmissionLog, LatencyReport,
};
pub use numerics::{log_softmax, logsumexp};
pub use objectives::{
    build_slu_target, cross_entropy_loss, evaluate_objective, read_manifest, slu_loss, st_loss,
    supervision_from_entry, LossBreakdown, SupervisionPair,
};
pub use params::ModelParams;
pub use vocab::{TokenId, Vocabulary, BLANK, SOS_EOS, UNK};

#[cfg(test)]
mod thread_safety {
    // Params and per-hypothesis state are shared or moved across worker
    // threads when utterances decode in parallel.
    fn assert_send_sync<T: Send + Sync>() {}

    #[test]
    fn shared_types_are_send_sync() {
        assert_send_sync::<crate::ModelParams>();
        assert_send_sync::<crate::Vocabulary>();
        assert_send_sync::<crate::encoder::EncodedBlocks>();
        assert_send_sync::<crate::encoder::ContextState>();
        assert_send_sync::<crate::ctc::CtcLogProbs>();
        assert_send_sync::<crate::ctc::CtcPrefixState>();
        assert_send_sync::<crate::beam::Hypothesis>();
        assert_send_sync::<crate::beam::FinishedHypothesis>();
        assert_send_sync::<crate::latency::EmissionLog>();
        assert_send_sync::<crate::DecodeConfig>();
    }
}
