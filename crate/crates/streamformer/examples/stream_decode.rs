//! End-to-end streaming decode: 640 ms chunks feed the blockwise
//! synchronous beam search; the emission log shows when each token
//! committed and the latency report summarizes AL/EP and wait events.
//!
//!     cargo run --example stream_decode

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use streamformer::beam::{decode_blockwise, ClockMode};
use streamformer::harness::chunk_stream;
use streamformer::latency::latency_report;
use streamformer::{DecodeConfig, ModelConfig, ModelParams, Task, Vocabulary};

fn main() -> streamformer::Result<()> {
    let vocab = Vocabulary::with_tokens(["turn", "on", "off", "the", "lights"])?;
    let config = ModelConfig::tiny(vocab.len());
    let params = ModelParams::init(&config, 17)?;

    // 2.0 s of synthetic features.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let features = Array2::from_shape_fn((200, config.feature_dim), |_| {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    });

    let chunk_ms = 640;
    let chunks = chunk_stream(&features.view(), chunk_ms, config.frame_ms)?;
    println!(
        "streaming {} ms of features as {} chunks of {chunk_ms} ms",
        features.nrows() as u32 * config.frame_ms,
        chunks.len()
    );

    let decode = DecodeConfig {
        beam_size: 5,
        ctc_weight: Task::St.default_ctc_weight(),
        block_size: 16,
        hop: 4,
        look_ahead: 4,
        max_len_ratio: 0.3,
        max_len_margin: 5,
        candidate_pool: None,
        repeat_window: 1,
        task: Task::St,
    };
    let (best, log) = decode_blockwise(&params, chunks, &decode, chunk_ms, ClockMode::Simulated)?;

    println!("hypothesis: \"{}\"", vocab.decode(&best.tokens));
    println!(
        "scores: attention {:.4}, ctc {:.4}, joint {:.4} (mu = {})",
        best.score_att, best.score_ctc, best.score, decode.ctc_weight
    );
    println!("\ncommit timeline (token, block, source ms consumed):");
    for e in &log.events {
        println!(
            "  #{:<2} {:<8} block {:<2} {:>5} ms",
            e.position,
            vocab.token(e.token_id).unwrap_or("?"),
            e.block,
            e.source_ms
        );
    }
    let report = latency_report(&log)?;
    println!(
        "\nAL = {} ms, EP = {} ms, wait events = {}, tokens before source end = {}",
        report
            .al_ms
            .map(|v| format!("{v:.1}"))
            .unwrap_or_else(|| "n/a".into()),
        report.ep_ms,
        report.wait_events,
        report.early_tokens
    );
    Ok(())
}
