//! Offline joint CTC/attention decoding across CTC weights: μ = 0 is pure
//! attention beam search, μ = 1 pure CTC ranking, values between mix both
//! scores through S = μ·S_ctc + (1−μ)·S_att.
//!
//!     cargo run --example offline_decode

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use streamformer::beam::decode_offline;
use streamformer::{DecodeConfig, ModelConfig, ModelParams, Task, Vocabulary};

fn main() -> streamformer::Result<()> {
    let vocab = Vocabulary::with_tokens(["hola", "mundo", "adios"])?;
    let config = ModelConfig::tiny(vocab.len());
    let params = ModelParams::init(&config, 5)?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let features = Array2::from_shape_fn((96, config.feature_dim), |_| {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    });

    println!(
        "{:<6} {:<28} {:>10} {:>10} {:>10}",
        "mu", "hypothesis", "S_att", "S_ctc", "S"
    );
    for mu in [0.0, 0.3, 0.5, 1.0] {
        let cfg = DecodeConfig {
            beam_size: 10,
            ctc_weight: mu,
            max_len_ratio: 0.3,
            max_len_margin: 4,
            task: Task::St,
            ..DecodeConfig::for_task(Task::St)
        };
        let out = decode_offline(&params, &features.view(), &cfg)?;
        println!(
            "{:<6} {:<28} {:>10.4} {:>10.4} {:>10.4}",
            mu,
            format!("\"{}\"", vocab.decode(&out.tokens)),
            out.score_att,
            out.score_ctc,
            out.score
        );
    }
    Ok(())
}
