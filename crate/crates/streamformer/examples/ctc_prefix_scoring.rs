//! Incremental CTC prefix scoring against the enumeration oracle.
//!
//! Builds a tiny per-frame probability matrix, scores prefixes token by
//! token with the incremental DP, grows the frame axis mid-way, and
//! cross-checks every number against brute-force emission enumeration.
//!
//!     cargo run --example ctc_prefix_scoring

use ndarray::Array2;
use streamformer::ctc::{
    brute_force_exact_prob, brute_force_prefix_prob, ctc_greedy_collapse, ctc_prefix_eos,
    ctc_prefix_extend, ctc_prefix_init, CtcLogProbs,
};
use streamformer::vocab::Vocabulary;

fn main() -> streamformer::Result<()> {
    let vocab = Vocabulary::with_tokens(["a", "b"]).unwrap();
    let a = vocab.id("a").unwrap();
    let b = vocab.id("b").unwrap();

    // 4 frames over {blank, sos/eos, unk, a, b}; sos/eos and unk get no
    // emission mass here.
    let probs = ndarray::array![
        [0.5, 0.0, 0.0, 0.4, 0.1],
        [0.3, 0.0, 0.0, 0.6, 0.1],
        [0.6, 0.0, 0.0, 0.1, 0.3],
        [0.4, 0.0, 0.0, 0.1, 0.5],
    ];
    let full = CtcLogProbs::from_probs(&probs)?;
    println!(
        "greedy collapse: {:?}",
        vocab.decode(&ctc_greedy_collapse(&full))
    );

    // Start with only two frames available, as a block decoder would.
    let head =
        CtcLogProbs::from_probs(&Array2::from(probs.slice(ndarray::s![..2, ..]).to_owned()))?;
    let state = ctc_prefix_init(&head);
    println!(
        "empty prefix over 2 frames: p_prefix = {:.6} (always 1)",
        state.prefix_logprob().exp()
    );

    let (state, cond_a) = ctc_prefix_extend(&head, &state, &[], a)?;
    let oracle = brute_force_prefix_prob(&head, &[a])?;
    println!(
        "extend by 'a':  conditional = {:.6}, p_prefix = {:.6}, oracle = {oracle:.6}",
        cond_a.exp(),
        state.prefix_logprob().exp()
    );

    // Two more frames arrive: grow the DP columns without recomputation.
    let mut state = state;
    state.extend_frames(&full)?;
    let oracle = brute_force_prefix_prob(&full, &[a])?;
    println!(
        "after 2 more frames: p_prefix('a') = {:.6}, oracle = {oracle:.6}",
        state.prefix_logprob().exp()
    );

    let (state, cond_b) = ctc_prefix_extend(&full, &state, &[a], b)?;
    let oracle = brute_force_prefix_prob(&full, &[a, b])?;
    println!(
        "extend by 'b':  conditional = {:.6}, p_prefix('a b') = {:.6}, oracle = {oracle:.6}",
        cond_b.exp(),
        state.prefix_logprob().exp()
    );

    let eos = ctc_prefix_eos(&full, &state, &[a, b])?;
    let complete = brute_force_exact_prob(&full, &[a, b])?;
    println!(
        "terminate:      p(exactly 'a b') = {:.6}, oracle = {complete:.6}",
        (state.prefix_logprob() + eos).exp()
    );
    Ok(())
}
