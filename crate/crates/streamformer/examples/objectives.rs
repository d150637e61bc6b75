//! Multi-task objective evaluation for both tasks.
//!
//! SLU: total = λ(L_ctc + L_ctc_aux) + (1−λ)·L_ce with the intent token
//! prepended to the decoder and main-CTC targets.
//! ST:  total = (1−γ)((1−β)L_ce + βL_ctc) + γ·L_ctc_aux with the main CTC
//! head supervised by the translation and the auxiliary head (tapped at
//! the intermediate encoder layer) by the source transcript.
//!
//!     cargo run --example objectives

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use streamformer::objectives::{build_slu_target, evaluate_objective, SupervisionPair};
use streamformer::{ModelConfig, ModelParams, ObjectiveConfig, Task, Vocabulary};

fn main() -> streamformer::Result<()> {
    let vocab =
        Vocabulary::with_tokens(["lights_on", "turn", "on", "the", "lights", "licht", "an"])?;
    let config = ModelConfig::tiny(vocab.len());
    let params = ModelParams::init(&config, 23)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let features = Array2::from_shape_fn((120, config.feature_dim), |_| {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    });

    let transcript = vocab.encode("turn on the lights")?;
    let objective = ObjectiveConfig::default();
    println!(
        "weights: lambda = {}, beta = {}, gamma = {}, smoothing = {}",
        objective.lambda, objective.beta, objective.gamma, objective.smoothing
    );

    // SLU: the intent token rides in front of the transcript for both the
    // decoder and the main CTC head; the auxiliary head sees the plain
    // transcript.
    let slu_pair = SupervisionPair::new(
        build_slu_target(&vocab, "lights_on", &transcript)?,
        transcript.clone(),
    )?;
    let slu = evaluate_objective(&params, &features.view(), &slu_pair, &objective, Task::Slu)?;
    println!(
        "\nSLU  L_ce = {:.4}  L_ctc = {:.4}  L_ctc_aux = {:.4}",
        slu.ce, slu.ctc_main, slu.ctc_aux
    );
    println!(
        "     total = {:.4} (status: {})",
        slu.total,
        if slu.infeasible { "infeasible" } else { "ok" }
    );

    // ST: main target is the translation, auxiliary target the source
    // transcript.
    let st_pair = SupervisionPair::new(vocab.encode("licht an")?, transcript)?;
    let st = evaluate_objective(&params, &features.view(), &st_pair, &objective, Task::St)?;
    println!(
        "\nST   L_ce = {:.4}  L_ctc = {:.4}  L_ctc_aux = {:.4}",
        st.ce, st.ctc_main, st.ctc_aux
    );
    println!(
        "     total = {:.4} (status: {})",
        st.total,
        if st.infeasible { "infeasible" } else { "ok" }
    );

    // Endpoint sanity: λ = 0 leaves only the cross entropy.
    let ce_only = ObjectiveConfig {
        lambda: 0.0,
        ..objective
    };
    let out = evaluate_objective(&params, &features.view(), &slu_pair, &ce_only, Task::Slu)?;
    println!(
        "\nSLU at lambda = 0: total = {:.4} == L_ce = {:.4}",
        out.total, out.ce
    );
    Ok(())
}
