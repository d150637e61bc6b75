//! Multi-task objective evaluation: label-smoothed cross entropy from the
//! decoder plus two CTC terms, combined per task. Losses are evaluated
//! forward-only; CE is averaged per token, CTC summed per utterance.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;

use crate::config::{ObjectiveConfig, Task};
use crate::ctc::{ctc_head, ctc_loss, CtcHeadKind};
use crate::decoder;
use crate::encoder::{encode_full, subsample, EncodedBlocks};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::vocab::{TokenId, Vocabulary, BLANK, SOS_EOS};

/// Targets for one utterance. `main_target` supervises the decoder (with a
/// terminal eos appended) and the main CTC head; `aux_target` supervises
/// the auxiliary head at the intermediate layer. Neither stores reserved
/// tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionPair {
    pub main_target: Vec<TokenId>,
    pub aux_target: Vec<TokenId>,
}

impl SupervisionPair {
    pub fn new(main_target: Vec<TokenId>, aux_target: Vec<TokenId>) -> Result<Self> {
        for (name, target) in [("main", &main_target), ("aux", &aux_target)] {
            if target.iter().any(|&t| t == BLANK || t == SOS_EOS) {
                return Err(Error::Decode(format!(
                    "{name} target contains a reserved token"
                )));
            }
        }
        Ok(SupervisionPair {
            main_target,
            aux_target,
        })
    }
}

/// Prepends the intent token to the transcript.
pub fn build_slu_target(
    vocab: &Vocabulary,
    intent: &str,
    transcript: &[TokenId],
) -> Result<Vec<TokenId>> {
    let intent_id = vocab.require(intent)?;
    let mut out = Vec::with_capacity(transcript.len() + 1);
    out.push(intent_id);
    out.extend_from_slice(transcript);
    Ok(out)
}

/// Label-smoothed teacher-forced cross entropy, averaged over target
/// positions. `target` must end with eos. At ε = 0 this is
/// −sequence_logprob / |target|; at ε = 1 the reference distribution is
/// uniform over the vocabulary.
pub fn cross_entropy_loss(
    params: &ModelParams,
    encoded: &EncodedBlocks,
    target: &[TokenId],
    smoothing: f64,
) -> Result<f64> {
    if target.last() != Some(&SOS_EOS) {
        return Err(Error::Decode(
            "cross-entropy target must end with eos".into(),
        ));
    }
    if !(0.0..=1.0).contains(&smoothing) {
        return Err(Error::Config(format!(
            "smoothing must lie in [0, 1], got {smoothing}"
        )));
    }
    let vocab = params.config.vocab_size as f64;
    let mut prefix = vec![SOS_EOS];
    let mut total = 0.0;
    for &gold in target {
        let lp = decoder::decoder_step(params, encoded, &prefix)?;
        let uniform: f64 = lp.iter().sum::<f64>() / vocab;
        total -= (1.0 - smoothing) * lp[gold] + smoothing * uniform;
        prefix.push(gold);
    }
    Ok(total / target.len() as f64)
}

/// λ(L_ctc + L_ctc_aux) + (1−λ)·L_ce.
pub fn slu_loss(l_ctc: f64, l_ctc_aux: f64, l_ce: f64, lambda: f64) -> f64 {
    lambda * (l_ctc + l_ctc_aux) + (1.0 - lambda) * l_ce
}

/// (1−γ)((1−β)L_ce + βL_ctc) + γ·L_ctc_aux.
pub fn st_loss(l_ce: f64, l_ctc: f64, l_ctc_aux: f64, beta: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * ((1.0 - beta) * l_ce + beta * l_ctc) + gamma * l_ctc_aux
}

/// Per-term loss report. `total` recombines the terms by the task formula;
/// `infeasible` marks utterances where a CTC term had no valid alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ctc_main: f64,
    pub ctc_aux: f64,
    pub total: f64,
    pub infeasible: bool,
}

fn weighted(w: f64, term: f64) -> f64 {
    // A zero weight silences an infinite term instead of producing NaN.
    if w == 0.0 {
        0.0
    } else {
        w * term
    }
}

fn combine(task: Task, config: &ObjectiveConfig, ce: f64, ctc_main: f64, ctc_aux: f64) -> f64 {
    match task {
        Task::Slu => {
            weighted(config.lambda, ctc_main)
                + weighted(config.lambda, ctc_aux)
                + weighted(1.0 - config.lambda, ce)
        }
        Task::St => {
            weighted(
                1.0 - config.gamma,
                weighted(1.0 - config.beta, ce) + weighted(config.beta, ctc_main),
            ) + weighted(config.gamma, ctc_aux)
        }
    }
}

/// Runs the offline encoder and evaluates the full multi-task objective of
/// one utterance: cross entropy against the main target (plus eos), main
/// CTC against the main target, auxiliary CTC against the aux target.
pub fn evaluate_objective(
    params: &ModelParams,
    features: &ArrayView2<f64>,
    pair: &SupervisionPair,
    config: &ObjectiveConfig,
    task: Task,
) -> Result<LossBreakdown> {
    config.validate()?;
    let frames = subsample(params, features)?;
    let (top, layer_m) = encode_full(params, &frames.view())?;
    let lp_main = ctc_head(params, &top.view(), CtcHeadKind::Main)?;
    let lp_aux = ctc_head(params, &layer_m.view(), CtcHeadKind::Aux)?;
    let encoded = EncodedBlocks::from_full(top, layer_m);

    let mut ce_target = pair.main_target.clone();
    ce_target.push(SOS_EOS);
    let ce = cross_entropy_loss(params, &encoded, &ce_target, config.smoothing)?;
    let ctc_main = ctc_loss(&lp_main, &pair.main_target)?;
    let ctc_aux = ctc_loss(&lp_aux, &pair.aux_target)?;
    let total = combine(task, config, ce, ctc_main, ctc_aux);
    Ok(LossBreakdown {
        ce,
        ctc_main,
        ctc_aux,
        total,
        infeasible: ctc_main.is_infinite() || ctc_aux.is_infinite(),
    })
}

/// One row of a supervision manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub feature_path: PathBuf,
    pub main_text: String,
    pub aux_text: String,
    pub intent: Option<String>,
}

/// Reads a manifest: UTF-8 TSV with columns utterance-id, feature-file
/// path, main target, aux target and an optional intent token.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 || cols.len() > 5 {
            return Err(Error::Format {
                line: n + 1,
                msg: format!(
                    "expected 4 or 5 tab-separated columns, found {} in {}",
                    cols.len(),
                    path.display()
                ),
            });
        }
        entries.push(ManifestEntry {
            utt_id: cols[0].to_string(),
            feature_path: PathBuf::from(cols[1]),
            main_text: cols[2].to_string(),
            aux_text: cols[3].to_string(),
            intent: cols.get(4).map(|s| s.to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(entries)
}

/// Resolves a manifest row into targets. For SLU the intent column is
/// required and is prepended to the main target; the aux target never
/// carries it.
pub fn supervision_from_entry(
    vocab: &Vocabulary,
    entry: &ManifestEntry,
    task: Task,
) -> Result<SupervisionPair> {
    let main = vocab.encode(&entry.main_text)?;
    let aux = vocab.encode(&entry.aux_text)?;
    let main = match task {
        Task::Slu => {
            let intent = entry.intent.as_deref().ok_or_else(|| {
                Error::Decode(format!("utterance {} lacks an intent token", entry.utt_id))
            })?;
            build_slu_target(vocab, intent, &main)?
        }
        Task::St => main,
    };
    SupervisionPair::new(main, aux)
}
