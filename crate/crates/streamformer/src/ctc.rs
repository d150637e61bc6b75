//! CTC heads, CTC loss, incremental prefix scoring and the enumeration
//! oracles used to verify them.
//!
//! Prefix scoring keeps, per hypothesis, the blank/non-blank forward
//! arrays of every ancestor prefix. Extending the hypothesis by a token
//! appends one row; new encoder frames append one column to every row.
//! Both directions are exact: no recomputation, no approximation.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numerics::{log_add, log_softmax_inplace, logsumexp_unchecked, LOG_ZERO};
use crate::params::ModelParams;
use crate::vocab::{TokenId, BLANK, SOS_EOS};

/// Which CTC head to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtcHeadKind {
    /// Head over the top-layer encodings (transcripts, or translations in
    /// the cross-lingual setup).
    Main,
    /// Auxiliary head over the intermediate-layer encodings.
    Aux,
}

/// Per-frame log-probabilities produced by a CTC head: frames × vocab,
/// every row normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcLogProbs {
    lp: Array2<f64>,
}

impl CtcLogProbs {
    /// Wraps a log-probability matrix, checking row normalization.
    pub fn new(lp: Array2<f64>) -> Result<Self> {
        for (i, row) in lp.axis_iter(Axis(0)).enumerate() {
            let mass = logsumexp_unchecked(row.as_slice().expect("contiguous lp row"));
            if mass.abs() > 1e-9 {
                return Err(Error::Shape(format!(
                    "log-prob row {i} sums to exp({mass}), not 1"
                )));
            }
        }
        Ok(CtcLogProbs { lp })
    }

    /// Builds from linear probabilities; rows are renormalized exactly.
    pub fn from_probs(probs: &Array2<f64>) -> Result<Self> {
        let mut lp = probs.clone();
        for mut row in lp.rows_mut() {
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::Shape(
                    "probability row with non-positive mass".into(),
                ));
            }
            row.mapv_inplace(|p| if p <= 0.0 { LOG_ZERO } else { (p / sum).ln() });
        }
        Ok(CtcLogProbs { lp })
    }

    pub fn empty(vocab: usize) -> Self {
        CtcLogProbs {
            lp: Array2::zeros((0, vocab)),
        }
    }

    pub fn frames(&self) -> usize {
        self.lp.nrows()
    }

    pub fn vocab(&self) -> usize {
        self.lp.ncols()
    }

    #[inline]
    pub fn lp(&self, t: usize, v: TokenId) -> f64 {
        self.lp[[t, v]]
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.lp.view()
    }

    /// Appends the rows of `more` (new frames).
    pub fn extend(&mut self, more: &CtcLogProbs) -> Result<()> {
        if more.vocab() != self.vocab() {
            return Err(Error::Shape(format!(
                "cannot extend vocab {} log-probs with vocab {}",
                self.vocab(),
                more.vocab()
            )));
        }
        self.lp.append(Axis(0), more.lp.view()).expect("row append");
        Ok(())
    }
}

/// Applies a CTC head (linear projection + log-softmax) to encoded frames.
pub fn ctc_head(
    params: &ModelParams,
    frames: &ArrayView2<f64>,
    head: CtcHeadKind,
) -> Result<CtcLogProbs> {
    let head = match head {
        CtcHeadKind::Main => &params.ctc_main,
        CtcHeadKind::Aux => &params.ctc_aux,
    };
    if frames.ncols() != params.config.d_model {
        return Err(Error::Shape(format!(
            "encoded dim {} does not match d_model {}",
            frames.ncols(),
            params.config.d_model
        )));
    }
    let mut logits = frames.dot(&head.w.t());
    logits += &head.b;
    for mut row in logits.rows_mut() {
        log_softmax_inplace(row.as_slice_mut().expect("contiguous logits row"));
    }
    Ok(CtcLogProbs { lp: logits })
}

fn check_ctc_target(lp: &CtcLogProbs, target: &[TokenId]) -> Result<()> {
    for &t in target {
        if t == BLANK || t == SOS_EOS {
            return Err(Error::Decode(format!(
                "CTC target may not contain reserved token {t}"
            )));
        }
        if t >= lp.vocab() {
            return Err(Error::Decode(format!(
                "CTC target token {t} outside vocabulary of size {}",
                lp.vocab()
            )));
        }
    }
    Ok(())
}

/// CTC negative log-likelihood of `target` (no blanks, no sos/eos) under
/// the per-frame log-probabilities. Infeasible targets yield +∞.
pub fn ctc_loss(lp: &CtcLogProbs, target: &[TokenId]) -> Result<f64> {
    check_ctc_target(lp, target)?;
    let frames = lp.frames();
    // Blank-interleaved label sequence l'.
    let s_len = 2 * target.len() + 1;
    let ext = |s: usize| -> TokenId {
        if s.is_multiple_of(2) {
            BLANK
        } else {
            target[s / 2]
        }
    };
    if frames == 0 {
        return Ok(if target.is_empty() {
            0.0
        } else {
            f64::INFINITY
        });
    }
    let mut alpha = vec![LOG_ZERO; s_len];
    alpha[0] = lp.lp(0, BLANK);
    if s_len > 1 {
        alpha[1] = lp.lp(0, ext(1));
    }
    for t in 1..frames {
        let mut next = vec![LOG_ZERO; s_len];
        for s in 0..s_len {
            let mut acc = alpha[s];
            if s >= 1 {
                acc = log_add(acc, alpha[s - 1]);
            }
            if s >= 2 && ext(s) != BLANK && ext(s) != ext(s - 2) {
                acc = log_add(acc, alpha[s - 2]);
            }
            next[s] = if acc == LOG_ZERO {
                LOG_ZERO
            } else {
                acc + lp.lp(t, ext(s))
            };
        }
        alpha = next;
    }
    let mut total = alpha[s_len - 1];
    if s_len >= 2 {
        total = log_add(total, alpha[s_len - 2]);
    }
    Ok(if total == LOG_ZERO {
        f64::INFINITY
    } else {
        -total
    })
}

/// Forward arrays of one prefix depth. Index t means "after t emission
/// frames"; index 0 is the base case.
#[derive(Debug, Clone, PartialEq)]
struct PrefixRow {
    gamma_n: Vec<f64>,
    gamma_b: Vec<f64>,
}

/// Incremental CTC prefix-scoring state for one hypothesis.
///
/// `rows[j]` holds the forward arrays for `prefix[..j]`; keeping the whole
/// ancestry is what makes later frame extension exact. `psi` is the log
/// prefix probability of the full prefix over the frames seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcPrefixState {
    prefix: Vec<TokenId>,
    rows: Vec<PrefixRow>,
    psi: f64,
}

impl CtcPrefixState {
    pub fn prefix(&self) -> &[TokenId] {
        &self.prefix
    }

    pub fn frames_available(&self) -> usize {
        self.rows[0].gamma_b.len() - 1
    }

    /// Log probability that the collapsed emission begins with the prefix.
    pub fn prefix_logprob(&self) -> f64 {
        self.psi
    }

    /// Log probability that the collapsed emission equals the prefix exactly.
    pub fn complete_logprob(&self) -> f64 {
        let last = self.rows.last().expect("at least the empty-prefix row");
        let t = last.gamma_b.len() - 1;
        log_add(last.gamma_n[t], last.gamma_b[t])
    }

    fn phi(&self, depth: usize, t: usize, next: TokenId) -> f64 {
        let row = &self.rows[depth];
        let repeat = depth >= 1 && self.prefix[depth - 1] == next;
        if repeat {
            row.gamma_b[t]
        } else {
            log_add(row.gamma_b[t], row.gamma_n[t])
        }
    }

    /// Grows every ancestor row to the frames now present in `lp`.
    pub fn extend_frames(&mut self, lp: &CtcLogProbs) -> Result<()> {
        let have = self.frames_available();
        if lp.frames() < have {
            return Err(Error::Decode(format!(
                "log-probs hold {} frames but the state already saw {have}",
                lp.frames()
            )));
        }
        for t in have + 1..=lp.frames() {
            // Depth 0: blank-only continuation.
            let blank = lp.lp(t - 1, BLANK);
            let g0 = &mut self.rows[0];
            g0.gamma_b.push(g0.gamma_b[t - 1] + blank);
            g0.gamma_n.push(LOG_ZERO);
            // Deeper rows use the parent's freshly extended column.
            for depth in 1..self.rows.len() {
                let c = self.prefix[depth - 1];
                let grow = log_add(
                    self.rows[depth].gamma_n[t - 1],
                    self.phi(depth - 1, t - 1, c),
                );
                let gamma_n = if grow == LOG_ZERO {
                    LOG_ZERO
                } else {
                    grow + lp.lp(t - 1, c)
                };
                let stay = log_add(
                    self.rows[depth].gamma_b[t - 1],
                    self.rows[depth].gamma_n[t - 1],
                );
                let gamma_b = if stay == LOG_ZERO {
                    LOG_ZERO
                } else {
                    stay + blank
                };
                // The full prefix accumulates the new completion mass into psi.
                if depth == self.rows.len() - 1 {
                    let base = self.phi(depth - 1, t - 1, c);
                    if base != LOG_ZERO {
                        self.psi = log_add(self.psi, base + lp.lp(t - 1, c));
                    }
                }
                let row = &mut self.rows[depth];
                row.gamma_n.push(gamma_n);
                row.gamma_b.push(gamma_b);
            }
        }
        Ok(())
    }
}

/// Empty-prefix state over the frames currently in `lp`.
pub fn ctc_prefix_init(lp: &CtcLogProbs) -> CtcPrefixState {
    let frames = lp.frames();
    let mut gamma_b = Vec::with_capacity(frames + 1);
    gamma_b.push(0.0);
    for t in 0..frames {
        let prev = gamma_b[t];
        gamma_b.push(if prev == LOG_ZERO {
            LOG_ZERO
        } else {
            prev + lp.lp(t, BLANK)
        });
    }
    CtcPrefixState {
        prefix: Vec::new(),
        rows: vec![PrefixRow {
            gamma_n: vec![LOG_ZERO; frames + 1],
            gamma_b,
        }],
        psi: 0.0,
    }
}

fn check_state(lp: &CtcLogProbs, state: &CtcPrefixState, prefix: &[TokenId]) -> Result<()> {
    if state.prefix() != prefix {
        return Err(Error::Decode(
            "prefix state does not correspond to the given prefix".into(),
        ));
    }
    if state.frames_available() != lp.frames() {
        return Err(Error::Decode(format!(
            "state covers {} frames, log-probs hold {}; extend the state first",
            state.frames_available(),
            lp.frames()
        )));
    }
    if state.psi == LOG_ZERO {
        return Err(Error::DeadHypothesis(format!(
            "prefix {:?} has zero probability; it must not be extended",
            prefix
        )));
    }
    Ok(())
}

/// Extension DP shared by the public operation and the lenient path the
/// decoder uses for CTC-dead lineages it carries at μ = 0.
pub(crate) fn extend_prefix_dp(
    lp: &CtcLogProbs,
    state: &CtcPrefixState,
    token: TokenId,
) -> (CtcPrefixState, f64) {
    let frames = lp.frames();
    let parent_depth = state.rows.len() - 1;
    let mut gamma_n = vec![LOG_ZERO; frames + 1];
    let mut gamma_b = vec![LOG_ZERO; frames + 1];
    let mut psi_new = LOG_ZERO;
    for t in 1..=frames {
        let step = state.phi(parent_depth, t - 1, token);
        let p_tok = lp.lp(t - 1, token);
        let grow = log_add(gamma_n[t - 1], step);
        gamma_n[t] = if grow == LOG_ZERO {
            LOG_ZERO
        } else {
            grow + p_tok
        };
        let stay = log_add(gamma_b[t - 1], gamma_n[t - 1]);
        gamma_b[t] = if stay == LOG_ZERO {
            LOG_ZERO
        } else {
            stay + lp.lp(t - 1, BLANK)
        };
        if step != LOG_ZERO {
            psi_new = log_add(psi_new, step + p_tok);
        }
    }
    let mut next = state.clone();
    next.prefix.push(token);
    next.rows.push(PrefixRow { gamma_n, gamma_b });
    next.psi = psi_new;
    let cond = if psi_new == LOG_ZERO {
        LOG_ZERO
    } else {
        psi_new - state.psi
    };
    (next, cond)
}

/// Extends a prefix by one regular token. Returns the new state and the
/// log conditional probability
/// log p_prefix(prefix·token) − log p_prefix(prefix); −∞ marks a dead
/// extension the caller should prune.
pub fn ctc_prefix_extend(
    lp: &CtcLogProbs,
    state: &CtcPrefixState,
    prefix: &[TokenId],
    token: TokenId,
) -> Result<(CtcPrefixState, f64)> {
    check_state(lp, state, prefix)?;
    if token == BLANK || token == SOS_EOS {
        return Err(Error::Decode(format!(
            "CTC prefixes may only grow by regular tokens, got {token}"
        )));
    }
    if token >= lp.vocab() {
        return Err(Error::Decode(format!(
            "token {token} outside vocabulary of size {}",
            lp.vocab()
        )));
    }
    Ok(extend_prefix_dp(lp, state, token))
}

/// Log conditional probability that the emission terminates exactly at the
/// prefix: log p_complete(prefix) − log p_prefix(prefix).
pub fn ctc_prefix_eos(lp: &CtcLogProbs, state: &CtcPrefixState, prefix: &[TokenId]) -> Result<f64> {
    check_state(lp, state, prefix)?;
    let complete = state.complete_logprob();
    Ok(if complete == LOG_ZERO {
        LOG_ZERO
    } else {
        complete - state.psi
    })
}

/// Per-frame argmax, collapse repeats, drop blanks.
pub fn ctc_greedy_collapse(lp: &CtcLogProbs) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut last = BLANK;
    for row in lp.matrix().rows() {
        let mut best = 0usize;
        for (v, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = v;
            }
        }
        if best != BLANK && best != last {
            out.push(best);
        }
        last = best;
    }
    out
}

const ORACLE_MAX_FRAMES: usize = 8;
const ORACLE_MAX_VOCAB: usize = 5;

fn check_oracle_bounds(lp: &CtcLogProbs) -> Result<()> {
    if lp.frames() > ORACLE_MAX_FRAMES || lp.vocab() > ORACLE_MAX_VOCAB {
        return Err(Error::OracleBounds(format!(
            "enumeration limited to {ORACLE_MAX_FRAMES} frames × {ORACLE_MAX_VOCAB} vocab, got {} × {}",
            lp.frames(),
            lp.vocab()
        )));
    }
    Ok(())
}

fn enumerate_collapses(lp: &CtcLogProbs, mut visit: impl FnMut(&[TokenId], f64)) {
    let frames = lp.frames();
    let vocab = lp.vocab();
    let mut emission = vec![0usize; frames];
    let mut collapsed = Vec::with_capacity(frames);
    loop {
        let mut prob = 0.0;
        for (t, &v) in emission.iter().enumerate() {
            prob += lp.lp(t, v);
        }
        collapsed.clear();
        let mut last = BLANK;
        for &v in &emission {
            if v != BLANK && v != last {
                collapsed.push(v);
            }
            last = v;
        }
        visit(&collapsed, prob.exp());
        // Next emission sequence in lexicographic order.
        let mut at = frames;
        loop {
            if at == 0 {
                return;
            }
            at -= 1;
            emission[at] += 1;
            if emission[at] < vocab {
                break;
            }
            emission[at] = 0;
        }
    }
}

/// Enumeration oracle: probability that the collapsed emission begins
/// with `prefix`. Bounded to tiny instances.
pub fn brute_force_prefix_prob(lp: &CtcLogProbs, prefix: &[TokenId]) -> Result<f64> {
    check_oracle_bounds(lp)?;
    let mut total = 0.0;
    enumerate_collapses(lp, |collapsed, p| {
        if collapsed.len() >= prefix.len() && &collapsed[..prefix.len()] == prefix {
            total += p;
        }
    });
    Ok(total)
}

/// Enumeration oracle: probability that the collapsed emission equals
/// `target` exactly. Bounded to tiny instances.
pub fn brute_force_exact_prob(lp: &CtcLogProbs, target: &[TokenId]) -> Result<f64> {
    check_oracle_bounds(lp)?;
    let mut total = 0.0;
    enumerate_collapses(lp, |collapsed, p| {
        if collapsed == target {
            total += p;
        }
    });
    Ok(total)
}
