//! Autoregressive Transformer decoder over the encoded blocks.
//!
//! All entry points are teacher-forced or single-step: the decoder never
//! samples. `DecoderState` carries per-layer self-attention keys/values so
//! a beam hypothesis can be extended one token at a time; with or without
//! the cache the distributions agree to floating-point noise.

use ndarray::{s, Array1, Array2};

use crate::encoder::EncodedBlocks;
use crate::error::{Error, Result};
use crate::layers::{
    feed_forward, layer_norm, layer_norm_row, linear_vec, multi_head_attention, position_encoding,
    AttnMask,
};
use crate::numerics::{log_softmax, log_softmax_inplace};
use crate::params::{DecoderLayerParams, ModelParams};
use crate::vocab::{TokenId, SOS_EOS};

fn check_tokens(params: &ModelParams, tokens: &[TokenId]) -> Result<()> {
    for &t in tokens {
        if t >= params.config.vocab_size {
            return Err(Error::Decode(format!(
                "token id {t} outside vocabulary of size {}",
                params.config.vocab_size
            )));
        }
    }
    Ok(())
}

fn check_prefix(params: &ModelParams, encoded: &EncodedBlocks, prefix: &[TokenId]) -> Result<()> {
    if encoded.frames() == 0 {
        return Err(Error::EmptyInput(
            "decoder needs at least one encoded frame".into(),
        ));
    }
    if prefix.first() != Some(&SOS_EOS) {
        return Err(Error::Decode("decoder prefix must start with sos".into()));
    }
    check_tokens(params, prefix)
}

fn embed_rows(params: &ModelParams, tokens: &[TokenId], first_pos: usize) -> Array2<f64> {
    let d = params.config.d_model;
    let scale = (d as f64).sqrt();
    let mut x = Array2::zeros((tokens.len(), d));
    for (j, &t) in tokens.iter().enumerate() {
        x.row_mut(j).assign(&params.decoder.embed.row(t));
    }
    x *= scale;
    x += &position_encoding(first_pos..first_pos + tokens.len(), d);
    x
}

/// Teacher-forced forward pass: row j holds log p(· | input[0..=j], encoded).
fn forward_logprobs(
    params: &ModelParams,
    encoded: &EncodedBlocks,
    input: &[TokenId],
) -> Result<Array2<f64>> {
    let config = &params.config;
    let n_heads = config.n_heads;
    let enc = encoded.top();
    let mut x = embed_rows(params, input, 0);
    for layer in &params.decoder.layers {
        let normed = layer_norm(&x.view(), &layer.ln1);
        x += &multi_head_attention(
            &normed.view(),
            &normed.view(),
            &layer.self_attn,
            n_heads,
            AttnMask::Causal,
        );
        let normed = layer_norm(&x.view(), &layer.ln2);
        x += &multi_head_attention(
            &normed.view(),
            &enc,
            &layer.cross_attn,
            n_heads,
            AttnMask::Full,
        );
        let normed = layer_norm(&x.view(), &layer.ln3);
        x += &feed_forward(&normed.view(), &layer.ff);
    }
    let top = layer_norm(&x.view(), &params.decoder.final_norm);
    let mut logits = top.dot(&params.decoder.out_w.t());
    logits += &params.decoder.out_b;
    for mut row in logits.rows_mut() {
        log_softmax_inplace(row.as_slice_mut().expect("contiguous logits row"));
    }
    Ok(logits)
}

/// Next-token log-probabilities given a prefix that starts with sos.
pub fn decoder_step(
    params: &ModelParams,
    encoded: &EncodedBlocks,
    prefix: &[TokenId],
) -> Result<Vec<f64>> {
    check_prefix(params, encoded, prefix)?;
    let lp = forward_logprobs(params, encoded, prefix)?;
    Ok(lp.row(lp.nrows() - 1).to_vec())
}

/// Teacher-forced log-probability of `y`, which must end with eos:
/// Σ_j log p(y_j | sos, y_{1:j−1}, encoded).
pub fn sequence_logprob(
    params: &ModelParams,
    encoded: &EncodedBlocks,
    y: &[TokenId],
) -> Result<f64> {
    if y.last() != Some(&SOS_EOS) {
        return Err(Error::Decode("sequence must end with eos".into()));
    }
    check_tokens(params, y)?;
    if encoded.frames() == 0 {
        return Err(Error::EmptyInput(
            "decoder needs at least one encoded frame".into(),
        ));
    }
    let mut input = Vec::with_capacity(y.len());
    input.push(SOS_EOS);
    input.extend_from_slice(&y[..y.len() - 1]);
    let lp = forward_logprobs(params, encoded, &input)?;
    Ok(y.iter().enumerate().map(|(j, &t)| lp[[j, t]]).sum())
}

/// Incremental decoding state: the token prefix plus cached per-layer
/// self-attention keys/values. The cache is tied to the number of encoded
/// frames it was built against; rebuild it after new blocks arrive.
#[derive(Debug, Clone)]
pub struct DecoderState {
    prefix: Vec<TokenId>,
    keys: Vec<Array2<f64>>,
    vals: Vec<Array2<f64>>,
    encoded_frames: usize,
}

impl DecoderState {
    /// Runs the full prefix once, caching keys/values per position, and
    /// returns the state together with the per-position log-probabilities.
    pub fn build(
        params: &ModelParams,
        encoded: &EncodedBlocks,
        prefix: &[TokenId],
    ) -> Result<(Self, Array2<f64>)> {
        check_prefix(params, encoded, prefix)?;
        let config = &params.config;
        let mut state = DecoderState {
            prefix: Vec::new(),
            keys: vec![Array2::zeros((0, config.d_model)); config.dec_layers],
            vals: vec![Array2::zeros((0, config.d_model)); config.dec_layers],
            encoded_frames: encoded.frames(),
        };
        let mut rows = Array2::zeros((prefix.len(), config.vocab_size));
        for (j, &tok) in prefix.iter().enumerate() {
            let lp = state.push_token(params, encoded, tok, j)?;
            rows.row_mut(j).assign(&Array1::from_vec(lp));
        }
        Ok((state, rows))
    }

    /// Extends the prefix by one token, returning the new state and the
    /// next-token distribution. Fails if the encoded context grew since
    /// the state was built.
    pub fn advance(
        &self,
        params: &ModelParams,
        encoded: &EncodedBlocks,
        token: TokenId,
    ) -> Result<(Self, Vec<f64>)> {
        if encoded.frames() != self.encoded_frames {
            return Err(Error::Decode(format!(
                "decoder state was built over {} encoded frames, now {}; rebuild it",
                self.encoded_frames,
                encoded.frames()
            )));
        }
        check_tokens(params, &[token])?;
        let mut next = self.clone();
        let pos = next.prefix.len();
        let lp = next.push_token(params, encoded, token, pos)?;
        Ok((next, lp))
    }

    pub fn prefix(&self) -> &[TokenId] {
        &self.prefix
    }

    /// Appends one position: projects it through every layer against the
    /// cached keys/values and returns the log-probabilities after it.
    fn push_token(
        &mut self,
        params: &ModelParams,
        encoded: &EncodedBlocks,
        token: TokenId,
        pos: usize,
    ) -> Result<Vec<f64>> {
        let config = &params.config;
        let n_heads = config.n_heads;
        let head_dim = config.head_dim();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let enc = encoded.top();

        let mut x = embed_rows(params, &[token], pos).row(0).to_owned();
        for (l, layer) in params.decoder.layers.iter().enumerate() {
            let normed = layer_norm_row(&x.view(), &layer.ln1);
            let k_new = linear_vec(&normed.view(), &layer.self_attn.wk);
            let v_new = linear_vec(&normed.view(), &layer.self_attn.wv);
            self.keys[l]
                .push_row(k_new.view())
                .expect("key cache row append");
            self.vals[l]
                .push_row(v_new.view())
                .expect("value cache row append");
            x += &attend_row(
                &normed,
                &layer.self_attn,
                &self.keys[l],
                &self.vals[l],
                n_heads,
                scale,
            );
            let normed = layer_norm_row(&x.view(), &layer.ln2);
            let cross = multi_head_attention(
                &normed.view().insert_axis(ndarray::Axis(0)),
                &enc,
                &layer.cross_attn,
                n_heads,
                AttnMask::Full,
            );
            x += &cross.row(0);
            let normed = layer_norm_row(&x.view(), &layer.ln3);
            x += &feed_forward_row(&normed, layer);
        }
        self.prefix.push(token);
        let top = layer_norm_row(&x.view(), &params.decoder.final_norm);
        let mut logits = linear_vec(&top.view(), &params.decoder.out_w);
        logits += &params.decoder.out_b;
        Ok(log_softmax(logits.as_slice().expect("contiguous logits")))
    }
}

fn attend_row(
    normed_q: &Array1<f64>,
    attn: &crate::params::AttentionParams,
    keys: &Array2<f64>,
    vals: &Array2<f64>,
    n_heads: usize,
    scale: f64,
) -> Array1<f64> {
    let d_model = normed_q.len();
    let head_dim = d_model / n_heads;
    let q = linear_vec(&normed_q.view(), &attn.wq);
    let mut concat = Array1::zeros(d_model);
    for h in 0..n_heads {
        let cols = h * head_dim..(h + 1) * head_dim;
        let qh = q.slice(s![cols.clone()]);
        let kh = keys.slice(s![.., cols.clone()]);
        let vh = vals.slice(s![.., cols.clone()]);
        let mut scores: Vec<f64> = kh.rows().into_iter().map(|k| k.dot(&qh) * scale).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in scores.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let mut out_h = Array1::<f64>::zeros(head_dim);
        for (w, v) in scores.iter().zip(vh.rows()) {
            out_h.scaled_add(w / sum, &v);
        }
        concat.slice_mut(s![cols]).assign(&out_h);
    }
    linear_vec(&concat.view(), &attn.wo)
}

fn feed_forward_row(normed: &Array1<f64>, layer: &DecoderLayerParams) -> Array1<f64> {
    let mut hidden = linear_vec(&normed.view(), &layer.ff.w1);
    hidden += &layer.ff.b1;
    hidden.mapv_inplace(|v| v.max(0.0));
    let mut out = linear_vec(&hidden.view(), &layer.ff.w2);
    out += &layer.ff.b2;
    out
}
