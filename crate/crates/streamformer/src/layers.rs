//! Shared dense-layer primitives: layer norm, multi-head attention,
//! position-wise feed-forward and sinusoidal position encoding.
//! Row convention: one time step per row, weights stored (out, in).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::params::{AttentionParams, FeedForwardParams, LayerNormParams};

const LN_EPS: f64 = 1e-12;

/// x · wᵀ for weights stored as (out, in).
pub(crate) fn linear(x: &ArrayView2<f64>, w: &Array2<f64>) -> Array2<f64> {
    x.dot(&w.t())
}

pub(crate) fn linear_vec(x: &ArrayView1<f64>, w: &Array2<f64>) -> Array1<f64> {
    w.dot(x)
}

pub(crate) fn layer_norm_row(row: &ArrayView1<f64>, p: &LayerNormParams) -> Array1<f64> {
    let d = row.len() as f64;
    let mean = row.sum() / d;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    let mut out = Array1::zeros(row.len());
    for (j, o) in out.iter_mut().enumerate() {
        *o = (row[j] - mean) * inv * p.gain[j] + p.bias[j];
    }
    out
}

pub(crate) fn layer_norm(x: &ArrayView2<f64>, p: &LayerNormParams) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        out.row_mut(i).assign(&layer_norm_row(&row, p));
    }
    out
}

pub(crate) fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

pub(crate) fn feed_forward(x: &ArrayView2<f64>, p: &FeedForwardParams) -> Array2<f64> {
    let mut hidden = linear(x, &p.w1);
    hidden += &p.b1;
    relu_inplace(&mut hidden);
    let mut out = linear(&hidden.view(), &p.w2);
    out += &p.b2;
    out
}

/// Attention masking: either every query sees every key, or query i sees
/// keys 0..=i (decoder self-attention).
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum AttnMask {
    Full,
    Causal,
}

fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Multi-head attention of `q_in` over `kv_in`.
pub(crate) fn multi_head_attention(
    q_in: &ArrayView2<f64>,
    kv_in: &ArrayView2<f64>,
    p: &AttentionParams,
    n_heads: usize,
    mask: AttnMask,
) -> Array2<f64> {
    let d_model = q_in.ncols();
    let head_dim = d_model / n_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let q = linear(q_in, &p.wq);
    let k = linear(kv_in, &p.wk);
    let v = linear(kv_in, &p.wv);
    let n_q = q.nrows();
    let n_k = k.nrows();

    let mut concat = Array2::zeros((n_q, d_model));
    for h in 0..n_heads {
        let cols = h * head_dim..(h + 1) * head_dim;
        let qh = q.slice(ndarray::s![.., cols.clone()]);
        let kh = k.slice(ndarray::s![.., cols.clone()]);
        let vh = v.slice(ndarray::s![.., cols.clone()]);
        let mut scores = qh.dot(&kh.t());
        scores *= scale;
        for (i, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
            if mask == AttnMask::Causal {
                for j in i + 1..n_k {
                    row[j] = f64::NEG_INFINITY;
                }
            }
            softmax_inplace(row.as_slice_mut().expect("contiguous score row"));
        }
        let out_h = scores.dot(&vh);
        concat.slice_mut(ndarray::s![.., cols]).assign(&out_h);
    }
    linear(&concat.view(), &p.wo)
}

/// Sinusoidal position encoding rows for the given absolute positions.
pub(crate) fn position_encoding(
    positions: impl Iterator<Item = usize>,
    d_model: usize,
) -> Array2<f64> {
    let positions: Vec<usize> = positions.collect();
    let mut pe = Array2::zeros((positions.len(), d_model));
    for (r, &pos) in positions.iter().enumerate() {
        for i in 0..d_model / 2 {
            let rate = (pos as f64) / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe[[r, 2 * i]] = rate.sin();
            pe[[r, 2 * i + 1]] = rate.cos();
        }
        if d_model % 2 == 1 {
            let i = d_model / 2;
            let rate = (pos as f64) / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe[[r, d_model - 1]] = rate.sin();
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::params::ModelParams;
    use ndarray::array;

    #[test]
    fn layer_norm_row_stats() {
        let p = LayerNormParams {
            gain: Array1::ones(4),
            bias: Array1::zeros(4),
        };
        let x = array![1.0, 2.0, 3.0, 4.0];
        let y = layer_norm_row(&x.view(), &p);
        let mean = y.sum() / 4.0;
        let var = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn attention_rows_are_convex_mixes() {
        // With wo = I and wv = I, each output row is a convex combination of
        // value rows, so it stays inside their coordinate-wise bounds.
        let config = ModelConfig::tiny(5);
        let mut params = ModelParams::init(&config, 3).unwrap();
        let attn = &mut params.encoder.layers[0].attn;
        attn.wv = Array2::eye(config.d_model);
        attn.wo = Array2::eye(config.d_model);
        let x = Array2::from_shape_fn((6, config.d_model), |(i, j)| {
            ((i * 7 + j) as f64 * 0.13).sin()
        });
        let out = multi_head_attention(&x.view(), &x.view(), attn, config.n_heads, AttnMask::Full);
        for col in 0..config.d_model {
            let lo = x.column(col).iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x
                .column(col)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            for &v in out.column(col) {
                assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn causal_mask_ignores_future_rows() {
        let config = ModelConfig::tiny(5);
        let params = ModelParams::init(&config, 9).unwrap();
        let attn = &params.decoder.layers[0].self_attn;
        let x = Array2::from_shape_fn((5, config.d_model), |(i, j)| {
            ((i + 2 * j) as f64 * 0.31).cos()
        });
        let full =
            multi_head_attention(&x.view(), &x.view(), attn, config.n_heads, AttnMask::Causal);
        let mut perturbed = x.clone();
        perturbed[[4, 0]] += 10.0;
        let out = multi_head_attention(
            &perturbed.view(),
            &perturbed.view(),
            attn,
            config.n_heads,
            AttnMask::Causal,
        );
        for i in 0..4 {
            for j in 0..config.d_model {
                assert_eq!(full[[i, j]], out[[i, j]], "row {i} changed");
            }
        }
    }

    #[test]
    fn position_encoding_distinguishes_positions() {
        let pe = position_encoding(0..4, 16);
        assert_eq!(pe.nrows(), 4);
        assert_ne!(pe.row(0), pe.row(1));
        // Position 0 is [0, 1, 0, 1, ...].
        for i in 0..8 {
            assert_eq!(pe[[0, 2 * i]], 0.0);
            assert_eq!(pe[[0, 2 * i + 1]], 1.0);
        }
    }
}
