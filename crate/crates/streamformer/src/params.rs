//! Model parameters: deterministic initialization, shape audit and the
//! binary weight format.
//!
//! Initialization draws every weight matrix from a ChaCha8 stream seeded
//! with the user seed: each value is `(2u − 1)/√d_model` with
//! `u = next_u64() >> 11 / 2^53`, rounded to f32 precision. Layer-norm
//! gains start at exactly 1, every bias at 0. Tensors are filled (and
//! serialized) in one fixed walk order, so identical `(config, seed)`
//! pairs produce bit-identical parameters and the f32 on-disk format
//! round-trips losslessly.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Magic bytes opening a weight file.
pub const WEIGHT_MAGIC: &[u8; 5] = b"BSTW1";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Strided front end: two kernel-2 stride-2 convolutions (stored as the
/// two kernel taps of each), then a linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleParams {
    pub conv1_k0: Array2<f64>,
    pub conv1_k1: Array2<f64>,
    pub conv1_b: Array1<f64>,
    pub conv2_k0: Array2<f64>,
    pub conv2_k1: Array2<f64>,
    pub conv2_b: Array1<f64>,
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ff: FeedForwardParams,
    /// Projection applied to a block summary before it is handed to the
    /// next block as this layer's context embedding.
    pub ctx_proj: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub ln1: LayerNormParams,
    pub self_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln3: LayerNormParams,
    pub ff: FeedForwardParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub subsample: SubsampleParams,
    pub layers: Vec<EncoderLayerParams>,
    pub final_norm: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub embed: Array2<f64>,
    pub layers: Vec<DecoderLayerParams>,
    pub final_norm: LayerNormParams,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcHeadParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// All weights of the encoder, decoder and the two CTC heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub ctc_main: CtcHeadParams,
    pub ctc_aux: CtcHeadParams,
}

/// Borrowed view of one parameter tensor during a walk.
pub enum TensorRef<'a> {
    Vec(&'a Array1<f64>),
    Mat(&'a Array2<f64>),
}

enum TensorMut<'a> {
    Vec(&'a mut Array1<f64>),
    Mat(&'a mut Array2<f64>),
}

impl TensorRef<'_> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Vec(v) => vec![v.len()],
            TensorRef::Mat(m) => m.shape().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorRef::Vec(v) => v.len(),
            TensorRef::Mat(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// One body for both walk directions keeps the serialization order single-sourced.
macro_rules! walk_tensors {
    ($self:expr, $f:expr, $iter:ident, $Wrap:ident $(, $mut_:tt)?) => {{
        let f = $f;
        {
            let s = & $($mut_)? $self.encoder.subsample;
            f("subsample.conv1_k0".to_string(), $Wrap::Mat(& $($mut_)? s.conv1_k0));
            f("subsample.conv1_k1".to_string(), $Wrap::Mat(& $($mut_)? s.conv1_k1));
            f("subsample.conv1_b".to_string(), $Wrap::Vec(& $($mut_)? s.conv1_b));
            f("subsample.conv2_k0".to_string(), $Wrap::Mat(& $($mut_)? s.conv2_k0));
            f("subsample.conv2_k1".to_string(), $Wrap::Mat(& $($mut_)? s.conv2_k1));
            f("subsample.conv2_b".to_string(), $Wrap::Vec(& $($mut_)? s.conv2_b));
            f("subsample.proj_w".to_string(), $Wrap::Mat(& $($mut_)? s.proj_w));
            f("subsample.proj_b".to_string(), $Wrap::Vec(& $($mut_)? s.proj_b));
        }
        for (i, layer) in $self.encoder.layers.$iter().enumerate() {
            let p = format!("encoder.{i}");
            f(format!("{p}.ln1.gain"), $Wrap::Vec(& $($mut_)? layer.ln1.gain));
            f(format!("{p}.ln1.bias"), $Wrap::Vec(& $($mut_)? layer.ln1.bias));
            f(format!("{p}.attn.wq"), $Wrap::Mat(& $($mut_)? layer.attn.wq));
            f(format!("{p}.attn.wk"), $Wrap::Mat(& $($mut_)? layer.attn.wk));
            f(format!("{p}.attn.wv"), $Wrap::Mat(& $($mut_)? layer.attn.wv));
            f(format!("{p}.attn.wo"), $Wrap::Mat(& $($mut_)? layer.attn.wo));
            f(format!("{p}.ln2.gain"), $Wrap::Vec(& $($mut_)? layer.ln2.gain));
            f(format!("{p}.ln2.bias"), $Wrap::Vec(& $($mut_)? layer.ln2.bias));
            f(format!("{p}.ff.w1"), $Wrap::Mat(& $($mut_)? layer.ff.w1));
            f(format!("{p}.ff.b1"), $Wrap::Vec(& $($mut_)? layer.ff.b1));
            f(format!("{p}.ff.w2"), $Wrap::Mat(& $($mut_)? layer.ff.w2));
            f(format!("{p}.ff.b2"), $Wrap::Vec(& $($mut_)? layer.ff.b2));
            f(format!("{p}.ctx_proj"), $Wrap::Mat(& $($mut_)? layer.ctx_proj));
        }
        f("encoder.final_norm.gain".to_string(), $Wrap::Vec(& $($mut_)? $self.encoder.final_norm.gain));
        f("encoder.final_norm.bias".to_string(), $Wrap::Vec(& $($mut_)? $self.encoder.final_norm.bias));
        f("decoder.embed".to_string(), $Wrap::Mat(& $($mut_)? $self.decoder.embed));
        for (i, layer) in $self.decoder.layers.$iter().enumerate() {
            let p = format!("decoder.{i}");
            f(format!("{p}.ln1.gain"), $Wrap::Vec(& $($mut_)? layer.ln1.gain));
            f(format!("{p}.ln1.bias"), $Wrap::Vec(& $($mut_)? layer.ln1.bias));
            f(format!("{p}.self_attn.wq"), $Wrap::Mat(& $($mut_)? layer.self_attn.wq));
            f(format!("{p}.self_attn.wk"), $Wrap::Mat(& $($mut_)? layer.self_attn.wk));
            f(format!("{p}.self_attn.wv"), $Wrap::Mat(& $($mut_)? layer.self_attn.wv));
            f(format!("{p}.self_attn.wo"), $Wrap::Mat(& $($mut_)? layer.self_attn.wo));
            f(format!("{p}.ln2.gain"), $Wrap::Vec(& $($mut_)? layer.ln2.gain));
            f(format!("{p}.ln2.bias"), $Wrap::Vec(& $($mut_)? layer.ln2.bias));
            f(format!("{p}.cross_attn.wq"), $Wrap::Mat(& $($mut_)? layer.cross_attn.wq));
            f(format!("{p}.cross_attn.wk"), $Wrap::Mat(& $($mut_)? layer.cross_attn.wk));
            f(format!("{p}.cross_attn.wv"), $Wrap::Mat(& $($mut_)? layer.cross_attn.wv));
            f(format!("{p}.cross_attn.wo"), $Wrap::Mat(& $($mut_)? layer.cross_attn.wo));
            f(format!("{p}.ln3.gain"), $Wrap::Vec(& $($mut_)? layer.ln3.gain));
            f(format!("{p}.ln3.bias"), $Wrap::Vec(& $($mut_)? layer.ln3.bias));
            f(format!("{p}.ff.w1"), $Wrap::Mat(& $($mut_)? layer.ff.w1));
            f(format!("{p}.ff.b1"), $Wrap::Vec(& $($mut_)? layer.ff.b1));
            f(format!("{p}.ff.w2"), $Wrap::Mat(& $($mut_)? layer.ff.w2));
            f(format!("{p}.ff.b2"), $Wrap::Vec(& $($mut_)? layer.ff.b2));
        }
        f("decoder.final_norm.gain".to_string(), $Wrap::Vec(& $($mut_)? $self.decoder.final_norm.gain));
        f("decoder.final_norm.bias".to_string(), $Wrap::Vec(& $($mut_)? $self.decoder.final_norm.bias));
        f("decoder.out_w".to_string(), $Wrap::Mat(& $($mut_)? $self.decoder.out_w));
        f("decoder.out_b".to_string(), $Wrap::Vec(& $($mut_)? $self.decoder.out_b));
        f("ctc_main.w".to_string(), $Wrap::Mat(& $($mut_)? $self.ctc_main.w));
        f("ctc_main.b".to_string(), $Wrap::Vec(& $($mut_)? $self.ctc_main.b));
        f("ctc_aux.w".to_string(), $Wrap::Mat(& $($mut_)? $self.ctc_aux.w));
        f("ctc_aux.b".to_string(), $Wrap::Vec(& $($mut_)? $self.ctc_aux.b));
    }};
}

fn ln_new(d: usize) -> LayerNormParams {
    LayerNormParams {
        gain: Array1::ones(d),
        bias: Array1::zeros(d),
    }
}

fn zeros_attn(d: usize) -> AttentionParams {
    AttentionParams {
        wq: Array2::zeros((d, d)),
        wk: Array2::zeros((d, d)),
        wv: Array2::zeros((d, d)),
        wo: Array2::zeros((d, d)),
    }
}

fn zeros_ff(d: usize, ff: usize) -> FeedForwardParams {
    FeedForwardParams {
        w1: Array2::zeros((ff, d)),
        b1: Array1::zeros(ff),
        w2: Array2::zeros((d, ff)),
        b2: Array1::zeros(d),
    }
}

impl ModelParams {
    fn zeroed(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let v = config.vocab_size;
        let f = config.feature_dim;
        let encoder = EncoderParams {
            subsample: SubsampleParams {
                conv1_k0: Array2::zeros((d, f)),
                conv1_k1: Array2::zeros((d, f)),
                conv1_b: Array1::zeros(d),
                conv2_k0: Array2::zeros((d, d)),
                conv2_k1: Array2::zeros((d, d)),
                conv2_b: Array1::zeros(d),
                proj_w: Array2::zeros((d, d)),
                proj_b: Array1::zeros(d),
            },
            layers: (0..config.enc_layers)
                .map(|_| EncoderLayerParams {
                    ln1: ln_new(d),
                    attn: zeros_attn(d),
                    ln2: ln_new(d),
                    ff: zeros_ff(d, config.ff_dim),
                    ctx_proj: Array2::zeros((d, d)),
                })
                .collect(),
            final_norm: ln_new(d),
        };
        let decoder = DecoderParams {
            embed: Array2::zeros((v, d)),
            layers: (0..config.dec_layers)
                .map(|_| DecoderLayerParams {
                    ln1: ln_new(d),
                    self_attn: zeros_attn(d),
                    ln2: ln_new(d),
                    cross_attn: zeros_attn(d),
                    ln3: ln_new(d),
                    ff: zeros_ff(d, config.ff_dim),
                })
                .collect(),
            final_norm: ln_new(d),
            out_w: Array2::zeros((v, d)),
            out_b: Array1::zeros(v),
        };
        ModelParams {
            config: config.clone(),
            encoder,
            decoder,
            ctc_main: CtcHeadParams {
                w: Array2::zeros((v, d)),
                b: Array1::zeros(v),
            },
            ctc_aux: CtcHeadParams {
                w: Array2::zeros((v, d)),
                b: Array1::zeros(v),
            },
        }
    }

    /// Deterministic initialization: a pure function of `(config, seed)`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeroed(config);
        let bound = 1.0 / (config.d_model as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = move || {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            ((2.0 * u - 1.0) * bound) as f32 as f64
        };
        params.visit_mut(&mut |_, tensor| {
            // Weight matrices are random; gains stay 1 and biases 0.
            if let TensorMut::Mat(m) = tensor {
                for x in m.iter_mut() {
                    *x = draw();
                }
            }
        });
        Ok(params)
    }

    /// Walks every tensor in the fixed serialization order.
    pub fn visit<F: FnMut(String, TensorRef<'_>)>(&self, f: &mut F) {
        walk_tensors!(self, f, iter, TensorRef);
    }

    fn visit_mut<F: FnMut(String, TensorMut<'_>)>(&mut self, f: &mut F) {
        walk_tensors!(self, f, iter_mut, TensorMut, mut);
    }

    /// Shapes every tensor must have under `config`, in walk order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        Self::zeroed(config).visit(&mut |name, t| shapes.push((name, t.shape())));
        shapes
    }

    /// Walks every parameter and asserts its shape is consistent with the
    /// configuration.
    pub fn audit_shapes(&self) -> Result<()> {
        self.config.validate()?;
        let expected = Self::expected_shapes(&self.config);
        let mut actual = Vec::new();
        self.visit(&mut |name, t| actual.push((name, t.shape())));
        if actual.len() != expected.len() {
            return Err(Error::Shape(format!(
                "parameter count {} does not match the {} derived from the config",
                actual.len(),
                expected.len()
            )));
        }
        for ((name, got), (want_name, want)) in actual.iter().zip(&expected) {
            if name != want_name || got != want {
                return Err(Error::Shape(format!(
                    "tensor {name}: shape {got:?}, expected {want_name} {want:?}"
                )));
            }
        }
        Ok(())
    }

    fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// Serializes header and tensors to the binary little-endian format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(5 + 40 + 4 * self.scalar_count());
        out.extend_from_slice(WEIGHT_MAGIC);
        for field in [
            c.d_model,
            c.n_heads,
            c.ff_dim,
            c.enc_layers,
            c.dec_layers,
            c.intermediate_layer,
            c.feature_dim,
            c.subsample_factor,
            c.vocab_size,
            c.frame_ms as usize,
        ] {
            out.extend_from_slice(&(field as u32).to_le_bytes());
        }
        self.visit(&mut |_, t| {
            let mut push = |x: f64| out.extend_from_slice(&(x as f32).to_le_bytes());
            match t {
                TensorRef::Vec(v) => v.iter().for_each(|&x| push(x)),
                TensorRef::Mat(m) => m.iter().for_each(|&x| push(x)),
            }
        });
        out
    }

    /// Parses the binary format produced by [`ModelParams::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = 5 + 10 * 4;
        if bytes.len() < header {
            return Err(Error::WeightFile("file shorter than the header".into()));
        }
        if &bytes[..5] != WEIGHT_MAGIC {
            return Err(Error::WeightFile(format!(
                "bad magic {:?}, expected {WEIGHT_MAGIC:?}",
                &bytes[..5]
            )));
        }
        let mut ints = [0u32; 10];
        for (i, v) in ints.iter_mut().enumerate() {
            let at = 5 + 4 * i;
            *v = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        }
        let config = ModelConfig {
            d_model: ints[0] as usize,
            n_heads: ints[1] as usize,
            ff_dim: ints[2] as usize,
            enc_layers: ints[3] as usize,
            dec_layers: ints[4] as usize,
            intermediate_layer: ints[5] as usize,
            feature_dim: ints[6] as usize,
            subsample_factor: ints[7] as usize,
            vocab_size: ints[8] as usize,
            frame_ms: ints[9],
        };
        config
            .validate()
            .map_err(|e| Error::WeightFile(format!("invalid config in header: {e}")))?;
        let mut params = Self::zeroed(&config);
        let want = header + 4 * params.scalar_count();
        if bytes.len() != want {
            return Err(Error::WeightFile(format!(
                "file holds {} bytes, config requires exactly {want}",
                bytes.len()
            )));
        }
        let mut at = header;
        let mut take = |x: &mut f64| {
            *x = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
            at += 4;
        };
        params.visit_mut(&mut |_, t| match t {
            TensorMut::Vec(v) => v.iter_mut().for_each(&mut take),
            TensorMut::Mat(m) => m.iter_mut().for_each(&mut take),
        });
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
