//! Contextual block encoding.
//!
//! The input features are subsampled by 4, split into overlapping blocks
//! and encoded block by block. Each encoder layer attends over its block
//! window plus one context embedding inherited from the previous block;
//! the context slot's output, passed through the layer's context
//! projection, becomes the embedding handed to the next block. The first
//! block has no previous context: it attends over its window only and
//! seeds the handover by mean-pooling each layer's input frames. An
//! offline full-attention encoder is provided as the reference path.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::layers::{
    feed_forward, layer_norm, linear_vec, multi_head_attention, position_encoding, relu_inplace,
    AttnMask,
};
use crate::params::{EncoderLayerParams, ModelParams};

/// One block window over post-subsampling frame indices. Ranges are
/// end-exclusive; the central range is the slice of the window whose
/// outputs are emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockWindow {
    pub start: usize,
    pub end: usize,
    pub central_start: usize,
    pub central_end: usize,
}

impl BlockWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Partition of `total_frames` post-subsampling frames into overlapping
/// block windows with non-overlapping central output ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSchedule {
    pub block_size: usize,
    pub hop: usize,
    pub look_ahead: usize,
    pub total_frames: usize,
    pub windows: Vec<BlockWindow>,
}

/// Window of block `idx` under the given geometry, without knowing the
/// total frame count. Valid for blocks whose look-ahead fits the stream.
pub(crate) fn open_window(
    idx: usize,
    block_size: usize,
    hop: usize,
    look_ahead: usize,
) -> BlockWindow {
    let central_start = idx * hop;
    let central_end = central_start + hop;
    let left = block_size - hop - look_ahead;
    BlockWindow {
        start: central_start.saturating_sub(left),
        end: central_end + look_ahead,
        central_start,
        central_end,
    }
}

/// Builds the block partition: block i emits central frames
/// [i·hop, min((i+1)·hop, T)) inside a window extended by the left history
/// (block_size − hop − look_ahead) and the look-ahead, both clipped to the
/// stream. The number of blocks is ceil(T / hop).
pub fn make_block_schedule(
    total_frames: usize,
    block_size: usize,
    hop: usize,
    look_ahead: usize,
) -> Result<BlockSchedule> {
    if total_frames == 0 {
        return Err(Error::EmptyInput("schedule over zero frames".into()));
    }
    if hop == 0 {
        return Err(Error::Config("hop must be at least 1".into()));
    }
    if hop + look_ahead > block_size {
        return Err(Error::Config(format!(
            "hop ({hop}) + look_ahead ({look_ahead}) must not exceed block_size ({block_size})"
        )));
    }
    let n_blocks = total_frames.div_ceil(hop);
    let windows = (0..n_blocks)
        .map(|i| {
            let open = open_window(i, block_size, hop, look_ahead);
            BlockWindow {
                start: open.start.min(total_frames),
                end: open.end.min(total_frames),
                central_start: open.central_start,
                central_end: open.central_end.min(total_frames),
            }
        })
        .collect();
    Ok(BlockSchedule {
        block_size,
        hop,
        look_ahead,
        total_frames,
        windows,
    })
}

impl BlockSchedule {
    pub fn n_blocks(&self) -> usize {
        self.windows.len()
    }

    /// Last frame (exclusive) the encoder reads to produce block `idx`.
    pub fn window_end(&self, idx: usize) -> usize {
        self.windows[idx].end
    }
}

/// Strided convolution front end: features (T_f × feature_dim) to frames
/// (⌊T_f/4⌋ × d_model). Position encoding is added later, per window.
pub fn subsample(params: &ModelParams, features: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let sub = &params.encoder.subsample;
    let config = &params.config;
    if features.ncols() != config.feature_dim {
        return Err(Error::Shape(format!(
            "feature dim {} does not match configured {}",
            features.ncols(),
            config.feature_dim
        )));
    }
    let t_f = features.nrows();
    if t_f < config.subsample_factor {
        return Err(Error::Shape(format!(
            "input of {t_f} frames is shorter than the receptive field ({})",
            config.subsample_factor
        )));
    }
    let conv = |x: &Array2<f64>, k0: &Array2<f64>, k1: &Array2<f64>, b: &Array1<f64>| {
        let t_out = x.nrows() / 2;
        let mut out = Array2::zeros((t_out, k0.nrows()));
        for t in 0..t_out {
            let y = k0.dot(&x.row(2 * t)) + k1.dot(&x.row(2 * t + 1)) + b;
            out.row_mut(t).assign(&y);
        }
        relu_inplace(&mut out);
        out
    };
    let h1 = conv(
        &features.to_owned(),
        &sub.conv1_k0,
        &sub.conv1_k1,
        &sub.conv1_b,
    );
    let h2 = conv(&h1, &sub.conv2_k0, &sub.conv2_k1, &sub.conv2_b);
    let mut out = h2.dot(&sub.proj_w.t());
    out += &sub.proj_b;
    Ok(out)
}

/// Per-layer context embeddings carried from one block to the next.
/// The designated initial state (before any block) is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextState {
    layers: Vec<Array1<f64>>,
}

impl ContextState {
    /// State fed to the first block: no context yet.
    pub fn initial() -> Self {
        ContextState { layers: Vec::new() }
    }

    pub fn is_initial(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, l: usize) -> Option<&Array1<f64>> {
        self.layers.get(l)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

fn pooled_context(ctx_proj: &Array2<f64>, frames: &ArrayView2<f64>) -> Result<Array1<f64>> {
    if frames.nrows() == 0 {
        return Err(Error::EmptyInput(
            "context pooling over an empty block".into(),
        ));
    }
    let mean = frames.mean_axis(Axis(0)).expect("non-empty block");
    Ok(linear_vec(&mean.view(), ctx_proj))
}

/// Context embedding seeded from a block's input frames: mean over the
/// frame vectors, then the first layer's context projection.
pub fn init_context(params: &ModelParams, block_input: &ArrayView2<f64>) -> Result<Array1<f64>> {
    pooled_context(&params.encoder.layers[0].ctx_proj, block_input)
}

fn encoder_layer(layer: &EncoderLayerParams, x: &Array2<f64>, n_heads: usize) -> Array2<f64> {
    let normed = layer_norm(&x.view(), &layer.ln1);
    let mut x = x + &multi_head_attention(
        &normed.view(),
        &normed.view(),
        &layer.attn,
        n_heads,
        AttnMask::Full,
    );
    let normed = layer_norm(&x.view(), &layer.ln2);
    x += &feed_forward(&normed.view(), &layer.ff);
    x
}

/// Output of encoding a window: emitted central rows from the top layer
/// and the intermediate tap, plus the handover context.
struct WindowOutput {
    top_central: Array2<f64>,
    layer_m_central: Array2<f64>,
    ctx: ContextState,
}

fn encode_window(
    params: &ModelParams,
    window: BlockWindow,
    window_frames: &ArrayView2<f64>,
    ctx: &ContextState,
) -> Result<WindowOutput> {
    let config = &params.config;
    if window_frames.nrows() != window.len() || window.is_empty() {
        return Err(Error::Shape(format!(
            "window [{}, {}) expects {} frames, got {}",
            window.start,
            window.end,
            window.len(),
            window_frames.nrows()
        )));
    }
    if !ctx.is_initial() && ctx.n_layers() != config.enc_layers {
        return Err(Error::Shape(format!(
            "context state carries {} layers, encoder has {}",
            ctx.n_layers(),
            config.enc_layers
        )));
    }
    let c0 = window.central_start - window.start;
    let c1 = window.central_end - window.start;

    let mut x = window_frames.to_owned();
    x += &position_encoding(window.start..window.end, config.d_model);

    let mut next_ctx = Vec::with_capacity(config.enc_layers);
    let mut layer_m_central = None;
    for (l, layer) in params.encoder.layers.iter().enumerate() {
        x = if let Some(c_in) = ctx.layer(l) {
            // Prepend the inherited context embedding; its output slot,
            // projected, becomes the context for the next block.
            let mut aug = Array2::zeros((x.nrows() + 1, config.d_model));
            aug.row_mut(0).assign(c_in);
            aug.slice_mut(s![1.., ..]).assign(&x);
            let aug = encoder_layer(layer, &aug, config.n_heads);
            next_ctx.push(linear_vec(&aug.row(0), &layer.ctx_proj));
            aug.slice(s![1.., ..]).to_owned()
        } else {
            // First block: nothing to inherit; seed the handover from the
            // pooled layer input instead.
            next_ctx.push(pooled_context(&layer.ctx_proj, &x.view())?);
            encoder_layer(layer, &x, config.n_heads)
        };
        if l + 1 == config.intermediate_layer {
            layer_m_central = Some(x.slice(s![c0..c1, ..]).to_owned());
        }
    }
    let top = layer_norm(&x.view(), &params.encoder.final_norm);
    Ok(WindowOutput {
        top_central: top.slice(s![c0..c1, ..]).to_owned(),
        layer_m_central: layer_m_central.expect("intermediate_layer validated in [1, enc_layers]"),
        ctx: ContextState { layers: next_ctx },
    })
}

/// Encodes one block of a schedule. `window_frames` must be exactly the
/// frames of the block's window; `ctx` is the state handed over from the
/// previous block (the initial state for block 0). Returns the central
/// top-layer rows, the central intermediate-tap rows and the new context.
pub fn encode_block(
    params: &ModelParams,
    schedule: &BlockSchedule,
    block_idx: usize,
    window_frames: &ArrayView2<f64>,
    ctx: &ContextState,
) -> Result<(Array2<f64>, Array2<f64>, ContextState)> {
    let window = *schedule.windows.get(block_idx).ok_or_else(|| {
        Error::Shape(format!(
            "block {block_idx} out of range ({} blocks)",
            schedule.n_blocks()
        ))
    })?;
    let out = encode_window(params, window, window_frames, ctx)?;
    Ok((out.top_central, out.layer_m_central, out.ctx))
}

/// Full-attention offline encoder over all frames. Returns the top-layer
/// outputs and the intermediate-tap outputs used by the auxiliary head.
pub fn encode_full(
    params: &ModelParams,
    frames: &ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let config = &params.config;
    if frames.nrows() == 0 {
        return Err(Error::EmptyInput("encode_full over zero frames".into()));
    }
    if frames.ncols() != config.d_model {
        return Err(Error::Shape(format!(
            "frames have dim {}, expected d_model {}",
            frames.ncols(),
            config.d_model
        )));
    }
    let mut x = frames.to_owned();
    x += &position_encoding(0..frames.nrows(), config.d_model);
    let mut layer_m = None;
    for (l, layer) in params.encoder.layers.iter().enumerate() {
        x = encoder_layer(layer, &x, config.n_heads);
        if l + 1 == config.intermediate_layer {
            layer_m = Some(x.clone());
        }
    }
    let top = layer_norm(&x.view(), &params.encoder.final_norm);
    Ok((
        top,
        layer_m.expect("intermediate_layer validated in [1, enc_layers]"),
    ))
}

/// Accumulated central outputs over the blocks consumed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBlocks {
    top: Array2<f64>,
    layer_m: Array2<f64>,
    blocks: usize,
}

impl EncodedBlocks {
    pub fn new(d_model: usize) -> Self {
        EncodedBlocks {
            top: Array2::zeros((0, d_model)),
            layer_m: Array2::zeros((0, d_model)),
            blocks: 0,
        }
    }

    /// Wraps a full offline encoding as a single consumed block.
    pub fn from_full(top: Array2<f64>, layer_m: Array2<f64>) -> Self {
        let blocks = 1;
        EncodedBlocks {
            top,
            layer_m,
            blocks,
        }
    }

    pub fn append(&mut self, top_central: &Array2<f64>, layer_m_central: &Array2<f64>) {
        debug_assert_eq!(top_central.nrows(), layer_m_central.nrows());
        self.top
            .append(Axis(0), top_central.view())
            .expect("row append");
        self.layer_m
            .append(Axis(0), layer_m_central.view())
            .expect("row append");
        self.blocks += 1;
    }

    pub fn frames(&self) -> usize {
        self.top.nrows()
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn top(&self) -> ArrayView2<'_, f64> {
        self.top.view()
    }

    pub fn layer_m(&self) -> ArrayView2<'_, f64> {
        self.layer_m.view()
    }
}

/// Incremental encoding session: feed feature rows as they arrive, encode
/// blocks as soon as their windows are covered, finish when the stream ends.
pub struct StreamingEncoder<'a> {
    params: &'a ModelParams,
    block_size: usize,
    hop: usize,
    look_ahead: usize,
    features: Array2<f64>,
    frames: Array2<f64>,
    ctx: ContextState,
    encoded: EncodedBlocks,
    window_ends: Vec<usize>,
    next_block: usize,
    finished: bool,
}

impl<'a> StreamingEncoder<'a> {
    pub fn new(
        params: &'a ModelParams,
        block_size: usize,
        hop: usize,
        look_ahead: usize,
    ) -> Result<Self> {
        if hop == 0 || hop + look_ahead > block_size {
            return Err(Error::Config(format!(
                "invalid block geometry: size {block_size}, hop {hop}, look-ahead {look_ahead}"
            )));
        }
        Ok(StreamingEncoder {
            params,
            block_size,
            hop,
            look_ahead,
            features: Array2::zeros((0, params.config.feature_dim)),
            frames: Array2::zeros((0, params.config.d_model)),
            ctx: ContextState::initial(),
            encoded: EncodedBlocks::new(params.config.d_model),
            window_ends: Vec::new(),
            next_block: 0,
            finished: false,
        })
    }

    /// Appends raw feature rows. The subsampled prefix is recomputed; with
    /// the stride-aligned front end this equals incremental computation.
    pub fn push_features(&mut self, chunk: &ArrayView2<f64>) -> Result<()> {
        if self.finished {
            return Err(Error::Decode("push after stream end".into()));
        }
        if chunk.ncols() != self.params.config.feature_dim {
            return Err(Error::Shape(format!(
                "chunk dim {} does not match feature_dim {}",
                chunk.ncols(),
                self.params.config.feature_dim
            )));
        }
        self.features
            .append(Axis(0), chunk.view())
            .expect("row append");
        if self.features.nrows() >= self.params.config.subsample_factor {
            self.frames = subsample(self.params, &self.features.view())?;
        }
        Ok(())
    }

    fn window_for(&self, idx: usize, total: Option<usize>) -> BlockWindow {
        let open = open_window(idx, self.block_size, self.hop, self.look_ahead);
        match total {
            None => open,
            Some(t) => BlockWindow {
                start: open.start.min(t),
                end: open.end.min(t),
                central_start: open.central_start,
                central_end: open.central_end.min(t),
            },
        }
    }

    fn encode_one(&mut self, window: BlockWindow) -> Result<()> {
        let frames = self.frames.slice(s![window.start..window.end, ..]);
        let out = encode_window(self.params, window, &frames, &self.ctx)?;
        self.encoded.append(&out.top_central, &out.layer_m_central);
        self.ctx = out.ctx;
        self.window_ends.push(window.end);
        self.next_block += 1;
        Ok(())
    }

    /// Encodes the next block if it is certainly not the last one: its
    /// full window (including look-ahead) has arrived and at least one
    /// frame of the following block's central range exists.
    pub fn encode_ready_one(&mut self) -> Result<bool> {
        let available = self.frames.nrows();
        let window = self.window_for(self.next_block, None);
        let successor_exists = available > (self.next_block + 1) * self.hop;
        if window.end <= available && successor_exists {
            self.encode_one(window)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Encodes every block [`Self::encode_ready_one`] accepts, returning
    /// how many were emitted.
    pub fn encode_ready(&mut self) -> Result<usize> {
        let mut encoded = 0;
        while self.encode_ready_one()? {
            encoded += 1;
        }
        Ok(encoded)
    }

    /// Marks the stream as ended, fixing the total frame count and the
    /// number of blocks. Remaining blocks are encoded one at a time via
    /// [`StreamingEncoder::encode_next_pending`].
    pub fn mark_ended(&mut self) -> Result<()> {
        if self.finished {
            return Ok(());
        }
        if self.frames.nrows() == 0 {
            return Err(Error::EmptyInput(
                "stream ended before one subsampled frame was available".into(),
            ));
        }
        self.finished = true;
        Ok(())
    }

    /// After the stream ended: encodes the next remaining block (window
    /// clipped to the final frame count) and reports whether one was left.
    pub fn encode_next_pending(&mut self) -> Result<bool> {
        if !self.finished {
            return Err(Error::Decode("stream has not ended yet".into()));
        }
        let total = self.frames.nrows();
        if self.next_block >= total.div_ceil(self.hop) {
            return Ok(false);
        }
        let window = self.window_for(self.next_block, Some(total));
        self.encode_one(window)?;
        Ok(true)
    }

    /// Marks the stream as ended and encodes all remaining blocks. Returns
    /// the number of blocks encoded in this call.
    pub fn finish(&mut self) -> Result<usize> {
        self.mark_ended()?;
        let mut encoded = 0;
        while self.encode_next_pending()? {
            encoded += 1;
        }
        Ok(encoded)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn encoded(&self) -> &EncodedBlocks {
        &self.encoded
    }

    pub fn frames_available(&self) -> usize {
        self.frames.nrows()
    }

    pub fn feature_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn blocks_encoded(&self) -> usize {
        self.next_block
    }

    /// Total blocks of the stream; defined once the stream has finished.
    pub fn total_blocks(&self) -> Option<usize> {
        self.finished
            .then(|| self.frames.nrows().div_ceil(self.hop))
    }

    /// Post-subsampling frame index (exclusive) read to emit block `idx`.
    pub fn window_end(&self, idx: usize) -> usize {
        self.window_ends[idx]
    }
}
