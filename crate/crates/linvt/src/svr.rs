//! Spatio-temporal visual token refiner: significance scoring, top-k
//! selection, and shifted-window multi-scale pooling.
//!
//! Scoring is transform-free with respect to the token values: attention is
//! used only to produce scores, and the tokens that flow onward are exact
//! copies of the input stream. Selection is a hard, non-differentiated
//! operation; gradients reach later stages through the selected values, not
//! through the index choice.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{multi_head_attention_with_map, topk_indices, AttentionWeights, Tape, Tensor};

/// Per-frame visual tokens `[T, N, C]`: `T` frames of `N` tokens with `C`
/// channels. The global index of token `p` in frame `t` is `t * N + p`.
#[derive(Debug, Clone)]
pub struct FrameTokenStream {
    tokens: Tensor,
}

impl FrameTokenStream {
    pub fn new(tokens: Tensor) -> Result<FrameTokenStream> {
        tokens.expect_rank(3, "FrameTokenStream")?;
        Ok(FrameTokenStream { tokens })
    }

    pub fn from_vec(t: usize, n: usize, c: usize, data: Vec<f64>) -> Result<FrameTokenStream> {
        FrameTokenStream::new(Tensor::new(vec![t, n, c], data)?)
    }

    pub fn frames(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn total_tokens(&self) -> usize {
        self.frames() * self.tokens_per_frame()
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    /// Frame `t` as an `[N, C]` tensor.
    pub fn frame(&self, t: usize) -> Tensor {
        self.tokens.index_axis0(t).expect("frame index in range")
    }

    /// The whole stream as `[T*N, C]`, zero-copy.
    pub fn flattened(&self) -> Tensor {
        self.tokens
            .reshape(vec![self.total_tokens(), self.channels()])
            .expect("flatten preserves numel")
    }
}

/// Attention stacks used only for scoring.
#[derive(Debug, Clone)]
pub struct ScoringWeights {
    pub spatial: Vec<AttentionWeights>,
    pub temporal: Vec<AttentionWeights>,
    pub heads: usize,
}

impl ScoringWeights {
    /// `layers` total scoring layers, split evenly with the spatial stack
    /// taking the extra one when odd.
    pub fn init(c: usize, layers: usize, heads: usize, std: f64, rng: &mut Rng) -> ScoringWeights {
        let spatial_layers = layers.div_ceil(2);
        let temporal_layers = layers - spatial_layers;
        ScoringWeights {
            spatial: (0..spatial_layers)
                .map(|_| AttentionWeights::init(c, std, rng))
                .collect(),
            temporal: (0..temporal_layers)
                .map(|_| AttentionWeights::init(c, std, rng))
                .collect(),
            heads,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tensor)) {
        for w in &self.spatial {
            w.visit(f);
        }
        for w in &self.temporal {
            w.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        for w in &mut self.spatial {
            w.visit_mut(f);
        }
        for w in &mut self.temporal {
            w.visit_mut(f);
        }
    }
}

/// Normalized significance scores. `spatial` rows sum to 1 per frame,
/// `frame_weight` sums to 1 over frames, and `combined[t,p] =
/// spatial[t,p] * frame_weight[t]`, so the total mass is 1.
#[derive(Debug, Clone)]
pub struct SignificanceScores {
    pub spatial: Tensor,
    pub frame_weight: Tensor,
    pub combined: Tensor,
}

/// The top-k surviving tokens with provenance.
#[derive(Debug, Clone)]
pub struct SelectedTokens {
    /// `[k, C]`, bit-identical copies of the selected stream tokens.
    pub tokens: Tensor,
    /// Ascending global indices (`t * N + p`) of the survivors.
    pub global_indices: Vec<usize>,
    /// Combined score of each survivor, in the same order.
    pub scores: Vec<f64>,
}

/// One pooled scale plus its provenance over the original stream.
#[derive(Debug, Clone)]
pub struct ScaleTokens {
    pub window: usize,
    pub stride: usize,
    /// `[M_s, C]` pooled tokens.
    pub tokens: Tensor,
    /// `[M_s, T*N]` row-stochastic map back onto the input stream.
    pub provenance: Tensor,
}

/// The multi-scale token sets produced by pooling.
#[derive(Debug, Clone)]
pub struct MultiScaleTokens {
    pub scales: Vec<ScaleTokens>,
}

impl MultiScaleTokens {
    pub fn total_tokens(&self) -> usize {
        self.scales.iter().map(|s| s.tokens.shape()[0]).sum()
    }
}

/// Mean attention mass received by each token within its frame: the
/// column mean of the head-averaged attention map of the final spatial
/// scoring layer. Output is `[T, N]`; each row sums to 1.
pub fn score_spatial(
    tape: &mut Tape,
    stream: &FrameTokenStream,
    weights: &ScoringWeights,
) -> Result<Tensor> {
    let t_frames = stream.frames();
    let n = stream.tokens_per_frame();
    let mut rows = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        let frame = stream.frame(t);
        let map = attention_stack(tape, frame, &weights.spatial, weights.heads)?;
        rows.push(column_mean(&map));
    }
    let mut data = Vec::with_capacity(t_frames * n);
    for row in rows {
        data.extend_from_slice(&row);
    }
    Tensor::new(vec![t_frames, n], data)
}

/// Temporal stage of scoring: per-frame summaries (spatial-score-weighted
/// means) go through the temporal attention stack, the received mass of
/// each frame becomes its weight, and combined scores are the product of
/// spatial and frame weights.
pub fn score_temporal(
    tape: &mut Tape,
    stream: &FrameTokenStream,
    spatial: &Tensor,
    weights: &ScoringWeights,
) -> Result<SignificanceScores> {
    let t_frames = stream.frames();
    let n = stream.tokens_per_frame();
    spatial.expect_rank(2, "score_temporal")?;
    if spatial.shape() != [t_frames, n] {
        return Err(Error::ShapeMismatch {
            op: "score_temporal",
            lhs: spatial.shape().to_vec(),
            rhs: vec![t_frames, n],
        });
    }

    let mut summaries = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        let srow = Tensor::new(vec![1, n], spatial.data()[t * n..(t + 1) * n].to_vec())?;
        let frame = stream.frame(t);
        summaries.push(tape.matmul(&srow, &frame)?);
    }
    let refs: Vec<&Tensor> = summaries.iter().collect();
    let stacked = tape.concat_rows(&refs)?;

    let frame_weight = if weights.temporal.is_empty() {
        vec![1.0 / t_frames as f64; t_frames]
    } else {
        let map = attention_stack(tape, stacked, &weights.temporal, weights.heads)?;
        column_mean(&map)
    };

    let mut combined = Vec::with_capacity(t_frames * n);
    for t in 0..t_frames {
        for p in 0..n {
            combined.push(spatial.data()[t * n + p] * frame_weight[t]);
        }
    }
    Ok(SignificanceScores {
        spatial: spatial.detached(),
        frame_weight: Tensor::new(vec![t_frames], frame_weight)?,
        combined: Tensor::new(vec![t_frames, n], combined)?,
    })
}

/// Run `layers` self-attention layers (residual on the hidden path) and
/// return the head-averaged attention map of the final layer.
fn attention_stack(
    tape: &mut Tape,
    input: Tensor,
    layers: &[AttentionWeights],
    heads: usize,
) -> Result<Tensor> {
    assert!(!layers.is_empty(), "attention_stack: no layers");
    let mut h = input;
    let mut last_map = None;
    for w in layers {
        let (out, map) = multi_head_attention_with_map(tape, &h, &h, heads, w)?;
        h = tape.add(&h, &out)?;
        last_map = Some(map);
    }
    Ok(last_map.expect("at least one layer"))
}

/// Column mean of an `[n, n]` attention map: the mass each key receives.
fn column_mean(map: &Tensor) -> Vec<f64> {
    let (rows, cols) = (map.shape()[0], map.shape()[1]);
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c] += map.data()[r * cols + c];
        }
    }
    let inv = 1.0 / rows as f64;
    for v in &mut out {
        *v *= inv;
    }
    out
}

/// Keep the `k` highest-scoring tokens over the whole flattened stream.
/// Survivors come back in ascending global-index order as exact copies.
pub fn select_topk(
    stream: &FrameTokenStream,
    scores: &SignificanceScores,
    k: usize,
) -> Result<SelectedTokens> {
    let total = stream.total_tokens();
    if k == 0 || k > total {
        return Err(Error::Selection { k, n: total });
    }
    let indices = topk_indices(scores.combined.data(), k)?;
    let flat = stream.flattened();
    let c = stream.channels();
    let mut data = Vec::with_capacity(k * c);
    let mut picked_scores = Vec::with_capacity(k);
    for &g in &indices {
        data.extend_from_slice(&flat.data()[g * c..(g + 1) * c]);
        picked_scores.push(scores.combined.data()[g]);
    }
    Ok(SelectedTokens {
        tokens: Tensor::new(vec![k, c], data)?,
        global_indices: indices,
        scores: picked_scores,
    })
}

/// Shifted-window average pooling of the selected tokens at each scale.
/// Provenance rows are uniform `1/w` over the window's global indices.
pub fn multi_scale_pool(
    tape: &mut Tape,
    sel: &SelectedTokens,
    scales: &[(usize, usize)],
    stream_total: usize,
) -> Result<MultiScaleTokens> {
    let k = sel.tokens.shape()[0];
    let mut out = Vec::with_capacity(scales.len());
    for &(window, stride) in scales {
        if window == 0 || window > k || stride == 0 {
            return Err(Error::Window {
                window,
                stride,
                len: k,
            });
        }
        let tokens = tape.mean_pool(&sel.tokens, window, stride)?;
        let m = tokens.shape()[0];
        let mut prov = vec![0.0; m * stream_total];
        let share = 1.0 / window as f64;
        for j in 0..m {
            for r in 0..window {
                let g = sel.global_indices[j * stride + r];
                prov[j * stream_total + g] += share;
            }
        }
        out.push(ScaleTokens {
            window,
            stride,
            tokens,
            provenance: Tensor::new(vec![m, stream_total], prov)?,
        });
    }
    Ok(MultiScaleTokens { scales: out })
}

/// Scoring, selection and pooling in sequence. `k` must already be valid
/// for the stream (the model layer clamps it).
pub fn refine(
    tape: &mut Tape,
    stream: &FrameTokenStream,
    weights: &ScoringWeights,
    k: usize,
    scales: &[(usize, usize)],
) -> Result<(SelectedTokens, MultiScaleTokens)> {
    let spatial = score_spatial(tape, stream, weights)?;
    let scores = score_temporal(tape, stream, &spatial, weights)?;
    let sel = select_topk(stream, &scores, k)?;
    let pooled = multi_scale_pool(tape, &sel, scales, stream.total_tokens())?;
    Ok((sel, pooled))
}
