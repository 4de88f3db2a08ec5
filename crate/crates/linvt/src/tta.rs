//! Text-conditioned token aggregation.
//!
//! Scale-specific learnable queries pass through a stack of blocks (self-
//! attention, visual cross-attention, text cross-attention, feed-forward;
//! residuals apply on the query path only). A final residual-free attention
//! layer then emits each output token as a convex combination of the pooled
//! visual tokens: `softmax((Q W_q)(T_v W_k)ᵀ / s) · T_v` with no value
//! projection and no residual, so the visual path stays linear.

use crate::error::{Error, Result};
use crate::rng::{fnv1a, Rng};
use crate::svr::MultiScaleTokens;
use crate::tensor::{multi_head_attention, AttentionWeights, Tape, Tensor};

/// Embedded instruction tokens. `None` means the unconditioned mode (no
/// text cross-attention).
#[derive(Debug, Clone, Default)]
pub struct TextTokens {
    embeddings: Option<Tensor>,
}

impl TextTokens {
    pub fn empty() -> TextTokens {
        TextTokens { embeddings: None }
    }

    pub fn new(embeddings: Tensor) -> Result<TextTokens> {
        embeddings.expect_rank(2, "TextTokens")?;
        Ok(TextTokens {
            embeddings: Some(embeddings),
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.as_ref().map_or(0, |e| e.shape()[0])
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_none()
    }

    pub fn embeddings(&self) -> Option<&Tensor> {
        self.embeddings.as_ref()
    }
}

/// Deterministic toy text embedder: each whitespace word hashes to a row of
/// a fixed random table. Stands in for the host model's text stream.
pub fn embed_text(text: &str, c: usize) -> TextTokens {
    const TABLE_ROWS: u64 = 4096;
    const TABLE_SEED: u64 = 0x7E00_7AB1;
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return TextTokens::empty();
    }
    let mut data = Vec::with_capacity(words.len() * c);
    for word in words {
        let row = fnv1a(word) % TABLE_ROWS;
        let mut rng = Rng::new(TABLE_SEED ^ row.wrapping_mul(0x9E37_79B9));
        data.extend((0..c).map(|_| rng.next_normal() / (c as f64).sqrt()));
    }
    TextTokens::new(Tensor::new(vec![data.len() / c, c], data).expect("embed shape"))
        .expect("rank 2")
}

/// One aggregation block; weights are shared across scales, scale
/// specificity comes from the query banks.
#[derive(Debug, Clone)]
pub struct TtaBlockWeights {
    pub self_attn: AttentionWeights,
    pub vis_attn: AttentionWeights,
    pub text_attn: AttentionWeights,
    pub ffn_in: Tensor,
    pub ffn_out: Tensor,
}

/// Feed-forward expansion factor.
pub const FFN_MULT: usize = 4;

impl TtaBlockWeights {
    pub fn init(c: usize, std: f64, rng: &mut Rng) -> TtaBlockWeights {
        TtaBlockWeights {
            self_attn: AttentionWeights::init(c, std, rng),
            vis_attn: AttentionWeights::init(c, std, rng),
            text_attn: AttentionWeights::init(c, std, rng),
            ffn_in: Tensor::randn(vec![c, FFN_MULT * c], std, rng),
            ffn_out: Tensor::randn(vec![FFN_MULT * c, c], std, rng),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tensor)) {
        self.self_attn.visit(f);
        self.vis_attn.visit(f);
        self.text_attn.visit(f);
        f(&self.ffn_in);
        f(&self.ffn_out);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        self.self_attn.visit_mut(f);
        self.vis_attn.visit_mut(f);
        self.text_attn.visit_mut(f);
        f(&mut self.ffn_in);
        f(&mut self.ffn_out);
    }
}

/// Output tokens plus the aggregation attention maps and the end-to-end
/// provenance over the original stream.
#[derive(Debug, Clone)]
pub struct AggregationOutput {
    /// `[total_queries, C]` video tokens, in scale order.
    pub tokens: Tensor,
    /// Row-stochastic aggregation map per scale, `[q_s, M_s]`.
    pub attn: Vec<Tensor>,
    /// `[total_queries, T*N]` row-stochastic map onto the input stream.
    pub provenance: Tensor,
}

/// Refine one query bank per visual token set. Queries of different scales
/// never see each other: self-attention runs within a bank, and each bank
/// cross-attends only its own token set (text tokens are shared).
pub fn run_blocks(
    tape: &mut Tape,
    queries: &[Tensor],
    visual: &[&Tensor],
    text: &TextTokens,
    blocks: &[TtaBlockWeights],
    heads: usize,
) -> Result<Vec<Tensor>> {
    if queries.len() != visual.len() {
        return Err(Error::InvalidConfig(format!(
            "{} query banks for {} visual scales",
            queries.len(),
            visual.len()
        )));
    }
    let mut refined = Vec::with_capacity(queries.len());
    for (bank, tokens) in queries.iter().zip(visual) {
        if bank.shape()[1] != tokens.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "run_blocks",
                lhs: bank.shape().to_vec(),
                rhs: tokens.shape().to_vec(),
            });
        }
        let mut q = bank.clone();
        for block in blocks {
            let sa = multi_head_attention(tape, &q, &q, heads, &block.self_attn)?;
            q = tape.add(&q, &sa)?;
            let va = multi_head_attention(tape, &q, tokens, heads, &block.vis_attn)?;
            q = tape.add(&q, &va)?;
            if let Some(emb) = text.embeddings() {
                let ta = multi_head_attention(tape, &q, emb, heads, &block.text_attn)?;
                q = tape.add(&q, &ta)?;
            }
            let hidden = tape.matmul(&q, &block.ffn_in)?;
            let hidden = tape.gelu(&hidden);
            let ff = tape.matmul(&hidden, &block.ffn_out)?;
            q = tape.add(&q, &ff)?;
        }
        refined.push(q);
    }
    Ok(refined)
}

/// The residual-free aggregation. Per scale: `W = softmax((Q W_q)(T W_k)ᵀ *
/// scale)` and the output is exactly `W · T`. Provenance rows compose the
/// aggregation weights with the pooled tokens' provenance.
pub fn linear_aggregate(
    tape: &mut Tape,
    vis: &MultiScaleTokens,
    refined: &[Tensor],
    w_q: &Tensor,
    w_k: &Tensor,
    logit_scale: f64,
) -> Result<AggregationOutput> {
    if refined.len() != vis.scales.len() {
        return Err(Error::InvalidConfig(format!(
            "{} refined banks for {} scales",
            refined.len(),
            vis.scales.len()
        )));
    }
    let stream_total = vis.scales[0].provenance.shape()[1];
    let mut outs = Vec::with_capacity(refined.len());
    let mut maps = Vec::with_capacity(refined.len());
    let mut prov_rows: Vec<f64> = Vec::new();
    for (q, scale) in refined.iter().zip(&vis.scales) {
        let qp = tape.matmul(q, w_q)?;
        let kp = tape.matmul(&scale.tokens, w_k)?;
        let kt = tape.transpose(&kp)?;
        let logits = tape.matmul(&qp, &kt)?;
        let logits = tape.scale(&logits, logit_scale);
        let w_attn = tape.softmax(&logits, 1)?;
        let out = tape.matmul(&w_attn, &scale.tokens)?;

        // Compose provenance outside the tape; it is a verification
        // artifact, not a gradient path.
        let m = scale.tokens.shape()[0];
        let rows = q.shape()[0];
        let composed = crate::tensor::matmul_data(
            w_attn.data(),
            scale.provenance.data(),
            rows,
            m,
            stream_total,
        );
        prov_rows.extend_from_slice(&composed);
        outs.push(out);
        maps.push(w_attn);
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    let tokens = tape.concat_rows(&refs)?;
    let total_q = tokens.shape()[0];
    Ok(AggregationOutput {
        tokens,
        attn: maps,
        provenance: Tensor::new(vec![total_q, stream_total], prov_rows)?,
    })
}
