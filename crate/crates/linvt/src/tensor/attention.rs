//! Multi-head scaled dot-product attention composed from tape primitives,
//! so gradients come for free and are covered by the op-level checks.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

/// Projection matrices of one attention layer, all `[c, c]`.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

impl AttentionWeights {
    pub fn init(c: usize, std: f64, rng: &mut Rng) -> AttentionWeights {
        AttentionWeights {
            w_q: Tensor::randn(vec![c, c], std, rng),
            w_k: Tensor::randn(vec![c, c], std, rng),
            w_v: Tensor::randn(vec![c, c], std, rng),
            w_o: Tensor::randn(vec![c, c], std, rng),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tensor)) {
        f(&self.w_q);
        f(&self.w_k);
        f(&self.w_v);
        f(&self.w_o);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        f(&mut self.w_q);
        f(&mut self.w_k);
        f(&mut self.w_v);
        f(&mut self.w_o);
    }
}

/// Standard multi-head attention: per head, `softmax(QKᵀ / sqrt(c/heads)) V`,
/// heads concatenated and passed through the output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: &Tensor,
    kv: &Tensor,
    heads: usize,
    w: &AttentionWeights,
) -> Result<Tensor> {
    let (out, _) = multi_head_attention_with_map(tape, q, kv, heads, w)?;
    Ok(out)
}

/// Same as [`multi_head_attention`] but also returns the attention map
/// averaged over heads (`[a, b]`, rows sum to 1), which the significance
/// scoring reads.
pub fn multi_head_attention_with_map(
    tape: &mut Tape,
    q: &Tensor,
    kv: &Tensor,
    heads: usize,
    w: &AttentionWeights,
) -> Result<(Tensor, Tensor)> {
    q.expect_rank(2, "multi_head_attention")?;
    kv.expect_rank(2, "multi_head_attention")?;
    let c = q.shape()[1];
    if kv.shape()[1] != c {
        return Err(Error::ShapeMismatch {
            op: "multi_head_attention",
            lhs: q.shape().to_vec(),
            rhs: kv.shape().to_vec(),
        });
    }
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(Error::HeadSplit {
            op: "multi_head_attention",
            channels: c,
            heads,
        });
    }
    let head_dim = c / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let qp = tape.matmul(q, &w.w_q)?;
    let kp = tape.matmul(kv, &w.w_k)?;
    let vp = tape.matmul(kv, &w.w_v)?;

    let mut head_outs = Vec::with_capacity(heads);
    let mut attn_sum: Option<Tensor> = None;
    for h in 0..heads {
        let qh = tape.slice_cols(&qp, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(&kp, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(&vp, h * head_dim, head_dim)?;
        let kt = tape.transpose(&kh)?;
        let logits = tape.matmul(&qh, &kt)?;
        let logits = tape.scale(&logits, scale);
        let attn = tape.softmax(&logits, 1)?;
        let out_h = tape.matmul(&attn, &vh)?;
        attn_sum = Some(match attn_sum {
            None => attn,
            Some(prev) => tape.add(&prev, &attn)?,
        });
        head_outs.push(out_h);
    }
    let refs: Vec<&Tensor> = head_outs.iter().collect();
    let concat = tape.concat_cols(&refs)?;
    let out = tape.matmul(&concat, &w.w_o)?;
    let avg = tape.scale(&attn_sum.expect("heads >= 1"), 1.0 / heads as f64);
    Ok((out, avg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> Rng {
        Rng::new(0xA77E)
    }

    /// Independent single-head oracle: plain loops over the definition.
    fn single_head_oracle(q: &Tensor, kv: &Tensor, w: &AttentionWeights) -> Vec<f64> {
        let a = q.shape()[0];
        let b = kv.shape()[0];
        let c = q.shape()[1];
        let mm = |x: &[f64], y: &[f64], m: usize, k: usize, n: usize| {
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    for kk in 0..k {
                        out[i * n + j] += x[i * k + kk] * y[kk * n + j];
                    }
                }
            }
            out
        };
        let qp = mm(q.data(), w.w_q.data(), a, c, c);
        let kp = mm(kv.data(), w.w_k.data(), b, c, c);
        let vp = mm(kv.data(), w.w_v.data(), b, c, c);
        let scale = 1.0 / (c as f64).sqrt();
        let mut ctx = vec![0.0; a * c];
        for i in 0..a {
            let mut logits = vec![0.0; b];
            for j in 0..b {
                for kk in 0..c {
                    logits[j] += qp[i * c + kk] * kp[j * c + kk];
                }
                logits[j] *= scale;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..b {
                let p = exps[j] / sum;
                for kk in 0..c {
                    ctx[i * c + kk] += p * vp[j * c + kk];
                }
            }
        }
        mm(&ctx, w.w_o.data(), a, c, c)
    }

    #[test]
    fn single_kv_row_reduces_to_value_projection() {
        let mut r = rng();
        let w = AttentionWeights::init(6, 0.3, &mut r);
        let q = Tensor::randn(vec![1, 6], 1.0, &mut r);
        let kv = Tensor::randn(vec![1, 6], 1.0, &mut r);
        let mut tape = Tape::new();
        let out = multi_head_attention(&mut tape, &q, &kv, 2, &w).unwrap();
        // softmax over one key is exactly 1, so out = kv · W_v · W_o.
        let vp = tape.matmul(&kv, &w.w_v).unwrap();
        let expect = tape.matmul(&vp, &w.w_o).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn matches_single_head_oracle() {
        let mut r = rng();
        let w = AttentionWeights::init(4, 0.5, &mut r);
        let q = Tensor::randn(vec![2, 4], 1.0, &mut r);
        let kv = Tensor::randn(vec![3, 4], 1.0, &mut r);
        let mut tape = Tape::new();
        let out = multi_head_attention(&mut tape, &q, &kv, 1, &w).unwrap();
        let oracle = single_head_oracle(&q, &kv, &w);
        let diff = out
            .data()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "diff {diff}");
    }

    #[test]
    fn kv_permutation_leaves_output_unchanged() {
        let mut r = rng();
        let w = AttentionWeights::init(8, 0.4, &mut r);
        let q = Tensor::randn(vec![3, 8], 1.0, &mut r);
        let kv = Tensor::randn(vec![4, 8], 1.0, &mut r);
        let perm = [2usize, 0, 3, 1];
        let mut permuted = Vec::new();
        for &i in &perm {
            permuted.extend_from_slice(&kv.data()[i * 8..(i + 1) * 8]);
        }
        let kv_p = Tensor::new(vec![4, 8], permuted).unwrap();
        let mut tape = Tape::new();
        let a = multi_head_attention(&mut tape, &q, &kv, 2, &w).unwrap();
        let b = multi_head_attention(&mut tape, &q, &kv_p, 2, &w).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn rejects_bad_head_split() {
        let mut r = rng();
        let w = AttentionWeights::init(6, 0.3, &mut r);
        let q = Tensor::randn(vec![2, 6], 1.0, &mut r);
        let mut tape = Tape::new();
        let err = multi_head_attention(&mut tape, &q, &q, 4, &w).unwrap_err();
        assert!(matches!(
            err,
            Error::HeadSplit {
                channels: 6,
                heads: 4,
                ..
            }
        ));
    }

    #[test]
    fn attention_map_rows_sum_to_one() {
        let mut r = rng();
        let w = AttentionWeights::init(8, 0.4, &mut r);
        let q = Tensor::randn(vec![5, 8], 1.0, &mut r);
        let kv = Tensor::randn(vec![7, 8], 1.0, &mut r);
        let mut tape = Tape::new();
        let (_, map) = multi_head_attention_with_map(&mut tape, &q, &kv, 4, &w).unwrap();
        assert_eq!(map.shape(), &[5, 7]);
        for i in 0..5 {
            let row: f64 = map.data()[i * 7..(i + 1) * 7].iter().sum();
            assert!((row - 1.0).abs() < 1e-12);
            assert!(map.data()[i * 7..(i + 1) * 7].iter().all(|&p| p >= 0.0));
        }
    }
}
