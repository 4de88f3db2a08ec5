//! What separates the final aggregation from vanilla cross-attention: with
//! both projection matrices zeroed, the attention is uniform and every
//! output token becomes the plain mean of its scale's pooled tokens --
//! never the query value, because there is no residual and no value
//! transform on the visual path.
//!
//! ```bash
//! cargo run -p linvt --example zero_projection_aggregation
//! ```

// The reconstruction is deliberately written as plain index loops.
#![allow(clippy::needless_range_loop)]

use linvt::model::{Config, Model};
use linvt::rng::Rng;
use linvt::svr;
use linvt::tensor::{Tape, Tensor};
use linvt::tta::TextTokens;

fn main() -> linvt::Result<()> {
    let cfg = Config::desk();
    let mut model = Model::build(cfg.clone())?;
    {
        let w = model.weights_mut().expect("multi-c has weights");
        w.agg_q = Tensor::zeros(vec![cfg.channels, cfg.channels]);
        w.agg_k = Tensor::zeros(vec![cfg.channels, cfg.channels]);
    }
    let mut rng = Rng::new(9);
    let stream =
        linvt::FrameTokenStream::new(Tensor::randn(vec![4, 16, cfg.channels], 1.0, &mut rng))?;
    let out = model.forward(&stream, &TextTokens::empty())?;

    // Recompute the pooled scales to compare against their means.
    let mut tape = Tape::new();
    let (_, pooled) = svr::refine(
        &mut tape,
        &stream,
        &model.weights().unwrap().scoring,
        cfg.k.min(stream.total_tokens()),
        &cfg.scales,
    )?;
    let c = cfg.channels;
    let mut row = 0usize;
    for (s, scale) in pooled.scales.iter().enumerate() {
        let m = scale.tokens.shape()[0];
        let mut mean = vec![0.0; c];
        for j in 0..m {
            for ch in 0..c {
                mean[ch] += scale.tokens.data()[j * c + ch] / m as f64;
            }
        }
        let mut worst = 0.0f64;
        for _ in 0..cfg.queries[s] {
            for ch in 0..c {
                worst = worst.max((out.tokens.data()[row * c + ch] - mean[ch]).abs());
            }
            row += 1;
        }
        println!(
            "scale {s} ({} pooled tokens, {} queries): max |output - scale mean| = {worst:.2e}",
            m, cfg.queries[s]
        );
    }
    Ok(())
}
