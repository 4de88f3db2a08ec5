//! Verify the core structural property by independent reconstruction:
//! every output token equals its provenance row times the flattened input
//! stream, with nonnegative weights summing to one. The output therefore
//! lies in the convex hull of the input tokens.
//!
//! ```bash
//! cargo run -p linvt --example linearity_demo
//! ```

// The reconstruction is deliberately written as plain index loops.
#![allow(clippy::needless_range_loop)]

use linvt::model::{Config, Model, Variant};
use linvt::rng::Rng;
use linvt::svr::FrameTokenStream;
use linvt::tensor::Tensor;
use linvt::tta::embed_text;

fn main() -> linvt::Result<()> {
    let mut rng = Rng::new(42);
    for variant in [
        Variant::SingleA,
        Variant::MultiA,
        Variant::MultiB,
        Variant::MultiC,
    ] {
        let cfg = Config::desk().for_variant(variant);
        let model = Model::build(cfg.clone())?;
        let stream =
            FrameTokenStream::new(Tensor::randn(vec![6, 16, cfg.channels], 1.0, &mut rng))?;
        let text = embed_text("track the moving object", cfg.channels);
        let out = model.forward(&stream, &text)?;

        let flat = stream.flattened();
        let total = stream.total_tokens();
        let c = cfg.channels;
        let mut worst_recon = 0.0f64;
        let mut worst_sum = 0.0f64;
        for row in 0..out.tokens.shape()[0] {
            let prow = &out.provenance.data()[row * total..(row + 1) * total];
            worst_sum = worst_sum.max((prow.iter().sum::<f64>() - 1.0).abs());
            assert!(prow.iter().all(|&w| w >= 0.0));
            for ch in 0..c {
                let mut acc = 0.0;
                for g in 0..total {
                    acc += prow[g] * flat.data()[g * c + ch];
                }
                worst_recon = worst_recon.max((acc - out.tokens.data()[row * c + ch]).abs());
            }
        }
        println!(
            "{:<9} {} tokens: reconstruction error {worst_recon:.2e}, row-sum deviation {worst_sum:.2e}",
            variant.name(),
            out.tokens.shape()[0],
        );
    }
    Ok(())
}
