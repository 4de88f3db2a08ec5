//! Condense a synthetic 16-frame stream into 14 video tokens, then write
//! and re-read the result as an LVT1 file.
//!
//! ```bash
//! cargo run -p linvt --example tokenize_stream
//! ```

use linvt::format::lvt::{self, Dtype};
use linvt::model::{Config, Model};
use linvt::rng::Rng;
use linvt::svr::FrameTokenStream;
use linvt::tensor::Tensor;
use linvt::tta::embed_text;

fn main() -> linvt::Result<()> {
    let cfg = Config::desk();
    let model = Model::build(cfg.clone())?;

    let (frames, per_frame) = (16, 16);
    let mut rng = Rng::new(7);
    let stream = FrameTokenStream::new(Tensor::randn(
        vec![frames, per_frame, cfg.channels],
        1.0,
        &mut rng,
    ))?;
    let text = embed_text("what is the person holding", cfg.channels);

    let out = model.forward(&stream, &text)?;
    println!(
        "{} input tokens -> {} video tokens (compression {:.1}x)",
        stream.total_tokens(),
        out.tokens.shape()[0],
        stream.total_tokens() as f64 / out.tokens.shape()[0] as f64
    );
    for (i, map) in out.attn.iter().enumerate() {
        println!(
            "scale {i}: {} queries attend {} pooled tokens",
            map.shape()[0],
            map.shape()[1]
        );
    }

    let dir = std::env::temp_dir();
    let path = dir.join("linvt_example_tokens.lvt");
    let out_stream = FrameTokenStream::from_vec(
        1,
        out.tokens.shape()[0],
        cfg.channels,
        out.tokens.data().to_vec(),
    )?;
    lvt::write(&path, &out_stream, Dtype::F64)?;
    let (back, dtype) = lvt::read(&path)?;
    println!(
        "wrote {} and read back {} tokens ({dtype:?})",
        path.display(),
        back.tokens_per_frame()
    );
    std::fs::remove_file(&path).ok();
    Ok(())
}
