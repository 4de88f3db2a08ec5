//! The shot-boundary stub: split a two-scene stream at the cosine-distance
//! jump between frame means, then tokenize each clip independently.
//!
//! ```bash
//! cargo run -p linvt --example segment_clips
//! ```

use linvt::model::{Config, Model};
use linvt::rng::Rng;
use linvt::segment::{boundaries, split_clips};
use linvt::svr::FrameTokenStream;
use linvt::tta::TextTokens;

fn main() -> linvt::Result<()> {
    let cfg = Config::desk();
    let (frames, n, c) = (8usize, 16usize, cfg.channels);
    let mut rng = Rng::new(4);
    let mut data = Vec::new();
    for frame in 0..frames {
        let sign = if frame < 5 { 1.0 } else { -1.0 };
        for _ in 0..n {
            for ch in 0..c {
                let base = if ch == 0 { 2.0 * sign } else { 0.0 };
                data.push(base + 0.05 * rng.next_normal());
            }
        }
    }
    let stream = FrameTokenStream::from_vec(frames, n, c, data)?;

    println!("clip starts: {:?}", boundaries(&stream, 0.5));
    let clips = split_clips(&stream, 0.5)?;
    let model = Model::build(cfg)?;
    let mut total = 0;
    for (i, clip) in clips.iter().enumerate() {
        let out = model.forward(clip, &TextTokens::empty())?;
        println!(
            "clip {i}: frames {} -> {} video tokens",
            clip.frames(),
            out.tokens.shape()[0]
        );
        total += out.tokens.shape()[0];
    }
    println!("{total} tokens across {} clips", clips.len());
    Ok(())
}
