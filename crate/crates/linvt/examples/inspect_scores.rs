//! Significance scoring and top-k selection, with a planted high-salience
//! token. Identity scoring projections make received attention mass follow
//! raw similarity, so the large-norm token provably wins.
//!
//! ```bash
//! cargo run -p linvt --example inspect_scores
//! ```

use linvt::rng::Rng;
use linvt::svr::{score_spatial, score_temporal, select_topk, FrameTokenStream, ScoringWeights};
use linvt::tensor::{AttentionWeights, Tape, Tensor};

fn main() -> linvt::Result<()> {
    let (frames, n, c) = (3usize, 8usize, 4usize);
    let mut rng = Rng::new(1);
    let mut data = Vec::new();
    for t in 0..frames {
        for p in 0..n {
            // Frame 1, position 5 carries the dominant token.
            let scale = if (t, p) == (1, 5) { 6.0 } else { 1.0 };
            for ch in 0..c {
                let base = if ch == 0 { scale } else { 0.0 };
                data.push(base + 0.02 * rng.next_normal());
            }
        }
    }
    let stream = FrameTokenStream::from_vec(frames, n, c, data)?;

    let eye = Tensor::new(
        vec![c, c],
        (0..c * c)
            .map(|i| if i % (c + 1) == 0 { 1.0 } else { 0.0 })
            .collect(),
    )?;
    let layer = AttentionWeights {
        w_q: eye.clone(),
        w_k: eye.clone(),
        w_v: eye.clone(),
        w_o: eye,
    };
    let weights = ScoringWeights {
        spatial: vec![layer.clone()],
        temporal: vec![layer],
        heads: 1,
    };

    let mut tape = Tape::new();
    let spatial = score_spatial(&mut tape, &stream, &weights)?;
    let scores = score_temporal(&mut tape, &stream, &spatial, &weights)?;
    println!("frame weights: {:?}", scores.frame_weight.data());
    for t in 0..frames {
        let row: Vec<String> = (0..n)
            .map(|p| format!("{:.3}", scores.combined.data()[t * n + p]))
            .collect();
        println!("frame {t} combined scores: [{}]", row.join(", "));
    }

    let sel = select_topk(&stream, &scores, 5)?;
    println!(
        "top-5 global indices (frame, position): {:?}",
        sel.global_indices
            .iter()
            .map(|g| (g / n, g % n))
            .collect::<Vec<_>>()
    );
    assert!(
        sel.global_indices.contains(&(n + 5)),
        "planted token selected"
    );
    Ok(())
}
