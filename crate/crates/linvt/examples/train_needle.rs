//! Train the tokenizer on the synthetic needle-retrieval task and watch the
//! text-conditioned retrieval accuracy climb.
//!
//! ```bash
//! cargo run --release -p linvt --example train_needle
//! ```

use linvt::model::{Config, Model};
use linvt::train::{eval_retrieval, text_swap_rates, train_loop, TaskSpec, TrainSettings};

fn main() -> linvt::Result<()> {
    let spec = TaskSpec::desk();
    let cfg = Config {
        // Keep every token at trainer scale; the toy task measures what the
        // aggregation learns, not what selection drops.
        k: spec.frames * spec.tokens_per_frame,
        seed: 1,
        ..Config::desk()
    };
    let mut model = Model::build(cfg)?;
    println!(
        "model: {} parameters, variant {}",
        model.parameter_count(),
        model.config().variant.name()
    );

    let untrained = eval_retrieval(&model, &spec, 1, 64)?;
    println!("untrained retrieval accuracy: {untrained:.3}");

    let t0 = std::time::Instant::now();
    let mut settings = TrainSettings::new(2000, 1);
    settings.eval_every = 250;
    let log = train_loop(&mut model, &spec, &settings)?;
    for rec in &log {
        if let Some(acc) = rec.eval_acc {
            println!(
                "step {:>5}  loss {:>8.4}  eval_acc {:.3}",
                rec.step, rec.loss, acc
            );
        }
    }
    println!("trained in {:.1?}", t0.elapsed());

    let trained = eval_retrieval(&model, &spec, 1, 64)?;
    let (changed, both) = text_swap_rates(&model, &spec, 1, 64)?;
    println!(
        "trained retrieval accuracy: {trained:.3} (gain {:+.3})",
        trained - untrained
    );
    println!("text swap: changed {changed:.3}, both correct {both:.3}");
    Ok(())
}
