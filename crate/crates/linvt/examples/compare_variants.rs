//! The four learnable topologies emit the same number of output tokens at
//! matched configurations; a short training run shows how each fares on
//! the toy retrieval task.
//!
//! ```bash
//! cargo run --release -p linvt --example compare_variants
//! ```

use linvt::model::{Config, Model, Variant};
use linvt::train::{eval_retrieval, train_loop, TaskSpec, TrainSettings};

fn main() -> linvt::Result<()> {
    let spec = TaskSpec::new(8, 16, 32, 3);
    let base = Config {
        channels: 32,
        k: 128,
        scales: vec![(1, 1), (4, 2), (8, 4)],
        queries: vec![6, 4, 2],
        depth: 2,
        svr_depth: 2,
        heads: 4,
        variant: Variant::MultiC,
        seed: 0,
        agg_logit_scale: None,
    };
    println!(
        "{:<9} {:>7} {:>10} {:>9}",
        "variant", "tokens", "untrained", "trained"
    );
    for variant in Variant::ALL {
        let cfg = base.for_variant(variant);
        let mut model = Model::build(cfg.clone())?;
        let untrained = eval_retrieval(&model, &spec, 0, 32)?;
        let trained = if variant == Variant::Avg {
            untrained
        } else {
            let mut settings = TrainSettings::new(600, 0);
            settings.eval_every = 600;
            settings.eval_tasks = 0;
            train_loop(&mut model, &spec, &settings)?;
            eval_retrieval(&model, &spec, 0, 32)?
        };
        let tokens = cfg
            .output_tokens()
            .map(|n| n.to_string())
            .unwrap_or_else(|| "per-frame".into());
        println!(
            "{:<9} {:>7} {:>10.3} {:>9.3}",
            variant.name(),
            tokens,
            untrained,
            trained
        );
    }
    Ok(())
}
