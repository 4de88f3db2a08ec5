//! Save and reload tokenizer weights; the LVTW file round-trips
//! byte-identically and a mismatched config is rejected.
//!
//! ```bash
//! cargo run -p linvt --example weights_roundtrip
//! ```

use linvt::model::{Config, Model};

fn main() -> linvt::Result<()> {
    let dir = std::env::temp_dir();
    let p1 = dir.join("linvt_example_w1.lvtw");
    let p2 = dir.join("linvt_example_w2.lvtw");

    let model = Model::build(Config::desk())?;
    model.save(&p1)?;
    let loaded = Model::load(Config::desk(), &p1)?;
    loaded.save(&p2)?;
    let (b1, b2) = (std::fs::read(&p1)?, std::fs::read(&p2)?);
    println!(
        "saved {} parameters in {} bytes; save -> load -> save is byte-identical: {}",
        model.parameter_count(),
        b1.len(),
        b1 == b2
    );

    let mismatched = Config {
        queries: vec![8, 4, 4],
        ..Config::desk()
    };
    match Model::load(mismatched, &p1) {
        Err(e) => println!("mismatched config rejected: {e}"),
        Ok(_) => println!("unexpected: mismatched config loaded"),
    }
    std::fs::remove_file(&p1).ok();
    std::fs::remove_file(&p2).ok();
    Ok(())
}
