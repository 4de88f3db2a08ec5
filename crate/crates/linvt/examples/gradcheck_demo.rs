//! Compare analytic gradients from the reverse-mode tape against central
//! finite differences, through the full model and training loss.
//!
//! ```bash
//! cargo run -p linvt --example gradcheck_demo
//! ```

use linvt::gradcheck::{central_diff, max_rel_err, FD_STEP};
use linvt::model::{forward_with, Config, Model, Variant};
use linvt::tensor::{Tape, Tensor};
use linvt::train::{gen_task, loss, TaskSpec};

fn main() -> linvt::Result<()> {
    let cfg = Config {
        channels: 8,
        k: 8,
        scales: vec![(1, 1), (2, 1)],
        queries: vec![2, 1],
        depth: 1,
        svr_depth: 2,
        heads: 2,
        variant: Variant::MultiC,
        seed: 5,
        agg_logit_scale: None,
    };
    let spec = TaskSpec::new(2, 4, 8, 2);
    let task = gen_task(&spec, 11)?;
    let model = Model::build(cfg.clone())?;
    let weights = model.weights().unwrap().clone();

    // Analytic gradients via one tracked forward/backward pass.
    let mut tape = Tape::new();
    let tracked = weights.tracked(&mut tape);
    let out = forward_with(&mut tape, &cfg, Some(&tracked), &task.stream, &task.text)?;
    let l = loss(&mut tape, &out, &task)?;
    tape.backward(&l)?;
    println!("loss = {:.6}, tape holds {} nodes", l.data()[0], tape.len());

    // Numeric gradient of one tensor, entry by entry.
    let mut names = Vec::new();
    weights.for_each(&mut |name, _| names.push(name));
    let check_idx = names.iter().position(|n| n == "agg.w_q").unwrap();
    let analytic = tape.grad(tracked.tensors()[check_idx]).expect("reached");
    let base = weights.tensors()[check_idx].clone();
    let numeric = central_diff(
        |probe| {
            let mut w2 = weights.clone();
            let mut i = 0;
            w2.for_each_mut(&mut |t| {
                if i == check_idx {
                    *t = Tensor::new(t.shape().to_vec(), probe.to_vec()).unwrap();
                }
                i += 1;
            });
            let mut t2 = Tape::new();
            let o = forward_with(&mut t2, &cfg, Some(&w2), &task.stream, &task.text).unwrap();
            loss(&mut t2, &o, &task).unwrap().data()[0]
        },
        base.data(),
        FD_STEP,
    );
    let err = max_rel_err(analytic.data(), &numeric);
    println!(
        "agg.w_q: {} entries, max relative error vs central differences = {err:.2e}",
        base.numel()
    );
    Ok(())
}
