//! The invariant suite behind `linvt selftest` and the acceptance tests.
//! Each check returns a report instead of panicking so the CLI can print a
//! pass/fail table; the acceptance tests call the same functions at their
//! full budgets.

use crate::error::Error;
use crate::gradcheck::{max_rel_err, FD_STEP};
use crate::model::{forward_with, Config, LinVTWeights, Model, Variant};
use crate::rng::Rng;
use crate::svr::{self, FrameTokenStream};
use crate::tensor::{topk_indices, Tape, Tensor};
use crate::train::{self, gen_task, TaskSpec};
use crate::tta::{embed_text, TextTokens};

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

impl CheckReport {
    fn pass(name: &'static str, details: String) -> CheckReport {
        CheckReport {
            name,
            passed: true,
            details,
        }
    }

    fn fail(name: &'static str, details: String) -> CheckReport {
        CheckReport {
            name,
            passed: false,
            details,
        }
    }
}

/// Work sizes for one suite run.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub grad_seeds: usize,
    pub convexity_triples: usize,
    pub topk_vectors: usize,
    pub pool_max_n: usize,
    pub parity_configs: usize,
}

impl Budget {
    /// Sized so the CLI selftest finishes well inside a minute.
    pub fn selftest() -> Budget {
        Budget {
            grad_seeds: 10,
            convexity_triples: 100,
            topk_vectors: 1000,
            pool_max_n: 256,
            parity_configs: 10,
        }
    }

    /// Full acceptance budget.
    pub fn acceptance() -> Budget {
        Budget {
            grad_seeds: 100,
            convexity_triples: 1000,
            topk_vectors: 1000,
            pool_max_n: 256,
            parity_configs: 10,
        }
    }
}

/// A random desk-scale scenario: config plus a compatible stream and text.
pub struct Scenario {
    pub cfg: Config,
    pub stream: FrameTokenStream,
    pub text: TextTokens,
}

/// Draw a small random configuration, stream and text. Covers every
/// variant, multiple head counts, scale schedules and empty text.
pub fn random_scenario(rng: &mut Rng) -> Scenario {
    let heads = [1, 2, 4][rng.below(3)];
    let channels = heads * (2 + rng.below(7));
    let frames = 1 + rng.below(5);
    let tokens_per_frame = 2 + rng.below(15);
    let total = frames * tokens_per_frame;
    let k = 1 + rng.below(total.min(32));
    let n_scales = 1 + rng.below(3);
    let scales: Vec<(usize, usize)> = (0..n_scales)
        .map(|_| (1 + rng.below(k.min(5)), 1 + rng.below(4)))
        .collect();
    let queries: Vec<usize> = (0..n_scales).map(|_| 1 + rng.below(8)).collect();
    let base = Config {
        channels,
        k,
        scales,
        queries,
        depth: 1 + rng.below(2),
        svr_depth: 2 + rng.below(2),
        heads,
        variant: Variant::MultiC,
        seed: rng.next_u64(),
        agg_logit_scale: None,
    };
    let variant = Variant::ALL[rng.below(Variant::ALL.len())];
    let cfg = base.for_variant(variant);
    let stream = FrameTokenStream::new(Tensor::randn(
        vec![frames, tokens_per_frame, channels],
        1.0,
        rng,
    ))
    .expect("rank 3");
    let text = match rng.below(3) {
        0 => TextTokens::empty(),
        1 => embed_text("what happens", channels),
        _ => embed_text("describe the red object in the scene", channels),
    };
    Scenario { cfg, stream, text }
}

/// Convexity and linearity of one forward pass: provenance rows must be
/// nonnegative and sum to 1 within 1e-10, and `provenance . input` must
/// reproduce every output token within 1e-9 (plain-loop reconstruction).
pub fn check_model_convexity(
    model: &Model,
    stream: &FrameTokenStream,
    text: &TextTokens,
) -> Result<(f64, f64), String> {
    let out = model
        .forward(stream, text)
        .map_err(|e| format!("forward failed: {e}"))?;
    if !out.tokens.is_finite() || !out.provenance.is_finite() {
        return Err("non-finite values in output or provenance".into());
    }
    let flat = stream.flattened();
    let total = stream.total_tokens();
    let c = stream.channels();
    let rows = out.tokens.shape()[0];
    let mut worst_recon = 0.0f64;
    let mut worst_row = 0.0f64;
    for row in 0..rows {
        let prow = &out.provenance.data()[row * total..(row + 1) * total];
        if let Some(neg) = prow.iter().find(|&&v| v < 0.0) {
            return Err(format!("negative provenance weight {neg} in row {row}"));
        }
        let sum: f64 = prow.iter().sum();
        worst_row = worst_row.max((sum - 1.0).abs());
        for ch in 0..c {
            let mut acc = 0.0;
            for g in 0..total {
                acc += prow[g] * flat.data()[g * c + ch];
            }
            worst_recon = worst_recon.max((acc - out.tokens.data()[row * c + ch]).abs());
        }
    }
    if worst_row > 1e-10 {
        return Err(format!("provenance row sum off by {worst_row}"));
    }
    if worst_recon > 1e-9 {
        return Err(format!("reconstruction error {worst_recon}"));
    }
    Ok((worst_recon, worst_row))
}

pub fn check_convexity(triples: usize) -> CheckReport {
    const NAME: &str = "convex-provenance reconstruction";
    let mut rng = Rng::new(0x11EA);
    let mut worst_recon = 0.0f64;
    let mut worst_row = 0.0f64;
    for i in 0..triples {
        let sc = random_scenario(&mut rng);
        let model = match Model::build(sc.cfg.clone()) {
            Ok(m) => m,
            Err(e) => return CheckReport::fail(NAME, format!("triple {i}: build failed: {e}")),
        };
        match check_model_convexity(&model, &sc.stream, &sc.text) {
            Ok((r, s)) => {
                worst_recon = worst_recon.max(r);
                worst_row = worst_row.max(s);
            }
            Err(msg) => {
                return CheckReport::fail(NAME, format!("triple {i} ({:?}): {msg}", sc.cfg.variant))
            }
        }
    }
    CheckReport::pass(
        NAME,
        format!(
            "{triples} triples, worst reconstruction {worst_recon:.2e}, worst row sum deviation {worst_row:.2e}"
        ),
    )
}

/// With zero aggregation projections every output token must equal the
/// unweighted mean of its scale's pooled tokens (and not the query value).
pub fn check_aggregation_semantics() -> CheckReport {
    const NAME: &str = "residual-free aggregation semantics";
    let cfg = Config::desk();
    let mut model = Model::build(cfg.clone()).expect("desk config builds");
    {
        let w = model.weights_mut().expect("multi-c has weights");
        w.agg_q = Tensor::zeros(vec![cfg.channels, cfg.channels]);
        w.agg_k = Tensor::zeros(vec![cfg.channels, cfg.channels]);
    }
    let mut rng = Rng::new(0xF11);
    let stream =
        FrameTokenStream::new(Tensor::randn(vec![4, 16, cfg.channels], 1.0, &mut rng)).unwrap();
    let out = match model.forward(&stream, &TextTokens::empty()) {
        Ok(o) => o,
        Err(e) => return CheckReport::fail(NAME, format!("forward failed: {e}")),
    };
    // Reproduce the pooled scales with the same scoring weights.
    let mut tape = Tape::new();
    let (_, pooled) = svr::refine(
        &mut tape,
        &stream,
        &model.weights().unwrap().scoring,
        cfg.k.min(stream.total_tokens()),
        &cfg.scales,
    )
    .expect("refine");
    let c = cfg.channels;
    let mut row = 0usize;
    let mut worst = 0.0f64;
    for (scale_idx, scale) in pooled.scales.iter().enumerate() {
        let m = scale.tokens.shape()[0];
        let mut mean = vec![0.0; c];
        for j in 0..m {
            for ch in 0..c {
                mean[ch] += scale.tokens.data()[j * c + ch] / m as f64;
            }
        }
        let bank = &model.weights().unwrap().query_banks[scale_idx];
        for q in 0..cfg.queries[scale_idx] {
            let mut qdiff = 0.0f64;
            for ch in 0..c {
                let got = out.tokens.data()[row * c + ch];
                worst = worst.max((got - mean[ch]).abs());
                qdiff += (got - bank.data()[q * c + ch]).abs();
            }
            if qdiff < 1e-6 {
                return CheckReport::fail(
                    NAME,
                    format!("output row {row} equals the query value, not the token mean"),
                );
            }
            row += 1;
        }
    }
    if worst > 1e-12 {
        return CheckReport::fail(NAME, format!("scale-mean deviation {worst:.2e}"));
    }
    CheckReport::pass(NAME, format!("max deviation from scale means {worst:.2e}"))
}

fn topk_scan_oracle(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &s) in scores.iter().enumerate() {
            if taken[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if s > scores[b] => best = Some(i),
                _ => {}
            }
        }
        let b = best.expect("k <= n");
        taken[b] = true;
        out.push(b);
    }
    out.sort_unstable();
    out
}

pub fn check_topk(vectors: usize) -> CheckReport {
    const NAME: &str = "top-k selection vs full-scan oracle";
    let mut rng = Rng::new(0x70_0C);
    for i in 0..vectors {
        let n = 1 + rng.below(64);
        let mut scores: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        for s in scores.iter_mut() {
            if rng.next_f64() < 0.35 {
                *s = (*s * 2.0).round() / 2.0; // force ties
            }
        }
        let k = 1 + rng.below(n);
        let got = match topk_indices(&scores, k) {
            Ok(v) => v,
            Err(e) => return CheckReport::fail(NAME, format!("vector {i}: {e}")),
        };
        let want = topk_scan_oracle(&scores, k);
        if got != want {
            return CheckReport::fail(
                NAME,
                format!("vector {i}: got {got:?}, oracle {want:?}, scores {scores:?}"),
            );
        }
    }
    CheckReport::pass(NAME, format!("{vectors} random vectors with ties"))
}

pub fn check_pool_counts(max_n: usize) -> CheckReport {
    const NAME: &str = "pooling count arithmetic";
    let mut tape = Tape::new();
    let mut checked = 0usize;
    for n in 1..=max_n {
        let x = Tensor::zeros(vec![n, 1]);
        for window in 1..=n {
            for stride in 1..=n {
                let out = match tape.mean_pool(&x, window, stride) {
                    Ok(o) => o,
                    Err(e) => {
                        return CheckReport::fail(NAME, format!("n={n} w={window} r={stride}: {e}"))
                    }
                };
                let want = (n - window) / stride + 1;
                if out.shape()[0] != want {
                    return CheckReport::fail(
                        NAME,
                        format!(
                            "n={n} w={window} r={stride}: got {} rows, want {want}",
                            out.shape()[0]
                        ),
                    );
                }
                checked += 1;
            }
        }
    }
    CheckReport::pass(NAME, format!("{checked} (n, window, stride) combinations"))
}

pub fn check_variant_parity(configs: usize) -> CheckReport {
    const NAME: &str = "variant output-count parity";
    let mut rng = Rng::new(0xFA_CE);
    for round in 0..configs {
        let sc = loop {
            let s = random_scenario(&mut rng);
            if s.cfg.variant == Variant::MultiC {
                break s;
            }
        };
        let expected = sc.cfg.total_queries();
        for v in [
            Variant::SingleA,
            Variant::MultiA,
            Variant::MultiB,
            Variant::MultiC,
        ] {
            let cfg = sc.cfg.for_variant(v);
            if let Err(e) = cfg.validate() {
                return CheckReport::fail(NAME, format!("round {round} {v:?}: {e}"));
            }
            let model = match Model::build(cfg) {
                Ok(m) => m,
                Err(e) => return CheckReport::fail(NAME, format!("round {round} {v:?}: {e}")),
            };
            let out = match model.forward(&sc.stream, &sc.text) {
                Ok(o) => o,
                Err(e) => return CheckReport::fail(NAME, format!("round {round} {v:?}: {e}")),
            };
            if out.tokens.shape()[0] != expected {
                return CheckReport::fail(
                    NAME,
                    format!(
                        "round {round} {v:?}: {} tokens, want {expected}",
                        out.tokens.shape()[0]
                    ),
                );
            }
        }
    }
    CheckReport::pass(NAME, format!("{configs} random matched configurations"))
}

/// Tiny trainable configuration used by the gradient checks.
fn grad_check_setup(seed: u64, keep_all: bool) -> (Config, TaskSpec) {
    let spec = TaskSpec::new(2, 4, 8, 2);
    let total = spec.frames * spec.tokens_per_frame;
    let cfg = Config {
        channels: 8,
        k: if keep_all { total } else { total - 2 },
        scales: vec![(1, 1), (2, 1)],
        queries: vec![2, 1],
        depth: 1,
        svr_depth: 2,
        heads: 2,
        variant: Variant::MultiC,
        seed,
        agg_logit_scale: None,
    };
    (cfg, spec)
}

fn full_loss(cfg: &Config, weights: &LinVTWeights, task: &train::SyntheticTask) -> f64 {
    let mut tape = Tape::new();
    let out = forward_with(&mut tape, cfg, Some(weights), &task.stream, &task.text)
        .expect("forward in gradcheck");
    train::loss(&mut tape, &out, task)
        .expect("loss in gradcheck")
        .data()[0]
}

fn selection_of(cfg: &Config, weights: &LinVTWeights, stream: &FrameTokenStream) -> Vec<usize> {
    let mut tape = Tape::new();
    let spatial = svr::score_spatial(&mut tape, stream, &weights.scoring).expect("spatial");
    let scores =
        svr::score_temporal(&mut tape, stream, &spatial, &weights.scoring).expect("temporal");
    svr::select_topk(stream, &scores, cfg.k.min(stream.total_tokens()))
        .expect("select")
        .global_indices
}

/// Finite-difference check of every learnable path through the full model
/// and loss. The scoring stack feeds only the hard selection, so its
/// analytic gradient must be exactly zero; entries whose perturbation flips
/// the selection sit on a non-differentiable boundary and are skipped.
pub fn check_gradients(seeds: usize) -> CheckReport {
    const NAME: &str = "gradient checks vs central differences";
    let mut worst = 0.0f64;
    let mut checked_entries = 0usize;
    let mut skipped_flips = 0usize;
    for round in 0..seeds {
        let seed = 0xD0_0D + round as u64;
        // Alternate between keep-everything and real-selection setups.
        let (cfg, spec) = grad_check_setup(seed, round % 2 == 0);
        let model = Model::build(cfg.clone()).expect("gradcheck config builds");
        let task = gen_task(&spec, seed ^ 0x7A5).expect("task");
        let weights = model.weights().expect("multi-c has weights").clone();

        let mut tape = Tape::new();
        let tracked = weights.tracked(&mut tape);
        let out = forward_with(&mut tape, &cfg, Some(&tracked), &task.stream, &task.text)
            .expect("tracked forward");
        let loss_t = train::loss(&mut tape, &out, &task).expect("loss");
        tape.backward(&loss_t).expect("backward");

        let mut names = Vec::new();
        weights.for_each(&mut |name, _| names.push(name));
        let tracked_tensors = tracked.tensors();
        let mut entry_rng = Rng::new(seed ^ 0xE17);

        for (ti, tt) in tracked_tensors.iter().enumerate() {
            let analytic = tape.grad(tt);
            let is_scoring = names[ti].starts_with("svr.");
            if is_scoring {
                // Disconnected from the loss by the hard selection.
                if let Some(g) = &analytic {
                    if g.data().iter().any(|&v| v != 0.0) {
                        return CheckReport::fail(
                            NAME,
                            format!(
                                "seed {seed}: scoring tensor {} has nonzero gradient",
                                names[ti]
                            ),
                        );
                    }
                }
            }
            let numel = tt.numel();
            let samples = numel.min(3);
            for _ in 0..samples {
                let e = entry_rng.below(numel);
                let make = |delta: f64| {
                    let mut w2 = weights.clone();
                    let mut i = 0usize;
                    w2.for_each_mut(&mut |t| {
                        if i == ti {
                            let mut data = t.data().to_vec();
                            data[e] += delta;
                            *t = Tensor::new(t.shape().to_vec(), data).expect("perturb");
                        }
                        i += 1;
                    });
                    w2
                };
                let wp = make(FD_STEP);
                let wm = make(-FD_STEP);
                if is_scoring {
                    let base_sel = selection_of(&cfg, &weights, &task.stream);
                    if selection_of(&cfg, &wp, &task.stream) != base_sel
                        || selection_of(&cfg, &wm, &task.stream) != base_sel
                    {
                        skipped_flips += 1;
                        continue;
                    }
                }
                let numeric =
                    (full_loss(&cfg, &wp, &task) - full_loss(&cfg, &wm, &task)) / (2.0 * FD_STEP);
                let a = analytic.as_ref().map_or(0.0, |g| g.data()[e]);
                let err = max_rel_err(&[a], &[numeric]);
                worst = worst.max(err);
                checked_entries += 1;
                if err >= 1e-4 {
                    return CheckReport::fail(
                        NAME,
                        format!(
                            "seed {seed} tensor {} entry {e}: analytic {a}, numeric {numeric}, rel err {err:.2e}",
                            names[ti]
                        ),
                    );
                }
            }
        }
    }
    CheckReport::pass(
        NAME,
        format!(
            "{seeds} seeds, {checked_entries} entries, worst rel err {worst:.2e}, {skipped_flips} boundary skips"
        ),
    )
}

pub fn check_formats() -> CheckReport {
    const NAME: &str = "binary format round trips";
    let dir = std::env::temp_dir().join(format!(
        "linvt-selftest-{}-{}",
        std::process::id(),
        Rng::new(0xF0).next_u64()
    ));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return CheckReport::fail(NAME, format!("temp dir: {e}"));
    }
    let result = (|| -> Result<(), String> {
        use crate::format::lvt;
        let mut rng = Rng::new(0x10);
        let stream = FrameTokenStream::new(Tensor::randn(vec![2, 3, 4], 1.0, &mut rng))
            .map_err(|e| e.to_string())?;
        for dtype in [lvt::Dtype::F32, lvt::Dtype::F64] {
            let p1 = dir.join("a.lvt");
            let p2 = dir.join("b.lvt");
            lvt::write(&p1, &stream, dtype).map_err(|e| e.to_string())?;
            let (back, d) = lvt::read(&p1).map_err(|e| e.to_string())?;
            if d != dtype {
                return Err("dtype not preserved".into());
            }
            lvt::write(&p2, &back, dtype).map_err(|e| e.to_string())?;
            let b1 = std::fs::read(&p1).map_err(|e| e.to_string())?;
            let b2 = std::fs::read(&p2).map_err(|e| e.to_string())?;
            if b1 != b2 {
                return Err(format!("{dtype:?} round trip not byte-identical"));
            }
        }
        let model = Model::build(Config::desk()).map_err(|e| e.to_string())?;
        let w1 = dir.join("w1.lvtw");
        let w2 = dir.join("w2.lvtw");
        model.save(&w1).map_err(|e| e.to_string())?;
        let loaded = Model::load(Config::desk(), &w1).map_err(|e| e.to_string())?;
        loaded.save(&w2).map_err(|e| e.to_string())?;
        let b1 = std::fs::read(&w1).map_err(|e| e.to_string())?;
        let b2 = std::fs::read(&w2).map_err(|e| e.to_string())?;
        if b1 != b2 {
            return Err("weight round trip not byte-identical".into());
        }
        let mut corrupt = b1.clone();
        corrupt.truncate(corrupt.len() / 2);
        std::fs::write(&w2, &corrupt).map_err(|e| e.to_string())?;
        match Model::load(Config::desk(), &w2) {
            Err(Error::CorruptFile(_)) => {}
            other => {
                return Err(format!(
                    "truncated file: expected corrupt error, got {other:?}"
                ))
            }
        }
        Ok(())
    })();
    let _ = std::fs::remove_dir_all(&dir);
    match result {
        Ok(()) => CheckReport::pass(NAME, "LVT1 (both dtypes) and LVTW byte-identical".into()),
        Err(msg) => CheckReport::fail(NAME, msg),
    }
}

/// The full suite at the given budget.
pub fn run_all(budget: &Budget) -> Vec<CheckReport> {
    vec![
        check_topk(budget.topk_vectors),
        check_pool_counts(budget.pool_max_n),
        check_aggregation_semantics(),
        check_convexity(budget.convexity_triples),
        check_variant_parity(budget.parity_configs),
        check_gradients(budget.grad_seeds),
        check_formats(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_a_small_budget() {
        let budget = Budget {
            grad_seeds: 2,
            convexity_triples: 10,
            topk_vectors: 50,
            pool_max_n: 32,
            parity_configs: 2,
        };
        for report in run_all(&budget) {
            assert!(report.passed, "{}: {}", report.name, report.details);
        }
    }

    #[test]
    fn nan_weights_fail_loudly_not_silently() {
        let mut model = Model::build(Config::desk()).unwrap();
        {
            let w = model.weights_mut().unwrap();
            let mut data = w.agg_k.data().to_vec();
            data[7] = f64::NAN;
            w.agg_k = Tensor::new(w.agg_k.shape().to_vec(), data).unwrap();
        }
        let mut rng = Rng::new(5);
        let stream = FrameTokenStream::new(Tensor::randn(vec![2, 8, 64], 1.0, &mut rng)).unwrap();
        match check_model_convexity(&model, &stream, &TextTokens::empty()) {
            Err(msg) => assert!(
                msg.contains("non-finite") || msg.contains("forward failed"),
                "unexpected failure text: {msg}"
            ),
            Ok(_) => panic!("NaN weights must not pass the convexity check"),
        }
    }
}
