//! Toy trainer: needle-in-a-haystack retrieval.
//!
//! Each task plants one class-tagged token per class in a noise stream and
//! names one class in the text. The tokenizer is trained so some output
//! token lands on the named needle; because outputs are convex combinations
//! of input tokens, success means the aggregation learned to concentrate
//! its attention mass on the right token, conditioned on the text.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{forward_with, LinVTWeights, Model, Variant};
use crate::rng::Rng;
use crate::svr::FrameTokenStream;
use crate::tensor::{Tape, Tensor};
use crate::tta::{embed_text, AggregationOutput, TextTokens};

/// Geometry and noise level of the synthetic tasks.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub channels: usize,
    pub n_classes: usize,
    /// Per-entry standard deviation of the noise tokens. The default gives
    /// noise tokens of roughly unit norm, like the class vectors.
    pub noise_std: f64,
}

impl TaskSpec {
    pub fn new(
        frames: usize,
        tokens_per_frame: usize,
        channels: usize,
        n_classes: usize,
    ) -> TaskSpec {
        TaskSpec {
            frames,
            tokens_per_frame,
            channels,
            n_classes,
            noise_std: 1.0 / (channels as f64).sqrt(),
        }
    }

    /// The trainer's desk-scale default.
    pub fn desk() -> TaskSpec {
        TaskSpec::new(16, 16, 64, 4)
    }
}

/// One synthetic retrieval task.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub stream: FrameTokenStream,
    pub text: TextTokens,
    /// The planted token for the named class, `[1, C]`.
    pub target: Tensor,
    pub class_id: usize,
    /// All class vectors, `[1, C]` each; the distractors for the loss.
    pub class_vectors: Vec<Tensor>,
    /// Global stream index where each class's needle sits.
    pub needle_positions: Vec<usize>,
}

/// Class vectors are fixed unit-norm random directions, shared by every
/// task of the same (channels, n_classes) geometry so train and held-out
/// tasks agree on what the classes mean.
pub fn class_vectors(channels: usize, n_classes: usize) -> Vec<Tensor> {
    let mut rng = Rng::derive(0x11A5_7AC5, "class-vectors");
    (0..n_classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..channels).map(|_| rng.next_normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= norm;
            }
            Tensor::new(vec![1, channels], v).expect("class vector")
        })
        .collect()
}

pub fn class_word(class_id: usize) -> String {
    format!("class{class_id}")
}

/// Deterministically generate the task for `seed`: noise everywhere, one
/// exact class-vector needle per class at distinct random positions, text
/// naming one class.
pub fn gen_task(spec: &TaskSpec, seed: u64) -> Result<SyntheticTask> {
    let total = spec.frames * spec.tokens_per_frame;
    if spec.n_classes == 0 || spec.n_classes > total {
        return Err(Error::Capacity {
            needed: spec.n_classes,
            available: total,
        });
    }
    let vectors = class_vectors(spec.channels, spec.n_classes);
    let mut rng = Rng::derive(seed, "needle-task");
    let mut data: Vec<f64> = (0..total * spec.channels)
        .map(|_| rng.next_normal() * spec.noise_std)
        .collect();
    let positions = rng.distinct_below(total, spec.n_classes);
    for (class, &g) in positions.iter().enumerate() {
        let row = vectors[class].data();
        data[g * spec.channels..(g + 1) * spec.channels].copy_from_slice(row);
    }
    let class_id = rng.below(spec.n_classes);
    Ok(SyntheticTask {
        stream: FrameTokenStream::from_vec(
            spec.frames,
            spec.tokens_per_frame,
            spec.channels,
            data,
        )?,
        text: embed_text(&class_word(class_id), spec.channels),
        target: vectors[class_id].clone(),
        class_id,
        class_vectors: vectors,
        needle_positions: positions,
    })
}

/// InfoNCE temperature; fixed.
pub const TEMPERATURE: f64 = 0.1;

fn cosine(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let dot_t = tape.mul(a, b)?;
    let dot = tape.sum(&dot_t);
    let aa = tape.mul(a, a)?;
    let asum = tape.sum(&aa);
    let asafe = tape.add_scalar(&asum, 1e-30);
    let anorm = tape.sqrt(&asafe);
    let bb = tape.mul(b, b)?;
    let bsum = tape.sum(&bb);
    let bsafe = tape.add_scalar(&bsum, 1e-30);
    let bnorm = tape.sqrt(&bsafe);
    let denom = tape.mul(&anorm, &bnorm)?;
    tape.div(&dot, &denom)
}

/// Raw cosine between a token row and a class vector.
fn cosine_raw(token: &[f64], class: &[f64]) -> f64 {
    let dot: f64 = token.iter().zip(class).map(|(a, b)| a * b).sum();
    let na: f64 = token.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = class.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-30)
}

/// Index of the output token closest (by cosine) to the class vector.
pub fn best_token(out: &AggregationOutput, class: &Tensor) -> (usize, f64) {
    let c = class.numel();
    let rows = out.tokens.shape()[0];
    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..rows {
        let cos = cosine_raw(&out.tokens.data()[j * c..(j + 1) * c], class.data());
        if cos > best.1 {
            best = (j, cos);
        }
    }
    best
}

/// InfoNCE between the best-matching output token and the named class
/// vector against the other class vectors, plus a cosine regression term.
/// Each class scores by the output token closest to it, so carrying a
/// non-named needle in the output costs loss: the text has to decide which
/// needle survives. Nonnegative; zero exactly at a perfect retrieval whose
/// output is maximally separated from the distractor classes.
pub fn loss(tape: &mut Tape, out: &AggregationOutput, task: &SyntheticTask) -> Result<Tensor> {
    let mut cos_terms = Vec::with_capacity(task.class_vectors.len());
    for v in &task.class_vectors {
        let (j_best, _) = best_token(out, v);
        let picked = tape.slice_rows(&out.tokens, j_best, 1)?;
        cos_terms.push(cosine(tape, &picked, v)?);
    }
    let refs: Vec<&Tensor> = cos_terms.iter().collect();
    let scores = tape.stack_scalars(&refs)?;
    let scores = tape.scale(&scores, 1.0 / TEMPERATURE);
    // log-sum-exp with a detached max for stability.
    let max = scores
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.add_scalar(&scores, -max);
    let exps = tape.exp(&shifted);
    let sum = tape.sum(&exps);
    let log = tape.log(&sum);
    let lse = tape.add_scalar(&log, max);
    let s_target = tape.scale(&cos_terms[task.class_id], 1.0 / TEMPERATURE);
    let nce = tape.sub(&lse, &s_target)?;
    let neg_cos = tape.scale(&cos_terms[task.class_id], -1.0);
    let reg = tape.add_scalar(&neg_cos, 1.0);
    tape.add(&nce, &reg)
}

/// Adam moment buffers, aligned with the weight visitation order.
#[derive(Debug, Clone)]
pub struct OptState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new(lr: f64, weights: &LinVTWeights) -> OptState {
        let shapes: Vec<usize> = weights.tensors().iter().map(|t| t.numel()).collect();
        OptState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One Adam step. `grads[i]` pairs with the i-th visited tensor; `None`
    /// means the parameter received no gradient (treated as zero).
    pub fn apply(&mut self, weights: &mut LinVTWeights, grads: &[Option<Tensor>]) {
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        let mut i = 0;
        weights.for_each_mut(&mut |t| {
            if let Some(g) = &grads[i] {
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                let mut data = t.data().to_vec();
                for (j, &gj) in g.data().iter().enumerate() {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                    let mhat = m[j] / b1c;
                    let vhat = v[j] / b2c;
                    data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
                *t = Tensor::new(t.shape().to_vec(), data).expect("adam shapes");
            }
            i += 1;
        });
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub steps: usize,
    /// Peak learning rate; cosine-annealed to zero across the run.
    pub lr: f64,
    pub master_seed: u64,
    /// Evaluate on held-out tasks every this many steps (and at the end).
    pub eval_every: usize,
    pub eval_tasks: usize,
    /// Global-norm gradient clip. The sharp InfoNCE occasionally produces
    /// spike gradients that otherwise kick a converged run out of its
    /// attractor late in training.
    pub grad_clip: f64,
    /// Tasks averaged per step.
    pub batch: usize,
}

impl TrainSettings {
    pub fn new(steps: usize, master_seed: u64) -> TrainSettings {
        TrainSettings {
            steps,
            lr: 1e-3,
            master_seed,
            eval_every: 500,
            eval_tasks: 64,
            grad_clip: 5.0,
            batch: 1,
        }
    }
}

fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) {
    let mut sq = 0.0;
    for g in grads.iter().flatten() {
        sq += g.data().iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            let data = g.data().iter().map(|v| v * scale).collect();
            *g = Tensor::new(g.shape().to_vec(), data).expect("clip shapes");
        }
    }
}

fn train_task_seed(master: u64, step: usize) -> u64 {
    // Training and held-out seeds live in disjoint ranges.
    master ^ (0x7100_0000_0000 + step as u64)
}

fn eval_task_seed(master: u64, i: usize) -> u64 {
    master ^ (0xE3A1_0000_0000 + i as u64)
}

/// Fraction of held-out tasks where the output token nearest the named
/// class vector has cosine above 0.9 with the target.
pub fn eval_retrieval(
    model: &Model,
    spec: &TaskSpec,
    master_seed: u64,
    tasks: usize,
) -> Result<f64> {
    let mut hits = 0usize;
    for i in 0..tasks {
        let task = gen_task(spec, eval_task_seed(master_seed, i))?;
        let out = model.forward(&task.stream, &task.text)?;
        let (_, cos) = best_token(&out, &task.target);
        if cos > 0.9 {
            hits += 1;
        }
    }
    Ok(hits as f64 / tasks as f64)
}

/// Which class the output token set matches best: the class of highest
/// best-token cosine.
fn best_class(out: &AggregationOutput, vectors: &[Tensor]) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (c, v) in vectors.iter().enumerate() {
        let (_, cos) = best_token(out, v);
        if cos > best.1 {
            best = (c, cos);
        }
    }
    best.0
}

/// Rates of text-conditioning on held-out tasks: `changed` counts tasks
/// where swapping the named class changes which needle the output matches;
/// `both_correct` counts tasks where both texts retrieve their own needle.
pub fn text_swap_rates(
    model: &Model,
    spec: &TaskSpec,
    master_seed: u64,
    tasks: usize,
) -> Result<(f64, f64)> {
    assert!(spec.n_classes >= 2, "text swap needs at least two classes");
    let mut changed = 0usize;
    let mut both = 0usize;
    for i in 0..tasks {
        let task = gen_task(spec, eval_task_seed(master_seed, i))?;
        let a = task.class_id;
        let b = (a + 1) % spec.n_classes;
        let out_a = model.forward(&task.stream, &task.text)?;
        let text_b = embed_text(&class_word(b), spec.channels);
        let out_b = model.forward(&task.stream, &text_b)?;
        let pick_a = best_class(&out_a, &task.class_vectors);
        let pick_b = best_class(&out_b, &task.class_vectors);
        if pick_a != pick_b {
            changed += 1;
        }
        if pick_a == a && pick_b == b {
            both += 1;
        }
    }
    Ok((changed as f64 / tasks as f64, both as f64 / tasks as f64))
}

/// Train the model's weights in place. Only the tokenizer weights and the
/// optimizer state mutate; tasks are regenerated per step from disjoint
/// seeds. Returns the metric log, deterministic given the seed.
pub fn train_loop(
    model: &mut Model,
    spec: &TaskSpec,
    settings: &TrainSettings,
) -> Result<Vec<MetricRecord>> {
    if settings.steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    if model.config().variant == Variant::Avg {
        return Err(Error::InvalidConfig(
            "the avg baseline has no learnable parameters".into(),
        ));
    }
    if model.config().channels != spec.channels {
        return Err(Error::InvalidConfig(format!(
            "task channels {} do not match model channels {}",
            spec.channels,
            model.config().channels
        )));
    }
    let cfg = model.config().clone();
    let mut opt = OptState::new(settings.lr, model.weights().expect("non-avg has weights"));
    let mut log = Vec::with_capacity(settings.steps);
    for step in 0..settings.steps {
        let mut tape = Tape::new();
        let tracked = model.weights().expect("non-avg").tracked(&mut tape);
        // Batch of tasks averaged into one loss. Non-finite values anywhere
        // in the step surface as divergence.
        let batch = settings.batch.max(1);
        let l = match (|| {
            let mut parts = Vec::with_capacity(batch);
            for b in 0..batch {
                let task = gen_task(
                    spec,
                    train_task_seed(settings.master_seed, step * batch + b),
                )?;
                let out = forward_with(&mut tape, &cfg, Some(&tracked), &task.stream, &task.text)?;
                parts.push(loss(&mut tape, &out, &task)?);
            }
            let refs: Vec<&Tensor> = parts.iter().collect();
            let stacked = tape.stack_scalars(&refs)?;
            let total = tape.sum(&stacked);
            Ok(tape.scale(&total, 1.0 / batch as f64))
        })() {
            Ok(l) => l,
            Err(Error::NumericInput { .. }) => return Err(Error::Divergence { step }),
            Err(e) => return Err(e),
        };
        let loss_val = l.data()[0];
        if !loss_val.is_finite() {
            return Err(Error::Divergence { step });
        }
        tape.backward(&l)?;
        let mut grads: Vec<Option<Tensor>> =
            tracked.tensors().iter().map(|t| tape.grad(t)).collect();
        clip_global_norm(&mut grads, settings.grad_clip);
        // Cosine anneal from the peak rate toward zero so late steps lock
        // the run into its attractor instead of kicking it back out.
        let progress = step as f64 / settings.steps as f64;
        opt.lr = settings.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.apply(model.weights_mut().expect("non-avg"), &grads);

        let do_eval = (step + 1) % settings.eval_every == 0 || step + 1 == settings.steps;
        let eval_acc = if do_eval && settings.eval_tasks > 0 {
            Some(eval_retrieval(
                model,
                spec,
                settings.master_seed,
                settings.eval_tasks,
            )?)
        } else {
            None
        };
        log.push(MetricRecord {
            step,
            loss: loss_val,
            eval_acc,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err, FD_STEP};
    use crate::model::Config;

    #[test]
    fn gen_task_is_deterministic() {
        let spec = TaskSpec::new(4, 4, 16, 3);
        let a = gen_task(&spec, 9).unwrap();
        let b = gen_task(&spec, 9).unwrap();
        assert_eq!(a.stream.tokens().data(), b.stream.tokens().data());
        assert_eq!(a.class_id, b.class_id);
        assert_eq!(a.needle_positions, b.needle_positions);
    }

    #[test]
    fn zero_noise_single_class_contains_target_exactly_once() {
        let spec = TaskSpec {
            noise_std: 0.0,
            ..TaskSpec::new(2, 3, 8, 1)
        };
        let task = gen_task(&spec, 5).unwrap();
        let flat = task.stream.flattened();
        let mut matches = 0;
        for g in 0..6 {
            let row = &flat.data()[g * 8..(g + 1) * 8];
            if row == task.target.data() {
                matches += 1;
            } else {
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
        assert_eq!(matches, 1);
    }

    #[test]
    fn needle_capacity_is_enforced() {
        let spec = TaskSpec::new(1, 2, 8, 3);
        assert!(matches!(
            gen_task(&spec, 1),
            Err(Error::Capacity {
                needed: 3,
                available: 2
            })
        ));
    }

    #[test]
    fn noise_cosine_stays_small_over_seeds() {
        let spec = TaskSpec::desk();
        let vectors = class_vectors(spec.channels, spec.n_classes);
        let mut sum = 0.0;
        let mut sum_abs = 0.0;
        let mut count = 0usize;
        for seed in 0..100u64 {
            let task = gen_task(&spec, 40_000 + seed).unwrap();
            let flat = task.stream.flattened();
            for g in 0..task.stream.total_tokens() {
                if task.needle_positions.contains(&g) {
                    continue;
                }
                let row = &flat.data()[g * 64..(g + 1) * 64];
                for v in &vectors {
                    let cos = super::cosine_raw(row, v.data());
                    sum += cos;
                    sum_abs += cos.abs();
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        let mean_abs = sum_abs / count as f64;
        assert!(mean.abs() < 0.01, "mean cosine {mean}");
        assert!(mean_abs < 0.2, "mean |cosine| {mean_abs}");
    }

    fn fake_output(tokens: Tensor) -> AggregationOutput {
        let rows = tokens.shape()[0];
        let prov = Tensor::new(vec![rows, 1], vec![1.0; rows]).unwrap();
        AggregationOutput {
            tokens,
            attn: Vec::new(),
            provenance: prov,
        }
    }

    #[test]
    fn perfect_retrieval_has_near_zero_loss() {
        let spec = TaskSpec::new(2, 2, 16, 4);
        let task = gen_task(&spec, 3).unwrap();
        // Output holds the exact target; the class vectors are near-
        // orthogonal so the InfoNCE floor applies.
        let out = fake_output(task.target.clone());
        let mut tape = Tape::new();
        let l = loss(&mut tape, &out, &task).unwrap();
        // Closed form: -s_t + logsumexp(s) with s_t = 10 and the
        // distractor cosines read off the fixed class vectors.
        let s: Vec<f64> = task
            .class_vectors
            .iter()
            .map(|v| super::cosine_raw(task.target.data(), v.data()) / TEMPERATURE)
            .collect();
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + s.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let expected = lse - s[task.class_id];
        assert!((l.data()[0] - expected).abs() < 1e-9);
        assert!(l.data()[0] < 0.05, "loss {}", l.data()[0]);
    }

    #[test]
    fn distractor_output_scores_worse() {
        let spec = TaskSpec::new(2, 2, 16, 4);
        let task = gen_task(&spec, 4).unwrap();
        let other = (task.class_id + 1) % 4;
        let good = fake_output(task.target.clone());
        let bad = fake_output(task.class_vectors[other].clone());
        let mut tape = Tape::new();
        let lg = loss(&mut tape, &good, &task).unwrap().data()[0];
        let lb = loss(&mut tape, &bad, &task).unwrap().data()[0];
        assert!(lb > lg, "distractor loss {lb} <= target loss {lg}");
        assert!(lg >= 0.0 && lb >= 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let spec = TaskSpec::new(2, 2, 8, 3);
        let task = gen_task(&spec, 6).unwrap();
        let mut rng = Rng::new(77);
        let tokens0 = Tensor::randn(vec![4, 8], 0.6, &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(&tokens0);
        let l = loss(&mut tape, &fake_output(x.clone()), &task).unwrap();
        tape.backward(&l).unwrap();
        let analytic = tape.grad(&x).unwrap();
        let task2 = task.clone();
        let numeric = central_diff(
            |probe| {
                let mut t = Tape::new();
                let xt = Tensor::new(vec![4, 8], probe.to_vec()).unwrap();
                loss(&mut t, &fake_output(xt), &task2).unwrap().data()[0]
            },
            tokens0.data(),
            FD_STEP,
        );
        let err = max_rel_err(analytic.data(), &numeric);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn zero_steps_is_a_precondition_error() {
        let mut model = Model::build(Config::desk()).unwrap();
        let spec = TaskSpec::desk();
        assert!(matches!(
            train_loop(&mut model, &spec, &TrainSettings::new(0, 1)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn avg_cannot_train() {
        let cfg = Config {
            variant: Variant::Avg,
            ..Config::desk()
        };
        let mut model = Model::build(cfg).unwrap();
        assert!(matches!(
            train_loop(&mut model, &TaskSpec::desk(), &TrainSettings::new(1, 1)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let spec = TaskSpec::new(4, 4, 32, 2);
        let cfg = Config {
            channels: 32,
            k: 16,
            queries: vec![4, 2],
            scales: vec![(1, 1), (4, 2)],
            ..Config::desk()
        };
        let mut settings = TrainSettings::new(5, 42);
        settings.eval_every = 5;
        settings.eval_tasks = 4;
        let run = || {
            let mut model = Model::build(cfg.clone()).unwrap();
            train_loop(&mut model, &spec, &settings).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            assert_eq!(x.eval_acc, y.eval_acc);
        }
    }

    #[test]
    fn divergence_reports_the_step() {
        let spec = TaskSpec::new(2, 4, 32, 2);
        let cfg = Config {
            channels: 32,
            k: 8,
            queries: vec![2, 2],
            scales: vec![(1, 1), (2, 2)],
            ..Config::desk()
        };
        let mut model = Model::build(cfg).unwrap();
        let mut settings = TrainSettings::new(50, 7);
        settings.lr = 1e300; // force the weights to blow up
        settings.eval_tasks = 0;
        match train_loop(&mut model, &spec, &settings) {
            Err(Error::Divergence { step }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn short_training_reduces_loss_on_desk_config() {
        // Median first-vs-last comparison over 5 seeds at 200 steps.
        let spec = TaskSpec::desk();
        let mut improvements = Vec::new();
        for seed in 0..5u64 {
            let cfg = Config {
                seed,
                ..Config::desk()
            };
            let mut model = Model::build(cfg).unwrap();
            let mut settings = TrainSettings::new(200, seed);
            settings.eval_tasks = 0;
            let log = train_loop(&mut model, &spec, &settings).unwrap();
            let head: f64 = log[..20].iter().map(|r| r.loss).sum::<f64>() / 20.0;
            let tail: f64 = log[log.len() - 20..].iter().map(|r| r.loss).sum::<f64>() / 20.0;
            improvements.push(tail - head);
        }
        improvements.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = improvements[2];
        assert!(median < 0.0, "median loss change {median} (want negative)");
    }
}
