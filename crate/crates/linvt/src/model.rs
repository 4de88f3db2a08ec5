//! Model assembly: configuration, variant topologies, weight init and
//! serialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::lvtw;
use crate::rng::Rng;
use crate::svr::{self, FrameTokenStream, MultiScaleTokens, ScaleTokens, ScoringWeights};
use crate::tensor::{matmul_data, Tape, Tensor};
use crate::tta::{self, AggregationOutput, TextTokens, TtaBlockWeights, FFN_MULT};

/// Topology of the tokenizer.
///
/// * `Avg` -- one token per frame by plain average pooling; no learnable
///   parts. Baseline only.
/// * `SingleA` -- single-scale selection followed by aggregation.
/// * `MultiA` -- aggregation first, multi-scale pooling applied to the
///   aggregated tokens.
/// * `MultiB` -- multi-scale pooling first, one shared query bank attends
///   the concatenation of all scales.
/// * `MultiC` -- multi-scale pooling first, scale-specific query banks,
///   each scale aggregated separately. The default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Avg,
    SingleA,
    MultiA,
    MultiB,
    MultiC,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Avg,
        Variant::SingleA,
        Variant::MultiA,
        Variant::MultiB,
        Variant::MultiC,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Avg => "avg",
            Variant::SingleA => "single-a",
            Variant::MultiA => "multi-a",
            Variant::MultiB => "multi-b",
            Variant::MultiC => "multi-c",
        }
    }
}

/// Full model configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Channel dimension of the visual tokens.
    pub channels: usize,
    /// Number of tokens kept by selection (clamped to the stream length).
    pub k: usize,
    /// Pooling scales as (window, stride) pairs. For `MultiA` these describe
    /// the pooling applied after aggregation.
    pub scales: Vec<(usize, usize)>,
    /// Learnable query count per bank. One bank per scale for `MultiC`,
    /// a single shared bank otherwise.
    pub queries: Vec<usize>,
    /// Aggregation block depth.
    pub depth: usize,
    /// Total scoring layers (split between spatial and temporal stacks).
    #[serde(default = "default_svr_depth")]
    pub svr_depth: usize,
    /// Attention heads in scoring and block layers.
    pub heads: usize,
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    /// Logit scale of the final aggregation softmax; `None` means
    /// `1/sqrt(channels)`.
    #[serde(default)]
    pub agg_logit_scale: Option<f64>,
}

fn default_svr_depth() -> usize {
    4
}

impl Config {
    /// Small configuration that runs the whole invariant suite in seconds.
    pub fn desk() -> Config {
        Config {
            channels: 64,
            k: 64,
            scales: vec![(1, 1), (4, 2), (16, 8)],
            queries: vec![8, 4, 2],
            depth: 2,
            svr_depth: 2,
            heads: 4,
            variant: Variant::MultiC,
            seed: 0,
            agg_logit_scale: None,
        }
    }

    /// Reference-scale configuration. The channel dimension is chosen so the
    /// learnable parameter count lands on the published 267M size.
    pub fn reference() -> Config {
        Config {
            channels: 1648,
            k: 2048,
            scales: vec![(1, 1), (4, 2), (16, 8)],
            queries: vec![64, 32, 16],
            depth: 4,
            svr_depth: 4,
            heads: 8,
            variant: Variant::MultiC,
            seed: 0,
            agg_logit_scale: None,
        }
    }

    pub fn total_queries(&self) -> usize {
        self.queries.iter().sum()
    }

    fn agg_scale(&self) -> f64 {
        self.agg_logit_scale
            .unwrap_or(1.0 / (self.channels as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.k == 0 {
            return fail("k must be positive".into());
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return fail(format!(
                "channels {} must be divisible by heads {}",
                self.channels, self.heads
            ));
        }
        if self.variant == Variant::Avg {
            return Ok(());
        }
        if self.depth == 0 {
            return fail("depth must be positive".into());
        }
        if self.svr_depth < 2 {
            return fail("svr_depth must be at least 2 (one spatial, one temporal layer)".into());
        }
        if self.queries.is_empty() || self.queries.contains(&0) {
            return fail("queries must be non-empty and positive".into());
        }
        if self.scales.is_empty() || self.scales.iter().any(|&(w, r)| w == 0 || r == 0) {
            return fail("scales must be non-empty with positive windows and strides".into());
        }
        if let Some(s) = self.agg_logit_scale {
            if !(s.is_finite() && s > 0.0) {
                return fail("agg_logit_scale must be positive and finite".into());
            }
        }
        match self.variant {
            Variant::MultiC => {
                if self.scales.len() != self.queries.len() {
                    return fail(format!(
                        "multi-c needs one query bank per scale: {} scales, {} banks",
                        self.scales.len(),
                        self.queries.len()
                    ));
                }
                if self.scales.iter().any(|&(w, _)| w > self.k) {
                    return fail(format!("pooling windows must not exceed k = {}", self.k));
                }
            }
            Variant::MultiB => {
                if self.queries.len() != 1 {
                    return fail("multi-b uses a single shared query bank".into());
                }
                if self.scales.iter().any(|&(w, _)| w > self.k) {
                    return fail(format!("pooling windows must not exceed k = {}", self.k));
                }
            }
            Variant::SingleA => {
                if self.queries.len() != 1 {
                    return fail("single-a uses a single query bank".into());
                }
                if self.scales != vec![(1, 1)] {
                    return fail("single-a uses exactly one scale with window 1".into());
                }
            }
            Variant::MultiA => {
                if self.queries.len() != 1 {
                    return fail("multi-a uses a single query bank".into());
                }
                let q0 = self.queries[0];
                if self.scales.iter().any(|&(w, _)| w > q0) {
                    return fail(format!(
                        "multi-a pooling windows must not exceed the bank size {q0}"
                    ));
                }
            }
            Variant::Avg => unreachable!(),
        }
        Ok(())
    }

    /// Derive the matched configuration for another variant, keeping the
    /// output token count identical (the pooling geometry for `MultiA` is
    /// computed from the query schedule).
    pub fn for_variant(&self, variant: Variant) -> Config {
        let mut cfg = self.clone();
        cfg.variant = variant;
        match variant {
            Variant::Avg | Variant::MultiC => {}
            Variant::SingleA => {
                cfg.queries = vec![self.total_queries()];
                cfg.scales = vec![(1, 1)];
            }
            Variant::MultiB => {
                cfg.queries = vec![self.total_queries()];
            }
            Variant::MultiA => {
                let q0 = self.total_queries();
                cfg.scales = self
                    .queries
                    .iter()
                    .map(|&qs| derive_pool_window(q0, qs))
                    .collect();
                cfg.queries = vec![q0];
            }
        }
        cfg
    }

    /// Output token count, when it is independent of the stream (every
    /// variant except `Avg`, which emits one token per frame).
    pub fn output_tokens(&self) -> Option<usize> {
        match self.variant {
            Variant::Avg => None,
            Variant::SingleA | Variant::MultiB | Variant::MultiC => Some(self.total_queries()),
            Variant::MultiA => {
                let q0 = self.queries[0];
                Some(self.scales.iter().map(|&(w, r)| (q0 - w) / r + 1).sum())
            }
        }
    }

    /// Learnable parameter count, computed without materializing weights.
    pub fn parameter_count(&self) -> usize {
        if self.variant == Variant::Avg {
            return 0;
        }
        let c = self.channels;
        let scoring = self.svr_depth * 4 * c * c;
        let blocks = self.depth * (3 * 4 * c * c + 2 * FFN_MULT * c * c);
        let queries: usize = self.queries.iter().sum::<usize>() * c;
        let agg = 2 * c * c;
        scoring + blocks + queries + agg
    }
}

/// Pooling geometry over `q0` tokens that yields exactly `target` outputs:
/// the widest window whose strided sweep produces `target` rows.
fn derive_pool_window(q0: usize, target: usize) -> (usize, usize) {
    assert!(target >= 1 && target <= q0);
    if target == 1 {
        return (q0, 1);
    }
    let stride = (q0 - 1) / (target - 1);
    let window = q0 - stride * (target - 1);
    (window, stride)
}

/// Every learnable tensor of the tokenizer.
#[derive(Debug, Clone)]
pub struct LinVTWeights {
    pub scoring: ScoringWeights,
    /// One bank per scale (`MultiC`) or a single shared bank.
    pub query_banks: Vec<Tensor>,
    pub blocks: Vec<TtaBlockWeights>,
    pub agg_q: Tensor,
    pub agg_k: Tensor,
}

impl LinVTWeights {
    pub fn init(cfg: &Config, rng: &mut Rng) -> LinVTWeights {
        let c = cfg.channels;
        let proj_std = 0.02;
        let query_std = 1.0 / (c as f64).sqrt();
        LinVTWeights {
            scoring: ScoringWeights::init(c, cfg.svr_depth, cfg.heads, proj_std, rng),
            query_banks: cfg
                .queries
                .iter()
                .map(|&q| Tensor::randn(vec![q, c], query_std, rng))
                .collect(),
            blocks: (0..cfg.depth)
                .map(|_| TtaBlockWeights::init(c, proj_std, rng))
                .collect(),
            agg_q: Tensor::randn(vec![c, c], proj_std, rng),
            agg_k: Tensor::randn(vec![c, c], proj_std, rng),
        }
    }

    /// Visit every tensor with a stable name, in serialization order.
    pub fn for_each<'a>(&'a self, f: &mut impl FnMut(String, &'a Tensor)) {
        let attn = |tag: String,
                    w: &'a crate::tensor::AttentionWeights,
                    f: &mut dyn FnMut(String, &'a Tensor)| {
            f(format!("{tag}.w_q"), &w.w_q);
            f(format!("{tag}.w_k"), &w.w_k);
            f(format!("{tag}.w_v"), &w.w_v);
            f(format!("{tag}.w_o"), &w.w_o);
        };
        for (i, w) in self.scoring.spatial.iter().enumerate() {
            attn(format!("svr.spatial.{i}"), w, f);
        }
        for (i, w) in self.scoring.temporal.iter().enumerate() {
            attn(format!("svr.temporal.{i}"), w, f);
        }
        for (i, q) in self.query_banks.iter().enumerate() {
            f(format!("tta.queries.{i}"), q);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            attn(format!("tta.block.{i}.self"), &b.self_attn, f);
            attn(format!("tta.block.{i}.visual"), &b.vis_attn, f);
            attn(format!("tta.block.{i}.text"), &b.text_attn, f);
            f(format!("tta.block.{i}.ffn_in"), &b.ffn_in);
            f(format!("tta.block.{i}.ffn_out"), &b.ffn_out);
        }
        f("agg.w_q".into(), &self.agg_q);
        f("agg.w_k".into(), &self.agg_k);
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        self.scoring.visit_mut(f);
        for q in &mut self.query_banks {
            f(q);
        }
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        f(&mut self.agg_q);
        f(&mut self.agg_k);
    }

    /// Flat view in the same order as [`LinVTWeights::for_each`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.for_each(&mut |_, t| out.push(t));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Tracked copy whose tensors are registered as leaves on `tape`.
    pub fn tracked(&self, tape: &mut Tape) -> LinVTWeights {
        let mut out = self.clone();
        out.for_each_mut(&mut |t| *t = tape.leaf(t));
        out
    }
}

/// A built tokenizer: immutable and shareable for inference.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: Config,
    weights: Option<LinVTWeights>,
}

impl Model {
    /// Validate `cfg` and initialize weights deterministically from its seed.
    pub fn build(cfg: Config) -> Result<Model> {
        cfg.validate()?;
        let weights = if cfg.variant == Variant::Avg {
            None
        } else {
            let mut rng = Rng::derive(cfg.seed, "linvt-weights");
            Some(LinVTWeights::init(&cfg, &mut rng))
        };
        Ok(Model { cfg, weights })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn weights(&self) -> Option<&LinVTWeights> {
        self.weights.as_ref()
    }

    pub fn weights_mut(&mut self) -> Option<&mut LinVTWeights> {
        self.weights.as_mut()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.as_ref().map_or(0, |w| w.parameter_count())
    }

    /// Inference forward pass on a scratch tape.
    pub fn forward(
        &self,
        stream: &FrameTokenStream,
        text: &TextTokens,
    ) -> Result<AggregationOutput> {
        let mut tape = Tape::new();
        forward_with(&mut tape, &self.cfg, self.weights.as_ref(), stream, text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        if let Some(w) = &self.weights {
            w.for_each(&mut |name, t| entries.push((name, t.clone())));
        }
        lvtw::write(path, &entries)
    }

    /// Load weights saved for the same configuration; the on-file shape
    /// table must match the layout `cfg` implies.
    pub fn load(cfg: Config, path: &Path) -> Result<Model> {
        cfg.validate()?;
        let entries = lvtw::read(path)?;
        if cfg.variant == Variant::Avg {
            if !entries.is_empty() {
                return Err(Error::WeightLayout(format!(
                    "avg has no weights but the file holds {} entries",
                    entries.len()
                )));
            }
            return Ok(Model { cfg, weights: None });
        }
        let mut template = LinVTWeights::init(&cfg, &mut Rng::new(0));
        let mut expected = Vec::new();
        template.for_each(&mut |name, t| expected.push((name, t.shape().to_vec())));
        if entries.len() != expected.len() {
            return Err(Error::WeightLayout(format!(
                "file holds {} entries, config implies {}",
                entries.len(),
                expected.len()
            )));
        }
        for ((got_name, got), (want_name, want_shape)) in entries.iter().zip(&expected) {
            if got_name != want_name {
                return Err(Error::WeightLayout(format!(
                    "entry `{got_name}` where `{want_name}` was expected"
                )));
            }
            if got.shape() != want_shape.as_slice() {
                return Err(Error::WeightShape {
                    name: got_name.clone(),
                    expected: want_shape.clone(),
                    found: got.shape().to_vec(),
                });
            }
        }
        let mut it = entries.into_iter();
        template.for_each_mut(&mut |t| {
            let (_, loaded) = it.next().expect("entry count checked");
            *t = loaded;
        });
        Ok(Model {
            cfg,
            weights: Some(template),
        })
    }
}

/// Forward pass with explicit weights (tracked weights give a trainable
/// graph on `tape`). `k` is clamped to the stream length with a warning.
pub fn forward_with(
    tape: &mut Tape,
    cfg: &Config,
    weights: Option<&LinVTWeights>,
    stream: &FrameTokenStream,
    text: &TextTokens,
) -> Result<AggregationOutput> {
    if stream.channels() != cfg.channels {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: stream.tokens().shape().to_vec(),
            rhs: vec![cfg.channels],
        });
    }
    if cfg.variant == Variant::Avg {
        return forward_avg(tape, stream);
    }
    let w = weights.ok_or_else(|| {
        Error::InvalidConfig("variant needs weights but none were provided".into())
    })?;

    let total = stream.total_tokens();
    let k = if cfg.k > total {
        eprintln!(
            "linvt: clamping k from {} to {total} (stream has only {total} tokens)",
            cfg.k
        );
        total
    } else {
        cfg.k
    };

    match cfg.variant {
        Variant::SingleA | Variant::MultiC => {
            let (_, pooled) = svr::refine(tape, stream, &w.scoring, k, &cfg.scales)?;
            let token_refs: Vec<&Tensor> = pooled.scales.iter().map(|s| &s.tokens).collect();
            let refined = tta::run_blocks(
                tape,
                &w.query_banks,
                &token_refs,
                text,
                &w.blocks,
                cfg.heads,
            )?;
            tta::linear_aggregate(tape, &pooled, &refined, &w.agg_q, &w.agg_k, cfg.agg_scale())
        }
        Variant::MultiB => {
            let (_, pooled) = svr::refine(tape, stream, &w.scoring, k, &cfg.scales)?;
            let merged = concat_scales(tape, &pooled)?;
            let token_refs = vec![&merged.scales[0].tokens];
            let refined = tta::run_blocks(
                tape,
                &w.query_banks,
                &token_refs,
                text,
                &w.blocks,
                cfg.heads,
            )?;
            tta::linear_aggregate(tape, &merged, &refined, &w.agg_q, &w.agg_k, cfg.agg_scale())
        }
        Variant::MultiA => {
            let (_, single) = svr::refine(tape, stream, &w.scoring, k, &[(1, 1)])?;
            let token_refs = vec![&single.scales[0].tokens];
            let refined = tta::run_blocks(
                tape,
                &w.query_banks,
                &token_refs,
                text,
                &w.blocks,
                cfg.heads,
            )?;
            let agg = tta::linear_aggregate(
                tape,
                &single,
                &refined,
                &w.agg_q,
                &w.agg_k,
                cfg.agg_scale(),
            )?;
            pool_after_aggregation(tape, cfg, agg, total)
        }
        Variant::Avg => unreachable!(),
    }
}

/// Baseline: one token per frame by plain averaging.
fn forward_avg(tape: &mut Tape, stream: &FrameTokenStream) -> Result<AggregationOutput> {
    let (t, n) = (stream.frames(), stream.tokens_per_frame());
    let flat = stream.flattened();
    let tokens = tape.mean_pool(&flat, n, n)?;
    let total = t * n;
    let mut prov = vec![0.0; t * total];
    for frame in 0..t {
        for p in 0..n {
            prov[frame * total + frame * n + p] = 1.0 / n as f64;
        }
    }
    Ok(AggregationOutput {
        tokens,
        attn: Vec::new(),
        provenance: Tensor::new(vec![t, total], prov)?,
    })
}

/// Merge all scales into one token set for `MultiB`.
fn concat_scales(tape: &mut Tape, pooled: &MultiScaleTokens) -> Result<MultiScaleTokens> {
    let token_refs: Vec<&Tensor> = pooled.scales.iter().map(|s| &s.tokens).collect();
    let tokens = tape.concat_rows(&token_refs)?;
    let stream_total = pooled.scales[0].provenance.shape()[1];
    let mut prov = Vec::new();
    for s in &pooled.scales {
        prov.extend_from_slice(s.provenance.data());
    }
    let rows = tokens.shape()[0];
    Ok(MultiScaleTokens {
        scales: vec![ScaleTokens {
            window: 1,
            stride: 1,
            tokens,
            provenance: Tensor::new(vec![rows, stream_total], prov)?,
        }],
    })
}

/// `MultiA` tail: pool the aggregated tokens at each configured scale and
/// compose provenance through the pooling.
fn pool_after_aggregation(
    tape: &mut Tape,
    cfg: &Config,
    agg: AggregationOutput,
    stream_total: usize,
) -> Result<AggregationOutput> {
    let q0 = agg.tokens.shape()[0];
    let mut outs = Vec::new();
    let mut prov = Vec::new();
    for &(w, r) in &cfg.scales {
        let pooled = tape.mean_pool(&agg.tokens, w, r)?;
        let m = pooled.shape()[0];
        // Pooling as a row-stochastic matrix over the aggregated tokens.
        let mut pool_mat = vec![0.0; m * q0];
        for j in 0..m {
            for i in 0..w {
                pool_mat[j * q0 + j * r + i] = 1.0 / w as f64;
            }
        }
        prov.extend(matmul_data(
            &pool_mat,
            agg.provenance.data(),
            m,
            q0,
            stream_total,
        ));
        outs.push(pooled);
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    let tokens = tape.concat_rows(&refs)?;
    let rows = tokens.shape()[0];
    Ok(AggregationOutput {
        tokens,
        attn: agg.attn,
        provenance: Tensor::new(vec![rows, stream_total], prov)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_stream(t: usize, n: usize, c: usize, seed: u64) -> FrameTokenStream {
        let mut rng = Rng::new(seed);
        FrameTokenStream::new(Tensor::randn(vec![t, n, c], 1.0, &mut rng)).unwrap()
    }

    #[test]
    fn reference_scale_parameter_count_within_ten_percent() {
        let count = Config::reference().parameter_count() as f64;
        let target = 267e6;
        let rel = (count - target).abs() / target;
        assert!(rel < 0.10, "parameter count {count} is {rel:.3} off target");
    }

    #[test]
    fn reference_config_pins_the_standard_sizes() {
        let cfg = Config::reference();
        assert_eq!(cfg.k, 2048);
        assert_eq!(cfg.queries, vec![64, 32, 16]);
        assert_eq!(cfg.heads, 8);
        assert_eq!(cfg.depth, 4);
        assert_eq!(cfg.svr_depth, 4);
        assert_eq!(cfg.output_tokens(), Some(112));
        cfg.validate().unwrap();
    }

    #[test]
    fn analytic_count_matches_materialized_weights() {
        let cfg = Config::desk();
        let model = Model::build(cfg.clone()).unwrap();
        assert_eq!(model.parameter_count(), cfg.parameter_count());
    }

    #[test]
    fn desk_build_and_forward_are_fast() {
        let start = std::time::Instant::now();
        let model = Model::build(Config::desk()).unwrap();
        let stream = random_stream(8, 16, 64, 1);
        let out = model.forward(&stream, &TextTokens::empty()).unwrap();
        assert_eq!(out.tokens.shape()[0], 14);
        assert!(
            start.elapsed().as_secs_f64() < 1.0,
            "desk forward took {:?}",
            start.elapsed()
        );
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let a = Model::build(Config::desk()).unwrap();
        let b = Model::build(Config::desk()).unwrap();
        let ta = a.weights().unwrap().tensors();
        let tb = b.weights().unwrap().tensors();
        assert_eq!(ta.len(), tb.len());
        for (x, y) in ta.iter().zip(&tb) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn avg_on_identical_tokens_returns_that_token() {
        let c = 8;
        let mut rng = Rng::new(3);
        let v: Vec<f64> = (0..c).map(|_| rng.next_normal()).collect();
        let mut data = Vec::new();
        for _ in 0..3 * 4 {
            data.extend_from_slice(&v);
        }
        let stream = FrameTokenStream::from_vec(3, 4, c, data).unwrap();
        let cfg = Config {
            variant: Variant::Avg,
            channels: c,
            ..Config::desk()
        };
        let model = Model::build(cfg).unwrap();
        let out = model.forward(&stream, &TextTokens::empty()).unwrap();
        assert_eq!(out.tokens.shape(), &[3, c]);
        for frame in 0..3 {
            for ch in 0..c {
                assert!((out.tokens.data()[frame * c + ch] - v[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn variant_output_counts_match_at_matched_configs() {
        let base = Config::desk();
        let expected = base.total_queries();
        for v in [
            Variant::SingleA,
            Variant::MultiA,
            Variant::MultiB,
            Variant::MultiC,
        ] {
            let cfg = base.for_variant(v);
            cfg.validate().unwrap();
            assert_eq!(cfg.output_tokens(), Some(expected), "{v:?}");
            let model = Model::build(cfg).unwrap();
            let stream = random_stream(4, 16, 64, 7);
            let out = model.forward(&stream, &TextTokens::empty()).unwrap();
            assert_eq!(out.tokens.shape()[0], expected, "{v:?}");
        }
    }

    #[test]
    fn output_count_is_stream_independent() {
        // Default query schedule {64, 32, 16} always emits 112 tokens.
        let cfg = Config {
            channels: 32,
            k: 256,
            queries: vec![64, 32, 16],
            heads: 4,
            ..Config::desk()
        };
        for t in [2usize, 16, 128] {
            let model = Model::build(cfg.clone()).unwrap();
            let stream = random_stream(t, 16, 32, t as u64);
            let out = model.forward(&stream, &TextTokens::empty()).unwrap();
            assert_eq!(out.tokens.shape()[0], 112, "T = {t}");
        }
    }

    #[test]
    fn provenance_rows_are_convex_end_to_end() {
        for (i, v) in [
            Variant::SingleA,
            Variant::MultiA,
            Variant::MultiB,
            Variant::MultiC,
        ]
        .into_iter()
        .enumerate()
        {
            let cfg = Config::desk().for_variant(v);
            let model = Model::build(cfg).unwrap();
            let stream = random_stream(3, 8, 64, 40 + i as u64);
            let text = tta::embed_text("focus on the needle", 64);
            let out = model.forward(&stream, &text).unwrap();
            let total = stream.total_tokens();
            for row in 0..out.tokens.shape()[0] {
                let r = &out.provenance.data()[row * total..(row + 1) * total];
                let sum: f64 = r.iter().sum();
                assert!((sum - 1.0).abs() < 1e-10, "{v:?} row {row} sums to {sum}");
                assert!(r.iter().all(|&x| x >= 0.0), "{v:?} row {row} negative");
            }
        }
    }

    #[test]
    fn provenance_reconstructs_outputs() {
        // The linearity oracle: output tokens must equal provenance times
        // the flattened input, computed by plain loops.
        for v in [
            Variant::SingleA,
            Variant::MultiA,
            Variant::MultiB,
            Variant::MultiC,
        ] {
            let cfg = Config::desk().for_variant(v);
            let model = Model::build(cfg).unwrap();
            let stream = random_stream(4, 8, 64, 77);
            let text = tta::embed_text("what is moving", 64);
            let out = model.forward(&stream, &text).unwrap();
            let flat = stream.flattened();
            let total = stream.total_tokens();
            let c = 64;
            let mut worst = 0.0f64;
            for row in 0..out.tokens.shape()[0] {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for g in 0..total {
                        acc += out.provenance.data()[row * total + g] * flat.data()[g * c + ch];
                    }
                    worst = worst.max((acc - out.tokens.data()[row * c + ch]).abs());
                }
            }
            assert!(worst < 1e-9, "{v:?}: reconstruction error {worst}");
        }
    }

    #[test]
    fn different_texts_produce_different_attention() {
        let model = Model::build(Config::desk()).unwrap();
        let stream = random_stream(3, 8, 64, 55);
        let a = model
            .forward(&stream, &tta::embed_text("find the cat", 64))
            .unwrap();
        let b = model
            .forward(&stream, &tta::embed_text("count the people", 64))
            .unwrap();
        let mut diff = 0.0f64;
        for (ma, mb) in a.attn.iter().zip(&b.attn) {
            diff = diff.max(ma.max_abs_diff(mb));
        }
        assert!(diff > 0.0, "aggregation attention ignores the text");
    }

    #[test]
    fn k_clamps_to_short_streams() {
        let cfg = Config {
            k: 4096,
            ..Config::desk()
        };
        let model = Model::build(cfg).unwrap();
        let stream = random_stream(2, 16, 64, 9);
        let out = model.forward(&stream, &TextTokens::empty()).unwrap();
        assert_eq!(out.tokens.shape()[0], 14);
    }

    #[test]
    fn invalid_configs_name_the_constraint() {
        let cfg = Config {
            heads: 5,
            ..Config::desk()
        };
        match Model::build(cfg) {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("divisible")),
            other => panic!("expected invalid config, got {other:?}"),
        }
        let cfg = Config {
            queries: vec![8, 4],
            ..Config::desk()
        };
        assert!(matches!(Model::build(cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn matched_configs_stay_matched_over_random_draws() {
        let mut rng = Rng::new(0xC0);
        for round in 0..10 {
            let heads = [1, 2, 4][rng.below(3)];
            let c = heads * (2 + rng.below(6));
            let n_scales = 1 + rng.below(3);
            let queries: Vec<usize> = (0..n_scales).map(|_| 1 + rng.below(8)).collect();
            let k = 8 + rng.below(24);
            let scales: Vec<(usize, usize)> = (0..n_scales)
                .map(|_| {
                    let w = 1 + rng.below(k.min(6));
                    (w, 1 + rng.below(4))
                })
                .collect();
            let base = Config {
                channels: c,
                k,
                scales,
                queries,
                depth: 1 + rng.below(2),
                svr_depth: 2,
                heads,
                variant: Variant::MultiC,
                seed: round,
                agg_logit_scale: None,
            };
            base.validate().unwrap();
            let expected = base.total_queries();
            let stream = random_stream(2 + rng.below(3), 16, c, round + 500);
            for v in [
                Variant::SingleA,
                Variant::MultiA,
                Variant::MultiB,
                Variant::MultiC,
            ] {
                let cfg = base.for_variant(v);
                cfg.validate().unwrap();
                let model = Model::build(cfg).unwrap();
                let out = model.forward(&stream, &TextTokens::empty()).unwrap();
                assert_eq!(
                    out.tokens.shape()[0],
                    expected,
                    "round {round} variant {v:?}"
                );
            }
        }
    }
}
