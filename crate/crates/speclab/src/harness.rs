//! End-to-end experiment driver: configuration, corpus ingestion, training,
//! the speculative round loop, metrics (τ, abstract cost, speedup),
//! per-position acceptance profiling, and report serialization.
//!
//! The abstract cost model replaces wall-clock measurement: all costs are in
//! units of one target forward pass (`c_V`). Defaults (`c_T = 0.10` per
//! serial step, `c_M = 0.05` per parallel batch, `c_O = 0.05` round
//! overhead) are illustrative desk-scale stand-ins, not hardware
//! measurements. Per-round drafting cost by architecture:
//!
//! * hybrid — `serial_steps·c_T + c_M + c_V + c_O`
//! * serial_only — `draft_len·c_T + c_V + c_O`
//! * parallel_only — `c_M + c_V + c_O`
//!
//! and `cost_speedup = τ·c_V / round_cost`, with vanilla decoding defined
//! as `c_V` per token.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::drafter::{train_drafter, Architecture, Drafter, DrafterConfig};
use crate::error::{Error, Result};
use crate::fsio;
use crate::ngram::{proportional_lambda, train_ngram, vanilla_decode, DecodeMode, NgramModel};
use crate::rng::Rng;
use crate::theory::SweepRow;
use crate::tree::{apply_fta, select_candidates, DraftTree};
use crate::verify::{verify_greedy, verify_sampling};
use crate::vocab::{Token, TokenSeq, Vocab, VocabMode};

/// Context window used for per-position acceptance profiling.
pub const PROFILE_WINDOW: usize = 8;

/// One-sided 99% normal critical value used by the profile sign test.
pub const PROFILE_Z: f64 = 2.326;

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

/// Abstract per-component costs, in units of one target forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Costs {
    /// Cost of one autoregressive serial-head step.
    #[serde(rename = "c_T")]
    pub serial_step: f64,
    /// Cost of evaluating all parallel heads once (a single batch).
    #[serde(rename = "c_M")]
    pub parallel_batch: f64,
    /// Cost of one target forward pass (the vanilla per-token cost).
    #[serde(rename = "c_V")]
    pub target_forward: f64,
    /// Fixed per-round overhead (tree assembly, selection, bookkeeping).
    #[serde(rename = "c_O")]
    pub overhead: f64,
}

impl Default for Costs {
    fn default() -> Self {
        Costs {
            serial_step: 0.10,
            parallel_batch: 0.05,
            target_forward: 1.0,
            overhead: 0.05,
        }
    }
}

impl Costs {
    /// All components must be finite and non-negative, and the target
    /// forward cost strictly positive.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("c_T", self.serial_step),
            ("c_M", self.parallel_batch),
            ("c_V", self.target_forward),
            ("c_O", self.overhead),
        ];
        for (name, value) in named {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::BadCosts(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        if self.target_forward <= 0.0 {
            return Err(Error::BadCosts(format!(
                "c_V must be > 0, got {}",
                self.target_forward
            )));
        }
        Ok(())
    }
}

/// Abstract cost of one drafting + verification round for the given
/// architecture.
pub fn round_cost(
    architecture: Architecture,
    costs: &Costs,
    serial_steps: usize,
    draft_len: usize,
) -> Result<f64> {
    costs.validate()?;
    let drafting = match architecture {
        Architecture::Hybrid => serial_steps as f64 * costs.serial_step + costs.parallel_batch,
        Architecture::SerialOnly => draft_len as f64 * costs.serial_step,
        Architecture::ParallelOnly => costs.parallel_batch,
    };
    Ok(drafting + costs.target_forward + costs.overhead)
}

/// Speedup of speculative decoding over vanilla decoding under the abstract
/// cost model: τ tokens per round at `round_cost`, versus one token per
/// `c_V`.
pub fn cost_speedup(
    tau: f64,
    architecture: Architecture,
    costs: &Costs,
    serial_steps: usize,
    draft_len: usize,
) -> Result<f64> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::BadCosts(format!(
            "tau must be finite and >= 0, got {tau}"
        )));
    }
    Ok(tau * costs.target_forward / round_cost(architecture, costs, serial_steps, draft_len)?)
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Target model section of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    /// Maximum n-gram order of the target.
    pub order: usize,
    /// Additive smoothing constant.
    pub alpha: f64,
    /// Interpolation weights (length `order`); omitted = proportional to
    /// component order.
    pub lambda: Option<Vec<f64>>,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            order: 4,
            alpha: 0.1,
            lambda: None,
        }
    }
}

/// Drafter section of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrafterSection {
    /// Drafting architecture: `hybrid`, `serial_only`, or `parallel_only`.
    pub architecture: String,
    /// N-gram order of the serial head.
    pub serial_order: usize,
    /// Autoregressive serial steps in the hybrid draft.
    pub serial_steps: usize,
    /// Number of parallel skip-gram heads (offsets 1..=n); total draft
    /// length is `serial_steps + parallel_offsets` for every architecture.
    pub parallel_offsets: usize,
    /// Additive smoothing constant for all drafter components.
    pub alpha: f64,
}

impl Default for DrafterSection {
    fn default() -> Self {
        DrafterSection {
            architecture: "hybrid".to_string(),
            serial_order: 3,
            serial_steps: 2,
            parallel_offsets: 5,
            alpha: 0.1,
        }
    }
}

/// Tree construction/selection section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeSection {
    /// Serial beam width (and per-node draw count in sampling mode).
    pub topk: usize,
    /// Candidates kept per parallel offset.
    pub s: usize,
    /// Verification budget: number of tree nodes selected per round.
    pub budget: usize,
    /// Full-tree-attention supplementation: `"on"` or `"off"`.
    pub fta: String,
}

impl Default for TreeSection {
    fn default() -> Self {
        TreeSection {
            topk: 10,
            s: 35,
            budget: 8,
            fta: "on".to_string(),
        }
    }
}

/// Decoding/experiment section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    /// Sampling temperature; 0 selects greedy decoding.
    pub temperature: f64,
    /// Prompt length in tokens.
    pub prompt_len: usize,
    /// Tokens to generate per prompt (0 = empty run).
    pub gen_len: usize,
    /// Number of prompts, drawn from the held-out corpus tail.
    pub num_prompts: usize,
    /// Root seed for prompt sampling and per-prompt rng streams.
    pub seed: u64,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            temperature: 0.0,
            prompt_len: 16,
            gen_len: 256,
            num_prompts: 64,
            seed: 7,
        }
    }
}

/// Complete experiment configuration (TOML; unknown keys are errors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path to the training corpus.
    pub corpus_path: String,
    /// Tokenizer mode: `"word"` or `"byte"`.
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    /// Target model parameters.
    #[serde(default)]
    pub target: TargetSection,
    /// Drafter parameters.
    #[serde(default)]
    pub drafter: DrafterSection,
    /// Tree construction and selection parameters.
    #[serde(default)]
    pub tree: TreeSection,
    /// Decoding loop parameters.
    #[serde(default)]
    pub decode: DecodeSection,
    /// Abstract cost model.
    #[serde(default)]
    pub costs: Costs,
}

fn default_tokenizer() -> String {
    "word".to_string()
}

impl ExperimentConfig {
    /// A default configuration for the given corpus path.
    pub fn for_corpus(corpus_path: &str) -> ExperimentConfig {
        ExperimentConfig {
            corpus_path: corpus_path.to_string(),
            tokenizer: default_tokenizer(),
            target: TargetSection::default(),
            drafter: DrafterSection::default(),
            tree: TreeSection::default(),
            decode: DecodeSection::default(),
            costs: Costs::default(),
        }
    }

    /// Parse a TOML config; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Load and validate a TOML config file.
    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&fsio::read_to_string(path)?)
    }

    /// Serialize back to TOML (used for the report's config echo).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Persist(e.to_string()))
    }

    /// The parsed tokenizer mode.
    pub fn vocab_mode(&self) -> Result<VocabMode> {
        VocabMode::parse(&self.tokenizer).map_err(|_| {
            Error::Config(format!(
                "tokenizer must be \"word\" or \"byte\", got {:?}",
                self.tokenizer
            ))
        })
    }

    /// The parsed drafting architecture.
    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::parse(&self.drafter.architecture)
    }

    /// Whether FTA supplementation is enabled.
    pub fn fta_enabled(&self) -> Result<bool> {
        match self.tree.fta.as_str() {
            "on" => Ok(true),
            "off" => Ok(false),
            other => Err(Error::Config(format!(
                "tree.fta must be \"on\" or \"off\", got {other:?}"
            ))),
        }
    }

    /// Target interpolation weights: explicit, or proportional to component
    /// order when omitted.
    pub fn target_lambda(&self) -> Vec<f64> {
        self.target
            .lambda
            .clone()
            .unwrap_or_else(|| proportional_lambda(self.target.order))
    }

    /// Total draft positions per round, identical across architectures.
    pub fn draft_len(&self) -> usize {
        self.drafter.serial_steps + self.drafter.parallel_offsets
    }

    /// The drafter training configuration this experiment config implies.
    pub fn drafter_config(&self) -> Result<DrafterConfig> {
        Ok(DrafterConfig {
            architecture: self.architecture()?,
            draft_len: self.draft_len(),
            serial_order: self.drafter.serial_order,
            serial_steps: self.drafter.serial_steps,
            alpha: self.drafter.alpha,
            serial_lambda: proportional_lambda(self.drafter.serial_order),
        })
    }

    /// Validate every cross-field invariant that training alone would not
    /// catch.
    pub fn validate(&self) -> Result<()> {
        self.vocab_mode()?;
        self.architecture()?;
        self.fta_enabled()?;
        self.costs.validate()?;
        let positive: [(&str, usize); 8] = [
            ("target.order", self.target.order),
            ("drafter.serial_order", self.drafter.serial_order),
            ("drafter.serial_steps", self.drafter.serial_steps),
            ("drafter.parallel_offsets", self.drafter.parallel_offsets),
            ("tree.topk", self.tree.topk),
            ("tree.s", self.tree.s),
            ("tree.budget", self.tree.budget),
            ("decode.prompt_len", self.decode.prompt_len),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.decode.num_prompts == 0 {
            return Err(Error::Config("decode.num_prompts must be >= 1".to_string()));
        }
        if !self.decode.temperature.is_finite() || self.decode.temperature < 0.0 {
            return Err(Error::Config(format!(
                "decode.temperature must be finite and >= 0, got {}",
                self.decode.temperature
            )));
        }
        if !self.target.alpha.is_finite() || self.target.alpha <= 0.0 {
            return Err(Error::Config(format!(
                "target.alpha must be > 0, got {}",
                self.target.alpha
            )));
        }
        if !self.drafter.alpha.is_finite() || self.drafter.alpha <= 0.0 {
            return Err(Error::Config(format!(
                "drafter.alpha must be > 0, got {}",
                self.drafter.alpha
            )));
        }
        if let Some(lambda) = &self.target.lambda {
            if lambda.len() != self.target.order {
                return Err(Error::Config(format!(
                    "target.lambda must have length {} (one weight per order), got {}",
                    self.target.order,
                    lambda.len()
                )));
            }
        }
        // A drafter at least as high-order as the target defeats the point
        // of speculation, except in the documented perfect-drafter limit
        // where equality is intentional.
        if self.drafter.serial_order > self.target.order {
            return Err(Error::Config(format!(
                "drafter.serial_order ({}) must not exceed target.order ({})",
                self.drafter.serial_order, self.target.order
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Preparation (corpus + training)
// ---------------------------------------------------------------------------

/// Trained models plus the tokenized corpus and its train/held-out split.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// The exact target model.
    pub target: NgramModel,
    /// The trained drafter for the configured architecture.
    pub drafter: Drafter,
    /// The full tokenized corpus.
    pub tokens: TokenSeq,
    /// Tokens `0..train_len` were used for training; the rest are held out
    /// for prompts and profiling.
    pub train_len: usize,
}

/// Read the corpus, build the vocabulary on the full text, train target and
/// drafter on the first 90%, and hold out the final 10% for prompts and
/// per-position profiling.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let bytes = fsio::read_bytes(std::path::Path::new(&config.corpus_path))?;
    let vocab = Vocab::build(&bytes, config.vocab_mode()?)?;
    let tokens = vocab.tokenize(&bytes)?;
    let train_len = tokens.len() * 9 / 10;
    let held = tokens.len() - train_len;
    let need = config.decode.prompt_len.max(PROFILE_WINDOW + 1);
    if held < need {
        return Err(Error::CorpusTooShort {
            need: need * 10,
            got: tokens.len(),
        });
    }
    let target = train_ngram(
        &tokens[..train_len],
        config.target.order,
        config.target.alpha,
        &config.target_lambda(),
        &vocab,
    )?;
    let drafter = train_drafter(&tokens[..train_len], &config.drafter_config()?, &vocab)?;
    Ok(Prepared {
        target,
        drafter,
        tokens,
        train_len,
    })
}

// ---------------------------------------------------------------------------
// Round loop
// ---------------------------------------------------------------------------

/// Per-round record of one speculative decoding round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundReport {
    /// Sequential round number within the experiment.
    pub round_index: usize,
    /// Accepted draft tokens this round.
    pub accepted_len: usize,
    /// Token id of the bonus token.
    pub bonus: u32,
    /// Candidate paths verified.
    pub candidate_count: usize,
    /// Distinct `(depth, token)` pairs in the verification batch; identical
    /// with FTA on and off for the same pre-FTA candidates.
    pub distinct_token_count: usize,
    /// Total path-length tokens added by FTA supplementation (0 when off).
    pub fta_extension: usize,
}

/// Knobs for one generation loop, extracted from the config.
#[derive(Debug, Clone, Copy)]
pub struct RoundOptions {
    /// Serial beam width / per-node draw count.
    pub topk: usize,
    /// Parallel candidates (or draws) per offset.
    pub s: usize,
    /// Verification budget per round.
    pub budget: usize,
    /// Apply FTA supplementation (greedy mode only).
    pub fta: bool,
    /// 0 = greedy; > 0 = sampling.
    pub temperature: f64,
    /// Stop once this many tokens have been emitted.
    pub gen_len: usize,
}

impl RoundOptions {
    /// Extract the loop knobs from a validated config.
    pub fn from_config(config: &ExperimentConfig) -> Result<RoundOptions> {
        Ok(RoundOptions {
            topk: config.tree.topk,
            s: config.tree.s,
            budget: config.tree.budget,
            fta: config.fta_enabled()?,
            temperature: config.decode.temperature,
            gen_len: config.decode.gen_len,
        })
    }
}

/// Run speculative rounds until at least `gen_len` tokens are emitted;
/// returns the emitted stream (which may overshoot `gen_len` by part of the
/// final round) and one report per round.
///
/// Greedy mode (temperature 0) uses deterministic top-k drafting, budgeted
/// selection, optional FTA, and exact prefix matching. Sampling mode draws
/// candidates from the drafter's conditionals and verifies by multi-draft
/// rejection sampling; to keep that verification exactly lossless it runs
/// at saturating selection (every drawn node participates, so sibling
/// groups stay complete) and never applies FTA (splicing score-selected
/// tokens into foreign branches would bias their sibling statistics).
pub fn generate_speculative(
    target: &NgramModel,
    drafter: &Drafter,
    prompt: &[Token],
    opts: &RoundOptions,
    rng: &mut Rng,
) -> Result<(TokenSeq, Vec<RoundReport>)> {
    if prompt.is_empty() {
        return Err(Error::BadParameter {
            name: "prompt",
            detail: "generation requires a non-empty prompt".to_string(),
        });
    }
    let greedy = opts.temperature == 0.0;
    let mut ctx = prompt.to_vec();
    let mut emitted: TokenSeq = Vec::with_capacity(opts.gen_len + drafter.draft_len());
    let mut rounds = Vec::new();
    while emitted.len() < opts.gen_len {
        let root = *ctx.last().expect("context is non-empty");
        let proposal = if greedy {
            drafter.propose(&ctx, opts.topk, opts.s)?
        } else {
            drafter.propose_sampled(&ctx, opts.topk, opts.s, opts.temperature, rng)?
        };
        let tree = DraftTree::from_proposal(root, &proposal)?;
        let budget = if greedy {
            opts.budget
        } else {
            tree.nodes.len().max(opts.budget)
        };
        let selected = select_candidates(&tree, budget)?;
        let (candidates, fta_extension) = if greedy && opts.fta {
            let supplemented = apply_fta(&selected, &tree)?;
            let added: usize = selected
                .paths
                .iter()
                .zip(&supplemented.paths)
                .map(|(a, b)| b.tokens.len() - a.tokens.len())
                .sum();
            (supplemented, added)
        } else {
            (selected, 0)
        };
        let result = if greedy {
            verify_greedy(target, &ctx, &candidates)
        } else {
            verify_sampling(
                target,
                drafter,
                &ctx,
                &tree,
                &candidates,
                opts.temperature,
                rng,
            )?
        };
        rounds.push(RoundReport {
            round_index: rounds.len(),
            accepted_len: result.accepted_len,
            bonus: result.bonus.0,
            candidate_count: candidates.paths.len(),
            distinct_token_count: candidates.distinct_tokens.len(),
            fta_extension,
        });
        for t in result.accepted.iter().chain(std::iter::once(&result.bonus)) {
            emitted.push(*t);
            ctx.push(*t);
        }
    }
    Ok((emitted, rounds))
}

/// One round of the paired FTA experiment: the same pre-FTA candidates
/// verified both ways.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairedFtaRound {
    /// Greedy accepted length with FTA supplementation.
    pub with_fta: usize,
    /// Greedy accepted length without it.
    pub without_fta: usize,
    /// Distinct `(depth, token)` batch size with FTA.
    pub distinct_with: usize,
    /// Distinct `(depth, token)` batch size without FTA.
    pub distinct_without: usize,
    /// Total path-length tokens FTA added this round (0 = nothing to
    /// extend).
    pub extension_tokens: usize,
}

/// Run `round_count` greedy rounds, verifying each round's pre-FTA
/// candidate set both with and without FTA supplementation (the stream
/// advances with the supplemented result, which is lossless either way).
pub fn paired_fta_rounds(
    target: &NgramModel,
    drafter: &Drafter,
    prompt: &[Token],
    opts: &RoundOptions,
    round_count: usize,
) -> Result<Vec<PairedFtaRound>> {
    let mut ctx = prompt.to_vec();
    let mut rounds = Vec::with_capacity(round_count);
    for _ in 0..round_count {
        let root = *ctx.last().ok_or_else(|| Error::BadParameter {
            name: "prompt",
            detail: "paired FTA run requires a non-empty prompt".to_string(),
        })?;
        let proposal = drafter.propose(&ctx, opts.topk, opts.s)?;
        let tree = DraftTree::from_proposal(root, &proposal)?;
        let selected = select_candidates(&tree, opts.budget)?;
        let supplemented = apply_fta(&selected, &tree)?;
        let extension_tokens = selected
            .paths
            .iter()
            .zip(&supplemented.paths)
            .map(|(a, b)| b.tokens.len() - a.tokens.len())
            .sum();
        let plain = verify_greedy(target, &ctx, &selected);
        let with = verify_greedy(target, &ctx, &supplemented);
        rounds.push(PairedFtaRound {
            with_fta: with.accepted_len,
            without_fta: plain.accepted_len,
            distinct_with: supplemented.distinct_tokens.len(),
            distinct_without: selected.distinct_tokens.len(),
            extension_tokens,
        });
        for t in with.accepted.iter().chain(std::iter::once(&with.bonus)) {
            ctx.push(*t);
        }
    }
    Ok(rounds)
}

// ---------------------------------------------------------------------------
// Per-position acceptance profiling
// ---------------------------------------------------------------------------

/// Dense per-position accuracy counts of a drafter's top-1 chain against
/// the target's greedy chain over held-out contexts, with paired
/// adjacent-position sign-test counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionProfile {
    /// Contexts evaluated (identical for every position).
    pub trials: u64,
    /// Per-position match counts (length = draft length).
    pub hits: Vec<u64>,
    /// `gains[i]`: contexts where position `i+2` matched but `i+1` did not
    /// (evidence against a non-increasing profile).
    pub gains: Vec<u64>,
    /// `losses[i]`: contexts where position `i+1` matched but `i+2` did not.
    pub losses: Vec<u64>,
}

impl PositionProfile {
    /// Per-position acceptance rates.
    pub fn rates(&self) -> Vec<f64> {
        self.hits
            .iter()
            .map(|&h| h as f64 / self.trials.max(1) as f64)
            .collect()
    }

    /// Largest paired sign-test statistic in favor of an *increase* between
    /// adjacent positions. Under a non-increasing profile this stays below
    /// the one-sided critical value up to noise.
    pub fn max_inversion_z(&self) -> f64 {
        self.gains
            .iter()
            .zip(&self.losses)
            .map(|(&g, &l)| {
                let n = g + l;
                if n == 0 {
                    0.0
                } else {
                    (g as f64 - l as f64) / (n as f64).sqrt()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Whether no adjacent pair shows a statistically significant increase
    /// at the given one-sided critical value.
    pub fn is_nonincreasing(&self, z_critical: f64) -> bool {
        self.max_inversion_z() <= z_critical
    }
}

/// Profile the drafter's per-position top-1 accuracy against the target's
/// greedy chain on every window of the held-out tokens.
pub fn profile_positions(
    drafter: &Drafter,
    target: &NgramModel,
    held: &[Token],
    window: usize,
) -> Result<PositionProfile> {
    if held.len() < window + 1 {
        return Err(Error::CorpusTooShort {
            need: (window + 1) * 10,
            got: held.len(),
        });
    }
    let d = drafter.draft_len();
    let mut profile = PositionProfile {
        trials: 0,
        hits: vec![0; d],
        gains: vec![0; d.saturating_sub(1)],
        losses: vec![0; d.saturating_sub(1)],
    };
    for start in 0..=held.len() - window {
        let ctx = &held[start..start + window];
        let truth = vanilla_decode(target, ctx, d, DecodeMode::Greedy)?;
        let chain = drafter.top1_chain(ctx)?;
        let matched: Vec<bool> = (0..d).map(|i| chain[i] == truth[i]).collect();
        profile.trials += 1;
        for (i, &hit) in matched.iter().enumerate() {
            if hit {
                profile.hits[i] += 1;
            }
            if i + 1 < d {
                match (hit, matched[i + 1]) {
                    (false, true) => profile.gains[i] += 1,
                    (true, false) => profile.losses[i] += 1,
                    _ => {}
                }
            }
        }
    }
    Ok(profile)
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

/// Aggregated result of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// The configuration that produced this report.
    pub config: ExperimentConfig,
    /// Mean tokens emitted per round (accepted drafts + bonus); 0 for an
    /// empty run.
    pub tau: f64,
    /// Total tokens emitted across all prompts and rounds.
    pub total_tokens: usize,
    /// True when `gen_len = 0` produced zero rounds (τ undefined,
    /// reported as 0).
    pub empty_run: bool,
    /// Speedup over vanilla decoding under the abstract cost model.
    pub cost_speedup: f64,
    /// Dense held-out per-position acceptance rates (length = draft
    /// length).
    pub per_position: Vec<f64>,
    /// The profile counts behind `per_position`.
    pub profile: PositionProfile,
    /// Wall-clock duration of the run in seconds. Excluded from determinism
    /// comparisons.
    pub wall_time_s: f64,
    /// One record per round, in execution order.
    pub rounds: Vec<RoundReport>,
}

impl ExperimentReport {
    /// Number of rounds executed.
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }
}

/// Run the full experiment described by `config`: train, generate for every
/// prompt, profile, and aggregate. Deterministic given the seed (modulo
/// `wall_time_s`).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let prepared = prepare(config)?;
    let opts = RoundOptions::from_config(config)?;
    let mut rng = Rng::new(config.decode.seed);

    let held_len = prepared.tokens.len() - prepared.train_len;
    let span = held_len - config.decode.prompt_len + 1;
    let prompt_starts: Vec<usize> = (0..config.decode.num_prompts)
        .map(|_| prepared.train_len + rng.below(span as u64) as usize)
        .collect();

    let mut rounds: Vec<RoundReport> = Vec::new();
    let mut total_tokens = 0usize;
    for start_ix in prompt_starts {
        let prompt = &prepared.tokens[start_ix..start_ix + config.decode.prompt_len];
        let mut prompt_rng = rng.split();
        let (emitted, prompt_rounds) = generate_speculative(
            &prepared.target,
            &prepared.drafter,
            prompt,
            &opts,
            &mut prompt_rng,
        )?;
        total_tokens += emitted.len();
        for mut round in prompt_rounds {
            round.round_index = rounds.len();
            rounds.push(round);
        }
    }

    let empty_run = rounds.is_empty();
    let tau = if empty_run {
        0.0
    } else {
        total_tokens as f64 / rounds.len() as f64
    };
    let profile = profile_positions(
        &prepared.drafter,
        &prepared.target,
        &prepared.tokens[prepared.train_len..],
        PROFILE_WINDOW,
    )?;
    let speedup = cost_speedup(
        tau,
        config.architecture()?,
        &config.costs,
        config.drafter.serial_steps,
        config.draft_len(),
    )?;
    Ok(ExperimentReport {
        config: config.clone(),
        tau,
        total_tokens,
        empty_run,
        cost_speedup: speedup,
        per_position: profile.rates(),
        profile,
        wall_time_s: start.elapsed().as_secs_f64(),
        rounds,
    })
}

/// One architecture's line in the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    /// Architecture name.
    pub architecture: String,
    /// Mean tokens per round.
    pub tau: f64,
    /// Abstract-cost speedup.
    pub cost_speedup: f64,
    /// Dense held-out per-position acceptance rates.
    pub per_position: Vec<f64>,
}

/// Per-architecture comparison under identical corpus, seed, and costs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    /// One row per architecture: hybrid, serial_only, parallel_only.
    pub rows: Vec<ComparisonRow>,
}

/// Run all three architectures under the same seed, corpus, and costs.
pub fn compare_architectures(config: &ExperimentConfig) -> Result<ComparisonTable> {
    let mut rows = Vec::with_capacity(3);
    for architecture in Architecture::all() {
        let mut arch_config = config.clone();
        arch_config.drafter.architecture = architecture.as_str().to_string();
        let report = run_experiment(&arch_config)?;
        rows.push(ComparisonRow {
            architecture: architecture.as_str().to_string(),
            tau: report.tau,
            cost_speedup: report.cost_speedup,
            per_position: report.per_position,
        });
    }
    Ok(ComparisonTable { rows })
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

/// Output format for [`write_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Per-round CSV (`round,accepted_len,candidates,distinct_tokens,fta_extension`).
    Csv,
    /// Complete structured text, including config echo and profile.
    Text,
}

impl ReportFormat {
    /// Parse `"csv"` or `"text"`.
    pub fn parse(s: &str) -> Result<ReportFormat> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::Config(format!(
                "format must be \"csv\" or \"text\", got {other:?}"
            ))),
        }
    }
}

/// Render the per-round CSV. An empty run yields only the header line.
pub fn rounds_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("round,accepted_len,candidates,distinct_tokens,fta_extension\n");
    for r in &report.rounds {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.round_index,
            r.accepted_len,
            r.candidate_count,
            r.distinct_token_count,
            r.fta_extension
        ));
    }
    out
}

/// One parsed row of the per-round CSV (the five documented columns; the
/// bonus token id lives only in the structured-text format).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvRound {
    /// Round index.
    pub round: usize,
    /// Accepted draft tokens.
    pub accepted_len: usize,
    /// Candidate paths verified.
    pub candidates: usize,
    /// Distinct `(depth, token)` batch size.
    pub distinct_tokens: usize,
    /// Tokens added by FTA.
    pub fta_extension: usize,
}

/// Parse a per-round CSV produced by [`rounds_csv`].
pub fn parse_rounds_csv(text: &str) -> Result<Vec<CsvRound>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "round,accepted_len,candidates,distinct_tokens,fta_extension" {
        return Err(Error::Persist(format!(
            "unexpected rounds CSV header: {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Persist(format!(
                "expected 5 CSV fields, got {}",
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Persist(format!("bad CSV integer {s:?}")))
        };
        rows.push(CsvRound {
            round: parse(fields[0])?,
            accepted_len: parse(fields[1])?,
            candidates: parse(fields[2])?,
            distinct_tokens: parse(fields[3])?,
            fta_extension: parse(fields[4])?,
        });
    }
    Ok(rows)
}

/// Render the architecture comparison CSV
/// (`architecture,tau,cost_speedup,p1..pD`).
pub fn comparison_csv(table: &ComparisonTable) -> String {
    let d = table.rows.first().map_or(0, |r| r.per_position.len());
    let mut header = String::from("architecture,tau,cost_speedup");
    for i in 1..=d {
        header.push_str(&format!(",p{i}"));
    }
    let mut out = header;
    out.push('\n');
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{}",
            row.architecture, row.tau, row.cost_speedup
        ));
        for p in &row.per_position {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    out
}

/// Parse a comparison CSV produced by [`comparison_csv`].
pub fn parse_comparison_csv(text: &str) -> Result<ComparisonTable> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("architecture,tau,cost_speedup") {
        return Err(Error::Persist(format!(
            "unexpected comparison CSV header: {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::Persist("comparison CSV row too short".to_string()));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Persist(format!("bad CSV float {s:?}")))
        };
        rows.push(ComparisonRow {
            architecture: fields[0].to_string(),
            tau: parse(fields[1])?,
            cost_speedup: parse(fields[2])?,
            per_position: fields[3..]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<f64>>>()?,
        });
    }
    Ok(ComparisonTable { rows })
}

/// Render the ordering-theorem sweep CSV (`D,d,E_orig,E_con,E_imp,ok`).
/// Infeasible concentrate constructions leave `E_con` empty.
pub fn theory_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("D,d,E_orig,E_con,E_imp,ok\n");
    for row in rows {
        let e_con = row.e_concentrated.map_or(String::new(), |v| v.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.draft_len, row.d, row.e_original, e_con, row.e_improved, row.ok
        ));
    }
    out
}

fn float_line(value: f64) -> String {
    // Shortest round-trip representation: `f64` Display.
    value.to_string()
}

fn join_u64(values: &[u64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Render the complete structured-text report; parses back losslessly with
/// [`parse_report_text`].
pub fn report_text(report: &ExperimentReport) -> Result<String> {
    let mut out = String::from("report v1\n");
    out.push_str(&format!("tau {}\n", float_line(report.tau)));
    out.push_str(&format!("rounds {}\n", report.rounds.len()));
    out.push_str(&format!("total_tokens {}\n", report.total_tokens));
    out.push_str(&format!("empty_run {}\n", report.empty_run));
    out.push_str(&format!(
        "cost_speedup {}\n",
        float_line(report.cost_speedup)
    ));
    out.push_str(&format!("wall_time_s {}\n", float_line(report.wall_time_s)));
    out.push_str(&format!(
        "per_position {}\n",
        join_f64(&report.per_position)
    ));
    out.push_str(&format!("profile_trials {}\n", report.profile.trials));
    out.push_str(&format!(
        "profile_hits {}\n",
        join_u64(&report.profile.hits)
    ));
    out.push_str(&format!(
        "profile_gains {}\n",
        join_u64(&report.profile.gains)
    ));
    out.push_str(&format!(
        "profile_losses {}\n",
        join_u64(&report.profile.losses)
    ));
    out.push_str("config_begin\n");
    out.push_str(&report.config.to_toml()?);
    out.push_str("config_end\n");
    out.push_str("rounds_begin\n");
    for r in &report.rounds {
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            r.round_index,
            r.accepted_len,
            r.bonus,
            r.candidate_count,
            r.distinct_token_count,
            r.fta_extension
        ));
    }
    out.push_str("rounds_end\nend\n");
    Ok(out)
}

fn bad_report(detail: impl Into<String>) -> Error {
    Error::Persist(detail.into())
}

fn expect_key<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| bad_report(format!("missing report line {key:?}")))?;
    line.strip_prefix(key)
        .map(|rest| rest.trim_start())
        .ok_or_else(|| bad_report(format!("expected report line {key:?}, got {line:?}")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| bad_report(format!("bad float {s:?}")))
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split_whitespace()
        .map(|v| {
            v.parse()
                .map_err(|_| bad_report(format!("bad integer {v:?}")))
        })
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace().map(parse_f64).collect()
}

/// Parse a structured-text report produced by [`report_text`].
pub fn parse_report_text(text: &str) -> Result<ExperimentReport> {
    let mut lines = text.lines();
    let version = lines.next().unwrap_or_default();
    if version != "report v1" {
        return Err(bad_report(format!(
            "unsupported report version: {version:?}"
        )));
    }
    let tau = parse_f64(expect_key(lines.next(), "tau")?)?;
    let round_count: usize = expect_key(lines.next(), "rounds")?
        .parse()
        .map_err(|_| bad_report("bad rounds count"))?;
    let total_tokens: usize = expect_key(lines.next(), "total_tokens")?
        .parse()
        .map_err(|_| bad_report("bad total_tokens"))?;
    let empty_run = match expect_key(lines.next(), "empty_run")? {
        "true" => true,
        "false" => false,
        other => return Err(bad_report(format!("bad empty_run {other:?}"))),
    };
    let cost_speedup = parse_f64(expect_key(lines.next(), "cost_speedup")?)?;
    let wall_time_s = parse_f64(expect_key(lines.next(), "wall_time_s")?)?;
    let per_position = parse_f64_list(expect_key(lines.next(), "per_position")?)?;
    let trials: u64 = expect_key(lines.next(), "profile_trials")?
        .parse()
        .map_err(|_| bad_report("bad profile_trials"))?;
    let hits = parse_u64_list(expect_key(lines.next(), "profile_hits")?)?;
    let gains = parse_u64_list(expect_key(lines.next(), "profile_gains")?)?;
    let losses = parse_u64_list(expect_key(lines.next(), "profile_losses")?)?;
    if lines.next() != Some("config_begin") {
        return Err(bad_report("missing config_begin"));
    }
    let mut config_text = String::new();
    loop {
        match lines.next() {
            Some("config_end") => break,
            Some(line) => {
                config_text.push_str(line);
                config_text.push('\n');
            }
            None => return Err(bad_report("missing config_end")),
        }
    }
    let config: ExperimentConfig =
        toml::from_str(&config_text).map_err(|e| bad_report(format!("config echo: {e}")))?;
    if lines.next() != Some("rounds_begin") {
        return Err(bad_report("missing rounds_begin"));
    }
    let mut rounds = Vec::with_capacity(round_count);
    loop {
        match lines.next() {
            Some("rounds_end") => break,
            Some(line) => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 6 {
                    return Err(bad_report(format!(
                        "expected 6 round fields, got {}",
                        fields.len()
                    )));
                }
                let parse = |s: &str| -> Result<usize> {
                    s.parse()
                        .map_err(|_| bad_report(format!("bad round integer {s:?}")))
                };
                rounds.push(RoundReport {
                    round_index: parse(fields[0])?,
                    accepted_len: parse(fields[1])?,
                    bonus: fields[2]
                        .parse()
                        .map_err(|_| bad_report(format!("bad bonus id {:?}", fields[2])))?,
                    candidate_count: parse(fields[3])?,
                    distinct_token_count: parse(fields[4])?,
                    fta_extension: parse(fields[5])?,
                });
            }
            None => return Err(bad_report("missing rounds_end")),
        }
    }
    if lines.next() != Some("end") {
        return Err(bad_report("missing end marker"));
    }
    if rounds.len() != round_count {
        return Err(bad_report(format!(
            "rounds count {round_count} does not match {} round lines",
            rounds.len()
        )));
    }
    Ok(ExperimentReport {
        config,
        tau,
        total_tokens,
        empty_run,
        cost_speedup,
        per_position,
        profile: PositionProfile {
            trials,
            hits,
            gains,
            losses,
        },
        wall_time_s,
        rounds,
    })
}

/// Write a report to `path` in the requested format.
pub fn write_report(
    report: &ExperimentReport,
    format: ReportFormat,
    path: &std::path::Path,
) -> Result<()> {
    let rendered = match format {
        ReportFormat::Csv => rounds_csv(report),
        ReportFormat::Text => report_text(report)?,
    };
    fsio::write_string(path, &rendered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn write_corpus(text: &str) -> (tempfile::TempDir, String) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        std::fs::write(&path, text).unwrap();
        let path_str = path.to_str().unwrap().to_string();
        (dir, path_str)
    }

    fn small_config(corpus_path: &str) -> ExperimentConfig {
        let mut config = ExperimentConfig::for_corpus(corpus_path);
        config.target.order = 3;
        config.decode.prompt_len = 4;
        config.decode.gen_len = 24;
        config.decode.num_prompts = 3;
        config
    }

    fn cycle_corpus(words: &[&str], repeats: usize) -> String {
        let mut out = String::new();
        for _ in 0..repeats {
            for w in words {
                out.push_str(w);
                out.push(' ');
            }
        }
        out
    }

    #[test]
    fn test_cost_speedup_degenerate_equals_vanilla() {
        let costs = Costs {
            serial_step: 0.0,
            parallel_batch: 0.0,
            target_forward: 1.0,
            overhead: 0.0,
        };
        let got = cost_speedup(1.0, Architecture::Hybrid, &costs, 2, 7).unwrap();
        assert!((got - 1.0).abs() < 1e-15);
    }

    #[test]
    fn test_cost_speedup_worked_example() {
        // tau = 4 at default costs with 2 serial steps: 4 / 1.3.
        let got = cost_speedup(4.0, Architecture::Hybrid, &Costs::default(), 2, 7).unwrap();
        assert!((got - 4.0 / 1.3).abs() < 1e-12);
    }

    #[test]
    fn test_cost_speedup_scale_invariance() {
        let base = Costs::default();
        let doubled = Costs {
            serial_step: base.serial_step * 2.0,
            parallel_batch: base.parallel_batch * 2.0,
            target_forward: base.target_forward * 2.0,
            overhead: base.overhead * 2.0,
        };
        for arch in Architecture::all() {
            let a = cost_speedup(3.3, arch, &base, 2, 7).unwrap();
            let b = cost_speedup(3.3, arch, &doubled, 2, 7).unwrap();
            assert!((a - b).abs() < 1e-12, "{arch}: {a} vs {b}");
        }
    }

    #[test]
    fn test_round_cost_per_architecture() {
        let costs = Costs::default();
        let hybrid = round_cost(Architecture::Hybrid, &costs, 2, 7).unwrap();
        let serial = round_cost(Architecture::SerialOnly, &costs, 2, 7).unwrap();
        let parallel = round_cost(Architecture::ParallelOnly, &costs, 2, 7).unwrap();
        assert!((hybrid - 1.30).abs() < 1e-12);
        assert!((serial - 1.75).abs() < 1e-12);
        assert!((parallel - 1.10).abs() < 1e-12);
    }

    #[test]
    fn test_costs_validation_rejects_bad_values() {
        let free_target = Costs {
            target_forward: 0.0,
            ..Costs::default()
        };
        assert!(matches!(free_target.validate(), Err(Error::BadCosts(_))));
        let negative_step = Costs {
            serial_step: -0.1,
            ..Costs::default()
        };
        assert!(matches!(negative_step.validate(), Err(Error::BadCosts(_))));
    }

    #[test]
    fn test_config_minimal_toml_uses_defaults() {
        let config = ExperimentConfig::from_toml("corpus_path = \"x.txt\"\n").unwrap();
        assert_eq!(config.tokenizer, "word");
        assert_eq!(config.target.order, 4);
        assert_eq!(config.tree.topk, 10);
        assert_eq!(config.tree.s, 35);
        assert_eq!(config.tree.budget, 8);
        assert_eq!(config.tree.fta, "on");
        assert_eq!(config.decode.seed, 7);
        assert_eq!(config.draft_len(), 7);
        assert!((config.costs.serial_step - 0.10).abs() < 1e-15);
    }

    #[test]
    fn test_config_rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            ExperimentConfig::from_toml("corpus_path = \"x\"\nmystery = 1\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("corpus_path = \"x\"\n[tree]\nfta = \"maybe\"\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("corpus_path = \"x\"\n[drafter]\nserial_order = 9\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("corpus_path = \"x\"\n[decode]\ntemperature = -1.0\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn test_config_toml_round_trip() {
        let mut config = ExperimentConfig::for_corpus("corpora/meadow.txt");
        config.decode.temperature = 0.8;
        config.target.lambda = Some(vec![0.1, 0.2, 0.3, 0.4]);
        let text = config.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn test_perfect_drafter_reaches_tau_8() {
        // Deterministic period-3 corpus; serial-only drafter with the same
        // order, weights, and corpus as the target is a perfect drafter:
        // every round accepts all 7 drafts plus the bonus.
        let text = cycle_corpus(&["alpha", "beta", "gamma"], 400);
        let (_dir, path) = write_corpus(&text);
        let mut config = small_config(&path);
        config.drafter.architecture = "serial_only".to_string();
        config.drafter.serial_order = 3;
        config.decode.gen_len = 32;
        let report = run_experiment(&config).unwrap();
        assert!((report.tau - 8.0).abs() < 1e-12, "tau = {}", report.tau);
        for round in &report.rounds {
            assert_eq!(round.accepted_len, 7);
        }
    }

    #[test]
    fn test_empty_run_flagged_with_zero_tau() {
        let text = cycle_corpus(&["a", "b", "c", "d"], 300);
        let (_dir, path) = write_corpus(&text);
        let mut config = small_config(&path);
        config.decode.gen_len = 0;
        let report = run_experiment(&config).unwrap();
        assert!(report.empty_run);
        assert_eq!(report.tau, 0.0);
        assert_eq!(report.total_tokens, 0);
        assert_eq!(report.cost_speedup, 0.0);
        assert!(report.rounds.is_empty());
    }

    #[test]
    fn test_tau_accounting_invariant() {
        let text = cycle_corpus(&["one", "two", "three", "four", "five", "six"], 250);
        let (_dir, path) = write_corpus(&text);
        let report = run_experiment(&small_config(&path)).unwrap();
        let accepted: usize = report.rounds.iter().map(|r| r.accepted_len).sum();
        assert_eq!(report.total_tokens, report.rounds.len() + accepted);
        let tau = report.total_tokens as f64 / report.rounds.len() as f64;
        assert!((report.tau - tau).abs() < 1e-15);
        // Round indices are sequential.
        for (i, round) in report.rounds.iter().enumerate() {
            assert_eq!(round.round_index, i);
        }
    }

    #[test]
    fn test_determinism_same_seed_same_report() {
        let text = cycle_corpus(&["red", "green", "blue", "cyan", "plum"], 300);
        let (_dir, path) = write_corpus(&text);
        let config = small_config(&path);
        let mut a = run_experiment(&config).unwrap();
        let mut b = run_experiment(&config).unwrap();
        assert_eq!(rounds_csv(&a), rounds_csv(&b));
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn test_sampling_run_is_deterministic_given_seed() {
        let text = cycle_corpus(&["oak", "elm", "fir", "ash", "yew"], 300);
        let (_dir, path) = write_corpus(&text);
        let mut config = small_config(&path);
        config.decode.temperature = 0.9;
        config.tree.topk = 2;
        config.tree.s = 2;
        let mut a = run_experiment(&config).unwrap();
        let mut b = run_experiment(&config).unwrap();
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn test_paired_fta_rounds_dominate_and_preserve_batch() {
        let text = cycle_corpus(
            &[
                "the", "mill", "turns", "the", "wheel", "slowly", "at", "dawn",
            ],
            200,
        );
        let (_dir, path) = write_corpus(&text);
        let config = small_config(&path);
        let prepared = prepare(&config).unwrap();
        let opts = RoundOptions::from_config(&config).unwrap();
        let prompt = &prepared.tokens[prepared.train_len..prepared.train_len + 4];
        let rounds =
            paired_fta_rounds(&prepared.target, &prepared.drafter, prompt, &opts, 100).unwrap();
        assert_eq!(rounds.len(), 100);
        for round in rounds {
            assert!(round.with_fta >= round.without_fta);
            assert_eq!(round.distinct_with, round.distinct_without);
        }
    }

    #[test]
    fn test_paired_fta_strict_win_constructed() {
        // Two block types share the parallel heads' conditioning pair
        // (a, b) but differ inside the target's 3-token window: after
        // "q a b" the corpus continues x, after "p a b" it continues y,
        // and both branches then rejoin on c d e f. The offset-1 head
        // (seeing only (a, b)) ranks the majority branch x above y, so
        // budgeted selection materializes one full-depth path through x
        // and a depth-3 stub [a, b, y]. A prompt ending "v p" makes the
        // target's greedy walk take y, where the stub ends — unless FTA
        // borrows the x-path's shared continuation c d e f, which greedy
        // then accepts in full.
        let mut rng = Rng::new(3);
        let mut text = String::new();
        for _ in 0..300 {
            if rng.bernoulli(0.6) {
                text.push_str("u q a b x c d e f ");
            } else {
                text.push_str("v p a b y c d e f ");
            }
        }
        let vocab = Vocab::build(text.as_bytes(), VocabMode::Word).unwrap();
        let tokens = vocab.tokenize(text.as_bytes()).unwrap();
        let target = train_ngram(
            &tokens,
            4,
            0.1,
            &crate::ngram::proportional_lambda(4),
            &vocab,
        )
        .unwrap();
        let drafter_config = crate::drafter::DrafterConfig {
            architecture: Architecture::Hybrid,
            draft_len: 7,
            serial_order: 3,
            serial_steps: 2,
            alpha: 0.1,
            serial_lambda: crate::ngram::proportional_lambda(3),
        };
        let drafter = train_drafter(&tokens, &drafter_config, &vocab).unwrap();
        let prompt = vocab.tokenize(b"e f v p").unwrap();
        let opts = RoundOptions {
            topk: 10,
            s: 35,
            budget: 8,
            fta: true,
            temperature: 0.0,
            gen_len: 0,
        };
        let rounds = paired_fta_rounds(&target, &drafter, &prompt, &opts, 20).unwrap();
        let first = rounds[0];
        assert_eq!(first.without_fta, 3, "stub path accepts a b y");
        assert_eq!(first.with_fta, 7, "borrowed c d e f all accepted");
        assert_eq!(first.extension_tokens, 4);
        assert_eq!(first.distinct_with, first.distinct_without);
        for round in rounds {
            assert!(round.with_fta >= round.without_fta);
            assert_eq!(round.distinct_with, round.distinct_without);
        }
    }

    #[test]
    fn test_profile_counts_and_bounds() {
        let text = cycle_corpus(&["sun", "moon", "star", "void"], 300);
        let (_dir, path) = write_corpus(&text);
        let config = small_config(&path);
        let prepared = prepare(&config).unwrap();
        let held = &prepared.tokens[prepared.train_len..];
        let profile =
            profile_positions(&prepared.drafter, &prepared.target, held, PROFILE_WINDOW).unwrap();
        assert_eq!(profile.trials as usize, held.len() - PROFILE_WINDOW + 1);
        assert_eq!(profile.hits.len(), config.draft_len());
        for (i, &h) in profile.hits.iter().enumerate() {
            assert!(h <= profile.trials, "position {i}");
        }
        for (&g, &l) in profile.gains.iter().zip(&profile.losses) {
            assert!(g + l <= profile.trials);
        }
        for rate in profile.rates() {
            assert!((0.0..=1.0).contains(&rate));
        }
        // On a deterministic cycle the drafter is near-perfect everywhere.
        assert!(profile.is_nonincreasing(PROFILE_Z));
    }

    #[test]
    fn test_report_text_round_trip() {
        let text = cycle_corpus(&["ab", "cd", "ef", "gh", "ij"], 260);
        let (_dir, path) = write_corpus(&text);
        let report = run_experiment(&small_config(&path)).unwrap();
        let rendered = report_text(&report).unwrap();
        let back = parse_report_text(&rendered).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn test_rounds_csv_round_trip_and_empty_header() {
        let text = cycle_corpus(&["up", "down", "left", "right"], 280);
        let (_dir, path) = write_corpus(&text);
        let mut config = small_config(&path);
        let report = run_experiment(&config).unwrap();
        let rendered = rounds_csv(&report);
        let rows = parse_rounds_csv(&rendered).unwrap();
        assert_eq!(rows.len(), report.rounds.len());
        for (row, round) in rows.iter().zip(&report.rounds) {
            assert_eq!(row.round, round.round_index);
            assert_eq!(row.accepted_len, round.accepted_len);
            assert_eq!(row.candidates, round.candidate_count);
            assert_eq!(row.distinct_tokens, round.distinct_token_count);
            assert_eq!(row.fta_extension, round.fta_extension);
        }
        // Empty run: header-only CSV.
        config.decode.gen_len = 0;
        let empty = run_experiment(&config).unwrap();
        assert_eq!(
            rounds_csv(&empty),
            "round,accepted_len,candidates,distinct_tokens,fta_extension\n"
        );
        assert!(parse_rounds_csv(&rounds_csv(&empty)).unwrap().is_empty());
    }

    #[test]
    fn test_comparison_csv_round_trip_and_row_order() {
        let text = cycle_corpus(&["ice", "fog", "rain", "snow", "hail", "wind"], 250);
        let (_dir, path) = write_corpus(&text);
        let mut config = small_config(&path);
        config.decode.gen_len = 16;
        config.decode.num_prompts = 2;
        let table = compare_architectures(&config).unwrap();
        let names: Vec<&str> = table.rows.iter().map(|r| r.architecture.as_str()).collect();
        assert_eq!(names, ["hybrid", "serial_only", "parallel_only"]);
        let rendered = comparison_csv(&table);
        let header = rendered.lines().next().unwrap();
        assert!(header.starts_with("architecture,tau,cost_speedup,p1,"));
        assert!(header.ends_with(&format!("p{}", config.draft_len())));
        let back = parse_comparison_csv(&rendered).unwrap();
        assert_eq!(table, back);
        // Each row's speedup is consistent with its tau and cost model.
        for row in &table.rows {
            let arch = Architecture::parse(&row.architecture).unwrap();
            let want = cost_speedup(
                row.tau,
                arch,
                &config.costs,
                config.drafter.serial_steps,
                config.draft_len(),
            )
            .unwrap();
            assert!((row.cost_speedup - want).abs() < 1e-12);
        }
    }

    #[test]
    fn test_compare_perfect_drafter_limit() {
        // On a deterministic cycle every architecture drafts perfectly, so
        // all three reach τ = 8 and the cost model alone orders them:
        // parallel_only > hybrid > serial_only.
        let text = cycle_corpus(&["north", "east", "south"], 400);
        let (_dir, path) = write_corpus(&text);
        let mut config = small_config(&path);
        config.drafter.serial_order = 3;
        config.decode.gen_len = 16;
        config.decode.num_prompts = 2;
        let table = compare_architectures(&config).unwrap();
        for row in &table.rows {
            assert!(
                (row.tau - 8.0).abs() < 1e-12,
                "{}: tau = {}",
                row.architecture,
                row.tau
            );
        }
        let speedup: std::collections::HashMap<&str, f64> = table
            .rows
            .iter()
            .map(|r| (r.architecture.as_str(), r.cost_speedup))
            .collect();
        assert!(speedup["hybrid"] > speedup["serial_only"]);
        assert!(speedup["parallel_only"] > speedup["serial_only"]);
    }

    #[test]
    fn test_theory_csv_renders_rows() {
        let mut rng = Rng::new(4);
        let rows = crate::theory::sweep_ordering(25, 2, 8, &mut rng).unwrap();
        let rendered = theory_csv(&rows);
        let mut lines = rendered.lines();
        assert_eq!(lines.next(), Some("D,d,E_orig,E_con,E_imp,ok"));
        assert_eq!(lines.count(), rows.len());
    }

    #[test]
    fn test_prepare_rejects_short_corpus() {
        let (_dir, path) = write_corpus("tiny corpus only a few words here");
        let config = small_config(&path);
        assert!(matches!(
            prepare(&config),
            Err(Error::CorpusTooShort { .. })
        ));
    }

    #[test]
    fn test_greedy_stream_matches_vanilla_for_every_prompt() {
        let text = cycle_corpus(
            &["a", "b", "c", "a", "b", "d", "a", "c", "d", "b", "c", "d"],
            150,
        );
        let (_dir, path) = write_corpus(&text);
        let config = small_config(&path);
        let prepared = prepare(&config).unwrap();
        let opts = RoundOptions::from_config(&config).unwrap();
        let mut rng = Rng::new(config.decode.seed);
        for _ in 0..4 {
            let held_len = prepared.tokens.len() - prepared.train_len;
            let span = held_len - config.decode.prompt_len + 1;
            let start = prepared.train_len + rng.below(span as u64) as usize;
            let prompt = &prepared.tokens[start..start + config.decode.prompt_len];
            let mut prng = rng.split();
            let (emitted, _) = generate_speculative(
                &prepared.target,
                &prepared.drafter,
                prompt,
                &opts,
                &mut prng,
            )
            .unwrap();
            let want = vanilla_decode(&prepared.target, prompt, emitted.len(), DecodeMode::Greedy)
                .unwrap();
            assert_eq!(emitted, want);
        }
    }
}
