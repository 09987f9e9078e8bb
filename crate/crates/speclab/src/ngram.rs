//! The exact target language model: an interpolated, additively smoothed
//! n-gram.
//!
//! The conditional probability of token `y` after context `c` is
//!
//! ```text
//! P(y | c) = Σ_{k=1}^{order} λ_k · (count_k(suffix_{k−1}(c), y) + α)
//!                                / (count_k(suffix_{k−1}(c))    + α·|V|)
//! ```
//!
//! where `suffix_{k−1}(c)` is the last `k−1` tokens of `c` (the whole
//! context when it is shorter — such contexts were never observed by the
//! order-`k` component, so that component falls back to its uniform-smoothed
//! floor). Additive smoothing gives every token strictly positive
//! probability under every context, which lossless rejection-sampling
//! verification requires, and the distribution depends only on the last
//! `order − 1` context tokens (Markov property).
//!
//! The model is immutable after training and serializes to a versioned
//! structured text format with the vocabulary embedded, so a model file is
//! self-contained.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;
use crate::rng::Rng;
use crate::vocab::{Token, TokenSeq, Vocab};

/// Normalization tolerance for distributions.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// A dense probability distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Wrap a dense probability vector, checking non-negativity and
    /// normalization to within [`NORM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Distribution> {
        let mut total = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::BadParameter {
                    name: "distribution",
                    detail: format!("probs[{i}] = {p} is negative or non-finite"),
                });
            }
            total += p;
        }
        if (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::BadParameter {
                name: "distribution",
                detail: format!("probabilities sum to {total}, expected 1"),
            });
        }
        Ok(Distribution { probs })
    }

    /// The dense probability vector.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of one token.
    pub fn prob(&self, token: Token) -> f64 {
        self.probs[token.0 as usize]
    }

    /// Number of outcomes (the vocabulary size).
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    /// True when the distribution has no outcomes (never produced by a
    /// trained model).
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Highest-probability token, ties broken by lowest token id.
    pub fn argmax(&self) -> Token {
        let mut best = 0usize;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        Token(best as u32)
    }

    /// The `top` highest-probability tokens, ordered by descending
    /// probability with ties broken by lowest token id.
    pub fn top_k(&self, top: usize) -> Vec<(Token, f64)> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        order
            .into_iter()
            .take(top)
            .map(|i| (Token(i as u32), self.probs[i]))
            .collect()
    }

    /// Temperature-scale the distribution in log space and renormalize:
    /// `p_i ↦ p_i^{1/T} / Σ_j p_j^{1/T}`. Temperature 1 returns the
    /// distribution unchanged; `T ≤ 0` is rejected.
    pub fn with_temperature(&self, temperature: f64) -> Result<Distribution> {
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(Error::BadTemperature(temperature));
        }
        if temperature == 1.0 {
            return Ok(self.clone());
        }
        // Work in log space for numerical stability: scale log-probs by
        // 1/T, subtract the max, exponentiate, renormalize.
        let inv = 1.0 / temperature;
        let logs: Vec<f64> = self.probs.iter().map(|&p| p.ln() * inv).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        Ok(Distribution {
            probs: unnorm.into_iter().map(|u| u / total).collect(),
        })
    }

    /// Sample one token.
    pub fn sample(&self, rng: &mut Rng) -> Token {
        Token(rng.sample_weighted(&self.probs) as u32)
    }

    /// Total-variation distance to another distribution of the same size.
    pub fn tv_distance(&self, other: &Distribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Per-context sparse counts for one conditional table.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct ContextCounts {
    pub(crate) total: u64,
    pub(crate) per_token: HashMap<u32, u64>,
}

/// Sparse conditional count table: context token ids → counts.
pub(crate) type CountTable = HashMap<Vec<u32>, ContextCounts>;

/// Record one `context → next` observation.
pub(crate) fn accumulate(table: &mut CountTable, ctx: &[u32], next: u32) {
    let entry = table.entry(ctx.to_vec()).or_default();
    entry.total += 1;
    *entry.per_token.entry(next).or_insert(0) += 1;
}

/// Append one deterministic `ctx <ids> | <token count>...` line per context
/// (contexts sorted, token counts sorted by id).
pub(crate) fn write_counts(out: &mut String, table: &CountTable) {
    let mut keys: Vec<&Vec<u32>> = table.keys().collect();
    keys.sort();
    for key in keys {
        let counts = &table[key];
        let ctx: Vec<String> = key.iter().map(|t| t.to_string()).collect();
        let mut toks: Vec<(&u32, &u64)> = counts.per_token.iter().collect();
        toks.sort();
        let pairs: Vec<String> = toks.iter().map(|(t, c)| format!("{t} {c}")).collect();
        let _ = writeln!(out, "ctx {} | {}", ctx.join(" "), pairs.join(" "));
    }
}

/// Parse one `ctx <ids> | <token count>...` line.
pub(crate) fn parse_counts_line(line: &str) -> Result<(Vec<u32>, ContextCounts)> {
    let rest = line
        .strip_prefix("ctx")
        .ok_or_else(|| Error::Persist(format!("bad counts line {line:?}")))?;
    let (ctx_part, tok_part) = rest
        .split_once('|')
        .ok_or_else(|| Error::Persist(format!("bad counts line {line:?}")))?;
    let ctx: Vec<u32> = ctx_part
        .split_whitespace()
        .map(|s| s.parse::<u32>().map_err(bad("context token")))
        .collect::<Result<_>>()?;
    let nums: Vec<u64> = tok_part
        .split_whitespace()
        .map(|s| s.parse::<u64>().map_err(bad("count")))
        .collect::<Result<_>>()?;
    if !nums.len().is_multiple_of(2) {
        return Err(Error::Persist(format!("odd token/count list in {line:?}")));
    }
    let mut counts = ContextCounts::default();
    for pair in nums.chunks(2) {
        counts.per_token.insert(pair[0] as u32, pair[1]);
        counts.total += pair[1];
    }
    Ok((ctx, counts))
}

/// The additively smoothed conditional implied by one count entry:
/// `P(y) = (count(y) + α) / (total + α·|V|)`; an absent entry yields the
/// uniform floor.
pub(crate) fn smoothed_from_counts(
    counts: Option<&ContextCounts>,
    alpha: f64,
    vocab_size: usize,
) -> Distribution {
    let v = vocab_size;
    match counts {
        Some(c) => {
            let denom = c.total as f64 + alpha * v as f64;
            let mut probs = vec![alpha / denom; v];
            for (&tok, &cnt) in &c.per_token {
                probs[tok as usize] += cnt as f64 / denom;
            }
            Distribution { probs }
        }
        None => Distribution {
            probs: vec![1.0 / v as f64; v],
        },
    }
}

/// An immutable interpolated n-gram language model.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    alpha: f64,
    lambda: Vec<f64>,
    vocab: Vocab,
    /// `tables[k-1]` holds the order-`k` component: counts keyed by the
    /// preceding `k−1` tokens.
    tables: Vec<CountTable>,
}

/// Train an interpolated n-gram model on a token sequence.
///
/// Interpolation weights proportional to component order: weight `i` of
/// `k` is `i / (1 + 2 + … + k)`, so longer contexts dominate. For `k = 4`
/// this is exactly `(0.1, 0.2, 0.3, 0.4)`, the default target weighting.
pub fn proportional_lambda(order: usize) -> Vec<f64> {
    let total = (order * (order + 1) / 2) as f64;
    (1..=order).map(|i| i as f64 / total).collect()
}

/// `backoff_weights` must have length `order`, non-negative entries, and
/// sum to 1 within `1e-9`; `smoothing_alpha` must be positive; the corpus
/// must contain at least `order` tokens.
pub fn train_ngram(
    corpus_tokens: &[Token],
    order: usize,
    smoothing_alpha: f64,
    backoff_weights: &[f64],
    vocab: &Vocab,
) -> Result<NgramModel> {
    if order < 1 {
        return Err(Error::BadParameter {
            name: "order",
            detail: format!("order must be >= 1, got {order}"),
        });
    }
    if corpus_tokens.len() < order {
        return Err(Error::CorpusTooShort {
            need: order,
            got: corpus_tokens.len(),
        });
    }
    if backoff_weights.len() != order {
        return Err(Error::BadWeights(format!(
            "expected {order} weights, got {}",
            backoff_weights.len()
        )));
    }
    let mut sum = 0.0;
    for &w in backoff_weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::BadWeights(format!(
                "negative or non-finite weight {w}"
            )));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::BadWeights(format!(
            "weights sum to {sum}, expected 1"
        )));
    }
    if smoothing_alpha <= 0.0 || !smoothing_alpha.is_finite() {
        return Err(Error::BadParameter {
            name: "smoothing_alpha",
            detail: format!("must be positive and finite, got {smoothing_alpha}"),
        });
    }
    for t in corpus_tokens {
        if t.0 as usize >= vocab.size() {
            return Err(Error::UnknownSymbol(format!("token id {}", t.0)));
        }
    }

    let mut tables: Vec<CountTable> = vec![HashMap::new(); order];
    for (k_minus_1, table) in tables.iter_mut().enumerate() {
        // Order-k component: context length k-1, one sample per position
        // that has a full context before it.
        for i in k_minus_1..corpus_tokens.len() {
            let ctx: Vec<u32> = corpus_tokens[i - k_minus_1..i]
                .iter()
                .map(|t| t.0)
                .collect();
            accumulate(table, &ctx, corpus_tokens[i].0);
        }
    }

    Ok(NgramModel {
        order,
        alpha: smoothing_alpha,
        lambda: backoff_weights.to_vec(),
        vocab: vocab.clone(),
        tables,
    })
}

impl NgramModel {
    /// Interpolation order.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Smoothing constant α.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Interpolation weights λ₁…λ_order.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// The vocabulary the model was trained under.
    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Exact conditional distribution over the next token.
    ///
    /// Deterministic function of the last `order − 1` context tokens; fully
    /// supported (every probability strictly positive) thanks to additive
    /// smoothing.
    pub fn next_distribution(&self, context: &[Token]) -> Distribution {
        let v = self.vocab.size();
        let denom_alpha = self.alpha * v as f64;
        let mut probs = vec![0.0f64; v];
        let mut base = 0.0;
        for (k_minus_1, table) in self.tables.iter().enumerate() {
            let lam = self.lambda[k_minus_1];
            if lam == 0.0 {
                continue;
            }
            let start = context.len().saturating_sub(k_minus_1);
            let key: Vec<u32> = context[start..].iter().map(|t| t.0).collect();
            match table.get(&key) {
                Some(counts) => {
                    let denom = counts.total as f64 + denom_alpha;
                    base += lam * self.alpha / denom;
                    for (&tok, &cnt) in &counts.per_token {
                        probs[tok as usize] += lam * cnt as f64 / denom;
                    }
                }
                None => {
                    // Unseen context: every count is zero, the component is
                    // the uniform smoothing floor.
                    base += lam / v as f64;
                }
            }
        }
        for p in &mut probs {
            *p += base;
        }
        Distribution { probs }
    }

    /// Argmax of [`NgramModel::next_distribution`], ties broken by lowest
    /// token id.
    pub fn greedy_next(&self, context: &[Token]) -> Token {
        self.next_distribution(context).argmax()
    }

    /// Sample the next token at a temperature (`> 0`), in log space.
    pub fn sample_next(&self, context: &[Token], temperature: f64, rng: &mut Rng) -> Result<Token> {
        Ok(self
            .next_distribution(context)
            .with_temperature(temperature)?
            .sample(rng))
    }
}

/// Decoding mode for [`vanilla_decode`].
pub enum DecodeMode<'a> {
    /// Deterministic argmax decoding.
    Greedy,
    /// Temperature sampling with a caller-owned generator.
    Sample {
        /// Sampling temperature, must be positive.
        temperature: f64,
        /// Generator driving the draws.
        rng: &'a mut Rng,
    },
}

/// Autoregressive reference decoding: generate exactly `n_tokens` tokens,
/// each conditioned on the prompt plus everything generated so far. This is
/// the losslessness reference that speculative decoding must reproduce.
pub fn vanilla_decode(
    model: &NgramModel,
    prompt: &[Token],
    n_tokens: usize,
    mode: DecodeMode,
) -> Result<TokenSeq> {
    let mut seq: TokenSeq = prompt.to_vec();
    let mut out = Vec::with_capacity(n_tokens);
    match mode {
        DecodeMode::Greedy => {
            for _ in 0..n_tokens {
                let t = model.greedy_next(&seq);
                seq.push(t);
                out.push(t);
            }
        }
        DecodeMode::Sample { temperature, rng } => {
            for _ in 0..n_tokens {
                let t = model.sample_next(&seq, temperature, rng)?;
                seq.push(t);
                out.push(t);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

impl NgramModel {
    /// Serialize to the versioned structured-text model format. The
    /// vocabulary is embedded, so the file is self-contained. Output is
    /// deterministic (contexts sorted by length then lexicographically,
    /// token counts by token id).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ngram v1");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "alpha {}", self.alpha);
        let lams: Vec<String> = self.lambda.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(out, "lambda {}", lams.join(" "));
        out.push_str(&self.vocab.to_text());
        let _ = writeln!(out, "counts");
        for table in &self.tables {
            write_counts(&mut out, table);
        }
        let _ = writeln!(out, "end");
        out
    }

    /// Parse the format produced by [`NgramModel::to_text`], starting at the
    /// current position of `lines`; consumes through the `end` marker.
    pub fn from_lines<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<NgramModel> {
        let header = lines
            .next()
            .ok_or_else(|| Error::Persist("missing model header".into()))?;
        if header.trim() != "ngram v1" {
            return Err(Error::Persist(format!(
                "bad model header {header:?} (expected \"ngram v1\")"
            )));
        }
        let order = parse_kv(lines, "order")?
            .parse::<usize>()
            .map_err(bad("order"))?;
        let alpha = parse_kv(lines, "alpha")?
            .parse::<f64>()
            .map_err(bad("alpha"))?;
        let lambda_line = parse_kv(lines, "lambda")?;
        let lambda: Vec<f64> = lambda_line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(bad("lambda")))
            .collect::<Result<_>>()?;
        if lambda.len() != order {
            return Err(Error::Persist(format!(
                "lambda has {} entries for order {order}",
                lambda.len()
            )));
        }
        let vocab = Vocab::from_lines(lines)?;
        let marker = lines
            .next()
            .ok_or_else(|| Error::Persist("missing counts section".into()))?;
        if marker.trim() != "counts" {
            return Err(Error::Persist(format!(
                "expected \"counts\", got {marker:?}"
            )));
        }
        let mut tables: Vec<CountTable> = vec![HashMap::new(); order];
        loop {
            let line = lines
                .next()
                .ok_or_else(|| Error::Persist("model file truncated before end".into()))?;
            let line = line.trim();
            if line == "end" {
                break;
            }
            let (ctx, counts) = parse_counts_line(line)?;
            if ctx.len() >= order {
                return Err(Error::Persist(format!(
                    "context of length {} exceeds order {order}",
                    ctx.len()
                )));
            }
            tables[ctx.len()].insert(ctx, counts);
        }
        let model = NgramModel {
            order,
            alpha,
            lambda,
            vocab,
            tables,
        };
        Ok(model)
    }

    /// Parse a complete serialized model string.
    pub fn from_text(text: &str) -> Result<NgramModel> {
        NgramModel::from_lines(&mut text.lines())
    }

    /// Write the model to a file.
    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_string(path, &self.to_text())
    }

    /// Load a model from a file.
    pub fn load(path: &Path) -> Result<NgramModel> {
        NgramModel::from_text(&fsio::read_to_string(path)?)
    }
}

/// Parse a `key value...` line, returning the value part.
fn parse_kv<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<String> {
    let line = lines
        .next()
        .ok_or_else(|| Error::Persist(format!("missing {key} line")))?;
    line.trim()
        .strip_prefix(key)
        .map(|v| v.trim().to_string())
        .ok_or_else(|| Error::Persist(format!("expected {key:?} line, got {line:?}")))
}

/// Error adapter for numeric field parsing.
fn bad<E: std::fmt::Display>(what: &'static str) -> impl Fn(E) -> Error {
    move |e| Error::Persist(format!("bad {what}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::vocab::VocabMode;
    use proptest::prelude::*;

    fn word_model(corpus: &str, order: usize, alpha: f64, lambda: &[f64]) -> NgramModel {
        let vocab = Vocab::build(corpus.as_bytes(), VocabMode::Word).unwrap();
        let toks = vocab.tokenize(corpus.as_bytes()).unwrap();
        train_ngram(&toks, order, alpha, lambda, &vocab).unwrap()
    }

    #[test]
    fn test_bigram_hand_count_aab() {
        // Corpus a a b, order 2, alpha = 1, |V| = 2, all weight on bigrams:
        // P(a | a) = (1 + 1) / (2 + 2) = 0.5.
        let m = word_model("a a b", 2, 1.0, &[0.0, 1.0]);
        let a = Token(0);
        let d = m.next_distribution(&[a]);
        assert!((d.prob(a) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn test_bigram_abab_small_alpha() {
        // Corpus a b a b with vanishing smoothing: P(b | a) -> 1.
        let m = word_model("a b a b", 2, 1e-9, &[0.0, 1.0]);
        let (a, b) = (Token(0), Token(1));
        let d = m.next_distribution(&[a]);
        assert!(d.prob(b) > 1.0 - 1e-8);
        assert_eq!(m.greedy_next(&[a]), b);
    }

    #[test]
    fn test_unigram_uniform_corpus_is_uniformish() {
        let m = word_model("a b c d", 1, 0.5, &[1.0]);
        let d = m.next_distribution(&[]);
        for &p in d.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn test_train_rejects_bad_inputs() {
        let vocab = Vocab::build(b"a b", VocabMode::Word).unwrap();
        let toks = vocab.tokenize(b"a b").unwrap();
        assert!(matches!(
            train_ngram(&toks, 3, 0.1, &[0.2, 0.3, 0.5], &vocab),
            Err(Error::CorpusTooShort { need: 3, got: 2 })
        ));
        assert!(matches!(
            train_ngram(&toks, 2, 0.1, &[0.5], &vocab),
            Err(Error::BadWeights(_))
        ));
        assert!(matches!(
            train_ngram(&toks, 2, 0.1, &[0.7, 0.7], &vocab),
            Err(Error::BadWeights(_))
        ));
        assert!(matches!(
            train_ngram(&toks, 2, 0.0, &[0.5, 0.5], &vocab),
            Err(Error::BadParameter {
                name: "smoothing_alpha",
                ..
            })
        ));
    }

    #[test]
    fn test_distribution_normalized_and_fully_supported() {
        let corpus = b"the cat sat on the mat and the dog sat too";
        let vocab = Vocab::full_byte();
        let toks = vocab.tokenize(corpus).unwrap();
        let m = train_ngram(&toks, 4, 0.1, &[0.1, 0.2, 0.3, 0.4], &vocab).unwrap();
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let n = rng.below(6) as usize;
            let ctx: Vec<Token> = (0..n).map(|_| Token(rng.below(256) as u32)).collect();
            let d = m.next_distribution(&ctx);
            let total: f64 = d.probs().iter().sum();
            assert!((total - 1.0).abs() <= NORM_TOLERANCE, "sum {total}");
            assert!(d.probs().iter().all(|&p| p > 0.0), "zero probability found");
        }
    }

    #[test]
    fn test_markov_property_only_suffix_matters() {
        let corpus = b"speculative decoding drafts tokens cheaply and verifies them exactly";
        let vocab = Vocab::full_byte();
        let toks = vocab.tokenize(corpus).unwrap();
        let m = train_ngram(&toks, 3, 0.2, &[0.2, 0.3, 0.5], &vocab).unwrap();
        let mut rng = Rng::new(8);
        for _ in 0..100 {
            let suffix: Vec<Token> = (0..2).map(|_| Token(rng.below(256) as u32)).collect();
            let mut long = vec![Token(rng.below(256) as u32); 7];
            long.extend_from_slice(&suffix);
            let a = m.next_distribution(&long);
            let b = m.next_distribution(&suffix);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn test_empty_context_matches_formula() {
        // With an empty context the unigram component supplies counts and
        // every higher order falls back to its uniform smoothing floor.
        let m = word_model("a a a b", 2, 0.5, &[0.6, 0.4]);
        let d = m.next_distribution(&[]);
        // Unigram: P(a) = (3 + 0.5) / (4 + 1), P(b) = (1 + 0.5) / 5.
        let want_a = 0.6 * (3.5 / 5.0) + 0.4 * 0.5;
        let want_b = 0.6 * (1.5 / 5.0) + 0.4 * 0.5;
        assert!((d.prob(Token(0)) - want_a).abs() < 1e-12);
        assert!((d.prob(Token(1)) - want_b).abs() < 1e-12);
    }

    #[test]
    fn test_greedy_tie_breaks_to_lowest_id() {
        let d = Distribution::new(vec![0.2, 0.3, 0.2, 0.3]).unwrap();
        assert_eq!(d.argmax(), Token(1));
        let d = Distribution::new(vec![0.25; 4]).unwrap();
        assert_eq!(d.argmax(), Token(0));
    }

    #[test]
    fn test_temperature_limits() {
        let d = Distribution::new(vec![0.6, 0.4]).unwrap();
        // T = 1 is the identity.
        assert_eq!(d.with_temperature(1.0).unwrap(), d);
        // T -> 0 approaches the argmax point mass.
        let cold = d.with_temperature(0.01).unwrap();
        assert!(cold.prob(Token(0)) > 0.999999);
        // T <= 0 rejected.
        assert!(matches!(
            d.with_temperature(0.0),
            Err(Error::BadTemperature(_))
        ));
        assert!(matches!(
            d.with_temperature(-1.0),
            Err(Error::BadTemperature(_))
        ));
    }

    #[test]
    fn test_sampling_frequencies_match_distribution() {
        let d = Distribution::new(vec![0.6, 0.4]).unwrap();
        let mut rng = Rng::new(4);
        let n = 100_000;
        let mut zero = 0usize;
        for _ in 0..n {
            if d.sample(&mut rng) == Token(0) {
                zero += 1;
            }
        }
        let freq = zero as f64 / n as f64;
        let sigma = (0.6 * 0.4 / n as f64).sqrt();
        assert!((freq - 0.6).abs() <= 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn test_vanilla_decode_greedy_hand_unroll() {
        let vocab = Vocab::full_byte();
        let toks = vocab.tokenize(b"abababab").unwrap();
        let m = train_ngram(&toks, 2, 0.1, &[0.5, 0.5], &vocab).unwrap();
        let prompt = vocab.tokenize(b"a").unwrap();
        let out = vanilla_decode(&m, &prompt, 4, DecodeMode::Greedy).unwrap();
        assert_eq!(vocab.decode(&out).unwrap(), b"baba");
        assert_eq!(
            vanilla_decode(&m, &prompt, 0, DecodeMode::Greedy).unwrap(),
            vec![]
        );
    }

    #[test]
    fn test_vanilla_decode_sampling_is_reproducible() {
        let vocab = Vocab::full_byte();
        let toks = vocab
            .tokenize(b"to be or not to be that is the question")
            .unwrap();
        let m = train_ngram(&toks, 3, 0.1, &[0.2, 0.3, 0.5], &vocab).unwrap();
        let prompt = vocab.tokenize(b"to ").unwrap();
        let mut r1 = Rng::new(99);
        let mut r2 = Rng::new(99);
        let a = vanilla_decode(
            &m,
            &prompt,
            50,
            DecodeMode::Sample {
                temperature: 1.0,
                rng: &mut r1,
            },
        )
        .unwrap();
        let b = vanilla_decode(
            &m,
            &prompt,
            50,
            DecodeMode::Sample {
                temperature: 1.0,
                rng: &mut r2,
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn test_persistence_round_trip() {
        let vocab = Vocab::build(b"one two three two one", VocabMode::Word).unwrap();
        let toks = vocab.tokenize(b"one two three two one").unwrap();
        let m = train_ngram(&toks, 3, 0.25, &[0.25, 0.25, 0.5], &vocab).unwrap();
        let text = m.to_text();
        let back = NgramModel::from_text(&text).unwrap();
        assert_eq!(m, back);
        // And the parsed model answers identically.
        let ctx = vocab.tokenize(b"one two").unwrap();
        assert_eq!(m.next_distribution(&ctx), back.next_distribution(&ctx));
    }

    #[test]
    fn test_persistence_rejects_unknown_version() {
        let vocab = Vocab::build(b"a b", VocabMode::Word).unwrap();
        let toks = vocab.tokenize(b"a b").unwrap();
        let m = train_ngram(&toks, 1, 0.1, &[1.0], &vocab).unwrap();
        let text = m.to_text().replace("ngram v1", "ngram v9");
        assert!(matches!(
            NgramModel::from_text(&text),
            Err(Error::Persist(_))
        ));
    }

    proptest! {
        #[test]
        fn test_random_models_normalize(seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let len = 20 + rng.below(60) as usize;
            let vocab_words = "a b c d e f g h";
            let vocab = Vocab::build(vocab_words.as_bytes(), VocabMode::Word).unwrap();
            let toks: Vec<Token> = (0..len).map(|_| Token(rng.below(8) as u32)).collect();
            let order = 1 + rng.below(4) as usize;
            let mut lam: Vec<f64> = (0..order).map(|_| rng.next_f64() + 0.01).collect();
            let s: f64 = lam.iter().sum();
            for l in &mut lam { *l /= s; }
            let m = train_ngram(&toks, order, 0.1, &lam, &vocab).unwrap();
            let ctx: Vec<Token> = (0..rng.below(5) as usize).map(|_| Token(rng.below(8) as u32)).collect();
            let d = m.next_distribution(&ctx);
            let total: f64 = d.probs().iter().sum();
            prop_assert!((total - 1.0).abs() <= NORM_TOLERANCE);
            prop_assert!(d.probs().iter().all(|&p| p > 0.0));
        }
    }
}
