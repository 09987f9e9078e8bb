//! Draft-tree assembly, budgeted candidate selection, full-tree-attention
//! path supplementation, and linearization into a verification batch.
//!
//! A draft tree has the last verified token as its (implicit) root at depth
//! 0 with score 1. Serial nodes form an explicit tree for the first `steps`
//! depths. Parallel nodes attach below a depth-`steps` *anchor* node, one
//! stored record per proposed `(depth, token)`, with
//! `score = anchor_score × head_confidence`; the cross-product of parallel
//! candidates across depths is **implicit** — any depth-`q` parallel token
//! can follow any depth-`q−1` parallel token under the same anchor, and
//! concrete paths are only materialized during selection. Storing `s`
//! tokens per offset therefore represents `s^k` paths with `k·s` records.
//!
//! Selection takes the `budget` highest-score nodes overall and materializes
//! one root path per selected node, filling the shallower parallel depths
//! with the best selected-or-available token. Full tree attention (FTA)
//! then lets shorter selected paths borrow tokens that longer selected
//! paths with the same serial prefix already carry at the missing depths —
//! this adds path length without adding any new `(depth, token)` work to
//! the verification batch.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::drafter::{ParallelGroup, Proposal, Region, SerialTree};
use crate::error::{Error, Result};
use crate::vocab::Token;

/// Index of a node within its [`DraftTree`].
pub type NodeId = usize;

/// Score-equality tolerance for tree invariants.
pub const SCORE_TOLERANCE: f64 = 1e-12;

/// One node of a draft tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Structural parent (`None` = the root). Parallel nodes attach to
    /// their anchor (or the root when there is no serial stage).
    pub parent: Option<NodeId>,
    /// Draft position, 1-based.
    pub depth: usize,
    /// The proposed token.
    pub token: Token,
    /// The proposing component's true probability for this token.
    pub confidence: f64,
    /// Cumulative path score: parent score × confidence.
    pub score: f64,
    /// Which drafting stage proposed the node.
    pub region: Region,
    /// For parallel nodes: the serial anchor they extend (`None` = root).
    /// Meaningless for serial nodes (always `None`).
    pub anchor: Option<NodeId>,
    /// For parallel nodes: the proposing head's offset; 0 for serial nodes.
    pub offset: usize,
}

/// A scored tree of speculative tokens for one decoding round.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftTree {
    /// The last verified token (the implicit depth-0 root, score 1).
    pub root: Token,
    /// Depth of the serial region (0 when there is none).
    pub steps: usize,
    /// Total draft positions `D`.
    pub draft_len: usize,
    /// Nodes; parents always precede children.
    pub nodes: Vec<TreeNode>,
}

/// Assemble a draft tree from a serial expansion and parallel candidate
/// banks.
///
/// Validates structural consistency: serial scores multiply along paths,
/// group anchors are depth-`steps` serial nodes (or the root when
/// `steps = 0`), offsets are contiguous from 1, and no node exceeds
/// `draft_len`.
pub fn build_tree(
    root: Token,
    serial: &SerialTree,
    groups: &[ParallelGroup],
    draft_len: usize,
) -> Result<DraftTree> {
    let mut nodes: Vec<TreeNode> = Vec::with_capacity(serial.nodes.len());
    for (id, n) in serial.nodes.iter().enumerate() {
        let parent_score = match n.parent {
            Some(p) => {
                if p >= id {
                    return Err(Error::BadParameter {
                        name: "serial_tree",
                        detail: format!("node {id} has forward parent {p}"),
                    });
                }
                if nodes[p].depth + 1 != n.depth {
                    return Err(Error::BadParameter {
                        name: "serial_tree",
                        detail: format!(
                            "node {id} depth {} under parent depth {}",
                            n.depth, nodes[p].depth
                        ),
                    });
                }
                nodes[p].score
            }
            None => {
                if n.depth != 1 {
                    return Err(Error::BadParameter {
                        name: "serial_tree",
                        detail: format!("root child {id} has depth {}", n.depth),
                    });
                }
                1.0
            }
        };
        if !n.confidence.is_finite() || !n.score.is_finite() {
            return Err(Error::BadParameter {
                name: "serial_tree",
                detail: format!("node {id} has a non-finite confidence or score"),
            });
        }
        if (n.score - parent_score * n.confidence).abs() > SCORE_TOLERANCE {
            return Err(Error::BadParameter {
                name: "serial_tree",
                detail: format!(
                    "node {id} score {} != parent score {parent_score} x confidence {}",
                    n.score, n.confidence
                ),
            });
        }
        if n.depth > serial.steps || n.depth > draft_len {
            return Err(Error::BadParameter {
                name: "serial_tree",
                detail: format!("node {id} depth {} out of range", n.depth),
            });
        }
        nodes.push(TreeNode {
            parent: n.parent,
            depth: n.depth,
            token: n.token,
            confidence: n.confidence,
            score: n.score,
            region: Region::Serial,
            anchor: None,
            offset: 0,
        });
    }

    for group in groups {
        let (anchor_score, anchor) = match group.anchor {
            Some(a) => {
                let node = nodes.get(a).ok_or_else(|| Error::BadParameter {
                    name: "parallel_group",
                    detail: format!("anchor {a} is not a tree node"),
                })?;
                if node.depth != serial.steps || node.region != Region::Serial {
                    return Err(Error::BadParameter {
                        name: "parallel_group",
                        detail: format!(
                            "anchor {a} must be a serial node at depth {}, found depth {}",
                            serial.steps, node.depth
                        ),
                    });
                }
                (node.score, Some(a))
            }
            None => {
                if serial.steps != 0 {
                    return Err(Error::BadParameter {
                        name: "parallel_group",
                        detail: "root-anchored parallel bank requires an empty serial stage".into(),
                    });
                }
                (1.0, None)
            }
        };
        for (i, list) in group.lists.iter().enumerate() {
            if list.offset != i + 1 {
                return Err(Error::BadParameter {
                    name: "parallel_group",
                    detail: format!(
                        "offsets must be contiguous from 1, found {} at slot {i}",
                        list.offset
                    ),
                });
            }
            if list.entries.is_empty() {
                return Err(Error::BadParameter {
                    name: "parallel_group",
                    detail: format!("offset {} has an empty candidate list", list.offset),
                });
            }
            let depth = serial.steps + list.offset;
            if depth > draft_len {
                return Err(Error::BadParameter {
                    name: "parallel_group",
                    detail: format!(
                        "offset {} reaches depth {depth} > draft_len {draft_len}",
                        list.offset
                    ),
                });
            }
            for &(token, confidence) in &list.entries {
                if !confidence.is_finite() || confidence < 0.0 {
                    return Err(Error::BadParameter {
                        name: "parallel_group",
                        detail: format!(
                            "offset {} has an invalid confidence {confidence}",
                            list.offset
                        ),
                    });
                }
                nodes.push(TreeNode {
                    parent: anchor,
                    depth,
                    token,
                    confidence,
                    score: anchor_score * confidence,
                    region: Region::Parallel,
                    anchor,
                    offset: list.offset,
                });
            }
        }
    }

    Ok(DraftTree {
        root,
        steps: serial.steps,
        draft_len,
        nodes,
    })
}

impl DraftTree {
    /// Build directly from a drafter proposal; the root is the last
    /// verified token of the context the proposal was made for.
    pub fn from_proposal(root: Token, proposal: &Proposal) -> Result<DraftTree> {
        build_tree(root, &proposal.serial, &proposal.groups, proposal.draft_len)
    }

    /// Tokens along the structural path from the root to `id` (exclusive of
    /// the root token itself).
    pub fn path_tokens(&self, id: NodeId) -> Vec<Token> {
        let mut rev = Vec::new();
        let mut cur = Some(id);
        while let Some(i) = cur {
            rev.push(self.nodes[i].token);
            cur = self.nodes[i].parent;
        }
        rev.reverse();
        rev
    }

    /// Debug dump: one node per line (`id parent depth token score region`),
    /// bracketed by a header and `end`. Stable across runs for golden-file
    /// comparisons.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "tree v1 root {} steps {} draft_len {}",
            self.root.0, self.steps, self.draft_len
        );
        for (id, n) in self.nodes.iter().enumerate() {
            let parent = match n.parent {
                Some(p) => p.to_string(),
                None => "-".to_string(),
            };
            let region = match n.region {
                Region::Serial => "serial",
                Region::Parallel => "parallel",
            };
            let _ = writeln!(
                out,
                "{id} {parent} {} {} {} {region}",
                n.depth, n.token.0, n.score
            );
        }
        let _ = writeln!(out, "end");
        out
    }
}

/// How a candidate path ends, for FTA grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEnd {
    /// Ends inside the serial region (never FTA-extended).
    Serial,
    /// Ends inside the parallel region below the given anchor.
    Parallel {
        /// The serial anchor (`None` = the root) the parallel suffix hangs
        /// from.
        anchor: Option<NodeId>,
    },
}

/// One materialized root path.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePath {
    /// Node ids along the path, depth 1 upward.
    pub nodes: Vec<NodeId>,
    /// The path's tokens, parallel to `nodes`.
    pub tokens: Vec<Token>,
    /// Region/anchor classification of the path's tail.
    pub end: PathEnd,
}

/// The selected verification candidates of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Deduplicated maximal root paths, in selection-rank order of the
    /// node that generated each.
    pub paths: Vec<CandidatePath>,
    /// The budget-many highest-score node ids, best first.
    pub selected: Vec<NodeId>,
    /// All `(depth, token id)` pairs used by the paths.
    pub distinct_tokens: BTreeSet<(usize, u32)>,
    /// The selection budget that produced this set.
    pub budget: usize,
}

/// Total ordering used for selection: score desc, then depth asc, token id
/// asc, node id asc.
fn rank_key(tree: &DraftTree, a: NodeId, b: NodeId) -> std::cmp::Ordering {
    let (na, nb) = (&tree.nodes[a], &tree.nodes[b]);
    nb.score
        .partial_cmp(&na.score)
        .unwrap()
        .then(na.depth.cmp(&nb.depth))
        .then(na.token.cmp(&nb.token))
        .then(a.cmp(&b))
}

/// Select the `budget` highest-score nodes and materialize their implied
/// root paths.
///
/// A selected serial node implies its structural chain. A selected parallel
/// node at depth `q` implies: its anchor's chain, then for each parallel
/// depth between the anchor and `q` the highest-score *selected* token at
/// that depth under the same anchor — or, when none was selected, the
/// highest-score available one (ties broken by token id, then node id).
/// Paths that are prefixes of other paths are dropped (deduplicated
/// maximal paths).
pub fn select_candidates(tree: &DraftTree, budget: usize) -> Result<CandidateSet> {
    if budget < 1 {
        return Err(Error::BadParameter {
            name: "budget",
            detail: format!("budget must be >= 1, got {budget}"),
        });
    }
    let mut ranked: Vec<NodeId> = (0..tree.nodes.len()).collect();
    ranked.sort_by(|&a, &b| rank_key(tree, a, b));
    ranked.truncate(budget);
    let selected = ranked;
    let in_selected: Vec<bool> = {
        let mut v = vec![false; tree.nodes.len()];
        for &id in &selected {
            v[id] = true;
        }
        v
    };

    // Group parallel nodes by (anchor, depth) once; each bucket is sorted by
    // the filler preference order (score desc, token asc, id asc).
    let mut buckets: HashMap<(Option<NodeId>, usize), Vec<NodeId>> = HashMap::new();
    for (id, n) in tree.nodes.iter().enumerate() {
        if n.region == Region::Parallel {
            buckets.entry((n.anchor, n.depth)).or_default().push(id);
        }
    }
    for bucket in buckets.values_mut() {
        bucket.sort_by(|&a, &b| rank_key(tree, a, b));
    }
    let filler = |anchor: Option<NodeId>, depth: usize| -> Option<NodeId> {
        let bucket = buckets.get(&(anchor, depth))?;
        bucket
            .iter()
            .copied()
            .find(|&id| in_selected[id])
            .or_else(|| bucket.first().copied())
    };

    let mut paths: Vec<CandidatePath> = Vec::new();
    for &id in &selected {
        let node = &tree.nodes[id];
        let path_nodes: Vec<NodeId> = match node.region {
            Region::Serial => {
                let mut rev = Vec::new();
                let mut cur = Some(id);
                while let Some(i) = cur {
                    rev.push(i);
                    cur = tree.nodes[i].parent;
                }
                rev.reverse();
                rev
            }
            Region::Parallel => {
                let mut chain = Vec::new();
                let mut cur = node.anchor;
                while let Some(i) = cur {
                    chain.push(i);
                    cur = tree.nodes[i].parent;
                }
                chain.reverse();
                for depth in (tree.steps + 1)..node.depth {
                    let f = filler(node.anchor, depth).ok_or_else(|| Error::BadParameter {
                        name: "tree",
                        detail: format!(
                            "no parallel candidates at depth {depth} under anchor {:?}",
                            node.anchor
                        ),
                    })?;
                    chain.push(f);
                }
                chain.push(id);
                chain
            }
        };
        let end = match node.region {
            Region::Serial => PathEnd::Serial,
            Region::Parallel => PathEnd::Parallel {
                anchor: node.anchor,
            },
        };
        paths.push(CandidatePath {
            tokens: path_nodes.iter().map(|&i| tree.nodes[i].token).collect(),
            nodes: path_nodes,
            end,
        });
    }

    let paths = dedup_maximal(paths);
    let distinct_tokens = collect_distinct(&paths, tree);
    Ok(CandidateSet {
        paths,
        selected,
        distinct_tokens,
        budget,
    })
}

/// Drop any path whose node sequence is a prefix of (or equal to) another
/// path's, keeping first occurrences in order.
fn dedup_maximal(paths: Vec<CandidatePath>) -> Vec<CandidatePath> {
    let mut keep = vec![true; paths.len()];
    for (i, a) in paths.iter().enumerate() {
        for (j, b) in paths.iter().enumerate() {
            if i == j || !keep[i] {
                continue;
            }
            let prefix = a.nodes.len() <= b.nodes.len() && b.nodes[..a.nodes.len()] == a.nodes[..];
            if prefix && (a.nodes.len() < b.nodes.len() || i > j) {
                keep[i] = false;
            }
        }
    }
    paths
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

fn collect_distinct(paths: &[CandidatePath], tree: &DraftTree) -> BTreeSet<(usize, u32)> {
    let mut set = BTreeSet::new();
    for p in paths {
        for &id in &p.nodes {
            set.insert((tree.nodes[id].depth, tree.nodes[id].token.0));
        }
    }
    set
}

/// Full-tree-attention supplementation.
///
/// Every path that ends inside the parallel region short of `draft_len` is
/// extended at each missing depth with the token some longer path sharing
/// the same anchor uses there, choosing the highest-score donor token per
/// depth (ties by token id, then node id). Paths truncated inside the
/// serial region are never extended. The distinct `(depth, token)` set is
/// unchanged — FTA adds no new verification work.
pub fn apply_fta(candidates: &CandidateSet, tree: &DraftTree) -> Result<CandidateSet> {
    // Donor tokens per (anchor, depth), collected from the *input* paths.
    let mut donors: HashMap<(Option<NodeId>, usize), Vec<NodeId>> = HashMap::new();
    for path in &candidates.paths {
        if let PathEnd::Parallel { anchor } = path.end {
            for &id in &path.nodes {
                let n = &tree.nodes[id];
                if n.region == Region::Parallel {
                    donors.entry((anchor, n.depth)).or_default().push(id);
                }
            }
        }
    }
    for bucket in donors.values_mut() {
        bucket.sort_by(|&a, &b| rank_key(tree, a, b));
        bucket.dedup();
    }

    let mut out = Vec::with_capacity(candidates.paths.len());
    for path in &candidates.paths {
        let PathEnd::Parallel { anchor } = path.end else {
            out.push(path.clone());
            continue;
        };
        let mut extended = path.clone();
        let mut depth = tree.nodes[*path.nodes.last().expect("paths are non-empty")].depth;
        while depth < tree.draft_len {
            depth += 1;
            // Borrow the best donor token at this depth from paths that
            // reach it under the same anchor; stop at the first gap.
            let Some(bucket) = donors.get(&(anchor, depth)) else {
                break;
            };
            let donor = bucket[0];
            extended.nodes.push(donor);
            extended.tokens.push(tree.nodes[donor].token);
        }
        out.push(extended);
    }

    let paths = dedup_maximal(out);
    let distinct_tokens = collect_distinct(&paths, tree);
    debug_assert_eq!(
        distinct_tokens, candidates.distinct_tokens,
        "FTA must not change the distinct (depth, token) set"
    );
    Ok(CandidateSet {
        paths,
        selected: candidates.selected.clone(),
        distinct_tokens,
        budget: candidates.budget,
    })
}

/// One entry of a linearized verification batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEntry {
    /// Draft position, 1-based.
    pub depth: usize,
    /// The token verified at this entry.
    pub token: Token,
    /// The serial-prefix class: for serial-region entries the full token
    /// path before this position, for parallel entries the anchor's token
    /// path. Two paths share an entry exactly when depth, token, and this
    /// prefix all match.
    pub prefix: Vec<Token>,
    /// Indices of entries that precede this one on some candidate path.
    pub ancestors: BTreeSet<usize>,
}

/// The flattened, deduplicated verification batch of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationBatch {
    /// Distinct `(depth, token, serial-prefix)` entries, in first-use order.
    pub entries: Vec<BatchEntry>,
    /// Each candidate path as a sequence of entry indices.
    pub paths: Vec<Vec<usize>>,
}

/// Flatten a candidate set into one entry per distinct
/// `(depth, token, serial-prefix)` triple. The entry count is the round's
/// cache-reuse token count: parallel tokens shared by many cross-product
/// paths are verified once.
pub fn linearize(candidates: &CandidateSet, tree: &DraftTree) -> VerificationBatch {
    let mut key_to_entry: HashMap<(usize, u32, Vec<u32>), usize> = HashMap::new();
    let mut entries: Vec<BatchEntry> = Vec::new();
    let mut paths = Vec::with_capacity(candidates.paths.len());
    for path in &candidates.paths {
        let mut entry_ids = Vec::with_capacity(path.nodes.len());
        for (pos, &id) in path.nodes.iter().enumerate() {
            let n = &tree.nodes[id];
            let prefix_tokens: Vec<Token> = match n.region {
                Region::Serial => path.tokens[..pos].to_vec(),
                Region::Parallel => match n.anchor {
                    Some(a) => tree.path_tokens(a),
                    None => Vec::new(),
                },
            };
            let key = (
                n.depth,
                n.token.0,
                prefix_tokens.iter().map(|t| t.0).collect::<Vec<u32>>(),
            );
            let entry_id = *key_to_entry.entry(key).or_insert_with(|| {
                entries.push(BatchEntry {
                    depth: n.depth,
                    token: n.token,
                    prefix: prefix_tokens,
                    ancestors: BTreeSet::new(),
                });
                entries.len() - 1
            });
            for &prev in &entry_ids {
                entries[entry_id].ancestors.insert(prev);
            }
            entry_ids.push(entry_id);
        }
        paths.push(entry_ids);
    }
    VerificationBatch { entries, paths }
}
