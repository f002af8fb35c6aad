//! Segmentation lattice over character boundaries.
//!
//! Node `i` sits between character `i - 1` and character `i`; an edge
//! `(start, end, piece)` exists whenever `raw[start..end)` is a vocabulary
//! piece. Paths from node 0 to node `len` are exactly the segmentations of
//! the string.

use std::cmp::Ordering;

use rand::Rng;

use super::vocab::{Vocabulary, UNK_ID};
use super::Segmentation;
use crate::error::{Error, Result};
use crate::logspace::log_sum_exp;

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub start: usize,
    pub end: usize,
    pub piece: u32,
    pub log_prob: f64,
    /// `log_prob` on the fixed-point ranking grid, see [`ranking_score`].
    pub score: i64,
}

/// Scale of the fixed-point grid used to rank paths.
pub const RANKING_SCALE: f64 = (1u64 << 32) as f64;

/// Path ranking compares sums of piece log-probabilities rounded to a
/// 2^-32 grid. Integer sums are exact, so two orderings of the same pieces
/// always tie and fall through to the token-count and id tie-breaks.
pub fn ranking_score(log_prob: f64) -> i64 {
    (log_prob.max(-1e5) * RANKING_SCALE).round() as i64
}

#[derive(Clone, Debug)]
pub struct Lattice {
    raw: String,
    len: usize,
    edges: Vec<Edge>,
    starting_at: Vec<Vec<usize>>,
    ending_at: Vec<Vec<usize>>,
}

/// Partial path used by the k-best search.
#[derive(Clone, Debug)]
struct Partial {
    score: i64,
    weight: f64,
    pieces: Vec<u32>,
}

/// Ranking shared by viterbi and nbest: higher score, then fewer tokens,
/// then the lexicographically smaller id sequence.
fn rank(a: &Partial, b: &Partial) -> Ordering {
    b.score
        .cmp(&a.score)
        .then(a.pieces.len().cmp(&b.pieces.len()))
        .then_with(|| a.pieces.cmp(&b.pieces))
}

/// Best-path bookkeeping for one lattice node.
#[derive(Clone, Copy, Debug)]
struct Best {
    score: i64,
    weight: f64,
    count: usize,
    edge: usize,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")))
    }
}

impl Lattice {
    /// One edge per `(position, matching piece)`. A character that is not a
    /// single-character piece gets a length-one UNK edge.
    pub fn build(raw: &str, vocab: &Vocabulary) -> Lattice {
        let offsets: Vec<usize> = raw
            .char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(raw.len()))
            .collect();
        let len = offsets.len() - 1;
        let max_chars = vocab.max_piece_chars();
        let mut edges = Vec::new();
        let mut starting_at = vec![Vec::new(); len + 1];
        let mut ending_at = vec![Vec::new(); len + 1];
        for start in 0..len {
            let mut has_char_piece = false;
            for end in start + 1..=(start + max_chars).min(len) {
                if let Some(id) = vocab.id_of(&raw[offsets[start]..offsets[end]]) {
                    if Vocabulary::is_reserved(id) {
                        continue;
                    }
                    has_char_piece |= end == start + 1;
                    let log_prob = vocab.log_prob(id).unwrap_or(f64::NEG_INFINITY);
                    edges.push(Edge {
                        start,
                        end,
                        piece: id,
                        log_prob,
                        score: ranking_score(log_prob),
                    });
                }
            }
            if !has_char_piece {
                let log_prob = vocab.log_prob(UNK_ID).unwrap_or(f64::NEG_INFINITY);
                edges.push(Edge {
                    start,
                    end: start + 1,
                    piece: UNK_ID,
                    log_prob,
                    score: ranking_score(log_prob),
                });
            }
        }
        edges.sort_by_key(|a| (a.start, a.end));
        for (i, e) in edges.iter().enumerate() {
            starting_at[e.start].push(i);
            ending_at[e.end].push(i);
        }
        Lattice {
            raw: raw.to_string(),
            len,
            edges,
            starting_at,
            ending_at,
        }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Number of characters (the final node index).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edges_starting_at(&self, node: usize) -> impl Iterator<Item = &Edge> {
        self.starting_at[node].iter().map(move |&i| &self.edges[i])
    }

    pub fn edges_ending_at(&self, node: usize) -> impl Iterator<Item = &Edge> {
        self.ending_at[node].iter().map(move |&i| &self.edges[i])
    }

    fn segmentation(&self, pieces: Vec<u32>, log_weight: f64) -> Segmentation {
        Segmentation {
            token_ids: pieces,
            raw: self.raw.clone(),
            log_weight,
        }
    }

    /// Most plausible segmentation.
    pub fn viterbi(&self) -> Segmentation {
        self.best_path(|_| true).expect("every lattice node is reachable")
    }

    /// Best path using only edges accepted by `keep`, or `None` when the end
    /// node becomes unreachable.
    pub(crate) fn best_path(&self, keep: impl Fn(&Edge) -> bool) -> Option<Segmentation> {
        let mut best: Vec<Option<Best>> = vec![None; self.len + 1];
        best[0] = Some(Best {
            score: 0,
            weight: 0.0,
            count: 0,
            edge: usize::MAX,
        });
        for node in 1..=self.len {
            for &ei in &self.ending_at[node] {
                let e = &self.edges[ei];
                if !keep(e) {
                    continue;
                }
                let Some(prev) = best[e.start] else { continue };
                let cand = Best {
                    score: prev.score + e.score,
                    weight: prev.weight + e.log_prob,
                    count: prev.count + 1,
                    edge: ei,
                };
                let replace = match best[node] {
                    None => true,
                    Some(cur) => match cand.score.cmp(&cur.score).then(cur.count.cmp(&cand.count)) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => {
                            self.trace(&best, e.start, Some(e.piece)) < self.trace(&best, node, None)
                        }
                    },
                };
                if replace {
                    best[node] = Some(cand);
                }
            }
        }
        let end = best[self.len]?;
        Some(self.segmentation(self.trace(&best, self.len, None), end.weight))
    }

    fn trace(&self, best: &[Option<Best>], mut node: usize, last: Option<u32>) -> Vec<u32> {
        let mut pieces: Vec<u32> = last.into_iter().collect();
        while node > 0 {
            let ei = best[node].expect("traced node is reachable").edge;
            pieces.push(self.edges[ei].piece);
            node = self.edges[ei].start;
        }
        pieces.reverse();
        pieces
    }

    /// The `n` best distinct segmentations in ranking order (fewer if the
    /// lattice has fewer paths).
    pub fn nbest(&self, n: usize) -> Vec<Segmentation> {
        if n == 0 {
            return Vec::new();
        }
        let mut lists: Vec<Vec<Partial>> = vec![Vec::new(); self.len + 1];
        lists[0].push(Partial {
            score: 0,
            weight: 0.0,
            pieces: Vec::new(),
        });
        for node in 1..=self.len {
            let mut cands = Vec::new();
            for e in self.edges_ending_at(node) {
                for p in &lists[e.start] {
                    let mut pieces = Vec::with_capacity(p.pieces.len() + 1);
                    pieces.extend_from_slice(&p.pieces);
                    pieces.push(e.piece);
                    cands.push(Partial {
                        score: p.score + e.score,
                        weight: p.weight + e.log_prob,
                        pieces,
                    });
                }
            }
            cands.sort_by(rank);
            cands.truncate(n);
            lists[node] = cands;
        }
        std::mem::take(&mut lists[self.len])
            .into_iter()
            .map(|p| self.segmentation(p.pieces, p.weight))
            .collect()
    }

    /// Forward log-values of the α-scaled edge scores; entry `i` is the log
    /// sum over paths from node 0 to node `i`.
    pub fn forward(&self, alpha: f64) -> Vec<f64> {
        let mut fwd = vec![f64::NEG_INFINITY; self.len + 1];
        fwd[0] = 0.0;
        for node in 1..=self.len {
            fwd[node] = log_sum_exp(self.edges_ending_at(node).map(|e| fwd[e.start] + alpha * e.log_prob));
        }
        fwd
    }

    pub fn backward(&self, alpha: f64) -> Vec<f64> {
        let mut bwd = vec![f64::NEG_INFINITY; self.len + 1];
        bwd[self.len] = 0.0;
        for node in (0..self.len).rev() {
            bwd[node] = log_sum_exp(self.edges_starting_at(node).map(|e| alpha * e.log_prob + bwd[e.end]));
        }
        bwd
    }

    /// log Z_α = log Σ_x exp(α · log_weight(x)).
    pub fn log_partition(&self, alpha: f64) -> f64 {
        self.forward(alpha)[self.len]
    }

    /// Draws a segmentation with probability ∝ exp(α · log_weight) by forward
    /// filtering and backward sampling.
    pub fn sample<R: Rng + ?Sized>(&self, alpha: f64, rng: &mut R) -> Result<Segmentation> {
        check_alpha(alpha)?;
        let fwd = self.forward(alpha);
        let mut pieces = Vec::new();
        let mut weight_terms = Vec::new();
        let mut node = self.len;
        while node > 0 {
            let incoming: Vec<&Edge> = self
                .edges_ending_at(node)
                .filter(|e| fwd[e.start] > f64::NEG_INFINITY)
                .collect();
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = incoming[incoming.len() - 1];
            for e in &incoming {
                acc += (fwd[e.start] + alpha * e.log_prob - fwd[node]).exp();
                if u < acc {
                    chosen = e;
                    break;
                }
            }
            pieces.push(chosen.piece);
            weight_terms.push(chosen.log_prob);
            node = chosen.start;
        }
        pieces.reverse();
        // left-to-right summation, the same order viterbi uses
        let log_weight = weight_terms.iter().rev().fold(0.0, |acc, lp| acc + lp);
        Ok(self.segmentation(pieces, log_weight))
    }

    /// Walks `pieces` through the lattice and returns the matching edges.
    pub fn edges_for(&self, pieces: &[u32]) -> Result<Vec<&Edge>> {
        let mut node = 0;
        let mut path = Vec::with_capacity(pieces.len());
        for &id in pieces {
            let edge = self
                .edges_starting_at(node)
                .find(|e| e.piece == id)
                .ok_or_else(|| Error::SegmentationMismatch { raw: self.raw.clone() })?;
            path.push(edge);
            node = edge.end;
        }
        if node != self.len {
            return Err(Error::SegmentationMismatch { raw: self.raw.clone() });
        }
        Ok(path)
    }

    /// Sum of piece log-probabilities of a token sequence realizing the string.
    pub fn log_weight_of(&self, pieces: &[u32]) -> Result<f64> {
        Ok(self.edges_for(pieces)?.iter().fold(0.0, |acc, e| acc + e.log_prob))
    }

    /// log P_α(seg | raw) = α · log_weight(seg) − log Z_α.
    pub fn segmentation_log_prob(&self, seg: &Segmentation, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let w = self.log_weight_of(&seg.token_ids)?;
        Ok(alpha * w - self.log_partition(alpha))
    }

    /// Adds `weight` times the posterior expected count of every piece to
    /// `counts` and returns log Z (α = 1).
    pub(crate) fn accumulate_expected_counts(&self, weight: f64, counts: &mut [f64]) -> f64 {
        let fwd = self.forward(1.0);
        let bwd = self.backward(1.0);
        let log_z = fwd[self.len];
        for e in &self.edges {
            let post = (fwd[e.start] + e.log_prob + bwd[e.end] - log_z).exp();
            if let Some(c) = counts.get_mut(e.piece as usize) {
                *c += weight * post;
            }
        }
        log_z
    }
}

/// Convenience wrapper matching the free-function form of the API.
pub fn build_lattice(raw: &str, vocab: &Vocabulary) -> Lattice {
    Lattice::build(raw, vocab)
}
