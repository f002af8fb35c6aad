//! EM estimation of a unigram piece vocabulary.
//!
//! Seeds every substring up to `max_piece_len` characters that occurs at
//! least twice, then alternates EM refinement with pruning of the pieces
//! whose removal costs the least Viterbi likelihood. Single characters are
//! never pruned.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::lattice::Lattice;
use super::vocab::{Vocabulary, NUM_RESERVED, RESERVED_SURFACES};
use crate::error::{Error, Result};

/// Expected counts are floored here before renormalizing so that no piece
/// reaches probability zero.
const MIN_EXPECTED_COUNT: f64 = 1e-250;
const MIN_SEED_FREQUENCY: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct Estimator {
    pub target_size: usize,
    pub max_piece_len: usize,
    pub em_iters: usize,
    pub prune_fraction: f64,
}

/// Output of [`Estimator::run`].
#[derive(Clone, Debug)]
pub struct Estimation {
    pub vocab: Vocabulary,
    /// Corpus log-likelihood before each M-step, grouped by pruning round.
    pub log_likelihoods: Vec<Vec<f64>>,
}

struct Working {
    surfaces: Vec<String>,
    log_probs: Vec<f64>,
    is_char: Vec<bool>,
}

impl Working {
    fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::from_pieces(self.surfaces.iter().cloned().zip(self.log_probs.iter().copied()))
    }

    fn size(&self) -> usize {
        self.surfaces.len() + NUM_RESERVED
    }

    fn retain(&mut self, keep: &[bool]) {
        fn kept<T>(v: &mut Vec<T>, keep: &[bool]) {
            let mut flags = keep.iter();
            v.retain(|_| *flags.next().unwrap());
        }
        kept(&mut self.surfaces, keep);
        kept(&mut self.log_probs, keep);
        kept(&mut self.is_char, keep);
        let total = self.log_probs.iter().map(|lp| lp.exp()).sum::<f64>().ln();
        for lp in &mut self.log_probs {
            *lp -= total;
        }
    }
}

fn usable_char(c: char) -> bool {
    !matches!(c, '\t' | '\n' | '\r')
}

impl Estimator {
    pub fn new(target_size: usize) -> Self {
        Estimator {
            target_size,
            max_piece_len: 8,
            em_iters: 2,
            prune_fraction: 0.2,
        }
    }

    pub fn run<S: AsRef<str>>(&self, corpus: &[S]) -> Result<Estimation> {
        if corpus.is_empty() || corpus.iter().all(|s| s.as_ref().is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        if self.max_piece_len == 0 {
            return Err(Error::InvalidArgument("max_piece_len must be >= 1".into()));
        }
        if !(self.prune_fraction > 0.0 && self.prune_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "prune_fraction must be in (0, 1], got {}",
                self.prune_fraction
            )));
        }
        let mut sentences: BTreeMap<&str, f64> = BTreeMap::new();
        for s in corpus {
            if !s.as_ref().is_empty() {
                *sentences.entry(s.as_ref()).or_default() += 1.0;
            }
        }
        let sentences: Vec<(&str, f64)> = sentences.into_iter().collect();

        let chars: BTreeSet<char> = sentences
            .iter()
            .flat_map(|(s, _)| s.chars())
            .filter(|&c| usable_char(c))
            .collect();
        let required = chars.len() + NUM_RESERVED;
        if self.target_size < required {
            return Err(Error::VocabTooSmall {
                requested: self.target_size,
                required,
                chars: chars.len(),
            });
        }

        let mut work = self.seed(&sentences, &chars);
        let mut log_likelihoods = Vec::new();
        loop {
            let mut round = Vec::with_capacity(self.em_iters);
            for _ in 0..self.em_iters {
                round.push(em_step(&mut work, &sentences)?);
            }
            log_likelihoods.push(round);
            if work.size() <= self.target_size {
                break;
            }
            self.prune(&mut work, &sentences)?;
        }
        Ok(Estimation {
            vocab: finalize(work)?,
            log_likelihoods,
        })
    }

    fn seed(&self, sentences: &[(&str, f64)], chars: &BTreeSet<char>) -> Working {
        let mut freq: HashMap<&str, f64> = HashMap::new();
        for &(s, mult) in sentences {
            let offsets: Vec<usize> = s.char_indices().map(|(b, _)| b).chain([s.len()]).collect();
            let cs: Vec<char> = s.chars().collect();
            for start in 0..cs.len() {
                if !usable_char(cs[start]) {
                    continue;
                }
                for end in start + 1..=(start + self.max_piece_len).min(cs.len()) {
                    let last = cs[end - 1];
                    if end - start > 1 && (last.is_whitespace() || !usable_char(last)) {
                        break;
                    }
                    *freq.entry(&s[offsets[start]..offsets[end]]).or_default() += mult;
                }
            }
        }
        let mut seeds: Vec<(String, f64, bool)> = chars
            .iter()
            .map(|c| {
                let s = c.to_string();
                let f = freq.get(s.as_str()).copied().unwrap_or(1.0);
                (s, f, true)
            })
            .collect();
        let mut multi: Vec<(&str, f64)> = freq
            .into_iter()
            .filter(|(s, f)| {
                *f >= MIN_SEED_FREQUENCY && s.chars().count() > 1 && !RESERVED_SURFACES.contains(s)
            })
            .collect();
        multi.sort_by(|a, b| a.0.cmp(b.0));
        seeds.extend(
            multi
                .into_iter()
                .map(|(s, f)| (s.to_string(), f * s.chars().count() as f64, false)),
        );
        let total: f64 = seeds.iter().map(|(_, f, _)| f).sum();
        Working {
            log_probs: seeds.iter().map(|(_, f, _)| (f / total).ln()).collect(),
            is_char: seeds.iter().map(|(_, _, c)| *c).collect(),
            surfaces: seeds.into_iter().map(|(s, _, _)| s).collect(),
        }
    }

    fn prune(&self, work: &mut Working, sentences: &[(&str, f64)]) -> Result<()> {
        let vocab = work.vocab()?;
        let mut viterbi_freq = vec![0.0; work.surfaces.len()];
        for &(s, mult) in sentences {
            for id in Lattice::build(s, &vocab).viterbi().token_ids {
                if let Some(f) = viterbi_freq.get_mut((id as usize).wrapping_sub(NUM_RESERVED)) {
                    *f += mult;
                }
            }
        }
        let mut losses: Vec<(f64, usize)> = Vec::new();
        for i in 0..work.surfaces.len() {
            if work.is_char[i] {
                continue;
            }
            let loss = if viterbi_freq[i] == 0.0 {
                0.0
            } else {
                let id = (i + NUM_RESERVED) as u32;
                let alt = Lattice::build(&work.surfaces[i], &vocab)
                    .best_path(|e| e.piece != id)
                    .map_or(f64::NEG_INFINITY, |seg| seg.log_weight);
                viterbi_freq[i] * (work.log_probs[i] - alt)
            };
            losses.push((loss, i));
        }
        losses.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| work.surfaces[a.1].cmp(&work.surfaces[b.1]))
        });
        let by_fraction = ((losses.len() as f64) * self.prune_fraction).floor() as usize;
        let count = by_fraction.max(1).min(work.size() - self.target_size).min(losses.len());
        let mut keep = vec![true; work.surfaces.len()];
        for &(_, i) in &losses[..count] {
            keep[i] = false;
        }
        work.retain(&keep);
        Ok(())
    }
}

/// One EM iteration; returns the corpus log-likelihood under the parameters
/// it started from.
fn em_step(work: &mut Working, sentences: &[(&str, f64)]) -> Result<f64> {
    let vocab = work.vocab()?;
    let mut counts = vec![0.0; vocab.len()];
    let mut log_likelihood = 0.0;
    for &(s, mult) in sentences {
        log_likelihood += mult * Lattice::build(s, &vocab).accumulate_expected_counts(mult, &mut counts);
    }
    let floored: Vec<f64> = counts[NUM_RESERVED..]
        .iter()
        .map(|&c| c.max(MIN_EXPECTED_COUNT))
        .collect();
    let total: f64 = floored.iter().sum();
    for (lp, c) in work.log_probs.iter_mut().zip(floored) {
        *lp = (c / total).ln();
    }
    Ok(log_likelihood)
}

/// Orders pieces as reserved, single characters, then multi-character
/// pieces by decreasing probability.
fn finalize(work: Working) -> Result<Vocabulary> {
    let mut order: Vec<usize> = (0..work.surfaces.len()).collect();
    order.sort_by(|&a, &b| {
        work.is_char[b]
            .cmp(&work.is_char[a])
            .then_with(|| {
                if work.is_char[a] {
                    std::cmp::Ordering::Equal
                } else {
                    work.log_probs[b].total_cmp(&work.log_probs[a])
                }
            })
            .then_with(|| work.surfaces[a].cmp(&work.surfaces[b]))
    });
    Vocabulary::from_pieces(
        order
            .into_iter()
            .map(|i| (work.surfaces[i].clone(), work.log_probs[i])),
    )
}

/// Estimates a vocabulary of `target_size` entries (fewer when the corpus
/// does not yield enough seed pieces).
pub fn estimate_vocabulary<S: AsRef<str>>(
    corpus: &[S],
    target_size: usize,
    max_piece_len: usize,
    em_iters: usize,
    prune_fraction: f64,
) -> Result<Vocabulary> {
    Estimator {
        target_size,
        max_piece_len,
        em_iters,
        prune_fraction,
    }
    .run(corpus)
    .map(|e| e.vocab)
}

/// Σ over sentences of log Z (α = 1), the unigram corpus log-likelihood.
pub fn corpus_log_likelihood<S: AsRef<str>>(vocab: &Vocabulary, corpus: &[S]) -> f64 {
    corpus
        .iter()
        .map(|s| Lattice::build(s.as_ref(), vocab).log_partition(1.0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &Vocabulary) -> Vec<&str> {
        v.pieces()[NUM_RESERVED..].iter().map(|p| p.surface.as_str()).collect()
    }

    #[test]
    fn single_symbol_corpus() {
        let v = estimate_vocabulary(&["aaaa"], 5, 1, 3, 0.2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.surface(4), Some("a"));
        assert_eq!(v.log_prob(4), Some(0.0));
    }

    #[test]
    fn too_small_and_empty() {
        let err = estimate_vocabulary(&["abc"], 6, 2, 1, 0.2).unwrap_err();
        assert!(err.to_string().contains("vocab too small"));
        assert!(matches!(
            estimate_vocabulary::<&str>(&[], 10, 2, 1, 0.2),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn character_floor() {
        let corpus = ["the cat sat", "the hat", "a cat sat on the mat"];
        let chars: BTreeSet<char> = corpus.iter().flat_map(|s| s.chars()).collect();
        let v = estimate_vocabulary(&corpus, chars.len() + 4, 8, 2, 0.2).unwrap();
        assert_eq!(v.len(), chars.len() + 4);
        assert!(ids(&v).iter().all(|s| s.chars().count() == 1));
    }

    #[test]
    fn exact_target_size_and_normalized() {
        let corpus = ["the cat sat", "the hat", "a cat sat on the mat", "that cat"];
        let v = estimate_vocabulary(&corpus, 24, 6, 2, 0.3).unwrap();
        assert_eq!(v.len(), 24);
        let mass: f64 = v.pieces()[NUM_RESERVED..].iter().map(|p| p.log_prob.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-9);
        // multi-character pieces never contain an interior space
        assert!(ids(&v).iter().all(|s| !s.chars().skip(1).any(char::is_whitespace)));
    }

    #[test]
    fn deterministic() {
        let corpus = ["abcabc", "abcab", "bcabca", "cab cab"];
        let a = estimate_vocabulary(&corpus, 12, 4, 3, 0.2).unwrap();
        let b = estimate_vocabulary(&corpus, 12, 4, 3, 0.2).unwrap();
        assert_eq!(a, b);
    }
}
