//! Brute-force oracles shared by the integration suites. Nothing here calls
//! into the lattice, beam search or BLEU code it is used to check.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use subreg::rng::rng_from;
use subreg::unigram::{Vocabulary, NUM_RESERVED, UNK_ID};

/// Exact fixed-point path score: piece log-probs rounded to a 2^-32 grid.
pub fn grid_score(ids: &[u32], vocab: &Vocabulary) -> i64 {
    ids.iter()
        .map(|&id| (vocab.log_prob(id).unwrap().max(-1e5) * 4294967296.0).round() as i64)
        .sum()
}

/// Every segmentation of `raw` under `vocab`, with weights summed left to
/// right. Characters with no single-character piece map to UNK.
pub fn enumerate_segmentations(raw: &str, vocab: &Vocabulary) -> Vec<(Vec<u32>, f64)> {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = Vec::new();
    let mut path = Vec::new();
    walk(&chars, 0, 0.0, vocab, &mut path, &mut out);
    out
}

fn walk(
    chars: &[char],
    pos: usize,
    weight: f64,
    vocab: &Vocabulary,
    path: &mut Vec<u32>,
    out: &mut Vec<(Vec<u32>, f64)>,
) {
    if pos == chars.len() {
        out.push((path.clone(), weight));
        return;
    }
    let mut single = false;
    for (id, piece) in vocab.pieces().iter().enumerate().skip(NUM_RESERVED) {
        let pc: Vec<char> = piece.surface.chars().collect();
        if pos + pc.len() <= chars.len() && chars[pos..pos + pc.len()] == pc[..] {
            single |= pc.len() == 1;
            path.push(id as u32);
            walk(chars, pos + pc.len(), weight + piece.log_prob, vocab, path, out);
            path.pop();
        }
    }
    if !single {
        path.push(UNK_ID);
        walk(chars, pos + 1, weight + vocab.log_prob(UNK_ID).unwrap(), vocab, path, out);
        path.pop();
    }
}

/// Enumerated segmentations sorted by grid score desc, length asc, ids asc.
pub fn ranked(mut segs: Vec<(Vec<u32>, f64)>, vocab: &Vocabulary) -> Vec<(Vec<u32>, f64)> {
    segs.sort_by(|a, b| {
        grid_score(&b.0, vocab)
            .cmp(&grid_score(&a.0, vocab))
            .then(a.0.len().cmp(&b.0.len()))
            .then_with(|| a.0.cmp(&b.0))
    });
    segs
}

/// log Σ exp(α·w) computed directly.
pub fn enumerated_log_partition(segs: &[(Vec<u32>, f64)], alpha: f64) -> f64 {
    let max = segs.iter().map(|s| alpha * s.1).fold(f64::NEG_INFINITY, f64::max);
    max + segs.iter().map(|s| (alpha * s.1 - max).exp()).sum::<f64>().ln()
}

/// A random normalized vocabulary over `alphabet` with at most `max_pieces`
/// entries: every character plus random multi-character pieces.
pub fn random_toy_vocab(seed: u64, alphabet: &[char], max_pieces: usize) -> Vocabulary {
    let mut rng = rng_from(seed);
    let mut surfaces: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let mut guard = 0;
    while surfaces.len() < max_pieces && guard < 1000 {
        guard += 1;
        let len = rng.gen_range(2..=4);
        let s: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        if !surfaces.contains(&s) {
            surfaces.push(s);
        }
    }
    // shuffle so ids are not ordered by length
    for i in (1..surfaces.len()).rev() {
        let j = rng.gen_range(0..=i);
        surfaces.swap(i, j);
    }
    let weights: Vec<(String, f64)> = surfaces
        .into_iter()
        .map(|s| {
            let w: f64 = rng.gen_range(0.05..1.0);
            (s, w)
        })
        .collect();
    Vocabulary::from_weights(weights).unwrap()
}

/// All strings over `alphabet` with length in `1..=max_len`.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut layer = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &layer {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Clipped n-gram statistics by exhaustive window comparison, for BLEU.
pub fn brute_force_bleu(hyps: &[&str], refs: &[&str]) -> (f64, [f64; 4], f64) {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let hw: Vec<&[&str]> = h.windows(n).collect();
            let rw: Vec<&[&str]> = if r.len() >= n { r.windows(n).collect() } else { Vec::new() };
            totals[n - 1] += hw.len();
            // for each distinct hypothesis n-gram: min(count in hyp, count in ref)
            let mut seen: Vec<&[&str]> = Vec::new();
            for g in &hw {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let ch = hw.iter().filter(|x| *x == g).count();
                let cr = rw.iter().filter(|x| *x == g).count();
                matches[n - 1] += ch.min(cr);
            }
        }
    }
    let mut p = [0.0; 4];
    for n in 0..4 {
        p[n] = if n > 0 && matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if p.contains(&0.0) {
        0.0
    } else {
        100.0 * bp * (p.iter().map(|x| x.ln()).sum::<f64>() / 4.0).exp()
    };
    (bleu, p, bp)
}

/// Empirical frequency of each token sequence.
pub fn histogram(samples: &[Vec<u32>]) -> HashMap<Vec<u32>, f64> {
    let mut h = HashMap::new();
    for s in samples {
        *h.entry(s.clone()).or_insert(0.0) += 1.0 / samples.len() as f64;
    }
    h
}

/// Target ids a lookup fixture can emit: EOS and three content tokens.
pub const FIXTURE_SYMBOLS: [u32; 4] = [subreg::unigram::EOS_ID, 4, 5, 6];
pub const FIXTURE_TGT_VOCAB: usize = 7;

/// Next-token probabilities over [`FIXTURE_SYMBOLS`] keyed by
/// `(source, prefix)`.
pub type Table = HashMap<(Vec<u32>, Vec<u32>), [f64; 4]>;

/// A random, fully specified table for every prefix of up to
/// `max_len − 1` content tokens under each of `sources`.
pub fn random_table(seed: u64, sources: &[Vec<u32>], max_len: usize) -> Table {
    let mut rng = rng_from(seed);
    let mut table = HashMap::new();
    let mut prefixes = vec![vec![subreg::unigram::BOS_ID]];
    let mut layer = prefixes.clone();
    for _ in 1..max_len {
        let mut next = Vec::new();
        for p in &layer {
            for &t in &FIXTURE_SYMBOLS[1..] {
                let mut q = p.clone();
                q.push(t);
                next.push(q);
            }
        }
        prefixes.extend(next.iter().cloned());
        layer = next;
    }
    for src in sources {
        for prefix in &prefixes {
            let mut p = [0.0; 4];
            for x in p.iter_mut() {
                let u: f64 = rng.gen_range(0.02..1.0);
                *x = u * u * u;
            }
            let z: f64 = p.iter().sum();
            for x in p.iter_mut() {
                *x /= z;
            }
            table.insert((src.clone(), prefix.clone()), p);
        }
    }
    table
}

pub fn table_model(table: &Table, src_vocab: usize) -> subreg::model::LookupModel {
    let mut m = subreg::model::LookupModel::uniform(src_vocab, FIXTURE_TGT_VOCAB).unwrap();
    for ((src, prefix), p) in table {
        let entries: Vec<(u32, f64)> = FIXTURE_SYMBOLS.iter().copied().zip(p.iter().copied()).collect();
        m.insert_sparse(src.clone(), prefix.clone(), &entries).unwrap();
    }
    m
}

/// Every output the decoder can produce with `max_len` tokens: `k < max_len`
/// content tokens closed by EOS, or `max_len` content tokens cut off.
pub fn output_space(max_len: usize) -> Vec<(Vec<u32>, bool)> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<u32>> = vec![Vec::new()];
    for len in 0..=max_len {
        for y in &layer {
            if len < max_len {
                out.push((y.clone(), true));
            } else {
                out.push((y.clone(), false));
            }
        }
        let mut next = Vec::new();
        for y in &layer {
            for &t in &FIXTURE_SYMBOLS[1..] {
                let mut z = y.clone();
                z.push(t);
                next.push(z);
            }
        }
        layer = next;
    }
    out
}

/// Σ over `(table, source)` contexts of log P(y | source) read straight from
/// the tables.
pub fn table_score(contexts: &[(&Table, &Vec<u32>)], y: &[u32], finished: bool) -> f64 {
    let mut total = 0.0;
    for (table, src) in contexts {
        let mut prefix = vec![subreg::unigram::BOS_ID];
        let closing = if finished { Some(subreg::unigram::EOS_ID) } else { None };
        for &t in y.iter().chain(closing.iter()) {
            let p = table[&((*src).clone(), prefix.clone())];
            let k = FIXTURE_SYMBOLS.iter().position(|&s| s == t).unwrap();
            total += p[k].ln();
            prefix.push(t);
        }
    }
    total
}

/// Exhaustive argmax of the length-normalized objective (length counts
/// EOS), ties by ascending token sequence. Returns (tokens, raw score).
pub fn brute_force_decode(contexts: &[(&Table, &Vec<u32>)], max_len: usize) -> (Vec<u32>, f64) {
    let mut best: Option<(Vec<u32>, f64, f64)> = None;
    for (y, finished) in output_space(max_len) {
        let s = table_score(contexts, &y, finished);
        let len = y.len() + usize::from(finished);
        let norm = s / len as f64;
        let better = match &best {
            None => true,
            Some((by, _, bn)) => norm > *bn || (norm == *bn && y < *by),
        };
        if better {
            best = Some((y, s, norm));
        }
    }
    let (y, s, _) = best.unwrap();
    (y, s)
}
