//! Corpus-level BLEU-4 over whitespace tokens.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// Score on a 0–100 scale.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram precisions with add-one smoothing for orders ≥ 2 whose
/// match count is zero, and the usual brevity penalty.
pub fn corpus_bleu<S: AsRef<str>, T: AsRef<str>>(hypotheses: &[S], references: &[T]) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if n > 0 && matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}
