//! Beam search over the summed log-probabilities of several scoring
//! contexts (one model reading one source segmentation each).

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{DecoderState, EncodedSource, Seq2SeqScorer};
use crate::unigram::{BOS_ID, EOS_ID, PAD_ID};

/// One scorer paired with one encoded source.
pub struct Context<'a, S: ?Sized> {
    pub scorer: &'a S,
    pub source: EncodedSource,
}

impl<'a, S: Seq2SeqScorer + ?Sized> Context<'a, S> {
    pub fn new(scorer: &'a S, source: EncodedSource) -> Self {
        Context { scorer, source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Upper bound on generated tokens, EOS included.
    pub max_len: usize,
    pub length_norm_power: f64,
}

/// Best hypothesis of a search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    /// Generated tokens without the closing EOS.
    pub token_ids: Vec<u32>,
    /// Σ over contexts of Σ_t log P(y_t | y_<t, x), EOS included.
    pub score: f64,
    /// `score / length^power`, with EOS counted in the length.
    pub normalized_score: f64,
    /// False when the hypothesis hit `max_len` without producing EOS.
    pub finished: bool,
}

struct Live {
    tokens: Vec<u32>,
    score: f64,
    states: Vec<DecoderState>,
}

struct Done {
    tokens: Vec<u32>,
    score: f64,
    normalized: f64,
    finished: bool,
}

fn normalize(score: f64, len: usize, power: f64) -> f64 {
    if power == 0.0 {
        score
    } else {
        score / (len.max(1) as f64).powf(power)
    }
}

/// Better-first order: normalized score, then the token sequence ascending.
fn done_order(a: &Done, b: &Done) -> Ordering {
    b.normalized
        .partial_cmp(&a.normalized)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search maximizing the sum over `contexts` of each context's
/// next-token log-probability.
pub fn beam_search_multi<S: Seq2SeqScorer + ?Sized>(
    contexts: &[Context<'_, S>],
    config: &BeamConfig,
) -> Result<SearchOutcome> {
    let first = contexts
        .first()
        .ok_or_else(|| Error::InvalidArgument("beam search needs at least one context".into()))?;
    let vocab = first.scorer.tgt_vocab_size();
    if let Some(c) = contexts.iter().find(|c| c.scorer.tgt_vocab_size() != vocab) {
        return Err(Error::InvalidArgument(format!(
            "contexts disagree on the target vocabulary ({} vs {vocab})",
            c.scorer.tgt_vocab_size()
        )));
    }
    if config.beam_width == 0 || config.max_len == 0 {
        return Err(Error::InvalidArgument("beam width and max length must be positive".into()));
    }
    let power = config.length_norm_power;
    let max_len_norm = (config.max_len as f64).powf(power);

    let mut live = vec![Live {
        tokens: Vec::new(),
        score: 0.0,
        states: contexts.iter().map(|c| c.scorer.start(&c.source)).collect(),
    }];
    let mut done: Vec<Done> = Vec::new();

    for step in 0..config.max_len {
        if live.is_empty() {
            break;
        }
        let last_step = step + 1 == config.max_len;

        // (hypothesis, token, cumulative score)
        let mut cands: Vec<(usize, u32, f64)> = Vec::new();
        for (hi, hyp) in live.iter().enumerate() {
            let mut total = vec![0.0; vocab];
            for (ctx, state) in contexts.iter().zip(&hyp.states) {
                let lp = ctx.scorer.next_log_probs(&ctx.source, state)?;
                for (t, x) in total.iter_mut().zip(&lp) {
                    *t += x;
                }
            }
            for (tok, lp) in total.into_iter().enumerate() {
                let tok = tok as u32;
                if tok == PAD_ID || tok == BOS_ID || !lp.is_finite() {
                    continue;
                }
                cands.push((hi, tok, hyp.score + lp));
            }
        }
        cands.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then_with(|| live[a.0].tokens.cmp(&live[b.0].tokens))
                .then(a.1.cmp(&b.1))
        });
        cands.truncate(config.beam_width);

        let mut next = Vec::with_capacity(cands.len());
        for (hi, tok, score) in cands {
            let hyp = &live[hi];
            if tok == EOS_ID || last_step {
                let finished = tok == EOS_ID;
                let mut tokens = hyp.tokens.clone();
                if !finished {
                    tokens.push(tok);
                }
                done.push(Done {
                    normalized: normalize(score, step + 1, power),
                    tokens,
                    score,
                    finished,
                });
                continue;
            }
            let mut states = Vec::with_capacity(contexts.len());
            for (ctx, state) in contexts.iter().zip(&hyp.states) {
                states.push(ctx.scorer.advance(&ctx.source, state, tok)?);
            }
            let mut tokens = hyp.tokens.clone();
            tokens.push(tok);
            next.push(Live { tokens, score, states });
        }
        live = next;

        // Log-probs are ≤ 0, so a live hypothesis can at best keep its score
        // and stretch to max_len, which is its best normalized outcome.
        if let Some(best) = done.iter().min_by(|a, b| done_order(a, b)) {
            let bound = live
                .iter()
                .map(|h| if h.score <= 0.0 { h.score / max_len_norm } else { h.score })
                .fold(f64::NEG_INFINITY, f64::max);
            if best.normalized > bound {
                break;
            }
        }
    }

    let best = done
        .into_iter()
        .min_by(done_order)
        .ok_or_else(|| Error::InvalidArgument("every continuation has zero probability".into()))?;
    Ok(SearchOutcome {
        token_ids: best.tokens,
        score: best.score,
        normalized_score: best.normalized,
        finished: best.finished,
    })
}
