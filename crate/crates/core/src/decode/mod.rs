//! Inference strategies built on multi-context beam search: one-best
//! decoding, n-best decoding, the multi-segmentation ensemble of a single
//! model, the classic model ensemble, and their combination.

mod beam;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

pub use beam::{beam_search_multi, BeamConfig, Context, SearchOutcome};

use crate::error::{Error, Result};
use crate::model::Seq2SeqScorer;
use crate::rng::derived_rng;
use crate::unigram::{decode_pieces, Lattice, Segmentation, Vocabulary, DEFAULT_ALPHA};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    /// First model, most plausible segmentation.
    SingleBest,
    /// Decode each of the n best segmentations on its own and keep the
    /// candidate with the best length-normalized score.
    NBestDecoding,
    /// First model over the most plausible plus n−1 sampled segmentations.
    Proposed,
    /// Every model over the most plausible segmentation.
    ModelEnsemble,
    /// Every model over every prepared segmentation.
    ProposedPlusEnsemble,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::SingleBest,
        StrategyKind::NBestDecoding,
        StrategyKind::Proposed,
        StrategyKind::ModelEnsemble,
        StrategyKind::ProposedPlusEnsemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SingleBest => "single",
            StrategyKind::NBestDecoding => "nbest",
            StrategyKind::Proposed => "proposed",
            StrategyKind::ModelEnsemble => "ensemble",
            StrategyKind::ProposedPlusEnsemble => "combined",
        }
    }

    /// Whether the result depends on sampled segmentations.
    pub fn is_sampled(self) -> bool {
        matches!(self, StrategyKind::Proposed | StrategyKind::ProposedPlusEnsemble)
    }

    /// Whether every supplied model takes part.
    pub fn uses_all_models(self) -> bool {
        matches!(
            self,
            StrategyKind::ModelEnsemble | StrategyKind::ProposedPlusEnsemble | StrategyKind::NBestDecoding
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "single" | "single_best" => StrategyKind::SingleBest,
            "nbest" | "nbest_decoding" => StrategyKind::NBestDecoding,
            "proposed" => StrategyKind::Proposed,
            "ensemble" | "model_ensemble" => StrategyKind::ModelEnsemble,
            "combined" | "proposed_plus_ensemble" => StrategyKind::ProposedPlusEnsemble,
            other => return Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeStrategy {
    pub kind: StrategyKind,
    /// Number of source segmentations.
    pub n: usize,
    /// Sampling temperature for the extra segmentations.
    pub alpha: f64,
    pub beam_width: usize,
    /// Maximum generated tokens, EOS included.
    pub max_len: usize,
    pub length_norm_power: f64,
    pub seed: u64,
}

impl DecodeStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        DecodeStrategy {
            kind,
            n: 5,
            alpha: DEFAULT_ALPHA,
            beam_width: 4,
            max_len: 100,
            length_norm_power: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.beam_width == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument("n, beam width and max length must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be a finite value >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn beam(&self) -> BeamConfig {
        BeamConfig {
            beam_width: self.beam_width,
            max_len: self.max_len,
            length_norm_power: self.length_norm_power,
        }
    }
}

/// One decoded sentence. Equality ignores `elapsed`.
#[derive(Clone, Debug)]
pub struct DecodeResult {
    /// Detokenized output.
    pub output: String,
    /// Generated target tokens without EOS.
    pub token_ids: Vec<u32>,
    /// Objective value before length normalization.
    pub score: f64,
    pub normalized_score: f64,
    /// Source segmentations the output was conditioned on.
    pub inputs: Vec<Segmentation>,
    pub elapsed: Duration,
}

impl PartialEq for DecodeResult {
    fn eq(&self, other: &Self) -> bool {
        self.output == other.output
            && self.token_ids == other.token_ids
            && self.score.to_bits() == other.score.to_bits()
            && self.normalized_score.to_bits() == other.normalized_score.to_bits()
            && self.inputs == other.inputs
    }
}

/// The most plausible segmentation followed by `n − 1` independent samples
/// (duplicates kept).
pub fn prepare_inputs<R: Rng + ?Sized>(
    raw: &str,
    vocab: &Vocabulary,
    strategy: &DecodeStrategy,
    rng: &mut R,
) -> Result<Vec<Segmentation>> {
    strategy.validate()?;
    let lattice = Lattice::build(raw, vocab);
    let mut out = Vec::with_capacity(strategy.n);
    out.push(lattice.viterbi());
    for _ in 1..strategy.n {
        out.push(lattice.sample(strategy.alpha, rng)?);
    }
    Ok(out)
}

fn check_models<S: Seq2SeqScorer>(models: &[S], src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Result<()> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("at least one model is required".into()));
    }
    for m in models {
        if m.src_vocab_size() != src_vocab.len() || m.tgt_vocab_size() != tgt_vocab.len() {
            return Err(Error::InvalidArgument(format!(
                "model vocabularies ({}, {}) do not match the supplied vocabularies ({}, {})",
                m.src_vocab_size(),
                m.tgt_vocab_size(),
                src_vocab.len(),
                tgt_vocab.len()
            )));
        }
    }
    Ok(())
}

/// Searches over every (model, segmentation) pair at once.
fn search_product<S: Seq2SeqScorer>(
    models: &[S],
    inputs: &[Segmentation],
    beam: &BeamConfig,
) -> Result<SearchOutcome> {
    let mut contexts = Vec::with_capacity(models.len() * inputs.len());
    for m in models {
        for seg in inputs {
            contexts.push(Context::new(m, m.encode(seg)?));
        }
    }
    beam_search_multi(&contexts, beam)
}

/// Translates one raw source sentence with the given strategy.
pub fn translate<S: Seq2SeqScorer, R: Rng + ?Sized>(
    raw_src: &str,
    models: &[S],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    strategy: &DecodeStrategy,
    rng: &mut R,
) -> Result<DecodeResult> {
    let started = Instant::now();
    strategy.validate()?;
    check_models(models, src_vocab, tgt_vocab)?;
    let beam = strategy.beam();
    let first = &models[..1];

    let (outcome, inputs) = match strategy.kind {
        StrategyKind::SingleBest => {
            let inputs = vec![Lattice::build(raw_src, src_vocab).viterbi()];
            (search_product(first, &inputs, &beam)?, inputs)
        }
        StrategyKind::ModelEnsemble => {
            let inputs = vec![Lattice::build(raw_src, src_vocab).viterbi()];
            (search_product(models, &inputs, &beam)?, inputs)
        }
        StrategyKind::Proposed => {
            let inputs = prepare_inputs(raw_src, src_vocab, strategy, rng)?;
            (search_product(first, &inputs, &beam)?, inputs)
        }
        StrategyKind::ProposedPlusEnsemble => {
            let inputs = prepare_inputs(raw_src, src_vocab, strategy, rng)?;
            (search_product(models, &inputs, &beam)?, inputs)
        }
        StrategyKind::NBestDecoding => {
            let mut best: Option<(SearchOutcome, Segmentation)> = None;
            for seg in Lattice::build(raw_src, src_vocab).nbest(strategy.n) {
                let outcome = search_product(models, std::slice::from_ref(&seg), &beam)?;
                let better = match &best {
                    None => true,
                    Some((cur, _)) => {
                        outcome.normalized_score > cur.normalized_score
                            || (outcome.normalized_score == cur.normalized_score && outcome.token_ids < cur.token_ids)
                    }
                };
                if better {
                    best = Some((outcome, seg));
                }
            }
            let (outcome, seg) = best.expect("every string has at least one segmentation");
            (outcome, vec![seg])
        }
    };

    Ok(DecodeResult {
        output: decode_pieces(&outcome.token_ids, tgt_vocab)?,
        token_ids: outcome.token_ids,
        score: outcome.score,
        normalized_score: outcome.normalized_score,
        inputs,
        elapsed: started.elapsed(),
    })
}

/// Translates every sentence; sentence `i` draws from a generator seeded by
/// `(strategy.seed, i)`, so results do not depend on the number of workers.
pub fn batch_translate<S: Seq2SeqScorer, T: AsRef<str> + Sync>(
    raw_src: &[T],
    models: &[S],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    strategy: &DecodeStrategy,
) -> Result<Vec<DecodeResult>> {
    batch_translate_from(0, raw_src, models, src_vocab, tgt_vocab, strategy)
}

/// Like [`batch_translate`] for a chunk whose first sentence has global
/// index `offset`.
pub fn batch_translate_from<S: Seq2SeqScorer, T: AsRef<str> + Sync>(
    offset: usize,
    raw_src: &[T],
    models: &[S],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    strategy: &DecodeStrategy,
) -> Result<Vec<DecodeResult>> {
    raw_src
        .par_iter()
        .enumerate()
        .map(|(i, raw)| {
            let index = offset + i;
            let mut rng = derived_rng(strategy.seed, &[index as u64]);
            translate(raw.as_ref(), models, src_vocab, tgt_vocab, strategy, &mut rng).map_err(|e| {
                Error::Sentence {
                    index,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LookupModel;
    use crate::rng::rng_from;
    use crate::unigram::{BOS_ID, EOS_ID};

    fn toy() -> Vocabulary {
        Vocabulary::from_pieces([("a", 0.4f64.ln()), ("b", 0.3f64.ln()), ("ab", 0.3f64.ln())]).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for kind in StrategyKind::ALL {
            assert_eq!(kind.name().parse::<StrategyKind>().unwrap(), kind);
        }
        assert!("beam".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn prepare_inputs_starts_with_viterbi() {
        let v = toy();
        let mut s = DecodeStrategy::new(StrategyKind::Proposed);
        s.n = 1;
        let inputs = prepare_inputs("ab", &v, &s, &mut rng_from(0)).unwrap();
        assert_eq!(inputs.len(), 1);
        assert_eq!(inputs[0].token_ids, vec![6]);
        s.n = 3;
        s.alpha = 1.0;
        let inputs = prepare_inputs("ab", &v, &s, &mut rng_from(0)).unwrap();
        assert_eq!(inputs.len(), 3);
        assert_eq!(inputs[0].token_ids, vec![6]);
    }

    #[test]
    fn greedy_lookup_decode() {
        let v = toy();
        let mut m = LookupModel::uniform(v.len(), v.len()).unwrap();
        m.insert_sparse(vec![6], vec![BOS_ID], &[(4, 0.6), (EOS_ID, 0.4)]).unwrap();
        m.insert_sparse(vec![6], vec![BOS_ID, 4], &[(EOS_ID, 0.9), (5, 0.1)]).unwrap();
        let s = DecodeStrategy::new(StrategyKind::SingleBest);
        let r = translate("ab", &[m], &v, &v, &s, &mut rng_from(0)).unwrap();
        assert_eq!(r.token_ids, vec![4]);
        assert_eq!(r.output, "a");
        assert!((r.score - (0.6f64.ln() + 0.9f64.ln())).abs() < 1e-12);
        assert!((r.normalized_score - r.score / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        let v = toy();
        let s = DecodeStrategy::new(StrategyKind::SingleBest);
        let none: [LookupModel; 0] = [];
        assert!(translate("ab", &none, &v, &v, &s, &mut rng_from(0)).is_err());
        let wrong = LookupModel::uniform(3, 9).unwrap();
        assert!(translate("ab", &[wrong], &v, &v, &s, &mut rng_from(0)).is_err());
        let mut bad = s;
        bad.beam_width = 0;
        let m = LookupModel::uniform(v.len(), v.len()).unwrap();
        assert!(translate("ab", &[m], &v, &v, &bad, &mut rng_from(0)).is_err());
    }
}
