//! Unigram-language-model subword machinery: vocabulary estimation, lattice
//! construction, and most-plausible / n-best / sampled segmentation.

mod estimate;
mod lattice;
mod vocab;

pub use estimate::{corpus_log_likelihood, estimate_vocabulary, Estimation, Estimator};
pub use lattice::{build_lattice, ranking_score, Edge, Lattice, RANKING_SCALE};
pub use vocab::{
    Piece, Vocabulary, BOS_ID, EOS_ID, NUM_RESERVED, PAD_ID, RESERVED_SURFACES, UNK_ID, UNK_LOG_PROB,
};

use crate::error::{Error, Result};

/// Default sampling temperature for subword regularization.
pub const DEFAULT_ALPHA: f64 = 0.2;
/// Temperature used by the large-data recipe.
pub const LARGE_DATA_ALPHA: f64 = 0.5;

/// One token-id sequence realizing a raw string.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub token_ids: Vec<u32>,
    pub raw: String,
    /// Sum of the piece log-probabilities.
    pub log_weight: f64,
}

impl Segmentation {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Piece surfaces, with spaces shown as `▁` so they survive space-joining.
    pub fn display_pieces(&self, vocab: &Vocabulary) -> Vec<String> {
        self.token_ids
            .iter()
            .map(|&id| vocab.surface(id).unwrap_or("<?>").replace(' ', "\u{2581}"))
            .collect()
    }
}

/// Concatenates piece surfaces, skipping reserved ids.
pub fn decode_pieces(token_ids: &[u32], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &id in token_ids {
        let surface = vocab.surface(id).ok_or(Error::UnknownId { id, size: vocab.len() })?;
        if !Vocabulary::is_reserved(id) {
            out.push_str(surface);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vocabulary {
        Vocabulary::from_pieces([("a", 0.4f64.ln()), ("b", 0.3f64.ln()), ("ab", 0.3f64.ln())]).unwrap()
    }

    #[test]
    fn decode_round_trips_and_strips_reserved() {
        let v = toy();
        let seg = Lattice::build("abaab", &v).viterbi();
        assert_eq!(decode_pieces(&seg.token_ids, &v).unwrap(), "abaab");
        assert_eq!(decode_pieces(&[], &v).unwrap(), "");
        let mut framed = vec![BOS_ID];
        framed.extend(&seg.token_ids);
        framed.push(EOS_ID);
        assert_eq!(decode_pieces(&framed, &v).unwrap(), "abaab");
        assert!(matches!(decode_pieces(&[99], &v), Err(Error::UnknownId { id: 99, .. })));
    }

    #[test]
    fn display_marks_spaces() {
        let v = Vocabulary::from_pieces([("a", 0.5f64.ln()), (" a", 0.5f64.ln())]).unwrap();
        let seg = Lattice::build("a a", &v).viterbi();
        assert_eq!(seg.display_pieces(&v), vec!["a", "\u{2581}a"]);
    }
}
