use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const NUM_RESERVED: usize = 4;

/// Surfaces of the reserved ids, in id order.
pub const RESERVED_SURFACES: [&str; NUM_RESERVED] = ["<pad>", "<s>", "</s>", "<unk>"];

/// ln(1e-6): fixed score of the unknown-character piece. It is not part of
/// the normalized distribution.
pub const UNK_LOG_PROB: f64 = -13.815_510_557_964_274;

/// Tolerance on the normalization of non-reserved piece probabilities.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub surface: String,
    pub log_prob: f64,
}

/// Unigram subword vocabulary. Ids are dense, `0..len()`, and the first
/// [`NUM_RESERVED`] ids are the special tokens.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    pieces: Vec<Piece>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces
    }
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved `(surface, log_prob)` pairs. The
    /// reserved pieces are prepended. Probabilities must already sum to one.
    pub fn from_pieces<S: Into<String>>(pieces: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let mut all: Vec<Piece> = RESERVED_SURFACES
            .iter()
            .enumerate()
            .map(|(id, s)| Piece {
                surface: s.to_string(),
                log_prob: if id as u32 == UNK_ID { UNK_LOG_PROB } else { 0.0 },
            })
            .collect();
        all.extend(pieces.into_iter().map(|(s, log_prob)| Piece {
            surface: s.into(),
            log_prob,
        }));
        Self::from_all_pieces(all)
    }

    /// Like [`Vocabulary::from_pieces`] but takes arbitrary positive weights
    /// and normalizes them.
    pub fn from_weights<S: Into<String>>(weights: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let weights: Vec<(String, f64)> = weights.into_iter().map(|(s, w)| (s.into(), w)).collect();
        if let Some((s, w)) = weights.iter().find(|(_, w)| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "weight of piece {s:?} must be positive and finite, got {w}"
            )));
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        Self::from_pieces(weights.into_iter().map(|(s, w)| (s, (w / total).ln())))
    }

    fn from_all_pieces(pieces: Vec<Piece>) -> Result<Self> {
        let invalid = |msg: String| Error::VocabFormat { line: 0, msg };
        if pieces.len() < NUM_RESERVED {
            return Err(invalid("missing reserved pieces".into()));
        }
        for (id, want) in RESERVED_SURFACES.iter().enumerate() {
            if pieces[id].surface != *want {
                return Err(invalid(format!(
                    "id {id} must be {want:?}, found {:?}",
                    pieces[id].surface
                )));
            }
        }
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 1;
        let mut mass = 0.0;
        for (id, p) in pieces.iter().enumerate() {
            if p.surface.is_empty() {
                return Err(invalid(format!("empty piece at id {id}")));
            }
            if p.surface.contains(['\t', '\n', '\r']) {
                return Err(invalid(format!("piece {:?} contains a tab or newline", p.surface)));
            }
            if p.log_prob.is_nan() || p.log_prob > 0.0 {
                return Err(invalid(format!("piece {:?} has log_prob {}", p.surface, p.log_prob)));
            }
            if index.insert(p.surface.clone(), id as u32).is_some() {
                return Err(invalid(format!("duplicate piece {:?}", p.surface)));
            }
            if id >= NUM_RESERVED {
                max_piece_chars = max_piece_chars.max(p.surface.chars().count());
                mass += p.log_prob.exp();
            }
        }
        if pieces.len() > NUM_RESERVED && (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(invalid(format!("piece probabilities sum to {mass}, expected 1")));
        }
        Ok(Vocabulary {
            pieces,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn piece(&self, id: u32) -> Option<&Piece> {
        self.pieces.get(id as usize)
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.piece(id).map(|p| p.surface.as_str())
    }

    pub fn log_prob(&self, id: u32) -> Option<f64> {
        self.piece(id).map(|p| p.log_prob)
    }

    pub fn id_of(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn is_reserved(id: u32) -> bool {
        (id as usize) < NUM_RESERVED
    }

    /// Length in characters of the longest piece.
    pub fn max_piece_chars(&self) -> usize {
        self.max_piece_chars
    }

    /// Writes the `piece<TAB>log_prob` text format.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for p in &self.pieces {
            writeln!(out, "{}\t{:.16e}", p.surface, p.log_prob)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut pieces = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let err = |msg: &str| Error::VocabFormat {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let (surface, value) = line.rsplit_once('\t').ok_or_else(|| err("expected piece<TAB>log_prob"))?;
            let log_prob: f64 = value.trim().parse().map_err(|_| err("unparsable log_prob"))?;
            pieces.push(Piece {
                surface: surface.to_string(),
                log_prob,
            });
        }
        Self::from_all_pieces(pieces)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy() -> Vocabulary {
        Vocabulary::from_pieces([("a", 0.4f64.ln()), ("b", 0.3f64.ln()), ("ab", 0.3f64.ln())]).unwrap()
    }

    #[test]
    fn reserved_ids_come_first() {
        let v = toy();
        assert_eq!(v.len(), 7);
        assert_eq!(v.surface(PAD_ID), Some("<pad>"));
        assert_eq!(v.surface(UNK_ID), Some("<unk>"));
        assert_eq!(v.id_of("a"), Some(4));
        assert_eq!(v.id_of("ab"), Some(6));
        assert_eq!(v.max_piece_chars(), 2);
        assert_eq!(v.log_prob(UNK_ID), Some(1e-6f64.ln()));
    }

    #[test]
    fn rejects_duplicates_and_unnormalized() {
        assert!(Vocabulary::from_pieces([("a", 0.5f64.ln()), ("a", 0.5f64.ln())]).is_err());
        assert!(Vocabulary::from_pieces([("a", 0.5f64.ln()), ("b", 0.4f64.ln())]).is_err());
        assert!(Vocabulary::from_pieces([("", 0.0)]).is_err());
        assert!(Vocabulary::from_weights([("a", 2.0), ("b", 2.0)]).is_ok());
    }

    #[test]
    fn file_round_trip_is_byte_exact() {
        let v = Vocabulary::from_weights([("a", 3.0), ("b", 1.7), ("ab", 0.123456789), (" c", 1e-9)]).unwrap();
        let mut first = Vec::new();
        v.write_to(&mut first).unwrap();
        let back = Vocabulary::read_from(first.as_slice()).unwrap();
        assert_eq!(back, v);
        let mut second = Vec::new();
        back.write_to(&mut second).unwrap();
        assert_eq!(first, second);
        let text = String::from_utf8(first).unwrap();
        assert!(text.starts_with("<pad>\t"));
        assert!(text.contains("\n c\t"));
    }

    #[test]
    fn read_rejects_missing_reserved() {
        let text = "a\t0.0\n";
        assert!(Vocabulary::read_from(text.as_bytes()).is_err());
    }
}
