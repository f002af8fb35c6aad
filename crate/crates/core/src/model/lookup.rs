//! Explicit conditional-probability table, used to check the decoders
//! against exhaustive enumeration.
//!
//! Text format, one record per line:
//!
//! ```text
//! LKP1 <src_vocab> <tgt_vocab>
//! default\t<tok>:<prob> <tok>:<prob> ...
//! <src ids>\t<prefix ids>\t<tok>:<prob> ...
//! ```
//!
//! Id lists are space-separated; prefixes begin with BOS. Tokens omitted from
//! a distribution have probability zero.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DecoderState, EncodedSource, Seq2SeqScorer};
use crate::error::{Error, Result};
use crate::unigram::BOS_ID;

pub const LOOKUP_MAGIC: &str = "LKP1";
const SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct LookupModel {
    src_vocab: usize,
    tgt_vocab: usize,
    default: Vec<f64>,
    table: HashMap<(Vec<u32>, Vec<u32>), Vec<f64>>,
}

impl LookupModel {
    /// A table whose unlisted contexts fall back to `default` (probabilities
    /// over the target vocabulary).
    pub fn new(src_vocab: usize, tgt_vocab: usize, default: Vec<f64>) -> Result<Self> {
        check_distribution(&default, tgt_vocab)?;
        Ok(LookupModel {
            src_vocab,
            tgt_vocab,
            default,
            table: HashMap::new(),
        })
    }

    pub fn uniform(src_vocab: usize, tgt_vocab: usize) -> Result<Self> {
        Self::new(src_vocab, tgt_vocab, vec![1.0 / tgt_vocab as f64; tgt_vocab])
    }

    /// Sets the next-token distribution for `(src, prefix)`.
    pub fn insert(&mut self, src: Vec<u32>, prefix: Vec<u32>, probs: Vec<f64>) -> Result<()> {
        check_distribution(&probs, self.tgt_vocab)?;
        if prefix.first() != Some(&BOS_ID) {
            return Err(Error::MalformedPrefix("prefix must begin with BOS".into()));
        }
        check_ids(&src, self.src_vocab)?;
        check_ids(&prefix, self.tgt_vocab)?;
        self.table.insert((src, prefix), probs);
        Ok(())
    }

    /// Like [`insert`](Self::insert) with the distribution given as
    /// `(token, probability)` pairs.
    pub fn insert_sparse(&mut self, src: Vec<u32>, prefix: Vec<u32>, entries: &[(u32, f64)]) -> Result<()> {
        let probs = self.densify(entries)?;
        self.insert(src, prefix, probs)
    }

    fn densify(&self, entries: &[(u32, f64)]) -> Result<Vec<f64>> {
        let mut probs = vec![0.0; self.tgt_vocab];
        for &(tok, p) in entries {
            *probs.get_mut(tok as usize).ok_or(Error::UnknownId {
                id: tok,
                size: self.tgt_vocab,
            })? += p;
        }
        Ok(probs)
    }

    /// Probabilities for `(src, prefix)`, falling back to the default.
    pub fn distribution(&self, src: &[u32], prefix: &[u32]) -> &[f64] {
        self.table
            .get(&(src.to_vec(), prefix.to_vec()))
            .unwrap_or(&self.default)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{LOOKUP_MAGIC} {} {}", self.src_vocab, self.tgt_vocab)?;
        writeln!(w, "default\t{}", format_dist(&self.default))?;
        let mut keys: Vec<_> = self.table.keys().collect();
        keys.sort();
        for key in keys {
            writeln!(w, "{}\t{}\t{}", join_ids(&key.0), join_ids(&key.1), format_dist(&self.table[key]))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let err = |line: usize, msg: &str| Error::ModelFormat {
            line,
            msg: msg.to_string(),
        };
        let header = lines.next().transpose()?.ok_or_else(|| err(1, "empty file"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(LOOKUP_MAGIC) {
            return Err(err(1, "missing LKP1 header"));
        }
        let mut size = || -> Result<usize> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| err(1, "expected source and target vocabulary sizes"))
        };
        let (src_vocab, tgt_vocab) = (size()?, size()?);

        let mut model: Option<LookupModel> = None;
        let mut pending = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let to_err = |e: Error| err(line_no, &e.to_string());
            match parts.as_slice() {
                ["default", dist] => {
                    let entries = parse_dist(dist).map_err(to_err)?;
                    let mut m = LookupModel::uniform(src_vocab, tgt_vocab).map_err(to_err)?;
                    m.default = m.densify(&entries).map_err(to_err)?;
                    check_distribution(&m.default, tgt_vocab).map_err(to_err)?;
                    model = Some(m);
                }
                [src, prefix, dist] => {
                    let src = parse_ids(src).map_err(to_err)?;
                    let prefix = parse_ids(prefix).map_err(to_err)?;
                    pending.push((line_no, src, prefix, parse_dist(dist).map_err(to_err)?));
                }
                _ => return Err(err(line_no, "expected 'default<TAB>dist' or 'src<TAB>prefix<TAB>dist'")),
            }
        }
        let mut model = match model {
            Some(m) => m,
            None => LookupModel::uniform(src_vocab, tgt_vocab)?,
        };
        for (line_no, src, prefix, entries) in pending {
            model
                .insert_sparse(src, prefix, &entries)
                .map_err(|e| err(line_no, &e.to_string()))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

fn check_distribution(probs: &[f64], size: usize) -> Result<()> {
    if probs.len() != size {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: size,
        });
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidArgument(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

fn check_ids(ids: &[u32], size: usize) -> Result<()> {
    match ids.iter().find(|&&t| t as usize >= size) {
        Some(&id) => Err(Error::UnknownId { id, size }),
        None => Ok(()),
    }
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_ids(field: &str) -> Result<Vec<u32>> {
    field
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::InvalidArgument(format!("bad token id {t:?}"))))
        .collect()
}

fn format_dist(probs: &[f64]) -> String {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(t, p)| format!("{t}:{p}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_dist(field: &str) -> Result<Vec<(u32, f64)>> {
    field
        .split_whitespace()
        .map(|entry| {
            let bad = || Error::InvalidArgument(format!("bad distribution entry {entry:?}"));
            let (tok, p) = entry.split_once(':').ok_or_else(bad)?;
            Ok((tok.parse().map_err(|_| bad())?, p.parse().map_err(|_| bad())?))
        })
        .collect()
}

impl Seq2SeqScorer for LookupModel {
    fn src_vocab_size(&self) -> usize {
        self.src_vocab
    }

    fn tgt_vocab_size(&self) -> usize {
        self.tgt_vocab
    }

    fn encode_tokens(&self, tokens: &[u32]) -> Result<EncodedSource> {
        check_ids(tokens, self.src_vocab)?;
        Ok(EncodedSource {
            tokens: tokens.to_vec(),
            states: Vec::new(),
            width: 0,
            initial: Vec::new(),
        })
    }

    fn start(&self, _enc: &EncodedSource) -> DecoderState {
        DecoderState {
            prefix: vec![BOS_ID],
            hidden: Vec::new(),
        }
    }

    fn advance(&self, _enc: &EncodedSource, state: &DecoderState, token: u32) -> Result<DecoderState> {
        check_ids(&[token], self.tgt_vocab)?;
        let mut prefix = state.prefix.clone();
        prefix.push(token);
        Ok(DecoderState {
            prefix,
            hidden: Vec::new(),
        })
    }

    fn next_log_probs(&self, enc: &EncodedSource, state: &DecoderState) -> Result<Vec<f64>> {
        Ok(self
            .distribution(&enc.tokens, &state.prefix)
            .iter()
            .map(|p| p.ln())
            .collect())
    }
}
