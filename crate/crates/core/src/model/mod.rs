//! Sequence-to-sequence scorers: anything that yields next-token
//! log-probabilities `log P(y_t | x, y_<t)`.

mod checkpoint;
pub(crate) mod linalg;
mod lookup;
mod neural;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use lookup::{LookupModel, LOOKUP_MAGIC};
pub use neural::{ModelConfig, NeuralModel, TensorInfo, DEFAULT_EMB_DIM, DEFAULT_HIDDEN_DIM};

use crate::error::{Error, Result};
use crate::unigram::{Segmentation, BOS_ID, EOS_ID};

/// A source sentence after encoding. For the lookup scorer this is just the
/// token sequence; the neural scorer also caches its per-token states.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSource {
    pub tokens: Vec<u32>,
    /// Per-token context vectors, `tokens.len() × width`, row-major.
    pub states: Vec<f64>,
    pub width: usize,
    /// Decoder state before any target token is read.
    pub initial: Vec<f64>,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Decoder bookkeeping for one prefix. `hidden` is empty for scorers that
/// condition on the prefix directly.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub prefix: Vec<u32>,
    pub hidden: Vec<f64>,
}

pub trait Seq2SeqScorer: Send + Sync {
    fn src_vocab_size(&self) -> usize;

    fn tgt_vocab_size(&self) -> usize;

    fn encode_tokens(&self, tokens: &[u32]) -> Result<EncodedSource>;

    /// State after reading BOS.
    fn start(&self, enc: &EncodedSource) -> DecoderState;

    /// State after additionally reading `token`.
    fn advance(&self, enc: &EncodedSource, state: &DecoderState, token: u32) -> Result<DecoderState>;

    /// Next-token log-probabilities over the whole target vocabulary.
    fn next_log_probs(&self, enc: &EncodedSource, state: &DecoderState) -> Result<Vec<f64>>;

    fn encode(&self, src: &Segmentation) -> Result<EncodedSource> {
        self.encode_tokens(&src.token_ids)
    }

    /// Log-probabilities of the token following `prefix`, which must start
    /// with BOS.
    fn step(&self, enc: &EncodedSource, prefix: &[u32]) -> Result<Vec<f64>> {
        match prefix.first() {
            Some(&BOS_ID) => {}
            _ => return Err(Error::MalformedPrefix("prefix must begin with BOS".into())),
        }
        let mut state = self.start(enc);
        for &tok in &prefix[1..] {
            state = self.advance(enc, &state, tok)?;
        }
        self.next_log_probs(enc, &state)
    }

    /// log P(tgt | src) with the target framed as BOS … EOS.
    fn sequence_log_prob(&self, src: &Segmentation, tgt: &Segmentation) -> Result<f64> {
        let enc = self.encode(src)?;
        self.target_log_prob(&enc, &tgt.token_ids, true)
    }

    /// Σ_t log P(tokens_t | prefix) for an already-encoded source, optionally
    /// followed by EOS.
    fn target_log_prob(&self, enc: &EncodedSource, tokens: &[u32], with_eos: bool) -> Result<f64> {
        let mut state = self.start(enc);
        let mut total = 0.0;
        let eos = with_eos.then_some(EOS_ID);
        for (i, &tok) in tokens.iter().chain(eos.iter()).enumerate() {
            let lp = self.next_log_probs(enc, &state)?;
            total += *lp.get(tok as usize).ok_or(Error::UnknownId {
                id: tok,
                size: lp.len(),
            })?;
            if i + 1 < tokens.len() + eos.iter().len() {
                state = self.advance(enc, &state, tok)?;
            }
        }
        Ok(total)
    }
}

impl<T: Seq2SeqScorer + ?Sized> Seq2SeqScorer for &T {
    fn src_vocab_size(&self) -> usize {
        (**self).src_vocab_size()
    }
    fn tgt_vocab_size(&self) -> usize {
        (**self).tgt_vocab_size()
    }
    fn encode_tokens(&self, tokens: &[u32]) -> Result<EncodedSource> {
        (**self).encode_tokens(tokens)
    }
    fn start(&self, enc: &EncodedSource) -> DecoderState {
        (**self).start(enc)
    }
    fn advance(&self, enc: &EncodedSource, state: &DecoderState, token: u32) -> Result<DecoderState> {
        (**self).advance(enc, state, token)
    }
    fn next_log_probs(&self, enc: &EncodedSource, state: &DecoderState) -> Result<Vec<f64>> {
        (**self).next_log_probs(enc, state)
    }
}

impl<T: Seq2SeqScorer + ?Sized> Seq2SeqScorer for Box<T> {
    fn src_vocab_size(&self) -> usize {
        (**self).src_vocab_size()
    }
    fn tgt_vocab_size(&self) -> usize {
        (**self).tgt_vocab_size()
    }
    fn encode_tokens(&self, tokens: &[u32]) -> Result<EncodedSource> {
        (**self).encode_tokens(tokens)
    }
    fn start(&self, enc: &EncodedSource) -> DecoderState {
        (**self).start(enc)
    }
    fn advance(&self, enc: &EncodedSource, state: &DecoderState, token: u32) -> Result<DecoderState> {
        (**self).advance(enc, state, token)
    }
    fn next_log_probs(&self, enc: &EncodedSource, state: &DecoderState) -> Result<Vec<f64>> {
        (**self).next_log_probs(enc, state)
    }
}
