//! Single-layer attentional encoder-decoder with hand-written gradients.
//!
//! Encoder: a forward and a backward GRU over source embeddings; each source
//! position is represented by the sum of the two directions' states. The
//! decoder GRU starts from `tanh(W mean(H) + b)`, reads the previous target
//! token, attends over the source with a dot product and predicts through a
//! tanh combination layer and a softmax projection. GRU gate tensors stack
//! the reset, update and candidate blocks, in that order.

use std::ops::Range;

use rand::Rng;

use super::linalg::{axpy, dot, gemv_acc, gemv_t_acc, ger_acc, tanh_backward, tanh_in_place, widen};
use super::{DecoderState, EncodedSource, Seq2SeqScorer};
use crate::error::{Error, Result};
use crate::logspace::log_softmax;
use crate::rng::rng_from;
use crate::unigram::BOS_ID;

pub const DEFAULT_EMB_DIM: usize = 64;
pub const DEFAULT_HIDDEN_DIM: usize = 128;
pub const INIT_RANGE: f32 = 0.08;

const SRC_EMB: usize = 0;
const TGT_EMB: usize = 1;
const ENC_FWD_WX: usize = 2;
const ENC_FWD_WH: usize = 3;
const ENC_FWD_B: usize = 4;
const ENC_BWD_WX: usize = 5;
const ENC_BWD_WH: usize = 6;
const ENC_BWD_B: usize = 7;
const INIT_W: usize = 8;
const INIT_B: usize = 9;
const DEC_WX: usize = 10;
const DEC_WH: usize = 11;
const DEC_B: usize = 12;
const COMB_W: usize = 13;
const COMB_B: usize = 14;
const OUT_W: usize = 15;
const OUT_B: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb_dim: usize,
    pub hidden_dim: usize,
}

impl ModelConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            emb_dim: DEFAULT_EMB_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
        }
    }

    pub fn with_dims(mut self, emb_dim: usize, hidden_dim: usize) -> Self {
        self.emb_dim = emb_dim;
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_vocab == 0 || self.tgt_vocab == 0 || self.emb_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!("model dimensions must be positive: {self:?}")));
        }
        if self.tgt_vocab <= BOS_ID as usize {
            return Err(Error::InvalidArgument("target vocabulary lacks reserved ids".into()));
        }
        Ok(())
    }

    /// Tensor names and shapes in storage order.
    pub fn layout(&self) -> Vec<TensorInfo> {
        let (vs, vt, d, h) = (self.src_vocab, self.tgt_vocab, self.emb_dim, self.hidden_dim);
        let shapes: [(&'static str, Vec<usize>); 17] = [
            ("src_emb", vec![vs, d]),
            ("tgt_emb", vec![vt, d]),
            ("enc_fwd_wx", vec![3 * h, d]),
            ("enc_fwd_wh", vec![3 * h, h]),
            ("enc_fwd_b", vec![3 * h]),
            ("enc_bwd_wx", vec![3 * h, d]),
            ("enc_bwd_wh", vec![3 * h, h]),
            ("enc_bwd_b", vec![3 * h]),
            ("init_w", vec![h, h]),
            ("init_b", vec![h]),
            ("dec_wx", vec![3 * h, d]),
            ("dec_wh", vec![3 * h, h]),
            ("dec_b", vec![3 * h]),
            ("comb_w", vec![h, 2 * h]),
            ("comb_b", vec![h]),
            ("out_w", vec![vt, h]),
            ("out_b", vec![vt]),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let info = TensorInfo { name, shape, offset };
                offset += info.len();
                info
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(TensorInfo::len).sum()
    }

    /// Recovers the configuration from a list of named shapes, as found in a
    /// checkpoint header.
    pub fn from_shapes(shapes: &[(String, Vec<usize>)]) -> Result<Self> {
        let find = |name: &str| {
            shapes
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, s)| s.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let src = find("src_emb")?;
        let out = find("out_w")?;
        if src.len() != 2 || out.len() != 2 {
            return Err(Error::Checkpoint("embedding and projection tensors must be 2-d".into()));
        }
        let config = ModelConfig {
            src_vocab: src[0],
            tgt_vocab: out[0],
            emb_dim: src[1],
            hidden_dim: out[1],
        };
        let expected = config.layout();
        let consistent = expected.len() == shapes.len()
            && expected.iter().zip(shapes).all(|(t, (name, shape))| t.name == name && &t.shape == shape);
        if !consistent {
            return Err(Error::Checkpoint("tensor shapes are inconsistent with each other".into()));
        }
        config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralModel {
    config: ModelConfig,
    layout: Vec<TensorInfo>,
    params: Vec<f32>,
}

/// Weight, recurrent-weight and bias tensors of one GRU.
#[derive(Clone, Copy)]
struct Cell {
    wx: usize,
    wh: usize,
    b: usize,
}

const ENC_FWD: Cell = Cell {
    wx: ENC_FWD_WX,
    wh: ENC_FWD_WH,
    b: ENC_FWD_B,
};
const ENC_BWD: Cell = Cell {
    wx: ENC_BWD_WX,
    wh: ENC_BWD_WH,
    b: ENC_BWD_B,
};
const DEC: Cell = Cell {
    wx: DEC_WX,
    wh: DEC_WH,
    b: DEC_B,
};

/// Activations of one GRU step, kept for the backward pass.
struct GruStep {
    reset: Vec<f64>,
    update: Vec<f64>,
    cand: Vec<f64>,
    /// Recurrent contribution to the candidate, before the reset gate.
    cand_rec: Vec<f64>,
    h: Vec<f64>,
}

/// Everything the backward pass needs from the encoder.
struct EncoderTrace {
    emb: Vec<f64>,
    fwd: Vec<GruStep>,
    bwd: Vec<GruStep>,
    states: Vec<f64>,
    mean: Vec<f64>,
    initial: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl NeuralModel {
    /// Parameters drawn uniformly from (−0.08, 0.08).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = rng_from(seed);
        for p in &mut model.params {
            *p = rng.gen_range(-INIT_RANGE..INIT_RANGE);
        }
        Ok(model)
    }

    /// All-zero parameters: every prediction is uniform.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let n = layout.iter().map(TensorInfo::len).sum();
        Ok(NeuralModel {
            config,
            layout,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f32>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if params.len() != model.params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: model.params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &[TensorInfo] {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn t(&self, k: usize) -> &[f32] {
        &self.params[self.layout[k].range()]
    }

    fn check_src(&self, tokens: &[u32]) -> Result<()> {
        check_ids(tokens, self.config.src_vocab)
    }

    fn check_tgt(&self, tokens: &[u32]) -> Result<()> {
        check_ids(tokens, self.config.tgt_vocab)
    }

    /// `h' = (1 − z) ⊙ n + z ⊙ h` with `n = tanh(W_n x + b_n + r ⊙ U_n h)`.
    fn gru(&self, cell: Cell, x: &[f64], prev: &[f64]) -> GruStep {
        let h = self.config.hidden_dim;
        let mut gx = vec![0.0; 3 * h];
        widen(&mut gx, self.t(cell.b));
        gemv_acc(&mut gx, self.t(cell.wx), x);
        let mut gh = vec![0.0; 3 * h];
        gemv_acc(&mut gh, self.t(cell.wh), prev);
        let mut step = GruStep {
            reset: vec![0.0; h],
            update: vec![0.0; h],
            cand: vec![0.0; h],
            cand_rec: gh[2 * h..].to_vec(),
            h: vec![0.0; h],
        };
        for i in 0..h {
            let r = sigmoid(gx[i] + gh[i]);
            let z = sigmoid(gx[h + i] + gh[h + i]);
            let n = (gx[2 * h + i] + r * gh[2 * h + i]).tanh();
            step.reset[i] = r;
            step.update[i] = z;
            step.cand[i] = n;
            step.h[i] = (1.0 - z) * n + z * prev[i];
        }
        step
    }

    /// Backpropagates `dh` through one GRU step: parameter gradients go to
    /// `g`, input and previous-state gradients are added to `dx` / `dprev`.
    #[allow(clippy::too_many_arguments)]
    fn gru_backward(
        &self,
        g: &mut [&mut [f64]],
        cell: Cell,
        x: &[f64],
        prev: &[f64],
        step: &GruStep,
        dh: &[f64],
        dx: &mut [f64],
        dprev: &mut [f64],
    ) {
        let h = self.config.hidden_dim;
        let mut dgx = vec![0.0; 3 * h];
        let mut dgh = vec![0.0; 3 * h];
        for i in 0..h {
            let (r, z, n) = (step.reset[i], step.update[i], step.cand[i]);
            let dn = dh[i] * (1.0 - z);
            let dz = dh[i] * (prev[i] - n);
            let dan = dn * (1.0 - n * n);
            let dr = dan * step.cand_rec[i];
            let dar = dr * r * (1.0 - r);
            let daz = dz * z * (1.0 - z);
            dgx[i] = dar;
            dgx[h + i] = daz;
            dgx[2 * h + i] = dan;
            dgh[i] = dar;
            dgh[h + i] = daz;
            dgh[2 * h + i] = dan * r;
            dprev[i] += dh[i] * z;
        }
        ger_acc(g[cell.wx], &dgx, x);
        axpy(g[cell.b], 1.0, &dgx);
        gemv_t_acc(dx, self.t(cell.wx), &dgx);
        ger_acc(g[cell.wh], &dgh, prev);
        gemv_t_acc(dprev, self.t(cell.wh), &dgh);
    }

    fn encoder_forward(&self, src: &[u32]) -> EncoderTrace {
        let (d, h) = (self.config.emb_dim, self.config.hidden_dim);
        let s = src.len();
        let mut emb = vec![0.0; s * d];
        let table = self.t(SRC_EMB);
        for (i, &x) in src.iter().enumerate() {
            let x = x as usize;
            widen(&mut emb[i * d..(i + 1) * d], &table[x * d..(x + 1) * d]);
        }
        let zero = vec![0.0; h];

        let mut fwd: Vec<GruStep> = Vec::with_capacity(s);
        for i in 0..s {
            let prev = fwd.last().map_or(zero.as_slice(), |st| st.h.as_slice());
            let step = self.gru(ENC_FWD, &emb[i * d..(i + 1) * d], prev);
            fwd.push(step);
        }
        let mut bwd: Vec<GruStep> = Vec::with_capacity(s);
        for i in (0..s).rev() {
            let prev = bwd.last().map_or(zero.as_slice(), |st| st.h.as_slice());
            let step = self.gru(ENC_BWD, &emb[i * d..(i + 1) * d], prev);
            bwd.push(step);
        }
        bwd.reverse();

        let mut states = vec![0.0; s * h];
        for (i, row) in states.chunks_exact_mut(h).enumerate() {
            for ((o, a), b) in row.iter_mut().zip(&fwd[i].h).zip(&bwd[i].h) {
                *o = a + b;
            }
        }
        let mut mean = vec![0.0; h];
        if s > 0 {
            for row in states.chunks_exact(h) {
                axpy(&mut mean, 1.0 / s as f64, row);
            }
        }
        let mut initial = vec![0.0; h];
        widen(&mut initial, self.t(INIT_B));
        gemv_acc(&mut initial, self.t(INIT_W), &mean);
        tanh_in_place(&mut initial);

        EncoderTrace {
            emb,
            fwd,
            bwd,
            states,
            mean,
            initial,
        }
    }

    fn target_embedding(&self, token: u32, out: &mut [f64]) {
        let d = self.config.emb_dim;
        let y = token as usize;
        widen(out, &self.t(TGT_EMB)[y * d..(y + 1) * d]);
    }

    fn decoder_step(&self, prev: &[f64], token: u32) -> Vec<f64> {
        let mut emb = vec![0.0; self.config.emb_dim];
        self.target_embedding(token, &mut emb);
        self.gru(DEC, &emb, prev).h
    }

    /// Attention weights and context vector for decoder state `s`.
    fn attend(&self, states: &[f64], s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.config.hidden_dim;
        let mut weights: Vec<f64> = states.chunks_exact(h).map(|row| dot(row, s)).collect();
        let mut context = vec![0.0; h];
        if weights.is_empty() {
            return (weights, context);
        }
        log_softmax(&mut weights);
        for w in &mut weights {
            *w = w.exp();
        }
        for (a, row) in weights.iter().zip(states.chunks_exact(h)) {
            axpy(&mut context, *a, row);
        }
        (weights, context)
    }

    /// Combination layer output and unnormalized logits. `joint` receives
    /// the concatenation `[s; c]`.
    fn readout(&self, s: &[f64], context: &[f64], joint: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.config.hidden_dim;
        joint[..h].copy_from_slice(s);
        joint[h..].copy_from_slice(context);
        let mut u = vec![0.0; h];
        widen(&mut u, self.t(COMB_B));
        gemv_acc(&mut u, self.t(COMB_W), joint);
        tanh_in_place(&mut u);
        let mut logits = vec![0.0; self.config.tgt_vocab];
        widen(&mut logits, self.t(OUT_B));
        gemv_acc(&mut logits, self.t(OUT_W), &u);
        (u, logits)
    }

    /// Token-level negative log-likelihood of one framed target
    /// (`BOS … EOS`) given `src`, summed over predicted positions.
    ///
    /// With `grads`, the gradient of `scale × loss` is added into it (laid
    /// out like the parameters). Label smoothing mixes the one-hot target
    /// with a uniform distribution.
    pub fn example_loss(
        &self,
        src: &[u32],
        tgt: &[u32],
        label_smoothing: f64,
        scale: f64,
        grads: Option<&mut [f64]>,
    ) -> Result<f64> {
        self.check_src(src)?;
        self.check_tgt(tgt)?;
        if tgt.len() < 2 || tgt[0] != BOS_ID {
            return Err(Error::MalformedPrefix("target must be framed as BOS … EOS".into()));
        }
        let (d, h, v) = (self.config.emb_dim, self.config.hidden_dim, self.config.tgt_vocab);
        let steps = tgt.len() - 1;
        let enc = self.encoder_forward(src);
        let s_len = src.len();

        // dec[t] reads tgt[t] and predicts tgt[t + 1]
        let mut dec_in = vec![0.0; steps * d];
        let mut dec: Vec<GruStep> = Vec::with_capacity(steps);
        let mut attn = vec![0.0; steps * s_len];
        let mut joint = vec![0.0; steps * 2 * h];
        let mut comb = vec![0.0; steps * h];
        let mut probs = vec![0.0; steps * v];
        let mut loss = 0.0;
        let smooth = label_smoothing / v as f64;
        for t in 0..steps {
            let x = &mut dec_in[t * d..(t + 1) * d];
            self.target_embedding(tgt[t], x);
            let prev = dec.last().map_or(enc.initial.as_slice(), |st| st.h.as_slice());
            let step = self.gru(DEC, x, prev);
            let (a, c) = self.attend(&enc.states, &step.h);
            attn[t * s_len..(t + 1) * s_len].copy_from_slice(&a);
            let (u, mut logits) = self.readout(&step.h, &c, &mut joint[t * 2 * h..(t + 1) * 2 * h]);
            dec.push(step);
            comb[t * h..(t + 1) * h].copy_from_slice(&u);
            log_softmax(&mut logits);
            let y = tgt[t + 1] as usize;
            let mut nll = -(1.0 - label_smoothing) * logits[y];
            if label_smoothing > 0.0 {
                nll -= smooth * logits.iter().sum::<f64>();
            }
            loss += nll;
            for (p, lp) in probs[t * v..(t + 1) * v].iter_mut().zip(&logits) {
                *p = lp.exp();
            }
        }

        let Some(grads) = grads else {
            return Ok(loss);
        };
        let mut g = split_grads(&self.layout, grads);

        let mut d_states = vec![0.0; s_len * h];
        let mut ds_next = vec![0.0; h];
        let mut dz = vec![0.0; v];
        let mut du = vec![0.0; h];
        let mut dpre = vec![0.0; h];
        let mut djoint = vec![0.0; 2 * h];
        let mut ds = vec![0.0; h];
        let mut dscore = vec![0.0; s_len];
        let mut demb = vec![0.0; d];
        for t in (0..steps).rev() {
            let y = tgt[t + 1] as usize;
            let s = &dec[t].h;
            let u = &comb[t * h..(t + 1) * h];
            let jt = &joint[t * 2 * h..(t + 1) * 2 * h];
            let a = &attn[t * s_len..(t + 1) * s_len];

            for (k, (z, p)) in dz.iter_mut().zip(&probs[t * v..(t + 1) * v]).enumerate() {
                let target = if k == y { 1.0 - label_smoothing + smooth } else { smooth };
                *z = scale * (p - target);
            }
            ger_acc(g[OUT_W], &dz, u);
            axpy(g[OUT_B], 1.0, &dz);
            du.fill(0.0);
            gemv_t_acc(&mut du, self.t(OUT_W), &dz);

            tanh_backward(&mut dpre, &du, u);
            ger_acc(g[COMB_W], &dpre, jt);
            axpy(g[COMB_B], 1.0, &dpre);
            djoint.fill(0.0);
            gemv_t_acc(&mut djoint, self.t(COMB_W), &dpre);
            let (ds_out, dc) = djoint.split_at(h);

            ds.copy_from_slice(&ds_next);
            axpy(&mut ds, 1.0, ds_out);
            if s_len > 0 {
                let mut mean_da = 0.0;
                for (i, row) in enc.states.chunks_exact(h).enumerate() {
                    dscore[i] = dot(dc, row);
                    mean_da += a[i] * dscore[i];
                }
                for (i, row) in d_states.chunks_exact_mut(h).enumerate() {
                    axpy(row, a[i], dc);
                    let de = a[i] * (dscore[i] - mean_da);
                    axpy(row, de, s);
                    axpy(&mut ds, de, &enc.states[i * h..(i + 1) * h]);
                }
            }

            let prev = if t == 0 { enc.initial.as_slice() } else { dec[t - 1].h.as_slice() };
            demb.fill(0.0);
            ds_next.fill(0.0);
            self.gru_backward(&mut g, DEC, &dec_in[t * d..(t + 1) * d], prev, &dec[t], &ds, &mut demb, &mut ds_next);
            let yin = tgt[t] as usize;
            axpy(&mut g[TGT_EMB][yin * d..(yin + 1) * d], 1.0, &demb);
        }

        // ds_next now holds the gradient at the initial state.
        tanh_backward(&mut dpre, &ds_next, &enc.initial);
        ger_acc(g[INIT_W], &dpre, &enc.mean);
        axpy(g[INIT_B], 1.0, &dpre);
        if s_len == 0 {
            return Ok(loss);
        }
        let mut dmean = vec![0.0; h];
        gemv_t_acc(&mut dmean, self.t(INIT_W), &dpre);
        for row in d_states.chunks_exact_mut(h) {
            axpy(row, 1.0 / s_len as f64, &dmean);
        }

        let zero = vec![0.0; h];
        let mut dh_next = vec![0.0; h];
        let mut dh = vec![0.0; h];
        for i in (0..s_len).rev() {
            dh.copy_from_slice(&d_states[i * h..(i + 1) * h]);
            axpy(&mut dh, 1.0, &dh_next);
            let prev = if i == 0 { zero.as_slice() } else { enc.fwd[i - 1].h.as_slice() };
            self.encoder_step_backward(&mut g, ENC_FWD, src[i], &enc.emb[i * d..(i + 1) * d], prev, &enc.fwd[i], &dh, &mut dh_next);
        }
        dh_next.fill(0.0);
        for i in 0..s_len {
            dh.copy_from_slice(&d_states[i * h..(i + 1) * h]);
            axpy(&mut dh, 1.0, &dh_next);
            let prev = if i + 1 == s_len { zero.as_slice() } else { enc.bwd[i + 1].h.as_slice() };
            self.encoder_step_backward(&mut g, ENC_BWD, src[i], &enc.emb[i * d..(i + 1) * d], prev, &enc.bwd[i], &dh, &mut dh_next);
        }
        Ok(loss)
    }

    /// One encoder step of the backward pass; `dprev` is overwritten with
    /// the gradient for the neighbouring state.
    #[allow(clippy::too_many_arguments)]
    fn encoder_step_backward(
        &self,
        g: &mut [&mut [f64]],
        cell: Cell,
        token: u32,
        x: &[f64],
        prev: &[f64],
        step: &GruStep,
        dh: &[f64],
        dprev: &mut [f64],
    ) {
        let d = self.config.emb_dim;
        let mut demb = vec![0.0; d];
        dprev.fill(0.0);
        self.gru_backward(g, cell, x, prev, step, dh, &mut demb, dprev);
        let x = token as usize;
        axpy(&mut g[SRC_EMB][x * d..(x + 1) * d], 1.0, &demb);
    }
}

fn check_ids(tokens: &[u32], size: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t as usize >= size) {
        Some(&id) => Err(Error::UnknownId { id, size }),
        None => Ok(()),
    }
}

/// Splits a flat gradient buffer into one mutable slice per tensor.
fn split_grads<'a>(layout: &[TensorInfo], mut buf: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(layout.len());
    for info in layout {
        let (head, tail) = std::mem::take(&mut buf).split_at_mut(info.len());
        out.push(head);
        buf = tail;
    }
    out
}

impl Seq2SeqScorer for NeuralModel {
    fn src_vocab_size(&self) -> usize {
        self.config.src_vocab
    }

    fn tgt_vocab_size(&self) -> usize {
        self.config.tgt_vocab
    }

    fn encode_tokens(&self, tokens: &[u32]) -> Result<EncodedSource> {
        self.check_src(tokens)?;
        let trace = self.encoder_forward(tokens);
        Ok(EncodedSource {
            tokens: tokens.to_vec(),
            states: trace.states,
            width: self.config.hidden_dim,
            initial: trace.initial,
        })
    }

    fn start(&self, enc: &EncodedSource) -> DecoderState {
        DecoderState {
            prefix: vec![BOS_ID],
            hidden: self.decoder_step(&enc.initial, BOS_ID),
        }
    }

    fn advance(&self, _enc: &EncodedSource, state: &DecoderState, token: u32) -> Result<DecoderState> {
        self.check_tgt(&[token])?;
        let mut prefix = state.prefix.clone();
        prefix.push(token);
        Ok(DecoderState {
            prefix,
            hidden: self.decoder_step(&state.hidden, token),
        })
    }

    fn next_log_probs(&self, enc: &EncodedSource, state: &DecoderState) -> Result<Vec<f64>> {
        if enc.width != self.config.hidden_dim || state.hidden.len() != self.config.hidden_dim {
            return Err(Error::InvalidArgument("encoding was produced by a different model".into()));
        }
        let (_, context) = self.attend(&enc.states, &state.hidden);
        let mut joint = vec![0.0; 2 * self.config.hidden_dim];
        let (_, mut logits) = self.readout(&state.hidden, &context, &mut joint);
        log_softmax(&mut logits);
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unigram::EOS_ID;

    fn tiny() -> ModelConfig {
        ModelConfig::new(9, 8).with_dims(4, 6)
    }

    #[test]
    fn layout_is_contiguous() {
        let layout = tiny().layout();
        let mut offset = 0;
        for t in &layout {
            assert_eq!(t.offset, offset);
            offset += t.len();
        }
        assert_eq!(offset, tiny().num_params());
        assert_eq!(ModelConfig::from_shapes(
            &layout.iter().map(|t| (t.name.to_string(), t.shape.clone())).collect::<Vec<_>>()
        )
        .unwrap(), tiny());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = NeuralModel::zeros(tiny()).unwrap();
        let enc = m.encode_tokens(&[4, 5, 6]).unwrap();
        let lp = m.step(&enc, &[BOS_ID, 5]).unwrap();
        for x in lp {
            assert!((x - (1.0f64 / 8.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn step_agrees_with_example_loss() {
        let m = NeuralModel::new(tiny(), 3).unwrap();
        let src = [4, 7, 5];
        let tgt = [BOS_ID, 4, 6, EOS_ID];
        let enc = m.encode_tokens(&src).unwrap();
        let composed = m.target_log_prob(&enc, &tgt[1..3], true).unwrap();
        let loss = m.example_loss(&src, &tgt, 0.0, 1.0, None).unwrap();
        assert!((composed + loss).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_ids() {
        let m = NeuralModel::zeros(tiny()).unwrap();
        assert!(matches!(m.encode_tokens(&[9]), Err(Error::UnknownId { id: 9, size: 9 })));
        let enc = m.encode_tokens(&[4]).unwrap();
        assert!(m.step(&enc, &[BOS_ID, 8]).is_err());
        assert!(matches!(m.step(&enc, &[4]), Err(Error::MalformedPrefix(_))));
    }

    #[test]
    fn empty_source_is_scored() {
        let m = NeuralModel::new(tiny(), 1).unwrap();
        let enc = m.encode_tokens(&[]).unwrap();
        let lp = m.step(&enc, &[BOS_ID]).unwrap();
        assert!((lp.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        let mut g = vec![0.0; m.num_params()];
        m.example_loss(&[], &[BOS_ID, 4, EOS_ID], 0.0, 1.0, Some(&mut g)).unwrap();
        assert!(g.iter().all(|x| x.is_finite()));
    }
}
