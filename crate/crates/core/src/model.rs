//! Stacked blocks with hierarchical subsampling, token embedding, classifier
//! head, and a constant-memory streaming mode.
//!
//! Subsampling keeps every r-th token; gaps add across the dropped tokens so
//! the irregular spacing survives striding, and the feature/state widths are
//! multiplied per the schedule. The streaming path processes one token at a
//! time with per-block recurrent state and reproduces the batch forward.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::layer::{make_variant, AblationRow, Block, BlockCache, LayerError, TokenSequence};
use crate::math;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    BadConfig(String),
    SequenceTooShort { len: usize, required: usize },
    WidthMismatch { expected: usize, found: usize },
    TokenOutOfRange { id: u32, vocab: usize },
    Layer(LayerError),
    ParamCountMismatch { expected: usize, found: usize },
}

impl From<LayerError> for ModelError {
    fn from(e: LayerError) -> Self {
        ModelError::Layer(e)
    }
}

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ModelError::BadConfig(msg) => write!(f, "bad model config: {msg}"),
            ModelError::SequenceTooShort { len, required } => {
                write!(f, "sequence length {len} shorter than subsample product {required}")
            }
            ModelError::WidthMismatch { expected, found } => {
                write!(f, "feature width mismatch: expected {expected}, found {found}")
            }
            ModelError::TokenOutOfRange { id, vocab } => {
                write!(f, "token id {id} out of range for vocab {vocab}")
            }
            ModelError::Layer(e) => write!(f, "{e}"),
            ModelError::ParamCountMismatch { expected, found } => {
                write!(f, "parameter count mismatch: expected {expected}, found {found}")
            }
        }
    }
}

impl core::error::Error for ModelError {}

/// One scheduled subsampling: before block `position`, stride by `factor`
/// and multiply the feature and state widths by `width_mult`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsampleSpec {
    pub position: usize,
    pub factor: usize,
    pub width_mult: usize,
}

/// Architecture description: dimensions, depth, subsample schedule, and the
/// parameterization variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n: usize,
    pub m: usize,
    pub layers: usize,
    pub subsample: Vec<SubsampleSpec>,
    pub variant: AblationRow,
    pub group_size: usize,
    pub classes: usize,
    /// Median coordinate gap of the training data; anchors time-scale init.
    pub median_gap: f64,
}

impl ModelConfig {
    pub fn new(n: usize, m: usize, layers: usize, variant: AblationRow, classes: usize) -> Self {
        Self {
            n,
            m,
            layers,
            subsample: Vec::new(),
            variant,
            group_size: 32,
            classes,
            median_gap: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 || self.m == 0 || self.layers == 0 {
            return Err(ModelError::BadConfig(String::from("n, m, layers must be positive")));
        }
        if self.classes < 2 {
            return Err(ModelError::BadConfig(String::from("need at least two classes")));
        }
        if self.group_size == 0 {
            return Err(ModelError::BadConfig(String::from("group_size must be positive")));
        }
        let mut last = 0;
        for s in &self.subsample {
            if s.position == 0 || s.position >= self.layers {
                return Err(ModelError::BadConfig(format!(
                    "subsample position {} outside 1..{}",
                    s.position, self.layers
                )));
            }
            if s.position <= last {
                return Err(ModelError::BadConfig(String::from(
                    "subsample positions must be strictly increasing",
                )));
            }
            if s.factor == 0 || s.width_mult == 0 {
                return Err(ModelError::BadConfig(String::from(
                    "subsample factor and width multiplier must be positive",
                )));
            }
            last = s.position;
        }
        Ok(())
    }

    /// Minimum input length: the product of all stride factors.
    pub fn required_len(&self) -> usize {
        self.subsample.iter().map(|s| s.factor).product::<usize>().max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Transition {
    factor: usize,
    proj: Tensor,
}

/// The stacked model: blocks with optional stride transitions, average
/// pooling over the sequence dimension, and a linear classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamStack {
    pub config: ModelConfig,
    blocks: Vec<Block>,
    /// transitions[i] is applied before block i.
    transitions: Vec<Option<Transition>>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

struct TransRecord {
    src_len: usize,
    src_width: usize,
    kept_rows: Vec<f64>,
}

struct LayerRecord {
    transition: Option<TransRecord>,
    gaps: Vec<f64>,
    x: Vec<f64>,
    block_cache: BlockCache,
}

pub struct StackCache {
    records: Vec<LayerRecord>,
    final_len: usize,
    pooled: Vec<f64>,
}

impl StackCache {
    /// Sequence length entering each block (after any stride).
    pub fn layer_lengths(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.gaps.len()).collect()
    }
}

impl StreamStack {
    pub fn init(config: &ModelConfig, rng: &mut CounterRng) -> Result<Self, ModelError> {
        config.validate()?;
        let flags = make_variant(config.variant);
        let mut blocks = Vec::with_capacity(config.layers);
        let mut transitions: Vec<Option<Transition>> = (0..config.layers).map(|_| None).collect();
        let mut width = config.n;
        let mut state_dim = config.m;
        let mut sub_iter = config.subsample.iter().peekable();
        for (i, slot) in transitions.iter_mut().enumerate() {
            if let Some(&&s) = sub_iter.peek() {
                if s.position == i {
                    let new_width = width * s.width_mult;
                    *slot = Some(Transition {
                        factor: s.factor,
                        proj: Tensor::init_uniform(new_width, width, rng),
                    });
                    width = new_width;
                    state_dim *= s.width_mult;
                    sub_iter.next();
                }
            }
            blocks.push(Block::init(width, state_dim, flags, config.median_gap, rng));
        }
        Ok(Self {
            config: config.clone(),
            blocks,
            transitions,
            head_w: Tensor::init_uniform(config.classes, width, rng),
            head_b: Tensor::vector(config.classes),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            transitions: self
                .transitions
                .iter()
                .map(|t| {
                    t.as_ref()
                        .map(|tr| Transition { factor: tr.factor, proj: tr.proj.zeros_like() })
                })
                .collect(),
            head_w: self.head_w.zeros_like(),
            head_b: self.head_b.zeros_like(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.config.n
    }

    pub fn final_width(&self) -> usize {
        self.head_w.cols()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn forward(&self, seq: &TokenSequence) -> Result<(Vec<f64>, StackCache), ModelError> {
        if seq.width() != self.config.n {
            return Err(ModelError::WidthMismatch { expected: self.config.n, found: seq.width() });
        }
        let required = self.config.required_len();
        if seq.len() < required {
            return Err(ModelError::SequenceTooShort { len: seq.len(), required });
        }
        let mut gaps = seq.gaps();
        let mut feats = seq.features().to_vec();
        let mut width = self.config.n;
        let mut records = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let mut trans_record = None;
            if let Some(tr) = &self.transitions[i] {
                let src_len = gaps.len();
                let new_width = tr.proj.rows();
                let kept: Vec<usize> = (0..src_len).step_by(tr.factor).collect();
                let mut new_gaps = Vec::with_capacity(kept.len());
                let mut kept_rows = Vec::with_capacity(kept.len() * width);
                let mut new_feats = vec![0.0; kept.len() * new_width];
                let mut prev_src = 0usize;
                for (j, &sj) in kept.iter().enumerate() {
                    // Gaps add across the dropped tokens.
                    let g = if j == 0 {
                        gaps[0]
                    } else {
                        gaps[prev_src + 1..=sj].iter().sum()
                    };
                    new_gaps.push(g);
                    prev_src = sj;
                    let row = &feats[sj * width..(sj + 1) * width];
                    kept_rows.extend_from_slice(row);
                    tr.proj
                        .matvec_into(row, &mut new_feats[j * new_width..(j + 1) * new_width]);
                }
                trans_record = Some(TransRecord { src_len, src_width: width, kept_rows });
                gaps = new_gaps;
                feats = new_feats;
                width = new_width;
            }
            let x = feats;
            let (out, bc) = block.forward(&gaps, &x);
            feats = out;
            records.push(LayerRecord {
                transition: trans_record,
                gaps: gaps.clone(),
                x,
                block_cache: bc,
            });
        }
        let final_len = gaps.len();
        let mut pooled = vec![0.0; width];
        for k in 0..final_len {
            for c in 0..width {
                pooled[c] += feats[k * width + c];
            }
        }
        for v in pooled.iter_mut() {
            *v /= final_len as f64;
        }
        let mut logits = self.head_w.matvec(&pooled);
        for (l, b) in logits.iter_mut().zip(&self.head_b.data) {
            *l += b;
        }
        Ok((logits, StackCache { records, final_len, pooled }))
    }

    /// Backward pass. Accumulates parameter gradients into `grads` (a zeroed
    /// twin) and returns the gradient with respect to the input features.
    pub fn backward(
        &self,
        cache: &StackCache,
        d_logits: &[f64],
        grads: &mut StreamStack,
    ) -> Vec<f64> {
        let width = self.final_width();
        grads.head_w.outer_acc(d_logits, &cache.pooled);
        for (g, d) in grads.head_b.data.iter_mut().zip(d_logits) {
            *g += d;
        }
        let mut d_pooled = vec![0.0; width];
        self.head_w.matvec_t_acc(d_logits, &mut d_pooled);
        let inv_len = 1.0 / cache.final_len as f64;
        let mut d = vec![0.0; cache.final_len * width];
        for k in 0..cache.final_len {
            for c in 0..width {
                d[k * width + c] = d_pooled[c] * inv_len;
            }
        }
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let rec = &cache.records[i];
            d = block.backward(&rec.x, &rec.block_cache, &d, &mut grads.blocks[i]);
            if let Some(tr_rec) = &rec.transition {
                let tr = self.transitions[i].as_ref().expect("record matches transition");
                let g_tr = grads.transitions[i].as_mut().expect("grads twin has the transition");
                let new_width = tr.proj.rows();
                let mut d_src = vec![0.0; tr_rec.src_len * tr_rec.src_width];
                for (j, sj) in (0..tr_rec.src_len).step_by(tr.factor).enumerate() {
                    let d_row = &d[j * new_width..(j + 1) * new_width];
                    let src_row =
                        &tr_rec.kept_rows[j * tr_rec.src_width..(j + 1) * tr_rec.src_width];
                    g_tr.proj.outer_acc(d_row, src_row);
                    tr.proj.matvec_t_acc(
                        d_row,
                        &mut d_src[sj * tr_rec.src_width..(sj + 1) * tr_rec.src_width],
                    );
                }
                d = d_src;
            }
        }
        d
    }

    /// Visits every parameter tensor with a stable, unique name. The visit
    /// order defines the flat parameter layout used by the optimizer.
    pub fn visit_params(&self, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(tr) = &self.transitions[i] {
                f(format!("transition{i}.proj"), &tr.proj);
            }
            f(format!("block{i}.norm_gain"), &b.norm_gain);
            f(format!("block{i}.w_in"), &b.mixer.w_in);
            f(format!("block{i}.w_out"), &b.mixer.w_out);
            f(format!("block{i}.a_re_raw"), &b.params.a_re_raw);
            f(format!("block{i}.a_im"), &b.params.a_im);
            f(format!("block{i}.delta_raw"), &b.params.delta_raw);
            f(format!("block{i}.w_delta"), &b.params.w_delta);
            f(format!("block{i}.w_gamma"), &b.params.w_gamma);
            f(format!("block{i}.gamma_bias"), &b.params.gamma_bias);
            f(format!("block{i}.w_b"), &b.params.w_b);
            f(format!("block{i}.w_c"), &b.params.w_c);
        }
        f(String::from("head.w"), &self.head_w);
        f(String::from("head.b"), &self.head_b);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            if let Some(tr) = &mut self.transitions[i] {
                f(format!("transition{i}.proj"), &mut tr.proj);
            }
            f(format!("block{i}.norm_gain"), &mut b.norm_gain);
            f(format!("block{i}.w_in"), &mut b.mixer.w_in);
            f(format!("block{i}.w_out"), &mut b.mixer.w_out);
            f(format!("block{i}.a_re_raw"), &mut b.params.a_re_raw);
            f(format!("block{i}.a_im"), &mut b.params.a_im);
            f(format!("block{i}.delta_raw"), &mut b.params.delta_raw);
            f(format!("block{i}.w_delta"), &mut b.params.w_delta);
            f(format!("block{i}.w_gamma"), &mut b.params.w_gamma);
            f(format!("block{i}.gamma_bias"), &mut b.params.gamma_bias);
            f(format!("block{i}.w_b"), &mut b.params.w_b);
            f(format!("block{i}.w_c"), &mut b.params.w_c);
        }
        f(String::from("head.w"), &mut self.head_w);
        f(String::from("head.b"), &mut self.head_b);
    }

    /// Fresh streaming state (all recurrent states zero, nothing pooled).
    pub fn streaming_state(&self) -> StreamingState {
        StreamingState {
            block_states: self
                .blocks
                .iter()
                .map(|b| vec![Complex64::new(0.0, 0.0); b.params.n * b.params.m])
                .collect(),
            last_t: None,
            gap_acc: self
                .transitions
                .iter()
                .map(|t| t.as_ref().map(|_| (0usize, 0.0f64)))
                .collect(),
            sum_final: vec![0.0; self.final_width()],
            count: 0,
        }
    }

    /// Feeds one token through the stack in O(1) time, independent of how
    /// many tokens came before. Subsampled-away tokens still advance the
    /// stride phase and contribute their gap to the next kept token.
    pub fn stream_push(&self, state: &mut StreamingState, t: f64, feat: &[f64]) {
        debug_assert_eq!(feat.len(), self.config.n);
        let gap0 = match state.last_t {
            None => 0.0,
            Some(prev) => t - prev,
        };
        state.last_t = Some(t);
        let mut x = feat.to_vec();
        let mut gap = gap0;
        for (i, block) in self.blocks.iter().enumerate() {
            if let Some(tr) = &self.transitions[i] {
                let (counter, acc) = state.gap_acc[i].as_mut().expect("transition state");
                *acc += gap;
                let keep = *counter % tr.factor == 0;
                *counter += 1;
                if !keep {
                    return;
                }
                gap = *acc;
                *acc = 0.0;
                x = tr.proj.matvec(&x);
            }
            x = block.step_token(&mut state.block_states[i], gap, &x);
        }
        for (s, v) in state.sum_final.iter_mut().zip(&x) {
            *s += v;
        }
        state.count += 1;
    }

    /// Class logits from the running average pool; None before any token has
    /// reached the head.
    pub fn stream_logits(&self, state: &StreamingState) -> Option<Vec<f64>> {
        if state.count == 0 {
            return None;
        }
        let pooled: Vec<f64> =
            state.sum_final.iter().map(|&s| s / state.count as f64).collect();
        let mut logits = self.head_w.matvec(&pooled);
        for (l, b) in logits.iter_mut().zip(&self.head_b.data) {
            *l += b;
        }
        Some(logits)
    }
}

/// Recurrent state for streaming inference: per-block channel states, the
/// last seen coordinate, stride phases with accumulated gaps, and the
/// running pool. Its size does not grow with the stream.
pub struct StreamingState {
    block_states: Vec<Vec<Complex64>>,
    last_t: Option<f64>,
    gap_acc: Vec<Option<(usize, f64)>>,
    sum_final: Vec<f64>,
    count: usize,
}

impl StreamingState {
    /// Tokens that reached the pooling head.
    pub fn tokens_pooled(&self) -> usize {
        self.count
    }
}

/// Learned token embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    /// Rows uniform in (0, 2/sqrt(n)): the positive mean gives the gap
    /// signal a nonzero carrier from the first training step.
    pub fn init(vocab: usize, n: usize, rng: &mut CounterRng) -> Self {
        let bound = 2.0 / math::sqrt(n as f64);
        let data = (0..vocab * n).map(|_| rng.range_f64(0.0, bound)).collect();
        Self { table: Tensor::from_vec(vocab, n, data) }
    }

    pub fn vocab(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }
}

/// Embedding + stack + head: classifies streams of (coordinate, token id).
#[derive(Debug, Clone, PartialEq)]
pub struct EventClassifier {
    pub embedding: Embedding,
    pub stack: StreamStack,
}

pub struct ClassifierCache {
    ids: Vec<u32>,
    stack: StackCache,
}

impl ClassifierCache {
    pub fn stack_cache(&self) -> &StackCache {
        &self.stack
    }
}

impl EventClassifier {
    pub fn init(
        config: &ModelConfig,
        vocab: usize,
        rng: &mut CounterRng,
    ) -> Result<Self, ModelError> {
        if vocab == 0 {
            return Err(ModelError::BadConfig(String::from("vocab must be positive")));
        }
        Ok(Self {
            embedding: Embedding::init(vocab, config.n, rng),
            stack: StreamStack::init(config, rng)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: Embedding { table: self.embedding.table.zeros_like() },
            stack: self.stack.zeros_like(),
        }
    }

    pub fn token_sequence(&self, t: &[f64], ids: &[u32]) -> Result<TokenSequence, ModelError> {
        if t.len() != ids.len() {
            return Err(ModelError::Layer(LayerError::LengthMismatch {
                expected: t.len(),
                found: ids.len(),
            }));
        }
        let n = self.embedding.dim();
        let mut feats = Vec::with_capacity(t.len() * n);
        for &id in ids {
            if id as usize >= self.embedding.vocab() {
                return Err(ModelError::TokenOutOfRange { id, vocab: self.embedding.vocab() });
            }
            feats.extend_from_slice(self.embedding.table.row(id as usize));
        }
        Ok(TokenSequence::new(t.to_vec(), feats, n)?)
    }

    pub fn forward_ids(
        &self,
        t: &[f64],
        ids: &[u32],
    ) -> Result<(Vec<f64>, ClassifierCache), ModelError> {
        let seq = self.token_sequence(t, ids)?;
        let (logits, stack) = self.stack.forward(&seq)?;
        Ok((logits, ClassifierCache { ids: ids.to_vec(), stack }))
    }

    pub fn backward(
        &self,
        cache: &ClassifierCache,
        d_logits: &[f64],
        grads: &mut EventClassifier,
    ) {
        let d_feats = self.stack.backward(&cache.stack, d_logits, &mut grads.stack);
        let n = self.embedding.dim();
        for (k, &id) in cache.ids.iter().enumerate() {
            let base = id as usize * n;
            for c in 0..n {
                grads.embedding.table.data[base + c] += d_feats[k * n + c];
            }
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, &Tensor)) {
        f(String::from("embedding.table"), &self.embedding.table);
        self.stack.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(String::from("embedding.table"), &mut self.embedding.table);
        self.stack.visit_params_mut(f);
    }

    pub fn streaming_state(&self) -> StreamingState {
        self.stack.streaming_state()
    }

    pub fn stream_push(
        &self,
        state: &mut StreamingState,
        t: f64,
        id: u32,
    ) -> Result<(), ModelError> {
        if id as usize >= self.embedding.vocab() {
            return Err(ModelError::TokenOutOfRange { id, vocab: self.embedding.vocab() });
        }
        let row = self.embedding.table.row(id as usize).to_vec();
        self.stack.stream_push(state, t, &row);
        Ok(())
    }

    pub fn stream_logits(&self, state: &StreamingState) -> Option<Vec<f64>> {
        self.stack.stream_logits(state)
    }
}

/// Flattens every parameter (in visit order) into one vector.
pub fn flatten_params(visit: impl FnOnce(&mut dyn FnMut(String, &Tensor))) -> Vec<f64> {
    let mut flat = Vec::new();
    visit(&mut |_name, t: &Tensor| flat.extend_from_slice(&t.data));
    flat
}

/// Writes a flat vector back into the parameters (inverse of
/// [`flatten_params`]); the total length must match exactly.
pub fn assign_params(
    visit_mut: impl FnOnce(&mut dyn FnMut(String, &mut Tensor)),
    flat: &[f64],
) -> Result<(), ModelError> {
    let mut offset = 0usize;
    let mut overflow = false;
    visit_mut(&mut |_name, t: &mut Tensor| {
        let next = offset + t.data.len();
        if next > flat.len() {
            overflow = true;
            return;
        }
        t.data.copy_from_slice(&flat[offset..next]);
        offset = next;
    });
    if overflow || offset != flat.len() {
        return Err(ModelError::ParamCountMismatch { expected: offset, found: flat.len() });
    }
    Ok(())
}
