//! Neural building blocks on top of the tensor tape: parameter storage,
//! linear layers, layer normalization, multi-head attention, transformer
//! encoder/decoder blocks, GRUs, and positional embeddings.
//!
//! Parameters live in a [`ParamStore`] as plain values. A [`Session`] mounts
//! them onto a fresh tape for one training step (or as constants for
//! inference); layers hold [`ParamId`]s and are immutable after
//! construction, so forward passes on shared read-only parameters may run
//! concurrently across independent tapes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

use crate::tensor::{Array, Gradients, Tape, Tensor};
use crate::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Parameter store and sessions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Id for a raw store index (checkpoint loading, optimizer bookkeeping).
pub fn param_id(index: usize) -> ParamId {
    ParamId(index)
}

/// Named parameter registry. Registration order is the canonical order used
/// for checkpoints and gradient bundles.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Array)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.entries[id.0].1
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|(n, _)| n == name)
            .map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, a))| (ParamId(i), n.as_str(), a))
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.len()).sum()
    }
}

/// Per-parameter gradients aligned with store order; `None` where the loss
/// did not touch the parameter.
pub type GradBundle = Vec<Option<Array>>;

/// Mounts store parameters either as differentiable leaves on a fresh tape
/// (training) or as constants (inference). Mounting is lazy and cached so a
/// parameter used twice shares one tape node and its gradients accumulate.
pub struct Session<'s> {
    store: &'s ParamStore,
    tape: Option<Tape>,
    mounted: RefCell<Vec<Option<Tensor>>>,
}

impl<'s> Session<'s> {
    pub fn train(store: &'s ParamStore) -> Self {
        Self {
            store,
            tape: Some(Tape::new()),
            mounted: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn eval(store: &'s ParamStore) -> Self {
        Self {
            store,
            tape: None,
            mounted: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn is_training(&self) -> bool {
        self.tape.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.tape.as_ref()
    }

    pub fn param(&self, id: ParamId) -> Result<Tensor> {
        let mut mounted = self.mounted.borrow_mut();
        if let Some(t) = &mounted[id.index()] {
            return Ok(t.clone());
        }
        let value = self.store.value(id).clone();
        let t = match &self.tape {
            Some(tape) => tape.leaf(value)?,
            None => Tensor::from_array(value),
        };
        mounted[id.index()] = Some(t.clone());
        Ok(t)
    }

    /// Backward pass; returns per-parameter gradients in store order.
    pub fn backward(&self, loss: &Tensor) -> Result<GradBundle> {
        let tape = self.tape.as_ref().ok_or(Error::DetachedTape)?;
        let mut grads: Gradients = tape.backward(loss)?;
        let mounted = self.mounted.borrow();
        Ok((0..self.store.len())
            .map(|i| mounted[i].as_ref().and_then(|t| grads.take(t)))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Weights drawn from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
pub fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Array {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Array::new(shape.to_vec(), data).expect("shape/data agree by construction")
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// Affine map `x W^T + b` for row-stacked inputs `[N x in] -> [N x out]`.
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(rng, &[out_dim, in_dim], in_dim),
        );
        let bias = store.add(format!("{name}.bias"), Array::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, s: &Session, x: &Tensor) -> Result<Tensor> {
        let w = s.param(self.weight)?;
        let b = s.param(self.bias)?;
        x.matmul(&w.transpose()?)?.add(&b)
    }
}

/// Per-token layer normalization with learned gain and bias.
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(
            format!("{name}.gain"),
            Array::new(vec![dim], vec![1.0; dim]).expect("shape/data agree"),
        );
        let bias = store.add(format!("{name}.bias"), Array::zeros(&[dim]));
        Self { gain, bias, dim }
    }

    /// Normalizes each row of `[N x D]` to zero mean and unit variance.
    pub fn forward(&self, s: &Session, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let mu = x.mean_axis(1)?.reshape(&[n, 1])?;
        let centered = x.sub(&mu)?;
        let var = centered.powf(2.0)?.mean_axis(1)?.reshape(&[n, 1])?;
        let std = var.add_scalar(LAYER_NORM_EPS)?.sqrt()?;
        let normed = centered.div(&std)?;
        normed.mul(&s.param(self.gain)?)?.add(&s.param(self.bias)?)
    }
}

/// Scaled dot-product attention split over `heads` heads. No projections;
/// the inputs are used directly as queries, keys, and values.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let (dq, dk) = (q.shape()[1], k.shape()[1]);
    if dq != dk || k.shape()[0] != v.shape()[0] || dq % heads != 0 {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let dh = dq / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.narrow(1, h * dh, dh)?;
        let kh = k.narrow(1, h * dh, dh)?;
        let vh = v.narrow(1, h * dh, dh)?;
        let scores = qh.matmul(&kh.transpose()?)?.mul_scalar(scale)?;
        let weights = scores.softmax(1)?;
        outs.push(weights.matmul(&vh)?);
    }
    Tensor::concat(&outs.iter().collect::<Vec<_>>(), 1)
}

/// Multi-head attention with query/key/value/output projections.
pub struct MultiHeadAttention {
    pub wq: LinearLayer,
    pub wk: LinearLayer,
    pub wv: LinearLayer,
    pub wo: LinearLayer,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Self {
        assert!(dim % heads == 0, "model dim must be divisible by head count");
        Self {
            wq: LinearLayer::new(store, rng, &format!("{name}.wq"), dim, dim),
            wk: LinearLayer::new(store, rng, &format!("{name}.wk"), dim, dim),
            wv: LinearLayer::new(store, rng, &format!("{name}.wv"), dim, dim),
            wo: LinearLayer::new(store, rng, &format!("{name}.wo"), dim, dim),
            heads,
            dim,
        }
    }

    /// `queries [Nq x D]`, `keys/values [Nk x D]` -> `[Nq x D]`.
    pub fn forward(
        &self,
        s: &Session,
        queries: &Tensor,
        keys: &Tensor,
        values: &Tensor,
    ) -> Result<Tensor> {
        if keys.shape()[0] != values.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: keys.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        let q = self.wq.forward(s, queries)?;
        let k = self.wk.forward(s, keys)?;
        let v = self.wv.forward(s, values)?;
        let mixed = scaled_dot_attention(&q, &k, &v, self.heads)?;
        self.wo.forward(s, &mixed)
    }
}

/// Two-layer feed-forward block with ReLU.
pub struct FeedForward {
    pub first: LinearLayer,
    pub second: LinearLayer,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            first: LinearLayer::new(store, rng, &format!("{name}.ff1"), dim, hidden),
            second: LinearLayer::new(store, rng, &format!("{name}.ff2"), hidden, dim),
        }
    }

    pub fn forward(&self, s: &Session, x: &Tensor) -> Result<Tensor> {
        self.second.forward(s, &self.first.forward(s, x)?.relu()?)
    }
}

/// Pre-norm self-attention encoder layer: x + attn(norm(x)), x + ff(norm(x)).
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
        ffn: usize,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            ff: FeedForward::new(store, rng, name, dim, ffn),
        }
    }

    pub fn forward(&self, s: &Session, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(s, x)?;
        let x = x.add(&self.attn.forward(s, &h, &h, &h)?)?;
        let h = self.norm2.forward(s, &x)?;
        x.add(&self.ff.forward(s, &h)?)
    }
}

/// Pre-norm cross-attention decoder layer acting on a query row.
pub struct DecoderLayer {
    pub norm1: LayerNorm,
    pub cross: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
        ffn: usize,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            cross: MultiHeadAttention::new(store, rng, &format!("{name}.cross"), dim, heads),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            ff: FeedForward::new(store, rng, name, dim, ffn),
        }
    }

    pub fn forward(&self, s: &Session, query: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(s, query)?;
        let q = query.add(&self.cross.forward(s, &h, memory, memory)?)?;
        let h = self.norm2.forward(s, &q)?;
        q.add(&self.ff.forward(s, &h)?)
    }
}

/// Encoder stack. Output shape equals input shape; with zero layers the
/// stack is the identity.
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub final_norm: Option<LayerNorm>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        layers: usize,
        dim: usize,
        heads: usize,
        ffn: usize,
    ) -> Self {
        let stack = (0..layers)
            .map(|i| EncoderLayer::new(store, rng, &format!("{name}.layer{i}"), dim, heads, ffn))
            .collect::<Vec<_>>();
        let final_norm =
            (layers > 0).then(|| LayerNorm::new(store, &format!("{name}.final_norm"), dim));
        Self {
            layers: stack,
            final_norm,
        }
    }

    pub fn forward(&self, s: &Session, tokens: &Tensor) -> Result<Tensor> {
        let mut x = tokens.clone();
        for layer in &self.layers {
            x = layer.forward(s, &x)?;
        }
        match &self.final_norm {
            Some(norm) => norm.forward(s, &x),
            None => Ok(x),
        }
    }
}

/// Decoder stack collapsing memory into a query of fixed shape.
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub final_norm: Option<LayerNorm>,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        layers: usize,
        dim: usize,
        heads: usize,
        ffn: usize,
    ) -> Self {
        let stack = (0..layers)
            .map(|i| DecoderLayer::new(store, rng, &format!("{name}.layer{i}"), dim, heads, ffn))
            .collect::<Vec<_>>();
        let final_norm =
            (layers > 0).then(|| LayerNorm::new(store, &format!("{name}.final_norm"), dim));
        Self {
            layers: stack,
            final_norm,
        }
    }

    pub fn forward(&self, s: &Session, query: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let mut q = query.clone();
        for layer in &self.layers {
            q = layer.forward(s, &q, memory)?;
        }
        match &self.final_norm {
            Some(norm) => norm.forward(s, &q),
            None => Ok(q),
        }
    }
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

/// Single-direction GRU with the standard update/reset/candidate gates:
///
/// ```text
/// z = sigmoid(x Wz^T + h Uz^T + bz)
/// r = sigmoid(x Wr^T + h Ur^T + br)
/// n = tanh(x Wn^T + (r . h) Un^T + bn)
/// h' = (1 - z) . n + z . h
/// ```
pub struct GruLayer {
    pub wz: LinearLayer,
    pub wr: LinearLayer,
    pub wn: LinearLayer,
    uz: ParamId,
    ur: ParamId,
    un: ParamId,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            wz: LinearLayer::new(store, rng, &format!("{name}.wz"), in_dim, hidden),
            wr: LinearLayer::new(store, rng, &format!("{name}.wr"), in_dim, hidden),
            wn: LinearLayer::new(store, rng, &format!("{name}.wn"), in_dim, hidden),
            uz: store.add(
                format!("{name}.uz"),
                uniform_init(rng, &[hidden, hidden], hidden),
            ),
            ur: store.add(
                format!("{name}.ur"),
                uniform_init(rng, &[hidden, hidden], hidden),
            ),
            un: store.add(
                format!("{name}.un"),
                uniform_init(rng, &[hidden, hidden], hidden),
            ),
            hidden,
        }
    }

    /// `inputs [T x Din]` -> hidden states `[T x H]`, zero initial hidden
    /// state. `reverse` runs the recurrence from the last frame backward but
    /// returns states in input order.
    pub fn forward(&self, s: &Session, inputs: &Tensor, reverse: bool) -> Result<Tensor> {
        let t_len = inputs.shape()[0];
        let uz = s.param(self.uz)?.transpose()?;
        let ur = s.param(self.ur)?.transpose()?;
        let un = s.param(self.un)?.transpose()?;
        let mut h = Tensor::zeros(&[1, self.hidden]);
        let mut states: Vec<Option<Tensor>> = vec![None; t_len];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let x = inputs.row(t)?;
            let z = self.wz.forward(s, &x)?.add(&h.matmul(&uz)?)?.sigmoid()?;
            let r = self.wr.forward(s, &x)?.add(&h.matmul(&ur)?)?.sigmoid()?;
            let n = self
                .wn
                .forward(s, &x)?
                .add(&r.mul(&h)?.matmul(&un)?)?
                .tanh()?;
            let keep = z.mul(&h)?;
            h = z.neg()?.add_scalar(1.0)?.mul(&n)?.add(&keep)?;
            states[t] = Some(h.clone());
        }
        let rows: Vec<Tensor> = states.into_iter().map(|s| s.expect("filled")).collect();
        Tensor::concat(&rows.iter().collect::<Vec<_>>(), 0)
    }
}

/// Bidirectional GRU: forward and reversed passes concatenated to `[T x 2H]`.
pub struct BiGru {
    pub fw: GruLayer,
    pub bw: GruLayer,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            fw: GruLayer::new(store, rng, &format!("{name}.fw"), in_dim, hidden),
            bw: GruLayer::new(store, rng, &format!("{name}.bw"), in_dim, hidden),
        }
    }

    pub fn forward(&self, s: &Session, inputs: &Tensor) -> Result<Tensor> {
        let f = self.fw.forward(s, inputs, false)?;
        let b = self.bw.forward(s, inputs, true)?;
        Tensor::concat(&[&f, &b], 1)
    }
}

/// Two-layer MLP head with tanh hidden activation.
pub struct Mlp2 {
    pub first: LinearLayer,
    pub second: LinearLayer,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            first: LinearLayer::new(store, rng, &format!("{name}.fc1"), in_dim, hidden),
            second: LinearLayer::new(store, rng, &format!("{name}.fc2"), hidden, out_dim),
        }
    }

    pub fn forward(&self, s: &Session, x: &Tensor) -> Result<Tensor> {
        self.second.forward(s, &self.first.forward(s, x)?.tanh()?)
    }
}

// ---------------------------------------------------------------------------
// Positional embeddings
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosEmbedKind {
    Learned,
    Sinusoidal,
    Off,
}

/// One embedding per grid cell, added to the flattened `[HW x D]` tokens.
pub struct PositionalEmbedding2D {
    kind: PosEmbedKind,
    table: Option<ParamId>,
    fixed: Option<Array>,
}

impl PositionalEmbedding2D {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        kind: PosEmbedKind,
        h: usize,
        w: usize,
        dim: usize,
    ) -> Self {
        match kind {
            PosEmbedKind::Learned => Self {
                kind,
                table: Some(store.add(
                    format!("{name}.pos2d"),
                    uniform_init(rng, &[h * w, dim], dim),
                )),
                fixed: None,
            },
            PosEmbedKind::Sinusoidal => Self {
                kind,
                table: None,
                fixed: Some(sinusoidal_2d(h, w, dim)),
            },
            PosEmbedKind::Off => Self {
                kind,
                table: None,
                fixed: None,
            },
        }
    }

    pub fn kind(&self) -> PosEmbedKind {
        self.kind
    }

    /// `[HW x D]` embedding table, or `None` when disabled.
    pub fn forward(&self, s: &Session) -> Result<Option<Tensor>> {
        match self.kind {
            PosEmbedKind::Learned => Ok(Some(s.param(self.table.expect("learned table"))?)),
            PosEmbedKind::Sinusoidal => Ok(Some(Tensor::from_array(
                self.fixed.clone().expect("fixed table"),
            ))),
            PosEmbedKind::Off => Ok(None),
        }
    }
}

/// Fixed sine/cosine table: the first half of the channels encodes the row
/// index, the second half the column index.
fn sinusoidal_2d(h: usize, w: usize, dim: usize) -> Array {
    let half = dim / 2;
    let mut data = vec![0.0; h * w * dim];
    for r in 0..h {
        for c in 0..w {
            let base = (r * w + c) * dim;
            for d in 0..dim {
                let (pos, i, span) = if d < half {
                    (r as f64, d, half.max(1))
                } else {
                    (c as f64, d - half, (dim - half).max(1))
                };
                let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / span as f64);
                data[base + d] = if i % 2 == 0 {
                    (pos * freq).sin()
                } else {
                    (pos * freq).cos()
                };
            }
        }
    }
    Array::new(vec![h * w, dim], data).expect("shape/data agree")
}

/// Learned per-timestep embeddings for the temporal encoder.
pub struct TemporalEmbedding {
    table: ParamId,
    pub max_len: usize,
}

impl TemporalEmbedding {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        max_len: usize,
        dim: usize,
    ) -> Self {
        Self {
            table: store.add(
                format!("{name}.temporal"),
                uniform_init(rng, &[max_len, dim], dim),
            ),
            max_len,
        }
    }

    pub fn forward(&self, s: &Session, t_len: usize) -> Result<Tensor> {
        if t_len > self.max_len {
            return Err(Error::Incompatible(format!(
                "sequence length {t_len} exceeds embedding capacity {}",
                self.max_len
            )));
        }
        s.param(self.table)?.narrow(0, 0, t_len)
    }
}
