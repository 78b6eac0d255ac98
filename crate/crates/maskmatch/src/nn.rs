//! Parameterized layers: parameter registry, linear/MLP, layer norm,
//! multi-head attention, and the transformer decoder layer.
//!
//! Parameters live outside any graph in a [`ParamStore`]; each training
//! iteration binds them into a fresh graph as leaves. Freezing a subtree
//! simply binds those leaves without `requires_grad`, so no gradient can
//! reach them and the optimizer never sees them.

use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::tensor::{Graph, Result, TensorError, Var};

/// Index of a parameter in its store. Stable for the store's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    value: Vec<f64>,
    frozen: bool,
}

impl ParamEntry {
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn value(&self) -> &[f64] {
        &self.value
    }
    pub fn frozen(&self) -> bool {
        self.frozen
    }
}

/// Named parameter tensors with deterministic (lexicographic) iteration
/// and per-subtree freezing.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique; a duplicate is a
    /// programming error.
    pub fn register(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> ParamId {
        assert_eq!(
            value.len(),
            shape.iter().product::<usize>(),
            "parameter {name}: data does not match shape"
        );
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            frozen: false,
        });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        &mut self.entries[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Lexicographic iteration over (name, entry).
    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.by_name.values().map(|&i| &self.entries[i])
    }

    /// Ids of all non-frozen parameters, in lexicographic name order.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.by_name
            .values()
            .filter(|&&i| !self.entries[i].frozen)
            .map(|&i| ParamId(i))
            .collect()
    }

    /// Freezes every parameter whose name starts with `prefix`.
    pub fn freeze_subtree(&mut self, prefix: &str) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = true;
            }
        }
    }

    pub fn frozen_count(&self) -> usize {
        self.entries.iter().filter(|e| e.frozen).count()
    }

    /// Binds every parameter into `graph` as a leaf; frozen parameters are
    /// bound without gradient tracking.
    pub fn bind(&self, graph: &mut Graph) -> Result<Binding> {
        let mut vars = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            vars.push(graph.leaf(e.value.clone(), &e.shape, !e.frozen)?);
        }
        Ok(Binding { vars })
    }

    /// SHA-256 over names, shapes, and exact value bits of every parameter
    /// whose name starts with `prefix`. Used by the freeze contracts.
    pub fn subtree_hash(&self, prefix: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        for e in self.iter() {
            if !e.name.starts_with(prefix) {
                continue;
            }
            h.update(e.name.as_bytes());
            h.update([0u8]);
            for &d in &e.shape {
                h.update((d as u64).to_le_bytes());
            }
            for &v in &e.value {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Per-graph view of the store's parameters.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

// ── Initialization ──────────────────────────────────────────────────

/// Uniform Xavier/Glorot values for a projection of the given fan.
pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

// ── Linear / MLP ────────────────────────────────────────────────────

/// y = x W (+ b) with W: [din, dout], b: [1, dout].
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut R,
    ) -> Self {
        Self::with_bias(store, name, din, dout, true, rng)
    }

    pub fn with_bias<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.register(
            &format!("{name}.w"),
            &[din, dout],
            xavier_uniform(rng, din, dout, din * dout),
        );
        let b = bias.then(|| store.register(&format!("{name}.b"), &[1, dout], vec![0.0; dout]));
        Linear { w, b, din, dout }
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Result<Var> {
        let h = g.matmul(x, bind.var(self.w))?;
        match self.b {
            Some(b) => g.add(h, bind.var(b)),
            None => Ok(h),
        }
    }
}

/// linear → ReLU → … → linear over the trailing axis.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists the widths, e.g. `[din, hidden, dout]`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Self {
        Self::with_bias(store, name, dims, true, rng)
    }

    pub fn with_bias<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::with_bias(store, &format!("{name}.{i}"), w[0], w[1], bias, rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, bind, h)?;
            if i != last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

// ── Layer norm ──────────────────────────────────────────────────────

/// Normalizes the trailing axis of a rank-2 input to zero mean / unit
/// variance, then applies the learned affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.register(&format!("{name}.gamma"), &[1, d], vec![1.0; d]);
        let beta = store.register(&format!("{name}.beta"), &[1, d], vec![0.0; d]);
        LayerNorm { gamma, beta, eps: 1e-5 }
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Result<Var> {
        let mu = g.mean_keepdim(x, 1)?;
        let xc = g.sub(x, mu)?;
        let sq = g.mul(xc, xc)?;
        let var = g.mean_keepdim(sq, 1)?;
        let var_eps = g.add_scalar(var, self.eps)?;
        let std = g.sqrt(var_eps)?;
        let xn = g.div(xc, std)?;
        let scaled = g.mul(xn, bind.var(self.gamma))?;
        g.add(scaled, bind.var(self.beta))
    }
}

// ── Attention ───────────────────────────────────────────────────────

/// Scaled dot-product attention without any projections, split into
/// `heads` channel groups. Non-parametric; also the core of
/// [`MultiHeadAttention`].
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let d = *g
        .shape(q)
        .last()
        .ok_or_else(|| TensorError::Contract("attention input must be rank 2".into()))?;
    if d % heads != 0 {
        return Err(TensorError::Contract(format!(
            "model width {d} not divisible by {heads} heads"
        )));
    }
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, 1, h * dk, dk)?;
        let kh = g.slice(k, 1, h * dk, dk)?;
        let vh = g.slice(v, 1, h * dk, dk)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let scaled = g.scale(logits, scale)?;
        let attn = g.softmax(scaled, 1)?;
        weights.push(attn);
        outs.push(g.matmul(attn, vh)?);
    }
    let out = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    Ok((out, weights))
}

/// Multi-head attention with learned q/k/v/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(TensorError::Contract(format!(
                "d_model {d_model} not divisible by heads {heads}"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(store, &format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(store, &format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(store, &format!("{name}.wv"), d_model, d_model, rng),
            wo: Linear::new(store, &format!("{name}.wo"), d_model, d_model, rng),
            heads,
            d_model,
        })
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, q: Var, k: Var, v: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, bind, q, k, v)?.0)
    }

    /// Returns the output and the per-head attention matrices (row
    /// stochastic over keys).
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        bind: &Binding,
        q: Var,
        k: Var,
        v: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let qp = self.wq.forward(g, bind, q)?;
        let kp = self.wk.forward(g, bind, k)?;
        let vp = self.wv.forward(g, bind, v)?;
        let (mixed, weights) = scaled_dot_attention(g, qp, kp, vp, self.heads)?;
        Ok((self.wo.forward(g, bind, mixed)?, weights))
    }
}

// ── Decoder layer ───────────────────────────────────────────────────

/// Pre-norm transformer decoder layer: self-attention over the queries,
/// cross-attention to the memory, feed-forward — each behind a layer norm
/// with a residual add — and a terminal layer norm. With zero-initialized
/// output projections the layer reduces to the layer-normalized input.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ffn: Mlp,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub ln3: LayerNorm,
    pub ln_out: LayerNorm,
}

impl DecoderLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ffn: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d_model, heads, rng)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d_model, heads, rng)?,
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[d_model, d_ffn, d_model], rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d_model),
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), d_model),
        })
    }

    /// `memory_pos`, when present, is added to the keys only.
    pub fn forward(
        &self,
        g: &mut Graph,
        bind: &Binding,
        queries: Var,
        memory: Var,
        memory_pos: Option<Var>,
    ) -> Result<Var> {
        let mut x = queries;
        let h = self.ln1.forward(g, bind, x)?;
        let sa = self.self_attn.forward(g, bind, h, h, h)?;
        x = g.add(x, sa)?;

        let h = self.ln2.forward(g, bind, x)?;
        let keys = match memory_pos {
            Some(p) => g.add(memory, p)?,
            None => memory,
        };
        let ca = self.cross_attn.forward(g, bind, h, keys, memory)?;
        x = g.add(x, ca)?;

        let h = self.ln3.forward(g, bind, x)?;
        let ff = self.ffn.forward(g, bind, h)?;
        x = g.add(x, ff)?;

        self.ln_out.forward(g, bind, x)
    }
}

/// Standard sinusoidal positions for `len` rows of width `d`.
pub fn sine_positions(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}
