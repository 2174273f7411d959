//! Encoder-decoder policy over instTerm-pair nodes.
//!
//! Encoder: a linear projection of the 7 node features followed by `N`
//! layers of `h ← BN(h + MHA(h))`, `h ← BN(h + FF(h))`. The second FF
//! projection has no bias since the batch-norm after it would cancel it.
//! Padded nodes are
//! excluded as attention keys and from batch-norm statistics. Batch-norm
//! statistics are taken over the real nodes of the instance being encoded,
//! in training and inference alike.
//!
//! Decoder: at every step a context `[graph mean ‖ last chosen ‖ first
//! chosen]` (learned placeholders before the first choice) is projected to a
//! query, refined by one multi-head glimpse over the node embeddings, and
//! scored against every node with a single head; scores are clipped with
//! `10·tanh` and visited or padded nodes are masked before the softmax.

use diffcore::{Checkpoint, Scalar, Tape, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decompose::{PadStrategy, RoutingInstance};
use crate::error::{Error, Result};

/// Logit clipping bound `C` in `C·tanh(·)`.
pub const LOGIT_CLIP: f64 = 10.0;
/// Node feature count.
pub const FEATURES: usize = 7;
pub(crate) const NEG_INF: f64 = -1e9;
pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const PER_LAYER: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { dim: 64, heads: 8, layers: 2, ff: 256 }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.ff == 0 {
            return Err(Error::Invalid("model dimensions must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Invalid(format!("heads ({}) must divide dim ({})", self.heads, self.dim)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.dim, self.ff);
        let mut out = vec![("in.w".to_string(), vec![FEATURES, d]), ("in.b".to_string(), vec![d])];
        for l in 0..self.layers {
            let p = |n: &str| format!("enc{l}.{n}");
            out.extend([
                (p("wq"), vec![d, d]),
                (p("wk"), vec![d, d]),
                (p("wv"), vec![d, d]),
                (p("wo"), vec![d, d]),
                (p("bn1.gamma"), vec![d]),
                (p("bn1.beta"), vec![d]),
                (p("ff1.w"), vec![d, f]),
                (p("ff1.b"), vec![f]),
                (p("ff2.w"), vec![f, d]),
                (p("bn2.gamma"), vec![d]),
                (p("bn2.beta"), vec![d]),
            ]);
        }
        out.extend([
            ("dec.ctx".to_string(), vec![3 * d, d]),
            ("dec.first".to_string(), vec![1, d]),
            ("dec.last".to_string(), vec![1, d]),
            ("dec.glimpse.k".to_string(), vec![d, d]),
            ("dec.glimpse.v".to_string(), vec![d, d]),
            ("dec.glimpse.o".to_string(), vec![d, d]),
            ("dec.logit.k".to_string(), vec![d, d]),
        ]);
        out
    }

    /// Number of parameter tensors belonging to the encoder.
    pub fn encoder_tensors(&self) -> usize {
        2 + PER_LAYER * self.layers
    }
}

/// All policy weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T> {
    pub dims: ModelDims,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> PolicyParams<T> {
    /// Weights uniform in `±1/√d`, batch-norm scales one, shifts and
    /// biases zero.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (dims.dim as f64).sqrt();
        let tensors = dims
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with("gamma") {
                    Tensor::ones(shape)
                } else if name.ends_with(".b") || name.ends_with("beta") {
                    Tensor::zeros(shape)
                } else {
                    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-s..s)))
                }
            })
            .collect();
        Ok(Self { dims, tensors })
    }

    pub fn names(&self) -> Vec<String> {
        self.dims.layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every tensor on `tape`, differentiable iff `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t) } else { tape.constant(t.clone()) })
            .collect();
        Bound { dims: self.dims, vars }
    }

    /// Flattened copy of the first `count` tensors.
    pub fn flatten(&self, count: usize) -> Vec<T> {
        self.tensors[..count].iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Binds the first `count` tensors as slices of `flat` and the rest as
    /// constants, so gradients of `flat` cover those tensors at once.
    pub fn bind_flat<'t>(&self, flat: &Var<'t, T>, count: usize) -> Result<Bound<'t, T>> {
        let tape = flat.tape();
        let mut offset = 0;
        let mut vars = Vec::with_capacity(self.tensors.len());
        for (k, t) in self.tensors.iter().enumerate() {
            if k < count {
                let idx: Vec<usize> = (offset..offset + t.numel()).collect();
                vars.push(flat.gather(&idx, t.shape())?);
                offset += t.numel();
            } else {
                vars.push(tape.constant(t.clone()));
            }
        }
        Ok(Bound { dims: self.dims, vars })
    }

    pub fn to_checkpoint(&self, meta: Vec<(String, String)>) -> Checkpoint<T> {
        let mut all = vec![
            ("dim".to_string(), self.dims.dim.to_string()),
            ("heads".to_string(), self.dims.heads.to_string()),
            ("layers".to_string(), self.dims.layers.to_string()),
            ("ff".to_string(), self.dims.ff.to_string()),
        ];
        all.extend(meta);
        Checkpoint { meta: all, tensors: self.names().into_iter().zip(self.tensors.iter().cloned()).collect() }
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            ck.meta(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing or malformed meta {k:?}")))
        };
        let dims = ModelDims { dim: get("dim")?, heads: get("heads")?, layers: get("layers")?, ff: get("ff")? };
        dims.validate()?;
        let tensors = dims
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let t = ck
                    .tensor(&name)
                    .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::CheckpointMismatch(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
                Ok(t.clone())
            })
            .collect::<Result<_>>()?;
        Ok(Self { dims, tensors })
    }
}

/// Parameters placed on a tape.
pub struct Bound<'t, T> {
    pub dims: ModelDims,
    pub vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    fn layer(&self, l: usize, k: usize) -> &Var<'t, T> {
        &self.vars[2 + PER_LAYER * l + k]
    }

    fn dec(&self, k: usize) -> &Var<'t, T> {
        &self.vars[2 + PER_LAYER * self.dims.layers + k]
    }
}

/// Scaled node features of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<T> {
    /// `[n_max, 7]`.
    pub nodes: Tensor<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> Features<T> {
    pub fn n(&self) -> usize {
        self.mask.len()
    }

    pub fn real(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.mask[i]).collect()
    }
}

/// x coordinates over the width, y over the height, the net index over
/// `1 + max net id`. Empty pads stay all-zero.
pub fn featurize<T: Scalar>(inst: &RoutingInstance) -> Features<T> {
    let w = inst.width.max(1) as f64;
    let h = inst.height.max(1) as f64;
    let l = 1.0 + inst.max_net as f64;
    let scale = [w, w, h, w, w, h, l];
    let data = inst
        .nodes
        .iter()
        .zip(&inst.mask)
        .flat_map(|(f, real)| {
            let zero = !real && inst.pad == PadStrategy::Empty;
            (0..FEATURES).map(move |k| if zero { T::zero() } else { T::lit(f[k] as f64 / scale[k]) })
        })
        .collect();
    Features { nodes: Tensor::new([inst.n_max, FEATURES], data).expect("n_max × 7"), mask: inst.mask.clone() }
}

fn key_mask(excluded: &[bool]) -> (Vec<bool>, [usize; 2]) {
    (excluded.to_vec(), [1, excluded.len()])
}

/// Multi-head attention of `q_rows` over the rows of `k`/`v` with
/// `excluded` keys masked out. Inputs are already projected; output is
/// the concatenation of heads (before the output projection).
fn attend<'t, T: Scalar>(
    q: &Var<'t, T>,
    k: &Var<'t, T>,
    v: &Var<'t, T>,
    heads: usize,
    excluded: &[bool],
) -> Result<Var<'t, T>> {
    let d = q.shape()[1];
    let dk = d / heads;
    let scale = T::one() / T::lit(dk as f64).sqrt();
    let (mask, mshape) = key_mask(excluded);
    let any_masked = excluded.iter().any(|e| *e);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * dk, (h + 1) * dk);
        let qh = q.slice_cols(a, b)?;
        let kh = k.slice_cols(a, b)?;
        let vh = v.slice_cols(a, b)?;
        let mut s = qh.matmul(&kh.transpose()?)?.mul_scalar(scale);
        if any_masked {
            s = s.masked_fill(&mask, &mshape, T::lit(NEG_INF))?;
        }
        outs.push(s.softmax().matmul(&vh)?);
    }
    if outs.len() == 1 {
        Ok(outs.pop().expect("one head"))
    } else {
        Ok(Var::concat_cols(&outs)?)
    }
}

/// Node embeddings `[n_max, d]`.
pub fn encode<'t, T: Scalar>(bound: &Bound<'t, T>, feats: &Features<T>) -> Result<Var<'t, T>> {
    encode_observed(bound, feats, &mut |_| {})
}

/// Smallest `|z|` over every feed-forward pre-activation `z` of the
/// encoder (all rows). Finite-difference checks are only meaningful when
/// the step cannot carry a ReLU across its kink.
pub fn relu_margin<T: Scalar>(params: &PolicyParams<T>, feats: &Features<T>) -> Result<T> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let mut margin = T::infinity();
    encode_observed(&bound, feats, &mut |z| {
        margin = z.value().data().iter().fold(margin, |m, v| m.min(v.abs()));
    })?;
    Ok(margin)
}

fn encode_observed<'t, T: Scalar>(
    bound: &Bound<'t, T>,
    feats: &Features<T>,
    on_pre_activation: &mut dyn FnMut(&Var<'t, T>),
) -> Result<Var<'t, T>> {
    let tape = bound.vars[0].tape();
    let x = tape.constant(feats.nodes.clone());
    let pads: Vec<bool> = feats.mask.iter().map(|m| !m).collect();
    let eps = T::lit(BN_EPS);
    let mut h = x.matmul(&bound.vars[0])?.add(&bound.vars[1])?;
    for l in 0..bound.dims.layers {
        let q = h.matmul(bound.layer(l, 0))?;
        let k = h.matmul(bound.layer(l, 1))?;
        let v = h.matmul(bound.layer(l, 2))?;
        let mha = attend(&q, &k, &v, bound.dims.heads, &pads)?.matmul(bound.layer(l, 3))?;
        h = h
            .add(&mha)?
            .batch_norm_train(bound.layer(l, 4), bound.layer(l, 5), Some(&feats.mask), eps)?
            .0;
        let z = h.matmul(bound.layer(l, 6))?.add(bound.layer(l, 7))?;
        on_pre_activation(&z);
        let ff = z.relu().matmul(bound.layer(l, 8))?;
        h = h
            .add(&ff)?
            .batch_norm_train(bound.layer(l, 9), bound.layer(l, 10), Some(&feats.mask), eps)?
            .0;
    }
    Ok(h)
}

/// Per-instance decoder state computed once from the embeddings.
pub struct DecoderCache<'t, T> {
    emb: Var<'t, T>,
    graph: Var<'t, T>,
    glimpse_k: Var<'t, T>,
    glimpse_v: Var<'t, T>,
    logit_kt: Var<'t, T>,
}

pub fn decoder_cache<'t, T: Scalar>(
    bound: &Bound<'t, T>,
    emb: Var<'t, T>,
    feats: &Features<T>,
) -> Result<DecoderCache<'t, T>> {
    let graph = emb.mean_rows(&feats.real())?;
    Ok(DecoderCache {
        graph,
        glimpse_k: emb.matmul(bound.dec(3))?,
        glimpse_v: emb.matmul(bound.dec(4))?,
        logit_kt: emb.matmul(bound.dec(6))?.transpose()?,
        emb,
    })
}

/// Log-probabilities `[1, n_max]` of the next choice given the nodes
/// chosen so far. Masked entries are `≈ −1e9` so their probability is 0.
pub fn decode_step<'t, T: Scalar>(
    bound: &Bound<'t, T>,
    cache: &DecoderCache<'t, T>,
    chosen: &[usize],
    mask: &[bool],
) -> Result<Var<'t, T>> {
    let n = mask.len();
    let mut excluded: Vec<bool> = mask.iter().map(|m| !m).collect();
    for &c in chosen {
        excluded[c] = true;
    }
    if excluded.iter().all(|e| *e) {
        return Err(Error::Invalid("no selectable node left".into()));
    }
    let (first, last) = match (chosen.first(), chosen.last()) {
        (Some(&f), Some(&l)) => (cache.emb.index_rows(&[f])?, cache.emb.index_rows(&[l])?),
        _ => (*bound.dec(1), *bound.dec(2)),
    };
    let ctx = Var::concat_cols(&[cache.graph, last, first])?;
    let q = ctx.matmul(bound.dec(0))?;
    let g = attend(&q, &cache.glimpse_k, &cache.glimpse_v, bound.dims.heads, &excluded)?.matmul(bound.dec(5))?;
    let d = bound.dims.dim;
    let clip = T::lit(LOGIT_CLIP);
    let logits = g
        .matmul(&cache.logit_kt)?
        .mul_scalar(T::one() / T::lit(d as f64).sqrt())
        .tanh()
        .mul_scalar(clip)
        .masked_fill(&excluded, &[1, n], T::lit(NEG_INF))?;
    Ok(logits.log_softmax())
}

/// How the decoder picks each node.
pub enum Decode<'r> {
    Greedy,
    Sample(&'r mut ChaCha8Rng),
    /// Replays a fixed order (indices into real pairs).
    Forced(&'r [usize]),
}

/// Result of decoding one instance on a tape.
pub struct Decoded<'t, T> {
    /// Order over real pair indices.
    pub order: Vec<usize>,
    /// Sum of chosen log-probabilities, `[1, 1]`.
    pub log_prob: Var<'t, T>,
    /// Probability vector of every step, when requested.
    pub step_probs: Vec<Vec<T>>,
}

fn sample_index<T: Scalar>(probs: &[T], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

fn argmax<T: Scalar>(v: &[T], allowed: impl Fn(usize) -> bool) -> usize {
    let mut best: Option<usize> = None;
    for (i, x) in v.iter().enumerate() {
        if allowed(i) && best.is_none_or(|b| *x > v[b]) {
            best = Some(i);
        }
    }
    best.expect("at least one selectable node")
}

/// Runs the decoder until every real node is chosen.
pub fn decode<'t, T: Scalar>(
    bound: &Bound<'t, T>,
    feats: &Features<T>,
    mut mode: Decode<'_>,
    record: bool,
) -> Result<Decoded<'t, T>> {
    let real = feats.real();
    if real.is_empty() {
        return Err(Error::Invalid("instance has no real pairs to sequence".into()));
    }
    // real pairs occupy the leading slots
    debug_assert!(real.iter().enumerate().all(|(i, r)| i == *r));
    if let Decode::Forced(order) = &mode {
        crate::router::check_order(order, real.len())?;
    }
    let emb = encode(bound, feats)?;
    let cache = decoder_cache(bound, emb, feats)?;
    let mut chosen: Vec<usize> = Vec::with_capacity(real.len());
    let mut terms = Vec::with_capacity(real.len());
    let mut step_probs = Vec::new();
    for step in 0..real.len() {
        let lp = decode_step(bound, &cache, &chosen, &feats.mask)?;
        let (pick, probs) = {
            let v = lp.value();
            let probs: Vec<T> = v.data().iter().map(|x| x.exp()).collect();
            let pick = match &mut mode {
                Decode::Greedy => argmax(v.data(), |i| feats.mask[i] && !chosen.contains(&i)),
                Decode::Sample(rng) => sample_index(&probs, rng),
                Decode::Forced(order) => order[step],
            };
            (pick, probs)
        };
        if !feats.mask[pick] || chosen.contains(&pick) {
            return Err(Error::Invalid(format!("decoder selected unavailable node {pick}")));
        }
        if record {
            step_probs.push(probs);
        }
        terms.push(lp.pick(0, pick)?);
        chosen.push(pick);
    }
    let log_prob = if terms.len() == 1 { terms[0] } else { Var::concat_cols(&terms)?.sum() };
    Ok(Decoded { order: chosen, log_prob, step_probs })
}

/// First-step probabilities (no gradient), mainly for inspection.
pub fn step_probabilities<T: Scalar>(params: &PolicyParams<T>, feats: &Features<T>, chosen: &[usize]) -> Result<Vec<T>> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let emb = encode(&bound, feats)?;
    let cache = decoder_cache(&bound, emb, feats)?;
    let lp = decode_step(&bound, &cache, chosen, &feats.mask)?;
    let out = lp.value().data().iter().map(|x| x.exp()).collect();
    Ok(out)
}

/// Checks an instance against the model's expectations.
pub fn check_instance(inst: &RoutingInstance, n_max: usize) -> Result<()> {
    if inst.n_max != n_max {
        return Err(Error::CheckpointMismatch(format!(
            "instance {} is padded to {} nodes but the policy expects {n_max}",
            inst.name, inst.n_max
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims { dim: 8, heads: 2, layers: 1, ff: 16 }
    }

    fn feats(n: usize, real: usize) -> Features<f64> {
        Features {
            nodes: Tensor::from_fn([n, FEATURES], |i| if i / FEATURES < real { ((i * 37 % 11) as f64) / 11.0 } else { 0.0 }),
            mask: (0..n).map(|i| i < real).collect(),
        }
    }

    #[test]
    fn layout_matches_init() {
        let p = PolicyParams::<f64>::init(dims(), 0).unwrap();
        assert_eq!(p.tensors.len(), 2 + PER_LAYER + 7);
        for (t, (_, s)) in p.tensors.iter().zip(dims().layout()) {
            assert_eq!(t.shape(), s.as_slice());
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        assert!(ModelDims { dim: 10, heads: 4, layers: 1, ff: 4 }.validate().is_err());
    }

    #[test]
    fn single_node_encodes() {
        let p = PolicyParams::<f64>::init(dims(), 1).unwrap();
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let e = encode(&b, &feats(1, 1)).unwrap();
        assert_eq!(e.shape(), vec![1, 8]);
        assert!(e.value().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn step_distribution_is_valid() {
        let p = PolicyParams::<f64>::init(dims(), 2).unwrap();
        let f = feats(6, 4);
        let probs = step_probabilities(&p, &f, &[1]).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(probs[1], 0.0);
        assert_eq!(probs[4], 0.0);
        assert_eq!(probs[5], 0.0);
        let forced = step_probabilities(&p, &f, &[0, 1, 3]).unwrap();
        assert_eq!(forced[2], 1.0);
    }

    #[test]
    fn nothing_left_is_an_error() {
        let p = PolicyParams::<f64>::init(dims(), 2).unwrap();
        assert!(step_probabilities(&p, &feats(3, 2), &[0, 1]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = PolicyParams::<f64>::init(dims(), 3).unwrap();
        let ck = p.to_checkpoint(vec![("n_max".into(), "6".into())]);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::<f64>::read_from(buf.as_slice()).unwrap();
        assert_eq!(PolicyParams::from_checkpoint(&back).unwrap(), p);
        assert_eq!(back.meta("n_max"), Some("6"));
    }
}
