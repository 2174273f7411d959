//! Tape-free greedy decoding.
//!
//! Inference needs no gradients, so this path evaluates the policy on plain
//! buffers and only over the real nodes: padded nodes are masked as
//! attention keys, excluded from batch-norm statistics and never chosen, so
//! they cannot influence the real rows. Every kernel performs the same
//! floating-point operations in the same order as the tape, so the greedy
//! order and its log-probability are bit-for-bit those of the tape decoder.

use diffcore::Scalar;

use super::model::{Features, PolicyParams, BN_EPS, FEATURES, LOGIT_CLIP, NEG_INF, PER_LAYER};
use crate::error::{Error, Result};

/// Row-major `[m, k] × [k, n]` with the tape's loop order (zero left
/// operands skipped).
fn matmul<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * *bv;
            }
        }
    }
    out
}

fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn cols<T: Scalar>(a: &[T], m: usize, n: usize, start: usize, end: usize) -> Vec<T> {
    (0..m).flat_map(|i| a[i * n + start..i * n + end].iter().copied()).collect()
}

/// `a += b` with `b` broadcast over rows when it is a single row.
fn add_assign<T: Scalar>(a: &mut [T], b: &[T]) {
    for row in a.chunks_mut(b.len()) {
        for (x, y) in row.iter_mut().zip(b) {
            *x += *y;
        }
    }
}

fn softmax_rows<T: Scalar>(x: &mut [T], cols: usize, log: bool) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
        let z: T = diffcore::sum(row.iter().map(|v| (*v - max).exp()));
        if log {
            let lz = z.ln();
            row.iter_mut().for_each(|v| *v = *v - max - lz);
        } else {
            row.iter_mut().for_each(|v| *v = (*v - max).exp() / z);
        }
    }
}

/// Multi-head attention of `q` (`[mq, d]`) over `r` keys; `excluded` keys
/// get the tape's `−1e9` fill before the softmax.
fn attend<T: Scalar>(q: &[T], mq: usize, k: &[T], v: &[T], r: usize, d: usize, heads: usize, excluded: &[bool]) -> Vec<T> {
    let dk = d / heads;
    let scale = T::one() / T::lit(dk as f64).sqrt();
    let fill = T::lit(NEG_INF);
    let mut out = vec![T::zero(); mq * d];
    for h in 0..heads {
        let (a, b) = (h * dk, (h + 1) * dk);
        let qh = cols(q, mq, d, a, b);
        let kt = transpose(&cols(k, r, d, a, b), r, dk);
        let vh = cols(v, r, d, a, b);
        let mut s = matmul(&qh, mq, dk, &kt, r);
        for row in s.chunks_mut(r) {
            for (x, e) in row.iter_mut().zip(excluded) {
                *x = if *e { fill } else { *x * scale };
            }
        }
        softmax_rows(&mut s, r, false);
        let o = matmul(&s, mq, r, &vh, dk);
        for i in 0..mq {
            out[i * d + a..i * d + b].copy_from_slice(&o[i * dk..(i + 1) * dk]);
        }
    }
    out
}

/// Batch norm over all `rows` (the real nodes) with affine `g`, `b`.
fn batch_norm<T: Scalar>(x: &mut [T], rows: usize, f: usize, g: &[T], b: &[T]) {
    let mt = T::lit(rows as f64);
    let mut mean = vec![T::zero(); f];
    let mut var = vec![T::zero(); f];
    for r in 0..rows {
        for j in 0..f {
            mean[j] += x[r * f + j];
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / mt);
    for r in 0..rows {
        for j in 0..f {
            let c = x[r * f + j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v = *v / mt);
    let eps = T::lit(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    for r in 0..rows {
        for j in 0..f {
            let i = r * f + j;
            let xhat = (x[i] - mean[j]) * inv_std[j];
            x[i] = g[j] * xhat + b[j];
        }
    }
}

/// Embeddings `[r, d]` of the `r` leading (real) nodes.
fn encode_real<T: Scalar>(params: &PolicyParams<T>, feats: &Features<T>, r: usize) -> Vec<T> {
    let dims = params.dims;
    let (d, ff) = (dims.dim, dims.ff);
    let w = |k: usize| params.tensors[k].data();
    let mut h = matmul(&feats.nodes.data()[..r * FEATURES], r, FEATURES, w(0), d);
    add_assign(&mut h, w(1));
    let none = vec![false; r];
    for l in 0..dims.layers {
        let t = |k: usize| w(2 + PER_LAYER * l + k);
        let q = matmul(&h, r, d, t(0), d);
        let k = matmul(&h, r, d, t(1), d);
        let v = matmul(&h, r, d, t(2), d);
        let mha = matmul(&attend(&q, r, &k, &v, r, d, dims.heads, &none), r, d, t(3), d);
        add_assign(&mut h, &mha);
        batch_norm(&mut h, r, d, t(4), t(5));
        let mut hidden = matmul(&h, r, d, t(6), ff);
        add_assign(&mut hidden, t(7));
        hidden.iter_mut().for_each(|v| *v = if *v > T::zero() { *v } else { T::zero() });
        let out = matmul(&hidden, r, ff, t(8), d);
        add_assign(&mut h, &out);
        batch_norm(&mut h, r, d, t(9), t(10));
    }
    h
}

/// Greedy order over the real nodes and its log-probability, identical to
/// tape decoding with [`super::Decode::Greedy`].
pub fn greedy_decode<T: Scalar>(params: &PolicyParams<T>, feats: &Features<T>) -> Result<(Vec<usize>, T)> {
    let r = feats.real().len();
    if r == 0 {
        return Err(Error::Invalid("instance has no real pairs to sequence".into()));
    }
    if feats.mask[..r].iter().any(|m| !m) {
        return Err(Error::Invalid("real pairs must occupy the leading slots".into()));
    }
    let dims = params.dims;
    let d = dims.dim;
    let dec = |k: usize| params.tensors[2 + PER_LAYER * dims.layers + k].data();
    let emb = encode_real(params, feats, r);

    let mut graph = vec![T::zero(); d];
    for row in emb.chunks(d) {
        for (o, v) in graph.iter_mut().zip(row) {
            *o += *v;
        }
    }
    let inv_r = T::one() / T::lit(r as f64);
    graph.iter_mut().for_each(|v| *v *= inv_r);
    let glimpse_k = matmul(&emb, r, d, dec(3), d);
    let glimpse_v = matmul(&emb, r, d, dec(4), d);
    let logit_kt = transpose(&matmul(&emb, r, d, dec(6), d), r, d);
    let logit_scale = T::one() / T::lit(d as f64).sqrt();
    let clip = T::lit(LOGIT_CLIP);
    let fill = T::lit(NEG_INF);

    let mut excluded = vec![false; r];
    let mut order: Vec<usize> = Vec::with_capacity(r);
    let mut terms: Vec<T> = Vec::with_capacity(r);
    let mut ctx = vec![T::zero(); 3 * d];
    ctx[..d].copy_from_slice(&graph);
    for _ in 0..r {
        match (order.first(), order.last()) {
            (Some(&f), Some(&l)) => {
                ctx[d..2 * d].copy_from_slice(&emb[l * d..(l + 1) * d]);
                ctx[2 * d..].copy_from_slice(&emb[f * d..(f + 1) * d]);
            }
            _ => {
                ctx[d..2 * d].copy_from_slice(dec(2));
                ctx[2 * d..].copy_from_slice(dec(1));
            }
        }
        let q = matmul(&ctx, 1, 3 * d, dec(0), d);
        let g = matmul(&attend(&q, 1, &glimpse_k, &glimpse_v, r, d, dims.heads, &excluded), 1, d, dec(5), d);
        let mut lp = matmul(&g, 1, d, &logit_kt, r);
        for (x, e) in lp.iter_mut().zip(&excluded) {
            *x = if *e { fill } else { (*x * logit_scale).tanh() * clip };
        }
        softmax_rows(&mut lp, r, true);
        let mut best: Option<usize> = None;
        for (i, x) in lp.iter().enumerate() {
            if !excluded[i] && best.is_none_or(|b| *x > lp[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("a node is left at every step");
        excluded[pick] = true;
        terms.push(lp[pick]);
        order.push(pick);
    }
    let log_prob = if terms.len() == 1 { terms[0] } else { diffcore::sum(terms.iter().copied()) };
    Ok((order, log_prob))
}
