//! Transformer building blocks on top of the tape.

use rand::Rng as _;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Sinusoidal position table, `n_pos x d`:
/// `PE(p, 2i) = sin(p / 10000^(2i/d))`, `PE(p, 2i+1) = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(n_pos: usize, d: usize) -> Result<Tensor> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding width must be even and >= 2, got {d}")));
    }
    Ok(Tensor::from_fn(n_pos, d, |pos, j| {
        let i2 = (j - j % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Which keys each query may attend to (`true` = attend).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n_queries: usize,
    n_keys: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn new(n_queries: usize, n_keys: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != n_queries * n_keys {
            return Err(Error::Shape(format!(
                "mask needs {} entries, got {}",
                n_queries * n_keys,
                allow.len()
            )));
        }
        if let Some(q) = (0..n_queries).find(|&q| !allow[q * n_keys..(q + 1) * n_keys].iter().any(|&a| a)) {
            return Err(Error::Contract(format!("query {q} has every key masked")));
        }
        Ok(Self {
            n_queries,
            n_keys,
            allow,
        })
    }

    /// Every query sees the same set of valid keys.
    pub fn key_padding(n_queries: usize, key_valid: &[bool]) -> Result<Self> {
        let allow = (0..n_queries).flat_map(|_| key_valid.iter().copied()).collect();
        Self::new(n_queries, key_valid.len(), allow)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_queries, self.n_keys)
    }

    pub fn allow(&self) -> &[bool] {
        &self.allow
    }
}

/// Scaled dot-product attention `softmax(Q K^T / sqrt(d)) V`.
/// Returns the output and the attention weights.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, mask: Option<&AttentionMask>) -> Result<(Var, Var)> {
    let ([n, d], [m, dk], [mv, _]) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if d != dk || m != mv {
        return Err(Error::Shape(format!("attention Q {n}x{d}, K {m}x{dk}, V rows {mv}")));
    }
    if let Some(mk) = mask {
        if mk.shape() != (n, m) {
            return Err(Error::Shape(format!("mask {:?} for {n} queries and {m} keys", mk.shape())));
        }
    }
    let scores = tape.matmul_nt(q, k);
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = tape.masked_softmax(scores, mask.map(AttentionMask::allow));
    let out = tape.matmul(weights, v);
    Ok((out, weights))
}

/// [`attention`] on plain tensors.
pub fn attention_values(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&AttentionMask>) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let (out, w) = attention(&mut tape, q, k, v, mask)?;
    Ok((tape.value(out).clone(), tape.value(w).clone()))
}

/// Projection weights of one multi-head attention layer, bound on a tape.
/// `wq`, `wk`, `wv` are `d_model x heads*head_size`; `wo` is
/// `heads*head_size x d_model`; biases are row vectors.
#[derive(Debug, Clone, Copy)]
pub struct MhaVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head attention: project, attend per head, concatenate, project.
pub fn multi_head_attention(
    tape: &mut Tape,
    x_q: Var,
    x_kv: Var,
    p: &MhaVars,
    heads: usize,
    head_size: usize,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let inner = heads * head_size;
    let d = tape.shape(x_q)[1];
    if tape.shape(x_kv)[1] != d {
        return Err(Error::Shape(format!("query width {d}, key/value width {}", tape.shape(x_kv)[1])));
    }
    for (name, w, want) in [
        ("W_q", p.wq, [d, inner]),
        ("W_k", p.wk, [d, inner]),
        ("W_v", p.wv, [d, inner]),
        ("W_o", p.wo, [inner, d]),
    ] {
        if tape.shape(w) != want {
            return Err(Error::Shape(format!("{name} is {:?}, expected {want:?}", tape.shape(w))));
        }
    }
    let q = tape.linear(x_q, p.wq, p.bq);
    let k = tape.linear(x_kv, p.wk, p.bk);
    let v = tape.linear(x_kv, p.wv, p.bv);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_size, head_size);
        let kh = tape.slice_cols(k, h * head_size, head_size);
        let vh = tape.slice_cols(v, h * head_size, head_size);
        outs.push(attention(tape, qh, kh, vh, mask)?.0);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    Ok(tape.linear(cat, p.wo, p.bo))
}

/// Per-row layer normalization with shape checks.
pub fn layer_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
    let d = tape.shape(x)[1];
    if d == 0 {
        return Err(Error::Shape("layer norm over zero features".into()));
    }
    if tape.shape(gain) != [1, d] || tape.shape(bias) != [1, d] {
        return Err(Error::Shape(format!("layer norm gain/bias must be 1x{d}")));
    }
    Ok(tape.layer_norm(x, gain, bias, eps))
}

/// Inverted dropout: in training, each value is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; otherwise identity.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let factors = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Ok(tape.dropout_mask(x, factors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedStream;

    #[test]
    fn pe_values() {
        let pe = positional_encoding(3, 6).unwrap();
        assert_eq!(pe.get(0, 0), 0.0);
        assert_eq!(pe.get(0, 1), 1.0);
        assert!((pe.get(1, 0) - 0.841_471).abs() < 1e-6);
        assert!(positional_encoding(3, 5).is_err());
        assert!(positional_encoding(3, 0).is_err());
    }

    #[test]
    fn singleton_attention() {
        let v = Tensor::row_vector(vec![3.0, -1.0]);
        let (out, w) = attention_values(&Tensor::row_vector(vec![0.2, 0.1]), &Tensor::row_vector(vec![5.0, 1.0]), &v, None).unwrap();
        assert_eq!(w.item(), 1.0);
        assert_eq!(out, v);
    }

    #[test]
    fn identical_keys_average_values() {
        let k = Tensor::from_vec(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let v = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 5.0, 6.0, 7.0]).unwrap();
        let (out, w) = attention_values(&Tensor::row_vector(vec![0.3, -0.7]), &k, &v, None).unwrap();
        assert_eq!(w.data(), &[0.5, 0.5]);
        assert_eq!(out.data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn scaled_logits_example() {
        // q.k = (1, 0), d = 2 -> softmax(1/sqrt 2, 0)
        let q = Tensor::row_vector(vec![1.0, 0.0]);
        let k = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (_, w) = attention_values(&q, &k, &Tensor::identity(2), None).unwrap();
        assert!((w.get(0, 0) - 0.669_761_549_3).abs() < 1e-9);
        assert!((w.get(0, 1) - 0.330_238_450_7).abs() < 1e-9);
    }

    #[test]
    fn fully_masked_row_is_contract_error() {
        assert!(matches!(AttentionMask::new(2, 2, vec![true, false, false, false]), Err(Error::Contract(_))));
        assert!(AttentionMask::key_padding(3, &[false, false]).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = SeedStream::root(0).rng();
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(1, 4, 2.0));
        assert_eq!(dropout(&mut t, x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut t, x, 0.4, false, &mut rng).unwrap(), x);
        assert!(dropout(&mut t, x, 1.0, true, &mut rng).is_err());
        assert!(dropout(&mut t, x, -0.1, true, &mut rng).is_err());
    }
}
