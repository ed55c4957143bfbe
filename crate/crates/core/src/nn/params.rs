//! Named parameter storage and its on-disk form.
//!
//! Parameter files are JSON:
//!
//! ```text
//! { "format": "cloudformer-params", "version": 1,
//!   "params": [ { "name": "...", "shape": [rows, cols], "values": [...] }, ... ] }
//! ```
//!
//! Values are written in shortest round-trip form, so a save/load cycle is
//! exact and the same parameters always serialize to the same bytes.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

pub const PARAMS_FORMAT: &str = "cloudformer-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    version: u32,
    params: Vec<NamedParam>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Zero-filled buffers shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    /// Puts every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.tensors
                .iter()
                .enumerate()
                .map(|(i, t)| tape.param(i, t.clone()))
                .collect(),
        )
    }

    pub fn to_named(&self) -> Vec<NamedParam> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| NamedParam {
                name: n.clone(),
                shape: t.shape(),
                values: t.data().to_vec(),
            })
            .collect()
    }

    /// Overwrites values from `named`, which must list exactly the same
    /// parameters with the same shapes.
    pub fn load_named(&mut self, named: &[NamedParam]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                named.len(),
                self.len()
            )));
        }
        for (i, p) in named.iter().enumerate() {
            if p.name != self.names[i] {
                return Err(Error::Checkpoint(format!(
                    "parameter {i} is {:?}, expected {:?}",
                    p.name, self.names[i]
                )));
            }
            if p.shape != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    p.shape,
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = Tensor::from_vec(p.shape[0], p.shape[1], p.values.clone())
                .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", p.name)))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ParamsFile {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            params: self.to_named(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Reads a parameter file into a store with the same layout as `self`.
    pub fn load_json(&mut self, text: &str) -> Result<()> {
        let file: ParamsFile = serde_json::from_str(text)?;
        if file.format != PARAMS_FORMAT || file.version != PARAMS_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported parameter file {} v{}",
                file.format, file.version
            )));
        }
        self.load_named(&file.params)
    }
}

/// Parameter leaves of one tape, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Glorot-uniform `fan_in x fan_out` weights.
pub fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a))
}

pub fn normal(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let n = Normal::new(0.0, std).expect("valid std");
    Tensor::from_fn(rows, cols, |_, _| n.sample(rng))
}

/// Dense layer `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, fan_in, fan_out));
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Self { w, b }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        tape.linear(x, p[self.w], p[self.b])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(1, d, 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, d)),
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        tape.layer_norm(x, p[self.gain], p[self.bias], super::kernels::LAYER_NORM_EPS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedStream;

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = SeedStream::root(4).rng();
        let mut store = ParamStore::new();
        Linear::new(&mut store, &mut rng, "fc", 3, 5);
        LayerNormParams::new(&mut store, "ln", 5);
        let text = store.to_json().unwrap();
        let mut other = store.clone();
        other.tensors_mut()[0].data_mut()[0] = 42.0;
        other.load_json(&text).unwrap();
        assert_eq!(other, store);
        assert_eq!(other.to_json().unwrap(), text);
        assert_eq!(store.n_scalars(), 15 + 5 + 10);
    }

    #[test]
    fn mismatched_layout_is_rejected() {
        let mut rng = SeedStream::root(4).rng();
        let mut a = ParamStore::new();
        Linear::new(&mut a, &mut rng, "fc", 3, 5);
        let mut b = ParamStore::new();
        Linear::new(&mut b, &mut rng, "fc", 3, 4);
        assert!(matches!(b.load_json(&a.to_json().unwrap()), Err(Error::Checkpoint(_))));
    }
}
