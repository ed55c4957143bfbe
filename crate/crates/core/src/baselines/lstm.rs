use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SequenceRegressor;
use crate::nn::params::glorot;
use crate::nn::{Bound, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::preprocess::SampleView;
use crate::seed::{Rng, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub width: usize,
    pub hidden: usize,
}

impl LstmConfig {
    pub fn new(width: usize) -> Self {
        Self { width, hidden: 64 }
    }

    pub fn param_count(&self) -> usize {
        let (s, h) = (self.width, self.hidden);
        s * 4 * h + h * 4 * h + 4 * h + h + 1
    }
}

/// Single-layer LSTM (gate order input, forget, cell, output) whose state
/// after the last valid second feeds a dense layer and a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub config: LstmConfig,
    pub store: ParamStore,
    w: ParamId,
    u: ParamId,
    b: ParamId,
    readout: Linear,
}

impl Lstm {
    /// Glorot weights, zero biases except a forget-gate bias of one.
    pub fn new(config: LstmConfig, init: SeedStream) -> Result<Self> {
        if config.width == 0 || config.hidden == 0 {
            return Err(Error::Config("LSTM width and hidden size must be positive".into()));
        }
        let h = config.hidden;
        let mut rng = init.rng();
        let mut store = ParamStore::new();
        let w = store.add("lstm.w", glorot(&mut rng, config.width, 4 * h));
        let u = store.add("lstm.u", glorot(&mut rng, h, 4 * h));
        let b = store.add("lstm.b", Tensor::from_fn(1, 4 * h, |_, j| if (h..2 * h).contains(&j) { 1.0 } else { 0.0 }));
        let readout = Linear::new(&mut store, &mut rng, "lstm.readout", h, 1);
        Ok(Self {
            config,
            store,
            w,
            u,
            b,
            readout,
        })
    }
}

impl SequenceRegressor for Lstm {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn width(&self) -> usize {
        self.config.width
    }

    fn predict_sample(&self, tape: &mut Tape, p: &Bound, x: SampleView<'_>, _training: bool, _rng: &mut Rng) -> Result<Var> {
        if x.width != self.config.width {
            return Err(Error::Shape(format!("sample width {} but LSTM expects {}", x.width, self.config.width)));
        }
        let len = x.mask.iter().take_while(|&&m| m).count();
        if len == 0 {
            return Err(Error::Empty("sample has no valid seconds".into()));
        }
        let h_dim = self.config.hidden;
        let input = tape.constant(Tensor::from_vec(len, x.width, x.values[..len * x.width].to_vec())?);
        let xw = tape.linear(input, p[self.w], p[self.b]);
        let mut h = tape.constant(Tensor::zeros(1, h_dim));
        let mut c = tape.constant(Tensor::zeros(1, h_dim));
        for t in 0..len {
            let xt = tape.rows(xw, t, 1);
            let hu = tape.matmul(h, p[self.u]);
            let g = tape.add(xt, hu);
            let i = tape.slice_cols(g, 0, h_dim);
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(g, h_dim, h_dim);
            let f = tape.sigmoid(f);
            let gg = tape.slice_cols(g, 2 * h_dim, h_dim);
            let gg = tape.tanh(gg);
            let o = tape.slice_cols(g, 3 * h_dim, h_dim);
            let o = tape.sigmoid(o);
            let fc = tape.mul(f, c);
            let ig = tape.mul(i, gg);
            c = tape.add(fc, ig);
            let tc = tape.tanh(c);
            h = tape.mul(o, tc);
        }
        let logit = self.readout.apply(tape, p, h);
        Ok(tape.sigmoid(logit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::predict_batch;
    use crate::par::Parallelism;
    use crate::preprocess::{pad_batch, NormRun};
    use crate::traceio::Matrix;

    #[test]
    fn param_count_and_padding_invariance() {
        let cfg = LstmConfig { width: 3, hidden: 5 };
        let m = Lstm::new(cfg, SeedStream::root(1)).unwrap();
        assert_eq!(m.store.n_scalars(), cfg.param_count());
        let runs = [
            NormRun { app_id: "a".into(), matrix: Matrix::from_fn(3, 4, |r, c| (r + 2 * c) as f64 * 0.1), label: 0.3 },
            NormRun { app_id: "a".into(), matrix: Matrix::from_fn(3, 9, |r, c| (r * c) as f64 * 0.05), label: 0.3 },
        ];
        let b = pad_batch(&runs.iter().collect::<Vec<_>>()).unwrap();
        let p1 = predict_batch(&m, &b, Parallelism::Sequential).unwrap();
        let p2 = predict_batch(&m, &b.padded_to(20), Parallelism::Sequential).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
