//! The dual-branch CloudFormer network.
//!
//! * Temporal branch: per-second dense projection with ReLU, a learnable
//!   class token at position 0, sinusoidal positions, then encoder blocks
//!   with key-padding masked self-attention.
//! * System branch: masked time-mean per metric, a width-1 projection shared
//!   by all metric tokens (plus optional per-metric identity embeddings), a
//!   class token, then unmasked encoder blocks. No positional encoding.
//! * Head: class embeddings concatenated, dense + Swish, layer norm,
//!   dropout, dense to one logit, sigmoid.
//!
//! Encoder blocks are post-norm: `x = LN(x + Drop(MHA(x)))`,
//! `x = LN(x + Drop(FFN(x)))` with a ReLU feed-forward.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::nn::params::{normal, NamedParam};
use crate::nn::{
    dropout, multi_head_attention, positional_encoding, AttentionMask, Bound, LayerNormParams,
    Linear, MhaVars, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::par::{map_range, Parallelism};
use crate::preprocess::{Batch, NormStats, SampleView};
use crate::seed::{Rng, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    TemporalOnly,
    SystemOnly,
}

impl Variant {
    pub fn has_temporal(self) -> bool {
        self != Variant::SystemOnly
    }

    pub fn has_system(self) -> bool {
        self != Variant::TemporalOnly
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Variant::Full),
            "temporal" | "temporal_only" => Some(Variant::TemporalOnly),
            "system" | "system_only" => Some(Variant::SystemOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudFormerConfig {
    /// Number of model input columns (206 for the full schema).
    pub width: usize,
    pub d_temporal: usize,
    pub d_system: usize,
    pub blocks_temporal: usize,
    pub blocks_system: usize,
    pub heads: usize,
    pub head_size: usize,
    pub ffn_dim: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub identity_embeddings: bool,
}

impl CloudFormerConfig {
    /// The full-size configuration: d = 64, four blocks per branch, four
    /// heads of size 16, FFN width 256, dropout 0.4.
    pub fn large(width: usize) -> Self {
        Self {
            width,
            d_temporal: 64,
            d_system: 64,
            blocks_temporal: 4,
            blocks_system: 4,
            heads: 4,
            head_size: 16,
            ffn_dim: 256,
            head_hidden: 64,
            dropout: 0.4,
            variant: Variant::Full,
            identity_embeddings: true,
        }
    }

    /// A reduced configuration that trains in minutes on one CPU core. Dropout
/// is off: at this size the model underfits rather than overfits.
    pub fn desk(width: usize) -> Self {
        Self {
            width,
            d_temporal: 16,
            d_system: 16,
            blocks_temporal: 1,
            blocks_system: 1,
            heads: 2,
            head_size: 8,
            ffn_dim: 32,
            head_hidden: 16,
            dropout: 0.0,
            variant: Variant::Full,
            identity_embeddings: true,
        }
    }

    /// The gradient-check configuration (d = 8, one block per branch).
    pub fn tiny(width: usize) -> Self {
        Self {
            width,
            d_temporal: 8,
            d_system: 8,
            blocks_temporal: 1,
            blocks_system: 1,
            heads: 2,
            head_size: 4,
            ffn_dim: 16,
            head_hidden: 8,
            dropout: 0.0,
            variant: Variant::Full,
            identity_embeddings: true,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 {
            return bad("model width must be positive".into());
        }
        if self.heads == 0 || self.head_size == 0 {
            return bad("heads and head_size must be positive".into());
        }
        if self.variant.has_temporal() && (self.d_temporal < 2 || !self.d_temporal.is_multiple_of(2)) {
            return bad(format!("d_temporal must be even and >= 2, got {}", self.d_temporal));
        }
        if self.variant.has_system() && self.d_system == 0 {
            return bad("d_system must be positive".into());
        }
        if self.ffn_dim == 0 || self.head_hidden == 0 {
            return bad("ffn_dim and head_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn head_input(&self) -> usize {
        match self.variant {
            Variant::Full => self.d_temporal + self.d_system,
            Variant::TemporalOnly => self.d_temporal,
            Variant::SystemOnly => self.d_system,
        }
    }

    fn block_params(&self, d: usize) -> usize {
        let inner = self.heads * self.head_size;
        3 * (d * inner + inner) + (inner * d + d) + 2 * d + (d * self.ffn_dim + self.ffn_dim) + (self.ffn_dim * d + d) + 2 * d
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        if self.variant.has_temporal() {
            let d = self.d_temporal;
            n += self.width * d + d + d + self.blocks_temporal * self.block_params(d);
        }
        if self.variant.has_system() {
            let d = self.d_system;
            n += 2 * d + d + self.blocks_system * self.block_params(d);
            if self.identity_embeddings {
                n += self.width * d;
            }
        }
        let (i, h) = (self.head_input(), self.head_hidden);
        n + i * h + h + 2 * h + h + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhaParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl MhaParams {
    fn bind(&self, p: &Bound) -> MhaVars {
        MhaVars {
            wq: p[self.q.w],
            bq: p[self.q.b],
            wk: p[self.k.w],
            bk: p[self.k.b],
            wv: p[self.v.w],
            bv: p[self.v.b],
            wo: p[self.o.w],
            bo: p[self.o.b],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub attn: MhaParams,
    pub ln1: LayerNormParams,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNormParams,
}

impl EncoderBlock {
    fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, d: usize, cfg: &CloudFormerConfig) -> Self {
        let inner = cfg.heads * cfg.head_size;
        Self {
            attn: MhaParams {
                q: Linear::new(store, rng, &format!("{name}.attn.q"), d, inner),
                k: Linear::new(store, rng, &format!("{name}.attn.k"), d, inner),
                v: Linear::new(store, rng, &format!("{name}.attn.v"), d, inner),
                o: Linear::new(store, rng, &format!("{name}.attn.o"), inner, d),
            },
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), d),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), d, cfg.ffn_dim),
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), cfg.ffn_dim, d),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), d),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        mask: Option<&AttentionMask>,
        cfg: &CloudFormerConfig,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        let a = multi_head_attention(tape, x, x, &self.attn.bind(p), cfg.heads, cfg.head_size, mask)?;
        let a = dropout(tape, a, cfg.dropout, training, rng)?;
        let x = tape.add(x, a);
        let x = self.ln1.apply(tape, p, x);
        let f = self.ff1.apply(tape, p, x);
        let f = tape.relu(f);
        let f = self.ff2.apply(tape, p, f);
        let f = dropout(tape, f, cfg.dropout, training, rng)?;
        let x = tape.add(x, f);
        Ok(self.ln2.apply(tape, p, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalBranch {
    pub input: Linear,
    pub cls: ParamId,
    pub blocks: Vec<EncoderBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemBranch {
    pub proj: Linear,
    pub identity: Option<ParamId>,
    pub cls: ParamId,
    pub blocks: Vec<EncoderBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    pub fc1: Linear,
    pub ln: LayerNormParams,
    pub fc2: Linear,
}

/// A model that maps one (padded, masked) sample to a scalar prediction on a tape.
pub trait SequenceRegressor: Sync {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Model input width the regressor was built for.
    fn width(&self) -> usize;
    /// A `1 x 1` prediction in `(0, 1)`.
    fn predict_sample(&self, tape: &mut Tape, p: &Bound, x: SampleView<'_>, training: bool, rng: &mut Rng) -> Result<Var>;
}

/// Inference-mode predictions for every sample of `batch`, one tape per
/// sample, evaluated in parallel.
pub fn predict_batch<M: SequenceRegressor + ?Sized>(model: &M, batch: &Batch, par: Parallelism) -> Result<Vec<f64>> {
    if batch.width != model.width() {
        return Err(Error::Shape(format!("batch width {} but model expects {}", batch.width, model.width())));
    }
    let mut preds = map_range(par, batch.len(), |b| {
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let mut rng = SeedStream::root(0).rng();
        let y = model.predict_sample(&mut tape, &p, batch.sample(b), false, &mut rng)?;
        tape.check_finite()?;
        Ok(tape.value(y).item())
    });
    preds.drain(..).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudFormer {
    pub config: CloudFormerConfig,
    pub store: ParamStore,
    pub temporal: Option<TemporalBranch>,
    pub system: Option<SystemBranch>,
    pub head: Head,
}

impl CloudFormer {
    /// Builds and initializes a model. Weights are Glorot-uniform, biases
    /// zero, layer-norm gains one; class tokens and identity embeddings are
    /// small normals. The output layer is scaled down so initial predictions
    /// sit near 0.5.
    pub fn new(config: CloudFormerConfig, init: SeedStream) -> Result<Self> {
        config.validate()?;
        let mut rng = init.rng();
        let mut store = ParamStore::new();
        let temporal = config.variant.has_temporal().then(|| {
            let d = config.d_temporal;
            TemporalBranch {
                input: Linear::new(&mut store, &mut rng, "temporal.input", config.width, d),
                cls: store.add("temporal.cls", normal(&mut rng, 1, d, 0.1)),
                blocks: (0..config.blocks_temporal)
                    .map(|i| EncoderBlock::new(&mut store, &mut rng, &format!("temporal.block{i}"), d, &config))
                    .collect(),
            }
        });
        let system = config.variant.has_system().then(|| {
            let d = config.d_system;
            SystemBranch {
                proj: Linear::new(&mut store, &mut rng, "system.proj", 1, d),
                identity: config
                    .identity_embeddings
                    .then(|| store.add("system.identity", normal(&mut rng, config.width, d, 0.1))),
                cls: store.add("system.cls", normal(&mut rng, 1, d, 0.1)),
                blocks: (0..config.blocks_system)
                    .map(|i| EncoderBlock::new(&mut store, &mut rng, &format!("system.block{i}"), d, &config))
                    .collect(),
            }
        });
        let h = config.head_hidden;
        let head = Head {
            fc1: Linear::new(&mut store, &mut rng, "head.fc1", config.head_input(), h),
            ln: LayerNormParams::new(&mut store, "head.ln", h),
            fc2: Linear::new(&mut store, &mut rng, "head.fc2", h, 1),
        };
        store
            .get_mut(head.fc2.w)
            .data_mut()
            .iter_mut()
            .for_each(|w| *w *= 0.1);
        Ok(Self {
            config,
            store,
            temporal,
            system,
            head,
        })
    }

    fn check_sample(&self, x: &SampleView<'_>) -> Result<()> {
        if x.width != self.config.width {
            return Err(Error::Shape(format!("sample width {} but model expects {}", x.width, self.config.width)));
        }
        if x.t_max == 0 {
            return Err(Error::Shape("sample has no time steps".into()));
        }
        Ok(())
    }

    /// Class-token embedding of the temporal branch, `1 x d_t`.
    pub fn temporal_embedding(&self, tape: &mut Tape, p: &Bound, x: SampleView<'_>, training: bool, rng: &mut Rng) -> Result<Var> {
        let br = self
            .temporal
            .as_ref()
            .ok_or_else(|| Error::Config("model has no temporal branch".into()))?;
        self.check_sample(&x)?;
        let cfg = &self.config;
        let d = cfg.d_temporal;
        let input = tape.constant(Tensor::from_vec(x.t_max, x.width, x.values.to_vec())?);
        let h = br.input.apply(tape, p, input);
        let h = tape.relu(h);
        let tokens = tape.concat_rows(&[p[br.cls], h]);
        let pe = tape.constant(positional_encoding(x.t_max + 1, d)?);
        let mut z = tape.add(tokens, pe);
        let key_valid: Vec<bool> = std::iter::once(true).chain(x.mask.iter().copied()).collect();
        let mask = AttentionMask::key_padding(x.t_max + 1, &key_valid)?;
        for b in &br.blocks {
            z = b.forward(tape, p, z, Some(&mask), cfg, training, rng)?;
        }
        Ok(tape.rows(z, 0, 1))
    }

    /// Class-token embedding of the system branch, `1 x d_s`.
    pub fn system_embedding(&self, tape: &mut Tape, p: &Bound, x: SampleView<'_>, training: bool, rng: &mut Rng) -> Result<Var> {
        let br = self
            .system
            .as_ref()
            .ok_or_else(|| Error::Config("model has no system branch".into()))?;
        self.check_sample(&x)?;
        let cfg = &self.config;
        let pooled = tape.constant(Tensor::from_vec(x.width, 1, x.metric_means()?)?);
        let mut tokens = br.proj.apply(tape, p, pooled);
        if let Some(id) = br.identity {
            tokens = tape.add(tokens, p[id]);
        }
        let mut z = tape.concat_rows(&[p[br.cls], tokens]);
        for b in &br.blocks {
            z = b.forward(tape, p, z, None, cfg, training, rng)?;
        }
        Ok(tape.rows(z, 0, 1))
    }

    fn embeddings(&self, batch: &Batch, training: bool, stream: SeedStream, par: Parallelism, temporal: bool) -> Result<Tensor> {
        let d = if temporal { self.config.d_temporal } else { self.config.d_system };
        let rows = map_range(par, batch.len(), |b| {
            let mut tape = Tape::new();
            let p = self.store.bind(&mut tape);
            let mut rng = stream.at(b as u64).rng();
            let e = if temporal {
                self.temporal_embedding(&mut tape, &p, batch.sample(b), training, &mut rng)?
            } else {
                self.system_embedding(&mut tape, &p, batch.sample(b), training, &mut rng)?
            };
            Ok(tape.value(e).data().to_vec())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Tensor::from_vec(batch.len(), d, rows.concat())
    }

    /// Temporal class embeddings for a batch, `B x d_t`.
    pub fn forward_temporal(&self, batch: &Batch, training: bool, stream: SeedStream, par: Parallelism) -> Result<Tensor> {
        self.embeddings(batch, training, stream, par, true)
    }

    /// System class embeddings for a batch, `B x d_s`.
    pub fn forward_system(&self, batch: &Batch, training: bool, stream: SeedStream, par: Parallelism) -> Result<Tensor> {
        self.embeddings(batch, training, stream, par, false)
    }

    /// Predictions for a batch; `stream` seeds dropout when `training`.
    pub fn forward(&self, batch: &Batch, training: bool, stream: SeedStream, par: Parallelism) -> Result<Vec<f64>> {
        if batch.width != self.config.width {
            return Err(Error::Shape(format!("batch width {} but model expects {}", batch.width, self.config.width)));
        }
        map_range(par, batch.len(), |b| {
            let mut tape = Tape::new();
            let p = self.store.bind(&mut tape);
            let mut rng = stream.at(b as u64).rng();
            let y = self.predict_sample(&mut tape, &p, batch.sample(b), training, &mut rng)?;
            tape.check_finite()?;
            Ok(tape.value(y).item())
        })
        .into_iter()
        .collect()
    }
}

impl SequenceRegressor for CloudFormer {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn width(&self) -> usize {
        self.config.width
    }

    fn predict_sample(&self, tape: &mut Tape, p: &Bound, x: SampleView<'_>, training: bool, rng: &mut Rng) -> Result<Var> {
        let mut parts = Vec::with_capacity(2);
        if self.temporal.is_some() {
            parts.push(self.temporal_embedding(tape, p, x, training, rng)?);
        }
        if self.system.is_some() {
            parts.push(self.system_embedding(tape, p, x, training, rng)?);
        }
        let z = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts) };
        if tape.shape(z)[1] != self.config.head_input() {
            return Err(Error::Shape(format!(
                "head expects {} inputs, branches produced {}",
                self.config.head_input(),
                tape.shape(z)[1]
            )));
        }
        let h = self.head.fc1.apply(tape, p, z);
        let h = tape.swish(h);
        let h = self.head.ln.apply(tape, p, h);
        let h = dropout(tape, h, self.config.dropout, training, rng)?;
        let logit = self.head.fc2.apply(tape, p, h);
        Ok(tape.sigmoid(logit))
    }
}

pub const CHECKPOINT_FORMAT: &str = "cloudformer-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model kind, configuration, parameters, normalization statistics and the
/// schema hash of the data it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub config: C,
    pub schema_hash: String,
    pub norm: NormStats,
    pub params: Vec<NamedParam>,
}

impl<C: Serialize + for<'de> Deserialize<'de>> Checkpoint<C> {
    pub fn new(model: &str, config: C, schema_hash: &str, norm: NormStats, params: &ParamStore) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: model.into(),
            config,
            schema_hash: schema_hash.into(),
            norm,
            params: params.to_named(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        Ok(ck)
    }

    /// Refuses data whose schema differs from the training schema.
    pub fn check_schema(&self, schema_hash: &str) -> Result<()> {
        if self.schema_hash != schema_hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on schema {} but data has schema {}",
                self.schema_hash, schema_hash
            )));
        }
        Ok(())
    }
}

impl Checkpoint<CloudFormerConfig> {
    pub fn restore(&self) -> Result<CloudFormer> {
        let mut m = CloudFormer::new(self.config.clone(), SeedStream::root(0))?;
        m.store.load_named(&self.params)?;
        Ok(m)
    }
}
