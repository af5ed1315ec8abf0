//! The rating network.
//!
//! ```text
//! x [T, input_dim]
//!   -> conv1d(k=3, same) -> layer_norm -> mish                 [T, d_model]
//!   -> num_blocks x { y = x + Mamba2(x); z = y + FFN(y) }       [T, d_model]
//!   -> linear -> mish (per frame) -> mean over T               [mlp_hidden]
//!   -> linear -> sigmoid                                       [output_dim]
//! ```
//!
//! Inside a Mamba-2 layer the input projection yields a gate `z`, a stream
//! that is convolved causally together with `B` and `C`, and one raw step
//! size per head. The stream then runs through the selective scan, is gated
//! by `silu(z)`, RMS-normalized and projected back to `d_model`.

mod checkpoint;
mod config;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diff::{same_padding, DiffError, Graph, Tensor, Var, LAYER_NORM_EPS, RMS_NORM_EPS};
use crate::scalar::Scalar;

pub use checkpoint::{
    read_header, CheckpointError, CheckpointHeader, ModelCheckpoint, TensorEntry, TensorGroup, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::ModelConfig;
pub use params::{parameter_count, BlockIds, ConvIds, HeadIds, Init, Layout, ParamSpec, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("input has {actual} features per frame, model expects {expected}")]
    InputDim { expected: usize, actual: usize },
    #[error("input sequence is empty")]
    EmptySequence,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("parameter set does not match config: {0}")]
    ParameterMismatch(String),
}

/// Parameters registered on one graph, indexed like [`Layout::specs`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps leaves created elsewhere, one per parameter in layout order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl std::ops::Index<usize> for Bound {
    type Output = Var;

    fn index(&self, i: usize) -> &Var {
        &self.0[i]
    }
}

/// Conv front-end, Mamba-2 stack and pooled MLP head.
#[derive(Debug, Clone)]
pub struct MambaRate<T> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<T>,
}

impl<T: Scalar> MambaRate<T> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::with_rng(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng<R: rand::Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = ParamStore::initialize(&layout.specs, rng);
        Ok(Self { config, layout, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        params.check_against(&layout.specs)?;
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    /// Puts every parameter on the tape as a leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.params.tensors().iter().map(|t| g.leaf(t.clone())).collect())
    }

    /// Full network: `[T, input_dim]` to `[output_dim]`, each component in (0, 1).
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var, ModelError> {
        let mut h = self.conv_block(g, p, x)?;
        for i in 0..self.config.num_blocks {
            h = self.mamba2_block(g, p, i, h)?;
        }
        self.head(g, p, h)
    }

    pub fn conv_block(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var, ModelError> {
        let shape = g.value(x).shape();
        let (t, dim) = match *shape {
            [t, d] => (t, d),
            _ => return Err(DiffError::ShapeMismatch(format!("expected [frames, dim], got {shape:?}")).into()),
        };
        if t == 0 {
            return Err(ModelError::EmptySequence);
        }
        if dim != self.config.input_dim {
            return Err(ModelError::InputDim {
                expected: self.config.input_dim,
                actual: dim,
            });
        }
        let c = &self.layout.conv;
        let pad = same_padding(self.config.conv_kernel);
        let h = g.conv1d(x, p[c.weight], p[c.bias], self.config.conv_stride, pad)?;
        let h = g.layer_norm(h, p[c.norm_gain], p[c.norm_bias], T::of(LAYER_NORM_EPS))?;
        Ok(g.mish(h)?)
    }

    /// Mamba-2 layer wrapped in a residual, followed by a residual feedforward.
    pub fn mamba2_block(&self, g: &mut Graph<T>, p: &Bound, index: usize, x: Var) -> Result<Var, ModelError> {
        let b = &self.layout.blocks[index];
        let mixed = self.mamba2_mixer(g, p, b, x)?;
        let y = g.add(x, mixed)?;
        let u = g.matmul(y, p[b.ffn_up_weight])?;
        let u = g.broadcast_add(u, p[b.ffn_up_bias])?;
        let u = g.mish(u)?;
        let u = g.matmul(u, p[b.ffn_down_weight])?;
        let u = g.broadcast_add(u, p[b.ffn_down_bias])?;
        Ok(g.add(y, u)?)
    }

    fn mamba2_mixer(&self, g: &mut Graph<T>, p: &Bound, b: &BlockIds, x: Var) -> Result<Var, ModelError> {
        let cfg = &self.config;
        let (di, n, h) = (cfg.d_inner(), cfg.d_state, cfg.num_heads());
        let proj = g.matmul(x, p[b.in_proj])?;
        let gate = g.slice(proj, 1, 0, di)?;
        let stream = g.slice(proj, 1, di, cfg.conv_dim())?;
        let dt_raw = g.slice(proj, 1, di + cfg.conv_dim(), h)?;

        let stream = g.depthwise_conv1d_causal(stream, p[b.conv_weight], p[b.conv_bias])?;
        let stream = g.silu(stream)?;
        let xs = g.slice(stream, 1, 0, di)?;
        let bm = g.slice(stream, 1, di, n)?;
        let cm = g.slice(stream, 1, di + n, n)?;

        let dt = g.broadcast_add(dt_raw, p[b.dt_bias])?;
        let delta = g.softplus(dt)?;
        let decay = g.exp(p[b.a_log])?;
        let a = g.scale(decay, -T::one())?;

        let y = g.selective_scan(xs, delta, a, bm, cm, p[b.skip])?;
        let gate = g.silu(gate)?;
        let y = g.mul(y, gate)?;
        let y = g.rms_norm(y, p[b.norm_gain], T::of(RMS_NORM_EPS))?;
        Ok(g.matmul(y, p[b.out_proj])?)
    }

    /// Per-frame hidden layer, mean over time, output layer and sigmoid.
    pub fn head(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var, ModelError> {
        let hd = &self.layout.head;
        let h = g.matmul(x, p[hd.hidden_weight])?;
        let h = g.broadcast_add(h, p[hd.hidden_bias])?;
        let h = g.mish(h)?;
        let pooled = g.mean_over_axis(h, 0)?;
        let pooled = g.reshape(pooled, vec![1, self.config.mlp_hidden])?;
        let o = g.matmul(pooled, p[hd.out_weight])?;
        let o = g.broadcast_add(o, p[hd.out_bias])?;
        let o = g.sigmoid(o)?;
        Ok(g.reshape(o, vec![self.config.output_dim])?)
    }

    /// Inference on one `[frames, input_dim]` matrix.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let xv = g.leaf(x.clone());
        let out = self.forward(&mut g, &p, xv)?;
        Ok(g.value(out).data().to_vec())
    }
}
