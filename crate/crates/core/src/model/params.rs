//! Parameter naming, shapes and initialization.

use std::collections::HashMap;

use rand::Rng;

use crate::diff::Tensor;
use crate::model::{ModelConfig, ModelError};
use crate::scalar::Scalar;

/// How a parameter tensor is filled at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
    Ones,
    Zeros,
    /// Inverse softplus of a step size drawn log-uniformly from `[1e-3, 1e-1]`.
    StepBias,
    /// `ln(-a)` for a decay `a ~ U[-1, -0.5]`.
    LogDecay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parameter positions of the convolutional front-end.
#[derive(Debug, Clone)]
pub struct ConvIds {
    pub weight: usize,
    pub bias: usize,
    pub norm_gain: usize,
    pub norm_bias: usize,
}

/// Parameter positions of one Mamba-2 + feedforward block.
#[derive(Debug, Clone)]
pub struct BlockIds {
    pub in_proj: usize,
    pub conv_weight: usize,
    pub conv_bias: usize,
    pub dt_bias: usize,
    pub a_log: usize,
    pub skip: usize,
    pub norm_gain: usize,
    pub out_proj: usize,
    pub ffn_up_weight: usize,
    pub ffn_up_bias: usize,
    pub ffn_down_weight: usize,
    pub ffn_down_bias: usize,
}

#[derive(Debug, Clone)]
pub struct HeadIds {
    pub hidden_weight: usize,
    pub hidden_bias: usize,
    pub out_weight: usize,
    pub out_bias: usize,
}

/// Where each parameter lives in the flat, ordered parameter list.
#[derive(Debug, Clone)]
pub struct Layout {
    pub conv: ConvIds,
    pub blocks: Vec<BlockIds>,
    pub head: HeadIds,
    pub specs: Vec<ParamSpec>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut specs = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init| {
            specs.push(ParamSpec { name, shape, init });
            specs.len() - 1
        };
        let dm = cfg.d_model;
        let conv_fan_in = cfg.input_dim * cfg.conv_kernel;
        let conv = ConvIds {
            weight: add("conv.weight".into(), vec![dm, cfg.input_dim, cfg.conv_kernel], Init::FanIn(conv_fan_in)),
            bias: add("conv.bias".into(), vec![dm], Init::FanIn(conv_fan_in)),
            norm_gain: add("conv.norm.gain".into(), vec![dm], Init::Ones),
            norm_bias: add("conv.norm.bias".into(), vec![dm], Init::Zeros),
        };
        let (di, h, cd, ffn) = (cfg.d_inner(), cfg.num_heads(), cfg.conv_dim(), cfg.ffn_dim());
        let blocks = (0..cfg.num_blocks)
            .map(|i| {
                let p = |s: &str| format!("blocks.{i}.{s}");
                BlockIds {
                    in_proj: add(p("mixer.in_proj.weight"), vec![dm, cfg.in_proj_dim()], Init::FanIn(dm)),
                    conv_weight: add(p("mixer.conv.weight"), vec![cd, cfg.d_conv], Init::FanIn(cfg.d_conv)),
                    conv_bias: add(p("mixer.conv.bias"), vec![cd], Init::FanIn(cfg.d_conv)),
                    dt_bias: add(p("mixer.dt_bias"), vec![h], Init::StepBias),
                    a_log: add(p("mixer.a_log"), vec![h], Init::LogDecay),
                    skip: add(p("mixer.d"), vec![h], Init::Ones),
                    norm_gain: add(p("mixer.norm.gain"), vec![di], Init::Ones),
                    out_proj: add(p("mixer.out_proj.weight"), vec![di, dm], Init::FanIn(di)),
                    ffn_up_weight: add(p("ffn.up.weight"), vec![dm, ffn], Init::FanIn(dm)),
                    ffn_up_bias: add(p("ffn.up.bias"), vec![ffn], Init::FanIn(dm)),
                    ffn_down_weight: add(p("ffn.down.weight"), vec![ffn, dm], Init::FanIn(ffn)),
                    ffn_down_bias: add(p("ffn.down.bias"), vec![dm], Init::FanIn(ffn)),
                }
            })
            .collect();
        let head = HeadIds {
            hidden_weight: add("head.hidden.weight".into(), vec![dm, cfg.mlp_hidden], Init::FanIn(dm)),
            hidden_bias: add("head.hidden.bias".into(), vec![cfg.mlp_hidden], Init::FanIn(dm)),
            out_weight: add("head.out.weight".into(), vec![cfg.mlp_hidden, cfg.output_dim], Init::FanIn(cfg.mlp_hidden)),
            out_bias: add("head.out.bias".into(), vec![cfg.output_dim], Init::FanIn(cfg.mlp_hidden)),
        };
        Self { conv, blocks, head, specs }
    }
}

/// Exact number of scalar parameters implied by a config.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    Layout::new(cfg).specs.iter().map(ParamSpec::numel).sum()
}

fn init_value<T: Scalar, R: Rng + ?Sized>(init: Init, rng: &mut R) -> T {
    match init {
        Init::FanIn(fan_in) => {
            let s = 1.0 / (fan_in as f64).sqrt();
            T::of(rng.gen_range(-s..s))
        }
        Init::Ones => T::one(),
        Init::Zeros => T::zero(),
        Init::StepBias => {
            let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
            let dt = rng.gen_range(lo..hi).exp();
            // softplus(dt + ln(1 - e^-dt)) = dt
            T::of(dt + (-(-dt).exp_m1()).ln())
        }
        Init::LogDecay => T::of((-rng.gen_range(-1.0..-0.5f64)).ln()),
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn from_named(entries: Vec<(String, Tensor<T>)>) -> Self {
        let (names, tensors): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    pub fn initialize<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Self {
        let entries = specs
            .iter()
            .map(|s| {
                let data = (0..s.numel()).map(|_| init_value(s.init, rng)).collect();
                let t = Tensor::from_vec(s.shape.clone(), data).expect("spec shapes are positive");
                (s.name.clone(), t)
            })
            .collect();
        Self::from_named(entries)
    }

    /// Checks that names and shapes agree with `specs`, in order.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<(), ModelError> {
        if self.names.len() != specs.len() {
            return Err(ModelError::ParameterMismatch(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.names.len()
            )));
        }
        for ((name, t), s) in self.names.iter().zip(&self.tensors).zip(specs) {
            if *name != s.name || t.shape() != s.shape.as_slice() {
                return Err(ModelError::ParameterMismatch(format!(
                    "`{name}` {:?} where `{}` {:?} was expected",
                    t.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}
