use serde::{Deserialize, Serialize};

use crate::model::ModelError;

/// Shape hyperparameters of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature dimension of the input embeddings (1024 for WavLM-Large).
    pub input_dim: usize,
    pub d_model: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub num_blocks: usize,
    pub d_state: usize,
    /// Width of the causal depthwise convolution inside each Mamba-2 layer.
    pub d_conv: usize,
    pub expand: usize,
    /// Channels per scan head; `expand * d_model / head_dim` heads.
    pub head_dim: usize,
    pub ffn_expansion: usize,
    pub mlp_hidden: usize,
    pub output_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1024,
            d_model: 64,
            conv_kernel: 3,
            conv_stride: 1,
            num_blocks: 5,
            d_state: 32,
            d_conv: 4,
            expand: 8,
            head_dim: 64,
            ffn_expansion: 4,
            mlp_hidden: 64,
            output_dim: 16,
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient checks and smoke training.
    pub fn tiny(input_dim: usize) -> Self {
        Self {
            input_dim,
            d_model: 8,
            num_blocks: 1,
            d_state: 4,
            expand: 2,
            head_dim: 8,
            mlp_hidden: 64,
            ..Self::default()
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn num_heads(&self) -> usize {
        self.d_inner() / self.head_dim
    }

    /// Channels through the depthwise convolution: the scan input plus B and C.
    pub fn conv_dim(&self) -> usize {
        self.d_inner() + 2 * self.d_state
    }

    /// Output width of the Mamba-2 input projection: gate, conv stream, per-head step.
    pub fn in_proj_dim(&self) -> usize {
        self.d_inner() + self.conv_dim() + self.num_heads()
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_expansion * self.d_model
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("input_dim", self.input_dim),
            ("d_model", self.d_model),
            ("conv_kernel", self.conv_kernel),
            ("conv_stride", self.conv_stride),
            ("d_state", self.d_state),
            ("d_conv", self.d_conv),
            ("expand", self.expand),
            ("head_dim", self.head_dim),
            ("ffn_expansion", self.ffn_expansion),
            ("mlp_hidden", self.mlp_hidden),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.d_inner().is_multiple_of(self.head_dim) {
            return Err(ModelError::InvalidConfig(format!(
                "d_inner = {} is not divisible by head_dim = {}",
                self.d_inner(),
                self.head_dim
            )));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(ModelError::InvalidConfig("conv_kernel must be odd for same padding".into()));
        }
        Ok(())
    }
}
