use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Network shape. Per window step the input is `[position, previous
/// actuation, target]`, each `output_size` wide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub history_len: usize,
    pub dropout_rate: f64,
    pub input_size: usize,
    pub output_size: usize,
    /// Steps ahead of the newest sensed position at which the target sits.
    /// One plant delay plus the step being commanded gives 2.
    pub target_lead: usize,
}

impl LstmSpec {
    /// Planar controller in the layers-history-hidden-dropout notation.
    pub fn planar(num_layers: usize, history_len: usize, hidden_size: usize, dropout_rate: f64) -> Self {
        Self::for_dim(2, num_layers, history_len, hidden_size, dropout_rate)
    }

    pub fn for_dim(dim: usize, num_layers: usize, history_len: usize, hidden_size: usize, dropout_rate: f64) -> Self {
        LstmSpec {
            num_layers,
            hidden_size,
            history_len,
            dropout_rate,
            input_size: 3 * dim,
            output_size: dim,
            target_lead: 2,
        }
    }

    pub fn with_lead(mut self, lead: usize) -> Self {
        self.target_lead = lead;
        self
    }

    pub fn dim(&self) -> usize {
        self.output_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 || self.hidden_size < 1 || self.history_len < 1 {
            return Err(invalid("num_layers, hidden_size and history_len must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        if self.output_size < 1 || self.input_size != 3 * self.output_size {
            return Err(invalid("input_size must be three times output_size"));
        }
        if self.target_lead < 1 {
            return Err(invalid("target_lead must be at least 1"));
        }
        Ok(())
    }

    /// Shape-only equality, ignoring the training-time dropout rate.
    pub fn compatible(&self, other: &LstmSpec) -> bool {
        self.num_layers == other.num_layers
            && self.hidden_size == other.hidden_size
            && self.history_len == other.history_len
            && self.input_size == other.input_size
            && self.output_size == other.output_size
            && self.target_lead == other.target_lead
    }

    pub fn label(&self) -> String {
        format!("{}-{}-{}-{}", self.num_layers, self.history_len, self.hidden_size, self.dropout_rate)
    }

    pub(crate) fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_size
        } else {
            self.hidden_size
        }
    }

    pub(crate) fn layout(&self) -> Layout {
        let h = self.hidden_size;
        let mut off = 0;
        let mut layers = Vec::with_capacity(self.num_layers);
        for l in 0..self.num_layers {
            let cols = h + self.layer_input(l);
            let w = off;
            off += 4 * h * cols;
            let b = off;
            off += 4 * h;
            layers.push(LayerSlot { w, b, cols });
        }
        let readout_w = off;
        off += self.output_size * h;
        let readout_b = off;
        off += self.output_size;
        Layout {
            layers,
            readout_w,
            readout_b,
            total: off,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerSlot {
    pub w: usize,
    pub b: usize,
    /// hidden + layer input width
    pub cols: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub layers: Vec<LayerSlot>,
    pub readout_w: usize,
    pub readout_b: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Samples per gradient work unit. Fixes the reduction order, so results
    /// do not depend on the thread count.
    pub grad_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 8,
            patience: 4,
            seed: 0,
            grad_chunk: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 || self.batch_size < 1 || self.max_epochs < 1 || self.grad_chunk < 1 {
            return Err(invalid("patience, batch_size, max_epochs and grad_chunk must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Per-feature z-normalization computed on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    pub fn identity(n: usize) -> Self {
        NormStats {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.mean.len() != n || self.scale.len() != n {
            return Err(invalid("normalization stats have the wrong width"));
        }
        if self.scale.iter().any(|s| !(*s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("normalization scales must be positive and means finite"));
        }
        Ok(())
    }
}
