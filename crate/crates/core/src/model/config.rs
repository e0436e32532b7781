use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcnMode {
    /// Fixed-size temporal kernel, every dilation forced to 1.
    Basic,
    /// Per-block dilation with the small odd kernel.
    Dilated,
}

impl std::str::FromStr for TcnMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(TcnMode::Basic),
            "dilated" => Ok(TcnMode::Dilated),
            other => Err(Error::invalid(format!("unknown tcn mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub out_channels: usize,
    pub dilation: usize,
    pub dropout_rate: f64,
    pub temporal_kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub blocks: Vec<BlockConfig>,
    pub in_channels: usize,
    pub num_nodes: usize,
    pub class_count: usize,
    pub bilstm_hidden: usize,
    pub dense_widths: Vec<usize>,
    pub tcn_mode: TcnMode,
    /// Temporal kernel used by every block in basic mode.
    pub basic_kernel: usize,
    pub smoothing_lambda: f64,
    pub smoothing_tau: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

pub const DEFAULT_CHANNELS: [usize; 10] = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];
pub const DEFAULT_DILATIONS: [usize; 10] = [1, 1, 2, 2, 4, 4, 8, 8, 16, 16];
pub const DEFAULT_DROPOUT: [f64; 10] = [0.15, 0.15, 0.15, 0.15, 0.15, 0.3, 0.3, 0.3, 0.3, 0.3];

impl Default for ModelConfig {
    fn default() -> Self {
        let blocks = (0..10)
            .map(|i| BlockConfig {
                out_channels: DEFAULT_CHANNELS[i],
                dilation: DEFAULT_DILATIONS[i],
                dropout_rate: DEFAULT_DROPOUT[i],
                temporal_kernel: 3,
            })
            .collect();
        ModelConfig {
            blocks,
            in_channels: 3,
            num_nodes: crate::graph::CANONICAL_NODES,
            class_count: 3,
            bilstm_hidden: 256,
            dense_widths: vec![128, 128],
            tcn_mode: TcnMode::Dilated,
            basic_kernel: 9,
            smoothing_lambda: 0.15,
            smoothing_tau: 4.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Four-block desk-scale model: channels 16/16/32/32, dilations
    /// 1/2/4/8, BiLSTM hidden 32, dense widths 32/32.
    pub fn reduced(num_nodes: usize) -> Self {
        let spec = [(16, 1, 0.15), (16, 2, 0.15), (32, 4, 0.3), (32, 8, 0.3)];
        ModelConfig {
            blocks: spec
                .iter()
                .map(|&(c, d, r)| BlockConfig {
                    out_channels: c,
                    dilation: d,
                    dropout_rate: r,
                    temporal_kernel: 3,
                })
                .collect(),
            num_nodes,
            bilstm_hidden: 32,
            dense_widths: vec![32, 32],
            ..Self::default()
        }
    }

    /// `(kernel, dilation)` actually used by block `i` under the current mode.
    pub fn temporal_geometry(&self, i: usize) -> (usize, usize) {
        let b = &self.blocks[i];
        match self.tcn_mode {
            TcnMode::Dilated => (b.temporal_kernel, b.dilation),
            TcnMode::Basic => (self.basic_kernel, 1),
        }
    }

    pub fn block_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            self.blocks[i - 1].out_channels
        }
    }

    pub fn last_channels(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.out_channels)
    }

    /// Frames seen by one output frame of the block stack.
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.blocks.len())
            .map(|i| {
                let (k, d) = self.temporal_geometry(i);
                (k - 1) * d
            })
            .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::invalid("model needs at least one block"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let (k, d) = self.temporal_geometry(i);
            if b.out_channels == 0 {
                return Err(Error::invalid(format!("block {i}: zero output channels")));
            }
            if k % 2 == 0 || k == 0 {
                return Err(Error::invalid(format!("block {i}: temporal kernel {k} must be odd")));
            }
            if d == 0 {
                return Err(Error::invalid(format!("block {i}: dilation must be >= 1")));
            }
            if !(0.0..1.0).contains(&b.dropout_rate) {
                return Err(Error::invalid(format!("block {i}: dropout {} outside [0, 1)", b.dropout_rate)));
            }
        }
        if self.in_channels == 0 || self.num_nodes == 0 || self.class_count < 2 || self.bilstm_hidden == 0 {
            return Err(Error::invalid("model dimensions must be positive (and at least 2 classes)"));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::invalid("dense widths must be positive"));
        }
        if self.smoothing_lambda < 0.0 || self.smoothing_tau <= 0.0 {
            return Err(Error::invalid("smoothing lambda must be >= 0 and tau > 0"));
        }
        if self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("batch norm eps must be > 0 and momentum in [0, 1]"));
        }
        Ok(())
    }

    /// Number of trainable scalars, from the shapes alone.
    pub fn parameter_count(&self) -> usize {
        let v = self.num_nodes;
        let mut total = 2 * self.in_channels * v; // input batch norm
        for i in 0..self.blocks.len() {
            let (cin, cout) = (self.block_in_channels(i), self.blocks[i].out_channels);
            let (k, _) = self.temporal_geometry(i);
            total += 3 * cout * cin + cout; // graph conv
            total += 3 * v * v; // edge importance
            total += cout * cout * k; // temporal conv
            total += 4 * cout; // two batch norms
            if cin != cout {
                total += cout * cin + cout;
            }
        }
        let h = self.bilstm_hidden;
        let f = self.last_channels() * v;
        total += 2 * (4 * h * f + 4 * h * h + 4 * h);
        let mut width = 2 * h;
        for &w in self.dense_widths.iter().chain(std::iter::once(&self.class_count)) {
            total += width * w + w;
            width = w;
        }
        total
    }
}
