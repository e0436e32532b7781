use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::PARTITIONS;
use crate::numeric::batchnorm::RunningStats;
use crate::numeric::{Param, RngStream, Tensor};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub scale: Param,
    pub shift: Param,
    pub stats: RunningStats,
}

impl BnParams {
    fn new(prefix: &str, channels: usize) -> Self {
        BnParams {
            scale: Param::new(format!("{prefix}.scale"), Tensor::full(&[channels], 1.0)),
            shift: Param::new(format!("{prefix}.shift"), Tensor::zeros(&[channels])),
            stats: RunningStats::new(channels),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    /// `[3, C_out, C_in]`, one channel mixer per partition.
    pub gcn_weight: Param,
    pub gcn_bias: Param,
    /// `[3, V, V]`, multiplies the normalized adjacency elementwise.
    pub edge_importance: Param,
    /// `[C_out, C_out, K]`
    pub tcn_weight: Param,
    pub bn_graph: BnParams,
    pub bn_temporal: BnParams,
    /// 1x1 projection `([C_out, C_in], [C_out])` when channel counts differ.
    pub residual: Option<(Param, Param)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_bn: BnParams,
    pub blocks: Vec<BlockParams>,
    pub lstm_forward: LstmParams,
    pub lstm_backward: LstmParams,
    pub dense: Vec<DenseParams>,
}

fn uniform(shape: &[usize], bound: f64, rng: &RngStream) -> Tensor {
    let mut g = rng.generator();
    let n = shape.iter().product();
    let data = (0..n).map(|_| g.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("non-empty shape")
}

/// Draws every weight from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` on its own
/// derived stream. Biases start at zero except the LSTM forget gates (1.0);
/// batch norm starts at scale 1, shift 0; edge importance at all-ones.
pub fn init_params(config: &ModelConfig, rng: &RngStream) -> Result<ModelParams> {
    config.validate()?;
    let v = config.num_nodes;
    let mut tag = 0u64;
    let mut next = || {
        tag += 1;
        rng.derive(tag)
    };
    let input_bn = BnParams::new("input_bn", config.in_channels * v);
    let mut blocks = Vec::with_capacity(config.blocks.len());
    for i in 0..config.blocks.len() {
        let cin = config.block_in_channels(i);
        let cout = config.blocks[i].out_channels;
        let (k, _) = config.temporal_geometry(i);
        let p = format!("block{i}");
        let gcn_weight = Param::new(
            format!("{p}.gcn.weight"),
            uniform(&[PARTITIONS, cout, cin], 1.0 / (cin as f64).sqrt(), &next()),
        );
        let tcn_weight = Param::new(
            format!("{p}.tcn.weight"),
            uniform(&[cout, cout, k], 1.0 / ((cout * k) as f64).sqrt(), &next()),
        );
        let residual = (cin != cout).then(|| {
            (
                Param::new(
                    format!("{p}.residual.weight"),
                    uniform(&[cout, cin], 1.0 / (cin as f64).sqrt(), &next()),
                ),
                Param::new(format!("{p}.residual.bias"), Tensor::zeros(&[cout])),
            )
        });
        blocks.push(BlockParams {
            gcn_weight,
            gcn_bias: Param::new(format!("{p}.gcn.bias"), Tensor::zeros(&[cout])),
            edge_importance: Param::new(
                format!("{p}.edge_importance"),
                Tensor::full(&[PARTITIONS, v, v], 1.0),
            ),
            tcn_weight,
            bn_graph: BnParams::new(&format!("{p}.bn_graph"), cout),
            bn_temporal: BnParams::new(&format!("{p}.bn_temporal"), cout),
            residual,
        });
    }
    let h = config.bilstm_hidden;
    let f = config.last_channels() * v;
    let mut lstm = |name: &str| {
        let mut bias = Tensor::zeros(&[4 * h]);
        bias.data_mut()[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        LstmParams {
            w_ih: Param::new(format!("{name}.w_ih"), uniform(&[4 * h, f], 1.0 / (f as f64).sqrt(), &next())),
            w_hh: Param::new(format!("{name}.w_hh"), uniform(&[4 * h, h], 1.0 / (h as f64).sqrt(), &next())),
            bias: Param::new(format!("{name}.bias"), bias),
        }
    };
    let lstm_forward = lstm("lstm_fwd");
    let lstm_backward = lstm("lstm_bwd");
    let mut dense = Vec::new();
    let mut width = 2 * h;
    let outs: Vec<usize> = config
        .dense_widths
        .iter()
        .copied()
        .chain(std::iter::once(config.class_count))
        .collect();
    for (i, &w) in outs.iter().enumerate() {
        dense.push(DenseParams {
            weight: Param::new(format!("dense{i}.weight"), uniform(&[width, w], 1.0 / (width as f64).sqrt(), &next())),
            bias: Param::new(format!("dense{i}.bias"), Tensor::zeros(&[w])),
        });
        width = w;
    }
    Ok(ModelParams {
        input_bn,
        blocks,
        lstm_forward,
        lstm_backward,
        dense,
    })
}

impl ModelParams {
    /// Every trainable parameter in a fixed order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.input_bn.scale, &self.input_bn.shift];
        for b in &self.blocks {
            out.extend([&b.gcn_weight, &b.gcn_bias, &b.edge_importance, &b.tcn_weight]);
            out.extend([&b.bn_graph.scale, &b.bn_graph.shift, &b.bn_temporal.scale, &b.bn_temporal.shift]);
            if let Some((w, bias)) = &b.residual {
                out.extend([w, bias]);
            }
        }
        for l in [&self.lstm_forward, &self.lstm_backward] {
            out.extend([&l.w_ih, &l.w_hh, &l.bias]);
        }
        for d in &self.dense {
            out.extend([&d.weight, &d.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.input_bn.scale, &mut self.input_bn.shift];
        for b in &mut self.blocks {
            out.push(&mut b.gcn_weight);
            out.push(&mut b.gcn_bias);
            out.push(&mut b.edge_importance);
            out.push(&mut b.tcn_weight);
            out.push(&mut b.bn_graph.scale);
            out.push(&mut b.bn_graph.shift);
            out.push(&mut b.bn_temporal.scale);
            out.push(&mut b.bn_temporal.shift);
            if let Some((w, bias)) = &mut b.residual {
                out.push(w);
                out.push(bias);
            }
        }
        for l in [&mut self.lstm_forward, &mut self.lstm_backward] {
            out.push(&mut l.w_ih);
            out.push(&mut l.w_hh);
            out.push(&mut l.bias);
        }
        for d in &mut self.dense {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    /// Batch-norm running statistics in a fixed order, with their prefixes.
    pub fn running_stats(&self) -> Vec<(String, &RunningStats)> {
        let mut out = vec![("input_bn".to_string(), &self.input_bn.stats)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.bn_graph"), &b.bn_graph.stats));
            out.push((format!("block{i}.bn_temporal"), &b.bn_temporal.stats));
        }
        out
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut RunningStats> {
        let mut out = vec![&mut self.input_bn.stats];
        for b in &mut self.blocks {
            out.push(&mut b.bn_graph.stats);
            out.push(&mut b.bn_temporal.stats);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Name of the first parameter holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.params()
            .into_iter()
            .find(|p| !p.value.all_finite())
            .map(|p| p.name.clone())
    }

    /// Copy with every value, moment and statistic rounded through `f32`.
    pub fn rounded_to_f32(&self) -> ModelParams {
        let mut out = self.clone();
        let round = |t: &mut Tensor| t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        for p in out.params_mut() {
            round(&mut p.value);
            round(&mut p.adam_m);
            round(&mut p.adam_v);
        }
        for s in out.running_stats_mut() {
            round(&mut s.mean);
            round(&mut s.var);
        }
        out
    }

    pub fn check_matches(&self, config: &ModelConfig) -> Result<()> {
        if self.blocks.len() != config.blocks.len() || self.dense.len() != config.dense_widths.len() + 1 {
            return Err(Error::invalid("parameters do not match the model configuration"));
        }
        Ok(())
    }
}
