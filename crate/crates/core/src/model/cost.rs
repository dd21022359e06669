use alloc::string::String;
use alloc::vec::Vec;

use super::blocks::{ConvKind, ConvLayer};
use super::{ModelConfig, Sadnet};
use crate::error::{usage_err, Result};

/// Cost of one convolution layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: ConvKind,
    pub params: u64,
    /// Kernel multiply-accumulates.
    pub macs: u64,
    /// Bilinear sampling and modulation multiply-accumulates (deformable
    /// layers only).
    pub sampling_macs: u64,
}

/// Parameter and arithmetic totals for one input size.
///
/// Per layer, with output `H_o × W_o`, kernel `k × k`, channels `C_i → C_o`:
/// - standard and deformable: `MACs = H_o·W_o·k²·C_i·C_o`
/// - transposed: `MACs = H_i·W_i·k²·C_i·C_o`
/// - deformable sampling: `5·H_o·W_o·k²·C_i` (4 bilinear products and one
///   modulation product per sampled value)
///
/// Elementwise operations (activations, skips, offset upsampling) are not
/// counted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub params: u64,
    pub macs: u64,
    pub sampling_macs: u64,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    /// Multiply-accumulates including sampling, the unit in which network
    /// comparisons usually quote "FLOPs".
    pub fn total_macs(&self) -> u64 {
        self.macs + self.sampling_macs
    }

    /// Floating-point operations, two per multiply-accumulate.
    pub fn flops(&self) -> u64 {
        2 * self.total_macs()
    }
}

fn layer_cost(layer: &ConvLayer, h: usize, w: usize) -> LayerCost {
    let (macs, sampling_macs) = layer.macs(h, w);
    LayerCost { name: layer.name.clone(), kind: layer.kind, params: layer.param_count() as u64, macs, sampling_macs }
}

impl Sadnet {
    /// Costs on an `h × w` input.
    pub fn cost(&self, h: usize, w: usize) -> CostReport {
        let layers: Vec<_> = self.layers().iter().map(|l| layer_cost(l, h, w)).collect();
        CostReport {
            params: layers.iter().map(|l| l.params).sum(),
            macs: layers.iter().map(|l| l.macs).sum(),
            sampling_macs: layers.iter().map(|l| l.sampling_macs).sum(),
            layers,
        }
    }
}

/// Parameter count and arithmetic cost of `config` on an `h × w` input.
pub fn count_params_flops(config: &ModelConfig, h: usize, w: usize) -> Result<CostReport> {
    let net = Sadnet::new(config.clone())?;
    let m = config.size_multiple();
    if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(usage_err!("input size {h}x{w} is not divisible by {m}"));
    }
    Ok(net.cost(h, w))
}
