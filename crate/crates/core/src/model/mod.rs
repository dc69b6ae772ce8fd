//! Network descriptions, quantization policies and the agent's observation.
//!
//! A [`NetworkSpec`] is the static description of a CNN: its layers, per-kernel
//! weight statistics and the full-precision reference accuracy. A [`QbnPolicy`]
//! assigns a quantization bit number (QBN) to every weight kernel and every
//! activation layer. QBN 0 on a weight kernel means the kernel is pruned.

mod codec;
mod policy;
mod spec_io;
mod state;

pub use codec::{
    decode_policy_file, encode_policy_file, pack_policy, policy_from_json, policy_to_json, unpack_policy, POLICY_MAGIC,
    POLICY_VERSION,
};
pub use policy::{avg_act_qbn, avg_weight_qbn, PartialPolicy, QbnPolicy};
pub use spec_io::{parse_network_spec, serialize_network_spec};
pub use state::{encode_state, Phase, StateEncoder, StateVector, STATE_DIM};

use crate::error::{Error, Result};

/// Largest QBN a weight kernel or activation layer may take.
pub const MAX_QBN: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    FullyConnected,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise-conv",
            LayerKind::FullyConnected => "fully-connected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conv" => Some(LayerKind::Conv),
            "depthwise-conv" | "depthwise" | "dw" => Some(LayerKind::DepthwiseConv),
            "fully-connected" | "fc" | "linear" => Some(LayerKind::FullyConnected),
            _ => None,
        }
    }
}

/// One layer of the network. Fully-connected layers carry a 1x1 kernel and a
/// stride of 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_w: usize,
    pub kernel_h: usize,
    pub stride: usize,
    pub feat_w: usize,
    pub feat_h: usize,
    /// MAC operations one kernel performs per inference.
    pub macs_per_kernel: u64,
}

impl LayerSpec {
    /// Number of weights held by a single kernel of this layer.
    pub fn weights_per_kernel(&self) -> usize {
        match self.kind {
            LayerKind::DepthwiseConv => self.kernel_w * self.kernel_h,
            _ => self.c_in * self.kernel_w * self.kernel_h,
        }
    }

    fn validate(&self) -> Result<()> {
        let at = |msg: &str| Error::InvalidNetwork(format!("layer {}: {msg}", self.index));
        if self.c_in == 0 || self.c_out == 0 {
            return Err(at("c_in and c_out must be positive"));
        }
        if self.kernel_w == 0 || self.kernel_h == 0 || self.feat_w == 0 || self.feat_h == 0 {
            return Err(at("kernel and feature dimensions must be positive"));
        }
        if self.macs_per_kernel == 0 {
            return Err(at("macs_per_kernel must be positive"));
        }
        match self.kind {
            LayerKind::FullyConnected => {
                if self.kernel_w != 1 || self.kernel_h != 1 {
                    return Err(at("fully-connected layer must have a 1x1 kernel"));
                }
                if self.stride != 0 {
                    return Err(at("fully-connected layer must have stride 0"));
                }
            }
            LayerKind::DepthwiseConv => {
                if self.c_out != self.c_in {
                    return Err(at("depthwise-conv layer requires c_out == c_in"));
                }
                if self.stride == 0 {
                    return Err(at("stride must be positive"));
                }
            }
            LayerKind::Conv => {
                if self.stride == 0 {
                    return Err(at("stride must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelStats {
    /// Empirical weight variance of the kernel.
    pub variance: f64,
    /// Explicit accuracy-loss coefficient; overrides the derived value.
    pub sensitivity: Option<f64>,
}

/// Frozen full-precision parameters of one layer, used by the inference oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub kernels: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub acc_fp: f64,
    pub layers: Vec<LayerSpec>,
    pub kernel_stats: Vec<Vec<KernelStats>>,
    pub act_sensitivity: Vec<f64>,
    pub weights: Option<Vec<LayerWeights>>,
}

impl NetworkSpec {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Σ c_out over all layers.
    pub fn total_kernels(&self) -> usize {
        self.layers.iter().map(|l| l.c_out).sum()
    }

    /// Number of QBN entries a policy for this network holds.
    pub fn policy_entries(&self) -> usize {
        self.n_layers() + self.total_kernels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        if !(0.0..=1.0).contains(&self.acc_fp) {
            return Err(Error::InvalidNetwork(format!("acc_fp {} outside [0,1]", self.acc_fp)));
        }
        if self.kernel_stats.len() != self.layers.len() || self.act_sensitivity.len() != self.layers.len() {
            return Err(Error::InvalidNetwork(
                "per-layer statistics do not match the layer count".into(),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.index != i {
                return Err(Error::InvalidNetwork(format!(
                    "layer at position {i} carries index {}",
                    layer.index
                )));
            }
            layer.validate()?;
            let stats = &self.kernel_stats[i];
            if stats.len() != layer.c_out {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: {} kernel entries for c_out {}",
                    stats.len(),
                    layer.c_out
                )));
            }
            for (k, s) in stats.iter().enumerate() {
                if !(s.variance.is_finite() && s.variance >= 0.0) {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i} kernel {k}: variance must be finite and non-negative"
                    )));
                }
                if let Some(sens) = s.sensitivity {
                    if !(sens.is_finite() && sens >= 0.0) {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i} kernel {k}: sensitivity must be finite and non-negative"
                        )));
                    }
                }
            }
            let a = self.act_sensitivity[i];
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: act_sensitivity must be finite and non-negative"
                )));
            }
        }
        if let Some(weights) = &self.weights {
            if weights.len() != self.layers.len() {
                return Err(Error::InvalidNetwork("weights do not cover every layer".into()));
            }
            for (i, (w, layer)) in weights.iter().zip(&self.layers).enumerate() {
                if w.kernels.len() != layer.c_out || w.bias.len() != layer.c_out {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: weights need {} kernels and {} biases",
                        layer.c_out, layer.c_out
                    )));
                }
                let per = layer.weights_per_kernel();
                for (k, kernel) in w.kernels.iter().enumerate() {
                    if kernel.len() != per {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i} kernel {k}: {} weights, expected {per}",
                            kernel.len()
                        )));
                    }
                    if kernel.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i} kernel {k}: non-finite weight"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
