use super::{LayerKind, NetworkSpec};
use crate::error::{Error, Result};

pub const STATE_DIM: usize = 11;

/// Which decision the agent is making at a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Activation,
    Weight,
}

/// Normalized observation, every component in [0,1].
///
/// Layout: layer index, kernel index, c_in, c_out, kernel size, stride,
/// feature size, depthwise flag, activation flag, previous goal, previous action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector(pub [f64; STATE_DIM]);

impl StateVector {
    pub const LAYER: usize = 0;
    pub const KERNEL: usize = 1;
    pub const C_IN: usize = 2;
    pub const C_OUT: usize = 3;
    pub const KERNEL_SIZE: usize = 4;
    pub const STRIDE: usize = 5;
    pub const FEATURE: usize = 6;
    pub const DEPTHWISE: usize = 7;
    pub const IS_ACTIVATION: usize = 8;
    pub const PREV_GOAL: usize = 9;
    pub const PREV_ACTION: usize = 10;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Caches the network-wide maxima used as normalization denominators.
#[derive(Clone, Debug)]
pub struct StateEncoder {
    layer_span: f64,
    max_c_in: f64,
    max_c_out: f64,
    max_kernel: f64,
    max_stride: f64,
    max_feature: f64,
    rows: Vec<LayerRow>,
}

#[derive(Clone, Debug)]
struct LayerRow {
    c_in: f64,
    c_out: usize,
    kernel: f64,
    stride: f64,
    feature: f64,
    depthwise: bool,
}

fn ratio(x: f64, max: f64) -> f64 {
    if max > 0.0 {
        x / max
    } else {
        0.0
    }
}

impl StateEncoder {
    pub fn new(net: &NetworkSpec) -> Self {
        let rows: Vec<LayerRow> = net
            .layers
            .iter()
            .map(|l| {
                let fc = l.kind == LayerKind::FullyConnected;
                LayerRow {
                    c_in: l.c_in as f64,
                    c_out: l.c_out,
                    kernel: if fc { 1.0 } else { (l.kernel_w * l.kernel_h) as f64 },
                    stride: if fc { 0.0 } else { l.stride as f64 },
                    feature: (l.feat_w * l.feat_h) as f64,
                    depthwise: l.kind == LayerKind::DepthwiseConv,
                }
            })
            .collect();
        let max = |f: fn(&LayerRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
        StateEncoder {
            layer_span: net.n_layers().saturating_sub(1) as f64,
            max_c_in: max(|r| r.c_in),
            max_c_out: max(|r| r.c_out as f64),
            max_kernel: max(|r| r.kernel),
            max_stride: max(|r| r.stride),
            max_feature: max(|r| r.feature),
            rows,
        }
    }

    pub fn encode(
        &self,
        layer: usize,
        kernel: usize,
        phase: Phase,
        prev_goal: f64,
        prev_action: f64,
    ) -> Result<StateVector> {
        let row = self
            .rows
            .get(layer)
            .ok_or_else(|| Error::IndexOutOfRange(format!("layer {layer} of {}", self.rows.len())))?;
        if kernel >= row.c_out {
            return Err(Error::IndexOutOfRange(format!(
                "kernel {kernel} of layer {layer} with c_out {}",
                row.c_out
            )));
        }
        for (name, v) in [("prev_goal", prev_goal), ("prev_action", prev_action)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} {v} outside [0,1]")));
            }
        }
        let kernel = if phase == Phase::Activation { 0 } else { kernel };
        Ok(StateVector([
            ratio(layer as f64, self.layer_span),
            kernel as f64 / row.c_out as f64,
            ratio(row.c_in, self.max_c_in),
            ratio(row.c_out as f64, self.max_c_out),
            ratio(row.kernel, self.max_kernel),
            ratio(row.stride, self.max_stride),
            ratio(row.feature, self.max_feature),
            if row.depthwise { 1.0 } else { 0.0 },
            if phase == Phase::Activation { 1.0 } else { 0.0 },
            prev_goal,
            prev_action,
        ]))
    }
}

/// One-shot state encoding; prefer a cached [`StateEncoder`] inside loops.
pub fn encode_state(
    net: &NetworkSpec,
    layer: usize,
    kernel: usize,
    phase: Phase,
    prev_goal: f64,
    prev_action: f64,
) -> Result<StateVector> {
    StateEncoder::new(net).encode(layer, kernel, phase, prev_goal, prev_action)
}
