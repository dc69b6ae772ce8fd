use serde::{Deserialize, Serialize};

use super::{NetworkSpec, MAX_QBN};
use crate::error::{Error, Result};

/// Per-kernel weight QBNs and per-layer activation QBNs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QbnPolicy {
    pub act_qbn: Vec<u8>,
    pub weight_qbn: Vec<Vec<u8>>,
}

impl QbnPolicy {
    /// Every kernel at `weight`, every activation layer at `act`.
    pub fn uniform(net: &NetworkSpec, weight: u8, act: u8) -> Self {
        QbnPolicy {
            act_qbn: vec![act; net.n_layers()],
            weight_qbn: net.layers.iter().map(|l| vec![weight; l.c_out]).collect(),
        }
    }

    pub fn check_shape(&self, net: &NetworkSpec) -> Result<()> {
        if self.act_qbn.len() != net.n_layers() || self.weight_qbn.len() != net.n_layers() {
            return Err(Error::ShapeMismatch(format!(
                "policy covers {} layers, network has {}",
                self.act_qbn.len(),
                net.n_layers()
            )));
        }
        for (i, (row, layer)) in self.weight_qbn.iter().zip(&net.layers).enumerate() {
            if row.len() != layer.c_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: policy has {} kernels, network has {}",
                    row.len(),
                    layer.c_out
                )));
            }
        }
        Ok(())
    }

    /// Shape check plus the value ranges: weights in 0..=8, activations in 1..=8.
    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        self.check_shape(net)?;
        for (i, &a) in self.act_qbn.iter().enumerate() {
            if !(1..=MAX_QBN).contains(&a) {
                return Err(Error::InvalidPolicy(format!("layer {i}: activation QBN {a}")));
            }
        }
        for (i, row) in self.weight_qbn.iter().enumerate() {
            if let Some((k, w)) = row.iter().enumerate().find(|(_, &w)| w > MAX_QBN) {
                return Err(Error::InvalidPolicy(format!("layer {i} kernel {k}: weight QBN {w}")));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> usize {
        self.act_qbn.len() + self.weight_qbn.iter().map(Vec::len).sum::<usize>()
    }

    pub fn max_weight_qbn(&self) -> u8 {
        self.weight_qbn.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// A policy under construction: `None` marks entries not decided yet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialPolicy {
    pub act_qbn: Vec<Option<u8>>,
    pub weight_qbn: Vec<Vec<Option<u8>>>,
}

impl PartialPolicy {
    pub fn empty(net: &NetworkSpec) -> Self {
        PartialPolicy {
            act_qbn: vec![None; net.n_layers()],
            weight_qbn: net.layers.iter().map(|l| vec![None; l.c_out]).collect(),
        }
    }

    pub fn from_policy(policy: &QbnPolicy) -> Self {
        PartialPolicy {
            act_qbn: policy.act_qbn.iter().map(|&a| Some(a)).collect(),
            weight_qbn: policy
                .weight_qbn
                .iter()
                .map(|row| row.iter().map(|&w| Some(w)).collect())
                .collect(),
        }
    }

    /// Fills undecided weight entries with `weight` and activation entries with `act`.
    pub fn complete(&self, weight: u8, act: u8) -> QbnPolicy {
        QbnPolicy {
            act_qbn: self.act_qbn.iter().map(|a| a.unwrap_or(act)).collect(),
            weight_qbn: self
                .weight_qbn
                .iter()
                .map(|row| row.iter().map(|w| w.unwrap_or(weight)).collect())
                .collect(),
        }
    }

    pub fn check_shape(&self, net: &NetworkSpec) -> Result<()> {
        // shapes are identical to the completed policy's
        self.complete(0, 1).check_shape(net)
    }

    pub fn is_complete(&self) -> bool {
        self.act_qbn.iter().all(Option::is_some) && self.weight_qbn.iter().flatten().all(Option::is_some)
    }
}

/// Kernel-count-weighted mean weight QBN (W-QBN).
pub fn avg_weight_qbn(net: &NetworkSpec, policy: &QbnPolicy) -> Result<f64> {
    policy.check_shape(net)?;
    let sum: u64 = policy.weight_qbn.iter().flatten().map(|&w| u64::from(w)).sum();
    Ok(sum as f64 / net.total_kernels() as f64)
}

/// Mean activation QBN over layers (A-QBN).
pub fn avg_act_qbn(net: &NetworkSpec, policy: &QbnPolicy) -> Result<f64> {
    policy.check_shape(net)?;
    let sum: u64 = policy.act_qbn.iter().map(|&a| u64::from(a)).sum();
    Ok(sum as f64 / net.n_layers() as f64)
}
