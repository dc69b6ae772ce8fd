//! Analytic hardware cost models.
//!
//! The temporal accelerator has `lanes` bit-serial MAC units; a MAC with a
//! `w`-bit weight and an `a`-bit activation occupies one lane for `w * a`
//! cycles. The spatial accelerator is a systolic array of fusion units that
//! each handle `fusion_digit_bits`-bit digits; a kernel is allocated for its
//! widest sub-kernel.

use serde::{Deserialize, Serialize};

use crate::accuracy::{proxy_accuracy, AccuracyModelParams};
use crate::error::{Error, Result};
use crate::model::{NetworkSpec, PartialPolicy, QbnPolicy};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_units: Option<f64>,
}

impl Budgets {
    pub fn is_empty(&self) -> bool {
        self.latency_s.is_none() && self.energy_j.is_none() && self.area_units.is_none()
    }

    /// True when the report is within every budget that is set.
    pub fn admits(&self, report: &CostReport) -> bool {
        self.latency_s.is_none_or(|b| report.latency_s <= b)
            && self.energy_j.is_none_or(|b| report.energy_j <= b)
            && self.area_units.is_none_or(|b| report.area_units <= b)
    }

    /// Names of the budgets the report violates.
    pub fn violations(&self, report: &CostReport) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.latency_s.is_some_and(|b| report.latency_s > b) {
            out.push("latency");
        }
        if self.energy_j.is_some_and(|b| report.energy_j > b) {
            out.push("energy");
        }
        if self.area_units.is_some_and(|b| report.area_units > b) {
            out.push("area");
        }
        out
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("latency_s", self.latency_s),
            ("energy_j", self.energy_j),
            ("area_units", self.area_units),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("budget {name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

fn default_digit_bits() -> u8 {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub lanes: u64,
    pub clock_hz: f64,
    pub energy_per_bitop: f64,
    pub base_area: f64,
    pub area_per_lane_bit: f64,
    #[serde(default = "default_digit_bits")]
    pub fusion_digit_bits: u8,
    pub fusion_array_rows: u64,
    pub fusion_array_cols: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Budgets>,
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clock_hz", self.clock_hz),
            ("energy_per_bitop", self.energy_per_bitop),
            ("base_area", self.base_area),
            ("area_per_lane_bit", self.area_per_lane_bit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lanes == 0 || self.fusion_array_rows == 0 || self.fusion_array_cols == 0 {
            return Err(Error::Config(
                "lanes and fusion array dimensions must be positive".into(),
            ));
        }
        if ![1, 2, 4].contains(&self.fusion_digit_bits) {
            return Err(Error::Config(format!(
                "fusion_digit_bits must be 1, 2 or 4, got {}",
                self.fusion_digit_bits
            )));
        }
        if let Some(b) = &self.budgets {
            b.validate()?;
        }
        Ok(())
    }
}

pub fn parse_hardware_config(text: &str) -> Result<HardwareConfig> {
    let hw: HardwareConfig = serde_json::from_str(text)?;
    hw.validate()?;
    Ok(hw)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub accuracy: f64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub area_units: f64,
}

/// Bit-operations of the policy: `sum macs * w * a`.
pub fn total_work(net: &NetworkSpec, policy: &QbnPolicy) -> Result<u64> {
    policy.check_shape(net)?;
    Ok(net
        .layers
        .iter()
        .zip(&policy.weight_qbn)
        .zip(&policy.act_qbn)
        .map(|((layer, row), &a)| {
            row.iter()
                .map(|&w| layer.macs_per_kernel * u64::from(w) * u64::from(a))
                .sum::<u64>()
        })
        .sum())
}

pub fn temporal_cycles(net: &NetworkSpec, policy: &QbnPolicy, hw: &HardwareConfig) -> Result<u64> {
    Ok(total_work(net, policy)?.div_ceil(hw.lanes))
}

fn latency_of(work: u64, hw: &HardwareConfig) -> f64 {
    work.div_ceil(hw.lanes) as f64 / hw.clock_hz
}

fn energy_of(work: u64, hw: &HardwareConfig) -> f64 {
    let cycles = work.div_ceil(hw.lanes) as f64;
    let active = (work as f64 / (cycles * hw.lanes as f64)).min(1.0);
    cycles * active * hw.energy_per_bitop
}

pub fn temporal_latency(net: &NetworkSpec, policy: &QbnPolicy, hw: &HardwareConfig) -> Result<f64> {
    match total_work(net, policy)? {
        0 => Err(Error::EmptyNetwork),
        work => Ok(latency_of(work, hw)),
    }
}

pub fn temporal_energy(net: &NetworkSpec, policy: &QbnPolicy, hw: &HardwareConfig) -> Result<f64> {
    match total_work(net, policy)? {
        0 => Err(Error::EmptyNetwork),
        work => Ok(energy_of(work, hw)),
    }
}

pub fn area_estimate(net: &NetworkSpec, policy: &QbnPolicy, hw: &HardwareConfig) -> Result<f64> {
    policy.check_shape(net)?;
    Ok(hw.base_area + hw.area_per_lane_bit * hw.lanes as f64 * f64::from(policy.max_weight_qbn()))
}

/// A contiguous-or-not group of a kernel's weights sharing one QBN.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubKernel {
    pub weights: usize,
    pub qbn: u8,
}

/// Weight QBNs at sub-kernel granularity. `parts[l][k]` partitions kernel
/// `k` of layer `l`; the weight counts must add up to the kernel size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubKernelPolicy {
    pub act_qbn: Vec<u8>,
    pub parts: Vec<Vec<Vec<SubKernel>>>,
}

impl SubKernelPolicy {
    /// Each kernel as a single part.
    pub fn whole(net: &NetworkSpec, policy: &QbnPolicy) -> Self {
        SubKernelPolicy {
            act_qbn: policy.act_qbn.clone(),
            parts: net
                .layers
                .iter()
                .zip(&policy.weight_qbn)
                .map(|(layer, row)| {
                    row.iter()
                        .map(|&qbn| {
                            vec![SubKernel {
                                weights: layer.weights_per_kernel(),
                                qbn,
                            }]
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        if self.act_qbn.len() != net.n_layers() || self.parts.len() != net.n_layers() {
            return Err(Error::ShapeMismatch(
                "sub-kernel policy does not cover every layer".into(),
            ));
        }
        for (l, (layer, kernels)) in net.layers.iter().zip(&self.parts).enumerate() {
            if kernels.len() != layer.c_out {
                return Err(Error::ShapeMismatch(format!("layer {l}: {} kernels", kernels.len())));
            }
            for (k, parts) in kernels.iter().enumerate() {
                let covered: usize = parts.iter().map(|p| p.weights).sum();
                if parts.iter().any(|p| p.weights == 0 || p.qbn > crate::model::MAX_QBN)
                    || covered != layer.weights_per_kernel()
                {
                    return Err(Error::InvalidPolicy(format!(
                        "layer {l} kernel {k}: parts do not partition {} weights",
                        layer.weights_per_kernel()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn spatial_slots(net: &NetworkSpec, policy: &SubKernelPolicy, hw: &HardwareConfig) -> Result<u64> {
    policy.validate(net)?;
    let d = u64::from(hw.fusion_digit_bits);
    Ok(net
        .layers
        .iter()
        .zip(&policy.parts)
        .zip(&policy.act_qbn)
        .map(|((layer, kernels), &a)| {
            kernels
                .iter()
                .map(|parts| {
                    let widest = u64::from(parts.iter().map(|p| p.qbn).max().unwrap_or(0));
                    layer.macs_per_kernel * widest.div_ceil(d) * u64::from(a).div_ceil(d)
                })
                .sum::<u64>()
        })
        .sum())
}

pub fn spatial_latency(net: &NetworkSpec, policy: &SubKernelPolicy, hw: &HardwareConfig) -> Result<f64> {
    let slots = spatial_slots(net, policy, hw)? as f64;
    Ok(slots / (hw.fusion_array_rows * hw.fusion_array_cols) as f64 / hw.clock_hz)
}

pub fn spatial_energy(net: &NetworkSpec, policy: &SubKernelPolicy, hw: &HardwareConfig) -> Result<f64> {
    let slots = spatial_slots(net, policy, hw)? as f64;
    let d = f64::from(hw.fusion_digit_bits);
    Ok(slots * hw.energy_per_bitop * d * d)
}

/// Full report on the temporal accelerator. A policy that does no work at all
/// is charged one bit-operation so the report stays positive.
pub fn cost_report(
    net: &NetworkSpec,
    params: &AccuracyModelParams,
    policy: &QbnPolicy,
    hw: &HardwareConfig,
) -> Result<CostReport> {
    let work = total_work(net, policy)?.max(1);
    Ok(CostReport {
        accuracy: proxy_accuracy(params, policy)?,
        latency_s: latency_of(work, hw),
        energy_j: energy_of(work, hw),
        area_units: area_estimate(net, policy, hw)?,
    })
}

/// Cost of the prefix completed with the smallest legal QBNs (pruned weights,
/// 1-bit activations). Every field is a lower bound over all completions.
pub fn min_remaining_cost(
    net: &NetworkSpec,
    params: &AccuracyModelParams,
    prefix: &PartialPolicy,
    hw: &HardwareConfig,
) -> Result<CostReport> {
    prefix.check_shape(net)?;
    cost_report(net, params, &prefix.complete(0, 1), hw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accuracy::{derive_sensitivities, AccuracyConfig};
    use crate::model::parse_network_spec;

    fn hw(lanes: u64) -> HardwareConfig {
        HardwareConfig {
            lanes,
            clock_hz: 1e8,
            energy_per_bitop: 1e-12,
            base_area: 10.0,
            area_per_lane_bit: 1.0,
            fusion_digit_bits: 2,
            fusion_array_rows: 4,
            fusion_array_cols: 4,
            budgets: None,
        }
    }

    fn one_layer(c_out: usize, macs: u64) -> NetworkSpec {
        let kernels = vec![r#"{"variance": 1.0}"#; c_out].join(",");
        parse_network_spec(&format!(
            r#"{{"name": "l", "acc_fp": 0.7, "layers": [
            {{"kind": "conv", "c_in": 1, "c_out": {c_out}, "kernel": [2, 2], "stride": 1,
             "feature": [4, 4], "macs_per_kernel": {macs}, "kernels": [{kernels}]}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn cycles_match_hand_arithmetic() {
        let net = one_layer(2, 100);
        let p = QbnPolicy {
            act_qbn: vec![3],
            weight_qbn: vec![vec![2, 4]],
        };
        assert_eq!(temporal_cycles(&net, &p, &hw(1)).unwrap(), 1800);
        assert_eq!(temporal_cycles(&net, &p, &hw(2)).unwrap(), 900);
        assert_eq!(temporal_cycles(&net, &p, &hw(7)).unwrap(), 258);
        let lat = temporal_latency(&net, &p, &hw(1)).unwrap();
        assert!((lat - 1.8e-5).abs() < 1e-18);
    }

    #[test]
    fn pruned_network_is_empty() {
        let net = one_layer(2, 100);
        let p = QbnPolicy::uniform(&net, 0, 8);
        assert_eq!(temporal_cycles(&net, &p, &hw(1)).unwrap(), 0);
        assert!(matches!(temporal_latency(&net, &p, &hw(1)), Err(Error::EmptyNetwork)));
        assert!(matches!(temporal_energy(&net, &p, &hw(1)), Err(Error::EmptyNetwork)));
        assert_eq!(area_estimate(&net, &p, &hw(1)).unwrap(), 10.0);
    }

    #[test]
    fn area_follows_widest_kernel() {
        let net = one_layer(2, 100);
        let mut p = QbnPolicy::uniform(&net, 4, 4);
        assert_eq!(area_estimate(&net, &p, &hw(8)).unwrap(), 42.0);
        p.weight_qbn[0][0] = 8;
        assert_eq!(area_estimate(&net, &p, &hw(8)).unwrap(), 74.0);
    }

    #[test]
    fn energy_counts_active_lanes() {
        let net = one_layer(1, 3);
        let p = QbnPolicy::uniform(&net, 1, 1);
        // 3 bit-ops on 2 lanes: 2 cycles, 3/4 of the lane-cycles busy
        let e = temporal_energy(&net, &p, &hw(2)).unwrap();
        assert!((e - 2.0 * 0.75 * 1e-12).abs() < 1e-27);
    }

    #[test]
    fn spatial_slots_per_mac() {
        let net = one_layer(1, 1);
        let p = SubKernelPolicy::whole(&net, &QbnPolicy::uniform(&net, 4, 4));
        assert_eq!(spatial_slots(&net, &p, &hw(1)).unwrap(), 4);
        let lat = spatial_latency(&net, &p, &hw(1)).unwrap();
        assert!((lat - 4.0 / 16.0 / 1e8).abs() < 1e-22);
        assert!((spatial_energy(&net, &p, &hw(1)).unwrap() - 16e-12).abs() < 1e-24);
    }

    #[test]
    fn split_kernel_costs_like_its_widest_part() {
        let net = one_layer(1, 10);
        let split = SubKernelPolicy {
            act_qbn: vec![4],
            parts: vec![vec![vec![
                SubKernel { weights: 2, qbn: 2 },
                SubKernel { weights: 2, qbn: 4 },
            ]]],
        };
        let whole = SubKernelPolicy::whole(&net, &QbnPolicy::uniform(&net, 4, 4));
        assert_eq!(
            spatial_latency(&net, &split, &hw(1)).unwrap(),
            spatial_latency(&net, &whole, &hw(1)).unwrap()
        );
    }

    #[test]
    fn invalid_partition() {
        let net = one_layer(1, 10);
        let bad = SubKernelPolicy {
            act_qbn: vec![4],
            parts: vec![vec![vec![SubKernel { weights: 3, qbn: 2 }]]],
        };
        assert!(matches!(
            spatial_latency(&net, &bad, &hw(1)),
            Err(Error::InvalidPolicy(_))
        ));
    }

    #[test]
    fn bound_of_full_and_empty_prefix() {
        let net = one_layer(2, 100);
        let params = derive_sensitivities(&net, &AccuracyConfig::default()).unwrap();
        let p = QbnPolicy {
            act_qbn: vec![3],
            weight_qbn: vec![vec![2, 4]],
        };
        let full = min_remaining_cost(&net, &params, &PartialPolicy::from_policy(&p), &hw(1)).unwrap();
        assert_eq!(full, cost_report(&net, &params, &p, &hw(1)).unwrap());
        let empty = min_remaining_cost(&net, &params, &PartialPolicy::empty(&net), &hw(1)).unwrap();
        assert_eq!(
            empty,
            cost_report(&net, &params, &QbnPolicy::uniform(&net, 0, 1), &hw(1)).unwrap()
        );
    }

    #[test]
    fn hardware_config_parsing() {
        let text = r#"{"lanes": 4, "clock_hz": 1e8, "energy_per_bitop": 1e-12, "base_area": 10,
            "area_per_lane_bit": 1, "fusion_array_rows": 2, "fusion_array_cols": 2,
            "budgets": {"latency_s": 1e-5}}"#;
        let hw = parse_hardware_config(text).unwrap();
        assert_eq!(hw.fusion_digit_bits, 2);
        assert_eq!(hw.budgets.unwrap().latency_s, Some(1e-5));
        let bad = text.replace("\"lanes\": 4", "\"lanes\": 0");
        assert!(matches!(parse_hardware_config(&bad), Err(Error::Config(_))));
        let bad = text.replace(
            "\"fusion_array_rows\"",
            "\"fusion_digit_bits\": 3, \"fusion_array_rows\"",
        );
        assert!(matches!(parse_hardware_config(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn budget_admission() {
        let b = Budgets {
            latency_s: Some(1.0),
            energy_j: None,
            area_units: Some(5.0),
        };
        let r = CostReport {
            accuracy: 0.5,
            latency_s: 1.0,
            energy_j: 1e9,
            area_units: 5.0,
        };
        assert!(b.admits(&r));
        let r = CostReport {
            area_units: 5.000001,
            ..r
        };
        assert_eq!(b.violations(&r), vec!["area"]);
    }
}
