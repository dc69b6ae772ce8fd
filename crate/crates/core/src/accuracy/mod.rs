//! Accuracy oracles.
//!
//! The proxy charges each kernel `s * 4^-w` for a weight QBN `w` and each
//! activation layer `s_a * 4^-a`, subtracted from the full-precision accuracy.
//! A pruned kernel (`w = 0`) pays its full sensitivity. The proxy stands in
//! for the accuracy a quantized network reaches after finetuning.
//!
//! The inference oracle in [`inference`] runs the frozen weights instead and
//! reports top-1 accuracy without finetuning.

mod inference;

pub use inference::{
    frozen_inference_accuracy, full_precision_predictions, parse_dataset, predictions, InferenceConfig, Sample,
};

use crate::error::{Error, Result};
use crate::model::{NetworkSpec, QbnPolicy};

/// Largest total sensitivity accepted; beyond it the proxy is mostly clamped.
pub const SENSITIVITY_CAP: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyConfig {
    /// Total weight sensitivity shared among kernels.
    pub kappa: f64,
    /// Total activation sensitivity shared among layers.
    pub kappa_act: f64,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        AccuracyConfig {
            kappa: 0.5,
            kappa_act: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PruningPenalty {
    /// A pruned kernel loses its entire sensitivity.
    #[default]
    FullSensitivity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyModelParams {
    pub acc_fp: f64,
    pub kernel: Vec<Vec<f64>>,
    pub act: Vec<f64>,
    pub pruning: PruningPenalty,
}

impl AccuracyModelParams {
    pub fn total_sensitivity(&self) -> f64 {
        self.kernel.iter().flatten().sum::<f64>() + self.act.iter().sum::<f64>()
    }

    fn validate(&self) -> Result<()> {
        let all = self.kernel.iter().flatten().chain(&self.act);
        if all.clone().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument(
                "sensitivities must be finite and non-negative".into(),
            ));
        }
        let total = self.total_sensitivity();
        if total > SENSITIVITY_CAP * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "total sensitivity {total} exceeds cap {SENSITIVITY_CAP}"
            )));
        }
        Ok(())
    }
}

/// Derives kernel sensitivities proportional to `variance * macs` and activation
/// sensitivities proportional to `act_sensitivity * layer macs`, scaled to the
/// configured totals. Explicit per-kernel sensitivities in the spec win.
pub fn derive_sensitivities(net: &NetworkSpec, cfg: &AccuracyConfig) -> Result<AccuracyModelParams> {
    if !(cfg.kappa >= 0.0 && cfg.kappa_act >= 0.0) {
        return Err(Error::InvalidArgument("kappa values must be non-negative".into()));
    }
    let weight_mass: f64 = net
        .layers
        .iter()
        .zip(&net.kernel_stats)
        .flat_map(|(l, stats)| stats.iter().map(move |s| s.variance * l.macs_per_kernel as f64))
        .sum();
    let needs_derivation = net.kernel_stats.iter().flatten().any(|s| s.sensitivity.is_none());
    if needs_derivation && weight_mass <= 0.0 {
        return Err(Error::InvalidArgument(
            "all kernel variances are zero; give explicit sensitivities".into(),
        ));
    }
    let kernel = net
        .layers
        .iter()
        .zip(&net.kernel_stats)
        .map(|(l, stats)| {
            stats
                .iter()
                .map(|s| {
                    s.sensitivity
                        .unwrap_or_else(|| cfg.kappa * s.variance * l.macs_per_kernel as f64 / weight_mass)
                })
                .collect()
        })
        .collect();

    let act_mass: Vec<f64> = net
        .layers
        .iter()
        .zip(&net.act_sensitivity)
        .map(|(l, &a)| a * (l.c_out as u64 * l.macs_per_kernel) as f64)
        .collect();
    let total_act: f64 = act_mass.iter().sum();
    let act = act_mass
        .iter()
        .map(|&m| {
            if total_act > 0.0 {
                cfg.kappa_act * m / total_act
            } else {
                0.0
            }
        })
        .collect();

    let params = AccuracyModelParams {
        acc_fp: net.acc_fp,
        kernel,
        act,
        pruning: PruningPenalty::FullSensitivity,
    };
    params.validate()?;
    Ok(params)
}

fn check_shape(params: &AccuracyModelParams, policy: &QbnPolicy) -> Result<()> {
    let ok = params.act.len() == policy.act_qbn.len()
        && params.kernel.len() == policy.weight_qbn.len()
        && params
            .kernel
            .iter()
            .zip(&policy.weight_qbn)
            .all(|(a, b)| a.len() == b.len());
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch("policy does not match the accuracy model".into()))
    }
}

/// Quantization-noise penalty for `bits`: `4^-bits`, and 1 for a pruned kernel.
fn noise(bits: u8) -> f64 {
    0.25f64.powi(i32::from(bits))
}

/// Analytic accuracy in [0,1] of a quantized network.
pub fn proxy_accuracy(params: &AccuracyModelParams, policy: &QbnPolicy) -> Result<f64> {
    check_shape(params, policy)?;
    let weight_loss: f64 = params
        .kernel
        .iter()
        .zip(&policy.weight_qbn)
        .flat_map(|(s, w)| s.iter().zip(w))
        .map(|(&s, &w)| s * noise(w))
        .sum();
    let act_loss: f64 = params
        .act
        .iter()
        .zip(&policy.act_qbn)
        .map(|(&s, &a)| s * noise(a))
        .sum();
    Ok((params.acc_fp - weight_loss - act_loss).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_network_spec;

    fn net_with(variances: &[&[f64]], macs: &[u64]) -> NetworkSpec {
        let layers: Vec<String> = variances
            .iter()
            .zip(macs)
            .map(|(vars, m)| {
                let kernels: Vec<String> = vars.iter().map(|v| format!(r#"{{"variance": {v}}}"#)).collect();
                format!(
                    r#"{{"kind": "conv", "c_in": 1, "c_out": {}, "kernel": [1, 1], "stride": 1,
                    "feature": [4, 4], "macs_per_kernel": {m}, "kernels": [{}]}}"#,
                    vars.len(),
                    kernels.join(",")
                )
            })
            .collect();
        parse_network_spec(&format!(
            r#"{{"name": "n", "acc_fp": 0.8, "layers": [{}]}}"#,
            layers.join(",")
        ))
        .unwrap()
    }

    #[test]
    fn identical_kernels_split_kappa() {
        let p = derive_sensitivities(&net_with(&[&[1.0, 1.0]], &[16]), &AccuracyConfig::default()).unwrap();
        assert_eq!(p.kernel[0], vec![0.25, 0.25]);
        assert!((p.act[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn doubled_variance_doubles_sensitivity() {
        let p = derive_sensitivities(&net_with(&[&[2.0, 1.0]], &[16]), &AccuracyConfig::default()).unwrap();
        assert!((p.kernel[0][0] - 2.0 * p.kernel[0][1]).abs() < 1e-15);
        assert!((p.kernel[0][0] + p.kernel[0][1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_without_overrides_is_error() {
        let net = net_with(&[&[0.0, 0.0]], &[16]);
        assert!(derive_sensitivities(&net, &AccuracyConfig::default()).is_err());
    }

    #[test]
    fn explicit_override_wins() {
        let mut net = net_with(&[&[1.0, 1.0]], &[16]);
        net.kernel_stats[0][0].sensitivity = Some(0.05);
        let p = derive_sensitivities(&net, &AccuracyConfig::default()).unwrap();
        assert_eq!(p.kernel[0][0], 0.05);
        assert_eq!(p.kernel[0][1], 0.25);
    }

    #[test]
    fn cap_is_enforced() {
        let net = net_with(&[&[1.0]], &[16]);
        let cfg = AccuracyConfig {
            kappa: 1.9,
            kappa_act: 0.2,
        };
        assert!(derive_sensitivities(&net, &cfg).is_err());
    }

    #[test]
    fn eight_bit_is_near_full_precision() {
        let net = net_with(&[&[1.0, 3.0], &[0.5]], &[16, 8]);
        let p = derive_sensitivities(&net, &AccuracyConfig::default()).unwrap();
        let acc = proxy_accuracy(&p, &QbnPolicy::uniform(&net, 8, 8)).unwrap();
        let bound = p.total_sensitivity() * 2f64.powi(-16);
        assert!(acc <= net.acc_fp && acc >= net.acc_fp - bound - 1e-15);
    }

    #[test]
    fn everything_pruned() {
        let net = net_with(&[&[1.0, 3.0], &[0.5]], &[16, 8]);
        let p = derive_sensitivities(
            &net,
            &AccuracyConfig {
                kappa: 0.5,
                kappa_act: 0.2,
            },
        )
        .unwrap();
        let acc = proxy_accuracy(&p, &QbnPolicy::uniform(&net, 0, 1)).unwrap();
        let expected = (0.8 - 0.5 - 0.2 * 0.25f64).clamp(0.0, 1.0);
        assert!((acc - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let net = net_with(&[&[1.0, 3.0]], &[16]);
        let p = derive_sensitivities(&net, &AccuracyConfig::default()).unwrap();
        let bad = QbnPolicy {
            act_qbn: vec![8],
            weight_qbn: vec![vec![8]],
        };
        assert!(matches!(proxy_accuracy(&p, &bad), Err(Error::ShapeMismatch(_))));
    }
}
