//! Fixed-point forward pass over frozen weights.
//!
//! Each kernel is quantized with the learned-basis quantizer at its policy
//! QBN (pruned kernels become zero; biases stay in full precision). Each
//! layer's input is clamped to `[0, max]` and rounded to an `a`-bit unsigned
//! grid, where `max` is calibrated on the first samples of the dataset.
//! Hidden layers use ReLU; the last layer's outputs are the class scores.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec, NetworkSpec, QbnPolicy};
use crate::quantize::{dequantize, quantize_learned_basis};

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

pub fn parse_dataset(text: &str) -> Result<Vec<Sample>> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceConfig {
    pub calibration_samples: usize,
    pub quantizer_iters: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            calibration_samples: 32,
            quantizer_iters: 30,
        }
    }
}

struct Layer<'a> {
    spec: &'a LayerSpec,
    kernels: Vec<Vec<f64>>,
    bias: &'a [f64],
    act_bits: Option<u8>,
}

fn output_dims(spec: &LayerSpec) -> (usize, usize) {
    match spec.kind {
        LayerKind::FullyConnected => (1, 1),
        _ => (
            (spec.feat_h.saturating_sub(spec.kernel_h)) / spec.stride + 1,
            (spec.feat_w.saturating_sub(spec.kernel_w)) / spec.stride + 1,
        ),
    }
}

fn input_len(spec: &LayerSpec) -> usize {
    match spec.kind {
        LayerKind::FullyConnected => spec.c_in,
        _ => spec.c_in * spec.feat_h * spec.feat_w,
    }
}

fn apply_layer(layer: &Layer, input: &[f64], relu: bool) -> Vec<f64> {
    let spec = layer.spec;
    let (oh, ow) = output_dims(spec);
    let mut out = vec![0.0; spec.c_out * oh * ow];
    for (k, kernel) in layer.kernels.iter().enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = layer.bias[k];
                match spec.kind {
                    LayerKind::FullyConnected => {
                        acc += kernel.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                    }
                    LayerKind::Conv | LayerKind::DepthwiseConv => {
                        let channels: Vec<usize> = if spec.kind == LayerKind::Conv {
                            (0..spec.c_in).collect()
                        } else {
                            vec![k]
                        };
                        for (ci, &c) in channels.iter().enumerate() {
                            for ky in 0..spec.kernel_h {
                                for kx in 0..spec.kernel_w {
                                    let y = oy * spec.stride + ky;
                                    let x = ox * spec.stride + kx;
                                    let w = kernel[(ci * spec.kernel_h + ky) * spec.kernel_w + kx];
                                    acc += w * input[(c * spec.feat_h + y) * spec.feat_w + x];
                                }
                            }
                        }
                    }
                }
                out[(k * oh + oy) * ow + ox] = if relu { acc.max(0.0) } else { acc };
            }
        }
    }
    out
}

fn quantize_activations(values: &mut [f64], bits: u8, max: f64) {
    if max <= 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let step = max / f64::from((1u32 << bits) - 1);
    for v in values.iter_mut() {
        *v = (v.clamp(0.0, max) / step).round() * step;
    }
}

fn run(net: &NetworkSpec, policy: Option<&QbnPolicy>, samples: &[Sample], cfg: &InferenceConfig) -> Result<Vec<usize>> {
    let weights = net
        .weights
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("network {:?} carries no weights", net.name)))?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if let Some(p) = policy {
        p.validate(net)?;
    }
    let last = net.layers.last().expect("validated network has layers");
    if output_dims(last) != (1, 1) {
        return Err(Error::InvalidArgument(
            "last layer must produce one score per class".into(),
        ));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != input_len(&net.layers[0]) {
            return Err(Error::ShapeMismatch(format!(
                "sample {i}: {} features, first layer expects {}",
                s.features.len(),
                input_len(&net.layers[0])
            )));
        }
        if s.label >= last.c_out {
            return Err(Error::InvalidArgument(format!(
                "sample {i}: label {} out of range",
                s.label
            )));
        }
    }

    let mut layers = Vec::with_capacity(net.n_layers());
    for (l, (spec, w)) in net.layers.iter().zip(weights).enumerate() {
        let kernels = match policy {
            None => w.kernels.clone(),
            Some(p) => w
                .kernels
                .iter()
                .zip(&p.weight_qbn[l])
                .map(|(kernel, &bits)| {
                    if bits == 0 {
                        Ok(vec![0.0; kernel.len()])
                    } else {
                        Ok(dequantize(&quantize_learned_basis(kernel, bits, cfg.quantizer_iters)?))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        layers.push(Layer {
            spec,
            kernels,
            bias: &w.bias,
            act_bits: policy.map(|p| p.act_qbn[l]),
        });
    }

    let mut acts: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
    let n_calib = cfg.calibration_samples.clamp(1, acts.len());
    for (l, layer) in layers.iter().enumerate() {
        if input_len(layer.spec) != acts[0].len() {
            return Err(Error::ShapeMismatch(format!(
                "layer {l} expects {} inputs, previous layer produced {}",
                input_len(layer.spec),
                acts[0].len()
            )));
        }
        if let Some(bits) = layer.act_bits {
            let max = acts[..n_calib].iter().flatten().fold(0.0f64, |m, &v| m.max(v));
            acts.iter_mut().for_each(|a| quantize_activations(a, bits, max));
        }
        let relu = l + 1 < layers.len();
        acts = acts.iter().map(|a| apply_layer(layer, a, relu)).collect();
    }
    Ok(acts
        .iter()
        .map(|scores| {
            // first maximum wins
            scores
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect())
}

/// Predicted labels of the quantized network.
pub fn predictions(
    net: &NetworkSpec,
    policy: &QbnPolicy,
    samples: &[Sample],
    cfg: &InferenceConfig,
) -> Result<Vec<usize>> {
    run(net, Some(policy), samples, cfg)
}

/// Predicted labels of the unquantized network.
pub fn full_precision_predictions(net: &NetworkSpec, samples: &[Sample], cfg: &InferenceConfig) -> Result<Vec<usize>> {
    run(net, None, samples, cfg)
}

/// Top-1 accuracy of the quantized frozen network on `samples`.
pub fn frozen_inference_accuracy(
    net: &NetworkSpec,
    policy: &QbnPolicy,
    samples: &[Sample],
    cfg: &InferenceConfig,
) -> Result<f64> {
    let pred = predictions(net, policy, samples, cfg)?;
    let hits = pred.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / samples.len() as f64)
}
