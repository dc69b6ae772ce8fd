use serde::{Deserialize, Serialize};

use super::{KernelStats, LayerKind, LayerSpec, LayerWeights, NetworkSpec};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    name: String,
    acc_fp: f64,
    layers: Vec<LayerDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<WeightsDoc>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: String,
    c_in: usize,
    c_out: usize,
    kernel: [usize; 2],
    stride: usize,
    feature: [usize; 2],
    macs_per_kernel: u64,
    #[serde(default = "one")]
    act_sensitivity: f64,
    kernels: Vec<KernelDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelDoc {
    variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensitivity: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsDoc {
    kernels: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    bias: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

/// Parses and validates a network-spec JSON document.
pub fn parse_network_spec(text: &str) -> Result<NetworkSpec> {
    let doc: NetworkDoc = serde_json::from_str(text)?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    let mut kernel_stats = Vec::with_capacity(doc.layers.len());
    let mut act_sensitivity = Vec::with_capacity(doc.layers.len());
    for (index, l) in doc.layers.into_iter().enumerate() {
        let kind = LayerKind::parse(&l.kind)
            .ok_or_else(|| Error::InvalidNetwork(format!("layer {index}: unknown kind {:?}", l.kind)))?;
        layers.push(LayerSpec {
            index,
            kind,
            c_in: l.c_in,
            c_out: l.c_out,
            kernel_w: l.kernel[0],
            kernel_h: l.kernel[1],
            stride: l.stride,
            feat_w: l.feature[0],
            feat_h: l.feature[1],
            macs_per_kernel: l.macs_per_kernel,
        });
        kernel_stats.push(
            l.kernels
                .into_iter()
                .map(|k| KernelStats {
                    variance: k.variance,
                    sensitivity: k.sensitivity,
                })
                .collect(),
        );
        act_sensitivity.push(l.act_sensitivity);
    }
    let weights = doc.weights.map(|ws| {
        ws.into_iter()
            .zip(&layers)
            .map(|(w, layer)| LayerWeights {
                bias: if w.bias.is_empty() {
                    vec![0.0; layer.c_out]
                } else {
                    w.bias
                },
                kernels: w.kernels,
            })
            .collect()
    });
    let net = NetworkSpec {
        name: doc.name,
        acc_fp: doc.acc_fp,
        layers,
        kernel_stats,
        act_sensitivity,
        weights,
    };
    net.validate()?;
    Ok(net)
}

/// Serializes a network spec to the same JSON document format `parse_network_spec` reads.
pub fn serialize_network_spec(net: &NetworkSpec) -> String {
    let doc = NetworkDoc {
        name: net.name.clone(),
        acc_fp: net.acc_fp,
        layers: net
            .layers
            .iter()
            .zip(&net.kernel_stats)
            .zip(&net.act_sensitivity)
            .map(|((l, stats), &act)| LayerDoc {
                kind: l.kind.as_str().to_string(),
                c_in: l.c_in,
                c_out: l.c_out,
                kernel: [l.kernel_w, l.kernel_h],
                stride: l.stride,
                feature: [l.feat_w, l.feat_h],
                macs_per_kernel: l.macs_per_kernel,
                act_sensitivity: act,
                kernels: stats
                    .iter()
                    .map(|s| KernelDoc {
                        variance: s.variance,
                        sensitivity: s.sensitivity,
                    })
                    .collect(),
            })
            .collect(),
        weights: net.weights.as_ref().map(|ws| {
            ws.iter()
                .map(|w| WeightsDoc {
                    kernels: w.kernels.clone(),
                    bias: w.bias.clone(),
                })
                .collect()
        }),
    };
    serde_json::to_string_pretty(&doc).expect("network doc always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_CONV: &str = r#"{
        "name": "one",
        "acc_fp": 0.7,
        "layers": [
            {"kind": "conv", "c_in": 3, "c_out": 2, "kernel": [3, 3], "stride": 1,
             "feature": [8, 8], "macs_per_kernel": 1728,
             "kernels": [{"variance": 0.5}, {"variance": 0.25, "sensitivity": 0.1}]}
        ]
    }"#;

    #[test]
    fn minimal_conv_document() {
        let net = parse_network_spec(ONE_CONV).unwrap();
        assert_eq!(net.n_layers(), 1);
        assert_eq!(net.total_kernels(), 2);
        assert_eq!(net.kernel_stats[0][1].sensitivity, Some(0.1));
        assert_eq!(net.act_sensitivity, vec![1.0]);
        let again = parse_network_spec(&serialize_network_spec(&net)).unwrap();
        assert_eq!(again, net);
    }

    #[test]
    fn fully_connected_with_3x3_kernel_is_rejected() {
        let text = r#"{"name": "bad", "acc_fp": 0.5, "layers": [
            {"kind": "fully-connected", "c_in": 4, "c_out": 1, "kernel": [3, 3], "stride": 0,
             "feature": [1, 1], "macs_per_kernel": 4, "kernels": [{"variance": 1.0}]}]}"#;
        let err = parse_network_spec(text).unwrap_err();
        assert!(
            matches!(err, Error::InvalidNetwork(ref m) if m.contains("layer 0")),
            "{err}"
        );
    }

    #[test]
    fn depthwise_requires_matching_channels() {
        let text = r#"{"name": "dw", "acc_fp": 0.5, "layers": [
            {"kind": "depthwise-conv", "c_in": 4, "c_out": 2, "kernel": [3, 3], "stride": 1,
             "feature": [4, 4], "macs_per_kernel": 9,
             "kernels": [{"variance": 1.0}, {"variance": 1.0}]}]}"#;
        assert!(matches!(parse_network_spec(text), Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn kernel_count_mismatch_names_the_layer() {
        let text = r#"{"name": "x", "acc_fp": 0.5, "layers": [
            {"kind": "conv", "c_in": 1, "c_out": 1, "kernel": [1, 1], "stride": 1,
             "feature": [2, 2], "macs_per_kernel": 4, "kernels": [{"variance": 1.0}]},
            {"kind": "conv", "c_in": 1, "c_out": 3, "kernel": [1, 1], "stride": 1,
             "feature": [2, 2], "macs_per_kernel": 4, "kernels": [{"variance": 1.0}]}]}"#;
        let err = parse_network_spec(text).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_network_spec("{\n  \"name\": \"x\",\n  \"acc_fp\": ,\n}").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_field_is_an_error() {
        let text = r#"{"name": "x", "acc_fp": 0.5, "layers": [], "extra": 1}"#;
        assert!(matches!(parse_network_spec(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn zero_macs_rejected() {
        let text = r#"{"name": "x", "acc_fp": 0.5, "layers": [
            {"kind": "conv", "c_in": 1, "c_out": 1, "kernel": [1, 1], "stride": 1,
             "feature": [2, 2], "macs_per_kernel": 0, "kernels": [{"variance": 1.0}]}]}"#;
        assert!(matches!(parse_network_spec(text), Err(Error::InvalidNetwork(_))));
    }
}
