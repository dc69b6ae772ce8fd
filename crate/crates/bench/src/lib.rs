//! Shared inputs for the benchmarks.

use autoq_core::cost::HardwareConfig;
use autoq_core::model::parse_network_spec;
use autoq_core::{NetworkSpec, QbnPolicy};

/// Conv network with `layers` layers of `c_out` 3x3 kernels each.
pub fn synthetic_network(layers: usize, c_out: usize) -> NetworkSpec {
    let docs: Vec<String> = (0..layers)
        .map(|l| {
            let kernels: Vec<String> = (0..c_out)
                .map(|k| format!(r#"{{"variance": {}}}"#, 0.05 + ((l * 31 + k * 17) % 97) as f64 / 97.0))
                .collect();
            let c_in = if l == 0 { 3 } else { c_out };
            format!(
                r#"{{"kind": "conv", "c_in": {c_in}, "c_out": {c_out}, "kernel": [3, 3], "stride": 1,
                "feature": [16, 16], "macs_per_kernel": {}, "kernels": [{}]}}"#,
                9 * c_in * 256,
                kernels.join(",")
            )
        })
        .collect();
    parse_network_spec(&format!(
        r#"{{"name": "synthetic", "acc_fp": 0.75, "layers": [{}]}}"#,
        docs.join(",")
    ))
    .expect("synthetic network is valid")
}

/// Policy cycling through every weight QBN and activation QBNs 1..=8.
pub fn graded_policy(net: &NetworkSpec) -> QbnPolicy {
    QbnPolicy {
        act_qbn: (0..net.n_layers()).map(|l| (l % 8) as u8 + 1).collect(),
        weight_qbn: net
            .layers
            .iter()
            .map(|layer| (0..layer.c_out).map(|k| (k % 9) as u8).collect())
            .collect(),
    }
}

pub fn hardware() -> HardwareConfig {
    HardwareConfig {
        lanes: 16,
        clock_hz: 1e8,
        energy_per_bitop: 1e-12,
        base_area: 10.0,
        area_per_lane_bit: 1.0,
        fusion_digit_bits: 2,
        fusion_array_rows: 16,
        fusion_array_cols: 16,
        budgets: None,
    }
}

/// Tiny two-layer network used for the search benchmarks.
pub fn tiny_network() -> NetworkSpec {
    synthetic_network(2, 2)
}
