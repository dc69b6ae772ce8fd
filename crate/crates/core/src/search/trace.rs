use std::path::Path;

use crate::cost::CostReport;
use crate::error::Result;
use crate::model::{avg_act_qbn, avg_weight_qbn, NetworkSpec, QbnPolicy};

pub const TRACE_HEADER: [&str; 8] = [
    "episode",
    "reward",
    "accuracy",
    "latency_s",
    "energy_j",
    "area",
    "avg_wqbn",
    "avg_aqbn",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub reward: f64,
    pub report: CostReport,
    pub avg_wqbn: f64,
    pub avg_aqbn: f64,
    /// Mean weight QBN of each layer.
    pub layer_wqbn: Vec<f64>,
    pub layer_aqbn: Vec<u8>,
}

impl TraceRow {
    pub fn new(
        episode: usize,
        reward: f64,
        report: &CostReport,
        net: &NetworkSpec,
        policy: &QbnPolicy,
    ) -> Result<Self> {
        Ok(TraceRow {
            episode,
            reward,
            report: *report,
            avg_wqbn: avg_weight_qbn(net, policy)?,
            avg_aqbn: avg_act_qbn(net, policy)?,
            layer_wqbn: policy
                .weight_qbn
                .iter()
                .map(|row| row.iter().map(|&w| f64::from(w)).sum::<f64>() / row.len() as f64)
                .collect(),
            layer_aqbn: policy.act_qbn.clone(),
        })
    }
}

/// CSV text of a trace: the fixed columns, then `wqbn_l<i>` and `aqbn_l<i>`
/// per layer.
pub fn trace_csv(rows: &[TraceRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let layers = rows.first().map_or(0, |r| r.layer_wqbn.len());
    let mut header: Vec<String> = TRACE_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend((0..layers).map(|i| format!("wqbn_l{i}")));
    header.extend((0..layers).map(|i| format!("aqbn_l{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.episode.to_string(),
            r.reward.to_string(),
            r.report.accuracy.to_string(),
            r.report.latency_s.to_string(),
            r.report.energy_j.to_string(),
            r.report.area_units.to_string(),
            r.avg_wqbn.to_string(),
            r.avg_aqbn.to_string(),
        ];
        rec.extend(r.layer_wqbn.iter().map(|v| v.to_string()));
        rec.extend(r.layer_aqbn.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv of ascii fields"))
}

pub fn export_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    std::fs::write(path, trace_csv(rows)?)?;
    Ok(())
}
