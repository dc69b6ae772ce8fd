//! Resumable search state.
//!
//! Layout: the magic `AUTOQCKP`, a `u64` version, the seed and episode count
//! the run was started with, the next episode index, the stop flag, the best
//! policy so far, the trace, then both controllers with their optimizers,
//! replay buffers and random stream. Integers are little-endian and floats
//! are stored as raw IEEE-754 bits, so a resumed run continues bit-exactly.

use super::{Best, SearchConfig, Searcher, TraceRow};
use crate::agent::checkpoint::{ByteReader, ByteWriter};
use crate::agent::HierarchicalAgent;
use crate::cost::{CostReport, HardwareConfig};
use crate::error::{Error, Result};
use crate::model::{NetworkSpec, QbnPolicy};

const MAGIC: &[u8; 8] = b"AUTOQCKP";
const VERSION: u64 = 1;

fn write_policy(w: &mut ByteWriter, p: &QbnPolicy) {
    w.len(p.act_qbn.len());
    w.bytes(&p.act_qbn);
    for row in &p.weight_qbn {
        w.len(row.len());
        w.bytes(row);
    }
}

fn read_policy(r: &mut ByteReader) -> Result<QbnPolicy> {
    let n = r.len()?;
    let act_qbn = r.bytes(n)?.to_vec();
    let weight_qbn = (0..n)
        .map(|_| {
            let k = r.len()?;
            Ok(r.bytes(k)?.to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QbnPolicy { act_qbn, weight_qbn })
}

fn write_report(w: &mut ByteWriter, c: &CostReport) {
    for v in [c.accuracy, c.latency_s, c.energy_j, c.area_units] {
        w.f64(v);
    }
}

fn read_report(r: &mut ByteReader) -> Result<CostReport> {
    Ok(CostReport {
        accuracy: r.f64()?,
        latency_s: r.f64()?,
        energy_j: r.f64()?,
        area_units: r.f64()?,
    })
}

impl Searcher {
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u64(VERSION);
        w.u64(self.cfg.seed);
        w.len(self.cfg.episodes);
        w.len(self.episode);
        w.bool(self.stopped);
        w.bool(self.best.is_some());
        if let Some(b) = &self.best {
            write_policy(&mut w, &b.policy);
            write_report(&mut w, &b.report);
            w.f64(b.reward);
            w.len(b.episode);
        }
        w.len(self.trace.len());
        for row in &self.trace {
            w.len(row.episode);
            w.f64(row.reward);
            write_report(&mut w, &row.report);
            w.f64(row.avg_wqbn);
            w.f64(row.avg_aqbn);
            w.f64s(&row.layer_wqbn);
            w.len(row.layer_aqbn.len());
            w.bytes(&row.layer_aqbn);
        }
        self.agent.write(&mut w);
        w.buf
    }

    /// Continues a search from [`Searcher::checkpoint_bytes`] output. The
    /// configuration must match the one the checkpoint was written with.
    pub fn resume(net: &NetworkSpec, hw: &HardwareConfig, cfg: &SearchConfig, bytes: &[u8]) -> Result<Self> {
        let mut s = Searcher::new(net, hw, cfg)?;
        let mut r = ByteReader::new(bytes);
        if r.bytes(8)? != MAGIC {
            return Err(Error::Checkpoint("missing AUTOQCKP header".into()));
        }
        let version = r.u64()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let seed = r.u64()?;
        let episodes = r.len()?;
        if seed != cfg.seed || episodes != cfg.episodes {
            return Err(Error::Checkpoint(format!(
                "checkpoint belongs to seed {seed} with {episodes} episodes"
            )));
        }
        s.episode = r.len()?;
        s.stopped = r.bool()?;
        s.best = if r.bool()? {
            Some(Best {
                policy: read_policy(&mut r)?,
                report: read_report(&mut r)?,
                reward: r.f64()?,
                episode: r.len()?,
            })
        } else {
            None
        };
        let rows = r.len()?;
        s.trace = (0..rows)
            .map(|_| {
                Ok(TraceRow {
                    episode: r.len()?,
                    reward: r.f64()?,
                    report: read_report(&mut r)?,
                    avg_wqbn: r.f64()?,
                    avg_aqbn: r.f64()?,
                    layer_wqbn: r.f64s()?,
                    layer_aqbn: {
                        let n = r.len()?;
                        r.bytes(n)?.to_vec()
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        s.agent = HierarchicalAgent::read(cfg.hyper.clone(), &mut r)?;
        if !r.is_at_end() {
            return Err(Error::Checkpoint("trailing bytes after agent state".into()));
        }
        if let Some(b) = &s.best {
            b.policy.validate(net).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(s)
    }
}
