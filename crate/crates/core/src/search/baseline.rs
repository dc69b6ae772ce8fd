use crate::accuracy::AccuracyModelParams;
use crate::cost::{CostReport, HardwareConfig};
use crate::env::{EnvConfig, QuantEnv, SearchMode};
use crate::error::{Error, Result};
use crate::model::{NetworkSpec, QbnPolicy, MAX_QBN};

/// Largest number of policies an exhaustive search may evaluate.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult {
    pub policy: QbnPolicy,
    pub reward: f64,
    pub report: CostReport,
    /// Policies enumerated, feasible or not.
    pub evaluated: u64,
}

fn normalize_set(set: &[u8], min: u8, what: &str) -> Result<Vec<u8>> {
    let mut v = set.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.is_empty() || v[0] < min || v[v.len() - 1] > MAX_QBN {
        return Err(Error::InvalidArgument(format!(
            "{what} QBN set must be a non-empty subset of {min}..={MAX_QBN}"
        )));
    }
    Ok(v)
}

/// Maximizes the final-policy reward over every index vector of `radices`,
/// keeping the lexicographically smallest policy among equal rewards.
fn exhaustive(
    net: &NetworkSpec,
    hw: &HardwareConfig,
    params: &AccuracyModelParams,
    cfg: &EnvConfig,
    radices: &[usize],
    build: impl Fn(&[usize]) -> QbnPolicy,
) -> Result<BaselineResult> {
    let points = radices
        .iter()
        .try_fold(1u128, |acc, &r| acc.checked_mul(r as u128))
        .unwrap_or(u128::MAX);
    if points > BRUTE_FORCE_LIMIT {
        return Err(Error::SpaceTooLarge {
            points,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let env = QuantEnv::new(net.clone(), hw.clone(), params.clone(), cfg.clone())?;
    let budgets = match cfg.weights.mode {
        SearchMode::ResourceConstrained => cfg.budgets,
        SearchMode::AccuracyGuaranteed => None,
    };
    let mut idx = vec![0usize; radices.len()];
    let mut best: Option<BaselineResult> = None;
    let mut evaluated = 0u64;
    loop {
        let policy = build(&idx);
        let (report, reward) = env.evaluate(&policy)?;
        evaluated += 1;
        if budgets.is_none_or(|b| b.admits(&report)) {
            let better = match &best {
                None => true,
                Some(b) => reward > b.reward || (reward == b.reward && policy < b.policy),
            };
            if better {
                best = Some(BaselineResult {
                    policy,
                    reward,
                    report,
                    evaluated: 0,
                });
            }
        }
        // odometer increment, last index fastest
        let mut d = radices.len();
        loop {
            if d == 0 {
                let mut out =
                    best.ok_or_else(|| Error::InfeasibleBudget("no enumerated policy fits the budgets".into()))?;
                out.evaluated = evaluated;
                return Ok(out);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < radices[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Exhaustive kernel-wise search: every kernel and every activation layer
/// takes any value of its set.
pub fn brute_force_search(
    net: &NetworkSpec,
    hw: &HardwareConfig,
    params: &AccuracyModelParams,
    cfg: &EnvConfig,
    weight_set: &[u8],
    act_set: &[u8],
) -> Result<BaselineResult> {
    let ws = normalize_set(weight_set, 0, "weight")?;
    let acts = normalize_set(act_set, 1, "activation")?;
    let mut radices = Vec::with_capacity(net.policy_entries());
    for layer in &net.layers {
        radices.push(acts.len());
        radices.extend(std::iter::repeat_n(ws.len(), layer.c_out));
    }
    exhaustive(net, hw, params, cfg, &radices, |idx| {
        let mut it = idx.iter();
        let mut policy = QbnPolicy {
            act_qbn: Vec::new(),
            weight_qbn: Vec::new(),
        };
        for layer in &net.layers {
            policy.act_qbn.push(acts[*it.next().expect("radix per entry")]);
            policy.weight_qbn.push(
                (0..layer.c_out)
                    .map(|_| ws[*it.next().expect("radix per entry")])
                    .collect(),
            );
        }
        policy
    })
}

/// Exhaustive layer-wise search: one weight QBN shared by a layer's kernels.
pub fn layerwise_baseline_search(
    net: &NetworkSpec,
    hw: &HardwareConfig,
    params: &AccuracyModelParams,
    cfg: &EnvConfig,
    weight_set: &[u8],
    act_set: &[u8],
) -> Result<BaselineResult> {
    let ws = normalize_set(weight_set, 0, "weight")?;
    let acts = normalize_set(act_set, 1, "activation")?;
    let radices: Vec<usize> = net.layers.iter().flat_map(|_| [acts.len(), ws.len()]).collect();
    exhaustive(net, hw, params, cfg, &radices, |idx| QbnPolicy {
        act_qbn: idx.chunks(2).map(|c| acts[c[0]]).collect(),
        weight_qbn: idx
            .chunks(2)
            .zip(&net.layers)
            .map(|(c, l)| vec![ws[c[1]]; l.c_out])
            .collect(),
    })
}

/// Exhaustive network-wise search: one weight QBN and one activation QBN overall.
pub fn networkwise_baseline_search(
    net: &NetworkSpec,
    hw: &HardwareConfig,
    params: &AccuracyModelParams,
    cfg: &EnvConfig,
    weight_set: &[u8],
    act_set: &[u8],
) -> Result<BaselineResult> {
    let ws = normalize_set(weight_set, 0, "weight")?;
    let acts = normalize_set(act_set, 1, "activation")?;
    exhaustive(net, hw, params, cfg, &[acts.len(), ws.len()], |idx| {
        QbnPolicy::uniform(net, ws[idx[1]], acts[idx[0]])
    })
}
