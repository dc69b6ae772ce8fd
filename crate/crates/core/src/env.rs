//! The hierarchical quantization MDP.
//!
//! An episode walks the layers in order. For each layer the high-level
//! controller first sets the activation QBN (one step), then sets a target
//! average weight QBN through [`QuantEnv::set_weight_goal`], after which the
//! low-level controller assigns one QBN per kernel (one step each).
//!
//! Every step is rewarded with the log-ratio of accuracy to normalized cost,
//! evaluated on the partial policy with undecided entries at 8 bits. Under
//! budgets the environment clips each raw input so the cheapest completion
//! of the policy still fits.

use crate::accuracy::AccuracyModelParams;
use crate::cost::{cost_report, min_remaining_cost, Budgets, CostReport, HardwareConfig};
use crate::error::{Error, Result};
use crate::model::{NetworkSpec, PartialPolicy, Phase, QbnPolicy, StateEncoder, StateVector, MAX_QBN};

/// Largest activation or average-weight goal.
pub const GOAL_MAX: f64 = 8.0;
/// Accuracy floor applied before taking the logarithm.
pub const ACCURACY_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchMode {
    /// Maximize accuracy subject to hard budgets.
    ResourceConstrained,
    /// Trade accuracy (weighted quadratically) against cost.
    AccuracyGuaranteed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardWeights {
    pub psi_acc: f64,
    pub psi_l: f64,
    pub psi_e: f64,
    pub psi_a: f64,
    pub mode: SearchMode,
}

impl RewardWeights {
    pub fn resource_constrained() -> Self {
        RewardWeights {
            psi_acc: 1.0,
            psi_l: 0.0,
            psi_e: 0.0,
            psi_a: 0.0,
            mode: SearchMode::ResourceConstrained,
        }
    }

    pub fn accuracy_guaranteed(psi_l: f64, psi_e: f64, psi_a: f64) -> Result<Self> {
        let w = RewardWeights {
            psi_acc: 2.0,
            psi_l,
            psi_e,
            psi_a,
            mode: SearchMode::AccuracyGuaranteed,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.psi_acc, self.psi_l, self.psi_e, self.psi_a];
        if all.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("reward exponents must be finite and non-negative".into()));
        }
        match self.mode {
            SearchMode::ResourceConstrained if all != [1.0, 0.0, 0.0, 0.0] => Err(Error::Config(
                "resource-constrained mode uses exponents (1, 0, 0, 0)".into(),
            )),
            SearchMode::AccuracyGuaranteed
                if self.psi_acc != 2.0 || self.psi_l >= 1.0 || self.psi_e >= 1.0 || self.psi_a >= 1.0 =>
            {
                Err(Error::Config(
                    "accuracy-guaranteed mode needs psi_acc = 2 and cost exponents below 1".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// When extrinsic reward is paid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RewardTiming {
    /// Every step reports the reward of the partial policy.
    #[default]
    PerStep,
    /// Only the last step pays; all earlier steps return 0.
    Final,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub weights: RewardWeights,
    pub budgets: Option<Budgets>,
    pub timing: RewardTiming,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let has_budgets = self.budgets.is_some_and(|b| !b.is_empty());
        match self.weights.mode {
            SearchMode::ResourceConstrained if !has_budgets => Err(Error::Config(
                "resource-constrained mode needs at least one budget".into(),
            )),
            SearchMode::AccuracyGuaranteed if has_budgets => {
                Err(Error::Config("budgets only apply to resource-constrained mode".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Activation goal to QBN: `ceil(1 + 7g)`, clamped to `1..=8`.
pub fn map_goal_activation(g_raw: f64) -> u8 {
    (1.0 + g_raw * (GOAL_MAX - 1.0)).ceil().clamp(1.0, GOAL_MAX) as u8
}

/// Weight goal to the target average QBN `1 + 7g`.
pub fn map_goal_weight(g_raw: f64) -> f64 {
    1.0 + g_raw.clamp(0.0, 1.0) * (GOAL_MAX - 1.0)
}

/// Raw action to kernel QBN: `ceil(8 ra)`, clamped to `0..=8`.
pub fn map_action(ra: f64) -> u8 {
    (ra * f64::from(MAX_QBN)).ceil().clamp(0.0, f64::from(MAX_QBN)) as u8
}

/// Inverse of [`map_goal_weight`].
pub fn weight_goal_raw(avg_qbn: f64) -> f64 {
    ((avg_qbn - 1.0) / (GOAL_MAX - 1.0)).clamp(0.0, 1.0)
}

impl CostReport {
    /// Latency, energy and area as ratios to `reference`; accuracy unchanged.
    pub fn normalized_by(&self, reference: &CostReport) -> CostReport {
        CostReport {
            accuracy: self.accuracy,
            latency_s: self.latency_s / reference.latency_s,
            energy_j: self.energy_j / reference.energy_j,
            area_units: self.area_units / reference.area_units,
        }
    }
}

/// `ln(acc^psi_acc / (lat^psi_l * en^psi_e * area^psi_a))` on a normalized report.
pub fn extrinsic_reward(normalized: &CostReport, weights: &RewardWeights) -> Result<f64> {
    let r = normalized;
    if ![r.accuracy, r.latency_s, r.energy_j, r.area_units]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::InvalidArgument("cost report has non-finite fields".into()));
    }
    if r.latency_s <= 0.0 || r.energy_j <= 0.0 || r.area_units <= 0.0 {
        return Err(Error::InvalidArgument(
            "latency, energy and area must be positive".into(),
        ));
    }
    let acc = r.accuracy.max(ACCURACY_FLOOR);
    Ok(weights.psi_acc * acc.ln()
        - weights.psi_l * r.latency_s.ln()
        - weights.psi_e * r.energy_j.ln()
        - weights.psi_a * r.area_units.ln())
}

/// Layer intrinsic reward: `(1-zeta) * -|goal*c_out - sum(a)| + zeta * sum(eRd)`.
pub fn intrinsic_reward_layer(goal_qbn: f64, actions: &[u8], erds: &[f64], zeta: f64) -> Result<f64> {
    if actions.is_empty() || actions.len() != erds.len() {
        return Err(Error::ShapeMismatch(
            "one extrinsic reward per kernel action is required".into(),
        ));
    }
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::InvalidArgument(format!("zeta {zeta} outside [0,1]")));
    }
    let c_out = actions.len() as f64;
    let total: f64 = actions.iter().map(|&a| f64::from(a)).sum();
    let gap = (goal_qbn * c_out - total).abs();
    Ok((1.0 - zeta) * -gap + zeta * erds.iter().sum::<f64>())
}

/// Per-kernel share of [`intrinsic_reward_layer`]. `prefix_sum` holds the
/// QBNs of the `j` kernels already decided in the layer. The shares of a
/// layer add up to the layer reward.
pub fn intrinsic_reward_kernel(goal_qbn: f64, j: usize, prefix_sum: f64, action: u8, erd: f64, zeta: f64) -> f64 {
    let before = (goal_qbn * j as f64 - prefix_sum).abs();
    let after = (goal_qbn * (j + 1) as f64 - prefix_sum - f64::from(action)).abs();
    (1.0 - zeta) * -(after - before) + zeta * erd
}

/// Where the episode stands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Position {
    pub layer: usize,
    pub phase: Phase,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: StateVector,
    /// Extrinsic reward of this step.
    pub reward: f64,
    pub done: bool,
    /// QBN written into the policy.
    pub qbn: u8,
    /// Raw input after clipping.
    pub raw: f64,
}

/// Episode state and oracles for one network.
#[derive(Clone, Debug)]
pub struct QuantEnv {
    net: NetworkSpec,
    hw: HardwareConfig,
    params: AccuracyModelParams,
    cfg: EnvConfig,
    encoder: StateEncoder,
    reference: CostReport,
    pos: Position,
    partial: PartialPolicy,
    weight_goal: Option<f64>,
    prev_layer_goal: f64,
    prev_action: f64,
    done: bool,
    last_report: Option<CostReport>,
}

impl QuantEnv {
    pub fn new(net: NetworkSpec, hw: HardwareConfig, params: AccuracyModelParams, cfg: EnvConfig) -> Result<Self> {
        net.validate()?;
        hw.validate()?;
        cfg.validate()?;
        let reference = cost_report(&net, &params, &QbnPolicy::uniform(&net, MAX_QBN, MAX_QBN), &hw)?;
        let encoder = StateEncoder::new(&net);
        let partial = PartialPolicy::empty(&net);
        Ok(QuantEnv {
            net,
            hw,
            params,
            cfg,
            encoder,
            reference,
            pos: Position {
                layer: 0,
                phase: Phase::Activation,
                kernel: 0,
            },
            partial,
            weight_goal: None,
            prev_layer_goal: 0.0,
            prev_action: 0.0,
            done: true,
            last_report: None,
        })
    }

    pub fn net(&self) -> &NetworkSpec {
        &self.net
    }

    pub fn hardware(&self) -> &HardwareConfig {
        &self.hw
    }

    pub fn params(&self) -> &AccuracyModelParams {
        &self.params
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Report of the all-8-bit policy used to normalize cost terms.
    pub fn reference(&self) -> &CostReport {
        &self.reference
    }

    pub fn position(&self) -> Position {
        self.pos
    }

    pub fn partial(&self) -> &PartialPolicy {
        &self.partial
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Number of steps in one episode: one per layer plus one per kernel.
    pub fn episode_len(&self) -> usize {
        self.net.policy_entries()
    }

    pub fn weight_goal(&self) -> Option<f64> {
        self.weight_goal
    }

    /// Starts a new episode and returns the first state.
    pub fn reset(&mut self) -> Result<StateVector> {
        if let Some(b) = self.active_budgets() {
            let floor = min_remaining_cost(&self.net, &self.params, &PartialPolicy::empty(&self.net), &self.hw)?;
            if !b.admits(&floor) {
                return Err(Error::InfeasibleBudget(format!(
                    "the all-minimum policy already exceeds the {} budget",
                    b.violations(&floor).join(", ")
                )));
            }
        }
        self.pos = Position {
            layer: 0,
            phase: Phase::Activation,
            kernel: 0,
        };
        self.partial = PartialPolicy::empty(&self.net);
        self.weight_goal = None;
        self.prev_layer_goal = 0.0;
        self.prev_action = 0.0;
        self.done = false;
        self.last_report = None;
        self.state()
    }

    /// Observation at the current position.
    pub fn state(&self) -> Result<StateVector> {
        self.encoder.encode(
            self.pos.layer,
            self.pos.kernel,
            self.pos.phase,
            self.prev_layer_goal,
            self.prev_action,
        )
    }

    fn active_budgets(&self) -> Option<&Budgets> {
        match self.cfg.weights.mode {
            SearchMode::ResourceConstrained => self.cfg.budgets.as_ref(),
            SearchMode::AccuracyGuaranteed => None,
        }
    }

    fn fits(&self, budgets: &Budgets, trial: &PartialPolicy) -> Result<bool> {
        Ok(budgets.admits(&min_remaining_cost(&self.net, &self.params, trial, &self.hw)?))
    }

    /// Largest raw input allowed at the current position. Weight steps may
    /// always prune; activation steps may always use 1 bit.
    pub fn clip_action_bound(&self) -> Result<f64> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let Some(budgets) = self.active_budgets() else {
            return Ok(1.0);
        };
        let Position { layer, phase, kernel } = self.pos;
        let mut trial = self.partial.clone();
        match phase {
            Phase::Activation => {
                for q in (2..=MAX_QBN).rev() {
                    trial.act_qbn[layer] = Some(q);
                    if self.fits(budgets, &trial)? {
                        return Ok(f64::from(q - 1) / (GOAL_MAX - 1.0));
                    }
                }
                Ok(0.0)
            }
            Phase::Weight => {
                for q in (1..=MAX_QBN).rev() {
                    trial.weight_qbn[layer][kernel] = Some(q);
                    if self.fits(budgets, &trial)? {
                        return Ok(f64::from(q) / f64::from(MAX_QBN));
                    }
                }
                Ok(0.0)
            }
        }
    }

    /// Records the high-level weight goal for the current layer.
    pub fn set_weight_goal(&mut self, g_raw: f64) -> Result<()> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_raw(g_raw)?;
        if self.pos.phase != Phase::Weight || self.pos.kernel != 0 {
            return Err(Error::InvalidArgument(
                "weight goals are set at the start of a layer's weight phase".into(),
            ));
        }
        self.weight_goal = Some(g_raw);
        Ok(())
    }

    /// Applies a goal (activation phase) or action (weight phase).
    pub fn step(&mut self, raw: f64) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_raw(raw)?;
        let raw = raw.min(self.clip_action_bound()?);
        let Position { layer, phase, kernel } = self.pos;
        let qbn = match phase {
            Phase::Activation => {
                let q = map_goal_activation(raw);
                self.partial.act_qbn[layer] = Some(q);
                self.pos = Position {
                    layer,
                    phase: Phase::Weight,
                    kernel: 0,
                };
                self.weight_goal = None;
                self.prev_action = 0.0;
                q
            }
            Phase::Weight => {
                let goal = self.weight_goal.ok_or_else(|| {
                    Error::InvalidArgument("set a weight goal before the layer's first kernel".into())
                })?;
                let q = map_action(raw);
                self.partial.weight_qbn[layer][kernel] = Some(q);
                self.prev_action = f64::from(q) / f64::from(MAX_QBN);
                if kernel + 1 < self.net.layers[layer].c_out {
                    self.pos.kernel += 1;
                } else if layer + 1 < self.net.n_layers() {
                    self.prev_layer_goal = goal;
                    self.prev_action = 0.0;
                    self.pos = Position {
                        layer: layer + 1,
                        phase: Phase::Activation,
                        kernel: 0,
                    };
                } else {
                    self.done = true;
                }
                q
            }
        };

        let reward = match (self.cfg.timing, self.done) {
            (RewardTiming::Final, false) => 0.0,
            _ => {
                let report = cost_report(
                    &self.net,
                    &self.params,
                    &self.partial.complete(MAX_QBN, MAX_QBN),
                    &self.hw,
                )?;
                self.last_report = Some(report);
                extrinsic_reward(&report.normalized_by(&self.reference), &self.cfg.weights)?
            }
        };
        let state = if self.done {
            self.encoder
                .encode(layer, kernel, phase, self.prev_layer_goal, self.prev_action)?
        } else {
            self.state()?
        };
        Ok(StepOutcome {
            state,
            reward,
            done: self.done,
            qbn,
            raw,
        })
    }

    /// The completed policy once the episode is done.
    pub fn final_policy(&self) -> Option<QbnPolicy> {
        (self.done && self.partial.is_complete()).then(|| self.partial.complete(0, 1))
    }

    /// Report of the completed policy once the episode is done.
    pub fn final_report(&self) -> Option<CostReport> {
        if self.done {
            self.last_report
        } else {
            None
        }
    }

    /// Report and extrinsic reward of an arbitrary complete policy.
    pub fn evaluate(&self, policy: &QbnPolicy) -> Result<(CostReport, f64)> {
        policy.validate(&self.net)?;
        let report = cost_report(&self.net, &self.params, policy, &self.hw)?;
        let reward = extrinsic_reward(&report.normalized_by(&self.reference), &self.cfg.weights)?;
        Ok((report, reward))
    }
}

fn check_raw(raw: f64) -> Result<()> {
    if (0.0..=1.0).contains(&raw) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("raw input {raw} outside [0,1]")))
    }
}
