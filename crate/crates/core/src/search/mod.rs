//! Search drivers: the hierarchical RL search, exhaustive baselines, and
//! trace export.

mod baseline;
mod checkpoint;
mod trace;

use std::path::PathBuf;

pub use baseline::{
    brute_force_search, layerwise_baseline_search, networkwise_baseline_search, BaselineResult, BRUTE_FORCE_LIMIT,
};
pub use trace::{export_trace, trace_csv, TraceRow};

use crate::accuracy::{derive_sensitivities, AccuracyConfig, AccuracyModelParams};
use crate::agent::{make_high_transition, AgentHyper, GoalKind, HierarchicalAgent, HighTransition, LowTransition};
use crate::cost::{cost_report, Budgets, CostReport, HardwareConfig};
use crate::env::{
    intrinsic_reward_kernel, map_goal_weight, EnvConfig, QuantEnv, RewardTiming, RewardWeights, SearchMode,
};
use crate::error::{Error, Result};
use crate::model::{NetworkSpec, Phase, QbnPolicy};

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub weights: RewardWeights,
    pub budgets: Option<Budgets>,
    pub timing: RewardTiming,
    pub accuracy: AccuracyConfig,
    /// Training episodes; a final noise-free episode follows them.
    pub episodes: usize,
    pub seed: u64,
    pub hyper: AgentHyper,
    /// Holds the shaping weight constant instead of following the schedule.
    pub zeta_fixed: Option<f64>,
    /// Ends training once an episode reaches this extrinsic reward.
    pub stop_at_reward: Option<f64>,
    /// Writes a checkpoint to `path` after every `every` episodes.
    pub checkpoint: Option<(PathBuf, usize)>,
}

impl SearchConfig {
    pub fn new(weights: RewardWeights, budgets: Option<Budgets>, seed: u64) -> Self {
        let hyper = AgentHyper::default();
        SearchConfig {
            weights,
            budgets,
            timing: RewardTiming::PerStep,
            accuracy: AccuracyConfig::default(),
            episodes: hyper.episodes(),
            seed,
            hyper,
            zeta_fixed: None,
            stop_at_reward: None,
            checkpoint: None,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            weights: self.weights,
            budgets: self.budgets,
            timing: self.timing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config().validate()?;
        self.hyper.validate()?;
        if self.episodes < self.hyper.explore_episodes {
            return Err(Error::Config(format!(
                "{} episodes is fewer than the {} exploration episodes",
                self.episodes, self.hyper.explore_episodes
            )));
        }
        if let Some(z) = self.zeta_fixed {
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::Config(format!("fixed zeta {z} outside [0,1]")));
            }
        }
        if matches!(self.checkpoint, Some((_, 0))) {
            return Err(Error::Config("checkpoint interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best_policy: QbnPolicy,
    pub best_report: CostReport,
    pub best_reward: f64,
    /// Trace row (episode index) where the best policy was found.
    pub best_episode: usize,
    /// One row per training episode, then the noise-free episode.
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq)]
struct Best {
    policy: QbnPolicy,
    report: CostReport,
    reward: f64,
    episode: usize,
}

/// A search in progress; one episode per [`Searcher::run_episode`] call.
#[derive(Debug)]
pub struct Searcher {
    env: QuantEnv,
    agent: HierarchicalAgent,
    cfg: SearchConfig,
    episode: usize,
    best: Option<Best>,
    trace: Vec<TraceRow>,
    stopped: bool,
}

/// Report of a complete policy on the temporal accelerator.
pub fn evaluate_policy(
    net: &NetworkSpec,
    hw: &HardwareConfig,
    params: &AccuracyModelParams,
    policy: &QbnPolicy,
) -> Result<CostReport> {
    policy.validate(net)?;
    cost_report(net, params, policy, hw)
}

impl Searcher {
    pub fn new(net: &NetworkSpec, hw: &HardwareConfig, cfg: &SearchConfig) -> Result<Self> {
        cfg.validate()?;
        let params = derive_sensitivities(net, &cfg.accuracy)?;
        let mut env = QuantEnv::new(net.clone(), hw.clone(), params, cfg.env_config())?;
        // surfaces infeasible budgets before any training
        env.reset()?;
        let agent = HierarchicalAgent::new(cfg.hyper.clone(), cfg.seed)?;
        Ok(Searcher {
            env,
            agent,
            cfg: cfg.clone(),
            episode: 0,
            best: None,
            trace: Vec::new(),
            stopped: false,
        })
    }

    pub fn env(&self) -> &QuantEnv {
        &self.env
    }

    pub fn agent(&self) -> &HierarchicalAgent {
        &self.agent
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.reward)
    }

    /// True once every training episode ran or the stop reward was reached.
    pub fn is_finished(&self) -> bool {
        self.stopped || self.episode >= self.cfg.episodes
    }

    /// Runs one training episode and returns its trace row.
    pub fn run_episode(&mut self) -> Result<&TraceRow> {
        if self.is_finished() {
            return Err(Error::InvalidArgument("all training episodes have run".into()));
        }
        let sigma = self.cfg.hyper.noise_schedule(self.episode);
        let zeta = self
            .cfg
            .zeta_fixed
            .unwrap_or_else(|| self.cfg.hyper.zeta_schedule(self.episode, self.cfg.episodes));
        self.rollout(sigma, zeta, true)?;
        let row = self.trace.last().expect("rollout pushed a row");
        if self.cfg.stop_at_reward.is_some_and(|t| row.reward >= t) {
            self.stopped = true;
        }
        self.episode += 1;
        if let Some((path, every)) = &self.cfg.checkpoint {
            if self.episode.is_multiple_of(*every) {
                std::fs::write(path, self.checkpoint_bytes())?;
            }
        }
        Ok(self.trace.last().expect("row exists"))
    }

    /// Runs the remaining episodes, then one noise-free episode.
    pub fn finish(mut self) -> Result<SearchResult> {
        while !self.is_finished() {
            self.run_episode()?;
        }
        self.rollout(0.0, self.cfg.zeta_fixed.unwrap_or(self.cfg.hyper.zeta_end), false)?;
        let best = self.best.expect("at least the noise-free episode ran");
        Ok(SearchResult {
            best_policy: best.policy,
            best_report: best.report,
            best_reward: best.reward,
            best_episode: best.episode,
            trace: self.trace,
        })
    }

    fn rollout(&mut self, sigma: f64, zeta: f64, learn: bool) -> Result<()> {
        let env = &mut self.env;
        let agent = &mut self.agent;
        agent.zeta = zeta;
        let mut state = env.reset()?;
        while !env.is_done() {
            let layer = env.position().layer;
            debug_assert_eq!(env.position().phase, Phase::Activation);

            let act_state = state;
            let goal = agent.select_goal(&act_state, sigma)?;
            let out = env.step(goal)?;
            let high = HighTransition {
                kind: GoalKind::Activation,
                state: act_state,
                goal: out.raw,
                reward: out.reward,
                next_state: out.state,
                done: false,
                states: Vec::new(),
                actions: Vec::new(),
            };
            if learn {
                agent.store_high(high);
                train(agent, Controller::High)?;
            }

            let start = out.state;
            let weight_goal = agent.select_goal(&start, sigma)?;
            env.set_weight_goal(weight_goal)?;
            let goal_qbn = map_goal_weight(weight_goal);
            let c_out = env.net().layers[layer].c_out;
            let mut s = start;
            let mut prefix = 0.0;
            let mut rollout = Vec::with_capacity(c_out);
            for k in 0..c_out {
                let raw = agent.select_action(&s, weight_goal, sigma)?;
                let out = env.step(raw)?;
                let erd = out.reward;
                let completion = intrinsic_reward_kernel(goal_qbn, k, prefix, out.qbn, 0.0, 0.0);
                prefix += f64::from(out.qbn);
                rollout.push((s, out.raw, erd));
                if learn {
                    agent.store_low(LowTransition {
                        state: s,
                        goal: weight_goal,
                        action: out.raw,
                        completion,
                        erd,
                        next_state: out.state,
                        done: k + 1 == c_out,
                    });
                    train(agent, Controller::Low)?;
                }
                s = out.state;
            }
            if learn {
                agent.store_high(make_high_transition(start, weight_goal, &rollout, s, env.is_done())?);
                train(agent, Controller::High)?;
            }
            state = s;
        }

        let policy = env.final_policy().expect("episode finished");
        let report = env.final_report().expect("episode finished");
        let (_, reward) = env.evaluate(&policy)?;
        if let (SearchMode::ResourceConstrained, Some(b)) = (self.cfg.weights.mode, &self.cfg.budgets) {
            debug_assert!(b.admits(&report), "clipping let a policy exceed its budget");
        }
        let row = TraceRow::new(self.trace.len(), reward, &report, env.net(), &policy)?;
        if self.best.as_ref().is_none_or(|b| reward > b.reward) {
            self.best = Some(Best {
                policy,
                report,
                reward,
                episode: row.episode,
            });
        }
        self.trace.push(row);
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Controller {
    High,
    Low,
}

fn train(agent: &mut HierarchicalAgent, which: Controller) -> Result<()> {
    for _ in 0..agent.hyper.updates_per_step {
        match which {
            Controller::High => agent.train_high()?,
            Controller::Low => agent.train_low()?,
        };
    }
    Ok(())
}

/// Runs a full search: training episodes, then one noise-free episode.
pub fn run_search(net: &NetworkSpec, hw: &HardwareConfig, cfg: &SearchConfig) -> Result<SearchResult> {
    Searcher::new(net, hw, cfg)?.finish()
}
