//! Hierarchical TD3 agent.
//!
//! The high-level controller (HLC) maps a state to a goal in [0,1]: the
//! activation QBN of a layer, or the target average weight QBN the low-level
//! controller (LLC) should reach across the layer's kernels. The LLC maps a
//! state and the current weight goal to a raw kernel QBN in [0,1].
//!
//! Weight-goal transitions in the HLC buffer keep the LLC's states and
//! actions, so each sampled batch can be relabeled with the goal under which
//! the current LLC would most likely have produced those actions.

pub mod adam;
pub(crate) mod checkpoint;
pub mod mlp;
pub mod replay;
pub mod td3;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::env::{map_action, weight_goal_raw};
use crate::error::{Error, Result};
use crate::model::{StateVector, STATE_DIM};
pub use adam::Adam;
pub use mlp::{Head, Mlp, MlpCache, MlpGrads};
pub use replay::ReplayBuffer;
pub use td3::{actor_loss_grads, critic_input, critic_loss_grads, Batch, Td3, Td3Config, UpdateStats};

use checkpoint::{ByteReader, ByteWriter};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentHyper {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub explore_episodes: usize,
    pub exploit_episodes: usize,
    pub sigma0: f64,
    /// Per-episode noise decay after exploration.
    pub noise_decay: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub gamma_irwd: f64,
    pub gamma_erwd: f64,
    pub zeta_start: f64,
    pub zeta_end: f64,
    pub relabel_candidates: usize,
    pub relabel_std: f64,
    /// TD3 updates per stored transition once the buffer holds a batch.
    pub updates_per_step: usize,
}

impl Default for AgentHyper {
    fn default() -> Self {
        AgentHyper {
            hidden: vec![300, 300],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch: 64,
            buffer_capacity: 2000,
            explore_episodes: 100,
            exploit_episodes: 300,
            sigma0: 0.5,
            noise_decay: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.1,
            target_noise_clip: 0.25,
            gamma_irwd: 0.99,
            gamma_erwd: 0.99,
            zeta_start: 0.1,
            zeta_end: 0.8,
            relabel_candidates: 10,
            relabel_std: 0.1,
            updates_per_step: 1,
        }
    }
}

impl AgentHyper {
    pub fn episodes(&self) -> usize {
        self.explore_episodes + self.exploit_episodes
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let checks = [
            (self.batch > 0, "batch must be positive"),
            (
                self.buffer_capacity >= self.batch,
                "buffer must hold at least one batch",
            ),
            (self.sigma0 >= 0.0, "sigma0 must be non-negative"),
            (
                self.noise_decay > 0.0 && self.noise_decay <= 1.0,
                "noise decay must be in (0,1]",
            ),
            ((0.0..1.0).contains(&self.gamma_irwd), "gamma_irwd must be in [0,1)"),
            ((0.0..1.0).contains(&self.gamma_erwd), "gamma_erwd must be in [0,1)"),
            (
                unit(self.zeta_start) && unit(self.zeta_end),
                "zeta endpoints must be in [0,1]",
            ),
            (
                self.relabel_candidates >= 2,
                "relabeling needs the original and achieved goals",
            ),
            (self.relabel_std >= 0.0, "relabel std must be non-negative"),
            (self.updates_per_step > 0, "updates_per_step must be positive"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(Error::Config((*msg).into()));
        }
        self.td3(1, self.gamma_irwd).validate()
    }

    fn td3(&self, obs_dim: usize, gamma: f64) -> Td3Config {
        Td3Config {
            obs_dim,
            hidden: self.hidden.clone(),
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            gamma,
            tau: self.tau,
            policy_delay: self.policy_delay,
            target_noise: self.target_noise,
            target_noise_clip: self.target_noise_clip,
        }
    }

    /// Reward-shaping weight: linear from `zeta_start` at episode 0 to
    /// `zeta_end` at episode `total - 1`.
    pub fn zeta_schedule(&self, episode: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.zeta_start;
        }
        let t = (episode.min(total - 1)) as f64 / (total - 1) as f64;
        self.zeta_start + (self.zeta_end - self.zeta_start) * t
    }

    /// Exploration std: constant during exploration, then geometric decay.
    pub fn noise_schedule(&self, episode: usize) -> f64 {
        if episode < self.explore_episodes {
            self.sigma0
        } else {
            let k = i32::try_from(episode - self.explore_episodes).unwrap_or(i32::MAX);
            self.sigma0 * self.noise_decay.powi(k)
        }
    }
}

/// `clamp(mean + N(0, sigma), 0, 1)`; `sigma = 0` returns the clamped mean.
pub fn perturb<R: Rng + ?Sized>(mean: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma <= 0.0 {
        return mean.clamp(0.0, 1.0);
    }
    let noise = Normal::new(0.0, sigma).expect("positive std").sample(rng);
    (mean + noise).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowTransition {
    pub state: StateVector,
    pub goal: f64,
    pub action: f64,
    /// Goal-completion share of the intrinsic reward, before the `1 - zeta` weight.
    pub completion: f64,
    /// Extrinsic share of the intrinsic reward, before the `zeta` weight.
    pub erd: f64,
    pub next_state: StateVector,
    pub done: bool,
}

impl LowTransition {
    pub fn reward(&self, zeta: f64) -> f64 {
        (1.0 - zeta) * self.completion + zeta * self.erd
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoalKind {
    Activation,
    Weight,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HighTransition {
    pub kind: GoalKind,
    pub state: StateVector,
    pub goal: f64,
    /// Sum of the extrinsic rewards collected under this goal.
    pub reward: f64,
    pub next_state: StateVector,
    pub done: bool,
    /// LLC states and raw actions under a weight goal; empty for activation goals.
    pub states: Vec<StateVector>,
    pub actions: Vec<f64>,
}

/// Collapses a layer's kernel steps `(state, raw action, eRd)` into one
/// weight-goal transition.
pub fn make_high_transition(
    start: StateVector,
    goal: f64,
    rollout: &[(StateVector, f64, f64)],
    next_state: StateVector,
    done: bool,
) -> Result<HighTransition> {
    if rollout.is_empty() {
        return Err(Error::InvalidArgument("a layer rollout has at least one kernel".into()));
    }
    Ok(HighTransition {
        kind: GoalKind::Weight,
        state: start,
        goal,
        reward: rollout.iter().map(|r| r.2).sum(),
        next_state,
        done,
        states: rollout.iter().map(|r| r.0).collect(),
        actions: rollout.iter().map(|r| r.1).collect(),
    })
}

fn llc_obs(state: &StateVector, goal: f64) -> [f64; STATE_DIM + 1] {
    let mut x = [0.0; STATE_DIM + 1];
    x[..STATE_DIM].copy_from_slice(&state.0);
    x[STATE_DIM] = goal;
    x
}

/// Candidate goals for one weight transition: the original goal, the goal the
/// stored actions achieved, and `n - 2` clamped Gaussian draws around the original.
pub fn relabel_candidates<R: Rng + ?Sized>(high: &HighTransition, n: usize, std: f64, rng: &mut R) -> Vec<f64> {
    let mean_qbn = high.actions.iter().map(|&a| f64::from(map_action(a))).sum::<f64>() / high.actions.len() as f64;
    let mut out = vec![high.goal, weight_goal_raw(mean_qbn)];
    out.extend((2..n).map(|_| perturb(high.goal, std, rng)));
    out
}

/// Log-likelihood proxy of each candidate: `-sum_j (a_j - mu(s_j, g))^2`.
pub fn relabel_scores(high: &HighTransition, candidates: &[f64], llc: &Td3) -> Result<Vec<f64>> {
    let k = high.states.len();
    let mut obs = Array2::zeros((candidates.len() * k, STATE_DIM + 1));
    for (c, &g) in candidates.iter().enumerate() {
        for (j, s) in high.states.iter().enumerate() {
            obs.row_mut(c * k + j).assign(&Array1::from(llc_obs(s, g).to_vec()));
        }
    }
    let mu = llc.act_batch(obs.view())?;
    Ok((0..candidates.len())
        .map(|c| -(0..k).map(|j| (high.actions[j] - mu[c * k + j]).powi(2)).sum::<f64>())
        .collect())
}

/// Highest-scoring candidate; equal scores go to the smaller goal.
pub fn pick_goal(candidates: &[f64], scores: &[f64]) -> f64 {
    let mut best = 0;
    for i in 1..candidates.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && candidates[i] < candidates[best]) {
            best = i;
        }
    }
    candidates[best]
}

/// Relabels a weight-goal transition for the current LLC. Activation goals
/// are returned unchanged since no low-level actions depend on them.
pub fn relabel_goal<R: Rng + ?Sized>(high: &HighTransition, llc: &Td3, hyper: &AgentHyper, rng: &mut R) -> Result<f64> {
    if high.kind == GoalKind::Activation || high.states.is_empty() {
        return Ok(high.goal);
    }
    let candidates = relabel_candidates(high, hyper.relabel_candidates, hyper.relabel_std, rng);
    let scores = relabel_scores(high, &candidates, llc)?;
    Ok(pick_goal(&candidates, &scores))
}

/// Both controllers, their replay buffers and the run's random stream.
#[derive(Clone, Debug)]
pub struct HierarchicalAgent {
    pub hyper: AgentHyper,
    pub hlc: Td3,
    pub llc: Td3,
    pub high: ReplayBuffer<HighTransition>,
    pub low: ReplayBuffer<LowTransition>,
    pub rng: ChaCha8Rng,
    /// Shaping weight applied to stored low-level transitions at training time.
    pub zeta: f64,
}

impl HierarchicalAgent {
    pub fn new(hyper: AgentHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hlc = Td3::new(hyper.td3(STATE_DIM, hyper.gamma_erwd), &mut rng)?;
        let llc = Td3::new(hyper.td3(STATE_DIM + 1, hyper.gamma_irwd), &mut rng)?;
        Ok(HierarchicalAgent {
            high: ReplayBuffer::new(hyper.buffer_capacity),
            low: ReplayBuffer::new(hyper.buffer_capacity),
            zeta: hyper.zeta_start,
            hyper,
            hlc,
            llc,
            rng,
        })
    }

    pub fn select_goal(&mut self, state: &StateVector, sigma: f64) -> Result<f64> {
        let mean = self.hlc.act(&state.0)?;
        Ok(perturb(mean, sigma, &mut self.rng))
    }

    pub fn select_action(&mut self, state: &StateVector, goal: f64, sigma: f64) -> Result<f64> {
        let mean = self.llc.act(&llc_obs(state, goal))?;
        Ok(perturb(mean, sigma, &mut self.rng))
    }

    pub fn store_low(&mut self, t: LowTransition) {
        self.low.push(t);
    }

    pub fn store_high(&mut self, t: HighTransition) {
        self.high.push(t);
    }

    /// One LLC update from a uniform batch, once the buffer holds a full batch.
    pub fn train_low(&mut self) -> Result<Option<UpdateStats>> {
        if self.low.len() < self.hyper.batch {
            return Ok(None);
        }
        let idx = self.low.sample_indices(self.hyper.batch, &mut self.rng);
        let n = idx.len();
        let mut batch = Batch {
            obs: Array2::zeros((n, STATE_DIM + 1)),
            action: Array1::zeros(n),
            reward: Array1::zeros(n),
            next_obs: Array2::zeros((n, STATE_DIM + 1)),
            done: vec![false; n],
        };
        for (row, &i) in idx.iter().enumerate() {
            let t = self.low.get(i).expect("sampled index in range");
            batch
                .obs
                .row_mut(row)
                .assign(&Array1::from(llc_obs(&t.state, t.goal).to_vec()));
            batch
                .next_obs
                .row_mut(row)
                .assign(&Array1::from(llc_obs(&t.next_state, t.goal).to_vec()));
            batch.action[row] = t.action;
            batch.reward[row] = t.reward(self.zeta);
            batch.done[row] = t.done;
        }
        Ok(Some(self.llc.update(&batch, &mut self.rng)?))
    }

    /// One HLC update; every sampled weight transition is relabeled first.
    pub fn train_high(&mut self) -> Result<Option<UpdateStats>> {
        if self.high.len() < self.hyper.batch {
            return Ok(None);
        }
        let idx = self.high.sample_indices(self.hyper.batch, &mut self.rng);
        let n = idx.len();
        let mut batch = Batch {
            obs: Array2::zeros((n, STATE_DIM)),
            action: Array1::zeros(n),
            reward: Array1::zeros(n),
            next_obs: Array2::zeros((n, STATE_DIM)),
            done: vec![false; n],
        };
        for (row, &i) in idx.iter().enumerate() {
            let t = self.high.get(i).expect("sampled index in range");
            batch.obs.row_mut(row).assign(&Array1::from(t.state.0.to_vec()));
            batch
                .next_obs
                .row_mut(row)
                .assign(&Array1::from(t.next_state.0.to_vec()));
            batch.action[row] = relabel_goal(t, &self.llc, &self.hyper, &mut self.rng)?;
            batch.reward[row] = t.reward;
            batch.done[row] = t.done;
        }
        Ok(Some(self.hlc.update(&batch, &mut self.rng)?))
    }

    pub(crate) fn write(&self, w: &mut ByteWriter) {
        w.td3(&self.hlc);
        w.td3(&self.llc);
        w.len(self.high.len());
        for t in self.high.iter() {
            w.u8(match t.kind {
                GoalKind::Activation => 0,
                GoalKind::Weight => 1,
            });
            w.state(&t.state);
            w.f64(t.goal);
            w.f64(t.reward);
            w.state(&t.next_state);
            w.bool(t.done);
            w.len(t.states.len());
            for (s, &a) in t.states.iter().zip(&t.actions) {
                w.state(s);
                w.f64(a);
            }
        }
        w.len(self.low.len());
        for t in self.low.iter() {
            w.state(&t.state);
            w.f64(t.goal);
            w.f64(t.action);
            w.f64(t.completion);
            w.f64(t.erd);
            w.state(&t.next_state);
            w.bool(t.done);
        }
        w.bytes(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        w.u128(self.rng.get_word_pos());
        w.f64(self.zeta);
    }

    /// Restores state written by [`HierarchicalAgent::write`] into an agent
    /// built with the same hyperparameters.
    pub(crate) fn read(hyper: AgentHyper, r: &mut ByteReader) -> Result<Self> {
        let template = HierarchicalAgent::new(hyper.clone(), 0)?;
        let hlc = r.td3(&template.hlc)?;
        let llc = r.td3(&template.llc)?;
        let mut high = ReplayBuffer::new(hyper.buffer_capacity);
        for _ in 0..r.len()? {
            let kind = match r.u8()? {
                0 => GoalKind::Activation,
                1 => GoalKind::Weight,
                v => return Err(Error::Checkpoint(format!("unknown goal kind {v}"))),
            };
            let state = r.state()?;
            let goal = r.f64()?;
            let reward = r.f64()?;
            let next_state = r.state()?;
            let done = r.bool()?;
            let k = r.len()?;
            let mut states = Vec::with_capacity(k);
            let mut actions = Vec::with_capacity(k);
            for _ in 0..k {
                states.push(r.state()?);
                actions.push(r.f64()?);
            }
            high.push(HighTransition {
                kind,
                state,
                goal,
                reward,
                next_state,
                done,
                states,
                actions,
            });
        }
        let mut low = ReplayBuffer::new(hyper.buffer_capacity);
        for _ in 0..r.len()? {
            low.push(LowTransition {
                state: r.state()?,
                goal: r.f64()?,
                action: r.f64()?,
                completion: r.f64()?,
                erd: r.f64()?,
                next_state: r.state()?,
                done: r.bool()?,
            });
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.bytes(32)?);
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(r.u128()?);
        let zeta = r.f64()?;
        Ok(HierarchicalAgent {
            hyper,
            hlc,
            llc,
            high,
            low,
            rng,
            zeta,
        })
    }
}
