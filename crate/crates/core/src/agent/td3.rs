use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::adam::Adam;
use super::mlp::{Head, Mlp, MlpGrads};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Td3Config {
    /// Observation width; the actor maps it to one value in [0,1].
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
}

impl Td3Config {
    pub fn new(obs_dim: usize) -> Self {
        Td3Config {
            obs_dim,
            hidden: vec![300, 300],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.1,
            target_noise_clip: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.obs_dim > 0
            && !self.hidden.is_empty()
            && self.hidden.iter().all(|&h| h > 0)
            && self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && (0.0..1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.tau)
            && self.policy_delay > 0
            && self.target_noise >= 0.0
            && self.target_noise_clip >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid TD3 settings {self:?}")))
        }
    }

    fn widths(&self, input: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

/// A batch of transitions with scalar actions in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub action: Array1<f64>,
    pub reward: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: [f64; 2],
    /// Mean critic value of the actor's actions, when the actor was updated.
    pub actor_value: Option<f64>,
}

/// Twin-critic deterministic actor-critic learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Td3 {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    pub(crate) actor_opt: Adam,
    pub(crate) critic_opts: [Adam; 2],
    pub cfg: Td3Config,
    pub(crate) updates: u64,
}

/// Appends the action column to a batch of observations.
pub fn critic_input(obs: ArrayView2<f64>, action: &Array1<f64>) -> Array2<f64> {
    let col = action.view().insert_axis(Axis(1));
    concatenate(Axis(1), &[obs, col]).expect("row counts agree")
}

impl Td3 {
    pub fn new<R: Rng + ?Sized>(cfg: Td3Config, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let actor = Mlp::new(&cfg.widths(cfg.obs_dim), Head::Sigmoid, rng);
        let c1 = Mlp::new(&cfg.widths(cfg.obs_dim + 1), Head::Identity, rng);
        let c2 = Mlp::new(&cfg.widths(cfg.obs_dim + 1), Head::Identity, rng);
        Ok(Td3 {
            actor_opt: Adam::for_mlp(&actor),
            critic_opts: [Adam::for_mlp(&c1), Adam::for_mlp(&c2)],
            actor_target: actor.clone(),
            critic_targets: [c1.clone(), c2.clone()],
            actor,
            critics: [c1, c2],
            cfg,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Deterministic actor output for one observation.
    pub fn act(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.actor.forward_one(obs)?[0])
    }

    /// Actor outputs for a batch of observations.
    pub fn act_batch(&self, obs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.actor.forward(obs)?.column(0).to_owned())
    }

    /// Critic-1 value of one observation-action pair.
    pub fn q_value(&self, obs: &[f64], action: f64) -> Result<f64> {
        let mut x = obs.to_vec();
        x.push(action);
        Ok(self.critics[0].forward_one(&x)?[0])
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let shapes_ok = batch.obs.dim() == (b, self.cfg.obs_dim)
            && batch.next_obs.dim() == (b, self.cfg.obs_dim)
            && batch.reward.len() == b
            && batch.done.len() == b;
        if shapes_ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("inconsistent batch".into()))
        }
    }

    /// `r + gamma * (1 - done) * min_i Q'_i(s', clip(mu'(s') + noise))`.
    pub fn td_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Array1<f64>> {
        self.check_batch(batch)?;
        let mut next_a = self.actor_target.forward(batch.next_obs.view())?.column(0).to_owned();
        if self.cfg.target_noise > 0.0 {
            let normal = Normal::new(0.0, self.cfg.target_noise).expect("positive std");
            let c = self.cfg.target_noise_clip;
            next_a.mapv_inplace(|a| (a + normal.sample(rng).clamp(-c, c)).clamp(0.0, 1.0));
        }
        let x = critic_input(batch.next_obs.view(), &next_a);
        let q1 = self.critic_targets[0].forward(x.view())?;
        let q2 = self.critic_targets[1].forward(x.view())?;
        Ok(Array1::from_shape_fn(batch.len(), |i| {
            let bootstrap = if batch.done[i] {
                0.0
            } else {
                self.cfg.gamma * q1[[i, 0]].min(q2[[i, 0]])
            };
            batch.reward[i] + bootstrap
        }))
    }

    /// One TD3 step: both critics every call, the actor and the targets every
    /// `policy_delay` calls.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let y = self.td_targets(batch, rng)?;
        let x = critic_input(batch.obs.view(), &batch.action);
        let mut critic_loss = [0.0; 2];
        for (i, loss) in critic_loss.iter_mut().enumerate() {
            let (l, grads) = critic_loss_grads(&self.critics[i], x.view(), &y)?;
            *loss = l;
            self.critic_opts[i].step_mlp(&mut self.critics[i], &grads, self.cfg.critic_lr);
        }
        self.updates += 1;

        let mut actor_value = None;
        if self.updates.is_multiple_of(self.cfg.policy_delay) {
            let (loss, grads) = actor_loss_grads(&self.actor, &self.critics[0], batch.obs.view())?;
            actor_value = Some(-loss);
            self.actor_opt.step_mlp(&mut self.actor, &grads, self.cfg.actor_lr);

            let tau = self.cfg.tau;
            self.actor_target.polyak_from(&self.actor, tau);
            for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
                t.polyak_from(c, tau);
            }
        }
        Ok(UpdateStats {
            critic_loss,
            actor_value,
        })
    }
}

/// Mean squared TD error of `critic` on inputs `x` against targets `y`, and
/// its gradient.
pub fn critic_loss_grads(critic: &Mlp, x: ArrayView2<f64>, y: &Array1<f64>) -> Result<(f64, MlpGrads)> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::ShapeMismatch(
            "one target per critic input row is required".into(),
        ));
    }
    let b = y.len() as f64;
    let cache = critic.forward_cached(x)?;
    let diff = &cache.output().column(0) - y;
    let loss = diff.mapv(|d| d * d).sum() / b;
    let upstream = diff.mapv(|d| 2.0 * d / b).insert_axis(Axis(1));
    let (grads, _) = critic.backward(&cache, upstream.view())?;
    Ok((loss, grads))
}

/// Actor loss `-mean Q(s, mu(s))` and its gradient with respect to the actor.
pub fn actor_loss_grads(actor: &Mlp, critic: &Mlp, obs: ArrayView2<f64>) -> Result<(f64, MlpGrads)> {
    let b = obs.nrows() as f64;
    let actor_cache = actor.forward_cached(obs)?;
    let a = actor_cache.output().column(0).to_owned();
    let xa = critic_input(obs, &a);
    let critic_cache = critic.forward_cached(xa.view())?;
    let loss = -critic_cache.output().sum() / b;
    let upstream = Array2::from_elem((obs.nrows(), 1), -1.0 / b);
    let (_, dx) = critic.backward(&critic_cache, upstream.view())?;
    let da = dx.column(obs.ncols()).to_owned().insert_axis(Axis(1));
    let (grads, _) = actor.backward(&actor_cache, da.view())?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(obs_dim: usize, gamma: f64) -> Td3Config {
        Td3Config {
            hidden: vec![32, 32],
            gamma,
            ..Td3Config::new(obs_dim)
        }
    }

    fn batch_of(rewards: &[f64], done: bool) -> Batch {
        let n = rewards.len();
        Batch {
            obs: Array2::from_shape_fn((n, 2), |(i, j)| (i as f64 * 0.37 + j as f64 * 0.11).fract()),
            action: Array1::from_shape_fn(n, |i| (i as f64 * 0.29).fract()),
            reward: Array1::from(rewards.to_vec()),
            next_obs: Array2::from_shape_fn((n, 2), |(i, j)| (i as f64 * 0.53 + j as f64 * 0.07).fract()),
            done: vec![done; n],
        }
    }

    #[test]
    fn terminal_targets_have_no_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = Td3::new(small(2, 0.99), &mut rng).unwrap();
        let batch = batch_of(&[0.5, -1.0, 2.0], true);
        assert_eq!(agent.td_targets(&batch, &mut rng).unwrap(), batch.reward);
    }

    #[test]
    fn zero_gamma_critic_fits_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cfg = small(2, 0.0);
        cfg.critic_lr = 3e-3;
        let mut agent = Td3::new(cfg, &mut rng).unwrap();
        let rewards: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 * 0.2 - 0.4).collect();
        let batch = batch_of(&rewards, false);
        assert_eq!(agent.td_targets(&batch, &mut rng).unwrap(), batch.reward);
        for _ in 0..3000 {
            agent.update(&batch, &mut rng).unwrap();
        }
        let x = critic_input(batch.obs.view(), &batch.action);
        let q = agent.critics[0].forward(x.view()).unwrap();
        for (qi, ri) in q.column(0).iter().zip(&rewards) {
            assert!((qi - ri).abs() < 1e-3, "{qi} vs {ri}");
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = Td3::new(small(2, 0.9), &mut rng).unwrap();
        let batch = batch_of(&[], false);
        assert!(agent.update(&batch, &mut rng).is_err());
    }

    #[test]
    fn actor_updates_follow_policy_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = Td3::new(small(2, 0.9), &mut rng).unwrap();
        let batch = batch_of(&[0.1, 0.2], false);
        let before = agent.actor.clone();
        assert!(agent.update(&batch, &mut rng).unwrap().actor_value.is_none());
        assert_eq!(agent.actor, before);
        assert!(agent.update(&batch, &mut rng).unwrap().actor_value.is_some());
        assert_ne!(agent.actor, before);
    }
}
