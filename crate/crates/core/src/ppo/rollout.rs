//! Vectorized experience collection.
//!
//! Each environment owns three named RNG streams (resets, action sampling,
//! view construction), so adding or removing view draws never shifts the
//! episode stream: runs with different auxiliary settings see identical
//! initial scenes. Views are built here, once per transition, and are never
//! rebuilt during optimization.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::AutodiffError;
use crate::env::{
    render, reset, step, ActionCmd, EnvConfig, EnvError, Observation, SceneState, ScenarioSpec,
};
use crate::policy::{ActionValue, HeadKind, PolicyError, PolicyNet};
use crate::ppo::gae::compute_gae;
use crate::ppo::loss::Minibatch;
use crate::rng::stream;
use crate::views::{build_paired_views, PoseNoise, SnapshotBank, ViewMode};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure at update {update}: {msg}")]
    Numeric { update: usize, msg: String },
}

impl TrainError {
    /// Failures that mean "the optimization blew up", as opposed to a
    /// misconfigured run: the trainer falls back to the last good
    /// parameters instead of propagating these.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::Numeric { .. }
                | TrainError::Env(EnvError::Contract(_))
                | TrainError::Autodiff(AutodiffError::NonFinite { .. })
        )
    }
}

/// How (and how often) paired views are built during collection. Built for
/// every config, including ones that weight them at zero, so the view RNG
/// stream advances identically across methods.
pub struct ViewSetup {
    pub mode: ViewMode,
    pub bank: SnapshotBank,
    pub noise: PoseNoise,
    /// Build views on every `view_every`-th step of each env (1 = always).
    pub view_every: usize,
}

/// One environment instance plus its private RNG streams.
pub struct EnvWorker {
    pub state: SceneState,
    pub obs: Observation,
    env_rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    view_rng: ChaCha8Rng,
    ep_return: f64,
}

impl EnvWorker {
    pub fn new(
        cfg: &EnvConfig,
        scenario: &ScenarioSpec,
        seed: u64,
        index: u64,
    ) -> Result<Self, EnvError> {
        let mut env_rng = stream(seed, "env", index);
        let act_rng = stream(seed, "act", index);
        let view_rng = stream(seed, "view", index);
        let state = reset(cfg, scenario, &mut env_rng)?;
        let obs = render(cfg, &state);
        Ok(EnvWorker { state, obs, env_rng, act_rng, view_rng, ep_return: 0.0 })
    }
}

/// Flattened on-policy batch in env-major row order: row `e * T + t` holds
/// step `t` of env `e`. `prev`/`alt` are stored compactly; `view_of_row`
/// maps a global row to its slot in them.
pub struct RolloutBatch {
    pub rows: usize,
    pub input_dim: usize,
    pub obs: Vec<f64>,
    pub prev: Vec<f64>,
    pub alt: Vec<f64>,
    pub view_of_row: Vec<Option<usize>>,
    pub actions_cont: Option<Vec<f64>>,
    pub actions_disc: Option<Vec<usize>>,
    pub logp_old: Vec<f64>,
    pub old_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Per-env value estimate of the observation after the last stored step.
    pub bootstraps: Vec<f64>,
    pub episodes: usize,
    pub successes: usize,
    pub sum_return: f64,
}

impl RolloutBatch {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }

    pub fn mean_episode_return(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.sum_return / self.episodes as f64
        }
    }

    /// Assemble an optimizer minibatch from global row indices. View inputs
    /// keep their pairing: minibatch-local `view_rows` positions line up
    /// with the gathered `prev`/`alt` rows.
    pub fn minibatch(&self, rows_idx: &[usize]) -> Minibatch {
        let k = rows_idx.len();
        let ind = self.input_dim;
        let adim = self.actions_cont.as_ref().map(|a| a.len() / self.rows).unwrap_or(0);
        let mut obs = Vec::with_capacity(k * ind);
        let mut prev = Vec::new();
        let mut alt = Vec::new();
        let mut view_rows = Vec::new();
        let mut actions_cont = self.actions_cont.as_ref().map(|_| Vec::with_capacity(k * adim));
        let mut actions_disc = self.actions_disc.as_ref().map(|_| Vec::with_capacity(k));
        let mut logp_old = Vec::with_capacity(k);
        let mut advantages = Vec::with_capacity(k);
        let mut returns = Vec::with_capacity(k);
        let mut old_values = Vec::with_capacity(k);
        for (i, &r) in rows_idx.iter().enumerate() {
            obs.extend_from_slice(&self.obs[r * ind..(r + 1) * ind]);
            if let Some(ci) = self.view_of_row[r] {
                view_rows.push(i);
                prev.extend_from_slice(&self.prev[ci * ind..(ci + 1) * ind]);
                alt.extend_from_slice(&self.alt[ci * ind..(ci + 1) * ind]);
            }
            if let (Some(dst), Some(src)) = (actions_cont.as_mut(), self.actions_cont.as_ref()) {
                dst.extend_from_slice(&src[r * adim..(r + 1) * adim]);
            }
            if let (Some(dst), Some(src)) = (actions_disc.as_mut(), self.actions_disc.as_ref()) {
                dst.push(src[r]);
            }
            logp_old.push(self.logp_old[r]);
            advantages.push(self.advantages[r]);
            returns.push(self.returns[r]);
            old_values.push(self.old_values[r]);
        }
        Minibatch {
            rows: k,
            input_dim: ind,
            obs,
            prev,
            alt,
            view_rows,
            actions_cont,
            actions_disc,
            logp_old,
            advantages,
            returns,
            old_values,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    net: &PolicyNet,
    cfg: &EnvConfig,
    scenario: &ScenarioSpec,
    workers: &mut [EnvWorker],
    steps_per_env: usize,
    view: &ViewSetup,
    gamma: f64,
    lam: f64,
) -> Result<RolloutBatch, TrainError> {
    let n_envs = workers.len();
    let t_len = steps_per_env;
    let rows = n_envs * t_len;
    let ind = net.cfg.input_dim;
    let adim = net.cfg.head.action_dim();
    let gaussian = net.cfg.head == HeadKind::Gaussian;

    let mut obs_flat = vec![0.0; rows * ind];
    let mut prev_flat = Vec::new();
    let mut alt_flat = Vec::new();
    let mut view_of_row = vec![None; rows];
    let mut n_views = 0usize;
    let mut actions_cont = if gaussian { Some(vec![0.0; rows * adim]) } else { None };
    let mut actions_disc = if gaussian { None } else { Some(vec![0usize; rows]) };
    let mut logp_old = vec![0.0; rows];
    let mut old_values = vec![0.0; rows];
    let mut rewards = vec![0.0; rows];
    let mut dones = vec![false; rows];
    let mut episodes = 0usize;
    let mut successes = 0usize;
    let mut sum_return = 0.0;

    let mut step_inputs = vec![0.0; n_envs * ind];
    for t in 0..t_len {
        for (e, w) in workers.iter().enumerate() {
            step_inputs[e * ind..(e + 1) * ind].copy_from_slice(&w.obs.to_input());
        }
        let plain = net.forward_batch_plain(&step_inputs, n_envs);
        for (e, w) in workers.iter_mut().enumerate() {
            let row = e * t_len + t;
            obs_flat[row * ind..(row + 1) * ind]
                .copy_from_slice(&step_inputs[e * ind..(e + 1) * ind]);

            if t % view.view_every == 0 {
                let pv = build_paired_views(
                    cfg,
                    &w.state,
                    &w.obs,
                    view.mode,
                    &view.bank,
                    &view.noise,
                    &mut w.view_rng,
                )?;
                view_of_row[row] = Some(n_views);
                n_views += 1;
                prev_flat.extend_from_slice(&pv.prev.to_input());
                alt_flat.extend_from_slice(&pv.alt.to_input());
            }

            let dist = plain.dist_at(e);
            let av = dist.sample(&mut w.act_rng);
            logp_old[row] = dist.log_prob(&av)?;
            old_values[row] = plain.value[e];
            let cmd = match &av {
                ActionValue::Continuous(v) => {
                    ActionCmd::Continuous { dx: v[0], dy: v[1], grip_logit: v[2] }
                }
                ActionValue::Discrete(i) => ActionCmd::Discrete(*i),
            };
            match (&av, actions_cont.as_mut(), actions_disc.as_mut()) {
                (ActionValue::Continuous(v), Some(dst), _) => {
                    dst[row * adim..(row + 1) * adim].copy_from_slice(v);
                }
                (ActionValue::Discrete(i), _, Some(dst)) => dst[row] = *i,
                _ => unreachable!("head kind and action kind always agree"),
            }

            let (ns, r, done, _info) = step(cfg, &w.state, &cmd)?;
            rewards[row] = r;
            dones[row] = done;
            w.ep_return += r;
            if done {
                episodes += 1;
                successes += ns.succeeded as usize;
                sum_return += w.ep_return;
                w.ep_return = 0.0;
                w.state = reset(cfg, scenario, &mut w.env_rng)?;
            } else {
                w.state = ns;
            }
            w.obs = render(cfg, &w.state);
        }
    }

    for (e, w) in workers.iter().enumerate() {
        step_inputs[e * ind..(e + 1) * ind].copy_from_slice(&w.obs.to_input());
    }
    let tail = net.forward_batch_plain(&step_inputs, n_envs);
    let bootstraps = tail.value.clone();

    let mut advantages = vec![0.0; rows];
    let mut returns = vec![0.0; rows];
    for e in 0..n_envs {
        let span = e * t_len..(e + 1) * t_len;
        let (adv, ret) = compute_gae(
            &rewards[span.clone()],
            &old_values[span.clone()],
            &dones[span.clone()],
            bootstraps[e],
            gamma,
            lam,
        );
        advantages[span.clone()].copy_from_slice(&adv);
        returns[span].copy_from_slice(&ret);
    }

    if !logp_old.iter().chain(&old_values).chain(&advantages).all(|x| x.is_finite()) {
        return Err(TrainError::Numeric {
            update: 0,
            msg: "non-finite values in collected rollout".into(),
        });
    }

    Ok(RolloutBatch {
        rows,
        input_dim: ind,
        obs: obs_flat,
        prev: prev_flat,
        alt: alt_flat,
        view_of_row,
        actions_cont,
        actions_disc,
        logp_old,
        old_values,
        advantages,
        returns,
        rewards,
        dones,
        bootstraps,
        episodes,
        successes,
        sum_return,
    })
}
