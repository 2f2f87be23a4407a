//! The training loop: collect a rollout, run clipped-surrogate epochs over
//! shuffled minibatches, and log one metrics record per update.
//!
//! Numeric blowups (non-finite losses, gradients, or actions) do not corrupt
//! the result: the trainer keeps a copy of the parameters from the last
//! completed update and restores them before stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::env::{EnvConfig, Observation, ScenarioSpec};
use crate::policy::{HeadKind, PolicyConfig, PolicyNet};
use crate::ppo::loss::{combined_loss, LossConfig, LossStats, Minibatch};
use crate::ppo::rollout::{collect_rollouts, EnvWorker, TrainError, ViewSetup};
use crate::rng::stream;
use crate::views::{build_snapshot_bank, PoseNoise, ViewMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub n_envs: usize,
    pub steps_per_env: usize,
    pub total_updates: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub lam: f64,
    pub clip_eps: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Weight of the invariance term (KL toward task-preserving views).
    pub alpha: f64,
    /// Weight of the sensitivity term (clipped KL toward task-altering views).
    pub beta: f64,
    /// Per-sample cap on the sensitivity KL.
    pub sens_clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub adv_norm: bool,
    pub head: HeadKind,
    pub view_mode: ViewMode,
    pub view_every: usize,
    pub translation_std: f64,
    pub resample_orientation: bool,
    /// Number of pre-rendered background snapshots.
    pub bank_k: usize,
    pub n_distractors: usize,
    /// Seed of the texture/category/lighting split tables. Fixed across
    /// training seeds so every run faces the same held-out conditions.
    pub split_seed: u64,
    pub hidden: usize,
    pub log_std_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            n_envs: 8,
            steps_per_env: 80,
            total_updates: 300,
            epochs: 1,
            minibatch: 160,
            gamma: 0.99,
            lam: 0.95,
            clip_eps: 0.2,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            alpha: 1.0,
            beta: 0.2,
            sens_clip: 0.8,
            entropy_coef: 0.01,
            value_coef: 0.5,
            adv_norm: true,
            head: HeadKind::Gaussian,
            view_mode: ViewMode::Composite,
            view_every: 1,
            translation_std: 0.06,
            resample_orientation: true,
            bank_k: 8,
            n_distractors: 1,
            split_seed: 7,
            hidden: 128,
            log_std_init: -2.0,
        }
    }
}

impl TrainConfig {
    pub fn batch_rows(&self) -> usize {
        self.n_envs * self.steps_per_env
    }

    /// Split-table seed assumed by tools that run without a config file.
    pub fn default_split_seed() -> u64 {
        TrainConfig::default().split_seed
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.n_envs == 0 || self.steps_per_env == 0 || self.total_updates == 0 {
            return fail("n_envs, steps_per_env, and total_updates must be positive".into());
        }
        if self.epochs == 0 || self.minibatch == 0 || self.view_every == 0 || self.bank_k == 0 {
            return fail("epochs, minibatch, view_every, and bank_k must be positive".into());
        }
        if self.batch_rows() % self.minibatch != 0 {
            return fail(format!(
                "minibatch {} must divide the rollout size {}",
                self.minibatch,
                self.batch_rows()
            ));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("lam", self.lam),
            ("clip_eps", self.clip_eps),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("sens_clip", self.sens_clip),
            ("translation_std", self.translation_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            clip_eps: self.clip_eps,
            alpha: self.alpha,
            beta: self.beta,
            sens_clip: self.sens_clip,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            adv_norm: self.adv_norm,
        }
    }
}

/// One line of the training log, serialized as JSONL by callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub ppo_loss: f64,
    pub inv_kl_mean: f64,
    pub sens_kl_mean: f64,
    pub sens_clip_frac: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub rollout_success_rate: f64,
    pub wall_ms: f64,
}

/// Serialize metrics with the wall-clock field removed, for comparing two
/// runs that must agree on everything deterministic.
pub fn metrics_without_wall(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let mut v = serde_json::to_value(r).expect("metrics serialize");
        v.as_object_mut().expect("metrics object").remove("wall_ms");
        out.push_str(&serde_json::to_string(&v).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

/// Observer called once per completed update. Return `false` to stop early.
pub trait TrainHook {
    fn after_update(&mut self, update: usize, record: &MetricsRecord) -> bool {
        let _ = (update, record);
        true
    }
}

pub struct NoopHook;
impl TrainHook for NoopHook {}

pub struct TrainOutput {
    pub net: PolicyNet,
    pub metrics: Vec<MetricsRecord>,
    /// True when training hit a numeric failure and fell back to the
    /// parameters from the last completed update.
    pub diverged: bool,
}

#[derive(Default)]
struct StatsAgg {
    n: usize,
    sums: LossStats,
}

impl StatsAgg {
    fn push(&mut self, s: &LossStats) {
        self.n += 1;
        self.sums.ppo_loss += s.ppo_loss;
        self.sums.value_loss += s.value_loss;
        self.sums.entropy += s.entropy;
        self.sums.clip_frac += s.clip_frac;
        self.sums.inv_kl_mean += s.inv_kl_mean;
        self.sums.sens_kl_mean += s.sens_kl_mean;
        self.sums.sens_clip_frac += s.sens_clip_frac;
    }

    fn mean(&self) -> LossStats {
        let d = self.n.max(1) as f64;
        LossStats {
            ppo_loss: self.sums.ppo_loss / d,
            value_loss: self.sums.value_loss / d,
            entropy: self.sums.entropy / d,
            clip_frac: self.sums.clip_frac / d,
            inv_kl_mean: self.sums.inv_kl_mean / d,
            sens_kl_mean: self.sums.sens_kl_mean / d,
            sens_clip_frac: self.sums.sens_clip_frac / d,
        }
    }
}

/// One gradient step on one minibatch. Actor and critic parameters run at
/// their own learning rates; the Adam step counter advances by one.
fn sgd_step(
    net: &mut PolicyNet,
    adam: &mut Adam,
    mb: &Minibatch,
    loss_cfg: &LossConfig,
    actor_lr: f64,
    critic_lr: f64,
) -> Result<LossStats, TrainError> {
    let tape = Tape::new();
    let bound = net.bind(&tape)?;
    let out = combined_loss(&tape, &bound, mb, loss_cfg)?;
    tape.backward(out.combined)?;

    let named = bound.named_vars();
    let mut grads: Vec<(&'static str, Tensor)> = Vec::with_capacity(named.len());
    for (name, var) in named {
        let g = match tape.grad(var) {
            Some(g) => g,
            None => Tensor::zeros(&tape.shape_of(var)),
        };
        if !g.all_finite() {
            return Err(TrainError::Numeric {
                update: 0,
                msg: format!("non-finite gradient for {name}"),
            });
        }
        grads.push((name, g));
    }
    let mut params = net.named_params_mut();
    let mut updates: Vec<(&str, f64, &mut Tensor, &Tensor)> = Vec::with_capacity(grads.len());
    for ((pname, param), (gname, grad)) in params.iter_mut().zip(&grads) {
        debug_assert_eq!(pname, gname);
        let lr = if PolicyNet::is_critic_param(pname) { critic_lr } else { actor_lr };
        updates.push((pname, lr, param, grad));
    }
    adam.step(&mut updates)?;
    Ok(out.stats)
}

pub fn train(tc: &TrainConfig, hook: &mut dyn TrainHook) -> Result<TrainOutput, TrainError> {
    tc.validate()?;
    let env_cfg = EnvConfig::new(crate::env::build_splits(tc.split_seed));
    env_cfg.validate().map_err(TrainError::Config)?;
    let scenario = ScenarioSpec::train(&env_cfg.splits, tc.n_distractors);
    scenario.validate(&env_cfg.splits).map_err(TrainError::Config)?;

    let pcfg = PolicyConfig {
        input_dim: Observation::input_dim(env_cfg.grid),
        hidden: tc.hidden,
        head: tc.head,
        log_std_init: tc.log_std_init,
    };
    let mut net = PolicyNet::init(pcfg, &mut stream(tc.seed, "init", 0));
    let bank = build_snapshot_bank(
        &env_cfg,
        &env_cfg.splits.texture_train,
        tc.bank_k,
        &mut stream(tc.seed, "bank", 0),
    )?;
    let view = ViewSetup {
        mode: tc.view_mode,
        bank,
        noise: PoseNoise {
            translation_std: tc.translation_std,
            resample_orientation: tc.resample_orientation,
        },
        view_every: tc.view_every,
    };
    let mut workers = (0..tc.n_envs)
        .map(|e| EnvWorker::new(&env_cfg, &scenario, tc.seed, e as u64))
        .collect::<Result<Vec<_>, _>>()?;

    let mut adam = Adam::new(AdamConfig::default());
    let loss_cfg = tc.loss_config();
    let mut last_good = net.clone();
    let mut metrics = Vec::with_capacity(tc.total_updates);
    let mut diverged = false;

    'updates: for update in 0..tc.total_updates {
        let t0 = Instant::now();
        let batch = match collect_rollouts(
            &net,
            &env_cfg,
            &scenario,
            &mut workers,
            tc.steps_per_env,
            &view,
            tc.gamma,
            tc.lam,
        ) {
            Ok(b) => b,
            Err(e) if e.is_numeric() => {
                net = last_good.clone();
                diverged = true;
                break 'updates;
            }
            Err(e) => return Err(e),
        };

        let mut agg = StatsAgg::default();
        for epoch in 0..tc.epochs {
            let mut order: Vec<usize> = (0..batch.rows).collect();
            let shuffle_idx = (update * tc.epochs + epoch) as u64;
            order.shuffle(&mut stream(tc.seed, "shuffle", shuffle_idx));
            for chunk in order.chunks(tc.minibatch) {
                let mb = batch.minibatch(chunk);
                match sgd_step(&mut net, &mut adam, &mb, &loss_cfg, tc.actor_lr, tc.critic_lr) {
                    Ok(stats) => agg.push(&stats),
                    Err(e) if e.is_numeric() => {
                        net = last_good.clone();
                        diverged = true;
                        break 'updates;
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let mean = agg.mean();
        let rec = MetricsRecord {
            step: update,
            ppo_loss: mean.ppo_loss,
            inv_kl_mean: mean.inv_kl_mean,
            sens_kl_mean: mean.sens_kl_mean,
            sens_clip_frac: mean.sens_clip_frac,
            value_loss: mean.value_loss,
            entropy: mean.entropy,
            clip_frac: mean.clip_frac,
            rollout_success_rate: batch.success_rate(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        let keep_going = hook.after_update(update, &rec);
        metrics.push(rec);
        last_good = net.clone();
        if !keep_going {
            break;
        }
    }

    Ok(TrainOutput { net, metrics, diverged })
}
