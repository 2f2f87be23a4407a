//! The combined objective: clipped PPO surrogate, invariance KL toward
//! task-preserving views, clipped sensitivity KL away from task-altering
//! views, clipped value regression, and an entropy bonus.
//!
//! Both view branches are wrapped in `stop_grad`, so only the branch that saw
//! the real observation carries gradient.

use crate::autodiff::{AutodiffError, Result, Tape, Tensor, Var};
use crate::policy::{ln_2pi, BatchHeads, BoundNet};

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub clip_eps: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Per-sample cap on the sensitivity KL before negation.
    pub sens_clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub adv_norm: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            clip_eps: 0.2,
            alpha: 1.0,
            beta: 0.2,
            sens_clip: 0.8,
            value_coef: 0.5,
            entropy_coef: 0.01,
            adv_norm: true,
        }
    }
}

/// One optimizer micro-batch in matrix form. `prev`/`alt` hold the two view
/// inputs for the rows listed in `view_rows`; with the default view cadence
/// that is every row.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub rows: usize,
    pub input_dim: usize,
    pub obs: Vec<f64>,
    pub prev: Vec<f64>,
    pub alt: Vec<f64>,
    pub view_rows: Vec<usize>,
    pub actions_cont: Option<Vec<f64>>,
    pub actions_disc: Option<Vec<usize>>,
    pub logp_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub old_values: Vec<f64>,
}

impl Minibatch {
    pub fn full_views(&self) -> bool {
        self.view_rows.len() == self.rows
            && self.view_rows.iter().enumerate().all(|(i, &r)| i == r)
    }
}

/// Scalar diagnostics extracted while building a combined loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossStats {
    pub ppo_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub inv_kl_mean: f64,
    pub sens_kl_mean: f64,
    pub sens_clip_frac: f64,
}

pub struct CombinedLoss {
    pub combined: Var,
    pub stats: LossStats,
}

/// Mean + population-std normalization with a `1e-8` floor. Left as identity
/// for single-row batches, where centering would zero the only advantage and
/// destroy the surrogate's sign structure.
pub fn normalize_advantages(adv: &[f64], enabled: bool) -> Vec<f64> {
    if !enabled || adv.len() < 2 {
        return adv.to_vec();
    }
    let n = adv.len() as f64;
    let mut mean = 0.0;
    for &a in adv {
        mean += a;
    }
    mean /= n;
    let mut var = 0.0;
    for &a in adv {
        var += (a - mean) * (a - mean);
    }
    let std = (var / n).sqrt().max(1e-8);
    adv.iter().map(|&a| (a - mean) / std).collect()
}

/// `-0.5 * sum_i [ d_i^2 / var_i + 2 ls_i + ln 2pi ]` per row. Mirrors
/// `ActionDist::log_prob` operation for operation.
pub fn gaussian_log_prob_rows(tape: &Tape, heads: &BatchHeads, actions: Var) -> Result<Var> {
    let rows = heads.rows;
    let lsc = heads.log_std.ok_or(AutodiffError::Shape {
        op: "gaussian_log_prob_rows",
        msg: "head has no log_std".into(),
    })?;
    let diff = tape.sub(actions, heads.act)?;
    let sq = tape.mul(diff, diff)?;
    let invvar = tape.exp(tape.scale(lsc, -2.0)?)?;
    let t1 = tape.mul(sq, tape.broadcast_rows(invvar, rows)?)?;
    let t2v = tape.add_scalar(tape.scale(lsc, 2.0)?, ln_2pi())?;
    let terms = tape.add(t1, tape.broadcast_rows(t2v, rows)?)?;
    tape.scale(tape.sum_rows(terms)?, -0.5)
}

pub fn categorical_log_prob_rows(tape: &Tape, heads: &BatchHeads, idx: &[usize]) -> Result<Var> {
    let lsm = tape.log_softmax(heads.act)?;
    tape.gather_rows(lsm, idx)
}

fn log_prob_rows(tape: &Tape, heads: &BatchHeads, mb: &Minibatch) -> Result<Var> {
    match (heads.log_std.is_some(), &mb.actions_cont, &mb.actions_disc) {
        (true, Some(a), _) => {
            let leaf = tape.constant(Tensor::from_vec(&[mb.rows, a.len() / mb.rows], a.clone())?)?;
            gaussian_log_prob_rows(tape, heads, leaf)
        }
        (false, _, Some(idx)) => categorical_log_prob_rows(tape, heads, idx),
        _ => Err(AutodiffError::Shape {
            op: "log_prob_rows",
            msg: "minibatch actions do not match head kind".into(),
        }),
    }
}

/// Per-row `KL(p || q)` for diagonal Gaussians. `q_*` should already be
/// wrapped in `stop_grad` by the caller when used as a target. Mirrors
/// `ActionDist::kl` operation for operation; when p and q are the same node
/// values, the result and its gradient through p are both exactly zero.
pub fn gaussian_kl_rows(
    tape: &Tape,
    p_act: Var,
    p_ls: Var,
    q_act: Var,
    q_ls: Var,
    rows: usize,
) -> Result<Var> {
    let dls = tape.sub(q_ls, p_ls)?;
    let ratio = tape.exp(tape.scale(dls, -2.0)?)?;
    let dmean = tape.sub(p_act, q_act)?;
    let dm2 = tape.mul(dmean, dmean)?;
    let invq = tape.exp(tape.scale(q_ls, -2.0)?)?;
    let t_dm = tape.mul(dm2, tape.broadcast_rows(invq, rows)?)?;
    let inner = tape.add(tape.broadcast_rows(ratio, rows)?, t_dm)?;
    let half = tape.scale(inner, 0.5)?;
    let per = tape.add(tape.broadcast_rows(dls, rows)?, half)?;
    tape.sum_rows(tape.add_scalar(per, -0.5)?)
}

/// Per-row `KL(p || q)` over logits.
pub fn categorical_kl_rows(tape: &Tape, p_logits: Var, q_logits: Var) -> Result<Var> {
    let p_sm = tape.softmax(p_logits)?;
    let p_lsm = tape.log_softmax(p_logits)?;
    let q_lsm = tape.log_softmax(q_logits)?;
    let dif = tape.sub(p_lsm, q_lsm)?;
    tape.sum_rows(tape.mul(p_sm, dif)?)
}

/// Per-row KL between a live head and a frozen view head.
fn view_kl_rows(tape: &Tape, p: &BatchHeads, q: &BatchHeads) -> Result<Var> {
    let q_act = tape.stop_grad(q.act)?;
    match (p.log_std, q.log_std) {
        (Some(pls), Some(qls)) => {
            let q_ls = tape.stop_grad(qls)?;
            gaussian_kl_rows(tape, p.act, pls, q_act, q_ls, p.rows)
        }
        (None, None) => categorical_kl_rows(tape, p.act, q_act),
        _ => Err(AutodiffError::Shape { op: "view_kl_rows", msg: "mixed head kinds".into() }),
    }
}

/// Mean entropy of the batch distribution, as a scalar node.
pub fn entropy_node(tape: &Tape, heads: &BatchHeads) -> Result<Var> {
    match heads.log_std {
        Some(lsc) => {
            let d = tape.shape_of(lsc)[0] as f64;
            tape.add_scalar(tape.sum(lsc)?, 0.5 * d * (1.0 + ln_2pi()))
        }
        None => {
            let sm = tape.softmax(heads.act)?;
            let lsm = tape.log_softmax(heads.act)?;
            let rows = tape.scale(tape.sum_rows(tape.mul(sm, lsm)?)?, -1.0)?;
            tape.mean(rows)
        }
    }
}

/// Clipped-surrogate policy loss (negated objective, to minimize). Also
/// reports the fraction of ratios outside the clip band.
pub fn ppo_loss_from_heads(
    tape: &Tape,
    heads: &BatchHeads,
    mb: &Minibatch,
    clip_eps: f64,
    adv_norm: bool,
) -> Result<(Var, f64)> {
    let adv = normalize_advantages(&mb.advantages, adv_norm);
    let logp_new = log_prob_rows(tape, heads, mb)?;
    let logp_old = tape.constant(Tensor::vector(mb.logp_old.clone()))?;
    let ratio = tape.exp(tape.sub(logp_new, logp_old)?)?;
    let adv_leaf = tape.constant(Tensor::vector(adv))?;
    let surr1 = tape.mul(ratio, adv_leaf)?;
    let clipped = tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)?;
    let surr2 = tape.mul(clipped, adv_leaf)?;
    let m = tape.minimum(surr1, surr2)?;
    let loss = tape.scale(tape.mean(m)?, -1.0)?;
    let clip_frac = tape.with_value(ratio, |r| {
        let n = r.data().iter().filter(|&&x| (x - 1.0).abs() > clip_eps).count();
        n as f64 / r.len() as f64
    });
    Ok((loss, clip_frac))
}

/// Clipped value regression: mean of the elementwise max of squared errors
/// under the raw and the clip-banded value prediction.
pub fn value_loss_from_heads(
    tape: &Tape,
    heads: &BatchHeads,
    mb: &Minibatch,
    clip_eps: f64,
) -> Result<Var> {
    let ret = tape.constant(Tensor::from_vec(&[mb.rows, 1], mb.returns.clone())?)?;
    let vold = tape.constant(Tensor::from_vec(&[mb.rows, 1], mb.old_values.clone())?)?;
    let dv = tape.sub(heads.value, vold)?;
    let vclip = tape.add(vold, tape.clamp(dv, -clip_eps, clip_eps)?)?;
    let e1 = tape.sub(heads.value, ret)?;
    let e1sq = tape.mul(e1, e1)?;
    let e2 = tape.sub(vclip, ret)?;
    let e2sq = tape.mul(e2, e2)?;
    tape.mean(tape.maximum(e1sq, e2sq)?)
}

struct ViewBranches {
    /// Live heads aligned with the view rows; `None` when `obs_heads` can be
    /// reused as-is (all rows carry views).
    p: Option<BatchHeads>,
    prev: Option<BatchHeads>,
    alt: Option<BatchHeads>,
}

/// Forward passes for the rows that carry views. When every row does, the
/// live branch reuses `obs_heads` instead of a second forward.
fn view_branches(tape: &Tape, bound: &BoundNet, mb: &Minibatch) -> Result<ViewBranches> {
    let k = mb.view_rows.len();
    if k == 0 {
        return Ok(ViewBranches { p: None, prev: None, alt: None });
    }
    let ind = mb.input_dim;
    let prev_leaf = tape.constant(Tensor::from_vec(&[k, ind], mb.prev.clone())?)?;
    let alt_leaf = tape.constant(Tensor::from_vec(&[k, ind], mb.alt.clone())?)?;
    let prev = bound.forward_batch(tape, prev_leaf, k)?;
    let alt = bound.forward_batch(tape, alt_leaf, k)?;
    let p = if mb.full_views() {
        None
    } else {
        let mut sel = Vec::with_capacity(k * ind);
        for &r in &mb.view_rows {
            sel.extend_from_slice(&mb.obs[r * ind..(r + 1) * ind]);
        }
        let sel_leaf = tape.constant(Tensor::from_vec(&[k, ind], sel)?)?;
        Some(bound.forward_batch(tape, sel_leaf, k)?)
    };
    Ok(ViewBranches { p, prev: Some(prev), alt: Some(alt) })
}

fn mean_or_zero(tape: &Tape, rows: Option<Var>) -> Result<Var> {
    match rows {
        Some(v) => tape.mean(v),
        None => tape.scalar_const(0.0),
    }
}

/// Standalone invariance objective: mean KL between the live policy and the
/// frozen policy on task-preserving views.
pub fn invariance_loss(tape: &Tape, bound: &BoundNet, mb: &Minibatch) -> Result<Var> {
    let obs_heads = forward_obs(tape, bound, mb)?;
    let branches = view_branches(tape, bound, mb)?;
    let kl = match branches.prev {
        Some(prev) => {
            let p = branches.p.as_ref().unwrap_or(&obs_heads);
            Some(view_kl_rows(tape, p, &prev)?)
        }
        None => None,
    };
    mean_or_zero(tape, kl)
}

/// Standalone sensitivity objective: negated mean of the per-row KL toward
/// task-altering views, capped at `sens_clip`. Bounded in `[-sens_clip, 0]`.
pub fn sensitivity_loss(
    tape: &Tape,
    bound: &BoundNet,
    mb: &Minibatch,
    sens_clip: f64,
) -> Result<Var> {
    let obs_heads = forward_obs(tape, bound, mb)?;
    let branches = view_branches(tape, bound, mb)?;
    let clipped = match branches.alt {
        Some(alt) => {
            let p = branches.p.as_ref().unwrap_or(&obs_heads);
            let kl = view_kl_rows(tape, p, &alt)?;
            Some(tape.clip_min(sens_clip, kl)?)
        }
        None => None,
    };
    tape.scale(mean_or_zero(tape, clipped)?, -1.0)
}

fn forward_obs(tape: &Tape, bound: &BoundNet, mb: &Minibatch) -> Result<BatchHeads> {
    let leaf = tape.constant(Tensor::from_vec(&[mb.rows, mb.input_dim], mb.obs.clone())?)?;
    bound.forward_batch(tape, leaf, mb.rows)
}

/// Standalone clipped-surrogate loss (builds its own forward).
pub fn ppo_loss(
    tape: &Tape,
    bound: &BoundNet,
    mb: &Minibatch,
    clip_eps: f64,
    adv_norm: bool,
) -> Result<Var> {
    let heads = forward_obs(tape, bound, mb)?;
    Ok(ppo_loss_from_heads(tape, &heads, mb, clip_eps, adv_norm)?.0)
}

/// Standalone clipped value loss (builds its own forward).
pub fn value_loss(tape: &Tape, bound: &BoundNet, mb: &Minibatch, clip_eps: f64) -> Result<Var> {
    let heads = forward_obs(tape, bound, mb)?;
    value_loss_from_heads(tape, &heads, mb, clip_eps)
}

/// Full objective sharing one live forward pass:
/// `ppo + alpha*inv + beta*sens + value_coef*value - entropy_coef*entropy`.
/// Auxiliary terms keep their tape nodes even at coefficient zero so the
/// baseline consumes the same graph shape and RNG-free numerics.
pub fn combined_loss(
    tape: &Tape,
    bound: &BoundNet,
    mb: &Minibatch,
    cfg: &LossConfig,
) -> Result<CombinedLoss> {
    let obs_heads = forward_obs(tape, bound, mb)?;
    let (ppo, clip_frac) = ppo_loss_from_heads(tape, &obs_heads, mb, cfg.clip_eps, cfg.adv_norm)?;
    let value = value_loss_from_heads(tape, &obs_heads, mb, cfg.clip_eps)?;
    let entropy = entropy_node(tape, &obs_heads)?;

    let branches = view_branches(tape, bound, mb)?;
    let mut inv_kl_mean = 0.0;
    let mut sens_kl_mean = 0.0;
    let mut sens_clip_frac = 0.0;
    let (inv, sens) = match (&branches.prev, &branches.alt) {
        (Some(prev), Some(alt)) => {
            let p = branches.p.as_ref().unwrap_or(&obs_heads);
            let inv_rows = view_kl_rows(tape, p, prev)?;
            let alt_rows = view_kl_rows(tape, p, alt)?;
            let clipped = tape.clip_min(cfg.sens_clip, alt_rows)?;
            inv_kl_mean = tape.with_value(inv_rows, |t| mean_of(t.data()));
            tape.with_value(alt_rows, |t| {
                sens_kl_mean = mean_of(t.data());
                let over = t.data().iter().filter(|&&x| x > cfg.sens_clip).count();
                sens_clip_frac = over as f64 / t.len().max(1) as f64;
            });
            let inv = tape.mean(inv_rows)?;
            let sens = tape.scale(tape.mean(clipped)?, -1.0)?;
            (inv, sens)
        }
        _ => (tape.scalar_const(0.0)?, tape.scalar_const(0.0)?),
    };

    let mut total = tape.add(ppo, tape.scale(inv, cfg.alpha)?)?;
    total = tape.add(total, tape.scale(sens, cfg.beta)?)?;
    total = tape.add(total, tape.scale(value, cfg.value_coef)?)?;
    total = tape.add(total, tape.scale(entropy, -cfg.entropy_coef)?)?;

    let stats = LossStats {
        ppo_loss: tape.item(ppo),
        value_loss: tape.item(value),
        entropy: tape.item(entropy),
        clip_frac,
        inv_kl_mean,
        sens_kl_mean,
        sens_clip_frac,
    };
    Ok(CombinedLoss { combined: total, stats })
}

fn mean_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += x;
    }
    acc / xs.len() as f64
}
