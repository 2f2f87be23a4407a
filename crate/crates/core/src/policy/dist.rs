use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub const CONT_ACTION_DIM: usize = 3;
pub const DISCRETE_ACTIONS: usize = 6;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `ln(2*pi)`, computed rather than spelled out so the plain and taped paths
/// share the exact same constant.
pub fn ln_2pi() -> f64 {
    (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("action kind does not match distribution kind")]
    KindMismatch,
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("KL divergence is infinite: q has zero mass where p has support")]
    InfiniteKl,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionValue {
    /// Unclipped head sample `(dx, dy, grip_logit)`.
    Continuous(Vec<f64>),
    Discrete(usize),
}

/// Action distribution with every derived quantity in closed form.
/// `log_std` is stored already clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDist {
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
    Categorical { logits: Vec<f64> },
}

impl ActionDist {
    pub fn dim(&self) -> usize {
        match self {
            ActionDist::Gaussian { mean, .. } => mean.len(),
            ActionDist::Categorical { logits } => logits.len(),
        }
    }

    /// Log density (Gaussian) or log mass (categorical) of an action.
    ///
    /// The Gaussian branch mirrors the taped decomposition term by term:
    /// `-0.5 * sum_i [ d_i^2 * exp(-2 ls_i) + 2 ls_i + ln(2 pi) ]`.
    pub fn log_prob(&self, action: &ActionValue) -> Result<f64, PolicyError> {
        match (self, action) {
            (ActionDist::Gaussian { mean, log_std }, ActionValue::Continuous(a)) => {
                if a.len() != mean.len() {
                    return Err(PolicyError::BadInput(format!(
                        "action dim {} vs {}",
                        a.len(),
                        mean.len()
                    )));
                }
                let c = ln_2pi();
                let mut acc = 0.0;
                for i in 0..mean.len() {
                    let d = a[i] - mean[i];
                    let sq = d * d;
                    let invvar = (-2.0 * log_std[i]).exp();
                    let t1 = sq * invvar;
                    let t2 = 2.0 * log_std[i] + c;
                    let term = t1 + t2;
                    acc += term;
                }
                Ok(-0.5 * acc)
            }
            (ActionDist::Categorical { logits }, ActionValue::Discrete(idx)) => {
                if *idx >= logits.len() {
                    return Err(PolicyError::BadInput(format!(
                        "action id {} out of {}",
                        idx,
                        logits.len()
                    )));
                }
                let lse = log_sum_exp(logits);
                Ok(logits[*idx] - lse)
            }
            _ => Err(PolicyError::KindMismatch),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> ActionValue {
        match self {
            ActionDist::Gaussian { mean, log_std } => {
                let a = mean
                    .iter()
                    .zip(log_std)
                    .map(|(&m, &ls)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + ls.exp() * z
                    })
                    .collect();
                ActionValue::Continuous(a)
            }
            ActionDist::Categorical { logits } => {
                let probs = softmax(logits);
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        return ActionValue::Discrete(i);
                    }
                }
                ActionValue::Discrete(probs.len() - 1)
            }
        }
    }

    /// Deterministic action: the mean, or the argmax logit (lowest index on
    /// exact ties).
    pub fn mode(&self) -> ActionValue {
        match self {
            ActionDist::Gaussian { mean, .. } => ActionValue::Continuous(mean.clone()),
            ActionDist::Categorical { logits } => {
                let mut best = 0;
                for (i, &l) in logits.iter().enumerate() {
                    if l > logits[best] {
                        best = i;
                    }
                }
                ActionValue::Discrete(best)
            }
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            ActionDist::Gaussian { log_std, .. } => {
                let mut acc = 0.0;
                for &ls in log_std {
                    acc += ls;
                }
                acc + 0.5 * log_std.len() as f64 * (1.0 + ln_2pi())
            }
            ActionDist::Categorical { logits } => {
                let p = softmax(logits);
                let lse = log_sum_exp(logits);
                let mut acc = 0.0;
                for (pi, &l) in p.iter().zip(logits) {
                    let lp = l - lse;
                    acc += pi * lp;
                }
                -acc
            }
        }
    }

    /// `KL(self || q)` in closed form.
    ///
    /// Diagonal Gaussians:
    /// `sum_i [ (ls_q - ls_p) + 0.5 (var_p + (m_p - m_q)^2) / var_q - 0.5 ]`.
    /// Categorical via logits: `sum_i p_i (log p_i - log q_i)`; the logits
    /// parameterization keeps every `log q_i` finite.
    pub fn kl(&self, q: &ActionDist) -> Result<f64, PolicyError> {
        match (self, q) {
            (
                ActionDist::Gaussian { mean: mp, log_std: lp },
                ActionDist::Gaussian { mean: mq, log_std: lq },
            ) => {
                if mp.len() != mq.len() {
                    return Err(PolicyError::BadInput(format!(
                        "dims {} vs {}",
                        mp.len(),
                        mq.len()
                    )));
                }
                // The variance ratio is computed as exp(-2 (lq - lp)) rather
                // than exp(2 lp) * exp(-2 lq): identical distributions then
                // give exactly 0.0, not an ulp away from it.
                let mut acc = 0.0;
                for i in 0..mp.len() {
                    let dls = lq[i] - lp[i];
                    let ratio = (-2.0 * dls).exp();
                    let dm = mp[i] - mq[i];
                    let dm2 = dm * dm;
                    let invq = (-2.0 * lq[i]).exp();
                    let t_dm = dm2 * invq;
                    let inner = ratio + t_dm;
                    let half = 0.5 * inner;
                    let per = dls + half;
                    acc += per + (-0.5);
                }
                Ok(acc)
            }
            (ActionDist::Categorical { logits: a }, ActionDist::Categorical { logits: b }) => {
                if a.len() != b.len() {
                    return Err(PolicyError::BadInput(format!(
                        "dims {} vs {}",
                        a.len(),
                        b.len()
                    )));
                }
                let pa = softmax(a);
                let la = log_sum_exp(a);
                let lb = log_sum_exp(b);
                let mut acc = 0.0;
                for i in 0..a.len() {
                    let lpa = a[i] - la;
                    let lpb = b[i] - lb;
                    let diff = lpa - lpb;
                    acc += pa[i] * diff;
                }
                Ok(acc)
            }
            _ => Err(PolicyError::KindMismatch),
        }
    }

    /// Monte-Carlo estimate of `KL(self || q)`; the oracle the closed forms
    /// are validated against. Returns `(estimate, standard_error)`.
    pub fn kl_monte_carlo(
        &self,
        q: &ActionDist,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<(f64, f64), PolicyError> {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = self.sample(rng);
            let v = self.log_prob(&x)? - q.log_prob(&x)?;
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        Ok((mean, se))
    }
}

/// KL between explicit probability vectors with the `0 * ln 0 = 0` convention.
/// Errors out when `q_i = 0` while `p_i > 0` (the divergence is infinite).
pub fn kl_categorical_probs(p: &[f64], q: &[f64]) -> Result<f64, PolicyError> {
    if p.len() != q.len() {
        return Err(PolicyError::BadInput(format!("dims {} vs {}", p.len(), q.len())));
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(PolicyError::InfiniteKl);
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc)
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for &v in x {
        s += (v - m).exp();
    }
    m + s.ln()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
    }
    out
}
