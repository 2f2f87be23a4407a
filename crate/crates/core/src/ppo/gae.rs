//! Generalized advantage estimation.

/// Backward GAE recursion over one trajectory stream:
///
/// ```text
/// delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)
/// A_t     = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
/// ```
///
/// `bootstrap` is `V` of the observation after the last stored step; a `done`
/// at `t` truncates both the bootstrap and the recursion. Returns
/// `(advantages, returns)` with `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v * not_done - values[t];
        acc = delta + gamma * lambda * not_done * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Direct evaluation of `A_t = sum_k (gamma*lambda)^k delta_{t+k}` with the
/// sum truncated at the first `done`. Quadratic; only used to cross-check the
/// recursion in tests.
pub fn brute_force_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let delta = |t: usize| {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        rewards[t] + gamma * next_v * not_done - values[t]
    };
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for k in t..n {
                acc += w * delta(k);
                if dones[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            acc
        })
        .collect()
}
