//! Discrete soft actor-critic objectives in closed form.
//!
//! Expectations over actions are probability-weighted sums over the action
//! axis, never samples. Every loss is a mean over the batch.

use crate::error::{Error, Result};
use crate::ops::log_softmax;
use crate::real::Real;
use crate::tensor::Tensor;

/// Action probabilities and log-probabilities of a categorical policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput<T> {
    pub probs: Tensor<T>,
    pub log_probs: Tensor<T>,
}

impl<T: Real> PolicyOutput<T> {
    pub fn from_logits(logits: &Tensor<T>) -> Self {
        let log_probs = log_softmax(logits);
        let probs = log_probs.map(T::exp);
        Self { probs, log_probs }
    }

    pub fn batch(&self) -> usize {
        self.probs.rows()
    }

    pub fn actions(&self) -> usize {
        self.probs.cols()
    }

    /// Per-row entropy `−Σ π log π`.
    pub fn entropy(&self) -> Vec<T> {
        let a = self.actions();
        self.probs
            .data()
            .chunks(a)
            .zip(self.log_probs.data().chunks(a))
            .map(|(p, l)| -p.iter().zip(l).map(|(&p, &l)| p * l).sum::<T>())
            .collect()
    }
}

fn check_batch<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Soft Bellman targets
/// `y = r + (1 − done)·γ·π(·|s')ᵀ(min_i Q̄ᵢ(s') − α·log π(·|s'))`.
#[allow(clippy::too_many_arguments)]
pub fn q_target<T: Real>(
    next_policy: &PolicyOutput<T>,
    next_q1: &Tensor<T>,
    next_q2: &Tensor<T>,
    rewards: &[T],
    terminals: &[bool],
    alpha: T,
    gamma: T,
) -> Result<Vec<T>> {
    check_batch("q_target", &next_policy.probs, next_q1)?;
    check_batch("q_target", next_q1, next_q2)?;
    let (b, a) = (next_q1.rows(), next_q1.cols());
    if rewards.len() != b || terminals.len() != b {
        return Err(Error::shape(
            "q_target",
            &[b],
            &[rewards.len(), terminals.len()],
        ));
    }
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let mut soft_value = T::zero();
        for j in 0..a {
            let k = i * a + j;
            let min_q = next_q1.data()[k].min(next_q2.data()[k]);
            soft_value = soft_value
                + next_policy.probs.data()[k] * (min_q - alpha * next_policy.log_probs.data()[k]);
        }
        let bootstrap = if terminals[i] {
            T::zero()
        } else {
            gamma * soft_value
        };
        out.push(rewards[i] + bootstrap);
    }
    Ok(out)
}

/// `mean ½(Q(s, a_taken) − y)²` and its gradient w.r.t. all Q outputs
/// (zero for actions that were not taken).
pub fn q_loss<T: Real>(q: &Tensor<T>, actions: &[usize], targets: &[T]) -> Result<(T, Tensor<T>)> {
    let (b, a) = (q.rows(), q.cols());
    if actions.len() != b || targets.len() != b {
        return Err(Error::shape(
            "q_loss",
            q.shape(),
            &[actions.len(), targets.len()],
        ));
    }
    if b == 0 {
        return Err(Error::EmptyInput("q_loss needs a non-empty batch"));
    }
    let inv_b = T::one() / T::from_usize(b).expect("batch fits");
    let half = T::from_f64_lossy(0.5);
    let mut grad = Tensor::zeros(q.shape());
    let mut loss = T::zero();
    for (i, (&act, &y)) in actions.iter().zip(targets).enumerate() {
        if act >= a {
            return Err(Error::Precondition(format!(
                "action {act} out of range for {a} actions"
            )));
        }
        let residual = q.get2(i, act) - y;
        loss = loss + half * residual * residual;
        grad.data_mut()[i * a + act] = residual * inv_b;
    }
    Ok((loss * inv_b, grad))
}

/// `mean π(·|s)ᵀ(α·log π(·|s) − min_i Q_i(s))` with Q detached, and its
/// gradient w.r.t. the policy logits: `∂/∂lₖ = πₖ(fₖ − L_b)/B`.
pub fn policy_loss<T: Real>(
    policy: &PolicyOutput<T>,
    q1: &Tensor<T>,
    q2: &Tensor<T>,
    alpha: T,
) -> Result<(T, Tensor<T>)> {
    check_batch("policy_loss", &policy.probs, q1)?;
    check_batch("policy_loss", q1, q2)?;
    let (b, a) = (q1.rows(), q1.cols());
    if b == 0 {
        return Err(Error::EmptyInput("policy_loss needs a non-empty batch"));
    }
    let inv_b = T::one() / T::from_usize(b).expect("batch fits");
    let mut grad = Tensor::zeros(q1.shape());
    let mut total = T::zero();
    let mut f = vec![T::zero(); a];
    for i in 0..b {
        let row = i * a;
        let mut row_loss = T::zero();
        for j in 0..a {
            let k = row + j;
            f[j] = alpha * policy.log_probs.data()[k] - q1.data()[k].min(q2.data()[k]);
            row_loss = row_loss + policy.probs.data()[k] * f[j];
        }
        for j in 0..a {
            grad.data_mut()[row + j] = policy.probs.data()[row + j] * (f[j] - row_loss) * inv_b;
        }
        total = total + row_loss;
    }
    Ok((total * inv_b, grad))
}

/// `mean π(·|s)ᵀ(−α(log π(·|s) + H))` with `α = exp(log_alpha)` and π
/// detached; returns the loss and its derivative w.r.t. `log_alpha`.
pub fn alpha_loss<T: Real>(
    log_alpha: T,
    policy: &PolicyOutput<T>,
    target_entropy: T,
) -> Result<(T, T)> {
    let (b, a) = (policy.batch(), policy.actions());
    if b == 0 {
        return Err(Error::EmptyInput("alpha_loss needs a non-empty batch"));
    }
    let alpha = log_alpha.exp();
    let mut total = T::zero();
    for (p, l) in policy
        .probs
        .data()
        .chunks(a)
        .zip(policy.log_probs.data().chunks(a))
    {
        for (&p, &l) in p.iter().zip(l) {
            total = total + p * (-(l + target_entropy));
        }
    }
    let mean = total / T::from_usize(b).expect("batch fits");
    // d(α·m)/d(log α) = α·m
    Ok((alpha * mean, alpha * mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rows(r: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn uniform(b: usize, a: usize) -> PolicyOutput<f64> {
        PolicyOutput::from_logits(&Tensor::zeros(&[b, a]))
    }

    #[test]
    fn terminal_target_is_reward() {
        let q = Tensor::filled(&[1, 3], 5.0);
        let y = q_target(&uniform(1, 3), &q, &q, &[1.0], &[true], 0.3, 0.99).unwrap();
        assert_eq!(y, vec![1.0]);
    }

    #[test]
    fn bootstrap_with_unit_q() {
        let q = Tensor::filled(&[1, 4], 1.0);
        let y = q_target(&uniform(1, 4), &q, &q, &[1.0], &[false], 0.0, 0.99).unwrap();
        assert_abs_diff_eq!(y[0], 1.99, epsilon = 1e-12);
    }

    #[test]
    fn entropy_bonus_for_uniform_next_policy() {
        let a = 4;
        let q = Tensor::filled(&[1, a], 1.0);
        let (alpha, gamma) = (0.2, 0.9);
        let y = q_target(&uniform(1, a), &q, &q, &[0.5], &[false], alpha, gamma).unwrap();
        let expected = 0.5 + gamma * 1.0 - alpha * (1.0 / a as f64).ln() * gamma;
        assert_abs_diff_eq!(y[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn target_uses_min_of_critics() {
        let q1 = rows(&[&[1.0, 3.0]]);
        let q2 = rows(&[&[2.0, 0.0]]);
        let y = q_target(&uniform(1, 2), &q1, &q2, &[0.0], &[false], 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(y[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn q_loss_values_and_gather() {
        let q = rows(&[&[2.0, 7.0, -3.0]]);
        let (loss, grad) = q_loss(&q, &[0], &[1.0]).unwrap();
        assert_abs_diff_eq!(loss, 0.5, epsilon = 1e-12);
        assert_eq!(grad.data(), &[1.0, 0.0, 0.0]);

        let q2 = rows(&[&[2.0, -100.0, 55.0]]);
        assert_eq!(q_loss(&q2, &[0], &[1.0]).unwrap().0, loss);

        let exact = rows(&[&[1.0, 4.0], &[0.0, -2.0]]);
        assert_eq!(q_loss(&exact, &[0, 1], &[1.0, -2.0]).unwrap().0, 0.0);
        assert!(q_loss(&exact, &[0, 2], &[1.0, -2.0]).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn policy_loss_uniform_hand_value() {
        let q = Tensor::zeros(&[1, 2]);
        let (loss, _) = policy_loss(&uniform(1, 2), &q, &q, 1.0).unwrap();
        assert_abs_diff_eq!(loss, -0.693147, epsilon = 1e-6);
    }

    #[test]
    fn policy_loss_prefers_argmax_q_when_alpha_zero() {
        let q = rows(&[&[1.0, 0.0, 0.0]]);
        let spread = PolicyOutput::from_logits(&rows(&[&[0.5, 0.0, 0.0]]));
        let sharp = PolicyOutput::from_logits(&rows(&[&[5.0, 0.0, 0.0]]));
        let l_spread = policy_loss(&spread, &q, &q, 0.0).unwrap().0;
        let l_sharp = policy_loss(&sharp, &q, &q, 0.0).unwrap().0;
        assert!(l_sharp < l_spread);
    }

    #[test]
    fn policy_loss_flat_q_independent_of_policy() {
        let q = Tensor::filled(&[1, 3], 2.5);
        let a = PolicyOutput::from_logits(&rows(&[&[0.3, -1.0, 4.0]]));
        let b = PolicyOutput::from_logits(&rows(&[&[0.0, 0.0, 0.0]]));
        let la = policy_loss(&a, &q, &q, 0.0).unwrap().0;
        let lb = policy_loss(&b, &q, &q, 0.0).unwrap().0;
        assert_abs_diff_eq!(la, lb, epsilon = 1e-12);
    }

    #[test]
    fn alpha_loss_hand_values() {
        let (loss, _) = alpha_loss(0.5f64.ln(), &uniform(1, 2), -2.0).unwrap();
        assert_abs_diff_eq!(loss, 1.346574, epsilon = 1e-6);

        let a = 5;
        // uniform entropy log A sits exactly on a target of log A
        let (loss, _) = alpha_loss(0.3, &uniform(2, a), (a as f64).ln()).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);

        // α = 0 in the limit of log α → −∞
        let pol = PolicyOutput::from_logits(&rows(&[&[3.0, -1.0]]));
        let (loss, _) = alpha_loss(-800.0, &pol, -2.0).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_log_prob_over_eighteen_actions() {
        let u = uniform(2, 18);
        for &l in u.log_probs.data() {
            assert_abs_diff_eq!(l, -2.890372, epsilon = 1e-6);
        }
        for e in u.entropy() {
            assert_abs_diff_eq!(e, 18f64.ln(), epsilon = 1e-12);
        }
    }
}
