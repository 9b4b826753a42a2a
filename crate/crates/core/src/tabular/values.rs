use nalgebra::{DMatrix, DVector};

use super::{induced_chain, TabularMdp};
use crate::error::{Error, Result};
use crate::mdp::Discount;
use crate::policy::{Params, TabularPolicy};

/// Exact value, action-value and constraint-value functions of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctions {
    /// Value of the shaped reward `r + lambda 1(safe)`.
    pub v: DVector<f64>,
    pub q: DMatrix<f64>,
    /// Discounted count of safe visits, `E[sum_t gamma^t 1(s_t safe)]`.
    pub u: DVector<f64>,
}

fn solve_resolvent(p: &DMatrix<f64>, gamma: f64, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    (DMatrix::identity(n, n) - p * gamma)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("resolvent is singular".into()))
}

pub fn value_functions(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    gamma: Discount,
    lambda: f64,
) -> Result<ValueFunctions> {
    let chain = induced_chain(mdp, policy)?;
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let g = gamma.value();
    let shaped = DMatrix::from_fn(n, m, |s, a| {
        mdp.reward(s, a) + if mdp.is_safe(s) { lambda } else { 0.0 }
    });
    let pi = policy.prob_table();
    let r_bar = DVector::from_fn(n, |s, _| (0..m).map(|a| pi[(s, a)] * shaped[(s, a)]).sum());
    let v = solve_resolvent(chain.kernel(), g, r_bar)?;
    let safe = DVector::from_fn(n, |s, _| if mdp.is_safe(s) { 1.0 } else { 0.0 });
    let u = solve_resolvent(chain.kernel(), g, safe)?;
    let q = DMatrix::from_fn(n, m, |s, a| {
        shaped[(s, a)] + g * mdp.row(s, a).iter().zip(v.iter()).map(|(p, v)| p * v).sum::<f64>()
    });
    Ok(ValueFunctions { v, q, u })
}

/// Per-state vectors `D(s) = sum_a Q(s,a) grad pi(a | s)` in the shape of the
/// policy logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DField {
    pub per_state: Vec<Params>,
    /// `sqrt(sum_i (sup_s |D(s)_i|)^2)`.
    pub norm: f64,
}

impl DField {
    /// `sum_s D(s) w(s)`, e.g. with `w` an occupation measure.
    pub fn weighted_sum(&self, w: &[f64]) -> Params {
        let shape = self.per_state[0].shape();
        let mut acc = DMatrix::zeros(shape.0, shape.1);
        for (d, ws) in self.per_state.iter().zip(w) {
            acc += d * *ws;
        }
        acc
    }
}

pub fn d_field(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    gamma: Discount,
    lambda: f64,
) -> Result<DField> {
    let vf = value_functions(mdp, policy, gamma, lambda)?;
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let mut per_state = Vec::with_capacity(n);
    for s in 0..n {
        let mut d = DMatrix::zeros(n, m);
        for a in 0..m {
            // grad pi(a|s) = pi(a|s) grad log pi(a|s)
            let w = vf.q[(s, a)] * policy.prob(s, a);
            d += policy.tabular_score(s, a)? * w;
        }
        per_state.push(d);
    }
    let norm = super::sup_two_norm(&per_state);
    Ok(DField { per_state, norm })
}

/// `L(theta, lambda) = V_z + lambda (U_z - c)` with the unshaped `V`.
pub fn exact_lagrangian(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    gamma: Discount,
    lambda: f64,
    c: f64,
    z: usize,
) -> Result<f64> {
    let plain = value_functions(mdp, policy, gamma, 0.0)?;
    Ok(plain.v[z] + lambda * (plain.u[z] - c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStream};
    use crate::tabular::{occupation_measure, induced_chain};
    use rand::Rng;

    fn gamma(g: f64) -> Discount {
        Discount::new(g).unwrap()
    }

    fn instance(seed: u64) -> (TabularMdp, TabularPolicy) {
        let mut rng = RngStream::new(seed).substream(0, Purpose::Aux);
        let mdp = TabularMdp::random(4, 3, 0.6, &mut rng);
        let logits = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.5..1.5));
        (mdp, TabularPolicy::new(logits).unwrap())
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let (mdp, pol) = instance(1);
        let mdp = mdp.with_rewards(DMatrix::zeros(4, 3)).unwrap();
        let vf = value_functions(&mdp, &pol, gamma(0.9), 0.0).unwrap();
        assert!(vf.v.amax() < 1e-15 && vf.q.amax() < 1e-15);
    }

    #[test]
    fn all_safe_constraint_value_is_horizon_mass() {
        let (mdp, pol) = instance(2);
        let mdp = mdp.with_safe_mask(vec![true; 4]).unwrap();
        let vf = value_functions(&mdp, &pol, gamma(0.95), 0.0).unwrap();
        for u in vf.u.iter() {
            assert!((u - 20.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constraint_value_is_occupation_integral() {
        let (mdp, pol) = instance(3);
        let g = gamma(0.9);
        let vf = value_functions(&mdp, &pol, g, 1.0).unwrap();
        let chain = induced_chain(&mdp, &pol).unwrap();
        for z in 0..4 {
            let rho = occupation_measure(&chain, z, g).unwrap();
            let u: f64 = rho.probs.iter().zip(mdp.safe_mask()).filter(|(_, s)| **s).map(|(p, _)| p).sum();
            assert!((vf.u[z] - u / (1.0 - 0.9)).abs() < 1e-10);
        }
    }

    #[test]
    fn action_independent_q_gives_zero_d_field() {
        // One shared kernel per action and action-independent rewards.
        let mut rng = RngStream::new(4).substream(0, Purpose::Aux);
        let k = crate::tabular::random_stochastic(3, &mut rng);
        let rewards = DMatrix::from_fn(3, 2, |s, _| s as f64);
        let mdp = TabularMdp::new(vec![k.clone(), k], rewards, vec![true, false, true]).unwrap();
        let pol = TabularPolicy::new(DMatrix::from_row_slice(3, 2, &[0.3, -0.2, 1.0, 0.0, 0.0, 2.0])).unwrap();
        let d = d_field(&mdp, &pol, gamma(0.9), 5.0).unwrap();
        assert!(d.norm < 1e-12);
    }

    #[test]
    fn d_field_is_linear_in_the_multiplier() {
        let (mdp, pol) = instance(5);
        let g = gamma(0.9);
        let d0 = d_field(&mdp, &pol, g, 0.0).unwrap();
        let d1 = d_field(&mdp, &pol, g, 3.0).unwrap();
        // Indicator reward alone, scaled by lambda.
        let safe_only = mdp.with_rewards(DMatrix::zeros(4, 3)).unwrap();
        let di = d_field(&safe_only, &pol, g, 3.0).unwrap();
        for s in 0..4 {
            let diff = &d1.per_state[s] - &d0.per_state[s] - &di.per_state[s];
            assert!(diff.amax() < 1e-10);
        }
    }

    #[test]
    fn lagrangian_identities() {
        let (mdp, pol) = instance(6);
        let g = gamma(0.95);
        let plain = value_functions(&mdp, &pol, g, 0.0).unwrap();
        assert_eq!(exact_lagrangian(&mdp, &pol, g, 0.0, 7.0, 1).unwrap(), plain.v[1]);
        let c = plain.u[2];
        assert!((exact_lagrangian(&mdp, &pol, g, 4.0, c, 2).unwrap() - plain.v[2]).abs() < 1e-12);
        // Shaped value minus lambda c, from a separate solve.
        for lambda in [0.5, 1.0, 20.0] {
            let shaped = value_functions(&mdp, &pol, g, lambda).unwrap();
            let l = exact_lagrangian(&mdp, &pol, g, lambda, 3.0, 0).unwrap();
            assert!((l - (shaped.v[0] - lambda * 3.0)).abs() < 1e-10);
        }
    }
}
