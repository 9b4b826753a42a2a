//! The inner-product lower bounds relating gradients and constraint values
//! evaluated from two different start states.

use nalgebra::DMatrix;

use super::{d_field, induced_chain, occupation_measure, tv_distance, TabularMdp};
use crate::error::{domain, Result};
use crate::mdp::Discount;
use crate::policy::{Params, TabularPolicy};

/// Absolute slack allowed on every inequality.
pub const INEQUALITY_SLACK: f64 = 1e-9;

/// `sqrt(sum_i (sup_s |R(s)_i|)^2)` for per-state arrays of a common shape.
pub fn sup_two_norm(per_state: &[Params]) -> f64 {
    let Some(first) = per_state.first() else {
        return 0.0;
    };
    let mut sup = DMatrix::<f64>::zeros(first.nrows(), first.ncols());
    for r in per_state {
        sup.zip_apply(r, |m, x| *m = m.max(x.abs()));
    }
    sup.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub q: f64,
    pub h: f64,
    pub r_norm: f64,
    pub tv: f64,
    pub bound: f64,
    /// `q - bound`; negative beyond the tolerance means a violation.
    pub slack: f64,
    pub holds: bool,
}

/// `q = <sum_s R(s) rho_z(s), sum_s R(s) rho_z'(s)>` against
/// `H (H - 2 |R|_{inf,2} TV(rho_z', rho_z))` with `H = |sum_s R(s) rho_z(s)|`.
pub fn lemma_check(r: &[Params], rho_z: &[f64], rho_zp: &[f64]) -> Result<LemmaReport> {
    if r.is_empty() || r.len() != rho_z.len() || r.len() != rho_zp.len() {
        return domain("R, rho_z and rho_z' must cover the same nonempty state set");
    }
    let shape = r[0].shape();
    if r.iter().any(|x| x.shape() != shape) {
        return domain("every R(s) must have the same shape");
    }
    let integrate = |w: &[f64]| {
        let mut acc = DMatrix::<f64>::zeros(shape.0, shape.1);
        for (x, ws) in r.iter().zip(w) {
            acc += x * *ws;
        }
        acc
    };
    let a = integrate(rho_z);
    let b = integrate(rho_zp);
    let q = a.dot(&b);
    let h = a.norm();
    let r_norm = sup_two_norm(r);
    let tv = tv_distance(rho_zp, rho_z)?;
    let bound = h * (h - 2.0 * r_norm * tv);
    let slack = q - bound;
    Ok(LemmaReport {
        q,
        h,
        r_norm,
        tv,
        bound,
        slack,
        holds: slack >= -INEQUALITY_SLACK,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    /// `sum_s D(s) rho_z(s)`, the gradient of `V_z` scaled by `1 - gamma`.
    pub grad_z: Params,
    pub grad_zp: Params,
    /// `sum_s 1(s safe) rho_z(s)`.
    pub u_z: f64,
    pub u_zp: f64,
    pub tv: f64,
    pub d_norm: f64,
    pub lhs_grad: f64,
    pub rhs_grad: f64,
    pub lhs_u: f64,
    pub rhs_u: f64,
    pub holds: bool,
}

impl Theorem1Report {
    /// Smallest `lhs - rhs` of the two inequalities.
    pub fn worst_slack(&self) -> f64 {
        (self.lhs_grad - self.rhs_grad).min(self.lhs_u - self.rhs_u)
    }
}

/// Evaluates both inner-product bounds for start states `z` and `z'`.
///
/// Both sides are expressed through the occupation measures, so the gradient
/// carries a `1 - gamma` factor and `U` is the normalized safe mass. The
/// inequalities are homogeneous of degree two, so the scaling does not affect
/// whether they hold.
pub fn theorem1_check(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    z: usize,
    zp: usize,
    gamma: Discount,
    lambda: f64,
) -> Result<Theorem1Report> {
    let chain = induced_chain(mdp, policy)?;
    let rho_z = occupation_measure(&chain, z, gamma)?;
    let rho_zp = occupation_measure(&chain, zp, gamma)?;
    let d = d_field(mdp, policy, gamma, lambda)?;
    let grad_z = d.weighted_sum(&rho_z.probs);
    let grad_zp = d.weighted_sum(&rho_zp.probs);
    let safe_mass = |rho: &[f64]| -> f64 {
        rho.iter()
            .zip(mdp.safe_mask())
            .filter(|(_, s)| **s)
            .map(|(p, _)| p)
            .sum()
    };
    let u_z = safe_mass(&rho_z.probs);
    let u_zp = safe_mass(&rho_zp.probs);
    let tv = tv_distance(&rho_z.probs, &rho_zp.probs)?;

    let gn = grad_z.norm();
    let lhs_grad = grad_z.dot(&grad_zp);
    let rhs_grad = gn * (gn - 2.0 * d.norm * tv);
    let lhs_u = u_z * u_zp;
    let rhs_u = u_z * (u_z - 2.0 * tv);
    let holds =
        lhs_grad - rhs_grad >= -INEQUALITY_SLACK && lhs_u - rhs_u >= -INEQUALITY_SLACK;
    Ok(Theorem1Report {
        grad_z,
        grad_zp,
        u_z,
        u_zp,
        tv,
        d_norm: d.norm,
        lhs_grad,
        rhs_grad,
        lhs_u,
        rhs_u,
        holds,
    })
}
