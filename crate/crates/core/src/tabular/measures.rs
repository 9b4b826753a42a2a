use nalgebra::{DMatrix, DVector};

use super::InducedChain;
use crate::error::{domain, Error, Result};
use crate::mdp::Discount;
use crate::policy::TabularPolicy;

/// Discounted state-visitation distribution from a fixed start state,
/// `rho_z(s) = (1 - gamma) sum_t gamma^t P(s_t = s | s_0 = z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    pub start: usize,
    pub probs: Vec<f64>,
}

/// `mu_z[s][a] = rho_z(s) pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub start: usize,
    pub probs: DMatrix<f64>,
}

/// `rho_z - rho_z'` together with its total-variation norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure {
    pub delta: Vec<f64>,
    pub tv: f64,
}

impl SignedMeasure {
    pub fn between(a: &OccupationMeasure, b: &OccupationMeasure) -> Result<Self> {
        let tv = tv_distance(&a.probs, &b.probs)?;
        let delta = a.probs.iter().zip(&b.probs).map(|(x, y)| x - y).collect();
        Ok(Self { delta, tv })
    }
}

/// Closed form `(1 - gamma) e_z^T (I - gamma P)^{-1}`.
pub fn occupation_measure(
    chain: &InducedChain,
    z: usize,
    gamma: Discount,
) -> Result<OccupationMeasure> {
    let n = chain.num_states();
    if z >= n {
        return domain(format!("start state {z} out of range"));
    }
    let g = gamma.value();
    // rho^T (I - gamma P) = (1-gamma) e_z^T  <=>  (I - gamma P^T) rho = (1-gamma) e_z
    let a = DMatrix::identity(n, n) - chain.kernel().transpose() * g;
    let mut rhs = DVector::zeros(n);
    rhs[z] = 1.0 - g;
    let rho = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("resolvent is singular".into()))?;
    Ok(OccupationMeasure {
        start: z,
        probs: rho.iter().copied().collect(),
    })
}

/// The defining series truncated after `terms` terms. Independent of
/// [`occupation_measure`]; used to cross-check it.
pub fn occupation_series(
    chain: &InducedChain,
    z: usize,
    gamma: Discount,
    terms: usize,
) -> Result<OccupationMeasure> {
    let n = chain.num_states();
    if z >= n {
        return domain(format!("start state {z} out of range"));
    }
    let g = gamma.value();
    let mut p = vec![0.0; n];
    p[z] = 1.0;
    let mut acc = vec![0.0; n];
    let mut w = 1.0 - g;
    for _ in 0..terms {
        for (a, pi) in acc.iter_mut().zip(&p) {
            *a += w * pi;
        }
        p = chain.push_forward(&p);
        w *= g;
    }
    Ok(OccupationMeasure { start: z, probs: acc })
}

pub fn occupancy_measure(
    chain: &InducedChain,
    policy: &TabularPolicy,
    z: usize,
    gamma: Discount,
) -> Result<OccupancyMeasure> {
    if policy.num_states() != chain.num_states() {
        return domain("policy and chain disagree on the number of states");
    }
    let rho = occupation_measure(chain, z, gamma)?;
    let pi = policy.prob_table();
    let probs = DMatrix::from_fn(pi.nrows(), pi.ncols(), |s, a| rho.probs[s] * pi[(s, a)]);
    Ok(OccupancyMeasure { start: z, probs })
}

/// `(1/2) sum_s |p(s) - q(s)|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return domain(format!("lengths differ: {} vs {}", p.len(), q.len()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStream};
    use crate::tabular::{induced_chain, random_stochastic, TabularMdp};
    use proptest::prelude::*;

    fn gamma(g: f64) -> Discount {
        Discount::new(g).unwrap()
    }

    #[test]
    fn identity_chain_is_a_point_mass() {
        let chain = InducedChain::new(DMatrix::identity(3, 3)).unwrap();
        let rho = occupation_measure(&chain, 1, gamma(0.9)).unwrap();
        assert!((rho.probs[1] - 1.0).abs() < 1e-15);
        assert!(rho.probs[0].abs() < 1e-15 && rho.probs[2].abs() < 1e-15);
    }

    #[test]
    fn swap_chain_matches_geometric_series() {
        let chain = InducedChain::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let rho = occupation_measure(&chain, 0, gamma(0.5)).unwrap();
        // (1 - g) sum_t g^{2t} = 1/(1+g)
        assert!((rho.probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((rho.probs[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_series() {
        let mut rng = RngStream::new(8).substream(0, Purpose::Aux);
        let chain = InducedChain::new(random_stochastic(5, &mut rng)).unwrap();
        for z in 0..5 {
            let a = occupation_measure(&chain, z, gamma(0.95)).unwrap();
            let b = occupation_series(&chain, z, gamma(0.95), 10_000).unwrap();
            let diff = a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-8, "diff {diff}");
        }
    }

    #[test]
    fn occupancy_marginalizes_to_occupation() {
        let mut rng = RngStream::new(12).substream(0, Purpose::Aux);
        let mdp = TabularMdp::random(5, 3, 0.5, &mut rng);
        let policy = TabularPolicy::new(DMatrix::from_fn(5, 3, |s, a| (s * 3 + a) as f64 * 0.1)).unwrap();
        let chain = induced_chain(&mdp, &policy).unwrap();
        let mu = occupancy_measure(&chain, &policy, 2, gamma(0.9)).unwrap();
        let rho = occupation_measure(&chain, 2, gamma(0.9)).unwrap();
        assert!((mu.probs.sum() - 1.0).abs() < 1e-10);
        for s in 0..5 {
            assert!((mu.probs.row(s).sum() - rho.probs[s]).abs() < 1e-15);
        }

        let det = TabularPolicy::near_deterministic(3, &[0, 1, 2, 0, 1], 800.0).unwrap();
        let chain = induced_chain(&mdp, &det).unwrap();
        let mu = occupancy_measure(&chain, &det, 0, gamma(0.9)).unwrap();
        let rho = occupation_measure(&chain, 0, gamma(0.9)).unwrap();
        for (s, a) in [0, 1, 2, 0, 1].into_iter().enumerate() {
            assert_eq!(mu.probs[(s, a)], rho.probs[s]);
            assert_eq!(mu.probs.row(s).sum(), rho.probs[s]);
        }
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&[0.7, 0.3], &[0.5, 0.5]).unwrap() - 0.2).abs() < 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    fn prob_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let z: f64 = v.iter().sum();
            v.into_iter().map(|x| x / z).collect()
        })
    }

    proptest! {
        #[test]
        fn tv_is_a_metric((p, q, r) in (prob_vec(6), prob_vec(6), prob_vec(6))) {
            let pq = tv_distance(&p, &q).unwrap();
            prop_assert!((pq - tv_distance(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!(pq <= tv_distance(&p, &r).unwrap() + tv_distance(&r, &q).unwrap() + 1e-15);
            prop_assert!((0.0..=1.0 + 1e-15).contains(&pq));
        }

        #[test]
        fn signed_measures_have_zero_mass(seed in any::<u64>()) {
            let mut rng = RngStream::new(seed).substream(0, Purpose::Aux);
            let chain = InducedChain::new(random_stochastic(4, &mut rng)).unwrap();
            let a = occupation_measure(&chain, 0, gamma(0.9)).unwrap();
            let b = occupation_measure(&chain, 3, gamma(0.9)).unwrap();
            let d = SignedMeasure::between(&a, &b).unwrap();
            prop_assert!(d.delta.iter().sum::<f64>().abs() < 1e-10);
            prop_assert!((d.tv - 0.5 * d.delta.iter().map(|x| x.abs()).sum::<f64>()).abs() < 1e-15);
            prop_assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(a.probs.iter().all(|p| *p >= -1e-15));
        }
    }
}
