use nalgebra::{DMatrix, DVector};

use super::{tv_distance, InducedChain};
use crate::error::{domain, Error, Result};

const MAX_MIXING_SCAN: usize = 1_000_000;

/// True when some power `P^t`, `t <= n^2`, is entrywise positive.
pub fn is_ergodic(chain: &InducedChain) -> bool {
    let n = chain.num_states();
    let pattern = chain.kernel().map(|p| p > 0.0);
    let mut reach = pattern.clone();
    for _ in 0..n * n {
        if reach.iter().all(|b| *b) {
            return true;
        }
        let mut next = DMatrix::from_element(n, n, false);
        for i in 0..n {
            for k in 0..n {
                if reach[(i, k)] {
                    for j in 0..n {
                        if pattern[(k, j)] {
                            next[(i, j)] = true;
                        }
                    }
                }
            }
        }
        reach = next;
    }
    reach.iter().all(|b| *b)
}

/// The unique `p` with `p P = p`, `sum p = 1`, for an ergodic chain.
pub fn stationary_distribution(chain: &InducedChain) -> Result<Vec<f64>> {
    if !is_ergodic(chain) {
        return domain("chain is not ergodic");
    }
    let n = chain.num_states();
    let mut a = DMatrix::identity(n, n) - chain.kernel().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let p = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("stationary system is singular".into()))?;
    Ok(p.iter().copied().collect())
}

/// Smallest `t >= 1` at which every chain, from every start state, is within
/// total variation 1/4 of its stationary distribution.
pub fn mixing_time(chains: &[InducedChain]) -> Result<usize> {
    if chains.is_empty() {
        return domain("mixing time needs at least one chain");
    }
    let mut worst = 1;
    for (c, chain) in chains.iter().enumerate() {
        let stat = stationary_distribution(chain)
            .map_err(|_| Error::Domain(format!("chain {c} is not ergodic")))?;
        let n = chain.num_states();
        let mut rows: Vec<Vec<f64>> = (0..n).map(|z| chain.distribution_after(z, 1)).collect();
        let mut t = 1;
        loop {
            let mut far = 0.0f64;
            for row in &rows {
                far = far.max(tv_distance(row, &stat)?);
            }
            if far <= 0.25 {
                break;
            }
            t += 1;
            if t > MAX_MIXING_SCAN {
                return Err(Error::Internal(format!("chain {c} did not mix in {MAX_MIXING_SCAN} steps")));
            }
            for row in rows.iter_mut() {
                *row = chain.push_forward(row);
            }
        }
        worst = worst.max(t);
    }
    Ok(worst)
}

/// Smallest discount for which the mixing-time argument bounds the total
/// variation between occupation measures by `epsilon`:
/// `(4 (1 - epsilon) / 3)^(1 / tau)`. Requires `epsilon > 1/4`.
pub fn prop2_threshold(tau: usize, epsilon: f64) -> Result<f64> {
    if tau == 0 {
        return domain("mixing time must be positive");
    }
    if !(epsilon > 0.25) || !epsilon.is_finite() {
        return domain(format!("epsilon must exceed 1/4, got {epsilon}"));
    }
    let base = 4.0 * (1.0 - epsilon) / 3.0;
    Ok(base.max(0.0).powf(1.0 / tau as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lazy_cycle(n: usize) -> InducedChain {
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 0.5;
            k[(i, (i + 1) % n)] += 0.25;
            k[(i, (i + n - 1) % n)] += 0.25;
        }
        InducedChain::new(k).unwrap()
    }

    #[test]
    fn rank_one_chain_mixes_in_one_step() {
        let row = [0.2, 0.5, 0.3];
        let k = DMatrix::from_fn(3, 3, |_, j| row[j]);
        assert_eq!(mixing_time(&[InducedChain::new(k).unwrap()]).unwrap(), 1);
    }

    #[test]
    fn periodic_swap_is_rejected() {
        let swap = InducedChain::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!(!is_ergodic(&swap));
        assert!(matches!(mixing_time(&[swap]), Err(Error::Domain(_))));
    }

    #[test]
    fn lazy_cycle_matches_brute_force_scan() {
        let chain = lazy_cycle(5);
        let stat = vec![0.2; 5];
        // Brute force: recompute P^t from scratch for each t.
        let mut expect = None;
        for t in 1..200 {
            let pt = (0..t).fold(DMatrix::identity(5, 5), |acc, _| acc * chain.kernel());
            let far = (0..5)
                .map(|z| tv_distance(&pt.row(z).iter().copied().collect::<Vec<_>>(), &stat).unwrap())
                .fold(0.0, f64::max);
            if far <= 0.25 {
                expect = Some(t);
                break;
            }
        }
        assert_eq!(mixing_time(&[chain]).unwrap(), expect.unwrap());
    }

    #[test]
    fn worst_case_over_chains() {
        let fast = lazy_cycle(3);
        let slow = lazy_cycle(9);
        let a = mixing_time(std::slice::from_ref(&fast)).unwrap();
        let b = mixing_time(std::slice::from_ref(&slow)).unwrap();
        assert!(b > a);
        assert_eq!(mixing_time(&[fast, slow]).unwrap(), b);
    }

    #[test]
    fn threshold_values() {
        assert!((prop2_threshold(1, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(prop2_threshold(7, 1.0).unwrap(), 0.0);
        assert!(prop2_threshold(50, 0.25).is_err());
        assert!(prop2_threshold(50, 0.2).is_err());
        assert!(prop2_threshold(0, 0.5).is_err());
        // (2/3)^(1/50), the "gamma close to 0.99" regime for tau = 50.
        assert!((prop2_threshold(50, 0.5).unwrap() - 0.991_923_489_529_502).abs() < 1e-12);
    }

    #[test]
    fn stationary_of_lazy_cycle_is_uniform() {
        let p = stationary_distribution(&lazy_cycle(6)).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 6.0).abs() < 1e-12));
    }
}
