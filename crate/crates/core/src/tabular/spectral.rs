use nalgebra::{DMatrix, SymmetricEigen};

use super::{renormalize_rows, stationary_distribution, InducedChain};
use crate::error::{domain, Error, Result};

const DETAILED_BALANCE_TOL: f64 = 1e-10;

/// Spectral decomposition of a reversible chain.
///
/// `P^t(z, s) = p(s) [1 + sum_{i>=2} lambda_i^t q_i(z) q_i(s)]` where the
/// `q_i` are orthonormal under `<q, r>_p = sum_s q(s) r(s) p(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInfo {
    pub stationary: Vec<f64>,
    /// Sorted in decreasing order; the first is 1.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[i]` pairs with `eigenvalues[i]`; the first is constant 1.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Second largest eigenvalue.
    pub lambda_star: f64,
    pub p_min: f64,
}

impl SpectralInfo {
    /// `P^t` rebuilt from the expansion.
    pub fn reconstruct(&self, t: u32) -> DMatrix<f64> {
        let n = self.stationary.len();
        DMatrix::from_fn(n, n, |z, s| {
            let tail: f64 = self.eigenvalues[1..]
                .iter()
                .zip(&self.eigenvectors[1..])
                .map(|(l, q)| l.powi(t as i32) * q[z] * q[s])
                .sum();
            self.stationary[s] * (1.0 + tail)
        })
    }

    /// `<q_i, q_j>_p`.
    pub fn inner(&self, i: usize, j: usize) -> f64 {
        self.eigenvectors[i]
            .iter()
            .zip(&self.eigenvectors[j])
            .zip(&self.stationary)
            .map(|((a, b), p)| a * b * p)
            .sum()
    }
}

/// Decomposes an ergodic chain satisfying detailed balance.
///
/// The eigenproblem is solved on the symmetric matrix
/// `diag(p)^{1/2} P diag(p)^{-1/2}`, whose eigenvalues are real; its
/// eigenvectors `v_i` map back to `q_i = diag(p)^{-1/2} v_i`.
pub fn spectral_info(chain: &InducedChain) -> Result<SpectralInfo> {
    let p = stationary_distribution(chain)?;
    let k = chain.kernel();
    let n = p.len();
    for z in 0..n {
        for s in z + 1..n {
            let gap = (p[z] * k[(z, s)] - p[s] * k[(s, z)]).abs();
            if gap > DETAILED_BALANCE_TOL {
                return Err(Error::Domain(format!(
                    "detailed balance fails for states ({z}, {s}) by {gap:e}"
                )));
            }
        }
    }
    let root: Vec<f64> = p.iter().map(|x| x.sqrt()).collect();
    let mut sym = DMatrix::from_fn(n, n, |i, j| root[i] * k[(i, j)] / root[j]);
    // Remove the O(1e-16) asymmetry left by rounding.
    sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvectors.column(i);
            let mut q: Vec<f64> = (0..n).map(|s| v[s] / root[s]).collect();
            let norm: f64 = q.iter().zip(&p).map(|(x, w)| x * x * w).sum::<f64>().sqrt();
            q.iter_mut().for_each(|x| *x /= norm);
            q
        })
        .collect();
    let mut eigenvectors = eigenvectors;
    if eigenvectors[0][0] < 0.0 {
        eigenvectors[0].iter_mut().for_each(|x| *x = -*x);
    }
    let lambda_star = if n > 1 { eigenvalues[1] } else { 0.0 };
    let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SpectralInfo {
        stationary: p,
        eigenvalues,
        eigenvectors,
        lambda_star,
        p_min,
    })
}

/// Spectral analogue of the mixing-time threshold:
/// `(1 - p_min eps) / (1 - lambda_star p_min eps)`.
pub fn prop3_threshold(lambda_star: f64, p_min: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda_star) {
        return domain(format!("lambda_star must lie in [0, 1), got {lambda_star}"));
    }
    let pe = p_min * epsilon;
    if !(pe > 0.0 && pe < 1.0) {
        return domain(format!("p_min * epsilon must lie in (0, 1), got {pe}"));
    }
    Ok((1.0 - pe) / (1.0 - lambda_star * pe))
}

/// Metropolis chain targeting `target` with a symmetric proposal whose rows
/// sum to at most one; leftover proposal mass stays put. Detailed balance
/// with respect to `target` holds by construction.
pub fn metropolis_chain(target: &[f64], proposal: &DMatrix<f64>) -> Result<InducedChain> {
    let n = target.len();
    if proposal.nrows() != n || proposal.ncols() != n {
        return domain("proposal must be n x n");
    }
    if target.iter().any(|p| !(*p > 0.0)) {
        return domain("target must be strictly positive");
    }
    if (proposal - proposal.transpose()).amax() > 1e-15 {
        return domain("proposal must be symmetric");
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut moved = 0.0;
        for j in 0..n {
            if i != j {
                let a = proposal[(i, j)] * (target[j] / target[i]).min(1.0);
                k[(i, j)] = a;
                moved += a;
            }
        }
        if moved > 1.0 + 1e-12 {
            return domain("proposal rows must sum to at most one");
        }
        k[(i, i)] = 1.0 - moved;
    }
    renormalize_rows(&mut k);
    InducedChain::new(k)
}
