use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::{Params, StochasticPolicy};
use crate::error::{domain, Error, Result};
use crate::mdp::{ActionVec, StateVec};
use crate::rng::StreamRng;

/// Gaussian kernels of a common bandwidth placed at fixed centers.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfBasis {
    dim: usize,
    centers: Vec<f64>,
    bandwidth: f64,
    spacing: f64,
}

impl RbfBasis {
    pub fn new(centers: Vec<Vec<f64>>, bandwidth: f64) -> Result<Self> {
        let Some(first) = centers.first() else {
            return domain("basis needs at least one center");
        };
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return domain(format!("bandwidth must be positive, got {bandwidth}"));
        }
        let dim = first.len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return domain("centers must share one positive dimension");
        }
        Ok(Self {
            dim,
            centers: centers.into_iter().flatten().collect(),
            bandwidth,
            spacing: f64::NAN,
        })
    }

    /// Square grid over `[lo, hi]^2` with the given spacing, both edges
    /// included. `[0, 10]` at spacing 0.25 gives 41 x 41 centers.
    pub fn grid(lo: f64, hi: f64, spacing: f64, bandwidth: f64) -> Result<Self> {
        if !(spacing > 0.0) || !(hi > lo) {
            return domain("grid needs hi > lo and positive spacing");
        }
        let per_axis = ((hi - lo) / spacing).round() as usize + 1;
        let mut centers = Vec::with_capacity(per_axis * per_axis);
        for i in 0..per_axis {
            for j in 0..per_axis {
                centers.push(vec![lo + i as f64 * spacing, lo + j as f64 * spacing]);
            }
        }
        let mut basis = Self::new(centers, bandwidth)?;
        basis.spacing = spacing;
        Ok(basis)
    }

    pub fn len(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Grid spacing, NaN for hand-placed centers.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    /// `phi_i(s) = exp(-|s - c_i|^2 / (2 sigma^2))`, each in (0, 1].
    pub fn features(&self, s: &StateVec) -> Result<Vec<f64>> {
        if s.dim() != self.dim {
            return domain(format!(
                "state has dimension {}, basis expects {}",
                s.dim(),
                self.dim
            ));
        }
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        Ok(self
            .centers
            .chunks_exact(self.dim)
            .map(|c| {
                let d2: f64 = c.iter().zip(&s.0).map(|(c, x)| (x - c) * (x - c)).sum();
                (scale * d2).exp()
            })
            .collect())
    }
}

/// `a ~ N(theta^T phi(s), diag(cov))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRbfPolicy {
    basis: RbfBasis,
    theta: Params,
    cov: Vec<f64>,
}

impl GaussianRbfPolicy {
    /// Zero-initialised parameters: the initial policy is pure isotropic noise.
    pub fn new(basis: RbfBasis, cov: Vec<f64>) -> Result<Self> {
        let theta = DMatrix::zeros(basis.len(), cov.len());
        Self::with_theta(basis, cov, theta)
    }

    pub fn with_theta(basis: RbfBasis, cov: Vec<f64>, theta: Params) -> Result<Self> {
        if cov.is_empty() || cov.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return domain("covariance diagonal must be strictly positive");
        }
        if theta.nrows() != basis.len() || theta.ncols() != cov.len() {
            return domain(format!(
                "theta is {}x{}, expected {}x{}",
                theta.nrows(),
                theta.ncols(),
                basis.len(),
                cov.len()
            ));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return domain("theta must be finite");
        }
        Ok(Self { basis, theta, cov })
    }

    pub fn basis(&self) -> &RbfBasis {
        &self.basis
    }

    pub fn covariance(&self) -> &[f64] {
        &self.cov
    }

    pub fn action_dim(&self) -> usize {
        self.cov.len()
    }

    pub fn mean(&self, s: &StateVec) -> Result<ActionVec> {
        let phi = self.basis.features(s)?;
        Ok(ActionVec(self.mean_from_features(&phi)))
    }

    fn mean_from_features(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.action_dim())
            .map(|j| {
                self.theta
                    .column(j)
                    .iter()
                    .zip(phi)
                    .map(|(t, p)| t * p)
                    .sum()
            })
            .collect()
    }

    /// Log density of `a` at `s`.
    pub fn log_prob(&self, s: &StateVec, a: &ActionVec) -> Result<f64> {
        let mu = self.mean(s)?;
        self.check_action(a)?;
        Ok(a.0
            .iter()
            .zip(&mu.0)
            .zip(&self.cov)
            .map(|((a, m), v)| {
                -0.5 * (a - m) * (a - m) / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln()
            })
            .sum())
    }

    fn check_action(&self, a: &ActionVec) -> Result<()> {
        if a.dim() != self.action_dim() {
            return domain(format!(
                "action has dimension {}, policy emits {}",
                a.dim(),
                self.action_dim()
            ));
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            theta: self.theta.clone(),
            sigma: self.basis.bandwidth,
            spacing: self.basis.spacing,
        }
    }

    /// Replaces theta with a checkpoint taken on a compatible basis.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.sigma != self.basis.bandwidth
            || !(ckpt.spacing == self.basis.spacing
                || (ckpt.spacing.is_nan() && self.basis.spacing.is_nan()))
        {
            return domain("checkpoint basis does not match the policy basis");
        }
        *self = Self::with_theta(self.basis.clone(), self.cov.clone(), ckpt.theta.clone())?;
        Ok(())
    }
}

impl StochasticPolicy for GaussianRbfPolicy {
    fn sample_action(&self, s: &StateVec, rng: &mut StreamRng) -> Result<ActionVec> {
        let mu = self.mean(s)?;
        Ok(ActionVec(
            mu.0.iter()
                .zip(&self.cov)
                .map(|(m, v)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + v.sqrt() * z
                })
                .collect(),
        ))
    }

    /// `phi(s) (Sigma^{-1} (a - mu(s)))^T`.
    fn log_prob_grad(&self, s: &StateVec, a: &ActionVec) -> Result<Params> {
        self.check_action(a)?;
        let phi = self.basis.features(s)?;
        let mu = self.mean_from_features(&phi);
        let w: Vec<f64> = a
            .0
            .iter()
            .zip(&mu)
            .zip(&self.cov)
            .map(|((a, m), v)| (a - m) / v)
            .collect();
        Ok(DMatrix::from_fn(phi.len(), w.len(), |i, j| phi[i] * w[j]))
    }

    fn params(&self) -> &Params {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.theta
    }
}

/// Plain-text policy checkpoint.
///
/// ```text
/// theta <num_centers> <action_dim> <sigma> <spacing>
/// <row for center 0, whitespace separated>
/// ...
/// ```
///
/// Values are written with Rust's shortest round-trip formatting, so reading
/// a checkpoint back gives the same bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub theta: Params,
    pub sigma: f64,
    pub spacing: f64,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = String::new();
        writeln!(
            w,
            "theta {} {} {} {}",
            self.theta.nrows(),
            self.theta.ncols(),
            self.sigma,
            self.spacing
        )?;
        for row in self.theta.row_iter() {
            line.clear();
            for (j, x) in row.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                write!(line, "{x:?}").expect("writing to a String");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty checkpoint".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "theta" {
            return Err(Error::Parse(format!("bad checkpoint header `{header}`")));
        }
        let rows: usize = parse(fields[1])?;
        let cols: usize = parse(fields[2])?;
        let sigma: f64 = parse(fields[3])?;
        let spacing: f64 = parse(fields[4])?;
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("checkpoint ends before row {i}")))??;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(parse::<f64>(tok)?);
            }
            if data.len() - before != cols {
                return Err(Error::Parse(format!("row {i} does not have {cols} entries")));
            }
        }
        Ok(Self {
            theta: DMatrix::from_row_slice(rows, cols, &data),
            sigma,
            spacing,
        })
    }
}

fn parse<T: std::str::FromStr>(tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Parse(format!("cannot parse `{tok}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_center_policy(rows: [[f64; 2]; 2]) -> GaussianRbfPolicy {
        let basis = RbfBasis::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], 0.5).unwrap();
        let theta = DMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]]);
        GaussianRbfPolicy::with_theta(basis, vec![0.5, 0.5], theta).unwrap()
    }

    #[test]
    fn paper_grid_has_41_by_41_centers() {
        let b = RbfBasis::grid(0.0, 10.0, 0.25, 0.5).unwrap();
        assert_eq!(b.len(), 1681);
        assert_eq!(b.center(0), &[0.0, 0.0]);
        assert_eq!(b.center(1680), &[10.0, 10.0]);
    }

    #[test]
    fn feature_values() {
        let b = RbfBasis::new(vec![vec![2.0, 3.0]], 0.5).unwrap();
        assert_eq!(b.features(&StateVec(vec![2.0, 3.0])).unwrap()[0], 1.0);
        let at_sigma = b.features(&StateVec(vec![2.5, 3.0])).unwrap()[0];
        assert_relative_eq!(at_sigma, (-0.5f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(at_sigma, 0.6065306597126334, max_relative = 1e-12);
        let far = b.features(&StateVec(vec![200.0, 3.0])).unwrap()[0];
        assert_eq!(far, 0.0);
        assert!(b.features(&StateVec(vec![1.0])).is_err());
    }

    #[test]
    fn invalid_basis_and_policy() {
        assert!(RbfBasis::new(vec![], 0.5).is_err());
        assert!(RbfBasis::new(vec![vec![0.0]], 0.0).is_err());
        let b = RbfBasis::new(vec![vec![0.0]], 1.0).unwrap();
        assert!(GaussianRbfPolicy::new(b.clone(), vec![0.0]).is_err());
        assert!(GaussianRbfPolicy::with_theta(b, vec![1.0], DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn mean_examples() {
        let zero = two_center_policy([[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(zero.mean(&StateVec(vec![0.3, 0.7])).unwrap().0, vec![0.0, 0.0]);

        let basis = RbfBasis::new(vec![vec![4.0, 4.0]], 0.5).unwrap();
        let single = GaussianRbfPolicy::with_theta(
            basis,
            vec![0.5, 0.5],
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
        )
        .unwrap();
        assert_eq!(single.mean(&StateVec(vec![4.0, 4.0])).unwrap().0, vec![1.0, 2.0]);

        // Centers at distance d = sigma sqrt(2 ln 2) from s give features of 0.5.
        let d = 0.5 * (2.0 * 2f64.ln()).sqrt();
        let basis = RbfBasis::new(vec![vec![-d, 0.0], vec![d, 0.0]], 0.5).unwrap();
        let p = GaussianRbfPolicy::with_theta(
            basis,
            vec![0.5, 0.5],
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]),
        )
        .unwrap();
        let origin = StateVec(vec![0.0, 0.0]);
        let f = p.basis().features(&origin).unwrap();
        assert_relative_eq!(f[0], 0.5, max_relative = 1e-14);
        let m = p.mean(&origin).unwrap().0;
        assert_relative_eq!(m[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(m[1], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn degenerate_covariance_returns_mean() {
        let basis = RbfBasis::new(vec![vec![0.0, 0.0]], 0.5).unwrap();
        let p = GaussianRbfPolicy::with_theta(
            basis,
            vec![1e-300, 1e-300],
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
        )
        .unwrap();
        let mut rng = RngStream::new(3).substream(0, Purpose::Aux);
        let a = p.sample_action(&StateVec(vec![0.0, 0.0]), &mut rng).unwrap();
        assert_eq!(a.0, vec![1.0, 2.0]);
    }

    #[test]
    fn sample_moments_match() {
        let p = two_center_policy([[1.0, -2.0], [0.5, 3.0]]);
        let s = StateVec(vec![0.2, 0.1]);
        let mu = p.mean(&s).unwrap().0;
        let mut rng = RngStream::new(11).substream(0, Purpose::Aux);
        let n = 100_000usize;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let a = p.sample_action(&s, &mut rng).unwrap().0;
            for j in 0..2 {
                sum[j] += a[j];
                sq[j] += (a[j] - mu[j]) * (a[j] - mu[j]);
            }
        }
        for j in 0..2 {
            let mean = sum[j] / n as f64;
            // SE of the mean is sqrt(v/n); SE of the variance is v sqrt(2/n).
            assert!((mean - mu[j]).abs() <= 3.0 * (0.5 / n as f64).sqrt());
            let var = sq[j] / n as f64;
            assert!((var - 0.5).abs() <= 3.0 * 0.5 * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn score_vanishes_at_mean_and_scales_with_covariance() {
        let p = two_center_policy([[1.0, -2.0], [0.5, 3.0]]);
        let s = StateVec(vec![0.4, -0.3]);
        let mu = p.mean(&s).unwrap();
        assert!(p.log_prob_grad(&s, &mu).unwrap().iter().all(|g| *g == 0.0));

        let a = ActionVec(vec![1.7, -0.4]);
        let g1 = p.log_prob_grad(&s, &a).unwrap();
        let doubled = GaussianRbfPolicy::with_theta(p.basis().clone(), vec![1.0, 1.0], p.params().clone()).unwrap();
        let g2 = doubled.log_prob_grad(&s, &a).unwrap();
        for (x, y) in g1.iter().zip(g2.iter()) {
            assert_relative_eq!(*y, 0.5 * x, max_relative = 1e-15);
        }
    }

    #[test]
    fn score_matches_central_differences() {
        use rand::Rng;
        let mut rng = RngStream::new(17).substream(0, Purpose::Aux);
        let basis = RbfBasis::grid(0.0, 2.0, 0.5, 0.5).unwrap();
        let h = 1e-5;
        for _ in 0..100 {
            let theta = DMatrix::from_fn(basis.len(), 2, |_, _| rng.random_range(-2.0..2.0));
            let cov = vec![rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)];
            let p = GaussianRbfPolicy::with_theta(basis.clone(), cov.clone(), theta.clone()).unwrap();
            let s = StateVec(vec![rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)]);
            let a = ActionVec(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            let g = p.log_prob_grad(&s, &a).unwrap();
            let mut fd = DMatrix::zeros(theta.nrows(), 2);
            for i in 0..theta.nrows() {
                for j in 0..2 {
                    let lp = |d: f64| {
                        let mut t = theta.clone();
                        t[(i, j)] += d;
                        GaussianRbfPolicy::with_theta(basis.clone(), cov.clone(), t)
                            .unwrap()
                            .log_prob(&s, &a)
                            .unwrap()
                    };
                    fd[(i, j)] = (lp(h) - lp(-h)) / (2.0 * h);
                }
            }
            assert!((&g - &fd).norm() <= 1e-4 * g.norm().max(1e-8), "{g} vs {fd}");
        }
    }

    #[test]
    fn score_has_zero_mean() {
        let p = two_center_policy([[0.3, 0.1], [-0.2, 0.4]]);
        let s = StateVec(vec![0.6, 0.2]);
        let mut rng = RngStream::new(5).substream(0, Purpose::Aux);
        let n = 100_000;
        let mut sum = DMatrix::zeros(2, 2);
        let mut sq = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let a = p.sample_action(&s, &mut rng).unwrap();
            let g = p.log_prob_grad(&s, &a).unwrap();
            sq += g.component_mul(&g);
            sum += g;
        }
        for (s1, s2) in sum.iter().zip(sq.iter()) {
            let mean = s1 / n as f64;
            let var = s2 / n as f64 - mean * mean;
            assert!(mean.abs() <= 3.0 * (var / n as f64).sqrt(), "mean {mean}");
        }
    }

    #[test]
    fn checkpoint_header_and_errors() {
        let p = two_center_policy([[0.1, 0.2], [0.3, 1.0 / 3.0]]);
        let mut buf = Vec::new();
        p.checkpoint().write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta 2 2 0.5 NaN\n"));
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back.theta, *p.params());

        assert!(Checkpoint::read_from(&b"weights 1 1 0.5 0.25\n0\n"[..]).is_err());
        assert!(Checkpoint::read_from(&b"theta 2 1 0.5 0.25\n0\n"[..]).is_err());
        assert!(Checkpoint::read_from(&b"theta 1 2 0.5 0.25\n0\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(vals in proptest::collection::vec(-1e6f64..1e6, 6)) {
            let basis = RbfBasis::new(vec![vec![0.0, 0.0], vec![0.25, 0.0], vec![0.0, 0.25]], 0.5).unwrap();
            let theta = DMatrix::from_row_slice(3, 2, &vals);
            let p = GaussianRbfPolicy::with_theta(basis, vec![0.5, 0.5], theta).unwrap();
            let mut buf = Vec::new();
            p.checkpoint().write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(&buf[..]).unwrap();
            for (a, b) in back.theta.iter().zip(p.params().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn features_lie_in_unit_interval(x in -5.0f64..15.0, y in -5.0f64..15.0) {
            let b = RbfBasis::grid(0.0, 10.0, 2.5, 0.5).unwrap();
            for f in b.features(&StateVec(vec![x, y])).unwrap() {
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }
    }
}
