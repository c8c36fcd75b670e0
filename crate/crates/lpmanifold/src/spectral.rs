//! Diagonal spectral model: the linear operator `A`, its semigroup, the
//! graded norms, and the stable/unstable splitting.
//!
//! Everything is expressed in the eigenbasis of `A`, so a state is the vector
//! of its first `N` eigen-coefficients and the semigroup acts diagonally,
//! `S(t) x = (e^{lambda_i t} x_i)_i`. The graded norm of index `gamma` is
//! `|x|_gamma = (sum_i |lambda_i|^{2 gamma} x_i^2)^{1/2}`; negative indices
//! weaken the norm, which is what the noise coefficient Lipschitz conditions
//! are stated against.

use ndarray::Array1;
use rand::Rng;

use crate::error::{Error, Result};

/// State vector in the eigenbasis (first `N` coefficients).
pub type State = Array1<f64>;

/// Spectral block selector for projections and semigroup application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Full,
    Plus,
    Minus,
}

/// Finite spectral truncation of the linear part together with the dichotomy
/// data: eigenvalues `lambda_1 > lambda_2 > ... > lambda_N` (none zero), the
/// split index `k_plus = #{i : lambda_i > 0}`, dichotomy rates
/// `mu_check < 0 < mu_hat`, the semigroup constant `c_s >= 1`, and the
/// covariance weights `mu_i >= 0` of the driving noise.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    lambda: Vec<f64>,
    covariance: Vec<f64>,
    k_plus: usize,
    mu_hat: f64,
    mu_check: f64,
    c_s: f64,
}

impl SpectralModel {
    pub fn new(
        lambda: Vec<f64>,
        covariance: Vec<f64>,
        mu_hat: f64,
        mu_check: f64,
        c_s: f64,
    ) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidModel("empty spectrum".into()));
        }
        if covariance.len() != lambda.len() {
            return Err(Error::InvalidModel(format!(
                "covariance length {} != spectrum length {}",
                covariance.len(),
                lambda.len()
            )));
        }
        for w in lambda.windows(2) {
            if !(w[0] > w[1]) {
                return Err(Error::InvalidModel(format!(
                    "spectrum not strictly decreasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if lambda.iter().any(|&l| l == 0.0 || !l.is_finite()) {
            return Err(Error::InvalidModel(
                "zero (or non-finite) eigenvalue: 0 must not be in the spectrum".into(),
            ));
        }
        if covariance.iter().any(|&m| m < 0.0 || !m.is_finite()) {
            return Err(Error::InvalidModel(
                "covariance weights must be nonnegative and finite".into(),
            ));
        }
        if c_s < 1.0 {
            return Err(Error::InvalidModel(format!("c_s = {c_s} must be >= 1")));
        }
        let k_plus = lambda.iter().take_while(|&&l| l > 0.0).count();
        if !(mu_hat > 0.0) {
            return Err(Error::InvalidModel(format!("mu_hat = {mu_hat} must be > 0")));
        }
        if k_plus > 0 && mu_hat > lambda[k_plus - 1] {
            return Err(Error::InvalidModel(format!(
                "mu_hat = {mu_hat} exceeds the smallest unstable eigenvalue {}",
                lambda[k_plus - 1]
            )));
        }
        if !(mu_check < 0.0) {
            return Err(Error::InvalidModel(format!(
                "mu_check = {mu_check} must be < 0"
            )));
        }
        if k_plus < lambda.len() && lambda[k_plus] > mu_check {
            return Err(Error::InvalidModel(format!(
                "mu_check = {mu_check} lies below the largest stable eigenvalue {}",
                lambda[k_plus]
            )));
        }
        Ok(Self {
            lambda,
            covariance,
            k_plus,
            mu_hat,
            mu_check,
            c_s,
        })
    }

    /// Shifted quadratic spectrum `lambda_i = a - i^2` (i = 1..=n) with
    /// covariance weights `mu_i = c_q * i^{-p}`. The workhorse example: for
    /// `a` not a perfect square the spectrum avoids zero, and `a in (1, 4)`
    /// gives exactly one unstable mode.
    pub fn quadratic_shift(
        a: f64,
        n: usize,
        c_q: f64,
        p: f64,
        mu_hat: f64,
        mu_check: f64,
        c_s: f64,
    ) -> Result<Self> {
        let lambda: Vec<f64> = (1..=n).map(|i| a - (i * i) as f64).collect();
        let covariance: Vec<f64> = (1..=n).map(|i| c_q * (i as f64).powf(-p)).collect();
        Self::new(lambda, covariance, mu_hat, mu_check, c_s)
    }

    pub fn n_modes(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// Truncated trace of the covariance operator, `sum_i mu_i`.
    pub fn trace(&self) -> f64 {
        self.covariance.iter().sum()
    }

    pub fn k_plus(&self) -> usize {
        self.k_plus
    }

    pub fn mu_hat(&self) -> f64 {
        self.mu_hat
    }

    pub fn mu_check(&self) -> f64 {
        self.mu_check
    }

    pub fn c_s(&self) -> f64 {
        self.c_s
    }

    pub fn zero_state(&self) -> State {
        State::zeros(self.n_modes())
    }

    fn check_len(&self, x: &State) -> Result<()> {
        if x.len() != self.lambda.len() {
            return Err(Error::InvalidParam(format!(
                "state length {} != number of modes {}",
                x.len(),
                self.lambda.len()
            )));
        }
        Ok(())
    }

    /// `|x|_gamma = (sum_i |lambda_i|^{2 gamma} x_i^2)^{1/2}`; `gamma = 0`
    /// recovers the Euclidean norm of the coefficients.
    pub fn graded_norm(&self, x: &State, gamma: f64) -> f64 {
        debug_assert_eq!(x.len(), self.lambda.len());
        if gamma == 0.0 {
            return x.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        x.iter()
            .zip(&self.lambda)
            .map(|(v, l)| l.abs().powf(2.0 * gamma) * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// The per-mode weights `|lambda_i|^gamma`, for callers that need to
    /// evaluate many graded norms without re-doing the powers.
    pub fn weights(&self, gamma: f64) -> Array1<f64> {
        self.lambda.iter().map(|l| l.abs().powf(gamma)).collect()
    }

    /// Mode index range of a block.
    pub fn block_range(&self, which: Block) -> std::ops::Range<usize> {
        match which {
            Block::Full => 0..self.lambda.len(),
            Block::Plus => 0..self.k_plus,
            Block::Minus => self.k_plus..self.lambda.len(),
        }
    }

    /// Orthogonal projection onto the requested spectral block.
    pub fn project(&self, x: &State, which: Block) -> State {
        debug_assert_eq!(x.len(), self.lambda.len());
        let mut out = State::zeros(x.len());
        let r = self.block_range(which);
        for i in r {
            out[i] = x[i];
        }
        out
    }

    /// Apply `S(t)` restricted to a spectral block (coefficients outside the
    /// block are zeroed). Negative `t` is only meaningful on the unstable
    /// block, where the finite-dimensional group extends both ways.
    pub fn semigroup_apply(&self, t: f64, x: &State, which: Block) -> Result<State> {
        self.check_len(x)?;
        if t < 0.0 && which != Block::Plus {
            let name = match which {
                Block::Full => "full",
                Block::Minus => "stable",
                Block::Plus => unreachable!(),
            };
            return Err(Error::NegativeTime { t, which: name });
        }
        let mut out = State::zeros(x.len());
        for i in self.block_range(which) {
            out[i] = (self.lambda[i] * t).exp() * x[i];
        }
        Ok(out)
    }

    /// Per-mode semigroup factors `e^{lambda_i t}` (no block restriction, no
    /// sign check); the solvers use this as the hot path.
    pub fn semigroup_factors(&self, t: f64) -> Array1<f64> {
        self.lambda.iter().map(|l| (l * t).exp()).collect()
    }

    /// Empirical check of the analytic-smoothing bounds on the stable block:
    ///
    /// * `sup_{t in grid, lambda_i < 0} (t |lambda_i|)^sigma e^{lambda_i t}`
    ///   (the `|S(t) x|_{gamma+sigma} <= c_S t^{-sigma} |x|_gamma` bound), and
    /// * `sup |e^{lambda_i t} - 1| / (t |lambda_i|)^sigma`
    ///   (the `|(S(t) - id) x|_gamma <= c_S t^sigma |x|_{gamma+sigma}` bound).
    ///
    /// The unstable block is excluded: there the group is bounded on compact
    /// windows by the dichotomy estimate, which is audited separately.
    pub fn smoothing_constant_audit(&self, sigma: f64, t_grid: &[f64]) -> SmoothingAudit {
        let mut sup_power: f64 = 0.0;
        let mut sup_difference: f64 = 0.0;
        for &t in t_grid {
            if t < 0.0 {
                continue;
            }
            for i in self.block_range(Block::Minus) {
                let l = self.lambda[i].abs();
                let p = (t * l).powf(sigma) * (-l * t).exp();
                sup_power = sup_power.max(p);
                if t > 0.0 {
                    let d = (1.0 - (-l * t).exp()) / (t * l).powf(sigma);
                    sup_difference = sup_difference.max(d);
                }
            }
        }
        SmoothingAudit {
            sigma,
            sup_power,
            sup_difference,
            c_s: self.c_s,
        }
    }

    /// Sampled audit of the two interval bounds used for Hoelder estimates of
    /// semigroup convolutions: for random `tau < r < s < t` and admissible
    /// exponents,
    ///
    /// * `|lambda|^{gamma-eta} |e^{lambda(t-r)} - e^{lambda(t-tau)}|
    ///    <= c_S (r-tau)^nu (t-r)^{-nu-gamma+eta}` and
    /// * `|e^{lambda(t-r)} - e^{lambda(s-r)} - e^{lambda(t-tau)} + e^{lambda(s-tau)}|
    ///    <= c_S (t-s)^kappa (r-tau)^iota (s-r)^{-kappa-iota}`,
    ///
    /// over the stable modes. Returns the largest observed ratio of left- to
    /// right-hand side for each family.
    pub fn difference_bound_audit<R: Rng>(&self, samples: usize, rng: &mut R) -> DifferenceAudit {
        let mut sup_single: f64 = 0.0;
        let mut sup_double: f64 = 0.0;
        for _ in 0..samples {
            // ordered quadruple in (0, 2]
            let mut q: [f64; 4] = [
                rng.random_range(1e-3..2.0),
                rng.random_range(1e-3..2.0),
                rng.random_range(1e-3..2.0),
                rng.random_range(1e-3..2.0),
            ];
            q.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let [tau, r, s, t] = q;
            if r - tau < 1e-9 || s - r < 1e-9 || t - s < 1e-9 {
                continue;
            }

            let eta = rng.random_range(0.0..1.0);
            let nu = rng.random_range(0.0..=eta);
            let gamma = rng.random_range((eta - nu)..1.0);
            let kappa = rng.random_range(0.0..1.0);
            let iota = rng.random_range(0.0..(1.0f64 - kappa / 2.0).min(1.0));

            for i in self.block_range(Block::Minus) {
                let l = self.lambda[i];
                let la = l.abs();
                let lhs1 = la.powf(gamma - eta) * ((l * (t - r)).exp() - (l * (t - tau)).exp()).abs();
                let rhs1 = (r - tau).powf(nu) * (t - r).powf(-nu - gamma + eta);
                sup_single = sup_single.max(lhs1 / rhs1);

                let lhs2 = ((l * (t - r)).exp() - (l * (s - r)).exp() - (l * (t - tau)).exp()
                    + (l * (s - tau)).exp())
                .abs();
                let rhs2 = (t - s).powf(kappa) * (r - tau).powf(iota) * (s - r).powf(-kappa - iota);
                sup_double = sup_double.max(lhs2 / rhs2);
            }
        }
        DifferenceAudit {
            sup_single,
            sup_double,
            c_s: self.c_s,
        }
    }
}

/// Result of [`SpectralModel::smoothing_constant_audit`].
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SmoothingAudit {
    pub sigma: f64,
    pub sup_power: f64,
    pub sup_difference: f64,
    pub c_s: f64,
}

impl SmoothingAudit {
    pub fn passes(&self) -> bool {
        self.sup_power <= self.c_s && self.sup_difference <= self.c_s
    }

    /// Turn a failed audit into a configuration error (`c_s` too small).
    pub fn ensure(&self) -> Result<()> {
        if self.passes() {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!(
                "smoothing audit exceeds c_s = {}: sup_power = {:.6}, sup_difference = {:.6} (sigma = {})",
                self.c_s, self.sup_power, self.sup_difference, self.sigma
            )))
        }
    }
}

/// Result of [`SpectralModel::difference_bound_audit`].
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DifferenceAudit {
    pub sup_single: f64,
    pub sup_double: f64,
    pub c_s: f64,
}

impl DifferenceAudit {
    pub fn passes(&self) -> bool {
        self.sup_single <= self.c_s && self.sup_double <= self.c_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn model() -> SpectralModel {
        SpectralModel::quadratic_shift(2.0, 8, 0.5, 2.0, 0.9, -1.8, 1.5).unwrap()
    }

    #[test]
    fn construction_validates() {
        // strictly decreasing required
        assert!(SpectralModel::new(vec![1.0, 1.0], vec![1.0, 1.0], 0.5, -0.5, 1.5).is_err());
        // zero eigenvalue rejected
        assert!(SpectralModel::new(vec![1.0, 0.0], vec![1.0, 1.0], 0.5, -0.5, 1.5).is_err());
        // c_s >= 1
        assert!(SpectralModel::new(vec![1.0, -1.0], vec![1.0, 1.0], 0.5, -0.5, 0.5).is_err());
        // mu_hat must not exceed the smallest unstable eigenvalue
        assert!(SpectralModel::new(vec![1.0, -1.0], vec![1.0, 1.0], 1.5, -0.5, 1.5).is_err());
        // mu_check must dominate the largest stable eigenvalue
        assert!(SpectralModel::new(vec![1.0, -1.0], vec![1.0, 1.0], 0.5, -2.0, 1.5).is_err());
        // covariance weights nonnegative
        assert!(SpectralModel::new(vec![1.0, -1.0], vec![1.0, -0.1], 0.5, -0.5, 1.5).is_err());

        let m = model();
        assert_eq!(m.k_plus(), 1);
        assert_eq!(m.lambda()[0], 1.0);
        assert_eq!(m.lambda()[1], -2.0);
    }

    #[test]
    fn graded_norm_examples() {
        let m = model();
        let mut x = m.zero_state();
        x[0] = 1.0;
        // unit eigenvector at gamma = 0
        assert_abs_diff_eq!(m.graded_norm(&x, 0.0), 1.0);
        // |e_i|_gamma = |lambda_i|^gamma
        let mut y = m.zero_state();
        y[2] = 1.0; // lambda_3 = -7
        for gamma in [-0.6, -0.25, 0.0, 0.5, 1.0] {
            assert_relative_eq!(m.graded_norm(&y, gamma), 7.0f64.powf(gamma), max_relative = 1e-14);
        }
    }

    #[test]
    fn graded_norm_monotonicity_and_interpolation() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..500 {
            let x: State = (0..m.n_modes()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut exps: [f64; 3] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            exps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let [theta, beta, gamma] = exps;
            // monotone family: |x|_{g1} <= max_i |lambda_i|^{g1-g2} |x|_{g2}
            let c = m
                .lambda()
                .iter()
                .map(|l| l.abs().powf(theta - beta))
                .fold(f64::MIN, f64::max);
            assert!(m.graded_norm(&x, theta) <= c * m.graded_norm(&x, beta) * (1.0 + 1e-12));
            // interpolation inequality, constant 1 for the diagonal realization
            if gamma - theta > 1e-6 {
                let lhs = m.graded_norm(&x, beta).powf(gamma - theta);
                let rhs = m.graded_norm(&x, theta).powf(gamma - beta)
                    * m.graded_norm(&x, gamma).powf(beta - theta);
                assert!(lhs <= rhs * (1.0 + 1e-9), "lhs {lhs} rhs {rhs}");
            }
        }
    }

    #[test]
    fn projections_split_identity() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x: State = (0..m.n_modes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = m.project(&x, Block::Plus);
        let q = m.project(&x, Block::Minus);
        for i in 0..m.n_modes() {
            assert_eq!(p[i] + q[i], x[i]);
        }
        // idempotent
        assert_eq!(m.project(&p, Block::Plus), p);
        assert_eq!(m.project(&p, Block::Minus), m.zero_state());
    }

    #[test]
    fn semigroup_acts_diagonally() {
        let m = model();
        let mut x = m.zero_state();
        x[3] = 2.0; // lambda_4 = -14
        let y = m.semigroup_apply(0.25, &x, Block::Full).unwrap();
        assert_relative_eq!(y[3], 2.0 * (-14.0f64 * 0.25).exp(), max_relative = 1e-14);
        // S(0) = id
        assert_eq!(m.semigroup_apply(0.0, &x, Block::Full).unwrap(), x);
        // semigroup law on the full scale
        let a = m.semigroup_apply(0.7, &x, Block::Full).unwrap();
        let ab = m.semigroup_apply(0.3, &a, Block::Full).unwrap();
        let c = m.semigroup_apply(1.0, &x, Block::Full).unwrap();
        for i in 0..m.n_modes() {
            assert_relative_eq!(ab[i], c[i], max_relative = 1e-12, epsilon = 1e-300);
        }
        // negative time rejected off the unstable block
        assert!(m.semigroup_apply(-0.1, &x, Block::Full).is_err());
        assert!(m.semigroup_apply(-0.1, &x, Block::Minus).is_err());
        assert!(m.semigroup_apply(-0.1, &x, Block::Plus).is_ok());
    }

    #[test]
    fn unstable_group_property() {
        let m = model();
        let mut x = m.zero_state();
        x[0] = 1.0;
        x[5] = 1.0; // gets projected away
        let fwd = m.semigroup_apply(1.3, &x, Block::Plus).unwrap();
        let back = m.semigroup_apply(-1.3, &fwd, Block::Plus).unwrap();
        let px = m.project(&x, Block::Plus);
        for i in 0..m.n_modes() {
            assert_abs_diff_eq!(back[i], px[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn dichotomy_bounds_hold() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x: State = (0..m.n_modes()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = rng.random_range(0.0..3.0);
            let fwd = m.semigroup_apply(t, &x, Block::Minus).unwrap();
            let nx = m.graded_norm(&m.project(&x, Block::Minus), 0.0);
            assert!(
                m.graded_norm(&fwd, 0.0) <= m.c_s() * (m.mu_check() * t).exp() * nx + 1e-15
            );
            let back = m.semigroup_apply(-t, &x, Block::Plus).unwrap();
            let px = m.graded_norm(&m.project(&x, Block::Plus), 0.0);
            assert!(
                m.graded_norm(&back, 0.0) <= m.c_s() * (-m.mu_hat() * t).exp() * px + 1e-15
            );
        }
    }

    #[test]
    fn smoothing_audit_examples() {
        let m = model();
        let grid: Vec<f64> = (0..=200).map(|j| j as f64 / 200.0).collect();
        // sigma = 0: pure contraction on the stable block, supremum 1 at t = 0
        let a0 = m.smoothing_constant_audit(0.0, &grid);
        assert_abs_diff_eq!(a0.sup_power, 1.0);
        assert!(a0.sup_difference <= 1.0 + 1e-12);
        assert!(a0.passes());

        // sigma = 1, single stable mode lambda = -1: sup_t t e^{-t} = 1/e
        let single = SpectralModel::new(vec![-1.0], vec![1.0], 0.5, -1.0, 1.5).unwrap();
        let a1 = single.smoothing_constant_audit(1.0, &grid);
        assert_relative_eq!(a1.sup_power, (-1.0f64).exp(), max_relative = 1e-6);
        // difference bound at sigma = 1: (1 - e^{-x})/x <= 1
        assert!(a1.sup_difference <= 1.0 + 1e-12);
        assert!(a1.ensure().is_ok());
    }

    #[test]
    fn difference_bounds_within_c_s() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let audit = m.difference_bound_audit(4000, &mut rng);
        assert!(audit.sup_single <= m.c_s(), "sup_single = {}", audit.sup_single);
        assert!(audit.sup_double <= m.c_s(), "sup_double = {}", audit.sup_double);
        assert!(audit.passes());
    }
}
