//! Drift and diffusion coefficients.
//!
//! Solvers see coefficients through the [`Coefficients`] trait: pointwise
//! evaluation, directional jacobians, and Lipschitz metadata stated with
//! respect to the graded norm `|u|_{-beta}` the fixed-point iterations run
//! in. Two presets are provided:
//!
//! * [`SaturatingCoefficients`] - the production nonlinearity. A bounded
//!   odd saturation `s(x) = (x / sqrt(1+x^2))^3` with `s(0) = s'(0) = 0`
//!   acts on graded coordinates, so both coefficients vanish to second
//!   order at the origin and their ball-restricted Lipschitz constants
//!   shrink linearly with the radius.
//! * [`DiagonalLinearCoefficients`] - multiplicative linear noise
//!   `G(u)w = diag(sigma_i u_i) w` with zero drift. Its mild solutions are
//!   known in closed form per mode, which makes it the solver oracle; note
//!   `DG(0) != 0`, so it is a test model, not a manifold candidate.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};

/// `s(x) = (x / sqrt(1+x^2))^3`: odd, bounded by 1, with `s(0) = s'(0) = 0`.
pub fn saturating(x: f64) -> f64 {
    let y = x / (1.0 + x * x).sqrt();
    y * y * y
}

/// `s'(x) = 3 x^2 / (1+x^2)^{5/2}`.
pub fn saturating_deriv(x: f64) -> f64 {
    3.0 * x * x * (1.0 + x * x).powf(-2.5)
}

/// Global Lipschitz constant of `s`: the maximum of `s'` at `x^2 = 2/3`,
/// `2 (3/5)^{5/2}`.
pub fn saturating_lipschitz() -> f64 {
    2.0 * 0.6f64.powf(2.5)
}

/// Global bound on `|s''|`, attained at `x^2 = (63 - sqrt(3105)) / 72`.
pub fn saturating_curvature() -> f64 {
    let y = (63.0 - 3105f64.sqrt()) / 72.0;
    3.0 * y.sqrt() * (2.0 - 3.0 * y) * (1.0 + y).powf(-3.5)
}

/// Coefficient pair `(F, G)` of the state equation, with the directional
/// jacobians the derivative solves need and Lipschitz bounds with respect to
/// the graded norm `|u|_{-beta}`. `radius = f64::INFINITY` asks for the
/// global constants.
pub trait Coefficients {
    fn n_modes(&self) -> usize;

    /// `F(u)`.
    fn drift(&self, u: ArrayView1<f64>) -> Array1<f64>;

    /// `DF(u) v`.
    fn drift_jacobian(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64>;

    /// `G(u) w` for a noise-space vector `w`; the hot path of every solver.
    fn apply_diffusion(&self, u: ArrayView1<f64>, w: ArrayView1<f64>) -> Array1<f64>;

    /// `(DG(u) v) w`.
    fn diffusion_jacobian(
        &self,
        u: ArrayView1<f64>,
        v: ArrayView1<f64>,
        w: ArrayView1<f64>,
    ) -> Array1<f64>;

    /// `G(u)` assembled column by column; reference implementations and
    /// tests only.
    fn diffusion_matrix(&self, u: ArrayView1<f64>) -> Array2<f64> {
        let n = self.n_modes();
        let mut g = Array2::zeros((n, n));
        let mut w = Array1::zeros(n);
        for j in 0..n {
            w[j] = 1.0;
            g.column_mut(j).assign(&self.apply_diffusion(u, w.view()));
            w[j] = 0.0;
        }
        g
    }

    /// Lipschitz bound for `F` on the graded ball of the given radius.
    fn drift_lipschitz(&self, radius: f64) -> f64;

    /// Lipschitz bound for `u -> G(u)` on the graded ball, as an operator
    /// into maps from the noise space to the graded state space.
    fn diffusion_lipschitz(&self, radius: f64) -> f64;

    /// Whether `DF(0) = 0` and `DG(0) = 0` (required by the manifold
    /// construction; the linear-noise oracle answers `false`).
    fn derivatives_vanish_at_zero(&self) -> bool;
}

/// Mixing weight of the adjacent-mode coupling in the saturating diffusion.
const MIX: f64 = 0.3;

/// Saturating coefficients on graded coordinates:
///
/// * `F(u)_k = eps_f |lambda_k|^beta s(|lambda_k|^{-beta} u_k)`,
/// * `G(u) w = eps_g sum_{k < rank} s(<a_k, u>) w_k b_k` with
///   `a_k = |lambda_k|^{-beta} e_k` (unit graded dual vectors, so
///   `|<a_k, u>| <= |u|_{-beta}`) and `b_k` a unit mix of modes `k` and
///   `k+1`.
#[derive(Debug, Clone)]
pub struct SaturatingCoefficients {
    eps_f: f64,
    eps_g: f64,
    rank: usize,
    /// `|lambda_k|^beta`
    grade_up: Vec<f64>,
    /// `|lambda_k|^{-beta}`
    grade_down: Vec<f64>,
}

impl SaturatingCoefficients {
    pub fn new(lambda: &[f64], beta: f64, eps_f: f64, eps_g: f64, rank: usize) -> Result<Self> {
        if lambda.is_empty() || lambda.iter().any(|&l| l == 0.0 || !l.is_finite()) {
            return Err(Error::InvalidModel(
                "spectrum must be nonempty, finite and nonzero".into(),
            ));
        }
        if !(eps_f >= 0.0 && eps_g >= 0.0 && beta > 0.0) {
            return Err(Error::InvalidParam(
                "amplitudes must be nonnegative and beta positive".into(),
            ));
        }
        if rank == 0 || rank > lambda.len() {
            return Err(Error::InvalidParam(format!(
                "diffusion rank {rank} outside 1..={}",
                lambda.len()
            )));
        }
        Ok(SaturatingCoefficients {
            eps_f,
            eps_g,
            rank,
            grade_up: lambda.iter().map(|l| l.abs().powf(beta)).collect(),
            grade_down: lambda.iter().map(|l| l.abs().powf(-beta)).collect(),
        })
    }

    pub fn amplitudes(&self) -> (f64, f64) {
        (self.eps_f, self.eps_g)
    }

    fn b_dir(&self, k: usize) -> (usize, usize, f64, f64) {
        let scale = (1.0 + MIX * MIX).sqrt().recip();
        (k, (k + 1) % self.grade_up.len(), scale, MIX * scale)
    }
}

impl Coefficients for SaturatingCoefficients {
    fn n_modes(&self) -> usize {
        self.grade_up.len()
    }

    fn drift(&self, u: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(
            u.iter()
                .zip(self.grade_up.iter().zip(&self.grade_down))
                .map(|(&x, (&up, &down))| self.eps_f * up * saturating(down * x)),
        )
    }

    fn drift_jacobian(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(
            u.iter()
                .zip(v.iter())
                .zip(&self.grade_down)
                .map(|((&x, &vi), &down)| self.eps_f * saturating_deriv(down * x) * vi),
        )
    }

    fn apply_diffusion(&self, u: ArrayView1<f64>, w: ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_modes());
        for k in 0..self.rank {
            let gain = self.eps_g * saturating(self.grade_down[k] * u[k]) * w[k];
            let (i, j, ci, cj) = self.b_dir(k);
            out[i] += gain * ci;
            out[j] += gain * cj;
        }
        out
    }

    fn diffusion_jacobian(
        &self,
        u: ArrayView1<f64>,
        v: ArrayView1<f64>,
        w: ArrayView1<f64>,
    ) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_modes());
        for k in 0..self.rank {
            let gain =
                self.eps_g * saturating_deriv(self.grade_down[k] * u[k]) * self.grade_down[k]
                    * v[k]
                    * w[k];
            let (i, j, ci, cj) = self.b_dir(k);
            out[i] += gain * ci;
            out[j] += gain * cj;
        }
        out
    }

    fn drift_lipschitz(&self, radius: f64) -> f64 {
        // the saturation argument is |lambda_k|^{-beta} u_k, bounded by the
        // graded norm, so the ball restriction caps s' at curvature * radius
        let slope = if radius.is_finite() {
            saturating_lipschitz().min(saturating_curvature() * radius)
        } else {
            saturating_lipschitz()
        };
        self.eps_f * slope
    }

    fn diffusion_lipschitz(&self, radius: f64) -> f64 {
        let slope = if radius.is_finite() {
            saturating_lipschitz().min(saturating_curvature() * radius)
        } else {
            saturating_lipschitz()
        };
        // sqrt(2) covers the overlap of adjacent b_k supports; the graded
        // norm of each unit b_k is at most max_k |lambda_k|^{-beta}
        let b_norm = self
            .grade_down
            .iter()
            .take(self.rank + 1)
            .cloned()
            .fold(0.0, f64::max);
        2f64.sqrt() * self.eps_g * slope * b_norm
    }

    fn derivatives_vanish_at_zero(&self) -> bool {
        true
    }
}

/// Multiplicative linear noise `G(u) w = diag(sigma_i u_i) w`, zero drift.
/// Mode `i` of the mild solution is `u_i(0) exp(lambda_i t + sigma_i w_i(t))`
/// in the pathwise (Young) calculus, which makes this the solver oracle.
#[derive(Debug, Clone)]
pub struct DiagonalLinearCoefficients {
    sigma: Vec<f64>,
}

impl DiagonalLinearCoefficients {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() || sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidModel("sigma must be nonempty and finite".into()));
        }
        Ok(DiagonalLinearCoefficients { sigma })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

impl Coefficients for DiagonalLinearCoefficients {
    fn n_modes(&self) -> usize {
        self.sigma.len()
    }

    fn drift(&self, _u: ArrayView1<f64>) -> Array1<f64> {
        Array1::zeros(self.sigma.len())
    }

    fn drift_jacobian(&self, _u: ArrayView1<f64>, _v: ArrayView1<f64>) -> Array1<f64> {
        Array1::zeros(self.sigma.len())
    }

    fn apply_diffusion(&self, u: ArrayView1<f64>, w: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(
            self.sigma
                .iter()
                .zip(u.iter().zip(w.iter()))
                .map(|(&s, (&ui, &wi))| s * ui * wi),
        )
    }

    fn diffusion_jacobian(
        &self,
        _u: ArrayView1<f64>,
        v: ArrayView1<f64>,
        w: ArrayView1<f64>,
    ) -> Array1<f64> {
        Array1::from_iter(
            self.sigma
                .iter()
                .zip(v.iter().zip(w.iter()))
                .map(|(&s, (&vi, &wi))| s * vi * wi),
        )
    }

    fn drift_lipschitz(&self, _radius: f64) -> f64 {
        0.0
    }

    fn diffusion_lipschitz(&self, _radius: f64) -> f64 {
        self.sigma.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    fn derivatives_vanish_at_zero(&self) -> bool {
        false
    }
}

/// Quintic smootherstep `6x^5 - 15x^4 + 10x^3` clamped to `[0, 1]`.
fn smootherstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

fn smootherstep_deriv(x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    30.0 * x * x * (x - 1.0) * (x - 1.0)
}

/// Radial profile of the cutoff: `psi(r) = 1` for `r <= 1/2`, `0` for
/// `r >= 1`, smootherstep-interpolated between.
pub fn cutoff_profile(r: f64) -> f64 {
    1.0 - smootherstep(2.0 * r - 1.0)
}

pub fn cutoff_profile_deriv(r: f64) -> f64 {
    -2.0 * smootherstep_deriv(2.0 * r - 1.0)
}

/// Global bound on the cutoff differential: `|D chi_R| <= sup_r (psi(r) + |psi'(r)| r)`,
/// evaluated by a dense scan of the transition zone.
pub fn cutoff_differential_bound() -> f64 {
    let mut sup: f64 = 1.0;
    for i in 0..=4000 {
        let r = 0.5 + 0.5 * i as f64 / 4000.0;
        sup = sup.max(cutoff_profile(r) + cutoff_profile_deriv(r).abs() * r);
    }
    sup
}

/// `sup_r r psi(r)`: the cutoff maps the whole space into the graded ball of
/// `bound * R`.
pub fn cutoff_range_factor() -> f64 {
    let mut sup: f64 = 0.5;
    for i in 0..=4000 {
        let r = 0.5 + 0.5 * i as f64 / 4000.0;
        sup = sup.max(r * cutoff_profile(r));
    }
    sup
}

/// Coefficients truncated outside the graded ball of radius `R`:
/// `F_R = F . chi_R`, `G_R = G . chi_R` with `chi_R(u) = psi(|u|_{-beta}/R) u`.
///
/// The jacobians use the scale-only part `c DF(c u) v` with `c = psi(r)`,
/// dropping the rank-one `psi'` term; this is exact wherever `psi` is
/// locally constant - in particular on the inner ball `|u|_{-beta} <= R/2`,
/// the regime every verified manifold point lives in.
pub struct TruncatedCoefficients<C> {
    inner: C,
    radius: f64,
    /// `|lambda_i|^{-beta}`, the weights of the graded norm
    weights: Vec<f64>,
}

impl<C: Coefficients> TruncatedCoefficients<C> {
    pub fn new(inner: C, radius: f64, lambda: &[f64], beta: f64) -> Result<Self> {
        if lambda.len() != inner.n_modes() {
            return Err(Error::InvalidModel(format!(
                "{} spectrum entries for {} modes",
                lambda.len(),
                inner.n_modes()
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "cutoff radius must be positive and finite, got {radius}"
            )));
        }
        Ok(TruncatedCoefficients {
            inner,
            radius,
            weights: lambda.iter().map(|l| l.abs().powf(-beta)).collect(),
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    fn graded_norm(&self, u: ArrayView1<f64>) -> f64 {
        u.iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (w * x) * (w * x))
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&self, u: ArrayView1<f64>) -> f64 {
        cutoff_profile(self.graded_norm(u) / self.radius)
    }

    pub fn cutoff(&self, u: ArrayView1<f64>) -> Array1<f64> {
        let c = self.scale(u);
        u.map(|&x| c * x)
    }
}

impl<C: Coefficients> Coefficients for TruncatedCoefficients<C> {
    fn n_modes(&self) -> usize {
        self.inner.n_modes()
    }

    fn drift(&self, u: ArrayView1<f64>) -> Array1<f64> {
        self.inner.drift(self.cutoff(u).view())
    }

    fn drift_jacobian(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
        let c = self.scale(u);
        let cu = u.map(|&x| c * x);
        let mut out = self.inner.drift_jacobian(cu.view(), v);
        out.mapv_inplace(|x| c * x);
        out
    }

    fn apply_diffusion(&self, u: ArrayView1<f64>, w: ArrayView1<f64>) -> Array1<f64> {
        self.inner.apply_diffusion(self.cutoff(u).view(), w)
    }

    fn diffusion_jacobian(
        &self,
        u: ArrayView1<f64>,
        v: ArrayView1<f64>,
        w: ArrayView1<f64>,
    ) -> Array1<f64> {
        let c = self.scale(u);
        let cu = u.map(|&x| c * x);
        let mut out = self.inner.diffusion_jacobian(cu.view(), v, w);
        out.mapv_inplace(|x| c * x);
        out
    }

    fn drift_lipschitz(&self, radius: f64) -> f64 {
        // the cutoff maps everything into the ball of range-factor * R and
        // multiplies the differential by at most the cutoff bound
        let reach = (cutoff_range_factor() * self.radius).min(radius);
        cutoff_differential_bound() * self.inner.drift_lipschitz(reach)
    }

    fn diffusion_lipschitz(&self, radius: f64) -> f64 {
        let reach = (cutoff_range_factor() * self.radius).min(radius);
        cutoff_differential_bound() * self.inner.diffusion_lipschitz(reach)
    }

    fn derivatives_vanish_at_zero(&self) -> bool {
        self.inner.derivatives_vanish_at_zero()
    }
}

/// Pathwise cutoff radius `R(w) = k_scale / (c_s (c_f + c_ab c_g (1 + block_norm)))`:
/// the admissible truncation below which the contraction constants close,
/// shrinking as the block seminorm of the driving noise grows.
pub fn cutoff_radius(
    k_scale: f64,
    c_s: f64,
    c_f: f64,
    c_ab: f64,
    c_g: f64,
    block_norm: f64,
) -> f64 {
    debug_assert!(k_scale > 0.0 && c_s >= 1.0 && block_norm >= 0.0);
    k_scale / (c_s * (c_f + c_ab * c_g * (1.0 + block_norm)))
}

/// Outcome of the amplitude auto-scaling loop.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AmplitudeScaling {
    pub eps_f: f64,
    pub eps_g: f64,
    pub halvings: u32,
    pub min_radius: f64,
}

/// Halve both coefficient amplitudes until the pathwise radius stays above
/// `target_radius` on every supplied noise block. `lip_f_unit`/`lip_g_unit`
/// are the coefficient Lipschitz constants at unit amplitude.
#[allow(clippy::too_many_arguments)]
pub fn auto_scale_amplitudes(
    mut eps_f: f64,
    mut eps_g: f64,
    lip_f_unit: f64,
    lip_g_unit: f64,
    k_scale: f64,
    c_s: f64,
    c_ab: f64,
    block_norms: &[f64],
    target_radius: f64,
    max_halvings: u32,
) -> Result<AmplitudeScaling> {
    if block_norms.is_empty() {
        return Err(Error::InvalidParam("no noise blocks supplied".into()));
    }
    let min_radius = |ef: f64, eg: f64| {
        block_norms
            .iter()
            .map(|&b| cutoff_radius(k_scale, c_s, ef * lip_f_unit, c_ab, eg * lip_g_unit, b))
            .fold(f64::INFINITY, f64::min)
    };
    let mut halvings = 0;
    loop {
        let r = min_radius(eps_f, eps_g);
        if r >= target_radius {
            return Ok(AmplitudeScaling { eps_f, eps_g, halvings, min_radius: r });
        }
        if halvings >= max_halvings {
            return Err(Error::NoContraction {
                factor: target_radius / r,
                iteration: halvings as usize,
            });
        }
        eps_f *= 0.5;
        eps_g *= 0.5;
        halvings += 1;
    }
}

/// Sampling audit of the Lipschitz metadata: random pairs in the graded ball
/// versus the advertised bound.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LipschitzAudit {
    pub measured_drift: f64,
    pub bound_drift: f64,
    pub measured_diffusion: f64,
    pub bound_diffusion: f64,
}

impl LipschitzAudit {
    pub fn passes(&self) -> bool {
        self.measured_drift <= self.bound_drift * (1.0 + 1e-9)
            && self.measured_diffusion <= self.bound_diffusion * (1.0 + 1e-9)
    }
}

pub fn lipschitz_audit<C: Coefficients, R: Rng + ?Sized>(
    coeffs: &C,
    lambda: &[f64],
    beta: f64,
    radius: f64,
    samples: usize,
    rng: &mut R,
) -> LipschitzAudit {
    let n = coeffs.n_modes();
    let weights: Vec<f64> = lambda.iter().map(|l| l.abs().powf(-beta)).collect();
    let norm = |x: &Array1<f64>| {
        x.iter()
            .zip(&weights)
            .map(|(&v, &w)| (w * v) * (w * v))
            .sum::<f64>()
            .sqrt()
    };
    let draw_in_ball = |rng: &mut R| {
        let mut x = Array1::from_iter((0..n).map(|_| rng.random_range(-1.0..1.0)));
        let r = radius * rng.random_range(0.0..1.0f64);
        let nx = norm(&x);
        if nx > 0.0 {
            x.mapv_inplace(|v| v * r / nx);
        }
        x
    };
    let mut measured_drift = 0.0f64;
    let mut measured_diffusion = 0.0f64;
    for _ in 0..samples {
        let u = draw_in_ball(rng);
        let v = draw_in_ball(rng);
        let du = norm(&(&u - &v));
        if du < 1e-12 {
            continue;
        }
        let df = &coeffs.drift(u.view()) - &coeffs.drift(v.view());
        measured_drift = measured_drift.max(norm(&df) / du);
        // random unit noise direction for the operator difference
        let mut w = Array1::from_iter((0..n).map(|_| rng.random_range(-1.0..1.0f64)));
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nw > 0.0 {
            w.mapv_inplace(|x| x / nw);
        }
        let dg = &coeffs.apply_diffusion(u.view(), w.view())
            - &coeffs.apply_diffusion(v.view(), w.view());
        measured_diffusion = measured_diffusion.max(norm(&dg) / du);
    }
    LipschitzAudit {
        measured_drift,
        bound_drift: coeffs.drift_lipschitz(radius),
        measured_diffusion,
        bound_diffusion: coeffs.diffusion_lipschitz(radius),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{roles, stream, stream_rng};
    use approx::assert_relative_eq;
    use ndarray::arr1;

    fn test_lambda() -> Vec<f64> {
        vec![1.0, -2.0, -7.0, -14.0, -23.0]
    }

    fn preset() -> SaturatingCoefficients {
        SaturatingCoefficients::new(&test_lambda(), 0.6, 0.05, 0.05, 5).unwrap()
    }

    #[test]
    fn saturation_shape_and_constants() {
        assert_eq!(saturating(0.0), 0.0);
        assert_relative_eq!(saturating(1e-6), 1e-18, max_relative = 1e-9);
        assert_relative_eq!(saturating(-2.0), -saturating(2.0), epsilon = 1e-15);
        assert!(saturating(50.0) < 1.0 && saturating(50.0) > 0.99);
        // closed-form extrema against dense scans
        let mut lip: f64 = 0.0;
        let mut curv: f64 = 0.0;
        for i in 0..200_000 {
            let x = -5.0 + 10.0 * i as f64 / 200_000.0;
            lip = lip.max(saturating_deriv(x));
            let dd = (saturating_deriv(x + 5e-6) - saturating_deriv(x - 5e-6)) / 1e-5;
            curv = curv.max(dd.abs());
        }
        assert_relative_eq!(saturating_lipschitz(), lip, max_relative = 1e-6);
        assert_relative_eq!(saturating_curvature(), curv, max_relative = 1e-4);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let c = preset();
        let u = arr1(&[0.3, -0.4, 1.1, 0.05, -0.6]);
        let v = arr1(&[0.2, 0.5, -0.3, 0.9, 0.1]);
        let w = arr1(&[-0.7, 0.2, 0.4, -0.1, 0.3]);
        let eps = 1e-6;
        let up = &u + &(eps * &v);
        let um = &u - &(eps * &v);
        let fd_f = (&c.drift(up.view()) - &c.drift(um.view())) / (2.0 * eps);
        let jf = c.drift_jacobian(u.view(), v.view());
        let fd_g = (&c.apply_diffusion(up.view(), w.view())
            - &c.apply_diffusion(um.view(), w.view()))
            / (2.0 * eps);
        let jg = c.diffusion_jacobian(u.view(), v.view(), w.view());
        for i in 0..5 {
            assert_relative_eq!(jf[i], fd_f[i], epsilon = 1e-8, max_relative = 1e-6);
            assert_relative_eq!(jg[i], fd_g[i], epsilon = 1e-8, max_relative = 1e-6);
        }
        assert!(c.derivatives_vanish_at_zero());
        let zero = Array1::zeros(5);
        assert!(c
            .drift_jacobian(zero.view(), v.view())
            .iter()
            .all(|&x| x == 0.0));
        assert!(c
            .diffusion_jacobian(zero.view(), v.view(), w.view())
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn diffusion_matrix_matches_apply() {
        let c = preset();
        let u = arr1(&[0.5, -0.2, 0.8, -1.0, 0.3]);
        let w = arr1(&[0.1, -0.9, 0.2, 0.7, -0.4]);
        let direct = c.apply_diffusion(u.view(), w.view());
        let via_matrix = c.diffusion_matrix(u.view()).dot(&w);
        for i in 0..5 {
            assert_relative_eq!(direct[i], via_matrix[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn lipschitz_bounds_hold_on_samples() {
        let lambda = test_lambda();
        let mut rng = stream_rng(3, stream(roles::AUDIT, 0));
        for radius in [0.05, 0.5, f64::INFINITY] {
            let sample_radius = if radius.is_finite() { radius } else { 50.0 };
            let audit = lipschitz_audit(&preset(), &lambda, 0.6, sample_radius, 400, &mut rng);
            let c = preset();
            assert!(
                audit.measured_drift <= c.drift_lipschitz(radius) * (1.0 + 1e-9),
                "drift: measured {} vs bound {}",
                audit.measured_drift,
                c.drift_lipschitz(radius)
            );
            assert!(
                audit.measured_diffusion <= c.diffusion_lipschitz(radius) * (1.0 + 1e-9),
                "diffusion: measured {} vs bound {}",
                audit.measured_diffusion,
                c.diffusion_lipschitz(radius)
            );
        }
        // the oracle preset as well
        let diag = DiagonalLinearCoefficients::new(vec![0.1, 0.05, 0.02, 0.01, 0.005]).unwrap();
        let audit = lipschitz_audit(&diag, &lambda, 0.6, 2.0, 400, &mut rng);
        assert!(audit.passes(), "diagonal-linear audit: {audit:?}");
        assert!(!diag.derivatives_vanish_at_zero());
    }

    #[test]
    fn ball_restricted_constants_shrink_linearly() {
        let c = preset();
        let l1 = c.drift_lipschitz(0.01);
        let l2 = c.drift_lipschitz(0.02);
        assert_relative_eq!(l2, 2.0 * l1, max_relative = 1e-12);
        assert!(c.drift_lipschitz(f64::INFINITY) <= 0.05 * saturating_lipschitz() + 1e-15);
    }

    #[test]
    fn diagonal_linear_is_multiplicative() {
        let d = DiagonalLinearCoefficients::new(vec![0.3, 0.2]).unwrap();
        let u = arr1(&[2.0, -1.0]);
        let w = arr1(&[0.5, 4.0]);
        let g = d.apply_diffusion(u.view(), w.view());
        assert_relative_eq!(g[0], 0.3 * u[0] * w[0], epsilon = 1e-15);
        assert_relative_eq!(g[1], 0.2 * u[1] * w[1], epsilon = 1e-15);
        assert!(d.drift(u.view()).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cutoff_profile_and_bounds() {
        assert_eq!(cutoff_profile(0.2), 1.0);
        assert_eq!(cutoff_profile(1.3), 0.0);
        assert!(cutoff_profile(0.75) > 0.0 && cutoff_profile(0.75) < 1.0);
        // C^1 fit at the seams
        assert_relative_eq!(cutoff_profile(0.5), 1.0, epsilon = 1e-12);
        assert_relative_eq!(cutoff_profile_deriv(0.5), 0.0, epsilon = 1e-12);
        assert_relative_eq!(cutoff_profile(1.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(cutoff_profile_deriv(1.0), 0.0, epsilon = 1e-12);
        // derivative scan consistency
        for i in 0..200 {
            let r = 0.4 + 0.7 * i as f64 / 200.0;
            let fd = (cutoff_profile(r + 5e-7) - cutoff_profile(r - 5e-7)) / 1e-6;
            assert_relative_eq!(cutoff_profile_deriv(r), fd, epsilon = 1e-5);
        }
        let d = cutoff_differential_bound();
        assert!(d > 1.0 && d < 5.0, "differential bound {d}");
        let range = cutoff_range_factor();
        assert!((0.5..1.0).contains(&range), "range factor {range}");
    }

    #[test]
    fn truncation_is_identity_inside_the_inner_ball()  {
        let lambda = test_lambda();
        let c = TruncatedCoefficients::new(preset(), 0.1, &lambda, 0.6).unwrap();
        // graded norm of u: weights |lambda|^{-0.6}; pick u well inside R/2
        let u = arr1(&[0.02, 0.01, -0.03, 0.02, 0.04]);
        let norm = c.graded_norm(u.view());
        assert!(norm < 0.05, "test point outside the inner ball: {norm}");
        let inner = preset();
        let v = arr1(&[0.5, -0.1, 0.2, 0.3, -0.2]);
        let w = arr1(&[0.2, 0.9, -0.5, 0.1, 0.6]);
        assert_eq!(c.drift(u.view()), inner.drift(u.view()));
        assert_eq!(
            c.drift_jacobian(u.view(), v.view()),
            inner.drift_jacobian(u.view(), v.view())
        );
        assert_eq!(
            c.apply_diffusion(u.view(), w.view()),
            inner.apply_diffusion(u.view(), w.view())
        );
        // far outside, everything is cut to the coefficient value at 0
        let far = arr1(&[50.0, 12.0, -30.0, 80.0, 44.0]);
        assert!(c.drift(far.view()).iter().all(|&x| x == 0.0));
        assert!(c
            .apply_diffusion(far.view(), w.view())
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn cutoff_radius_and_auto_scaling() {
        let r_small = cutoff_radius(0.4, 1.5, 0.03, 2.0, 0.03, 5.0);
        let r_large = cutoff_radius(0.4, 1.5, 0.03, 2.0, 0.03, 0.5);
        assert!(r_small < r_large);
        let blocks = [0.8, 1.9, 0.3, 4.2];
        let scaled = auto_scale_amplitudes(
            0.8, 0.8, 0.56, 0.79, 0.4, 1.5, 2.0, &blocks, 0.05, 40,
        )
        .unwrap();
        assert!(scaled.min_radius >= 0.05);
        assert_eq!(scaled.eps_f, 0.8 * 0.5f64.powi(scaled.halvings as i32));
        // already-admissible amplitudes are untouched
        let kept = auto_scale_amplitudes(
            1e-4, 1e-4, 0.56, 0.79, 0.4, 1.5, 2.0, &blocks, 0.05, 40,
        )
        .unwrap();
        assert_eq!(kept.halvings, 0);
        // an impossible target errors out instead of looping
        assert!(auto_scale_amplitudes(
            0.8, 0.8, 0.56, 0.79, 0.4, 1.5, 2.0, &blocks, 1e19, 8,
        )
        .is_err());
    }
}
