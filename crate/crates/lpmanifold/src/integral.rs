//! Pathwise integration against fractional noise.
//!
//! Two independent evaluation routes are provided for `int Z dw`:
//!
//! * [`young_integral`] - the compensated left-point sum
//!   `sum_j Z(t_j) (w(t_{j+1}) - w(t_j))`, which is the workhorse inside the
//!   solvers;
//! * [`fractional_integral`] - the fractional-calculus route through Weyl
//!   derivatives: `int Z dw = - int D^a_{s+} Z [r] * D_raw^{1-a}_{t-} w [r] dr`,
//!   discretized by product integration with exact power-kernel moments.
//!
//! The two routes share nothing but the path values, so their agreement is a
//! meaningful consistency check of the integration layer.
//!
//! Conventions: state paths are piecewise linear between grid nodes;
//! integrand paths `Z` are left steps (constant on `[t_j, t_{j+1})`). For a
//! left-step integrand both routes target the same left-point limit.

use ndarray::{Array1, Array2};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::quad::{beta_kernel_quadrature, cell_product, power_moments_left, power_moments_right};

/// Exponent triple for the fractional machinery: `alpha` is the Weyl order,
/// `beta` the state Hölder exponent, `beta_prime` the noise Hölder exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracParams {
    pub alpha: f64,
    pub beta: f64,
    pub beta_prime: f64,
}

impl FracParams {
    pub fn new(alpha: f64, beta: f64, beta_prime: f64) -> Result<Self> {
        let p = FracParams { alpha, beta, beta_prime };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParam(format!(
                "Weyl order alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) || !(self.beta_prime > 0.0 && self.beta_prime <= 1.0)
        {
            return Err(Error::InvalidParam(format!(
                "Hölder exponents must lie in (0, 1], got beta = {}, beta' = {}",
                self.beta, self.beta_prime
            )));
        }
        young_condition(self.beta, self.beta_prime)?;
        if self.alpha + self.beta_prime <= 1.0 {
            return Err(Error::InvalidParam(format!(
                "need alpha + beta' > 1 for the right derivative of the noise, \
                 got {} + {}",
                self.alpha, self.beta_prime
            )));
        }
        if self.alpha >= self.beta {
            return Err(Error::InvalidParam(format!(
                "need alpha < beta for the left derivative of the state, \
                 got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// `alpha' = alpha + beta' - 1`, the decay order of the right derivative
    /// near the upper limit.
    pub fn alpha_prime(&self) -> f64 {
        self.alpha + self.beta_prime - 1.0
    }
}

/// The Young pairing requires `beta + beta' > 1`.
pub fn young_condition(beta: f64, beta_prime: f64) -> Result<()> {
    let sum = beta + beta_prime;
    if sum <= 1.0 {
        return Err(Error::YoungCondition { sum });
    }
    Ok(())
}

/// Valid-bound constant for the right Weyl derivative of a Hölder path:
/// `|D_raw w [r]| <= holder_derivative_constant * ||w||_{beta'} (t - r)^{alpha + beta' - 1}`.
pub fn holder_derivative_constant(alpha: f64, beta_prime: f64) -> f64 {
    (1.0 + (1.0 - alpha) / (alpha + beta_prime - 1.0)) / gamma(alpha)
}

/// Left Weyl derivative of order `alpha` of a piecewise-linear grid path:
/// `D^a_{s+} f [r] = (1/Gamma(1-a)) [ f(r) (r-s)^{-a}
///                    + a int_s^r (f(r) - f(q)) (r-q)^{-1-a} dq ]`.
/// Exact (to roundoff) for the piecewise-linear interpolant: the singular
/// cell integrates in closed form and every other cell pairs a linear chord
/// with exact kernel moments.
pub fn weyl_left(values: &[f64], h: f64, s_idx: usize, r: f64, alpha: f64) -> f64 {
    let s = s_idx as f64 * h;
    debug_assert!(r > s && r <= (values.len() - 1) as f64 * h * (1.0 + 1e-12));
    let fr = eval_linear(values, h, r);
    let mut acc = fr * (r - s).powf(-alpha);
    // cell containing r (as its interior or right endpoint)
    let m = ((r / h).ceil() as usize - 1).clamp(s_idx, values.len() - 2);
    let tm = m as f64 * h;
    if r > tm {
        // f(r) - f(q) = slope * (r - q) on the singular cell
        let slope = (values[m + 1] - values[m]) / h;
        acc += alpha * slope * (r - tm).powf(1.0 - alpha) / (1.0 - alpha);
    }
    for k in s_idx..m {
        let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
        let (m0, m1, _) = power_moments_right(r, a, b, -1.0 - alpha);
        acc += alpha * cell_product(m0, m1, h, fr - values[k], fr - values[k + 1]);
    }
    acc / gamma(1.0 - alpha)
}

fn eval_linear(values: &[f64], h: f64, r: f64) -> f64 {
    let x = (r / h).clamp(0.0, (values.len() - 1) as f64);
    let j = (x.floor() as usize).min(values.len() - 2);
    let theta = x - j as f64;
    (1.0 - theta) * values[j] + theta * values[j + 1]
}

/// Raw right Weyl derivative of order `1 - alpha` of a piecewise-linear grid
/// path over `[r, t_K]` with `t_K = j_end * h`. For piecewise-linear `g` the
/// defining two-term expression collapses to the closed form
/// `D_raw g [r] = -(1/Gamma(1+a)) [ slope_{K-1} (t-r)^a
///                 - sum_{j} (slope_j - slope_{j-1}) (t_j - r)^a ]`
/// (sum over interior nodes `t_j > r`), which this evaluates exactly.
pub fn weyl_right_raw(values: &[f64], h: f64, r: f64, j_end: usize, alpha: f64) -> f64 {
    debug_assert!(j_end >= 1 && j_end < values.len());
    let t = j_end as f64 * h;
    debug_assert!(r >= 0.0 && r < t);
    let m = ((r / h).floor() as usize).min(j_end - 1);
    let slope = |k: usize| (values[k + 1] - values[k]) / h;
    let mut acc = slope(j_end - 1) * (t - r).powf(alpha);
    for j in m + 1..j_end {
        acc -= (slope(j) - slope(j - 1)) * (j as f64 * h - r).powf(alpha);
    }
    -acc / gamma(1.0 + alpha)
}

fn check_integrand_dims(z: &[Array2<f64>], omega: &NoisePath, j0: usize, j1: usize) -> Result<usize> {
    if j0 >= j1 || j1 > omega.n_steps() {
        return Err(Error::Horizon(format!(
            "integration range [{j0}, {j1}] outside the {}-step grid",
            omega.n_steps()
        )));
    }
    if z.len() < j1 {
        return Err(Error::GridMismatch(format!(
            "integrand has {} cells, range needs {}",
            z.len(),
            j1
        )));
    }
    let rows = z[j0].nrows();
    for zj in &z[j0..j1] {
        if zj.nrows() != rows || zj.ncols() != omega.n_modes() {
            return Err(Error::GridMismatch(format!(
                "integrand cells must all be {rows} x {}",
                omega.n_modes()
            )));
        }
    }
    Ok(rows)
}

/// Left-point Young sum `sum_{j=j0}^{j1-1} Z_j (w(t_{j+1}) - w(t_j))` for a
/// left-step operator path `Z` (cell `j` holds the matrix acting on the
/// noise increment of cell `j`).
pub fn young_integral(
    z: &[Array2<f64>],
    omega: &NoisePath,
    j0: usize,
    j1: usize,
) -> Result<Array1<f64>> {
    let rows = check_integrand_dims(z, omega, j0, j1)?;
    let mut acc = Array1::zeros(rows);
    for (j, zj) in z.iter().enumerate().take(j1).skip(j0) {
        let dw = &omega.value(j + 1) - &omega.value(j);
        acc += &zj.dot(&dw);
    }
    Ok(acc)
}

/// Subcells per grid cell in the product-integration of the `dr` integral;
/// graded toward the right edge where the cusp of the right derivative sits.
const SUBCELLS: usize = 12;

fn subcell_offsets() -> [f64; SUBCELLS + 1] {
    let mut xi = [0.0; SUBCELLS + 1];
    for (i, x) in xi.iter_mut().enumerate() {
        let u = (SUBCELLS - i) as f64 / SUBCELLS as f64;
        *x = 1.0 - u * u;
    }
    xi
}

/// `J(t_j) = (1/Gamma(1-a)) int_{t_j}^{t_{j1}} (r - t_j)^{-a} D_raw w_i [r] dr`
/// for every `j` in `[j0, j1)`: the fractional-calculus evaluation of
/// `-int 1_{[t_j, t)} dw_i`, since the left Weyl derivative of the indicator
/// is exactly `(r - t_j)^{-a} / Gamma(1-a)`.
///
/// The right derivative of the piecewise-linear noise is evaluated in closed
/// form on a subcell mesh; on each cell its leading cusp `c_k (t_{k+1}-r)^a`
/// is integrated against the kernel analytically (an incomplete-beta moment)
/// and only the smooth remainder is interpolated.
pub fn weyl_indicator_table(
    omega: &NoisePath,
    comp: usize,
    j0: usize,
    j1: usize,
    alpha: f64,
) -> Vec<f64> {
    let h = omega.h();
    let k_end = j1; // noise cells j0 .. j1-1, upper limit t = t_{j1}
    let xi = subcell_offsets();
    let g1a = gamma(1.0 - alpha);
    let g1pa = gamma(1.0 + alpha);

    // slopes and their jumps for the closed-form right derivative
    let vals = omega.values();
    let slope = |k: usize| (vals[(k + 1, comp)] - vals[(k, comp)]) / h;

    // universal powf tables (uniform grid): everything below is a pure
    // multiply-add assembly over these
    // p_tab[g'][i] = (g' + 1 - xi_i)^alpha, for the node distances to later cusps
    let p_tab: Vec<[f64; SUBCELLS + 1]> = (0..k_end.saturating_sub(j0))
        .map(|gp| {
            let mut row = [0.0; SUBCELLS + 1];
            for (i, x) in xi.iter().enumerate() {
                row[i] = (gp as f64 + 1.0 - x).powf(alpha);
            }
            row
        })
        .collect();
    // kernel moments of (r - t_j)^{-alpha} per (gap, subcell), unit-h coords
    let ma_tab: Vec<[(f64, f64); SUBCELLS]> = (0..k_end - j0)
        .map(|g| {
            let mut row = [(0.0, 0.0); SUBCELLS];
            for i in 0..SUBCELLS {
                let (m0, m1, _) =
                    power_moments_left(0.0, g as f64 + xi[i], g as f64 + xi[i + 1], -alpha);
                row[i] = (m0, m1);
            }
            row
        })
        .collect();
    // kernel moments of (t_{k+1} - r)^alpha per subcell, unit-h coords
    let mb_tab: [(f64, f64); SUBCELLS] = {
        let mut row = [(0.0, 0.0); SUBCELLS];
        for i in 0..SUBCELLS {
            let (m0, m1, _) = power_moments_right(1.0, xi[i], xi[i + 1], alpha);
            row[i] = (m0, m1);
        }
        row
    };
    // node values (g + xi_i)^{-alpha} of the left kernel, g >= 1
    let nu_tab: Vec<[f64; SUBCELLS + 1]> = (0..k_end - j0)
        .map(|g| {
            let mut row = [0.0; SUBCELLS + 1];
            if g >= 1 {
                for (i, x) in xi.iter().enumerate() {
                    row[i] = (g as f64 + x).powf(-alpha);
                }
            }
            row
        })
        .collect();

    // right derivative at the subcell nodes of every cell, closed form:
    // w_tab[k][i] = D_raw at r = (k + xi_i) h, and the cusp coefficient c_k
    // of its leading (t_{k+1} - r)^alpha term on cell k
    let h_alpha = h.powf(alpha);
    let mut w_tab = vec![[0.0; SUBCELLS + 1]; k_end - j0];
    let mut cusp = vec![0.0; k_end - j0];
    for k in j0..k_end {
        let row = &mut w_tab[k - j0];
        let last = slope(k_end - 1);
        for i in 0..=SUBCELLS {
            let mut acc = last * p_tab[k_end - 1 - k][i];
            for jp in k + 1..k_end {
                acc -= (slope(jp) - slope(jp - 1)) * p_tab[jp - 1 - k][i];
            }
            row[i] = -h_alpha * acc / g1pa;
        }
        cusp[k - j0] = if k + 1 < k_end {
            (slope(k + 1) - slope(k)) / g1pa
        } else {
            -slope(k_end - 1) / g1pa
        };
    }

    // assemble J(t_j): per cell, exact-moment product integration of the
    // cusp-subtracted derivative, plus the analytic cusp-kernel moment
    let beta_cusp = g1a * g1pa; // B(1-a, 1+a) * Gamma(2)
    let mut out = Vec::with_capacity(j1 - j0);
    for j in j0..j1 {
        let mut total = 0.0;
        for k in j..k_end {
            let g = k - j;
            let ck = cusp[k - j0];
            let wrow = &w_tab[k - j0];
            let prow = &p_tab[0];
            // term A: kernel (r - t_j)^{-alpha} x linear chords of the
            // cusp-subtracted derivative on the graded subcells
            let mut wa = wrow[0] - ck * h_alpha * prow[0];
            for i in 0..SUBCELLS {
                let wb = wrow[i + 1] - ck * h_alpha * prow[i + 1];
                let (m0u, m1u) = ma_tab[g][i];
                let width = (xi[i + 1] - xi[i]) * h;
                let m0 = m0u * h.powf(1.0 - alpha);
                let m1 = m1u * h.powf(2.0 - alpha);
                total += cell_product(m0, m1, width, wa, wb);
                wa = wb;
            }
            // term B: the cusp against the kernel
            if g == 0 {
                total += ck * beta_cusp * h;
            } else {
                let nrow = &nu_tab[g];
                for i in 0..SUBCELLS {
                    let (m0u, m1u) = mb_tab[i];
                    let width = (xi[i + 1] - xi[i]) * h;
                    let m0 = m0u * h.powf(1.0 + alpha);
                    let m1 = m1u * h.powf(2.0 + alpha);
                    let fa = nrow[i] * h.powf(-alpha);
                    let fb = nrow[i + 1] * h.powf(-alpha);
                    total += ck * cell_product(m0, m1, width, fa, fb);
                }
            }
        }
        out.push(total / g1a);
    }
    out
}

/// Fractional-calculus evaluation of `int_{t_{j0}}^{t_{j1}} Z dw` for a
/// left-step operator path. Writing `Z` as a sum of indicator jumps reduces
/// the integral to the indicator table:
/// `int Z dw = -sum_j (Z_j - Z_{j-1}) J(t_j)` with `Z_{j0-1} := 0`.
pub fn fractional_integral(
    z: &[Array2<f64>],
    omega: &NoisePath,
    j0: usize,
    j1: usize,
    alpha: f64,
) -> Result<Array1<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(format!(
            "Weyl order alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let rows = check_integrand_dims(z, omega, j0, j1)?;
    let mut acc = Array1::zeros(rows);
    for i in 0..omega.n_modes() {
        let jt = weyl_indicator_table(omega, i, j0, j1, alpha);
        for j in j0..j1 {
            let coeff = -jt[j - j0];
            for a in 0..rows {
                let jump = if j == j0 {
                    z[j][(a, i)]
                } else {
                    z[j][(a, i)] - z[j - 1][(a, i)]
                };
                acc[a] += coeff * jump;
            }
        }
    }
    Ok(acc)
}

/// `int_s^t (r-s)^a (t-r)^b dr` in closed form:
/// `Gamma(a+1) Gamma(b+1) / Gamma(a+b+2) * (t-s)^{a+b+1}`.
pub fn beta_increment(a: f64, b: f64, s: f64, t: f64) -> f64 {
    debug_assert!(a > -1.0 && b > -1.0 && t > s);
    (ln_gamma(a + 1.0) + ln_gamma(b + 1.0) - ln_gamma(a + b + 2.0)).exp()
        * (t - s).powf(a + b + 1.0)
}

/// `K1(rho) = sup_{0 < tau <= T} int_0^tau e^{-rho (tau - u)} u^a (tau - u)^b du`,
/// the weighted-norm replacement for the raw beta increment. The inner
/// integral reduces exactly to `tau^{a+b+1} int_0^1 e^{-rho tau (1-x)} x^a (1-x)^b dx`;
/// the supremum is taken over a 512-point grid with a parabolic refinement
/// around the best node.
pub fn k1(rho: f64, a: f64, b: f64, horizon: f64) -> f64 {
    debug_assert!(rho >= 0.0 && horizon > 0.0 && a > -1.0 && b > -1.0);
    let value = |tau: f64| {
        tau.powf(a + b + 1.0)
            * beta_kernel_quadrature(b, a, 0.0, 1.0, 48, 1.0, |x| (-rho * tau * (1.0 - x)).exp())
    };
    let grid = 512;
    let mut best = (1, value(horizon / grid as f64));
    for i in 2..=grid {
        let v = value(horizon * i as f64 / grid as f64);
        if v > best.1 {
            best = (i, v);
        }
    }
    let (i, mut sup) = best;
    if i > 1 && i < grid {
        // one parabolic step through the three best nodes
        let dt = horizon / grid as f64;
        let (vm, v0, vp) = (value((i - 1) as f64 * dt), sup, value((i + 1) as f64 * dt));
        let denom = vm - 2.0 * v0 + vp;
        if denom < 0.0 {
            let shift = 0.5 * (vm - vp) / denom;
            if shift.abs() <= 1.0 {
                sup = sup.max(value((i as f64 + shift) * dt));
            }
        }
    }
    sup
}

/// `K2(rho) = sup_{0 < tau <= T} int_0^tau e^{-rho (tau - u)} du
///          = (1 - e^{-rho T}) / rho`.
pub fn k2(rho: f64, horizon: f64) -> f64 {
    debug_assert!(rho >= 0.0 && horizon > 0.0);
    if rho.abs() < 1e-14 {
        horizon
    } else {
        -(-rho * horizon).exp_m1() / rho
    }
}
