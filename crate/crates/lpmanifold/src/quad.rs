//! Product integration for power-law kernels.
//!
//! Integrands of the form `(r - c)^p` with `p` possibly in `(-1, 0)` appear
//! throughout the fractional machinery. Naive sampling rules lose the mass of
//! the integrable singularity, so every cell is integrated against the exact
//! kernel moments and only the smooth co-factor is interpolated (linear chord
//! for the grid-path evaluators, parabola for the scalar kernel engines).

/// Exact moments of the kernel `(r - c)^p` over `[a, b]` with `c <= a < b`:
/// `(m0, m1, m2) = int_a^b (r-a)^k (r-c)^p dr` for `k = 0, 1, 2`.
/// `p > -1` is required when `c == a` (integrable singularity at the left
/// endpoint); any `p < -1` is fine when `c < a`.
pub fn power_moments_left(c: f64, a: f64, b: f64, p: f64) -> (f64, f64, f64) {
    debug_assert!(c <= a && a < b);
    debug_assert!(c < a || p > -1.0);
    let ua = a - c;
    let ub = b - c;
    let i1 = (ub.powf(p + 1.0) - ua.powf(p + 1.0)) / (p + 1.0);
    let i2 = (ub.powf(p + 2.0) - ua.powf(p + 2.0)) / (p + 2.0);
    let i3 = (ub.powf(p + 3.0) - ua.powf(p + 3.0)) / (p + 3.0);
    (i1, i2 - ua * i1, i3 - 2.0 * ua * i2 + ua * ua * i1)
}

/// Mirror image of [`power_moments_left`]: kernel `(c - r)^p` over `[a, b]`
/// with `b <= c`; `p > -1` required when `c == b`.
pub fn power_moments_right(c: f64, a: f64, b: f64, p: f64) -> (f64, f64, f64) {
    debug_assert!(b <= c && a < b);
    debug_assert!(b < c || p > -1.0);
    let ua = c - a;
    let ub = c - b;
    let i1 = (ua.powf(p + 1.0) - ub.powf(p + 1.0)) / (p + 1.0);
    let i2 = (ua.powf(p + 2.0) - ub.powf(p + 2.0)) / (p + 2.0);
    let i3 = (ua.powf(p + 3.0) - ub.powf(p + 3.0)) / (p + 3.0);
    (i1, ua * i1 - i2, ua * ua * i1 - 2.0 * ua * i2 + i3)
}

/// Linear-chord product rule for one cell: kernel moments `(m0, m1)` on
/// `[a, b]`, endpoint values `fa`, `fb` of the smooth factor.
#[inline]
pub fn cell_product(m0: f64, m1: f64, h: f64, fa: f64, fb: f64) -> f64 {
    fa * (m0 - m1 / h) + fb * (m1 / h)
}

/// Parabolic product rule for one cell: interpolates the smooth factor
/// through its values at `a`, the midpoint, and `b`, integrated against the
/// exact kernel moments. Reduces to Simpson's rule for the unit kernel.
#[inline]
pub fn cell_product3(m0: f64, m1: f64, m2: f64, h: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    let wa = (2.0 * m2 - 3.0 * h * m1 + h * h * m0) / (h * h);
    let wm = (4.0 * h * m1 - 4.0 * m2) / (h * h);
    let wb = (2.0 * m2 - h * m1) / (h * h);
    fa * wa + fm * wm + fb * wb
}

/// Mesh on `[a, b]` with `cells` cells graded toward `a` when
/// `toward_start`, else toward `b`: node `j` sits at relative position
/// `(j / cells)^grade` from the singular end.
pub fn graded_mesh(a: f64, b: f64, cells: usize, grade: f64, toward_start: bool) -> Vec<f64> {
    let n = cells.max(1);
    let mut nodes = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let s = (j as f64 / n as f64).powf(grade);
        let x = if toward_start {
            a + (b - a) * s
        } else {
            b - (b - a) * s
        };
        nodes.push(x);
    }
    if !toward_start {
        nodes.reverse();
    }
    nodes[0] = a;
    nodes[n] = b;
    nodes
}

/// `int_s^t (r - s)^{b_exp} (t - r)^{a_exp} f(r) dr` for a smooth factor `f`
/// and exponents `> -1` (either may be singular). The interval is split at
/// the midpoint; each half is product-integrated against the exact moments
/// of its singular kernel, with `(other kernel) * f` fitted by parabolas.
pub fn beta_kernel_quadrature<F: Fn(f64) -> f64>(
    a_exp: f64,
    b_exp: f64,
    s: f64,
    t: f64,
    cells_per_half: usize,
    grade: f64,
    f: F,
) -> f64 {
    debug_assert!(s < t);
    let mid = 0.5 * (s + t);
    let mut total = 0.0;

    // left half: kernel (r - s)^{b_exp}, smooth part (t - r)^{a_exp} f(r)
    let mesh = graded_mesh(s, mid, cells_per_half, grade, true);
    let g = |r: f64| (t - r).powf(a_exp) * f(r);
    let mut ga = g(mesh[0]);
    for w in mesh.windows(2) {
        let (a, b) = (w[0], w[1]);
        let gm = g(0.5 * (a + b));
        let gb = g(b);
        let (m0, m1, m2) = power_moments_left(s, a, b, b_exp);
        total += cell_product3(m0, m1, m2, b - a, ga, gm, gb);
        ga = gb;
    }

    // right half: kernel (t - r)^{a_exp}, smooth part (r - s)^{b_exp} f(r)
    let mesh = graded_mesh(mid, t, cells_per_half, grade, false);
    let g = |r: f64| (r - s).powf(b_exp) * f(r);
    let mut ga = g(mesh[0]);
    for w in mesh.windows(2) {
        let (a, b) = (w[0], w[1]);
        let gm = g(0.5 * (a + b));
        let gb = g(b);
        let (m0, m1, m2) = power_moments_right(t, a, b, a_exp);
        total += cell_product3(m0, m1, m2, b - a, ga, gm, gb);
        ga = gb;
    }
    total
}

/// Exponential cell weights for the drift convolution: with `z = lambda * h`,
/// `int_0^h e^{lambda (h - sigma)} [(1 - sigma/h) f_a + (sigma/h) f_b] dsigma
///  = h (phi1(z) - phi2(z)) f_a + h phi2(z) f_b`,
/// where `phi1(z) = (e^z - 1)/z` and `phi2(z) = (e^z - 1 - z)/z^2`.
/// Series fallbacks keep the weights accurate near `z = 0`.
pub fn exp_cell_weights(z: f64, h: f64) -> (f64, f64) {
    let (phi1, phi2) = if z.abs() < 1e-4 {
        (
            1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0,
            0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0,
        )
    } else {
        let em1 = z.exp_m1();
        (em1 / z, (em1 - z) / (z * z))
    };
    (h * (phi1 - phi2), h * phi2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::ln_gamma;

    fn beta_closed(a: f64, b: f64) -> f64 {
        (ln_gamma(a + 1.0) + ln_gamma(b + 1.0) - ln_gamma(a + b + 2.0)).exp()
    }

    #[test]
    fn moments_match_polynomial_cases() {
        // p = 0: plain powers of the cell width
        let (m0, m1, m2) = power_moments_left(0.0, 0.25, 0.75, 0.0);
        assert_relative_eq!(m0, 0.5, max_relative = 1e-15);
        assert_relative_eq!(m1, 0.125, max_relative = 1e-14);
        assert_relative_eq!(m2, 0.5f64.powi(3) / 3.0, max_relative = 1e-14);
        // p = 1, c = 0, [1, 2]
        let (m0, m1, m2) = power_moments_left(0.0, 1.0, 2.0, 1.0);
        assert_relative_eq!(m0, 1.5, max_relative = 1e-14);
        assert_relative_eq!(m1, 5.0 / 6.0, max_relative = 1e-14);
        // int (r-1)^2 r dr over [1,2] = 7/12
        assert_relative_eq!(m2, 7.0 / 12.0, max_relative = 1e-13);
        // singular case p = -1/2, c = a = 0, [0, 1]
        let (m0, m1, m2) = power_moments_left(0.0, 0.0, 1.0, -0.5);
        assert_relative_eq!(m0, 2.0, max_relative = 1e-14);
        assert_relative_eq!(m1, 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(m2, 2.0 / 5.0, max_relative = 1e-14);
        // right-kernel mirror: (1 - r)^{-1/2} on [0, 1]
        let (m0, m1, m2) = power_moments_right(1.0, 0.0, 1.0, -0.5);
        assert_relative_eq!(m0, 2.0, max_relative = 1e-14);
        assert_relative_eq!(m1, 4.0 / 3.0, max_relative = 1e-14);
        // int r^2 (1-r)^{-1/2} dr = 16/15
        assert_relative_eq!(m2, 16.0 / 15.0, max_relative = 1e-13);
    }

    #[test]
    fn parabolic_rule_is_simpson_for_unit_kernel() {
        let (m0, m1, m2) = power_moments_left(0.0, 2.0, 3.0, 0.0);
        // f(r) = r^2 on [2, 3]: exact 19/3 (Simpson exact on quadratics)
        let v = cell_product3(m0, m1, m2, 1.0, 4.0, 6.25, 9.0);
        assert_relative_eq!(v, 19.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn beta_quadrature_hits_closed_form() {
        for &(a, b) in &[
            (0.0, 0.0),
            (1.0, 0.0),
            (-0.4, -0.3),
            (-0.9, -0.9),
            (2.0, -0.85),
            (1.7, 1.3),
            (2.0, 2.0),
            (-0.5, 2.0),
        ] {
            let q = beta_kernel_quadrature(a, b, 0.0, 1.0, 256, 1.0, |_| 1.0);
            let exact = beta_closed(a, b);
            assert_relative_eq!(q, exact, max_relative = 1e-9);
            // scale covariance: interval [s, t] multiplies by (t-s)^{a+b+1}
            let (s, t) = (0.5, 2.25);
            let qs = beta_kernel_quadrature(a, b, s, t, 256, 1.0, |_| 1.0);
            assert_relative_eq!(qs, exact * (t - s).powf(a + b + 1.0), max_relative = 1e-9);
        }
    }

    #[test]
    fn beta_quadrature_with_smooth_weight() {
        // int_0^1 r^{-1/2} e^r dr, reference via fine Simpson on the
        // substitution r = u^2 (removes the singularity): int_0^1 2 e^{u^2} du.
        let n = 4000;
        let h = 1.0 / n as f64;
        let g = |u: f64| 2.0 * (u * u).exp();
        let mut reference = 0.0;
        for j in 0..n {
            let u = j as f64 * h;
            reference += h / 6.0 * (g(u) + 4.0 * g(u + 0.5 * h) + g(u + h));
        }
        let q = beta_kernel_quadrature(0.0, -0.5, 0.0, 1.0, 256, 1.0, |r| r.exp());
        assert_relative_eq!(q, reference, max_relative = 1e-9);
    }

    #[test]
    fn exp_weights_match_simpson_reference() {
        for &(lambda, h) in &[(-14.0, 0.25), (-1e-7, 0.5), (0.9, 1.0 / 64.0), (0.0, 0.125)] {
            let (wa, wb) = exp_cell_weights(lambda * h, h);
            // reference: fine Simpson for int_0^h e^{lambda (h - s)} phi(s) ds
            let simpson = |phi: &dyn Fn(f64) -> f64| {
                let n = 2000;
                let dh = h / n as f64;
                let g = |s: f64| (lambda * (h - s)).exp() * phi(s);
                let mut acc = 0.0;
                for j in 0..n {
                    let s = j as f64 * dh;
                    acc += dh / 6.0 * (g(s) + 4.0 * g(s + 0.5 * dh) + g(s + dh));
                }
                acc
            };
            let ref_a = simpson(&|s| 1.0 - s / h);
            let ref_b = simpson(&|s| s / h);
            assert_relative_eq!(wa, ref_a, max_relative = 1e-10);
            assert_relative_eq!(wb, ref_b, max_relative = 1e-10);
        }
    }

    #[test]
    fn graded_mesh_endpoints_and_monotonicity() {
        for toward in [true, false] {
            let mesh = graded_mesh(0.3, 1.7, 17, 2.5, toward);
            assert_eq!(mesh.len(), 18);
            assert_eq!(mesh[0], 0.3);
            assert_eq!(mesh[17], 1.7);
            for w in mesh.windows(2) {
                assert!(w[0] < w[1]);
            }
        }
    }
}
