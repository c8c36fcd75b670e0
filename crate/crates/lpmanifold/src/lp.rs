//! The discrete Lyapunov–Perron construction of the local stable manifold.
//!
//! States live on unit blocks: a candidate trajectory is a sequence
//! `U = (u_m)_{m<M}` of grid paths on `[0,1]` with matched endpoints, normed
//! by `|U|_kappa = sup_m e^{kappa m} |u_m|_{beta,-beta}`. The operator maps
//!
//! `J(U, xi)_m(t) = S^-(t+m) xi
//!                 + sum_{i<=m} S^-(t+m-i) (stable one-block convolutions)
//!                 + (current-block stable convolution on [0,t])
//!                 - (current-block unstable convolution on [t,1])
//!                 - sum_{i>=m+2} S^+(t+m-i) (unstable one-block convolutions)`
//!
//! and under the spectral-gap condition it contracts on the sequence space,
//! so the fixed point `Gamma(xi, w)` exists, is Lipschitz in `xi`, decays
//! like `e^{-kappa m}`, and its unstable head `m(xi, w) = Gamma^+(0)(0)`
//! graphs the manifold. Every convolution is computed once per block and
//! reused across `m` through the group property of the block semigroups,
//! so one operator application is `O(M n N)` plus the norm scans.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::coeffs::{cutoff_radius, Coefficients};
use crate::error::{Error, Result};
use crate::mild::{self, weighted_norm_of, MildParams};
use crate::noise::NoisePath;
use crate::quad::exp_cell_weights;
use crate::seeds::{self, roles};
use crate::spectral::{Block, SpectralModel};

// ---------------------------------------------------------------------------
// gap condition
// ---------------------------------------------------------------------------

/// The geometric-series bracket of the gap condition at exponent shift
/// `sigma`: `-1/(1 - e^{-(mu_check + sigma)}) + 1/(1 - e^{-(mu_hat + sigma)})`.
/// Both terms are positive when `0 < sigma < -mu_check`.
pub fn gap_bracket(mu_hat: f64, mu_check: f64, sigma: f64) -> f64 {
    -1.0 / (-(-(mu_check + sigma)).exp_m1()) + 1.0 / (-(-(mu_hat + sigma)).exp_m1())
}

/// Evaluates the gap value `K * bracket(mu_hat, mu_check, k_mult*kappa + gamma)`
/// and compares it against `1/2`. The multiplier and `gamma` slots serve the
/// smoothness ladder; plain existence uses `k_mult = 1, gamma = 0`.
pub fn check_gap(
    k_const: f64,
    kappa: f64,
    mu_hat: f64,
    mu_check: f64,
    k_mult: u32,
    gamma: f64,
) -> Result<(bool, f64)> {
    if !(k_const >= 0.0) || !k_const.is_finite() {
        return Err(Error::InvalidParam(format!("K = {k_const} must be finite and >= 0")));
    }
    if k_mult == 0 || !(gamma >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "need k_mult >= 1 and gamma >= 0, got {k_mult} and {gamma}"
        )));
    }
    let sigma = f64::from(k_mult) * kappa + gamma;
    let cap = (-mu_check).min(mu_hat);
    if !(kappa > 0.0 && sigma < cap) {
        return Err(Error::InvalidParam(format!(
            "gap exponent {sigma} outside the admissible range (0, {cap})"
        )));
    }
    let value = k_const * gap_bracket(mu_hat, mu_check, sigma);
    Ok((value <= 0.5, value))
}

/// Spectral-gap bookkeeping: the semigroup constant `K`, the decay rate
/// `kappa`, the gap exponents, and the smoothness margin `gamma0`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapParams {
    pub k_const: f64,
    pub kappa: f64,
    pub mu_hat: f64,
    pub mu_check: f64,
    pub gamma0: f64,
}

impl GapParams {
    pub fn new(k_const: f64, kappa: f64, mu_hat: f64, mu_check: f64, gamma0: f64) -> Result<Self> {
        if !(mu_check < 0.0 && mu_hat > 0.0) {
            return Err(Error::InvalidParam(format!(
                "need mu_check < 0 < mu_hat, got {mu_check} and {mu_hat}"
            )));
        }
        if !(gamma0 >= 0.0) {
            return Err(Error::InvalidParam(format!("gamma0 = {gamma0} must be >= 0")));
        }
        if !(kappa > 0.0 && kappa + 2.0 * gamma0 < (-mu_check).min(mu_hat)) {
            return Err(Error::InvalidParam(format!(
                "kappa = {kappa} with margin 2*gamma0 = {} must stay inside (0, {})",
                2.0 * gamma0,
                (-mu_check).min(mu_hat)
            )));
        }
        if !(k_const > 0.0) {
            return Err(Error::InvalidParam(format!("K = {k_const} must be > 0")));
        }
        Ok(GapParams { k_const, kappa, mu_hat, mu_check, gamma0 })
    }

    /// Largest safe `K`: 90% of the value that puts the gap bracket at `1/2`,
    /// taking the worst bracket over the smoothness shifts
    /// `gamma in {0, gamma0, 2 gamma0}`.
    pub fn auto(kappa: f64, mu_hat: f64, mu_check: f64, gamma0: f64) -> Result<Self> {
        let probe = GapParams::new(1.0, kappa, mu_hat, mu_check, gamma0)?;
        let worst = [0.0, gamma0, 2.0 * gamma0]
            .iter()
            .map(|&g| gap_bracket(mu_hat, mu_check, kappa + g))
            .fold(f64::MIN, f64::max);
        GapParams::new(0.9 * 0.5 / worst, kappa, mu_hat, mu_check, probe.gamma0)
    }

    /// Gap value at shift `kappa + gamma`.
    pub fn value(&self, gamma: f64) -> f64 {
        self.k_const * gap_bracket(self.mu_hat, self.mu_check, self.kappa + gamma)
    }

    pub fn holds(&self) -> bool {
        [0.0, self.gamma0, 2.0 * self.gamma0]
            .iter()
            .all(|&g| self.value(g) <= 0.5)
    }

    /// Remainder bound of the truncated unstable tail at block `m`:
    /// `c_s * K * e^{(mu_hat + kappa)(m - tail_cut)} * |U|_kappa`.
    pub fn tail_bound(&self, c_s: f64, norm_u: f64, m: usize, tail_cut: usize) -> f64 {
        c_s * self.k_const
            * ((self.mu_hat + self.kappa) * (m as f64 - tail_cut as f64)).exp()
            * norm_u
    }
}

// ---------------------------------------------------------------------------
// sequence space
// ---------------------------------------------------------------------------

/// A finite sequence of unit-block grid paths with bitwise-matched endpoints:
/// block `m` holds nodes `t = k/n` for `k = 0..=n`, and
/// `u_m(1) == u_{m+1}(0)` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceU {
    blocks: Vec<Array2<f64>>,
    n_per_unit: usize,
}

impl SequenceU {
    pub fn new(blocks: Vec<Array2<f64>>, n_per_unit: usize) -> Result<Self> {
        if blocks.is_empty() || n_per_unit == 0 {
            return Err(Error::InvalidParam("empty block sequence".into()));
        }
        let n_modes = blocks[0].ncols();
        for (m, b) in blocks.iter().enumerate() {
            if b.nrows() != n_per_unit + 1 || b.ncols() != n_modes {
                return Err(Error::GridMismatch(format!(
                    "block {m} is {}x{}, want {}x{n_modes}",
                    b.nrows(),
                    b.ncols(),
                    n_per_unit + 1
                )));
            }
        }
        for m in 0..blocks.len() - 1 {
            let tail = blocks[m].row(n_per_unit);
            let head = blocks[m + 1].row(0);
            for (i, (&a, &b)) in tail.iter().zip(head).enumerate() {
                if a != b {
                    return Err(Error::EndpointMismatch {
                        block: m,
                        next: i,
                        delta: b - a,
                    });
                }
            }
        }
        Ok(SequenceU { blocks, n_per_unit })
    }

    pub fn zero(m_blocks: usize, n_per_unit: usize, n_modes: usize) -> Self {
        SequenceU {
            blocks: vec![Array2::zeros((n_per_unit + 1, n_modes)); m_blocks],
            n_per_unit,
        }
    }

    /// Slice one long grid path (rows `0..=M*n`) into matched blocks.
    pub fn from_flat(flat: &Array2<f64>, n_per_unit: usize) -> Result<Self> {
        let steps = flat.nrows().saturating_sub(1);
        if n_per_unit == 0 || steps == 0 || !steps.is_multiple_of(n_per_unit) {
            return Err(Error::GridMismatch(format!(
                "{} rows do not tile into unit blocks of {n_per_unit} cells",
                flat.nrows()
            )));
        }
        let blocks = (0..steps / n_per_unit)
            .map(|m| {
                flat.slice(s![m * n_per_unit..=(m + 1) * n_per_unit, ..])
                    .to_owned()
            })
            .collect();
        SequenceU::new(blocks, n_per_unit)
    }

    /// Concatenate back into one long grid path.
    pub fn flatten(&self) -> Array2<f64> {
        let n = self.n_per_unit;
        let mut flat = Array2::zeros((self.n_blocks() * n + 1, self.n_modes()));
        flat.row_mut(0).assign(&self.blocks[0].row(0));
        for (m, b) in self.blocks.iter().enumerate() {
            for k in 1..=n {
                flat.row_mut(m * n + k).assign(&b.row(k));
            }
        }
        flat
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_per_unit(&self) -> usize {
        self.n_per_unit
    }

    pub fn n_modes(&self) -> usize {
        self.blocks[0].ncols()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_per_unit as f64
    }

    pub fn block(&self, m: usize) -> &Array2<f64> {
        &self.blocks[m]
    }

    pub fn node(&self, m: usize, k: usize) -> ArrayView1<'_, f64> {
        self.blocks[m].row(k)
    }

    /// `|u_m|_{beta,-beta}`: plain sup plus the graded Hölder seminorm of
    /// one block.
    pub fn block_norm(&self, m: usize, weights: &[f64], beta: f64) -> f64 {
        weighted_norm_of(&self.blocks[m], self.h(), weights, 0.0, beta)
    }

    /// `sup_m e^{kappa m} |u_m|_{beta,-beta}`.
    pub fn hkappa_norm(&self, kappa: f64, weights: &[f64], beta: f64) -> f64 {
        (0..self.n_blocks())
            .map(|m| (kappa * m as f64).exp() * self.block_norm(m, weights, beta))
            .fold(0.0, f64::max)
    }
}

/// `|U - V|_kappa` without materializing a difference sequence invariant.
pub fn hkappa_distance(
    a: &SequenceU,
    b: &SequenceU,
    kappa: f64,
    weights: &[f64],
    beta: f64,
) -> Result<f64> {
    if a.n_blocks() != b.n_blocks()
        || a.n_per_unit != b.n_per_unit
        || a.n_modes() != b.n_modes()
    {
        return Err(Error::GridMismatch(format!(
            "sequences of shape {}x{}x{} vs {}x{}x{}",
            a.n_blocks(),
            a.n_per_unit,
            a.n_modes(),
            b.n_blocks(),
            b.n_per_unit,
            b.n_modes()
        )));
    }
    Ok((0..a.n_blocks())
        .map(|m| {
            let diff = &a.blocks[m] - &b.blocks[m];
            (kappa * m as f64).exp() * weighted_norm_of(&diff, a.h(), weights, 0.0, beta)
        })
        .fold(0.0, f64::max))
}

fn add_sequences(a: &SequenceU, b: &SequenceU) -> Result<SequenceU> {
    if a.n_blocks() != b.n_blocks() || a.n_per_unit != b.n_per_unit {
        return Err(Error::GridMismatch("sequence shapes differ".into()));
    }
    // identical endpoints sum to identical endpoints bitwise
    let blocks = a
        .blocks
        .iter()
        .zip(&b.blocks)
        .map(|(x, y)| x + y)
        .collect();
    SequenceU::new(blocks, a.n_per_unit)
}

// ---------------------------------------------------------------------------
// the operator
// ---------------------------------------------------------------------------

/// Knobs of one Lyapunov–Perron solve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LpParams {
    /// grading exponent of the state norm
    pub beta: f64,
    pub gap: GapParams,
    /// keep unstable one-block convolutions of blocks `< tail_cut`
    pub tail_cut: usize,
    /// stop once the `H_kappa` distance of consecutive iterates drops below
    pub tol: f64,
    pub max_iter: usize,
}

/// One operator application plus the per-block remainder bounds of the
/// truncated unstable tail.
#[derive(Debug, Clone)]
pub struct LpApplied {
    pub sequence: SequenceU,
    pub tail_bounds: Vec<f64>,
}

fn require_stable_datum(model: &SpectralModel, xi: ArrayView1<f64>) -> Result<()> {
    if xi.len() != model.n_modes() {
        return Err(Error::GridMismatch(format!(
            "datum of length {} for a {}-mode model",
            xi.len(),
            model.n_modes()
        )));
    }
    if model.block_range(Block::Plus).any(|i| xi[i] != 0.0) {
        return Err(Error::InvalidParam(
            "datum must lie in the stable block (unstable components exactly zero)".into(),
        ));
    }
    Ok(())
}

/// Per-block integrand tables: `f_vals[(k, i)] = F(u(t_k))_i` on all nodes,
/// `g_dw[(k, i)] = (G(u(t_k)) dw_k)_i` on all cells.
type BlockIntegrands = (Array2<f64>, Array2<f64>);

fn nonlinear_integrands(
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    u: &SequenceU,
) -> Vec<BlockIntegrands> {
    let n = u.n_per_unit;
    let n_modes = u.n_modes();
    (0..u.n_blocks())
        .map(|m| {
            let mut f_vals = Array2::zeros((n + 1, n_modes));
            let mut g_dw = Array2::zeros((n, n_modes));
            for k in 0..=n {
                f_vals.row_mut(k).assign(&coeffs.drift(u.node(m, k)));
                if k < n {
                    let j = m * n + k;
                    let dw = &omega.value(j + 1) - &omega.value(j);
                    g_dw
                        .row_mut(k)
                        .assign(&coeffs.apply_diffusion(u.node(m, k), dw.view()));
                }
            }
            (f_vals, g_dw)
        })
        .collect()
}

fn linearized_integrands(
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    base: &SequenceU,
    v: &SequenceU,
) -> Vec<BlockIntegrands> {
    let n = base.n_per_unit;
    let n_modes = base.n_modes();
    (0..base.n_blocks())
        .map(|m| {
            let mut f_vals = Array2::zeros((n + 1, n_modes));
            let mut g_dw = Array2::zeros((n, n_modes));
            for k in 0..=n {
                f_vals
                    .row_mut(k)
                    .assign(&coeffs.drift_jacobian(base.node(m, k), v.node(m, k)));
                if k < n {
                    let j = m * n + k;
                    let dw = &omega.value(j + 1) - &omega.value(j);
                    g_dw.row_mut(k).assign(&coeffs.diffusion_jacobian(
                        base.node(m, k),
                        v.node(m, k),
                        dw.view(),
                    ));
                }
            }
            (f_vals, g_dw)
        })
        .collect()
}

/// Assemble the operator output from per-block integrand tables. All the
/// `i`-sums collapse into one forward (stable) and one backward (unstable)
/// endpoint recursion; the remainder of the unstable tail past `tail_cut`
/// is reported as the standard geometric bound scaled by `norm_u`.
fn lp_core(
    model: &SpectralModel,
    omega: &NoisePath,
    xi: ArrayView1<f64>,
    integrands: &[BlockIntegrands],
    norm_u: f64,
    params: &LpParams,
) -> Result<LpApplied> {
    let n_modes = model.n_modes();
    let n = omega.n_per_unit();
    let h = omega.h();
    let m_blocks = integrands.len();
    require_stable_datum(model, xi)?;
    if omega.units() < m_blocks {
        return Err(Error::Horizon(format!(
            "{m_blocks} blocks requested from a {}-unit driver",
            omega.units()
        )));
    }
    let cut = params.tail_cut;
    if cut == 0 || cut > m_blocks {
        return Err(Error::InvalidParam(format!(
            "tail_cut = {cut} outside 1..={m_blocks}"
        )));
    }
    let lambda = model.lambda();
    let plus = model.block_range(Block::Plus);
    let minus = model.block_range(Block::Minus);

    // forward one-block convolutions and their endpoints
    let sg = model.semigroup_factors(h);
    let drift_w: Vec<(f64, f64)> = lambda.iter().map(|&l| exp_cell_weights(l * h, h)).collect();
    let mut conv: Vec<Array2<f64>> = Vec::with_capacity(m_blocks);
    for (f_vals, g_dw) in integrands {
        let mut v = Array2::zeros((n + 1, n_modes));
        for k in 0..n {
            for i in 0..n_modes {
                let (wa, wb) = drift_w[i];
                v[(k + 1, i)] = sg[i] * (v[(k, i)] + g_dw[(k, i)])
                    + wa * f_vals[(k, i)]
                    + wb * f_vals[(k + 1, i)];
            }
        }
        conv.push(v);
    }
    let endpoint = |m: usize| conv[m].row(n);

    // stable prefix a_m = S^-(m) xi + sum_{j<m} S^-(m-1-j) E_j^-
    let s_one: Vec<f64> = lambda.iter().map(|&l| l.exp()).collect();
    let mut prefix = Array2::zeros((m_blocks, n_modes));
    let mut acc = xi.to_owned();
    for m in 0..m_blocks {
        prefix.row_mut(m).assign(&acc);
        for i in minus.clone() {
            acc[i] = s_one[i] * acc[i] + endpoint(m)[i];
        }
    }

    // unstable suffix q_m = sum_{j in m+1..cut} S^+(m-j-1) E_j^+
    let mut suffix = Array2::<f64>::zeros((m_blocks, n_modes));
    for m in (0..cut.saturating_sub(1)).rev() {
        for i in plus.clone() {
            suffix[(m, i)] = (-2.0 * lambda[i]).exp() * endpoint(m + 1)[i]
                + (-lambda[i]).exp() * suffix[(m + 1, i)];
        }
    }

    // node-time semigroup tables, shared by every block
    let mut exp_t = Array2::zeros((n + 1, n_modes));
    for k in 0..=n {
        let t = k as f64 * h;
        for i in 0..n_modes {
            exp_t[(k, i)] = (lambda[i] * t).exp();
        }
    }
    let mut exp_back = Array2::zeros((n + 1, n_modes));
    for k in 0..=n {
        let t = k as f64 * h;
        for i in plus.clone() {
            exp_back[(k, i)] = (lambda[i] * (t - 1.0)).exp();
        }
    }

    let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(m_blocks);
    for m in 0..m_blocks {
        let mut out = Array2::zeros((n + 1, n_modes));
        for k in 0..=n {
            for i in minus.clone() {
                out[(k, i)] = exp_t[(k, i)] * prefix[(m, i)] + conv[m][(k, i)];
            }
            for i in plus.clone() {
                out[(k, i)] = conv[m][(k, i)]
                    - exp_back[(k, i)] * endpoint(m)[i]
                    - exp_t[(k, i)] * suffix[(m, i)];
            }
        }
        blocks.push(out);
    }
    // the group property makes consecutive endpoints agree analytically;
    // stitch them bitwise and keep a guard against assembly bugs
    for m in 0..m_blocks.saturating_sub(1) {
        let head = blocks[m + 1].row(0).to_owned();
        #[cfg(debug_assertions)]
        {
            let tail = blocks[m].row(n);
            for i in 0..n_modes {
                let scale = 1.0 + tail[i].abs().max(head[i].abs());
                debug_assert!(
                    (tail[i] - head[i]).abs() <= 1e-9 * scale,
                    "endpoint drift {} at block {m}, mode {i}",
                    tail[i] - head[i]
                );
            }
        }
        blocks[m].row_mut(n).assign(&head);
    }

    let tail_bounds = (0..m_blocks)
        .map(|m| params.gap.tail_bound(model.c_s(), norm_u, m, cut))
        .collect();
    Ok(LpApplied {
        sequence: SequenceU::new(blocks, n)?,
        tail_bounds,
    })
}

/// One application of the Lyapunov–Perron operator `J(U, xi)`.
pub fn lp_apply(
    model: &SpectralModel,
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    xi: ArrayView1<f64>,
    u: &SequenceU,
    params: &LpParams,
) -> Result<LpApplied> {
    if coeffs.n_modes() != model.n_modes()
        || omega.n_modes() != model.n_modes()
        || u.n_modes() != model.n_modes()
        || u.n_per_unit() != omega.n_per_unit()
    {
        return Err(Error::GridMismatch(
            "model, coefficients, driver, and sequence must share modes and grid".into(),
        ));
    }
    let weights = model.weights(-params.beta).to_vec();
    let norm_u = u.hkappa_norm(params.gap.kappa, &weights, params.beta);
    let integrands = nonlinear_integrands(coeffs, omega, u);
    lp_core(model, omega, xi, &integrands, norm_u, params)
}

/// The linearization of the operator along a base sequence: same block
/// convolutions with `F, G` replaced by their directional derivatives at
/// `base` in direction `v`, and no datum term.
pub fn lp_linearized_apply(
    model: &SpectralModel,
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    base: &SequenceU,
    v: &SequenceU,
    params: &LpParams,
) -> Result<LpApplied> {
    if base.n_blocks() != v.n_blocks()
        || base.n_per_unit() != v.n_per_unit()
        || base.n_modes() != v.n_modes()
    {
        return Err(Error::GridMismatch("base and direction shapes differ".into()));
    }
    let weights = model.weights(-params.beta).to_vec();
    let norm_v = v.hkappa_norm(params.gap.kappa, &weights, params.beta);
    let integrands = linearized_integrands(coeffs, omega, base, v);
    let zero = Array1::zeros(model.n_modes());
    lp_core(model, omega, zero.view(), &integrands, norm_v, params)
}

// ---------------------------------------------------------------------------
// fixed point
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct LpReport {
    pub iterations: usize,
    pub last_update: f64,
    /// worst consecutive-update ratio after the first step
    pub observed_factor: f64,
    pub tail_bounds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ManifoldSolution {
    pub gamma: SequenceU,
    /// `m(xi, w) = Gamma^+(0)(0)`, embedded in the full mode vector
    pub m_val: Array1<f64>,
    pub report: LpReport,
}

fn iterate_to_fixed_point(
    mut apply: impl FnMut(&SequenceU) -> Result<LpApplied>,
    start: SequenceU,
    kappa: f64,
    weights: &[f64],
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(SequenceU, LpReport)> {
    let mut u = start;
    let mut prev_update = f64::INFINITY;
    let mut observed_factor: f64 = 0.0;
    for iter in 1..=max_iter {
        let next = apply(&u)?;
        let update = hkappa_distance(&next.sequence, &u, kappa, weights, beta)?;
        if !update.is_finite() {
            return Err(Error::NoContraction { factor: update, iteration: iter });
        }
        if prev_update.is_finite() && prev_update > 0.0 {
            let ratio = update / prev_update;
            observed_factor = observed_factor.max(ratio);
            if ratio > 0.95 && update > tol && iter >= 4 {
                return Err(Error::NoContraction { factor: ratio, iteration: iter });
            }
        }
        u = next.sequence;
        if update <= tol {
            return Ok((
                u,
                LpReport {
                    iterations: iter,
                    last_update: update,
                    observed_factor,
                    tail_bounds: next.tail_bounds,
                },
            ));
        }
        prev_update = update;
    }
    Err(Error::MaxIter { max_iter, last_update: prev_update, factor: observed_factor })
}

/// Banach iteration of `J(., xi)` from the zero sequence; returns the fixed
/// point, the graph value `m(xi, w)`, and the iteration diagnostics.
pub fn solve_manifold(
    model: &SpectralModel,
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    xi: ArrayView1<f64>,
    m_blocks: usize,
    params: &LpParams,
) -> Result<ManifoldSolution> {
    require_stable_datum(model, xi)?;
    let weights = model.weights(-params.beta).to_vec();
    let start = SequenceU::zero(m_blocks, omega.n_per_unit(), model.n_modes());
    let (gamma, report) = iterate_to_fixed_point(
        |u| lp_apply(model, coeffs, omega, xi, u, params),
        start,
        params.gap.kappa,
        &weights,
        params.beta,
        params.tol,
        params.max_iter,
    )?;
    let m_val = model.project(&gamma.node(0, 0).to_owned(), Block::Plus);
    Ok(ManifoldSolution { gamma, m_val, report })
}

/// Blockwise mild-equation residual of a sequence: each block must be a
/// fixed point of the one-block mild map with its own left endpoint as
/// datum. An independent cross-check of the operator algebra against the
/// forward solver.
pub fn mild_residual(
    model: &SpectralModel,
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    gamma: &SequenceU,
    beta: f64,
) -> Result<f64> {
    let n = gamma.n_per_unit();
    let weights = model.weights(-beta).to_vec();
    let mut worst: f64 = 0.0;
    for m in 0..gamma.n_blocks() {
        let xi = gamma.node(m, 0).to_owned();
        let mapped = mild::picard_map(model, coeffs, omega, m * n, n, xi.view(), gamma.block(m))?;
        let diff = &mapped - gamma.block(m);
        worst = worst.max(weighted_norm_of(&diff, gamma.h(), &weights, 0.0, beta));
    }
    Ok(worst)
}

/// Dynamical consistency of the fixed point under the driver shift:
/// `Gamma(xi, w)(m+1, .)` must agree with `Gamma(u^-(1), theta_1 w)(m, .)`.
/// Returns, per overlapping block, the worst node distance between the two
/// solves and the matching truncation allowance (the sum of the two reported
/// tail bounds, beyond which no agreement is promised).
pub fn shift_identity_profile(
    model: &SpectralModel,
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    sol: &ManifoldSolution,
    params: &LpParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m_blocks = sol.gamma.n_blocks();
    if m_blocks < 2 {
        return Err(Error::Horizon("shift identity needs at least two blocks".into()));
    }
    let shifted = omega.shift_units(1)?;
    let xi1 = model.project(&sol.gamma.node(1, 0).to_owned(), Block::Minus);
    let reduced = LpParams {
        tail_cut: params.tail_cut.min(m_blocks - 1),
        ..*params
    };
    let resolved = solve_manifold(model, coeffs, &shifted, xi1.view(), m_blocks - 1, &reduced)?;
    let mut residuals = Vec::with_capacity(m_blocks - 1);
    let mut allowances = Vec::with_capacity(m_blocks - 1);
    for m in 0..m_blocks - 1 {
        let mut worst: f64 = 0.0;
        for k in 0..=sol.gamma.n_per_unit() {
            let d2 = sol
                .gamma
                .node(m + 1, k)
                .iter()
                .zip(resolved.gamma.node(m, k))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>();
            worst = worst.max(d2.sqrt());
        }
        residuals.push(worst);
        allowances.push(sol.report.tail_bounds[m + 1] + resolved.report.tail_bounds[m]);
    }
    Ok((residuals, allowances))
}

/// The worst node distance of [`shift_identity_profile`] over all blocks.
pub fn shift_identity_residual(
    model: &SpectralModel,
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    sol: &ManifoldSolution,
    params: &LpParams,
) -> Result<f64> {
    let (residuals, _) = shift_identity_profile(model, coeffs, omega, sol, params)?;
    Ok(residuals.into_iter().fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// tempered radii
// ---------------------------------------------------------------------------

/// Constants entering the pathwise radius equation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RadiusBudget {
    pub k_scale: f64,
    pub c_s: f64,
    pub c_f: f64,
    pub c_ab: f64,
    pub c_g: f64,
    /// manifold Lipschitz constant, `2 c_s` from the fixed-point estimate
    pub l_gamma: f64,
}

/// Per-shift admissible radii and their discounted infima.
#[derive(Debug, Clone, Serialize)]
pub struct TemperedRadii {
    /// `r_hat[i] = R(theta_i w) / (2 L_Gamma)`
    pub r_hat: Vec<f64>,
    /// `(1/L_Gamma) min_i e^{i kappa} r_hat[i]`
    pub rho_hat: f64,
    /// inner infimum over grid-aligned intermediate shifts `s in [0, 1]`
    pub r_bar: Vec<f64>,
    pub rho_bar: f64,
}

/// Admissible manifold radii along the shifted driver, from the radius
/// equation evaluated at each block seminorm.
pub fn tempered_radii(
    omega: &NoisePath,
    beta_prime: f64,
    kappa: f64,
    horizon: usize,
    budget: &RadiusBudget,
) -> Result<TemperedRadii> {
    if horizon == 0 || horizon + 1 > omega.units() {
        return Err(Error::Horizon(format!(
            "tempered radii over {horizon} shifts need {} whole blocks, driver has {}",
            horizon + 1,
            omega.units()
        )));
    }
    let n = omega.n_per_unit();
    let radius_of = |seminorm: f64| {
        cutoff_radius(
            budget.k_scale,
            budget.c_s,
            budget.c_f,
            budget.c_ab,
            budget.c_g,
            seminorm,
        ) / (2.0 * budget.l_gamma)
    };
    let mut r_hat = Vec::with_capacity(horizon);
    let mut r_bar = Vec::with_capacity(horizon);
    for i in 0..horizon {
        r_hat.push(radius_of(omega.block_seminorm(i, beta_prime)?));
        let mut inner = f64::INFINITY;
        for j in 0..=n {
            let j0 = i * n + j;
            inner = inner.min(radius_of(omega.seminorm_on_steps(j0, j0 + n, beta_prime)));
        }
        r_bar.push(inner);
    }
    let discounted_min = |r: &[f64]| {
        r.iter()
            .enumerate()
            .map(|(i, &v)| (kappa * i as f64).exp() * v)
            .fold(f64::INFINITY, f64::min)
            / budget.l_gamma
    };
    Ok(TemperedRadii {
        rho_hat: discounted_min(&r_hat),
        rho_bar: discounted_min(&r_bar),
        r_hat,
        r_bar,
    })
}

// ---------------------------------------------------------------------------
// verification
// ---------------------------------------------------------------------------

/// Least-squares slope of `ln(values[m])` against `m` over `lo..=hi`.
pub fn fit_log_slope(values: &[f64], lo: usize, hi: usize) -> f64 {
    assert!(lo < hi && hi < values.len(), "degenerate fit window");
    let count = (hi - lo + 1) as f64;
    let ys: Vec<f64> = values[lo..=hi]
        .iter()
        .map(|&v| v.max(1e-300).ln())
        .collect();
    let xbar = (lo + hi) as f64 / 2.0;
    let ybar = ys.iter().sum::<f64>() / count;
    let mut num = 0.0;
    let mut den = 0.0;
    for (off, y) in ys.iter().enumerate() {
        let dx = (lo + off) as f64 - xbar;
        num += dx * (y - ybar);
        den += dx * dx;
    }
    num / den
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VerifyParams {
    /// blocks per manifold solve and per forward integration
    pub m_blocks: usize,
    /// invariance checks at shifts `1..=t_verify`
    pub t_verify: usize,
    /// size of the unstable off-manifold perturbation
    pub control_delta: f64,
    /// accepted slack above `-kappa` in the fitted decay exponent
    pub decay_slack: f64,
    /// base tolerance of the invariance residual, before the tail bound
    pub invariance_tol: f64,
    pub lp: LpParams,
    pub mild: MildParams,
}

#[derive(Debug, Clone, Serialize)]
pub struct XiVerification {
    pub xi_norm: f64,
    pub decay_rate: f64,
    pub decay_threshold: f64,
    pub decay_pass: bool,
    pub invariance_residuals: Vec<f64>,
    pub invariance_thresholds: Vec<f64>,
    pub invariance_pass: bool,
    pub control_plus_rate: f64,
    pub control_total_rate: f64,
    pub control_pass: bool,
}

impl XiVerification {
    pub fn pass(&self) -> bool {
        self.decay_pass && self.invariance_pass && self.control_pass
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub kappa: f64,
    pub per_xi: Vec<XiVerification>,
    pub all_pass: bool,
}

fn fit_window(m_blocks: usize) -> (usize, usize) {
    if m_blocks >= 5 {
        (2, m_blocks - 2)
    } else {
        (0, m_blocks - 1)
    }
}

/// The stable-manifold test battery. For each datum: start on the graph and
/// confirm (a) exponential decay of the forward orbit at rate `-kappa` or
/// better, (b) invariance — the orbit at integer times lies on the graph of
/// the shifted driver, and (c) that an unstable perturbation of the same
/// starting point does not share the decay.
pub fn verify_stable_manifold(
    model: &SpectralModel,
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    xi_grid: &[Array1<f64>],
    params: &VerifyParams,
) -> Result<VerifyReport> {
    let m_blocks = params.m_blocks;
    if omega.units() < m_blocks + params.t_verify {
        return Err(Error::Horizon(format!(
            "verification wants {} blocks, driver has {}",
            m_blocks + params.t_verify,
            omega.units()
        )));
    }
    let n = omega.n_per_unit();
    let weights = model.weights(-params.lp.beta);
    let wslice = weights.to_vec();
    let kappa = params.lp.gap.kappa;
    let (lo, hi) = fit_window(m_blocks);
    let plain = |x: ArrayView1<f64>| -> f64 { x.iter().map(|&v| v * v).sum::<f64>().sqrt() };

    let block_norms = |path: &mild::StatePath| -> Vec<f64> {
        (0..m_blocks)
            .map(|m| {
                let b = path.values.slice(s![m * n..=(m + 1) * n, ..]).to_owned();
                weighted_norm_of(&b, path.h(), &wslice, 0.0, params.lp.beta)
            })
            .collect()
    };

    let mut per_xi = Vec::with_capacity(xi_grid.len());
    for xi in xi_grid {
        let sol = solve_manifold(model, coeffs, omega, xi.view(), m_blocks, &params.lp)?;
        let x0 = xi + &sol.m_val;
        let (path, _) =
            mild::solve_forward(model, coeffs, omega, x0.view(), m_blocks, &params.mild)?;

        let norms = block_norms(&path);
        let decay_rate = fit_log_slope(&norms, lo, hi);
        let decay_threshold = -kappa + params.decay_slack;
        let decay_pass = decay_rate <= decay_threshold;

        let mut invariance_residuals = Vec::with_capacity(params.t_verify);
        let mut invariance_thresholds = Vec::with_capacity(params.t_verify);
        for m in 1..=params.t_verify {
            let shifted = omega.shift_units(m)?;
            let phi = path.values.row((m.min(m_blocks)) * n).to_owned();
            let xi_m = model.project(&phi, Block::Minus);
            let sol_m =
                solve_manifold(model, coeffs, &shifted, xi_m.view(), m_blocks, &params.lp)?;
            let resid = plain((&model.project(&phi, Block::Plus) - &sol_m.m_val).view());
            invariance_residuals.push(resid);
            invariance_thresholds
                .push(params.invariance_tol + sol.report.tail_bounds[m.min(m_blocks - 1)]);
        }
        let invariance_pass = invariance_residuals
            .iter()
            .zip(&invariance_thresholds)
            .all(|(r, t)| r <= t);

        let mut x_off = x0.clone();
        let bump = model.block_range(Block::Plus).start;
        x_off[bump] += params.control_delta;
        let (off_path, _) =
            mild::solve_forward(model, coeffs, omega, x_off.view(), m_blocks, &params.mild)?;
        let plus_norms: Vec<f64> = (0..=m_blocks)
            .map(|m| plain(model.project(&off_path.values.row(m * n).to_owned(), Block::Plus).view()))
            .collect();
        let control_plus_rate = fit_log_slope(&plus_norms, lo, hi);
        let off_norms = block_norms(&off_path);
        let control_total_rate = fit_log_slope(&off_norms, lo, hi);
        let control_pass =
            control_plus_rate >= 0.0 || control_total_rate >= decay_rate + 0.5;

        per_xi.push(XiVerification {
            xi_norm: plain(xi.view()),
            decay_rate,
            decay_threshold,
            decay_pass,
            invariance_residuals,
            invariance_thresholds,
            invariance_pass,
            control_plus_rate,
            control_total_rate,
            control_pass,
        });
    }
    let all_pass = per_xi.iter().all(XiVerification::pass);
    Ok(VerifyReport { kappa, per_xi, all_pass })
}

// ---------------------------------------------------------------------------
// the derivative
// ---------------------------------------------------------------------------

/// `D_xi Gamma(xi, w) . h` by contraction: the linear fixed-point problem
/// `V = L(V) + S^-(. + m) h`, with `L` the linearization of the operator
/// along the solved manifold sequence.
pub fn derivative_solve(
    model: &SpectralModel,
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    gamma: &SequenceU,
    h_dir: ArrayView1<f64>,
    params: &LpParams,
) -> Result<(SequenceU, LpReport)> {
    require_stable_datum(model, h_dir)?;
    let weights = model.weights(-params.beta).to_vec();
    let zero_integrands: Vec<BlockIntegrands> = (0..gamma.n_blocks())
        .map(|_| {
            (
                Array2::zeros((gamma.n_per_unit() + 1, gamma.n_modes())),
                Array2::zeros((gamma.n_per_unit(), gamma.n_modes())),
            )
        })
        .collect();
    let base = lp_core(model, omega, h_dir, &zero_integrands, 0.0, params)?.sequence;
    iterate_to_fixed_point(
        |v| {
            let lv = lp_linearized_apply(model, coeffs, omega, gamma, v, params)?;
            Ok(LpApplied {
                sequence: add_sequences(&lv.sequence, &base)?,
                tail_bounds: lv.tail_bounds,
            })
        },
        base.clone(),
        params.gap.kappa,
        &weights,
        params.beta,
        params.tol,
        params.max_iter,
    )
}

// ---------------------------------------------------------------------------
// graph sampling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GraphPoint {
    /// stable coordinates of the datum
    pub xi_minus: Vec<f64>,
    /// unstable coordinates of the graph value
    pub m_plus: Vec<f64>,
    /// worst `H_kappa` Lipschitz ratio against the other sampled points
    pub lipschitz_ratio: f64,
    /// fitted block-norm decay exponent of the fixed point
    pub decay_rate: f64,
    /// per-block decay bound `|u_m| <= 2 c_s e^{-kappa m} |xi|` replayed
    pub decay_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifoldGraph {
    pub points: Vec<GraphPoint>,
    pub max_lipschitz: f64,
    pub lipschitz_bound: f64,
    pub radius: f64,
    pub kappa: f64,
}

impl ManifoldGraph {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.points.first() {
            for i in 0..first.xi_minus.len() {
                out.push_str(&format!("xi_{i},"));
            }
            for i in 0..first.m_plus.len() {
                out.push_str(&format!("m_{i},"));
            }
            out.push_str("lipschitz_ratio,decay_rate\n");
        }
        for p in &self.points {
            for v in &p.xi_minus {
                out.push_str(&format!("{v},"));
            }
            for v in &p.m_plus {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{},{}\n", p.lipschitz_ratio, p.decay_rate));
        }
        out
    }
}

/// Sample the graph map over random stable data in the ball of the given
/// radius, with the pairwise Lipschitz certificate and per-point decay
/// audit.
#[allow(clippy::too_many_arguments)]
pub fn sample_graph(
    model: &SpectralModel,
    coeffs: &dyn Coefficients,
    omega: &NoisePath,
    m_blocks: usize,
    params: &LpParams,
    radius: f64,
    n_points: usize,
    root_seed: u64,
) -> Result<ManifoldGraph> {
    if n_points < 2 {
        return Err(Error::InvalidParam("graph sampling needs at least two points".into()));
    }
    let weights = model.weights(-params.beta);
    let wslice = weights.to_vec();
    let minus = model.block_range(Block::Minus);
    let plus = model.block_range(Block::Plus);
    let kappa = params.gap.kappa;
    let (lo, hi) = fit_window(m_blocks);

    let mut data = Vec::with_capacity(n_points);
    for p in 0..n_points {
        let mut rng = seeds::stream_rng(root_seed, seeds::stream(roles::MANIFOLD, p as u64));
        let mut xi = Array1::zeros(model.n_modes());
        let mut norm2 = 0.0;
        for i in minus.clone() {
            let g: f64 = StandardNormal.sample(&mut rng);
            xi[i] = g;
            norm2 += g * g;
        }
        use rand::Rng;
        let scale = radius * rng.random_range(0.2..=1.0) / norm2.sqrt().max(1e-300);
        xi.mapv_inplace(|v| v * scale);
        let sol = solve_manifold(model, coeffs, omega, xi.view(), m_blocks, params)?;
        data.push((xi, sol));
    }

    let xi_norm = |xi: &Array1<f64>| -> f64 { xi.iter().map(|&v| v * v).sum::<f64>().sqrt() };
    let mut points = Vec::with_capacity(n_points);
    let mut max_lipschitz: f64 = 0.0;
    for (a, (xi_a, sol_a)) in data.iter().enumerate() {
        let mut ratio: f64 = 0.0;
        for (b, (xi_b, sol_b)) in data.iter().enumerate() {
            if a == b {
                continue;
            }
            let dxi = xi_norm(&(xi_a - xi_b));
            if dxi > 0.0 {
                let dgamma =
                    hkappa_distance(&sol_a.gamma, &sol_b.gamma, kappa, &wslice, params.beta)?;
                ratio = ratio.max(dgamma / dxi);
            }
        }
        max_lipschitz = max_lipschitz.max(ratio);

        let norms: Vec<f64> = (0..m_blocks)
            .map(|m| sol_a.gamma.block_norm(m, &wslice, params.beta))
            .collect();
        let bound = 2.0 * model.c_s() * xi_norm(xi_a);
        let decay_ok = norms
            .iter()
            .enumerate()
            .all(|(m, &v)| v <= bound * (-kappa * m as f64).exp() * (1.0 + 1e-9) + 1e-14);
        points.push(GraphPoint {
            xi_minus: minus.clone().map(|i| xi_a[i]).collect(),
            m_plus: plus.clone().map(|i| sol_a.m_val[i]).collect(),
            lipschitz_ratio: ratio,
            decay_rate: fit_log_slope(&norms, lo, hi),
            decay_ok,
        });
    }
    Ok(ManifoldGraph {
        points,
        max_lipschitz,
        lipschitz_bound: 2.0 * model.c_s(),
        radius,
        kappa,
    })
}
