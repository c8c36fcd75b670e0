//! The acceptance suite: ten pinned, seeded, desk-scale experiments that
//! check every layer of the laboratory against an independent oracle — a
//! closed form, a law of the driving noise, a second evaluation scheme, or a
//! structural identity of the fixed point. Each criterion returns a
//! [`CriterionOutcome`] whose one-line form the `accept` runner and the
//! integration test both print. Criteria never panic; any error is a FAIL
//! with the error text in the details.
//!
//! All tolerances, scales, and seed streams are pinned here as constants.
//! Work items inside a criterion run on the rayon pool; every aggregation
//! is order-deterministic (indexed collection, then reduce).

use std::time::Instant;

use ndarray::{arr1, Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::coeffs::{Coefficients, DiagonalLinearCoefficients, SaturatingCoefficients};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::integral::{beta_increment, fractional_integral, young_integral};
use crate::lp::{self, GapParams, LpParams, SequenceU};
use crate::mild::{self, weighted_norm_of, ContractionBudget, MildParams};
use crate::noise::{FbmSampler, FbmSpec, NoisePath};
use crate::quad::beta_kernel_quadrature;
use crate::report::{CriterionOutcome, CriterionStatus, FileRecord, RunManifest};
use crate::seeds::{self, roles};
use crate::spectral::{Block, SpectralModel};

// criterion 1: Beta-function identity
const C1_PAIRS: usize = 20;
const C1_RTOL: f64 = 1e-7;
const C1_BUDGET_SECS: f64 = 1.0;

// criterion 2: law of the scalar driver
const C2_HURST: f64 = 0.75;
const C2_STEPS_PER_UNIT: usize = 128;
const C2_SAMPLES: u32 = 10_000;
const C2_SIGMAS: f64 = 3.0;
const C2_BUDGET_SECS: f64 = 30.0;

// criterion 3: Young vs Weyl evaluation of the same integral
const C3_PATHS: u32 = 50;
const C3_MODES: usize = 4;
const C3_STEPS: usize = 256;
const C3_ALPHA: f64 = 0.45;
const C3_RTOL: f64 = 1e-3;
const C3_SHIFT_TOL: f64 = 1e-10;
const C3_MAX_MODES: usize = 8;
const C3_BUDGET_SECS: f64 = 120.0;

// criterion 4: diagonal multiplicative-noise closed form + observed order
const C4_PATHS: u32 = 20;
const C4_STEPS: usize = 256;
const C4_RTOL: f64 = 1e-3;
const C4_BUDGET_SECS: f64 = 120.0;

// criteria 5/6/9: measured contraction factors
const CONTRACTION_CAP: f64 = 0.55;
const C5_PAIRS: usize = 20;
const C5_BUDGET_SECS: f64 = 60.0;
const C6_PAIRS: usize = 20;
const C6_MODES: usize = 16;
const C6_BLOCKS: usize = 16;
const C6_STEPS: usize = 64;
const C6_BUDGET_SECS: f64 = 300.0;

// criterion 7: manifold map properties
const C7_ZERO_TOL: f64 = 1e-8;
const C7_GRID: usize = 16;
const C7_RADIUS: f64 = 0.1;
const C7_SHIFT_TOL: f64 = 1e-6;
const C7_BUDGET_SECS: f64 = 600.0;

// criterion 8: stable-manifold verification battery
const C8_BUDGET_SECS: f64 = 600.0;

// criterion 9: C^1 regularity
const C9_MODES: usize = 16;
const C9_BLOCKS: usize = 12;
const C9_STEPS: usize = 64;
const C9_DIRECTIONS: usize = 20;
const C9_EPSILONS: [f64; 3] = [1e-2, 1e-3, 1e-4];
const C9_MIN_ORDER: f64 = 1.0;
const C9_BUDGET_SECS: f64 = 600.0;

// criterion 10: determinism of the artifact pipeline
const C10_BUDGET_SECS: f64 = 600.0;

fn finish(
    id: u32,
    name: &str,
    budget_secs: f64,
    start: Instant,
    result: Result<(bool, String)>,
) -> CriterionOutcome {
    let runtime_secs = start.elapsed().as_secs_f64();
    let (status, details) = match result {
        Ok((true, details)) if runtime_secs <= budget_secs => (CriterionStatus::Pass, details),
        Ok((true, details)) => (
            CriterionStatus::Fail,
            format!("{details}; runtime {runtime_secs:.1} s over budget {budget_secs:.0} s"),
        ),
        Ok((false, details)) => (CriterionStatus::Fail, details),
        Err(e) => (CriterionStatus::Fail, format!("error: {e}")),
    };
    CriterionOutcome {
        id,
        name: name.into(),
        status,
        details,
        runtime_secs,
    }
}

fn skipped(id: u32, name: &str, reason: &str) -> CriterionOutcome {
    CriterionOutcome {
        id,
        name: name.into(),
        status: CriterionStatus::Skipped(reason.into()),
        details: String::new(),
        runtime_secs: 0.0,
    }
}

fn sample_driver(
    hurst: f64,
    n_per_unit: usize,
    units: usize,
    covariance: &[f64],
    root_seed: u64,
    replicate: u32,
) -> Result<NoisePath> {
    let mut sampler = FbmSampler::new(hurst)?;
    sampler.sample_path(
        &FbmSpec::new(hurst, n_per_unit, units)?,
        covariance,
        root_seed,
        replicate,
    )
}

/// Smooth random block sequence with the canonical decay profile, for
/// contraction measurements.
fn random_sequence(
    m_blocks: usize,
    n: usize,
    n_modes: usize,
    scale: f64,
    kappa: f64,
    root_seed: u64,
    item: u64,
) -> SequenceU {
    let mut rng = seeds::stream_rng(root_seed, seeds::stream(roles::ACCEPT, item));
    let amps: Vec<(f64, f64, f64)> = (0..n_modes)
        .map(|_| {
            (
                scale * rng.random_range(-1.0..1.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut flat = Array2::zeros((m_blocks * n + 1, n_modes));
    for j in 0..=m_blocks * n {
        let t = j as f64 / n as f64;
        for (i, &(a, w, p)) in amps.iter().enumerate() {
            flat[(j, i)] = a * (w * t + p).sin() * (-kappa * t).exp();
        }
    }
    SequenceU::from_flat(&flat, n).expect("endpoints shared by construction")
}

/// Seeded direction in the stable subspace with unit plain norm, scaled.
fn stable_direction(model: &SpectralModel, scale: f64, root_seed: u64, item: u64) -> Array1<f64> {
    let mut rng = seeds::stream_rng(root_seed, seeds::stream(roles::ACCEPT, item));
    let mut xi = Array1::zeros(model.n_modes());
    let mut norm2 = 0.0;
    for i in model.block_range(Block::Minus) {
        let g: f64 = StandardNormal.sample(&mut rng);
        xi[i] = g;
        norm2 += g * g;
    }
    let s = scale / norm2.sqrt().max(1e-300);
    xi.mapv_inplace(|v| v * s);
    xi
}

/// 1. Singular-kernel quadrature against Euler's Beta closed form.
pub fn criterion_beta_identity(root_seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let mut rng = seeds::stream_rng(root_seed, seeds::stream(roles::ACCEPT, 1));
        let mut worst = 0.0f64;
        for _ in 0..C1_PAIRS {
            let a = rng.random_range(-0.9..2.0);
            let b = rng.random_range(-0.9..2.0);
            let s = rng.random_range(0.0..0.5);
            let t = s + rng.random_range(0.5..1.5);
            let closed = beta_increment(a, b, s, t);
            let quad = beta_kernel_quadrature(b, a, s, t, 512, 2.0, |_| 1.0);
            worst = worst.max(((quad - closed) / closed).abs());
        }
        Ok((
            worst <= C1_RTOL,
            format!("worst relative error {worst:.2e} over {C1_PAIRS} exponent pairs (tol {C1_RTOL:.0e})"),
        ))
    };
    finish(1, "beta-identity", C1_BUDGET_SECS, start, body())
}

/// 2. Monte Carlo law of the synthesized driver: variance at t = 1 and the
///    covariance E[w(1) w(2)] against the exact values.
pub fn criterion_fbm_law(root_seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let spec = FbmSpec::new(C2_HURST, C2_STEPS_PER_UNIT, 2)?;
        let cov = [1.0];
        let samples: Vec<(f64, f64)> = (0..C2_SAMPLES)
            .into_par_iter()
            .map(|rep| -> Result<(f64, f64)> {
                let mut sampler = FbmSampler::new(C2_HURST)?;
                let path = sampler.sample_path(&spec, &cov, root_seed, rep)?;
                Ok((
                    path.values()[(C2_STEPS_PER_UNIT, 0)],
                    path.values()[(2 * C2_STEPS_PER_UNIT, 0)],
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let m = samples.len() as f64;
        let stat = |xs: &[f64]| {
            let mean = xs.iter().sum::<f64>() / m;
            let se =
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m * (m - 1.0))).sqrt();
            (mean, se)
        };
        let sq: Vec<f64> = samples.iter().map(|(b1, _)| b1 * b1).collect();
        let prod: Vec<f64> = samples.iter().map(|(b1, b2)| b1 * b2).collect();
        let (var_est, se_var) = stat(&sq);
        let (cov_est, se_cov) = stat(&prod);
        let cov_target = 2f64.powf(2.0 * C2_HURST - 1.0);
        let z_var = (var_est - 1.0).abs() / se_var;
        let z_cov = (cov_est - cov_target).abs() / se_cov;
        Ok((
            z_var <= C2_SIGMAS && z_cov <= C2_SIGMAS,
            format!(
                "Var[w(1)] = {var_est:.4} ({z_var:.2} se from 1), E[w(1)w(2)] = {cov_est:.4} \
                 ({z_cov:.2} se from {cov_target:.4}), {C2_SAMPLES} samples"
            ),
        ))
    };
    finish(2, "fbm-law", C2_BUDGET_SECS, start, body())
}

/// 3. The same pathwise integral through two evaluations — left-point Young
///    sums and the compensated Weyl-derivative formula — plus the shift
///    identity `int_tau^T Z dw = int_0^{T-tau} Z(.+tau) d(theta_tau w)`.
pub fn criterion_integral_cross_check(root_seed: u64) -> CriterionOutcome {
    if C3_MODES > C3_MAX_MODES {
        return skipped(
            3,
            "integral-cross-check",
            "Weyl-formula cross-check disabled above 8 modes",
        );
    }
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let spec = FbmSpec::new(0.75, C3_STEPS, 1)?;
        let cov: Vec<f64> = (1..=C3_MODES).map(|i| 0.5 * (i as f64).powf(-2.0)).collect();
        let per_path: Vec<(f64, f64)> = (0..C3_PATHS)
            .into_par_iter()
            .map(|rep| -> Result<(f64, f64)> {
                let mut sampler = FbmSampler::new(0.75)?;
                let path = sampler.sample_path(&spec, &cov, root_seed, 12_000 + rep)?;
                let n = path.n_steps();
                let z: Vec<Array2<f64>> = (0..n)
                    .map(|j| {
                        let t = path.time(j);
                        let w = path.value(j);
                        let mut m = Array2::zeros((C3_MODES, C3_MODES));
                        for a in 0..C3_MODES {
                            for i in 0..C3_MODES {
                                m[(a, i)] = 0.4 * ((a + 1) as f64 * t).cos() / (i + 1) as f64
                                    + 0.3 * (w[i] + a as f64).sin();
                            }
                        }
                        m
                    })
                    .collect();
                let young = young_integral(&z, &path, 0, n)?;
                let frac = fractional_integral(&z, &path, 0, n, C3_ALPHA)?;
                let denom = young.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let rel =
                    (&young - &frac).iter().map(|v| v * v).sum::<f64>().sqrt() / denom;

                let tau = n / 4;
                let shifted = path.wiener_shift(tau)?;
                let z_shift: Vec<Array2<f64>> = z[tau..].to_vec();
                let via = young_integral(&z_shift, &shifted, 0, n - tau)?;
                let direct = young_integral(&z, &path, tau, n)?;
                let shift_res = (&via - &direct)
                    .iter()
                    .fold(0.0f64, |acc, v| acc.max(v.abs()));
                Ok((rel, shift_res))
            })
            .collect::<Result<Vec<_>>>()?;
        let worst_rel = per_path.iter().map(|p| p.0).fold(0.0, f64::max);
        let worst_shift = per_path.iter().map(|p| p.1).fold(0.0, f64::max);
        Ok((
            worst_rel <= C3_RTOL && worst_shift <= C3_SHIFT_TOL,
            format!(
                "worst Young/Weyl disagreement {worst_rel:.2e} (tol {C3_RTOL:.0e}), worst shift \
                 residual {worst_shift:.2e} (tol {C3_SHIFT_TOL:.0e}), {C3_PATHS} paths"
            ),
        ))
    };
    finish(3, "integral-cross-check", C3_BUDGET_SECS, start, body())
}

/// 4. Forward solver against the diagonal multiplicative-noise closed form
///    `u_i(t) = u_i(0) exp(lambda_i t + sigma_i w_i(t))`, with the observed
///    convergence order between n = 128 and n = 256 on the same paths.
pub fn criterion_mild_oracle(root_seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let model = SpectralModel::quadratic_shift(2.0, 6, 0.5, 2.0, 0.9, -1.8, 1.5)?;
        let sigma: Vec<f64> = (0..6).map(|i| 0.1 * 0.8f64.powi(i)).collect();
        let coeffs = DiagonalLinearCoefficients::new(sigma.clone())?;
        let x0 = arr1(&[0.7, -0.4, 0.9, 0.3, -0.5, 0.2]);
        let params = MildParams {
            rho: 0.0,
            beta: 0.6,
            tol: 1e-12,
            max_iter: 400,
        };
        let oracle_err = |omega: &NoisePath| -> Result<f64> {
            let (path, _) = mild::solve_forward(&model, &coeffs, omega, x0.view(), 1, &params)?;
            let mut worst = 0.0f64;
            for j in 0..=omega.n_steps() {
                let t = omega.time(j);
                for i in 0..6 {
                    let exact = x0[i]
                        * (model.lambda()[i] * t + sigma[i] * omega.values()[(j, i)]).exp();
                    worst = worst.max((path.values[(j, i)] - exact).abs() / exact.abs());
                }
            }
            Ok(worst)
        };
        let per_path: Vec<(f64, f64)> = (0..C4_PATHS)
            .into_par_iter()
            .map(|rep| -> Result<(f64, f64)> {
                let fine = sample_driver(
                    0.75,
                    C4_STEPS,
                    1,
                    model.covariance(),
                    root_seed,
                    14_000 + rep,
                )?;
                let coarse = fine.subsample(2)?;
                Ok((oracle_err(&fine)?, oracle_err(&coarse)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let worst_fine = per_path.iter().map(|p| p.0).fold(0.0, f64::max);
        let mean_order = per_path
            .iter()
            .map(|&(ef, ec)| (ec / ef).log2())
            .sum::<f64>()
            / per_path.len() as f64;
        let guaranteed = 0.6 + 0.7 - 1.0;
        let order_ok = mean_order >= guaranteed / 2.0 && mean_order <= 4.0;
        Ok((
            worst_fine <= C4_RTOL && order_ok,
            format!(
                "worst relative error {worst_fine:.2e} at n = {C4_STEPS} (tol {C4_RTOL:.0e}); \
                 mean observed order {mean_order:.2} vs guaranteed {guaranteed:.2} \
                 (accept within factor 2), {C4_PATHS} paths"
            ),
        ))
    };
    finish(4, "mild-oracle", C4_BUDGET_SECS, start, body())
}

/// 5. Picard-map contraction at the automatically selected weight: the
///    a-priori budget picks `rho_1` for factor 1/2; the measured factor on
///    random pairs must stay below the cap.
pub fn criterion_picard_contraction(root_seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let model = SpectralModel::quadratic_shift(2.0, 6, 0.5, 2.0, 0.9, -1.8, 1.5)?;
        let coeffs = SaturatingCoefficients::new(model.lambda(), 0.6, 0.05, 0.05, 6)?;
        let omega = sample_driver(0.75, 64, 1, model.covariance(), root_seed, 16_000)?;
        let budget = ContractionBudget {
            c_s: model.c_s(),
            lip_f: coeffs.drift_lipschitz(f64::INFINITY),
            lip_g: coeffs.diffusion_lipschitz(f64::INFINITY),
            c_ab: 2.0,
            omega_norm: omega.block_seminorm(0, 0.70)?,
            path_radius: 0.1,
            alpha: 0.45,
            alpha_prime: 0.15,
            horizon: 1.0,
        };
        let (rho1, q_budget) = mild::choose_rho(&budget, 0.5)?;
        let weights: Vec<f64> = model.weights(-0.6).to_vec();
        let xi = arr1(&[0.02, -0.01, 0.015, 0.0, 0.01, -0.02]);
        let h = omega.h();
        let factors: Vec<f64> = (0..C5_PAIRS)
            .into_par_iter()
            .map(|p| -> Result<f64> {
                let mut rng =
                    seeds::stream_rng(root_seed, seeds::stream(roles::ACCEPT, 500 + p as u64));
                let mut draw = || {
                    let mut m = Array2::zeros((65, 6));
                    for v in m.iter_mut() {
                        *v = 0.05 * rng.random_range(-1.0..1.0);
                    }
                    m.row_mut(0).assign(&xi);
                    m
                };
                let u = draw();
                let v = draw();
                let mu = mild::picard_map(&model, &coeffs, &omega, 0, 64, xi.view(), &u)?;
                let mv = mild::picard_map(&model, &coeffs, &omega, 0, 64, xi.view(), &v)?;
                let num = weighted_norm_of(&(&mu - &mv), h, &weights, rho1, 0.6);
                let den = weighted_norm_of(&(&u - &v), h, &weights, rho1, 0.6);
                Ok(num / den)
            })
            .collect::<Result<Vec<_>>>()?;
        let worst = factors.iter().copied().fold(0.0, f64::max);
        Ok((
            worst > 0.0 && worst <= CONTRACTION_CAP,
            format!(
                "measured factor {worst:.2e} over {C5_PAIRS} pairs at rho = {rho1:.1} \
                 (budget {q_budget:.3}, cap {CONTRACTION_CAP})"
            ),
        ))
    };
    finish(5, "picard-contraction", C5_BUDGET_SECS, start, body())
}

/// 6. Fixed-point operator contraction in the weighted sequence norm under
///    the auto-selected Lipschitz budget.
pub fn criterion_lp_contraction(root_seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let model = SpectralModel::quadratic_shift(2.0, C6_MODES, 0.5, 2.0, 0.9, -1.8, 1.5)?;
        let coeffs = SaturatingCoefficients::new(model.lambda(), 0.6, 0.05, 0.05, C6_MODES)?;
        let gap = GapParams::auto(0.8, 0.9, -1.8, 0.04)?;
        let gap_value = gap.value(0.0).max(gap.value(0.04)).max(gap.value(0.08));
        let omega = sample_driver(
            0.75,
            C6_STEPS,
            C6_BLOCKS,
            model.covariance(),
            root_seed,
            16_100,
        )?;
        let params = LpParams {
            beta: 0.6,
            gap,
            tail_cut: C6_BLOCKS,
            tol: 1e-9,
            max_iter: 100,
        };
        let xi = stable_direction(&model, 0.05, root_seed, 699);
        let weights = model.weights(-0.6).to_vec();
        let kappa = gap.kappa;
        let factors: Vec<f64> = (0..C6_PAIRS as u64)
            .into_par_iter()
            .map(|p| -> Result<f64> {
                let u = random_sequence(C6_BLOCKS, C6_STEPS, C6_MODES, 0.05, kappa, root_seed, 600 + 2 * p);
                let v = random_sequence(C6_BLOCKS, C6_STEPS, C6_MODES, 0.05, kappa, root_seed, 601 + 2 * p);
                let tu = lp::lp_apply(&model, &coeffs, &omega, xi.view(), &u, &params)?;
                let tv = lp::lp_apply(&model, &coeffs, &omega, xi.view(), &v, &params)?;
                let num = lp::hkappa_distance(&tu.sequence, &tv.sequence, kappa, &weights, 0.6)?;
                let den = lp::hkappa_distance(&u, &v, kappa, &weights, 0.6)?;
                Ok(num / den)
            })
            .collect::<Result<Vec<_>>>()?;
        let worst = factors.iter().copied().fold(0.0, f64::max);
        Ok((
            worst > 0.0 && worst <= CONTRACTION_CAP && gap_value <= 0.5,
            format!(
                "measured factor {worst:.2e} over {C6_PAIRS} sequence pairs (cap {CONTRACTION_CAP}); \
                 gap value {gap_value:.3} <= 0.5 at K = {:.3}",
                params.gap.k_const
            ),
        ))
    };
    finish(6, "lp-contraction", C6_BUDGET_SECS, start, body())
}

/// 7. Properties of the solved graph map: zero at zero, the Lipschitz
///    certificate, the decay envelope, and the shift identity within the
///    reported truncation allowance.
pub fn criterion_manifold_properties(root_seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let mut cfg = ExperimentConfig::default();
        cfg.noise.seed = root_seed;
        let model = cfg.model()?;
        let coeffs = cfg.coefficients(&model)?;
        let omega = cfg.sample_noise()?;
        let params = cfg.lp_params()?;
        let m_blocks = cfg.noise.m_blocks;
        let weights = model.weights(-params.beta).to_vec();

        let zero = Array1::zeros(model.n_modes());
        let sol0 = lp::solve_manifold(&model, &coeffs, &omega, zero.view(), m_blocks, &params)?;
        let zero_norm = sol0.gamma.hkappa_norm(params.gap.kappa, &weights, params.beta);

        let graph = lp::sample_graph(
            &model, &coeffs, &omega, m_blocks, &params, C7_RADIUS, C7_GRID, root_seed,
        )?;
        let lip_ok = graph.max_lipschitz <= graph.lipschitz_bound;
        let decay_ok = graph.points.iter().all(|p| p.decay_ok);

        let xi = stable_direction(&model, C7_RADIUS, root_seed, 777);
        let sol = lp::solve_manifold(&model, &coeffs, &omega, xi.view(), m_blocks, &params)?;
        let (residuals, allowances) =
            lp::shift_identity_profile(&model, &coeffs, &omega, &sol, &params)?;
        let shift_ok = residuals
            .iter()
            .zip(&allowances)
            .all(|(r, a)| *r <= C7_SHIFT_TOL + a);
        let worst_shift = residuals
            .iter()
            .zip(&allowances)
            .map(|(r, a)| r - a)
            .fold(f64::MIN, f64::max);

        Ok((
            zero_norm <= C7_ZERO_TOL && lip_ok && decay_ok && shift_ok,
            format!(
                "|Gamma(0)| = {zero_norm:.1e} (tol {C7_ZERO_TOL:.0e}); Lipschitz {:.2} <= {:.2} \
                 over {C7_GRID} data; decay envelope {}; shift residual - allowance {worst_shift:.2e} \
                 <= {C7_SHIFT_TOL:.0e}",
                graph.max_lipschitz,
                graph.lipschitz_bound,
                if decay_ok { "holds" } else { "violated" },
            ),
        ))
    };
    finish(7, "manifold-properties", C7_BUDGET_SECS, start, body())
}

/// 8. The stable-manifold battery: on-graph orbits decay at the prescribed
///    rate, integer-time states lie on the shifted graphs, off-graph controls
///    do not share the decay.
pub fn criterion_stable_manifold(root_seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let mut cfg = ExperimentConfig::default();
        cfg.noise.seed = root_seed;
        let model = cfg.model()?;
        let coeffs = cfg.coefficients(&model)?;
        let omega = cfg.sample_noise()?;
        let vparams = cfg.verify_params()?;
        let grid = cfg.xi_grid(&model);
        let report = lp::verify_stable_manifold(&model, &coeffs, &omega, &grid, &vparams)?;
        let worst_decay = report
            .per_xi
            .iter()
            .map(|x| x.decay_rate)
            .fold(f64::MIN, f64::max);
        let n_invariance = report
            .per_xi
            .iter()
            .filter(|x| x.invariance_pass)
            .count();
        let n_control = report.per_xi.iter().filter(|x| x.control_pass).count();
        Ok((
            report.all_pass,
            format!(
                "{} data: worst decay rate {worst_decay:.3} (threshold {:.3}), invariance \
                 {n_invariance}/{}, controls {n_control}/{}",
                grid.len(),
                -vparams.lp.gap.kappa + vparams.decay_slack,
                grid.len(),
                grid.len(),
            ),
        ))
    };
    finish(8, "stable-manifold", C8_BUDGET_SECS, start, body())
}

/// 9. C^1 regularity: the linearized operator contracts, and the derivative
///    fixed point matches central differences of the graph map with observed
///    order >= 1 in the step.
pub fn criterion_c1_smoothness(root_seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let model = SpectralModel::quadratic_shift(2.0, C9_MODES, 0.5, 2.0, 0.9, -1.8, 1.5)?;
        let coeffs = SaturatingCoefficients::new(model.lambda(), 0.6, 0.05, 0.05, C9_MODES)?;
        let omega = sample_driver(
            0.75,
            C9_STEPS,
            C9_BLOCKS,
            model.covariance(),
            root_seed,
            16_200,
        )?;
        let params = LpParams {
            beta: 0.6,
            gap: GapParams::auto(0.8, 0.9, -1.8, 0.04)?,
            tail_cut: C9_BLOCKS,
            tol: 1e-13,
            max_iter: 200,
        };
        let kappa = params.gap.kappa;
        let weights = model.weights(-0.6).to_vec();
        let xi0 = stable_direction(&model, 0.04, root_seed, 798);
        let sol = lp::solve_manifold(&model, &coeffs, &omega, xi0.view(), C9_BLOCKS, &params)?;

        let factors: Vec<f64> = (0..C9_DIRECTIONS as u64)
            .into_par_iter()
            .map(|p| -> Result<f64> {
                let w = random_sequence(C9_BLOCKS, C9_STEPS, C9_MODES, 1.0, kappa, root_seed, 700 + p);
                let lw = lp::lp_linearized_apply(&model, &coeffs, &omega, &sol.gamma, &w, &params)?;
                Ok(lw.sequence.hkappa_norm(kappa, &weights, 0.6)
                    / w.hkappa_norm(kappa, &weights, 0.6))
            })
            .collect::<Result<Vec<_>>>()?;
        let worst_l = factors.iter().copied().fold(0.0, f64::max);

        let h_dir = stable_direction(&model, 1.0, root_seed, 799);
        let (v_seq, _) =
            lp::derivative_solve(&model, &coeffs, &omega, &sol.gamma, h_dir.view(), &params)?;
        let v_flat = v_seq.flatten();
        let mut errs = Vec::with_capacity(C9_EPSILONS.len());
        for &eps in &C9_EPSILONS {
            let xi_p = &xi0 + &(eps * &h_dir);
            let xi_m = &xi0 - &(eps * &h_dir);
            let sol_p = lp::solve_manifold(&model, &coeffs, &omega, xi_p.view(), C9_BLOCKS, &params)?;
            let sol_m = lp::solve_manifold(&model, &coeffs, &omega, xi_m.view(), C9_BLOCKS, &params)?;
            let fd_flat = (&sol_p.gamma.flatten() - &sol_m.gamma.flatten()) / (2.0 * eps);
            let diff = SequenceU::from_flat(&(&fd_flat - &v_flat), C9_STEPS)?;
            errs.push(diff.hkappa_norm(kappa, &weights, 0.6));
        }
        // errs[k] ~ C eps_k^q with eps_k = 10^{-2-k}: least squares in the index
        let order = -lp::fit_log_slope(&errs, 0, errs.len() - 1) / std::f64::consts::LN_10;
        Ok((
            worst_l > 0.0 && worst_l <= CONTRACTION_CAP && order >= C9_MIN_ORDER,
            format!(
                "linearized-operator factor {worst_l:.2e} over {C9_DIRECTIONS} directions \
                 (cap {CONTRACTION_CAP}); finite-difference errors {:.1e}/{:.1e}/{:.1e} at \
                 eps = 1e-2/1e-3/1e-4, observed order {order:.2} (need >= {C9_MIN_ORDER})",
                errs[0], errs[1], errs[2]
            ),
        ))
    };
    finish(9, "c1-smoothness", C9_BUDGET_SECS, start, body())
}

/// A compact end-to-end artifact pipeline (driver CSV, graph CSV,
/// verification JSON) hashed into a manifest digest; two runs of the same
/// seed must agree bit for bit.
pub fn pipeline_digest(root_seed: u64) -> Result<String> {
    let mut cfg = ExperimentConfig::from_toml_str(
        "[model]\nn_modes = 6\n\n[noise]\nn_per_unit = 32\nm_blocks = 6\n\n\
         [lp]\ntail_cut = 6\n\n[verify]\nn_xi = 2\nt_verify = 2\n",
    )?;
    cfg.noise.seed = root_seed;
    let model = cfg.model()?;
    let coeffs = cfg.coefficients(&model)?;
    let omega = cfg.sample_noise()?;
    let mut noise_csv = Vec::new();
    omega.to_csv(&mut noise_csv)?;
    let params = cfg.lp_params()?;
    let graph = lp::sample_graph(
        &model,
        &coeffs,
        &omega,
        cfg.noise.m_blocks,
        &params,
        cfg.verify.radius,
        4,
        root_seed,
    )?;
    let graph_csv = graph.to_csv();
    let vreport =
        lp::verify_stable_manifold(&model, &coeffs, &omega, &cfg.xi_grid(&model), &cfg.verify_params()?)?;
    let verify_json = serde_json::to_string_pretty(&vreport)
        .map_err(|e| crate::error::Error::Parse(format!("verify report serialize: {e}")))?;

    let mut manifest = RunManifest::new(cfg.digest()?, root_seed);
    manifest.push_stage(
        "simulate-noise",
        format!("{} units of {} modes", omega.units(), omega.n_modes()),
        vec![FileRecord::of_bytes("noise.csv", &noise_csv)],
    );
    manifest.push_stage(
        "manifold",
        format!("{} graph points", graph.points.len()),
        vec![FileRecord::of_bytes("graph.csv", graph_csv.as_bytes())],
    );
    manifest.push_stage(
        "verify",
        format!("all_pass = {}", vreport.all_pass),
        vec![FileRecord::of_bytes("verify.json", verify_json.as_bytes())],
    );
    manifest.digest()
}

/// 10. Determinism: the pipeline digest is reproducible under the same seed
///     and moves under a different one.
pub fn criterion_determinism(root_seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let body = || -> Result<(bool, String)> {
        let d1 = pipeline_digest(root_seed)?;
        let d2 = pipeline_digest(root_seed)?;
        let d3 = pipeline_digest(root_seed ^ 0x9e37_79b9)?;
        Ok((
            d1 == d2 && d1 != d3,
            format!(
                "repeat digest {}, seed sensitivity {}",
                if d1 == d2 { "identical" } else { "DIVERGED" },
                if d1 != d3 { "confirmed" } else { "ABSENT" },
            ),
        ))
    };
    finish(10, "determinism", C10_BUDGET_SECS, start, body())
}

/// Run the whole suite in order.
pub fn run_all(root_seed: u64) -> Vec<CriterionOutcome> {
    vec![
        criterion_beta_identity(root_seed),
        criterion_fbm_law(root_seed),
        criterion_integral_cross_check(root_seed),
        criterion_mild_oracle(root_seed),
        criterion_picard_contraction(root_seed),
        criterion_lp_contraction(root_seed),
        criterion_manifold_properties(root_seed),
        criterion_stable_manifold(root_seed),
        criterion_c1_smoothness(root_seed),
        criterion_determinism(root_seed),
    ]
}
