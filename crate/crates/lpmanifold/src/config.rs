//! Experiment configuration: a single TOML document describing the spectral
//! model, the driving noise, the coefficient amplitudes, the fixed-point
//! solves, the verification battery, and where artifacts go.
//!
//! Loading validates the whole exponent chain up front — `1/2 < beta <
//! beta' < H < 1`, `1 - beta' < alpha < beta`, `kappa` inside the spectral
//! gap, and the gap condition itself when an explicit `K` is given — so a
//! bad parameter fails at startup with the offending key named, never deep
//! inside a solve.

use std::fs;
use std::path::Path;

use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeffs::SaturatingCoefficients;
use crate::error::{Error, Result};
use crate::integral::FracParams;
use crate::lp::{GapParams, LpParams, VerifyParams};
use crate::mild::MildParams;
use crate::noise::{FbmSampler, FbmSpec, NoisePath};
use crate::seeds::{self, roles};
use crate::spectral::{Block, SpectralModel};

/// `[model]`: the diagonal generator and the covariance of the driver.
/// Either the shifted-quadratic rule `lambda_i = lambda_shift - i^2`
/// (`i = 1..=n_modes`) or an explicit spectrum; covariance weights either
/// `mu_i = cov_amplitude * i^{-cov_decay}` or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_modes: usize,
    pub lambda_shift: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<f64>>,
    pub cov_amplitude: f64,
    pub cov_decay: f64,
    pub mu_hat: f64,
    pub mu_check: f64,
    pub c_s: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_modes: 32,
            lambda_shift: 2.0,
            lambda: None,
            covariance: None,
            cov_amplitude: 0.5,
            cov_decay: 2.0,
            mu_hat: 0.9,
            mu_check: -1.8,
            c_s: 1.5,
        }
    }
}

/// `[noise]`: Hurst index, the Hölder/Weyl exponent chain, the grid, and the
/// block horizon `m_blocks` of the fixed-point problem. `alpha_prime`
/// defaults to `alpha + beta_prime - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub hurst: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_prime: Option<f64>,
    pub n_per_unit: usize,
    pub m_blocks: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            hurst: 0.75,
            beta: 0.60,
            beta_prime: 0.70,
            alpha: 0.45,
            alpha_prime: None,
            n_per_unit: 64,
            m_blocks: 16,
            seed: 7,
        }
    }
}

/// `[coefficients]`: the nonlinearity preset and its amplitudes. `rank`
/// (the number of noise columns the diffusion couples to) defaults to the
/// mode count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub preset: String,
    pub eps_f: f64,
    pub eps_g: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

impl Default for CoefficientsConfig {
    fn default() -> Self {
        CoefficientsConfig {
            preset: "saturating".into(),
            eps_f: 0.05,
            eps_g: 0.05,
            rank: None,
        }
    }
}

/// `[lp]`: the decay weight `kappa`, the Lipschitz budget `K` (auto-selected
/// from the gap condition when absent), the truncation depth, and the
/// iteration policies of the two fixed-point loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpConfig {
    pub kappa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_const: Option<f64>,
    pub gamma0: f64,
    pub tail_cut: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        LpConfig {
            kappa: 0.8,
            k_const: None,
            gamma0: 0.04,
            tail_cut: 16,
            tol: 1e-9,
            max_iter: 100,
            picard_tol: 1e-10,
            picard_max_iter: 200,
        }
    }
}

/// `[verify]`: the stable-datum grid and the thresholds of the verification
/// battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n_xi: usize,
    pub radius: f64,
    pub t_verify: usize,
    pub control_delta: f64,
    pub decay_slack: f64,
    pub invariance_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n_xi: 8,
            radius: 0.1,
            t_verify: 6,
            control_delta: 1e-3,
            decay_slack: 0.1,
            invariance_tol: 1e-5,
        }
    }
}

/// `[output]`: artifact directory and formats (`csv` for arrays and paths,
/// `json` for reports and manifests).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".into(),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

/// The full experiment description. All blocks have defaults, so a partial
/// TOML file overrides only what it names.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub coefficients: CoefficientsConfig,
    pub lp: LpConfig,
    pub verify: VerifyConfig,
    pub output: OutputConfig,
}

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

impl ExperimentConfig {
    /// Parse and validate a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| config_err(format!("TOML parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and validate a config file.
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = fs::read_to_string(&path).map_err(|e| {
            config_err(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML serialization (used for the shipped default config and
    /// the config digest).
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_err(format!("TOML serialize: {e}")))
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn digest(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        Ok(hex::encode(hasher.finalize()))
    }

    /// The whole parameter chain, checked with the offending key named.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.n_modes < 2 {
            return Err(config_err(format!(
                "model.n_modes = {} must be at least 2",
                m.n_modes
            )));
        }
        if let Some(lambda) = &m.lambda {
            if lambda.len() != m.n_modes {
                return Err(config_err(format!(
                    "model.lambda has {} entries but model.n_modes = {}",
                    lambda.len(),
                    m.n_modes
                )));
            }
        }
        if let Some(cov) = &m.covariance {
            if cov.len() != m.n_modes {
                return Err(config_err(format!(
                    "model.covariance has {} entries but model.n_modes = {}",
                    cov.len(),
                    m.n_modes
                )));
            }
        }
        if !(m.cov_amplitude > 0.0) {
            return Err(config_err(format!(
                "model.cov_amplitude = {} must be > 0",
                m.cov_amplitude
            )));
        }
        if !(m.cov_decay > 1.0) {
            return Err(config_err(format!(
                "model.cov_decay = {} must exceed 1 (trace-class covariance)",
                m.cov_decay
            )));
        }
        // Delegate the spectral invariants to the model constructor so the
        // message matches what a direct construction would say.
        self.model().map_err(|e| config_err(format!("model block: {e}")))?;

        let n = &self.noise;
        if !(n.beta > 0.5) {
            return Err(config_err(format!(
                "noise.beta = {} violates 1/2 < beta",
                n.beta
            )));
        }
        if !(n.beta < n.beta_prime) {
            return Err(config_err(format!(
                "noise.beta = {} must be < noise.beta_prime = {}",
                n.beta, n.beta_prime
            )));
        }
        if !(n.beta_prime < n.hurst) {
            return Err(config_err(format!(
                "noise.beta_prime = {} must be < noise.hurst = {}",
                n.beta_prime, n.hurst
            )));
        }
        if !(n.hurst < 1.0) {
            return Err(config_err(format!(
                "noise.hurst = {} must be < 1",
                n.hurst
            )));
        }
        if !(n.alpha > 1.0 - n.beta_prime) {
            return Err(config_err(format!(
                "noise.alpha = {} violates 1 - beta_prime < alpha (lower edge {})",
                n.alpha,
                1.0 - n.beta_prime
            )));
        }
        if !(n.alpha < n.beta) {
            return Err(config_err(format!(
                "noise.alpha = {} violates alpha < beta = {}",
                n.alpha, n.beta
            )));
        }
        let ap = self.alpha_prime();
        if !(ap > 0.0 && ap <= n.beta_prime) {
            return Err(config_err(format!(
                "noise.alpha_prime = {ap} must lie in (0, beta_prime]"
            )));
        }
        if n.n_per_unit < 2 {
            return Err(config_err(format!(
                "noise.n_per_unit = {} must be at least 2",
                n.n_per_unit
            )));
        }
        if n.m_blocks < 2 {
            return Err(config_err(format!(
                "noise.m_blocks = {} must be at least 2",
                n.m_blocks
            )));
        }

        let c = &self.coefficients;
        if c.preset != "saturating" {
            return Err(config_err(format!(
                "coefficients.preset = {:?} is not a known preset (try \"saturating\")",
                c.preset
            )));
        }
        if !(c.eps_f >= 0.0 && c.eps_g >= 0.0) {
            return Err(config_err(format!(
                "coefficients.eps_f = {}, eps_g = {} must be nonnegative",
                c.eps_f, c.eps_g
            )));
        }
        if let Some(rank) = c.rank {
            if rank == 0 || rank > m.n_modes {
                return Err(config_err(format!(
                    "coefficients.rank = {rank} must lie in 1..={}",
                    m.n_modes
                )));
            }
        }

        let lp = &self.lp;
        let gap_cap = (-m.mu_check).min(m.mu_hat);
        if !(lp.kappa > 0.0 && lp.kappa < gap_cap) {
            return Err(config_err(format!(
                "lp.kappa = {} must lie in (0, {gap_cap}) (the spectral gap)",
                lp.kappa
            )));
        }
        if !(lp.gamma0 > 0.0) {
            return Err(config_err(format!(
                "lp.gamma0 = {} must be > 0",
                lp.gamma0
            )));
        }
        // Gap condition: pre-checked here when K is pinned, otherwise the
        // auto-selection is required to succeed.
        let gap = self.gap().map_err(|e| config_err(format!("lp block: {e}")))?;
        if !gap.holds() {
            return Err(config_err(format!(
                "lp.k_const = {} fails the gap condition (worst value {:.4} > 0.5)",
                gap.k_const,
                gap.value(0.0)
                    .max(gap.value(self.lp.gamma0))
                    .max(gap.value(2.0 * self.lp.gamma0))
            )));
        }
        if lp.tail_cut == 0 || lp.tail_cut > self.noise.m_blocks {
            return Err(config_err(format!(
                "lp.tail_cut = {} must lie in 1..=noise.m_blocks = {}",
                lp.tail_cut, self.noise.m_blocks
            )));
        }
        if !(lp.tol > 0.0) || !(lp.picard_tol > 0.0) {
            return Err(config_err(format!(
                "lp.tol = {} and lp.picard_tol = {} must be > 0",
                lp.tol, lp.picard_tol
            )));
        }
        if lp.max_iter == 0 || lp.picard_max_iter == 0 {
            return Err(config_err(
                "lp.max_iter and lp.picard_max_iter must be at least 1".into(),
            ));
        }

        let v = &self.verify;
        if v.n_xi == 0 {
            return Err(config_err("verify.n_xi must be at least 1".into()));
        }
        if !(v.radius > 0.0) {
            return Err(config_err(format!(
                "verify.radius = {} must be > 0",
                v.radius
            )));
        }
        if v.t_verify == 0 {
            return Err(config_err("verify.t_verify must be at least 1".into()));
        }
        if !(v.control_delta > 0.0) {
            return Err(config_err(format!(
                "verify.control_delta = {} must be > 0",
                v.control_delta
            )));
        }

        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(config_err(format!(
                    "output.formats entry {f:?} is not one of \"csv\", \"json\""
                )));
            }
        }
        Ok(())
    }

    /// `alpha' = alpha + beta' - 1` unless pinned.
    pub fn alpha_prime(&self) -> f64 {
        self.noise
            .alpha_prime
            .unwrap_or(self.noise.alpha + self.noise.beta_prime - 1.0)
    }

    /// Driver units to sample: the block horizon, the verification shifts,
    /// and one unit of slack for replay checks.
    pub fn units(&self) -> usize {
        self.noise.m_blocks + self.verify.t_verify + 2
    }

    /// Build the spectral model from the rule or the explicit lists.
    pub fn model(&self) -> Result<SpectralModel> {
        let m = &self.model;
        let lambda = match &m.lambda {
            Some(l) => l.clone(),
            None => (1..=m.n_modes)
                .map(|i| m.lambda_shift - (i * i) as f64)
                .collect(),
        };
        let covariance = match &m.covariance {
            Some(c) => c.clone(),
            None => (1..=m.n_modes)
                .map(|i| m.cov_amplitude * (i as f64).powf(-m.cov_decay))
                .collect(),
        };
        SpectralModel::new(lambda, covariance, m.mu_hat, m.mu_check, m.c_s)
    }

    /// The configured nonlinearity.
    pub fn coefficients(&self, model: &SpectralModel) -> Result<SaturatingCoefficients> {
        let rank = self.coefficients.rank.unwrap_or(model.n_modes());
        SaturatingCoefficients::new(
            model.lambda(),
            self.noise.beta,
            self.coefficients.eps_f,
            self.coefficients.eps_g,
            rank,
        )
    }

    /// The Weyl/Hölder exponent triple.
    pub fn frac_params(&self) -> Result<FracParams> {
        FracParams::new(self.noise.alpha, self.noise.beta, self.noise.beta_prime)
    }

    /// Gap parameters: explicit `K` or the automatic margin selection.
    pub fn gap(&self) -> Result<GapParams> {
        match self.lp.k_const {
            Some(k) => GapParams::new(
                k,
                self.lp.kappa,
                self.model.mu_hat,
                self.model.mu_check,
                self.lp.gamma0,
            ),
            None => GapParams::auto(
                self.lp.kappa,
                self.model.mu_hat,
                self.model.mu_check,
                self.lp.gamma0,
            ),
        }
    }

    pub fn lp_params(&self) -> Result<LpParams> {
        Ok(LpParams {
            beta: self.noise.beta,
            gap: self.gap()?,
            tail_cut: self.lp.tail_cut,
            tol: self.lp.tol,
            max_iter: self.lp.max_iter,
        })
    }

    pub fn mild_params(&self) -> MildParams {
        MildParams {
            rho: 0.0,
            beta: self.noise.beta,
            tol: self.lp.picard_tol,
            max_iter: self.lp.picard_max_iter,
        }
    }

    pub fn verify_params(&self) -> Result<VerifyParams> {
        Ok(VerifyParams {
            m_blocks: self.noise.m_blocks,
            t_verify: self.verify.t_verify,
            control_delta: self.verify.control_delta,
            decay_slack: self.verify.decay_slack,
            invariance_tol: self.verify.invariance_tol,
            lp: self.lp_params()?,
            mild: self.mild_params(),
        })
    }

    pub fn fbm_spec(&self) -> Result<FbmSpec> {
        FbmSpec::new(self.noise.hurst, self.noise.n_per_unit, self.units())
    }

    /// Sample the configured driver (replicate 0 of the configured seed).
    pub fn sample_noise(&self) -> Result<NoisePath> {
        let model = self.model()?;
        let spec = self.fbm_spec()?;
        let mut sampler = FbmSampler::new(self.noise.hurst)?;
        sampler.sample_path(&spec, model.covariance(), self.noise.seed, 0)
    }

    /// Deterministic stable-datum grid: seeded Gaussian directions in the
    /// stable subspace, scaled to a ladder of radii `radius * (p+1) / n_xi`.
    pub fn xi_grid(&self, model: &SpectralModel) -> Vec<Array1<f64>> {
        let n_xi = self.verify.n_xi;
        let minus = model.block_range(Block::Minus);
        let mut grid = Vec::with_capacity(n_xi);
        for p in 0..n_xi {
            let mut rng =
                seeds::stream_rng(self.noise.seed, seeds::stream(roles::VERIFY, p as u64));
            let mut xi = Array1::zeros(model.n_modes());
            let mut norm2 = 0.0;
            for i in minus.clone() {
                let g: f64 = StandardNormal.sample(&mut rng);
                xi[i] = g;
                norm2 += g * g;
            }
            let scale =
                self.verify.radius * (p + 1) as f64 / n_xi as f64 / norm2.sqrt().max(1e-300);
            xi.mapv_inplace(|v| v * scale);
            grid.push(xi);
        }
        grid
    }
}
