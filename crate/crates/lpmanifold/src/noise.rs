//! Fractional Brownian noise on a uniform grid.
//!
//! Paths of the driving noise take values in the mode space: component `i`
//! is an independent scalar fractional Brownian motion scaled by the square
//! root of the covariance weight `mu_i`. Synthesis runs per component with
//! its own deterministic counter stream, so component `i` of a path is
//! bitwise independent of how many other components are requested.
//!
//! The default synthesizer is the Davies-Harte circulant embedding (two FFTs
//! per component, exact law). If the embedding spectrum dips negative - it
//! does not for the Hurst range accepted here, but the guard is cheap - the
//! sampler falls back to a dense Cholesky factorization of the increment
//! covariance for grids up to 2048 steps.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{roles, stream, stream_rng};

/// Sampling request: Hurst index in `(1/2, 1)`, grid resolution per unit
/// time, and the number of unit blocks in the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbmSpec {
    pub hurst: f64,
    pub n_per_unit: usize,
    pub units: usize,
}

impl FbmSpec {
    pub fn new(hurst: f64, n_per_unit: usize, units: usize) -> Result<Self> {
        let spec = FbmSpec { hurst, n_per_unit, units };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.5 && self.hurst < 1.0) {
            return Err(Error::InvalidParam(format!(
                "Hurst index must lie in (1/2, 1), got {}",
                self.hurst
            )));
        }
        if self.n_per_unit == 0 || self.units == 0 {
            return Err(Error::InvalidParam(
                "grid resolution and horizon must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.n_per_unit * self.units
    }
}

/// Autocovariance of unit-spacing fractional Gaussian noise at lag `k`.
fn fgn_autocov(hurst: f64, k: usize) -> f64 {
    let two_h = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
}

enum Table {
    Circulant {
        lambda: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    /// Lower-triangular factor of the fGn covariance, row-major.
    Cholesky { factor: Vec<f64> },
}

/// Synthesizer for fractional Gaussian noise with a fixed Hurst index.
/// Caches the embedding spectrum (or Cholesky factor) per grid length.
pub struct FbmSampler {
    hurst: f64,
    tables: HashMap<usize, Table>,
    planner: FftPlanner<f64>,
    force_cholesky: bool,
}

const CHOLESKY_LIMIT: usize = 2048;

impl FbmSampler {
    pub fn new(hurst: f64) -> Result<Self> {
        if !(hurst > 0.5 && hurst < 1.0) {
            return Err(Error::InvalidParam(format!(
                "Hurst index must lie in (1/2, 1), got {hurst}"
            )));
        }
        Ok(FbmSampler {
            hurst,
            tables: HashMap::new(),
            planner: FftPlanner::new(),
            force_cholesky: false,
        })
    }

    /// Test hook: bypass the circulant embedding.
    pub fn with_forced_cholesky(hurst: f64) -> Result<Self> {
        let mut s = Self::new(hurst)?;
        s.force_cholesky = true;
        Ok(s)
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Eigenvalues of the length-`2n` circulant embedding of the fGn
    /// covariance. Exposed for spectrum audits.
    pub fn embedding_spectrum(&mut self, n: usize) -> Vec<f64> {
        let m = 2 * n;
        let mut row: Vec<Complex<f64>> = (0..m)
            .map(|j| Complex::new(fgn_autocov(self.hurst, j.min(m - j)), 0.0))
            .collect();
        self.planner.plan_fft_forward(m).process(&mut row);
        row.iter().map(|z| z.re).collect()
    }

    fn table(&mut self, n: usize) -> Result<&Table> {
        if !self.tables.contains_key(&n) {
            let table = self.build_table(n)?;
            self.tables.insert(n, table);
        }
        Ok(&self.tables[&n])
    }

    fn build_table(&mut self, n: usize) -> Result<Table> {
        debug_assert!(n >= 1);
        if !self.force_cholesky {
            let lambda = self.embedding_spectrum(n);
            let max = lambda.iter().cloned().fold(0.0, f64::max);
            let min = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
            if min >= -1e-9 * max {
                let clipped = lambda.iter().map(|&x| x.max(0.0)).collect();
                return Ok(Table::Circulant {
                    lambda: clipped,
                    fft: self.planner.plan_fft_forward(2 * n),
                });
            }
            if n > CHOLESKY_LIMIT {
                return Err(Error::CirculantEmbedding { min_eig: min });
            }
        } else if n > CHOLESKY_LIMIT {
            return Err(Error::InvalidParam(format!(
                "dense factorization limited to {CHOLESKY_LIMIT} steps, got {n}"
            )));
        }
        let factor = cholesky_lower(
            &|i, j| fgn_autocov(self.hurst, i.abs_diff(j)),
            n,
        )?;
        Ok(Table::Cholesky { factor })
    }

    /// One realization of unit-spacing fractional Gaussian noise of length
    /// `n` (increment variance 1).
    pub fn sample_unit_fgn<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self.table(n)? {
            Table::Circulant { lambda, fft } => {
                let m = 2 * n;
                let mf = m as f64;
                let mut w = vec![Complex::new(0.0, 0.0); m];
                w[0] = Complex::new((lambda[0] / mf).sqrt() * rng.sample::<f64, _>(StandardNormal), 0.0);
                w[n] = Complex::new((lambda[n] / mf).sqrt() * rng.sample::<f64, _>(StandardNormal), 0.0);
                for k in 1..n {
                    let scale = (lambda[k] / (2.0 * mf)).sqrt();
                    let u: f64 = rng.sample(StandardNormal);
                    let v: f64 = rng.sample(StandardNormal);
                    w[k] = Complex::new(scale * u, scale * v);
                    w[m - k] = w[k].conj();
                }
                let fft = Arc::clone(fft);
                fft.process(&mut w);
                Ok(w[..n].iter().map(|z| z.re).collect())
            }
            Table::Cholesky { factor } => {
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let mut out = vec![0.0; n];
                for i in 0..n {
                    let row = &factor[i * n..i * n + i + 1];
                    out[i] = row.iter().zip(&z).map(|(l, g)| l * g).sum();
                }
                Ok(out)
            }
        }
    }

    /// Sample a full mode-space path: component `i` is an independent fBm
    /// scaled by `sqrt(covariance[i])`, with grid step `1 / n_per_unit` and
    /// the exact self-similar scaling `h^hurst` of the increments. Each
    /// `(replicate, component)` pair draws from its own counter stream of
    /// `root_seed`, so ensembles and cross-resolution comparisons stay
    /// reproducible component by component.
    pub fn sample_path(
        &mut self,
        spec: &FbmSpec,
        covariance: &[f64],
        root_seed: u64,
        replicate: u32,
    ) -> Result<NoisePath> {
        spec.validate()?;
        if (spec.hurst - self.hurst).abs() > 1e-15 {
            return Err(Error::InvalidParam(format!(
                "sampler built for Hurst {}, spec asks {}",
                self.hurst, spec.hurst
            )));
        }
        let n_total = spec.total_steps();
        let n_modes = covariance.len();
        debug_assert!(n_modes < (1 << 20), "component id overflows the stream layout");
        let h = 1.0 / spec.n_per_unit as f64;
        let h_pow = h.powf(self.hurst);
        let mut values = Array2::zeros((n_total + 1, n_modes));
        for i in 0..n_modes {
            let item = ((replicate as u64) << 20) | i as u64;
            let mut rng = stream_rng(root_seed, stream(roles::NOISE, item));
            let fgn = self.sample_unit_fgn(n_total, &mut rng)?;
            let amp = covariance[i].sqrt() * h_pow;
            let mut acc = 0.0;
            for (j, g) in fgn.iter().enumerate() {
                acc += amp * g;
                values[(j + 1, i)] = acc;
            }
        }
        NoisePath::from_values(values, spec.n_per_unit)
    }
}

/// Dense Cholesky of a symmetric positive-definite matrix given entrywise.
fn cholesky_lower(entry: &dyn Fn(usize, usize) -> f64, n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = entry(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::NotPositiveDefinite { pivot: sum });
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// How a Hölder seminorm was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeminormMode {
    /// All grid pairs, O(n^2).
    Exact,
    /// Dyadic gaps only, O(n log n); a lower bound within the factor
    /// `1 - 2^{-beta}` of the exact grid seminorm.
    Dyadic,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeminormEstimate {
    pub value: f64,
    pub mode: SeminormMode,
}

/// Grid path of the driving noise: row `j` holds the mode-space value at
/// time `j * h` with `h = 1 / n_per_unit`, starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    values: Array2<f64>,
    n_per_unit: usize,
}

/// Above this many steps the automatic seminorm switches to dyadic gaps.
const EXACT_SEMINORM_LIMIT: usize = 1024;

impl NoisePath {
    pub fn from_values(values: Array2<f64>, n_per_unit: usize) -> Result<Self> {
        if n_per_unit == 0 {
            return Err(Error::InvalidParam("n_per_unit must be positive".into()));
        }
        if values.nrows() < 2 {
            return Err(Error::GridMismatch(
                "path needs at least one step".into(),
            ));
        }
        Ok(NoisePath { values, n_per_unit })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n_steps(&self) -> usize {
        self.values.nrows() - 1
    }

    pub fn n_modes(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_per_unit(&self) -> usize {
        self.n_per_unit
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_per_unit as f64
    }

    /// Whole unit blocks contained in the grid.
    pub fn units(&self) -> usize {
        self.n_steps() / self.n_per_unit
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.h()
    }

    pub fn value(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.row(j)
    }

    /// Increment rows: row `j` is `w(t_{j+1}) - w(t_j)`.
    pub fn increments(&self) -> Array2<f64> {
        let n = self.n_steps();
        let mut inc = Array2::zeros((n, self.n_modes()));
        for j in 0..n {
            let d = &self.values.row(j + 1) - &self.values.row(j);
            inc.row_mut(j).assign(&d);
        }
        inc
    }

    /// Piecewise-linear evaluation of component `i` at time `t` in
    /// `[0, n_steps * h]`.
    pub fn eval_component(&self, i: usize, t: f64) -> f64 {
        let h = self.h();
        let n = self.n_steps();
        debug_assert!(t >= -1e-12 && t <= (n as f64) * h * (1.0 + 1e-12));
        let x = (t / h).clamp(0.0, n as f64);
        let j = (x.floor() as usize).min(n - 1);
        let theta = x - j as f64;
        (1.0 - theta) * self.values[(j, i)] + theta * self.values[(j + 1, i)]
    }

    /// The time-shifted path `t -> w(t + tau) - w(tau)` for a grid-aligned
    /// shift of `steps` grid cells.
    pub fn wiener_shift(&self, steps: usize) -> Result<NoisePath> {
        if steps > self.n_steps() - 1 {
            return Err(Error::Horizon(format!(
                "shift by {steps} steps leaves no room on a {}-step grid",
                self.n_steps()
            )));
        }
        let base = self.values.row(steps).to_owned();
        let rows = self.values.nrows() - steps;
        let mut values = Array2::zeros((rows, self.n_modes()));
        for j in 0..rows {
            let d = &self.values.row(steps + j) - &base;
            values.row_mut(j).assign(&d);
        }
        NoisePath::from_values(values, self.n_per_unit)
    }

    /// Wiener shift by `i` whole time units.
    pub fn shift_units(&self, i: usize) -> Result<NoisePath> {
        self.wiener_shift(i * self.n_per_unit)
    }

    /// Keep the first `n` steps.
    pub fn truncate_steps(&self, n: usize) -> Result<NoisePath> {
        if n == 0 || n > self.n_steps() {
            return Err(Error::Horizon(format!(
                "cannot truncate a {}-step grid to {n} steps",
                self.n_steps()
            )));
        }
        let values = self.values.slice(ndarray::s![..n + 1, ..]).to_owned();
        NoisePath::from_values(values, self.n_per_unit)
    }

    /// Keep every `stride`-th node (the same sample path viewed on a grid
    /// coarser by `stride`). `n_per_unit` must be divisible by `stride`.
    pub fn subsample(&self, stride: usize) -> Result<NoisePath> {
        if stride == 0 || !self.n_per_unit.is_multiple_of(stride) {
            return Err(Error::GridMismatch(format!(
                "stride {stride} does not divide {} steps per unit",
                self.n_per_unit
            )));
        }
        let n = self.n_steps() / stride;
        let mut values = Array2::zeros((n + 1, self.n_modes()));
        for j in 0..=n {
            values.row_mut(j).assign(&self.values.row(j * stride));
        }
        NoisePath::from_values(values, self.n_per_unit / stride)
    }

    fn pair_ratio(&self, s: usize, t: usize, beta: f64) -> f64 {
        let mut d2 = 0.0;
        for i in 0..self.n_modes() {
            let d = self.values[(t, i)] - self.values[(s, i)];
            d2 += d * d;
        }
        d2.sqrt() / ((t - s) as f64 * self.h()).powf(beta)
    }

    /// Exact grid Hölder seminorm over node range `[j0, j1]`.
    pub fn seminorm_on_steps(&self, j0: usize, j1: usize, beta: f64) -> f64 {
        debug_assert!(j0 < j1 && j1 <= self.n_steps());
        let mut sup: f64 = 0.0;
        for s in j0..j1 {
            for t in s + 1..=j1 {
                sup = sup.max(self.pair_ratio(s, t, beta));
            }
        }
        sup
    }

    fn seminorm_dyadic(&self, beta: f64) -> f64 {
        let n = self.n_steps();
        let mut sup: f64 = 0.0;
        let mut gap = 1;
        while gap <= n {
            for s in 0..=(n - gap) {
                sup = sup.max(self.pair_ratio(s, s + gap, beta));
            }
            gap *= 2;
        }
        if !n.is_power_of_two() {
            sup = sup.max(self.pair_ratio(0, n, beta));
        }
        sup
    }

    /// Hölder seminorm of the whole path; exact pair scan up to 1024 steps,
    /// dyadic gaps beyond that (mode recorded in the estimate).
    pub fn holder_seminorm(&self, beta: f64) -> SeminormEstimate {
        if self.n_steps() <= EXACT_SEMINORM_LIMIT {
            SeminormEstimate {
                value: self.seminorm_on_steps(0, self.n_steps(), beta),
                mode: SeminormMode::Exact,
            }
        } else {
            SeminormEstimate {
                value: self.seminorm_dyadic(beta),
                mode: SeminormMode::Dyadic,
            }
        }
    }

    pub fn holder_seminorm_with(&self, beta: f64, mode: SeminormMode) -> f64 {
        match mode {
            SeminormMode::Exact => self.seminorm_on_steps(0, self.n_steps(), beta),
            SeminormMode::Dyadic => self.seminorm_dyadic(beta),
        }
    }

    /// Hölder seminorm of the path restricted to unit block `i`, i.e. of the
    /// unit-shifted path over `[0, 1]`. Differences are shift-invariant, so
    /// no shifted path is materialized.
    pub fn block_seminorm(&self, unit: usize, beta: f64) -> Result<f64> {
        let j0 = unit * self.n_per_unit;
        let j1 = j0 + self.n_per_unit;
        if j1 > self.n_steps() {
            return Err(Error::Horizon(format!(
                "block {unit} exceeds a {}-unit horizon",
                self.units()
            )));
        }
        Ok(self.seminorm_on_steps(j0, j1, beta))
    }

    /// CSV export: header `t,w_1,...,w_N`, shortest-roundtrip floats.
    pub fn to_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::from("t");
        for i in 0..self.n_modes() {
            write!(line, ",w_{}", i + 1).expect("string write");
        }
        writeln!(out, "{line}")?;
        for j in 0..=self.n_steps() {
            line.clear();
            write!(line, "{}", self.time(j)).expect("string write");
            for i in 0..self.n_modes() {
                write!(line, ",{}", self.values[(j, i)]).expect("string write");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write_csv_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv(std::io::BufWriter::new(file))
    }

    /// CSV import; requires a uniform grid whose step is `1/k` for an
    /// integer `k` (grid-aligned shifts need whole unit blocks).
    pub fn from_csv<R: BufRead>(reader: R) -> Result<NoisePath> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if !line.starts_with('t') {
                    return Err(Error::Parse("expected header starting with 't'".into()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .ok_or_else(|| Error::Parse(format!("line {}: empty row", lineno + 1)))?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let row: Vec<f64> = fields
                .map(|f| {
                    f.trim()
                        .parse()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
                })
                .collect::<std::result::Result<_, _>>()?;
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::Parse(format!(
                        "line {}: expected {} components",
                        lineno + 1,
                        first.len()
                    )));
                }
            }
            times.push(t);
            rows.push(row);
        }
        if rows.len() < 2 || rows[0].is_empty() {
            return Err(Error::Parse("need at least two rows and one component".into()));
        }
        let h = times[1] - times[0];
        if h <= 0.0 {
            return Err(Error::Parse("times must increase".into()));
        }
        for (j, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0) {
                return Err(Error::GridMismatch(format!(
                    "nonuniform step between rows {} and {}",
                    j + 1,
                    j + 2
                )));
            }
        }
        let k = 1.0 / h;
        if (k - k.round()).abs() > 1e-6 || k.round() < 1.0 {
            return Err(Error::GridMismatch(format!(
                "grid step {h} is not the reciprocal of an integer"
            )));
        }
        let n_per_unit = k.round() as usize;
        let mut values = Array2::zeros((rows.len(), rows[0].len()));
        for (j, row) in rows.iter().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                values[(j, i)] = x;
            }
        }
        NoisePath::from_values(values, n_per_unit)
    }

    pub fn read_csv_file<P: AsRef<Path>>(path: P) -> Result<NoisePath> {
        let file = std::fs::File::open(path)?;
        NoisePath::from_csv(std::io::BufReader::new(file))
    }
}

/// Kolmogorov-Smirnov check of the one-step increment marginals against the
/// Gaussian law implied by the Hurst index and covariance weights. Increments
/// of fractional noise are long-range dependent, so the sample count is
/// deflated to an effective size via the theoretical autocorrelations before
/// the threshold is applied; this is a sanity diagnostic, not an exact test.
#[derive(Debug, Clone, Serialize)]
pub struct GaussianityReport {
    pub statistic: f64,
    pub threshold: f64,
    pub n_samples: usize,
    pub effective_samples: f64,
    pub passes: bool,
}

pub fn gaussianity_diagnostic(
    path: &NoisePath,
    hurst: f64,
    covariance: &[f64],
    significance: f64,
) -> Result<GaussianityReport> {
    use statrs::distribution::{ContinuousCDF, Normal};
    if covariance.len() != path.n_modes() {
        return Err(Error::GridMismatch(format!(
            "{} covariance weights for {} components",
            covariance.len(),
            path.n_modes()
        )));
    }
    let n = path.n_steps();
    let scale = path.h().powf(hurst);
    let mut z: Vec<f64> = Vec::with_capacity(n * path.n_modes());
    for (i, &cov_i) in covariance.iter().enumerate() {
        let amp = cov_i.sqrt() * scale;
        if amp == 0.0 {
            continue;
        }
        for j in 0..n {
            z.push((path.values[(j + 1, i)] - path.values[(j, i)]) / amp);
        }
    }
    if z.is_empty() {
        return Err(Error::InvalidParam("no nondegenerate components".into()));
    }
    z.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let total = z.len();
    let mut stat: f64 = 0.0;
    for (idx, &x) in z.iter().enumerate() {
        let f = normal.cdf(x);
        stat = stat.max(f - idx as f64 / total as f64);
        stat = stat.max((idx + 1) as f64 / total as f64 - f);
    }
    // effective sample size under the fGn autocorrelation
    let mut infl = 1.0;
    for k in 1..n {
        infl += 2.0 * (1.0 - k as f64 / n as f64) * fgn_autocov(hurst, k);
    }
    let effective = total as f64 / infl.max(1.0);
    // asymptotic Kolmogorov quantile: K(c) = 1 - 2 sum (-1)^{j-1} e^{-2 j^2 c^2}
    let c_alpha = (-0.5 * (significance / 2.0).ln()).sqrt();
    let threshold = c_alpha / effective.sqrt();
    Ok(GaussianityReport {
        statistic: stat,
        threshold,
        n_samples: total,
        effective_samples: effective,
        passes: stat <= threshold,
    })
}

/// Growth diagnostic for the unit-block seminorms: fits
/// `log(1 + |||w|||_{block i})` against `i`. A tempered path keeps the
/// fitted slope near zero; exponential growth would show as a positive
/// slope of order one.
#[derive(Debug, Clone, Serialize)]
pub struct TemperednessReport {
    pub block_seminorms: Vec<f64>,
    pub log_slope: f64,
    pub max_block: f64,
}

pub fn temperedness_diagnostic(path: &NoisePath, beta: f64) -> Result<TemperednessReport> {
    let units = path.units();
    if units < 2 {
        return Err(Error::Horizon("need at least two unit blocks".into()));
    }
    let mut blocks = Vec::with_capacity(units);
    for i in 0..units {
        blocks.push(path.block_seminorm(i, beta)?);
    }
    let ys: Vec<f64> = blocks.iter().map(|r| (1.0 + r).ln()).collect();
    let nf = units as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    Ok(TemperednessReport {
        max_block: blocks.iter().cloned().fold(0.0, f64::max),
        block_seminorms: blocks,
        log_slope: sxy / sxx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn var(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn embedding_matches_direct_dft_for_small_grid() {
        let mut sampler = FbmSampler::new(0.75).unwrap();
        let lambda = sampler.embedding_spectrum(4);
        let m = 8;
        let row: Vec<f64> = (0..m).map(|j| fgn_autocov(0.75, j.min(m - j))).collect();
        for (k, &lk) in lambda.iter().enumerate() {
            let mut acc = 0.0;
            for (j, c) in row.iter().enumerate() {
                acc += c * (-2.0 * std::f64::consts::PI * (j * k) as f64 / m as f64).cos();
            }
            assert_relative_eq!(lk, acc, epsilon = 1e-12);
        }
    }

    #[test]
    fn embedding_spectrum_nonnegative_across_hurst_range() {
        for &h in &[0.55, 0.6, 0.7, 0.75, 0.85, 0.95] {
            let mut sampler = FbmSampler::new(h).unwrap();
            for &n in &[8usize, 64, 256, 1024] {
                let lambda = sampler.embedding_spectrum(n);
                let max = lambda.iter().cloned().fold(0.0, f64::max);
                let min = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(
                    min >= -1e-9 * max,
                    "H={h}, n={n}: min eigenvalue {min:.3e}"
                );
            }
        }
    }

    #[test]
    fn cholesky_factor_reproduces_covariance() {
        let n = 48;
        let entry = |i: usize, j: usize| fgn_autocov(0.8, i.abs_diff(j));
        let l = cholesky_lower(&entry, n).unwrap();
        for i in 0..n {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += l[i * n + k] * l[j * n + k];
                }
                assert_relative_eq!(acc, entry(i, j), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn increment_law_matches_fbm_covariance() {
        // Var[B(1)] = 1 and E[B(1)(B(2)-B(1))] = (2^{2H} - 2)/2 on a unit
        // grid, for both synthesizers, within 3 Monte Carlo standard errors.
        let hurst = 0.75;
        let reps = 3000;
        let cross_exact = 0.5 * (2f64.powf(2.0 * hurst) - 2.0);
        for forced in [false, true] {
            let mut sampler = if forced {
                FbmSampler::with_forced_cholesky(hurst).unwrap()
            } else {
                FbmSampler::new(hurst).unwrap()
            };
            let mut b1 = Vec::with_capacity(reps);
            let mut prod = Vec::with_capacity(reps);
            for r in 0..reps {
                let mut rng = stream_rng(977 + forced as u64, stream(roles::AUDIT, r as u64));
                let fgn = sampler.sample_unit_fgn(2, &mut rng).unwrap();
                b1.push(fgn[0]);
                prod.push(fgn[0] * fgn[1]);
            }
            let v = var(&b1);
            let se_v = 1.0 * (2.0 / (reps as f64 - 1.0)).sqrt();
            assert!((v - 1.0).abs() <= 3.0 * se_v, "Var[B(1)] = {v}");
            let mean_prod = prod.iter().sum::<f64>() / reps as f64;
            let se_p = (var(&prod) / reps as f64).sqrt();
            assert!(
                (mean_prod - cross_exact).abs() <= 3.0 * se_p,
                "cross moment {mean_prod} vs {cross_exact} (forced={forced})"
            );
        }
    }

    #[test]
    fn path_components_scale_with_covariance() {
        let spec = FbmSpec::new(0.7, 4, 1).unwrap();
        let cov = [0.5, 0.125, 0.02];
        let mut sampler = FbmSampler::new(0.7).unwrap();
        let reps = 2000;
        let mut finals = vec![Vec::with_capacity(reps); cov.len()];
        for r in 0..reps {
            let path = sampler.sample_path(&spec, &cov, 31, r as u32).unwrap();
            assert_eq!(path.values().nrows(), 5);
            assert!(path.value(0).iter().all(|&x| x == 0.0));
            for (i, f) in finals.iter_mut().enumerate() {
                f.push(path.value(4)[i]);
            }
        }
        for (i, f) in finals.iter().enumerate() {
            let v = var(f);
            let se = cov[i] * (2.0 / (reps as f64 - 1.0)).sqrt();
            assert!(
                (v - cov[i]).abs() <= 3.0 * se,
                "component {i}: Var = {v}, want {}",
                cov[i]
            );
        }
    }

    #[test]
    fn component_streams_do_not_depend_on_mode_count() {
        let spec = FbmSpec::new(0.75, 8, 2).unwrap();
        let mut sampler = FbmSampler::new(0.75).unwrap();
        let small = sampler.sample_path(&spec, &[0.3, 0.1], 7, 0).unwrap();
        let large = sampler.sample_path(&spec, &[0.3, 0.1, 0.05], 7, 0).unwrap();
        for j in 0..=spec.total_steps() {
            for i in 0..2 {
                assert_eq!(small.values()[(j, i)], large.values()[(j, i)]);
            }
        }
    }

    #[test]
    fn wiener_shift_matches_definition_and_composes() {
        let spec = FbmSpec::new(0.75, 8, 3).unwrap();
        let mut sampler = FbmSampler::new(0.75).unwrap();
        let path = sampler.sample_path(&spec, &[0.4, 0.2], 11, 0).unwrap();
        let tau = 5;
        let shifted = path.wiener_shift(tau).unwrap();
        assert_eq!(shifted.n_steps(), path.n_steps() - tau);
        for j in 0..=shifted.n_steps() {
            for i in 0..2 {
                let expect = path.values()[(j + tau, i)] - path.values()[(tau, i)];
                assert_eq!(shifted.values()[(j, i)], expect);
            }
        }
        // theta_a . theta_b = theta_{a+b} up to roundoff in the rebasing
        let twice = path.wiener_shift(3).unwrap().wiener_shift(2).unwrap();
        let once = path.wiener_shift(5).unwrap();
        for j in 0..=twice.n_steps() {
            for i in 0..2 {
                assert_relative_eq!(
                    twice.values()[(j, i)],
                    once.values()[(j, i)],
                    epsilon = 1e-14
                );
            }
        }
    }

    #[test]
    fn block_seminorm_equals_shifted_unit_seminorm() {
        let spec = FbmSpec::new(0.8, 16, 4).unwrap();
        let mut sampler = FbmSampler::new(0.8).unwrap();
        let path = sampler.sample_path(&spec, &[0.5, 0.25], 5, 0).unwrap();
        for unit in 0..4 {
            let direct = path.block_seminorm(unit, 0.7).unwrap();
            let shifted = path
                .shift_units(unit)
                .unwrap()
                .truncate_steps(16)
                .unwrap()
                .holder_seminorm(0.7);
            assert_eq!(shifted.mode, SeminormMode::Exact);
            assert_relative_eq!(direct, shifted.value, max_relative = 1e-12);
        }
    }

    #[test]
    fn exact_seminorm_on_handmade_path() {
        // one component, nodes [0, 1, 0.5] at spacing 1/2, beta = 1/2:
        // candidate ratios |1|/sqrt(1/2), |0.5|/1, |0.5|/sqrt(1/2)
        let values = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 0.5]).unwrap();
        let path = NoisePath::from_values(values, 2).unwrap();
        let est = path.holder_seminorm(0.5);
        assert_eq!(est.mode, SeminormMode::Exact);
        assert_relative_eq!(est.value, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn dyadic_seminorm_brackets_exact() {
        let spec = FbmSpec::new(0.75, 100, 2).unwrap();
        let mut sampler = FbmSampler::new(0.75).unwrap();
        let path = sampler.sample_path(&spec, &[0.6, 0.3, 0.1], 13, 0).unwrap();
        let beta = 0.7;
        let exact = path.holder_seminorm_with(beta, SeminormMode::Exact);
        let dyadic = path.holder_seminorm_with(beta, SeminormMode::Dyadic);
        assert!(dyadic <= exact * (1.0 + 1e-15));
        assert!(dyadic >= exact * (1.0 - 2f64.powf(-beta)));
        // auto mode switches to dyadic on long grids
        let long = sampler
            .sample_path(&FbmSpec::new(0.75, 1100, 1).unwrap(), &[0.5], 13, 0)
            .unwrap();
        assert_eq!(long.holder_seminorm(beta).mode, SeminormMode::Dyadic);
    }

    #[test]
    fn gaussianity_diagnostic_accepts_healthy_path() {
        let spec = FbmSpec::new(0.75, 512, 1).unwrap();
        let cov = [0.5, 0.125, 0.056, 0.031];
        let mut sampler = FbmSampler::new(0.75).unwrap();
        let path = sampler.sample_path(&spec, &cov, 23, 0).unwrap();
        let report = gaussianity_diagnostic(&path, 0.75, &cov, 0.01).unwrap();
        assert!(
            report.passes,
            "KS statistic {} above threshold {}",
            report.statistic, report.threshold
        );
        assert!(report.effective_samples < report.n_samples as f64);
    }

    #[test]
    fn temperedness_slope_is_small_for_stationary_blocks() {
        let spec = FbmSpec::new(0.75, 32, 8).unwrap();
        let mut sampler = FbmSampler::new(0.75).unwrap();
        let path = sampler.sample_path(&spec, &[0.5, 0.2], 41, 0).unwrap();
        let report = temperedness_diagnostic(&path, 0.7).unwrap();
        assert_eq!(report.block_seminorms.len(), 8);
        assert!(
            report.log_slope.abs() < 0.5,
            "fitted log slope {}",
            report.log_slope
        );
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let spec = FbmSpec::new(0.75, 8, 2).unwrap();
        let mut sampler = FbmSampler::new(0.75).unwrap();
        let path = sampler.sample_path(&spec, &[0.4, 0.1], 3, 0).unwrap();
        let mut buf = Vec::new();
        path.to_csv(&mut buf).unwrap();
        let back = NoisePath::from_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.n_per_unit(), 8);
        assert_eq!(back.values(), path.values());
    }

    #[test]
    fn subsample_keeps_every_stride_node() {
        let spec = FbmSpec::new(0.75, 8, 2).unwrap();
        let mut sampler = FbmSampler::new(0.75).unwrap();
        let path = sampler.sample_path(&spec, &[0.4], 3, 0).unwrap();
        let coarse = path.subsample(2).unwrap();
        assert_eq!(coarse.n_per_unit(), 4);
        assert_eq!(coarse.n_steps(), 8);
        for j in 0..=8 {
            assert_eq!(coarse.values()[(j, 0)], path.values()[(2 * j, 0)]);
        }
        assert!(path.subsample(3).is_err());
    }

    #[test]
    fn eval_component_interpolates_linearly() {
        let values = Array2::from_shape_vec((3, 1), vec![0.0, 2.0, 1.0]).unwrap();
        let path = NoisePath::from_values(values, 2).unwrap();
        assert_relative_eq!(path.eval_component(0, 0.25), 1.0, epsilon = 1e-15);
        assert_relative_eq!(path.eval_component(0, 0.75), 1.5, epsilon = 1e-15);
        assert_relative_eq!(path.eval_component(0, 1.0), 1.0, epsilon = 1e-15);
    }
}
