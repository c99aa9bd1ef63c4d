//! Post-processing of current time series: oscillation amplitude, residual
//! energy, spectral peak, the `ε_res = α I₀²` fit and the local-current
//! spread.

use std::io::Write;

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{build_sector_hamiltonian, low_spectrum, sector_operator};
use crate::model::{current_terms, AnnealSchedule, BHParams};
use crate::tdvp::TimeSeries;

/// Negative residual energies above this are treated as convergence noise.
pub const RESIDUAL_CLIP: f64 = 1e-7;
const ZERO_PAD: usize = 8;
const MIN_SAMPLES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub t1: f64,
    pub t2: f64,
}

impl AnalysisWindow {
    pub fn new(t1: f64, t2: f64, sched: &AnnealSchedule) -> Result<Self> {
        let w = Self { t1, t2 };
        w.validate(sched)?;
        Ok(w)
    }

    /// `[t0 + 2, T]` in units of `ħ/J`.
    pub fn default_for(sched: &AnnealSchedule) -> Result<Self> {
        Self::new(sched.t0 + 2.0, sched.t_total, sched)
    }

    pub fn validate(&self, sched: &AnnealSchedule) -> Result<()> {
        if !(self.t1 < self.t2) {
            return Err(Error::Config(format!("analysis window [{}, {}] is empty", self.t1, self.t2)));
        }
        if !(self.t1 > sched.t0) {
            return Err(Error::Config(format!("analysis window must start after the ramp ends at {}", sched.t0)));
        }
        if self.t2 > sched.t_total + 1e-9 {
            return Err(Error::Config(format!("analysis window ends after the run ({} > {})", self.t2, sched.t_total)));
        }
        Ok(())
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.t1 - 1e-12 && t <= self.t2 + 1e-12
    }
}

fn windowed(series: &TimeSeries, w: &AnalysisWindow) -> (Vec<f64>, Vec<f64>) {
    series.rows.iter().filter(|r| w.contains(r.t)).map(|r| (r.t, r.current)).unzip()
}

/// Half the peak-to-peak range of a signal.
pub fn half_range(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Invalid("empty signal".into()));
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(0.5 * (max - min))
}

/// Oscillation amplitude `I₀` of the total current over the window.
pub fn amplitude(series: &TimeSeries, w: &AnalysisWindow) -> Result<f64> {
    let (_, i) = windowed(series, w);
    if i.is_empty() {
        return Err(Error::Invalid(format!("no samples in window [{}, {}]", w.t1, w.t2)));
    }
    half_range(&i)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualEnergy {
    /// clipped at zero when the raw value is within the tolerance below it
    pub value: f64,
    pub raw: f64,
}

/// `ε_res = E_final − E_ground`.
pub fn residual_energy(final_energy: f64, ground_energy: f64) -> Result<ResidualEnergy> {
    let raw = final_energy - ground_energy;
    if !raw.is_finite() {
        return Err(Error::Numerical("non-finite residual energy".into()));
    }
    let value = if raw < 0.0 && raw >= -RESIDUAL_CLIP { 0.0 } else { raw };
    Ok(ResidualEnergy { value, raw })
}

/// Residual energy from the last row of a series. The final row must have
/// been measured at `u_final`.
pub fn residual_energy_of_series(series: &TimeSeries, u_final: f64, ground_energy: f64) -> Result<ResidualEnergy> {
    let last = series.rows.last().ok_or_else(|| Error::Invalid("empty time series".into()))?;
    if (last.u - u_final).abs() > 1e-9 * u_final.abs().max(1.0) {
        return Err(Error::Invalid(format!(
            "series ends at U = {}, ground energy belongs to U = {u_final}",
            last.u
        )));
    }
    residual_energy(last.energy, ground_energy)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult {
    /// `ω ≥ 0` in units of `J/ħ`
    pub omega: Vec<f64>,
    /// `I(ω)` on the same grid
    pub spectrum: Vec<C64>,
    pub omega0: f64,
    pub peak: f64,
}

/// Fourier transform of the mean-subtracted current over the window,
/// zero-padded eightfold, with the positive-frequency peak refined by a
/// parabola through the three largest neighbouring points.
pub fn fourier_peak(series: &TimeSeries, w: &AnalysisWindow) -> Result<SpectralResult> {
    let (t, i) = windowed(series, w);
    fourier_peak_samples(&t, &i)
}

pub fn fourier_peak_samples(t: &[f64], i: &[f64]) -> Result<SpectralResult> {
    let n = t.len();
    if n < MIN_SAMPLES || i.len() != n {
        return Err(Error::Invalid(format!("need at least {MIN_SAMPLES} samples for a spectrum, got {n}")));
    }
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    if t.windows(2).any(|p| ((p[1] - p[0]) - dt).abs() > 1e-6 * dt) {
        return Err(Error::Invalid("spectrum needs uniformly spaced samples".into()));
    }
    let mean = i.iter().sum::<f64>() / n as f64;
    let m = ZERO_PAD * n;
    let mut buf: Vec<C64> = i.iter().map(|x| C64::new((x - mean) * dt, 0.0)).collect();
    buf.resize(m, C64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let dw = 2.0 * std::f64::consts::PI / (m as f64 * dt);
    let half = m / 2;
    // phase relative to t1 rather than sample zero
    let spectrum: Vec<C64> = (0..=half).map(|k| buf[k] * C64::from_polar(1.0, -(k as f64) * dw * t[0])).collect();
    let omega: Vec<f64> = (0..=half).map(|k| k as f64 * dw).collect();
    let mag: Vec<f64> = spectrum.iter().map(|z| z.norm()).collect();
    let k = (1..=half).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap_or(1);
    let (mut omega0, mut peak) = (omega[k], mag[k]);
    if k > 1 && k < half {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            let x = 0.5 * (a - c) / den;
            omega0 = (k as f64 + x) * dw;
            peak = b - 0.25 * (a - c) * x;
        }
    }
    Ok(SpectralResult { omega, spectrum, omega0, peak })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub gamma: f64,
    pub residual_energy: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaFit {
    pub alpha: f64,
    /// `ε_res/I₀²` per point
    pub ratios: Vec<f64>,
    /// `ratio − α` per point, masked points included
    pub residuals: Vec<f64>,
    pub used: Vec<bool>,
}

impl AlphaFit {
    /// Largest relative deviation of a used ratio from `α`.
    pub fn spread(&self) -> f64 {
        self.ratios
            .iter()
            .zip(&self.used)
            .filter(|(_, &u)| u)
            .map(|(r, _)| ((r - self.alpha) / self.alpha).abs())
            .fold(0.0, f64::max)
    }
}

/// Least-squares constant fit of `ε_res/I₀²` over the points selected by
/// `mask` (all points when `None`).
pub fn fit_alpha(points: &[AlphaPoint], mask: Option<&[bool]>) -> Result<AlphaFit> {
    let used: Vec<bool> = match mask {
        Some(m) if m.len() != points.len() => return Err(Error::Invalid("mask length differs from point count".into())),
        Some(m) => m.to_vec(),
        None => vec![true; points.len()],
    };
    if used.iter().filter(|&&u| u).count() < 3 {
        return Err(Error::Invalid("alpha fit needs at least three points".into()));
    }
    let ratios: Vec<f64> = points.iter().map(|p| p.residual_energy / (p.amplitude * p.amplitude)).collect();
    let sel: Vec<f64> = ratios.iter().zip(&used).filter(|(_, &u)| u).map(|(r, _)| *r).collect();
    if sel.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numerical("alpha fit over a point with vanishing amplitude".into()));
    }
    let alpha = sel.iter().sum::<f64>() / sel.len() as f64;
    let residuals = ratios.iter().map(|r| r - alpha).collect();
    Ok(AlphaFit { alpha, ratios, residuals, used })
}

/// The slowest half of a rate sweep (smallest `γ`, at least three points).
pub fn slow_half_mask(points: &[AlphaPoint]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].gamma.total_cmp(&points[b].gamma));
    let keep = points.len().div_ceil(2).max(3.min(points.len()));
    let mut mask = vec![false; points.len()];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    mask
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoLevelPrediction {
    /// `E₂ − E₁` within the unit-translation sector
    pub gap: f64,
    /// `|⟨1|Î|2⟩|`
    pub matrix_element: f64,
    /// `ħΔ/(4|⟨1|Î|2⟩|²)`: with `|c₂| ≪ 1` the current oscillates with
    /// amplitude `2|c₂⟨1|Î|2⟩|` while `ε_res ≈ |c₂|²ħΔ`
    pub alpha: f64,
    /// `ħΔ/|⟨1|Î|2⟩|²`, the same estimate without the factor of two in the
    /// amplitude
    pub alpha_single_term: f64,
}

/// Two-level prediction of `α` from exact diagonalization at `p`.
pub fn theoretical_alpha(p: &BHParams) -> Result<TwoLevelPrediction> {
    let (basis, h) = build_sector_hamiltonian(p)?;
    let spec = low_spectrum(&h, &basis, 12)?;
    let idx = spec.unit_translation();
    if idx.len() < 2 {
        return Err(Error::Numerical("fewer than two unit-translation states in the computed spectrum".into()));
    }
    let cur = sector_operator(&current_terms(p)?, &basis)?;
    let iv = cur.apply(&spec.vectors[idx[1]]);
    let m = crate::krylov::dot(&spec.vectors[idx[0]], &iv).norm();
    let gap = spec.energies[idx[1]] - spec.energies[idx[0]];
    Ok(TwoLevelPrediction { gap, matrix_element: m, alpha: gap / (4.0 * m * m), alpha_single_term: gap / (m * m) })
}

/// `max_k I_k − min_k I_k` per row.
pub fn local_current_spread(series: &TimeSeries) -> Vec<f64> {
    series
        .rows
        .iter()
        .map(|r| {
            let max = r.local.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = r.local.iter().copied().fold(f64::INFINITY, f64::min);
            if r.local.is_empty() {
                0.0
            } else {
                max - min
            }
        })
        .collect()
}

/// Largest spread over rows inside the window (all rows when `None`).
pub fn max_spread(series: &TimeSeries, w: Option<&AnalysisWindow>) -> f64 {
    local_current_spread(series)
        .into_iter()
        .zip(&series.rows)
        .filter(|(_, r)| w.is_none_or(|w| w.contains(r.t)))
        .map(|(s, _)| s)
        .fold(0.0, f64::max)
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub label: String,
    pub gamma: f64,
    pub max_bond: usize,
    pub amplitude: f64,
    pub residual_energy: f64,
    pub residual_energy_raw: f64,
    pub omega0: f64,
    pub max_spread: f64,
}

impl Summary {
    pub const HEADER: &'static str =
        "label,gamma_in_J_over_hbar,max_bond,I0,eps_res,eps_res_raw,omega0_in_J_over_hbar,max_local_spread";

    /// Summarize a run; `omega0` is NaN when the window is too short for a
    /// spectrum.
    pub fn from_run(
        label: &str,
        series: &TimeSeries,
        sched: &AnnealSchedule,
        w: &AnalysisWindow,
        ground_energy: f64,
        max_bond: usize,
    ) -> Result<Self> {
        let eps = residual_energy_of_series(series, sched.u_f, ground_energy)?;
        let omega0 = fourier_peak(series, w).map(|s| s.omega0).unwrap_or(f64::NAN);
        Ok(Self {
            label: label.to_string(),
            gamma: sched.gamma,
            max_bond,
            amplitude: amplitude(series, w)?,
            residual_energy: eps.value,
            residual_energy_raw: eps.raw,
            omega0,
            max_spread: max_spread(series, Some(w)),
        })
    }

    pub fn write_row<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            self.label,
            self.gamma,
            self.max_bond,
            self.amplitude,
            self.residual_energy,
            self.residual_energy_raw,
            self.omega0,
            self.max_spread
        )?;
        Ok(())
    }
}
