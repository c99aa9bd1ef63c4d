//! Two-node time-dependent variational evolution on the tree and the
//! annealing driver.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundstate::center_on_pair;
use crate::krylov::expm_apply;
use crate::model::{current_terms, hamiltonian_terms, local_current_term, AnnealSchedule, BHParams, TermList};
use crate::symtensor::SymTensor;
use crate::ttn::{expectation, EffectiveHamiltonian, Environment, TTNState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdvpConfig {
    pub dt: f64,
    pub max_bond: usize,
    pub rel_threshold: f64,
    /// error target of the local Krylov exponentials
    pub krylov_tol: f64,
    pub krylov_dim: usize,
    /// steps between recorded rows
    pub stride: usize,
    /// abort when a local evolution changes the norm by more than this
    pub norm_abort: f64,
}

impl Default for TdvpConfig {
    fn default() -> Self {
        Self {
            dt: 2e-3,
            max_bond: 60,
            rel_threshold: 1e-10,
            krylov_tol: 1e-12,
            krylov_dim: 30,
            stride: 10,
            norm_abort: 1e-3,
        }
    }
}

impl TdvpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if self.max_bond == 0 || self.stride == 0 {
            return Err(Error::Config("max_bond and stride must be at least 1".into()));
        }
        if !(self.krylov_tol > 0.0 && self.norm_abort > 0.0 && self.rel_threshold >= 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.krylov_dim < 2 {
            return Err(Error::Config("krylov_dim must be at least 2".into()));
        }
        Ok(())
    }
}

/// `exp(−i·H·dt)` applied to a block; negative `dt` evolves backwards.
pub fn local_evolve(h: &EffectiveHamiltonian, block: &SymTensor, dt: f64, tol: f64, krylov_dim: usize) -> Result<SymTensor> {
    let v = h.layout().flatten(block);
    let (w, _) = expm_apply(|x| h.apply(x), &v, dt, tol, krylov_dim)?;
    Ok(h.layout().unflatten(&w))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepInfo {
    /// summed discarded weight of all splits in the step
    pub discarded: f64,
    /// largest relative norm change of any local evolution
    pub norm_drift: f64,
}

fn check_drift(before: f64, after: f64, cfg: &TdvpConfig, info: &mut StepInfo) -> Result<()> {
    let drift = (after / before - 1.0).abs();
    info.norm_drift = info.norm_drift.max(drift);
    if !(drift <= cfg.norm_abort) {
        return Err(Error::Numerical(format!("norm drift {drift:.3e} in a local evolution exceeds {:.1e}", cfg.norm_abort)));
    }
    Ok(())
}

/// One time step: a single pass over all pairs with the top pair last.
/// Every pair block is evolved forward by `dt`, split, and (except for the
/// top pair) the tensor holding the center is evolved back by `dt`.
pub fn sweep_step(state: &mut TTNState, terms: &TermList, cfg: &TdvpConfig) -> Result<StepInfo> {
    let mut env = Environment::new(terms.clone())?;
    let pairs = state.topology().pairs().to_vec();
    let mut info = StepInfo::default();
    for (lambda, &(a, b)) in pairs.iter().enumerate() {
        center_on_pair(state, a, b)?;
        env.prepare(state, &[a, b])?;
        let h2 = env.effective_hamiltonian_2(state, (a, b))?;
        let theta = state.pair_tensor(a, b)?;
        let evolved = local_evolve(&h2, &theta, cfg.dt, cfg.krylov_tol, cfg.krylov_dim)?;
        check_drift(theta.norm(), evolved.norm(), cfg, &mut info)?;
        info.discarded += state.split_pair(a, b, &evolved, cfg.max_bond, cfg.rel_threshold)?;
        state.normalize()?;
        if lambda + 1 < pairs.len() {
            env.prepare(state, &[b])?;
            let h1 = env.effective_hamiltonian_1(state, b)?;
            let c = state.tensor(b).clone();
            let back = local_evolve(&h1, &c, -cfg.dt, cfg.krylov_tol, cfg.krylov_dim)?;
            check_drift(c.norm(), back.norm(), cfg, &mut info)?;
            state.set_tensor(b, back);
        }
    }
    Ok(info)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub t: f64,
    pub u: f64,
    pub current: f64,
    /// bond currents `I_1..I_L`
    pub local: Vec<f64>,
    pub energy: f64,
    pub norm: f64,
    pub max_bond: usize,
    /// cumulative discarded weight
    pub discarded: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeSeries {
    pub l: usize,
    pub rows: Vec<Record>,
}

impl TimeSeries {
    pub fn new(l: usize) -> Self {
        Self { l, rows: Vec::new() }
    }

    pub fn push(&mut self, r: Record) -> Result<()> {
        if r.local.len() != self.l {
            return Err(Error::Invalid(format!("record has {} bond currents, expected {}", r.local.len(), self.l)));
        }
        if let Some(last) = self.rows.last() {
            if !(r.t > last.t) {
                return Err(Error::Invalid(format!("times must increase: {} after {}", r.t, last.t)));
            }
        }
        self.rows.push(r);
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn currents(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.current).collect()
    }

    pub fn header(l: usize) -> String {
        let mut cols = vec!["t".to_string(), "U".into(), "I_total".into()];
        cols.extend((1..=l).map(|k| format!("I_{k}")));
        cols.extend(["energy", "norm", "max_D", "discarded_weight"].map(String::from));
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "{}", Self::header(self.l))?;
        for r in &self.rows {
            write!(w, "{},{},{}", r.t, r.u, r.current)?;
            for x in &r.local {
                write!(w, ",{x}")?;
            }
            writeln!(w, ",{},{},{},{}", r.energy, r.norm, r.max_bond, r.discarded)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty time series".into()))??;
        let ncol = header.split(',').count();
        if ncol < 7 {
            return Err(Error::Format("time series header has too few columns".into()));
        }
        let l = ncol - 7;
        if header.trim() != Self::header(l) {
            return Err(Error::Format(format!("unexpected time series header: {header}")));
        }
        let mut ts = Self::new(l);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != ncol {
                return Err(Error::Format(format!("row {} has {} columns, expected {ncol}", i + 1, f.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| Error::Format(format!("row {}: bad number {s:?}", i + 1)))
            };
            let local = f[3..3 + l].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            ts.push(Record {
                t: num(f[0])?,
                u: num(f[1])?,
                current: num(f[2])?,
                local,
                energy: num(f[3 + l])?,
                norm: num(f[4 + l])?,
                max_bond: f[5 + l].trim().parse().map_err(|_| Error::Format(format!("row {}: bad max_D", i + 1)))?,
                discarded: num(f[6 + l])?,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(ts)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Observables of `state` under the model `p`.
pub fn measure(state: &TTNState, p: &BHParams, t: f64, discarded: f64) -> Result<Record> {
    let energy = expectation(state, &hamiltonian_terms(p)?)?.re;
    let current = expectation(state, &current_terms(p)?)?.re;
    let local = (1..=p.l)
        .map(|k| Ok(expectation(state, &local_current_term(p, k)?)?.re))
        .collect::<Result<Vec<_>>>()?;
    Ok(Record { t, u: p.u, current, local, energy, norm: state.norm(), max_bond: state.max_bond_dim(), discarded })
}

#[derive(Clone, Debug)]
pub struct AnnealResult {
    pub series: TimeSeries,
    pub state: TTNState,
    /// largest local norm drift seen during the run
    pub max_norm_drift: f64,
}

/// Evolve `state0` under `H(U(t))` from `t = 0` to the schedule's end. The
/// interaction is frozen at the midpoint of every step. Rows are recorded
/// every `cfg.stride` steps and at the final time; `on_row` sees each one as
/// it is produced.
pub fn run_annealing(
    state0: &TTNState,
    p: &BHParams,
    sched: &AnnealSchedule,
    cfg: &TdvpConfig,
    mut on_row: impl FnMut(&Record),
) -> Result<AnnealResult> {
    cfg.validate()?;
    p.validate()?;
    if state0.topology().l() != p.l || state0.local_dim() != p.d || state0.particles() != p.n {
        return Err(Error::Invalid("initial state does not match the model parameters".into()));
    }
    let steps = (sched.t_total / cfg.dt).round() as usize;
    if ((steps as f64) * cfg.dt - sched.t_total).abs() > 1e-9 * sched.t_total.max(1.0) {
        return Err(Error::Config(format!(
            "total time {} is not a multiple of the time step {}",
            sched.t_total, cfg.dt
        )));
    }
    let mut state = state0.clone();
    let mut series = TimeSeries::new(p.l);
    let mut discarded = 0.0;
    let mut max_norm_drift: f64 = 0.0;
    let row = measure(&state, &p.with_u(sched.u_at(0.0)?), 0.0, 0.0)?;
    on_row(&row);
    series.push(row)?;
    for k in 0..steps {
        let u_mid = sched.u_at((k as f64 + 0.5) * cfg.dt)?;
        let info = sweep_step(&mut state, &hamiltonian_terms(&p.with_u(u_mid))?, cfg)?;
        discarded += info.discarded;
        max_norm_drift = max_norm_drift.max(info.norm_drift);
        if (k + 1) % cfg.stride == 0 || k + 1 == steps {
            let t = (k + 1) as f64 * cfg.dt;
            let row = measure(&state, &p.with_u(sched.u_at(t)?), t, discarded)?;
            on_row(&row);
            series.push(row)?;
        }
    }
    Ok(AnnealResult { series, state, max_norm_drift })
}
