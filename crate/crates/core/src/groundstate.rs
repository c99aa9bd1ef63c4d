//! Variational ground states on the tree by two-node sweeps.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::lowest_eigenpair;
use crate::model::{current_terms, hamiltonian_terms, BHParams, TermList};
use crate::ttn::{expectation, Environment, TTNState, TreeTopology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsConfig {
    pub max_bond: usize,
    /// singular values below this fraction of the largest are dropped
    pub rel_threshold: f64,
    /// sweeps stop once the energy changes by less than this (in J)
    pub energy_tol: f64,
    pub max_sweeps: usize,
    pub eig_tol: f64,
    pub eig_max_restarts: usize,
    pub krylov_dim: usize,
}

impl Default for GsConfig {
    fn default() -> Self {
        Self {
            max_bond: 60,
            rel_threshold: 1e-10,
            energy_tol: 1e-10,
            max_sweeps: 50,
            eig_tol: 1e-10,
            eig_max_restarts: 200,
            krylov_dim: 24,
        }
    }
}

impl GsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_bond == 0 {
            return Err(Error::Config("max_bond must be at least 1".into()));
        }
        if !(self.energy_tol > 0.0 && self.eig_tol > 0.0) || !(self.rel_threshold >= 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.krylov_dim < 2 {
            return Err(Error::Config("krylov_dim must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub state: TTNState,
    pub energy: f64,
    /// energy at the end of every sweep
    pub sweep_energies: Vec<f64>,
    pub converged: bool,
    /// largest discarded weight of any split during the last sweep
    pub max_discarded: f64,
}

/// Move the center onto the pair `(a, b)` along the shorter path.
pub(crate) fn center_on_pair(state: &mut TTNState, a: usize, b: usize) -> Result<()> {
    let c = state.center();
    if c == a || c == b {
        return Ok(());
    }
    let topo = state.topology().clone();
    let target = if topo.path(c, a).len() <= topo.path(c, b).len() { a } else { b };
    state.isometrize_to(target)
}

/// Optimize the block of `(a, b)` and leave the center at `b`.
fn optimize_pair(state: &mut TTNState, env: &mut Environment, a: usize, b: usize, cfg: &GsConfig) -> Result<(f64, f64)> {
    center_on_pair(state, a, b)?;
    env.prepare(state, &[a, b])?;
    let h = env.effective_hamiltonian_2(state, (a, b))?;
    let theta = state.pair_tensor(a, b)?;
    let v0 = h.layout().flatten(&theta);
    let (e, v, _) = lowest_eigenpair(|x| h.apply(x), &v0, &[], cfg.eig_tol, cfg.eig_max_restarts, cfg.krylov_dim)?;
    let theta = h.layout().unflatten(&v);
    let discarded = state.split_pair(a, b, &theta, cfg.max_bond, cfg.rel_threshold)?;
    state.normalize()?;
    Ok((e, discarded))
}

/// One forward pass over the pairs followed by one backward pass.
fn sweep(state: &mut TTNState, env: &mut Environment, cfg: &GsConfig) -> Result<(f64, f64)> {
    let pairs = state.topology().pairs().to_vec();
    let mut energy = f64::NAN;
    let mut worst: f64 = 0.0;
    for &(a, b) in &pairs {
        let (e, w) = optimize_pair(state, env, a, b, cfg)?;
        energy = e;
        worst = worst.max(w);
    }
    for &(a, b) in pairs.iter().rev() {
        let (e, w) = optimize_pair(state, env, b, a, cfg)?;
        energy = e;
        worst = worst.max(w);
    }
    Ok((energy, worst))
}

/// Sweep from a seeded random state in the `n`-particle sector until the
/// energy settles.
pub fn find_ground_state(
    terms: &TermList,
    topo: Arc<TreeTopology>,
    n: usize,
    cfg: &GsConfig,
    seed: u64,
) -> Result<GroundState> {
    cfg.validate()?;
    if terms.l() != topo.l() {
        return Err(Error::Invalid("operator and tree have different sizes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = TTNState::random(topo, terms.d(), n, cfg.max_bond.min(4), &mut rng)?;
    refine_ground_state(terms, state, cfg)
}

/// Sweep starting from a given state (e.g. a ground state at nearby
/// parameters).
pub fn refine_ground_state(terms: &TermList, mut state: TTNState, cfg: &GsConfig) -> Result<GroundState> {
    cfg.validate()?;
    let mut env = Environment::new(terms.clone())?;
    let mut sweep_energies = Vec::new();
    let mut converged = false;
    let mut max_discarded = 0.0;
    for _ in 0..cfg.max_sweeps {
        let (e, w) = sweep(&mut state, &mut env, cfg)?;
        if !e.is_finite() {
            return Err(Error::Numerical(format!("ground-state sweep produced energy {e}")));
        }
        max_discarded = w;
        let prev = sweep_energies.last().copied();
        sweep_energies.push(e);
        if let Some(prev) = prev {
            if (prev - e).abs() < cfg.energy_tol {
                converged = true;
                break;
            }
        }
    }
    let energy = expectation(&state, terms)?.re;
    Ok(GroundState { state, energy, sweep_energies, converged, max_discarded })
}

/// Ground-state current `⟨Î⟩` along a grid of interaction strengths. Each
/// point starts from the previous ground state.
pub fn ground_current_curve(p: &BHParams, us: &[f64], cfg: &GsConfig, seed: u64) -> Result<Vec<(f64, f64)>> {
    p.validate()?;
    if us.iter().any(|u| !u.is_finite()) {
        return Err(Error::Config("interaction grid must be finite".into()));
    }
    let topo = Arc::new(TreeTopology::new(p.l)?);
    let mut out = Vec::with_capacity(us.len());
    let mut prev: Option<TTNState> = None;
    for &u in us {
        let q = p.with_u(u);
        let h = hamiltonian_terms(&q)?;
        let gs = match prev.take() {
            Some(s) => refine_ground_state(&h, s, cfg)?,
            None => find_ground_state(&h, topo.clone(), q.n, cfg, seed)?,
        };
        let i = expectation(&gs.state, &current_terms(&q)?)?.re;
        out.push((u, i));
        prev = Some(gs.state);
    }
    Ok(out)
}
