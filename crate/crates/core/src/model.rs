//! Bose-Hubbard ring with a Peierls phase: parameters, operator term lists
//! and the interaction ramp. Units: ħ = 1, energies in J, times in 1/J.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symtensor::{ChargeIndex, Dense, Direction, SymTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BHParams {
    /// number of sites; tree states need a power of two
    pub l: usize,
    pub j: f64,
    pub u: f64,
    /// total Peierls phase through the ring
    pub phi: f64,
    /// local dimension, occupations 0..d
    pub d: usize,
    /// particle number
    pub n: usize,
}

impl BHParams {
    /// Unit filling with the default local dimension of 5.
    pub fn unit_filling(l: usize, j: f64, u: f64, phi: f64) -> Self {
        Self { l, j, u, phi, d: 5, n: l }
    }

    pub fn with_u(&self, u: f64) -> Self {
        Self { u, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 2 {
            return Err(Error::Invalid(format!("L = {} must be at least 2", self.l)));
        }
        if self.l > 64 {
            return Err(Error::Invalid(format!("L = {} exceeds the supported maximum of 64", self.l)));
        }
        if self.d < 2 {
            return Err(Error::Invalid(format!("local dimension d = {} must be ≥ 2", self.d)));
        }
        if self.n > (self.d - 1) * self.l {
            return Err(Error::Invalid(format!(
                "N = {} particles do not fit into L = {} sites with d = {}",
                self.n, self.l, self.d
            )));
        }
        if !(self.j.is_finite() && self.u.is_finite() && self.phi.is_finite()) {
            return Err(Error::Invalid("J, U and phi must be finite".into()));
        }
        Ok(())
    }

    fn peierls(&self) -> C64 {
        C64::from_polar(1.0, self.phi / self.l as f64)
    }
}

/// Single-site operators in the truncated occupation basis, as rank-2
/// symmetric tensors with legs `[out, in]`.
#[derive(Clone, Debug)]
pub struct LocalOps {
    pub d: usize,
    pub create: SymTensor,
    pub annihilate: SymTensor,
    pub number: SymTensor,
    /// n(n − 1)
    pub pair: SymTensor,
}

impl LocalOps {
    pub fn new(d: usize) -> Self {
        let phys = ChargeIndex::physical(d, Direction::Out);
        let legs = vec![phys.clone(), phys.flipped()];
        let one = |x: f64| Dense::from_vec(&[1, 1], vec![C64::new(x, 0.0)]);
        let mut create = SymTensor::zeros(legs.clone(), 1);
        let mut annihilate = SymTensor::zeros(legs.clone(), -1);
        let mut number = SymTensor::zeros(legs.clone(), 0);
        let mut pair = SymTensor::zeros(legs, 0);
        for n in 0..d as i32 {
            if n + 1 < d as i32 {
                let amp = ((n + 1) as f64).sqrt();
                create.insert_block(vec![n + 1, n], one(amp)).unwrap();
                annihilate.insert_block(vec![n, n + 1], one(amp)).unwrap();
            }
            if n > 0 {
                number.insert_block(vec![n, n], one(n as f64)).unwrap();
            }
            if n > 1 {
                pair.insert_block(vec![n, n], one((n * (n - 1)) as f64)).unwrap();
            }
        }
        Self { d, create, annihilate, number, pair }
    }

    pub fn physical_index(&self) -> ChargeIndex {
        ChargeIndex::physical(self.d, Direction::Out)
    }
}

/// A product of single-site operators on distinct sites times a coefficient.
#[derive(Clone, Debug)]
pub struct Term {
    /// `(site, operator)` sorted by site
    pub factors: Vec<(usize, SymTensor)>,
    pub coef: C64,
}

impl Term {
    pub fn new(mut factors: Vec<(usize, SymTensor)>, coef: C64) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Invalid("a term needs at least one factor".into()));
        }
        factors.sort_by_key(|f| f.0);
        if factors.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Invalid("term factors must act on distinct sites".into()));
        }
        for (_, op) in &factors {
            if op.rank() != 2 || !op.index(0).pairs_with(op.index(1)) || op.index(0).dir() != Direction::Out {
                return Err(Error::Invalid("term factors must be [out, in] operators on one leg".into()));
            }
        }
        Ok(Self { factors, coef })
    }

    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.factors.iter().map(|f| f.0)
    }

    /// Net particle number change produced by the term.
    pub fn charge(&self) -> i32 {
        self.factors.iter().map(|f| f.1.charge()).sum()
    }
}

/// Ordered sum of [`Term`]s on a ring of `l` sites with local dimension `d`.
#[derive(Clone, Debug)]
pub struct TermList {
    l: usize,
    d: usize,
    terms: Vec<Term>,
}

impl TermList {
    pub fn new(l: usize, d: usize) -> Self {
        Self { l, d, terms: Vec::new() }
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn push(&mut self, term: Term) -> Result<()> {
        let phys = ChargeIndex::physical(self.d, Direction::Out);
        for (site, op) in &term.factors {
            if *site >= self.l {
                return Err(Error::Invalid(format!("term site {site} out of range for L = {}", self.l)));
            }
            if op.index(0) != &phys {
                return Err(Error::Invalid("operator does not match the local dimension".into()));
            }
        }
        self.terms.push(term);
        Ok(())
    }

    pub fn extend(&mut self, other: &TermList) -> Result<()> {
        if other.l != self.l || other.d != self.d {
            return Err(Error::Invalid("term lists live on different lattices".into()));
        }
        self.terms.extend(other.terms.iter().cloned());
        Ok(())
    }

    pub fn scaled(&self, alpha: C64) -> TermList {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coef *= alpha;
        }
        out
    }

    /// Dense matrix over the full `d^L` product space, site 0 the most
    /// significant digit. Only meant for small checks.
    pub fn dense_matrix(&self) -> Result<DMatrix<C64>> {
        let dim = (self.d as u64).checked_pow(self.l as u32).filter(|&x| x <= 1 << 14);
        let Some(dim) = dim else {
            return Err(Error::Capacity(format!("d^L too large for a dense matrix (d={}, L={})", self.d, self.l)));
        };
        let dim = dim as usize;
        let mut h = DMatrix::<C64>::zeros(dim, dim);
        let mut digits = vec![0usize; self.l];
        for col in 0..dim {
            let mut x = col;
            for s in (0..self.l).rev() {
                digits[s] = x % self.d;
                x /= self.d;
            }
            for term in &self.terms {
                let mut amp = term.coef;
                let mut out = digits.clone();
                // factors commute (distinct sites)
                for (site, op) in &term.factors {
                    let n = out[*site] as i32;
                    let m = n + op.charge();
                    match op.block(&[m, n]) {
                        Some(b) if m >= 0 => {
                            amp *= b.data()[0];
                            out[*site] = m as usize;
                        }
                        _ => {
                            amp = C64::new(0.0, 0.0);
                            break;
                        }
                    }
                }
                if amp != C64::new(0.0, 0.0) {
                    let row = out.iter().fold(0usize, |acc, &v| acc * self.d + v);
                    h[(row, col)] += amp;
                }
            }
        }
        Ok(h)
    }
}

fn hopping(p: &BHParams, ops: &LocalOps, list: &mut TermList, bond: usize, scale: C64) -> Result<()> {
    let a = bond;
    let b = (bond + 1) % p.l;
    let w = p.peierls();
    // scale·e^{iφ/L} b†_{j+1} b_j  and  conj(scale)·e^{−iφ/L} b†_j b_{j+1}
    list.push(Term::new(vec![(b, ops.create.clone()), (a, ops.annihilate.clone())], scale * w)?)?;
    list.push(Term::new(vec![(a, ops.create.clone()), (b, ops.annihilate.clone())], (scale * w).conj())?)?;
    Ok(())
}

/// Hopping part only, `−J Σ_j (e^{iφ/L} b†_{j+1} b_j + h.c.)`.
pub fn hopping_terms(p: &BHParams) -> Result<TermList> {
    p.validate()?;
    let ops = LocalOps::new(p.d);
    let mut list = TermList::new(p.l, p.d);
    for bond in 0..p.l {
        hopping(p, &ops, &mut list, bond, C64::new(-p.j, 0.0))?;
    }
    Ok(list)
}

/// Interaction part only, `(U/2) Σ_j n_j(n_j − 1)`.
pub fn interaction_terms(p: &BHParams) -> Result<TermList> {
    p.validate()?;
    let ops = LocalOps::new(p.d);
    let mut list = TermList::new(p.l, p.d);
    for site in 0..p.l {
        list.push(Term::new(vec![(site, ops.pair.clone())], C64::new(0.5 * p.u, 0.0))?)?;
    }
    Ok(list)
}

/// Full ring Hamiltonian: `L` hopping bonds (ring closed) and `L` on-site terms.
pub fn hamiltonian_terms(p: &BHParams) -> Result<TermList> {
    let mut h = hopping_terms(p)?;
    h.extend(&interaction_terms(p)?)?;
    Ok(h)
}

/// Total current `(iJ/L) Σ_j (e^{iφ/L} b†_{j+1} b_j − h.c.)`, which equals `−∂H/∂φ`.
pub fn current_terms(p: &BHParams) -> Result<TermList> {
    p.validate()?;
    let ops = LocalOps::new(p.d);
    let mut list = TermList::new(p.l, p.d);
    let scale = C64::new(0.0, p.j / p.l as f64);
    for bond in 0..p.l {
        hopping(p, &ops, &mut list, bond, scale)?;
    }
    Ok(list)
}

/// Current through the link between sites `k` and `k+1`, with `k` counted
/// from 1 and the ring closed: `iJ (e^{iφ/L} b†_{k+1} b_k − h.c.)`.
pub fn local_current_term(p: &BHParams, k: usize) -> Result<TermList> {
    p.validate()?;
    if k == 0 || k > p.l {
        return Err(Error::Invalid(format!("link index {k} out of range 1..={}", p.l)));
    }
    let ops = LocalOps::new(p.d);
    let mut list = TermList::new(p.l, p.d);
    hopping(p, &ops, &mut list, k - 1, C64::new(0.0, p.j))?;
    Ok(list)
}

/// Linear interaction ramp followed by a plateau.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub u_i: f64,
    pub u_f: f64,
    /// ramp rate γ = (U_f/U_i − 1)/t0
    pub gamma: f64,
    pub t0: f64,
    /// total simulated time
    pub t_total: f64,
}

impl AnnealSchedule {
    /// Ramp specified by its rate; `t0` follows.
    pub fn from_rate(u_i: f64, u_f: f64, gamma: f64, t_total: f64) -> Result<Self> {
        Self::check(u_i, u_f)?;
        let t0 = if u_f == u_i {
            0.0
        } else if gamma > 0.0 {
            (u_f / u_i - 1.0) / gamma
        } else {
            return Err(Error::Invalid("ramp rate must be positive when U_f > U_i".into()));
        };
        Self::finish(u_i, u_f, gamma, t0, t_total)
    }

    /// Ramp specified by its duration; `γ` follows.
    pub fn from_ramp_time(u_i: f64, u_f: f64, t0: f64, t_total: f64) -> Result<Self> {
        Self::check(u_i, u_f)?;
        if u_f > u_i && t0 <= 0.0 {
            return Err(Error::Invalid("ramp time must be positive when U_f > U_i".into()));
        }
        let gamma = if u_f == u_i { 0.0 } else { (u_f / u_i - 1.0) / t0 };
        Self::finish(u_i, u_f, gamma, t0, t_total)
    }

    /// Constant interaction `u` for a duration `t_total`.
    pub fn constant(u: f64, t_total: f64) -> Result<Self> {
        Self::from_ramp_time(u, u, 0.0, t_total)
    }

    fn check(u_i: f64, u_f: f64) -> Result<()> {
        if !(u_i > 0.0 && u_f >= u_i && u_f.is_finite()) {
            return Err(Error::Invalid(format!("need U_f ≥ U_i > 0, got U_i = {u_i}, U_f = {u_f}")));
        }
        Ok(())
    }

    fn finish(u_i: f64, u_f: f64, gamma: f64, t0: f64, t_total: f64) -> Result<Self> {
        if !(t_total >= t0) {
            return Err(Error::Invalid(format!("total time {t_total} shorter than the ramp time {t0}")));
        }
        Ok(Self { u_i, u_f, gamma, t0, t_total })
    }

    pub fn u_at(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::Invalid(format!("negative time {t}")));
        }
        if t >= self.t0 {
            return Ok(self.u_f);
        }
        Ok(self.u_i * (1.0 + self.gamma * t))
    }
}

/// Parse a phase like `0.7pi`, `pi/2`, `0.3` (radians).
pub fn parse_phase(s: &str) -> Option<f64> {
    let s = s.trim().to_ascii_lowercase().replace('π', "pi");
    if let Some((num, den)) = s.split_once('/') {
        return Some(parse_phase(num)? / den.trim().parse::<f64>().ok()?);
    }
    if let Some(head) = s.strip_suffix("pi") {
        let head = head.trim().trim_end_matches('*');
        let f = if head.is_empty() { 1.0 } else { head.parse::<f64>().ok()? };
        return Some(f * PI);
    }
    s.parse().ok()
}
