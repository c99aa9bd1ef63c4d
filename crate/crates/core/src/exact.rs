//! Exact diagonalization in the fixed-N Fock sector: sparse Hamiltonian,
//! low spectrum with translation labels, exact propagation under the ramp
//! and the mode decomposition of the current.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::krylov::{dot, expm_apply, lowest_eigenpair, norm};
use crate::model::{
    current_terms, hamiltonian_terms, hopping_terms, interaction_terms, local_current_term, AnnealSchedule, BHParams,
    TermList,
};
use crate::tdvp::{Record, TimeSeries};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Largest sector the ED oracle builds.
pub const MAX_SECTOR_DIM: usize = 200_000;
/// Sectors up to this size are diagonalized densely.
pub const DENSE_LIMIT: usize = 2_500;

/// Occupation vectors with `Σ n_j = N` and `n_j < d`, in lexicographic order.
#[derive(Clone, Debug)]
pub struct FockBasis {
    l: usize,
    d: usize,
    n: usize,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

impl FockBasis {
    pub fn new(l: usize, d: usize, n: usize) -> Result<Self> {
        if l == 0 || d < 2 || d > 255 {
            return Err(Error::Invalid(format!("bad lattice L={l}, d={d}")));
        }
        if n > (d - 1) * l {
            return Err(Error::Invalid(format!("N = {n} does not fit into L = {l} sites with d = {d}")));
        }
        let mut states = Vec::new();
        let mut cur = vec![0u8; l];
        fn fill(pos: usize, left: usize, d: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>, cap: usize) -> bool {
            let l = cur.len();
            if pos == l {
                if left == 0 {
                    if out.len() == cap {
                        return false;
                    }
                    out.push(cur.clone());
                }
                return true;
            }
            let room = (d - 1) * (l - pos - 1);
            for k in 0..d.min(left + 1) {
                if left - k > room {
                    continue;
                }
                cur[pos] = k as u8;
                if !fill(pos + 1, left - k, d, cur, out, cap) {
                    return false;
                }
            }
            cur[pos] = 0;
            true
        }
        if !fill(0, n, d, &mut cur, &mut states, MAX_SECTOR_DIM) {
            return Err(Error::Capacity(format!(
                "sector L={l}, N={n}, d={d} exceeds {MAX_SECTOR_DIM} states"
            )));
        }
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self { l, d, n, states, index })
    }

    pub fn for_params(p: &BHParams) -> Result<Self> {
        p.validate()?;
        Self::new(p.l, p.d, p.n)
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn index_of(&self, occ: &[u8]) -> Option<usize> {
        self.index.get(occ).copied()
    }

    /// Index of every state after moving the occupation of site `j` to `j+1`.
    pub fn translation_map(&self) -> Vec<usize> {
        let l = self.l;
        self.states
            .iter()
            .map(|s| {
                let shifted: Vec<u8> = (0..l).map(|j| s[(j + l - 1) % l]).collect();
                self.index[&shifted]
            })
            .collect()
    }

    pub fn translate(&self, v: &[C64]) -> Vec<C64> {
        let map = self.translation_map();
        let mut out = vec![ZERO; v.len()];
        for (i, &j) in map.iter().enumerate() {
            out[j] = v[i];
        }
        out
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.n];
        self.apply_into(x, &mut y, C64::new(1.0, 0.0));
        y
    }

    /// `y += alpha · A x`
    pub fn apply_into(&self, x: &[C64], y: &mut [C64], alpha: C64) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi += alpha * acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[k])] += self.vals[k];
            }
        }
        m
    }

    pub fn expectation(&self, v: &[C64]) -> C64 {
        dot(v, &self.apply(v)) / dot(v, v)
    }

    /// Largest `|A_ij − conj(A_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let mut entries: HashMap<(usize, usize), C64> = HashMap::new();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                *entries.entry((i, self.cols[k])).or_insert(ZERO) += self.vals[k];
            }
        }
        entries
            .iter()
            .map(|(&(i, j), v)| (v - entries.get(&(j, i)).copied().unwrap_or(ZERO).conj()).norm())
            .fold(0.0, f64::max)
    }
}

/// Matrix of a term list in the sector spanned by `basis`. Terms leaving the
/// sector are rejected.
pub fn sector_operator(terms: &TermList, basis: &FockBasis) -> Result<SparseMatrix> {
    if terms.l() != basis.l || terms.d() != basis.d {
        return Err(Error::Invalid("operator and basis live on different lattices".into()));
    }
    if terms.terms().iter().any(|t| t.charge() != 0) {
        return Err(Error::Invalid("operator does not conserve the particle number".into()));
    }
    // every factor as a map occupation -> (new occupation, amplitude)
    let factors: Vec<Vec<(usize, Vec<Option<(u8, C64)>>)>> = terms
        .terms()
        .iter()
        .map(|t| {
            t.factors
                .iter()
                .map(|(site, op)| {
                    let table = (0..basis.d as i32)
                        .map(|n| {
                            let m = n + op.charge();
                            op.block(&[m, n]).filter(|_| m >= 0).map(|b| (m as u8, b.data()[0]))
                        })
                        .collect();
                    (*site, table)
                })
                .collect()
        })
        .collect();
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    // row i of A collects <i|A|j>; build column-wise then transpose
    let mut triplets: Vec<(usize, usize, C64)> = Vec::new();
    let mut out = vec![0u8; basis.l];
    for (col, s) in basis.states.iter().enumerate() {
        for (term, fs) in terms.terms().iter().zip(&factors) {
            out.copy_from_slice(s);
            let mut amp = term.coef;
            for (site, table) in fs {
                match table[out[*site] as usize] {
                    Some((m, a)) => {
                        out[*site] = m;
                        amp *= a;
                    }
                    None => {
                        amp = ZERO;
                        break;
                    }
                }
            }
            if amp != ZERO {
                let row = basis.index_of(&out).expect("number-conserving term left the sector");
                triplets.push((row, col, amp));
            }
        }
    }
    triplets.sort_by_key(|t| (t.0, t.1));
    let n = basis.dim();
    let mut it = triplets.into_iter().peekable();
    for i in 0..n {
        while let Some(&(r, c, v)) = it.peek() {
            if r != i {
                break;
            }
            it.next();
            if cols.len() > row_ptr[i] && *cols.last().unwrap() == c {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
            }
        }
        row_ptr.push(cols.len());
    }
    Ok(SparseMatrix { n, row_ptr, cols, vals })
}

pub fn build_sector_hamiltonian(p: &BHParams) -> Result<(FockBasis, SparseMatrix)> {
    let basis = FockBasis::for_params(p)?;
    let h = sector_operator(&hamiltonian_terms(p)?, &basis)?;
    Ok((basis, h))
}

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    /// ascending
    pub energies: Vec<f64>,
    /// orthonormal eigenvectors, one per energy
    pub vectors: Vec<Vec<C64>>,
    /// `⟨α|T|α⟩` rounded to the nearest `L`-th root of unity
    pub translation: Vec<C64>,
    /// `m` with `translation = exp(2πi m / L)`
    pub momentum: Vec<usize>,
    /// `c_α = ⟨α|ψ⟩` when a state was supplied
    pub overlaps: Option<Vec<C64>>,
}

impl SpectrumResult {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Indices of states with unit translation eigenvalue, ascending in energy.
    pub fn unit_translation(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.momentum[i] == 0).collect()
    }

    /// Gap between the two lowest unit-translation states.
    pub fn translation_one_gap(&self) -> Result<f64> {
        let idx = self.unit_translation();
        if idx.len() < 2 {
            return Err(Error::Numerical("fewer than two unit-translation states in the computed spectrum".into()));
        }
        Ok(self.energies[idx[1]] - self.energies[idx[0]])
    }

    pub fn with_overlaps(mut self, psi: &[C64]) -> Self {
        self.overlaps = Some(self.vectors.iter().map(|v| dot(v, psi)).collect());
        self
    }

    /// Rows `(index, energy, translation phase angle, |c|²)`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,energy,translation_phase,overlap_sqr")?;
        for i in 0..self.len() {
            let c2 = self.overlaps.as_ref().map(|c| c[i].norm_sqr()).unwrap_or(f64::NAN);
            writeln!(w, "{i},{},{},{}", self.energies[i], self.translation[i].arg(), c2)?;
        }
        Ok(())
    }
}

/// Hermitian eigen-decomposition through nalgebra, eigenvalues ascending.
fn dense_eigh(m: DMatrix<C64>) -> (Vec<f64>, Vec<Vec<C64>>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = order.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    (vals, vecs)
}

/// Rotate every degenerate energy cluster so that its members are also
/// translation eigenvectors, and label them.
fn label_translation(basis: &FockBasis, energies: &[f64], vectors: &mut [Vec<C64>]) -> (Vec<C64>, Vec<usize>) {
    let l = basis.l as f64;
    let scale = energies.iter().map(|e| e.abs()).fold(1.0, f64::max);
    let mut start = 0;
    while start < energies.len() {
        let mut end = start + 1;
        while end < energies.len() && energies[end] - energies[end - 1] < 1e-8 * scale {
            end += 1;
        }
        let g = end - start;
        if g > 1 {
            let tv: Vec<Vec<C64>> = vectors[start..end].iter().map(|v| basis.translate(v)).collect();
            let m = DMatrix::from_fn(g, g, |i, j| dot(&vectors[start + i], &tv[j]));
            // M is normal; a generic Hermitian combination of its Hermitian
            // and anti-Hermitian parts shares its eigenvectors
            let herm = (&m + m.adjoint()) + (&m - m.adjoint()) * C64::new(0.0, -0.7071);
            let (_, rot) = dense_eigh(herm);
            let old: Vec<Vec<C64>> = vectors[start..end].to_vec();
            for (k, r) in rot.iter().enumerate() {
                let mut v = vec![ZERO; old[0].len()];
                for (c, o) in r.iter().zip(&old) {
                    for (x, y) in v.iter_mut().zip(o) {
                        *x += c * y;
                    }
                }
                let nv = norm(&v);
                v.iter_mut().for_each(|x| *x /= nv);
                vectors[start + k] = v;
            }
        }
        start = end;
    }
    let mut labels = Vec::with_capacity(vectors.len());
    let mut momenta = Vec::with_capacity(vectors.len());
    for v in vectors.iter() {
        let t = dot(v, &basis.translate(v));
        let m = ((t.arg() * l / (2.0 * std::f64::consts::PI)).round() as i64).rem_euclid(basis.l as i64) as usize;
        momenta.push(m);
        labels.push(C64::from_polar(1.0, 2.0 * std::f64::consts::PI * m as f64 / l));
    }
    (labels, momenta)
}

/// Lowest `k` eigenpairs (all of them when `k ≥ dim`), labelled by their
/// translation eigenvalue.
pub fn low_spectrum(h: &SparseMatrix, basis: &FockBasis, k: usize) -> Result<SpectrumResult> {
    if k == 0 {
        return Err(Error::Invalid("need at least one eigenstate".into()));
    }
    let n = h.dim();
    let (energies, mut vectors) = if n <= DENSE_LIMIT {
        let (mut e, mut v) = dense_eigh(h.to_dense());
        // keep whole degenerate clusters at the cut
        let mut keep = k.min(n);
        while keep < n && e[keep] - e[keep - 1] < 1e-8 * e[keep - 1].abs().max(1.0) {
            keep += 1;
        }
        e.truncate(keep);
        v.truncate(keep);
        (e, v)
    } else {
        let mut e = Vec::new();
        let mut v: Vec<Vec<C64>> = Vec::new();
        for j in 0..k.min(n) {
            // deterministic, generic start vector
            let start: Vec<C64> =
                (0..n).map(|i| C64::new(((i * 7 + j * 13) % 17) as f64 - 8.0, ((i * 5 + j) % 11) as f64 - 5.0)).collect();
            let (ej, vj, info) = lowest_eigenpair(|x| h.apply(x), &start, &v, 1e-10, 500, 60)
                .map_err(|err| Error::Numerical(format!("state {j}: {err}")))?;
            if info.residual > 1e-8 {
                return Err(Error::Numerical(format!("state {j} residual {:.2e}", info.residual)));
            }
            e.push(ej);
            v.push(vj);
        }
        let mut order: Vec<usize> = (0..e.len()).collect();
        order.sort_by(|&a, &b| e[a].partial_cmp(&e[b]).unwrap());
        (order.iter().map(|&i| e[i]).collect(), order.iter().map(|&i| v[i].clone()).collect())
    };
    let (translation, momentum) = label_translation(basis, &energies, &mut vectors);
    Ok(SpectrumResult { energies, vectors, translation, momentum, overlaps: None })
}

/// Sector operators needed to record observables.
struct Observables {
    hop: SparseMatrix,
    int: SparseMatrix,
    current: SparseMatrix,
    local: Vec<SparseMatrix>,
}

impl Observables {
    fn new(p: &BHParams, basis: &FockBasis) -> Result<Self> {
        let unit = p.with_u(1.0);
        Ok(Self {
            hop: sector_operator(&hopping_terms(p)?, basis)?,
            int: sector_operator(&interaction_terms(&unit)?, basis)?,
            current: sector_operator(&current_terms(p)?, basis)?,
            local: (1..=p.l).map(|k| sector_operator(&local_current_term(p, k)?, basis)).collect::<Result<_>>()?,
        })
    }

    fn hamiltonian(&self, x: &[C64], u: f64) -> Vec<C64> {
        let mut y = self.hop.apply(x);
        self.int.apply_into(x, &mut y, C64::new(u, 0.0));
        y
    }

    fn record(&self, psi: &[C64], t: f64, u: f64) -> Record {
        let nrm = norm(psi);
        let ev = |m: &SparseMatrix| dot(psi, &m.apply(psi)).re / (nrm * nrm);
        Record {
            t,
            u,
            current: ev(&self.current),
            local: self.local.iter().map(ev).collect(),
            energy: dot(psi, &self.hamiltonian(psi, u)).re / (nrm * nrm),
            norm: nrm,
            max_bond: 0,
            discarded: 0.0,
        }
    }
}

/// Ground state of the sector Hamiltonian at `p`.
pub fn ground_state(p: &BHParams) -> Result<(f64, Vec<C64>)> {
    let (basis, h) = build_sector_hamiltonian(p)?;
    let s = low_spectrum(&h, &basis, 1)?;
    Ok((s.energies[0], s.vectors[0].clone()))
}

/// Propagate `psi0` under `H(U(t))` with the fourth-order commutator-free
/// Magnus scheme, `U` sampled at the two Gauss points of every step. Rows
/// are recorded every `stride` steps and at the end, in the same layout as
/// the tree runs (bond dimension reported as 0).
pub fn exact_evolve(
    psi0: &[C64],
    p: &BHParams,
    sched: &AnnealSchedule,
    dt: f64,
    stride: usize,
) -> Result<(TimeSeries, Vec<C64>)> {
    p.validate()?;
    if !(dt > 0.0) || stride == 0 {
        return Err(Error::Config("time step and stride must be positive".into()));
    }
    let basis = FockBasis::for_params(p)?;
    if psi0.len() != basis.dim() {
        return Err(Error::Invalid(format!("state has {} amplitudes, sector has {}", psi0.len(), basis.dim())));
    }
    let obs = Observables::new(p, &basis)?;
    let steps = (sched.t_total / dt).round() as usize;
    if ((steps as f64) * dt - sched.t_total).abs() > 1e-9 * sched.t_total.max(1.0) {
        return Err(Error::Config(format!("total time {} is not a multiple of the time step {dt}", sched.t_total)));
    }
    let s3 = 3f64.sqrt();
    let (a1, a2) = ((3.0 - 2.0 * s3) / 12.0, (3.0 + 2.0 * s3) / 12.0);
    let (c1, c2) = (0.5 - s3 / 6.0, 0.5 + s3 / 6.0);
    let mut psi = psi0.to_vec();
    let mut ts = TimeSeries::new(p.l);
    ts.push(obs.record(&psi, 0.0, sched.u_at(0.0)?))?;
    for k in 0..steps {
        let t = k as f64 * dt;
        let (u1, u2) = (sched.u_at(t + c1 * dt)?, sched.u_at(t + c2 * dt)?);
        // H is affine in U and α1 + α2 = 1/2, so each exponential is a half
        // step with an averaged interaction
        for ueff in [2.0 * (a2 * u1 + a1 * u2), 2.0 * (a1 * u1 + a2 * u2)] {
            psi = expm_apply(|x| obs.hamiltonian(x, ueff), &psi, 0.5 * dt, 1e-13, 40)?.0;
        }
        if (k + 1) % stride == 0 || k + 1 == steps {
            let t = (k + 1) as f64 * dt;
            ts.push(obs.record(&psi, t, sched.u_at(t)?))?;
        }
    }
    Ok((ts, psi))
}

/// One term of `I(t) = Σ c*_{α'} c_α ⟨α'|Î|α⟩ e^{−i(E_α − E_{α'})t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurrentMode {
    pub alpha: usize,
    pub alpha_prime: usize,
    pub weight: C64,
    /// `E_α − E_{α'}`
    pub frequency: f64,
}

/// All modes of the current signal of `psi` (given at time `t_ref`) under
/// the spectrum `spec`, skipping states with `|c| < cutoff`.
pub fn current_mode_decomposition(
    spec: &SpectrumResult,
    psi: &[C64],
    current: &SparseMatrix,
    cutoff: f64,
) -> Vec<CurrentMode> {
    let c: Vec<C64> = spec.vectors.iter().map(|v| dot(v, psi)).collect();
    let active: Vec<usize> = (0..c.len()).filter(|&i| c[i].norm() >= cutoff).collect();
    let iv: Vec<Vec<C64>> = active.iter().map(|&a| current.apply(&spec.vectors[a])).collect();
    let mut modes = Vec::with_capacity(active.len() * active.len());
    for (ia, &a) in active.iter().enumerate() {
        for &b in &active {
            let m = dot(&spec.vectors[b], &iv[ia]);
            modes.push(CurrentMode {
                alpha: a,
                alpha_prime: b,
                weight: c[b].conj() * c[a] * m,
                frequency: spec.energies[a] - spec.energies[b],
            });
        }
    }
    modes
}

/// `I(t_ref + τ)` from a mode list.
pub fn reconstruct_current(modes: &[CurrentMode], tau: f64) -> f64 {
    modes.iter().map(|m| (m.weight * C64::from_polar(1.0, -m.frequency * tau)).re).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params(l: usize, d: usize, u: f64) -> BHParams {
        BHParams { l, j: 1.0, u, phi: 0.7 * PI, d, n: l }
    }

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn basis_is_complete_and_ordered() {
        let b = FockBasis::new(2, 3, 2).unwrap();
        assert_eq!(b.dim(), 3);
        assert_eq!(b.state(0), &[0, 2]);
        assert_eq!(b.state(2), &[2, 0]);
        // hard-core free count: compositions of N into L parts
        let b = FockBasis::new(5, 6, 5).unwrap();
        assert_eq!(b.dim(), binom(9, 4));
        // brute force count for a truncated case
        let b = FockBasis::new(8, 3, 8).unwrap();
        let brute = (0..3usize.pow(8))
            .filter(|&x| {
                let mut y = x;
                (0..8).map(|_| {
                    let r = y % 3;
                    y /= 3;
                    r
                })
                .sum::<usize>()
                    == 8
            })
            .count();
        assert_eq!(b.dim(), brute);
        for i in 0..b.dim() {
            assert_eq!(b.index_of(b.state(i)), Some(i));
            if i > 0 {
                assert!(b.state(i - 1) < b.state(i));
            }
        }
        assert!(FockBasis::new(2, 2, 3).is_err());
    }

    #[test]
    fn classical_two_site_diagonal() {
        let p = BHParams { j: 0.0, ..params(2, 3, 5.0) };
        let (b, h) = build_sector_hamiltonian(&p).unwrap();
        let m = h.to_dense();
        let idx = |o: [u8; 2]| b.index_of(&o).unwrap();
        assert_eq!(m[(idx([2, 0]), idx([2, 0]))].re, 5.0);
        assert_eq!(m[(idx([1, 1]), idx([1, 1]))].re, 0.0);
        assert_eq!(m[(idx([0, 2]), idx([0, 2]))].re, 5.0);
    }

    #[test]
    fn sector_matrix_is_the_dense_block() {
        let p = params(4, 3, 1.3);
        let (b, h) = build_sector_hamiltonian(&p).unwrap();
        assert!(h.hermiticity_error() < 1e-14);
        let full = hamiltonian_terms(&p).unwrap().dense_matrix().unwrap();
        let code = |s: &[u8]| s.iter().fold(0usize, |acc, &x| acc * 3 + x as usize);
        let m = h.to_dense();
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                assert!((m[(i, j)] - full[(code(b.state(i)), code(b.state(j)))]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn translation_commutes() {
        let p = params(6, 3, 2.0);
        let (b, h) = build_sector_hamiltonian(&p).unwrap();
        let v: Vec<C64> = (0..b.dim()).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let lhs = b.translate(&h.apply(&v));
        let rhs = h.apply(&b.translate(&v));
        let err: f64 = lhs.iter().zip(&rhs).map(|(a, c)| (a - c).norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn ground_state_has_unit_translation() {
        for l in [3, 4, 5, 6] {
            let (b, h) = build_sector_hamiltonian(&params(l, 3, 3.0)).unwrap();
            let s = low_spectrum(&h, &b, 4).unwrap();
            assert_eq!(s.momentum[0], 0, "L={l}");
            for w in s.energies.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn classical_excited_manifold() {
        let l = 5;
        let p = BHParams { j: 0.0, ..params(l, 4, 3.0) };
        let (b, h) = build_sector_hamiltonian(&p).unwrap();
        let s = low_spectrum(&h, &b, 1000).unwrap();
        let deg = s.energies.iter().filter(|e| (**e - 3.0).abs() < 1e-12).count();
        assert_eq!(deg, l * (l - 1));
        assert!(s.energies[0].abs() < 1e-12);
        assert!((s.energies[1] - 3.0).abs() < 1e-12);
        // each momentum appears l − 1 times in the manifold
        for m in 0..l {
            let c = (1..=deg).filter(|&i| s.momentum[i] == m).count();
            assert_eq!(c, l - 1);
        }
    }

    #[test]
    fn lanczos_and_dense_spectra_agree() {
        let p = params(6, 3, 2.5);
        let (b, h) = build_sector_hamiltonian(&p).unwrap();
        let dense = low_spectrum(&h, &b, 3).unwrap();
        let mut e = Vec::new();
        let mut v: Vec<Vec<C64>> = Vec::new();
        for j in 0..3 {
            let start: Vec<C64> = (0..b.dim()).map(|i| C64::new(((i + j) % 7) as f64, (i % 3) as f64)).collect();
            let (ej, vj, _) = lowest_eigenpair(|x| h.apply(x), &start, &v, 1e-10, 500, 60).unwrap();
            e.push(ej);
            v.push(vj);
        }
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (x, y) in e.iter().zip(&dense.energies) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn evolution_keeps_fock_eigenstates_and_norm() {
        let p = BHParams { j: 0.0, ..params(4, 3, 2.0) };
        let b = FockBasis::for_params(&p).unwrap();
        let mut psi = vec![ZERO; b.dim()];
        psi[b.index_of(&[2, 0, 1, 1]).unwrap()] = C64::new(1.0, 0.0);
        let sched = AnnealSchedule::constant(2.0, 1.0).unwrap();
        let (ts, _) = exact_evolve(&psi, &p, &sched, 0.01, 10).unwrap();
        for r in &ts.rows {
            assert!((r.energy - 2.0).abs() < 1e-12);
            assert!(r.current.abs() < 1e-14);
        }
        let p = params(4, 3, 2.0);
        let (_, g) = ground_state(&p).unwrap();
        let sched = AnnealSchedule::from_rate(2.0, 6.0, 1.0, 3.0).unwrap();
        let (ts, _) = exact_evolve(&g, &p, &sched, 0.01, 10).unwrap();
        for r in &ts.rows {
            assert!((r.norm - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn magnus_scheme_is_fourth_order() {
        let p = params(4, 3, 2.0);
        let (_, g) = ground_state(&p).unwrap();
        let sched = AnnealSchedule::from_ramp_time(2.0, 5.0, 2.0, 2.0).unwrap();
        let run = |dt: f64| exact_evolve(&g, &p, &sched, dt, 1_000_000).unwrap().1;
        let fine = run(0.0025);
        let err = |v: Vec<C64>| v.iter().zip(&fine).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let e1 = err(run(0.04));
        let e2 = err(run(0.02));
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "{e1} {e2} {ratio}");
    }

    #[test]
    fn mode_decomposition_identities() {
        let p = params(4, 3, 4.0);
        let (b, h) = build_sector_hamiltonian(&p).unwrap();
        let spec = low_spectrum(&h, &b, usize::MAX).unwrap();
        let cur = sector_operator(&current_terms(&p).unwrap(), &b).unwrap();
        // ground state: a single constant mode
        let g = spec.vectors[0].clone();
        let modes = current_mode_decomposition(&spec, &g, &cur, 1e-12);
        let i0 = cur.expectation(&g).re;
        for tau in [0.0, 1.3, 7.0] {
            assert!((reconstruct_current(&modes, tau) - i0).abs() < 1e-12);
        }
        // two-level superposition of the lowest unit-translation states
        let idx = spec.unit_translation();
        let (s1, s2) = (idx[0], idx[1]);
        let pw: f64 = 0.2;
        let psi: Vec<C64> = spec.vectors[s1]
            .iter()
            .zip(&spec.vectors[s2])
            .map(|(x, y)| x * (1.0 - pw).sqrt() + y * pw.sqrt())
            .collect();
        let m12 = dot(&spec.vectors[s1], &cur.apply(&spec.vectors[s2])).norm();
        let modes = current_mode_decomposition(&spec, &psi, &cur, 1e-12);
        let gap = spec.energies[s2] - spec.energies[s1];
        let samples: Vec<f64> = (0..2000).map(|k| reconstruct_current(&modes, k as f64 * 0.01)).collect();
        let amp = 0.5 * (samples.iter().cloned().fold(f64::MIN, f64::max) - samples.iter().cloned().fold(f64::MAX, f64::min));
        assert!((amp - 2.0 * (pw * (1.0 - pw)).sqrt() * m12).abs() < 1e-3 * amp.max(1e-3), "{amp}");
        let osc = modes.iter().filter(|m| m.frequency > 0.0 && m.weight.norm() > 1e-12).collect::<Vec<_>>();
        assert_eq!(osc.len(), 1);
        assert!((osc[0].frequency - gap).abs() < 1e-12);
        // Parseval and the residual-energy identity
        let spec = spec.with_overlaps(&psi);
        let c = spec.overlaps.as_ref().unwrap();
        assert!((c.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs() < 1e-10);
        let eres = h.expectation(&psi).re - spec.energies[0];
        let sum: f64 = c.iter().zip(&spec.energies).map(|(z, e)| z.norm_sqr() * (e - spec.energies[0])).sum();
        assert!((eres - sum).abs() < 1e-10);
        assert!((eres - pw * gap).abs() < 1e-10);
    }

    #[test]
    fn reconstruction_matches_propagation_after_the_ramp() {
        let p = params(4, 3, 2.0);
        let (_, g) = ground_state(&p).unwrap();
        let sched = AnnealSchedule::from_rate(2.0, 5.0, 1.0, 4.0).unwrap();
        let dt = 0.005;
        let (ts, _) = exact_evolve(&g, &p, &sched, dt, 20).unwrap();
        // state at t0 = 1.5
        let pre = AnnealSchedule { t_total: sched.t0, ..sched.clone() };
        let (_, psi_t0) = exact_evolve(&g, &p, &pre, dt, 1_000_000).unwrap();
        let pf = p.with_u(5.0);
        let (b, h) = build_sector_hamiltonian(&pf).unwrap();
        let spec = low_spectrum(&h, &b, usize::MAX).unwrap();
        let cur = sector_operator(&current_terms(&pf).unwrap(), &b).unwrap();
        let modes = current_mode_decomposition(&spec, &psi_t0, &cur, 0.0);
        for r in ts.rows.iter().filter(|r| r.t >= sched.t0) {
            let want = reconstruct_current(&modes, r.t - sched.t0);
            assert!((r.current - want).abs() < 1e-8, "t={}: {} vs {want}", r.t, r.current);
        }
    }
}
