//! Strong-coupling expansion of the Mott gap at unit filling: first-order
//! degenerate theory in the holon-doublon band and second-order shifts of
//! the ground and first excited state. Energies are in units of `J`
//! (first order) and `J²/U` (second order).

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};

type Config = Vec<u8>;

/// `V|c⟩` for `V = −Σ_j (e^{iφ/L} b†_{j+1} b_j + h.c.)` on a ring of
/// `c.len()` sites, without any occupation cutoff.
fn hop(c: &[u8], phi: f64) -> Vec<(Config, C64)> {
    let l = c.len();
    let w = C64::from_polar(1.0, phi / l as f64);
    let mut out = Vec::with_capacity(2 * l);
    for j in 0..l {
        let k = (j + 1) % l;
        // b†_k b_j with weight −w, and b†_j b_k with weight −w*
        for (from, to, coef) in [(j, k, -w), (k, j, -w.conj())] {
            if c[from] == 0 {
                continue;
            }
            let amp = ((c[from] as f64) * (c[to] as f64 + 1.0)).sqrt();
            let mut d = c.to_vec();
            d[from] -= 1;
            d[to] += 1;
            out.push((d, coef * amp));
        }
    }
    out
}

/// Interaction energy `Σ n(n−1)/2` in units of `U`.
fn interaction(c: &[u8]) -> f64 {
    c.iter().map(|&n| (n as f64) * (n as f64 - 1.0) / 2.0).sum()
}

/// Unit filling with a holon at `h` and a doublon at `h + s + 1`.
fn holon_doublon(l: usize, h: usize, s: usize) -> Config {
    let mut c = vec![1u8; l];
    c[h] = 0;
    c[(h + s + 1) % l] = 2;
    c
}

/// Translation-symmetric holon-doublon states `|s⟩`, `s = 0..L−2`, as
/// amplitudes over configurations.
#[derive(Clone, Debug)]
pub struct HolonDoublonBasis {
    l: usize,
}

impl HolonDoublonBasis {
    pub fn new(l: usize) -> Result<Self> {
        if !(3..=512).contains(&l) {
            return Err(Error::Invalid(format!("holon-doublon basis needs 3 ≤ L ≤ 512, got {l}")));
        }
        Ok(Self { l })
    }

    pub fn len(&self) -> usize {
        self.l - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|s⟩ = L^{-1/2} Σ_q T^q |0 1…1 2 1…1⟩` with `s` ones between the
    /// holon and the doublon.
    pub fn state(&self, s: usize) -> HashMap<Config, C64> {
        let a = C64::new(1.0 / (self.l as f64).sqrt(), 0.0);
        (0..self.l).map(|q| (holon_doublon(self.l, q, s), a)).collect()
    }

    /// `Σ_s v_s |s⟩`
    pub fn combine(&self, v: &[C64]) -> HashMap<Config, C64> {
        let mut out = HashMap::new();
        for (s, &vs) in v.iter().enumerate() {
            for (c, a) in self.state(s) {
                *out.entry(c).or_insert(C64::new(0.0, 0.0)) += vs * a;
            }
        }
        out
    }

    /// `⟨s'|V|s⟩` computed by acting with the hopping on configurations.
    pub fn perturbation_matrix(&self, phi: f64) -> DMatrix<C64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for s in 0..n {
            let image = apply(&self.state(s), phi);
            for sp in 0..n {
                m[(sp, s)] = self.state(sp).iter().map(|(c, a)| a.conj() * image.get(c).copied().unwrap_or_default()).sum();
            }
        }
        m
    }
}

fn apply(psi: &HashMap<Config, C64>, phi: f64) -> HashMap<Config, C64> {
    let mut out: HashMap<Config, C64> = HashMap::new();
    for (c, a) in psi {
        for (d, v) in hop(c, phi) {
            *out.entry(d).or_insert(C64::new(0.0, 0.0)) += a * v;
        }
    }
    out
}

/// The tridiagonal first-order matrix in closed form:
/// `⟨s'|V|s⟩ = −3(δ_{s,s'+1} e^{−iφ/L} + δ_{s',s+1} e^{iφ/L})`.
pub fn first_order_matrix(l: usize, phi: f64) -> DMatrix<C64> {
    let n = l - 1;
    let w = C64::from_polar(1.0, phi / l as f64);
    DMatrix::from_fn(n, n, |sp, s| {
        if s == sp + 1 {
            -3.0 * w.conj()
        } else if sp == s + 1 {
            -3.0 * w
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Smallest eigenvalue of the first-order matrix (in `J`) and its
/// eigenvector in the `|s⟩` basis.
pub fn first_order(l: usize, phi: f64) -> Result<(f64, Vec<C64>)> {
    if l < 3 {
        return Err(Error::Invalid(format!("first-order theory needs L ≥ 3, got {l}")));
    }
    let eig = first_order_matrix(l, phi).symmetric_eigen();
    let k = eig.eigenvalues.imin();
    Ok((eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
}

/// Second-order ground-state shift as a multiple of `J²/U`, in closed form.
pub fn second_order_ground(l: usize) -> f64 {
    -4.0 * l as f64
}

/// Second-order ground-state shift by summing over the one-hop images of the
/// Mott state.
pub fn second_order_ground_enumerated(l: usize, phi: f64) -> f64 {
    let gs = vec![1u8; l];
    let image = apply(&HashMap::from([(gs.clone(), C64::new(1.0, 0.0))]), phi);
    image
        .iter()
        .filter(|(c, _)| **c != gs)
        .map(|(c, a)| a.norm_sqr() / (0.0 - interaction(c)))
        .sum()
}

/// Lexicographically smallest rotation and the size of its orbit.
fn canonical(c: &[u8]) -> (Config, usize) {
    let l = c.len();
    let mut best = c.to_vec();
    let mut period = l;
    for r in 1..l {
        let rot: Config = (0..l).map(|j| c[(j + r) % l]).collect();
        if rot == c && period == l {
            period = r;
        }
        if rot < best {
            best = rot;
        }
    }
    (best, period)
}

/// Second-order shift of the first excited state `Σ_v v_s|s⟩` as a multiple of
/// `J²/U`. The sum runs over intermediate configurations outside the
/// holon-doublon band, one per translation orbit: the state is translation
/// invariant, so every member of an orbit carries the same weight.
pub fn second_order_excited_with(l: usize, phi: f64, v: &[C64]) -> Result<f64> {
    let basis = HolonDoublonBasis::new(l)?;
    if v.len() != basis.len() {
        return Err(Error::Invalid("eigenvector does not match the holon-doublon basis".into()));
    }
    let psi = basis.combine(v);
    // representatives of all orbits reachable by one hop, holon fixed at 0
    let mut reps: HashMap<Config, usize> = HashMap::new();
    for s in 0..basis.len() {
        for (d, _) in hop(&holon_doublon(l, 0, s), phi) {
            if (interaction(&d) - 1.0).abs() < 1e-12 && d.iter().filter(|&&n| n == 0).count() == 1 {
                continue;
            }
            let (rep, period) = canonical(&d);
            reps.entry(rep).or_insert(period);
        }
    }
    let mut total = 0.0;
    for (rep, period) in reps {
        // ⟨rep|V|ψ⟩ = Σ_c conj(⟨c|V|rep⟩) ψ(c) for Hermitian V
        let amp: C64 = hop(&rep, phi).iter().map(|(c, a)| a.conj() * psi.get(c).copied().unwrap_or_default()).sum();
        total += period as f64 * amp.norm_sqr() / (1.0 - interaction(&rep));
    }
    Ok(total)
}

/// Same sum over individual configurations; used as a check.
pub fn second_order_excited_brute(l: usize, phi: f64, v: &[C64]) -> Result<f64> {
    let basis = HolonDoublonBasis::new(l)?;
    let image = apply(&basis.combine(v), phi);
    Ok(image
        .iter()
        .filter(|(c, _)| !((interaction(c) - 1.0).abs() < 1e-12 && c.iter().filter(|&&n| n == 0).count() == 1))
        .map(|(c, a)| a.norm_sqr() / (1.0 - interaction(c)))
        .sum())
}

pub fn second_order_excited(l: usize, phi: f64) -> Result<f64> {
    let (_, v) = first_order(l, phi)?;
    second_order_excited_with(l, phi, &v)
}

/// Coefficients of `ħΔ(U) = aU + bJ + cJ²/U` with the ingredients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbGap {
    pub l: usize,
    pub phi: f64,
    /// ground state, orders 0, 1, 2 (units 1, J, J²/U)
    pub e0: [f64; 3],
    /// first excited state, orders 0, 1, 2 (units U, J, J²/U)
    pub e1: [f64; 3],
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PerturbGap {
    pub fn new(l: usize, phi: f64) -> Result<Self> {
        let (e11, v) = first_order(l, phi)?;
        let e12 = second_order_excited_with(l, phi, &v)?;
        let e02 = second_order_ground(l);
        Ok(Self { l, phi, e0: [0.0, 0.0, e02], e1: [1.0, e11, e12], a: 1.0, b: e11, c: e12 - e02 })
    }

    /// Gap through second order.
    pub fn gap(&self, u: f64, j: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::Invalid(format!("gap expansion needs U > 0, got {u}")));
        }
        Ok(self.a * u + self.b * j + self.c * j * j / u)
    }

    /// Gap through first order only.
    pub fn gap_first_order(&self, u: f64, j: f64) -> f64 {
        self.a * u + self.b * j
    }
}

/// `ħΔ(U)` at hopping `J` for a ring of `L` sites with flux `φ`.
pub fn gap(u: f64, j: f64, l: usize, phi: f64) -> Result<f64> {
    PerturbGap::new(l, phi)?.gap(u, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn basis_matrix_is_the_closed_form() {
        for l in [3, 4, 7, 10] {
            for phi in [0.0, 0.7 * PI, 2.1] {
                let b = HolonDoublonBasis::new(l).unwrap();
                let m = b.perturbation_matrix(phi);
                let f = first_order_matrix(l, phi);
                assert!((m - f).iter().all(|z| z.norm() < 1e-12), "L={l} phi={phi}");
            }
        }
    }

    #[test]
    fn first_order_is_flux_independent() {
        for l in [4, 9, 32] {
            let want = -6.0 * (PI / l as f64).cos();
            for phi in [0.0, 0.3, 0.7 * PI, 5.0] {
                let (e, v) = first_order(l, phi).unwrap();
                assert!((e - want).abs() < 1e-9);
                let nv: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                assert!((nv - 1.0).abs() < 1e-12);
            }
        }
        assert!((first_order(4, 0.0).unwrap().0 + 4.242_640_687).abs() < 1e-8);
        assert!(first_order(2, 0.0).is_err());
    }

    #[test]
    fn ground_shift_enumeration_matches_closed_form() {
        for l in 3..=8 {
            assert!((second_order_ground_enumerated(l, 0.7 * PI) - second_order_ground(l)).abs() < 1e-12);
        }
        assert_eq!(second_order_ground(4), -16.0);
        assert!((second_order_ground_enumerated(6, 0.4) + 24.0).abs() < 1e-12);
    }

    #[test]
    fn orbit_sum_matches_brute_force() {
        for l in [3, 4, 5, 8, 12] {
            for phi in [0.0, 0.7 * PI] {
                let (_, v) = first_order(l, phi).unwrap();
                let a = second_order_excited_with(l, phi, &v).unwrap();
                let b = second_order_excited_brute(l, phi, &v).unwrap();
                assert!((a - b).abs() < 1e-9 * b.abs(), "L={l}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gap_limits() {
        let g = PerturbGap::new(8, 0.7 * PI).unwrap();
        assert_eq!(g.e0[0], 0.0);
        assert_eq!(g.e0[1], 0.0);
        assert_eq!(g.a, 1.0);
        let u = 1e6;
        assert!((g.gap(u, 1.0).unwrap() / u - 1.0).abs() < 1e-5);
        assert!(g.gap(0.0, 1.0).is_err());
        assert!((g.gap(5.0, 1.0).unwrap() - g.gap_first_order(5.0, 1.0) - g.c / 5.0).abs() < 1e-12);
    }
}
