//! Lanczos-based matrix exponential and lowest-eigenpair solvers for
//! Hermitian linear maps given as closures on flat complex vectors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

fn scale(y: &mut [C64], alpha: f64) {
    for a in y {
        *a *= alpha;
    }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> nalgebra::SymmetricEigen<f64, nalgebra::Dyn> {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    t.symmetric_eigen()
}

/// `|last component of exp(−i T s) e1|` for the tridiagonal `T`.
fn exp_tail_coeff(eig: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>, s: f64) -> f64 {
    let m = eig.eigenvalues.len();
    (0..m)
        .map(|k| C64::from_polar(eig.eigenvectors[(m - 1, k)] * eig.eigenvectors[(0, k)], -eig.eigenvalues[k] * s))
        .sum::<C64>()
        .norm()
}

/// Orthonormal Krylov basis with the tridiagonal projection of the operator.
struct Lanczos {
    basis: Vec<Vec<C64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// norm of the residual after the last vector; zero on invariant subspace
    tail: f64,
}

/// Runs until `max_dim` vectors, an invariant subspace, or until `done`
/// (given the tridiagonal so far and the residual norm) says the basis is
/// large enough.
fn lanczos<F>(
    apply: &mut F,
    start: &[C64],
    max_dim: usize,
    deflate: &[Vec<C64>],
    done: &mut dyn FnMut(&[f64], &[f64], f64) -> bool,
) -> Lanczos
where
    F: FnMut(&[C64]) -> Vec<C64>,
{
    let n = start.len();
    let max_dim = max_dim.min(n).max(1);
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(max_dim);
    let mut alpha: Vec<f64> = Vec::with_capacity(max_dim);
    let mut beta: Vec<f64> = Vec::with_capacity(max_dim);
    let mut v = start.to_vec();
    let nv = norm(&v);
    scale(&mut v, 1.0 / nv);
    let tail;
    loop {
        let mut w = apply(&v);
        let a = dot(&v, &w).re;
        axpy(&mut w, C64::new(-a, 0.0), &v);
        if let Some(prev) = basis.last() {
            axpy(&mut w, C64::new(-beta[beta.len() - 1], 0.0), prev);
        }
        basis.push(v);
        alpha.push(a);
        // full reorthogonalization, twice for stability
        for _ in 0..2 {
            for q in deflate.iter().chain(basis.iter()) {
                let c = dot(q, &w);
                axpy(&mut w, -c, q);
            }
        }
        let b = norm(&w);
        let anorm = alpha.iter().map(|x| x.abs()).fold(0.0, f64::max) + beta.iter().fold(0.0, |m: f64, x| m.max(*x));
        if b <= 1e-13 * anorm.max(1e-300) || b == 0.0 {
            tail = 0.0;
            break;
        }
        if basis.len() == max_dim || done(&alpha, &beta, b) {
            tail = b;
            break;
        }
        beta.push(b);
        scale(&mut w, 1.0 / b);
        v = w;
    }
    Lanczos { basis, alpha, beta, tail }
}

impl Lanczos {
    fn eigen(&self) -> nalgebra::SymmetricEigen<f64, nalgebra::Dyn> {
        tridiagonal_eigen(&self.alpha, &self.beta)
    }

    fn combine(&self, coeffs: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.basis[0].len()];
        for (q, c) in self.basis.iter().zip(coeffs) {
            axpy(&mut out, *c, q);
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpmInfo {
    pub substeps: usize,
    pub matvecs: usize,
    pub error_estimate: f64,
}

/// `exp(−i·H·dt)·v` for Hermitian `H`. The Krylov dimension is capped at
/// `max_dim`; when that is not enough for `tol` the step is subdivided.
pub fn expm_apply<F>(mut apply: F, v: &[C64], dt: f64, tol: f64, max_dim: usize) -> Result<(Vec<C64>, ExpmInfo)>
where
    F: FnMut(&[C64]) -> Vec<C64>,
{
    let nv = norm(v);
    if nv == 0.0 || !nv.is_finite() {
        return Err(Error::Numerical("Krylov exponential of a zero or non-finite vector".into()));
    }
    let mut info = ExpmInfo::default();
    if dt == 0.0 {
        return Ok((v.to_vec(), info));
    }
    let mut cur = v.to_vec();
    let mut remaining = dt;
    let mut step = dt;
    while remaining != 0.0 {
        if step.abs() > remaining.abs() {
            step = remaining;
        }
        let beta0 = norm(&cur);
        let target = step;
        let lz = lanczos(
            &mut |x: &[C64]| {
                info.matvecs += 1;
                apply(x)
            },
            &cur,
            max_dim,
            &[],
            &mut |a, b, tail| a.len() >= 2 && tail * exp_tail_coeff(&tridiagonal_eigen(a, b), target) <= tol,
        );
        let eig = lz.eigen();
        let m = lz.alpha.len();
        // coefficients of exp(−i T s) e1 in the Krylov basis, and the error
        // estimate tail·|last coefficient|
        let coeffs = |s: f64| -> Vec<C64> {
            (0..m)
                .map(|i| {
                    (0..m)
                        .map(|k| {
                            let z = eig.eigenvectors[(i, k)] * eig.eigenvectors[(0, k)];
                            C64::from_polar(z, -eig.eigenvalues[k] * s)
                        })
                        .sum()
                })
                .collect()
        };
        let mut c = coeffs(step);
        let mut err = lz.tail * c[m - 1].norm();
        let mut halvings = 0;
        while err > tol && halvings < 60 {
            step *= 0.5;
            c = coeffs(step);
            err = lz.tail * c[m - 1].norm();
            halvings += 1;
        }
        if err > tol {
            return Err(Error::Numerical(format!("Krylov exponential did not reach tolerance {tol}: {err}")));
        }
        let mut next = lz.combine(&c);
        scale(&mut next, beta0);
        cur = next;
        remaining -= step;
        if remaining.abs() < 1e-15 * dt.abs() {
            remaining = 0.0;
        }
        info.substeps += 1;
        info.error_estimate += err;
        if halvings == 0 {
            step *= 1.5;
        }
    }
    Ok((cur, info))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigInfo {
    pub restarts: usize,
    pub residual: f64,
}

/// Lowest eigenpair of a Hermitian map by restarted Lanczos, started from
/// `v0`, orthogonal to the (orthonormal) vectors in `deflate`.
pub fn lowest_eigenpair<F>(
    mut apply: F,
    v0: &[C64],
    deflate: &[Vec<C64>],
    tol: f64,
    max_restarts: usize,
    krylov_dim: usize,
) -> Result<(f64, Vec<C64>, EigInfo)>
where
    F: FnMut(&[C64]) -> Vec<C64>,
{
    let mut v = v0.to_vec();
    for _ in 0..2 {
        for q in deflate {
            let c = dot(q, &v);
            axpy(&mut v, -c, q);
        }
    }
    if norm(&v) == 0.0 {
        return Err(Error::Numerical("eigensolver start vector is zero".into()));
    }
    let mut last = (f64::INFINITY, f64::INFINITY);
    for restart in 0..=max_restarts {
        let lz = lanczos(&mut apply, &v, krylov_dim, deflate, &mut |a, b, tail| {
            if a.len() < 4 {
                return false;
            }
            let eig = tridiagonal_eigen(a, b);
            let k = eig.eigenvalues.imin();
            tail * eig.eigenvectors[(a.len() - 1, k)].abs() <= tol
        });
        let eig = lz.eigen();
        let k = eig.eigenvalues.imin();
        let y: Vec<C64> = eig.eigenvectors.column(k).iter().map(|&x| C64::new(x, 0.0)).collect();
        let residual = lz.tail * y[y.len() - 1].norm();
        let mut x = lz.combine(&y);
        let nx = norm(&x);
        scale(&mut x, 1.0 / nx);
        let e = eig.eigenvalues[k];
        if residual <= tol || lz.tail == 0.0 {
            return Ok((e, x, EigInfo { restarts: restart, residual }));
        }
        last = (e, residual);
        v = x;
    }
    Err(Error::Numerical(format!(
        "eigensolver did not converge after {max_restarts} restarts (residual {:.3e}, energy {})",
        last.1, last.0
    )))
}

/// Dense Hermitian matrix as an apply-closure; used by tests and small solvers.
pub fn dense_apply(m: &DMatrix<C64>) -> impl FnMut(&[C64]) -> Vec<C64> + '_ {
    move |x: &[C64]| (m * DVector::from_column_slice(x)).as_slice().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&a + a.adjoint()) * C64::new(0.5, 0.0)
    }

    fn random_vec(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    /// exp(−iHdt) through the dense eigendecomposition
    fn dense_expm(h: &DMatrix<C64>, v: &[C64], dt: f64) -> Vec<C64> {
        let n = h.nrows();
        // embed the Hermitian matrix as a real symmetric 2n×2n matrix
        let big = DMatrix::from_fn(2 * n, 2 * n, |i, j| {
            let z = h[(i % n, j % n)];
            match (i < n, j < n) {
                (true, true) | (false, false) => z.re,
                (true, false) => -z.im,
                (false, true) => z.im,
            }
        });
        let eig = big.symmetric_eigen();
        let x = DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im });
        let y = eig.eigenvectors.transpose() * x;
        // the real embedding doubles every eigenvalue; apply cos/sin in the
        // doubled space and read off the complex result
        let c = &eig.eigenvectors * DVector::from_fn(2 * n, |k, _| y[k] * (eig.eigenvalues[k] * dt).cos());
        let s = &eig.eigenvectors * DVector::from_fn(2 * n, |k, _| y[k] * (eig.eigenvalues[k] * dt).sin());
        // exp(−iHdt) = cos(Hdt) − i sin(Hdt); multiplication by i is the
        // block map (x, y) → (−y, x)
        (0..n).map(|i| C64::new(c[i] + s[i + n], c[i + n] - s[i])).collect()
    }

    #[test]
    fn identity_generator_gives_phase() {
        let e = 1.7;
        let v = random_vec(5, 1);
        let (w, _) = expm_apply(|x: &[C64]| x.iter().map(|z| z * e).collect(), &v, 0.3, 1e-12, 20).unwrap();
        for (a, b) in w.iter().zip(&v) {
            assert!((a - b * C64::from_polar(1.0, -e * 0.3)).norm() < 1e-13);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let h = random_hermitian(4, 2);
        let v = random_vec(4, 3);
        let (w, _) = expm_apply(dense_apply(&h), &v, 0.0, 1e-12, 20).unwrap();
        assert_eq!(w, v);
    }

    #[test]
    fn zero_vector_is_an_error() {
        let h = random_hermitian(3, 2);
        assert!(expm_apply(dense_apply(&h), &[ZERO; 3], 0.1, 1e-12, 20).is_err());
    }

    #[test]
    fn matches_dense_exponential() {
        let h = random_hermitian(6, 4);
        let v = random_vec(6, 5);
        for dt in [0.01, 0.5, -0.7, 3.0] {
            let (w, _) = expm_apply(dense_apply(&h), &v, dt, 1e-13, 40).unwrap();
            let want = dense_expm(&h, &v, dt);
            let err = w.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "dt {dt}: {err}");
        }
    }

    #[test]
    fn substeps_when_krylov_space_is_small() {
        let h = random_hermitian(60, 6) * C64::new(5.0, 0.0);
        let v = random_vec(60, 7);
        let (w, info) = expm_apply(dense_apply(&h), &v, 2.0, 1e-12, 8).unwrap();
        assert!(info.substeps > 1);
        let want = dense_expm(&h, &v, 2.0);
        let err = w.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        assert!((norm(&w) - norm(&v)).abs() < 1e-10);
    }

    #[test]
    fn lowest_eigenpair_matches_dense() {
        let h = random_hermitian(50, 8);
        let v0 = random_vec(50, 9);
        let (e, x, _) = lowest_eigenpair(dense_apply(&h), &v0, &[], 1e-10, 200, 20).unwrap();
        let emin = h.clone().symmetric_eigenvalues().min();
        assert!((e - emin).abs() < 1e-9);
        let hx = dense_apply(&h)(&x);
        let r: f64 = hx.iter().zip(&x).map(|(a, b)| (a - b * e).norm_sqr()).sum::<f64>().sqrt();
        assert!(r < 1e-9);

        // deflating the ground state gives the second eigenvalue
        let (e2, _, _) = lowest_eigenpair(dense_apply(&h), &v0, &[x], 1e-10, 200, 20).unwrap();
        let mut all: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((e2 - all[1]).abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_space() {
        let (e, x, _) =
            lowest_eigenpair(|v: &[C64]| vec![v[0] * 2.5], &[C64::new(0.0, 3.0)], &[], 1e-12, 5, 10).unwrap();
        assert_eq!(e, 2.5);
        assert!((norm(&x) - 1.0).abs() < 1e-15);
    }
}
