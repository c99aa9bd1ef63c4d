//! Dense row-major complex arrays used as the blocks of a [`SymTensor`](super::SymTensor).

use num_complex::Complex64 as C64;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    shape: Vec<usize>,
    data: Vec<C64>,
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Dense {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<C64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length mismatch");
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape changes size");
        self.shape = shape.to_vec();
        self
    }

    pub fn conj(&self) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&mut self, alpha: C64) {
        for z in &mut self.data {
            *z *= alpha;
        }
    }

    pub fn axpy(&mut self, alpha: C64, other: &Dense) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Dense {
        assert_eq!(perm.len(), self.rank());
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return self.clone();
        }
        let in_strides = strides_of(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = self.data.len();
        let mut out = Vec::with_capacity(n);
        if n == 0 {
            return Dense { shape: out_shape, data: out };
        }
        let rank = out_shape.len();
        let mut counter = vec![0usize; rank];
        let mut offset = 0usize;
        // innermost axis handled in a tight loop
        let last = rank - 1;
        let inner = out_shape[last];
        let inner_stride = src_strides[last];
        loop {
            for i in 0..inner {
                out.push(self.data[offset + i * inner_stride]);
            }
            let mut axis = last;
            loop {
                if axis == 0 {
                    return Dense { shape: out_shape, data: out };
                }
                axis -= 1;
                counter[axis] += 1;
                offset += src_strides[axis];
                if counter[axis] < out_shape[axis] {
                    break;
                }
                offset -= src_strides[axis] * out_shape[axis];
                counter[axis] = 0;
            }
        }
    }

    /// Copy `src` (shape `pre × n × post`) into the slab `[start, start + n)` along
    /// the middle axis of `self` (shape `pre × m × post`).
    pub(crate) fn write_slab(&mut self, pre: usize, m: usize, post: usize, start: usize, src: &[C64], n: usize) {
        debug_assert_eq!(src.len(), pre * n * post);
        for p in 0..pre {
            let dst = &mut self.data[(p * m + start) * post..(p * m + start + n) * post];
            dst.copy_from_slice(&src[p * n * post..(p + 1) * n * post]);
        }
    }

    pub(crate) fn read_slab(&self, pre: usize, m: usize, post: usize, start: usize, n: usize) -> Vec<C64> {
        let mut out = Vec::with_capacity(pre * n * post);
        for p in 0..pre {
            out.extend_from_slice(&self.data[(p * m + start) * post..(p * m + start + n) * post]);
        }
        out
    }
}

/// `c ← alpha · a · b + beta · c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: C64, a: &[C64], b: &[C64], beta: C64, c: &mut [C64]) {
    gemm_strided(m, k, n, alpha, a, (k as isize, 1), b, (n as isize, 1), beta, c, (n as isize, 1));
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    alpha: C64,
    a: &[C64],
    a_strides: (isize, isize),
    b: &[C64],
    b_strides: (isize, isize),
    beta: C64,
    c: &mut [C64],
    c_strides: (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m * n * k <= 512 {
        // packing overhead dominates for tiny blocks
        for i in 0..m {
            for j in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for l in 0..k {
                    acc += a[(i as isize * a_strides.0 + l as isize * a_strides.1) as usize]
                        * b[(l as isize * b_strides.0 + j as isize * b_strides.1) as usize];
                }
                let dst = &mut c[(i as isize * c_strides.0 + j as isize * c_strides.1) as usize];
                *dst = beta * *dst + alpha * acc;
            }
        }
        return;
    }
    // SAFETY: Complex64 is repr(C) with layout [f64; 2]; extents are checked above.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [alpha.re, alpha.im],
            a.as_ptr() as *const [f64; 2],
            a_strides.0,
            a_strides.1,
            b.as_ptr() as *const [f64; 2],
            b_strides.0,
            b_strides.1,
            [beta.re, beta.im],
            c.as_mut_ptr() as *mut [f64; 2],
            c_strides.0,
            c_strides.1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Dense {
        let n: usize = shape.iter().product();
        Dense::from_vec(shape, (0..n).map(|i| C64::new(i as f64, -(i as f64) * 0.5)).collect())
    }

    #[test]
    fn permute_matches_index_arithmetic() {
        let t = seq(&[2, 3, 4]);
        let p = t.permute(&[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(p.data()[c * 6 + a * 3 + b], t.data()[a * 12 + b * 4 + c]);
                }
            }
        }
    }

    #[test]
    fn gemm_small() {
        let a = seq(&[2, 3]);
        let b = seq(&[3, 2]);
        let mut c = vec![C64::new(0.0, 0.0); 4];
        gemm(2, 3, 2, C64::new(1.0, 0.0), a.data(), b.data(), C64::new(0.0, 0.0), &mut c);
        for i in 0..2 {
            for j in 0..2 {
                let want: C64 = (0..3).map(|l| a.data()[i * 3 + l] * b.data()[l * 2 + j]).sum();
                assert!((c[i * 2 + j] - want).norm() < 1e-12);
            }
        }
    }
}
