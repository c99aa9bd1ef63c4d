//! U(1)-symmetric block-sparse tensors.
//!
//! Every index carries a list of particle-number sectors and a direction. A
//! block keyed by one charge per index is admissible when the outgoing charges
//! minus the incoming charges equal the tensor's total charge. Only admissible
//! blocks are ever stored; absent blocks are zero.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use rand::Rng;
use thiserror::Error;

mod decomp;
mod dense;
mod fusion;

pub use decomp::SvdResult;
pub use dense::Dense;
pub use fusion::FusionRecord;

pub(crate) use dense::{gemm, gemm_strided};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymError {
    #[error("invalid charge index: {0}")]
    InvalidIndex(String),
    #[error("structural mismatch: {0}")]
    Structure(String),
    #[error("operation requires a nonzero tensor")]
    ZeroTensor,
    #[error("decomposition failed: {0}")]
    Decomposition(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::In => Direction::Out,
            Direction::Out => Direction::In,
        }
    }

    /// Sign with which a charge on this index enters the flux balance.
    pub fn sign(self) -> i32 {
        match self {
            Direction::In => -1,
            Direction::Out => 1,
        }
    }
}

/// A tensor leg: direction plus ascending `(charge, degeneracy)` sectors.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChargeIndex {
    dir: Direction,
    sectors: Vec<(i32, usize)>,
}

impl ChargeIndex {
    pub fn new(dir: Direction, sectors: Vec<(i32, usize)>) -> Result<Self, SymError> {
        if sectors.is_empty() {
            return Err(SymError::InvalidIndex("index has no sectors".into()));
        }
        for w in sectors.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(SymError::InvalidIndex(format!(
                    "charges must be distinct and ascending, got {} before {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(q, _)) = sectors.iter().find(|s| s.1 == 0) {
            return Err(SymError::InvalidIndex(format!("sector {q} has zero degeneracy")));
        }
        Ok(Self { dir, sectors })
    }

    /// Physical site index: occupations `0..local_dim`, one state each.
    pub fn physical(local_dim: usize, dir: Direction) -> Self {
        Self { dir, sectors: (0..local_dim as i32).map(|n| (n, 1)).collect() }
    }

    pub fn dir(&self) -> Direction {
        self.dir
    }

    pub fn sectors(&self) -> &[(i32, usize)] {
        &self.sectors
    }

    pub fn charges(&self) -> impl Iterator<Item = i32> + '_ {
        self.sectors.iter().map(|s| s.0)
    }

    pub fn dim(&self) -> usize {
        self.sectors.iter().map(|s| s.1).sum()
    }

    pub fn degeneracy(&self, charge: i32) -> Option<usize> {
        self.sectors.binary_search_by_key(&charge, |s| s.0).ok().map(|i| self.sectors[i].1)
    }

    /// Offset of a sector inside the dense embedding of this index.
    pub fn offset(&self, charge: i32) -> Option<usize> {
        let pos = self.sectors.binary_search_by_key(&charge, |s| s.0).ok()?;
        Some(self.sectors[..pos].iter().map(|s| s.1).sum())
    }

    pub fn flipped(&self) -> Self {
        Self { dir: self.dir.flip(), sectors: self.sectors.clone() }
    }

    pub fn with_dir(&self, dir: Direction) -> Self {
        Self { dir, sectors: self.sectors.clone() }
    }

    /// True when `other` can be contracted against `self`.
    pub fn pairs_with(&self, other: &ChargeIndex) -> bool {
        self.dir != other.dir && self.sectors == other.sectors
    }
}

/// Enumerate every admissible block key for the given legs and total charge.
pub fn admissible_keys(indices: &[ChargeIndex], charge: i32) -> Vec<Vec<i32>> {
    let rank = indices.len();
    // suffix bounds on the attainable flux, used to prune the search
    let mut lo = vec![0i64; rank + 1];
    let mut hi = vec![0i64; rank + 1];
    for i in (0..rank).rev() {
        let s = indices[i].dir.sign() as i64;
        let (a, b) = indices[i]
            .charges()
            .map(|q| s * q as i64)
            .fold((i64::MAX, i64::MIN), |(a, b), f| (a.min(f), b.max(f)));
        lo[i] = lo[i + 1] + a;
        hi[i] = hi[i + 1] + b;
    }
    let mut out = Vec::new();
    let mut key = Vec::with_capacity(rank);
    fn rec(
        i: usize,
        flux: i64,
        target: i64,
        indices: &[ChargeIndex],
        lo: &[i64],
        hi: &[i64],
        key: &mut Vec<i32>,
        out: &mut Vec<Vec<i32>>,
    ) {
        if i == indices.len() {
            if flux == target {
                out.push(key.clone());
            }
            return;
        }
        let need = target - flux;
        if need < lo[i] || need > hi[i] {
            return;
        }
        let s = indices[i].dir.sign() as i64;
        for q in indices[i].charges() {
            key.push(q);
            rec(i + 1, flux + s * q as i64, target, indices, lo, hi, key, out);
            key.pop();
        }
    }
    rec(0, 0, charge as i64, indices, &lo, &hi, &mut key, &mut out);
    out
}

#[derive(Clone, Debug)]
pub struct SymTensor {
    indices: Vec<ChargeIndex>,
    blocks: BTreeMap<Vec<i32>, Dense>,
    charge: i32,
}

impl SymTensor {
    pub fn zeros(indices: Vec<ChargeIndex>, charge: i32) -> Self {
        Self { indices, blocks: BTreeMap::new(), charge }
    }

    /// Tensor with every admissible block filled with uniform random entries
    /// in the unit square of the complex plane.
    pub fn random<R: Rng + ?Sized>(indices: Vec<ChargeIndex>, charge: i32, rng: &mut R) -> Self {
        let mut t = Self::zeros(indices, charge);
        for key in admissible_keys(&t.indices, charge) {
            let shape = t.shape_of(&key);
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            t.blocks.insert(key, Dense::from_vec(&shape, data));
        }
        t
    }

    /// Identity map on `index`: legs `[index.flipped(), index]`.
    pub fn identity(index: &ChargeIndex) -> Self {
        let mut t = Self::zeros(vec![index.flipped(), index.clone()], 0);
        for &(q, deg) in index.sectors() {
            let mut block = Dense::zeros(&[deg, deg]);
            for i in 0..deg {
                block.data_mut()[i * deg + i] = C64::new(1.0, 0.0);
            }
            t.blocks.insert(vec![q, q], block);
        }
        t
    }

    pub fn indices(&self) -> &[ChargeIndex] {
        &self.indices
    }

    pub fn index(&self, i: usize) -> &ChargeIndex {
        &self.indices[i]
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn charge(&self) -> i32 {
        self.charge
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&Vec<i32>, &Dense)> {
        self.blocks.iter()
    }

    pub fn block(&self, key: &[i32]) -> Option<&Dense> {
        self.blocks.get(key)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_admissible(&self, key: &[i32]) -> bool {
        key.len() == self.rank()
            && key.iter().zip(&self.indices).all(|(q, ix)| ix.degeneracy(*q).is_some())
            && key.iter().zip(&self.indices).map(|(q, ix)| ix.dir.sign() * q).sum::<i32>() == self.charge
    }

    fn shape_of(&self, key: &[i32]) -> Vec<usize> {
        key.iter()
            .zip(&self.indices)
            .map(|(q, ix)| ix.degeneracy(*q).expect("charge not present on index"))
            .collect()
    }

    pub fn insert_block(&mut self, key: Vec<i32>, block: Dense) -> Result<(), SymError> {
        if !self.is_admissible(&key) {
            return Err(SymError::Structure(format!(
                "block key {key:?} is not admissible for total charge {}",
                self.charge
            )));
        }
        let shape = self.shape_of(&key);
        if block.shape() != shape.as_slice() {
            return Err(SymError::Structure(format!(
                "block {key:?} has shape {:?}, expected {shape:?}",
                block.shape()
            )));
        }
        self.blocks.insert(key, block);
        Ok(())
    }

    pub fn admissible_keys(&self) -> Vec<Vec<i32>> {
        admissible_keys(&self.indices, self.charge)
    }

    /// Embed into a dense array over the full index dimensions.
    pub fn to_dense(&self) -> Dense {
        let dims: Vec<usize> = self.indices.iter().map(|ix| ix.dim()).collect();
        let mut out = Dense::zeros(&dims);
        let strides = dense::strides_of(&dims);
        for (key, block) in &self.blocks {
            let offsets: Vec<usize> =
                key.iter().zip(&self.indices).map(|(q, ix)| ix.offset(*q).unwrap()).collect();
            let bstrides = dense::strides_of(block.shape());
            for (lin, z) in block.data().iter().enumerate() {
                let mut pos = 0;
                for ax in 0..dims.len() {
                    let i = (lin / bstrides[ax]) % block.shape()[ax];
                    pos += (offsets[ax] + i) * strides[ax];
                }
                out.data_mut()[pos] = *z;
            }
        }
        out
    }

    /// Extract admissible blocks from a dense array. Entries outside the
    /// admissible blocks must vanish.
    pub fn from_dense(indices: Vec<ChargeIndex>, charge: i32, dense: &Dense) -> Result<Self, SymError> {
        let dims: Vec<usize> = indices.iter().map(|ix| ix.dim()).collect();
        if dense.shape() != dims.as_slice() {
            return Err(SymError::Structure(format!(
                "dense shape {:?} does not match index dims {dims:?}",
                dense.shape()
            )));
        }
        let mut t = Self::zeros(indices, charge);
        let strides = dense::strides_of(&dims);
        let mut captured = 0.0;
        for key in t.admissible_keys() {
            let shape = t.shape_of(&key);
            let offsets: Vec<usize> =
                key.iter().zip(&t.indices).map(|(q, ix)| ix.offset(*q).unwrap()).collect();
            let bstrides = dense::strides_of(&shape);
            let n: usize = shape.iter().product();
            let data: Vec<C64> = (0..n)
                .map(|lin| {
                    let mut pos = 0;
                    for ax in 0..dims.len() {
                        let i = (lin / bstrides[ax]) % shape[ax];
                        pos += (offsets[ax] + i) * strides[ax];
                    }
                    dense.data()[pos]
                })
                .collect();
            let block = Dense::from_vec(&shape, data);
            captured += block.norm_sqr();
            if !block.is_zero() {
                t.blocks.insert(key, block);
            }
        }
        let total = dense.norm_sqr();
        if total - captured > 1e-20 + 1e-24 * total {
            return Err(SymError::Structure("dense array has weight outside admissible blocks".into()));
        }
        Ok(t)
    }

    pub fn conj(&self) -> Self {
        Self {
            indices: self.indices.iter().map(|ix| ix.flipped()).collect(),
            blocks: self.blocks.iter().map(|(k, b)| (k.clone(), b.conj())).collect(),
            charge: -self.charge,
        }
    }

    /// Output leg `i` is input leg `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.rank(), "permutation length must equal rank");
        Self {
            indices: perm.iter().map(|&p| self.indices[p].clone()).collect(),
            blocks: self
                .blocks
                .iter()
                .map(|(k, b)| (perm.iter().map(|&p| k[p]).collect(), b.permute(perm)))
                .collect(),
            charge: self.charge,
        }
    }

    pub fn scale(&mut self, alpha: C64) {
        for b in self.blocks.values_mut() {
            b.scale(alpha);
        }
    }

    pub fn scaled(mut self, alpha: C64) -> Self {
        self.scale(alpha);
        self
    }

    fn check_same_space(&self, other: &SymTensor) -> Result<(), SymError> {
        if self.indices != other.indices || self.charge != other.charge {
            return Err(SymError::Structure("tensors live on different index spaces".into()));
        }
        Ok(())
    }

    /// `self ← self + alpha · other`
    pub fn axpy(&mut self, alpha: C64, other: &SymTensor) -> Result<(), SymError> {
        self.check_same_space(other)?;
        for (k, b) in &other.blocks {
            match self.blocks.get_mut(k) {
                Some(dst) => dst.axpy(alpha, b),
                None => {
                    let mut nb = b.clone();
                    nb.scale(alpha);
                    self.blocks.insert(k.clone(), nb);
                }
            }
        }
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.blocks.values().map(|b| b.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `⟨self|other⟩`, conjugating `self`.
    pub fn inner(&self, other: &SymTensor) -> Result<C64, SymError> {
        self.check_same_space(other)?;
        let mut acc = C64::new(0.0, 0.0);
        for (k, a) in &self.blocks {
            if let Some(b) = other.blocks.get(k) {
                acc += a.data().iter().zip(b.data()).map(|(x, y)| x.conj() * y).sum::<C64>();
            }
        }
        Ok(acc)
    }

    /// Frobenius distance, absent blocks counting as zero.
    pub fn distance(&self, other: &SymTensor) -> f64 {
        let mut acc = 0.0;
        for (k, a) in &self.blocks {
            match other.blocks.get(k) {
                Some(b) => acc += a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>(),
                None => acc += a.norm_sqr(),
            }
        }
        for (k, b) in &other.blocks {
            if !self.blocks.contains_key(k) {
                acc += b.norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// Drop blocks that are identically zero.
    pub fn prune(&mut self) {
        self.blocks.retain(|_, b| !b.is_zero());
    }

    /// Contract `self` with `other` over the listed `(leg of self, leg of other)`
    /// pairs. The result carries the free legs of `self` followed by those of
    /// `other`, each in their original order.
    pub fn contract(&self, other: &SymTensor, pairs: &[(usize, usize)]) -> Result<SymTensor, SymError> {
        let (ra, rb) = (self.rank(), other.rank());
        let mut used_a = vec![false; ra];
        let mut used_b = vec![false; rb];
        for &(i, j) in pairs {
            if i >= ra || j >= rb {
                return Err(SymError::Structure(format!("contraction pair ({i}, {j}) out of range")));
            }
            if used_a[i] || used_b[j] {
                return Err(SymError::Structure(format!("index repeated in contraction pair ({i}, {j})")));
            }
            used_a[i] = true;
            used_b[j] = true;
            if !self.indices[i].pairs_with(&other.indices[j]) {
                return Err(SymError::Structure(format!(
                    "legs ({i}, {j}) cannot be contracted: directions must be opposite and sectors identical"
                )));
            }
        }
        let pa: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pb: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let free_a: Vec<usize> = (0..ra).filter(|&i| !used_a[i]).collect();
        let free_b: Vec<usize> = (0..rb).filter(|&j| !used_b[j]).collect();
        let perm_a: Vec<usize> = free_a.iter().chain(&pa).copied().collect();
        let perm_b: Vec<usize> = pb.iter().chain(&free_b).copied().collect();

        let indices: Vec<ChargeIndex> = free_a
            .iter()
            .map(|&i| self.indices[i].clone())
            .chain(free_b.iter().map(|&j| other.indices[j].clone()))
            .collect();
        let mut out = SymTensor::zeros(indices, self.charge + other.charge);

        struct Piece {
            free_key: Vec<i32>,
            free_shape: Vec<usize>,
            data: Dense,
            n: usize,
        }
        let mut groups: BTreeMap<Vec<i32>, Vec<Piece>> = BTreeMap::new();
        for (kb, blk) in &other.blocks {
            let pk: Vec<i32> = pb.iter().map(|&j| kb[j]).collect();
            let kdim: usize = pb.iter().map(|&j| blk.shape()[j]).product();
            let data = blk.permute(&perm_b);
            let n = if kdim == 0 { 0 } else { data.len() / kdim };
            groups.entry(pk).or_default().push(Piece {
                free_key: free_b.iter().map(|&j| kb[j]).collect(),
                free_shape: free_b.iter().map(|&j| blk.shape()[j]).collect(),
                data,
                n,
            });
        }
        for (ka, blk) in &self.blocks {
            let pk: Vec<i32> = pa.iter().map(|&i| ka[i]).collect();
            let Some(group) = groups.get(&pk) else { continue };
            let kdim: usize = pa.iter().map(|&i| blk.shape()[i]).product();
            let ap = blk.permute(&perm_a);
            let m = if kdim == 0 { 0 } else { ap.len() / kdim };
            let fa_key: Vec<i32> = free_a.iter().map(|&i| ka[i]).collect();
            let fa_shape: Vec<usize> = free_a.iter().map(|&i| blk.shape()[i]).collect();
            for piece in group {
                let mut key = fa_key.clone();
                key.extend_from_slice(&piece.free_key);
                let dst = out.blocks.entry(key).or_insert_with(|| {
                    let shape: Vec<usize> = fa_shape.iter().chain(&piece.free_shape).copied().collect();
                    Dense::zeros(&shape)
                });
                gemm(
                    m,
                    kdim,
                    piece.n,
                    C64::new(1.0, 0.0),
                    ap.data(),
                    piece.data.data(),
                    C64::new(1.0, 0.0),
                    dst.data_mut(),
                );
            }
        }
        Ok(out)
    }

    /// Apply a two-leg operator `op` (legs `[new, in]`) to leg `leg`, leaving
    /// the leg order unchanged. Equivalent to contracting `op`'s second leg with
    /// `leg` and moving the result back into place.
    pub fn apply_to_leg(&self, op: &SymTensor, leg: usize) -> Result<SymTensor, SymError> {
        if op.rank() != 2 {
            return Err(SymError::Structure("leg operator must have rank 2".into()));
        }
        if leg >= self.rank() || !op.indices[1].pairs_with(&self.indices[leg]) {
            return Err(SymError::Structure(format!("operator does not act on leg {leg}")));
        }
        let mut indices = self.indices.clone();
        indices[leg] = op.indices[0].clone();
        let mut out = SymTensor::zeros(indices, self.charge + op.charge);
        let mut by_in: BTreeMap<i32, Vec<(i32, &Dense)>> = BTreeMap::new();
        for (k, b) in &op.blocks {
            by_in.entry(k[1]).or_default().push((k[0], b));
        }
        let one = C64::new(1.0, 0.0);
        for (key, blk) in &self.blocks {
            let Some(ops) = by_in.get(&key[leg]) else { continue };
            let shape = blk.shape();
            let pre: usize = shape[..leg].iter().product();
            let n = shape[leg];
            let post: usize = shape[leg + 1..].iter().product();
            for &(q_out, ob) in ops {
                let m = ob.shape()[0];
                let mut nkey = key.clone();
                nkey[leg] = q_out;
                let dst = out.blocks.entry(nkey).or_insert_with(|| {
                    let mut s = shape.to_vec();
                    s[leg] = m;
                    Dense::zeros(&s)
                });
                if post == 1 {
                    // out (pre×m) += in (pre×n) · opᵀ
                    gemm_strided(
                        pre,
                        n,
                        m,
                        one,
                        blk.data(),
                        (n as isize, 1),
                        ob.data(),
                        (1, n as isize),
                        one,
                        dst.data_mut(),
                        (m as isize, 1),
                    );
                } else {
                    for p in 0..pre {
                        gemm(
                            m,
                            n,
                            post,
                            one,
                            ob.data(),
                            &blk.data()[p * n * post..(p + 1) * n * post],
                            one,
                            &mut dst.data_mut()[p * m * post..(p + 1) * m * post],
                        );
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Fixed ordering of all admissible blocks of a leg structure, used to view a
/// symmetric tensor as a flat vector (Krylov methods work on those).
#[derive(Clone, Debug)]
pub struct BlockLayout {
    indices: Vec<ChargeIndex>,
    charge: i32,
    entries: Vec<(Vec<i32>, Vec<usize>, usize)>,
    len: usize,
}

impl BlockLayout {
    pub fn new(indices: &[ChargeIndex], charge: i32) -> Self {
        let mut entries = Vec::new();
        let mut off = 0;
        for key in admissible_keys(indices, charge) {
            let shape: Vec<usize> =
                key.iter().zip(indices).map(|(q, ix)| ix.degeneracy(*q).unwrap()).collect();
            let n: usize = shape.iter().product();
            entries.push((key, shape, off));
            off += n;
        }
        Self { indices: indices.to_vec(), charge, entries, len: off }
    }

    pub fn of(t: &SymTensor) -> Self {
        Self::new(&t.indices, t.charge)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn indices(&self) -> &[ChargeIndex] {
        &self.indices
    }

    pub fn charge(&self) -> i32 {
        self.charge
    }

    /// `(key, shape, offset)` of every admissible block, in key order.
    pub fn entries(&self) -> &[(Vec<i32>, Vec<usize>, usize)] {
        &self.entries
    }

    pub fn flatten(&self, t: &SymTensor) -> Vec<C64> {
        debug_assert!(t.indices == self.indices && t.charge == self.charge);
        let mut v = vec![C64::new(0.0, 0.0); self.len];
        for (key, _, off) in &self.entries {
            if let Some(b) = t.blocks.get(key) {
                v[*off..*off + b.len()].copy_from_slice(b.data());
            }
        }
        v
    }

    pub fn unflatten(&self, v: &[C64]) -> SymTensor {
        assert_eq!(v.len(), self.len);
        let mut t = SymTensor::zeros(self.indices.clone(), self.charge);
        for (key, shape, off) in &self.entries {
            let n: usize = shape.iter().product();
            let block = Dense::from_vec(shape, v[*off..*off + n].to_vec());
            if !block.is_zero() {
                t.blocks.insert(key.clone(), block);
            }
        }
        t
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Dense tensordot over paired axes, free axes of `a` then of `b`.
    pub fn dense_contract(a: &Dense, b: &Dense, pairs: &[(usize, usize)]) -> Dense {
        let fa: Vec<usize> = (0..a.rank()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
        let fb: Vec<usize> = (0..b.rank()).filter(|j| !pairs.iter().any(|p| p.1 == *j)).collect();
        let shape: Vec<usize> =
            fa.iter().map(|&i| a.shape()[i]).chain(fb.iter().map(|&j| b.shape()[j])).collect();
        let mut out = Dense::zeros(&shape);
        let sa = dense::strides_of(a.shape());
        let sb = dense::strides_of(b.shape());
        let so = dense::strides_of(&shape);
        let kshape: Vec<usize> = pairs.iter().map(|p| a.shape()[p.0]).collect();
        let ksize: usize = kshape.iter().product();
        for lin in 0..out.len() {
            let mut ia = 0;
            let mut ib = 0;
            for (ax, &i) in fa.iter().enumerate() {
                ia += ((lin / so[ax]) % shape[ax]) * sa[i];
            }
            for (bx, &j) in fb.iter().enumerate() {
                let ax = fa.len() + bx;
                ib += ((lin / so[ax]) % shape[ax]) * sb[j];
            }
            let mut acc = C64::new(0.0, 0.0);
            for kl in 0..ksize {
                let mut rem = kl;
                let mut da = 0;
                let mut db = 0;
                for (p, &(i, j)) in pairs.iter().enumerate().rev() {
                    let v = rem % kshape[p];
                    rem /= kshape[p];
                    da += v * sa[i];
                    db += v * sb[j];
                }
                acc += a.data()[ia + da] * b.data()[ib + db];
            }
            out.data_mut()[lin] = acc;
        }
        out
    }

    pub fn max_diff(a: &Dense, b: &Dense) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    pub fn index(dir: Direction, sectors: &[(i32, usize)]) -> ChargeIndex {
        ChargeIndex::new(dir, sectors.to_vec()).unwrap()
    }
}
