//! Fusing groups of legs into a single leg and splitting them back.

use std::collections::{BTreeMap, HashMap};

use super::{ChargeIndex, Dense, SymError, SymTensor};

/// Everything needed to undo a [`SymTensor::fuse`].
#[derive(Clone, Debug)]
pub struct FusionRecord {
    group: Vec<usize>,
    position: usize,
    parts: Vec<ChargeIndex>,
    fused: ChargeIndex,
    /// fused charge → constituent charge combos with their offset and size
    layout: BTreeMap<i32, Vec<(Vec<i32>, usize, usize)>>,
    lookup: HashMap<Vec<i32>, (i32, usize, usize)>,
    rank: usize,
}

impl FusionRecord {
    fn build(indices: &[ChargeIndex], group: &[usize], position: usize) -> Self {
        let parts: Vec<ChargeIndex> = group.iter().map(|&g| indices[g].clone()).collect();
        let dir = parts[0].dir();
        let signs: Vec<i32> = parts.iter().map(|p| if p.dir() == dir { 1 } else { -1 }).collect();
        let mut layout: BTreeMap<i32, Vec<(Vec<i32>, usize, usize)>> = BTreeMap::new();
        let mut sizes: BTreeMap<i32, usize> = BTreeMap::new();
        let mut combo = vec![0usize; parts.len()];
        loop {
            let charges: Vec<i32> = combo.iter().zip(&parts).map(|(&c, p)| p.sectors()[c].0).collect();
            let size: usize = combo.iter().zip(&parts).map(|(&c, p)| p.sectors()[c].1).product();
            let f: i32 = charges.iter().zip(&signs).map(|(q, s)| q * s).sum();
            let off = sizes.entry(f).or_insert(0);
            layout.entry(f).or_default().push((charges, *off, size));
            *off += size;
            // odometer increment, last part fastest
            let mut ax = parts.len();
            loop {
                if ax == 0 {
                    let fused = ChargeIndex { dir, sectors: sizes.into_iter().collect() };
                    let lookup = layout
                        .iter()
                        .flat_map(|(&f, v)| v.iter().map(move |(k, o, s)| (k.clone(), (f, *o, *s))))
                        .collect();
                    return Self {
                        group: group.to_vec(),
                        position,
                        parts,
                        fused,
                        layout,
                        lookup,
                        rank: indices.len(),
                    };
                }
                ax -= 1;
                combo[ax] += 1;
                if combo[ax] < parts[ax].sectors().len() {
                    break;
                }
                combo[ax] = 0;
            }
        }
    }

    pub fn fused_index(&self) -> &ChargeIndex {
        &self.fused
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn parts(&self) -> &[ChargeIndex] {
        &self.parts
    }
}

impl SymTensor {
    /// Fuse the legs listed in `group` (in that order) into one leg placed at
    /// position `min(group)`. The fused leg takes the direction of `group[0]`;
    /// legs of the opposite direction enter its charge with a minus sign.
    pub fn fuse(&self, group: &[usize]) -> Result<(SymTensor, FusionRecord), SymError> {
        if group.is_empty() {
            return Err(SymError::Structure("cannot fuse an empty group of legs".into()));
        }
        let rank = self.rank();
        let mut seen = vec![false; rank];
        for &g in group {
            if g >= rank || seen[g] {
                return Err(SymError::Structure(format!("invalid or repeated leg {g} in fusion group")));
            }
            seen[g] = true;
        }
        let position = *group.iter().min().unwrap();
        let rest: Vec<usize> = (0..rank).filter(|i| !seen[*i]).collect();
        let record = FusionRecord::build(&self.indices, group, position);

        let mut indices: Vec<ChargeIndex> = rest.iter().map(|&i| self.indices[i].clone()).collect();
        indices.insert(position, record.fused.clone());
        let mut out = SymTensor::zeros(indices, self.charge);

        let perm: Vec<usize> =
            rest[..position].iter().chain(group).chain(&rest[position..]).copied().collect();
        for (key, blk) in &self.blocks {
            let combo: Vec<i32> = group.iter().map(|&g| key[g]).collect();
            let (f, off, size) = record.lookup[&combo];
            let mut nkey: Vec<i32> = rest.iter().map(|&i| key[i]).collect();
            nkey.insert(position, f);
            let pre: usize = rest[..position].iter().map(|&i| blk.shape()[i]).product();
            let post: usize = rest[position..].iter().map(|&i| blk.shape()[i]).product();
            let total = record.fused.degeneracy(f).unwrap();
            let dst = out.blocks.entry(nkey).or_insert_with(|| {
                let mut shape: Vec<usize> = rest.iter().map(|&i| blk.shape()[i]).collect();
                shape.insert(position, total);
                Dense::zeros(&shape)
            });
            let src = blk.permute(&perm);
            dst.write_slab(pre, total, post, off, src.data(), size);
        }
        Ok((out, record))
    }

    /// Inverse of [`SymTensor::fuse`]: restores the original leg order. All-zero
    /// sub-blocks are not stored.
    pub fn split(&self, record: &FusionRecord) -> Result<SymTensor, SymError> {
        if self.rank() + record.group.len() - 1 != record.rank {
            return Err(SymError::Structure("tensor rank does not match fusion record".into()));
        }
        let expanded = self.expand(record.position, record)?;
        // `expanded` has legs in the order [before, group..., after]
        let rest: Vec<usize> = (0..record.rank).filter(|i| !record.group.contains(i)).collect();
        let order: Vec<usize> = rest[..record.position]
            .iter()
            .chain(&record.group)
            .chain(&rest[record.position..])
            .copied()
            .collect();
        let mut inverse = vec![0; order.len()];
        for (j, &o) in order.iter().enumerate() {
            inverse[o] = j;
        }
        Ok(expanded.permute(&inverse))
    }

    /// Replace the fused leg at `position` by its constituent legs, inserted
    /// consecutively in fusion order. Other legs may differ from the ones that
    /// were present at fusion time.
    pub(crate) fn expand(&self, position: usize, record: &FusionRecord) -> Result<SymTensor, SymError> {
        if position >= self.rank() || self.indices[position] != record.fused {
            return Err(SymError::Structure("leg does not match the fused index of the record".into()));
        }
        let mut indices = self.indices.clone();
        indices.splice(position..=position, record.parts.iter().cloned());
        let mut out = SymTensor::zeros(indices, self.charge);
        for (key, blk) in &self.blocks {
            let f = key[position];
            let shape = blk.shape();
            let pre: usize = shape[..position].iter().product();
            let post: usize = shape[position + 1..].iter().product();
            let total = shape[position];
            for (combo, off, size) in &record.layout[&f] {
                let data = blk.read_slab(pre, total, post, *off, *size);
                if data.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                    continue;
                }
                let mut nshape = shape.to_vec();
                let part_shape: Vec<usize> = combo
                    .iter()
                    .zip(&record.parts)
                    .map(|(q, p)| p.degeneracy(*q).unwrap())
                    .collect();
                nshape.splice(position..=position, part_shape);
                let mut nkey = key.clone();
                nkey.splice(position..=position, combo.iter().copied());
                out.blocks.insert(nkey, Dense::from_vec(&nshape, data));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::Direction;
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fusing_two_binary_legs() {
        let leg = index(Direction::Out, &[(0, 1), (1, 1)]);
        let t = SymTensor::zeros(vec![leg.clone(), leg], 0);
        let (_, rec) = t.fuse(&[0, 1]).unwrap();
        assert_eq!(rec.fused_index().sectors(), &[(0, 1), (1, 2), (2, 1)]);
    }

    #[test]
    fn mixed_directions_subtract() {
        let a = index(Direction::Out, &[(0, 1), (1, 2)]);
        let b = index(Direction::In, &[(0, 3), (1, 1)]);
        let t = SymTensor::zeros(vec![a, b], 0);
        let (_, rec) = t.fuse(&[0, 1]).unwrap();
        assert_eq!(rec.fused_index().sectors(), &[(-1, 1), (0, 5), (1, 6)]);
    }

    #[test]
    fn empty_group_is_an_error() {
        let t = SymTensor::zeros(vec![index(Direction::Out, &[(0, 1)])], 0);
        assert!(t.fuse(&[]).is_err());
    }

    fn sample(seed: u64) -> SymTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SymTensor::random(
            vec![
                index(Direction::Out, &[(0, 2), (1, 1), (2, 2)]),
                index(Direction::In, &[(0, 1), (1, 3)]),
                index(Direction::Out, &[(0, 2), (1, 2)]),
                index(Direction::In, &[(1, 1), (2, 2), (3, 1)]),
            ],
            0,
            &mut rng,
        )
    }

    #[test]
    fn fused_dense_is_reshaped_dense() {
        // fusing adjacent legs of equal direction only regroups the dense axes
        // within each fused sector; compare sector by sector
        let t = sample(7);
        let (f, rec) = t.fuse(&[0, 2]).unwrap();
        let back = f.split(&rec).unwrap();
        assert!(max_diff(&back.to_dense(), &t.to_dense()) == 0.0);
        let tp = t.permute(&[0, 2, 1, 3]);
        let (g, _) = tp.fuse(&[0, 1]).unwrap();
        assert!(max_diff(&g.to_dense(), &f.to_dense()) == 0.0);
        // dense embedding norms agree and every block is admissible
        assert!((f.norm() - t.norm()).abs() < 1e-12);
        for (k, _) in f.blocks() {
            assert!(f.is_admissible(k));
        }
    }

    #[test]
    fn fused_matrix_matches_dense_reshape_for_single_sector_legs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = SymTensor::random(
            vec![
                index(Direction::Out, &[(0, 2)]),
                index(Direction::Out, &[(1, 3)]),
                index(Direction::In, &[(1, 6)]),
            ],
            0,
            &mut rng,
        );
        let (f, _) = t.fuse(&[0, 1]).unwrap();
        let want = t.to_dense().reshape(&[6, 6]);
        assert!(max_diff(&f.to_dense(), &want) == 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn split_undoes_fuse(seed in 0u64..500, g in proptest::sample::subsequence(vec![0usize, 1, 2, 3], 1..=4), rot in 0usize..4) {
            let t = sample(seed);
            let mut group = g.clone();
            let n = group.len();
            group.rotate_left(rot % n);
            let (f, rec) = t.fuse(&group).unwrap();
            for (k, _) in f.blocks() {
                prop_assert!(f.is_admissible(k));
            }
            let back = f.split(&rec).unwrap();
            prop_assert_eq!(back.indices(), t.indices());
            let ka: Vec<_> = back.blocks().map(|(k, _)| k.clone()).collect();
            let kb: Vec<_> = t.blocks().map(|(k, _)| k.clone()).collect();
            prop_assert_eq!(ka, kb);
            prop_assert!(back.distance(&t) == 0.0);
        }
    }
}
