//! Little-endian binary snapshots of a tree state.
//!
//! Layout: magic `BHTTN001`, then `l, d, n, center, num_nodes` as u64, then
//! per node the total charge (i32), the rank (u32), every index as
//! `dir (u8), nsectors (u32), (charge i32, degeneracy u64)*`, the number of
//! blocks (u64) and every block as `key (i32 * rank), (re f64, im f64)*`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::{TTNState, TreeTopology};
use crate::error::{Error, Result};
use crate::symtensor::{ChargeIndex, Dense, Direction, SymTensor};

const MAGIC: &[u8; 8] = b"BHTTN001";

pub(super) fn save(state: &TTNState, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for x in [state.topology().l(), state.local_dim(), state.particles(), state.center(), state.tensors().len()] {
        w.write_all(&(x as u64).to_le_bytes())?;
    }
    for t in state.tensors() {
        w.write_all(&t.charge().to_le_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for ix in t.indices() {
            w.write_all(&[matches!(ix.dir(), Direction::Out) as u8])?;
            w.write_all(&(ix.sectors().len() as u32).to_le_bytes())?;
            for &(q, deg) in ix.sectors() {
                w.write_all(&q.to_le_bytes())?;
                w.write_all(&(deg as u64).to_le_bytes())?;
            }
        }
        w.write_all(&(t.num_blocks() as u64).to_le_bytes())?;
        for (key, block) in t.blocks() {
            for q in key {
                w.write_all(&q.to_le_bytes())?;
            }
            for z in block.data() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut buf = [0u8; K];
        self.0.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.bytes()?);
        usize::try_from(v).map_err(|_| Error::Format("size field out of range".into()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub(super) fn load(path: &Path) -> Result<TTNState> {
    let mut r = Reader(BufReader::new(File::open(path)?));
    if &r.bytes::<8>()? != MAGIC {
        return Err(bad("not a tree state checkpoint"));
    }
    let (l, d, n, center, num_nodes) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    let topo = Arc::new(TreeTopology::new(l).map_err(|e| bad(format!("bad lattice size: {e}")))?);
    if num_nodes != topo.num_nodes() || center >= num_nodes {
        return Err(bad("node count does not match the lattice size"));
    }
    let mut tensors = Vec::with_capacity(num_nodes);
    for node in 0..num_nodes {
        let charge = r.i32()?;
        let rank = r.u32()?;
        if rank != topo.neighbors(node).len() {
            return Err(bad(format!("node {node} has rank {rank}")));
        }
        let mut indices = Vec::with_capacity(rank);
        for _ in 0..rank {
            let dir = match r.bytes::<1>()?[0] {
                0 => Direction::In,
                1 => Direction::Out,
                x => return Err(bad(format!("bad direction byte {x}"))),
            };
            let ns = r.u32()?;
            let mut sectors = Vec::with_capacity(ns.min(1024));
            for _ in 0..ns {
                sectors.push((r.i32()?, r.u64()?));
            }
            indices.push(ChargeIndex::new(dir, sectors).map_err(|e| bad(e.to_string()))?);
        }
        let mut t = SymTensor::zeros(indices, charge);
        let nb = r.u64()?;
        for _ in 0..nb {
            let mut key = Vec::with_capacity(rank);
            for _ in 0..rank {
                key.push(r.i32()?);
            }
            if !t.is_admissible(&key) {
                return Err(bad(format!("inadmissible block {key:?} at node {node}")));
            }
            let shape: Vec<usize> =
                key.iter().zip(t.indices()).map(|(q, ix)| ix.degeneracy(*q).unwrap()).collect();
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(C64::new(r.f64()?, r.f64()?));
            }
            t.insert_block(key, Dense::from_vec(&shape, data)).map_err(|e| bad(e.to_string()))?;
        }
        tensors.push(t);
    }
    if r.0.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes after checkpoint"));
    }
    Ok(TTNState::from_parts(topo, d, n, tensors, center))
}
