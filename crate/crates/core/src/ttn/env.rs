//! Environments of a sum of local terms, cached per directed link, and the
//! effective Hamiltonians they induce on one or two node tensors.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::{Neighbor, TTNState};
use crate::error::{Error, Result};
use crate::krylov::dot;
use crate::model::TermList;
use crate::symtensor::{gemm, gemm_strided, BlockLayout, SymTensor};

/// Everything a region of the tree contributes to the operator sum, seen
/// through the link that bounds it. Operators have legs `[out, in]` on the
/// link.
#[derive(Clone, Debug, Default)]
pub struct LinkOps {
    /// sum of all terms fully inside the region, coefficients included
    pub block: Option<SymTensor>,
    /// for each term that straddles the link, the product of its factors
    /// inside the region (without coefficient)
    pub partial: Vec<(usize, SymTensor)>,
}

impl LinkOps {
    pub fn is_empty(&self) -> bool {
        self.block.is_none() && self.partial.is_empty()
    }
}

fn accumulate(acc: &mut Option<SymTensor>, t: SymTensor, alpha: C64) -> Result<()> {
    match acc {
        Some(a) => a.axpy(alpha, &t)?,
        None => *acc = Some(t.scaled(alpha)),
    }
    Ok(())
}

#[derive(Debug)]
pub struct Environment {
    terms: TermList,
    masks: Vec<u64>,
    site_ops: Vec<Arc<LinkOps>>,
    links: HashMap<(usize, usize), (u64, Arc<LinkOps>)>,
    /// number of link contractions performed, for diagnostics
    computed: usize,
}

impl Environment {
    /// Terms that change the particle number have zero expectation in every
    /// fixed-N state and are dropped.
    pub fn new(terms: TermList) -> Result<Self> {
        let l = terms.l();
        let masks: Vec<u64> = terms.terms().iter().map(|t| t.sites().fold(0u64, |m, s| m | 1 << s)).collect();
        let mut site_ops: Vec<LinkOps> = vec![LinkOps::default(); l];
        for (idx, term) in terms.terms().iter().enumerate() {
            if term.charge() != 0 {
                continue;
            }
            if term.factors.len() == 1 {
                let (s, op) = &term.factors[0];
                accumulate(&mut site_ops[*s].block, op.clone(), term.coef)?;
            } else {
                for (s, op) in &term.factors {
                    site_ops[*s].partial.push((idx, op.clone()));
                }
            }
        }
        Ok(Self {
            terms,
            masks,
            site_ops: site_ops.into_iter().map(Arc::new).collect(),
            links: HashMap::new(),
            computed: 0,
        })
    }

    pub fn terms(&self) -> &TermList {
        &self.terms
    }

    pub fn links_computed(&self) -> usize {
        self.computed
    }

    fn stamp(state: &TTNState, from: usize, to: usize) -> u64 {
        state.topology().region_nodes(from, to).into_iter().map(|n| state.version(n)).max().unwrap()
    }

    /// Environment of the region on the `from` side of link `from`–`to`,
    /// computed on demand and cached.
    pub fn link(&mut self, state: &TTNState, from: usize, to: usize) -> Result<Arc<LinkOps>> {
        let topo = state.topology().clone();
        if topo.region_nodes(from, to).contains(&state.center()) {
            return Err(Error::Invalid(format!(
                "environment of link {from}->{to} requested across the orthogonality center"
            )));
        }
        let stamp = Self::stamp(state, from, to);
        if let Some((s, ops)) = self.links.get(&(from, to)) {
            if *s == stamp {
                return Ok(ops.clone());
            }
        }
        let p = topo.leg_to(from, to).expect("nodes are not adjacent");
        let mut legs = Vec::new();
        for (x, nb) in topo.neighbors(from).iter().enumerate() {
            if x == p {
                continue;
            }
            let ops = match *nb {
                Neighbor::Site(s) => self.site_ops[s].clone(),
                Neighbor::Node(c) => self.link(state, c, from)?,
            };
            legs.push((x, ops));
        }
        let region = topo.region_sites(from, to);
        let ops = Arc::new(self.contract_link(state.tensor(from), p, &legs, region)?);
        self.links.insert((from, to), (stamp, ops.clone()));
        Ok(ops)
    }

    fn contract_link(&mut self, a: &SymTensor, p: usize, legs: &[(usize, Arc<LinkOps>)], region: u64) -> Result<LinkOps> {
        if legs.iter().all(|(_, ops)| ops.is_empty()) {
            return Ok(LinkOps::default());
        }
        self.computed += 1;
        let conj = a.conj();
        let pairs: Vec<(usize, usize)> = (0..a.rank()).filter(|&i| i != p).map(|i| (i, i)).collect();
        let one = C64::new(1.0, 0.0);
        let mut inside: Option<SymTensor> = None;
        for (x, ops) in legs {
            if let Some(b) = &ops.block {
                accumulate(&mut inside, a.apply_to_leg(b, *x)?, one)?;
            }
        }
        let mut by_term: BTreeMap<usize, Vec<(usize, &SymTensor)>> = BTreeMap::new();
        for (x, ops) in legs {
            for (t, op) in &ops.partial {
                by_term.entry(*t).or_default().push((*x, op));
            }
        }
        let mut partial = Vec::new();
        for (t, factors) in by_term {
            let mut y = a.clone();
            for (x, op) in &factors {
                y = y.apply_to_leg(op, *x)?;
            }
            if self.masks[t] & !region == 0 {
                accumulate(&mut inside, y, self.terms.terms()[t].coef)?;
            } else {
                partial.push((t, conj.contract(&y, &pairs)?));
            }
        }
        let block = match inside {
            Some(z) => Some(conj.contract(&z, &pairs)?),
            None => None,
        };
        Ok(LinkOps { block, partial })
    }

    /// Make sure all links entering the block formed by `nodes` (one node,
    /// or two adjacent nodes) are available and fresh.
    pub fn prepare(&mut self, state: &TTNState, nodes: &[usize]) -> Result<()> {
        for (node, _, nb) in block_legs(state, nodes)? {
            if let Neighbor::Node(c) = nb {
                self.link(state, c, node)?;
            }
        }
        Ok(())
    }

    fn leg_envs(&self, state: &TTNState, nodes: &[usize]) -> Result<Vec<Arc<LinkOps>>> {
        let mut out = Vec::new();
        for (node, _, nb) in block_legs(state, nodes)? {
            out.push(match nb {
                Neighbor::Site(s) => self.site_ops[s].clone(),
                Neighbor::Node(c) => {
                    let stamp = Self::stamp(state, c, node);
                    match self.links.get(&(c, node)) {
                        Some((s, ops)) if *s == stamp => ops.clone(),
                        Some(_) => {
                            return Err(Error::Invalid(format!("stale environment for link {c}->{node}")))
                        }
                        None => {
                            return Err(Error::Invalid(format!("missing environment for link {c}->{node}")))
                        }
                    }
                }
            });
        }
        Ok(out)
    }

    fn build(&self, state: &TTNState, nodes: &[usize], layout: BlockLayout) -> Result<EffectiveHamiltonian> {
        let envs = self.leg_envs(state, nodes)?;
        let mut products: Vec<(C64, Vec<(usize, SymTensor)>)> = Vec::new();
        let mut by_term: BTreeMap<usize, Vec<(usize, SymTensor)>> = BTreeMap::new();
        for (x, ops) in envs.iter().enumerate() {
            if let Some(b) = &ops.block {
                products.push((C64::new(1.0, 0.0), vec![(x, b.clone())]));
            }
            for (t, op) in &ops.partial {
                by_term.entry(*t).or_default().push((x, op.clone()));
            }
        }
        for (t, factors) in by_term {
            products.push((self.terms.terms()[t].coef, factors));
        }
        EffectiveHamiltonian::compile(layout, &products)
    }

    /// Effective Hamiltonian on the two-node block of the adjacent pair
    /// `(a, b)`, whose legs are those of `a` without the shared link followed
    /// by those of `b` without the shared link.
    pub fn effective_hamiltonian_2(&self, state: &TTNState, pair: (usize, usize)) -> Result<EffectiveHamiltonian> {
        let nodes = [pair.0, pair.1];
        let indices = block_legs(state, &nodes)?
            .into_iter()
            .map(|(node, leg, _)| state.tensor(node).index(leg).clone())
            .collect::<Vec<_>>();
        let layout = BlockLayout::new(&indices, state.particles() as i32);
        self.build(state, &nodes, layout)
    }

    /// Effective Hamiltonian on a single node tensor.
    pub fn effective_hamiltonian_1(&self, state: &TTNState, node: usize) -> Result<EffectiveHamiltonian> {
        let layout = BlockLayout::new(state.tensor(node).indices(), state.particles() as i32);
        self.build(state, &[node], layout)
    }
}

/// `(node, leg, neighbor)` for the open legs of a block of one node or two
/// adjacent nodes, in block leg order.
pub(crate) fn block_legs(state: &TTNState, nodes: &[usize]) -> Result<Vec<(usize, usize, Neighbor)>> {
    let topo = state.topology();
    let mut out = Vec::new();
    match nodes {
        [a] => {
            for (x, nb) in topo.neighbors(*a).iter().enumerate() {
                out.push((*a, x, *nb));
            }
        }
        [a, b] => {
            let pa = topo.leg_to(*a, *b).ok_or_else(|| Error::Invalid(format!("nodes {a} and {b} are not linked")))?;
            let pb = topo.leg_to(*b, *a).unwrap();
            for (x, nb) in topo.neighbors(*a).iter().enumerate() {
                if x != pa {
                    out.push((*a, x, *nb));
                }
            }
            for (x, nb) in topo.neighbors(*b).iter().enumerate() {
                if x != pb {
                    out.push((*b, x, *nb));
                }
            }
        }
        _ => return Err(Error::Invalid("blocks consist of one or two nodes".into())),
    }
    Ok(out)
}

struct Kernel {
    src: usize,
    dst: usize,
    pre: usize,
    n: usize,
    m: usize,
    post: usize,
    op: usize,
}

struct Stage {
    dst_len: usize,
    ops: Vec<Vec<C64>>,
    kernels: Vec<Kernel>,
}

struct CompiledTerm {
    coef: C64,
    stages: Vec<Stage>,
}

/// A Hermitian operator on the flat block layout of a one- or two-node
/// tensor, stored as a precompiled sum of products of single-leg operators.
pub struct EffectiveHamiltonian {
    layout: BlockLayout,
    terms: Vec<CompiledTerm>,
}

impl EffectiveHamiltonian {
    fn compile(layout: BlockLayout, products: &[(C64, Vec<(usize, SymTensor)>)]) -> Result<Self> {
        let mut terms = Vec::with_capacity(products.len());
        for (coef, factors) in products {
            let mut indices = layout.indices().to_vec();
            let mut charge = layout.charge();
            let mut src = layout.clone();
            let mut stages = Vec::with_capacity(factors.len());
            for (leg, op) in factors {
                if !op.index(1).pairs_with(&indices[*leg]) {
                    return Err(Error::Invalid(format!("environment operator does not fit leg {leg}")));
                }
                indices[*leg] = op.index(0).clone();
                charge += op.charge();
                let dst = BlockLayout::new(&indices, charge);
                let lookup: HashMap<&[i32], usize> =
                    dst.entries().iter().map(|(k, _, off)| (k.as_slice(), *off)).collect();
                let mut by_in: BTreeMap<i32, Vec<(i32, usize, usize)>> = BTreeMap::new();
                let mut ops = Vec::new();
                for (k, b) in op.blocks() {
                    by_in.entry(k[1]).or_default().push((k[0], ops.len(), b.shape()[0]));
                    ops.push(b.data().to_vec());
                }
                let mut kernels = Vec::new();
                for (key, shape, off) in src.entries() {
                    let Some(outs) = by_in.get(&key[*leg]) else { continue };
                    let pre: usize = shape[..*leg].iter().product();
                    let post: usize = shape[*leg + 1..].iter().product();
                    let n = shape[*leg];
                    let mut k2 = key.clone();
                    for &(qout, opi, m) in outs {
                        k2[*leg] = qout;
                        if let Some(&dst_off) = lookup.get(k2.as_slice()) {
                            kernels.push(Kernel { src: *off, dst: dst_off, pre, n, m, post, op: opi });
                        }
                    }
                }
                stages.push(Stage { dst_len: dst.len(), ops, kernels });
                src = dst;
            }
            if charge != layout.charge() || src.indices() != layout.indices() {
                return Err(Error::Invalid("effective Hamiltonian term does not conserve the block space".into()));
            }
            terms.push(CompiledTerm { coef: *coef, stages });
        }
        Ok(Self { layout, terms })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.layout.len());
        let mut out = vec![C64::new(0.0, 0.0); x.len()];
        let one = C64::new(1.0, 0.0);
        let mut tmp: Vec<C64> = Vec::new();
        for term in &self.terms {
            let last = term.stages.len() - 1;
            for (k, st) in term.stages.iter().enumerate() {
                let src: &[C64] = if k == 0 { x } else { &tmp };
                if k == last {
                    run_stage(st, src, &mut out, term.coef);
                } else {
                    let mut buf = vec![C64::new(0.0, 0.0); st.dst_len];
                    run_stage(st, src, &mut buf, one);
                    tmp = buf;
                }
            }
        }
        out
    }

    pub fn apply_tensor(&self, t: &SymTensor) -> SymTensor {
        self.layout.unflatten(&self.apply(&self.layout.flatten(t)))
    }

    /// `⟨t|H|t⟩ / ⟨t|t⟩`
    pub fn expectation(&self, t: &SymTensor) -> C64 {
        let v = self.layout.flatten(t);
        let hv = self.apply(&v);
        dot(&v, &hv) / dot(&v, &v)
    }
}

fn run_stage(st: &Stage, src: &[C64], dst: &mut [C64], alpha: C64) {
    let one = C64::new(1.0, 0.0);
    for kr in &st.kernels {
        let op = &st.ops[kr.op];
        let s = &src[kr.src..kr.src + kr.pre * kr.n * kr.post];
        let d = &mut dst[kr.dst..kr.dst + kr.pre * kr.m * kr.post];
        if kr.post == 1 {
            gemm_strided(
                kr.pre,
                kr.n,
                kr.m,
                alpha,
                s,
                (kr.n as isize, 1),
                op,
                (1, kr.n as isize),
                one,
                d,
                (kr.m as isize, 1),
            );
        } else {
            let (n, m, post) = (kr.n, kr.m, kr.post);
            for p in 0..kr.pre {
                gemm(m, n, post, alpha, op, &s[p * n * post..(p + 1) * n * post], one, &mut d[p * m * post..(p + 1) * m * post]);
            }
        }
    }
}

/// `⟨ψ|O|ψ⟩/⟨ψ|ψ⟩` for a sum of local terms, evaluated at the center.
pub fn expectation(state: &TTNState, terms: &TermList) -> Result<C64> {
    if terms.l() != state.topology().l() || terms.d() != state.local_dim() {
        return Err(Error::Invalid("operator and state live on different lattices".into()));
    }
    let mut env = Environment::new(terms.clone())?;
    let c = state.center();
    env.prepare(state, &[c])?;
    let h = env.effective_hamiltonian_1(state, c)?;
    Ok(h.expectation(state.tensor(c)))
}
