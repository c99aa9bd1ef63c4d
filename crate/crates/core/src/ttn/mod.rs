//! Binary tree tensor networks over the sites of a ring.
//!
//! Every node has two children (sites or nodes) and one upward leg; the two
//! uppermost nodes are joined to each other. Legs are ordered
//! `[children..., up]`. A state keeps one tensor per node and a movable
//! orthogonality center: the center tensor has only outgoing legs and carries
//! the particle number, every other tensor has its leg towards the center
//! incoming, total charge zero, and is an isometry onto that leg.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::symtensor::{ChargeIndex, Dense, Direction, SymTensor};

mod checkpoint;
mod env;

pub use env::{expectation, EffectiveHamiltonian, Environment, LinkOps};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Neighbor {
    Site(usize),
    Node(usize),
}

#[derive(Clone, Debug)]
pub struct TreeTopology {
    l: usize,
    neighbors: Vec<Vec<Neighbor>>,
    parent: Vec<Option<usize>>,
    top: (usize, usize),
    pairs: Vec<(usize, usize)>,
    /// per node and leg: sites beyond that leg
    leg_sites: Vec<Vec<u64>>,
    /// per node and leg: nodes beyond that leg
    leg_nodes: Vec<Vec<Vec<usize>>>,
    site_leaf: Vec<(usize, usize)>,
}

impl TreeTopology {
    pub fn new(l: usize) -> Result<Self> {
        if l < 2 || !l.is_power_of_two() || l > 64 {
            return Err(Error::Invalid(format!("tree needs L a power of two in 2..=64, got {l}")));
        }
        let mut neighbors: Vec<Vec<Neighbor>> = Vec::new();
        let mut parent: Vec<Option<usize>> = Vec::new();
        let mut layer: Vec<Neighbor> = (0..l).map(Neighbor::Site).collect();
        // build layers bottom-up until two nodes remain
        loop {
            let mut next = Vec::new();
            if layer.len() == 2 && matches!(layer[0], Neighbor::Node(_)) {
                break;
            }
            if layer.len() == 2 {
                // L = 2: each top node holds one site
                for s in &layer {
                    neighbors.push(vec![*s]);
                    parent.push(None);
                    next.push(Neighbor::Node(neighbors.len() - 1));
                }
                layer = next;
                break;
            }
            for pair in layer.chunks(2) {
                let idx = neighbors.len();
                neighbors.push(pair.to_vec());
                parent.push(None);
                for c in pair {
                    if let Neighbor::Node(c) = c {
                        parent[*c] = Some(idx);
                    }
                }
                next.push(Neighbor::Node(idx));
            }
            layer = next;
        }
        let (Neighbor::Node(t0), Neighbor::Node(t1)) = (layer[0], layer[1]) else { unreachable!() };
        for (i, nb) in neighbors.iter_mut().enumerate() {
            match parent[i] {
                Some(p) => nb.push(Neighbor::Node(p)),
                None => nb.push(Neighbor::Node(if i == t0 { t1 } else { t0 })),
            }
        }
        let mut pairs: Vec<(usize, usize)> =
            (0..neighbors.len()).filter_map(|i| parent[i].map(|p| (i, p))).collect();
        pairs.push((t0, t1));

        let mut topo = Self {
            l,
            neighbors,
            parent,
            top: (t0, t1),
            pairs,
            leg_sites: Vec::new(),
            leg_nodes: Vec::new(),
            site_leaf: vec![(0, 0); l],
        };
        let n = topo.neighbors.len();
        let mut leg_sites = vec![Vec::new(); n];
        let mut leg_nodes = vec![Vec::new(); n];
        for a in 0..n {
            for (leg, nb) in topo.neighbors[a].iter().enumerate() {
                match *nb {
                    Neighbor::Site(s) => {
                        leg_sites[a].push(1u64 << s);
                        leg_nodes[a].push(Vec::new());
                        topo.site_leaf[s] = (a, leg);
                    }
                    Neighbor::Node(c) => {
                        let (sites, nodes) = topo.beyond(a, c);
                        leg_sites[a].push(sites);
                        leg_nodes[a].push(nodes);
                    }
                }
            }
        }
        topo.leg_sites = leg_sites;
        topo.leg_nodes = leg_nodes;
        Ok(topo)
    }

    /// Sites and nodes reachable from `c` without passing through `a`.
    fn beyond(&self, a: usize, c: usize) -> (u64, Vec<usize>) {
        let mut sites = 0u64;
        let mut nodes = Vec::new();
        let mut stack = vec![(c, a)];
        while let Some((x, from)) = stack.pop() {
            nodes.push(x);
            for nb in &self.neighbors[x] {
                match *nb {
                    Neighbor::Site(s) => sites |= 1 << s,
                    Neighbor::Node(y) if y != from => stack.push((y, x)),
                    Neighbor::Node(_) => {}
                }
            }
        }
        nodes.sort_unstable();
        (sites, nodes)
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, node: usize) -> &[Neighbor] {
        &self.neighbors[node]
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    /// The two uppermost nodes.
    pub fn top_pair(&self) -> (usize, usize) {
        self.top
    }

    /// Linked node pairs in sweep order: bottom to top, left to right, the
    /// top pair last.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Leg of `node` that points to node `other`.
    pub fn leg_to(&self, node: usize, other: usize) -> Option<usize> {
        self.neighbors[node].iter().position(|nb| *nb == Neighbor::Node(other))
    }

    /// Node and leg holding a physical site.
    pub fn site_leaf(&self, site: usize) -> (usize, usize) {
        self.site_leaf[site]
    }

    pub fn leg_sites(&self, node: usize, leg: usize) -> u64 {
        self.leg_sites[node][leg]
    }

    pub fn leg_nodes(&self, node: usize, leg: usize) -> &[usize] {
        &self.leg_nodes[node][leg]
    }

    pub fn all_sites(&self) -> u64 {
        if self.l == 64 {
            u64::MAX
        } else {
            (1u64 << self.l) - 1
        }
    }

    /// Sites on the `from` side of the link `from`–`to`.
    pub fn region_sites(&self, from: usize, to: usize) -> u64 {
        let p = self.leg_to(from, to).expect("nodes are not adjacent");
        self.all_sites() & !self.leg_sites[from][p]
    }

    /// Nodes on the `from` side of the link `from`–`to`, including `from`.
    pub fn region_nodes(&self, from: usize, to: usize) -> Vec<usize> {
        let p = self.leg_to(from, to).expect("nodes are not adjacent");
        let mut out = vec![from];
        for (leg, nodes) in self.leg_nodes[from].iter().enumerate() {
            if leg != p {
                out.extend_from_slice(nodes);
            }
        }
        out
    }

    /// Node path from `a` to `b`, both included.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let n = self.num_nodes();
        let mut prev = vec![usize::MAX; n];
        let mut queue = VecDeque::from([a]);
        prev[a] = a;
        while let Some(x) = queue.pop_front() {
            if x == b {
                break;
            }
            for nb in &self.neighbors[x] {
                if let Neighbor::Node(y) = *nb {
                    if prev[y] == usize::MAX {
                        prev[y] = x;
                        queue.push_back(y);
                    }
                }
            }
        }
        let mut path = vec![b];
        let mut x = b;
        while x != a {
            x = prev[x];
            path.push(x);
        }
        path.reverse();
        path
    }

    /// Number of links between the leaves holding two sites.
    pub fn leaf_distance(&self, s1: usize, s2: usize) -> usize {
        let (a, _) = self.site_leaf(s1);
        let (b, _) = self.site_leaf(s2);
        self.path(a, b).len() + 1
    }

    /// Nodes ordered by decreasing distance from `root`.
    fn order_towards(&self, root: usize) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(x) = queue.pop_front() {
            for nb in &self.neighbors[x] {
                if let Neighbor::Node(y) = *nb {
                    if !seen[y] {
                        seen[y] = true;
                        order.push((y, x));
                        queue.push_back(y);
                    }
                }
            }
        }
        order.reverse();
        order
    }
}

static VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Tree tensor network state with fixed particle number.
#[derive(Clone, Debug)]
pub struct TTNState {
    topo: Arc<TreeTopology>,
    d: usize,
    n: usize,
    tensors: Vec<SymTensor>,
    center: usize,
    versions: Vec<u64>,
}

fn count_bits(x: u64) -> usize {
    x.count_ones() as usize
}

impl TTNState {
    fn check_sector(topo: &TreeTopology, d: usize, n: usize) -> Result<()> {
        if d < 2 {
            return Err(Error::Invalid("local dimension must be at least 2".into()));
        }
        if n > (d - 1) * topo.l() {
            return Err(Error::Invalid(format!(
                "no state with N = {n} particles on L = {} sites with d = {d}",
                topo.l()
            )));
        }
        Ok(())
    }

    /// Direction of `leg` of `node` when the center sits at `center`.
    fn leg_dir(topo: &TreeTopology, node: usize, leg: usize, center: usize) -> Direction {
        if node == center {
            return Direction::Out;
        }
        match topo.neighbors(node)[leg] {
            Neighbor::Site(_) => Direction::Out,
            Neighbor::Node(_) => {
                let towards = topo.leg_nodes(node, leg).contains(&center);
                if towards {
                    Direction::In
                } else {
                    Direction::Out
                }
            }
        }
    }

    /// Fock product state with bond dimension one, centered at the second top node.
    pub fn product_state(topo: Arc<TreeTopology>, d: usize, occupations: &[usize]) -> Result<Self> {
        if occupations.len() != topo.l() {
            return Err(Error::Invalid(format!(
                "{} occupations given for L = {}",
                occupations.len(),
                topo.l()
            )));
        }
        if let Some(o) = occupations.iter().find(|&&o| o >= d) {
            return Err(Error::Invalid(format!("occupation {o} exceeds the local dimension {d}")));
        }
        let n: usize = occupations.iter().sum();
        let center = topo.top_pair().1;
        let count = |mask: u64| -> i32 {
            (0..topo.l()).filter(|s| mask >> s & 1 == 1).map(|s| occupations[s] as i32).sum()
        };
        let mut tensors = Vec::with_capacity(topo.num_nodes());
        for node in 0..topo.num_nodes() {
            let mut indices = Vec::new();
            let mut key = Vec::new();
            for (leg, nb) in topo.neighbors(node).iter().enumerate() {
                let dir = Self::leg_dir(&topo, node, leg, center);
                match nb {
                    Neighbor::Site(s) => {
                        indices.push(ChargeIndex::physical(d, Direction::Out));
                        key.push(occupations[*s] as i32);
                    }
                    Neighbor::Node(_) => {
                        let beyond = count(topo.leg_sites(node, leg));
                        let q = if dir == Direction::In { n as i32 - beyond } else { beyond };
                        indices.push(ChargeIndex::new(dir, vec![(q, 1)])?);
                        key.push(q);
                    }
                }
            }
            let charge = if node == center { n as i32 } else { 0 };
            let mut t = SymTensor::zeros(indices, charge);
            let shape = vec![1; key.len()];
            t.insert_block(key, Dense::from_vec(&shape, vec![C64::new(1.0, 0.0)]))?;
            tensors.push(t);
        }
        let versions = (0..tensors.len()).map(|_| next_version()).collect();
        Ok(Self { topo, d, n, tensors, center, versions })
    }

    /// Random state in the `n`-particle sector with at most `bond_dim`
    /// charge sectors (of degeneracy one) per link, normalized and
    /// isometrized towards the second top node.
    pub fn random<R: Rng + ?Sized>(
        topo: Arc<TreeTopology>,
        d: usize,
        n: usize,
        bond_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_sector(&topo, d, n)?;
        if bond_dim == 0 {
            return Err(Error::Invalid("bond dimension must be at least 1".into()));
        }
        let l = topo.l();
        let center = topo.top_pair().1;
        let bond_sectors = |sites_beyond: usize| -> Vec<(i32, usize)> {
            let lo = n.saturating_sub((d - 1) * (l - sites_beyond));
            let hi = n.min((d - 1) * sites_beyond);
            let mut qs: Vec<usize> = (lo..=hi).collect();
            let mean = n as f64 * sites_beyond as f64 / l as f64;
            qs.sort_by(|a, b| (*a as f64 - mean).abs().partial_cmp(&(*b as f64 - mean).abs()).unwrap());
            qs.truncate(bond_dim);
            qs.sort_unstable();
            qs.into_iter().map(|q| (q as i32, 1)).collect()
        };
        let mut tensors = Vec::with_capacity(topo.num_nodes());
        for node in 0..topo.num_nodes() {
            let mut indices = Vec::new();
            for (leg, nb) in topo.neighbors(node).iter().enumerate() {
                let dir = Self::leg_dir(&topo, node, leg, center);
                match nb {
                    Neighbor::Site(_) => indices.push(ChargeIndex::physical(d, Direction::Out)),
                    Neighbor::Node(_) => {
                        // charges count the particles on the side away from the center
                        let mask = topo.leg_sites(node, leg);
                        let away = if dir == Direction::In { topo.all_sites() & !mask } else { mask };
                        indices.push(ChargeIndex::new(dir, bond_sectors(count_bits(away)))?);
                    }
                }
            }
            let charge = if node == center { n as i32 } else { 0 };
            tensors.push(SymTensor::random(indices, charge, rng));
        }
        let versions = (0..tensors.len()).map(|_| next_version()).collect();
        let mut state = Self { topo, d, n, tensors, center, versions };
        state.canonicalize()?;
        state.normalize()?;
        Ok(state)
    }

    /// Isometrize every node towards the current center, leaves first.
    pub fn canonicalize(&mut self) -> Result<()> {
        for (node, towards) in self.topo.order_towards(self.center) {
            self.push_gauge(node, towards)?;
        }
        Ok(())
    }

    pub fn topology(&self) -> &Arc<TreeTopology> {
        &self.topo
    }

    pub fn local_dim(&self) -> usize {
        self.d
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn tensor(&self, node: usize) -> &SymTensor {
        &self.tensors[node]
    }

    pub fn tensors(&self) -> &[SymTensor] {
        &self.tensors
    }

    pub fn version(&self, node: usize) -> u64 {
        self.versions[node]
    }

    /// Replace a node tensor. The caller is responsible for the gauge.
    pub fn set_tensor(&mut self, node: usize, t: SymTensor) {
        self.tensors[node] = t;
        self.versions[node] = next_version();
    }

    pub fn norm(&self) -> f64 {
        self.tensors[self.center].norm()
    }

    pub fn normalize(&mut self) -> Result<f64> {
        let nrm = self.norm();
        if nrm == 0.0 || !nrm.is_finite() {
            return Err(Error::Numerical(format!("cannot normalize a state of norm {nrm}")));
        }
        let c = self.center;
        let t = self.tensors[c].clone().scaled(C64::new(1.0 / nrm, 0.0));
        self.set_tensor(c, t);
        Ok(nrm)
    }

    /// QR-split `node` across its link to the adjacent `towards` and absorb
    /// the triangular factor there.
    fn push_gauge(&mut self, node: usize, towards: usize) -> Result<()> {
        let p = self.topo.leg_to(node, towards).expect("not adjacent");
        let q = self.topo.leg_to(towards, node).expect("not adjacent");
        let a = &self.tensors[node];
        let rank = a.rank();
        let rows: Vec<usize> = (0..rank).filter(|&i| i != p).collect();
        let (qt, r) = a.isometrize(&rows)?;
        let qt = qt.permute(&move_last_to(rank, p));
        let b = r.contract(&self.tensors[towards], &[(1, q)])?;
        let b = b.permute(&move_first_to(b.rank(), q));
        self.set_tensor(node, qt);
        self.set_tensor(towards, b);
        Ok(())
    }

    /// Move the orthogonality center to `target` along the tree path.
    pub fn isometrize_to(&mut self, target: usize) -> Result<()> {
        let path = self.topo.path(self.center, target);
        for w in path.windows(2) {
            self.push_gauge(w[0], w[1])?;
            self.center = w[1];
        }
        Ok(())
    }

    /// Largest bond dimension over all links.
    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().map(|x| x.2).max().unwrap_or(1)
    }

    /// `(node, parent-or-partner, dimension)` for every link.
    pub fn bond_dims(&self) -> Vec<(usize, usize, usize)> {
        self.topo
            .pairs()
            .iter()
            .map(|&(a, b)| {
                let p = self.topo.leg_to(a, b).unwrap();
                (a, b, self.tensors[a].index(p).dim())
            })
            .collect()
    }

    /// Largest deviation from the identity of `A†A` over non-center nodes,
    /// contracted over every leg except the one pointing to the center.
    pub fn isometry_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for node in 0..self.tensors.len() {
            if node == self.center {
                continue;
            }
            let towards = self.topo.path(node, self.center)[1];
            let p = self.topo.leg_to(node, towards).unwrap();
            let a = &self.tensors[node];
            let pairs: Vec<(usize, usize)> = (0..a.rank()).filter(|&i| i != p).map(|i| (i, i)).collect();
            let g = a.conj().contract(a, &pairs)?;
            let id = SymTensor::identity(a.index(p));
            // identity has legs [flipped, index]; g has [conj leg p, leg p]
            worst = worst.max(max_abs_diff(&g, &id));
        }
        Ok(worst)
    }

    /// Contract the whole network into a dense vector over the `d^L`
    /// occupation basis, site 0 the most significant digit.
    pub fn to_dense_vector(&self) -> Result<Vec<C64>> {
        let l = self.topo.l();
        if (self.d as f64).powi(l as i32) > (1u64 << 22) as f64 {
            return Err(Error::Capacity("state too large for a dense vector".into()));
        }
        #[derive(Clone, Copy, PartialEq)]
        enum Label {
            Site(usize),
            Edge(usize, usize),
        }
        let labels_of = |node: usize| -> Vec<Label> {
            self.topo
                .neighbors(node)
                .iter()
                .map(|nb| match *nb {
                    Neighbor::Site(s) => Label::Site(s),
                    Neighbor::Node(m) => Label::Edge(node, m),
                })
                .collect()
        };
        let root = self.center;
        let mut acc = self.tensors[root].clone();
        let mut labels = labels_of(root);
        let mut queue = VecDeque::from([(root, usize::MAX)]);
        while let Some((x, from)) = queue.pop_front() {
            for nb in self.topo.neighbors(x) {
                if let Neighbor::Node(y) = *nb {
                    if y == from {
                        continue;
                    }
                    let i = labels.iter().position(|lb| *lb == Label::Edge(x, y)).unwrap();
                    let j = self.topo.leg_to(y, x).unwrap();
                    acc = acc.contract(&self.tensors[y], &[(i, j)])?;
                    labels.remove(i);
                    let mut ly = labels_of(y);
                    ly.remove(j);
                    labels.extend(ly);
                    queue.push_back((y, x));
                }
            }
        }
        let perm: Vec<usize> =
            (0..l).map(|s| labels.iter().position(|lb| *lb == Label::Site(s)).unwrap()).collect();
        Ok(acc.permute(&perm).to_dense().into_data())
    }

    /// Amplitude of one occupation configuration.
    pub fn amplitude(&self, occupations: &[usize]) -> Result<C64> {
        let l = self.topo.l();
        if occupations.len() != l {
            return Err(Error::Invalid("configuration length differs from L".into()));
        }
        if occupations.iter().sum::<usize>() != self.n || occupations.iter().any(|&o| o >= self.d) {
            return Ok(C64::new(0.0, 0.0));
        }
        // project every site leg onto its occupation, then contract the
        // (now site-free) tree
        let mut tensors = self.tensors.clone();
        for s in 0..l {
            let (node, leg) = self.topo.site_leaf(s);
            let mut proj = SymTensor::zeros(
                vec![ChargeIndex::physical(self.d, Direction::In)],
                -(occupations[s] as i32),
            );
            proj.insert_block(vec![occupations[s] as i32], Dense::from_vec(&[1], vec![C64::new(1.0, 0.0)]))?;
            let t = tensors[node].contract(&proj, &[(leg, 0)])?;
            // reinsert a trivial leg so that leg positions stay valid
            let mut one = SymTensor::zeros(vec![ChargeIndex::new(Direction::Out, vec![(0, 1)])?], 0);
            one.insert_block(vec![0], Dense::from_vec(&[1], vec![C64::new(1.0, 0.0)]))?;
            let r = t.rank();
            let t = t.contract(&one, &[])?;
            let mut perm: Vec<usize> = (0..r).collect();
            perm.insert(leg, r);
            tensors[node] = t.permute(&perm);
        }
        let reduced = TTNState {
            topo: self.topo.clone(),
            d: 1,
            n: 0,
            tensors,
            center: self.center,
            versions: self.versions.clone(),
        };
        let v = reduced.contract_all()?;
        Ok(v)
    }

    fn contract_all(&self) -> Result<C64> {
        let mut acc = self.tensors[self.center].clone();
        let mut labels: Vec<(usize, usize)> =
            self.topo.neighbors(self.center).iter().map(|nb| edge_label(self.center, nb)).collect();
        let mut queue = VecDeque::from([(self.center, usize::MAX)]);
        while let Some((x, from)) = queue.pop_front() {
            for nb in self.topo.neighbors(x) {
                if let Neighbor::Node(y) = *nb {
                    if y == from {
                        continue;
                    }
                    let i = labels.iter().position(|lb| *lb == (x, y)).unwrap();
                    let j = self.topo.leg_to(y, x).unwrap();
                    acc = acc.contract(&self.tensors[y], &[(i, j)])?;
                    labels.remove(i);
                    let mut ly: Vec<(usize, usize)> =
                        self.topo.neighbors(y).iter().map(|nb| edge_label(y, nb)).collect();
                    ly.remove(j);
                    labels.extend(ly);
                    queue.push_back((y, x));
                }
            }
        }
        let d = acc.to_dense();
        Ok(d.data().iter().copied().sum())
    }

    /// `⟨self|other⟩` through dense vectors; only for small systems.
    pub fn overlap_dense(&self, other: &TTNState) -> Result<C64> {
        let a = self.to_dense_vector()?;
        let b = other.to_dense_vector()?;
        if a.len() != b.len() {
            return Err(Error::Invalid("states live on different lattices".into()));
        }
        Ok(a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum())
    }

    /// Two-node block of the linked pair `(a, b)`: the legs of `a` without
    /// the shared link, then those of `b`. One of the two must be the center.
    pub fn pair_tensor(&self, a: usize, b: usize) -> Result<SymTensor> {
        if self.center != a && self.center != b {
            return Err(Error::Invalid(format!("center {} is not on the pair ({a}, {b})", self.center)));
        }
        let pa = self.topo.leg_to(a, b).ok_or_else(|| Error::Invalid(format!("nodes {a} and {b} are not linked")))?;
        let pb = self.topo.leg_to(b, a).unwrap();
        Ok(self.tensors[a].contract(&self.tensors[b], &[(pa, pb)])?)
    }

    /// Split a two-node block of the pair `(a, b)` by a truncated SVD, keeping
    /// at most `max_dim` singular values above `rel_threshold · σ_max`. `a`
    /// becomes an isometry and the center moves to `b`. Returns the
    /// discarded weight.
    pub fn split_pair(&mut self, a: usize, b: usize, theta: &SymTensor, max_dim: usize, rel_threshold: f64) -> Result<f64> {
        let pa = self.topo.leg_to(a, b).ok_or_else(|| Error::Invalid(format!("nodes {a} and {b} are not linked")))?;
        let pb = self.topo.leg_to(b, a).unwrap();
        let ra = self.tensors[a].rank();
        let rb = self.tensors[b].rank();
        if theta.rank() != ra + rb - 2 {
            return Err(Error::Invalid("block tensor does not match the pair".into()));
        }
        let rows: Vec<usize> = (0..ra - 1).collect();
        let svd = theta.svd_truncate(&rows, max_dim, rel_threshold)?;
        self.set_tensor(a, svd.u.permute(&move_last_to(ra, pa)));
        self.set_tensor(b, svd.v.permute(&move_first_to(rb, pb)));
        self.center = b;
        Ok(svd.discarded_weight)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        checkpoint::load(path)
    }

    pub(crate) fn from_parts(topo: Arc<TreeTopology>, d: usize, n: usize, tensors: Vec<SymTensor>, center: usize) -> Self {
        let versions = (0..tensors.len()).map(|_| next_version()).collect();
        Self { topo, d, n, tensors, center, versions }
    }
}

fn edge_label(node: usize, nb: &Neighbor) -> (usize, usize) {
    match *nb {
        Neighbor::Site(s) => (usize::MAX, s),
        Neighbor::Node(m) => (node, m),
    }
}

fn max_abs_diff(a: &SymTensor, b: &SymTensor) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, x) in a.blocks() {
        match b.block(k) {
            Some(y) => {
                for (p, q) in x.data().iter().zip(y.data()) {
                    worst = worst.max((p - q).norm());
                }
            }
            None => worst = worst.max(x.data().iter().map(|z| z.norm()).fold(0.0, f64::max)),
        }
    }
    for (k, y) in b.blocks() {
        if a.block(k).is_none() {
            worst = worst.max(y.data().iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
    }
    worst
}

/// Permutation moving the last leg of a rank-`rank` tensor to position `p`.
pub(crate) fn move_last_to(rank: usize, p: usize) -> Vec<usize> {
    (0..rank)
        .map(|i| match i.cmp(&p) {
            std::cmp::Ordering::Less => i,
            std::cmp::Ordering::Equal => rank - 1,
            std::cmp::Ordering::Greater => i - 1,
        })
        .collect()
}

/// Permutation moving the first leg of a rank-`rank` tensor to position `p`.
pub(crate) fn move_first_to(rank: usize, p: usize) -> Vec<usize> {
    (0..rank)
        .map(|i| match i.cmp(&p) {
            std::cmp::Ordering::Less => i + 1,
            std::cmp::Ordering::Equal => 0,
            std::cmp::Ordering::Greater => i,
        })
        .collect()
}
