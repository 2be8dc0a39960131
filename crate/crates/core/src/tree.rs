//! Leaf-labeled unrooted trees.
//!
//! Internal vertices are unlabeled with valency at least three; leaves carry
//! unique taxon names. The order in which taxa appear (`taxa()`) fixes the
//! axis order of every tensor built on the tree.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type VertexId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub usize);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Bipartition of the taxa induced by an edge.
///
/// `side_a` always holds the taxon that comes first in the tree's taxa order;
/// both sides list taxa in that order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Split {
    pub side_a: Vec<String>,
    pub side_b: Vec<String>,
}

impl Split {
    /// Build a canonical split of `order` from the taxa on one side.
    pub fn from_side(order: &[String], side: &[String]) -> Result<Split> {
        let set: HashSet<&str> = side.iter().map(String::as_str).collect();
        if set.len() != side.len() {
            return Err(Error::Partition("repeated taxon in split side".into()));
        }
        for s in side {
            if !order.contains(s) {
                return Err(Error::UnknownTaxon(s.clone()));
            }
        }
        let (mut a, mut b): (Vec<String>, Vec<String>) = order
            .iter()
            .cloned()
            .partition(|t| set.contains(t.as_str()));
        if a.is_empty() || b.is_empty() {
            return Err(Error::Partition("split sides must be nonempty".into()));
        }
        if !set.contains(order[0].as_str()) {
            std::mem::swap(&mut a, &mut b);
        }
        Ok(Split {
            side_a: a,
            side_b: b,
        })
    }

    /// Order-independent key, for comparing splits between trees whose taxa
    /// orders differ.
    pub fn key(&self) -> (BTreeSet<String>, BTreeSet<String>) {
        let a: BTreeSet<String> = self.side_a.iter().cloned().collect();
        let b: BTreeSet<String> = self.side_b.iter().cloned().collect();
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.side_a.len() == 1 || self.side_b.len() == 1
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.side_a.join(","), self.side_b.join(","))
    }
}

/// Partition of the taxa induced by removing an internal vertex; one part per
/// incident edge, parts ordered by their first taxon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tripartition {
    pub parts: Vec<Vec<String>>,
}

impl fmt::Display for Tripartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.parts.iter().map(|p| p.join(",")).collect();
        write!(f, "{}", parts.join("|"))
    }
}

/// Parent pointers for a tree rooted at some vertex.
#[derive(Debug, Clone)]
pub struct Rooting {
    pub root: VertexId,
    pub parent: Vec<Option<(VertexId, EdgeId)>>,
    /// Vertices in preorder (root first).
    pub preorder: Vec<VertexId>,
}

impl Rooting {
    /// `(parent, child)` orientation of `e`.
    pub fn orient(&self, tree: &Tree, e: EdgeId) -> (VertexId, VertexId) {
        let (u, v) = tree.edge(e);
        match self.parent[v] {
            Some((p, pe)) if p == u && pe == e => (u, v),
            _ => (v, u),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    adj: Vec<Vec<(VertexId, EdgeId)>>,
    edges: Vec<(VertexId, VertexId)>,
    taxon_of: Vec<Option<usize>>,
    taxa: Vec<String>,
    leaf_of: Vec<VertexId>,
    index: HashMap<String, usize>,
}

/// Result of joining two trees along a pair of leaves.
#[derive(Debug, Clone)]
pub struct Joined {
    pub tree: Tree,
    pub conjoined: EdgeId,
    /// Image of each edge of the first tree (its pendant edge maps to `conjoined`).
    pub edges_first: Vec<EdgeId>,
    pub edges_second: Vec<EdgeId>,
    /// Image of each vertex of the first tree (`None` for the join leaf).
    pub vertices_first: Vec<Option<VertexId>>,
    pub vertices_second: Vec<Option<VertexId>>,
}

impl Tree {
    /// Assemble and validate a tree from raw parts. `labels[v]` names leaf `v`.
    pub fn from_parts(
        n_vertices: usize,
        edges: Vec<(VertexId, VertexId)>,
        labels: Vec<Option<String>>,
        taxa_order: Vec<String>,
    ) -> Result<Tree> {
        if labels.len() != n_vertices {
            return Err(Error::InvalidTree(
                "label count differs from vertex count".into(),
            ));
        }
        let mut adj = vec![Vec::new(); n_vertices];
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= n_vertices || v >= n_vertices || u == v {
                return Err(Error::InvalidTree(format!("bad edge {u}-{v}")));
            }
            adj[u].push((v, EdgeId(i)));
            adj[v].push((u, EdgeId(i)));
        }
        let mut index = HashMap::new();
        for (i, t) in taxa_order.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::DuplicateTaxon(t.clone()));
            }
        }
        let mut taxon_of = vec![None; n_vertices];
        let mut leaf_of = vec![usize::MAX; taxa_order.len()];
        let mut seen = HashSet::new();
        for (v, l) in labels.iter().enumerate() {
            if let Some(name) = l {
                if !seen.insert(name.clone()) {
                    return Err(Error::DuplicateTaxon(name.clone()));
                }
                let &i = index.get(name).ok_or_else(|| {
                    Error::InvalidTree(format!("taxon `{name}` missing from taxa order"))
                })?;
                taxon_of[v] = Some(i);
                leaf_of[i] = v;
            }
        }
        if seen.len() != taxa_order.len() {
            return Err(Error::InvalidTree(
                "taxa order names a taxon with no leaf".into(),
            ));
        }
        if taxa_order.len() < 2 {
            return Err(Error::InvalidTree("a tree needs at least two taxa".into()));
        }
        if edges.len() + 1 != n_vertices {
            return Err(Error::InvalidTree(
                "edge count must be vertex count minus one".into(),
            ));
        }
        for v in 0..n_vertices {
            let d = adj[v].len();
            match taxon_of[v] {
                Some(_) if d != 1 => {
                    return Err(Error::InvalidTree(format!(
                        "leaf `{}` has valency {d}",
                        labels[v].as_ref().unwrap()
                    )))
                }
                None if d < 3 => {
                    return Err(Error::InvalidTree(format!(
                        "internal vertex has valency {d}"
                    )))
                }
                _ => {}
            }
        }
        let tree = Tree {
            adj,
            edges,
            taxon_of,
            taxa: taxa_order,
            leaf_of,
            index,
        };
        if tree.rooted_at(0).preorder.len() != n_vertices {
            return Err(Error::InvalidTree("tree is not connected".into()));
        }
        Ok(tree)
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Taxon names in taxa order.
    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn taxon_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownTaxon(name.to_string()))
    }

    pub fn leaf(&self, taxon: usize) -> VertexId {
        self.leaf_of[taxon]
    }

    pub fn leaf_by_name(&self, name: &str) -> Result<VertexId> {
        Ok(self.leaf_of[self.taxon_index(name)?])
    }

    pub fn taxon_at(&self, v: VertexId) -> Option<usize> {
        self.taxon_of[v]
    }

    pub fn is_leaf(&self, v: VertexId) -> bool {
        self.taxon_of[v].is_some()
    }

    pub fn neighbors(&self, v: VertexId) -> &[(VertexId, EdgeId)] {
        &self.adj[v]
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.adj[v].len()
    }

    pub fn edge(&self, e: EdgeId) -> (VertexId, VertexId) {
        self.edges[e.0]
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.edges.len()).map(EdgeId)
    }

    pub fn has_edge(&self, e: EdgeId) -> bool {
        e.0 < self.edges.len()
    }

    pub fn edge_between(&self, u: VertexId, v: VertexId) -> Option<EdgeId> {
        self.adj
            .get(u)?
            .iter()
            .find(|&&(w, _)| w == v)
            .map(|&(_, e)| e)
    }

    pub fn pendant_edge(&self, taxon: usize) -> EdgeId {
        self.adj[self.leaf_of[taxon]][0].1
    }

    pub fn internal_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.adj.len()).filter(|&v| !self.is_leaf(v))
    }

    pub fn internal_edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.edge_ids().filter(|&e| {
            let (u, v) = self.edge(e);
            !self.is_leaf(u) && !self.is_leaf(v)
        })
    }

    pub fn is_binary(&self) -> bool {
        self.internal_vertices().all(|v| self.degree(v) == 3)
    }

    /// Leaves are named by taxon; internal vertices are `#k`, numbered in
    /// vertex-id order.
    pub fn vertex_name(&self, v: VertexId) -> String {
        match self.taxon_of[v] {
            Some(t) => self.taxa[t].clone(),
            None => format!("#{}", (0..v).filter(|&w| !self.is_leaf(w)).count()),
        }
    }

    pub fn vertex_by_name(&self, name: &str) -> Result<VertexId> {
        if let Some(k) = name.strip_prefix('#') {
            let k: usize = k.parse().map_err(|_| Error::UnknownVertex(name.into()))?;
            return self
                .internal_vertices()
                .nth(k)
                .ok_or_else(|| Error::UnknownVertex(name.into()));
        }
        self.leaf_by_name(name)
            .map_err(|_| Error::UnknownVertex(name.into()))
    }

    pub fn rooted_at(&self, root: VertexId) -> Rooting {
        let mut parent = vec![None; self.adj.len()];
        let mut preorder = Vec::with_capacity(self.adj.len());
        let mut visited = vec![false; self.adj.len()];
        let mut stack = vec![root];
        visited[root] = true;
        while let Some(v) = stack.pop() {
            preorder.push(v);
            for &(w, e) in self.adj[v].iter().rev() {
                if !visited[w] {
                    visited[w] = true;
                    parent[w] = Some((v, e));
                    stack.push(w);
                }
            }
        }
        Rooting {
            root,
            parent,
            preorder,
        }
    }

    /// Taxa (as indices, ascending) reachable from `start` without passing
    /// through `blocked`.
    fn component_taxa(&self, start: VertexId, blocked: VertexId) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![(start, blocked)];
        while let Some((v, from)) = stack.pop() {
            if let Some(t) = self.taxon_of[v] {
                out.push(t);
            }
            for &(w, _) in &self.adj[v] {
                if w != from {
                    stack.push((w, v));
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn names(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| self.taxa[i].clone()).collect()
    }

    /// Taxa on each side of `e`, as sorted index lists `(side of u, side of v)`.
    pub fn edge_sides(&self, e: EdgeId) -> Result<(Vec<usize>, Vec<usize>)> {
        if !self.has_edge(e) {
            return Err(Error::NoSuchEdge(e.0));
        }
        let (u, v) = self.edge(e);
        Ok((self.component_taxa(u, v), self.component_taxa(v, u)))
    }

    pub fn edge_split(&self, e: EdgeId) -> Result<Split> {
        let (a, b) = self.edge_sides(e)?;
        let (a, b) = if a[0] == 0 { (a, b) } else { (b, a) };
        Ok(Split {
            side_a: self.names(&a),
            side_b: self.names(&b),
        })
    }

    pub fn splits(&self) -> Vec<Split> {
        self.edge_ids()
            .map(|e| self.edge_split(e).expect("edge exists"))
            .collect()
    }

    /// Order-independent set of nontrivial splits; two trees on the same taxa
    /// are isomorphic exactly when these agree.
    pub fn split_keys(&self) -> BTreeSet<(BTreeSet<String>, BTreeSet<String>)> {
        self.splits()
            .iter()
            .filter(|s| !s.is_trivial())
            .map(Split::key)
            .collect()
    }

    pub fn same_topology(&self, other: &Tree) -> bool {
        let a: BTreeSet<&String> = self.taxa.iter().collect();
        let b: BTreeSet<&String> = other.taxa.iter().collect();
        a == b && self.split_keys() == other.split_keys()
    }

    /// Taxa indices of each part around an internal vertex, ordered by first taxon.
    pub fn vertex_parts(&self, v: VertexId) -> Result<Vec<Vec<usize>>> {
        if v >= self.adj.len() {
            return Err(Error::UnknownVertex(v.to_string()));
        }
        if self.is_leaf(v) {
            return Err(Error::LeafVertex(v));
        }
        let mut parts: Vec<Vec<usize>> = self.adj[v]
            .iter()
            .map(|&(w, _)| self.component_taxa(w, v))
            .collect();
        parts.sort_by_key(|p| p[0]);
        Ok(parts)
    }

    pub fn vertex_tripartition(&self, v: VertexId) -> Result<Tripartition> {
        let parts = self.vertex_parts(v)?;
        Ok(Tripartition {
            parts: parts.iter().map(|p| self.names(p)).collect(),
        })
    }

    /// Pairs of leaves sharing an internal neighbor, each pair in taxa order,
    /// pairs sorted lexicographically by taxa order.
    pub fn cherry_indices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.n_taxa() < 3 {
            return out;
        }
        for v in self.internal_vertices() {
            let mut leaves: Vec<usize> = self.adj[v]
                .iter()
                .filter_map(|&(w, _)| self.taxon_of[w])
                .collect();
            leaves.sort_unstable();
            for i in 0..leaves.len() {
                for j in i + 1..leaves.len() {
                    out.push((leaves[i], leaves[j]));
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn find_cherries(&self) -> Vec<(String, String)> {
        let out: Vec<(String, String)> = self
            .cherry_indices()
            .into_iter()
            .map(|(a, b)| (self.taxa[a].clone(), self.taxa[b].clone()))
            .collect();
        debug_assert!(!self.is_binary() || self.n_taxa() < 3 || out.len() >= 2);
        out
    }

    /// Delete the cherry `(a, b)` and turn its common vertex into a leaf named
    /// `new_taxon`, placed at the earlier of the two taxa positions. When the
    /// common vertex has valency above three it stays internal and `new_taxon`
    /// is attached to it as a fresh leaf.
    pub fn prune_cherry(&self, a: &str, b: &str, new_taxon: &str) -> Result<Tree> {
        let ta = self.taxon_index(a)?;
        let tb = self.taxon_index(b)?;
        if self.index.contains_key(new_taxon) && new_taxon != a && new_taxon != b {
            return Err(Error::DuplicateTaxon(new_taxon.to_string()));
        }
        let (va, vb) = (self.leaf_of[ta], self.leaf_of[tb]);
        let common = self.adj[va][0].0;
        if ta == tb || self.adj[vb][0].0 != common || self.is_leaf(common) {
            return Err(Error::NotACherry(a.into(), b.into()));
        }
        let first = ta.min(tb);
        let mut order = Vec::with_capacity(self.n_taxa() - 1);
        for (i, t) in self.taxa.iter().enumerate() {
            if i == first {
                order.push(new_taxon.to_string());
            } else if i != ta && i != tb {
                order.push(t.clone());
            }
        }
        let keep: Vec<VertexId> = (0..self.adj.len())
            .filter(|&v| v != va && v != vb)
            .collect();
        let mut remap = vec![usize::MAX; self.adj.len()];
        for (i, &v) in keep.iter().enumerate() {
            remap[v] = i;
        }
        let mut labels: Vec<Option<String>> = keep
            .iter()
            .map(|&v| self.taxon_of[v].map(|t| self.taxa[t].clone()))
            .collect();
        let mut edges: Vec<(VertexId, VertexId)> = self
            .edges
            .iter()
            .filter(|&&(u, v)| u != va && u != vb && v != va && v != vb)
            .map(|&(u, v)| (remap[u], remap[v]))
            .collect();
        let mut n = keep.len();
        if self.degree(common) == 3 {
            labels[remap[common]] = Some(new_taxon.to_string());
        } else {
            labels.push(Some(new_taxon.to_string()));
            edges.push((remap[common], n));
            n += 1;
        }
        Tree::from_parts(n, edges, labels, order)
    }

    /// Join `t1` and `t2` by identifying leaf `leaf1` of `t1` with leaf
    /// `leaf2` of `t2`, deleting that vertex and fusing its two edges into
    /// one conjoined edge. Taxa order: `t1` without `leaf1`, then `t2`
    /// without `leaf2`.
    pub fn star_join(t1: &Tree, t2: &Tree, leaf1: &str, leaf2: &str) -> Result<Joined> {
        let x1 = t1.taxon_index(leaf1)?;
        let x2 = t2.taxon_index(leaf2)?;
        let (l1, l2) = (t1.leaf_of[x1], t2.leaf_of[x2]);
        for t in t1.taxa.iter().filter(|t| *t != leaf1) {
            if t2.index.contains_key(t) && t != leaf2 {
                return Err(Error::DuplicateTaxon(t.clone()));
            }
        }
        let (nb1, pe1) = t1.adj[l1][0];
        let (nb2, pe2) = t2.adj[l2][0];
        let mut vertices_first = vec![None; t1.n_vertices()];
        let mut vertices_second = vec![None; t2.n_vertices()];
        let mut labels = Vec::new();
        for (v, slot) in vertices_first.iter_mut().enumerate() {
            if v != l1 {
                *slot = Some(labels.len());
                labels.push(t1.taxon_of[v].map(|t| t1.taxa[t].clone()));
            }
        }
        for (v, slot) in vertices_second.iter_mut().enumerate() {
            if v != l2 {
                *slot = Some(labels.len());
                labels.push(t2.taxon_of[v].map(|t| t2.taxa[t].clone()));
            }
        }
        let mut edges = Vec::new();
        let mut edges_first = vec![EdgeId(usize::MAX); t1.n_edges()];
        let mut edges_second = vec![EdgeId(usize::MAX); t2.n_edges()];
        for (i, &(u, v)) in t1.edges.iter().enumerate() {
            if EdgeId(i) != pe1 {
                edges_first[i] = EdgeId(edges.len());
                edges.push((vertices_first[u].unwrap(), vertices_first[v].unwrap()));
            }
        }
        for (i, &(u, v)) in t2.edges.iter().enumerate() {
            if EdgeId(i) != pe2 {
                edges_second[i] = EdgeId(edges.len());
                edges.push((vertices_second[u].unwrap(), vertices_second[v].unwrap()));
            }
        }
        let conjoined = EdgeId(edges.len());
        edges.push((vertices_first[nb1].unwrap(), vertices_second[nb2].unwrap()));
        edges_first[pe1.0] = conjoined;
        edges_second[pe2.0] = conjoined;
        let order: Vec<String> = t1
            .taxa
            .iter()
            .filter(|t| *t != leaf1)
            .chain(t2.taxa.iter().filter(|t| *t != leaf2))
            .cloned()
            .collect();
        let tree = Tree::from_parts(labels.len(), edges, labels, order)?;
        Ok(Joined {
            tree,
            conjoined,
            edges_first,
            edges_second,
            vertices_first,
            vertices_second,
        })
    }

    /// Cut `e` and close each half with a new leaf called `name`. Returns
    /// `(T', T'')` with `T' ⋆ T'' = self` when joined at `name`: `T'` holds the
    /// side containing the first taxon (with `name` last in its taxa order),
    /// `T''` the other side (with `name` first).
    pub fn split_on_edge(&self, e: EdgeId, name: &str) -> Result<(Tree, Tree)> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateTaxon(name.to_string()));
        }
        let (u, v) = if !self.has_edge(e) {
            return Err(Error::NoSuchEdge(e.0));
        } else {
            self.edge(e)
        };
        let (u, v) = if self.component_taxa(u, v)[0] == 0 {
            (u, v)
        } else {
            (v, u)
        };
        let half = |start: VertexId, block: VertexId, new_first: bool| -> Result<Tree> {
            let mut verts = Vec::new();
            let mut stack = vec![(start, block)];
            while let Some((x, from)) = stack.pop() {
                verts.push(x);
                for &(w, _) in &self.adj[x] {
                    if w != from {
                        stack.push((w, x));
                    }
                }
            }
            verts.sort_unstable();
            let mut remap = HashMap::new();
            for (i, &x) in verts.iter().enumerate() {
                remap.insert(x, i);
            }
            let mut labels: Vec<Option<String>> = verts
                .iter()
                .map(|&x| self.taxon_of[x].map(|t| self.taxa[t].clone()))
                .collect();
            let mut edges: Vec<(VertexId, VertexId)> = self
                .edges
                .iter()
                .filter(|&&(a, b)| remap.contains_key(&a) && remap.contains_key(&b))
                .map(|&(a, b)| (remap[&a], remap[&b]))
                .collect();
            let new_v = labels.len();
            labels.push(Some(name.to_string()));
            edges.push((remap[&start], new_v));
            let mut own: Vec<usize> = verts.iter().filter_map(|&x| self.taxon_of[x]).collect();
            own.sort_unstable();
            let mut order: Vec<String> = own.iter().map(|&t| self.taxa[t].clone()).collect();
            if new_first {
                order.insert(0, name.to_string());
            } else {
                order.push(name.to_string());
            }
            Tree::from_parts(labels.len(), edges, labels, order)
        };
        Ok((half(u, v, false)?, half(v, u, true)?))
    }

    /// Resolve every vertex of valency above three into a caterpillar. Edge
    /// ids of `self` are preserved; the returned edges are the new ones whose
    /// contraction recovers `self`. Neighbors are attached in taxa order;
    /// a nonzero `seed` shuffles that order deterministically.
    pub fn resolve_binary(&self, seed: u64) -> (Tree, Vec<EdgeId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = self.edges.clone();
        let mut labels: Vec<Option<String>> = (0..self.n_vertices())
            .map(|v| self.taxon_of[v].map(|t| self.taxa[t].clone()))
            .collect();
        let mut collapsed = Vec::new();
        for v in 0..self.n_vertices() {
            let d = self.degree(v);
            if self.is_leaf(v) || d <= 3 {
                continue;
            }
            let mut nbrs: Vec<(usize, EdgeId)> = self.adj[v]
                .iter()
                .map(|&(w, e)| (self.component_taxa(w, v)[0], e))
                .collect();
            nbrs.sort_unstable();
            if seed != 0 {
                nbrs.shuffle(&mut rng);
            }
            // v keeps nbrs[0], nbrs[1]; chain w_1..w_{d-3} takes the rest
            let mut prev = v;
            for (j, &(_, e)) in nbrs.iter().enumerate().skip(2) {
                let owner = if j == d - 1 {
                    prev
                } else {
                    let w = labels.len();
                    labels.push(None);
                    collapsed.push(EdgeId(edges.len()));
                    edges.push((prev, w));
                    prev = w;
                    w
                };
                let (a, b) = edges[e.0];
                edges[e.0] = if a == v { (owner, b) } else { (a, owner) };
            }
        }
        let tree = Tree::from_parts(labels.len(), edges, labels, self.taxa.clone())
            .expect("caterpillar resolution keeps the tree valid");
        (tree, collapsed)
    }

    /// Contract the given edges, merging their endpoints.
    pub fn contract_edges(&self, contract: &[EdgeId]) -> Result<Tree> {
        let mut rep: Vec<usize> = (0..self.n_vertices()).collect();
        fn find(rep: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while rep[r] != r {
                r = rep[r];
            }
            rep[x] = r;
            r
        }
        let set: HashSet<EdgeId> = contract.iter().copied().collect();
        for &e in contract {
            if !self.has_edge(e) {
                return Err(Error::NoSuchEdge(e.0));
            }
            let (u, v) = self.edge(e);
            if self.is_leaf(u) || self.is_leaf(v) {
                return Err(Error::InvalidTree("cannot contract a pendant edge".into()));
            }
            let (ru, rv) = (find(&mut rep, u), find(&mut rep, v));
            rep[ru.max(rv)] = ru.min(rv);
        }
        let mut remap = HashMap::new();
        let mut labels = Vec::new();
        for v in 0..self.n_vertices() {
            let r = find(&mut rep, v);
            if r == v {
                remap.insert(v, labels.len());
                labels.push(self.taxon_of[v].map(|t| self.taxa[t].clone()));
            }
        }
        let edges = self
            .edge_ids()
            .filter(|e| !set.contains(e))
            .map(|e| {
                let (u, v) = self.edge(e);
                (remap[&find(&mut rep, u)], remap[&find(&mut rep, v)])
            })
            .collect();
        Tree::from_parts(labels.len(), edges, labels, self.taxa.clone())
    }

    /// Canonical Newick: rooted at the neighbor of the first taxon, children
    /// sorted by their first taxon in taxa order.
    pub fn to_newick(&self) -> String {
        if self.n_taxa() == 2 {
            return format!("({},{});", quote(&self.taxa[0]), quote(&self.taxa[1]));
        }
        let root = self.adj[self.leaf_of[0]][0].0;
        let mut out = String::new();
        self.write_subtree(root, usize::MAX, &mut out);
        out.push(';');
        out
    }

    fn write_subtree(&self, v: VertexId, from: VertexId, out: &mut String) {
        if let Some(t) = self.taxon_of[v] {
            out.push_str(&quote(&self.taxa[t]));
            return;
        }
        let mut kids: Vec<(usize, VertexId)> = self.adj[v]
            .iter()
            .filter(|&&(w, _)| w != from)
            .map(|&(w, _)| (self.component_taxa(w, v)[0], w))
            .collect();
        kids.sort_unstable();
        out.push('(');
        for (i, &(_, w)) in kids.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.write_subtree(w, v, out);
        }
        out.push(')');
    }
}

fn quote(name: &str) -> String {
    if name
        .chars()
        .any(|c| "()[]':;,".contains(c) || c.is_whitespace())
    {
        format!("'{}'", name.replace('\'', "''"))
    } else {
        name.to_string()
    }
}

struct RawNode {
    label: Option<String>,
    children: Vec<usize>,
}

struct NewickParser<'a> {
    src: &'a [u8],
    pos: usize,
    nodes: Vec<RawNode>,
}

impl NewickParser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::NewickSyntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) -> Result<()> {
        loop {
            match self.src.get(self.pos) {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    let start = self.pos;
                    while self.src.get(self.pos).is_some_and(|&c| c != b']') {
                        self.pos += 1;
                    }
                    if self.pos >= self.src.len() {
                        self.pos = start;
                        return self.err("unterminated comment");
                    }
                    self.pos += 1;
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>> {
        self.skip_ws()?;
        Ok(self.src.get(self.pos).copied())
    }

    fn label(&mut self) -> Result<Option<String>> {
        self.skip_ws()?;
        if self.src.get(self.pos) == Some(&b'\'') {
            self.pos += 1;
            let mut buf = Vec::new();
            loop {
                match self.src.get(self.pos) {
                    None => return self.err("unterminated quoted label"),
                    Some(b'\'') if self.src.get(self.pos + 1) == Some(&b'\'') => {
                        buf.push(b'\'');
                        self.pos += 2;
                    }
                    Some(b'\'') => {
                        self.pos += 1;
                        break;
                    }
                    Some(&c) => {
                        buf.push(c);
                        self.pos += 1;
                    }
                }
            }
            return Ok(Some(String::from_utf8_lossy(&buf).into_owned()));
        }
        let start = self.pos;
        while let Some(&c) = self.src.get(self.pos) {
            if b"()[]':;,".contains(&c) || c.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Ok(None);
        }
        Ok(Some(
            String::from_utf8_lossy(&self.src[start..self.pos]).into_owned(),
        ))
    }

    fn branch_length(&mut self) -> Result<()> {
        if self.peek()? == Some(b':') {
            self.pos += 1;
            self.skip_ws()?;
            let start = self.pos;
            while self
                .src
                .get(self.pos)
                .is_some_and(|c| c.is_ascii_digit() || b"+-.eE".contains(c))
            {
                self.pos += 1;
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
            if text.parse::<f64>().is_err() {
                self.pos = start;
                return self.err("malformed branch length");
            }
        }
        Ok(())
    }

    fn subtree(&mut self, depth: usize) -> Result<usize> {
        if depth > 10_000 {
            return self.err("nesting too deep");
        }
        let id = self.nodes.len();
        self.nodes.push(RawNode {
            label: None,
            children: Vec::new(),
        });
        if self.peek()? == Some(b'(') {
            self.pos += 1;
            loop {
                let child = self.subtree(depth + 1)?;
                self.nodes[id].children.push(child);
                match self.peek()? {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.err("expected `,` or `)`"),
                }
            }
            // internal labels (support values etc.) are discarded
            self.label()?;
        } else {
            match self.label()? {
                Some(l) => self.nodes[id].label = Some(l),
                None => return self.err("expected a taxon name or `(`"),
            }
        }
        self.branch_length()?;
        Ok(id)
    }
}

/// Parse a Newick string. Branch lengths, internal labels and `[...]`
/// comments are accepted and discarded. A root of valency two (as written by
/// rooted Newick) is suppressed; any other vertex of valency two is an error.
pub fn parse_newick(text: &str) -> Result<Tree> {
    let mut p = NewickParser {
        src: text.as_bytes(),
        pos: 0,
        nodes: Vec::new(),
    };
    let root = p.subtree(0)?;
    if p.peek()? != Some(b';') {
        return p.err("expected `;`");
    }
    p.pos += 1;
    if p.peek()?.is_some() {
        return p.err("trailing characters after `;`");
    }
    let nodes = p.nodes;
    // taxa in order of appearance (node ids are allocated in preorder)
    let mut taxa = Vec::new();
    let mut seen = HashSet::new();
    for n in &nodes {
        if let Some(l) = &n.label {
            if l.starts_with('#') {
                return Err(Error::InvalidTree(format!(
                    "taxon `{l}` may not start with `#`"
                )));
            }
            if !seen.insert(l.clone()) {
                return Err(Error::DuplicateTaxon(l.clone()));
            }
            taxa.push(l.clone());
        }
    }
    for (i, n) in nodes.iter().enumerate() {
        if i != root && n.children.len() == 1 {
            return Err(Error::InvalidTree("internal vertex of valency 2".into()));
        }
    }
    match nodes[root].children.len() {
        0 => return Err(Error::InvalidTree("a tree needs at least two taxa".into())),
        1 => return Err(Error::InvalidTree("root has a single child".into())),
        _ => {}
    }
    let suppress_root = nodes[root].children.len() == 2;
    let mut id_of = vec![usize::MAX; nodes.len()];
    let mut labels = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        if suppress_root && i == root {
            continue;
        }
        id_of[i] = labels.len();
        labels.push(n.label.clone());
    }
    let mut edges = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        if suppress_root && i == root {
            continue;
        }
        for &c in &n.children {
            edges.push((id_of[i], id_of[c]));
        }
    }
    if suppress_root {
        let c = &nodes[root].children;
        edges.push((id_of[c[0]], id_of[c[1]]));
    }
    Tree::from_parts(labels.len(), edges, labels, taxa)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> Tree {
        parse_newick("((a1,a2),a3,(a4,a5));").unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_five_taxon_tree() {
        let t = fig1();
        assert_eq!(t.taxa(), names(&["a1", "a2", "a3", "a4", "a5"]).as_slice());
        assert_eq!(t.n_edges(), 7);
        assert!(t.is_binary());
        assert_eq!(t.internal_edges().count(), 2);
    }

    #[test]
    fn parses_two_taxon_tree() {
        let t = parse_newick("(a1,a2);").unwrap();
        assert_eq!(t.n_edges(), 1);
        assert_eq!(t.n_vertices(), 2);
    }

    #[test]
    fn discards_lengths_comments_and_internal_labels() {
        let t = parse_newick("((a:0.1,b:2e-3)95:0.5,[note] c:1,'d e':3);").unwrap();
        assert_eq!(t.taxa(), names(&["a", "b", "c", "d e"]).as_slice());
        assert_eq!(t.to_newick(), "(a,b,(c,'d e'));");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_newick("((a,b),c"),
            Err(Error::NewickSyntax { .. })
        ));
        assert!(matches!(
            parse_newick("((a,b),(a,c));"),
            Err(Error::DuplicateTaxon(_))
        ));
        assert!(matches!(
            parse_newick("(((a,b)),c,d);"),
            Err(Error::InvalidTree(_))
        ));
        assert!(matches!(
            parse_newick("((a,b),c,d) x y;"),
            Err(Error::NewickSyntax { .. })
        ));
        assert!(matches!(
            parse_newick("(a,,b);"),
            Err(Error::NewickSyntax { .. })
        ));
        assert!(parse_newick("a;").is_err());
    }

    #[test]
    fn canonical_writer_round_trips() {
        let t = parse_newick("((a,b),(c,d));").unwrap();
        let s = t.to_newick();
        assert_eq!(s, "(a,b,(c,d));");
        let back = parse_newick(&s).unwrap();
        assert!(back.same_topology(&t));
    }

    #[test]
    fn edge_splits_of_five_taxon_tree() {
        let t = fig1();
        let mut internal: Vec<String> = t
            .internal_edges()
            .map(|e| t.edge_split(e).unwrap().to_string())
            .collect();
        internal.sort();
        assert_eq!(
            internal,
            vec!["a1,a2,a3|a4,a5".to_string(), "a1,a2|a3,a4,a5".to_string()]
        );
        let p = t.pendant_edge(t.taxon_index("a3").unwrap());
        assert_eq!(t.edge_split(p).unwrap().to_string(), "a1,a2,a4,a5|a3");
        assert!(matches!(
            t.edge_split(EdgeId(99)),
            Err(Error::NoSuchEdge(99))
        ));
    }

    #[test]
    fn tripartitions() {
        let t = fig1();
        let mut parts: Vec<String> = t
            .internal_vertices()
            .map(|v| t.vertex_tripartition(v).unwrap().to_string())
            .collect();
        parts.sort();
        assert_eq!(
            parts,
            vec!["a1,a2,a3|a4|a5", "a1,a2|a3|a4,a5", "a1|a2|a3,a4,a5"]
        );
        let star = parse_newick("(a1,a2,a3);").unwrap();
        let c = star.internal_vertices().next().unwrap();
        assert_eq!(star.vertex_tripartition(c).unwrap().to_string(), "a1|a2|a3");
        assert!(matches!(
            t.vertex_tripartition(t.leaf(0)),
            Err(Error::LeafVertex(_))
        ));
    }

    #[test]
    fn cherries() {
        let t = fig1();
        assert_eq!(
            t.find_cherries(),
            vec![("a1".into(), "a2".into()), ("a4".into(), "a5".into())]
        );
        let star = parse_newick("(a,b,c,d);").unwrap();
        assert_eq!(star.find_cherries().len(), 6);
        // unrooted: the suppressed root leaves c and d on a common vertex
        let cat = parse_newick("(((a,b),c),d);").unwrap();
        assert_eq!(
            cat.find_cherries(),
            vec![("a".into(), "b".into()), ("c".into(), "d".into())]
        );
        let five = parse_newick("((((a,b),c),d),e);").unwrap();
        assert_eq!(
            five.find_cherries(),
            vec![("a".into(), "b".into()), ("d".into(), "e".into())]
        );
    }

    #[test]
    fn prune_cherries() {
        let t = fig1();
        let p = t.prune_cherry("a4", "a5", "b").unwrap();
        assert_eq!(p.taxa(), names(&["a1", "a2", "a3", "b"]).as_slice());
        assert!(p.same_topology(&parse_newick("((a1,a2),a3,b);").unwrap()));
        assert!(p.is_binary());
        assert!(!p.find_cherries().is_empty());

        let star = parse_newick("(a1,a2,a3);").unwrap();
        let two = star.prune_cherry("a2", "a3", "b").unwrap();
        assert_eq!(two.taxa(), names(&["a1", "b"]).as_slice());
        assert_eq!(two.n_edges(), 1);

        assert!(matches!(
            t.prune_cherry("a1", "a3", "b"),
            Err(Error::NotACherry(..))
        ));
        assert!(matches!(
            t.prune_cherry("a4", "a5", "a1"),
            Err(Error::DuplicateTaxon(_))
        ));
    }

    #[test]
    fn star_join_builds_five_taxon_tree() {
        let t1 = parse_newick("((a1,a2),(a3,x));").unwrap();
        let t2 = parse_newick("(x,a4,a5);").unwrap();
        let j = Tree::star_join(&t1, &t2, "x", "x").unwrap();
        assert!(j.tree.same_topology(&fig1()));
        assert_eq!(
            j.tree.taxa(),
            names(&["a1", "a2", "a3", "a4", "a5"]).as_slice()
        );
        let s = j.tree.edge_split(j.conjoined).unwrap();
        assert_eq!(s.to_string(), "a1,a2,a3|a4,a5");
    }

    #[test]
    fn star_join_with_two_taxon_tree_is_identity() {
        let t = fig1();
        let two = parse_newick("(a5,z);").unwrap();
        let j = Tree::star_join(&t, &two, "a5", "a5").unwrap();
        let renamed = parse_newick("((a1,a2),a3,(a4,z));").unwrap();
        assert!(j.tree.same_topology(&renamed));
        assert!(Tree::star_join(&t, &two, "a5", "q").is_err());
        let clash = parse_newick("(x,a1);").unwrap();
        assert!(matches!(
            Tree::star_join(&t, &clash, "a5", "x"),
            Err(Error::DuplicateTaxon(_))
        ));
    }

    #[test]
    fn split_on_edge_inverts_join() {
        let t = fig1();
        for e in t.edge_ids() {
            let (a, b) = t.split_on_edge(e, "#cut").unwrap();
            let j = Tree::star_join(&a, &b, "#cut", "#cut").unwrap();
            assert!(j.tree.same_topology(&t));
        }
    }

    #[test]
    fn resolve_binary_star() {
        let star = parse_newick("(a,b,c,d);").unwrap();
        let (bin, collapsed) = star.resolve_binary(0);
        assert!(bin.is_binary());
        assert_eq!(collapsed.len(), 1);
        assert!(bin.same_topology(&parse_newick("((a,b),(c,d));").unwrap()));
        let back = bin.contract_edges(&collapsed).unwrap();
        assert!(back.same_topology(&star));

        let t = fig1();
        let (same, none) = t.resolve_binary(7);
        assert!(none.is_empty());
        assert!(same.same_topology(&t));
    }

    #[test]
    fn resolve_binary_seeds_are_deterministic() {
        let star = parse_newick("(a,b,c,d,e,f);").unwrap();
        let (x, cx) = star.resolve_binary(42);
        let (y, _) = star.resolve_binary(42);
        assert_eq!(x.to_newick(), y.to_newick());
        assert_eq!(cx.len(), 3);
        assert!(x.contract_edges(&cx).unwrap().same_topology(&star));
    }

    #[test]
    fn vertex_names_round_trip() {
        let t = fig1();
        for v in 0..t.n_vertices() {
            assert_eq!(t.vertex_by_name(&t.vertex_name(v)).unwrap(), v);
        }
    }
}
