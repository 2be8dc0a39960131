//! Parameterizations of the general Markov model on a tree.
//!
//! [`ModelParams`] carries a root distribution and stochastic matrices and
//! yields joint distributions; [`GeneralParams`] carries arbitrary matrices and
//! yields points of the cone over the phylogenetic variety. Matrices are
//! indexed by [`EdgeId`] and oriented away from the root: row = parent state,
//! column = child state.

use std::fmt::Write as _;

use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{parse_err, Error, Result};
use crate::linalg::Matrix;
use crate::par::{self, Exec};
use crate::scalar::{parse_rational, Q};
use crate::tensor::{uniform_axes, Axis, Tensor};
use crate::tree::{EdgeId, Tree, VertexId};

/// Root distribution plus one Markov matrix per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub root: VertexId,
    pub pi: Vec<Q>,
    pub matrices: Vec<Matrix<Q>>,
}

/// One arbitrary matrix per edge; the root only fixes orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralParams {
    pub root: VertexId,
    pub matrices: Vec<Matrix<Q>>,
}

/// Either kind of parameters, as read from a params file.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Stochastic(ModelParams),
    General(GeneralParams),
}

/// Common view used by the joint-tensor constructions.
pub trait EdgeParams: Sync {
    fn root(&self) -> VertexId;
    /// Root weights, or `None` when the factor is omitted.
    fn root_weights(&self) -> Option<&[Q]>;
    fn matrices(&self) -> &[Matrix<Q>];

    fn kappa(&self) -> usize {
        match self.root_weights() {
            Some(pi) => pi.len(),
            None => self.matrices().first().map_or(0, Matrix::rows),
        }
    }

    /// Check shapes against `t`: one square `kappa x kappa` matrix per edge.
    fn check_shape(&self, t: &Tree) -> Result<()> {
        let k = self.kappa();
        if k == 0 {
            return Err(Error::Params("kappa must be positive".into()));
        }
        if self.root() >= t.n_vertices() {
            return Err(Error::Params(format!(
                "root {} is not a vertex",
                self.root()
            )));
        }
        if self.matrices().len() != t.n_edges() {
            return Err(Error::Params(format!(
                "{} matrices for {} edges",
                self.matrices().len(),
                t.n_edges()
            )));
        }
        for (i, m) in self.matrices().iter().enumerate() {
            if m.rows() != k || m.cols() != k {
                return Err(Error::Params(format!(
                    "matrix on e{i} is {}x{}, expected {k}x{k}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }
}

impl EdgeParams for ModelParams {
    fn root(&self) -> VertexId {
        self.root
    }
    fn root_weights(&self) -> Option<&[Q]> {
        Some(&self.pi)
    }
    fn matrices(&self) -> &[Matrix<Q>] {
        &self.matrices
    }
}

impl EdgeParams for GeneralParams {
    fn root(&self) -> VertexId {
        self.root
    }
    fn root_weights(&self) -> Option<&[Q]> {
        None
    }
    fn matrices(&self) -> &[Matrix<Q>] {
        &self.matrices
    }
}

impl EdgeParams for Params {
    fn root(&self) -> VertexId {
        match self {
            Params::Stochastic(p) => p.root,
            Params::General(p) => p.root,
        }
    }
    fn root_weights(&self) -> Option<&[Q]> {
        match self {
            Params::Stochastic(p) => Some(&p.pi),
            Params::General(_) => None,
        }
    }
    fn matrices(&self) -> &[Matrix<Q>] {
        match self {
            Params::Stochastic(p) => &p.matrices,
            Params::General(p) => &p.matrices,
        }
    }
}

/// First internal vertex, or vertex 0 for the two-taxon tree.
pub fn default_root(t: &Tree) -> VertexId {
    t.internal_vertices().next().unwrap_or(0)
}

fn is_stochastic_row(row: &[Q]) -> bool {
    row.iter().all(|x| !x.is_negative())
        && row.iter().cloned().fold(Q::zero(), |a, b| a + b).is_one()
}

impl ModelParams {
    /// Uniform root distribution and identity matrices.
    pub fn identity(t: &Tree, kappa: usize, root: VertexId) -> ModelParams {
        ModelParams {
            root,
            pi: vec![Q::new(1.into(), (kappa as i64).into()); kappa],
            matrices: vec![Matrix::identity(kappa); t.n_edges()],
        }
    }

    pub fn validate(&self, t: &Tree) -> Result<()> {
        self.check_shape(t)?;
        if !is_stochastic_row(&self.pi) {
            return Err(Error::Params(
                "root distribution must be nonnegative and sum to 1".into(),
            ));
        }
        for (i, m) in self.matrices.iter().enumerate() {
            for r in 0..m.rows() {
                if !is_stochastic_row(m.row(r)) {
                    return Err(Error::Params(format!(
                        "row {r} of the matrix on e{i} is not stochastic"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Equivalent parameters rooted at `new_root`, reversing each edge on the
    /// path by Bayes' rule. Rows for states of probability zero become
    /// standard basis rows.
    pub fn reroot(&self, t: &Tree, new_root: VertexId) -> Result<ModelParams> {
        self.validate(t)?;
        if new_root >= t.n_vertices() {
            return Err(Error::Params(format!("root {new_root} is not a vertex")));
        }
        let k = self.pi.len();
        let rooting = t.rooted_at(self.root);
        let mut path = vec![new_root];
        while let Some((p, _)) = rooting.parent[*path.last().unwrap()] {
            path.push(p);
        }
        path.reverse();
        let mut out = self.clone();
        let mut pi = self.pi.clone();
        for w in path.windows(2) {
            let e = t.edge_between(w[0], w[1]).expect("path follows edges");
            let m = &self.matrices[e.0];
            let next: Vec<Q> = (0..k)
                .map(|j| (0..k).fold(Q::zero(), |a, i| a + &pi[i] * m.get(i, j)))
                .collect();
            let rev = Matrix::from_fn(k, k, |j, i| {
                if next[j].is_zero() {
                    if i == j {
                        Q::one()
                    } else {
                        Q::zero()
                    }
                } else {
                    &pi[i] * m.get(i, j) / &next[j]
                }
            });
            out.matrices[e.0] = rev;
            pi = next;
        }
        out.pi = pi;
        out.root = new_root;
        Ok(out)
    }
}

impl GeneralParams {
    /// Equivalent parameters rooted at `new_root`: every edge on the path
    /// from the old root is transposed.
    pub fn reroot(&self, t: &Tree, new_root: VertexId) -> Result<GeneralParams> {
        self.check_shape(t)?;
        if new_root >= t.n_vertices() {
            return Err(Error::Params(format!("root {new_root} is not a vertex")));
        }
        let rooting = t.rooted_at(self.root);
        let mut out = self.clone();
        let mut v = new_root;
        while let Some((p, e)) = rooting.parent[v] {
            out.matrices[e.0] = self.matrices[e.0].transpose();
            v = p;
        }
        out.root = new_root;
        Ok(out)
    }

    /// Scale the matrix on one edge.
    pub fn scale_edge(&self, e: EdgeId, s: &Q) -> GeneralParams {
        let mut out = self.clone();
        out.matrices[e.0] = out.matrices[e.0].scale(s);
        out
    }
}

/// Absorb `diag(pi)` into the matrix on the root's first incident edge, so that
/// the cone parameterization of the result equals the joint distribution.
pub fn stochastic_to_general(t: &Tree, params: &ModelParams) -> Result<GeneralParams> {
    params.validate(t)?;
    let e0 = t
        .neighbors(params.root)
        .iter()
        .map(|&(_, e)| e)
        .min()
        .expect("every vertex has an edge");
    let mut matrices = params.matrices.clone();
    matrices[e0.0] = Matrix::diag(&params.pi).mul(&matrices[e0.0])?;
    Ok(GeneralParams {
        root: params.root,
        matrices,
    })
}

/// Joint tensor by explicit summation over all assignments of states to the
/// internal vertices. Exponential in the number of internal vertices.
pub fn joint_history(t: &Tree, params: &impl EdgeParams) -> Result<Tensor<Q>> {
    params.check_shape(t)?;
    let k = params.kappa();
    let rooting = t.rooted_at(params.root());
    let internal: Vec<VertexId> = t.internal_vertices().collect();
    let mut slot = vec![usize::MAX; t.n_vertices()];
    for (i, &v) in internal.iter().enumerate() {
        slot[v] = i;
    }
    let oriented: Vec<(VertexId, VertexId, &Matrix<Q>)> = t
        .edge_ids()
        .map(|e| {
            let (p, c) = rooting.orient(t, e);
            (p, c, &params.matrices()[e.0])
        })
        .collect();
    let axes = uniform_axes(t.taxa(), k);
    let n_hist = k.pow(internal.len() as u32);
    let patterns = k.pow(t.n_taxa() as u32);
    let dims = vec![k; t.n_taxa()];
    let data = par::map_range(Exec::Parallel, patterns, |flat| {
        let mut leaf_state = vec![0usize; t.n_taxa()];
        let mut rem = flat;
        for i in (0..dims.len()).rev() {
            leaf_state[i] = rem % k;
            rem /= k;
        }
        let state_of = |v: VertexId, h: &[usize]| match t.taxon_at(v) {
            Some(i) => leaf_state[i],
            None => h[slot[v]],
        };
        let mut h = vec![0usize; internal.len()];
        let mut total = Q::zero();
        for _ in 0..n_hist {
            let mut w = match params.root_weights() {
                Some(pi) => pi[state_of(params.root(), &h)].clone(),
                None => Q::one(),
            };
            for &(p, c, m) in &oriented {
                if w.is_zero() {
                    break;
                }
                w *= m.get(state_of(p, &h), state_of(c, &h));
            }
            total += w;
            crate::tensor::next_index(&mut h, &vec![k; internal.len()]);
        }
        total
    });
    Tensor::new(axes, data)
}

/// Rule for picking the next cherry in [`joint_inductive_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CherryOrder {
    /// The eligible cherry whose least taxon comes first.
    #[default]
    LeastTaxon,
    /// A uniformly random eligible cherry at every step.
    Seeded(u64),
}

/// Joint tensor by repeated cherry reduction, picking the least-taxon cherry.
pub fn joint_inductive(t: &Tree, params: &impl EdgeParams) -> Result<Tensor<Q>> {
    joint_inductive_with(t, params, CherryOrder::LeastTaxon)
}

/// Joint tensor by repeated cherry reduction. Non-binary trees are first
/// resolved, with identity matrices on the new edges. The two-taxon base is
/// `diag(pi) M` (or `M` without root weights), rows indexed by the root.
pub fn joint_inductive_with(
    t: &Tree,
    params: &impl EdgeParams,
    order: CherryOrder,
) -> Result<Tensor<Q>> {
    params.check_shape(t)?;
    let k = params.kappa();
    let (tb, collapsed) = t.resolve_binary(0);
    let mut matrices: Vec<Matrix<Q>> = params.matrices().to_vec();
    matrices.resize(matrices.len() + collapsed.len(), Matrix::identity(k));
    let root = params.root();
    let rooting = tb.rooted_at(root);
    let mut rng = match order {
        CherryOrder::Seeded(s) => Some(ChaCha8Rng::seed_from_u64(s)),
        CherryOrder::LeastTaxon => None,
    };

    // Prune cherries down to a single edge, recording each step.
    let nv = tb.n_vertices();
    let mut active = vec![true; nv];
    let mut key: Vec<usize> = (0..nv)
        .map(|v| tb.taxon_at(v).unwrap_or(usize::MAX))
        .collect();
    let mut n_active = nv;
    let mut steps: Vec<(VertexId, VertexId, VertexId)> = Vec::new();
    let active_nbrs = |v: VertexId, active: &[bool]| -> Vec<VertexId> {
        tb.neighbors(v)
            .iter()
            .map(|&(w, _)| w)
            .filter(|&w| active[w])
            .collect()
    };
    while n_active > 2 {
        let mut cherries: Vec<(usize, VertexId, VertexId, VertexId)> = Vec::new();
        for v in 0..nv {
            if !active[v] {
                continue;
            }
            let nb = active_nbrs(v, &active);
            let leaves: Vec<VertexId> = nb
                .iter()
                .copied()
                .filter(|&w| w != root && active_nbrs(w, &active).len() == 1)
                .collect();
            if nb.len() == 3 && leaves.len() >= 2 {
                let (a, b) = if key[leaves[0]] <= key[leaves[1]] {
                    (leaves[0], leaves[1])
                } else {
                    (leaves[1], leaves[0])
                };
                cherries.push((key[a].min(key[b]), a, b, v));
            }
        }
        cherries.sort_unstable();
        let &(_, a, b, v) = match rng.as_mut() {
            Some(r) => cherries.choose(r),
            None => cherries.first(),
        }
        .ok_or_else(|| Error::InvalidTree("no prunable cherry".into()))?;
        active[a] = false;
        active[b] = false;
        n_active -= 2;
        key[v] = key[a].min(key[b]);
        steps.push((a, b, v));
    }

    let name = |v: VertexId| format!("\u{0}{v}");
    let ends: Vec<VertexId> = (0..nv).filter(|&v| active[v]).collect();
    let (x, y) = if ends[0] == root {
        (ends[0], ends[1])
    } else {
        (ends[1], ends[0])
    };
    debug_assert_eq!(x, root);
    let e = tb
        .edge_between(x, y)
        .expect("remaining vertices are adjacent");
    let base = match params.root_weights() {
        Some(pi) => Matrix::diag(pi).mul(&matrices[e.0])?,
        None => matrices[e.0].clone(),
    };
    let mut p = Tensor::new(
        vec![Axis::new(name(x), k), Axis::new(name(y), k)],
        base.into_data(),
    )?;
    for &(a, b, v) in steps.iter().rev() {
        let ea = tb.edge_between(v, a).expect("cherry edge");
        let eb = tb.edge_between(v, b).expect("cherry edge");
        debug_assert_eq!(rooting.orient(&tb, ea), (v, a));
        let (ma, mb) = (&matrices[ea.0], &matrices[eb.0]);
        let fork = Tensor::from_fn(
            vec![
                Axis::new(name(v), k),
                Axis::new(name(a), k),
                Axis::new(name(b), k),
            ],
            |i| ma.get(i[0], i[1]) * mb.get(i[0], i[2]),
        )?;
        let pos = p.axis_position(&name(v))?;
        p = p.star(&fork, pos, 0)?;
    }
    let order: Vec<String> = (0..tb.n_taxa()).map(|i| name(tb.leaf(i))).collect();
    let p = p.permute_to(&order)?;
    Tensor::new(uniform_axes(t.taxa(), k), p.into_data())
}

/// Parameters on `star_join(t1, t2, leaf1, leaf2)`: matrices are copied and
/// the conjoined edge receives `A B`, where `A` is the `t1` matrix oriented
/// into `leaf1` and `B` the `t2` matrix oriented out of `leaf2`.
pub fn star_params(
    t1: &Tree,
    u1: &GeneralParams,
    t2: &Tree,
    u2: &GeneralParams,
    leaf1: &str,
    leaf2: &str,
) -> Result<(crate::tree::Joined, GeneralParams)> {
    u1.check_shape(t1)?;
    u2.check_shape(t2)?;
    if u1.kappa() != u2.kappa() {
        return Err(Error::Params(format!(
            "kappa mismatch: {} vs {}",
            u1.kappa(),
            u2.kappa()
        )));
    }
    let l1 = t1.leaf_by_name(leaf1)?;
    let l2 = t2.leaf_by_name(leaf2)?;
    let joined = Tree::star_join(t1, t2, leaf1, leaf2)?;
    let r1 = if u1.root == l1 {
        t1.neighbors(l1)[0].0
    } else {
        u1.root
    };
    let a1 = u1.reroot(t1, r1)?;
    let b2 = u2.reroot(t2, l2)?;
    let pe1 = t1.neighbors(l1)[0].1;
    let pe2 = t2.neighbors(l2)[0].1;
    let mut matrices = vec![Matrix::identity(u1.kappa()); joined.tree.n_edges()];
    for (i, m) in a1.matrices.iter().enumerate() {
        matrices[joined.edges_first[i].0] = m.clone();
    }
    for (i, m) in b2.matrices.iter().enumerate() {
        matrices[joined.edges_second[i].0] = m.clone();
    }
    matrices[joined.conjoined.0] = a1.matrices[pe1.0].mul(&b2.matrices[pe2.0])?;
    let root = joined.vertices_first[r1].expect("root is not the join leaf");
    Ok((joined, GeneralParams { root, matrices }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Stochastic,
    General,
}

/// Options for random parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SampleOptions {
    /// Stochastic rows are integer weights in `1..=9`, normalized; this is
    /// added to the diagonal weight before normalizing.
    pub diag_boost: u32,
    /// Root vertex; `None` picks [`default_root`].
    pub root: Option<VertexId>,
}

/// Random parameters, deterministic in `seed`. Stochastic rows are normalized
/// positive integers (exact); general entries are integers in `[-9, 9]`.
pub fn sample_params(t: &Tree, kappa: usize, seed: u64, mode: SampleMode) -> Params {
    sample_params_with(t, kappa, seed, mode, SampleOptions::default())
}

pub fn sample_params_with(
    t: &Tree,
    kappa: usize,
    seed: u64,
    mode: SampleMode,
    opts: SampleOptions,
) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = opts.root.unwrap_or_else(|| default_root(t));
    let stochastic_row = |rng: &mut ChaCha8Rng, diag: Option<usize>| -> Vec<Q> {
        let w: Vec<i64> = (0..kappa)
            .map(|j| {
                rng.gen_range(1..=9)
                    + if Some(j) == diag {
                        opts.diag_boost as i64
                    } else {
                        0
                    }
            })
            .collect();
        let total: i64 = w.iter().sum();
        w.into_iter()
            .map(|x| Q::new(x.into(), total.into()))
            .collect()
    };
    match mode {
        SampleMode::Stochastic => {
            let pi = stochastic_row(&mut rng, None);
            let matrices = (0..t.n_edges())
                .map(|_| {
                    let rows: Vec<Vec<Q>> = (0..kappa)
                        .map(|r| stochastic_row(&mut rng, Some(r)))
                        .collect();
                    Matrix::from_rows(rows).expect("square rows")
                })
                .collect();
            Params::Stochastic(ModelParams { root, pi, matrices })
        }
        SampleMode::General => {
            let matrices = (0..t.n_edges())
                .map(|_| {
                    Matrix::from_fn(kappa, kappa, |_, _| {
                        Q::from_integer(rng.gen_range(-9i64..=9).into())
                    })
                })
                .collect();
            Params::General(GeneralParams { root, matrices })
        }
    }
}

/// Random general parameters (a random point of the cone).
pub fn sample_general(t: &Tree, kappa: usize, seed: u64) -> GeneralParams {
    match sample_params(t, kappa, seed, SampleMode::General) {
        Params::General(g) => g,
        Params::Stochastic(_) => unreachable!(),
    }
}

/// Random stochastic parameters.
pub fn sample_stochastic(t: &Tree, kappa: usize, seed: u64, diag_boost: u32) -> ModelParams {
    let opts = SampleOptions {
        diag_boost,
        root: None,
    };
    match sample_params_with(t, kappa, seed, SampleMode::Stochastic, opts) {
        Params::Stochastic(m) => m,
        Params::General(_) => unreachable!(),
    }
}

fn cumulative(row: &[Q]) -> Vec<f64> {
    let mut acc = 0.0;
    row.iter()
        .map(|x| {
            acc += crate::scalar::q_to_f64(x);
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("nonempty row");
    cdf.iter()
        .position(|&c| u * total < c)
        .unwrap_or(cdf.len() - 1)
}

/// Site-pattern counts from `sites` independent simulations. Site `s` uses a
/// ChaCha8 generator seeded with `seed` on stream `s`, so the counts do not
/// depend on the execution policy.
pub fn simulate_sequences(
    t: &Tree,
    params: &ModelParams,
    sites: usize,
    seed: u64,
    exec: Exec,
) -> Result<Tensor<Q>> {
    params.validate(t)?;
    if sites == 0 {
        return Err(Error::Params("number of sites must be positive".into()));
    }
    let k = params.pi.len();
    let rooting = t.rooted_at(params.root);
    let root_cdf = cumulative(&params.pi);
    let cdfs: Vec<Vec<Vec<f64>>> = params
        .matrices
        .iter()
        .map(|m| (0..k).map(|r| cumulative(m.row(r))).collect())
        .collect();
    let n = t.n_taxa();
    let mut stride = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        stride[i] = stride[i + 1] * k;
    }
    let cells = k.pow(n as u32);
    let counts = par::fold_range(
        exec,
        sites,
        || vec![0u64; cells],
        |mut acc, site| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(site as u64);
            let mut state = vec![0usize; t.n_vertices()];
            for &v in &rooting.preorder {
                state[v] = match rooting.parent[v] {
                    None => draw(&root_cdf, rng.gen()),
                    Some((p, e)) => draw(&cdfs[e.0][state[p]], rng.gen()),
                };
            }
            let off: usize = (0..n).map(|i| state[t.leaf(i)] * stride[i]).sum();
            acc[off] += 1;
            acc
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
            a
        },
    );
    Tensor::new(
        uniform_axes(t.taxa(), k),
        counts
            .into_iter()
            .map(|c| Q::from_integer(c.into()))
            .collect(),
    )
}

impl Params {
    pub fn joint(&self, t: &Tree) -> Result<Tensor<Q>> {
        if let Params::Stochastic(p) = self {
            p.validate(t)?;
        }
        joint_inductive(t, self)
    }

    pub fn to_text(&self, t: &Tree) -> String {
        let mut s = format!("root: {}\n", t.vertex_name(self.root()));
        if let Some(pi) = self.root_weights() {
            let row: Vec<String> = pi.iter().map(ToString::to_string).collect();
            let _ = writeln!(s, "pi: {}", row.join(" "));
        }
        let rooting = t.rooted_at(self.root());
        for e in t.edge_ids() {
            let (p, c) = rooting.orient(t, e);
            let _ = writeln!(s, "edge {}-{}:", t.vertex_name(p), t.vertex_name(c));
            let m = &self.matrices()[e.0];
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(ToString::to_string).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    /// Parse a params file for tree `t`. Edge blocks must be oriented away
    /// from the root; a file with `pi:` is stochastic and is validated.
    pub fn from_text(t: &Tree, text: &str) -> Result<Params> {
        let mut root = None;
        let mut pi: Option<Vec<Q>> = None;
        let mut matrices: Vec<Option<Matrix<Q>>> = vec![None; t.n_edges()];
        let mut current: Option<(usize, EdgeId, Vec<Vec<Q>>)> = None;
        let mut kappa: Option<usize> = None;
        let finish = |cur: (usize, EdgeId, Vec<Vec<Q>>),
                      kappa: Option<usize>,
                      mats: &mut Vec<Option<Matrix<Q>>>| {
            let (line, e, rows) = cur;
            let k = kappa.unwrap_or(rows.len());
            if rows.len() != k {
                return parse_err(
                    line,
                    format!("edge block has {} rows, expected {k}", rows.len()),
                );
            }
            mats[e.0] = Some(Matrix::from_rows(rows).or_else(|e| parse_err(line, e.to_string()))?);
            Ok(k)
        };
        let mut rooting = None;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_row = |s: &str| -> Result<Vec<Q>> {
                s.split_whitespace()
                    .map(|x| parse_rational(x).or_else(|e| parse_err(n, e.to_string())))
                    .collect()
            };
            if let Some(r) = line.strip_prefix("root:") {
                let v = t
                    .vertex_by_name(r.trim())
                    .or_else(|e| parse_err(n, e.to_string()))?;
                root = Some(v);
                rooting = Some(t.rooted_at(v));
            } else if let Some(r) = line.strip_prefix("pi:") {
                let row = parse_row(r)?;
                if let Some(k) = kappa {
                    if k != row.len() {
                        return parse_err(n, format!("pi has {} entries, expected {k}", row.len()));
                    }
                }
                kappa = Some(row.len());
                pi = Some(row);
            } else if let Some(r) = line.strip_prefix("edge ") {
                if let Some(cur) = current.take() {
                    kappa = Some(finish(cur, kappa, &mut matrices)?);
                }
                let Some(rooting) = rooting.as_ref() else {
                    return parse_err(n, "`root:` must precede edge blocks");
                };
                let Some(spec) = r.trim().strip_suffix(':') else {
                    return parse_err(n, "edge header must end with `:`");
                };
                let ends = (1..spec.len())
                    .filter(|&j| spec.is_char_boundary(j) && spec.as_bytes()[j] == b'-')
                    .find_map(|j| {
                        Some((
                            t.vertex_by_name(&spec[..j]).ok()?,
                            t.vertex_by_name(&spec[j + 1..]).ok()?,
                        ))
                    });
                let Some((u, v)) = ends else {
                    return parse_err(n, format!("`{spec}` does not name two vertices"));
                };
                let Some(e) = t.edge_between(u, v) else {
                    return parse_err(n, format!("no edge `{spec}` in the tree"));
                };
                if rooting.orient(t, e) != (u, v) {
                    return parse_err(
                        n,
                        format!("edge `{spec}` is not oriented away from the root"),
                    );
                }
                if matrices[e.0].is_some() {
                    return parse_err(n, format!("edge `{spec}` given twice"));
                }
                current = Some((n, e, Vec::new()));
            } else if let Some(cur) = current.as_mut() {
                let row = parse_row(line)?;
                let k = kappa.unwrap_or(row.len());
                if row.len() != k {
                    return parse_err(n, format!("row has {} entries, expected {k}", row.len()));
                }
                kappa = Some(k);
                cur.2.push(row);
            } else {
                return parse_err(n, format!("unexpected line `{line}`"));
            }
        }
        if let Some(cur) = current.take() {
            finish(cur, kappa, &mut matrices)?;
        }
        let Some(root) = root else {
            return parse_err(1, "missing `root:`");
        };
        let matrices = matrices
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                m.ok_or_else(|| {
                    let (u, v) = t.edge(EdgeId(i));
                    Error::Parse {
                        line: text.lines().count(),
                        msg: format!(
                            "no matrix for edge {}-{}",
                            t.vertex_name(u),
                            t.vertex_name(v)
                        ),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = match pi {
            Some(pi) => {
                let p = ModelParams { root, pi, matrices };
                p.validate(t)?;
                Params::Stochastic(p)
            }
            None => Params::General(GeneralParams { root, matrices }),
        };
        params.check_shape(t)?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{q, qi};
    use crate::tree::parse_newick;

    const TREES: [&str; 7] = [
        "(a,b);",
        "(a,b,c);",
        "((a,b),c,d);",
        "(a,b,c,d);",
        "((a1,a2),a3,(a4,a5));",
        "((a,b),(c,d),e);",
        "(a,b,c,(d,e));",
    ];

    fn stochastic(t: &Tree, k: usize, seed: u64) -> ModelParams {
        sample_stochastic(t, k, seed, 0)
    }

    #[test]
    fn identity_channels_give_diagonal() {
        let t = parse_newick("((a1,a2),a3,(a4,a5));").unwrap();
        let p = ModelParams::identity(&t, 3, default_root(&t));
        for j in [
            joint_history(&t, &p).unwrap(),
            joint_inductive(&t, &p).unwrap(),
        ] {
            for (i, x) in j.data().iter().enumerate() {
                let diag = [0, 121, 242].contains(&i);
                assert_eq!(*x, if diag { q(1, 3) } else { Q::zero() });
            }
        }
    }

    #[test]
    fn two_taxon_base_case() {
        let t = parse_newick("(a,b);").unwrap();
        let p = stochastic(&t, 3, 1);
        let expect = Matrix::diag(&p.pi).mul(&p.matrices[0]).unwrap();
        let root_is_a = p.root == t.leaf(0);
        let j = joint_inductive(&t, &p).unwrap().as_matrix().unwrap();
        assert_eq!(
            j,
            if root_is_a {
                expect
            } else {
                expect.transpose()
            }
        );
        let g = GeneralParams {
            root: p.root,
            matrices: p.matrices.clone(),
        };
        let psi = joint_inductive(&t, &g).unwrap().as_matrix().unwrap();
        assert_eq!(
            psi,
            if root_is_a {
                g.matrices[0].clone()
            } else {
                g.matrices[0].transpose()
            }
        );
    }

    #[test]
    fn history_matches_inductive() {
        for s in TREES {
            let t = parse_newick(s).unwrap();
            for k in [2, 3] {
                for seed in 0..3 {
                    let p = stochastic(&t, k, seed);
                    let h = joint_history(&t, &p).unwrap();
                    assert_eq!(h, joint_inductive(&t, &p).unwrap(), "{s} k={k}");
                    assert!(h.sum().is_one());
                    let g = sample_general(&t, k, seed + 100);
                    assert_eq!(
                        joint_history(&t, &g).unwrap(),
                        joint_inductive(&t, &g).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn cherry_choice_does_not_matter() {
        let t = parse_newick("((a,b),(c,d),(e,f));").unwrap();
        let p = stochastic(&t, 2, 5);
        let base = joint_inductive(&t, &p).unwrap();
        for s in 1..10 {
            assert_eq!(
                joint_inductive_with(&t, &p, CherryOrder::Seeded(s)).unwrap(),
                base
            );
        }
    }

    #[test]
    fn root_independence() {
        let t = parse_newick("((a,b),c,(d,e));").unwrap();
        let p = stochastic(&t, 3, 7);
        let base = joint_inductive(&t, &p).unwrap();
        let g = sample_general(&t, 2, 8);
        let gbase = joint_inductive(&t, &g).unwrap();
        for v in 0..t.n_vertices() {
            let r = p.reroot(&t, v).unwrap();
            r.validate(&t).unwrap();
            assert_eq!(joint_inductive(&t, &r).unwrap(), base);
            assert_eq!(joint_history(&t, &r).unwrap(), base);
            let rg = g.reroot(&t, v).unwrap();
            assert_eq!(joint_inductive(&t, &rg).unwrap(), gbase);
        }
    }

    #[test]
    fn general_reduction() {
        for s in TREES {
            let t = parse_newick(s).unwrap();
            let p = stochastic(&t, 2, 3);
            let g = stochastic_to_general(&t, &p).unwrap();
            assert_eq!(
                joint_inductive(&t, &g).unwrap(),
                joint_inductive(&t, &p).unwrap()
            );
        }
        let t = parse_newick("(a,b);").unwrap();
        let mut p = ModelParams::identity(&t, 2, 0);
        p.matrices[0] =
            Matrix::from_rows(vec![vec![q(1, 3), q(2, 3)], vec![q(1, 4), q(3, 4)]]).unwrap();
        let g = stochastic_to_general(&t, &p).unwrap();
        assert_eq!(g.matrices[0], p.matrices[0].scale(&q(1, 2)));
        let t = parse_newick("((a,b),c,d);").unwrap();
        let id = ModelParams::identity(&t, 2, default_root(&t));
        let g = stochastic_to_general(&t, &id).unwrap();
        assert_eq!(
            g.matrices
                .iter()
                .filter(|m| **m != Matrix::identity(2))
                .count(),
            1
        );
    }

    #[test]
    fn cone_scaling() {
        let t = parse_newick("((a,b),c,d);").unwrap();
        let g = sample_general(&t, 2, 4);
        let base = joint_inductive(&t, &g).unwrap();
        let lambda = q(-5, 7);
        for e in t.edge_ids() {
            assert_eq!(
                joint_inductive(&t, &g.scale_edge(e, &lambda)).unwrap(),
                base.scale(&lambda)
            );
        }
    }

    #[test]
    fn star_of_params_is_star_of_tensors() {
        let t1 = parse_newick("((a1,a2),(a3,x));").unwrap();
        let t2 = parse_newick("(y,a4,a5);").unwrap();
        for seed in 0..5 {
            let u1 = sample_general(&t1, 2, seed);
            let u2 = sample_general(&t2, 2, seed + 50);
            let (joined, u) = star_params(&t1, &u1, &t2, &u2, "x", "y").unwrap();
            let lhs = joint_inductive(&joined.tree, &u).unwrap();
            let p1 = joint_inductive(&t1, &u1).unwrap();
            let p2 = joint_inductive(&t2, &u2).unwrap();
            let rhs = p1.star(&p2, 3, 0).unwrap();
            assert_eq!(lhs.data(), rhs.data());
            assert_eq!(lhs.axis_names(), rhs.axis_names());
        }
        let pair = parse_newick("(x,z);").unwrap();
        let id = GeneralParams {
            root: 0,
            matrices: vec![Matrix::identity(2)],
        };
        let u1 = sample_general(&t1, 2, 9);
        let (joined, u) = star_params(&t1, &u1, &pair, &id, "x", "x").unwrap();
        let base = joint_inductive(&t1, &u1).unwrap();
        assert_eq!(
            joint_inductive(&joined.tree, &u).unwrap().data(),
            base.data()
        );
    }

    #[test]
    fn sampling_is_deterministic_and_exact() {
        let t = parse_newick("((a,b),c,d);").unwrap();
        assert_eq!(
            sample_params(&t, 3, 42, SampleMode::Stochastic),
            sample_params(&t, 3, 42, SampleMode::Stochastic)
        );
        assert_ne!(
            sample_params(&t, 3, 42, SampleMode::General),
            sample_params(&t, 3, 43, SampleMode::General)
        );
        let p = stochastic(&t, 3, 42);
        p.validate(&t).unwrap();
        let g = sample_general(&t, 3, 1);
        assert!(g
            .matrices
            .iter()
            .all(|m| m.data().iter().all(|x| x.is_integer() && x.abs() <= qi(9))));
    }

    #[test]
    fn simulation_counts() {
        let t = parse_newick("((a,b),c,d);").unwrap();
        let id = ModelParams::identity(&t, 2, default_root(&t));
        let c = simulate_sequences(&t, &id, 500, 1, Exec::Parallel).unwrap();
        assert_eq!(c.sum(), qi(500));
        assert!(c
            .data()
            .iter()
            .enumerate()
            .all(|(i, x)| i == 0 || i == 15 || x.is_zero()));
        let p = stochastic(&t, 2, 2);
        let seq = simulate_sequences(&t, &p, 2000, 9, Exec::Sequential).unwrap();
        let par = simulate_sequences(&t, &p, 2000, 9, Exec::Parallel).unwrap();
        assert_eq!(seq, par);
        let exact = joint_inductive(&t, &p).unwrap().to_f64();
        let big = simulate_sequences(&t, &p, 100_000, 3, Exec::Parallel)
            .unwrap()
            .to_f64();
        let worst = exact
            .data()
            .iter()
            .zip(big.data())
            .map(|(e, c)| (e - c / 1e5).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.01, "max deviation {worst}");
        assert!(simulate_sequences(&t, &p, 0, 1, Exec::Parallel).is_err());
    }

    #[test]
    fn params_text_round_trip() {
        let t = parse_newick("((a1,a2),a3,(a4,a5));").unwrap();
        let p = Params::Stochastic(stochastic(&t, 2, 11));
        assert_eq!(Params::from_text(&t, &p.to_text(&t)).unwrap(), p);
        let g = Params::General(sample_general(&t, 3, 12));
        let text = g.to_text(&t);
        assert!(!text.contains("pi:"));
        assert_eq!(Params::from_text(&t, &text).unwrap(), g);
    }

    #[test]
    fn params_text_errors_carry_lines() {
        let t = parse_newick("(a,b);").unwrap();
        let err = Params::from_text(&t, "root: a\npi: 1/2 1/2\nedge a-b:\n1 0\n1 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
        let err = Params::from_text(&t, "root: a\nedge b-a:\n1 0\n0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(Params::from_text(&t, "root: a\npi: 1/2 1/2\nedge a-b:\n1/2 1/2\n1 1\n").is_err());
        assert!(Params::from_text(&t, "root: a\n").is_err());
    }
}
