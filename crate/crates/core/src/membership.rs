//! Membership tests, edge decompositions and split scoring.
//!
//! Rank tests on edge flattenings are exact over the rationals. A rejection
//! always carries a witness: a nonzero minor of an edge flattening, or a
//! nonzero generator value. Probe-mode acceptance is only ever reported as
//! probabilistic.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use itertools::Itertools;
use nalgebra::DMatrix;
use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::invariants::{
    base_for, probe_eval, tree_generators_with, vertex_spec, Bases, ProbeConfig, ProbeMode,
    ProbeValue,
};
use crate::linalg::{self, Matrix};
use crate::par::{self, Exec};
use crate::poly::{GeneratorSet, Source, DEFAULT_TERM_GUARD};
use crate::scalar::{Scalar, Q};
use crate::tensor::{AnyTensor, Axis, FlatteningSpec, Tensor};
use crate::tree::{parse_newick, EdgeId, Split, Tree, VertexId};

/// At most this many witnesses are listed in a report.
pub const MAX_WITNESSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
    ProbabilisticAccept,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
            Verdict::ProbabilisticAccept => "probabilistic-accept",
        }
    }

    pub fn is_reject(self) -> bool {
        self == Verdict::Reject
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRank {
    pub edge: EdgeId,
    pub split: Split,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub generator: String,
    pub value: ProbeValue,
}

/// Probe outcome at one internal vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexProbe {
    pub vertex: String,
    pub generators: usize,
    pub config: ProbeConfig,
    pub miss_bound: f64,
    pub vanished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    pub verdict: Verdict,
    pub kappa: usize,
    pub mode: String,
    pub edge_ranks: Vec<EdgeRank>,
    pub witnesses: Vec<Witness>,
    /// Number of generators that did not vanish (exact mode).
    pub nonzero: usize,
    pub generators: usize,
    pub probes: Vec<VertexProbe>,
    pub notes: Vec<String>,
}

impl MembershipReport {
    fn new(kappa: usize, mode: &str) -> MembershipReport {
        MembershipReport {
            verdict: Verdict::Accept,
            kappa,
            mode: mode.to_string(),
            edge_ranks: Vec::new(),
            witnesses: Vec::new(),
            nonzero: 0,
            generators: 0,
            probes: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn max_rank(&self) -> usize {
        self.edge_ranks.iter().map(|e| e.rank).max().unwrap_or(0)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "verdict: {}", self.verdict.as_str());
        let _ = writeln!(s, "kappa: {}", self.kappa);
        let _ = writeln!(s, "mode: {}", self.mode);
        for e in &self.edge_ranks {
            let _ = writeln!(
                s,
                "edge {} {} rank {} ({}x{})",
                e.edge, e.split, e.rank, e.rows, e.cols
            );
        }
        if self.generators > 0 {
            let _ = writeln!(
                s,
                "generators: {} evaluated, {} nonzero",
                self.generators, self.nonzero
            );
        }
        for p in &self.probes {
            let _ = writeln!(
                s,
                "probe {}: {} generators, trials {}, seed {}, z-range {}, miss-bound {:e}, {}",
                p.vertex,
                p.generators,
                p.config.trials,
                p.config.seed,
                p.config.z_range,
                p.miss_bound,
                if p.vanished { "all zero" } else { "nonzero" }
            );
        }
        for w in &self.witnesses {
            let _ = writeln!(s, "witness: {} = {}", w.generator, w.value);
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "verdict={}", self.verdict.as_str());
        let _ = writeln!(s, "kappa={}", self.kappa);
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "max_rank={}", self.max_rank());
        for e in &self.edge_ranks {
            let _ = writeln!(s, "edge.{}.split={}", e.edge.0, e.split);
            let _ = writeln!(s, "edge.{}.rank={}", e.edge.0, e.rank);
        }
        let _ = writeln!(s, "generators={}", self.generators);
        let _ = writeln!(s, "nonzero={}", self.nonzero);
        for (i, p) in self.probes.iter().enumerate() {
            let _ = writeln!(s, "probe.{i}.vertex={}", p.vertex);
            let _ = writeln!(s, "probe.{i}.generators={}", p.generators);
            let _ = writeln!(s, "probe.{i}.trials={}", p.config.trials);
            let _ = writeln!(s, "probe.{i}.seed={}", p.config.seed);
            let _ = writeln!(s, "probe.{i}.z_range={}", p.config.z_range);
            let _ = writeln!(s, "probe.{i}.miss_bound={:e}", p.miss_bound);
            let _ = writeln!(s, "probe.{i}.vanished={}", p.vanished);
        }
        for (i, w) in self.witnesses.iter().enumerate() {
            let _ = writeln!(s, "witness.{i}.generator={}", w.generator);
            let _ = writeln!(s, "witness.{i}.value={}", w.value);
        }
        for (i, n) in self.notes.iter().enumerate() {
            let _ = writeln!(s, "note.{i}={n}");
        }
        s
    }
}

/// Reorder the axes of `p` to the taxa order of `t`.
fn align<T: Scalar>(p: &Tensor<T>, t: &Tree) -> Result<Tensor<T>> {
    let names = p.axis_names();
    let have: HashSet<&str> = names.iter().map(String::as_str).collect();
    let want: HashSet<&str> = t.taxa().iter().map(String::as_str).collect();
    if have != want || names.len() != t.n_taxa() {
        return Err(Error::Shape(format!(
            "tensor axes [{}] do not match tree taxa [{}]",
            names.join(" "),
            t.taxa().join(" ")
        )));
    }
    p.permute_to(t.taxa())
}

fn non_binary_note(t: &Tree, report: &mut MembershipReport) {
    if !t.is_binary() {
        report.notes.push(
            "non-binary tree: the verdict concerns the zero set only; the ideal-level question is open".to_string(),
        );
    }
}

/// Exact rank of every edge flattening. Accepts iff all ranks are at most
/// `kappa`; each violating edge contributes a nonzero `(kappa+1)`-minor as
/// witness.
pub fn edge_rank_test(
    p: &Tensor<Q>,
    t: &Tree,
    kappa: usize,
    exec: Exec,
) -> Result<MembershipReport> {
    let p = align(p, t)?;
    let edges: Vec<EdgeId> = t.edge_ids().collect();
    let results = par::map_slice(exec, &edges, |&e| -> Result<(EdgeRank, Option<Witness>)> {
        let split = t.edge_split(e)?;
        let m = p
            .flatten(&FlatteningSpec::from_split(&split))?
            .as_matrix()?;
        let rank = linalg::rank_exact(&m);
        let witness = if rank > kappa {
            let (rows, cols) = linalg::nonsingular_minor(&m, kappa + 1)
                .ok_or_else(|| Error::Invalid("rank and minor search disagree".into()))?;
            let value = linalg::determinant(&m.submatrix(&rows, &cols))?;
            let generator = Source::EdgeMinor {
                split: split.to_string(),
                rows,
                cols,
            }
            .to_string();
            Some(Witness {
                generator,
                value: ProbeValue::Exact(value),
            })
        } else {
            None
        };
        Ok((
            EdgeRank {
                edge: e,
                split,
                rows: m.rows(),
                cols: m.cols(),
                rank,
            },
            witness,
        ))
    });
    let mut report = MembershipReport::new(kappa, "edge-rank");
    for r in results {
        let (rank, witness) = r?;
        report.edge_ranks.push(rank);
        if let Some(w) = witness {
            report.witnesses.push(w);
        }
    }
    report.witnesses.truncate(MAX_WITNESSES);
    if !report.witnesses.is_empty() {
        report.verdict = Verdict::Reject;
    }
    non_binary_note(t, &mut report);
    Ok(report)
}

/// Numeric variant of [`edge_rank_test`] for floating-point tensors: ranks
/// count singular values with `σ_i / σ_1 >= tol`, and the witness value of a
/// violating edge is `σ_{κ+1} / σ_1`.
pub fn edge_rank_test_float(
    p: &Tensor<f64>,
    t: &Tree,
    kappa: usize,
    tol: f64,
    exec: Exec,
) -> Result<MembershipReport> {
    let p = align(p, t)?;
    let edges: Vec<EdgeId> = t.edge_ids().collect();
    let results = par::map_slice(exec, &edges, |&e| -> Result<(EdgeRank, Option<Witness>)> {
        let split = t.edge_split(e)?;
        let m = p
            .flatten(&FlatteningSpec::from_split(&split))?
            .as_matrix()?;
        let sv = linalg::singular_values(&m)?;
        let top = sv.first().copied().unwrap_or(0.0);
        let rank = if top > 0.0 {
            sv.iter().filter(|&&x| x / top >= tol).count()
        } else {
            0
        };
        let witness = (rank > kappa).then(|| Witness {
            generator: format!("edge {split} sigma {}", kappa + 1),
            value: ProbeValue::Float(sv[kappa] / top),
        });
        Ok((
            EdgeRank {
                edge: e,
                split,
                rows: m.rows(),
                cols: m.cols(),
                rank,
            },
            witness,
        ))
    });
    let mut report = MembershipReport::new(kappa, &format!("edge-rank float tol {tol:e}"));
    for r in results {
        let (rank, witness) = r?;
        report.edge_ranks.push(rank);
        report.witnesses.extend(witness);
    }
    report.witnesses.truncate(MAX_WITNESSES);
    if !report.witnesses.is_empty() {
        report.verdict = Verdict::Reject;
    }
    non_binary_note(t, &mut report);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MembershipMode {
    /// Evaluate every generator of `F(T)` exactly.
    Exact,
    /// Edge ranks plus random tilde probes of the star bases at each vertex.
    Probe(ProbeConfig),
}

/// A membership tester for one tree, with generators or vertex bases built
/// once and reused across tensors.
#[derive(Debug, Clone)]
pub struct Membership {
    tree: Tree,
    kappa: usize,
    mode: MembershipMode,
    exec: Exec,
    generators: Option<GeneratorSet>,
    vertices: Vec<(VertexId, FlatteningSpec, GeneratorSet)>,
}

impl Membership {
    /// Fails with [`Error::MissingBase`] when some vertex needs a star base
    /// that is neither supplied in `bases` nor built in.
    pub fn new(
        t: &Tree,
        kappa: usize,
        bases: &Bases,
        mode: MembershipMode,
        exec: Exec,
    ) -> Result<Membership> {
        if kappa == 0 {
            return Err(Error::Invalid("kappa must be positive".into()));
        }
        let mut m = Membership {
            tree: t.clone(),
            kappa,
            mode,
            exec,
            generators: None,
            vertices: Vec::new(),
        };
        match mode {
            MembershipMode::Exact => {
                m.generators = Some(tree_generators_with(t, kappa, bases, DEFAULT_TERM_GUARD)?)
            }
            MembershipMode::Probe(_) => {
                for v in t.internal_vertices() {
                    let spec = vertex_spec(t, v)?;
                    let base = base_for(kappa, spec.blocks.len(), bases)?;
                    m.vertices.push((v, spec, base));
                }
            }
        }
        Ok(m)
    }

    pub fn generators(&self) -> Option<&GeneratorSet> {
        self.generators.as_ref()
    }

    /// Tensors whose axes do not all have `kappa` states are only decided
    /// when an edge flattening already exceeds rank `kappa`.
    pub fn test(&self, p: &Tensor<Q>) -> Result<MembershipReport> {
        let p = align(p, &self.tree)?;
        let edges = edge_rank_test(&p, &self.tree, self.kappa, self.exec)?;
        if p.shape().iter().any(|&l| l != self.kappa) {
            if edges.verdict.is_reject() {
                return Ok(edges);
            }
            return Err(Error::Shape(format!(
                "membership needs {}-state axes, got {:?}",
                self.kappa,
                p.shape()
            )));
        }
        match self.mode {
            MembershipMode::Exact => {
                let gens = self
                    .generators
                    .as_ref()
                    .expect("exact mode keeps its generators");
                let values = par::map_slice(self.exec, &gens.polys, |f| f.evaluate(&p));
                let mut report = MembershipReport::new(self.kappa, "exact");
                report.edge_ranks = edges.edge_ranks;
                report.generators = gens.len();
                for (value, source) in values.into_iter().zip(&gens.sources) {
                    let value = value?;
                    if !value.is_zero() {
                        report.nonzero += 1;
                        if report.witnesses.len() < MAX_WITNESSES {
                            report.witnesses.push(Witness {
                                generator: source.to_string(),
                                value: ProbeValue::Exact(value),
                            });
                        }
                    }
                }
                report.verdict = if report.nonzero > 0 {
                    Verdict::Reject
                } else {
                    Verdict::Accept
                };
                non_binary_note(&self.tree, &mut report);
                Ok(report)
            }
            MembershipMode::Probe(cfg) => {
                let mode = match cfg.mode {
                    ProbeMode::Exact => "probe exact".to_string(),
                    ProbeMode::Float { tol } => format!("probe float tol {tol:e}"),
                };
                let mut report = MembershipReport::new(self.kappa, &mode);
                report.edge_ranks = edges.edge_ranks;
                report.witnesses = edges.witnesses;
                for (v, spec, base) in &self.vertices {
                    let flat = p.flatten(spec)?;
                    let probe = probe_eval(base, &flat, &cfg, self.exec)?;
                    let vertex = self.tree.vertex_name(*v);
                    if let Some(w) = &probe.witness {
                        if report.witnesses.len() < MAX_WITNESSES {
                            report.witnesses.push(Witness {
                                generator: format!(
                                    "vertex {vertex} base {} ({}) trial {}",
                                    w.generator, base.sources[w.generator], w.trial
                                ),
                                value: w.value.clone(),
                            });
                        }
                    }
                    report.probes.push(VertexProbe {
                        vertex,
                        generators: base.len(),
                        config: cfg,
                        miss_bound: probe.miss_bound,
                        vanished: probe.all_zero(),
                    });
                }
                report.verdict = if report.witnesses.is_empty() {
                    Verdict::ProbabilisticAccept
                } else {
                    Verdict::Reject
                };
                non_binary_note(&self.tree, &mut report);
                Ok(report)
            }
        }
    }
}

/// One-shot membership test; see [`Membership`]. A rank violation on an
/// edge flattening rejects before any star base is needed.
pub fn membership(
    p: &Tensor<Q>,
    t: &Tree,
    kappa: usize,
    bases: &Bases,
    mode: MembershipMode,
    exec: Exec,
) -> Result<MembershipReport> {
    match Membership::new(t, kappa, bases, mode, exec) {
        Ok(m) => m.test(p),
        Err(err @ Error::MissingBase { .. }) => {
            let edges = edge_rank_test(p, t, kappa, exec)?;
            if edges.verdict.is_reject() {
                Ok(edges)
            } else {
                Err(err)
            }
        }
        Err(err) => Err(err),
    }
}

/// `p = Q ⋆ R` across one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDecomposition {
    /// Tensor on the taxa of `left`, with the shared axis last.
    pub q: Tensor<Q>,
    /// Tensor on the taxa of `right`, with the shared axis first.
    pub r: Tensor<Q>,
    /// Rank of the edge flattening.
    pub rank: usize,
    /// Name of the shared axis (also the new leaf in both subtrees).
    pub axis: String,
    pub left: Tree,
    pub right: Tree,
}

impl EdgeDecomposition {
    pub fn recompose(&self) -> Result<Tensor<Q>> {
        self.q.star(&self.r, self.q.ndim() - 1, 0)
    }
}

fn fresh_axis_name(t: &Tree, e: EdgeId) -> String {
    let mut name = format!("e{}", e.0);
    while t.taxon_index(&name).is_ok() {
        name.push('_');
    }
    name
}

/// Factor `p` across edge `e` by an exact rank factorization of its edge
/// flattening. The shared axis has `kappa` states: `Q` is padded with zero
/// slices and `R` with standard basis rows on non-pivot columns, so the
/// nonzero slices of `R` stay linearly independent.
pub fn decompose_edge(
    p: &Tensor<Q>,
    t: &Tree,
    e: EdgeId,
    kappa: usize,
) -> Result<EdgeDecomposition> {
    let p = align(p, t)?;
    let axis = fresh_axis_name(t, e);
    let (left, right) = t.split_on_edge(e, &axis)?;
    let split = t.edge_split(e)?;
    let m = p
        .flatten(&FlatteningSpec::from_split(&split))?
        .as_matrix()?;
    let (u, v, pivots) = linalg::rank_factorization(&m);
    let rank = pivots.len();
    if rank > kappa {
        return Err(Error::RankExceeded {
            what: format!("edge {e} ({split})"),
            rank,
            kappa,
        });
    }
    let pivot_set: HashSet<usize> = pivots.iter().copied().collect();
    let fillers: Vec<usize> = (0..m.cols())
        .filter(|c| !pivot_set.contains(c))
        .take(kappa - rank)
        .collect();
    let q_mat = Matrix::from_fn(m.rows(), kappa, |r, c| {
        if c < rank {
            u.get(r, c).clone()
        } else {
            Q::zero()
        }
    });
    let r_mat = Matrix::from_fn(kappa, m.cols(), |r, c| {
        if r < rank {
            v.get(r, c).clone()
        } else {
            match fillers.get(r - rank) {
                Some(&f) if f == c => Q::from_i64(1),
                _ => Q::zero(),
            }
        }
    });
    let axis_of = |name: &String| p.axes()[p.axis_position(name).expect("aligned axes")].clone();
    let mut q_axes: Vec<Axis> = split.side_a.iter().map(axis_of).collect();
    q_axes.push(Axis::new(axis.clone(), kappa));
    let mut r_axes = vec![Axis::new(axis.clone(), kappa)];
    r_axes.extend(split.side_b.iter().map(axis_of));
    let q = Tensor::new(q_axes, q_mat.into_data())?;
    let r = Tensor::new(r_axes, r_mat.into_data())?;
    Ok(EdgeDecomposition {
        q,
        r,
        rank,
        axis,
        left,
        right,
    })
}

/// A factor of a full decomposition, living on its own small tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub tree: Tree,
    pub tensor: Tensor<Q>,
}

/// A shared axis between two factors, with the rank of the edge it replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub axis: String,
    pub rank: usize,
}

/// Tree-structured factorization: contracting all factors along their shared
/// axes reproduces the original tensor. Factors are not unique; each link
/// carries a `GL(kappa)` gauge freedom that is left unfixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub taxa: Vec<String>,
    pub kappa: usize,
    pub factors: Vec<Factor>,
    pub links: Vec<Link>,
}

impl Factorization {
    /// Contract the factors along their shared axes and restore the taxa order.
    pub fn recompose(&self) -> Result<Tensor<Q>> {
        let Some(first) = self.factors.first() else {
            return Err(Error::Invalid("factorization has no factors".into()));
        };
        let mut acc = first.tensor.clone();
        let mut left: Vec<&Factor> = self.factors[1..].iter().collect();
        while !left.is_empty() {
            let names = acc.axis_names();
            let hit = left.iter().enumerate().find_map(|(i, f)| {
                let fnames = f.tensor.axis_names();
                names
                    .iter()
                    .enumerate()
                    .find_map(|(p, n)| fnames.iter().position(|m| m == n).map(|q| (i, p, q)))
            });
            let Some((i, p, q)) = hit else {
                return Err(Error::Invalid("factors are not connected".into()));
            };
            acc = acc.star(&left.remove(i).tensor, p, q)?;
        }
        acc.permute_to(&self.taxa)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("taxa: {}\nkappa: {}\n", self.taxa.join(" "), self.kappa);
        for l in &self.links {
            let _ = writeln!(s, "link: {} {}", l.axis, l.rank);
        }
        for f in &self.factors {
            let _ = writeln!(s, "factor: {}", f.tree.to_newick());
            s.push_str(&f.tensor.to_text());
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "taxa={}\nkappa={}\nfactors={}\n",
            self.taxa.join(","),
            self.kappa,
            self.factors.len()
        );
        for (i, l) in self.links.iter().enumerate() {
            let _ = writeln!(s, "link.{i}.axis={}", l.axis);
            let _ = writeln!(s, "link.{i}.rank={}", l.rank);
        }
        for (i, f) in self.factors.iter().enumerate() {
            let _ = writeln!(s, "factor.{i}.tree={}", f.tree.to_newick());
            let _ = writeln!(s, "factor.{i}.shape={}", f.tensor.shape().iter().join("x"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Factorization> {
        let mut taxa = None;
        let mut kappa = None;
        let mut links = Vec::new();
        let mut sections: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = i + 1;
            if let Some(rest) = line.strip_prefix("factor:") {
                sections.push((n, rest.trim().to_string(), String::new()));
            } else if let Some((_, _, body)) = sections.last_mut() {
                body.push_str(raw);
                body.push('\n');
            } else if line.is_empty() || line.starts_with('#') {
                continue;
            } else if let Some(rest) = line.strip_prefix("taxa:") {
                taxa = Some(
                    rest.split_whitespace()
                        .map(String::from)
                        .collect::<Vec<_>>(),
                );
            } else if let Some(rest) = line.strip_prefix("kappa:") {
                kappa = Some(
                    rest.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::parse(n, "bad kappa"))?,
                );
            } else if let Some(rest) = line.strip_prefix("link:") {
                let tok: Vec<&str> = rest.split_whitespace().collect();
                match tok.as_slice() {
                    [axis, rank] => links.push(Link {
                        axis: axis.to_string(),
                        rank: rank.parse().map_err(|_| Error::parse(n, "bad link rank"))?,
                    }),
                    _ => return Err(Error::parse(n, "expected `link: <axis> <rank>`")),
                }
            } else {
                return Err(Error::parse(n, format!("unexpected line `{line}`")));
            }
        }
        let taxa = taxa.ok_or_else(|| Error::parse(1, "missing `taxa:` header"))?;
        let kappa = kappa.ok_or_else(|| Error::parse(1, "missing `kappa:` header"))?;
        let factors = sections
            .into_iter()
            .map(|(n, newick, body)| -> Result<Factor> {
                let tree = parse_newick(&newick).map_err(|e| Error::parse(n, e.to_string()))?;
                let tensor =
                    Tensor::from_text(&body).map_err(|e| Error::parse(n, e.to_string()))?;
                Ok(Factor { tree, tensor })
            })
            .collect::<Result<Vec<_>>>()?;
        if factors.is_empty() {
            return Err(Error::parse(1, "no factors"));
        }
        Ok(Factorization {
            taxa,
            kappa,
            factors,
            links,
        })
    }
}

/// Cherry-wise factorization of a tensor on a binary tree into three-axis
/// pieces. At each step a cherry is split off across the edge joining it to
/// the rest of the tree; the remainder (with the new axis as a leaf) is
/// factored recursively until three taxa remain.
pub fn decompose_full(p: &Tensor<Q>, t: &Tree, kappa: usize) -> Result<Factorization> {
    if !t.is_binary() {
        return Err(Error::InvalidTree(
            "full decomposition needs a binary tree".into(),
        ));
    }
    let p = align(p, t)?;
    let check = edge_rank_test(&p, t, kappa, Exec::Sequential)?;
    if let Some(e) = check.edge_ranks.iter().find(|e| e.rank > kappa) {
        return Err(Error::RankExceeded {
            what: format!("edge {} ({})", e.edge, e.split),
            rank: e.rank,
            kappa,
        });
    }
    let mut factors = Vec::new();
    let mut links = Vec::new();
    let (mut core, mut tree) = (p.clone(), t.clone());
    while tree.n_taxa() > 3 {
        let (a, b) = tree.cherry_indices()[0];
        let (la, lb) = (tree.leaf(a), tree.leaf(b));
        let v = tree.neighbors(la)[0].0;
        let (_, e) = *tree
            .neighbors(v)
            .iter()
            .find(|&&(w, _)| w != la && w != lb)
            .ok_or_else(|| Error::InvalidTree("cherry without a parent edge".into()))?;
        let d = decompose_edge(&core, &tree, e, kappa)?;
        links.push(Link {
            axis: d.axis.clone(),
            rank: d.rank,
        });
        let a_name = &tree.taxa()[a];
        let cherry_left = d.left.n_taxa() == 3 && d.left.taxon_index(a_name).is_ok();
        let (piece, rest) = if cherry_left {
            (
                Factor {
                    tree: d.left,
                    tensor: d.q,
                },
                (d.r, d.right),
            )
        } else {
            (
                Factor {
                    tree: d.right,
                    tensor: d.r,
                },
                (d.q, d.left),
            )
        };
        factors.push(piece);
        core = align(&rest.0, &rest.1)?;
        tree = rest.1;
    }
    factors.push(Factor { tree, tensor: core });
    Ok(Factorization {
        taxa: t.taxa().to_vec(),
        kappa,
        factors,
        links,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    /// `σ_{κ+1} / σ_1` of the normalized flattening.
    #[default]
    SingularRatio,
    /// Largest absolute `(κ+1)`-minor of the normalized flattening.
    MaxMinor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitScore {
    pub split: Split,
    pub score: f64,
    /// Exact rank of the flattening, for exact input.
    pub exact_rank: Option<usize>,
}

fn max_minor(m: &Matrix<f64>, size: usize) -> f64 {
    if m.rows() < size || m.cols() < size {
        return 0.0;
    }
    let d = linalg::to_dmatrix(m);
    (0..m.rows())
        .combinations(size)
        .cartesian_product((0..m.cols()).combinations(size).collect::<Vec<_>>())
        .map(|(r, c)| {
            DMatrix::from_fn(size, size, |i, j| d[(r[i], c[j])])
                .determinant()
                .abs()
        })
        .fold(0.0, f64::max)
}

fn score_matrix(m: &Matrix<f64>, kappa: usize, kind: ScoreKind) -> Result<f64> {
    match kind {
        ScoreKind::SingularRatio => {
            let sv = linalg::singular_values(m)?;
            match (sv.first(), sv.get(kappa)) {
                (Some(&top), Some(&s)) if top > 0.0 => Ok(s / top),
                _ => Ok(0.0),
            }
        }
        ScoreKind::MaxMinor => Ok(max_minor(m, kappa + 1)),
    }
}

/// Score candidate splits of a count (or frequency) tensor; lower is better
/// supported. Results are sorted ascending, ties keeping candidate order.
/// For exact input a flattening of rank at most `kappa` scores exactly 0.
pub fn split_support(
    counts: &AnyTensor,
    candidates: &[Split],
    kappa: usize,
    kind: ScoreKind,
    exec: Exec,
) -> Result<Vec<SplitScore>> {
    let freq: Tensor<f64> = match counts {
        AnyTensor::Exact(t) => {
            if t.data().iter().any(|x| x.is_negative()) {
                return Err(Error::Invalid("counts must be nonnegative".into()));
            }
            t.to_f64()
        }
        AnyTensor::Float(t) => {
            if t.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
            if t.data().iter().any(|&x| x < 0.0) {
                return Err(Error::Invalid("counts must be nonnegative".into()));
            }
            t.clone()
        }
    };
    let total: f64 = freq.data().iter().sum();
    if freq.is_empty() || total <= 0.0 {
        return Err(Error::Invalid("empty counts".into()));
    }
    let freq = freq.map(|x| x / total);
    let scored = par::map_slice(exec, candidates, |s| -> Result<SplitScore> {
        let spec = FlatteningSpec::from_split(s);
        let exact_rank = match counts {
            AnyTensor::Exact(t) => Some(linalg::rank_exact(&t.flatten(&spec)?.as_matrix()?)),
            AnyTensor::Float(_) => None,
        };
        let score = match exact_rank {
            Some(r) if r <= kappa => 0.0,
            _ => score_matrix(&freq.flatten(&spec)?.as_matrix()?, kappa, kind)?,
        };
        Ok(SplitScore {
            split: s.clone(),
            score,
            exact_rank,
        })
    });
    let mut out: Vec<SplitScore> = scored.into_iter().collect::<Result<_>>()?;
    out.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(out)
}

/// The three nontrivial splits of four taxa, in the order 12|34, 13|24, 14|23.
pub fn quartet_splits(taxa: &[String]) -> Result<Vec<Split>> {
    if taxa.len() != 4 {
        return Err(Error::Partition(format!(
            "a quartet needs 4 taxa, got {}",
            taxa.len()
        )));
    }
    (1..4)
        .map(|j| Split::from_side(taxa, &[taxa[0].clone(), taxa[j].clone()]))
        .collect()
}

/// Parse `a,b|c,d` against a taxa order.
pub fn parse_split(order: &[String], text: &str) -> Result<Split> {
    let (a, b) = text
        .split_once('|')
        .ok_or_else(|| Error::Partition(format!("`{text}` is not of the form a,b|c,d")))?;
    let side = |s: &str| -> Vec<String> {
        s.split(',')
            .map(|x| x.trim().to_string())
            .filter(|x| !x.is_empty())
            .collect()
    };
    let (a, b) = (side(a), side(b));
    let all: HashMap<&str, ()> = a.iter().chain(&b).map(|x| (x.as_str(), ())).collect();
    if all.len() != order.len() || a.len() + b.len() != order.len() {
        return Err(Error::Partition(format!(
            "`{text}` does not partition the {} taxa",
            order.len()
        )));
    }
    Split::from_side(order, &a)
}
