//! Invariant generation: edge minors, star-tree sets built from a base set
//! by the tilde construction, the tree-wide union over vertex flattenings,
//! and randomized numeric probes of the tilde set.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use itertools::Itertools;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::par::{self, Exec};
use crate::poly::{
    determinant_poly, extract_z_coefficients, substitute_tilde_on, GeneratorSet, Polynomial,
    Source, Variable, DEFAULT_MAX_MINOR, DEFAULT_TERM_GUARD,
};
use crate::scalar::{Scalar, Q};
use crate::tensor::{FlatteningSpec, Tensor};
use crate::tree::{EdgeId, Split, Tree, VertexId};

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Decode composite index `c` (row-major over `members`) into `out`.
fn decode(mut c: usize, members: &[usize], states: &[usize], out: &mut [usize]) {
    for &m in members.iter().rev() {
        out[m] = c % states[m];
        c /= states[m];
    }
}

/// A two-block flattening of a tensor with per-axis state counts. Rows run
/// over the `rows` axes and columns over the `cols` axes, each block indexed
/// lexicographically in axis order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bipartition {
    pub label: String,
    rows: Vec<usize>,
    cols: Vec<usize>,
    states: Vec<usize>,
}

impl Bipartition {
    pub fn new(
        label: impl Into<String>,
        rows: Vec<usize>,
        cols: Vec<usize>,
        states: Vec<usize>,
    ) -> Bipartition {
        Bipartition {
            label: label.into(),
            rows,
            cols,
            states,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.iter().map(|&a| self.states[a]).product()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.iter().map(|&a| self.states[a]).product()
    }

    /// Tensor multi-index of flattening entry `(r, c)`.
    pub fn entry(&self, r: usize, c: usize) -> Vec<usize> {
        let mut idx = vec![0; self.states.len()];
        decode(r, &self.rows, &self.states, &mut idx);
        decode(c, &self.cols, &self.states, &mut idx);
        idx
    }

    pub fn minor_count(&self, size: usize) -> u128 {
        binomial(self.n_rows(), size) * binomial(self.n_cols(), size)
    }

    /// All `size x size` minors as ascending `(rows, cols)` pairs, lazily.
    pub fn minors(&self, size: usize) -> impl Iterator<Item = (Vec<usize>, Vec<usize>)> + Clone {
        (0..self.n_rows())
            .combinations(size)
            .cartesian_product((0..self.n_cols()).combinations(size))
    }

    pub fn minor_poly(&self, rows: &[usize], cols: &[usize]) -> Result<Polynomial> {
        determinant_poly(
            rows,
            cols,
            |r, c| Variable::P(self.entry(r, c)),
            DEFAULT_MAX_MINOR,
        )
    }

    pub fn source(&self, rows: &[usize], cols: &[usize]) -> Source {
        Source::EdgeMinor {
            split: self.label.clone(),
            rows: rows.to_vec(),
            cols: cols.to_vec(),
        }
    }
}

fn check_states(t: &Tree, states: &[usize]) -> Result<()> {
    if states.len() != t.n_taxa() {
        return Err(Error::Shape(format!(
            "{} state counts for {} taxa",
            states.len(),
            t.n_taxa()
        )));
    }
    if states.contains(&0) {
        return Err(Error::Shape("state counts must be positive".into()));
    }
    Ok(())
}

/// Edge flattenings of `t` large enough to have `(kappa+1)`-minors, in edge order.
pub fn edge_bipartitions(
    t: &Tree,
    kappa: usize,
    states: &[usize],
) -> Result<Vec<(EdgeId, Bipartition)>> {
    check_states(t, states)?;
    let mut out = Vec::new();
    for e in t.edge_ids() {
        let split = t.edge_split(e)?;
        let rows: Vec<usize> = split
            .side_a
            .iter()
            .map(|s| t.taxon_index(s))
            .collect::<Result<_>>()?;
        let cols: Vec<usize> = split
            .side_b
            .iter()
            .map(|s| t.taxon_index(s))
            .collect::<Result<_>>()?;
        let b = Bipartition::new(split.to_string(), rows, cols, states.to_vec());
        if b.n_rows() > kappa && b.n_cols() > kappa {
            out.push((e, b));
        }
    }
    Ok(out)
}

/// Exact number of edge invariants: `sum over edges C(rows, k+1) C(cols, k+1)`.
pub fn edge_minor_count(t: &Tree, kappa: usize, states: &[usize]) -> Result<u128> {
    Ok(edge_bipartitions(t, kappa, states)?
        .iter()
        .map(|(_, b)| b.minor_count(kappa + 1))
        .sum())
}

/// Lazy stream of all edge invariants with their sources.
pub fn edge_minors(
    t: &Tree,
    kappa: usize,
    states: &[usize],
) -> Result<impl Iterator<Item = (Polynomial, Source)>> {
    let flats = edge_bipartitions(t, kappa, states)?;
    Ok(flats.into_iter().flat_map(move |(_, b)| {
        let minors = b.minors(kappa + 1);
        minors.map(move |(r, c)| {
            (
                b.minor_poly(&r, &c).expect("minor size is kappa + 1"),
                b.source(&r, &c),
            )
        })
    }))
}

/// All `(kappa+1) x (kappa+1)` minors of the edge flattenings of `t`.
pub fn edge_invariants(t: &Tree, kappa: usize, states: &[usize]) -> Result<GeneratorSet> {
    Ok(edge_invariants_capped(t, kappa, states, None)?.0)
}

/// Like [`edge_invariants`] but materializes at most `cap` minors; the exact
/// total is returned alongside.
pub fn edge_invariants_capped(
    t: &Tree,
    kappa: usize,
    states: &[usize],
    cap: Option<usize>,
) -> Result<(GeneratorSet, u128)> {
    if kappa + 1 > DEFAULT_MAX_MINOR {
        return Err(Error::MinorTooLarge {
            size: kappa + 1,
            max: DEFAULT_MAX_MINOR,
        });
    }
    let total = edge_minor_count(t, kappa, states)?;
    let mut set = GeneratorSet::new(kappa, states.to_vec());
    for (p, s) in edge_minors(t, kappa, states)?.take(cap.unwrap_or(usize::MAX)) {
        set.push(p, s);
    }
    Ok((set, total))
}

/// Which axes of a star tensor get a matrix of z-variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZAxes {
    /// Every axis.
    #[default]
    All,
    /// Only axes with more than `kappa` states; `kappa`-state axes keep the identity.
    NonSquare,
}

/// Which flattenings contribute minors to a star-tree set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StarFlattenings {
    /// The `n` leaf-versus-rest flattenings (the edges of the star tree).
    #[default]
    Pendant,
    /// Every bipartition of the leaves.
    Bipartitions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TildeSet {
    /// Expand symbolically and extract z-coefficients.
    #[default]
    Symbolic,
    /// Omit the tilde set; only valid when the base is trivial.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StarOptions {
    pub tilde: TildeSet,
    pub z_axes: ZAxes,
    pub flattenings: StarFlattenings,
    pub guard: u128,
}

impl Default for StarOptions {
    fn default() -> Self {
        StarOptions {
            tilde: TildeSet::Symbolic,
            z_axes: ZAxes::All,
            flattenings: StarFlattenings::Pendant,
            guard: DEFAULT_TERM_GUARD,
        }
    }
}

/// Number of z-variables introduced by the tilde construction.
pub fn tilde_z_count(kappa: usize, states: &[usize], z_axes: ZAxes) -> usize {
    states
        .iter()
        .filter(|&&l| z_axes == ZAxes::All || l != kappa)
        .map(|&l| l * kappa)
        .sum()
}

fn star_bipartitions(
    names: &[String],
    kappa: usize,
    states: &[usize],
    which: StarFlattenings,
) -> Vec<Bipartition> {
    let n = states.len();
    let sides: Vec<Vec<usize>> = match which {
        StarFlattenings::Pendant => (0..n).map(|k| vec![k]).collect(),
        // subsets containing axis 0, excluding the full set
        StarFlattenings::Bipartitions => (0..(1usize << (n - 1)) - 1)
            .map(|mask| {
                std::iter::once(0)
                    .chain((1..n).filter(|&j| mask >> (j - 1) & 1 == 1))
                    .collect()
            })
            .collect(),
    };
    sides
        .into_iter()
        .map(|rows| {
            let cols: Vec<usize> = (0..n).filter(|j| !rows.contains(j)).collect();
            let label = format!(
                "{}|{}",
                rows.iter().map(|&j| names[j].as_str()).join(","),
                cols.iter().map(|&j| names[j].as_str()).join(",")
            );
            Bipartition::new(label, rows, cols, states.to_vec())
        })
        .filter(|b| b.n_rows() > kappa && b.n_cols() > kappa)
        .collect()
}

fn push_unique(set: &mut GeneratorSet, seen: &mut HashSet<Polynomial>, p: Polynomial, s: Source) {
    if seen.insert(p.canonical()) {
        set.push(p, s);
    }
}

/// `F(kappa; l_1..l_n)`: edge minors of the star tree plus the tilde set
/// derived from `base`, a set defining the variety for `kappa`-state leaves.
/// Leaves are labelled `1..n` in the sources.
pub fn star_generators(
    kappa: usize,
    states: &[usize],
    base: &GeneratorSet,
    opts: StarOptions,
) -> Result<GeneratorSet> {
    let names: Vec<String> = (1..=states.len()).map(|i| i.to_string()).collect();
    star_generators_named(&names, kappa, states, base, opts)
}

/// [`star_generators`] with explicit leaf labels for the sources.
pub fn star_generators_named(
    names: &[String],
    kappa: usize,
    states: &[usize],
    base: &GeneratorSet,
    opts: StarOptions,
) -> Result<GeneratorSet> {
    let n = states.len();
    if names.len() != n {
        return Err(Error::Shape(format!(
            "{} names for {n} leaves",
            names.len()
        )));
    }
    if base.kappa != kappa || base.states != vec![kappa; n] {
        return Err(Error::Shape(format!(
            "base set is for kappa {} with states {:?}, expected kappa {kappa} with {n} axes of {kappa}",
            base.kappa, base.states
        )));
    }
    if let Some(&l) = states.iter().find(|&&l| l < kappa) {
        return Err(Error::Shape(format!(
            "state count {l} is below kappa = {kappa}"
        )));
    }
    if kappa + 1 > DEFAULT_MAX_MINOR {
        return Err(Error::MinorTooLarge {
            size: kappa + 1,
            max: DEFAULT_MAX_MINOR,
        });
    }
    base.validate()?;
    let mut set = GeneratorSet::new(kappa, states.to_vec());
    let mut seen = HashSet::new();
    for b in star_bipartitions(names, kappa, states, opts.flattenings) {
        for (r, c) in b.minors(kappa + 1) {
            push_unique(&mut set, &mut seen, b.minor_poly(&r, &c)?, b.source(&r, &c));
        }
    }
    match opts.tilde {
        TildeSet::Skip if !base.is_trivial() => {
            return Err(Error::Invalid(
                "the tilde set can only be skipped for a trivial base".into(),
            ));
        }
        TildeSet::Skip => {}
        TildeSet::Symbolic => {
            let on: Vec<bool> = states
                .iter()
                .map(|&l| opts.z_axes == ZAxes::All || l != kappa)
                .collect();
            if on.iter().all(|x| !x) {
                for (p, s) in base.polys.iter().zip(&base.sources) {
                    push_unique(&mut set, &mut seen, p.clone(), s.clone());
                }
            } else {
                for (i, f) in base.polys.iter().enumerate() {
                    let g = substitute_tilde_on(f, kappa, states, &on, opts.guard)?;
                    for (z, c) in extract_z_coefficients(&g) {
                        push_unique(
                            &mut set,
                            &mut seen,
                            c,
                            Source::Tilde {
                                base: i,
                                z: z.to_token(),
                            },
                        );
                    }
                }
            }
        }
    }
    Ok(set)
}

/// Bases for star trees with more than three leaves, keyed by leaf count.
pub type Bases = BTreeMap<usize, GeneratorSet>;

/// Base set for the `leaves`-leaf star with `kappa`-state leaves: a supplied
/// one if present, otherwise `{0}` when nothing vanishes (`kappa = 1`, or
/// `kappa = 2` on three leaves) and the bipartition `3 x 3` minors for
/// `kappa = 2` on four or five leaves.
pub fn base_for(kappa: usize, leaves: usize, supplied: &Bases) -> Result<GeneratorSet> {
    if let Some(b) = supplied.get(&leaves) {
        return Ok(b.clone());
    }
    match (kappa, leaves) {
        (1, _) | (2, 3) => Ok(GeneratorSet::zero_base(kappa, leaves)),
        (2, 4..=5) => {
            let names: Vec<String> = (1..=leaves).map(|i| i.to_string()).collect();
            let mut set = GeneratorSet::new(2, vec![2; leaves]);
            let mut seen = HashSet::new();
            for b in star_bipartitions(&names, 2, &vec![2; leaves], StarFlattenings::Bipartitions) {
                for (r, c) in b.minors(3) {
                    push_unique(&mut set, &mut seen, b.minor_poly(&r, &c)?, b.source(&r, &c));
                }
            }
            Ok(set)
        }
        _ => Err(Error::MissingBase { kappa, leaves }),
    }
}

/// Flattening of a tree tensor at an internal vertex: one block per part.
pub fn vertex_spec(t: &Tree, v: VertexId) -> Result<FlatteningSpec> {
    let parts = t.vertex_parts(v)?;
    Ok(FlatteningSpec::new(
        parts
            .iter()
            .map(|p| p.iter().map(|&i| t.taxa()[i].clone()).collect())
            .collect(),
    ))
}

/// `F(T)`: the union over internal vertices of the star-tree sets of the
/// vertex flattenings, rewritten in the variables of the full tensor and
/// deduplicated up to scalar multiples. `base3` defaults to `{0}` for
/// `kappa = 2`.
pub fn tree_generators(
    t: &Tree,
    kappa: usize,
    base3: Option<&GeneratorSet>,
) -> Result<GeneratorSet> {
    let mut bases = Bases::new();
    if let Some(b) = base3 {
        bases.insert(3, b.clone());
    }
    tree_generators_with(t, kappa, &bases, DEFAULT_TERM_GUARD)
}

pub fn tree_generators_with(
    t: &Tree,
    kappa: usize,
    bases: &Bases,
    guard: u128,
) -> Result<GeneratorSet> {
    let n = t.n_taxa();
    let states = vec![kappa; n];
    let mut set = GeneratorSet::new(kappa, states.clone());
    let mut seen = HashSet::new();
    for v in t.internal_vertices() {
        let parts = t.vertex_parts(v)?;
        let base = base_for(kappa, parts.len(), bases)?;
        let block_states: Vec<usize> = parts.iter().map(|p| kappa.pow(p.len() as u32)).collect();
        let names: Vec<String> = parts
            .iter()
            .map(|p| {
                FlatteningSpec::block_name(
                    &p.iter().map(|&i| t.taxa()[i].clone()).collect::<Vec<_>>(),
                )
            })
            .collect();
        let opts = StarOptions {
            z_axes: ZAxes::NonSquare,
            guard,
            ..StarOptions::default()
        };
        let local = star_generators_named(&names, kappa, &block_states, &base, opts)?;
        let remap = |var: &Variable| match var {
            Variable::P(b) => {
                let mut idx = vec![0; n];
                for (j, part) in parts.iter().enumerate() {
                    decode(b[j], part, &states, &mut idx);
                }
                Variable::P(idx)
            }
            z => z.clone(),
        };
        for (p, s) in local.polys.iter().zip(local.sources) {
            let vertex = t.vertex_name(v);
            push_unique(
                &mut set,
                &mut seen,
                p.rename(remap),
                Source::Vertex {
                    vertex,
                    inner: Box::new(s),
                },
            );
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeMode {
    Exact,
    /// Values with absolute value at most `tol` count as zero.
    Float {
        tol: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub trials: usize,
    pub seed: u64,
    /// Entries of each `Z_k` are drawn uniformly from `[-z_range, z_range]`.
    pub z_range: i64,
    pub mode: ProbeMode,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            trials: 5,
            seed: 0,
            z_range: 100,
            mode: ProbeMode::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeValue {
    Exact(Q),
    Float(f64),
}

impl ProbeValue {
    pub fn is_zero(&self, mode: ProbeMode) -> bool {
        match (self, mode) {
            (ProbeValue::Exact(q), _) => q.is_zero(),
            (ProbeValue::Float(x), ProbeMode::Float { tol }) => x.abs() <= tol,
            (ProbeValue::Float(x), ProbeMode::Exact) => *x == 0.0,
        }
    }
}

impl fmt::Display for ProbeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeValue::Exact(q) => write!(f, "{q}"),
            ProbeValue::Float(x) => write!(f, "{x:e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeWitness {
    pub trial: usize,
    pub generator: usize,
    pub value: ProbeValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub config: ProbeConfig,
    /// `values[trial][generator]`.
    pub values: Vec<Vec<ProbeValue>>,
    /// First nonzero value in (trial, generator) order.
    pub witness: Option<ProbeWitness>,
    /// Upper bound on the chance that every trial vanishes although some
    /// base polynomial is nonzero at a tilde image of the tensor.
    pub miss_bound: f64,
}

impl ProbeReport {
    pub fn all_zero(&self) -> bool {
        self.witness.is_none()
    }
}

/// The matrices `Z_k` used by trial `trial`: integer `states[k] x kappa`
/// matrices from a ChaCha8 stream selected by the trial number.
pub fn probe_z(cfg: &ProbeConfig, trial: usize, kappa: usize, states: &[usize]) -> Vec<Matrix<Q>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64);
    states
        .iter()
        .map(|&l| {
            Matrix::from_fn(l, kappa, |_, _| {
                Q::from_integer(rng.gen_range(-cfg.z_range..=cfg.z_range).into())
            })
        })
        .collect()
}

fn act_all<T: Scalar>(p: &Tensor<T>, z: &[Matrix<T>]) -> Result<Tensor<T>> {
    z.iter()
        .enumerate()
        .try_fold(p.clone(), |acc, (k, m)| acc.act(k, m))
}

/// Evaluate every base polynomial at `P ⋆ (Z_1, ..., Z_n)` for random integer
/// `Z_k`. An exact nonzero certifies that `p` is off the zero set of the
/// tilde set; vanishing in every trial is only probabilistic evidence.
pub fn probe_eval(
    base: &GeneratorSet,
    p: &Tensor<Q>,
    cfg: &ProbeConfig,
    exec: Exec,
) -> Result<ProbeReport> {
    let n = p.ndim();
    let kappa = base.kappa;
    if cfg.trials == 0 {
        return Err(Error::Invalid(
            "at least one probe trial is required".into(),
        ));
    }
    if base.states != vec![kappa; n] {
        return Err(Error::Shape(format!(
            "base states {:?} do not match a {n}-axis tensor with kappa {kappa}",
            base.states
        )));
    }
    let states = p.shape();
    if let Some(&l) = states.iter().find(|&&l| l < kappa) {
        return Err(Error::Shape(format!(
            "axis with {l} states is below kappa = {kappa}"
        )));
    }
    base.validate()?;
    let pf = matches!(cfg.mode, ProbeMode::Float { .. }).then(|| p.to_f64());
    let values: Vec<Vec<ProbeValue>> =
        par::map_range(exec, cfg.trials, |trial| -> Result<Vec<ProbeValue>> {
            let z = probe_z(cfg, trial, kappa, &states);
            match &pf {
                None => {
                    let tilde = act_all(p, &z)?;
                    base.polys
                        .iter()
                        .map(|f| f.evaluate(&tilde).map(ProbeValue::Exact))
                        .collect()
                }
                Some(pf) => {
                    let zf: Vec<Matrix<f64>> = z.iter().map(|m| m.map(|x| x.to_f64())).collect();
                    let tilde = act_all(pf, &zf)?;
                    base.polys
                        .iter()
                        .map(|f| f.evaluate(&tilde).map(ProbeValue::Float))
                        .collect()
                }
            }
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let witness = values.iter().enumerate().find_map(|(trial, vals)| {
        vals.iter()
            .position(|v| !v.is_zero(cfg.mode))
            .map(|generator| ProbeWitness {
                trial,
                generator,
                value: vals[generator].clone(),
            })
    });
    let degree = base
        .polys
        .iter()
        .map(|f| f.degree() as f64)
        .fold(0.0, f64::max)
        * n as f64;
    let per_trial = (degree / (2 * cfg.z_range + 1) as f64).min(1.0);
    Ok(ProbeReport {
        config: *cfg,
        values,
        witness,
        miss_bound: per_trial.powi(cfg.trials as i32),
    })
}

/// Splits of the star flattenings checked by edge invariants on a vertex.
pub fn vertex_edge_splits(t: &Tree, v: VertexId) -> Result<Vec<Split>> {
    let parts = t.vertex_parts(v)?;
    parts
        .iter()
        .map(|p| {
            Split::from_side(
                t.taxa(),
                &p.iter().map(|&i| t.taxa()[i].clone()).collect::<Vec<_>>(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{joint_inductive, sample_general};
    use crate::scalar::qi;
    use crate::tensor::{uniform_axes, Axis};
    use crate::tree::parse_newick;

    fn fig1() -> Tree {
        parse_newick("((a1,a2),a3,(a4,a5));").unwrap()
    }

    fn random_tensor(axes: Vec<Axis>, seed: u64) -> Tensor<Q> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(axes, |_| qi(rng.gen_range(-50..=50))).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(8, 3), 56);
        assert_eq!(binomial(4, 3), 4);
        assert_eq!(binomial(2, 3), 0);
        assert_eq!(binomial(64, 5), 7_624_512);
    }

    #[test]
    fn fig1_edge_counts() {
        let t = fig1();
        let flats = edge_bipartitions(&t, 2, &[2; 5]).unwrap();
        assert_eq!(flats.len(), 2);
        assert!(flats.iter().all(|(_, b)| b.minor_count(3) == 224));
        assert_eq!(edge_minor_count(&t, 2, &[2; 5]).unwrap(), 448);
        let set = edge_invariants(&t, 2, &[2; 5]).unwrap();
        assert_eq!(set.len(), 448);
        assert!(set
            .polys
            .iter()
            .all(|p| p.degree() == 3 && p.n_terms() == 6));
        let (capped, total) = edge_invariants_capped(&t, 2, &[2; 5], Some(10)).unwrap();
        assert_eq!((capped.len(), total), (10, 448));
    }

    #[test]
    fn three_taxa_have_no_edge_invariants() {
        let t = parse_newick("(a,b,c);").unwrap();
        for k in 1..=4 {
            assert!(edge_invariants(&t, k, &[k; 3]).unwrap().is_empty());
        }
    }

    #[test]
    fn edge_invariants_vanish_on_model_points() {
        let t = fig1();
        let set = edge_invariants(&t, 2, &[2; 5]).unwrap();
        for seed in 0..5 {
            let p = joint_inductive(&t, &sample_general(&t, 2, seed)).unwrap();
            assert!(set.polys.iter().all(|f| f.evaluate(&p).unwrap().is_zero()));
        }
        let generic = random_tensor(uniform_axes(t.taxa(), 2), 1);
        assert!(set
            .polys
            .iter()
            .any(|f| !f.evaluate(&generic).unwrap().is_zero()));
    }

    #[test]
    fn minors_match_flattening_entries() {
        let t = fig1();
        let p = random_tensor(uniform_axes(t.taxa(), 2), 3);
        let (_, b) = &edge_bipartitions(&t, 2, &[2; 5]).unwrap()[0];
        let flat = p
            .flatten(&FlatteningSpec::new(vec![
                vec!["a1".into(), "a2".into()],
                vec!["a3".into(), "a4".into(), "a5".into()],
            ]))
            .unwrap()
            .as_matrix()
            .unwrap();
        for (r, c) in b.minors(3).step_by(17) {
            let det = crate::linalg::determinant(&flat.submatrix(&r, &c)).unwrap();
            assert_eq!(b.minor_poly(&r, &c).unwrap().evaluate(&p).unwrap(), det);
        }
    }

    #[test]
    fn kappa2_star_is_edge_minors_only() {
        let base = GeneratorSet::zero_base(2, 3);
        let skip = StarOptions {
            tilde: TildeSet::Skip,
            ..StarOptions::default()
        };
        let a = star_generators(2, &[3, 2, 4], &base, skip).unwrap();
        let b = star_generators(2, &[3, 2, 4], &base, StarOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a
            .sources
            .iter()
            .all(|s| matches!(s, Source::EdgeMinor { .. })));
        // 3 x 8 and 4 x 6 flattenings (the 2 x 12 one is too short); minors
        // shared by both appear once
        let all: HashSet<Polynomial> = star_bipartitions(
            &["1".into(), "2".into(), "3".into()],
            2,
            &[3, 2, 4],
            StarFlattenings::Pendant,
        )
        .iter()
        .flat_map(|b| {
            b.minors(3)
                .map(|(r, c)| b.minor_poly(&r, &c).unwrap().canonical())
                .collect::<Vec<_>>()
        })
        .collect();
        assert_eq!(a.len(), all.len());
        assert!(a.len() < 136);
        let mut toy = GeneratorSet::new(2, vec![2; 3]);
        toy.push(
            Polynomial::var(Variable::P(vec![0, 0, 0])),
            Source::Imported("toy".into()),
        );
        assert!(star_generators(2, &[2, 2, 2], &toy, skip).is_err());
    }

    #[test]
    fn z_variable_count() {
        assert_eq!(tilde_z_count(3, &[3, 3, 4], ZAxes::All), 30);
        assert_eq!(tilde_z_count(3, &[3, 3, 4], ZAxes::NonSquare), 12);
        let f = Polynomial::from_terms((0..27).map(|i| {
            (
                crate::poly::Monomial::var(Variable::P(vec![i / 9, i / 3 % 3, i % 3])),
                qi(1),
            )
        }));
        let g = crate::poly::substitute_tilde(
            &f,
            3,
            &[3, 3, 4],
            crate::poly::TildeMode::Symbolic,
            DEFAULT_TERM_GUARD,
        )
        .unwrap();
        assert_eq!(g.variables().iter().filter(|v| v.is_z()).count(), 30);
    }

    #[test]
    fn star_tilde_set_matches_extraction() {
        let f = Polynomial::var(Variable::P(vec![0, 0, 0]))
            .mul(&Polynomial::var(Variable::P(vec![1, 1, 1])))
            .sub(
                &Polynomial::var(Variable::P(vec![0, 1, 1]))
                    .mul(&Polynomial::var(Variable::P(vec![1, 0, 0]))),
            );
        let mut base = GeneratorSet::new(2, vec![2; 3]);
        base.push(f.clone(), Source::Imported("toy".into()));
        let states = [2, 3, 3];
        let set = star_generators(2, &states, &base, StarOptions::default()).unwrap();
        let tilde: HashSet<Polynomial> = set
            .polys
            .iter()
            .zip(&set.sources)
            .filter(|(_, s)| matches!(s, Source::Tilde { .. }))
            .map(|(p, _)| p.canonical())
            .collect();
        let g = crate::poly::substitute_tilde(
            &f,
            2,
            &states,
            crate::poly::TildeMode::Symbolic,
            DEFAULT_TERM_GUARD,
        )
        .unwrap();
        let parts = extract_z_coefficients(&g);
        let expected: HashSet<Polynomial> = parts.iter().map(|(_, c)| c.canonical()).collect();
        assert_eq!(tilde, expected);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let p0 = random_tensor(
                vec![Axis::new("x", 2), Axis::new("y", 3), Axis::new("w", 3)],
                rng.gen(),
            );
            let z: Vec<Matrix<Q>> = states
                .iter()
                .map(|&l| Matrix::from_fn(l, 2, |_, _| qi(rng.gen_range(-4..5))))
                .collect();
            let direct = f.evaluate(&act_all(&p0, &z).unwrap()).unwrap();
            let rebuilt = parts.iter().fold(Q::zero(), |acc, (zm, c)| {
                let zp = Polynomial::from_terms([(zm.clone(), qi(1))]);
                acc + c.evaluate(&p0).unwrap() * zp.evaluate_with_z(&p0, &z).unwrap()
            });
            assert_eq!(direct, rebuilt);
        }
    }

    #[test]
    fn three_taxon_tree_returns_base() {
        let t = parse_newick("(a,b,c);").unwrap();
        let zero = tree_generators(&t, 2, None).unwrap();
        assert_eq!(zero.len(), 1);
        assert!(zero.is_trivial());
        let mut toy = GeneratorSet::new(3, vec![3; 3]);
        toy.push(
            Polynomial::var(Variable::P(vec![0, 1, 2])),
            Source::Imported("toy".into()),
        );
        let set = tree_generators(&t, 3, Some(&toy)).unwrap();
        assert_eq!(set.polys, toy.polys);
    }

    #[test]
    fn missing_bases_are_reported() {
        let t = parse_newick("(a,b,c);").unwrap();
        assert!(matches!(
            tree_generators(&t, 4, None),
            Err(Error::MissingBase {
                kappa: 4,
                leaves: 3
            })
        ));
        assert!(matches!(
            tree_generators(&t, 3, None),
            Err(Error::MissingBase {
                kappa: 3,
                leaves: 3
            })
        ));
        let six = parse_newick("(a,b,c,d,e,f);").unwrap();
        assert!(matches!(
            tree_generators(&six, 2, None),
            Err(Error::MissingBase {
                kappa: 2,
                leaves: 6
            })
        ));
    }

    #[test]
    fn kappa2_tree_set_vanishes_on_model_points() {
        for s in ["((a,b),(c,d));", "((a1,a2),a3,(a4,a5));", "(a,b,c,(d,e));"] {
            let t = parse_newick(s).unwrap();
            let set = tree_generators(&t, 2, None).unwrap();
            let edges = edge_invariants(&t, 2, &vec![2; t.n_taxa()]).unwrap();
            let distinct: HashSet<Polynomial> =
                edges.polys.iter().map(Polynomial::canonical).collect();
            let mine: HashSet<Polynomial> = set.polys.iter().map(Polynomial::canonical).collect();
            assert!(distinct.is_subset(&mine), "{s}");
            for seed in 0..3 {
                let p = joint_inductive(&t, &sample_general(&t, 2, seed)).unwrap();
                assert!(
                    set.polys.iter().all(|f| f.evaluate(&p).unwrap().is_zero()),
                    "{s}"
                );
            }
            let generic = random_tensor(uniform_axes(t.taxa(), 2), 4);
            assert!(set
                .polys
                .iter()
                .any(|f| !f.evaluate(&generic).unwrap().is_zero()));
        }
    }

    #[test]
    fn probe_is_deterministic_and_detects() {
        let mut toy = GeneratorSet::new(2, vec![2; 3]);
        let f = determinant_poly(&[0, 1], &[0, 1], |r, c| Variable::P(vec![r, c, 0]), 5).unwrap();
        toy.push(f, Source::Imported("toy minor".into()));
        let cfg = ProbeConfig::default();
        let p = random_tensor(
            vec![Axis::new("a", 2), Axis::new("b", 3), Axis::new("c", 2)],
            8,
        );
        let r1 = probe_eval(&toy, &p, &cfg, Exec::Parallel).unwrap();
        let r2 = probe_eval(&toy, &p, &cfg, Exec::Sequential).unwrap();
        assert_eq!(r1, r2);
        assert!(!r1.all_zero());
        let zero = GeneratorSet::zero_base(2, 3);
        assert!(probe_eval(&zero, &p, &cfg, Exec::Parallel)
            .unwrap()
            .all_zero());
        let float = ProbeConfig {
            mode: ProbeMode::Float { tol: 1e-9 },
            ..cfg
        };
        assert!(!probe_eval(&toy, &p, &float, Exec::Parallel)
            .unwrap()
            .all_zero());
        assert!(probe_eval(
            &toy,
            &Tensor::zeros(vec![
                Axis::new("a", 1),
                Axis::new("b", 2),
                Axis::new("c", 2)
            ])
            .unwrap(),
            &cfg,
            Exec::Parallel
        )
        .is_err());
    }

    #[test]
    fn vertex_spec_blocks() {
        let t = fig1();
        let center = t
            .internal_vertices()
            .find(|&v| {
                t.vertex_parts(v).unwrap().len() == 3 && t.vertex_parts(v).unwrap()[1] == vec![2]
            })
            .unwrap();
        let spec = vertex_spec(&t, center).unwrap();
        assert_eq!(
            spec.blocks,
            vec![
                vec!["a1".to_string(), "a2".into()],
                vec!["a3".into()],
                vec!["a4".into(), "a5".into()]
            ]
        );
        assert_eq!(vertex_edge_splits(&t, center).unwrap().len(), 3);
    }
}
