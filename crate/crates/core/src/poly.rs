//! Sparse multivariate polynomials with exact rational coefficients.
//!
//! Variables are either tensor entries `P[i1,...,in]` or auxiliary entries
//! `zk[i,j]` of the matrices `Z_k` used by the tilde construction. In text,
//! `k` is written 1-based (`z1` is the first leaf); in memory it is 0-based.

use std::collections::BTreeMap;
use std::fmt;

use itertools::Itertools;
use num_traits::{One, Signed, Zero};

use crate::error::{parse_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{parse_rational, Scalar, Q};
use crate::tensor::Tensor;

/// Leibniz expansion of a `d x d` minor has `d!` terms; larger minors are refused.
pub const DEFAULT_MAX_MINOR: usize = 5;

/// Default cap on the estimated number of terms produced by symbolic expansion.
pub const DEFAULT_TERM_GUARD: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    /// Tensor entry at a multi-index.
    P(Vec<usize>),
    /// Entry `(i, j)` of the auxiliary matrix `Z_k`.
    Z { k: usize, i: usize, j: usize },
}

impl Variable {
    pub fn is_z(&self) -> bool {
        matches!(self, Variable::Z { .. })
    }

    pub fn parse(s: &str) -> Result<Variable> {
        let bad = || Error::Invalid(format!("bad variable `{s}`"));
        let open = s.find('[').ok_or_else(bad)?;
        let inner = s[open..]
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(bad)?;
        let idx: Vec<usize> = if inner.trim().is_empty() {
            Vec::new()
        } else {
            inner
                .split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<_>>()?
        };
        let head = &s[..open];
        if head == "P" {
            if idx.is_empty() {
                return Err(bad());
            }
            return Ok(Variable::P(idx));
        }
        if let Some(k) = head.strip_prefix('z') {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k == 0 || idx.len() != 2 {
                return Err(bad());
            }
            return Ok(Variable::Z {
                k: k - 1,
                i: idx[0],
                j: idx[1],
            });
        }
        Err(bad())
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variable::P(idx) => write!(f, "P[{}]", idx.iter().join(",")),
            Variable::Z { k, i, j } => write!(f, "z{}[{i},{j}]", k + 1),
        }
    }
}

/// Product of variable powers, sorted by variable with positive exponents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Monomial(Vec<(Variable, u32)>);

impl Monomial {
    pub fn one() -> Monomial {
        Monomial(Vec::new())
    }

    pub fn var(v: Variable) -> Monomial {
        Monomial(vec![(v, 1)])
    }

    pub fn from_powers(mut powers: Vec<(Variable, u32)>) -> Monomial {
        powers.retain(|(_, e)| *e > 0);
        powers.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Variable, u32)> = Vec::with_capacity(powers.len());
        for (v, e) in powers {
            match out.last_mut() {
                Some((w, f)) if *w == v => *f += e,
                _ => out.push((v, e)),
            }
        }
        Monomial(out)
    }

    pub fn powers(&self) -> &[(Variable, u32)] {
        &self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn z_degree(&self) -> u32 {
        self.0
            .iter()
            .filter(|(v, _)| v.is_z())
            .map(|(_, e)| e)
            .sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(a[i].clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j].clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((a[i].0.clone(), a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial(out)
    }

    /// Split into the tensor-entry part and the z part.
    pub fn split_z(&self) -> (Monomial, Monomial) {
        let (z, p): (Vec<_>, Vec<_>) = self.0.iter().cloned().partition(|(v, _)| v.is_z());
        (Monomial(p), Monomial(z))
    }

    /// Compact single-token form, `1` for the empty monomial.
    pub fn to_token(&self) -> String {
        if self.is_one() {
            return "1".into();
        }
        self.0.iter().map(|(v, e)| format!("{v}^{e}")).join("*")
    }

    pub fn from_token(s: &str) -> Result<Monomial> {
        if s == "1" {
            return Ok(Monomial::one());
        }
        s.split('*')
            .map(parse_power)
            .collect::<Result<Vec<_>>>()
            .map(Monomial::from_powers)
    }
}

fn parse_power(s: &str) -> Result<(Variable, u32)> {
    match s.rsplit_once('^') {
        Some((v, e)) if !v.ends_with(']') || !e.contains(']') => {
            let e: u32 = e
                .parse()
                .map_err(|_| Error::Invalid(format!("bad exponent in `{s}`")))?;
            Ok((Variable::parse(v)?, e))
        }
        _ => Ok((Variable::parse(s)?, 1)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, Q>,
}

impl Polynomial {
    pub fn zero() -> Polynomial {
        Polynomial::default()
    }

    pub fn constant(c: Q) -> Polynomial {
        Polynomial::from_terms([(Monomial::one(), c)])
    }

    pub fn var(v: Variable) -> Polynomial {
        Polynomial::from_terms([(Monomial::var(v), Q::one())])
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Monomial, Q)>) -> Polynomial {
        let mut p = Polynomial::zero();
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    fn add_term(&mut self, m: Monomial, c: Q) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Q)> {
        self.terms.iter()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn z_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::z_degree).max().unwrap_or(0)
    }

    /// Degree in the tensor-entry variables only.
    pub fn p_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|m| m.degree() - m.z_degree())
            .max()
            .unwrap_or(0)
    }

    pub fn has_z(&self) -> bool {
        self.terms.keys().any(|m| m.z_degree() > 0)
    }

    /// Distinct variables, sorted.
    pub fn variables(&self) -> Vec<Variable> {
        let mut vs: Vec<Variable> = self
            .terms
            .keys()
            .flat_map(|m| m.0.iter().map(|(v, _)| v.clone()))
            .collect();
        vs.sort();
        vs.dedup();
        vs
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Polynomial {
        Polynomial {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }

    pub fn scale(&self, s: &Q) -> Polynomial {
        if s.is_zero() {
            return Polynomial::zero();
        }
        Polynomial {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut out = Polynomial::constant(Q::one());
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Replace variables by polynomials; variables mapped to `None` are kept.
    pub fn substitute(&self, f: impl Fn(&Variable) -> Option<Polynomial>) -> Polynomial {
        let mut cache: BTreeMap<Variable, Option<Polynomial>> = BTreeMap::new();
        let mut out = Polynomial::zero();
        for (m, c) in &self.terms {
            let mut term = Polynomial::constant(c.clone());
            for (v, e) in &m.0 {
                let image = cache.entry(v.clone()).or_insert_with(|| f(v));
                let factor = match image {
                    Some(p) => p.pow(*e),
                    None => Polynomial::from_terms([(Monomial(vec![(v.clone(), *e)]), Q::one())]),
                };
                term = term.mul(&factor);
                if term.is_zero() {
                    break;
                }
            }
            out = out.add(&term);
        }
        out
    }

    /// Rename variables; monomials that collide are combined.
    pub fn rename(&self, f: impl Fn(&Variable) -> Variable) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(m, c)| {
            (
                Monomial::from_powers(m.0.iter().map(|(v, e)| (f(v), *e)).collect()),
                c.clone(),
            )
        }))
    }

    /// Evaluate with values supplied per variable.
    pub fn eval_with<T: Scalar>(&self, mut value: impl FnMut(&Variable) -> Result<T>) -> Result<T> {
        let mut acc = T::zero();
        for (m, c) in &self.terms {
            let mut t = T::from_q(c);
            for (v, e) in &m.0 {
                let x = value(v)?;
                for _ in 0..*e {
                    t = t * x.clone();
                }
            }
            acc = acc + t;
        }
        Ok(acc)
    }

    /// Evaluate at a tensor; every variable must be an in-range entry of `p`.
    pub fn evaluate<T: Scalar>(&self, p: &Tensor<T>) -> Result<T> {
        self.eval_with(|v| match v {
            Variable::P(idx) => p.get(idx).cloned(),
            Variable::Z { .. } => Err(Error::Invalid(format!(
                "no value for auxiliary variable {v}"
            ))),
        })
    }

    /// Evaluate with tensor entries from `p` and `z_k` entries from `z[k]`.
    pub fn evaluate_with_z<T: Scalar>(&self, p: &Tensor<T>, z: &[Matrix<T>]) -> Result<T> {
        self.eval_with(|v| match v {
            Variable::P(idx) => p.get(idx).cloned(),
            Variable::Z { k, i, j } => {
                let m = z
                    .get(*k)
                    .ok_or_else(|| Error::OutOfRange(format!("no matrix z{}", k + 1)))?;
                if *i >= m.rows() || *j >= m.cols() {
                    return Err(Error::OutOfRange(format!("{v}")));
                }
                Ok(m.get(*i, *j).clone())
            }
        })
    }

    /// Scale so the coefficient of the least monomial is 1. Two polynomials
    /// with the same zero set up to a constant factor share a canonical form.
    pub fn canonical(&self) -> Polynomial {
        match self.terms.values().next() {
            Some(c) if !c.is_one() => self.scale(&c.recip()),
            _ => self.clone(),
        }
    }

    /// Check that every tensor-entry variable indexes a tensor of shape `states`.
    pub fn check_states(&self, states: &[usize]) -> Result<()> {
        for v in self.variables() {
            if let Variable::P(idx) = &v {
                if idx.len() != states.len() || idx.iter().zip(states).any(|(i, s)| i >= s) {
                    return Err(Error::OutOfRange(format!(
                        "{v} does not fit states {states:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `term:` lines, one per term; `term: 0` for the zero polynomial.
    pub fn to_text(&self) -> String {
        if self.is_zero() {
            return "term: 0\n".into();
        }
        let mut s = String::new();
        for (m, c) in &self.terms {
            s.push_str("term: ");
            s.push_str(&c.to_string());
            for (v, e) in &m.0 {
                s.push_str(&format!(" {v}^{e}"));
            }
            s.push('\n');
        }
        s
    }

    /// Parse a single polynomial (a run of `term:` lines).
    pub fn from_text(text: &str) -> Result<Polynomial> {
        let blocks = parse_blocks(text)?;
        match blocks.len() {
            0 => Ok(Polynomial::zero()),
            1 if blocks[0].source.is_none() => Ok(blocks.into_iter().next().unwrap().poly),
            1 => parse_err(
                blocks[0].line,
                "unexpected `source:` line in a polynomial file",
            ),
            _ => parse_err(blocks[1].line, "more than one polynomial"),
        }
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (n, (m, c)) in self.terms.iter().enumerate() {
            let neg = c.is_negative();
            let abs = c.abs();
            match (n, neg) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            let mono =
                m.0.iter()
                    .map(|(v, e)| {
                        if *e == 1 {
                            v.to_string()
                        } else {
                            format!("{v}^{e}")
                        }
                    })
                    .join("*");
            match (abs.is_one(), m.is_one()) {
                (_, true) => write!(f, "{abs}")?,
                (true, false) => write!(f, "{mono}")?,
                (false, false) => write!(f, "{abs}*{mono}")?,
            }
        }
        Ok(())
    }
}

/// The `d x d` minor on `rows x cols` as a Leibniz sum, where `entry(r, c)`
/// names the variable at position `(r, c)`. Rows and columns are used in the
/// order given, which fixes the sign.
pub fn determinant_poly(
    rows: &[usize],
    cols: &[usize],
    entry: impl Fn(usize, usize) -> Variable,
    max: usize,
) -> Result<Polynomial> {
    let d = rows.len();
    if cols.len() != d {
        return Err(Error::Shape(format!("{d} rows but {} columns", cols.len())));
    }
    if d > max {
        return Err(Error::MinorTooLarge { size: d, max });
    }
    let mut terms = Vec::new();
    for perm in (0..d).permutations(d) {
        let inversions = (0..d)
            .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
            .filter(|&(i, j)| perm[i] > perm[j])
            .count();
        let sign = if inversions % 2 == 0 {
            Q::one()
        } else {
            -Q::one()
        };
        let mono =
            Monomial::from_powers((0..d).map(|r| (entry(rows[r], cols[perm[r]]), 1)).collect());
        terms.push((mono, sign));
    }
    Ok(Polynomial::from_terms(terms))
}

/// How the `Z_k` are supplied to [`substitute_tilde`].
#[derive(Debug, Clone, Copy)]
pub enum TildeMode<'a> {
    /// Keep the `z` entries as variables.
    Symbolic,
    /// Use these `l_k x kappa` matrices; the result involves tensor entries only.
    Numeric(&'a [Matrix<Q>]),
}

/// Upper bound on the number of terms produced by expanding `f` under the
/// tilde substitution before like terms are combined.
pub fn tilde_term_estimate(f: &Polynomial, states: &[usize]) -> u128 {
    estimate_with_width(f, states.iter().map(|&l| l as u128).product())
}

fn estimate_with_width(f: &Polynomial, width: u128) -> u128 {
    f.terms()
        .map(|(m, _)| width.checked_pow(m.degree()).unwrap_or(u128::MAX))
        .fold(0u128, |a, b| a.saturating_add(b))
}

/// Substitute `P[b] -> sum_i P[i] prod_k z^k_{i_k b_k}` into a polynomial `f`
/// on a `kappa x ... x kappa` tensor, producing a polynomial on a tensor with
/// `states` (the `l_k`).
pub fn substitute_tilde(
    f: &Polynomial,
    kappa: usize,
    states: &[usize],
    mode: TildeMode<'_>,
    guard: u128,
) -> Result<Polynomial> {
    let n = states.len();
    match mode {
        TildeMode::Symbolic => substitute_tilde_on(f, kappa, states, &vec![true; n], guard),
        TildeMode::Numeric(z) => {
            f.check_states(&vec![kappa; n])?;
            if z.len() != n {
                return Err(Error::Shape(format!(
                    "expected {n} z matrices, got {}",
                    z.len()
                )));
            }
            for (k, m) in z.iter().enumerate() {
                if m.rows() != states[k] || m.cols() != kappa {
                    return Err(Error::Shape(format!(
                        "z{} is {}x{}, expected {}x{kappa}",
                        k + 1,
                        m.rows(),
                        m.cols(),
                        states[k]
                    )));
                }
            }
            let estimate = tilde_term_estimate(f, states);
            if estimate > guard {
                return Err(Error::TermGuard {
                    estimate,
                    limit: guard,
                });
            }
            Ok(f.substitute(|v| {
                let Variable::P(b) = v else { return None };
                let mut terms = Vec::new();
                let mut idx = vec![0usize; n];
                loop {
                    let c = (0..n).fold(Q::one(), |acc, k| acc * z[k].get(idx[k], b[k]));
                    if !c.is_zero() {
                        terms.push((Monomial::var(Variable::P(idx.clone())), c));
                    }
                    if !crate::tensor::next_index(&mut idx, states) {
                        break;
                    }
                }
                Some(Polynomial::from_terms(terms))
            }))
        }
    }
}

/// Symbolic tilde substitution on the axes marked in `on`; unmarked axes
/// (which must have `kappa` states) keep the identity.
pub fn substitute_tilde_on(
    f: &Polynomial,
    kappa: usize,
    states: &[usize],
    on: &[bool],
    guard: u128,
) -> Result<Polynomial> {
    let n = states.len();
    f.check_states(&vec![kappa; n])?;
    if on.len() != n {
        return Err(Error::Shape(format!(
            "expected {n} axis flags, got {}",
            on.len()
        )));
    }
    if let Some(k) = (0..n).find(|&k| !on[k] && states[k] != kappa) {
        return Err(Error::Shape(format!(
            "axis {} has {} states; only {kappa}-state axes can skip z",
            k + 1,
            states[k]
        )));
    }
    let width: u128 = (0..n)
        .filter(|&k| on[k])
        .map(|k| states[k] as u128)
        .product();
    let estimate = estimate_with_width(f, width);
    if estimate > guard {
        return Err(Error::TermGuard {
            estimate,
            limit: guard,
        });
    }
    let dims: Vec<usize> = (0..n).map(|k| if on[k] { states[k] } else { 1 }).collect();
    Ok(f.substitute(|v| {
        let Variable::P(b) = v else { return None };
        let mut terms = Vec::new();
        let mut idx = vec![0usize; n];
        loop {
            let entry: Vec<usize> = (0..n).map(|k| if on[k] { idx[k] } else { b[k] }).collect();
            let mut powers = vec![(Variable::P(entry), 1)];
            powers.extend((0..n).filter(|&k| on[k]).map(|k| {
                (
                    Variable::Z {
                        k,
                        i: idx[k],
                        j: b[k],
                    },
                    1,
                )
            }));
            terms.push((Monomial::from_powers(powers), Q::one()));
            if !crate::tensor::next_index(&mut idx, &dims) {
                break;
            }
        }
        Some(Polynomial::from_terms(terms))
    }))
}

/// Group the terms of `g` by their z-monomial. Returns `(z-monomial,
/// coefficient)` pairs in monomial order; coefficients involve tensor
/// entries only and `g = sum coefficient * z-monomial`.
pub fn extract_z_coefficients(g: &Polynomial) -> Vec<(Monomial, Polynomial)> {
    let mut groups: BTreeMap<Monomial, Polynomial> = BTreeMap::new();
    for (m, c) in g.terms() {
        let (p, z) = m.split_z();
        groups.entry(z).or_default().add_term(p, c.clone());
    }
    groups.into_iter().filter(|(_, p)| !p.is_zero()).collect()
}

/// Rebuild `sum coefficient * z-monomial` from extracted pairs.
pub fn rebuild_from_z(parts: &[(Monomial, Polynomial)]) -> Polynomial {
    parts.iter().fold(Polynomial::zero(), |acc, (z, c)| {
        acc.add(&c.mul(&Polynomial::from_terms([(z.clone(), Q::one())])))
    })
}

/// Where a generator came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    /// Minor of an edge (or bipartition) flattening.
    EdgeMinor {
        split: String,
        rows: Vec<usize>,
        cols: Vec<usize>,
    },
    /// Coefficient of z-monomial `z` in the tilde expansion of base polynomial `base`.
    Tilde { base: usize, z: String },
    /// Read from a file or supplied by the caller.
    Imported(String),
    /// Produced for the flattening at an internal vertex.
    Vertex { vertex: String, inner: Box<Source> },
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::EdgeMinor { split, rows, cols } => {
                write!(
                    f,
                    "edge-minor {split} rows {} cols {}",
                    rows.iter().join(","),
                    cols.iter().join(",")
                )
            }
            Source::Tilde { base, z } => write!(f, "tilde base {base} z {z}"),
            Source::Imported(label) if label.is_empty() => write!(f, "imported"),
            Source::Imported(label) => write!(f, "imported {label}"),
            Source::Vertex { vertex, inner } => write!(f, "vertex {vertex} {inner}"),
        }
    }
}

impl Source {
    pub fn parse(s: &str) -> Result<Source> {
        let bad = || Error::Invalid(format!("bad source tag `{s}`"));
        let s = s.trim();
        let (head, rest) = s.split_once(' ').unwrap_or((s, ""));
        let nums = |t: &str| -> Result<Vec<usize>> {
            t.split(',').map(|x| x.parse().map_err(|_| bad())).collect()
        };
        match head {
            "edge-minor" => {
                let tok: Vec<&str> = rest.split_whitespace().collect();
                match tok.as_slice() {
                    [split, "rows", r, "cols", c] => Ok(Source::EdgeMinor {
                        split: split.to_string(),
                        rows: nums(r)?,
                        cols: nums(c)?,
                    }),
                    _ => Err(bad()),
                }
            }
            "tilde" => {
                let tok: Vec<&str> = rest.split_whitespace().collect();
                match tok.as_slice() {
                    ["base", b, "z", z] => Ok(Source::Tilde {
                        base: b.parse().map_err(|_| bad())?,
                        z: z.to_string(),
                    }),
                    _ => Err(bad()),
                }
            }
            "imported" => Ok(Source::Imported(rest.trim().to_string())),
            "vertex" => {
                let (v, inner) = rest.split_once(' ').ok_or_else(bad)?;
                Ok(Source::Vertex {
                    vertex: v.to_string(),
                    inner: Box::new(Source::parse(inner)?),
                })
            }
            _ => Err(bad()),
        }
    }
}

/// A named collection of polynomials on a tensor with the given state counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSet {
    pub kappa: usize,
    pub states: Vec<usize>,
    pub polys: Vec<Polynomial>,
    pub sources: Vec<Source>,
}

impl GeneratorSet {
    pub fn new(kappa: usize, states: Vec<usize>) -> GeneratorSet {
        GeneratorSet {
            kappa,
            states,
            polys: Vec::new(),
            sources: Vec::new(),
        }
    }

    /// The set `{0}`, the base for `kappa = 2` on three leaves.
    pub fn zero_base(kappa: usize, leaves: usize) -> GeneratorSet {
        let mut g = GeneratorSet::new(kappa, vec![kappa; leaves]);
        g.push(Polynomial::zero(), Source::Imported("zero".into()));
        g
    }

    pub fn push(&mut self, p: Polynomial, source: Source) {
        self.polys.push(p);
        self.sources.push(source);
    }

    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    /// True when every generator is the zero polynomial (including the empty set).
    pub fn is_trivial(&self) -> bool {
        self.polys.iter().all(Polynomial::is_zero)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.polys {
            p.check_states(&self.states)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "kappa: {}\nstates: {}\n",
            self.kappa,
            self.states.iter().join(" ")
        );
        for (p, src) in self.polys.iter().zip(&self.sources) {
            s.push('\n');
            s.push_str(&format!("source: {src}\n"));
            s.push_str(&p.to_text());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<GeneratorSet> {
        let mut kappa = None;
        let mut states = None;
        let mut body_start = text.len();
        let mut offset = 0;
        for (i, raw) in text.split_inclusive('\n').enumerate() {
            let line = raw.trim();
            if let Some(v) = line.strip_prefix("kappa:") {
                kappa = Some(
                    v.trim()
                        .parse::<usize>()
                        .or_else(|_| parse_err(i + 1, "bad kappa"))?,
                );
            } else if let Some(v) = line.strip_prefix("states:") {
                let st = v
                    .split_whitespace()
                    .map(|x| x.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .or_else(|_| parse_err(i + 1, "bad states"))?;
                states = Some(st);
            } else if !line.is_empty() && !line.starts_with('#') {
                body_start = offset;
                break;
            }
            offset += raw.len();
        }
        let header_lines = text[..body_start].lines().count();
        let Some(kappa) = kappa else {
            return parse_err(1, "missing `kappa:` header");
        };
        let Some(states) = states else {
            return parse_err(1, "missing `states:` header");
        };
        let mut set = GeneratorSet::new(kappa, states);
        for mut b in parse_blocks(&text[body_start..])? {
            b.line += header_lines;
            if let Err(e) = b.poly.check_states(&set.states) {
                return parse_err(b.line, e.to_string());
            }
            set.push(b.poly, b.source.unwrap_or(Source::Imported(String::new())));
        }
        Ok(set)
    }
}

struct Block {
    line: usize,
    source: Option<Source>,
    poly: Polynomial,
}

fn parse_blocks(text: &str) -> Result<Vec<Block>> {
    let mut out: Vec<Block> = Vec::new();
    let mut cur: Option<Block> = None;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            out.extend(cur.take());
            continue;
        }
        if let Some(src) = line.strip_prefix("source:") {
            if cur
                .as_ref()
                .is_some_and(|b| b.source.is_some() || !b.poly.is_zero())
            {
                out.extend(cur.take());
            }
            let source = Source::parse(src).or_else(|e| parse_err(n, e.to_string()))?;
            let b = cur.get_or_insert(Block {
                line: n,
                source: None,
                poly: Polynomial::zero(),
            });
            b.source = Some(source);
        } else if let Some(body) = line.strip_prefix("term:") {
            let mut tok = body.split_whitespace();
            let Some(c) = tok.next() else {
                return parse_err(n, "term without coefficient");
            };
            let c = parse_rational(c).or_else(|e| parse_err(n, e.to_string()))?;
            let powers = tok
                .map(parse_power)
                .collect::<Result<Vec<_>>>()
                .or_else(|e| parse_err(n, e.to_string()))?;
            let b = cur.get_or_insert(Block {
                line: n,
                source: None,
                poly: Polynomial::zero(),
            });
            b.poly.add_term(Monomial::from_powers(powers), c);
        } else {
            return parse_err(n, format!("expected `term:` or `source:`, found `{line}`"));
        }
    }
    out.extend(cur);
    Ok(out)
}
