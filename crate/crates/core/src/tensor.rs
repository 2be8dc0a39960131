//! Dense labeled tensors.
//!
//! Every axis carries a taxon name and a state count. Entries are stored
//! row-major over the axes, so composite indices produced by flattening are
//! lexicographic in the axis order.

use std::collections::HashSet;
use std::fmt::Write as _;

use num_traits::Zero;

use crate::error::{parse_err, Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::{Scalar, Q};
use crate::tree::Split;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Axis {
    pub name: String,
    pub states: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, states: usize) -> Axis {
        Axis {
            name: name.into(),
            states,
        }
    }
}

/// Axes named after `taxa`, each with `states` states.
pub fn uniform_axes(taxa: &[String], states: usize) -> Vec<Axis> {
    taxa.iter().map(|t| Axis::new(t.clone(), states)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    axes: Vec<Axis>,
    data: Vec<T>,
}

/// Ordered partition of a tensor's axes into blocks; each block becomes one
/// axis of the flattening. Members keep the tensor's axis order within a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatteningSpec {
    pub blocks: Vec<Vec<String>>,
}

impl FlatteningSpec {
    pub fn new(blocks: Vec<Vec<String>>) -> FlatteningSpec {
        FlatteningSpec { blocks }
    }

    pub fn from_split(s: &Split) -> FlatteningSpec {
        FlatteningSpec {
            blocks: vec![s.side_a.clone(), s.side_b.clone()],
        }
    }

    pub fn block_name(block: &[String]) -> String {
        block.join("+")
    }

    /// For each block, the positions of its members in `axes`, ascending.
    fn positions(&self, axes: &[Axis]) -> Result<Vec<Vec<usize>>> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            if block.is_empty() {
                return Err(Error::Partition("empty block".into()));
            }
            let mut pos = Vec::with_capacity(block.len());
            for name in block {
                let p = axes
                    .iter()
                    .position(|a| &a.name == name)
                    .ok_or_else(|| Error::Partition(format!("`{name}` is not an axis")))?;
                if !seen.insert(p) {
                    return Err(Error::Partition(format!("`{name}` appears twice")));
                }
                pos.push(p);
            }
            pos.sort_unstable();
            out.push(pos);
        }
        if seen.len() != axes.len() {
            return Err(Error::Partition("blocks do not cover every axis".into()));
        }
        Ok(out)
    }
}

fn strides(axes: &[Axis]) -> Vec<usize> {
    let mut s = vec![1; axes.len()];
    for i in (0..axes.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * axes[i + 1].states;
    }
    s
}

/// Advance a row-major multi-index; returns false after the last index.
pub(crate) fn next_index(idx: &mut [usize], dims: &[usize]) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < dims[i] {
            return true;
        }
        idx[i] = 0;
    }
    false
}

impl<T: Clone> Tensor<T> {
    pub fn new(axes: Vec<Axis>, data: Vec<T>) -> Result<Tensor<T>> {
        let mut names = HashSet::new();
        for a in &axes {
            if !names.insert(a.name.as_str()) {
                return Err(Error::Shape(format!("duplicate axis `{}`", a.name)));
            }
            if a.states == 0 {
                return Err(Error::Shape(format!("axis `{}` has no states", a.name)));
            }
        }
        let size: usize = axes.iter().map(|a| a.states).product();
        if size != data.len() {
            return Err(Error::Shape(format!(
                "expected {size} entries, got {}",
                data.len()
            )));
        }
        Ok(Tensor { axes, data })
    }

    pub fn from_fn(axes: Vec<Axis>, mut f: impl FnMut(&[usize]) -> T) -> Result<Tensor<T>> {
        let dims: Vec<usize> = axes.iter().map(|a| a.states).collect();
        let size: usize = dims.iter().product();
        let mut data = Vec::with_capacity(size);
        let mut idx = vec![0; dims.len()];
        if size > 0 {
            loop {
                data.push(f(&idx));
                if !next_index(&mut idx, &dims) {
                    break;
                }
            }
        }
        Tensor::new(axes, data)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis_names(&self) -> Vec<String> {
        self.axes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.states).collect()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis_position(&self, name: &str) -> Result<usize> {
        self.axes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Shape(format!("no axis named `{name}`")))
    }

    pub fn offset(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.axes.len() {
            return Err(Error::OutOfRange(format!(
                "{} indices for {} axes",
                idx.len(),
                self.axes.len()
            )));
        }
        let mut off = 0;
        for (i, (&x, a)) in idx.iter().zip(&self.axes).enumerate() {
            if x >= a.states {
                return Err(Error::OutOfRange(format!(
                    "index {x} on axis {i} of size {}",
                    a.states
                )));
            }
            off = off * a.states + x;
        }
        Ok(off)
    }

    pub fn get(&self, idx: &[usize]) -> Result<&T> {
        Ok(&self.data[self.offset(idx)?])
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Tensor<U> {
        Tensor {
            axes: self.axes.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn rename_axis(&mut self, pos: usize, name: impl Into<String>) -> Result<()> {
        let name = name.into();
        if self
            .axes
            .iter()
            .enumerate()
            .any(|(i, a)| i != pos && a.name == name)
        {
            return Err(Error::Shape(format!("duplicate axis `{name}`")));
        }
        self.axes[pos].name = name;
        Ok(())
    }

    /// Reorder axes: new axis `i` is old axis `order[i]`.
    pub fn permute(&self, order: &[usize]) -> Result<Tensor<T>> {
        let n = self.axes.len();
        let mut seen = vec![false; n];
        if order.len() != n
            || order
                .iter()
                .any(|&o| o >= n || std::mem::replace(&mut seen[o], true))
        {
            return Err(Error::Shape("not a permutation of the axes".into()));
        }
        let old_strides = strides(&self.axes);
        let axes: Vec<Axis> = order.iter().map(|&o| self.axes[o].clone()).collect();
        let dims: Vec<usize> = axes.iter().map(|a| a.states).collect();
        let step: Vec<usize> = order.iter().map(|&o| old_strides[o]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0; n];
        loop {
            let off: usize = idx.iter().zip(&step).map(|(i, s)| i * s).sum();
            data.push(self.data[off].clone());
            if !next_index(&mut idx, &dims) {
                break;
            }
        }
        Ok(Tensor { axes, data })
    }

    /// Reorder axes to match `names`.
    pub fn permute_to(&self, names: &[String]) -> Result<Tensor<T>> {
        let order: Vec<usize> = names
            .iter()
            .map(|n| self.axis_position(n))
            .collect::<Result<_>>()?;
        self.permute(&order)
    }

    fn reshape(self, axes: Vec<Axis>) -> Result<Tensor<T>> {
        Tensor::new(axes, self.data)
    }

    pub fn flatten(&self, spec: &FlatteningSpec) -> Result<Tensor<T>> {
        let pos = spec.positions(&self.axes)?;
        let order: Vec<usize> = pos.iter().flatten().copied().collect();
        let axes = pos
            .iter()
            .map(|block| {
                let names: Vec<String> = block.iter().map(|&p| self.axes[p].name.clone()).collect();
                Axis::new(
                    FlatteningSpec::block_name(&names),
                    block.iter().map(|&p| self.axes[p].states).product(),
                )
            })
            .collect();
        self.permute(&order)?.reshape(axes)
    }

    /// Inverse of [`Tensor::flatten`]: rebuild a tensor with `axes` from its
    /// flattening under `spec`.
    pub fn unflatten(flat: &Tensor<T>, spec: &FlatteningSpec, axes: &[Axis]) -> Result<Tensor<T>> {
        let pos = spec.positions(axes)?;
        if flat.ndim() != pos.len() {
            return Err(Error::Shape(
                "flattening has the wrong number of axes".into(),
            ));
        }
        for (block, a) in pos.iter().zip(flat.axes()) {
            if block.iter().map(|&p| axes[p].states).product::<usize>() != a.states {
                return Err(Error::Shape(format!(
                    "block `{}` has the wrong size",
                    a.name
                )));
            }
        }
        let order: Vec<usize> = pos.iter().flatten().copied().collect();
        let permuted_axes: Vec<Axis> = order.iter().map(|&o| axes[o].clone()).collect();
        let permuted = Tensor::new(permuted_axes, flat.data.clone())?;
        let mut inverse = vec![0; order.len()];
        for (i, &o) in order.iter().enumerate() {
            inverse[o] = i;
        }
        permuted.permute(&inverse)
    }

    /// Restrict each axis to the listed indices (in the given order).
    pub fn subarray(&self, keep: &[Vec<usize>]) -> Result<Tensor<T>> {
        if keep.len() != self.axes.len() {
            return Err(Error::Shape("one index list per axis required".into()));
        }
        for (k, a) in keep.iter().zip(&self.axes) {
            if k.is_empty() {
                return Err(Error::OutOfRange(format!(
                    "empty index list for `{}`",
                    a.name
                )));
            }
            if let Some(&bad) = k.iter().find(|&&x| x >= a.states) {
                return Err(Error::OutOfRange(format!(
                    "index {bad} on axis `{}` of size {}",
                    a.name, a.states
                )));
            }
        }
        let axes: Vec<Axis> = keep
            .iter()
            .zip(&self.axes)
            .map(|(k, a)| Axis::new(a.name.clone(), k.len()))
            .collect();
        let st = strides(&self.axes);
        Tensor::from_fn(axes, |idx| {
            let off: usize = idx
                .iter()
                .enumerate()
                .map(|(i, &x)| keep[i][x] * st[i])
                .sum();
            self.data[off].clone()
        })
    }

    pub fn as_matrix(&self) -> Result<Matrix<T>> {
        if self.axes.len() != 2 {
            return Err(Error::Shape(format!(
                "expected a matrix, found {} axes",
                self.axes.len()
            )));
        }
        Matrix::from_vec(self.axes[0].states, self.axes[1].states, self.data.clone())
    }

    pub fn from_matrix(
        m: &Matrix<T>,
        row: impl Into<String>,
        col: impl Into<String>,
    ) -> Result<Tensor<T>> {
        Tensor::new(
            vec![Axis::new(row, m.rows()), Axis::new(col, m.cols())],
            m.data().to_vec(),
        )
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(axes: Vec<Axis>) -> Result<Tensor<T>> {
        Tensor::from_fn(axes, |_| T::zero())
    }

    pub fn sum(&self) -> T {
        self.data.iter().cloned().fold(T::zero(), |a, b| a + b)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Zero::is_zero)
    }

    pub fn scale(&self, s: &T) -> Tensor<T> {
        self.map(|x| x.clone() * s.clone())
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.axes != other.axes {
            return Err(Error::Shape("axes differ".into()));
        }
        Ok(Tensor {
            axes: self.axes.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.clone() + b.clone())
                .collect(),
        })
    }

    /// `Q ⋆_{p,q} R`: contract axis `p` of `self` with axis `q` of `r`. The
    /// result has the remaining axes of `self` followed by those of `r`.
    pub fn star(&self, r: &Tensor<T>, p: usize, q: usize) -> Result<Tensor<T>> {
        if p >= self.ndim() || q >= r.ndim() {
            return Err(Error::Shape("contraction axis out of range".into()));
        }
        if self.axes[p].states != r.axes[q].states {
            return Err(Error::Shape(format!(
                "cannot contract `{}` ({} states) with `{}` ({} states)",
                self.axes[p].name, self.axes[p].states, r.axes[q].name, r.axes[q].states
            )));
        }
        let k = self.axes[p].states;
        let mut left_order: Vec<usize> = (0..self.ndim()).filter(|&i| i != p).collect();
        left_order.push(p);
        let mut right_order = vec![q];
        right_order.extend((0..r.ndim()).filter(|&i| i != q));
        let left = self.permute(&left_order)?;
        let right = r.permute(&right_order)?;
        let lm = Matrix::from_vec(left.len() / k, k, left.data)?;
        let rm = Matrix::from_vec(k, right.len() / k, right.data)?;
        let prod = lm.mul(&rm)?;
        let axes: Vec<Axis> = left.axes[..left.axes.len() - 1]
            .iter()
            .chain(&right.axes[1..])
            .cloned()
            .collect();
        Tensor::new(axes, prod.into_data())
    }

    /// Let `a` act in axis `k`: `P ↦ P ⋆_{k,1} A`, keeping the axis in place
    /// with its state count changed to `a.cols()`.
    pub fn act(&self, k: usize, a: &Matrix<T>) -> Result<Tensor<T>> {
        if k >= self.ndim() {
            return Err(Error::Shape(format!("no axis {k}")));
        }
        if a.rows() != self.axes[k].states {
            return Err(Error::Shape(format!(
                "matrix has {} rows but axis `{}` has {} states",
                a.rows(),
                self.axes[k].name,
                self.axes[k].states
            )));
        }
        let a_tensor = Tensor::new(
            vec![
                Axis::new("\u{0}row", a.rows()),
                Axis::new("\u{0}col", a.cols()),
            ],
            a.data().to_vec(),
        )?;
        let starred = self.star(&a_tensor, k, 0)?;
        // starred has the acted axis last; move it back to position k
        let n = self.ndim();
        let mut order: Vec<usize> = (0..n - 1).collect();
        order.insert(k, n - 1);
        let mut out = starred.permute(&order)?;
        out.axes[k].name = self.axes[k].name.clone();
        Ok(out)
    }
}

impl Tensor<Q> {
    pub fn rank_exact(&self) -> Result<usize> {
        Ok(linalg::rank_exact(&self.as_matrix()?))
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(crate::scalar::q_to_f64)
    }
}

impl Tensor<f64> {
    pub fn rank_numeric(&self, tol: f64) -> Result<usize> {
        linalg::rank_numeric(&self.as_matrix()?, tol)
    }
}

/// A tensor read from a file whose scalar mode is decided at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    Exact(Tensor<Q>),
    Float(Tensor<f64>),
}

impl AnyTensor {
    pub fn axes(&self) -> &[Axis] {
        match self {
            AnyTensor::Exact(t) => t.axes(),
            AnyTensor::Float(t) => t.axes(),
        }
    }

    pub fn rank_exact(&self) -> Result<usize> {
        match self {
            AnyTensor::Exact(t) => t.rank_exact(),
            AnyTensor::Float(_) => Err(Error::Invalid(
                "exact rank requires an exact-rational tensor".into(),
            )),
        }
    }

    pub fn rank_numeric(&self, tol: f64) -> Result<usize> {
        match self {
            AnyTensor::Exact(t) => t.to_f64().rank_numeric(tol),
            AnyTensor::Float(t) => t.rank_numeric(tol),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            AnyTensor::Exact(t) => t.to_text(),
            AnyTensor::Float(t) => t.to_text(),
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// `axes: a1:2 a2:2 ...` followed by one entry per line in row-major order.
    pub fn to_text(&self) -> String {
        let mut s = String::from("axes:");
        for a in &self.axes {
            let _ = write!(s, " {}:{}", a.name, a.states);
        }
        s.push('\n');
        for x in &self.data {
            let _ = writeln!(s, "{x}");
        }
        s
    }

    /// Parse the text format. Blank lines and lines starting with `#` are ignored.
    pub fn from_text(text: &str) -> Result<Tensor<T>> {
        let mut axes = None;
        let mut data = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if axes.is_none() {
                let Some(rest) = line.strip_prefix("axes:") else {
                    return parse_err(i + 1, "expected `axes:` header");
                };
                let mut v = Vec::new();
                for tok in rest.split_whitespace() {
                    let Some((name, n)) = tok.rsplit_once(':') else {
                        return parse_err(i + 1, format!("bad axis `{tok}`"));
                    };
                    let n: usize = n.parse().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("bad state count in `{tok}`"),
                    })?;
                    v.push(Axis::new(name, n));
                }
                axes = Some(v);
                continue;
            }
            let x = T::parse_scalar(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            data.push(x);
        }
        let Some(axes) = axes else {
            return parse_err(0, "missing `axes:` header");
        };
        Tensor::new(axes, data).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{q, qi};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, axes: Vec<Axis>) -> Tensor<Q> {
        Tensor::from_fn(axes, |_| q(rng.gen_range(-9..=9), rng.gen_range(1..=3))).unwrap()
    }

    #[test]
    fn single_block_is_row_major_vector() {
        let t = Tensor::from_fn(vec![Axis::new("a", 2), Axis::new("b", 3)], |i| {
            (i[0] * 3 + i[1]) as i64
        })
        .unwrap();
        let f = t
            .flatten(&FlatteningSpec::new(vec![names(&["b", "a"])]))
            .unwrap();
        assert_eq!(f.data(), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(f.axes()[0].name, "a+b");
    }

    #[test]
    fn flatten_rejects_non_partition() {
        let t = Tensor::<Q>::zeros(uniform_axes(&names(&["a", "b", "c"]), 2)).unwrap();
        let missing = FlatteningSpec::new(vec![names(&["a"]), names(&["b"])]);
        assert!(matches!(t.flatten(&missing), Err(Error::Partition(_))));
        let twice = FlatteningSpec::new(vec![names(&["a", "b"]), names(&["b", "c"])]);
        assert!(matches!(t.flatten(&twice), Err(Error::Partition(_))));
        let unknown = FlatteningSpec::new(vec![names(&["a", "b"]), names(&["z"])]);
        assert!(matches!(t.flatten(&unknown), Err(Error::Partition(_))));
    }

    #[test]
    fn matrix_star_is_product_and_identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, vec![Axis::new("x", 3), Axis::new("y", 4)]);
        let id = Tensor::from_matrix(&Matrix::<Q>::identity(3), "w", "x2").unwrap();
        let prod = id.star(&a, 1, 0).unwrap();
        assert_eq!(prod.data(), a.data());
        assert_eq!(prod.axis_names(), names(&["w", "y"]));
    }

    #[test]
    fn star_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let qt = rand_tensor(&mut rng, uniform_axes(&names(&["a", "b", "j"]), 2));
        let r = rand_tensor(&mut rng, uniform_axes(&names(&["k", "c"]), 2));
        let s = qt.star(&r, 2, 0).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let mut expect = qi(0);
                    for j in 0..2 {
                        expect += qt.get(&[a, b, j]).unwrap() * r.get(&[j, c]).unwrap();
                    }
                    assert_eq!(s.get(&[a, b, c]).unwrap(), &expect);
                }
            }
        }
        let bad = rand_tensor(&mut rng, uniform_axes(&names(&["k"]), 3));
        assert!(matches!(qt.star(&bad, 2, 0), Err(Error::Shape(_))));
        let clash = rand_tensor(&mut rng, uniform_axes(&names(&["k", "a"]), 2));
        assert!(matches!(qt.star(&clash, 2, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn star_on_seam_is_flattened_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let qt = rand_tensor(
            &mut rng,
            vec![Axis::new("a", 2), Axis::new("b", 3), Axis::new("j", 2)],
        );
        let r = rand_tensor(
            &mut rng,
            vec![Axis::new("k", 2), Axis::new("c", 2), Axis::new("d", 3)],
        );
        let s = qt.star(&r, 2, 0).unwrap();
        let flat = s
            .flatten(&FlatteningSpec::new(vec![
                names(&["a", "b"]),
                names(&["c", "d"]),
            ]))
            .unwrap();
        let fq = qt
            .flatten(&FlatteningSpec::new(vec![
                names(&["a", "b"]),
                names(&["j"]),
            ]))
            .unwrap();
        let fr = r
            .flatten(&FlatteningSpec::new(vec![
                names(&["k"]),
                names(&["c", "d"]),
            ]))
            .unwrap();
        assert_eq!(
            flat.as_matrix().unwrap(),
            fq.as_matrix()
                .unwrap()
                .mul(&fr.as_matrix().unwrap())
                .unwrap()
        );
    }

    #[test]
    fn star_is_associative_and_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_tensor(&mut rng, vec![Axis::new("a", 2), Axis::new("x", 3)]);
        let b = rand_tensor(
            &mut rng,
            vec![Axis::new("y", 3), Axis::new("b", 2), Axis::new("z", 2)],
        );
        let c = rand_tensor(&mut rng, vec![Axis::new("w", 2), Axis::new("c", 3)]);
        let left = a.star(&b, 1, 0).unwrap().star(&c, 2, 0).unwrap();
        let right = a.star(&b.star(&c, 2, 0).unwrap(), 1, 0).unwrap();
        assert_eq!(left, right);

        let a2 = rand_tensor(&mut rng, vec![Axis::new("a", 2), Axis::new("x", 3)]);
        let (s, t) = (q(3, 2), qi(-4));
        let combo = a
            .scale(&s)
            .add(&a2.scale(&t))
            .unwrap()
            .star(&b, 1, 0)
            .unwrap();
        let split = a
            .star(&b, 1, 0)
            .unwrap()
            .scale(&s)
            .add(&a2.star(&b, 1, 0).unwrap().scale(&t))
            .unwrap();
        assert_eq!(combo, split);
    }

    #[test]
    fn act_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = rand_tensor(
            &mut rng,
            vec![Axis::new("a", 2), Axis::new("b", 3), Axis::new("c", 2)],
        );
        let id = Matrix::<Q>::identity(3);
        assert_eq!(p.act(1, &id).unwrap(), p);
        let a = Matrix::from_fn(3, 4, |_, _| qi(rng.gen_range(-3..=3)));
        let b = Matrix::from_fn(4, 2, |_, _| qi(rng.gen_range(-3..=3)));
        let twice = p.act(1, &a).unwrap().act(1, &b).unwrap();
        assert_eq!(twice, p.act(1, &a.mul(&b).unwrap()).unwrap());
        assert_eq!(twice.shape(), vec![2, 2, 2]);
        assert!(matches!(p.act(0, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn act_equals_star_up_to_axis_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = rand_tensor(
            &mut rng,
            vec![Axis::new("a", 2), Axis::new("b", 3), Axis::new("c", 2)],
        );
        let a = Matrix::from_fn(3, 2, |_, _| qi(rng.gen_range(-3..=3)));
        let via_star = p
            .star(&Tensor::from_matrix(&a, "r", "b").unwrap(), 1, 0)
            .unwrap();
        let acted = p.act(1, &a).unwrap();
        assert_eq!(via_star.permute_to(&acted.axis_names()).unwrap(), acted);
    }

    #[test]
    fn subarray_commutes_with_selection_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = rand_tensor(&mut rng, vec![Axis::new("a", 3), Axis::new("b", 4)]);
        let keep = vec![0, 2, 3];
        let sel = Matrix::from_fn(4, 3, |r, c| if keep[c] == r { qi(1) } else { qi(0) });
        let sub = p.subarray(&[vec![0, 1, 2], keep.clone()]).unwrap();
        assert_eq!(sub, p.act(1, &sel).unwrap());
        assert_eq!(p.subarray(&[vec![0, 1, 2], vec![0, 1, 2, 3]]).unwrap(), p);
        assert!(matches!(
            p.subarray(&[vec![0], vec![4]]),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            p.subarray(&[vec![], vec![0]]),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = rand_tensor(&mut rng, vec![Axis::new("a", 2), Axis::new("b", 3)]);
        let back = Tensor::<Q>::from_text(&format!("# comment\n{}", p.to_text())).unwrap();
        assert_eq!(back, p);
        assert!(matches!(
            Tensor::<Q>::from_text("axes: a:2\n1\nx\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(Tensor::<Q>::from_text("axes: a:2\n1\n").is_err());
    }

    #[test]
    fn exact_rank_needs_matrix() {
        let p = Tensor::<Q>::zeros(uniform_axes(&names(&["a", "b", "c"]), 2)).unwrap();
        assert!(p.rank_exact().is_err());
        let f = AnyTensor::Float(
            p.to_f64()
                .flatten(&FlatteningSpec::new(vec![
                    names(&["a"]),
                    names(&["b", "c"]),
                ]))
                .unwrap(),
        );
        assert!(f.rank_exact().is_err());
        assert_eq!(f.rank_numeric(1e-9).unwrap(), 0);
    }

    fn arb_partition(n: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..3usize, n)
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(dims in proptest::collection::vec(1..4usize, 1..6), seed in 0u64..1000, blocks in arb_partition(6)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let axes: Vec<Axis> = dims.iter().enumerate().map(|(i, &d)| Axis::new(format!("t{i}"), d)).collect();
            let p = rand_tensor(&mut rng, axes.clone());
            let mut groups: Vec<Vec<String>> = vec![Vec::new(); 3];
            for (i, a) in axes.iter().enumerate() {
                groups[blocks[i]].push(a.name.clone());
            }
            groups.retain(|g| !g.is_empty());
            let spec = FlatteningSpec::new(groups);
            let flat = p.flatten(&spec).unwrap();
            let mut before: Vec<String> = p.data().iter().map(|x| x.to_string()).collect();
            let mut after: Vec<String> = flat.data().iter().map(|x| x.to_string()).collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
            prop_assert_eq!(Tensor::unflatten(&flat, &spec, &axes).unwrap(), p);
        }

        #[test]
        fn rank_is_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rand_tensor(&mut rng, vec![Axis::new("a", 4), Axis::new("b", 5)]);
            let r = p.rank_exact().unwrap();
            prop_assert!(r <= 4);
            let rows = vec![3, 1, 0, 2];
            let cols = vec![4, 0, 3, 1, 2];
            prop_assert_eq!(p.subarray(&[rows, cols]).unwrap().rank_exact().unwrap(), r);
            prop_assert_eq!(p.permute(&[1, 0]).unwrap().rank_exact().unwrap(), r);
        }
    }
}
