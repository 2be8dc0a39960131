//! Dense matrices, exact rank by fraction-free elimination, exact rank
//! factorization, and singular values for float data.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::{Scalar, Q};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let data = (0..rows * cols)
            .map(|k| f(k / cols.max(1), k % cols.max(1)))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r).clone())
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        Matrix::from_fn(rows.len(), cols.len(), |r, c| {
            self.get(rows[r], cols[c]).clone()
        })
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::from_fn(rows, cols, |_, _| T::zero())
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn diag(v: &[T]) -> Self {
        Matrix::from_fn(v.len(), v.len(), |r, c| {
            if r == c {
                v[r].clone()
            } else {
                T::zero()
            }
        })
    }

    pub fn mul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::<T>::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j).clone() + a.clone() * other.get(k, j).clone();
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: &T) -> Matrix<T> {
        self.map(|x| x.clone() * s.clone())
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|r| self.row(r).iter().cloned().fold(T::zero(), |a, b| a + b))
            .collect()
    }
}

fn row_to_integers(row: &[Q]) -> Vec<BigInt> {
    let l = row.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
    row.iter().map(|x| x.numer() * (&l / x.denom())).collect()
}

/// Exact rank by fraction-free (Bareiss) row-echelon elimination. The pivot
/// in each column is the first nonzero entry at or below the current row.
pub fn rank_exact(m: &Matrix<Q>) -> usize {
    let mut a: Vec<Vec<BigInt>> = (0..m.rows()).map(|r| row_to_integers(m.row(r))).collect();
    let (rows, cols) = (m.rows(), m.cols());
    let mut rank = 0;
    let mut prev = BigInt::one();
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let Some(p) = (rank..rows).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(p, rank);
        let (top, rest) = a.split_at_mut(rank + 1);
        let pivot_row = &top[rank];
        let pivot = &pivot_row[col];
        for row in rest.iter_mut() {
            let factor = row[col].clone();
            for j in col + 1..cols {
                let num = pivot * &row[j] - &factor * &pivot_row[j];
                debug_assert!((&num % &prev).is_zero());
                row[j] = num / &prev;
            }
            row[col] = BigInt::zero();
        }
        prev = pivot.clone();
        rank += 1;
    }
    rank
}

/// Reduced row echelon form over the rationals: `(pivot columns, nonzero rows)`.
pub fn rref(m: &Matrix<Q>) -> (Vec<usize>, Vec<Vec<Q>>) {
    let mut a: Vec<Vec<Q>> = (0..m.rows()).map(|r| m.row(r).to_vec()).collect();
    let (rows, cols) = (m.rows(), m.cols());
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !a[i][col].is_zero()) else {
            continue;
        };
        a.swap(p, r);
        let inv = a[r][col].recip();
        for x in a[r].iter_mut() {
            *x = &*x * &inv;
        }
        let pivot_row = a[r].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i == r || row[col].is_zero() {
                continue;
            }
            let f = row[col].clone();
            for (x, p) in row.iter_mut().zip(&pivot_row) {
                if !p.is_zero() {
                    *x = &*x - &f * p;
                }
            }
        }
        pivots.push(col);
        r += 1;
    }
    a.truncate(r);
    (pivots, a)
}

/// Exact rank factorization `m = left · right` with `left` made of the pivot
/// columns of `m` and `right` the nonzero rows of its reduced echelon form
/// (linearly independent by construction).
pub fn rank_factorization(m: &Matrix<Q>) -> (Matrix<Q>, Matrix<Q>, Vec<usize>) {
    let (pivots, rows) = rref(m);
    let left = Matrix::from_fn(m.rows(), pivots.len(), |r, c| m.get(r, pivots[c]).clone());
    let right = Matrix::from_fn(rows.len(), m.cols(), |r, c| rows[r][c].clone());
    (left, right, pivots)
}

/// Exact determinant by rational Gaussian elimination.
pub fn determinant(m: &Matrix<Q>) -> Result<Q> {
    if m.rows() != m.cols() {
        return Err(Error::Shape("determinant of a non-square matrix".into()));
    }
    let n = m.rows();
    let mut a: Vec<Vec<Q>> = (0..n).map(|r| m.row(r).to_vec()).collect();
    let mut det = Q::one();
    for col in 0..n {
        let Some(p) = (col..n).find(|&i| !a[i][col].is_zero()) else {
            return Ok(Q::zero());
        };
        if p != col {
            a.swap(p, col);
            det = -det;
        }
        det *= &a[col][col];
        let pivot_row = a[col].clone();
        for row in a.iter_mut().skip(col + 1) {
            let f = &row[col] / &pivot_row[col];
            for j in col..n {
                row[j] = &row[j] - &f * &pivot_row[j];
            }
        }
    }
    Ok(det)
}

/// Rows and columns (ascending) of a nonsingular `size × size` submatrix, or
/// `None` when the rank is below `size`.
pub fn nonsingular_minor(m: &Matrix<Q>, size: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    let (pivots, _) = rref(m);
    if pivots.len() < size {
        return None;
    }
    let cols: Vec<usize> = pivots[..size].to_vec();
    let all_rows: Vec<usize> = (0..m.rows()).collect();
    let sub = m.submatrix(&all_rows, &cols).transpose();
    let (row_pivots, _) = rref(&sub);
    Some((row_pivots[..size].to_vec(), cols))
}

pub fn to_dmatrix(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix<f64>) -> Result<Vec<f64>> {
    if m.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(Vec::new());
    }
    let mut s: Vec<f64> = to_dmatrix(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Number of singular values with `σ_i / σ_1 ≥ tol`; zero for the zero matrix.
pub fn rank_numeric(m: &Matrix<f64>, tol: f64) -> Result<usize> {
    let s = singular_values(m)?;
    let Some(&top) = s.first() else { return Ok(0) };
    if top <= 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x / top >= tol).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{q, qi};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> Matrix<Q> {
        let a = Matrix::from_fn(rows, rank, |_, _| {
            q(rng.gen_range(-5..=5), rng.gen_range(1..=4))
        });
        let b = Matrix::from_fn(rank, cols, |_, _| qi(rng.gen_range(-5..=5)));
        a.mul(&b).unwrap()
    }

    /// Textbook rational elimination, used as an independent rank oracle.
    #[allow(clippy::needless_range_loop)]
    fn rank_by_gauss(m: &Matrix<Q>) -> usize {
        let mut a: Vec<Vec<Q>> = (0..m.rows()).map(|r| m.row(r).to_vec()).collect();
        let mut rank = 0;
        for c in 0..m.cols() {
            if let Some(p) = (rank..a.len()).find(|&r| !a[r][c].is_zero()) {
                a.swap(p, rank);
                for r in rank + 1..a.len() {
                    let f = &a[r][c] / &a[rank][c];
                    for j in 0..m.cols() {
                        let v = &a[r][j] - &f * &a[rank][j];
                        a[r][j] = v;
                    }
                }
                rank += 1;
            }
        }
        rank
    }

    #[test]
    fn identity_rank() {
        assert_eq!(rank_exact(&Matrix::<Q>::identity(4)), 4);
        assert_eq!(rank_exact(&Matrix::<Q>::zeros(3, 5)), 0);
    }

    #[test]
    fn outer_product_has_rank_one() {
        let u = [q(1, 2), qi(-3), qi(7)];
        let v = [qi(2), q(5, 3), qi(0), qi(1)];
        let m = Matrix::from_fn(3, 4, |r, c| u[r].clone() * v[c].clone());
        assert_eq!(rank_exact(&m), 1);
    }

    #[test]
    fn bareiss_matches_gauss_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..60 {
            let (r, c) = (rng.gen_range(1..7), rng.gen_range(1..7));
            let k = rng.gen_range(0..=r.min(c));
            let m = random_low_rank(&mut rng, r, c, k);
            assert_eq!(rank_exact(&m), rank_by_gauss(&m));
            assert!(rank_exact(&m) <= k);
        }
    }

    #[test]
    fn rank_factorization_recomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let m = random_low_rank(&mut rng, 5, 6, 2);
            let (l, r, piv) = rank_factorization(&m);
            assert_eq!(l.mul(&r).unwrap(), m);
            assert_eq!(piv.len(), rank_exact(&m));
            assert_eq!(rank_exact(&r), r.rows());
        }
    }

    #[test]
    fn witness_minor_is_nonsingular() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_low_rank(&mut rng, 6, 6, 4);
        let (rows, cols) = nonsingular_minor(&m, 3).unwrap();
        assert!(!determinant(&m.submatrix(&rows, &cols)).unwrap().is_zero());
        let small = random_low_rank(&mut rng, 6, 6, 2);
        assert!(nonsingular_minor(&small, 3).is_none());
    }

    #[test]
    fn determinant_values() {
        let m = Matrix::from_rows(vec![vec![qi(2), qi(1)], vec![qi(7), qi(4)]]).unwrap();
        assert_eq!(determinant(&m).unwrap(), qi(1));
        let p = Matrix::from_rows(vec![vec![qi(0), qi(1)], vec![qi(1), qi(0)]]).unwrap();
        assert_eq!(determinant(&p).unwrap(), qi(-1));
    }

    #[test]
    fn numeric_rank_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exact = random_low_rank(&mut rng, 6, 5, 2);
        let noise: Vec<f64> = (0..exact.data().len())
            .map(|_| rng.gen_range(-1e-13..1e-13))
            .collect();
        let noisy = Matrix::from_fn(6, 5, |r, c| {
            crate::scalar::q_to_f64(exact.get(r, c)) + noise[r * 5 + c]
        });
        assert_eq!(rank_numeric(&noisy, DEFAULT_RANK_TOL).unwrap(), 2);
        assert_eq!(
            rank_numeric(&Matrix::<f64>::zeros(3, 3), DEFAULT_RANK_TOL).unwrap(),
            0
        );
        let bad = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(rank_numeric(&bad, 1e-9), Err(Error::NonFinite)));
    }

    #[test]
    fn numeric_rank_agrees_with_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let k = rng.gen_range(0..=4);
            let m = random_low_rank(&mut rng, 5, 6, k);
            let f = m.map(crate::scalar::q_to_f64);
            assert_eq!(rank_numeric(&f, DEFAULT_RANK_TOL).unwrap(), rank_exact(&m));
        }
    }
}
