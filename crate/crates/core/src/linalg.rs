//! Small dense linear algebra: just enough for ridge-regularized normal
//! equations and the LMMSE gain. Everything is double precision and
//! column-count-agnostic; desk-scale systems are at most a few thousand
//! unknowns.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::parameter("ragged rows".to_string()));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::parameter(format!(
                "matvec: {}x{} * len {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::parameter(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                for j in 0..other.cols {
                    dst[j] += a * src[j];
                }
            }
        }
        Ok(out)
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::parameter("matrix add: shape mismatch".to_string()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::parameter("cholesky: matrix not square".to_string()));
        }
        let n = a.rows;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::contract(format!(
                            "cholesky: matrix not positive definite at pivot {i} (value {s:.3e})"
                        )));
                    }
                    l[(i, j)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(Cholesky { l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows;
        debug_assert_eq!(b.len(), n);
        // forward substitution L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[(i, k)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        // back substitution L^T x = y
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[(k, i)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        y
    }

    /// Solves A X = B column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let n = self.l.rows;
        let mut out = Matrix::zeros(n, b.cols);
        let mut col = vec![0.0; n];
        for j in 0..b.cols {
            for i in 0..n {
                col[i] = b[(i, j)];
            }
            let x = self.solve(&col);
            for i in 0..n {
                out[(i, j)] = x[i];
            }
        }
        out
    }
}

/// Count-weighted least squares fit of `y ~ intercept + slope * x`.
/// Returns `(intercept, slope)`.
pub fn weighted_line_fit(points: &[(f64, f64, f64)]) -> Result<(f64, f64)> {
    let wsum: f64 = points.iter().map(|(_, _, w)| w).sum();
    if points.len() < 2 || wsum <= 0.0 {
        return Err(Error::estimation("line fit needs >= 2 weighted points".to_string()));
    }
    let xm: f64 = points.iter().map(|(x, _, w)| w * x).sum::<f64>() / wsum;
    let ym: f64 = points.iter().map(|(_, y, w)| w * y).sum::<f64>() / wsum;
    let sxx: f64 = points.iter().map(|(x, _, w)| w * (x - xm) * (x - xm)).sum();
    let sxy: f64 = points.iter().map(|(x, y, w)| w * (x - xm) * (y - ym)).sum();
    if sxx <= 0.0 {
        return Err(Error::estimation(
            "line fit degenerate: all abscissae equal".to_string(),
        ));
    }
    let slope = sxy / sxx;
    Ok((ym - slope * xm, slope))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        // A = M M^T + I is SPD
        let m = Matrix::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![0.0, 1.5, -1.0],
            vec![0.3, 0.0, 2.0],
        ])
        .unwrap();
        let mut a = m.matmul(&m.transpose()).unwrap();
        a.add_diagonal(1.0);
        let x_true = vec![1.0, -2.0, 0.25];
        let b = a.matvec(&x_true).unwrap();
        let x = Cholesky::new(&a).unwrap().solve(&b);
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!(Cholesky::new(&a).is_err());
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let pts: Vec<(f64, f64, f64)> = (0..10)
            .map(|i| {
                let x = i as f64 / 10.0;
                (x, (x - 0.09) / 76.0, 1.0 + i as f64)
            })
            .collect();
        let (b0, b1) = weighted_line_fit(&pts).unwrap();
        assert!((b1 - 1.0 / 76.0).abs() < 1e-12);
        assert!((b0 + 0.09 / 76.0).abs() < 1e-12);
    }
}
