//! Compressed sparse rows and Krylov solvers.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("{method} did not reach relative residual {tol:e} in {iters} iterations (got {residual:e})")]
    NoConvergence {
        method: &'static str,
        tol: f64,
        iters: usize,
        residual: f64,
    },
    #[error("system matrix is singular")]
    Singular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Builds from unsorted triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Csr {
        trip.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut data: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Csr {
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.data[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Rows and columns restricted to `keep` (ordered), renumbered.
    pub fn submatrix(&self, keep: &[usize], map: &[Option<usize>]) -> Csr {
        let mut indptr = Vec::with_capacity(keep.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for &i in keep {
            for (j, v) in self.row(i) {
                if let Some(jj) = map[j] {
                    indices.push(jj);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            n: keep.len(),
            indptr,
            indices,
            data,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol * scale))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn transpose(&self) -> Csr {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                trip.push((j, i, v));
            }
        }
        Csr::from_triplets(self.n, trip)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Relative residual `|b - A x| / |b|`.
pub fn relative_residual(a: &Csr, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let nb = norm(b);
    if nb == 0.0 {
        norm(&r)
    } else {
        norm(&r) / nb
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero start.
pub fn pcg(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats), SolveError> {
    let n = a.n;
    let inv_d: Vec<f64> = a.diag().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let nb = norm(b);
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolveError::Singular);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm(&r) / nb;
        if res <= tol {
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    residual: res,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolveError::NoConvergence {
        method: "PCG",
        tol,
        iters: max_iter,
        residual: norm(&r) / nb,
    })
}

/// Jacobi-preconditioned BiCGSTAB from a zero start.
pub fn bicgstab(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats), SolveError> {
    let n = a.n;
    let inv_d: Vec<f64> = a.diag().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let nb = norm(b);
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_d[i];
        }
        a.matvec(&y, &mut v);
        let r0v = dot(&r0, &v);
        if r0v == 0.0 {
            break;
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / nb <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    residual: norm(&s) / nb,
                },
            ));
        }
        for i in 0..n {
            z[i] = s[i] * inv_d[i];
        }
        a.matvec(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = norm(&r) / nb;
        if res <= tol {
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    residual: res,
                },
            ));
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(SolveError::NoConvergence {
        method: "BiCGSTAB",
        tol,
        iters: max_iter,
        residual: relative_residual(a, &x, b),
    })
}

/// Dense LU solve for small systems.
pub fn dense_solve(a: &Csr, b: &[f64]) -> Result<Vec<f64>, SolveError> {
    let lu = a.to_dense().lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
        .ok_or(SolveError::Singular)
}
