//! Small dense helpers shared by the frame, Jacobian and reconstruction code.

use nalgebra::DMatrix;

/// Relative singular-value cutoff below which a direction counts as null.
pub const RANK_TOL: f64 = 1e-8;

/// Numerical rank: singular values `< RANK_TOL · σ_max` count as zero.
pub fn rank(m: &DMatrix<f64>) -> usize {
    rank_with(m, RANK_TOL)
}

pub fn rank_with(m: &DMatrix<f64>, rel: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    // tall matrices: R of a QR factorization has the same singular values
    let sv = if m.nrows() > 2 * m.ncols() {
        m.clone().qr().r().singular_values()
    } else {
        m.clone().singular_values()
    };
    let smax = sv.max();
    if smax == 0.0 || !smax.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s >= rel * smax).count()
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Determinant of a 3x3 matrix given by rows.
#[inline]
pub fn det3(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Least-squares solve with singular values below `rel · σ_max` truncated.
/// Returns the solution and the number of retained singular values.
pub fn truncated_lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rel: f64) -> (DMatrix<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u");
    let vt = svd.v_t.as_ref().expect("v_t");
    let smax = svd.singular_values.max();
    let mut x = DMatrix::zeros(a.ncols(), b.ncols());
    let mut kept = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= rel * smax || s == 0.0 {
            continue;
        }
        kept += 1;
        let coef = u.column(i).transpose() * b / s;
        x += vt.row(i).transpose() * coef;
    }
    (x, kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_count() {
        assert_eq!(subsets(5, 3).len(), 10);
        assert_eq!(subsets(3, 3), vec![vec![0, 1, 2]]);
        assert!(subsets(2, 3).is_empty());
    }

    #[test]
    fn rank_threshold() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-9]);
        assert_eq!(rank(&m), 1);
        assert_eq!(rank(&DMatrix::zeros(3, 3)), 0);
    }

    #[test]
    fn tall_rank_matches_svd() {
        let mut m = DMatrix::from_fn(40, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
        assert_eq!(rank(&m), 3);
        let c = m.column(0) + 2.0 * m.column(1);
        m.set_column(2, &c);
        assert_eq!(rank(&m), 2);
    }

    #[test]
    fn truncated_lstsq_solves_full_rank() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let (y, k) = truncated_lstsq(&a, &(&a * &x), 1e-12);
        assert_eq!(k, 2);
        assert!((y - x).norm() < 1e-12);
    }
}
