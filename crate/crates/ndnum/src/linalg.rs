use crate::array::DenseArray;
use crate::error::{NumError, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &DenseArray) -> Result<DenseArray> {
    let (n, m) = a.require_2d("cholesky")?;
    if n != m {
        return Err(NumError::Contract(format!("cholesky needs a square matrix, got {n}x{m}")));
    }
    let mut l = DenseArray::zeros(&[n, n]);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k).powi(2);
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(NumError::NotPositiveDefinite);
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
/// The result is symmetrized exactly.
pub fn spd_inverse(a: &DenseArray) -> Result<DenseArray> {
    let l = cholesky(a)?;
    let n = l.rows();
    let mut inv = DenseArray::zeros(&[n, n]);
    let mut col = vec![0.0; n];
    for e in 0..n {
        // Solve L y = e_e, then Lᵀ x = y.
        for i in 0..n {
            let mut s = if i == e { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l.get(i, k) * col[k];
            }
            col[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l.get(k, i) * col[k];
            }
            col[i] = s / l.get(i, i);
        }
        for i in 0..n {
            inv.set(i, e, col[i]);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (inv.get(i, j) + inv.get(j, i));
            inv.set(i, j, m);
            inv.set(j, i, m);
        }
    }
    Ok(inv)
}
