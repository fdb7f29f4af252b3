use super::matrix::Matrix;
use crate::error::{DscError, Result};

/// Largest dimension accepted by [`sym_eig`].
pub const MAX_EIG_DIM: usize = 4096;

const MAX_SWEEPS: usize = 100;
const OFF_DIAG_RTOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigendecomposition of a real symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    /// Columns are unit eigenvectors matching `values`.
    pub vectors: Matrix,
    pub sweeps: usize,
}

impl SymEig {
    /// `Q·diag(values)·Qᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for (k, &lam) in self.values.iter().enumerate() {
                    s += self.vectors[(i, k)] * lam * self.vectors[(j, k)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps over every upper-triangular pair `(p, q)` and annihilates `a_pq`
/// with a plane rotation, accumulating the rotations into the eigenvector
/// matrix. Stops once the off-diagonal Frobenius norm drops below
/// `1e-12·‖m‖_F` or after 100 sweeps. Eigenvectors are sign-normalized so
/// their first non-negligible component is positive.
pub fn sym_eig(m: &Matrix) -> Result<SymEig> {
    if !m.is_square() {
        return Err(DscError::invalid(format!(
            "sym_eig needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    if n > MAX_EIG_DIM {
        return Err(DscError::invalid(format!("sym_eig dimension {n} exceeds {MAX_EIG_DIM}")));
    }
    if !m.all_finite() {
        return Err(DscError::invalid("sym_eig input has non-finite entries"));
    }
    let scale = m.as_slice().iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    if m.asymmetry() > SYMMETRY_TOL * scale {
        return Err(DscError::invalid("sym_eig input is not symmetric"));
    }
    if n == 0 {
        return Ok(SymEig { values: vec![], vectors: Matrix::zeros(0, 0), sweeps: 0 });
    }

    let mut a = m.clone();
    // Work on the exactly symmetric average.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let target = OFF_DIAG_RTOL * m.frobenius_norm();

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        if off_diag_norm(&a) <= target {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    // |theta| overflowed: the rotation angle is ~1/(2θ).
                    0.5 / theta
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));

    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        let sign = leading_sign(&v, old_col);
        for r in 0..n {
            vectors[(r, new_col)] = sign * v[(r, old_col)];
        }
    }
    Ok(SymEig { values, vectors, sweeps })
}

fn off_diag_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// `A ← JᵀAJ`, `V ← VJ` for the rotation in the `(p, q)` plane.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn leading_sign(v: &Matrix, col: usize) -> f64 {
    for r in 0..v.rows() {
        let x = v[(r, col)];
        if x.abs() > 1e-12 {
            return x.signum();
        }
    }
    1.0
}
