use super::{ensure_finite_matrix, ensure_square, symmetrize, Matrix, Vector};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues, sorted descending.
    pub values: Vector,
    /// Unit eigenvectors stored as columns, in the same order as `values`.
    /// Each column is sign-normalised so its largest-magnitude entry is
    /// positive.
    pub vectors: Matrix,
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrised before rotating; asymmetry larger than `1e-9`
/// (relative to the largest entry) is rejected.
pub fn eig_sym(m: &Matrix) -> Result<SymEigen> {
    ensure_square(m, "eig_sym")?;
    ensure_finite_matrix(m, "eig_sym")?;
    let n = m.nrows();
    let scale = m.abs().max().max(1.0);
    if super::asymmetry(m) > SYMMETRY_TOL * scale {
        return Err(Error::Validation(
            "eig_sym input is not symmetric".to_string(),
        ));
    }

    let mut a = m.clone();
    symmetrize(&mut a);
    let mut v = Matrix::identity(n, n);

    let frob2: f64 = a.iter().map(|x| x * x).sum();
    for _ in 0..MAX_SWEEPS {
        let off2: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off2 <= f64::EPSILON * f64::EPSILON * frob2 || off2 == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep their diagonal order
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));

    let values = Vector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, x)| {
                if x.abs() > best.1 + 1e-12 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymEigen { values, vectors })
}

/// One Jacobi rotation zeroing `a[(p, q)]`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.nrows();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r != p && r != q {
            let arp = a[(r, p)];
            let arq = a[(r, q)];
            let new_rp = c * arp - s * arq;
            let new_rq = s * arp + c * arq;
            a[(r, p)] = new_rp;
            a[(p, r)] = new_rp;
            a[(r, q)] = new_rq;
            a[(q, r)] = new_rq;
        }
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let e = eig_sym(&m).unwrap();
        assert_eq!(e.values.as_slice(), &[2.0, 1.0]);
        assert_eq!(e.vectors, Matrix::identity(2, 2));
    }

    #[test]
    fn identity_three() {
        let e = eig_sym(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_by_two_coupled() {
        // characteristic polynomial λ² − 4λ + 3 = (λ − 3)(λ − 1)
        let m = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = eig_sym(&m).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vectors.column(0);
        let v1 = e.vectors.column(1);
        assert!((v0[0].abs() - h).abs() < 1e-12 && (v0[1] - v0[0]).abs() < 1e-12);
        assert!((v1[0].abs() - h).abs() < 1e-12 && (v1[1] + v1[0]).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(eig_sym(&rect), Err(Error::Dimension { .. })));
        let mut nan = Matrix::identity(2, 2);
        nan[(0, 1)] = f64::NAN;
        assert!(matches!(eig_sym(&nan), Err(Error::NonFinite(_))));
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(eig_sym(&asym), Err(Error::Validation(_))));
    }
}
