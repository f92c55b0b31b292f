//! Small dense solvers shared by the population and sample computations.
//!
//! Matrices are row-major slices of length `dim * dim`. Every solve goes
//! through a 1-norm condition estimate so that near-singular moment matrices
//! are reported instead of producing garbage coefficients.

use nalgebra::DMatrix;

/// Condition-number guard for every normal-equation solve.
pub const COND_LIMIT: f64 = 1e12;

/// Relative residual tolerance accepted after a solve.
pub const TOL_LIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveFailure {
    /// Factorization broke down or the condition estimate exceeded [`COND_LIMIT`].
    Singular { condition: f64 },
    /// The computed solution does not satisfy the system to [`TOL_LIN`].
    Residual { relative: f64 },
}

impl SolveFailure {
    pub fn condition(&self) -> f64 {
        match self {
            SolveFailure::Singular { condition } => *condition,
            SolveFailure::Residual { .. } => f64::INFINITY,
        }
    }
}

enum Factor {
    Cholesky(Vec<f64>),
    Lu { lu: Vec<f64>, perm: Vec<usize> },
}

impl Factor {
    fn symmetric(a: &[f64], dim: usize) -> Option<Factor> {
        cholesky(a, dim)
            .map(Factor::Cholesky)
            .or_else(|| lu(a, dim).map(|(lu, perm)| Factor::Lu { lu, perm }))
    }

    fn general(a: &[f64], dim: usize) -> Option<Factor> {
        lu(a, dim).map(|(lu, perm)| Factor::Lu { lu, perm })
    }

    fn solve_into(&self, dim: usize, b: &[f64], x: &mut [f64]) {
        match self {
            Factor::Cholesky(l) => {
                for i in 0..dim {
                    let mut s = b[i];
                    for k in 0..i {
                        s -= l[i * dim + k] * x[k];
                    }
                    x[i] = s / l[i * dim + i];
                }
                for i in (0..dim).rev() {
                    let mut s = x[i];
                    for k in i + 1..dim {
                        s -= l[k * dim + i] * x[k];
                    }
                    x[i] = s / l[i * dim + i];
                }
            }
            Factor::Lu { lu, perm } => {
                for i in 0..dim {
                    let mut s = b[perm[i]];
                    for k in 0..i {
                        s -= lu[i * dim + k] * x[k];
                    }
                    x[i] = s;
                }
                for i in (0..dim).rev() {
                    let mut s = x[i];
                    for k in i + 1..dim {
                        s -= lu[i * dim + k] * x[k];
                    }
                    x[i] = s / lu[i * dim + i];
                }
            }
        }
    }

    /// Explicit inverse, row-major.
    fn inverse(&self, dim: usize) -> Vec<f64> {
        let mut inv = vec![0.0; dim * dim];
        let mut e = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        for c in 0..dim {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            self.solve_into(dim, &e, &mut col);
            for r in 0..dim {
                inv[r * dim + c] = col[r];
            }
        }
        inv
    }
}

fn cholesky(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for j in 0..dim {
        let mut d = a[j * dim + j];
        for k in 0..j {
            d -= l[j * dim + k] * l[j * dim + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j * dim + j] = djj;
        for i in j + 1..dim {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            l[i * dim + j] = s / djj;
        }
    }
    Some(l)
}

fn lu(a: &[f64], dim: usize) -> Option<(Vec<f64>, Vec<usize>)> {
    let mut m = a.to_vec();
    let mut perm: Vec<usize> = (0..dim).collect();
    for col in 0..dim {
        let (pivot, max) = (col..dim)
            .map(|r| (r, m[r * dim + col].abs()))
            .fold((col, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if !(max > 0.0) || !max.is_finite() {
            return None;
        }
        if pivot != col {
            for c in 0..dim {
                m.swap(pivot * dim + c, col * dim + c);
            }
            perm.swap(pivot, col);
        }
        let p = m[col * dim + col];
        for r in col + 1..dim {
            let f = m[r * dim + col] / p;
            m[r * dim + col] = f;
            for c in col + 1..dim {
                m[r * dim + c] -= f * m[col * dim + c];
            }
        }
    }
    Some((m, perm))
}

fn norm_one(a: &[f64], dim: usize) -> f64 {
    (0..dim)
        .map(|c| (0..dim).map(|r| a[r * dim + c].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_residual(a: &[f64], dim: usize, b: &[f64], x: &[f64]) -> Result<(), SolveFailure> {
    let x_inf = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let b_inf = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let a_inf = (0..dim)
        .map(|r| a[r * dim..(r + 1) * dim].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut worst = 0.0_f64;
    for r in 0..dim {
        let ax: f64 = (0..dim).map(|c| a[r * dim + c] * x[c]).sum();
        worst = worst.max((ax - b[r]).abs());
    }
    let scale = a_inf * x_inf + b_inf;
    let relative = if scale > 0.0 { worst / scale } else { worst };
    if relative <= TOL_LIN {
        Ok(())
    } else {
        Err(SolveFailure::Residual { relative })
    }
}

fn guarded(a: &[f64], dim: usize, factor: Option<Factor>) -> Result<(Factor, Vec<f64>), SolveFailure> {
    let factor = factor.ok_or(SolveFailure::Singular {
        condition: f64::INFINITY,
    })?;
    let inv = factor.inverse(dim);
    let condition = norm_one(a, dim) * norm_one(&inv, dim);
    if !condition.is_finite() || condition > COND_LIMIT {
        return Err(SolveFailure::Singular { condition });
    }
    Ok((factor, inv))
}

/// Solves a symmetric (ideally positive-definite) system `a x = b`.
pub fn solve_symmetric(a: &[f64], dim: usize, b: &[f64]) -> Result<Vec<f64>, SolveFailure> {
    debug_assert_eq!(a.len(), dim * dim);
    let (factor, _) = guarded(a, dim, Factor::symmetric(a, dim))?;
    let mut x = vec![0.0; dim];
    factor.solve_into(dim, b, &mut x);
    check_residual(a, dim, b, &x)?;
    Ok(x)
}

/// Solves a general square system with partial pivoting.
pub fn solve_general(a: &[f64], dim: usize, b: &[f64]) -> Result<Vec<f64>, SolveFailure> {
    let (factor, _) = guarded(a, dim, Factor::general(a, dim))?;
    let mut x = vec![0.0; dim];
    factor.solve_into(dim, b, &mut x);
    check_residual(a, dim, b, &x)?;
    Ok(x)
}

/// Inverse of a symmetric matrix under the same guard as [`solve_symmetric`].
pub fn inverse_symmetric(a: &[f64], dim: usize) -> Result<Vec<f64>, SolveFailure> {
    guarded(a, dim, Factor::symmetric(a, dim)).map(|(_, inv)| inv)
}

/// 1-norm condition estimate, `+inf` when the matrix cannot be factored.
pub fn condition_symmetric(a: &[f64], dim: usize) -> f64 {
    match Factor::symmetric(a, dim) {
        Some(f) => norm_one(a, dim) * norm_one(&f.inverse(dim), dim),
        None => f64::INFINITY,
    }
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(data: &[f64], dim: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(dim, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let x = solve_symmetric(&a, 2, &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_symmetric_falls_back_to_lu() {
        let a = [0.0, 1.0, 1.0, 0.0];
        let x = solve_symmetric(&a, 2, &[2.0, 3.0]).unwrap();
        assert_eq!(x, vec![3.0, 2.0]);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(matches!(
            solve_symmetric(&a, 2, &[1.0, 1.0]),
            Err(SolveFailure::Singular { .. })
        ));
        let near = [1.0, 1.0, 1.0, 1.0 + 1e-14];
        assert!(solve_symmetric(&near, 2, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = [2.0, 0.5, 0.1, 0.5, 1.5, 0.2, 0.1, 0.2, 1.0];
        let inv = inverse_symmetric(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-13);
            }
        }
    }
}
