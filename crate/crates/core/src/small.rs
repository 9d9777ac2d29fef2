//! Fixed-size vector and matrix helpers for dimensions 1 to 3.
//!
//! Norm evaluation sits in the innermost solver loops, so everything here
//! works on stack arrays and takes the active dimension `n` explicitly.

pub const MAX_DIM: usize = 3;

pub type Vector = [f64; MAX_DIM];
pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

pub const ZERO_V: Vector = [0.0; MAX_DIM];
pub const ZERO_M: Matrix = [[0.0; MAX_DIM]; MAX_DIM];

pub fn identity(n: usize) -> Matrix {
    let mut m = ZERO_M;
    for (i, row) in m.iter_mut().enumerate().take(n) {
        row[i] = 1.0;
    }
    m
}

pub fn from_slice(n: usize, xs: &[f64]) -> Vector {
    let mut v = ZERO_V;
    v[..n].copy_from_slice(&xs[..n]);
    v
}

/// Row-major slice of length n*n into a matrix.
pub fn mat_from_row_major(n: usize, xs: &[f64]) -> Matrix {
    let mut m = ZERO_M;
    for i in 0..n {
        for j in 0..n {
            m[i][j] = xs[i * n + j];
        }
    }
    m
}

pub fn mat_to_row_major(n: usize, m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n);
    for row in m.iter().take(n) {
        out.extend_from_slice(&row[..n]);
    }
    out
}

#[inline]
pub fn dot(n: usize, a: &Vector, b: &Vector) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm2(n: usize, a: &Vector) -> f64 {
    dot(n, a, a).sqrt()
}

#[inline]
pub fn max_abs(n: usize, a: &Vector) -> f64 {
    a[..n].iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

#[inline]
pub fn scale(n: usize, c: f64, a: &Vector) -> Vector {
    let mut v = ZERO_V;
    for i in 0..n {
        v[i] = c * a[i];
    }
    v
}

#[inline]
pub fn axpy(n: usize, c: f64, x: &Vector, y: &Vector) -> Vector {
    let mut v = ZERO_V;
    for i in 0..n {
        v[i] = c * x[i] + y[i];
    }
    v
}

#[inline]
pub fn matvec(n: usize, m: &Matrix, x: &Vector) -> Vector {
    let mut v = ZERO_V;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += m[i][j] * x[j];
        }
        v[i] = s;
    }
    v
}

/// mᵀ x
#[inline]
pub fn matvec_t(n: usize, m: &Matrix, x: &Vector) -> Vector {
    let mut v = ZERO_V;
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += m[i][j] * x[i];
        }
        v[j] = s;
    }
    v
}

pub fn scale_mat(n: usize, c: f64, m: &Matrix) -> Matrix {
    let mut out = ZERO_M;
    for i in 0..n {
        for j in 0..n {
            out[i][j] = c * m[i][j];
        }
    }
    out
}

pub fn transpose(n: usize, m: &Matrix) -> Matrix {
    let mut t = ZERO_M;
    for i in 0..n {
        for j in 0..n {
            t[j][i] = m[i][j];
        }
    }
    t
}

pub fn matmul(n: usize, a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = ZERO_M;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

/// aᵀ g a
pub fn congruence(n: usize, a: &Matrix, g: &Matrix) -> Matrix {
    matmul(n, &transpose(n, a), &matmul(n, g, a))
}

#[inline]
pub fn quad_form(n: usize, m: &Matrix, x: &Vector) -> f64 {
    dot(n, x, &matvec(n, m, x))
}

pub fn det(n: usize, m: &Matrix) -> f64 {
    match n {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
    }
}

/// Inverse by cofactors; `None` when the matrix is numerically singular.
pub fn inverse(n: usize, m: &Matrix) -> Option<Matrix> {
    let d = det(n, m);
    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(0.0_f64, |s, (i, j)| s.max(m[i][j].abs()));
    if !d.is_finite() || d.abs() <= 1e-14 * scale.powi(n as i32) || scale == 0.0 {
        return None;
    }
    let mut inv = ZERO_M;
    match n {
        1 => inv[0][0] = 1.0 / d,
        2 => {
            inv[0][0] = m[1][1] / d;
            inv[0][1] = -m[0][1] / d;
            inv[1][0] = -m[1][0] / d;
            inv[1][1] = m[0][0] / d;
        }
        _ => {
            for i in 0..3 {
                for j in 0..3 {
                    let (r0, r1) = match j {
                        0 => (1, 2),
                        1 => (0, 2),
                        _ => (0, 1),
                    };
                    let (c0, c1) = match i {
                        0 => (1, 2),
                        1 => (0, 2),
                        _ => (0, 1),
                    };
                    let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    inv[i][j] = sign * minor / d;
                }
            }
        }
    }
    Some(inv)
}

pub fn symmetrize(n: usize, m: &mut Matrix) {
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = a;
            m[j][i] = a;
        }
    }
}

/// Solve `m x = b` for a symmetric positive-definite `m` (Cholesky).
pub fn spd_solve(n: usize, m: &Matrix, b: &Vector) -> Option<Vector> {
    let l = cholesky(n, m)?;
    let mut y = ZERO_V;
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = ZERO_V;
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

pub fn cholesky(n: usize, m: &Matrix) -> Option<Matrix> {
    let mut l = ZERO_M;
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(n: usize, m: &Matrix) -> (f64, f64) {
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let eig = nalgebra::SymmetricEigen::new(dm);
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip_3x3() {
        let m = [[2.0, 0.3, -0.1], [0.1, 1.5, 0.4], [-0.2, 0.2, 3.0]];
        let inv = inverse(3, &m).unwrap();
        let p = matmul(3, &m, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p[i][j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_is_rejected() {
        let m = [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(inverse(2, &m).is_none());
    }

    #[test]
    fn spd_solve_matches_inverse() {
        let m = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let b = [1.0, -2.0, 0.5];
        let x = spd_solve(3, &m, &b).unwrap();
        let y = matvec(3, &inverse(3, &m).unwrap(), &b);
        for i in 0..3 {
            assert!((x[i] - y[i]).abs() < 1e-14);
        }
    }
}
