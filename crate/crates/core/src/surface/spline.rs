//! Tensor-product natural cubic splines and bilinear interpolation on a
//! rectangular lattice. Both are linear in the data, so each axis reduces to
//! a `fine x coarse` evaluation matrix.

use nalgebra::DMatrix;

/// Row `f` holds the weights of the coarse values at `fine[f]`.
pub(crate) fn natural_cubic_matrix(knots: &[f64], fine: &[f64]) -> DMatrix<f64> {
    let n = knots.len();
    let mut out = DMatrix::zeros(fine.len(), n);
    // Interpolate each unit vector; the spline of e_j gives column j.
    for j in 0..n {
        let mut y = vec![0.0; n];
        y[j] = 1.0;
        let m = second_derivatives(knots, &y);
        for (f, &x) in fine.iter().enumerate() {
            out[(f, j)] = eval_cubic(knots, &y, &m, x);
        }
    }
    out
}

/// Second derivatives of the natural cubic spline through `(x, y)`.
fn second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for i in 1..n - 1 {
        let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        diag[i - 1] = 2.0 * (h0 + h1);
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for i in 1..k {
        let lower = x[i + 1] - x[i];
        let f = lower / diag[i - 1];
        diag[i] -= f * upper[i - 1];
        rhs[i] -= f * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }
    m
}

fn eval_cubic(x: &[f64], y: &[f64], m: &[f64], t: f64) -> f64 {
    let i = segment(x, t);
    let h = x[i + 1] - x[i];
    let a = (x[i + 1] - t) / h;
    let b = (t - x[i]) / h;
    a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
}

fn segment(x: &[f64], t: f64) -> usize {
    let n = x.len();
    x.partition_point(|&v| v <= t).saturating_sub(1).min(n - 2)
}

pub(crate) fn linear_matrix(knots: &[f64], fine: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(fine.len(), knots.len());
    for (f, &t) in fine.iter().enumerate() {
        let i = segment(knots, t);
        let b = ((t - knots[i]) / (knots[i + 1] - knots[i])).clamp(0.0, 1.0);
        out[(f, i)] += 1.0 - b;
        out[(f, i + 1)] += b;
    }
    out
}

/// `S_c Y S_d'` for coarse values `y` (c-major, `nc x nd`).
pub(crate) fn tensor_apply(sc: &DMatrix<f64>, sd: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let (nc, nd) = (sc.ncols(), sd.ncols());
    let coarse = DMatrix::from_row_slice(nc, nd, y);
    let fine = sc * coarse * sd.transpose();
    let (fc, fd) = fine.shape();
    let mut out = Vec::with_capacity(fc * fd);
    for i in 0..fc {
        for j in 0..fd {
            out.push(fine[(i, j)]);
        }
    }
    out
}
