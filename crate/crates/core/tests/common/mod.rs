//! Reference implementations written without the library's code paths,
//! plus fixture generators shared by the integration targets.
#![allow(dead_code)]

use estsel::data::Dataset;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// Energy distance between the weighted points `group` (weights summing to
/// the group size) and the unweighted pooled sample, by explicit loops.
pub fn energy_group_pooled(points: &[Vec<f64>], group: &[usize], w: &[f64]) -> f64 {
    let n = points.len() as f64;
    let m = group.len() as f64;
    let mut cross = 0.0;
    for (a, &i) in group.iter().enumerate() {
        for p in points {
            cross += w[a] * euclid(&points[i], p);
        }
    }
    let mut pooled = 0.0;
    for p in points {
        for q in points {
            pooled += euclid(p, q);
        }
    }
    let mut within = 0.0;
    for (a, &i) in group.iter().enumerate() {
        for (b, &j) in group.iter().enumerate() {
            within += w[a] * w[b] * euclid(&points[i], &points[j]);
        }
    }
    2.0 * cross / (m * n) - pooled / (n * n) - within / (m * m)
}

/// Two-sample weighted energy distance between arms, by explicit loops.
pub fn energy_two_sample(points: &[Vec<f64>], z: &[u8], w: &[f64]) -> f64 {
    let n1 = z.iter().filter(|&&t| t == 1).count() as f64;
    let n0 = z.len() as f64 - n1;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..points.len() {
        for j in 0..points.len() {
            let d = euclid(&points[i], &points[j]);
            match (z[i], z[j]) {
                (1, 0) => xy += w[i] * w[j] * d / (n1 * n0),
                (1, 1) => xx += w[i] * w[j] * d / (n1 * n1),
                (0, 0) => yy += w[i] * w[j] * d / (n0 * n0),
                _ => {}
            }
        }
    }
    2.0 * xy - xx - yy
}

/// Logistic maximum likelihood by plain Newton-Raphson with Gauss-Jordan
/// elimination; `x` rows include the intercept column.
pub fn newton_logistic(x: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let q = x[0].len();
    let mut beta = vec![0.0; q];
    for _ in 0..100 {
        let mut g = vec![0.0; q];
        let mut h = vec![vec![0.0; q]; q];
        for (xi, &zi) in x.iter().zip(z) {
            let eta: f64 = xi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            for a in 0..q {
                g[a] += (zi - p) * xi[a];
                for b in 0..q {
                    h[a][b] += p * (1.0 - p) * xi[a] * xi[b];
                }
            }
        }
        let step = solve(h, g);
        let size: f64 = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if size < 1e-13 {
            break;
        }
    }
    beta
}

pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// Ordinary kriging prediction in semivariogram form:
/// `[G 1; 1' 0] [lambda; mu] = [g0; 1]`.
pub fn kriging_oracle(points: &[(f64, f64)], z: &[f64], gamma: impl Fn(f64) -> f64, x: (f64, f64)) -> f64 {
    let n = points.len();
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    let mut rhs = vec![0.0; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = gamma(d(points[i], points[j]));
        }
        a[i][n] = 1.0;
        a[n][i] = 1.0;
        rhs[i] = gamma(d(points[i], x));
    }
    rhs[n] = 1.0;
    let lambda = solve(a, rhs);
    lambda[..n].iter().zip(z).map(|(l, v)| l * v).sum()
}

/// Random confounded dataset with `p` covariates; scores in (0.05, 0.95).
pub fn fixture(seed: u64, n: usize, p: usize) -> (Dataset, Vec<f64>) {
    let mut r = rng(seed);
    loop {
        let x = DMatrix::from_fn(n, p, |_, _| r.random::<f64>() * 2.0 - 1.0);
        let scores: Vec<f64> = (0..n)
            .map(|i| 0.05 + 0.9 / (1.0 + (-(1.5 * x[(i, 0)] - 0.5 * x[(i, p - 1)])).exp()))
            .collect();
        let z: Vec<u8> = scores.iter().map(|&e| u8::from(r.random::<f64>() < e)).collect();
        let treated = z.iter().filter(|&&t| t == 1).count();
        if treated < 2 || treated + 2 > n {
            continue;
        }
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + 2.0 * f64::from(z[i]) + r.random::<f64>()).collect();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        return (Dataset::new(x, z, y, names).unwrap(), scores);
    }
}
