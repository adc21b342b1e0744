//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `m x d` design whose first column is 1 and the rest standard normal.
pub fn design(m: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((m, d), |(_, j)| if j == 0 { 1.0 } else { rng.sample(StandardNormal) })
}

pub fn normal_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn row_dot(x: &Array2<f64>, i: usize, b: &[f64]) -> f64 {
    x.row(i).iter().zip(b).map(|(a, c)| a * c).sum()
}

pub fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Weighted least squares `argmin sum_i w_i (y_i - x_i'a)^2` via normal equations.
pub fn wls(x: &Array2<f64>, y: &[f64], w: &[f64]) -> Vec<f64> {
    let d = x.ncols();
    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for i in 0..x.nrows() {
        for j in 0..d {
            b[j] += w[i] * x[[i, j]] * y[i];
            for k in 0..d {
                a[j][k] += w[i] * x[[i, j]] * x[[i, k]];
            }
        }
    }
    solve(a, b)
}

/// Central finite-difference gradient with step `h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, b: &[f64], h: f64) -> Vec<f64> {
    (0..b.len())
        .map(|j| {
            let mut p = b.to_vec();
            let mut q = b.to_vec();
            p[j] += h;
            q[j] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
        .collect()
}

/// Best objective of `f(b) + lambda ||b||_1` over a run of subgradient descent
/// with diminishing steps `c / sqrt(k + 1)`.
pub fn subgradient_oracle(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    d: usize,
    lambda: f64,
    iters: usize,
    c: f64,
) -> f64 {
    let mut b = vec![0.0; d];
    let obj = |b: &[f64]| f(b) + lambda * l1(b);
    let mut best = obj(&b);
    for k in 0..iters {
        let g = grad(&b);
        let sub: Vec<f64> = g
            .iter()
            .zip(&b)
            .map(|(gj, bj)| {
                if *bj != 0.0 {
                    gj + lambda * bj.signum()
                } else {
                    // Minimum-norm element of the subdifferential.
                    let s = gj.abs() - lambda;
                    if s > 0.0 {
                        gj - lambda * gj.signum()
                    } else {
                        0.0
                    }
                }
            })
            .collect();
        let norm = sub.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let step = c / ((k + 1) as f64).sqrt() / norm;
        for j in 0..d {
            b[j] -= step * sub[j];
        }
        best = best.min(obj(&b));
    }
    best
}
