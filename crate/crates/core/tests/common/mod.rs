#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense SVD by one-sided Jacobi rotations, written independently of the
/// library. Returns singular values (descending) and the matching right
/// singular vectors, each of length `cols`.
pub fn jacobi_svd(a: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    if rows < cols {
        // Right vectors of A are left vectors of Aᵀ: recover them as Aᵀu / σ.
        let mut at = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                at[j * rows + i] = a[i * cols + j];
            }
        }
        let (s, u) = jacobi_svd(&at, cols, rows);
        let vs = u
            .iter()
            .zip(&s)
            .map(|(ui, &si)| {
                let mut v = vec![0.0; cols];
                for j in 0..cols {
                    for i in 0..rows {
                        v[j] += a[i * cols + j] * ui[i];
                    }
                }
                if si > 0.0 {
                    v.iter_mut().for_each(|x| *x /= si);
                }
                v
            })
            .collect();
        return (s, vs);
    }
    // Work on columns of A (column-major copy) and accumulate V.
    let mut u: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| a[i * cols + j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols).map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = u[p].iter().map(|x| x * x).sum();
                let beta: f64 = u[q].iter().map(|x| x * x).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (u[p][i], u[q][i]);
                    u[p][i] = c * x - s * y;
                    u[q][i] = s * x + c * y;
                }
                for i in 0..cols {
                    let (x, y) = (v[p][i], v[q][i]);
                    v[p][i] = c * x - s * y;
                    v[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> =
        u.iter().zip(v).map(|(col, vec)| (col.iter().map(|x| x * x).sum::<f64>().sqrt(), vec)).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.into_iter().unzip()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the test data independent of the library's sampler.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `d` orthonormal vectors of length `n` by Gram-Schmidt on Gaussian draws.
fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut x: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = x.iter().zip(b).map(|(p, q)| p * q).sum();
                x.iter_mut().zip(b).for_each(|(p, q)| *p -= dot * q);
            }
        }
        let norm = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(x.into_iter().map(|p| p / norm).collect());
        }
    }
    basis
}

/// Row-major `rows × cols` matrix `U·diag(s)·Vᵀ` with `s_i = ratio^i`.
pub fn decaying_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, ratio: f64) -> Vec<f64> {
    let d = rows.min(cols);
    let u = random_orthonormal(rng, rows, d);
    let v = random_orthonormal(rng, cols, d);
    let mut a = vec![0.0; rows * cols];
    let mut s = 1.0;
    for t in 0..d {
        for i in 0..rows {
            for j in 0..cols {
                a[i * cols + j] += s * u[t][i] * v[t][j];
            }
        }
        s *= ratio;
    }
    a
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols).map(|_| gaussian(rng)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
