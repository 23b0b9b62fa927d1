//! Oracles shared by the integration tests. Nothing here calls into the
//! code paths it is used to check.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbtrain::analysis::{dominates, ParetoPoint};
use sbtrain::{Matrix, Network};

/// Straight-line forward pass: nested loops, ReLU on hidden layers.
pub fn oracle_logits(net: &Network, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let depth = net.depth();
    for l in 0..depth {
        let w = &net.weights()[l];
        let b = &net.biases()[l];
        let mut z = vec![0.0; w.rows()];
        for o in 0..w.rows() {
            let mut s = 0.0;
            for i in 0..w.cols() {
                s += w.get(o, i) * a[i];
            }
            z[o] = s + b[o];
        }
        if l + 1 < depth {
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        a = z;
    }
    a
}

/// Mean cross-entropy computed from the oracle forward with a plain log-sum-exp.
pub fn oracle_mean_loss(net: &Network, xs: &Matrix, ys: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &y) in ys.iter().enumerate() {
        let z = oracle_logits(net, xs.row(r));
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / ys.len() as f64
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Nonzero biases, so no ReLU pre-activation sits exactly on the kink
/// (zero-initialized biases put dead-unit outputs at exactly 0 downstream).
pub fn jitter_biases(net: &mut Network, seed: u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for b in net.biases_mut() {
        for v in b.iter_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
    }
}

/// Central finite differences of the oracle loss for every parameter, in
/// layer order (weights row-major, then biases).
pub fn finite_difference_grad(net: &Network, xs: &Matrix, ys: &[usize], h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut probe = net.clone();
    for l in 0..net.depth() {
        let n_w = net.weights()[l].as_slice().len();
        for k in 0..n_w {
            let orig = probe.weights()[l].as_slice()[k];
            probe.weights_mut()[l].as_mut_slice()[k] = orig + h;
            let up = oracle_mean_loss(&probe, xs, ys);
            probe.weights_mut()[l].as_mut_slice()[k] = orig - h;
            let down = oracle_mean_loss(&probe, xs, ys);
            probe.weights_mut()[l].as_mut_slice()[k] = orig;
            out.push((up - down) / (2.0 * h));
        }
        for k in 0..net.biases()[l].len() {
            let orig = probe.biases()[l][k];
            probe.biases_mut()[l][k] = orig + h;
            let up = oracle_mean_loss(&probe, xs, ys);
            probe.biases_mut()[l][k] = orig - h;
            let down = oracle_mean_loss(&probe, xs, ys);
            probe.biases_mut()[l][k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// O(n^2) frontier: every point no other point dominates, then duplicates
/// collapsed to the smallest config id, sorted by time then error.
pub fn brute_force_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut keep: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .cloned()
        .collect();
    keep.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            .then(a.error.partial_cmp(&b.error).unwrap())
            .then(a.config.cmp(&b.config))
    });
    keep.dedup_by(|later, earlier| later.time == earlier.time && later.error == earlier.error);
    keep
}
