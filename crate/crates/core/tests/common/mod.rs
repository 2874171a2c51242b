//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use lasr::ssm::{FdrMode, Kernel};
use nalgebra::{DMatrix, DVector};

/// Dense hat matrix over `obs` pixels, each local fit using the domain
/// pixels `domain` whose values are copies of `source[domain]`.
pub fn dense_hat(
    cols: usize,
    obs: &[usize],
    domain: &[(usize, usize)],
    h: f64,
    kernel: Kernel,
) -> DMatrix<f64> {
    let n = obs.len();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for (k, &p) in obs.iter().enumerate() {
        let (r, c) = ((p / cols) as f64, (p % cols) as f64);
        let rows: Vec<(f64, [f64; 6], usize)> = domain
            .iter()
            .filter_map(|&(d, src)| {
                let dx = (d % cols) as f64 - c;
                let dy = (d / cols) as f64 - r;
                let w = kernel.weight((dx * dx + dy * dy).sqrt() / h);
                (w > 0.0).then(|| {
                    // unscaled offsets: a different but equivalent basis
                    (w, [1.0, dx, dy, dx * dx, dy * dy, dx * dy], src)
                })
            })
            .collect();
        let x = DMatrix::from_fn(rows.len(), 6, |i, j| rows[i].1[j]);
        let w = DMatrix::from_diagonal(&DVector::from_iterator(rows.len(), rows.iter().map(|r| r.0)));
        let xtw = x.transpose() * &w;
        let inv = (&xtw * &x).try_inverse().expect("full-rank design");
        let e1 = (inv * xtw).row(0).clone_owned();
        for (i, row) in rows.iter().enumerate() {
            let j = obs.iter().position(|&o| o == row.2).unwrap();
            l[(k, j)] += e1[i];
        }
    }
    l
}

pub fn moments(l: &DMatrix<f64>) -> (f64, f64) {
    let n = l.nrows();
    let b = DMatrix::<f64>::identity(n, n) - l;
    let lam = b.transpose() * &b;
    (lam.trace(), (&lam * &lam).trace())
}

/// O(m^2) step-up: scan every k directly.
pub fn brute_step_up(p: &[f64], q: f64, mode: FdrMode) -> Vec<bool> {
    let m = p.len();
    let c: f64 = match mode {
        FdrMode::Bh => 1.0,
        FdrMode::By => (1..=m).map(|i| 1.0 / i as f64).sum(),
    };
    // largest k such that at least k p-values lie at or below k q / (m c)
    let mut best_k = 0;
    for k in 1..=m {
        let thr = k as f64 * q / (m as f64 * c);
        let below = p.iter().filter(|x| **x <= thr).count();
        if below >= k {
            best_k = k;
        }
    }
    if best_k == 0 {
        return vec![false; m];
    }
    let thr = best_k as f64 * q / (m as f64 * c);
    p.iter().map(|x| *x <= thr).collect()
}

