//! Bivariate local quadratic smoothing with an explicit, data-independent hat
//! operator.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{LasrError, Result};
use crate::frames::Frame;

/// Spherically symmetric weight function of `d = distance / h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    /// `exp(-d^2 / 2)` for `d <= 3`, zero beyond.
    #[default]
    TruncatedGaussian,
    /// `(1 - d^3)^3` for `d < 1`.
    Tricube,
}

impl Kernel {
    pub fn weight(self, d: f64) -> f64 {
        match self {
            Kernel::TruncatedGaussian if d <= 3.0 => (-0.5 * d * d).exp(),
            Kernel::Tricube if d < 1.0 => (1.0 - d * d * d).powi(3),
            _ => 0.0,
        }
    }

    /// Support radius in bandwidth units.
    pub fn reach(self) -> f64 {
        match self {
            Kernel::TruncatedGaussian => 3.0,
            Kernel::Tricube => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::TruncatedGaussian => "gaussian",
            Kernel::Tricube => "tricube",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" | "truncated-gaussian" => Some(Kernel::TruncatedGaussian),
            "tricube" => Some(Kernel::Tricube),
            _ => None,
        }
    }
}

/// How the residual traces are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMethod {
    /// Exact up to [`EXACT_TRACE_LIMIT`] observations, randomized beyond.
    #[default]
    Auto,
    Exact,
    /// Rademacher probes for the second moment; the first is always exact.
    Randomized { probes: usize, seed: u64 },
}

pub const EXACT_TRACE_LIMIT: usize = 20_000;
const DEFAULT_PROBES: usize = 64;

/// `after - before`; the mask is the intersection of the inputs' masks.
pub fn difference_map(after: &Frame, before: &Frame) -> Result<Frame> {
    if after.dims() != before.dims() {
        return Err(LasrError::invalid(format!(
            "cannot subtract {:?} frame from {:?} frame",
            before.dims(),
            after.dims()
        )));
    }
    let values = after
        .values()
        .iter()
        .zip(before.values())
        .map(|(a, b)| a - b)
        .collect();
    let mask = match (after.mask(), before.mask()) {
        (None, None) => None,
        (Some(m), None) | (None, Some(m)) => Some(m.to_vec()),
        (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| *x && *y).collect()),
    };
    Ok(Frame::from_parts(after.rows(), after.cols(), values, mask))
}

/// For every pixel, the supported pixel whose value it carries after rim
/// padding: itself inside the region, the nearest region pixel within
/// Chebyshev distance `rim` outside it (Euclidean nearest, ties to the
/// smallest row then column), `None` beyond.
pub fn rim_sources(region: &[bool], rows: usize, cols: usize, rim: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if region[i] {
                out[i] = Some(i);
                continue;
            }
            let mut best: Option<(usize, usize)> = None;
            for rr in r.saturating_sub(rim)..=(r + rim).min(rows - 1) {
                for cc in c.saturating_sub(rim)..=(c + rim).min(cols - 1) {
                    let j = rr * cols + cc;
                    if !region[j] {
                        continue;
                    }
                    let d2 = rr.abs_diff(r).pow(2) + cc.abs_diff(c).pow(2);
                    // row-major scan keeps the first of equal distances
                    if best.map_or(true, |(bd, _)| d2 < bd) {
                        best = Some((d2, j));
                    }
                }
            }
            out[i] = best.map(|(_, j)| j);
        }
    }
    out
}

fn region_of(frame: &Frame) -> Vec<bool> {
    frame
        .mask()
        .map_or_else(|| vec![true; frame.len()], <[bool]>::to_vec)
}

/// Copy edge values of the support outward into a rim of `rim` pixels.
pub fn pad_rim(diff: &Frame, rim: usize) -> Result<Frame> {
    let region = region_of(diff);
    if !region.iter().any(|m| *m) {
        return Err(LasrError::invalid("cannot pad an empty support"));
    }
    let src = rim_sources(&region, diff.rows(), diff.cols(), rim);
    let mut values = diff.values().to_vec();
    let mut mask = region.clone();
    for (i, s) in src.iter().enumerate() {
        if let (false, Some(j)) = (region[i], s) {
            values[i] = diff.values()[*j];
            mask[i] = true;
        }
    }
    Ok(Frame::from_parts(diff.rows(), diff.cols(), values, Some(mask)))
}

/// Linear map from observations to fitted values: row `k` gives the fit at
/// observation `targets[k]` as `sum_j w_j y_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HatOperator {
    n_obs: usize,
    targets: Vec<usize>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl HatOperator {
    /// Operator from explicit sparse rows (`targets[k]` is the observation
    /// fitted by row `k`).
    pub fn from_rows(n_obs: usize, targets: Vec<usize>, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if targets.len() != rows.len() {
            return Err(LasrError::invalid("one target per hat row required"));
        }
        if targets.iter().any(|t| *t >= n_obs)
            || rows.iter().flatten().any(|(j, w)| *j >= n_obs || !w.is_finite())
        {
            return Err(LasrError::invalid("hat row refers to a missing observation"));
        }
        let rows = rows
            .into_iter()
            .map(|mut row| {
                row.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
                for (j, w) in row {
                    match merged.last_mut() {
                        Some(last) if last.0 == j => last.1 += w,
                        _ => merged.push((j, w)),
                    }
                }
                merged
            })
            .collect();
        Ok(HatOperator { n_obs, targets, rows })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn row(&self, k: usize) -> &[(usize, f64)] {
        &self.rows[k]
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(j, w)| w * y[*j]).sum())
            .collect()
    }

    pub fn row_norm(&self, k: usize) -> f64 {
        self.rows[k].iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    /// Normalized inner product of two hat rows.
    pub fn row_correlation(&self, a: usize, b: usize) -> f64 {
        let (ra, rb) = (&self.rows[a], &self.rows[b]);
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < ra.len() && j < rb.len() {
            match ra[i].0.cmp(&rb[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += ra[i].1 * rb[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        dot / (self.row_norm(a) * self.row_norm(b))
    }

    /// Rows of the residual operator `S - L` (`S` selects the targets).
    fn residual_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.rows
            .iter()
            .zip(&self.targets)
            .map(|(row, &t)| {
                let mut out: Vec<(usize, f64)> = row.iter().map(|(j, w)| (*j, -w)).collect();
                match out.binary_search_by_key(&t, |e| e.0) {
                    Ok(k) => out[k].1 += 1.0,
                    Err(k) => out.insert(k, (t, 1.0)),
                }
                out
            })
            .collect()
    }

    /// `(delta1, delta2) = (tr(Lambda), tr(Lambda^2))` with
    /// `Lambda = (S - L)^T (S - L)`.
    pub fn residual_moments(&self, method: TraceMethod) -> (f64, f64) {
        let b = self.residual_rows();
        let d1: f64 = b.iter().flatten().map(|(_, w)| w * w).sum();
        let method = match method {
            TraceMethod::Auto if self.n_obs <= EXACT_TRACE_LIMIT => TraceMethod::Exact,
            TraceMethod::Auto => TraceMethod::Randomized {
                probes: DEFAULT_PROBES,
                seed: 0,
            },
            m => m,
        };
        let d2 = match method {
            TraceMethod::Randomized { probes, seed } => randomized_second_moment(&b, self.n_obs, probes, seed),
            _ => exact_second_moment(&b, self.n_obs),
        };
        (d1, d2)
    }
}

/// `||B B^T||_F^2` through a column index of `B`.
fn exact_second_moment(b: &[Vec<(usize, f64)>], n_obs: usize) -> f64 {
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_obs];
    for (k, row) in b.iter().enumerate() {
        for (j, w) in row {
            cols[*j].push((k, *w));
        }
    }
    let per_row: Vec<f64> = (0..b.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; b.len()], Vec::new()),
            |(acc, touched), k| {
                for (j, w) in &b[k] {
                    for (k2, w2) in &cols[*j] {
                        if acc[*k2] == 0.0 {
                            touched.push(*k2);
                        }
                        acc[*k2] += w * w2;
                    }
                }
                let mut s = 0.0;
                touched.sort_unstable();
                touched.dedup();
                for &k2 in touched.iter() {
                    s += acc[k2] * acc[k2];
                    acc[k2] = 0.0;
                }
                touched.clear();
                s
            },
        )
        .collect();
    per_row.iter().sum()
}

/// Mean of `||B^T B z||^2` over Rademacher probes `z`.
fn randomized_second_moment(b: &[Vec<(usize, f64)>], n_obs: usize, probes: usize, seed: u64) -> f64 {
    let probes = probes.max(1);
    let estimates: Vec<f64> = (0..probes)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let z: Vec<f64> = (0..n_obs)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let bz: Vec<f64> = b
                .iter()
                .map(|row| row.iter().map(|(j, w)| w * z[*j]).sum())
                .collect();
            let mut lz = vec![0.0; n_obs];
            for (row, v) in b.iter().zip(&bz) {
                for (j, w) in row {
                    lz[*j] += w * v;
                }
            }
            lz.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    estimates.iter().sum::<f64>() / probes as f64
}

/// Solve `m x = rhs` by Gaussian elimination with partial pivoting; `None`
/// when a pivot is negligible relative to the matrix scale.
fn solve6(mut m: [[f64; 6]; 6], mut rhs: [f64; 6]) -> Option<[f64; 6]> {
    let scale = (0..6).map(|i| m[i][i].abs()).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    for col in 0..6 {
        let piv = (col..6).max_by(|a, b| m[*a][col].abs().total_cmp(&m[*b][col].abs()))?;
        if m[piv][col].abs() <= 1e-10 * scale {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..6 {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..6 {
                    m[r][c] -= f * m[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = [0.0; 6];
    for r in (0..6).rev() {
        let s: f64 = (r + 1..6).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    Some(x)
}

/// Local quadratic design row in bandwidth-scaled offsets.
fn design(u: f64, v: f64) -> [f64; 6] {
    [1.0, u, v, 0.5 * u * u, 0.5 * v * v, u * v]
}

/// Local quadratic hat operator on a pixel region.
///
/// Observations are the region pixels in row-major order. Rim pixels (within
/// Chebyshev distance `rim` of the region) enter every local fit as copies of
/// their nearest region pixel, so their weight folds onto that observation.
#[derive(Debug, Clone)]
pub struct LocalQuadratic {
    pub rows: usize,
    pub cols: usize,
    pub h: f64,
    pub kernel: Kernel,
    pub rim: usize,
    /// Pixel index of each observation.
    pub obs_pixels: Vec<usize>,
    /// Region pixels whose local design is rank deficient; they get no fit.
    pub deficient: Vec<usize>,
    pub hat: HatOperator,
}

impl LocalQuadratic {
    pub fn build(region: &[bool], rows: usize, cols: usize, h: f64, kernel: Kernel, rim: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(LasrError::Config(format!("bandwidth {h} must be positive")));
        }
        if region.len() != rows * cols {
            return Err(LasrError::invalid("region does not match the grid"));
        }
        let obs_pixels: Vec<usize> = (0..rows * cols).filter(|&i| region[i]).collect();
        if obs_pixels.is_empty() {
            return Err(LasrError::invalid("analysis region is empty"));
        }
        let mut obs_of = vec![usize::MAX; rows * cols];
        for (k, &p) in obs_pixels.iter().enumerate() {
            obs_of[p] = k;
        }
        let sources = rim_sources(region, rows, cols, rim);
        let reach = kernel.reach() * h;
        let win = reach.floor() as usize;

        let fits: Vec<Option<Vec<(usize, f64)>>> = obs_pixels
            .par_iter()
            .map(|&p| {
                let (r, c) = (p / cols, p % cols);
                let mut pts = Vec::new();
                let mut m = [[0.0; 6]; 6];
                for rr in r.saturating_sub(win)..=(r + win).min(rows - 1) {
                    for cc in c.saturating_sub(win)..=(c + win).min(cols - 1) {
                        let Some(src) = sources[rr * cols + cc] else { continue };
                        let dx = cc as f64 - c as f64;
                        let dy = rr as f64 - r as f64;
                        let w = kernel.weight((dx * dx + dy * dy).sqrt() / h);
                        if w <= 0.0 {
                            continue;
                        }
                        let x = design(dx / h, dy / h);
                        for a in 0..6 {
                            for b in a..6 {
                                m[a][b] += w * x[a] * x[b];
                            }
                        }
                        pts.push((obs_of[src], w, x));
                    }
                }
                for a in 0..6 {
                    for b in 0..a {
                        m[a][b] = m[b][a];
                    }
                }
                if pts.len() < 6 {
                    return None;
                }
                let z = solve6(m, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0])?;
                let mut row: Vec<(usize, f64)> = pts
                    .iter()
                    .map(|(j, w, x)| (*j, w * x.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()))
                    .collect();
                row.sort_by_key(|e| e.0);
                // fold rim copies onto their source observation
                let mut folded: Vec<(usize, f64)> = Vec::with_capacity(row.len());
                for (j, w) in row {
                    match folded.last_mut() {
                        Some(last) if last.0 == j => last.1 += w,
                        _ => folded.push((j, w)),
                    }
                }
                Some(folded)
            })
            .collect();

        let n_obs = obs_pixels.len();
        let mut targets = Vec::new();
        let mut rows_out = Vec::new();
        let mut deficient = Vec::new();
        for (k, fit) in fits.into_iter().enumerate() {
            match fit {
                Some(row) => {
                    targets.push(k);
                    rows_out.push(row);
                }
                None => deficient.push(obs_pixels[k]),
            }
        }
        Ok(LocalQuadratic {
            rows,
            cols,
            h,
            kernel,
            rim,
            obs_pixels,
            deficient,
            hat: HatOperator {
                n_obs,
                targets,
                rows: rows_out,
            },
        })
    }

    /// Pixel index fitted by hat row `k`.
    pub fn target_pixel(&self, k: usize) -> usize {
        self.obs_pixels[self.hat.targets[k]]
    }
}

/// Result of smoothing one map.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub rows: usize,
    pub cols: usize,
    /// Smoothed estimate per pixel; NaN where no fit exists.
    pub m_hat: Vec<f64>,
    /// Norm of the hat row per pixel; NaN where no fit exists.
    pub hat_norm: Vec<f64>,
    pub rss: f64,
    pub sigma_hat: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub bandwidth: f64,
    pub kernel: Kernel,
    /// Pixels carrying a fit.
    pub mask: Vec<bool>,
    pub deficient: Vec<usize>,
    pub operator: Arc<LocalQuadratic>,
}

impl SmoothFit {
    pub fn df(&self) -> f64 {
        self.delta1 * self.delta1 / self.delta2
    }
}

/// Fit a precomputed operator to the observations of `diff`.
pub fn smooth_with(op: Arc<LocalQuadratic>, diff: &Frame, method: TraceMethod) -> Result<SmoothFit> {
    if diff.dims() != (op.rows, op.cols) {
        return Err(LasrError::invalid("map does not match the smoothing grid"));
    }
    let y: Vec<f64> = op.obs_pixels.iter().map(|&p| diff.values()[p]).collect();
    let fitted = op.hat.apply(&y);
    let n = op.rows * op.cols;
    let mut m_hat = vec![f64::NAN; n];
    let mut hat_norm = vec![f64::NAN; n];
    let mut mask = vec![false; n];
    let mut rss = 0.0;
    for (k, f) in fitted.iter().enumerate() {
        let p = op.target_pixel(k);
        m_hat[p] = *f;
        hat_norm[p] = op.hat.row_norm(k);
        mask[p] = true;
        rss += (y[op.hat.targets[k]] - f).powi(2);
    }
    let (delta1, delta2) = op.hat.residual_moments(method);
    let sigma_hat = if delta1 > 0.0 { (rss / delta1).sqrt() } else { 0.0 };
    Ok(SmoothFit {
        rows: op.rows,
        cols: op.cols,
        m_hat,
        hat_norm,
        rss,
        sigma_hat,
        delta1,
        delta2,
        bandwidth: op.h,
        kernel: op.kernel,
        mask,
        deficient: op.deficient.clone(),
        operator: op,
    })
}

/// Smooth a map over its support (all pixels when unmasked) without padding.
pub fn local_quadratic_smooth(diff: &Frame, h: f64, kernel: Kernel) -> Result<SmoothFit> {
    smooth_padded(diff, h, kernel, 0, TraceMethod::Auto)
}

/// Smooth a map over its support with edge values replicated into a rim.
pub fn smooth_padded(diff: &Frame, h: f64, kernel: Kernel, rim: usize, method: TraceMethod) -> Result<SmoothFit> {
    let region = region_of(diff);
    let op = LocalQuadratic::build(&region, diff.rows(), diff.cols(), h, kernel, rim)?;
    smooth_with(Arc::new(op), diff, method)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shapes() {
        let g = Kernel::TruncatedGaussian;
        assert_eq!(g.weight(0.0), 1.0);
        assert!((g.weight(3.0) - (-4.5f64).exp()).abs() < 1e-15);
        assert_eq!(g.weight(3.0001), 0.0);
        assert_eq!(Kernel::Tricube.weight(1.0), 0.0);
        assert!((Kernel::Tricube.weight(0.5) - (0.875f64).powi(3)).abs() < 1e-15);
    }

    #[test]
    fn difference_cases() {
        let a = Frame::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = difference_map(&a, &a).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
        let b = Frame::new(2, 2, a.values().iter().map(|v| v + 5.0).collect()).unwrap();
        assert_eq!(difference_map(&b, &a).unwrap().values(), &[5.0; 4]);
        let am = a.clone().with_mask(vec![true, true, false, true]).unwrap();
        let bm = b.clone().with_mask(vec![true, false, true, true]).unwrap();
        assert_eq!(
            difference_map(&bm, &am).unwrap().mask().unwrap(),
            &[true, false, false, true]
        );
        assert!(difference_map(&a, &Frame::zeros(2, 3)).is_err());
    }

    #[test]
    fn rim_padding() {
        let mut v = vec![0.0; 25];
        v[12] = 7.0;
        let f = Frame::signed(5, 5, v).unwrap().with_mask((0..25).map(|i| i == 12).collect()).unwrap();
        assert_eq!(pad_rim(&f, 0).unwrap(), f);
        let p = pad_rim(&f, 1).unwrap();
        for r in 0..5usize {
            for c in 0..5usize {
                let near = r.abs_diff(2) <= 1 && c.abs_diff(2) <= 1;
                assert_eq!(p.get(r, c), if near { 7.0 } else { 0.0 });
                assert_eq!(p.mask().unwrap()[r * 5 + c], near);
            }
        }
    }

    #[test]
    fn rim_ties_prefer_smaller_row_then_column() {
        // pixel (1, 1) is equidistant from (0, 1) and (1, 0) and (2, 1)
        let mut region = vec![false; 9];
        region[1] = true;
        region[3] = true;
        region[7] = true;
        let src = rim_sources(&region, 3, 3, 1);
        assert_eq!(src[4], Some(1));
        let region2: Vec<bool> = (0..9).map(|i| i == 3 || i == 5).collect();
        assert_eq!(rim_sources(&region2, 3, 3, 1)[4], Some(3));
    }

    #[test]
    fn solver_flags_singular_designs() {
        let mut m = [[0.0; 6]; 6];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0 + i as f64;
        }
        let x = solve6(m, [1.0; 6]).unwrap();
        assert!((x[5] - 1.0 / 6.0).abs() < 1e-15);
        m[5][5] = 0.0;
        assert!(solve6(m, [1.0; 6]).is_none());
    }

    #[test]
    fn thin_region_is_reported_deficient() {
        // a single row cannot identify curvature across rows
        let region: Vec<bool> = (0..50).map(|i| i / 10 == 2).collect();
        let lq = LocalQuadratic::build(&region, 5, 10, 2.0, Kernel::TruncatedGaussian, 0).unwrap();
        assert_eq!(lq.deficient.len(), 10);
        assert_eq!(lq.hat.n_rows(), 0);
    }
}
