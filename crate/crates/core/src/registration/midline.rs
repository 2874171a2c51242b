//! Self-registration by a line and a point: per-column midpoints of the
//! sitting region, a least-squares midline, and the rigid map that lays the
//! midline horizontally through the image center with its endpoint at a
//! canonical anchor.

use super::rigid::{apply_rigid, Interpolation, Point, RigidTransform};
use crate::error::{LasrError, Result};
use crate::frames::Frame;

/// Midpoint of the support in one column (or one row, for tall supports).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Midpoint {
    /// Column (or row) index the midpoint belongs to.
    pub index: usize,
    /// Midpoint coordinate across the scan direction.
    pub midpt: f64,
    pub rowcount: usize,
    pub c1: usize,
    pub c2: usize,
    pub r_min: usize,
}

impl Midpoint {
    /// `(along, across)` coordinates of the midpoint; `along` is the pixel
    /// center of the scanned line.
    pub fn point(&self) -> (f64, f64) {
        (self.index as f64 + 0.5, self.midpt)
    }
}

/// `r_min + rowcount/2 + (c1 - c2)/2`.
pub fn midpoint_formula(r_min: usize, rowcount: usize, c1: usize, c2: usize) -> f64 {
    r_min as f64 + rowcount as f64 / 2.0 + (c1 as f64 - c2 as f64) / 2.0
}

/// Which image lines the midpoints are taken along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanAxis {
    /// One midpoint per column; midline is `row = a + b * col`.
    Columns,
    /// One midpoint per row; midline is `col = a + b * row`. Used when the
    /// support is taller than it is wide.
    Rows,
}

fn scan_midpoints(support: &[bool], rows: usize, cols: usize, axis: ScanAxis) -> Vec<Midpoint> {
    let (lines, len) = match axis {
        ScanAxis::Columns => (cols, rows),
        ScanAxis::Rows => (rows, cols),
    };
    let at = |line: usize, k: usize| match axis {
        ScanAxis::Columns => support[k * cols + line],
        ScanAxis::Rows => support[line * cols + k],
    };
    let mut out = Vec::new();
    for line in 0..lines {
        let hits: Vec<usize> = (0..len).filter(|&k| at(line, k)).collect();
        let (Some(&r_min), Some(&r_max)) = (hits.first(), hits.last()) else {
            continue;
        };
        // halves split at the middle of the supported extent; c1 counts the
        // half with larger indices, a pixel centered on the split counts in
        // neither
        let split = (r_min + r_max + 1) as f64 / 2.0;
        let c1 = hits.iter().filter(|&&k| k as f64 + 0.5 > split).count();
        let c2 = hits.iter().filter(|&&k| (k as f64 + 0.5) < split).count();
        out.push(Midpoint {
            index: line,
            midpt: midpoint_formula(r_min, hits.len(), c1, c2),
            rowcount: hits.len(),
            c1,
            c2,
            r_min,
        });
    }
    out
}

/// Column midpoints of the frame's support; empty columns are skipped.
pub fn column_midpoints(frame: &Frame) -> Result<Vec<Midpoint>> {
    let mids = scan_midpoints(&frame.support(), frame.rows(), frame.cols(), ScanAxis::Columns);
    if mids.len() < 2 {
        return Err(LasrError::Degenerate(format!(
            "support covers {} column(s); a midline needs two",
            mids.len()
        )));
    }
    Ok(mids)
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MidlineFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub n_used: usize,
}

impl MidlineFit {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn fit_midline(points: &[(f64, f64)]) -> Result<MidlineFit> {
    if points.len() < 2 {
        return Err(LasrError::Degenerate("midline needs at least two midpoints".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(LasrError::Degenerate(
            "all midpoints share one position; the midline would be vertical".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok(MidlineFit {
        points: points.to_vec(),
        slope,
        intercept: my - slope * mx,
        n_used: points.len(),
    })
}

/// Midline angle and endpoint of a frame's sitting region.
#[derive(Debug, Clone, PartialEq)]
pub struct SrlpPose {
    /// Midline angle in `(-pi/2, pi/2]`; `tan(theta)` is the column-scan slope.
    pub theta: f64,
    /// Endpoint `(u, v)`: the point of the fitted midline furthest along the
    /// midline direction that the support reaches.
    pub u: f64,
    pub v: f64,
    pub axis: ScanAxis,
    pub fit: MidlineFit,
}

impl SrlpPose {
    pub fn endpoint(&self) -> Point {
        Point::new(self.u, self.v)
    }

    /// Rigid map sending the midline to horizontal and the endpoint to
    /// `anchor`.
    pub fn to_canonical(&self, anchor: Point) -> RigidTransform {
        let rot = RigidTransform::new(-self.theta, 0.0, 0.0);
        let e = rot.apply(self.endpoint());
        RigidTransform::new(-self.theta, anchor.x - e.x, anchor.y - e.y)
    }

    /// Canonical anchor of a frame registered on its own: the endpoint keeps
    /// its column and moves to the middle row.
    pub fn self_anchor(&self, rows: usize) -> Point {
        Point::new(self.u, rows as f64 / 2.0)
    }
}

/// Estimate the midline pose of a segmented frame.
pub fn srlp_params(frame: &Frame) -> Result<SrlpPose> {
    let (rows, cols) = frame.dims();
    let support = frame.support();
    let cells: Vec<Point> = (0..rows * cols)
        .filter(|&i| support[i])
        .map(|i| Point::pixel_center(i / cols, i % cols))
        .collect();
    if cells.is_empty() {
        return Err(LasrError::Degenerate("frame has an empty support".into()));
    }
    let span = |f: fn(&Point) -> f64| {
        let (lo, hi) = cells
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        hi - lo
    };
    let axis = if span(|p| p.x) >= span(|p| p.y) {
        ScanAxis::Columns
    } else {
        ScanAxis::Rows
    };
    let mids = scan_midpoints(&support, rows, cols, axis);
    let points: Vec<(f64, f64)> = mids.iter().map(Midpoint::point).collect();
    let fit = fit_midline(&points)?;

    // direction of increasing `along`, mapped into (-pi/2, pi/2]
    let (theta, origin, dir) = match axis {
        ScanAxis::Columns => {
            let theta = fit.slope.atan();
            (theta, Point::new(0.0, fit.intercept), (theta.cos(), theta.sin()))
        }
        ScanAxis::Rows => {
            let mut theta = 1f64.atan2(fit.slope);
            let mut dir = (theta.cos(), theta.sin());
            if theta > std::f64::consts::FRAC_PI_2 {
                theta -= std::f64::consts::PI;
                dir = (-dir.0, -dir.1);
            }
            (theta, Point::new(fit.intercept, 0.0), dir)
        }
    };
    let reach = cells
        .iter()
        .map(|p| (p.x - origin.x) * dir.0 + (p.y - origin.y) * dir.1)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SrlpPose {
        theta,
        u: origin.x + reach * dir.0,
        v: origin.y + reach * dir.1,
        axis,
        fit,
    })
}

/// Register a frame to its own canonical pose.
pub fn srlp_register(frame: &Frame) -> Result<(Frame, RigidTransform)> {
    let pose = srlp_params(frame)?;
    let t = pose.to_canonical(pose.self_anchor(frame.rows()));
    Ok((apply_rigid(frame, &t, Interpolation::Bilinear), t))
}

/// Register a frame so its endpoint lands on a given anchor.
pub fn srlp_register_to(
    frame: &Frame,
    anchor: Point,
    interp: Interpolation,
) -> Result<(Frame, RigidTransform)> {
    let pose = srlp_params(frame)?;
    let t = pose.to_canonical(anchor);
    Ok((apply_rigid(frame, &t, interp), t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_frame(rows: usize, cols: usize, on: impl Fn(usize, usize) -> bool) -> Frame {
        let vals = (0..rows * cols)
            .map(|i| if on(i / cols, i % cols) { 10.0 } else { 0.0 })
            .collect();
        Frame::new(rows, cols, vals).unwrap()
    }

    #[test]
    fn worked_midpoint_example() {
        assert_eq!(midpoint_formula(14, 10, 7, 3), 21.0);
    }

    #[test]
    fn centered_contiguous_column_hits_image_center() {
        let f = mask_frame(38, 41, |r, c| (14..24).contains(&r) && c % 3 == 0);
        let mids = column_midpoints(&f).unwrap();
        assert!(mids.iter().all(|m| m.midpt == 19.0 && m.c1 == m.c2));
        let odd = mask_frame(9, 4, |r, c| (2..5).contains(&r) && c < 2);
        assert!(column_midpoints(&odd).unwrap().iter().all(|m| m.midpt == 3.5));
        // empty columns are omitted
        assert_eq!(mids.len(), (0..41).filter(|c| c % 3 == 0).count());
    }

    #[test]
    fn too_few_columns_is_an_error() {
        let f = mask_frame(5, 5, |_, c| c == 2);
        assert!(column_midpoints(&f).is_err());
    }

    #[test]
    fn midline_fits() {
        let flat = fit_midline(&[(1.0, 4.0), (2.0, 4.0), (7.0, 4.0)]).unwrap();
        assert_eq!((flat.slope, flat.intercept), (0.0, 4.0));
        let line: Vec<_> = (0..6).map(|x| (x as f64, 2.0 * x as f64 + 1.0)).collect();
        let fit = fit_midline(&line).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12);
        assert!(fit_midline(&[(3.0, 1.0), (3.0, 2.0)]).is_err());
    }

    #[test]
    fn midline_matches_normal_equations() {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.7 + (i % 3) as f64;
                (x, (i * i % 11) as f64 - 0.3 * x)
            })
            .collect();
        let fit = fit_midline(&pts).unwrap();
        // [n sx; sx sxx] [a; b] = [sy; sxy]
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        let a = (sxx * sy - sx * sxy) / det;
        let b = (n * sxy - sx * sy) / det;
        assert!((fit.slope - b).abs() < 1e-9 && (fit.intercept - a).abs() < 1e-9);
        let resid: Vec<f64> = pts.iter().map(|p| p.1 - fit.at(p.0)).collect();
        assert!(resid.iter().sum::<f64>().abs() < 1e-9);
        assert!(pts.iter().zip(&resid).map(|(p, r)| p.0 * r).sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn horizontal_band_at_center_is_identity_pose() {
        let f = mask_frame(20, 30, |r, c| (6..14).contains(&r) && (3..25).contains(&c));
        let pose = srlp_params(&f).unwrap();
        assert_eq!(pose.theta, 0.0);
        assert_eq!(pose.endpoint(), Point::new(24.5, 10.0));
        let t = pose.to_canonical(pose.self_anchor(20));
        assert!(t.is_identity(), "{t:?}");
        let (g, _) = srlp_register(&f).unwrap();
        assert_eq!(g.values(), f.values());
    }

    #[test]
    fn unit_slope_gives_quarter_turn() {
        let f = mask_frame(40, 40, |r, c| r == c && (5..35).contains(&c));
        let pose = srlp_params(&f).unwrap();
        assert!((pose.fit.slope - 1.0).abs() < 1e-12, "{}", pose.fit.slope);
        assert!((pose.theta - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn tall_support_scans_rows() {
        let f = mask_frame(40, 20, |r, c| (5..35).contains(&r) && (8..12).contains(&c));
        let pose = srlp_params(&f).unwrap();
        assert_eq!(pose.axis, ScanAxis::Rows);
        assert!((pose.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((pose.u - 10.0).abs() < 1e-12 && (pose.v - 34.5).abs() < 1e-12);
    }
}
