//! Rigid transforms on continuous pixel coordinates and frame resampling.
//!
//! Coordinates are `(x, y) = (column, row)` with pixel `(r, c)` covering the
//! unit square `[c, c+1) x [r, r+1)`; its center is `(c + 0.5, r + 0.5)`.

use std::f64::consts::PI;

use crate::error::{LasrError, Result};
use crate::frames::Frame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Center of pixel `(row, col)`.
    pub fn pixel_center(row: usize, col: usize) -> Self {
        Point::new(col as f64 + 0.5, row as f64 + 0.5)
    }

    pub fn dist2(self, other: Point) -> f64 {
        (self.x - other.x).powi(2) + (self.y - other.y).powi(2)
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// `p -> Rot(theta) p + (u, v)`, i.e. the homogeneous matrix
/// `[[cos, -sin, u], [sin, cos, v], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub theta: f64,
    pub u: f64,
    pub v: f64,
}

impl RigidTransform {
    pub fn new(theta: f64, u: f64, v: f64) -> Self {
        RigidTransform {
            theta: wrap_angle(theta),
            u,
            v,
        }
    }

    pub fn identity() -> Self {
        RigidTransform::new(0.0, 0.0, 0.0)
    }

    pub fn translation(u: f64, v: f64) -> Self {
        RigidTransform::new(0.0, u, v)
    }

    /// Rotation by `theta` about `center`.
    pub fn rotation_about(center: Point, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        RigidTransform::new(
            theta,
            center.x - (c * center.x - s * center.y),
            center.y - (s * center.x + c * center.y),
        )
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.theta.sin_cos();
        [[c, -s, self.u], [s, c, self.v], [0.0, 0.0, 1.0]]
    }

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        Point::new(c * p.x - s * p.y + self.u, s * p.x + c * p.y + self.v)
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.theta.sin_cos();
        // Rot(-t) (p - w) = Rot(-t) p - Rot(-t) w
        RigidTransform::new(
            -self.theta,
            -(c * self.u + s * self.v),
            -(-s * self.u + c * self.v),
        )
    }

    /// `self` after `first`: `p -> self(first(p))`.
    pub fn compose(&self, first: &RigidTransform) -> Self {
        let t = self.apply(Point::new(first.u, first.v));
        RigidTransform::new(self.theta + first.theta, t.x, t.y)
    }

    pub fn is_identity(&self) -> bool {
        self.theta == 0.0 && self.u == 0.0 && self.v == 0.0
    }
}

/// Resampling kernel for [`apply_rigid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Resample `frame` so that output pixel `a'` takes the input value at
/// `t^-1(a')`.
///
/// Points falling outside the input grid give 0 and leave the support. For a
/// masked frame the interpolation only blends supported neighbors, and an
/// output pixel is supported when at least half of its bilinear weight comes
/// from supported input pixels.
pub fn apply_rigid(frame: &Frame, t: &RigidTransform, interp: Interpolation) -> Frame {
    let (rows, cols) = frame.dims();
    let inv = t.inverse();
    let src_mask = frame.mask();
    let mut values = vec![0.0; rows * cols];
    let mut mask = vec![false; rows * cols];
    let mut any_outside = false;

    for r in 0..rows {
        for c in 0..cols {
            let s = inv.apply(Point::pixel_center(r, c));
            let i = r * cols + c;
            if !(s.x >= 0.0 && s.x < cols as f64 && s.y >= 0.0 && s.y < rows as f64) {
                any_outside = true;
                continue;
            }
            match interp {
                Interpolation::Nearest => {
                    let j = (s.y.floor() as usize) * cols + s.x.floor() as usize;
                    let supported = src_mask.map_or(true, |m| m[j]);
                    if supported {
                        values[i] = frame.values()[j];
                        mask[i] = true;
                    }
                }
                Interpolation::Bilinear => {
                    let fx = s.x - 0.5;
                    let fy = s.y - 0.5;
                    let x0 = fx.floor();
                    let y0 = fy.floor();
                    let ax = fx - x0;
                    let ay = fy - y0;
                    let clamp_c = |x: f64| x.clamp(0.0, (cols - 1) as f64) as usize;
                    let clamp_r = |y: f64| y.clamp(0.0, (rows - 1) as f64) as usize;
                    let (c0, c1) = (clamp_c(x0), clamp_c(x0 + 1.0));
                    let (r0, r1) = (clamp_r(y0), clamp_r(y0 + 1.0));
                    let taps = [
                        (r0 * cols + c0, (1.0 - ax) * (1.0 - ay)),
                        (r0 * cols + c1, ax * (1.0 - ay)),
                        (r1 * cols + c0, (1.0 - ax) * ay),
                        (r1 * cols + c1, ax * ay),
                    ];
                    match src_mask {
                        None => {
                            values[i] = taps.iter().map(|(j, w)| w * frame.values()[*j]).sum();
                            mask[i] = true;
                        }
                        Some(m) => {
                            let wsum: f64 =
                                taps.iter().filter(|(j, _)| m[*j]).map(|(_, w)| w).sum();
                            if wsum >= 0.5 {
                                let acc: f64 = taps
                                    .iter()
                                    .filter(|(j, _)| m[*j])
                                    .map(|(j, w)| w * frame.values()[*j])
                                    .sum();
                                values[i] = acc / wsum;
                                mask[i] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    let keep_mask = src_mask.is_some() || any_outside;
    Frame::from_parts(rows, cols, values, keep_mask.then_some(mask))
}

/// Mean squared displacement `|t(a) - b|^2` over correspondences.
pub fn registration_error(t: &RigidTransform, pairs: &[(Point, Point)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(LasrError::invalid("registration error needs correspondences"));
    }
    let total: f64 = pairs.iter().map(|(a, b)| t.apply(*a).dist2(*b)).sum();
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Point, b: Point, tol: f64) -> bool {
        a.dist2(b).sqrt() <= tol
    }

    #[test]
    fn matrix_matches_apply() {
        let t = RigidTransform::new(0.7, 3.0, -2.0);
        let m = t.matrix();
        let p = Point::new(1.5, -4.0);
        let q = t.apply(p);
        assert!((m[0][0] * p.x + m[0][1] * p.y + m[0][2] - q.x).abs() < 1e-12);
        assert!((m[1][0] * p.x + m[1][1] * p.y + m[1][2] - q.y).abs() < 1e-12);
        assert_eq!(m[2], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn inverse_and_compose() {
        let t = RigidTransform::new(2.1, 5.0, 7.5);
        let p = Point::new(3.0, 9.0);
        assert!(close(t.inverse().apply(t.apply(p)), p, 1e-12));
        let s = RigidTransform::rotation_about(Point::new(4.0, 4.0), -0.3);
        assert!(close(s.compose(&t).apply(p), s.apply(t.apply(p)), 1e-12));
        assert!(close(s.apply(Point::new(4.0, 4.0)), Point::new(4.0, 4.0), 1e-12));
    }

    #[test]
    fn angles_wrap_into_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_resampling_is_exact() {
        let f = Frame::new(3, 4, (0..12).map(|v| v as f64).collect()).unwrap();
        let g = apply_rigid(&f, &RigidTransform::identity(), Interpolation::Bilinear);
        assert_eq!(g, f);
    }

    #[test]
    fn integer_translation_moves_pixel_exactly() {
        let mut vals = vec![0.0; 8 * 8];
        vals[2 * 8 + 3] = 9.0;
        let f = Frame::new(8, 8, vals).unwrap();
        // (u, v) = (2, 1): column +2, row +1
        for interp in [Interpolation::Bilinear, Interpolation::Nearest] {
            let g = apply_rigid(&f, &RigidTransform::translation(2.0, 1.0), interp);
            let moved = RigidTransform::translation(2.0, 1.0).apply(Point::pixel_center(2, 3));
            let (r, c) = (moved.y.floor() as usize, moved.x.floor() as usize);
            assert_eq!((r, c), (3, 5));
            assert_eq!(g.get(r, c), 9.0);
            assert_eq!(g.values().iter().filter(|v| **v != 0.0).count(), 1);
        }
    }

    #[test]
    fn outside_domain_leaves_support() {
        let f = Frame::new(2, 2, vec![1.0; 4]).unwrap();
        let g = apply_rigid(&f, &RigidTransform::translation(1.0, 0.0), Interpolation::Bilinear);
        assert_eq!(g.mask().unwrap(), &[false, true, false, true]);
        assert_eq!(g.values(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn registration_error_cases() {
        let t = RigidTransform::new(0.4, 1.0, 2.0);
        let a = [Point::new(0.0, 0.0), Point::new(3.0, 1.0), Point::new(-2.0, 5.0)];
        let exact: Vec<_> = a.iter().map(|p| (*p, t.apply(*p))).collect();
        assert!(registration_error(&t, &exact).unwrap() < 1e-24);
        let off: Vec<_> = exact
            .iter()
            .map(|(p, q)| (*p, Point::new(q.x + 3.0, q.y - 4.0)))
            .collect();
        assert!((registration_error(&t, &off).unwrap() - 25.0).abs() < 1e-9);
        assert!(registration_error(&t, &[]).is_err());
        let mut shuffled = off.clone();
        shuffled.reverse();
        let (x, y) = (
            registration_error(&t, &shuffled).unwrap(),
            registration_error(&t, &off).unwrap(),
        );
        assert!((x - y).abs() < 1e-12);
    }
}
