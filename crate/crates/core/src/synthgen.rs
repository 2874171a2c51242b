//! Synthetic seat-pressure phantoms with known effect region, pose and lag.
//!
//! The canonical blob is an ellipse with a flat plateau and two Gaussian
//! peaks placed symmetrically across its horizontal midline. Geometry-level
//! randomness (per-cycle stimulation amplitudes) and pixel noise use separate
//! ChaCha streams of the same seed, so changing noise levels never moves the
//! geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{LasrError, Result};
use crate::frames::{Frame, Movie, Segment, SegmentTag, SessionLayout};
use crate::registration::{Point, RigidTransform};

/// Canonical blob geometry. Positions are fractions of the grid (`x` of
/// `cols`, `y` of `rows`) so one spec renders at any resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub center: (f64, f64),
    pub radii: (f64, f64),
    /// Plateau intensity inside the ellipse.
    pub base: f64,
    /// Height of each peak above the plateau.
    pub peak: f64,
    /// Peak centers at `center + (dx * rx, +-dy * ry)`.
    pub peak_offset: (f64, f64),
    /// Peak standard deviation as a fraction of the `y` radius.
    pub peak_width: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            center: (0.5, 0.5),
            radii: (0.4, 0.34),
            base: 40.0,
            peak: 20.0,
            peak_offset: (-0.25, 0.45),
            peak_width: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Sensor baseline off the blob, before clipping at zero.
    pub background_level: f64,
    pub background_sd: f64,
    pub signal_sd: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            background_level: 10.0,
            background_sd: 3.0,
            signal_sd: 2.0,
        }
    }
}

/// Alternating left/right stimulation.
///
/// During the first half of each cycle the left peak rises by a factor
/// `1 + a_k` and the right one falls by `1 - a_k`; the second half swaps them.
/// `a_k = amplitude * (1 + jitter * u_k)` with `u_k` uniform on `[-1, 1]`
/// drawn per cycle from the geometry stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StimSpec {
    pub period: usize,
    pub amplitude: f64,
    /// Frames by which the stimulation pattern is delayed.
    pub lag: i64,
    pub jitter: f64,
}

impl Default for StimSpec {
    fn default() -> Self {
        StimSpec {
            period: 20,
            amplitude: 0.3,
            lag: 0,
            jitter: 0.3,
        }
    }
}

/// Additive change inside a rectangle of the output grid (clipped to the
/// blob), present only in the "after" session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectSpec {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    pub blob: BlobSpec,
    pub noise: NoiseSpec,
    /// Pose of the blob in pixel coordinates of the output grid.
    pub pose: RigidTransform,
    pub stim: Option<StimSpec>,
    pub effect: Option<EffectSpec>,
    pub n_frames: usize,
    pub fps: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            rows: 38,
            cols: 41,
            blob: BlobSpec::default(),
            noise: NoiseSpec::default(),
            pose: RigidTransform::identity(),
            stim: None,
            effect: None,
            n_frames: 40,
            fps: 2.0,
            seed: 0,
        }
    }
}

/// Which session of a before/after pair is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionRole {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Pixels changed in the "after" session (all false without an effect).
    pub effect_mask: Vec<bool>,
    pub true_pose: RigidTransform,
    pub true_lag: i64,
}

const GEOMETRY_STREAM: u64 = 0;
const MISALIGNED_STREAM: u64 = 64;

fn session_stream(role: SessionRole, segment: usize) -> u64 {
    let base = match role {
        SessionRole::Before => 1,
        SessionRole::After => 17,
    };
    base + segment as u64
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LasrError::Config(msg));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("grid {}x{} is empty", self.rows, self.cols));
        }
        if !(self.blob.radii.0 > 0.0 && self.blob.radii.1 > 0.0) {
            return bad("blob radii must be positive".into());
        }
        if !(self.blob.peak_width > 0.0) {
            return bad("peak width must be positive".into());
        }
        if !(self.blob.base >= 0.0 && self.blob.peak >= 0.0) {
            return bad("blob intensities must be nonnegative".into());
        }
        if !(self.noise.background_level >= 0.0 && self.noise.background_sd >= 0.0 && self.noise.signal_sd >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive".into());
        }
        if let Some(s) = &self.stim {
            if s.period < 2 {
                return bad("stimulation period must be at least 2 frames".into());
            }
            if !(0.0..1.0).contains(&s.amplitude) || !(0.0..=1.0).contains(&s.jitter) {
                return bad("stimulation amplitude must lie in [0, 1) and jitter in [0, 1]".into());
            }
        }
        if let Some(e) = &self.effect {
            if e.height == 0 || e.width == 0 {
                return bad("effect region is empty".into());
            }
            if e.row0 + e.height > self.rows || e.col0 + e.width > self.cols {
                return bad("effect region extends past the grid".into());
            }
        }
        Ok(())
    }

    /// Per-pixel pieces of the noise-free frame at `pose`: inside flag and
    /// the two peak bumps. Intensity is `base + peak * (g0 * left + g1 * right)`
    /// inside the ellipse and 0 outside.
    fn layers(&self, pose: &RigidTransform) -> Layers {
        let b = &self.blob;
        let (cx, cy) = (b.center.0 * self.cols as f64, b.center.1 * self.rows as f64);
        let (rx, ry) = (b.radii.0 * self.cols as f64, b.radii.1 * self.rows as f64);
        let px = cx + b.peak_offset.0 * rx;
        let py = b.peak_offset.1 * ry;
        let s2 = 2.0 * (b.peak_width * ry).powi(2);
        let inv = pose.inverse();
        let n = self.rows * self.cols;
        let mut out = Layers { inside: vec![false; n], left: vec![0.0; n], right: vec![0.0; n] };
        for i in 0..n {
            let p = inv.apply(Point::pixel_center(i / self.cols, i % self.cols));
            let (dx, dy) = ((p.x - cx) / rx, (p.y - cy) / ry);
            if dx * dx + dy * dy > 1.0 {
                continue;
            }
            let bump = |y0: f64| (-((p.x - px).powi(2) + (p.y - y0).powi(2)) / s2).exp();
            out.inside[i] = true;
            out.left[i] = bump(cy - py);
            out.right[i] = bump(cy + py);
        }
        out
    }

    fn compose(&self, layers: &Layers, gain: (f64, f64)) -> Vec<f64> {
        let b = &self.blob;
        (0..layers.inside.len())
            .map(|i| {
                if layers.inside[i] {
                    b.base + b.peak * (gain.0 * layers.left[i] + gain.1 * layers.right[i])
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn render(&self, pose: &RigidTransform, gain: (f64, f64)) -> Vec<f64> {
        self.compose(&self.layers(pose), gain)
    }

    /// Noise-free frame at the spec's pose without stimulation.
    pub fn clean_frame(&self) -> Frame {
        Frame::from_parts(self.rows, self.cols, self.render(&self.pose, (1.0, 1.0)), None)
    }

    /// Pixels inside the posed ellipse.
    pub fn blob_mask(&self) -> Vec<bool> {
        self.render(&self.pose, (1.0, 1.0)).iter().map(|v| *v > 0.0).collect()
    }

    /// Effect pixels: the effect rectangle clipped to the blob.
    pub fn effect_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.rows * self.cols];
        if let Some(e) = &self.effect {
            let blob = self.blob_mask();
            for r in e.row0..e.row0 + e.height {
                for c in e.col0..e.col0 + e.width {
                    let i = r * self.cols + c;
                    mask[i] = blob[i];
                }
            }
        }
        mask
    }

    fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            effect_mask: self.effect_mask(),
            true_pose: self.pose,
            true_lag: self.stim.map_or(0, |s| s.lag),
        }
    }

    /// Stimulation gains for frame `i`.
    fn stim_gain(&self, stim: &StimSpec, i: usize) -> (f64, f64) {
        let t = i as i64 - stim.lag;
        let p = stim.period as i64;
        let cycle = t.div_euclid(p);
        let first_half = t.rem_euclid(p) < p / 2;
        let a = stim.amplitude * (1.0 + stim.jitter * self.cycle_uniform(cycle));
        if first_half {
            (1.0 + a, 1.0 - a)
        } else {
            (1.0 - a, 1.0 + a)
        }
    }

    /// Uniform `[-1, 1]` draw for a stimulation cycle, random-access into the
    /// geometry stream.
    fn cycle_uniform(&self, cycle: i64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(GEOMETRY_STREAM);
        // two 32-bit words per draw, cycles centred on 2^40
        let slot = (cycle + (1i64 << 40)) as u128;
        rng.set_word_pos(slot * 2);
        rng.gen_range(-1.0..=1.0)
    }

    fn noisy(&self, clean: &[f64], rng: &mut ChaCha8Rng, extra: Option<&[f64]>) -> Frame {
        let bg = Normal::new(0.0, self.noise.background_sd).expect("validated sd");
        let sig = Normal::new(0.0, self.noise.signal_sd).expect("validated sd");
        let values = clean
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let shifted = v + extra.map_or(0.0, |e| e[i]);
                let noise = if v > 0.0 {
                    sig.sample(rng)
                } else {
                    self.noise.background_level + bg.sample(rng)
                };
                crate::frames::quantize((shifted + noise).max(0.0))
            })
            .collect();
        Frame::from_parts(self.rows, self.cols, values, None)
    }

    fn effect_field(&self, role: SessionRole) -> Option<Vec<f64>> {
        let e = self.effect.as_ref()?;
        if role == SessionRole::Before {
            return None;
        }
        Some(
            self.effect_mask()
                .iter()
                .map(|&m| if m { e.delta } else { 0.0 })
                .collect(),
        )
    }

    /// One segment movie; `stim` selects oscillating or static frames.
    pub fn gen_movie(&self, role: SessionRole, segment: usize, stim: bool) -> Result<Movie> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(session_stream(role, segment));
        let effect = self.effect_field(role);
        let layers = self.layers(&self.pose);
        let still = self.compose(&layers, (1.0, 1.0));
        let frames = (0..self.n_frames)
            .map(|i| match (&self.stim, stim) {
                (Some(s), true) => {
                    let clean = self.compose(&layers, self.stim_gain(s, i));
                    self.noisy(&clean, &mut rng, effect.as_deref())
                }
                _ => self.noisy(&still, &mut rng, effect.as_deref()),
            })
            .collect();
        Movie::new(frames, self.fps)
    }
}

struct Layers {
    inside: Vec<bool>,
    left: Vec<f64>,
    right: Vec<f64>,
}

/// Generate one three-segment session: N, S, N with stimulation configured,
/// otherwise N, N, N.
pub fn gen_session(spec: &PhantomSpec, role: SessionRole) -> Result<(SessionLayout, GroundTruth)> {
    spec.validate()?;
    let tags = if spec.stim.is_some() {
        [SegmentTag::NoStim, SegmentTag::Stim, SegmentTag::NoStim]
    } else {
        [SegmentTag::NoStim; 3]
    };
    let segments = tags
        .iter()
        .enumerate()
        .map(|(k, &tag)| {
            Ok(Segment {
                tag,
                movie: spec.gen_movie(role, k, tag == SegmentTag::Stim)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let id = match role {
        SessionRole::Before => "before",
        SessionRole::After => "after",
    };
    let layout = SessionLayout::new(segments, id, format!("phantom-{}", spec.seed))?;
    Ok((layout, spec.ground_truth()))
}

/// Before/after sessions from one spec; only "after" carries the effect.
pub fn gen_session_pair(spec: &PhantomSpec) -> Result<(SessionLayout, SessionLayout, GroundTruth)> {
    let (before, truth) = gen_session(spec, SessionRole::Before)?;
    let (after, _) = gen_session(spec, SessionRole::After)?;
    Ok((before, after, truth))
}

/// Two noisy frames, the second showing the first's blob moved by `pose`.
pub fn gen_misaligned_pair(spec: &PhantomSpec, pose: &RigidTransform) -> Result<(Frame, Frame, GroundTruth)> {
    spec.validate()?;
    let moved = pose.compose(&spec.pose);
    let first = spec.render(&spec.pose, (1.0, 1.0));
    let second = spec.render(&moved, (1.0, 1.0));
    let inside = |v: &[f64]| v.iter().filter(|x| **x > 0.0).count();
    if inside(&first) == 0 {
        return Err(LasrError::Config("blob lies outside the grid".into()));
    }
    // fraction of the ellipse area still on the grid after the move
    let area = std::f64::consts::PI
        * spec.blob.radii.0
        * spec.cols as f64
        * spec.blob.radii.1
        * spec.rows as f64;
    if (inside(&second) as f64) < 0.5 * area {
        return Err(LasrError::Config(
            "pose pushes more than half of the blob off the grid".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(MISALIGNED_STREAM);
    let a = spec.noisy(&first, &mut rng, None);
    let b = spec.noisy(&second, &mut rng, None);
    Ok((
        a,
        b,
        GroundTruth {
            effect_mask: vec![false; spec.rows * spec.cols],
            true_pose: *pose,
            true_lag: 0,
        },
    ))
}
