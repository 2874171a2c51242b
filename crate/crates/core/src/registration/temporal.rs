//! Temporal alignment of two stimulation movies by average frame correlation.

use rayon::prelude::*;

use crate::error::{LasrError, Result};
use crate::frames::{Frame, Movie};

/// Pixels entering a frame correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationDomain {
    /// Union of the two support masks; all pixels when neither frame is masked.
    #[default]
    UnionOfSupports,
    AllPixels,
}

/// Pearson correlation of two frames over `domain`; `None` when either side
/// is constant there.
fn correlation(a: &Frame, b: &Frame, domain: CorrelationDomain) -> Option<f64> {
    let (ma, mb) = match domain {
        CorrelationDomain::UnionOfSupports => (a.mask(), b.mask()),
        CorrelationDomain::AllPixels => (None, None),
    };
    let masked = ma.is_some() || mb.is_some();
    let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
    let inside = |i: usize| {
        !masked || ma.map_or(false, |m| m[i]) || mb.map_or(false, |m| m[i])
    };
    for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        if inside(i) {
            n += 1;
            sx += x;
            sy += y;
        }
    }
    if n < 2 {
        return None;
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        if inside(i) {
            let (dx, dy) = (x - mx, y - my);
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of two frames.
pub fn frame_correlation(a: &Frame, b: &Frame, domain: CorrelationDomain) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(LasrError::invalid(format!(
            "frame dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    correlation(a, b, domain)
        .ok_or_else(|| LasrError::Degenerate("correlation undefined for a constant frame".into()))
}

/// Which movie lags behind the other at the selected lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftDirection {
    /// Lag 0.
    None,
    /// Positive lag: frame `i` of the first movie matches frame `i + j0` of
    /// the second.
    SecondDelayed,
    /// Negative lag: frame `i + |j0|` of the first matches frame `i` of the
    /// second.
    FirstDelayed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagAlignment {
    pub m0: usize,
    pub lag: i64,
    /// Candidate lags in ascending order.
    pub lags: Vec<i64>,
    /// Average correlation per entry of `lags`; NaN where no pair was defined.
    pub cor_avg: Vec<f64>,
    pub direction: ShiftDirection,
}

impl LagAlignment {
    pub fn cor_at(&self, lag: i64) -> Option<f64> {
        self.lags.iter().position(|&l| l == lag).map(|k| self.cor_avg[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcrConfig {
    pub m0: usize,
    pub max_lag: usize,
    pub domain: CorrelationDomain,
}

impl Default for IcrConfig {
    fn default() -> Self {
        IcrConfig {
            m0: 10,
            max_lag: 50,
            domain: CorrelationDomain::UnionOfSupports,
        }
    }
}

/// Index pairs `(i_a, i_b)` matched at `lag` after discarding `m0` frames.
fn pairs_at(len_a: usize, len_b: usize, m0: usize, lag: i64) -> impl Iterator<Item = (usize, usize)> {
    let (na, nb) = (len_a - m0, len_b - m0);
    let s = lag.unsigned_abs() as usize;
    let count = if lag >= 0 {
        na.min(nb.saturating_sub(s))
    } else {
        na.saturating_sub(s).min(nb)
    };
    (0..count).map(move |i| {
        if lag >= 0 {
            (m0 + i, m0 + i + s)
        } else {
            (m0 + i + s, m0 + i)
        }
    })
}

/// The correlation domain when it is the same for every frame pair: all
/// pixels, or one mask shared by every frame of both movies.
fn shared_domain(a: &Movie, b: &Movie, domain: CorrelationDomain) -> Option<Option<Vec<bool>>> {
    if domain == CorrelationDomain::AllPixels {
        return Some(None);
    }
    let first = a.frame(0).mask();
    let same = a.frames().iter().chain(b.frames()).all(|f| f.mask() == first);
    same.then(|| first.map(<[bool]>::to_vec))
}

/// Centered values on the domain scaled to unit norm, so that a correlation
/// is a dot product; `None` for a constant frame.
fn standardized(f: &Frame, domain: Option<&[bool]>) -> Option<Vec<f64>> {
    let xs: Vec<f64> = match domain {
        Some(m) => f.values().iter().zip(m).filter(|(_, &on)| on).map(|(x, _)| *x).collect(),
        None => f.values().to_vec(),
    };
    if xs.len() < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    if ss <= 0.0 {
        return None;
    }
    let scale = ss.sqrt();
    Some(xs.iter().map(|x| (x - mean) / scale).collect())
}

/// Select the lag maximizing the average frame correlation.
///
/// Lags run over `-max_lag..=max_lag`; the first maximum in ascending order
/// wins.
pub fn icr_lag(a: &Movie, b: &Movie, config: &IcrConfig) -> Result<LagAlignment> {
    if a.dims() != b.dims() {
        return Err(LasrError::invalid(format!(
            "movie dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let need = config.m0 + config.max_lag + 1;
    if a.len() <= need || b.len() <= need {
        return Err(LasrError::invalid(format!(
            "movies of {} and {} frames are too short for m0 = {} and max_lag = {}",
            a.len(),
            b.len(),
            config.m0,
            config.max_lag
        )));
    }
    let max = config.max_lag as i64;
    let lags: Vec<i64> = (-max..=max).collect();
    let fixed = shared_domain(a, b, config.domain).map(|dom| {
        let z = |m: &Movie| -> Vec<Option<Vec<f64>>> {
            m.frames()[config.m0..]
                .par_iter()
                .map(|f| standardized(f, dom.as_deref()))
                .collect()
        };
        (z(a), z(b))
    });
    let cor_avg: Vec<f64> = lags
        .par_iter()
        .map(|&lag| {
            let (mut sum, mut n) = (0.0, 0usize);
            for (i, j) in pairs_at(a.len(), b.len(), config.m0, lag) {
                let c = match &fixed {
                    Some((za, zb)) => match (&za[i - config.m0], &zb[j - config.m0]) {
                        (Some(x), Some(y)) => {
                            Some(x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0))
                        }
                        _ => None,
                    },
                    None => correlation(a.frame(i), b.frame(j), config.domain),
                };
                if let Some(c) = c {
                    sum += c;
                    n += 1;
                }
            }
            if n == 0 {
                f64::NAN
            } else {
                sum / n as f64
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (k, c) in cor_avg.iter().enumerate() {
        if c.is_finite() && best.map_or(true, |b| *c > cor_avg[b]) {
            best = Some(k);
        }
    }
    let k = best.ok_or_else(|| {
        LasrError::Degenerate("every frame correlation is undefined".into())
    })?;
    let lag = lags[k];
    Ok(LagAlignment {
        m0: config.m0,
        lag,
        direction: match lag.signum() {
            0 => ShiftDirection::None,
            1 => ShiftDirection::SecondDelayed,
            _ => ShiftDirection::FirstDelayed,
        },
        lags,
        cor_avg,
    })
}

/// Drop the first `m0` frames of each movie and pair frames under the lag;
/// overhanging frames are trimmed so both outputs have equal length.
pub fn align_movies(a: &Movie, b: &Movie, lag: &LagAlignment) -> Result<(Movie, Movie)> {
    let s = lag.lag.unsigned_abs() as usize;
    let m0 = lag.m0;
    if a.len() <= m0 + s || b.len() <= m0 + s {
        return Err(LasrError::invalid(format!(
            "lag {} exceeds the usable length of movies with {} and {} frames",
            lag.lag,
            a.len(),
            b.len()
        )));
    }
    let (fa, fb): (Vec<Frame>, Vec<Frame>) = pairs_at(a.len(), b.len(), m0, lag.lag)
        .map(|(i, j)| (a.frame(i).clone(), b.frame(j).clone()))
        .unzip();
    Ok((Movie::new(fa, a.fps())?, Movie::new(fb, b.fps())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(vals: &[f64], cols: usize) -> Frame {
        Frame::new(vals.len() / cols, cols, vals.to_vec()).unwrap()
    }

    #[test]
    fn self_and_reversed_correlation() {
        let f = frame(&[1.0, 4.0, 2.0, 8.0, 5.0, 7.0], 3);
        let r = frame(&f.values().iter().map(|v| 10.0 - v).collect::<Vec<_>>(), 3);
        let d = CorrelationDomain::AllPixels;
        assert!((frame_correlation(&f, &f, d).unwrap() - 1.0).abs() < 1e-12);
        assert!((frame_correlation(&f, &r, d).unwrap() + 1.0).abs() < 1e-12);
        let flat = frame(&[3.0; 6], 3);
        assert!(frame_correlation(&f, &flat, d).is_err());
    }

    #[test]
    fn three_by_three_matches_hand_pearson() {
        let x = [1.0, 2.0, 0.0, 4.0, 3.0, 5.0, 2.0, 7.0, 1.0];
        let y = [2.0, 1.0, 1.0, 3.0, 6.0, 4.0, 0.0, 5.0, 2.0];
        let n = 9.0;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let hand = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        let c = frame_correlation(&frame(&x, 3), &frame(&y, 3), CorrelationDomain::AllPixels)
            .unwrap();
        assert!((c - hand).abs() < 1e-12);
    }

    #[test]
    fn union_domain_ignores_shared_background() {
        let a = frame(&[1.0, 2.0, 0.0, 0.0], 2).with_mask(vec![true, true, false, false]).unwrap();
        let b = frame(&[0.0, 3.0, 5.0, 0.0], 2).with_mask(vec![false, true, true, false]).unwrap();
        let u = frame_correlation(&a, &b, CorrelationDomain::UnionOfSupports).unwrap();
        let x = [1.0, 2.0, 0.0];
        let y = [0.0, 3.0, 5.0];
        let manual = frame_correlation(&frame(&x, 3), &frame(&y, 3), CorrelationDomain::AllPixels)
            .unwrap();
        assert!((u - manual).abs() < 1e-12);
    }

    fn pulse_movie(n: usize, shift: usize) -> Movie {
        // left/right alternation with irregular amplitudes
        let amp = |k: usize| 1.0 + ((k * 37) % 11) as f64 / 10.0;
        let frames = (0..n)
            .map(|i| {
                let t = i as i64 - shift as i64;
                let on = t.rem_euclid(6) < 3;
                let a = amp(t.rem_euclid(1000) as usize / 6);
                let (l, r) = if on { (5.0 + a, 5.0) } else { (5.0, 5.0 + a) };
                Frame::new(2, 2, vec![l, r, l * 0.5 + 1.0, r * 0.5 + 1.0]).unwrap()
            })
            .collect();
        Movie::new(frames, 2.0).unwrap()
    }

    #[test]
    fn planted_lags_in_both_directions() {
        let cfg = IcrConfig { m0: 2, max_lag: 8, domain: CorrelationDomain::AllPixels };
        let a = pulse_movie(80, 0);
        let same = icr_lag(&a, &a, &cfg).unwrap();
        assert_eq!((same.lag, same.direction), (0, ShiftDirection::None));
        let b = pulse_movie(80, 4);
        let fwd = icr_lag(&a, &b, &cfg).unwrap();
        assert_eq!((fwd.lag, fwd.direction), (4, ShiftDirection::SecondDelayed));
        let back = icr_lag(&b, &a, &cfg).unwrap();
        assert_eq!((back.lag, back.direction), (-4, ShiftDirection::FirstDelayed));
        assert_eq!(fwd.lags.len(), 17);
    }

    #[test]
    fn averages_match_per_pair_correlations() {
        let cfg = IcrConfig { m0: 3, max_lag: 5, domain: CorrelationDomain::UnionOfSupports };
        let mask = vec![true, true, false, true];
        let masked = |m: Movie| {
            let frames = m.frames().iter().map(|f| f.clone().with_mask(mask.clone()).unwrap()).collect();
            Movie::new(frames, 2.0).unwrap()
        };
        // shared masks take the standardized path; a differing mask forces
        // the per-pair one
        let a = masked(pulse_movie(40, 0));
        let b = masked(pulse_movie(40, 2));
        let mut odd = b.frames().to_vec();
        odd[0] = odd[0].clone().with_mask(vec![true; 4]).unwrap();
        let b_odd = Movie::new(odd, 2.0).unwrap();
        for (x, y) in [(&a, &b), (&a, &b_odd)] {
            let got = icr_lag(x, y, &cfg).unwrap();
            for (k, &lag) in got.lags.iter().enumerate() {
                let cs: Vec<f64> = pairs_at(40, 40, 3, lag)
                    .map(|(i, j)| frame_correlation(x.frame(i), y.frame(j), cfg.domain).unwrap())
                    .collect();
                let want = cs.iter().sum::<f64>() / cs.len() as f64;
                assert!((got.cor_avg[k] - want).abs() < 1e-12, "lag {lag}");
            }
            assert_eq!(got.lag, 2);
        }
    }

    #[test]
    fn too_short_is_an_error() {
        let a = pulse_movie(10, 0);
        assert!(icr_lag(&a, &a, &IcrConfig::default()).is_err());
    }

    #[test]
    fn alignment_lengths() {
        let a = pulse_movie(410, 0);
        let b = pulse_movie(410, 7);
        let lag = |j| LagAlignment {
            m0: 10,
            lag: j,
            lags: vec![j],
            cor_avg: vec![1.0],
            direction: ShiftDirection::None,
        };
        let (x, y) = align_movies(&a, &b, &lag(7)).unwrap();
        assert_eq!((x.len(), y.len()), (393, 393));
        for k in 0..x.len() {
            assert_eq!(x.frame(k), y.frame(k));
        }
        let (x, y) = align_movies(&a, &b, &lag(0)).unwrap();
        assert_eq!((x.len(), y.len()), (400, 400));
        assert!(align_movies(&a, &b, &lag(400)).is_err());
    }
}
