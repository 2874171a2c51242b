//! End-to-end flow: segment, register in space, register in time (stimulation
//! movies only), difference, smooth, test and threshold at an FDR level.

mod config;

pub use config::{
    apply_key_values, env_seed, parse_fdr_mode, parse_kernel, phantom_to_text, set_phantom_key,
    InputSource, KeyValues, RunConfig, SEED_ENV,
};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{LasrError, Result};
use crate::frames::{
    format_csv, format_movie, format_pgm, load_session, Frame, MapScale, Movie, SegmentTag,
    SessionLayout,
};
use crate::registration::{
    align_movies, apply_rigid, icr_lag, srlp_params, IcrConfig, LagAlignment, Point,
    RigidTransform,
};
use crate::segmentation::{segment_movie, SegmentationResult};
use crate::ssm::{difference_map, run_ssm, SsmOutput};
use crate::synthgen::gen_session_pair;

/// Pipeline stage names used in error context.
pub mod stage {
    pub const LOAD: &str = "load";
    pub const SEGMENT: &str = "segment";
    pub const SPATIAL: &str = "spatial-registration";
    pub const TEMPORAL: &str = "temporal-registration";
    pub const SSM: &str = "ssm";
    pub const WRITE: &str = "write";
}

fn in_stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// The frame with its mask reset to its positive pixels; the form in which
/// frames travel between stages (and the only one LASR-text can carry).
pub fn with_positive_support(frame: &Frame) -> Frame {
    let mask: Vec<bool> = frame.values().iter().map(|v| *v > 0.0).collect();
    let values = frame
        .values()
        .iter()
        .zip(&mask)
        .map(|(v, m)| if *m { *v } else { 0.0 })
        .collect();
    Frame::from_parts(frame.rows(), frame.cols(), values, Some(mask))
}

pub fn movie_with_positive_support(movie: &Movie) -> Result<Movie> {
    Movie::new(movie.frames().iter().map(with_positive_support).collect(), movie.fps())
}

/// Reference frame of a movie: the first frame after the unstable lead-in.
pub fn reference_index(movie: &Movie, m0: usize) -> usize {
    m0.min(movie.len() - 1)
}

/// Apply one rigid map to every frame, keeping the stage invariants.
pub fn register_movie(movie: &Movie, t: &RigidTransform, cfg: &RunConfig) -> Result<Movie> {
    let frames: Vec<Frame> = movie
        .frames()
        .par_iter()
        .map(|f| with_positive_support(&apply_rigid(f, t, cfg.interpolation).quantized()))
        .collect();
    Movie::new(frames, movie.fps())
}

/// How frames were paired.
#[derive(Debug, Clone, PartialEq)]
pub enum Pairing {
    /// Index-wise after dropping the lead-in.
    Static,
    /// Lag chosen by correlation registration.
    Lagged(LagAlignment),
    /// Movie averages after dropping the lead-in.
    MeanFrame,
}

impl Pairing {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pairing::Static => "static",
            Pairing::Lagged(_) => "icr",
            Pairing::MeanFrame => "mean-frame",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairResult {
    /// Source frame indices (into the selected segments), `None` for means.
    pub before_frame: Option<usize>,
    pub after_frame: Option<usize>,
    pub diff: Frame,
    pub ssm: SsmOutput,
}

/// In-memory result of a run.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub before_segmentation: SegmentationResult,
    pub after_segmentation: SegmentationResult,
    pub before_reference: usize,
    pub after_reference: usize,
    pub before_transform: RigidTransform,
    pub after_transform: RigidTransform,
    pub segmented: (Movie, Movie),
    pub registered: (Movie, Movie),
    pub pairing: Pairing,
    pub pairs: Vec<PairResult>,
}

impl Analysis {
    pub fn total_rejected(&self) -> usize {
        self.pairs.iter().map(|p| p.ssm.pmap.n_rejected).sum()
    }
}

fn load_inputs(cfg: &RunConfig) -> Result<(SessionLayout, SessionLayout)> {
    match &cfg.input {
        InputSource::Sessions { before, after } => Ok((load_session(before)?, load_session(after)?)),
        InputSource::Phantom(spec) => {
            let (b, a, _) = gen_session_pair(spec)?;
            Ok((b, a))
        }
    }
}

/// Run every stage on already loaded sessions.
pub fn analyze_sessions(before: &SessionLayout, after: &SessionLayout, cfg: &RunConfig) -> Result<Analysis> {
    cfg.validate()?;
    let (seg_b, seg_a) = in_stage(stage::LOAD, (|| {
        let b = before.segment(cfg.before_segment)?;
        let a = after.segment(cfg.after_segment)?;
        if b.movie.dims() != a.movie.dims() {
            return Err(LasrError::invalid(format!(
                "sessions have different grids: {:?} vs {:?}",
                b.movie.dims(),
                a.movie.dims()
            )));
        }
        Ok((b, a))
    })())?;
    let dynamic = seg_b.tag == SegmentTag::Stim && seg_a.tag == SegmentTag::Stim;
    let movie_b = seg_b.movie.quantized();
    let movie_a = seg_a.movie.quantized();

    // segmentation
    let segment_cfg = cfg.segment_config();
    let ref_b = reference_index(&movie_b, cfg.m0);
    let ref_a = reference_index(&movie_a, cfg.m0);
    let (res_b, segmented_b) = in_stage(stage::SEGMENT, segment_movie(&movie_b, ref_b, &segment_cfg))?;
    let (res_a, segmented_a) = in_stage(stage::SEGMENT, segment_movie(&movie_a, ref_a, &segment_cfg))?;

    // spatial registration to the before session's canonical anchor
    let (t_b, t_a, registered_b, registered_a) = in_stage(stage::SPATIAL, (|| {
        let pose_b = srlp_params(segmented_b.frame(ref_b))?;
        let anchor = Point::new(pose_b.u, segmented_b.dims().0 as f64 / 2.0);
        let t_b = pose_b.to_canonical(anchor);
        let t_a = srlp_params(segmented_a.frame(ref_a))?.to_canonical(anchor);
        let rb = register_movie(&segmented_b, &t_b, cfg)?;
        let ra = register_movie(&segmented_a, &t_a, cfg)?;
        Ok((t_b, t_a, rb, ra))
    })())?;

    // temporal pairing
    let (pairing, frame_pairs) = in_stage(stage::TEMPORAL, pair_frames(&registered_b, &registered_a, dynamic, cfg))?;

    let pairs: Vec<PairResult> = in_stage(
        stage::SSM,
        frame_pairs
            .into_par_iter()
            .map(|(ib, ia, fb, fa)| {
                let diff = difference_map(&fa, &fb)?;
                let ssm = run_ssm(&diff, &cfg.ssm)?;
                Ok(PairResult {
                    before_frame: ib,
                    after_frame: ia,
                    diff,
                    ssm,
                })
            })
            .collect::<Result<Vec<_>>>(),
    )?;

    Ok(Analysis {
        before_segmentation: res_b,
        after_segmentation: res_a,
        before_reference: ref_b,
        after_reference: ref_a,
        before_transform: t_b,
        after_transform: t_a,
        segmented: (segmented_b, segmented_a),
        registered: (registered_b, registered_a),
        pairing,
        pairs,
    })
}

type FramePair = (Option<usize>, Option<usize>, Frame, Frame);

fn pair_frames(b: &Movie, a: &Movie, dynamic: bool, cfg: &RunConfig) -> Result<(Pairing, Vec<FramePair>)> {
    let m0 = cfg.m0;
    if b.len() <= m0 || a.len() <= m0 {
        return Err(LasrError::invalid(format!(
            "segments of {} and {} frames leave nothing after discarding m0 = {m0}",
            b.len(),
            a.len()
        )));
    }
    if cfg.mean_frame {
        let tail = |m: &Movie| Movie::new(m.frames()[m0..].to_vec(), m.fps()).map(|t| t.mean_frame());
        let mb = with_positive_support(&tail(b)?.quantized());
        let ma = with_positive_support(&tail(a)?.quantized());
        return Ok((Pairing::MeanFrame, vec![(None, None, mb, ma)]));
    }
    if dynamic {
        let icr = IcrConfig {
            m0,
            max_lag: cfg.max_lag,
            domain: cfg.correlation,
        };
        let lag = icr_lag(b, a, &icr)?;
        let (ab, aa) = align_movies(b, a, &lag)?;
        let s = lag.lag.unsigned_abs() as usize;
        let (ob, oa) = if lag.lag >= 0 { (m0, m0 + s) } else { (m0 + s, m0) };
        let pairs = ab
            .into_frames()
            .into_iter()
            .zip(aa.into_frames())
            .enumerate()
            .map(|(k, (fb, fa))| (Some(ob + k), Some(oa + k), fb, fa))
            .collect();
        return Ok((Pairing::Lagged(lag), pairs));
    }
    let n = (b.len() - m0).min(a.len() - m0);
    let pairs = (m0..m0 + n)
        .map(|k| (Some(k), Some(k), b.frame(k).clone(), a.frame(k).clone()))
        .collect();
    Ok((Pairing::Static, pairs))
}

/// Load or generate the inputs and run every stage in memory.
pub fn analyze(cfg: &RunConfig) -> Result<Analysis> {
    cfg.validate()?;
    let (before, after) = in_stage(stage::LOAD, load_inputs(cfg))?;
    analyze_sessions(&before, &after, cfg)
}

fn num(v: f64) -> String {
    // no "-0" in reports
    format!("{}", if v == 0.0 { 0.0 } else { v })
}

/// Line-oriented `key = value` report.
pub fn format_report(analysis: &Analysis, cfg: &RunConfig) -> String {
    let mut out = String::from("format = lasr-report 1\n");
    let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
    match &cfg.input {
        InputSource::Sessions { before, after } => {
            put("input", "sessions".into());
            put("input.before", before.display().to_string());
            put("input.after", after.display().to_string());
        }
        InputSource::Phantom(spec) => {
            put("input", "phantom".into());
            put("input.seed", spec.seed.to_string());
        }
    }
    put("before_segment", cfg.before_segment.to_string());
    put("after_segment", cfg.after_segment.to_string());
    put("seed", cfg.seed.to_string());
    put("m0", cfg.m0.to_string());
    put("h", num(cfg.ssm.h));
    put("kernel", cfg.ssm.kernel.as_str().into());
    put("rim", cfg.ssm.rim_width().to_string());
    put("q", num(cfg.ssm.fdr.q));
    put("fdr_mode", cfg.ssm.fdr.mode.as_str().into());
    put("alternative", cfg.ssm.sided.as_str().into());
    for (name, seg, reference, t) in [
        ("before", &analysis.before_segmentation, analysis.before_reference, &analysis.before_transform),
        ("after", &analysis.after_segmentation, analysis.after_reference, &analysis.after_transform),
    ] {
        put(&format!("{name}.reference_frame"), reference.to_string());
        put(&format!("{name}.components"), seg.model.m().to_string());
        put(&format!("{name}.threshold"), num(seg.threshold));
        put(&format!("{name}.threshold_method"), seg.method.as_str().into());
        put(&format!("{name}.theta"), num(t.theta));
        put(&format!("{name}.u"), num(t.u));
        put(&format!("{name}.v"), num(t.v));
    }
    put("pairing", analysis.pairing.as_str().into());
    match &analysis.pairing {
        Pairing::Lagged(lag) => {
            put("j0", lag.lag.to_string());
            put("j0.cor_avg", num(lag.cor_at(lag.lag).unwrap_or(f64::NAN)));
        }
        _ => put("j0", "none".into()),
    }
    put("pairs", analysis.pairs.len().to_string());
    let opt = |i: Option<usize>| i.map_or("mean".to_string(), |i| i.to_string());
    for (k, p) in analysis.pairs.iter().enumerate() {
        let key = |f: &str| format!("pair.{k:04}.{f}");
        put(&key("before_frame"), opt(p.before_frame));
        put(&key("after_frame"), opt(p.after_frame));
        put(&key("delta1"), num(p.ssm.fit.delta1));
        put(&key("delta2"), num(p.ssm.fit.delta2));
        put(&key("df"), num(p.ssm.tmap.df));
        put(&key("sigma_hat"), num(p.ssm.fit.sigma_hat));
        put(&key("deficient_pixels"), p.ssm.fit.deficient.len().to_string());
        put(&key("critical_p"), num(p.ssm.pmap.critical_p));
        put(&key("n_rejected"), p.ssm.pmap.n_rejected.to_string());
    }
    put("total_rejected", analysis.total_rejected().to_string());
    out
}

/// Files produced by a run, in write order.
pub fn output_files(analysis: &Analysis, cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let mut files = vec![
        ("report.txt".to_string(), format_report(analysis, cfg)),
        ("before_segmented.lasr".into(), format_movie(&analysis.segmented.0)),
        ("after_segmented.lasr".into(), format_movie(&analysis.segmented.1)),
        ("before_registered.lasr".into(), format_movie(&analysis.registered.0)),
        ("after_registered.lasr".into(), format_movie(&analysis.registered.1)),
    ];
    for (k, p) in analysis.pairs.iter().enumerate() {
        let (rows, cols) = p.diff.dims();
        let name = |s: &str| format!("pair{k:04}_{s}");
        files.push((name("diff.csv"), format_csv(rows, cols, p.diff.values())));
        files.push((name("tmap.csv"), format_csv(rows, cols, &p.ssm.tmap.t_values)));
        files.push((name("pvalues.csv"), format_csv(rows, cols, &p.ssm.pvalues)));
        files.push((name("pmap.csv"), format_csv(rows, cols, &p.ssm.pmap.values)));
        let pm = Frame::signed(rows, cols, p.ssm.pmap.values.clone())?;
        files.push((name("pmap.pgm"), format_pgm(&pm, MapScale::UnitInterval)?));
    }
    Ok(files)
}

/// Write files through a staging directory; nothing is left behind on error.
pub fn write_outputs(files: &[(String, String)], out_dir: &Path) -> Result<()> {
    let staging = out_dir.join(".lasr-staging");
    let write_all = || -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| LasrError::io(out_dir, e))?;
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| LasrError::io(&staging, e))?;
        }
        fs::create_dir(&staging).map_err(|e| LasrError::io(&staging, e))?;
        for (name, text) in files {
            let p = staging.join(name);
            fs::write(&p, text).map_err(|e| LasrError::io(p, e))?;
        }
        for (name, _) in files {
            let (from, to) = (staging.join(name), out_dir.join(name));
            fs::rename(&from, &to).map_err(|e| LasrError::io(to, e))?;
        }
        fs::remove_dir(&staging).map_err(|e| LasrError::io(&staging, e))
    };
    let res = write_all();
    if res.is_err() && staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    in_stage(stage::WRITE, res)
}

/// Summary returned by [`run_lasr`].
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub report: String,
    pub files: Vec<String>,
    pub total_rejected: usize,
    pub analysis: Analysis,
}

/// Full run: analyze, then write report and maps into the output directory.
pub fn run_lasr(cfg: &RunConfig) -> Result<RunReport> {
    let analysis = analyze(cfg)?;
    let files = in_stage(stage::WRITE, output_files(&analysis, cfg))?;
    write_outputs(&files, &cfg.out_dir)?;
    Ok(RunReport {
        out_dir: cfg.out_dir.clone(),
        report: files[0].1.clone(),
        files: files.iter().map(|f| f.0.clone()).collect(),
        total_rejected: analysis.total_rejected(),
        analysis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{EffectSpec, PhantomSpec, StimSpec};

    fn phantom_cfg(spec: PhantomSpec) -> RunConfig {
        RunConfig {
            input: InputSource::Phantom(spec),
            ..RunConfig::default()
        }
    }

    #[test]
    fn static_null_run_is_quiet() {
        let cfg = phantom_cfg(PhantomSpec { n_frames: 14, seed: 2, ..PhantomSpec::default() });
        let a = analyze(&cfg).unwrap();
        assert_eq!(a.pairing, Pairing::Static);
        assert_eq!(a.pairs.len(), 4);
        assert_eq!(a.pairs[0].before_frame, Some(10));
        assert!(a.before_transform.theta.abs() < 0.05);
    }

    #[test]
    fn mean_frame_effect_is_detected() {
        let spec = PhantomSpec {
            n_frames: 20,
            effect: Some(EffectSpec { row0: 16, col0: 24, height: 6, width: 6, delta: 6.0 }),
            seed: 3,
            ..PhantomSpec::default()
        };
        let cfg = RunConfig { mean_frame: true, ..phantom_cfg(spec) };
        let a = analyze(&cfg).unwrap();
        assert_eq!(a.pairs.len(), 1);
        assert!(a.total_rejected() > 0);
    }

    #[test]
    fn stimulation_segments_use_icr() {
        let spec = PhantomSpec {
            n_frames: 80,
            stim: Some(StimSpec::default()),
            seed: 4,
            ..PhantomSpec::default()
        };
        let cfg = RunConfig {
            before_segment: 2,
            after_segment: 2,
            max_lag: 20,
            ..phantom_cfg(spec)
        };
        let a = analyze(&cfg).unwrap();
        match &a.pairing {
            Pairing::Lagged(lag) => assert_eq!(lag.lag, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stage_errors_are_labelled() {
        let cfg = RunConfig { after_segment: 7, ..phantom_cfg(PhantomSpec::default()) };
        let err = analyze(&cfg).unwrap_err();
        assert!(err.to_string().contains("stage `load`"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn failed_write_leaves_no_partial_output() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("out");
        // a file where the output directory should be
        fs::write(&blocker, "x").unwrap();
        let files = vec![("a.txt".to_string(), "1".to_string())];
        assert!(write_outputs(&files, &blocker).is_err());
        let ok = dir.path().join("fine");
        write_outputs(&files, &ok).unwrap();
        assert_eq!(fs::read_to_string(ok.join("a.txt")).unwrap(), "1");
        assert!(!ok.join(".lasr-staging").exists());
    }
}
