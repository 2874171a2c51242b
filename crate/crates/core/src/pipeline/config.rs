//! Run configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{LasrError, Result};
use crate::registration::{CorrelationDomain, Interpolation, RigidTransform};
use crate::segmentation::SegmentConfig;
use crate::ssm::{FdrMode, Kernel, Sidedness, SsmConfig};
use crate::synthgen::{EffectSpec, PhantomSpec, StimSpec};

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "LASR_SEED";

/// Where the two compared sessions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    /// Session directories written by `save_session`.
    Sessions { before: PathBuf, after: PathBuf },
    /// Before/after sessions generated from a phantom spec.
    Phantom(PhantomSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: InputSource,
    /// 1-based segment of the before session.
    pub before_segment: usize,
    /// 1-based segment of the after session.
    pub after_segment: usize,
    pub ssm: SsmConfig,
    pub m0: usize,
    pub max_lag: usize,
    pub correlation: CorrelationDomain,
    pub interpolation: Interpolation,
    /// Compare movie averages instead of frame pairs.
    pub mean_frame: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: InputSource::Phantom(PhantomSpec::default()),
            before_segment: 1,
            after_segment: 3,
            ssm: SsmConfig::default(),
            m0: 10,
            max_lag: 50,
            correlation: CorrelationDomain::UnionOfSupports,
            interpolation: Interpolation::Bilinear,
            mean_frame: false,
            out_dir: PathBuf::from("lasr_out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.ssm.validate()?;
        if self.before_segment == 0 || self.after_segment == 0 {
            return Err(LasrError::Config("segment selectors are 1-based".into()));
        }
        if let InputSource::Phantom(spec) = &self.input {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn segment_config(&self) -> SegmentConfig {
        let mut cfg = SegmentConfig::default();
        cfg.init.seed = self.seed;
        cfg
    }

    /// Set the run seed; a phantom input follows it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let InputSource::Phantom(spec) = &mut self.input {
            spec.seed = seed;
        }
    }
}

/// Ordered `key = value` pairs; `#` starts a comment line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pub source: String,
    pub entries: Vec<(usize, String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| LasrError::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        Ok(KeyValues {
            source: source.to_string(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LasrError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| LasrError::Config(format!("invalid value `{raw}` for `{key}`")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(LasrError::Config(format!("`{key}` expects true or false, got `{raw}`"))),
    }
}

pub fn parse_kernel(raw: &str) -> Result<Kernel> {
    Kernel::parse(raw).ok_or_else(|| {
        LasrError::Config(format!("unknown kernel `{raw}` (expected gaussian or tricube)"))
    })
}

pub fn parse_fdr_mode(raw: &str) -> Result<FdrMode> {
    FdrMode::parse(raw)
        .ok_or_else(|| LasrError::Config(format!("unknown FDR mode `{raw}` (expected bh or by)")))
}

fn stim_mut(spec: &mut PhantomSpec) -> &mut StimSpec {
    spec.stim.get_or_insert_with(StimSpec::default)
}

fn effect_mut(spec: &mut PhantomSpec) -> &mut EffectSpec {
    spec.effect.get_or_insert(EffectSpec {
        row0: 0,
        col0: 0,
        height: 1,
        width: 1,
        delta: 0.0,
    })
}

/// Set one phantom field; `false` when the key is not a phantom key.
pub fn set_phantom_key(spec: &mut PhantomSpec, key: &str, raw: &str) -> Result<bool> {
    match key {
        "rows" => spec.rows = value(key, raw)?,
        "cols" => spec.cols = value(key, raw)?,
        "n_frames" => spec.n_frames = value(key, raw)?,
        "fps" => spec.fps = value(key, raw)?,
        "seed" => spec.seed = value(key, raw)?,
        "blob.center_x" => spec.blob.center.0 = value(key, raw)?,
        "blob.center_y" => spec.blob.center.1 = value(key, raw)?,
        "blob.radius_x" => spec.blob.radii.0 = value(key, raw)?,
        "blob.radius_y" => spec.blob.radii.1 = value(key, raw)?,
        "blob.base" => spec.blob.base = value(key, raw)?,
        "blob.peak" => spec.blob.peak = value(key, raw)?,
        "blob.peak_dx" => spec.blob.peak_offset.0 = value(key, raw)?,
        "blob.peak_dy" => spec.blob.peak_offset.1 = value(key, raw)?,
        "blob.peak_width" => spec.blob.peak_width = value(key, raw)?,
        "noise.background_level" => spec.noise.background_level = value(key, raw)?,
        "noise.background_sd" => spec.noise.background_sd = value(key, raw)?,
        "noise.signal_sd" => spec.noise.signal_sd = value(key, raw)?,
        "pose.theta" => spec.pose = RigidTransform::new(value(key, raw)?, spec.pose.u, spec.pose.v),
        "pose.u" => spec.pose.u = value(key, raw)?,
        "pose.v" => spec.pose.v = value(key, raw)?,
        "stim" => {
            if flag(key, raw)? {
                spec.stim.get_or_insert_with(StimSpec::default);
            } else {
                spec.stim = None;
            }
        }
        "stim.period" => stim_mut(spec).period = value(key, raw)?,
        "stim.amplitude" => stim_mut(spec).amplitude = value(key, raw)?,
        "stim.lag" => stim_mut(spec).lag = value(key, raw)?,
        "stim.jitter" => stim_mut(spec).jitter = value(key, raw)?,
        "effect.row0" => effect_mut(spec).row0 = value(key, raw)?,
        "effect.col0" => effect_mut(spec).col0 = value(key, raw)?,
        "effect.height" => effect_mut(spec).height = value(key, raw)?,
        "effect.width" => effect_mut(spec).width = value(key, raw)?,
        "effect.delta" => effect_mut(spec).delta = value(key, raw)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Phantom spec as `phantom.*` lines accepted by [`apply_key_values`].
pub fn phantom_to_text(spec: &PhantomSpec) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: String| writeln!(out, "phantom.{k} = {v}").unwrap();
    put("rows", spec.rows.to_string());
    put("cols", spec.cols.to_string());
    put("n_frames", spec.n_frames.to_string());
    put("fps", spec.fps.to_string());
    put("seed", spec.seed.to_string());
    put("blob.center_x", spec.blob.center.0.to_string());
    put("blob.center_y", spec.blob.center.1.to_string());
    put("blob.radius_x", spec.blob.radii.0.to_string());
    put("blob.radius_y", spec.blob.radii.1.to_string());
    put("blob.base", spec.blob.base.to_string());
    put("blob.peak", spec.blob.peak.to_string());
    put("blob.peak_dx", spec.blob.peak_offset.0.to_string());
    put("blob.peak_dy", spec.blob.peak_offset.1.to_string());
    put("blob.peak_width", spec.blob.peak_width.to_string());
    put("noise.background_level", spec.noise.background_level.to_string());
    put("noise.background_sd", spec.noise.background_sd.to_string());
    put("noise.signal_sd", spec.noise.signal_sd.to_string());
    put("pose.theta", spec.pose.theta.to_string());
    put("pose.u", spec.pose.u.to_string());
    put("pose.v", spec.pose.v.to_string());
    put("stim", spec.stim.is_some().to_string());
    if let Some(s) = &spec.stim {
        put("stim.period", s.period.to_string());
        put("stim.amplitude", s.amplitude.to_string());
        put("stim.lag", s.lag.to_string());
        put("stim.jitter", s.jitter.to_string());
    }
    if let Some(e) = &spec.effect {
        put("effect.row0", e.row0.to_string());
        put("effect.col0", e.col0.to_string());
        put("effect.height", e.height.to_string());
        put("effect.width", e.width.to_string());
        put("effect.delta", e.delta.to_string());
    }
    out
}

/// Apply a config file on top of `cfg`. Session paths are resolved relative
/// to `base`.
pub fn apply_key_values(cfg: &mut RunConfig, kv: &KeyValues, base: &Path) -> Result<()> {
    let (mut before, mut after) = (None, None);
    for (line, key, raw) in &kv.entries {
        let located = |e: LasrError| match e {
            LasrError::Config(m) => LasrError::Config(format!("{}:{line}: {m}", kv.source)),
            other => other,
        };
        let res: Result<()> = (|| {
            match key.as_str() {
                "before" => before = Some(base.join(raw)),
                "after" => after = Some(base.join(raw)),
                "before_segment" => cfg.before_segment = value(key, raw)?,
                "after_segment" => cfg.after_segment = value(key, raw)?,
                "q" => cfg.ssm.fdr.q = value(key, raw)?,
                "h" => cfg.ssm.h = value(key, raw)?,
                "kernel" => cfg.ssm.kernel = parse_kernel(raw)?,
                "rim" => cfg.ssm.rim = Some(value(key, raw)?),
                "fdr_mode" => cfg.ssm.fdr.mode = parse_fdr_mode(raw)?,
                "two_sided" => {
                    cfg.ssm.sided = if flag(key, raw)? {
                        Sidedness::TwoSided
                    } else {
                        Sidedness::Greater
                    }
                }
                "m0" => cfg.m0 = value(key, raw)?,
                "max_lag" => cfg.max_lag = value(key, raw)?,
                "correlation" => {
                    cfg.correlation = match raw.as_str() {
                        "union" => CorrelationDomain::UnionOfSupports,
                        "all" => CorrelationDomain::AllPixels,
                        _ => return Err(LasrError::Config(format!("unknown correlation domain `{raw}`"))),
                    }
                }
                "interpolation" => {
                    cfg.interpolation = match raw.as_str() {
                        "bilinear" => Interpolation::Bilinear,
                        "nearest" => Interpolation::Nearest,
                        _ => return Err(LasrError::Config(format!("unknown interpolation `{raw}`"))),
                    }
                }
                "mean_frame" => cfg.mean_frame = flag(key, raw)?,
                "out" => cfg.out_dir = base.join(raw),
                "seed" => cfg.set_seed(value(key, raw)?),
                k if k.starts_with("phantom.") => {
                    let mut spec = match &cfg.input {
                        InputSource::Phantom(s) => s.clone(),
                        InputSource::Sessions { .. } => PhantomSpec::default(),
                    };
                    if !set_phantom_key(&mut spec, &k["phantom.".len()..], raw)? {
                        return Err(LasrError::Config(format!("unknown key `{k}`")));
                    }
                    cfg.input = InputSource::Phantom(spec);
                }
                other => return Err(LasrError::Config(format!("unknown key `{other}`"))),
            }
            Ok(())
        })();
        res.map_err(located)?;
    }
    match (before, after) {
        (Some(before), Some(after)) => cfg.input = InputSource::Sessions { before, after },
        (None, None) => {}
        (Some(_), None) => return Err(LasrError::Config("config sets `before` without `after`".into())),
        (None, Some(_)) => return Err(LasrError::Config("config sets `after` without `before`".into())),
    }
    Ok(())
}

/// Seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| LasrError::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_spec_round_trips_through_text() {
        let spec = PhantomSpec {
            stim: Some(StimSpec { lag: -3, ..StimSpec::default() }),
            effect: Some(EffectSpec { row0: 4, col0: 5, height: 6, width: 6, delta: 6.0 }),
            pose: RigidTransform::new(0.25, 1.5, -2.0),
            seed: 12,
            ..PhantomSpec::default()
        };
        let kv = KeyValues::parse(&phantom_to_text(&spec), "mem").unwrap();
        let mut cfg = RunConfig::default();
        apply_key_values(&mut cfg, &kv, Path::new(".")).unwrap();
        assert_eq!(cfg.input, InputSource::Phantom(spec));
    }

    #[test]
    fn config_errors_name_the_line() {
        let kv = KeyValues::parse("q = 0.1\n\nh = abc\n", "run.cfg").unwrap();
        let err = apply_key_values(&mut RunConfig::default(), &kv, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("run.cfg:3"), "{err}");
        assert!(KeyValues::parse("no equals sign", "x").is_err());
        let kv = KeyValues::parse("before = a\n", "c").unwrap();
        assert!(apply_key_values(&mut RunConfig::default(), &kv, Path::new(".")).is_err());
    }

    #[test]
    fn sessions_and_knobs() {
        let kv = KeyValues::parse(
            "before = s1\nafter = s2\nq = 0.1\nfdr_mode = by\nkernel = tricube\nmean_frame = yes\n",
            "c",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        apply_key_values(&mut cfg, &kv, Path::new("/data")).unwrap();
        assert_eq!(
            cfg.input,
            InputSource::Sessions { before: "/data/s1".into(), after: "/data/s2".into() }
        );
        assert_eq!((cfg.ssm.fdr.q, cfg.ssm.fdr.mode, cfg.ssm.kernel), (0.1, FdrMode::By, Kernel::Tricube));
        assert!(cfg.mean_frame);
    }
}
