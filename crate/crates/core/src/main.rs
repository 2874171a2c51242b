use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lasr::frames::{format_csv, load_movie, save_movie, save_session, Movie};
use lasr::pipeline::{
    apply_key_values, env_seed, movie_with_positive_support, parse_fdr_mode, parse_kernel,
    phantom_to_text, reference_index, run_lasr, set_phantom_key, with_positive_support,
    write_outputs, InputSource, KeyValues, RunConfig,
};
use lasr::registration::{icr_lag, srlp_params, IcrConfig, Point};
use lasr::segmentation::{segment_movie, SegmentConfig};
use lasr::ssm::{difference_map, run_ssm, Sidedness, SsmConfig};
use lasr::synthgen::{gen_session_pair, EffectSpec, PhantomSpec, StimSpec};
use lasr::{LasrError, Result};

#[derive(Parser)]
#[command(name = "lasr", version, about = "Longitudinal analysis of pressure-map movies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full before/after comparison.
    Run(RunArgs),
    /// Segment one movie from its reference frame.
    Segment(SegmentArgs),
    /// Spatial self-registration of a movie, or lag estimation between two.
    Register(RegisterArgs),
    /// Smoothing and FDR testing of one after-minus-before frame pair.
    Ssm(SsmArgs),
    /// Write a synthetic before/after session pair.
    Phantom(PhantomArgs),
}

#[derive(Args, Default)]
struct SsmKnobs {
    /// FDR level in (0, 1).
    #[arg(long)]
    q: Option<f64>,
    /// Smoothing bandwidth in pixels.
    #[arg(long)]
    h: Option<f64>,
    /// gaussian or tricube.
    #[arg(long)]
    kernel: Option<String>,
    /// Rim width in pixels (default ceil(h)).
    #[arg(long)]
    rim: Option<usize>,
    /// bh or by.
    #[arg(long)]
    fdr_mode: Option<String>,
    #[arg(long)]
    two_sided: bool,
}

impl SsmKnobs {
    fn apply(&self, cfg: &mut SsmConfig) -> Result<()> {
        if let Some(q) = self.q {
            cfg.fdr.q = q;
        }
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(k) = &self.kernel {
            cfg.kernel = parse_kernel(k)?;
        }
        if self.rim.is_some() {
            cfg.rim = self.rim;
        }
        if let Some(m) = &self.fdr_mode {
            cfg.fdr.mode = parse_fdr_mode(m)?;
        }
        if self.two_sided {
            cfg.sided = Sidedness::TwoSided;
        }
        cfg.validate()
    }
}

#[derive(Args)]
struct RunArgs {
    /// key = value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Before session directory.
    #[arg(long)]
    before: Option<PathBuf>,
    /// After session directory.
    #[arg(long)]
    after: Option<PathBuf>,
    /// Generate the input sessions from the default phantom.
    #[arg(long, conflicts_with_all = ["before", "after"])]
    phantom: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    before_segment: Option<usize>,
    #[arg(long)]
    after_segment: Option<usize>,
    #[arg(long)]
    m0: Option<usize>,
    #[arg(long)]
    max_lag: Option<usize>,
    /// Compare movie averages instead of frame pairs.
    #[arg(long)]
    mean_frame: bool,
    /// Overrides the config file and LASR_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    ssm: SsmKnobs,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    /// Reference frame (default min(10, n - 1)).
    #[arg(long)]
    reference: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegisterMode {
    Spatial,
    Temporal,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long, value_enum, default_value_t = RegisterMode::Spatial)]
    mode: RegisterMode,
    /// Movie to self-register (spatial), or the first movie (temporal).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Second movie (temporal).
    #[arg(long)]
    other: Option<PathBuf>,
    /// Registered movie (spatial).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    m0: usize,
    #[arg(long, default_value_t = 50)]
    max_lag: usize,
}

#[derive(Args)]
struct SsmArgs {
    #[arg(long)]
    before: Option<PathBuf>,
    #[arg(long)]
    after: Option<PathBuf>,
    /// Frame index used from both movies.
    #[arg(long, conflicts_with = "mean_frame")]
    frame: Option<usize>,
    #[arg(long)]
    mean_frame: bool,
    #[arg(long, default_value = "lasr_ssm")]
    out: PathBuf,
    #[command(flatten)]
    ssm: SsmKnobs,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; gets `s1/` (before), `s2/` (after) and `phantom.txt`.
    #[arg(long)]
    out: PathBuf,
    /// Add periodic stimulation; segment 2 of each session becomes a stimulation segment.
    #[arg(long)]
    stim: bool,
    /// Add a square effect of this size to the after session.
    #[arg(long)]
    effect_delta: Option<f64>,
    #[arg(long)]
    n_frames: Option<usize>,
    /// Config file with `phantom.*` keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| LasrError::Config(format!("missing required {flag}")))
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    let mut from_config = false;
    if let Some(path) = &args.config {
        let kv = KeyValues::load(path)?;
        let before = cfg.input.clone();
        apply_key_values(&mut cfg, &kv, path.parent().unwrap_or(Path::new(".")))?;
        from_config = cfg.input != before
            || kv.entries.iter().any(|(_, k, _)| k.starts_with("phantom."));
    }
    match (&args.before, &args.after) {
        (Some(b), Some(a)) => {
            cfg.input = InputSource::Sessions { before: b.clone(), after: a.clone() };
        }
        _ if args.phantom => cfg.input = InputSource::Phantom(PhantomSpec::default()),
        _ if from_config => {}
        (None, _) => return Err(LasrError::Config("missing required --before (or --phantom, or a config with inputs)".into())),
        (_, None) => return Err(LasrError::Config("missing required --after".into())),
    }
    if let Some(seed) = env_seed()? {
        cfg.set_seed(seed);
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(o) = args.out {
        cfg.out_dir = o;
    }
    if let Some(s) = args.before_segment {
        cfg.before_segment = s;
    }
    if let Some(s) = args.after_segment {
        cfg.after_segment = s;
    }
    if let Some(m) = args.m0 {
        cfg.m0 = m;
    }
    if let Some(m) = args.max_lag {
        cfg.max_lag = m;
    }
    cfg.mean_frame |= args.mean_frame;
    args.ssm.apply(&mut cfg.ssm)?;
    let report = run_lasr(&cfg)?;
    println!(
        "wrote {} files to {}; {} pairs, {} rejected pixels",
        report.files.len(),
        report.out_dir.display(),
        report.analysis.pairs.len(),
        report.total_rejected
    );
    Ok(())
}

fn segment(args: SegmentArgs) -> Result<()> {
    let movie = load_movie(&args.input)?;
    let reference = args.reference.unwrap_or_else(|| reference_index(&movie, 10));
    let mut cfg = SegmentConfig::default();
    cfg.init.seed = args.seed;
    let (res, out) = segment_movie(&movie, reference, &cfg)?;
    save_movie(&out, &args.out)?;
    println!(
        "threshold = {}\ncomponents = {}\nmethod = {}",
        res.threshold,
        res.model.m(),
        res.method.as_str()
    );
    Ok(())
}

fn register(args: RegisterArgs) -> Result<()> {
    let first = movie_with_positive_support(&load_movie(required(&args.input, "--input")?)?)?;
    match args.mode {
        RegisterMode::Spatial => {
            let out = required(&args.out, "--out")?;
            let reference = reference_index(&first, args.m0);
            let pose = srlp_params(first.frame(reference))?;
            let t = pose.to_canonical(Point::new(pose.u, first.dims().0 as f64 / 2.0));
            let cfg = RunConfig::default();
            let registered = lasr::pipeline::register_movie(&first, &t, &cfg)?;
            save_movie(&registered, out)?;
            println!("theta = {}\nu = {}\nv = {}", t.theta, t.u, t.v);
        }
        RegisterMode::Temporal => {
            let second = movie_with_positive_support(&load_movie(required(&args.other, "--other")?)?)?;
            let cfg = IcrConfig { m0: args.m0, max_lag: args.max_lag, ..IcrConfig::default() };
            let lag = icr_lag(&first, &second, &cfg)?;
            println!("j0 = {}\ndirection = {:?}", lag.lag, lag.direction);
        }
    }
    Ok(())
}

fn pick(movie: &Movie, frame: Option<usize>, mean: bool) -> Result<lasr::Frame> {
    if mean {
        return Ok(with_positive_support(&movie.mean_frame().quantized()));
    }
    let k = frame.unwrap_or(0);
    if k >= movie.len() {
        return Err(LasrError::Config(format!("--frame {k} out of range for {} frames", movie.len())));
    }
    Ok(with_positive_support(movie.frame(k)))
}

fn ssm(args: SsmArgs) -> Result<()> {
    let mut cfg = SsmConfig::default();
    args.ssm.apply(&mut cfg)?;
    let before = load_movie(required(&args.before, "--before")?)?;
    let after = load_movie(required(&args.after, "--after")?)?;
    let b = pick(&before, args.frame, args.mean_frame)?;
    let a = pick(&after, args.frame, args.mean_frame)?;
    let diff = difference_map(&a, &b)?;
    let out = run_ssm(&diff, &cfg)?;
    let (rows, cols) = diff.dims();
    let files = vec![
        ("tmap.csv".to_string(), format_csv(rows, cols, &out.tmap.t_values)),
        ("pvalues.csv".to_string(), format_csv(rows, cols, &out.pvalues)),
        ("pmap.csv".to_string(), format_csv(rows, cols, &out.pmap.values)),
    ];
    write_outputs(&files, &args.out)?;
    println!(
        "df = {}\nsigma_hat = {}\ncritical_p = {}\nn_rejected = {}",
        out.tmap.df, out.fit.sigma_hat, out.pmap.critical_p, out.pmap.n_rejected
    );
    Ok(())
}

fn phantom(args: PhantomArgs) -> Result<()> {
    let mut spec = PhantomSpec::default();
    if let Some(path) = &args.config {
        let kv = KeyValues::load(path)?;
        for (line, key, raw) in &kv.entries {
            let k = key.strip_prefix("phantom.").unwrap_or(key);
            if !set_phantom_key(&mut spec, k, raw)? {
                return Err(LasrError::Config(format!("{}:{line}: unknown key `{key}`", kv.source)));
            }
        }
    }
    spec.seed = args.seed;
    if args.stim {
        spec.stim.get_or_insert_with(StimSpec::default);
    }
    if let Some(delta) = args.effect_delta {
        let (r, c) = (spec.rows, spec.cols);
        spec.effect = Some(EffectSpec { row0: r * 2 / 5, col0: c / 2, height: 6, width: 6, delta });
    }
    if let Some(n) = args.n_frames {
        spec.n_frames = n;
    }
    let (before, after, _) = gen_session_pair(&spec)?;
    save_session(&before, args.out.join("s1"))?;
    save_session(&after, args.out.join("s2"))?;
    let p = args.out.join("phantom.txt");
    fs::write(&p, phantom_to_text(&spec)).map_err(|e| LasrError::Io { path: p, source: e })?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run(a),
        Command::Segment(a) => segment(a),
        Command::Register(a) => register(a),
        Command::Ssm(a) => ssm(a),
        Command::Phantom(a) => phantom(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lasr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
