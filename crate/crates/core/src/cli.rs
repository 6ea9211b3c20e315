//! The `metascope` executable: one subcommand per pipeline stage, each
//! reading and writing inspectable files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::correct::{correct_pipeline, fit_channel_mixtures, ChannelMixtures, CorrectOptions, CorrectionReport};
use crate::degrade::{collect_inputs, synthesize_dataset, DatasetManifest, DegradeConfig, SpatialConfig};
use crate::error::{Error, Result};
use crate::fsutil::{write_json, StagedDir};
use crate::imaging::{encode_png, read_png, BitDepth};
use crate::lens::{FocalScaling, LensDesign, PhaseMode};
use crate::metrics::{evaluate_dirs, MaskDirs};
use crate::priors::{analyze_white_image, embedding_inputs, vignetting_map, SpatialPrior};
use crate::propagate::{channel_efficiency, default_lens_grid, simulate_stack, EfficiencyVector, Normalization, PsfOptions, PsfStack, PsfWindow};
use crate::psfmodel::EmConfig;
use crate::units::{parse_length, parse_wavelength_list};

pub const THREADS_ENV: &str = "METASCOPE_THREADS";
pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "metascope", version, propagate_version = true, about = "Metalens PSF simulation, degradation synthesis and correction")]
struct Cli {
    /// Worker threads; defaults to $METASCOPE_THREADS, then the core count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

impl LogLevel {
    fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a lens design JSON.
    Design(DesignArgs),
    /// Simulate a PSF stack for a lens at a sensor distance.
    SimulatePsf(SimulateArgs),
    /// Extract vignetting priors from a white-field capture.
    Priors(PriorsArgs),
    /// Fit per-channel Gaussian mixtures to a PSF stack.
    FitGmm(FitArgs),
    /// Synthesize a degraded/clean paired dataset.
    Degrade(DegradeArgs),
    /// Run the deterministic correction pipeline.
    Correct(CorrectArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PhaseArg {
    Ideal,
    Achromatic,
    Lut,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ScalingArg {
    Diffractive,
    Proportional,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum NormArg {
    UnitSum,
    PeakOne,
    Raw,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DepthArg {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl DepthArg {
    fn depth(self) -> BitDepth {
        match self {
            DepthArg::Eight => BitDepth::Eight,
            DepthArg::Sixteen => BitDepth::Sixteen,
        }
    }
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// Aperture diameter with unit, e.g. 2.6mm.
    #[arg(long)]
    diameter: String,
    /// Design focal length with unit, e.g. 10mm.
    #[arg(long)]
    focal: String,
    /// Design wavelength with unit, e.g. 532nm.
    #[arg(long)]
    wavelength: String,
    #[arg(long, value_enum, default_value_t = PhaseArg::Ideal)]
    phase_mode: PhaseArg,
    #[arg(long, value_enum, default_value_t = ScalingArg::Diffractive)]
    focal_scaling: ScalingArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    lens: PathBuf,
    /// Comma-separated; bare numbers are nanometres.
    #[arg(long)]
    wavelengths: String,
    /// Lens-to-sensor distance with unit.
    #[arg(long)]
    sensor: String,
    /// Lens-plane grid side.
    #[arg(long, default_value_t = 1024)]
    grid: usize,
    /// PSF window side in samples.
    #[arg(long, default_value_t = 64)]
    window: usize,
    /// PSF sample pitch with unit.
    #[arg(long, default_value = "0.5um")]
    pitch: String,
    #[arg(long, default_value_t = 1)]
    oversample: usize,
    #[arg(long, value_enum, default_value_t = NormArg::UnitSum)]
    normalization: NormArg,
    /// Also write the relative peak efficiency of each wavelength as JSON.
    #[arg(long)]
    efficiency_out: Option<PathBuf>,
    #[arg(long, visible_alias = "psf-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PriorsArgs {
    #[arg(long)]
    white_image: PathBuf,
    /// Focal length with unit.
    #[arg(long)]
    focal: String,
    /// Sensor pixel pitch with unit.
    #[arg(long)]
    pitch: String,
    /// Efficiency vector JSON; adds the OIA embedding stack to the output.
    #[arg(long)]
    efficiency: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    psf: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Wavelengths to fit; all stack entries when omitted.
    #[arg(long)]
    wavelengths: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DegradeArgs {
    /// Input manifest JSON or a directory of PNGs.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    lens: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// PSF stack overriding the config's `psf_path`.
    #[arg(long)]
    psf: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = DepthArg::Sixteen)]
    bit_depth: DepthArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CorrectArgs {
    /// Dataset manifest or a directory of degraded PNGs.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    psf: Option<PathBuf>,
    #[arg(long)]
    gmm: PathBuf,
    #[arg(long, default_value_t = CorrectOptions::default().snr)]
    snr: f64,
    #[arg(long, default_value_t = CorrectOptions::default().epsilon_floor)]
    epsilon_floor: f64,
    /// Offset grid side for chromatic aggregation.
    #[arg(long, default_value_t = CorrectOptions::default().m)]
    m: usize,
    /// Skip chromatic aggregation.
    #[arg(long)]
    no_occ: bool,
    #[arg(long, value_enum, default_value_t = DepthArg::Sixteen)]
    bit_depth: DepthArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Ground-truth label masks; needs `--pred-masks` and `--classes`.
    #[arg(long, requires_all = ["pred_masks", "classes"])]
    masks: Option<PathBuf>,
    #[arg(long, requires = "masks")]
    pred_masks: Option<PathBuf>,
    #[arg(long, requires = "masks")]
    classes: Option<usize>,
    #[arg(long)]
    report: PathBuf,
}

/// Written next to every output as `<out>.run.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    /// SHA-256 of each input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

struct Outcome {
    seed: u64,
    inputs: BTreeMap<String, String>,
    config_hash: Option<String>,
    outputs: Vec<PathBuf>,
}

impl Outcome {
    fn new(seed: u64) -> Self {
        Self { seed, inputs: BTreeMap::new(), config_hash: None, outputs: Vec::new() }
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        if path.is_dir() {
            return Ok(());
        }
        let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        self.inputs.insert(role.into(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("{what} `{}` is not a file", path.display())));
    }
    Ok(())
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::InvalidArgument(format!("{what} `{}` does not exist", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::InvalidArgument(format!("{what} `{}` is not a directory", path.display())));
    }
    Ok(())
}

fn run_design(a: &DesignArgs) -> Result<Outcome> {
    let mut lens = LensDesign::new(parse_length(&a.diameter)?, parse_length(&a.focal)?, parse_length(&a.wavelength)?)?;
    lens.phase_mode = match a.phase_mode {
        PhaseArg::Ideal => PhaseMode::Ideal,
        PhaseArg::Achromatic => PhaseMode::Achromatic,
        PhaseArg::Lut => PhaseMode::Lut,
    };
    lens.focal_scaling_mode = match a.focal_scaling {
        ScalingArg::Diffractive => FocalScaling::Diffractive,
        ScalingArg::Proportional => FocalScaling::Proportional,
    };
    lens.validate()?;
    write_json(&a.out, &lens)?;
    let mut o = Outcome::new(0);
    o.outputs.push(a.out.clone());
    Ok(o)
}

fn load_lens(path: &Path) -> Result<LensDesign> {
    let lens: LensDesign = crate::fsutil::read_json(path)?;
    lens.validate()?;
    Ok(lens)
}

fn run_simulate(a: &SimulateArgs) -> Result<Outcome> {
    let wavelengths = parse_wavelength_list(&a.wavelengths)?;
    if wavelengths.is_empty() {
        return Err(Error::InvalidArgument("no wavelengths given".into()));
    }
    let sensor = parse_length(&a.sensor)?;
    if !(sensor > 0.0) {
        return Err(Error::InvalidArgument("sensor distance must be positive".into()));
    }
    let window = PsfWindow { samples: a.window, pitch: parse_length(&a.pitch)?, oversample: a.oversample };
    window.validate()?;
    require_file(&a.lens, "lens")?;
    let lens = load_lens(&a.lens)?;
    let grid = default_lens_grid(&lens, a.grid)?;
    let normalization = match a.normalization {
        NormArg::UnitSum => Normalization::UnitSum,
        NormArg::PeakOne => Normalization::PeakOne,
        NormArg::Raw => Normalization::Raw,
    };
    let opts = PsfOptions { window, normalization, amplitude: 1.0 };
    let stack = simulate_stack(&lens, &wavelengths, sensor, grid, &opts)?;
    let efficiency = match &a.efficiency_out {
        Some(_) => Some(channel_efficiency(&lens, &wavelengths, sensor, grid, window)?.0),
        None => None,
    };
    stack.write(&a.out)?;
    let mut o = Outcome::new(0);
    o.input("lens", &a.lens)?;
    o.outputs.push(a.out.clone());
    if let (Some(p), Some(e)) = (&a.efficiency_out, efficiency) {
        write_json(p, &e)?;
        o.outputs.push(p.clone());
    }
    Ok(o)
}

fn run_priors(a: &PriorsArgs) -> Result<Outcome> {
    let focal = parse_length(&a.focal)?;
    let pitch = parse_length(&a.pitch)?;
    require_file(&a.white_image, "white image")?;
    if let Some(e) = &a.efficiency {
        require_file(e, "efficiency")?;
    }
    let img = read_png(&a.white_image, true)?;
    let analysis = analyze_white_image(&img, focal, pitch)?;
    let (w, h) = (img.width(), img.height());
    let maps: Vec<SpatialPrior> = analysis
        .eta
        .iter()
        .map(|eta| vignetting_map(w, h, focal, pitch, eta))
        .collect::<Result<_>>()?;
    let spatial = SpatialConfig { focal_length: focal, pixel_pitch: pitch, eta: analysis.eta.clone() };
    let staged = StagedDir::new(&a.out)?;
    write_json(&staged.path().join("analysis.json"), &analysis)?;
    write_json(&staged.path().join("spatial.json"), &spatial)?;
    for (c, m) in maps.iter().enumerate() {
        m.write(&staged.path().join(format!("spatial_prior_{c}.msr")))?;
    }
    let mut o = Outcome::new(0);
    o.input("white_image", &a.white_image)?;
    if let Some(e) = &a.efficiency {
        let t: EfficiencyVector = crate::fsutil::read_json(e)?;
        t.validate()?;
        let mut mean = maps[0].clone();
        for m in &maps[1..] {
            mean.map += &m.map;
        }
        mean.map /= maps.len() as f64;
        embedding_inputs(&t, &mean).write(&staged.path().join("embedding_inputs.msr"))?;
        o.input("efficiency", e)?;
    }
    staged.commit()?;
    o.outputs.push(a.out.clone());
    Ok(o)
}

fn run_fit(a: &FitArgs) -> Result<Outcome> {
    if a.k == 0 {
        return Err(Error::InvalidArgument("--k must be at least 1".into()));
    }
    let wavelengths = a.wavelengths.as_deref().map(parse_wavelength_list).transpose()?;
    require_file(&a.psf, "PSF stack")?;
    let stack = PsfStack::read(&a.psf)?;
    let wavelengths = wavelengths.unwrap_or_else(|| stack.wavelengths.clone());
    let cfg = EmConfig { k: a.k, seed: a.seed, restarts: a.restarts.max(1), ..Default::default() };
    let mixtures = fit_channel_mixtures(&stack, &wavelengths, &cfg)?;
    write_json(&a.out, &mixtures)?;
    let mut o = Outcome::new(a.seed);
    o.input("psf", &a.psf)?;
    o.outputs.push(a.out.clone());
    Ok(o)
}

fn load_config(config: &Path, psf: Option<&Path>) -> Result<DegradeConfig> {
    require_file(config, "config")?;
    if let Some(p) = psf {
        require_file(p, "PSF stack")?;
    }
    let mut cfg = DegradeConfig::load(config)?;
    if let Some(p) = psf {
        cfg.psf = Some(PsfStack::read(p)?);
    }
    cfg.psf_stack()?;
    Ok(cfg)
}

fn run_degrade(a: &DegradeArgs) -> Result<Outcome> {
    require_exists(&a.input, "input")?;
    require_file(&a.lens, "lens")?;
    let lens = load_lens(&a.lens)?;
    let mut cfg = load_config(&a.config, a.psf.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let inputs = collect_inputs(&a.input)?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG inputs under {}", a.input.display())));
    }
    let manifest = synthesize_dataset(&inputs, &lens, &cfg, &a.out, a.bit_depth.depth())?;
    let failed = manifest.entries.len() - manifest.ok_entries().count();
    if failed > 0 {
        log::warn!("{failed} of {} inputs failed; see manifest", manifest.entries.len());
    }
    let mut o = Outcome::new(cfg.seed);
    o.input("input", &a.input)?;
    o.input("lens", &a.lens)?;
    o.input("config", &a.config)?;
    if let Some(p) = &a.psf {
        o.input("psf", p)?;
    }
    o.config_hash = Some(manifest.config_hash.clone());
    o.outputs.push(a.out.clone());
    Ok(o)
}

struct CorrectItem {
    name: String,
    degraded: PathBuf,
    reference: Option<PathBuf>,
}

fn correct_items(input: &Path) -> Result<Vec<CorrectItem>> {
    if input.is_dir() {
        return Ok(collect_inputs(input)?
            .into_iter()
            .map(|e| CorrectItem {
                name: e.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                degraded: e.image,
                reference: None,
            })
            .collect());
    }
    let manifest = DatasetManifest::load(input)?;
    let root = input.parent().unwrap_or(Path::new("."));
    manifest.validate(root)?;
    Ok(manifest
        .ok_entries()
        .filter_map(|e| {
            Some(CorrectItem {
                name: e.name.clone(),
                degraded: root.join(e.degraded_path.as_ref()?),
                reference: e.clean_path.as_ref().map(|p| root.join(p)),
            })
        })
        .collect())
}

#[derive(Serialize)]
struct CorrectSummary {
    format_version: u32,
    options: CorrectOptions,
    images: BTreeMap<String, CorrectionReport>,
}

fn run_correct(a: &CorrectArgs) -> Result<Outcome> {
    let opts = CorrectOptions { snr: a.snr, epsilon_floor: a.epsilon_floor, m: a.m, occ: !a.no_occ };
    if !(opts.snr > 0.0) || !(opts.epsilon_floor > 0.0) || opts.m == 0 {
        return Err(Error::InvalidArgument("--snr and --epsilon-floor must be positive and --m at least 1".into()));
    }
    require_exists(&a.input, "input")?;
    require_file(&a.gmm, "mixtures")?;
    let cfg = load_config(&a.config, a.psf.as_deref())?;
    let gmm = ChannelMixtures::load(&a.gmm)?;
    let items = correct_items(&a.input)?;
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("no degraded images under {}", a.input.display())));
    }
    let mixtures = gmm.for_channels(&cfg.channel_wavelengths)?;
    let staged = StagedDir::new(&a.out)?;
    let mut images = BTreeMap::new();
    for item in &items {
        let degraded = read_png(&item.degraded, true)?.to_rgb();
        let reference = item.reference.as_deref().map(|p| read_png(p, true).map(|r| r.to_rgb())).transpose()?;
        let mix = &mixtures[..degraded.channels().min(mixtures.len())];
        let (out, report) = correct_pipeline(&degraded, &cfg, mix, &opts, reference.as_ref())?;
        crate::fsutil::write_atomic(&staged.path().join(format!("{}.png", item.name)), &encode_png(&out, a.bit_depth.depth())?)?;
        images.insert(item.name.clone(), report);
    }
    write_json(&staged.path().join("report.json"), &CorrectSummary { format_version: 1, options: opts, images })?;
    staged.commit()?;
    let mut o = Outcome::new(cfg.seed);
    o.input("input", &a.input)?;
    o.input("config", &a.config)?;
    o.input("gmm", &a.gmm)?;
    o.config_hash = Some(cfg.config_hash()?);
    o.outputs.push(a.out.clone());
    Ok(o)
}

fn run_evaluate(a: &EvaluateArgs) -> Result<Outcome> {
    require_dir(&a.pred, "prediction directory")?;
    require_dir(&a.gt, "ground-truth directory")?;
    let masks = match (&a.masks, &a.pred_masks, a.classes) {
        (Some(gt), Some(pred), Some(n)) => {
            require_dir(gt, "mask directory")?;
            require_dir(pred, "predicted mask directory")?;
            if n == 0 {
                return Err(Error::InvalidArgument("--classes must be positive".into()));
            }
            Some(MaskDirs { pred: pred.clone(), gt: gt.clone(), num_classes: n })
        }
        _ => None,
    };
    let report = evaluate_dirs(&a.pred, &a.gt, masks.as_ref())?;
    write_json(&a.report, &report)?;
    let mut o = Outcome::new(0);
    o.outputs.push(a.report.clone());
    Ok(o)
}

fn name_of(c: &Command) -> &'static str {
    match c {
        Command::Design(_) => "design",
        Command::SimulatePsf(_) => "simulate-psf",
        Command::Priors(_) => "priors",
        Command::FitGmm(_) => "fit-gmm",
        Command::Degrade(_) => "degrade",
        Command::Correct(_) => "correct",
        Command::Evaluate(_) => "evaluate",
    }
}

fn primary_output(c: &Command) -> &Path {
    match c {
        Command::Design(a) => &a.out,
        Command::SimulatePsf(a) => &a.out,
        Command::Priors(a) => &a.out,
        Command::FitGmm(a) => &a.out,
        Command::Degrade(a) => &a.out,
        Command::Correct(a) => &a.out,
        Command::Evaluate(a) => &a.report,
    }
}

fn dispatch(c: &Command) -> Result<Outcome> {
    match c {
        Command::Design(a) => run_design(a),
        Command::SimulatePsf(a) => run_simulate(a),
        Command::Priors(a) => run_priors(a),
        Command::FitGmm(a) => run_fit(a),
        Command::Degrade(a) => run_degrade(a),
        Command::Correct(a) => run_correct(a),
        Command::Evaluate(a) => run_evaluate(a),
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}=`{v}` is not a thread count")))?,
            Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        },
    };
    if n == 0 {
        return Err(Error::InvalidArgument("thread count must be at least 1".into()));
    }
    Ok(n)
}

fn run_manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn execute(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Configuration(format!("cannot start {threads} worker threads: {e}")))?;
    let start = Instant::now();
    let outcome = pool.install(|| dispatch(&cli.command))?;
    let manifest = RunManifest {
        format_version: RUN_FORMAT_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: name_of(&cli.command),
        argv,
        seed: outcome.seed,
        threads,
        inputs: outcome.inputs,
        config_hash: outcome.config_hash,
        outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_json(&run_manifest_path(primary_output(&cli.command)), &manifest)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 success, 1 invalid input, 2 runtime failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level.filter()).format_timestamp(None).try_init();
    let text: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, text) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
