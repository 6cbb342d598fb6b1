//! Command-line front end: tables, verification, low-bit curves, loss
//! estimates, estimator variance, training and sampling. Every command writes
//! CSV with 17 significant digits and is a pure function of its flags.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use diffloss::denoiser::{Denoiser, OracleDenoiser, ZeroDenoiser};
use diffloss::estimator::{
    calibrate_adaptive, estimator_variance, weighted_loss_mc, weighted_loss_quadrature, DenoisingResidual, TimeSampler,
};
use diffloss::oracle::{lowbit_curves, MixtureOracle};
use diffloss::process::{ForwardProcess, PredictionKind};
use diffloss::quadrature::linspace;
use diffloss::sampler::{sample, Churn, SamplerConfig, SamplerKind};
use diffloss::schedules::{adaptive_schedule, make_schedule, truncate, AdaptiveScheduleState, NoiseSchedule, ScheduleParams};
use diffloss::theorem::{verify_all, IdentityReport};
use diffloss::trainer::{
    history_csv, make_dataset, read_checkpoint, train, write_checkpoint, Dataset, DatasetParams, DenoiserNet, NetConfig, TrainConfig,
};
use diffloss::weightings::{make_weighting, shift_weighting, Weighting, WeightingParams};

/// Environment variable naming the directory for relative output paths.
pub const OUT_DIR_ENV: &str = "DIFFLOSS_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "diffloss", version, about = "Weighted diffusion losses, schedules, oracles and samplers")]
#[command(args_override_self = true)]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; relative paths resolve against $DIFFLOSS_OUT_DIR. Stdout if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// File of `key=value` lines used as flag defaults; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Noise schedule tables.
    #[command(subcommand)]
    Schedule(ScheduleCmd),
    /// Weighting function tables.
    #[command(subcommand)]
    Weighting(WeightingCmd),
    /// Identity checks.
    #[command(subcommand)]
    Verify(VerifyCmd),
    /// Per-bit KL curves of discretized data.
    Lowbit(LowbitArgs),
    /// Weighted loss estimates.
    #[command(subcommand)]
    Loss(LossCmd),
    /// Variance of the loss estimator across repeats.
    Variance(VarianceArgs),
    /// Trains a denoiser.
    Train(TrainArgs),
    /// Draws samples.
    Sample(SampleArgs),
}

#[derive(Subcommand, Debug)]
enum ScheduleCmd {
    /// `t, λ(t), p(λ), dλ/dt` on a uniform time grid.
    Dump(ScheduleDumpArgs),
}

#[derive(Subcommand, Debug)]
enum WeightingCmd {
    /// `λ, w(λ), w'(λ)` on a uniform log-SNR grid.
    Dump(WeightingDumpArgs),
}

#[derive(Subcommand, Debug)]
enum VerifyCmd {
    /// Runs the full identity suite; exits 1 if any check fails.
    All,
}

#[derive(Subcommand, Debug)]
enum LossCmd {
    /// Estimates the weighted loss of a model.
    Estimate(LossArgs),
}

#[derive(Args, Debug, Clone)]
struct RangeArgs {
    #[arg(long, default_value_t = -20.0, allow_negative_numbers = true)]
    lmin: f64,
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    lmax: f64,
}

#[derive(Args, Debug, Clone)]
struct ScheduleFlags {
    /// Image resolution for shifted-cosine.
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long, default_value_t = 7.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.002)]
    sigma_min: f64,
    #[arg(long, default_value_t = 80.0)]
    sigma_max: f64,
}

impl ScheduleFlags {
    fn params(&self) -> ScheduleParams {
        ScheduleParams { resolution: self.resolution, rho: self.rho, sigma_min: self.sigma_min, sigma_max: self.sigma_max }
    }
}

#[derive(Args, Debug, Clone)]
struct WeightingFlags {
    #[arg(long, default_value = "elbo")]
    weighting: String,
    /// Offset of sigmoid-k and p2.
    #[arg(long, allow_negative_numbers = true)]
    k: Option<f64>,
    /// Exponent of p2 and min-snr.
    #[arg(long)]
    gamma: Option<f64>,
}

impl WeightingFlags {
    fn params(&self) -> WeightingParams {
        WeightingParams { k: self.k, gamma: self.gamma }
    }

    fn build(&self) -> diffloss::Result<Weighting> {
        make_weighting(&self.weighting, &self.params())
    }
}

#[derive(Args, Debug, Clone)]
struct DataFlags {
    #[arg(long, default_value = "gaussian1d")]
    dataset: String,
    /// Number of dataset points.
    #[arg(long, default_value_t = 10_000)]
    n_data: usize,
}

impl DataFlags {
    fn build(&self, seed: u64) -> diffloss::Result<Dataset> {
        make_dataset(&self.dataset, &DatasetParams::default(), self.n_data, seed)
    }
}

#[derive(Args, Debug)]
struct ScheduleDumpArgs {
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 101)]
    n: usize,
    #[command(flatten)]
    range: RangeArgs,
    #[command(flatten)]
    schedule: ScheduleFlags,
}

#[derive(Args, Debug)]
struct WeightingDumpArgs {
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 101)]
    n: usize,
    #[command(flatten)]
    range: RangeArgs,
    #[arg(long, allow_negative_numbers = true)]
    k: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Shifts the weighting for this image resolution.
    #[arg(long)]
    resolution: Option<f64>,
}

#[derive(Args, Debug)]
struct LowbitArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    bits: Vec<u32>,
    #[arg(long, default_value_t = 2001)]
    n: usize,
    #[command(flatten)]
    range: RangeArgs,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[command(flatten)]
    data: DataFlags,
    /// `oracle` or `zero`; ignored when a checkpoint is given.
    #[arg(long, default_value = "oracle")]
    model: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// A schedule name or `adaptive` (calibrated on the dataset oracle).
    #[arg(long, default_value = "cosine")]
    schedule: String,
    #[command(flatten)]
    weighting: WeightingFlags,
    /// Number of Monte Carlo draws.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value = "low-discrepancy")]
    times: String,
    /// Parameterization in which residuals are formed.
    #[arg(long, default_value = "eps")]
    residual: String,
    /// `mc` or `quadrature` (one-dimensional datasets with an oracle).
    #[arg(long, default_value = "mc")]
    method: String,
    #[arg(long, default_value = "vp")]
    process: String,
    #[command(flatten)]
    range: RangeArgs,
    #[command(flatten)]
    schedule_flags: ScheduleFlags,
}

#[derive(Args, Debug)]
struct VarianceArgs {
    #[command(flatten)]
    data: DataFlags,
    #[arg(long, value_delimiter = ',', default_value = "cosine,adaptive")]
    schedules: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "iid,low-discrepancy")]
    times: Vec<String>,
    #[command(flatten)]
    weighting: WeightingFlags,
    /// Draws per estimate.
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    repeats: usize,
    /// Iterations used to calibrate the adaptive schedule.
    #[arg(long, default_value_t = 30_000)]
    calibration: usize,
    #[command(flatten)]
    range: RangeArgs,
    #[command(flatten)]
    schedule_flags: ScheduleFlags,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    weighting: WeightingFlags,
    /// A schedule name or `adaptive`.
    #[arg(long, default_value = "cosine")]
    schedule: String,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    /// Output parameterization of the network.
    #[arg(long, default_value = "eps")]
    kind: String,
    /// Where to write the trained network.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    range: RangeArgs,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long, default_value = "ddpm")]
    sampler: String,
    #[arg(long, default_value_t = 256)]
    steps: usize,
    /// Sampling schedule; defaults to cosine for ddpm and edm-sample otherwise.
    #[arg(long)]
    schedule: Option<String>,
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[command(flatten)]
    data: DataFlags,
    /// Trained network; the dataset oracle is used when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "vp")]
    process: String,
    #[arg(long, default_value_t = 0.0)]
    s_churn: f64,
    #[arg(long, default_value_t = 0.0)]
    s_tmin: f64,
    #[arg(long, default_value_t = f64::INFINITY)]
    s_tmax: f64,
    #[arg(long, default_value_t = 1.0)]
    s_noise: f64,
    #[command(flatten)]
    range: RangeArgs,
    #[command(flatten)]
    schedule_flags: ScheduleFlags,
}

/// Why a command did not finish.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Failed(String),
}

impl From<diffloss::Error> for Failure {
    fn from(e: diffloss::Error) -> Self {
        use diffloss::Error::*;
        match e {
            UnknownName { .. } | MissingParameter(_) | InvalidArgument(_) | OutOfRange { .. } | NotMonotonic { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Failed(e.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse<T: std::str::FromStr<Err = diffloss::Error>>(s: &str) -> Result<T, Failure> {
    s.parse::<T>().map_err(Failure::from)
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn row(values: &[f64]) -> String {
    values.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(",")
}

/// Resolves a relative output path against [`OUT_DIR_ENV`].
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() && !dir.is_empty() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Failed(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::Failed(format!("{}: {e}", path.display())))
}

const TWO_LEVEL: [&str; 4] = ["schedule", "weighting", "verify", "loss"];
const GLOBAL_VALUE_FLAGS: [&str; 3] = ["--seed", "--out", "--config"];

/// Reads `key=value` lines into `--key value` tokens.
fn config_tokens(path: &Path) -> Result<Vec<String>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| usage(format!("config {} line {}: expected key=value", path.display(), i + 1)))?;
        out.push(format!("--{}", k.trim().replace('_', "-")));
        out.push(v.trim().to_string());
    }
    Ok(out)
}

/// Places config-file flags right after the subcommand path, ahead of every
/// flag from the command line, so that command-line flags win.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>, Failure> {
    let mut config = None;
    let mut path: Vec<String> = Vec::new();
    let mut rest = Vec::new();
    let mut it = argv.into_iter();
    let prog = it.next().unwrap_or_else(|| "diffloss".into());
    let mut expect_value = false;
    let mut take_config = false;
    for tok in it {
        if take_config {
            config = Some(PathBuf::from(&tok));
            take_config = false;
            continue;
        }
        if expect_value {
            rest.push(tok);
            expect_value = false;
            continue;
        }
        if tok == "--config" {
            take_config = true;
            continue;
        }
        if let Some(p) = tok.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
            continue;
        }
        let is_path_token = !tok.starts_with('-')
            && (path.is_empty() || (path.len() == 1 && TWO_LEVEL.contains(&path[0].as_str()) && rest_is_globals(&rest)));
        if is_path_token {
            path.push(tok);
            continue;
        }
        if GLOBAL_VALUE_FLAGS.contains(&tok.as_str()) && path.len() < 2 {
            expect_value = true;
        }
        rest.push(tok);
    }
    if take_config {
        return Err(usage("--config needs a file"));
    }
    let mut out = vec![prog];
    out.extend(path);
    if let Some(c) = config {
        out.extend(config_tokens(&c)?);
    }
    out.extend(rest);
    Ok(out)
}

fn rest_is_globals(rest: &[String]) -> bool {
    let mut i = 0;
    while i < rest.len() {
        let t = rest[i].as_str();
        if GLOBAL_VALUE_FLAGS.contains(&t) {
            i += 2;
        } else if GLOBAL_VALUE_FLAGS.iter().any(|g| t.starts_with(&format!("{g}="))) {
            i += 1;
        } else {
            return false;
        }
    }
    true
}

/// Runs the command line `argv` (program name first) against the process's
/// stdout and stderr and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(f) => return report(f, stderr),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, stderr) {
        Ok(output) => {
            let bytes = output.text.as_bytes();
            let written = match &cli.out {
                Some(p) => write_file(&resolve_output(p), bytes),
                None => stdout.write_all(bytes).map_err(|e| Failure::Failed(e.to_string())),
            };
            match written {
                Err(f) => report(f, stderr),
                Ok(()) if output.verified => EXIT_OK,
                Ok(()) => {
                    let _ = writeln!(stderr, "verification failed");
                    EXIT_FAILED
                }
            }
        }
        Err(f) => report(f, stderr),
    }
}

fn report(f: Failure, stderr: &mut dyn Write) -> i32 {
    match f {
        Failure::Usage(m) => {
            let _ = writeln!(stderr, "error: {m}\n\nRun `diffloss --help` for usage.");
            EXIT_USAGE
        }
        Failure::Failed(m) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_FAILED
        }
    }
}

struct Output {
    text: String,
    verified: bool,
}

impl Output {
    fn ok(text: String) -> Self {
        Self { text, verified: true }
    }
}

fn execute(cli: &Cli, stderr: &mut dyn Write) -> Result<Output, Failure> {
    let seed = cli.seed;
    match &cli.command {
        Command::Schedule(ScheduleCmd::Dump(a)) => schedule_dump(a).map(Output::ok),
        Command::Weighting(WeightingCmd::Dump(a)) => weighting_dump(a).map(Output::ok),
        Command::Verify(VerifyCmd::All) => verify(),
        Command::Lowbit(a) => lowbit(a).map(Output::ok),
        Command::Loss(LossCmd::Estimate(a)) => loss_estimate(a, seed).map(Output::ok),
        Command::Variance(a) => variance(a, seed).map(Output::ok),
        Command::Train(a) => train_cmd(a, seed).map(Output::ok),
        Command::Sample(a) => sample_cmd(a, seed, stderr).map(Output::ok),
    }
}

fn check_grid(n: usize, range: &RangeArgs) -> Result<(), Failure> {
    if n < 2 {
        return Err(usage("--n must be at least 2"));
    }
    if !(range.lmin < range.lmax) {
        return Err(usage("need --lmin < --lmax"));
    }
    Ok(())
}

fn truncated(name: &str, flags: &ScheduleFlags, range: &RangeArgs) -> Result<Box<dyn NoiseSchedule>, Failure> {
    if !(range.lmin < range.lmax) {
        return Err(usage("need --lmin < --lmax"));
    }
    let base = make_schedule(name, &flags.params())?;
    let (lo, hi) = base.support();
    Ok(Box::new(truncate(base, hi.min(range.lmax), lo.max(range.lmin))?))
}

fn schedule_dump(a: &ScheduleDumpArgs) -> Result<String, Failure> {
    check_grid(a.n, &a.range)?;
    let s = truncated(&a.name, &a.schedule, &a.range)?;
    let mut out = String::from("t,lambda,density,dlambda_dt\n");
    for t in linspace(0.0, 1.0, a.n) {
        let l = s.log_snr(t);
        writeln!(out, "{}", row(&[t, l, s.density(l), s.dlog_snr_dt(t)])).unwrap();
    }
    Ok(out)
}

fn weighting_dump(a: &WeightingDumpArgs) -> Result<String, Failure> {
    check_grid(a.n, &a.range)?;
    let mut w = make_weighting(&a.name, &WeightingParams { k: a.k, gamma: a.gamma })?;
    if let Some(r) = a.resolution {
        w = shift_weighting(&w, r)?;
    }
    let mut out = String::from("lambda,w,dw_dlambda\n");
    for l in linspace(a.range.lmin, a.range.lmax, a.n) {
        writeln!(out, "{}", row(&[l, w.eval(l), w.derivative(l)])).unwrap();
    }
    Ok(out)
}

fn verify() -> Result<Output, Failure> {
    let reports = verify_all()?;
    let mut text = format!("{}\n", IdentityReport::CSV_HEADER);
    for r in &reports {
        writeln!(text, "{}", r.csv_row()).unwrap();
    }
    Ok(Output { text, verified: reports.iter().all(|r| r.pass) })
}

fn lowbit(a: &LowbitArgs) -> Result<String, Failure> {
    check_grid(a.n, &a.range)?;
    let grid = linspace(a.range.lmin, a.range.lmax, a.n);
    let c = lowbit_curves(&a.bits, &grid)?;
    let areas: Vec<Vec<f64>> = c.per_bit.iter().map(|pb| diffloss::oracle::cumulative_integral(&grid, &pb.values)).collect();
    let mut header = vec!["lambda".to_string()];
    for b in &c.bits {
        header.extend([format!("kl_{b}"), format!("dkl_{b}"), format!("per_bit_{b}"), format!("area_{b}")]);
    }
    let mut out = header.join(",") + "\n";
    for (i, &l) in grid.iter().enumerate() {
        let mut vals = vec![l];
        for j in 0..c.bits.len() {
            vals.extend([c.kl[j].values[i], c.dkl[j].values[i], c.per_bit[j].values[i], areas[j][i]]);
        }
        writeln!(out, "{}", row(&vals)).unwrap();
    }
    Ok(out)
}

fn oracle_of(data: &Dataset) -> Result<MixtureOracle, Failure> {
    data.oracle().cloned().ok_or_else(|| usage(format!("dataset `{}` has no analytic oracle", data.name())))
}

fn load_net(path: &Path) -> Result<DenoiserNet, Failure> {
    Ok(read_checkpoint(&resolve_output(path))?.0)
}

/// The adaptive schedule at its fixed point for `oracle` and `w`.
fn calibrated_adaptive(
    oracle: &MixtureOracle,
    w: &Weighting,
    proc: ForwardProcess,
    range: &RangeArgs,
    iterations: usize,
    seed: u64,
) -> Result<Box<dyn NoiseSchedule>, Failure> {
    let mut state = AdaptiveScheduleState::new(range.lmin, range.lmax)?;
    calibrate_adaptive(&mut state, w, oracle, proc, iterations, seed)?;
    Ok(Box::new(adaptive_schedule(&state)?))
}

fn loss_estimate(a: &LossArgs, seed: u64) -> Result<String, Failure> {
    let proc: ForwardProcess = parse(&a.process)?;
    let data = a.data.build(seed)?;
    let w = a.weighting.build()?;
    let model: Box<dyn Denoiser> = match (&a.checkpoint, a.model.as_str()) {
        (Some(p), _) => Box::new(load_net(p)?),
        (None, "oracle") => Box::new(OracleDenoiser { oracle: oracle_of(&data)?, proc }),
        (None, "zero") => Box::new(ZeroDenoiser { dim: diffloss::estimator::DataSource::dim(&data), kind: PredictionKind::Eps }),
        (None, m) => return Err(usage(format!("unknown model `{m}` (expected oracle or zero)"))),
    };
    let header = "mean,std_error,n\n";
    match a.method.as_str() {
        "quadrature" => {
            let oracle = oracle_of(&data)?;
            let v = weighted_loss_quadrature(model.as_ref(), &oracle, &w, proc, a.range.lmin, a.range.lmax, 200, 64)?;
            Ok(format!("{header}{},{},0\n", fmt(v), fmt(0.0)))
        }
        "mc" => {
            if a.n == 0 {
                return Err(usage("--n must be positive"));
            }
            let schedule = if a.schedule == "adaptive" {
                calibrated_adaptive(&oracle_of(&data)?, &w, proc, &a.range, 30_000, seed)?
            } else {
                truncated(&a.schedule, &a.schedule_flags, &a.range)?
            };
            let residual = DenoisingResidual::new(model.as_ref(), &data, proc).with_residual(parse(&a.residual)?);
            let e = weighted_loss_mc(&residual, schedule.as_ref(), &w, parse(&a.times)?, a.n, seed)?;
            Ok(format!("{header}{},{},{}\n", fmt(e.mean), fmt(e.std_error), e.n))
        }
        m => Err(usage(format!("unknown method `{m}` (expected mc or quadrature)"))),
    }
}

fn variance(a: &VarianceArgs, seed: u64) -> Result<String, Failure> {
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let proc = ForwardProcess::Vp;
    let data = a.data.build(seed)?;
    let oracle = oracle_of(&data)?;
    let w = a.weighting.build()?;
    let model = OracleDenoiser { oracle: oracle.clone(), proc };
    let residual = DenoisingResidual::new(&model, &data, proc);
    let mut out = String::from("config,var,ci_lo,ci_hi\n");
    for name in &a.schedules {
        let schedule = if name == "adaptive" {
            calibrated_adaptive(&oracle, &w, proc, &a.range, a.calibration, seed)?
        } else {
            truncated(name, &a.schedule_flags, &a.range)?
        };
        for times in &a.times {
            let mode: TimeSampler = parse(times)?;
            let config = format!("{name}/{times}");
            let rep = estimator_variance(&config, a.repeats, seed, |r| {
                let s = seed.wrapping_mul(0x1000_0000).wrapping_add(r);
                Ok(weighted_loss_mc(&residual, schedule.as_ref(), &w, mode, a.n, s)?.mean)
            })?;
            writeln!(out, "{config},{},{},{}", fmt(rep.var), fmt(rep.ci_lo), fmt(rep.ci_hi)).unwrap();
        }
    }
    Ok(out)
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<String, Failure> {
    let data = a.data.build(seed)?;
    let dim = diffloss::estimator::DataSource::dim(&data);
    let net_config = NetConfig { dim, embed_dim: a.embed_dim, hidden: a.hidden.clone(), kind: parse(&a.kind)?, zero_final: false };
    let mut net = DenoiserNet::new(net_config, seed)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        clip_norm: a.clip_norm,
        batch_size: a.batch_size,
        iterations: a.iterations,
        schedule: a.schedule.clone(),
        weighting: a.weighting.weighting.clone(),
        weighting_params: a.weighting.params(),
        seed,
        lambda_min: a.range.lmin,
        lambda_max: a.range.lmax,
        ..TrainConfig::default()
    };
    let out = train(&mut net, &data, &cfg, None)?;
    if let Some(p) = &a.checkpoint {
        let hidden: Vec<String> = a.hidden.iter().map(|h| h.to_string()).collect();
        let echo = format!("{}dataset={}\nn_data={}\nhidden={}\n", cfg.echo(), a.data.dataset, a.data.n_data, hidden.join(","));
        let path = resolve_output(p);
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Failure::Failed(format!("{}: {e}", parent.display())))?;
        }
        write_checkpoint(&path, &net, &echo)?;
    }
    Ok(history_csv(&out.history))
}

fn sample_cmd(a: &SampleArgs, seed: u64, stderr: &mut dyn Write) -> Result<String, Failure> {
    let kind: SamplerKind = parse(&a.sampler)?;
    let proc: ForwardProcess = parse(&a.process)?;
    let name = a.schedule.clone().unwrap_or_else(|| if kind == SamplerKind::Ddpm { "cosine" } else { "edm-sample" }.into());
    let schedule = truncated(&name, &a.schedule_flags, &a.range)?;
    let model: Box<dyn Denoiser> = match &a.checkpoint {
        Some(p) => Box::new(load_net(p)?),
        None => Box::new(OracleDenoiser { oracle: oracle_of(&a.data.build(seed)?)?, proc }),
    };
    let churn = Churn { s_churn: a.s_churn, s_tmin: a.s_tmin, s_tmax: a.s_tmax, s_noise: a.s_noise };
    let cfg = SamplerConfig::new(kind, a.steps, schedule.as_ref()).with_process(proc).with_churn(churn);
    let result = sample(model.as_ref(), &cfg, a.n, seed, false)?;
    for w in &result.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let dim = model.dim();
    let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    let mut out = header.join(",") + "\n";
    for s in &result.samples {
        writeln!(out, "{}", row(s)).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn config_goes_after_subcommand_path() {
        let dir = std::env::temp_dir().join(format!("diffloss-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("c.conf");
        std::fs::write(&cfg, "# comment\nn = 3\nlmin=-1\n").unwrap();
        let got = expand_config(argv(&format!("diffloss --seed 4 weighting dump --config {} --n 5", cfg.display()))).unwrap();
        assert_eq!(got, argv("diffloss weighting dump --n 3 --lmin -1 --seed 4 --n 5"));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn two_level_paths_only() {
        assert_eq!(expand_config(argv("diffloss lowbit --bits 1")).unwrap(), argv("diffloss lowbit --bits 1"));
        assert_eq!(expand_config(argv("diffloss verify all")).unwrap(), argv("diffloss verify all"));
        assert_eq!(expand_config(argv("diffloss train mog1d")).unwrap(), argv("diffloss train mog1d"));
    }

    #[test]
    fn library_errors_map_to_exit_codes() {
        assert!(matches!(Failure::from(diffloss::Error::InvalidArgument("x".into())), Failure::Usage(_)));
        assert!(matches!(Failure::from(diffloss::Error::Numerical("x".into())), Failure::Failed(_)));
    }
}
