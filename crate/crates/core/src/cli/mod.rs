//! Command-line front end.
//!
//! Settings come from three layers: built-in defaults, an optional flat
//! `key = value` file given by `--config`, and flags. Flags win over the
//! file, the file wins over defaults.

mod ingest;
mod run;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use sha2::{Digest, Sha256};

use crate::bench::SyntheticSpec;
use crate::engine::{EngineConfig, Mode, NoiseModel, DEFAULT_COMPLETION_C};
use crate::error::Error;

pub use ingest::{ingest_stream, SampleReader};
pub use run::{execute, run_grid, GridCell, GridOutcome, METRICS_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    /// `--help` / `--version` output.
    #[error("{0}")]
    Info(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Engine(#[from] Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Decompose,
    Complete,
    SynthBench,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeFlag {
    L1,
    L2,
    Mc,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputSource {
    File(PathBuf),
    Synth(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub d_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: Command,
    pub config: EngineConfig<f64>,
    pub input: InputSource,
    pub output_dir: PathBuf,
    pub report_every: u64,
    pub resume: Option<PathBuf>,
    pub grid: Option<GridSpec>,
    /// Record per-step wall time; off makes metrics files reproducible.
    pub timing: bool,
    pub seed: u64,
}

pub const DEFAULT_SYNTH: (usize, usize, usize, f64) = (400, 5000, 40, 0.1);
pub const DEFAULT_REPORT_EVERY: u64 = 50;

#[derive(Parser, Debug, Default)]
#[command(name = "omrmd", version, about = "Streaming max-norm regularized matrix decomposition and completion")]
struct Flags {
    #[arg(value_enum)]
    command: Option<Command>,
    #[arg(long, value_enum)]
    mode: Option<ModeFlag>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// "p,n,d,rho"
    #[arg(long)]
    synth: Option<String>,
    /// "d1,d2,...;rho1,rho2,...;reps"
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report_every: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_timing: bool,
}

const FILE_KEYS: &[&str] = &[
    "command",
    "mode",
    "p",
    "d",
    "lambda1",
    "lambda2",
    "epsilon",
    "c",
    "seed",
    "input",
    "synth",
    "grid",
    "checkpoint-every",
    "resume",
    "out",
    "report-every",
    "no-timing",
];

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| CliError::Parse { path: name.clone(), line: k + 1, message };
        let (key, value) = line.split_once('=').ok_or_else(|| parse_err("expected key = value".into()))?;
        let key = key.trim().replace('_', "-");
        if !FILE_KEYS.contains(&key.as_str()) {
            return Err(parse_err(format!("unknown key '{key}'")));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn from_file<T: std::str::FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError> {
    match file.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("config key '{key}': cannot parse '{v}'"))),
    }
}

fn pick<T: std::str::FromStr>(flag: Option<T>, file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => from_file(file, key),
    }
}

fn pick_enum<E: ValueEnum>(flag: Option<E>, file: &BTreeMap<String, String>, key: &str) -> Result<Option<E>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        None => Ok(None),
        Some(v) => E::from_str(v, true)
            .map(Some)
            .map_err(|_| CliError::Usage(format!("config key '{key}': unknown value '{v}'"))),
    }
}

/// Parses `"p,n,d,rho"`.
pub fn parse_synth(text: &str) -> Result<(usize, usize, usize, f64), CliError> {
    let bad = || CliError::Usage(format!("--synth expects \"p,n,d,rho\", got '{text}'"));
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(bad());
    }
    Ok((
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
        parts[3].parse().map_err(|_| bad())?,
    ))
}

/// Parses `"d1,d2;rho1,rho2;reps"`.
pub fn parse_grid(text: &str) -> Result<GridSpec, CliError> {
    let bad = |why: &str| CliError::Usage(format!("--grid expects \"dlist;rholist;reps\" ({why}), got '{text}'"));
    let parts: Vec<&str> = text.split(';').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad("three ';'-separated parts"));
    }
    let d_values = parts[0]
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad("integer d values"))?;
    let rho_values = parts[1]
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad("numeric rho values"))?;
    let reps = parts[2].parse().map_err(|_| bad("integer repetition count"))?;
    if d_values.is_empty() || rho_values.is_empty() || reps == 0 {
        return Err(bad("non-empty axes and reps ≥ 1"));
    }
    Ok(GridSpec { d_values, rho_values, reps })
}

/// Number of comma-separated fields on the first non-comment line.
fn peek_width(path: &Path) -> Result<usize, CliError> {
    use std::io::BufRead;
    let f = fs::File::open(path)?;
    for line in std::io::BufReader::new(f).lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            return Ok(t.split(',').count());
        }
    }
    Err(CliError::Parse { path: path.display().to_string(), line: 1, message: "file has no samples".into() })
}

/// Resolves `argv` (program name first) into a manifest.
pub fn parse_config<I, S>(argv: I) -> Result<RunManifest, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let flags = Flags::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
        _ => CliError::Usage(e.to_string().trim_end().to_string()),
    })?;
    let file = match &flags.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };

    let command = pick_enum(flags.command, &file, "command")?
        .ok_or_else(|| CliError::Usage("missing command (decompose | complete | synth-bench | grid)".into()))?;
    let input_path: Option<PathBuf> = pick(flags.input, &file, "input")?;
    let synth_text: Option<String> = pick(flags.synth, &file, "synth")?;
    if input_path.is_some() && synth_text.is_some() {
        return Err(CliError::Usage("--input and --synth are mutually exclusive".into()));
    }
    let grid_text: Option<String> = pick(flags.grid, &file, "grid")?;
    let seed = pick(flags.seed, &file, "seed")?.unwrap_or(0);

    let mode_flag = pick_enum(flags.mode, &file, "mode")?;
    let mode_flag = match (command, mode_flag) {
        (Command::Complete, None | Some(ModeFlag::Mc)) => ModeFlag::Mc,
        (Command::Complete, Some(_)) => return Err(CliError::Usage("complete runs only in --mode mc".into())),
        (_, Some(ModeFlag::Mc)) if command != Command::Decompose => {
            return Err(CliError::Usage("--mode mc is only valid with decompose or complete".into()))
        }
        (_, Some(m)) => m,
        (_, None) => ModeFlag::L1,
    };

    if matches!(command, Command::SynthBench | Command::Grid) && input_path.is_some() {
        return Err(CliError::Usage("synth-bench and grid generate their own data; drop --input".into()));
    }
    let grid = match (command, grid_text) {
        (Command::Grid, Some(g)) => Some(parse_grid(&g)?),
        (Command::Grid, None) => return Err(CliError::Usage("grid needs --grid \"dlist;rholist;reps\"".into())),
        (_, Some(_)) => return Err(CliError::Usage("--grid is only valid with the grid command".into())),
        (_, None) => None,
    };

    let flag_p = pick(flags.p, &file, "p")?;
    let flag_d = pick(flags.d, &file, "d")?;
    let (input, p, d) = match input_path {
        Some(path) => {
            let p = match flag_p {
                Some(p) => p,
                None => peek_width(&path)?,
            };
            let d = flag_d.ok_or_else(|| CliError::Usage("file input needs --d".into()))?;
            (InputSource::File(path), p, d)
        }
        None => {
            let (sp, sn, sd, srho) = match synth_text {
                Some(t) => parse_synth(&t)?,
                None => DEFAULT_SYNTH,
            };
            if let Some(p) = flag_p {
                if p != sp {
                    return Err(CliError::Usage(format!("--p {p} disagrees with synthetic p = {sp}")));
                }
            }
            let mut spec = SyntheticSpec::new(sp, sn, sd, srho, seed);
            if mode_flag == ModeFlag::Mc {
                // completion data: rho is the hidden fraction, no corruption
                spec.rho = 0.0;
                spec.unobserved = srho;
            }
            (InputSource::Synth(spec), sp, flag_d.unwrap_or(sd))
        }
    };

    let mode = match mode_flag {
        ModeFlag::L1 => Mode::Decomposition(NoiseModel::L1),
        ModeFlag::L2 => Mode::Decomposition(NoiseModel::L2Column),
        ModeFlag::Mc => Mode::Completion { c: pick(flags.c, &file, "c")?.unwrap_or(DEFAULT_COMPLETION_C) },
    };
    let mut config = EngineConfig::new(p, d, mode);
    if let Some(v) = pick(flags.lambda1, &file, "lambda1")? {
        config.solver.lambda1 = v;
    }
    if let Some(v) = pick(flags.lambda2, &file, "lambda2")? {
        config.solver.lambda2 = v;
    }
    if let Some(v) = pick(flags.epsilon, &file, "epsilon")? {
        config.solver.epsilon_jitter = v;
    }
    config.init_seed = seed;
    config.checkpoint_every = pick(flags.checkpoint_every, &file, "checkpoint-every")?.unwrap_or(0);
    if grid.is_none() {
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }

    let no_timing = flags.no_timing || from_file::<bool>(&file, "no-timing")?.unwrap_or(false);
    let report_every = pick(flags.report_every, &file, "report-every")?.unwrap_or(DEFAULT_REPORT_EVERY);
    if report_every == 0 {
        return Err(CliError::Usage("--report-every must be at least 1".into()));
    }
    Ok(RunManifest {
        command,
        config,
        input,
        output_dir: pick(flags.out, &file, "out")?.unwrap_or_else(|| PathBuf::from("omrmd-out")),
        report_every,
        resume: pick(flags.resume, &file, "resume")?,
        grid,
        timing: !no_timing,
        seed,
    })
}

impl RunManifest {
    /// Hash of every setting that affects results (the output directory is
    /// left out so identical runs in different places agree).
    pub fn fingerprint(&self) -> String {
        let c = &self.config;
        let s = &c.solver;
        let input = match &self.input {
            InputSource::File(p) => format!("file:{}", p.display()),
            InputSource::Synth(spec) => format!("synth:{:016x}", spec.fingerprint()),
        };
        let text = format!(
            "command={:?};mode={:?};p={};d={};lambda1={:e};lambda2={:e};epsilon={:e};bcd={:e}/{};\
             bisection={:e}/{};passes={}/{}/{};seed={};input={input};report_every={};grid={:?};timing={};resume={:?}",
            self.command,
            c.mode,
            c.p,
            c.d,
            s.lambda1,
            s.lambda2,
            s.epsilon_jitter,
            s.bcd_tol,
            s.bcd_max_iters,
            s.bisection_tol,
            s.bisection_max_iters,
            s.basis_burn_in,
            s.basis_burn_in_passes,
            s.basis_passes,
            self.seed,
            self.report_every,
            self.grid,
            self.timing,
            self.resume,
        );
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
