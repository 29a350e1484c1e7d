use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{ingest_stream, CliError, Command, InputSource, RunManifest};
use crate::bench::{expressed_variance, generate, SyntheticSpec};
use crate::engine::{load_checkpoint, Engine, EngineConfig, Mode, Sample, StepReport};
use crate::error::Error;

type SampleSource = Box<dyn Iterator<Item = Result<Sample<f64>, CliError>>>;

pub const METRICS_HEADER: &str = "t,ev,surrogate,eta,coeff_iters,wall_nanos";

/// Runs the manifest's command, writing all outputs under `output_dir`.
pub fn execute(manifest: &RunManifest) -> Result<(), CliError> {
    fs::create_dir_all(&manifest.output_dir)?;
    match manifest.command {
        Command::Grid => run_grid(manifest).map(|_| ()),
        Command::Decompose | Command::Complete | Command::SynthBench => run_single(manifest),
    }
}

struct MetricsWriter {
    out: BufWriter<File>,
    every: u64,
    timing: bool,
    last_written: u64,
}

impl MetricsWriter {
    fn create(path: &Path, fingerprint: &str, every: u64, timing: bool) -> Result<Self, CliError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# fingerprint={fingerprint}")?;
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out, every, timing, last_written: 0 })
    }

    fn row(&mut self, r: &StepReport<f64>, ev: Option<f64>) -> Result<(), CliError> {
        let ev = ev.map(|v| v.to_string()).unwrap_or_default();
        let nanos = if self.timing { r.wall_nanos } else { 0 };
        writeln!(self.out, "{},{ev},{},{},{},{nanos}", r.t, r.surrogate, r.eta, r.coeff_iterations)?;
        self.last_written = r.t;
        Ok(())
    }
}

fn write_basis(path: &Path, basis: &DMatrix<f64>) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    for i in 0..basis.nrows() {
        let row: Vec<String> = basis.row(i).iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn run_single(manifest: &RunManifest) -> Result<(), CliError> {
    let config = manifest.config.clone();
    let mut engine = match &manifest.resume {
        Some(path) => Engine::resume(config.clone(), load_checkpoint(path)?)?,
        None => Engine::new(config.clone())?,
    };
    // a resumed run continues after the samples its checkpoint has seen
    let skip = engine.state().t as usize;
    let masked = matches!(config.mode, Mode::Completion { .. });

    let (source, truth): (SampleSource, Option<DMatrix<f64>>) =
        match &manifest.input {
            InputSource::File(path) => (Box::new(ingest_stream(path, config.p, masked)?), None),
            InputSource::Synth(spec) => {
                let stream = generate::<f64>(spec)?;
                let truth = stream.ground_truth().clone();
                (Box::new(stream.map(|c| Ok(c.sample))), Some(truth))
            }
        };

    let out = &manifest.output_dir;
    let checkpoint_path = out.join("state.omrx");
    let mut metrics =
        MetricsWriter::create(&out.join("metrics.csv"), &manifest.fingerprint(), manifest.report_every, manifest.timing)?;
    let ev_of = |engine: &Engine<f64>| -> Result<Option<f64>, Error> {
        truth.as_ref().map(|u| expressed_variance(u, &engine.state().basis)).transpose()
    };

    let mut last = None;
    for sample in source.skip(skip) {
        let report = engine.step(&sample?)?;
        if report.t % metrics.every == 0 {
            metrics.row(&report, ev_of(&engine)?)?;
        }
        if config.checkpoint_every > 0 && report.t % config.checkpoint_every == 0 {
            engine.save_checkpoint(&checkpoint_path)?;
        }
        last = Some(report);
    }
    if let Some(report) = last {
        if metrics.last_written != report.t {
            metrics.row(&report, ev_of(&engine)?)?;
        }
        if let Some(ev) = ev_of(&engine)? {
            log::info!("t = {}: EV = {ev}", report.t);
        }
    }
    metrics.out.flush()?;
    engine.save_checkpoint(&checkpoint_path)?;
    write_basis(&out.join("basis.csv"), &engine.state().basis)?;
    Ok(())
}

/// One repetition of one grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub d: usize,
    pub rho: f64,
    pub rep: usize,
    pub seed: u64,
    pub ev: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    /// Sorted by `d`, then `rho`, then `rep`, in the order given on the command line.
    pub cells: Vec<GridCell>,
}

fn derive_seed(master: u64, rep: usize) -> u64 {
    let digest = Sha256::digest(format!("grid-seed:{master}:{rep}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn run_cell(base: &SyntheticSpec, template: &EngineConfig<f64>, d: usize, rho: f64, seed: u64) -> Result<f64, Error> {
    let spec = SyntheticSpec { d_true: d, rho, seed, ..base.clone() };
    let stream = generate::<f64>(&spec)?;
    let truth = stream.ground_truth().clone();
    let mut config = template.clone();
    config.d = d;
    config.init_seed = seed;
    let mut engine = Engine::new(config)?;
    for sample in stream.samples() {
        engine.step(&sample)?;
    }
    expressed_variance(&truth, &engine.state().basis)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every `(d, rho, rep)` cell in parallel and writes `grid.csv`,
/// `grid_summary.csv` and `heatmap.csv`. A failing cell is recorded in the
/// status column and does not stop the others.
pub fn run_grid(manifest: &RunManifest) -> Result<GridOutcome, CliError> {
    let grid = manifest.grid.as_ref().ok_or_else(|| CliError::Usage("grid command needs --grid".into()))?;
    let InputSource::Synth(base) = &manifest.input else {
        return Err(CliError::Usage("grid runs on synthetic data only".into()));
    };
    let jobs: Vec<(usize, usize, usize)> = (0..grid.d_values.len())
        .flat_map(|di| (0..grid.rho_values.len()).flat_map(move |ri| (0..grid.reps).map(move |rep| (di, ri, rep))))
        .collect();

    let mut cells: Vec<((usize, usize, usize), GridCell)> = jobs
        .par_iter()
        .map(|&(di, ri, rep)| {
            let (d, rho) = (grid.d_values[di], grid.rho_values[ri]);
            let seed = derive_seed(manifest.seed, rep);
            let (ev, status) = match run_cell(base, &manifest.config, d, rho, seed) {
                Ok(ev) => (Some(ev), "ok".to_string()),
                Err(e) => (None, format!("error: {e}").replace(',', ";")),
            };
            ((di, ri, rep), GridCell { d, rho, rep, seed, ev, status })
        })
        .collect();
    cells.sort_by_key(|(k, _)| *k);
    let cells: Vec<GridCell> = cells.into_iter().map(|(_, c)| c).collect();

    fs::create_dir_all(&manifest.output_dir)?;
    let fingerprint = manifest.fingerprint();
    let out = &manifest.output_dir;

    let mut f = BufWriter::new(File::create(out.join("grid.csv"))?);
    writeln!(f, "# fingerprint={fingerprint}")?;
    writeln!(f, "d,rho,rep,seed,ev_final,status")?;
    for c in &cells {
        let ev = c.ev.map(|v| v.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{},{},{ev},{}", c.d, c.rho, c.rep, c.seed, c.status)?;
    }
    f.flush()?;

    let mut summary = BufWriter::new(File::create(out.join("grid_summary.csv"))?);
    writeln!(summary, "# fingerprint={fingerprint}")?;
    writeln!(summary, "d,rho,reps_ok,ev_mean,ev_std")?;
    let mut heat = BufWriter::new(File::create(out.join("heatmap.csv"))?);
    writeln!(heat, "# fingerprint={fingerprint}")?;
    let header: Vec<String> = grid.rho_values.iter().map(|r| r.to_string()).collect();
    writeln!(heat, "d,{}", header.join(","))?;
    for (di, chunk) in cells.chunks(grid.rho_values.len() * grid.reps).enumerate() {
        let mut row = vec![grid.d_values[di].to_string()];
        for cell in chunk.chunks(grid.reps) {
            let evs: Vec<f64> = cell.iter().filter_map(|c| c.ev).collect();
            let (mean, std) = if evs.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&evs) };
            writeln!(summary, "{},{},{},{mean},{std}", cell[0].d, cell[0].rho, evs.len())?;
            row.push(mean.to_string());
        }
        writeln!(heat, "{}", row.join(","))?;
    }
    summary.flush()?;
    heat.flush()?;
    Ok(GridOutcome { cells })
}
