//! The `simulate`, `bd`, `nbd`, `metrics` and `sweep` commands.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use petbd::fftconv::ConvOperator;
use petbd::metrics::{isnr, rsnr};
use petbd::phantom::{make_gaussian_psf, make_phantom, simulate_observation, trial_seed};
use petbd::solver::{blind_deconvolve, nonblind_deconvolve, BdResult, SolveTrace};
use petbd::{pgrid, Image, Psf, RegionMask};

use crate::config::{bsnr_value, RunConfig, REFERENCE_TABLE};
use crate::error::CliError;

/// Where and how command outputs are written.
#[derive(Debug, Clone)]
pub struct Output {
    pub dir: PathBuf,
    /// Also export every raster as CSV next to its PGRID file.
    pub csv: bool,
}

impl Output {
    pub fn new(dir: impl Into<PathBuf>, csv: bool) -> Self {
        Self {
            dir: dir.into(),
            csv,
        }
    }

    fn sub(&self, name: &str) -> Output {
        Output::new(self.dir.join(name), self.csv)
    }

    fn ensure(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", self.dir.display())))
    }

    fn write_image(&self, name: &str, img: &Image) -> Result<PathBuf, CliError> {
        let path = self.dir.join(format!("{name}.pgrid"));
        write_image_file(&path, img)?;
        if self.csv {
            let csv = self.dir.join(format!("{name}.csv"));
            with_writer(&csv, |w| pgrid::write_image_csv(w, img))?;
        }
        Ok(path)
    }

    fn write_mask(&self, name: &str, mask: &RegionMask) -> Result<PathBuf, CliError> {
        let path = self.dir.join(format!("{name}.pgrid"));
        write_mask_file(&path, mask)?;
        if self.csv {
            let csv = self.dir.join(format!("{name}.csv"));
            with_writer(&csv, |w| pgrid::write_mask_csv(w, mask))?;
        }
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    fn write_trace(&self, trace: &SolveTrace) -> Result<PathBuf, CliError> {
        let path = self.dir.join("trace.csv");
        with_writer(&path, |w| write_trace_csv(w, trace))?;
        Ok(path)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn with_writer(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

pub fn write_image_file(path: &Path, img: &Image) -> Result<(), CliError> {
    with_writer(path, |w| pgrid::write_image(w, img))
}

pub fn write_mask_file(path: &Path, mask: &RegionMask) -> Result<(), CliError> {
    with_writer(path, |w| pgrid::write_mask(w, mask))
}

pub fn read_image_file(path: &Path) -> Result<Image, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    pgrid::read_image(&mut BufReader::new(file)).map_err(|e| io_err(path, e))
}

pub fn read_mask_file(path: &Path) -> Result<RegionMask, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    pgrid::read_mask(&mut BufReader::new(file)).map_err(|e| io_err(path, e))
}

pub fn write_trace_csv(w: &mut impl Write, trace: &SolveTrace) -> std::io::Result<()> {
    writeln!(
        w,
        "iteration,rho,objective_start,objective_mid,objective,residual_norm,tv,\
         x_nonneg,grad_zero_on_omega,h_on_simplex,masked_gradient,photometry,x_accepted"
    )?;
    for r in &trace.rows {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{},{:?},{:?},{}",
            r.iteration,
            r.rho,
            r.objective_start,
            r.objective_mid,
            r.objective,
            r.residual_norm,
            r.tv,
            r.feasibility.x_nonneg,
            r.feasibility.grad_zero_on_omega,
            r.feasibility.h_on_simplex,
            r.masked_gradient,
            r.photometry,
            r.x_accepted
        )?;
    }
    Ok(())
}

fn bsnr_label(bsnr_db: f64) -> String {
    format!("bsnr_{bsnr_db}")
}

/// One simulated observation in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    #[serde(deserialize_with = "bsnr_value")]
    pub bsnr_db: f64,
    pub trial: usize,
    pub seed: u64,
    pub sigma_n: f64,
    pub path: PathBuf,
    /// Independent realization reserved for the non-blind pass.
    pub nbd_seed: Option<u64>,
    pub nbd_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateManifest {
    pub config: RunConfig,
    pub base_seed: u64,
    pub seed_rule: String,
    pub x_path: PathBuf,
    pub h_path: PathBuf,
    pub omega_path: PathBuf,
    pub observations: Vec<ObservationRecord>,
}

const SEED_RULE: &str = "trial seed = splitmix64(base ^ splitmix64((bsnr_index << 40) ^ \
                         (trial << 8) ^ realization)); realization 0 feeds the blind pass, \
                         1 the independent non-blind observation; noise is ChaCha8 seeded \
                         with the trial seed";

/// Ground truth of the configured phantom experiment.
pub struct Truth {
    pub x: Image,
    pub h: Psf,
    pub omega: RegionMask,
}

pub fn truth(cfg: &RunConfig) -> Result<Truth, CliError> {
    let (x, omega) = make_phantom(&cfg.phantom.spec())?;
    let h = make_gaussian_psf(cfg.phantom.n, cfg.phantom.psf_sigma)?;
    Ok(Truth { x, h, omega })
}

/// Writes the phantom, PSF, mask and one observation per (BSNR, trial).
pub fn cmd_simulate(cfg: &RunConfig, out: &Output) -> Result<SimulateManifest, CliError> {
    out.ensure()?;
    let t = truth(cfg)?;
    let x_path = out.write_image("x", &t.x)?;
    let h_path = out.write_image("h", &t.h)?;
    let omega_path = out.write_mask("omega", &t.omega)?;

    let base = cfg.experiment.seed;
    let mut observations = Vec::new();
    for (bi, &bsnr_db) in cfg.experiment.bsnr_db.iter().enumerate() {
        for trial in 0..cfg.experiment.trials {
            let dir = out
                .sub(&bsnr_label(bsnr_db))
                .sub(&format!("trial_{trial:02}"));
            dir.ensure()?;
            let seed = trial_seed(base, bi as u64, trial as u64, 0);
            let (y, sigma_n) = simulate_observation(&t.x, &t.h, bsnr_db, seed)?;
            let path = dir.write_image("y", &y)?;
            let (nbd_seed, nbd_path) = if cfg.experiment.independent_nbd_observation {
                let s = trial_seed(base, bi as u64, trial as u64, 1);
                let (y2, _) = simulate_observation(&t.x, &t.h, bsnr_db, s)?;
                (Some(s), Some(dir.write_image("y_nbd", &y2)?))
            } else {
                (None, None)
            };
            observations.push(ObservationRecord {
                bsnr_db,
                trial,
                seed,
                sigma_n,
                path,
                nbd_seed,
                nbd_path,
            });
        }
    }
    let manifest = SimulateManifest {
        config: cfg.clone(),
        base_seed: base,
        seed_rule: SEED_RULE.into(),
        x_path,
        h_path,
        omega_path,
        observations,
    };
    out.write_json("manifest.json", &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdSummary {
    pub iterations: usize,
    pub final_rho: f64,
    pub epsilon: f64,
    pub objective: f64,
    pub residual_norm: f64,
    pub x_nonneg: bool,
    pub grad_zero_on_omega: bool,
    pub h_on_simplex: bool,
    pub masked_gradient: f64,
    pub photometry: f64,
    pub rejected_x_steps: usize,
}

impl BdSummary {
    fn from_result(r: &BdResult) -> Self {
        let last = r.trace.last().expect("at least one outer iteration");
        Self {
            iterations: r.trace.len(),
            final_rho: r.rho,
            epsilon: r.epsilon,
            objective: last.objective,
            residual_norm: last.residual_norm,
            x_nonneg: last.feasibility.x_nonneg,
            grad_zero_on_omega: last.feasibility.grad_zero_on_omega,
            h_on_simplex: last.feasibility.h_on_simplex,
            masked_gradient: last.masked_gradient,
            photometry: last.photometry,
            rejected_x_steps: r.trace.rows.iter().filter(|r| !r.x_accepted).count(),
        }
    }
}

fn write_bd(out: &Output, result: &BdResult) -> Result<BdSummary, CliError> {
    out.ensure()?;
    out.write_image("x_b", &result.x_b)?;
    out.write_image("h_b", &result.h_b)?;
    out.write_trace(&result.trace)?;
    let summary = BdSummary::from_result(result);
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

/// Blind deconvolution of one observation.
pub fn cmd_bd(
    y_path: &Path,
    omega_path: &Path,
    cfg: &RunConfig,
    out: &Output,
) -> Result<BdSummary, CliError> {
    let y = read_image_file(y_path)?;
    let omega = read_mask_file(omega_path)?;
    let result = blind_deconvolve(&y, &omega, &cfg.bd_config())?;
    write_bd(out, &result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbdSummary {
    pub iterations: usize,
    pub final_rho: f64,
    pub residual_norm: f64,
    pub x_nonneg: bool,
    pub photometry: f64,
}

/// Non-blind deconvolution with a given PSF.
pub fn cmd_nbd(
    y_path: &Path,
    h_path: &Path,
    cfg: &RunConfig,
    out: &Output,
) -> Result<NbdSummary, CliError> {
    let y = read_image_file(y_path)?;
    let h = Psf::new(read_image_file(h_path)?);
    let (x, summary) = run_nbd(&y, &h, cfg)?;
    out.ensure()?;
    out.write_image("x_nbd", &x.0)?;
    out.write_trace(&x.1)?;
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

fn run_nbd(
    y: &Image,
    h: &Psf,
    cfg: &RunConfig,
) -> Result<((Image, SolveTrace), NbdSummary), CliError> {
    let r = nonblind_deconvolve(y, h, &cfg.nbd_config())?;
    let last = r.trace.last().expect("at least one outer iteration");
    let summary = NbdSummary {
        iterations: r.trace.len(),
        final_rho: r.rho,
        residual_norm: last.residual_norm,
        x_nonneg: last.feasibility.x_nonneg,
        photometry: last.photometry,
    };
    Ok(((r.x, r.trace), summary))
}

/// Quality figures of one reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub isnr_db: Option<f64>,
    pub rsnr_aligned_db: Option<f64>,
    pub rsnr_raw_db: Option<f64>,
    pub bsnr_realized_db: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "isnr_db,rsnr_aligned_db,rsnr_raw_db,bsnr_realized_db";

    pub fn csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        format!(
            "{},{},{},{:.6}",
            f(self.isnr_db),
            f(self.rsnr_aligned_db),
            f(self.rsnr_raw_db),
            self.bsnr_realized_db
        )
    }
}

/// Realized BSNR of `y` against the noiseless blur `h * x`.
pub fn realized_bsnr(x_true: &Image, h_true: &Psf, y: &Image) -> Result<f64, CliError> {
    let b = ConvOperator::new(h_true).apply(x_true)?;
    y.ensure_same_grid(&b)?;
    let noise = y.sub(&b);
    Ok(petbd::metrics::bsnr(&b, noise.variance().sqrt()))
}

pub fn metrics_row(
    x_true: &Image,
    h_true: &Psf,
    y: &Image,
    x_est: Option<&Image>,
    h_est: Option<&Psf>,
) -> Result<MetricsRow, CliError> {
    let isnr_db = x_est.map(|x| isnr(x_true, y, x)).transpose()?;
    let rsnr_aligned_db = h_est.map(|h| rsnr(h_true, h, true)).transpose()?;
    let rsnr_raw_db = h_est.map(|h| rsnr(h_true, h, false)).transpose()?;
    Ok(MetricsRow {
        isnr_db,
        rsnr_aligned_db,
        rsnr_raw_db,
        bsnr_realized_db: realized_bsnr(x_true, h_true, y)?,
    })
}

pub struct MetricsInputs<'a> {
    pub x_true: &'a Path,
    pub h_true: &'a Path,
    pub y: &'a Path,
    pub x_est: Option<&'a Path>,
    pub h_est: Option<&'a Path>,
}

/// Computes one metrics row from files; appends it (with a header for a new
/// file) to `append` when given.
pub fn cmd_metrics(
    inputs: &MetricsInputs<'_>,
    append: Option<&Path>,
) -> Result<MetricsRow, CliError> {
    let x_true = read_image_file(inputs.x_true)?;
    let h_true = Psf::new(read_image_file(inputs.h_true)?);
    let y = read_image_file(inputs.y)?;
    let x_est = inputs.x_est.map(read_image_file).transpose()?;
    let h_est = inputs
        .h_est
        .map(|p| read_image_file(p).map(Psf::new))
        .transpose()?;
    let row = metrics_row(&x_true, &h_true, &y, x_est.as_ref(), h_est.as_ref())?;
    if let Some(path) = append {
        let fresh = !path.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        let mut text = String::new();
        if fresh {
            text.push_str(MetricsRow::HEADER);
            text.push('\n');
        }
        text.push_str(&row.csv());
        text.push('\n');
        f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    }
    Ok(row)
}

/// Outcome of one (BSNR, trial) cell of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    #[serde(deserialize_with = "bsnr_value")]
    pub bsnr_db: f64,
    pub trial: usize,
    pub seed: u64,
    pub sigma_n: f64,
    pub rsnr_h_aligned_db: f64,
    pub rsnr_h_raw_db: f64,
    pub isnr_xb_db: f64,
    pub isnr_xnbd_db: f64,
    pub bsnr_realized_db: f64,
    pub iterations: usize,
    pub final_rho: f64,
    pub masked_gradient_xb: f64,
    pub masked_gradient_xnbd: f64,
    pub max_abs_xb: f64,
    /// Largest relative objective increase over one outer iteration
    /// (at that iteration's rho); non-positive means monotone descent.
    pub worst_relative_ascent: f64,
}

/// Mean figures for one BSNR level next to the published values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(deserialize_with = "bsnr_value")]
    pub bsnr_db: f64,
    pub trials: usize,
    pub mean_rsnr_h_aligned_db: f64,
    pub mean_rsnr_h_raw_db: f64,
    pub mean_isnr_xb_db: f64,
    pub mean_isnr_xnbd_db: f64,
    pub reference_rsnr_h_db: Option<f64>,
    pub reference_isnr_x_db: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialResult>,
}

impl SweepReport {
    pub fn table(&self) -> String {
        let mut s = String::from(
            "BSNR[dB]  RSNR(h_B)[dB]  ref    RSNR raw  ISNR(x_B)[dB]  ref    ISNR(x_NBD)\n",
        );
        let r = |v: Option<f64>| v.map_or("   -  ".to_string(), |v| format!("{v:6.2}"));
        for row in &self.rows {
            s.push_str(&format!(
                "{:8.1}  {:13.2}  {}  {:8.2}  {:13.2}  {}  {:11.2}\n",
                row.bsnr_db,
                row.mean_rsnr_h_aligned_db,
                r(row.reference_rsnr_h_db),
                row.mean_rsnr_h_raw_db,
                row.mean_isnr_xb_db,
                r(row.reference_isnr_x_db),
                row.mean_isnr_xnbd_db,
            ));
        }
        s
    }
}

fn worst_relative_ascent(trace: &SolveTrace) -> f64 {
    trace
        .rows
        .iter()
        .map(|r| (r.objective - r.objective_start) / r.objective_start.abs().max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Runs simulation, blind and non-blind deconvolution and scoring for one
/// cell of the sweep, writing its outputs under `out` when given.
pub fn run_trial(
    cfg: &RunConfig,
    t: &Truth,
    bsnr_index: usize,
    trial: usize,
    out: Option<&Output>,
) -> Result<TrialResult, CliError> {
    let bsnr_db = cfg.experiment.bsnr_db[bsnr_index];
    let base = cfg.experiment.seed;
    let seed = trial_seed(base, bsnr_index as u64, trial as u64, 0);
    let (y, sigma_n) = simulate_observation(&t.x, &t.h, bsnr_db, seed)?;
    let bd = blind_deconvolve(&y, &t.omega, &cfg.bd_config())?;

    let y_nbd = if cfg.experiment.independent_nbd_observation {
        let s = trial_seed(base, bsnr_index as u64, trial as u64, 1);
        simulate_observation(&t.x, &t.h, bsnr_db, s)?.0
    } else {
        y.clone()
    };
    let ((x_nbd, nbd_trace), nbd_summary) = run_nbd(&y_nbd, &bd.h_b, cfg)?;

    if let Some(out) = out {
        let dir = out
            .sub(&bsnr_label(bsnr_db))
            .sub(&format!("trial_{trial:02}"));
        dir.ensure()?;
        dir.write_image("y", &y)?;
        let bd_dir = dir.sub("bd");
        write_bd(&bd_dir, &bd)?;
        let nbd_dir = dir.sub("nbd");
        nbd_dir.ensure()?;
        nbd_dir.write_image("x_nbd", &x_nbd)?;
        nbd_dir.write_trace(&nbd_trace)?;
        nbd_dir.write_json("summary.json", &nbd_summary)?;
    }

    Ok(TrialResult {
        bsnr_db,
        trial,
        seed,
        sigma_n,
        rsnr_h_aligned_db: rsnr(&t.h, &bd.h_b, true)?,
        rsnr_h_raw_db: rsnr(&t.h, &bd.h_b, false)?,
        isnr_xb_db: isnr(&t.x, &y, &bd.x_b)?,
        isnr_xnbd_db: isnr(&t.x, &y_nbd, &x_nbd)?,
        bsnr_realized_db: realized_bsnr(&t.x, &t.h, &y)?,
        iterations: bd.trace.len(),
        final_rho: bd.rho,
        masked_gradient_xb: petbd::solver::masked_gradient_max(&bd.x_b, &t.omega),
        masked_gradient_xnbd: petbd::solver::masked_gradient_max(&x_nbd, &t.omega),
        max_abs_xb: bd.x_b.max_abs(),
        worst_relative_ascent: worst_relative_ascent(&bd.trace),
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c as f64
}

/// The full BSNR x trial grid. `jobs` bounds the number of trials run
/// concurrently; results do not depend on it.
pub fn cmd_sweep(
    cfg: &RunConfig,
    out: Option<&Output>,
    jobs: usize,
) -> Result<SweepReport, CliError> {
    let t = truth(cfg)?;
    if let Some(out) = out {
        out.ensure()?;
        out.write_image("x", &t.x)?;
        out.write_image("h", &t.h)?;
        out.write_mask("omega", &t.omega)?;
    }
    let cells: Vec<(usize, usize)> = (0..cfg.experiment.bsnr_db.len())
        .flat_map(|b| (0..cfg.experiment.trials).map(move |tr| (b, tr)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let trials: Vec<TrialResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(b, tr)| run_trial(cfg, &t, b, tr, out))
            .collect::<Result<_, _>>()
    })?;

    let rows = cfg
        .experiment
        .bsnr_db
        .iter()
        .map(|&bsnr_db| {
            let cell = || trials.iter().filter(move |r| r.bsnr_db == bsnr_db);
            let reference = REFERENCE_TABLE.iter().find(|r| r.0 == bsnr_db);
            SweepRow {
                bsnr_db,
                trials: cell().count(),
                mean_rsnr_h_aligned_db: mean(cell().map(|r| r.rsnr_h_aligned_db)),
                mean_rsnr_h_raw_db: mean(cell().map(|r| r.rsnr_h_raw_db)),
                mean_isnr_xb_db: mean(cell().map(|r| r.isnr_xb_db)),
                mean_isnr_xnbd_db: mean(cell().map(|r| r.isnr_xnbd_db)),
                reference_rsnr_h_db: reference.map(|r| r.1),
                reference_isnr_x_db: reference.map(|r| r.2),
            }
        })
        .collect();
    let report = SweepReport { rows, trials };

    if let Some(out) = out {
        out.write_json("report.json", &report)?;
        let path = out.dir.join("results.csv");
        with_writer(&path, |w| {
            writeln!(
                w,
                "bsnr_db,trial,seed,sigma_n,rsnr_h_aligned_db,rsnr_h_raw_db,isnr_xb_db,\
                 isnr_xnbd_db,bsnr_realized_db,iterations,final_rho"
            )?;
            for r in &report.trials {
                writeln!(
                    w,
                    "{},{},{},{:?},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:?}",
                    r.bsnr_db,
                    r.trial,
                    r.seed,
                    r.sigma_n,
                    r.rsnr_h_aligned_db,
                    r.rsnr_h_raw_db,
                    r.isnr_xb_db,
                    r.isnr_xnbd_db,
                    r.bsnr_realized_db,
                    r.iterations,
                    r.final_rho
                )?;
            }
            Ok(())
        })?;
        fs::write(out.dir.join("table.txt"), report.table())
            .map_err(|e| io_err(&out.dir.join("table.txt"), e))?;
    }
    Ok(report)
}
