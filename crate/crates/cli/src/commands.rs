use std::collections::HashSet;
use std::fmt::Display;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::Serialize;

use cmlfactor::experiments::{
    estimator_sampling_study, median, run_calibration, run_tasks, summarize, summarize_calibration, CalibrationOptions,
    SweepConfig, SweepTask,
};
use cmlfactor::factor_analysis::{analyze_panel, baseline_spectrum, DetectionMode, SpectrumReport};
use cmlfactor::io::{
    read_empirical_csv, read_json, read_panel_csv, read_records_csv, write_calibration_csv, write_factor_scores_csv,
    write_json, write_matrix_csv, write_panel_csv, write_records_csv, write_summary_csv, FactorReport, PanelMetadata,
};
use cmlfactor::network::build_coupling;
use cmlfactor::seeds::{derive_seed, stream};
use cmlfactor::simulator::{simulate_panel, SimConfig};

use crate::config::{self, CalibrateConfig, MomentsConfig};
use crate::manifest::{CommandKind, RunManifest, MANIFEST_FILE};
use crate::{Cli, Command};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Runtime,
    Config,
    Output,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Runtime => 1,
            Kind::Config => 2,
            Kind::Output => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub source: anyhow::Error,
}

type CliResult<T> = Result<T, CliError>;

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        kind: Kind::Config,
        source: e.into(),
    }
}

fn output_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        kind: Kind::Output,
        source: e.into(),
    }
}

impl From<cmlfactor::Error> for CliError {
    fn from(e: cmlfactor::Error) -> Self {
        use cmlfactor::Error as E;
        let kind = match e {
            E::InvalidParameter(_)
            | E::Domain { .. }
            | E::Format { .. }
            | E::DimensionMismatch { .. }
            | E::Csv(_)
            | E::Json(_) => Kind::Config,
            _ => Kind::Runtime,
        };
        CliError { kind, source: e.into() }
    }
}

fn context<E: Into<CliError>>(what: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| {
        let mut err: CliError = e.into();
        err.source = err.source.context(what.to_string());
        err
    }
}

struct OutDir {
    path: PathBuf,
}

impl OutDir {
    fn create(path: &Path) -> CliResult<Self> {
        fs::create_dir_all(path).map_err(|e| output_err(anyhow!("cannot create {}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write<F>(&self, name: &str, body: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> cmlfactor::Result<()>,
    {
        let path = self.file(name);
        let fail = |e: &dyn Display| output_err(anyhow!("cannot write {}: {e}", path.display()));
        let mut w = BufWriter::new(File::create(&path).map_err(|e| fail(&e))?);
        body(&mut w).map_err(|e| fail(&e))?;
        w.flush().map_err(|e| fail(&e))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, |w| write_json(w, value))
    }

    fn manifest(&self, cmd: CommandKind, config: Option<&Path>, seed: u64) -> CliResult<()> {
        self.json(MANIFEST_FILE, &RunManifest::new(cmd, config, seed, &self.path))
    }
}

fn open_input(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| config_err(anyhow!("cannot open {}: {e}", path.display())))
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        set_workers(n)?;
    }
    match &cli.command {
        Command::Simulate {
            config,
            export_matrices,
        } => simulate(cli, config, *export_matrices),
        Command::Analyze {
            panel,
            baseline,
            n_baseline,
            leading_run,
        } => analyze(cli, panel, baseline, *n_baseline, *leading_run),
        Command::Sweep { config, subsets } => sweep(cli, config.as_deref(), subsets),
        Command::Calibrate {
            empirical,
            config,
            grid_stride,
        } => calibrate(cli, empirical, config.as_deref(), *grid_stride),
        Command::Moments { config } => moments(cli, config.as_deref()),
    }
}

#[cfg(feature = "parallel")]
fn set_workers(n: usize) -> CliResult<()> {
    if n == 0 {
        return Err(config_err(anyhow!("--workers must be at least 1")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError {
            kind: Kind::Runtime,
            source: e.into(),
        })
}

#[cfg(not(feature = "parallel"))]
fn set_workers(n: usize) -> CliResult<()> {
    if n == 0 {
        return Err(config_err(anyhow!("--workers must be at least 1")));
    }
    if n > 1 {
        eprintln!("warning: built without the parallel feature; running on one worker");
    }
    Ok(())
}

/// `panel.csv` -> `panel.meta.json`.
pub fn sidecar_path(panel: &Path) -> PathBuf {
    panel.with_extension("meta.json")
}

fn simulate(cli: &Cli, config_path: &Path, export_matrices: bool) -> CliResult<()> {
    let mut cfg: SimConfig = config::load(config_path).map_err(config_err)?;
    if let Some(seed) = cli.seed {
        cfg.net.seed = derive_seed(seed, &[stream::NETWORK]);
        cfg.sim_seed = derive_seed(seed, &[stream::INITIAL]);
    }
    cfg.validate().map_err(context(config_path.display()))?;
    let net = build_coupling(&cfg.net)?;
    let panel = simulate_panel(&cfg, &net)?;

    let out = OutDir::create(&cli.out)?;
    out.write("panel.csv", |w| write_panel_csv(w, &panel))?;
    out.json("panel.meta.json", &PanelMetadata::new(&cfg, &panel))?;
    if export_matrices {
        out.write("laplacian.csv", |w| write_matrix_csv(w, &net.laplacian))?;
        out.write("rotation.csv", |w| write_matrix_csv(w, &net.rotation))?;
        out.write("coupling.csv", |w| write_matrix_csv(w, &net.coupling))?;
    }
    out.manifest(
        CommandKind::Simulate,
        Some(config_path),
        cli.seed.unwrap_or(cfg.sim_seed),
    )?;
    println!(
        "{}x{} panel, {}, {} boundary hits",
        panel.steps(),
        panel.assets(),
        if panel.stable { "stable" } else { "truncated" },
        panel.boundary_hits
    );
    Ok(())
}

fn analyze(cli: &Cli, panel_path: &Path, baseline: &str, n_baseline: usize, leading_run: bool) -> CliResult<()> {
    let panel = read_panel_csv(open_input(panel_path)?).map_err(context(panel_path.display()))?;
    if !panel.stable {
        return Err(config_err(anyhow!(
            "{} contains non-finite values",
            panel_path.display()
        )));
    }
    let meta_path = match baseline {
        "uniform" => None,
        "sidecar" => Some(sidecar_path(panel_path)),
        other => Some(PathBuf::from(other)),
    };
    let floor = match &meta_path {
        None => SpectrumReport::uniform(panel.assets()),
        Some(p) => {
            let meta: PanelMetadata = read_json(open_input(p)?).map_err(context(p.display()))?;
            if meta.assets != panel.assets() {
                return Err(config_err(anyhow!(
                    "baseline metadata describes {} assets, panel has {}",
                    meta.assets,
                    panel.assets()
                )));
            }
            let mut cfg = meta.config;
            cfg.steps = panel.steps();
            baseline_spectrum(&cfg, n_baseline)?
        }
    };
    let mode = if leading_run {
        DetectionMode::LeadingRun
    } else {
        DetectionMode::Heaviside
    };
    let fit = analyze_panel(&panel, &floor, mode)?;

    let out = OutDir::create(&cli.out)?;
    out.json("fit.json", &FactorReport::new(&fit, &floor))?;
    out.write("factors.csv", |w| write_factor_scores_csv(w, &fit.factors))?;
    out.manifest(CommandKind::Analyze, meta_path.as_deref(), cli.seed.unwrap_or(0))?;
    let entropy = fit
        .entropy_summary()
        .map_or("undefined".to_string(), |s| format!("{:.4}", s.mean));
    println!(
        "m_hat={} explained_variance={:.4} mean_entropy={entropy}",
        fit.m_hat, fit.explained_variance
    );
    Ok(())
}

#[derive(Debug, Default)]
struct TaskFilter {
    m: Vec<usize>,
    eps: Vec<f64>,
}

impl TaskFilter {
    fn parse(specs: &[String]) -> CliResult<Self> {
        let mut f = TaskFilter::default();
        for s in specs {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| config_err(anyhow!("subset {s:?} is not KEY=VALUE")))?;
            let bad = || config_err(anyhow!("cannot parse subset {s:?}"));
            match key.trim() {
                "m" => f.m.push(value.trim().parse().map_err(|_| bad())?),
                "eps" | "epsilon" => f.eps.push(value.trim().parse().map_err(|_| bad())?),
                _ => return Err(config_err(anyhow!("unknown subset key {key:?}; use m or eps"))),
            }
        }
        Ok(f)
    }

    fn keeps(&self, m: usize, eps: f64) -> bool {
        (self.m.is_empty() || self.m.contains(&m))
            && (self.eps.is_empty() || self.eps.iter().any(|e| (e - eps).abs() < 1e-9))
    }
}

const SWEEP_CONFIG_FILE: &str = "sweep_config.json";
const RECORDS_FILE: &str = "records.csv";

/// Reads completed records, dropping a trailing partial line left by an
/// interrupted run.
fn load_completed(path: &Path) -> CliResult<Vec<cmlfactor::experiments::SweepRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| config_err(anyhow!("cannot read {}: {e}", path.display())))?;
    let clean = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if clean.len() != text.len() {
        fs::write(path, clean).map_err(output_err)?;
    }
    if clean.is_empty() {
        return Ok(Vec::new());
    }
    read_records_csv(clean.as_bytes()).map_err(context(path.display()))
}

fn sweep(cli: &Cli, config_path: Option<&Path>, subsets: &[String]) -> CliResult<()> {
    let mut cfg: SweepConfig = config::load_or_default(config_path).map_err(config_err)?;
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    cfg.validate()?;
    let filter = TaskFilter::parse(subsets)?;
    if !cfg.tasks().iter().any(|t| filter.keeps(t.m, t.epsilon)) {
        return Err(config_err(anyhow!("subset selects no tasks of this sweep")));
    }

    let out = OutDir::create(&cli.out)?;
    let cfg_file = out.file(SWEEP_CONFIG_FILE);
    if cfg_file.exists() {
        let previous: SweepConfig = read_json(open_input(&cfg_file)?).map_err(context(cfg_file.display()))?;
        if previous != cfg {
            return Err(config_err(anyhow!(
                "{} holds records of a different sweep; choose another --out",
                cli.out.display()
            )));
        }
    } else {
        out.json(SWEEP_CONFIG_FILE, &cfg)?;
    }

    let records_path = out.file(RECORDS_FILE);
    let done: HashSet<u64> = load_completed(&records_path)?.iter().map(|r| r.task_id).collect();
    let selected: Vec<SweepTask> = cfg
        .tasks()
        .into_iter()
        .filter(|t| filter.keeps(t.m, t.epsilon))
        .collect();
    let pending: Vec<SweepTask> = selected.iter().copied().filter(|t| !done.contains(&t.id)).collect();

    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&records_path)
        .map_err(|e| output_err(anyhow!("cannot open {}: {e}", records_path.display())))?;
    let mut need_header = file.metadata().map_err(output_err)?.len() == 0;
    let batch = 8 * cmlfactor::par::current_workers().max(1);
    for chunk in pending.chunks(batch) {
        let records = run_tasks(&cfg, chunk)?;
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &records, need_header)?;
        file.write_all(&buf)
            .and_then(|_| file.flush())
            .map_err(|e| output_err(anyhow!("cannot append to {}: {e}", records_path.display())))?;
        need_header = false;
    }

    let selected_ids: HashSet<u64> = selected.iter().map(|t| t.id).collect();
    let all: Vec<_> = load_completed(&records_path)?
        .into_iter()
        .filter(|r| selected_ids.contains(&r.task_id))
        .collect();
    let summaries = summarize(&all);
    out.write("summary.csv", |w| write_summary_csv(w, &summaries))?;
    out.manifest(CommandKind::Sweep, config_path, cfg.base_seed)?;
    println!(
        "{} tasks selected, {} run, {} already complete; {} summary rows",
        selected.len(),
        pending.len(),
        selected.len() - pending.len(),
        summaries.len()
    );
    Ok(())
}

fn calibrate(cli: &Cli, empirical: &Path, config_path: Option<&Path>, stride: usize) -> CliResult<()> {
    let mut cfg: CalibrateConfig = config::load_or_default(config_path).map_err(config_err)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let series = read_empirical_csv(open_input(empirical)?).map_err(context(empirical.display()))?;
    let grid = cfg.grid.with_gamma_stride(stride)?;
    let opts = CalibrationOptions {
        seed: cfg.seed,
        lags: cfg.lags,
        diagnose_empirical: cfg.diagnose_empirical,
        boundary: cfg.boundary,
    };
    let rows = run_calibration(&series.returns, &grid, &opts)?;
    let summary = summarize_calibration(&rows, cfg.mse_threshold);

    let out = OutDir::create(&cli.out)?;
    out.write("calibration.csv", |w| write_calibration_csv(w, &rows))?;
    out.json("calibration_summary.json", &summary)?;
    out.manifest(CommandKind::Calibrate, config_path, cfg.seed)?;
    println!(
        "{} grid points, {:.1}% complete, {:.1}% of complete with MSE <= {}",
        summary.total,
        100.0 * summary.complete_fraction(),
        100.0 * summary.below_fraction(),
        summary.mse_threshold
    );
    Ok(())
}

#[derive(Serialize)]
struct MomentsSummary {
    n_series: usize,
    series_len: usize,
    population_std: f64,
    population_excess_kurtosis: f64,
    median_mean: f64,
    median_std: f64,
    median_skewness: f64,
    median_excess_kurtosis: f64,
    mean_spread_ratio: f64,
}

fn moments(cli: &Cli, config_path: Option<&Path>) -> CliResult<()> {
    let mut cfg: MomentsConfig = config::load_or_default(config_path).map_err(config_err)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let study = estimator_sampling_study(&cfg.map, cfg.n_series, cfg.series_len, cfg.seed)?;
    let med = |v: &[f64]| median(v).unwrap_or(f64::NAN);
    let summary = MomentsSummary {
        n_series: cfg.n_series,
        series_len: cfg.series_len,
        population_std: cfg.map.std_dev(),
        population_excess_kurtosis: cfg.map.excess_kurtosis(),
        median_mean: med(&study.means),
        median_std: med(&study.stds),
        median_skewness: med(&study.skewness),
        median_excess_kurtosis: med(&study.kurtosis),
        mean_spread_ratio: study.mean_spread_ratio(),
    };

    let out = OutDir::create(&cli.out)?;
    out.write("moments.csv", |w| {
        writeln!(w, "series,mean,std,skewness,excess_kurtosis")?;
        for i in 0..study.means.len() {
            writeln!(
                w,
                "{i},{},{},{},{}",
                study.means[i], study.stds[i], study.skewness[i], study.kurtosis[i]
            )?;
        }
        Ok(())
    })?;
    out.json("moments_summary.json", &summary)?;
    out.manifest(CommandKind::Moments, config_path, cfg.seed)?;
    println!(
        "{} series of {}: median std {:.5} (population {:.5}), median excess kurtosis {:.3}, mean spread ratio {:.3}",
        summary.n_series,
        summary.series_len,
        summary.median_std,
        summary.population_std,
        summary.median_excess_kurtosis,
        summary.mean_spread_ratio
    );
    Ok(())
}
