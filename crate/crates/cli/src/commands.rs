//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rompca_core::diagnostics::{
    cellmap, diagnose, residual_distance_rows, slice_cellmap, C_CELL, DEFAULT_MC_SAMPLES,
};
use rompca_core::ranks::select_ranks;
use rompca_core::rompca::{impute, irls_fit, RompcaConfig, RompcaModel, Variant};
use rompca_core::sample::{validate_samples, TensorSample};
use rompca_core::screen::ScreenConfig;
use rompca_core::sim::{
    planted_dataset, scenario_dataset, DecayReading, PlantedSpec, Scenario, SdSource, Setting,
    SimConfig, SimDataset,
};

use crate::bench::{mse_plot, run_parallel, summarize, thread_count, write_medians, write_results};
use crate::error::{CliError, CliResult, EXIT_NOT_CONVERGED, EXIT_OK};
use crate::format::{load_dataset, print_json, save_dataset, write_bytes, write_csv, write_json};
use crate::model_file::{load_model, save_model};
use crate::svg::{cellmap_svg, distance_svg, line_panels_svg, panels_svg, Panel, Series};

#[derive(Debug, Parser)]
#[command(
    name = "rompca",
    version,
    about = "Robust multilinear PCA for tensor data with cellwise and casewise outliers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and print a JSON summary.
    Fit(FitArgs),
    /// Standardized residuals, cellmaps and the residual-distance plot.
    Diagnose(DiagnoseArgs),
    /// Replace missing and outlying cells by model-based values.
    Impute(ImputeArgs),
    /// Run the simulation benchmark.
    Simulate(SimulateArgs),
    /// Cumulative eigenvalue curves and rank suggestions.
    Ranks(RanksArgs),
    /// Write a simulated dataset.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Full,
    OnlyCase,
    OnlyCell,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::OnlyCase => Variant::OnlyCase,
            VariantArg::OnlyCell => Variant::OnlyCell,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Clean,
    Cellwise,
    Casewise,
    Combined,
    /// Cellwise, casewise and combined.
    All,
}

impl ScenarioArg {
    fn scenarios(self) -> Vec<Scenario> {
        match self {
            ScenarioArg::Clean => vec![Scenario::Clean],
            ScenarioArg::Cellwise => vec![Scenario::Cellwise],
            ScenarioArg::Casewise => vec![Scenario::Casewise],
            ScenarioArg::Combined => vec![Scenario::Combined],
            ScenarioArg::All => vec![Scenario::Cellwise, Scenario::Casewise, Scenario::Combined],
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SettingArg {
    I,
    Ii,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::I => Setting::I,
            SettingArg::Ii => Setting::II,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DecayArg {
    Product,
    Sum,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SdSourceArg {
    Clean,
    Current,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset file (`.romt` binary or a manifest).
    pub dataset: PathBuf,
    /// Comma-separated ranks, one per mode.
    #[arg(long, value_delimiter = ',', conflicts_with = "auto_ranks")]
    pub ranks: Option<Vec<usize>>,
    /// Choose ranks by the cumulative eigenvalue threshold.
    #[arg(long)]
    pub auto_ranks: bool,
    #[arg(long, default_value_t = 0.8)]
    pub q_threshold: f64,
    #[arg(long, value_enum, default_value = "full")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the JSON summary to this file.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    pub model: PathBuf,
    pub dataset: PathBuf,
    /// Number of adjacent cells averaged per cellmap column.
    #[arg(long, default_value_t = 1)]
    pub aggregate: usize,
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    pub mc_samples: usize,
    /// Seed of the cutoff simulation; defaults to the model's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mode (1-based) whose slices are drawn; defaults to the last mode.
    #[arg(long)]
    pub slice_mode: Option<usize>,
    /// Samples (1-based) to draw slices for; defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub slices: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    pub model: PathBuf,
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, value_enum, default_value = "ii")]
    pub setting: SettingArg,
    /// Samples per dataset.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    #[arg(long, value_enum, default_value = "product")]
    pub decay: DecayArg,
    #[arg(long, value_enum, default_value = "clean")]
    pub sd_source: SdSourceArg,
}

impl SimArgs {
    fn config(&self, scenario: Scenario) -> SimConfig {
        let mut c = SimConfig::for_setting(self.setting.into(), scenario);
        c.n = self.n;
        c.seed = self.seed;
        c.missing_frac = self.missing;
        c.decay = match self.decay {
            DecayArg::Product => DecayReading::Product,
            DecayArg::Sum => DecayReading::Sum,
        };
        c.sd_source = match self.sd_source {
            SdSourceArg::Clean => SdSource::Clean,
            SdSourceArg::Current => SdSource::Current,
        };
        c
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub scenario: ScenarioArg,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Comma-separated gamma_cell values.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7")]
    pub gamma_grid: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Per-run results CSV; medians go next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Medians CSV (default: `<out stem>_medians.csv`).
    #[arg(long)]
    pub medians: Option<PathBuf>,
    /// SVG of median MSE against gamma_cell.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Fill the seconds column with wall-clock timings.
    #[arg(long)]
    pub record_time: bool,
    /// Worker threads (overrides ROMPCA_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RanksArgs {
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub q_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// SVG of the cumulative curves.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "clean")]
    pub scenario: ScenarioArg,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub rep: usize,
    /// The planted diagnostic layout instead of a benchmark scenario.
    #[arg(long)]
    pub planted: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of planted outliers and missing cells.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

/// Exit status of a successful command.
pub type Status = i32;

pub fn run(cli: Cli) -> CliResult<Status> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Impute(a) => cmd_impute(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Ranks(a) => cmd_ranks(&a),
        Command::Generate(a) => cmd_generate(&a),
    }
}

#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub n_samples: usize,
    pub shape: Vec<usize>,
    pub ranks: Vec<usize>,
    pub variant: &'static str,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub sigma2: f64,
    pub chosen_candidate: u8,
    pub candidate_sigma2: [f64; 2],
    pub case_weights: Vec<f64>,
}

impl FitSummary {
    pub fn new(m: &RompcaModel) -> Self {
        Self {
            n_samples: m.n_samples(),
            shape: m.shape().to_vec(),
            ranks: m.ranks.clone(),
            variant: m.variant.name(),
            seed: m.seed,
            converged: m.converged,
            iterations: m.iterations,
            objective: m.final_objective(),
            objective_trace: m.objective_trace.clone(),
            sigma2: m.sigma2,
            chosen_candidate: m.chosen_candidate,
            candidate_sigma2: m.candidate_sigma2,
            case_weights: m.case_weights.clone(),
        }
    }
}

pub fn cmd_fit(a: &FitArgs) -> CliResult<Status> {
    let samples = load_dataset(&a.dataset)?;
    let shape = validate_samples(&samples)?;
    let ranks = match (&a.ranks, a.auto_ranks) {
        (Some(r), false) => r.clone(),
        (None, true) => {
            select_ranks(&samples, a.q_threshold, &ScreenConfig::default())?.threshold_ranks
        }
        _ => {
            return Err(CliError::Usage(
                "give either --ranks or --auto-ranks".into(),
            ))
        }
    };
    if ranks.len() != shape.len() {
        return Err(CliError::Usage(format!(
            "{} ranks given for a tensor of order {}",
            ranks.len(),
            shape.len()
        )));
    }
    let mut config = RompcaConfig::new(&ranks).with_variant(a.variant.into());
    config.seed = a.seed;
    config.irls_max_iter = a.max_iter;
    let model = irls_fit(&samples, &config)?;
    save_model(&a.out, &model)?;
    let summary = FitSummary::new(&model);
    if let Some(p) = &a.summary {
        write_json(p, &summary)?;
    }
    print_json(&summary)?;
    Ok(if model.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn load_pair(model: &Path, dataset: &Path) -> CliResult<(RompcaModel, Vec<TensorSample>)> {
    let m = load_model(model)?;
    let samples = load_dataset(dataset)?;
    let shape = validate_samples(&samples)?;
    if shape != m.shape() || samples.len() != m.n_samples() {
        return Err(CliError::Usage(format!(
            "model was fitted on {} samples of shape {:?}, dataset has {} of shape {:?}",
            m.n_samples(),
            m.shape(),
            samples.len(),
            shape
        )));
    }
    Ok((m, samples))
}

#[derive(Debug, Serialize)]
struct Cutoffs {
    c_cell: f64,
    c_case: f64,
    seed: u64,
    mc_samples: usize,
    degenerate_scales: usize,
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> CliResult<Status> {
    let (model, samples) = load_pair(&a.model, &a.dataset)?;
    let seed = a.seed.unwrap_or(model.seed);
    let report = diagnose(&model, &samples, &Default::default(), a.mc_samples, seed)?;
    let out = &a.out;

    let grid = cellmap(&report, a.aggregate)?;
    let mut header = vec!["sample".to_string()];
    header.extend((1..=grid.cols).map(|j| format!("g{j}")));
    let rows: Vec<Vec<String>> = (0..grid.rows)
        .map(|r| {
            let mut row = vec![(r + 1).to_string()];
            row.extend((0..grid.cols).map(|c| {
                let cell = grid.get(r, c);
                if cell.is_missing() {
                    "NA".to_string()
                } else {
                    fmt(cell.mean_intensity)
                }
            }));
            row
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&out.join("cellmap.csv"), &h, &rows)?;
    write_bytes(
        &out.join("cellmap.svg"),
        cellmap_svg(
            &grid,
            &format!("residual cellmap ({} cells per column)", a.aggregate),
        )
        .as_bytes(),
    )?;

    let order = model.shape().len();
    let mode = match a.slice_mode {
        None => order - 1,
        Some(m) if (1..=order).contains(&m) => m - 1,
        Some(m) => {
            return Err(CliError::Usage(format!(
                "--slice-mode {m} outside 1..={order}"
            )))
        }
    };
    let picks: Vec<usize> = match &a.slices {
        None => (0..samples.len()).collect(),
        Some(v) => v
            .iter()
            .map(|&n| {
                if (1..=samples.len()).contains(&n) {
                    Ok(n - 1)
                } else {
                    Err(CliError::Usage(format!(
                        "--slices {n} outside 1..={}",
                        samples.len()
                    )))
                }
            })
            .collect::<CliResult<_>>()?,
    };
    for n in picks {
        let panels = (0..model.shape()[mode])
            .map(|i| {
                Ok((
                    format!("sample {} slice {}", n + 1, i + 1),
                    slice_cellmap(&report, n, mode, i)?,
                ))
            })
            .collect::<CliResult<Vec<_>>>()?;
        write_bytes(
            &out.join("slices").join(format!("sample_{:05}.svg", n + 1)),
            panels_svg(&panels).as_bytes(),
        )?;
    }

    let dist = residual_distance_rows(&report);
    let drows: Vec<Vec<String>> = dist
        .iter()
        .map(|r| {
            vec![
                (r.index + 1).to_string(),
                fmt(r.distance),
                fmt(r.poc),
                fmt(r.case_weight),
                r.flagged.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("distances.csv"),
        &["index", "resdist", "poc", "case_weight", "flagged"],
        &drows,
    )?;
    write_bytes(
        &out.join("distances.svg"),
        distance_svg(&dist, report.c_case, "residual distances").as_bytes(),
    )?;
    write_json(
        &out.join("cutoffs.json"),
        &Cutoffs {
            c_cell: C_CELL,
            c_case: report.c_case,
            seed,
            mc_samples: report.mc_samples,
            degenerate_scales: report.degenerate_scales,
        },
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_impute(a: &ImputeArgs) -> CliResult<Status> {
    let (model, samples) = load_pair(&a.model, &a.dataset)?;
    let imputed = (0..samples.len())
        .map(|n| Ok(TensorSample::complete(impute(&model, &samples, n)?)))
        .collect::<CliResult<Vec<_>>>()?;
    save_dataset(&a.out, &imputed)?;
    Ok(EXIT_OK)
}

fn default_medians_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or("results".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_medians.csv"))
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<Status> {
    if a.gamma_grid.is_empty() || a.gamma_grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(CliError::Usage(
            "--gamma-grid needs finite nonnegative values".into(),
        ));
    }
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let configs: Vec<SimConfig> = a
        .scenario
        .scenarios()
        .into_iter()
        .map(|s| {
            let mut c = a.sim.config(s);
            c.gamma_grid = a.gamma_grid.clone();
            c.n_reps = a.reps;
            c
        })
        .collect();
    let records = run_parallel(&configs, thread_count(a.threads)?, a.record_time)?;
    write_results(&a.out, &records)?;
    let med = summarize(&records);
    write_medians(
        &a.medians
            .clone()
            .unwrap_or_else(|| default_medians_path(&a.out)),
        &med,
    )?;
    if let Some(p) = &a.plot {
        write_bytes(p, mse_plot(&med).as_bytes())?;
    }
    let failed = records.iter().filter(|r| r.mse.is_none()).count();
    if failed > 0 {
        log::warn!("{failed} fits failed; see the mse column");
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct RanksReport {
    n_used: usize,
    threshold: f64,
    eigenvalues: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
    threshold_ranks: Vec<usize>,
    elbow_ranks: Vec<usize>,
    suggested: Vec<usize>,
}

pub fn cmd_ranks(a: &RanksArgs) -> CliResult<Status> {
    let samples = load_dataset(&a.dataset)?;
    if samples.len() < 5 {
        return Err(CliError::Usage(format!(
            "rank selection needs at least 5 samples, got {}",
            samples.len()
        )));
    }
    let sel = select_ranks(&samples, a.q_threshold, &ScreenConfig::default())?;
    write_json(
        &a.out,
        &RanksReport {
            n_used: sel.n_used,
            threshold: sel.threshold,
            eigenvalues: sel.eigenvalues.clone(),
            cumulative: sel.cumulative.clone(),
            threshold_ranks: sel.threshold_ranks.clone(),
            elbow_ranks: sel.elbow_ranks.clone(),
            suggested: sel.suggested().to_vec(),
        },
    )?;
    if let Some(p) = &a.plot {
        let panels: Vec<Panel> = sel
            .cumulative
            .iter()
            .enumerate()
            .map(|(m, c)| Panel {
                title: format!("mode {}", m + 1),
                xlabel: "K".into(),
                ylabel: "cumulative eigenvalue fraction".into(),
                log_y: false,
                hline: Some(a.q_threshold),
                series: vec![Series {
                    name: "cumulative".into(),
                    points: c
                        .iter()
                        .enumerate()
                        .map(|(k, &q)| ((k + 1) as f64, q))
                        .collect(),
                }],
            })
            .collect();
        write_bytes(p, line_panels_svg(&panels).as_bytes())?;
    }
    Ok(EXIT_OK)
}

fn truth_rows(ds: &SimDataset) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = ds
        .case_outliers
        .iter()
        .map(|&n| vec!["case".into(), (n + 1).to_string(), String::new()])
        .collect();
    rows.extend(
        ds.cell_outliers
            .iter()
            .map(|&(n, c)| vec!["cell".into(), (n + 1).to_string(), (c + 1).to_string()]),
    );
    rows.extend(
        ds.missing
            .iter()
            .map(|&(n, c)| vec!["missing".into(), (n + 1).to_string(), (c + 1).to_string()]),
    );
    rows
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<Status> {
    let ds = if a.planted {
        let mut spec = PlantedSpec::standard(a.sim.seed);
        let mut base = a.sim.config(Scenario::Combined);
        base.missing_frac = 0.0;
        spec.base = base;
        if a.gamma > 0.0 {
            spec.gamma_cell = a.gamma;
        }
        planted_dataset(&spec)?
    } else {
        let scenarios = a.scenario.scenarios();
        if scenarios.len() != 1 {
            return Err(CliError::Usage("generate needs a single scenario".into()));
        }
        scenario_dataset(&a.sim.config(scenarios[0]), a.gamma, a.rep)?
    };
    save_dataset(&a.out, &ds.samples)?;
    if let Some(p) = &a.truth {
        write_csv(p, &["kind", "sample", "cell"], &truth_rows(&ds))?;
    }
    Ok(EXIT_OK)
}
