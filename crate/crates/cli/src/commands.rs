//! One [`Experiment`] per subcommand.

use crate::config::{resolve_params, ConfigFile, Overrides, Resolved, CONFIG_SCHEMA};
use crate::error::CliError;
use crate::table::{write_atomic, write_json, Cell, Table};
use kmfg::analysis::TrialSummary;
use kmfg::distributions::DistributionSpec;
use kmfg::experiments::{self as exp, EstimatorStudy, GridResult, GridStudy, ShiftMetrics};
use kmfg::presets;
use kmfg::trainer::{train, Evaluation, PenaltyKind, TrainConfig, TrainOutput};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const SUMMARY_SCHEMA: &str = "kernel-mfg/summary-v1";
pub const OUT_ROOT_ENV: &str = "KMFG_OUT_ROOT";

/// Where a run writes its files.
pub struct RunContext {
    pub out: PathBuf,
}

impl RunContext {
    /// Trains one seed and stores its log and network under `runs/<label>/seed-<seed>/`.
    pub fn train(&self, label: &str, cfg: &TrainConfig) -> Result<TrainOutput<f64>, CliError> {
        let dir = self.out.join("runs").join(sanitize(label)).join(format!("seed-{}", cfg.seed));
        let out = match train::<f64>(cfg) {
            Ok(out) => out,
            Err(kmfg::Error::Diverged { iteration, phase, detail, checkpoint }) => {
                let path = dir.join("diverged_checkpoint.json");
                write_atomic(&path, checkpoint.as_bytes())?;
                return Err(CliError::Diverged {
                    message: format!("{label}, seed {}: training diverged at iteration {iteration} ({phase}): {detail}", cfg.seed),
                    checkpoint: path,
                });
            }
            Err(e) => return Err(e.into()),
        };
        let mut log = Table::new(
            &["iter", "energy", "interaction", "penalty", "objective", "eval_mmd2", "sup_norm", "wall_ms"],
            &[],
        );
        for r in &out.records {
            log.push(vec![
                r.iter.into(),
                r.energy.into(),
                r.interaction.into(),
                r.penalty.into(),
                r.objective.into(),
                r.eval.as_ref().map_or(f64::NAN, |e| e.eval_mmd2).into(),
                r.sup_norm.into(),
                r.wall_ms.into(),
            ]);
        }
        log.write_csv(&dir.join("train_log.csv"))?;
        write_atomic(&dir.join("network.json"), out.network.to_checkpoint().as_bytes())?;
        Ok(out)
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.=".contains(c) { c } else { '_' })
        .collect()
}

pub struct Output {
    pub results: Table,
    /// Additional tables, written as `<name>.csv`.
    pub extra: Vec<(String, Table)>,
    pub summary: Map<String, Value>,
}

impl Output {
    fn new(results: Table) -> Self {
        Self { results, extra: Vec::new(), summary: Map::new() }
    }
}

pub trait Experiment {
    const NAME: &'static str;
    /// Training experiments default to five seeds, estimator studies to one.
    const TRAINING: bool;
    type Params: Serialize + DeserializeOwned + Clone;

    fn defaults(file: &ConfigFile, o: &Overrides) -> Result<Self::Params, CliError>;
    /// Applies `--epochs`/`--trials`/`--dim`; returns the flags that do not apply.
    fn apply(p: &mut Self::Params, o: &Overrides) -> Vec<&'static str>;
    fn run(p: &Self::Params, seeds: &[u64], ctx: &RunContext) -> Result<Output, CliError>;
}

/// Resolves the config, runs the experiment and writes its files; returns the output directory.
pub fn execute<E: Experiment>(config: Option<&Path>, out: Option<&Path>, o: &Overrides) -> Result<PathBuf, CliError> {
    let file = match config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(name) = &file.experiment {
        if name != E::NAME {
            return Err(CliError::config(format!("config is for experiment {name:?}, not {:?}", E::NAME)));
        }
    }
    let mut params = resolve_params(E::defaults(&file, o)?, &file)?;
    for flag in E::apply(&mut params, o) {
        eprintln!("note: --{flag} does not apply to {}", E::NAME);
    }
    let seeds = o
        .seeds
        .clone()
        .or_else(|| file.seeds.clone())
        .unwrap_or_else(|| if E::TRAINING { (0..5).collect() } else { vec![0] });
    if seeds.is_empty() {
        return Err(CliError::config("seed list is empty"));
    }
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from(std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| "runs".into())).join(E::NAME),
    };
    let resolved = Resolved { schema: CONFIG_SCHEMA, experiment: E::NAME, seeds: seeds.clone(), params };
    write_json(&dir.join("config.json"), &resolved)?;

    let start = Instant::now();
    let ctx = RunContext { out: dir.clone() };
    let output = E::run(&resolved.params, &seeds, &ctx)?;
    let wall = start.elapsed().as_secs_f64();

    output.results.write_csv(&dir.join("results.csv"))?;
    let mut tables = vec![Value::from("results.csv")];
    for (name, t) in &output.extra {
        t.write_csv(&dir.join(format!("{name}.csv")))?;
        tables.push(format!("{name}.csv").into());
    }
    let mut summary = Map::new();
    summary.insert("schema".into(), SUMMARY_SCHEMA.into());
    summary.insert("experiment".into(), E::NAME.into());
    summary.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    summary.insert("config_hash".into(), resolved.hash().into());
    summary.insert("config".into(), "config.json".into());
    summary.insert("seeds".into(), json!(seeds));
    summary.insert("wall_clock_s".into(), wall.into());
    summary.insert("results".into(), "results.csv".into());
    summary.insert("key_columns".into(), json!(output.results.keys));
    summary.insert("tables".into(), Value::Array(tables));
    summary.extend(output.summary);
    write_json(&dir.join("summary.json"), &Value::Object(summary))?;
    Ok(dir)
}

fn summary_cells(s: &TrialSummary) -> [Cell; 3] {
    [s.mean.into(), s.std.into(), s.sem.into()]
}

fn estimator_apply(p: &mut EstimatorStudy, o: &Overrides) -> Vec<&'static str> {
    if let Some(t) = o.trials {
        p.trials = t;
    }
    if let Some(d) = o.dim {
        p.d = d;
    }
    if o.epochs.is_some() { vec!["epochs"] } else { vec![] }
}

fn grid_apply(p: &mut GridStudy, o: &Overrides) {
    if let Some(t) = o.trials {
        p.trials = t;
    }
    if let Some(d) = o.dim {
        p.d = d;
    }
}

fn grid_rows(table: &mut Table, fits: &mut Table, seed: u64, r: &GridResult) {
    for c in &r.cells {
        table.push(vec![seed.into(), c.m.into(), c.n.into(), c.mean.into(), c.variance.into(), c.trials.into()]);
    }
    fits.push(vec![seed.into(), r.fit.c1.into(), r.fit.c2.into(), r.fit.r2.into(), r.slope_largest_m.into(), r.truth.into()]);
}

fn grid_tables() -> (Table, Table) {
    (
        Table::new(&["seed", "m", "n", "mean", "variance", "trials"], &["m", "n"]),
        Table::new(&["seed", "c1", "c2", "r2", "slope_largest_m", "truth"], &[]),
    )
}

pub struct BiasTable;

impl Experiment for BiasTable {
    const NAME: &'static str = "bias-table";
    const TRAINING: bool = false;
    type Params = EstimatorStudy;

    fn defaults(_: &ConfigFile, _: &Overrides) -> Result<EstimatorStudy, CliError> {
        Ok(EstimatorStudy { d: 2, n: 200, m: 200, alpha: 1.0, trials: 2000, shift: 0.0, seed: 0 })
    }

    fn apply(p: &mut EstimatorStudy, o: &Overrides) -> Vec<&'static str> {
        estimator_apply(p, o)
    }

    fn run(p: &EstimatorStudy, seeds: &[u64], _: &RunContext) -> Result<Output, CliError> {
        let mut t = Table::new(&["seed", "estimator", "mean", "std", "sem", "trials", "truth"], &["estimator"]);
        let mut oracle = 0.0;
        for &seed in seeds {
            let b = exp::bias_table(&EstimatorStudy { seed, ..p.clone() })?;
            oracle = b.rff_v_bias + b.truth;
            for (name, s) in [("kernel-u", &b.kernel_u), ("rff-v", &b.rff_v), ("rf-u", &b.rf_u)] {
                let [m, sd, se] = summary_cells(s);
                t.push(vec![seed.into(), name.into(), m, sd, se, s.count.into(), b.truth.into()]);
            }
        }
        let mut out = Output::new(t);
        out.summary.insert("rff_v_expected_mean".into(), oracle.into());
        Ok(out)
    }
}

pub struct VarianceGrid;

impl Experiment for VarianceGrid {
    const NAME: &'static str = "variance-grid";
    const TRAINING: bool = false;
    type Params = GridStudy;

    fn defaults(_: &ConfigFile, _: &Overrides) -> Result<GridStudy, CliError> {
        Ok(GridStudy {
            d: 10,
            alpha: 0.1,
            shift: 1.0,
            ms: vec![50, 100, 200, 500, 1000, 2000, 5000],
            ns: vec![50, 100, 200, 500, 1000],
            trials: 500,
            seed: 0,
        })
    }

    fn apply(p: &mut GridStudy, o: &Overrides) -> Vec<&'static str> {
        grid_apply(p, o);
        if o.epochs.is_some() { vec!["epochs"] } else { vec![] }
    }

    fn run(p: &GridStudy, seeds: &[u64], _: &RunContext) -> Result<Output, CliError> {
        let (mut t, mut fits) = grid_tables();
        for &seed in seeds {
            let r = exp::variance_grid(&GridStudy { seed, ..p.clone() })?;
            grid_rows(&mut t, &mut fits, seed, &r);
        }
        let mut out = Output::new(t);
        out.extra.push(("fit".into(), fits));
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionParams {
    pub check: EstimatorStudy,
    pub grid: GridStudy,
}

pub struct InteractionCheck;

impl Experiment for InteractionCheck {
    const NAME: &'static str = "interaction-check";
    const TRAINING: bool = false;
    type Params = InteractionParams;

    fn defaults(_: &ConfigFile, _: &Overrides) -> Result<InteractionParams, CliError> {
        Ok(InteractionParams {
            check: EstimatorStudy { d: 2, n: 200, m: 500, alpha: 1.0, trials: 2000, shift: 0.0, seed: 0 },
            grid: GridStudy {
                d: 2,
                alpha: 1.0,
                shift: 0.0,
                ms: vec![20, 50, 100, 500, 1000, 5000],
                ns: vec![50, 100, 200, 500, 1000],
                trials: 500,
                seed: 0,
            },
        })
    }

    fn apply(p: &mut InteractionParams, o: &Overrides) -> Vec<&'static str> {
        grid_apply(&mut p.grid, o);
        estimator_apply(&mut p.check, o)
    }

    fn run(p: &InteractionParams, seeds: &[u64], _: &RunContext) -> Result<Output, CliError> {
        let mut t = Table::new(
            &["seed", "estimator", "mean", "std", "sem", "truth", "bias", "bias_ceiling"],
            &["estimator"],
        );
        let (mut grid, mut fits) = grid_tables();
        for &seed in seeds {
            let c = exp::interaction_check(&EstimatorStudy { seed, ..p.check.clone() })?;
            for (name, s, ceiling) in [("rf-u", &c.u_stat, 0.0), ("rf-v", &c.v_stat, c.v_bias_ceiling)] {
                let [m, sd, se] = summary_cells(s);
                t.push(vec![seed.into(), name.into(), m, sd, se, c.truth.into(), (s.mean - c.truth).into(), ceiling.into()]);
            }
            let r = exp::interaction_grid(&GridStudy { seed, ..p.grid.clone() })?;
            grid_rows(&mut grid, &mut fits, seed, &r);
        }
        let mut out = Output::new(t);
        out.extra.push(("grid".into(), grid));
        out.extra.push(("fit".into(), fits));
        Ok(out)
    }
}

fn dim_of(file: &ConfigFile, o: &Overrides) -> Result<usize, CliError> {
    match (o.dim, file.param("dim")) {
        (Some(d), _) => Ok(d),
        (None, Some(v)) => v
            .as_u64()
            .map(|d| d as usize)
            .ok_or_else(|| CliError::config("params.dim must be a positive integer")),
        (None, None) => Ok(10),
    }
}

/// The Gaussian-shift preset for `dim`; other dimensions need their widths from the config file.
fn shift_defaults(file: &ConfigFile, o: &Overrides) -> Result<(usize, TrainConfig), CliError> {
    let dim = dim_of(file, o)?;
    if dim == 0 {
        return Err(CliError::config("dimension must be positive"));
    }
    if let Ok(cfg) = presets::sbp_shift(dim) {
        return Ok((dim, cfg));
    }
    let hidden_given = file.param("train").and_then(|t| t.get("hidden")).is_some();
    if !hidden_given {
        return Err(CliError::config(format!(
            "no built-in shift configuration for d = {dim}; set params.train.hidden (and any other fields) in the config file"
        )));
    }
    let base = presets::sbp_shift(10)?;
    Ok((
        dim,
        TrainConfig {
            initial: DistributionSpec::dirac_origin(dim),
            target: DistributionSpec::isotropic(presets::shift_mean(dim), 1.0),
            ..base
        },
    ))
}

fn train_apply(cfg: &mut TrainConfig, o: &Overrides) -> Vec<&'static str> {
    if let Some(e) = o.epochs {
        cfg.n_iters = e;
    }
    if o.trials.is_some() { vec!["trials"] } else { vec![] }
}

fn target_mean(spec: &DistributionSpec) -> Option<Vec<f64>> {
    match spec {
        DistributionSpec::Gaussian { mean, .. } => Some(mean.clone()),
        DistributionSpec::Dirac { point } => Some(point.clone()),
        _ => None,
    }
}

const SHIFT_COLUMNS: &[&str] = &[
    "first_mean", "rest_mean", "rest_max_abs", "std_mean", "std_min", "std_max", "mean_err2", "eval_mmd2", "energy",
];

fn shift_cells(m: &ShiftMetrics) -> Vec<Cell> {
    vec![
        m.first_mean.into(),
        m.rest_mean.into(),
        m.rest_max_abs.into(),
        m.std_mean.into(),
        m.std_min.into(),
        m.std_max.into(),
        m.mean_err2.into(),
        m.eval_mmd2.into(),
        m.energy.into(),
    ]
}

fn shift_metrics(e: &Evaluation, cfg: &TrainConfig) -> Result<ShiftMetrics, CliError> {
    let m = target_mean(&cfg.target).ok_or_else(|| CliError::config("shift metrics need a Gaussian target"))?;
    Ok(exp::shift_metrics(e, &m))
}

fn columns(head: &[&'static str], tail: &[&'static str]) -> Vec<&'static str> {
    head.iter().chain(tail).copied().collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftParams {
    pub dim: usize,
    pub train: TrainConfig,
}

pub struct SbpShift;

impl Experiment for SbpShift {
    const NAME: &'static str = "sbp-shift";
    const TRAINING: bool = true;
    type Params = ShiftParams;

    fn defaults(file: &ConfigFile, o: &Overrides) -> Result<ShiftParams, CliError> {
        let (dim, train) = shift_defaults(file, o)?;
        Ok(ShiftParams { dim, train })
    }

    fn apply(p: &mut ShiftParams, o: &Overrides) -> Vec<&'static str> {
        train_apply(&mut p.train, o)
    }

    fn run(p: &ShiftParams, seeds: &[u64], ctx: &RunContext) -> Result<Output, CliError> {
        let label = format!("d={}", p.dim);
        let mut t = Table::new(&columns(&["variant", "seed"], SHIFT_COLUMNS), &["variant"]);
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..p.train.clone() };
            let out = ctx.train(&label, &cfg)?;
            let mut row: Vec<Cell> = vec![label.clone().into(), seed.into()];
            row.extend(shift_cells(&shift_metrics(&out.final_eval, &cfg)?));
            t.push(row);
        }
        Ok(Output::new(t))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BimodalParams {
    pub train: TrainConfig,
    /// Terminal samples used for the mode shares.
    pub mode_eval: usize,
}

pub struct SbpBimodal;

impl Experiment for SbpBimodal {
    const NAME: &'static str = "sbp-bimodal";
    const TRAINING: bool = true;
    type Params = BimodalParams;

    fn defaults(_: &ConfigFile, _: &Overrides) -> Result<BimodalParams, CliError> {
        Ok(BimodalParams { train: presets::sbp_bimodal(), mode_eval: 2000 })
    }

    fn apply(p: &mut BimodalParams, o: &Overrides) -> Vec<&'static str> {
        let mut ignored = train_apply(&mut p.train, o);
        if o.dim.is_some() {
            ignored.push("dim");
        }
        ignored
    }

    fn run(p: &BimodalParams, seeds: &[u64], ctx: &RunContext) -> Result<Output, CliError> {
        let centers = match &p.train.target {
            DistributionSpec::GaussianMixture { means, .. } => means.clone(),
            _ => return Err(CliError::config("sbp-bimodal needs a gaussian-mixture target")),
        };
        let mut head = vec!["variant", "seed", "eval_mmd2", "energy", "sup_norm", "objective"];
        let share_names: Vec<String> = (0..centers.len()).map(|i| format!("mode_share_{i}")).collect();
        head.extend(share_names.iter().map(String::as_str));
        let mut t = Table::new(&head, &["variant"]);
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..p.train.clone() };
            let out = ctx.train("bimodal", &cfg)?;
            let shares = exp::mode_fractions(&out.network, &cfg, &centers, p.mode_eval, seed)?;
            let e = &out.final_eval;
            let last = out.records.last().map_or(f64::NAN, |r| r.objective);
            let mut row: Vec<Cell> = vec!["bimodal".into(), seed.into(), e.eval_mmd2.into(), e.energy.into(), e.sup_norm.into(), last.into()];
            row.extend(shares.into_iter().map(Cell::from));
            t.push(row);
        }
        Ok(Output::new(t))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSweepParams {
    pub dim: usize,
    pub train: TrainConfig,
    pub inv_lambdas: Vec<f64>,
}

pub struct LambdaSweep;

impl Experiment for LambdaSweep {
    const NAME: &'static str = "lambda-sweep";
    const TRAINING: bool = true;
    type Params = LambdaSweepParams;

    fn defaults(file: &ConfigFile, o: &Overrides) -> Result<LambdaSweepParams, CliError> {
        let (dim, train) = shift_defaults(file, o)?;
        Ok(LambdaSweepParams {
            dim,
            train: TrainConfig { n_iters: 5000, ..train },
            inv_lambdas: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
        })
    }

    fn apply(p: &mut LambdaSweepParams, o: &Overrides) -> Vec<&'static str> {
        train_apply(&mut p.train, o)
    }

    fn run(p: &LambdaSweepParams, seeds: &[u64], ctx: &RunContext) -> Result<Output, CliError> {
        if p.inv_lambdas.iter().any(|&v| !(v > 0.0)) {
            return Err(CliError::config("inv_lambdas must be positive"));
        }
        let mut t = Table::new(&columns(&["variant", "inv_lambda", "seed"], &[SHIFT_COLUMNS, &["lambda_mmd2"]].concat()), &["variant"]);
        for v in exp::lambda_variants(&p.train, &p.inv_lambdas) {
            for &seed in seeds {
                let cfg = TrainConfig { seed, ..v.config.clone() };
                let out = ctx.train(&v.label, &cfg)?;
                let m = shift_metrics(&out.final_eval, &cfg)?;
                let mut row: Vec<Cell> = vec![v.label.clone().into(), (1.0 / cfg.lambda).into(), seed.into()];
                row.extend(shift_cells(&m));
                row.push((cfg.lambda * m.eval_mmd2).into());
                t.push(row);
            }
        }
        Ok(Output::new(t))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelVsRfParams {
    pub dim: usize,
    pub train: TrainConfig,
    pub rf_features: Vec<usize>,
}

pub struct KernelVsRf;

impl Experiment for KernelVsRf {
    const NAME: &'static str = "kernel-vs-rf";
    const TRAINING: bool = true;
    type Params = KernelVsRfParams;

    fn defaults(file: &ConfigFile, o: &Overrides) -> Result<KernelVsRfParams, CliError> {
        let (dim, train) = shift_defaults(file, o)?;
        Ok(KernelVsRfParams {
            dim,
            train: TrainConfig { n_iters: 5000, ..train },
            rf_features: vec![100, 400, 1600],
        })
    }

    fn apply(p: &mut KernelVsRfParams, o: &Overrides) -> Vec<&'static str> {
        train_apply(&mut p.train, o)
    }

    fn run(p: &KernelVsRfParams, seeds: &[u64], ctx: &RunContext) -> Result<Output, CliError> {
        let mut t = Table::new(&columns(&["variant", "features", "seed"], SHIFT_COLUMNS), &["variant"]);
        for v in exp::penalty_variants(&p.train, &p.rf_features) {
            let features = if v.config.penalty == PenaltyKind::KernelU { 0 } else { v.config.features };
            for &seed in seeds {
                let cfg = TrainConfig { seed, ..v.config.clone() };
                let out = ctx.train(&v.label, &cfg)?;
                let mut row: Vec<Cell> = vec![v.label.clone().into(), features.into(), seed.into()];
                row.extend(shift_cells(&shift_metrics(&out.final_eval, &cfg)?));
                t.push(row);
            }
        }
        Ok(Output::new(t))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationParams {
    pub dim: usize,
    pub train: TrainConfig,
    /// `(N, λ⁻¹)` pairs; each runs once with the U- and once with the V-statistic penalty.
    pub arms: Vec<(usize, f64)>,
    /// Batch pairs averaged for the V-statistic floor `V̂(µ₁, µ₁)`.
    pub floor_trials: usize,
}

pub struct PenaltyAblation;

impl Experiment for PenaltyAblation {
    const NAME: &'static str = "penalty-ablation";
    const TRAINING: bool = true;
    type Params = AblationParams;

    fn defaults(file: &ConfigFile, o: &Overrides) -> Result<AblationParams, CliError> {
        let (dim, train) = shift_defaults(file, o)?;
        Ok(AblationParams {
            dim,
            train,
            arms: vec![(80, 1e-3), (80, 1e-5), (20, 1e-3), (8, 1e-3)],
            floor_trials: 200,
        })
    }

    fn apply(p: &mut AblationParams, o: &Overrides) -> Vec<&'static str> {
        if let Some(e) = o.epochs {
            p.train.n_iters = e;
        }
        if let Some(t) = o.trials {
            p.floor_trials = t;
        }
        vec![]
    }

    fn run(p: &AblationParams, seeds: &[u64], ctx: &RunContext) -> Result<Output, CliError> {
        if p.arms.iter().any(|&(_, il)| !(il > 0.0)) {
            return Err(CliError::config("arms need positive inverse penalty weights"));
        }
        let mut t = Table::new(
            &columns(&["variant", "n", "inv_lambda", "penalty", "seed"], &[SHIFT_COLUMNS, &["v_floor"]].concat()),
            &["variant"],
        );
        for v in exp::ablation_variants(&p.train, &p.arms) {
            let c = &v.config;
            let penalty = if c.penalty == PenaltyKind::RffV { "v-stat" } else { "u-stat" };
            for &seed in seeds {
                let cfg = TrainConfig { seed, ..c.clone() };
                let out = ctx.train(&v.label, &cfg)?;
                let floor = exp::v_stat_floor(&cfg.target, &cfg.terminal_kernel, cfg.batch, cfg.features, p.floor_trials, seed)?;
                let mut row: Vec<Cell> = vec![
                    v.label.clone().into(),
                    cfg.batch.into(),
                    (1.0 / cfg.lambda).into(),
                    penalty.into(),
                    seed.into(),
                ];
                row.extend(shift_cells(&shift_metrics(&out.final_eval, &cfg)?));
                row.push(floor.mean.into());
                t.push(row);
            }
        }
        Ok(Output::new(t))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingParams {
    pub ns: Vec<usize>,
    pub m: usize,
    pub d: usize,
    pub alpha: f64,
    pub warmup: usize,
    /// Timed repetitions; the median is reported.
    pub reps: usize,
}

pub struct ScalingBench;

impl Experiment for ScalingBench {
    const NAME: &'static str = "scaling-bench";
    const TRAINING: bool = false;
    type Params = ScalingParams;

    fn defaults(_: &ConfigFile, _: &Overrides) -> Result<ScalingParams, CliError> {
        Ok(ScalingParams { ns: vec![100, 200, 500, 1000, 2000], m: 500, d: 10, alpha: 0.1, warmup: 2, reps: 7 })
    }

    fn apply(p: &mut ScalingParams, o: &Overrides) -> Vec<&'static str> {
        if let Some(t) = o.trials {
            p.reps = t;
        }
        if let Some(d) = o.dim {
            p.d = d;
        }
        if o.epochs.is_some() { vec!["epochs"] } else { vec![] }
    }

    fn run(p: &ScalingParams, seeds: &[u64], _: &RunContext) -> Result<Output, CliError> {
        let mut t = Table::new(&["seed", "n", "kernel_ms", "rf_ms", "speedup"], &["n"]);
        for &seed in seeds {
            for r in exp::scaling_bench(&p.ns, p.m, p.d, p.alpha, p.warmup, p.reps, seed)? {
                t.push(vec![seed.into(), r.n.into(), r.kernel_ms.into(), r.rf_ms.into(), r.speedup.into()]);
            }
        }
        Ok(Output::new(t))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvParams {
    pub train: TrainConfig,
    pub congestion: Vec<f64>,
}

pub struct EvCharging;

impl Experiment for EvCharging {
    const NAME: &'static str = "ev-charging";
    const TRAINING: bool = true;
    type Params = EvParams;

    fn defaults(_: &ConfigFile, _: &Overrides) -> Result<EvParams, CliError> {
        Ok(EvParams { train: presets::ev_charging(0.0), congestion: vec![0.0, 100.0] })
    }

    fn apply(p: &mut EvParams, o: &Overrides) -> Vec<&'static str> {
        let mut ignored = train_apply(&mut p.train, o);
        if o.dim.is_some() {
            ignored.push("dim");
        }
        ignored
    }

    fn run(p: &EvParams, seeds: &[u64], ctx: &RunContext) -> Result<Output, CliError> {
        let mut t = Table::new(
            &[
                "variant", "c", "seed", "soc_mean", "soc_std", "eval_mmd2", "mean_demand", "peak_demand", "sup_norm",
                "energy", "max_train_sup_norm",
            ],
            &["variant"],
        );
        for v in exp::congestion_variants(&p.train, &p.congestion) {
            for &seed in seeds {
                let cfg = TrainConfig { seed, ..v.config.clone() };
                let out = ctx.train(&v.label, &cfg)?;
                let e = &out.final_eval;
                let max_sup = out.records.iter().map(|r| r.sup_norm).fold(0.0, f64::max);
                t.push(vec![
                    v.label.clone().into(),
                    cfg.congestion.into(),
                    seed.into(),
                    e.terminal_mean[0].into(),
                    e.terminal_std[0].into(),
                    e.eval_mmd2.into(),
                    e.mean_demand.unwrap_or(f64::NAN).into(),
                    e.peak_demand.unwrap_or(f64::NAN).into(),
                    e.sup_norm.into(),
                    e.energy.into(),
                    max_sup.into(),
                ]);
            }
        }
        Ok(Output::new(t))
    }
}
