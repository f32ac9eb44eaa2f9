//! One function per pipeline stage. Every stage reads and writes inside the
//! run directory and records what it produced in the manifest.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use edgesplit_core::aggregator::{
    aggregate_accuracy, ensemble_average_accuracy, ensemble_majority_accuracy, init_for, train_aggregator,
};
use edgesplit_core::arch::{DeviceFleet, TransformerConfig};
use edgesplit_core::bo::{debo_search, PoolConfig, SearchConfig};
use edgesplit_core::booster::{
    calibrate_sequence, train_teacher, ToyClassifier, ToyDataset, ToyDegradation, ToyTrainConfig, WeightSign,
};
use edgesplit_core::config::ConfigFile;
use edgesplit_core::evaluator::{
    AnalyticLatency, BackboneLatency, DegradationOracle, Evaluator, Predictors, SyntheticDegradation,
    DEFAULT_BITS_PER_VALUE,
};
use edgesplit_core::latency::{
    collect_dataset, read_dataset, train_predictor, write_dataset, PredictorModel, ProfileParams, TrainConfig,
    PREDICTOR_FORMAT,
};
use edgesplit_core::simulator::{simulate, write_summary_csv, ScheduleMode, SimParams, SimReport, Workload};

use crate::artifacts::*;
use crate::error::{CliError, CliResult};

/// Toy-task shape shared by the toy oracle and `boost`.
const TOY_CLASSES: usize = 3;
const TOY_BLOBS_PER_CLASS: usize = 3;
const TOY_SAMPLES: usize = 600;
const TOY_RADIUS: f64 = 4.0;
const TEACHER_HIDDEN: usize = 64;

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Fleet description (TOML). Defaults to the run directory's config.toml,
    /// then to the built-in 3-device example fleet.
    #[arg(long)]
    pub fleet: Option<PathBuf>,
    /// Transformer description (TOML with a [transformer] section). Defaults
    /// to the fleet file's section, then the run directory's, then DeiT-Base.
    #[arg(long)]
    pub transformer: Option<PathBuf>,
    /// Run directory holding every artifact.
    #[arg(long)]
    pub out: PathBuf,
}

struct Context {
    dir: RunDir,
    fleet: DeviceFleet,
    base: TransformerConfig,
}

impl Context {
    fn new(c: &Common) -> CliResult<Self> {
        std::fs::create_dir_all(&c.out)?;
        let dir = RunDir::new(&c.out);
        let saved = if dir.exists(CONFIG_FILE) {
            Some(ConfigFile::load(&dir.path(CONFIG_FILE))?)
        } else {
            None
        };
        let given = c.fleet.as_deref().map(ConfigFile::load).transpose()?;
        let fleet = match (&given, &saved) {
            (Some(f), _) => f.fleet()?,
            (None, Some(s)) => s.fleet()?,
            (None, None) => DeviceFleet::example(),
        };
        let with_transformer = |f: &Option<ConfigFile>| f.clone().filter(|f| f.transformer.is_some());
        let base = if let Some(p) = &c.transformer {
            ConfigFile::load(p)?.transformer()?
        } else if let Some(f) = with_transformer(&given).or_else(|| with_transformer(&saved)) {
            f.transformer()?
        } else {
            TransformerConfig::deit_base()
        };
        for d in &fleet.devices {
            let safe = !d.name.is_empty()
                && d.name.chars().all(|ch| ch.is_ascii_alphanumeric() || matches!(ch, '-' | '_' | '.'))
                && !d.name.starts_with('.');
            if !safe {
                return Err(CliError::Config(format!(
                    "device name `{}` must be ASCII letters, digits, '-', '_' or '.'",
                    d.name
                )));
            }
        }
        dir.write_text(CONFIG_FILE, &ConfigFile::from_parts(&fleet, &base).to_toml())?;
        Ok(Self { dir, fleet, base })
    }

    fn device_names(&self) -> Vec<String> {
        self.fleet.devices.iter().map(|d| d.name.clone()).collect()
    }

    fn predictors(&self) -> CliResult<Predictors> {
        let named = self
            .fleet
            .devices
            .iter()
            .map(|d| {
                let path = self.dir.require(&predictor_file(&d.name))?;
                Ok((d.name.clone(), PredictorModel::load(&path)?))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Predictors::for_fleet(&self.fleet, named)?)
    }

    fn latency_source(&self, kind: LatencySourceKind) -> CliResult<Box<dyn BackboneLatency>> {
        Ok(match kind {
            LatencySourceKind::Predictor => Box::new(self.predictors()?),
            LatencySourceKind::Analytic => Box::new(AnalyticLatency::new(&self.base, &self.fleet)),
        })
    }

    fn policy(&self, path: Option<&PathBuf>) -> CliResult<PolicyFile> {
        let path = path.cloned().unwrap_or_else(|| self.dir.path(POLICY_FILE));
        PolicyFile::load(&path, &self.base, &self.fleet)
    }
}

/// Independent per-device seed derived from the command seed.
fn sub_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn toy_task(seed: u64, teacher_epochs: usize, lr: f64) -> CliResult<(ToyDataset, ToyClassifier, f64)> {
    let data = ToyDataset::gaussian_clusters(
        TOY_CLASSES,
        TOY_BLOBS_PER_CLASS,
        2,
        TOY_SAMPLES,
        TOY_SAMPLES,
        TOY_RADIUS,
        seed,
    )?;
    let cfg = ToyTrainConfig {
        epochs: teacher_epochs,
        lr,
        seed: sub_seed(seed, 0),
    };
    let (teacher, acc) = train_teacher(&data, TEACHER_HIDDEN, &cfg);
    Ok((data, teacher, acc))
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seed for every random draw of this command; always required.
    #[arg(long)]
    pub seed: u64,
    /// Profiled sub-models per device.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Log-normal measurement noise (standard deviation of the log).
    #[arg(long, default_value_t = 0.03)]
    pub noise: f64,
}

pub fn profile(args: &ProfileArgs) -> CliResult<()> {
    let ctx = Context::new(&args.common)?;
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(CliError::Config("--noise must be finite and >= 0".into()));
    }
    let params = ProfileParams {
        noise_sigma: args.noise,
        ..ProfileParams::default()
    };
    let mut written = Vec::new();
    for (i, dev) in ctx.fleet.devices.iter().enumerate() {
        let data = collect_dataset(dev, &ctx.base, args.samples, &params, sub_seed(args.seed, i))?;
        let rel = profile_file(&dev.name);
        write_dataset(&data, ctx.dir.create(&rel)?)?;
        println!("{rel}: {} samples", data.len());
        written.push((rel, CSV_FORMAT));
    }
    Manifest::record(
        &ctx.dir,
        "profile",
        &[
            ("seed", args.seed.to_string()),
            ("samples", args.samples.to_string()),
            ("noise", args.noise.to_string()),
        ],
        &written,
    )
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seed for every random draw of this command; always required.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 600)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let ctx = Context::new(&args.common)?;
    let mut written = Vec::new();
    let mut table = csv::Writer::from_writer(ctx.dir.create(PREDICTOR_REPORT_FILE)?);
    table.write_record([
        "device",
        "train_size",
        "holdout_size",
        "holdout_rmse_ms",
        "holdout_mean_ms",
        "relative_rmse",
    ])?;
    for (i, dev) in ctx.fleet.devices.iter().enumerate() {
        let data = read_dataset(std::fs::File::open(ctx.dir.require(&profile_file(&dev.name))?)?)?;
        let cfg = TrainConfig {
            hidden: args.hidden,
            epochs: args.epochs,
            lr: args.lr,
            batch_size: args.batch,
            holdout_fraction: args.holdout,
            seed: sub_seed(args.seed, i),
        };
        let (model, report) = train_predictor(&data, &cfg)?;
        let rel = predictor_file(&dev.name);
        ctx.dir.create(&rel)?;
        model.save(&ctx.dir.path(&rel))?;
        let relative = report.holdout_rmse_ms / report.holdout_mean_ms;
        table.write_record([
            dev.name.clone(),
            report.train_size.to_string(),
            report.holdout_size.to_string(),
            report.holdout_rmse_ms.to_string(),
            report.holdout_mean_ms.to_string(),
            relative.to_string(),
        ])?;
        println!("{rel}: holdout RMSE {:.3} ms ({:.2}% of mean)", report.holdout_rmse_ms, 100.0 * relative);
        written.push((rel, PREDICTOR_FORMAT));
    }
    table.flush()?;
    written.push((PREDICTOR_REPORT_FILE.to_string(), CSV_FORMAT));
    Manifest::record(
        &ctx.dir,
        "train-predictor",
        &[
            ("seed", args.seed.to_string()),
            ("hidden", args.hidden.to_string()),
            ("epochs", args.epochs.to_string()),
            ("lr", args.lr.to_string()),
            ("batch", args.batch.to_string()),
            ("holdout", args.holdout.to_string()),
        ],
        &written,
    )
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seed for every random draw of this command; always required.
    #[arg(long)]
    pub seed: u64,
    /// Random initial policies.
    #[arg(long, default_value_t = 10)]
    pub r: usize,
    /// Surrogate-guided search iterations.
    #[arg(long, default_value_t = 40)]
    pub iters: usize,
    /// Weight of latency (per ms) against degradation.
    #[arg(long, default_value_t = 0.005)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = LatencySourceKind::Predictor)]
    pub latency: LatencySourceKind,
    #[arg(long, value_enum, default_value_t = OracleKind::Synthetic)]
    pub oracle: OracleKind,
    /// Fresh random candidates scored per iteration.
    #[arg(long, default_value_t = 256)]
    pub pool: usize,
}

pub fn optimize(args: &OptimizeArgs) -> CliResult<()> {
    let ctx = Context::new(&args.common)?;
    let latency = ctx.latency_source(args.latency)?;
    let oracle: Box<dyn DegradationOracle> = match args.oracle {
        OracleKind::Synthetic => Box::new(SyntheticDegradation::new(&ctx.base)),
        OracleKind::Toy => {
            let (data, teacher, _) = toy_task(args.seed, 1500, 0.5)?;
            Box::new(ToyDegradation {
                base: ctx.base.clone(),
                data,
                teacher,
                train: ToyTrainConfig {
                    seed: sub_seed(args.seed, 1),
                    ..ToyTrainConfig::default()
                },
                sign: WeightSign::Literal,
            })
        }
    };
    let evaluator = Evaluator {
        base: &ctx.base,
        fleet: &ctx.fleet,
        latency: latency.as_ref(),
        oracle: oracle.as_ref(),
        delta: args.delta,
    };
    let cfg = SearchConfig {
        pool: PoolConfig {
            samples: args.pool,
            ..PoolConfig::default()
        },
        ..SearchConfig::new(args.r, args.iters, args.seed)
    };
    let result = debo_search(&evaluator, &cfg)?;
    let file = PolicyFile {
        format: POLICY_FORMAT.to_string(),
        devices: ctx.device_names(),
        seed: args.seed,
        r: args.r,
        iters: args.iters,
        latency: args.latency,
        oracle: args.oracle,
        objective: result.best_value,
        policy: result.best,
    };
    ctx.dir.write_json(POLICY_FILE, &file)?;
    result.log.write_csv(ctx.dir.create(BO_LOG_FILE)?)?;
    // the file on disk must survive its own validation
    ctx.policy(None)?;
    println!(
        "{POLICY_FILE}: psi {:.6} (degradation {:.6}, latency {:.3} ms) after {} evaluations",
        file.objective.psi,
        file.objective.degradation,
        file.objective.latency_ms,
        result.log.entries.len()
    );
    Manifest::record(
        &ctx.dir,
        "optimize",
        &[
            ("seed", args.seed.to_string()),
            ("r", args.r.to_string()),
            ("iters", args.iters.to_string()),
            ("delta", args.delta.to_string()),
            ("latency", format!("{:?}", args.latency).to_lowercase()),
            ("oracle", format!("{:?}", args.oracle).to_lowercase()),
            ("pool", args.pool.to_string()),
        ],
        &[(POLICY_FILE.to_string(), POLICY_FORMAT), (BO_LOG_FILE.to_string(), CSV_FORMAT)],
    )
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Policy file; defaults to the run directory's policy.json.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// aggregate, pipe, distri, single, or all.
    #[arg(long, default_value = "all")]
    pub mode: String,
    /// Backbone latency source; defaults to the one the policy was optimized with.
    #[arg(long, value_enum)]
    pub latency: Option<LatencySourceKind>,
    /// Uploads to the central node go one at a time.
    #[arg(long)]
    pub serialized_ingress: bool,
}

pub fn simulate_cmd(args: &SimulateArgs) -> CliResult<()> {
    let ctx = Context::new(&args.common)?;
    let policy = ctx.policy(args.policy.as_ref())?;
    let modes: Vec<ScheduleMode> = if args.mode == "all" {
        ScheduleMode::ALL.to_vec()
    } else {
        vec![ScheduleMode::from_str(&args.mode)?]
    };
    let latency = ctx.latency_source(args.latency.unwrap_or(policy.latency))?;
    let workload = Workload::from_policy(&policy.policy, &ctx.base, &ctx.fleet, latency.as_ref(), DEFAULT_BITS_PER_VALUE)?;
    let params = SimParams {
        serialized_ingress: args.serialized_ingress,
    };
    let mut reports: Vec<SimReport> = Vec::new();
    let mut written = Vec::new();
    for mode in modes {
        let report = simulate(&workload, &ctx.fleet, mode, &params)?;
        let rel = sim_file(mode.name());
        ctx.dir.write_json(
            &rel,
            &SimFile {
                format: SIM_FORMAT.to_string(),
                report: report.clone(),
            },
        )?;
        let timeline = timeline_file(mode.name());
        report.write_timeline_csv(&ctx.fleet, ctx.dir.create(&timeline)?)?;
        println!(
            "{rel}: {:.3} ms end to end, {:.1} mJ, idle share {:.3}, transmission fraction {:.3}",
            report.end_to_end_ms,
            report.total_energy_mj,
            report.idle_share(),
            report.transmission_fraction
        );
        written.push((rel, SIM_FORMAT));
        written.push((timeline, CSV_FORMAT));
        reports.push(report);
    }
    write_summary_csv(&reports, ctx.dir.create(SIM_SUMMARY_FILE)?)?;
    written.push((SIM_SUMMARY_FILE.to_string(), CSV_FORMAT));
    Manifest::record(
        &ctx.dir,
        "simulate",
        &[
            ("mode", args.mode.clone()),
            ("serialized_ingress", args.serialized_ingress.to_string()),
        ],
        &written,
    )
}

#[derive(Args, Debug)]
pub struct BoostArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seed for every random draw of this command; always required.
    #[arg(long)]
    pub seed: u64,
    /// Policy file; defaults to the run directory's policy.json.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Up-weight high-loss samples instead of down-weighting them.
    #[arg(long)]
    pub flip_sign: bool,
    #[arg(long, default_value_t = 1500)]
    pub teacher_epochs: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 300)]
    pub agg_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub agg_lr: f64,
    /// Width of the aggregation projection.
    #[arg(long, default_value_t = 64)]
    pub agg_dim: usize,
}

pub fn boost(args: &BoostArgs) -> CliResult<()> {
    let ctx = Context::new(&args.common)?;
    let policy = ctx.policy(args.policy.as_ref())?;
    let (data, teacher, teacher_acc) = toy_task(args.seed, args.teacher_epochs, args.lr)?;
    let sign = if args.flip_sign { WeightSign::Flipped } else { WeightSign::Literal };
    let train = ToyTrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        seed: sub_seed(args.seed, 1),
    };
    let sizing = ToyDegradation {
        base: ctx.base.clone(),
        data: data.clone(),
        teacher: teacher.clone(),
        train,
        sign,
    };
    let widths: Vec<usize> = policy.policy.sub_models.iter().map(|c| sizing.hidden_width(c)).collect();
    let cal = calibrate_sequence(&teacher, &widths, &data, &train, sign)?;
    let module = init_for(&cal.models, args.agg_dim, data.classes, sub_seed(args.seed, 2));
    let (module, losses) = train_aggregator(&module, &cal.models, &data.train, args.agg_epochs, args.agg_lr)?;
    let file = BoostFile {
        format: BOOST_FORMAT.to_string(),
        seed: args.seed,
        flipped_sign: args.flip_sign,
        teacher_hidden: TEACHER_HIDDEN,
        teacher_val_accuracy: teacher_acc,
        toy_losses: cal.rounds.iter().map(|r| r.val_loss).collect(),
        rounds: cal.rounds.clone(),
        aggregate_val_accuracy: aggregate_accuracy(&cal.models, &module, &data.val)?,
        ensemble_average_val_accuracy: ensemble_average_accuracy(&cal.models, &data.val)?,
        ensemble_majority_val_accuracy: ensemble_majority_accuracy(&cal.models, &data.val)?,
        aggregator_final_loss: losses.last().copied().unwrap_or(f64::NAN),
    };
    ctx.dir.write_json(BOOST_FILE, &file)?;
    let mut table = csv::Writer::from_writer(ctx.dir.create(BOOST_ROUNDS_FILE)?);
    table.write_record(["sub_model", "device", "hidden", "val_loss", "val_accuracy", "weight_entropy"])?;
    for (i, r) in cal.rounds.iter().enumerate() {
        table.write_record([
            i.to_string(),
            ctx.fleet.devices[i].name.clone(),
            r.hidden.to_string(),
            r.val_loss.to_string(),
            r.val_accuracy.to_string(),
            r.weight_entropy.to_string(),
        ])?;
    }
    table.flush()?;
    println!(
        "{BOOST_FILE}: aggregate {:.3}, best sub-model {:.3}, average {:.3}, majority {:.3} (val accuracy)",
        file.aggregate_val_accuracy,
        cal.rounds.iter().map(|r| r.val_accuracy).fold(0.0, f64::max),
        file.ensemble_average_val_accuracy,
        file.ensemble_majority_val_accuracy
    );
    Manifest::record(
        &ctx.dir,
        "boost",
        &[
            ("seed", args.seed.to_string()),
            ("flip_sign", args.flip_sign.to_string()),
            ("teacher_epochs", args.teacher_epochs.to_string()),
            ("epochs", args.epochs.to_string()),
            ("lr", args.lr.to_string()),
            ("agg_epochs", args.agg_epochs.to_string()),
            ("agg_lr", args.agg_lr.to_string()),
            ("agg_dim", args.agg_dim.to_string()),
        ],
        &[(BOOST_FILE.to_string(), BOOST_FORMAT), (BOOST_ROUNDS_FILE.to_string(), CSV_FORMAT)],
    )
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, serde::Deserialize)]
struct LogRow {
    iteration: usize,
    psi: f64,
    best_so_far: f64,
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let ctx = Context::new(&args.common)?;
    let manifest = Manifest::load_or_new(&ctx.dir)?;
    manifest.check_versions()?;
    let policy = ctx.policy(None)?;
    for d in &ctx.fleet.devices {
        let rel = predictor_file(&d.name);
        if ctx.dir.exists(&rel) {
            PredictorModel::load(&ctx.dir.path(&rel))?;
        }
    }

    let log: Vec<LogRow> = csv::Reader::from_reader(std::fs::File::open(ctx.dir.require(BO_LOG_FILE)?)?)
        .deserialize()
        .collect::<Result<_, _>>()?;
    let (first, last) = match (log.first(), log.last()) {
        (Some(f), Some(l)) => (f.best_so_far, l.best_so_far),
        _ => return Err(CliError::Config(format!("{BO_LOG_FILE} has no entries"))),
    };

    let mut modes = Vec::new();
    for mode in ScheduleMode::ALL {
        let rel = sim_file(mode.name());
        if ctx.dir.exists(&rel) {
            let sim: SimFile = ctx.dir.read_tagged(&rel, SIM_FORMAT)?;
            modes.push(ModeSummary {
                mode: mode.name().to_string(),
                end_to_end_ms: sim.report.end_to_end_ms,
                energy_mj: sim.report.total_energy_mj,
                idle_share: sim.report.idle_share(),
                transmission_fraction: sim.report.transmission_fraction,
            });
        }
    }
    if modes.is_empty() {
        return Err(CliError::MissingArtifact(sim_file(ScheduleMode::AggregateEdge.name())));
    }
    let mut speedup = BTreeMap::new();
    if let Some(agg) = modes.iter().find(|m| m.mode == ScheduleMode::AggregateEdge.name()) {
        for m in modes.iter().filter(|m| m.mode != agg.mode) {
            speedup.insert(m.mode.clone(), m.end_to_end_ms / agg.end_to_end_ms);
        }
    }

    let predictor_relative_rmse = if ctx.dir.exists(PREDICTOR_REPORT_FILE) {
        #[derive(serde::Deserialize)]
        struct Row {
            device: String,
            relative_rmse: f64,
        }
        let rows: Vec<Row> = csv::Reader::from_reader(std::fs::File::open(ctx.dir.path(PREDICTOR_REPORT_FILE))?)
            .deserialize()
            .collect::<Result<_, _>>()?;
        Some(rows.into_iter().map(|r| (r.device, r.relative_rmse)).collect())
    } else {
        None
    };
    let boost = if ctx.dir.exists(BOOST_FILE) {
        let b: BoostFile = ctx.dir.read_tagged(BOOST_FILE, BOOST_FORMAT)?;
        Some(BoostSummary {
            sub_model_val_accuracy: b.rounds.iter().map(|r| r.val_accuracy).collect(),
            aggregate_val_accuracy: b.aggregate_val_accuracy,
            ensemble_average_val_accuracy: b.ensemble_average_val_accuracy,
            ensemble_majority_val_accuracy: b.ensemble_majority_val_accuracy,
        })
    } else {
        None
    };

    let file = ReportFile {
        format: REPORT_FORMAT.to_string(),
        devices: ctx.device_names(),
        policy: policy.policy,
        objective: policy.objective,
        evaluations: log.len(),
        first_best_psi: first,
        final_best_psi: last,
        modes: modes.clone(),
        speedup,
        predictor_relative_rmse,
        boost,
    };
    ctx.dir.write_json(REPORT_FILE, &file)?;

    let mut table = csv::Writer::from_writer(ctx.dir.create(REPORT_MODES_FILE)?);
    table.write_record(["mode", "end_to_end_ms", "energy_mj", "idle_share", "transmission_fraction"])?;
    for m in &modes {
        table.write_record([
            m.mode.clone(),
            m.end_to_end_ms.to_string(),
            m.energy_mj.to_string(),
            m.idle_share.to_string(),
            m.transmission_fraction.to_string(),
        ])?;
    }
    table.flush()?;
    let mut table = csv::Writer::from_writer(ctx.dir.create(REPORT_TRAJECTORY_FILE)?);
    table.write_record(["iteration", "psi", "best_so_far"])?;
    for row in &log {
        table.write_record([row.iteration.to_string(), row.psi.to_string(), row.best_so_far.to_string()])?;
    }
    table.flush()?;

    println!("{REPORT_FILE}: best psi {first:.6} -> {last:.6} over {} evaluations", log.len());
    for m in &modes {
        println!(
            "  {:<14} {:>10.3} ms {:>10.1} mJ",
            m.mode, m.end_to_end_ms, m.energy_mj
        );
    }
    Manifest::record(
        &ctx.dir,
        "report",
        &[],
        &[
            (REPORT_FILE.to_string(), REPORT_FORMAT),
            (REPORT_MODES_FILE.to_string(), CSV_FORMAT),
            (REPORT_TRAJECTORY_FILE.to_string(), CSV_FORMAT),
        ],
    )
}
