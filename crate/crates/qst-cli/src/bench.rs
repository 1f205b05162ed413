//! `qst bench-noise` and `qst bench-compare`: mean-fidelity tables over
//! noise levels and over methods.
//!
//! Noise is applied at evaluation time to each record's stored state, so
//! one clean dataset serves every noise level. The per-record corruption
//! rng is seeded exactly as dataset generation would seed it, making an
//! eval-time noisy view reproduce a generated noisy record. Classical
//! methods fan out across records; results always reduce in record order,
//! so reruns produce identical fidelity cells.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qst_core::dataset::{self, DatasetRecord, Manifest};
use qst_core::hilbert::DensityMatrix;
use qst_core::measurement::{GridKets, HusimiGrid};
use qst_core::noise::{mix_with_random, pepper, photon_loss, NoiseKind};
use qst_core::par;
use qst_core::states::Family;
use qst_core::Error;

use crate::engine::{self, EngineConfig, NeuralState, RecordOutcome};
use crate::report::{fmt_f64, Table, EMPTY_CELL};
use crate::util::{self, CliError, CliResult, Method};

/// One prepared evaluation case: the grid handed to the method, the state
/// its output is scored against, and the record's class label.
type View = (HusimiGrid, DensityMatrix, usize);

#[derive(Debug, Args)]
pub struct BenchCommon {
    /// Dataset directory; falls back to QST_DATA_DIR.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Comma-separated method list.
    #[arg(long, value_delimiter = ',', value_enum, required = true)]
    pub methods: Vec<Method>,

    /// Report destination (structured text, `#qst-table v1`).
    #[arg(long)]
    pub out: PathBuf,

    /// Iteration budget for mle and the gradient methods.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,

    /// Adam learning rate for the gradient methods.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,

    /// Adam epsilon for the gradient methods.
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,

    /// Initialization seed for the gradient methods (and the split for
    /// bench-compare).
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Damping for the iterative maximum-likelihood update.
    #[arg(long, default_value_t = 0.2)]
    pub damping: f64,

    /// Ridge added to the linear-inversion normal equations.
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,

    /// Trained classifier-regressor checkpoint (required for method rfb).
    #[arg(long)]
    pub checkpoint_rfb: Option<PathBuf>,

    /// Trained measurement-supervised checkpoint (required for method msnn).
    #[arg(long)]
    pub checkpoint_msnn: Option<PathBuf>,
}

impl BenchCommon {
    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            iters: self.iters,
            lr: self.lr,
            epsilon: self.epsilon,
            seed: self.seed,
            damping: self.damping,
            ridge: self.ridge,
        }
    }

    fn method_names(&self) -> String {
        self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NoiseKindArg {
    Mixed,
    PhotonLoss,
    Pepper,
}

impl NoiseKindArg {
    fn kind_name(self) -> &'static str {
        match self {
            NoiseKindArg::Mixed => "mixed",
            NoiseKindArg::PhotonLoss => "photon-loss",
            NoiseKindArg::Pepper => "pepper",
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchNoiseArgs {
    #[command(flatten)]
    pub common: BenchCommon,

    /// Corruption channel applied to every record at evaluation time.
    #[arg(long, value_enum)]
    pub noise_kind: NoiseKindArg,

    /// Comma-separated noise levels, one table column each.
    #[arg(long, value_delimiter = ',', required = true)]
    pub levels: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct BenchCompareArgs {
    #[command(flatten)]
    pub common: BenchCommon,

    /// Fraction of each class held out as the validation set.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
}

/// Runs one method over prepared views. Classical methods run data-parallel
/// across records; neural methods run on this thread because the
/// measurement-supervised model is mutable state.
fn record_outcomes(
    method: Method,
    views: &[View],
    config: &EngineConfig,
    neural: &mut NeuralState,
) -> Vec<CliResult<RecordOutcome>> {
    if method.is_neural() {
        views
            .iter()
            .map(|(grid, truth, label)| engine::run_neural(method, grid, truth, *label, neural))
            .collect()
    } else {
        par::map_indexed(views.len(), |i| {
            let (grid, truth, _) = &views[i];
            engine::run_classical(method, grid, truth, config)
        })
    }
}

/// Record-order reduction to a mean fidelity. Failed records score zero;
/// more than 10% failures aborts the benchmark.
fn reduce_outcomes(
    method: Method,
    outcomes: &[CliResult<RecordOutcome>],
) -> CliResult<(f64, Vec<f64>)> {
    let n = outcomes.len();
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    if failures * 10 > n {
        return Err(CliError::Core(Error::Inconsistency(format!(
            "method {} failed on {failures} of {n} records",
            method.name()
        ))));
    }
    let fidelities: Vec<f64> = outcomes
        .iter()
        .map(|o| o.as_ref().map(|r| r.fidelity).unwrap_or(0.0))
        .collect();
    let mean = fidelities.iter().sum::<f64>() / n as f64;
    Ok((mean, fidelities))
}

/// Corrupts every record's stored state at one noise level, seeding each
/// record's rng the way generation would.
fn noisy_views(
    records: &[DatasetRecord],
    manifest: &Manifest,
    kets: &GridKets,
    kind: NoiseKind,
) -> CliResult<Vec<View>> {
    let results: qst_core::Result<Vec<View>> = par::map_indexed(records.len(), |i| {
        let record = &records[i];
        let draw_seed = dataset::noise_seed(dataset::record_seed(manifest.global_seed, i as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        let view = match kind {
            NoiseKind::MixedState { zeta } => {
                let rho = mix_with_random(&record.rho, zeta, &mut rng)?;
                let grid = kets.evaluate(&rho)?;
                (grid, rho, record.label as usize)
            }
            NoiseKind::PhotonLoss { gamma_tau } => {
                let rho = photon_loss(&record.rho, gamma_tau)?;
                let grid = kets.evaluate(&rho)?;
                (grid, rho, record.label as usize)
            }
            NoiseKind::Pepper { fraction } => {
                let clean = kets.evaluate(&record.rho)?;
                let grid = pepper(&clean, fraction, &mut rng)?;
                (grid, record.rho.clone(), record.label as usize)
            }
        };
        Ok(view)
    })
    .into_iter()
    .collect();
    Ok(results?)
}

pub fn run_noise(args: &BenchNoiseArgs) -> CliResult {
    let dir = util::resolve_data_dir(args.common.data.clone(), "--data")?;
    let config = args.common.engine_config();
    let kind_name = args.noise_kind.kind_name();

    // Validate every level before any work; a bad level is a usage error.
    let kinds: Vec<NoiseKind> = args
        .levels
        .iter()
        .map(|&level| dataset::noise_kind_from_name(kind_name, level))
        .collect::<qst_core::Result<_>>()?;

    let mut entries = vec![
        ("data", dir.display().to_string()),
        ("methods", args.common.method_names()),
        ("noise_kind", kind_name.to_string()),
        (
            "levels",
            args.levels.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        ),
        ("out", args.common.out.display().to_string()),
    ];
    entries.extend(config.entries());
    util::print_config("bench-noise", &entries);

    let mut neural = NeuralState::load(
        &args.common.methods,
        args.common.checkpoint_rfb.as_deref(),
        args.common.checkpoint_msnn.as_deref(),
    )?;

    let (records, manifest) = dataset::load(&dir)?;
    if records.is_empty() {
        return Err(CliError::Core(Error::Inconsistency("dataset holds no records".into())));
    }
    let geometry = manifest.geometry()?;
    let kets = GridKets::new(&geometry, manifest.dim)?;

    let views_per_level: Vec<Vec<View>> = kinds
        .iter()
        .map(|&kind| noisy_views(&records, &manifest, &kets, kind))
        .collect::<CliResult<_>>()?;

    let mut columns = vec!["method".to_string()];
    columns.extend(args.levels.iter().map(f64::to_string));
    let mut table = Table::new(columns);
    table.meta("command", "bench-noise");
    table.meta("noise_kind", kind_name);
    table.meta("records", records.len());
    table.meta("global_seed", manifest.global_seed);
    for (key, value) in config.entries() {
        table.meta(key, value);
    }

    for &method in &args.common.methods {
        let mut cells = vec![method.name().to_string()];
        for views in &views_per_level {
            let outcomes = record_outcomes(method, views, &config, &mut neural);
            let (mean, _) = reduce_outcomes(method, &outcomes)?;
            cells.push(fmt_f64(mean));
        }
        println!(
            "{}: {}",
            method.name(),
            cells[1..]
                .iter()
                .map(|c| format!("{:.4}", c.parse::<f64>().unwrap_or(f64::NAN)))
                .collect::<Vec<_>>()
                .join(" ")
        );
        table.row(cells);
    }

    table.write(&args.common.out)?;
    println!("report written to {}", args.common.out.display());
    Ok(())
}

pub fn run_compare(args: &BenchCompareArgs) -> CliResult {
    let dir = util::resolve_data_dir(args.common.data.clone(), "--data")?;
    let config = args.common.engine_config();

    let mut entries = vec![
        ("data", dir.display().to_string()),
        ("methods", args.common.method_names()),
        ("val_fraction", args.val_fraction.to_string()),
        ("out", args.common.out.display().to_string()),
    ];
    entries.extend(config.entries());
    util::print_config("bench-compare", &entries);

    let mut neural = NeuralState::load(
        &args.common.methods,
        args.common.checkpoint_rfb.as_deref(),
        args.common.checkpoint_msnn.as_deref(),
    )?;

    let (records, manifest) = dataset::load(&dir)?;
    let (_, val_idx) = dataset::split(
        &manifest,
        (1.0 - args.val_fraction, args.val_fraction),
        args.common.seed,
    )?;
    if val_idx.is_empty() {
        return Err(CliError::Usage(format!(
            "--val-fraction {} leaves no validation records",
            args.val_fraction
        )));
    }
    let geometry = manifest.geometry()?;

    let views: Vec<View> = val_idx
        .iter()
        .map(|&i| {
            let r = &records[i];
            Ok((r.husimi_grid(&geometry)?, r.rho.clone(), r.label as usize))
        })
        .collect::<CliResult<_>>()?;

    // Per-class columns follow the manifest's class order.
    let class_labels: Vec<u8> = manifest
        .classes
        .iter()
        .map(|name| Family::from_name(name).map(|f| f.label()))
        .collect::<qst_core::Result<_>>()?;

    let mut columns = vec![
        "method".to_string(),
        "mean_fidelity".to_string(),
        "wall_ms".to_string(),
    ];
    columns.extend(manifest.classes.iter().map(|name| format!("class:{name}")));
    let mut table = Table::new(columns);
    table.meta("command", "bench-compare");
    table.meta("records", views.len());
    table.meta("val_fraction", args.val_fraction);
    table.meta("global_seed", manifest.global_seed);
    for (key, value) in config.entries() {
        table.meta(key, value);
    }

    for &method in &args.common.methods {
        let started = Instant::now();
        let outcomes = record_outcomes(method, &views, &config, &mut neural);
        let wall_ms = started.elapsed().as_millis();
        let (mean, fidelities) = reduce_outcomes(method, &outcomes)?;

        let mut cells = vec![method.name().to_string(), fmt_f64(mean), wall_ms.to_string()];
        for &label in &class_labels {
            let class_scores: Vec<f64> = views
                .iter()
                .zip(&fidelities)
                .filter(|((_, _, l), _)| *l == label as usize)
                .map(|(_, &f)| f)
                .collect();
            if class_scores.is_empty() {
                cells.push(EMPTY_CELL.to_string());
            } else {
                cells.push(fmt_f64(class_scores.iter().sum::<f64>() / class_scores.len() as f64));
            }
        }
        println!("{}: mean_fidelity={mean:.4} wall_ms={wall_ms}", method.name());
        table.row(cells);
    }

    table.write(&args.common.out)?;
    println!("report written to {}", args.common.out.display());
    Ok(())
}
