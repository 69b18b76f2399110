use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use competence_kit::{
    aggregate_reports, calibrated_report, fit_calibrator, fit_score_model,
    generate_synthetic_task, load_task_bundle, open_world_sweep, region_report,
    save_task_bundle, tradeoff_curve, ErrorKind, Interpolation, LabeledSplit, LoadOptions,
    RegionReport, ScoreConfig, ScoreMethod, ScoreModel, SyntheticConfig, TaskBundle,
};

const DEFAULT_Q: f64 = 0.95;
const DEFAULT_FRACTIONS: [f64; 6] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25];

#[derive(Parser)]
#[command(
    name = "competence-kit",
    version,
    about = "Incompetence scores, competence regions, and accuracy/coverage analysis \
             for frozen classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Task bundle: a manifest.json path or the directory holding one.
    #[arg(long, global = true)]
    bundle: Option<PathBuf>,

    /// Score method; repeat the flag to run several in one invocation.
    #[arg(long, global = true)]
    method: Vec<String>,

    /// Run manifest JSON supplying defaults for bundle, score configs, q,
    /// fractions, out, and seed. Explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// ID-validation quantile for the score threshold, in (0, 1].
    #[arg(long, global = true)]
    q: Option<f64>,

    /// Seed for open-world sampling and synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; COMPETENCE_KIT_THREADS is the fallback. Output bytes
    /// do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Report failures as machine-readable JSON on stderr.
    #[arg(long, global = true)]
    json_errors: bool,

    /// Skip the logits-vs-head consistency check while loading the bundle.
    #[arg(long, global = true)]
    no_head_check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Score bundle splits and write per-split CSVs plus fit metadata.
    Score {
        /// Split to score (id_train, id_val, id_test, ood_test, open_world);
        /// repeatable. Default: every split present.
        #[arg(long)]
        split: Vec<String>,
    },
    /// Write a region report at the q-quantile threshold plus the trade-off curve.
    Report,
    /// Write only the accuracy/coverage trade-off curve.
    Curve,
    /// Fit a monotone error-rate calibrator on ID validation and report at the
    /// accuracy-target threshold.
    Calibrate {
        /// Step interpolation between calibrator breakpoints (default: linear).
        #[arg(long)]
        step: bool,
    },
    /// Sweep open-world contamination fractions at a fixed ID threshold.
    Openworld {
        /// Comma-separated contamination fractions in [0, 1).
        #[arg(long)]
        fractions: Option<String>,
    },
    /// Generate a synthetic task bundle.
    Synth(SynthArgs),
    /// Combine region report JSON files into a median/quantile table.
    Aggregate {
        /// Report JSON files produced by `report`, `calibrate`, or `openworld`.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Comma-separated report meta keys to group by.
        #[arg(long)]
        group_by: Option<String>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    n_ood: Option<usize>,
    #[arg(long)]
    n_open: Option<usize>,
    #[arg(long)]
    open_classes: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

/// Batch-run defaults; every field is optional and any explicit flag wins.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunManifest {
    bundle: Option<PathBuf>,
    score_configs: Vec<ScoreConfig>,
    q: Option<f64>,
    fractions: Option<Vec<f64>>,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

enum CliError {
    Usage(String),
    Core(competence_kit::Error),
}

impl From<competence_kit::Error> for CliError {
    fn from(err: competence_kit::Error) -> Self {
        CliError::Core(err)
    }
}

fn emit_error(err: &CliError, json: bool) -> u8 {
    let (kind, code, message) = match err {
        CliError::Usage(message) => ("Usage", 2u8, message.clone()),
        CliError::Core(e) => {
            let code = match e.kind() {
                ErrorKind::Io => 3,
                ErrorKind::Data => 4,
                ErrorKind::Numeric => 5,
            };
            (e.name(), code, e.to_string())
        }
    };
    if json {
        let payload = serde_json::json!({
            "error": { "kind": kind, "message": message, "exit_code": code }
        });
        eprintln!("{payload}");
    } else {
        eprintln!("error: {message}");
    }
    code
}

/// Everything a command needs, resolved from flags over manifest over defaults.
struct Ctx {
    bundle: Option<PathBuf>,
    configs: Vec<ScoreConfig>,
    q: f64,
    fractions: Vec<f64>,
    out: PathBuf,
    seed: u64,
    head_check: bool,
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::Core(competence_kit::Error::MissingFile {
                path: path.to_path_buf(),
            })
        } else {
            CliError::Core(competence_kit::Error::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    })
}

fn parse_fraction_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("invalid fraction {t:?}")))
        })
        .collect()
}

fn resolve(cli: &Cli, fractions_flag: Option<&str>) -> Result<Ctx, CliError> {
    let manifest: RunManifest = match &cli.config {
        Some(path) => {
            let text = read_file(path)?;
            serde_json::from_str(&text).map_err(|e| {
                competence_kit::Error::MalformedHeader {
                    path: path.clone(),
                    reason: e.to_string(),
                }
            })?
        }
        None => RunManifest::default(),
    };

    let mut configs: Vec<ScoreConfig> = Vec::new();
    if cli.method.is_empty() {
        for (i, config) in manifest.score_configs.iter().enumerate() {
            if config.method.is_none() {
                return Err(CliError::Usage(format!(
                    "score_configs[{i}] in the run manifest names no method"
                )));
            }
            configs.push(config.clone());
        }
    } else {
        for name in &cli.method {
            let method: ScoreMethod = name
                .parse()
                .map_err(|_| CliError::Usage(format!("unknown score method {name:?}")))?;
            // A manifest entry for the same method supplies its parameters.
            let mut config = manifest
                .score_configs
                .iter()
                .find(|c| c.method == Some(method))
                .cloned()
                .unwrap_or_default();
            config.method = Some(method);
            configs.push(config);
        }
    }

    let q = cli.q.or(manifest.q).unwrap_or(DEFAULT_Q);
    if !(q > 0.0 && q <= 1.0) {
        return Err(CliError::Usage(format!("--q must lie in (0, 1], got {q}")));
    }

    let fractions = match fractions_flag {
        Some(text) => parse_fraction_list(text)?,
        None => manifest
            .fractions
            .clone()
            .unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec()),
    };
    for &fraction in &fractions {
        if !(0.0..1.0).contains(&fraction) {
            return Err(CliError::Usage(format!(
                "fractions must lie in [0, 1), got {fraction}"
            )));
        }
    }

    Ok(Ctx {
        bundle: cli.bundle.clone().or(manifest.bundle),
        configs,
        q,
        fractions,
        out: cli
            .out
            .clone()
            .or(manifest.out)
            .unwrap_or_else(|| PathBuf::from(".")),
        seed: cli.seed.or(manifest.seed).unwrap_or(0),
        head_check: !cli.no_head_check,
    })
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let count = match flag {
        Some(n) => Some(n),
        None => match std::env::var("COMPETENCE_KIT_THREADS") {
            Ok(value) => Some(value.parse::<usize>().map_err(|_| {
                CliError::Usage(format!(
                    "COMPETENCE_KIT_THREADS must be a positive integer, got {value:?}"
                ))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = count {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".to_string()));
        }
        // Ignore the error from a pool that already exists; size is advisory.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn load_bundle(ctx: &Ctx) -> Result<TaskBundle, CliError> {
    let given = ctx.bundle.as_ref().ok_or_else(|| {
        CliError::Usage("--bundle is required for this command".to_string())
    })?;
    let manifest_path = if given.is_dir() {
        given.join("manifest.json")
    } else {
        given.clone()
    };
    Ok(load_task_bundle(
        &manifest_path,
        &LoadOptions {
            check_head_consistency: ctx.head_check,
        },
    )?)
}

fn require_configs(ctx: &Ctx) -> Result<(), CliError> {
    if ctx.configs.is_empty() {
        return Err(CliError::Usage(
            "no score method selected; pass --method or a run manifest with score_configs"
                .to_string(),
        ));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| competence_kit::Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| competence_kit::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn scores_csv(scores: &[f64]) -> String {
    let mut out = String::from("index,score\n");
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    out
}

fn model_meta_json(model: &ScoreModel) -> String {
    let mut root: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    root.insert("digest".to_string(), model.digest().into());
    root.insert("method".to_string(), model.method().name().into());
    let parameters: serde_json::Map<String, serde_json::Value> = model
        .describe()
        .into_iter()
        .filter(|(k, _)| k != "method")
        .map(|(k, v)| (k, v.into()))
        .collect();
    root.insert("parameters".to_string(), parameters.into());
    let warnings: Vec<serde_json::Value> = model
        .warnings()
        .iter()
        .map(|w| w.to_string().into())
        .collect();
    root.insert("warnings".to_string(), warnings.into());
    let mut text = serde_json::to_string_pretty(&root).expect("meta serialization cannot fail");
    text.push('\n');
    text
}

fn stamp_meta(report: &mut RegionReport, model: &ScoreModel, q: Option<f64>) {
    for (key, value) in model.describe() {
        report.meta.insert(key, value);
    }
    report.meta.insert("digest".to_string(), model.digest());
    if let Some(q) = q {
        report.meta.insert("q".to_string(), q.to_string());
    }
}

fn each_model<'a>(
    ctx: &'a Ctx,
    bundle: &'a TaskBundle,
) -> impl Iterator<Item = Result<(ScoreMethod, ScoreModel, PathBuf), CliError>> + 'a {
    ctx.configs.iter().map(move |config| {
        let method = config.method.expect("resolve() guarantees a method");
        let model = fit_score_model(method, &bundle.id_train, &bundle.head, config)?;
        let dir = ctx.out.join(method.name());
        Ok((method, model, dir))
    })
}

fn cmd_score(ctx: &Ctx, splits: &[String]) -> Result<(), CliError> {
    require_configs(ctx)?;
    let bundle = load_bundle(ctx)?;
    let selected = select_splits(&bundle, splits)?;
    for item in each_model(ctx, &bundle) {
        let (_, model, dir) = item?;
        for (name, split) in &selected {
            let scores = model.score_split(split)?;
            write_text(&dir.join(format!("{name}_scores.csv")), &scores_csv(&scores))?;
        }
        write_text(&dir.join("meta.json"), &model_meta_json(&model))?;
    }
    Ok(())
}

fn select_splits<'a>(
    bundle: &'a TaskBundle,
    requested: &[String],
) -> Result<Vec<(&'static str, &'a LabeledSplit)>, CliError> {
    if requested.is_empty() {
        let mut all: Vec<(&'static str, &LabeledSplit)> = vec![
            ("id_train", &bundle.id_train),
            ("id_val", &bundle.id_val),
            ("id_test", &bundle.id_test),
            ("ood_test", &bundle.ood_test),
        ];
        if let Some(open) = &bundle.open_world {
            all.push(("open_world", open));
        }
        return Ok(all);
    }
    requested
        .iter()
        .map(|name| match name.as_str() {
            "id_train" => Ok(("id_train", &bundle.id_train)),
            "id_val" => Ok(("id_val", &bundle.id_val)),
            "id_test" => Ok(("id_test", &bundle.id_test)),
            "ood_test" => Ok(("ood_test", &bundle.ood_test)),
            "open_world" => bundle
                .open_world
                .as_ref()
                .map(|open| ("open_world", open))
                .ok_or(CliError::Core(competence_kit::Error::MissingOpenWorldSplit)),
            other => Err(CliError::Usage(format!("unknown split {other:?}"))),
        })
        .collect()
}

fn cmd_report(ctx: &Ctx, with_report: bool) -> Result<(), CliError> {
    require_configs(ctx)?;
    let bundle = load_bundle(ctx)?;
    let a_id = bundle.id_test.accuracy();
    let ood_correct = bundle.ood_test.correct();
    let id_val_correct = bundle.id_val.correct();
    for item in each_model(ctx, &bundle) {
        let (_, model, dir) = item?;
        let id_val_scores = model.score_split(&bundle.id_val)?;
        let ood_scores = model.score_split(&bundle.ood_test)?;
        if with_report {
            let mut report = region_report(
                id_val_scores.values(),
                a_id,
                ood_scores.values(),
                &ood_correct,
                ctx.q,
            )?;
            stamp_meta(&mut report, &model, Some(ctx.q));
            let mut text = report.to_json();
            text.push('\n');
            write_text(&dir.join("report.json"), &text)?;
        }
        let curve = tradeoff_curve(
            ood_scores.values(),
            &ood_correct,
            id_val_scores.values(),
            &id_val_correct,
        )?;
        write_text(&dir.join("curve.csv"), &curve.to_csv())?;
    }
    Ok(())
}

fn cmd_calibrate(ctx: &Ctx, step: bool) -> Result<(), CliError> {
    require_configs(ctx)?;
    let bundle = load_bundle(ctx)?;
    let a_id = bundle.id_test.accuracy();
    let interpolation = if step {
        Interpolation::Step
    } else {
        Interpolation::Linear
    };
    let val_errors: Vec<bool> = bundle.id_val.correct().iter().map(|&c| !c).collect();
    let ood_correct = bundle.ood_test.correct();
    for item in each_model(ctx, &bundle) {
        let (_, model, dir) = item?;
        let id_val_scores = model.score_split(&bundle.id_val)?;
        let calibrator = fit_calibrator(id_val_scores.values(), &val_errors, interpolation)?;
        let mut text = calibrator.to_json();
        text.push('\n');
        write_text(&dir.join("calibrator.json"), &text)?;

        let ood_scores = model.score_split(&bundle.ood_test)?;
        let mut report = calibrated_report(
            &calibrator,
            a_id,
            ood_scores.values(),
            &ood_correct,
            id_val_scores.values(),
        )?;
        stamp_meta(&mut report, &model, None);
        report.meta.insert(
            "interpolation".to_string(),
            match interpolation {
                Interpolation::Linear => "linear".to_string(),
                Interpolation::Step => "step".to_string(),
            },
        );
        let mut text = report.to_json();
        text.push('\n');
        write_text(&dir.join("calibrated_report.json"), &text)?;
    }
    Ok(())
}

fn cmd_openworld(ctx: &Ctx) -> Result<(), CliError> {
    require_configs(ctx)?;
    let bundle = load_bundle(ctx)?;
    for item in each_model(ctx, &bundle) {
        let (_, model, dir) = item?;
        let sweep = open_world_sweep(&bundle, &model, &ctx.fractions, ctx.q, ctx.seed)?;
        let mut text = sweep.to_json();
        text.push('\n');
        write_text(&dir.join("openworld.json"), &text)?;
        write_text(&dir.join("openworld.csv"), &sweep.to_csv())?;
    }
    Ok(())
}

fn cmd_synth(ctx: &Ctx, args: &SynthArgs) -> Result<(), CliError> {
    let defaults = SyntheticConfig::default();
    let config = SyntheticConfig {
        num_classes: args.classes.unwrap_or(defaults.num_classes),
        feature_dim: args.dim.unwrap_or(defaults.feature_dim),
        n_train: args.n_train.unwrap_or(defaults.n_train),
        n_val: args.n_val.unwrap_or(defaults.n_val),
        n_test: args.n_test.unwrap_or(defaults.n_test),
        n_ood: args.n_ood.unwrap_or(defaults.n_ood),
        n_open: args.n_open.unwrap_or(defaults.n_open),
        open_world_classes: args.open_classes.unwrap_or(defaults.open_world_classes),
        radius: args.radius.unwrap_or(defaults.radius),
        sigma: args.sigma.unwrap_or(defaults.sigma),
        delta: args.delta.unwrap_or(defaults.delta),
        seed: ctx.seed,
    };
    let bundle = generate_synthetic_task(&config)?;
    save_task_bundle(&ctx.out, &bundle)?;
    Ok(())
}

fn cmd_aggregate(
    ctx: &Ctx,
    files: &[PathBuf],
    group_by: Option<&str>,
) -> Result<(), CliError> {
    let mut reports = Vec::with_capacity(files.len());
    for path in files {
        let text = read_file(path)?;
        let report: RegionReport = serde_json::from_str(&text).map_err(|e| {
            competence_kit::Error::MalformedHeader {
                path: path.clone(),
                reason: e.to_string(),
            }
        })?;
        reports.push(report);
    }
    let keys: Vec<String> = group_by
        .map(|text| {
            text.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let csv = aggregate_reports(&reports, &keys)?;
    write_text(&ctx.out.join("aggregate.csv"), &csv)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    let fractions_flag = match &cli.command {
        Command::Openworld { fractions } => fractions.as_deref(),
        _ => None,
    };
    let ctx = resolve(cli, fractions_flag)?;
    match &cli.command {
        Command::Score { split } => cmd_score(&ctx, split),
        Command::Report => cmd_report(&ctx, true),
        Command::Curve => cmd_report(&ctx, false),
        Command::Calibrate { step } => cmd_calibrate(&ctx, *step),
        Command::Openworld { .. } => cmd_openworld(&ctx),
        Command::Synth(args) => cmd_synth(&ctx, args),
        Command::Aggregate { files, group_by } => {
            cmd_aggregate(&ctx, files, group_by.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.json_errors;
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => ExitCode::from(emit_error(&err, json_errors)),
    }
}
