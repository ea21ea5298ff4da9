//! `flatrec` command-line frontend: batch transforms, distribution
//! diagnostics, and cross-validated evaluation runs driven by flags or a
//! TOML config file. Flags win over the config file, which wins over
//! defaults; `FLATREC_SEED` slots between flag and file for the seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use flatrec::data::{load_ratings, Delimiter, LoadOptions};
use flatrec::distmetrics::analyze;
use flatrec::eval::{
    grid_search_with, run_experiment_with, standard_conditions, Condition, EvalReport,
    ExperimentOptions, GridAxes,
};
use flatrec::recsys::{Algorithm, ModelConfig};
use flatrec::transform::TransformSpec;
use flatrec::{Dataset64, RatingScale64};

#[derive(Parser)]
#[command(
    name = "flatrec",
    version,
    about = "Rating transformations, distribution diagnostics, and recommender evaluation"
)]
struct Cli {
    /// TOML config file supplying defaults for any flag
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// RNG seed for fold splits and model initialization
    #[arg(long, global = true, env = "FLATREC_SEED")]
    seed: Option<u64>,

    /// Worker threads for fold/condition cells (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Suppress timestamp header lines so reruns are byte-identical
    #[arg(long, global = true)]
    deterministic: bool,

    /// Directory receiving output files (created if missing)
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply transforms and dump one TSV per spec
    Transform(TransformArgs),
    /// Distribution diagnostics per transform: JSON report plus plot CSV
    Analyze(AnalyzeArgs),
    /// Cross-validated evaluation of transform conditions
    Evaluate(EvaluateArgs),
    /// Hyperparameter grid search for one transform
    GridSearch(GridSearchArgs),
    /// Summarize a previously written evaluation report
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Ratings file with user, item, value columns
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,

    /// Field separator: tab, comma, or colons
    #[arg(long, value_name = "NAME")]
    format: Option<String>,

    /// Rating scale override as lo:hi:step (inferred when omitted)
    #[arg(long, value_name = "LO:HI:STEP")]
    scale: Option<String>,
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Transform spec, repeatable: kind[:rule][:orientation][:k=INT]
    #[arg(long = "spec", value_name = "SPEC")]
    specs: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Transform spec, repeatable (default: identity)
    #[arg(long = "spec", value_name = "SPEC")]
    specs: Vec<String>,
}

#[derive(Args)]
struct ModelArgs {
    /// biasedmf, svdpp, userknn, or itemknn
    #[arg(long)]
    algorithm: Option<Algorithm>,

    #[arg(long)]
    factors: Option<usize>,

    #[arg(long)]
    iterations: Option<usize>,

    #[arg(long)]
    learning_rate: Option<f64>,

    #[arg(long)]
    reg_bias: Option<f64>,

    #[arg(long)]
    reg_factors: Option<f64>,

    #[arg(long)]
    neighbors: Option<usize>,
}

#[derive(Args)]
struct EvalCommonArgs {
    #[arg(long)]
    k_folds: Option<usize>,

    /// Recommendation list length N for nDCG@N
    #[arg(long)]
    list_size: Option<usize>,

    /// Catalog fraction treated as the short head
    #[arg(long)]
    long_tail_cut: Option<f64>,

    /// Raw-rating threshold for a held-out item to count as relevant
    #[arg(long)]
    relevance_threshold: Option<f64>,
}

#[derive(Args)]
struct GridArgs {
    /// Grid axis override, comma-separated (e.g. 0.005,0.01)
    #[arg(long, value_name = "LIST")]
    grid_regularization: Option<String>,

    #[arg(long, value_name = "LIST")]
    grid_factors: Option<String>,

    #[arg(long, value_name = "LIST")]
    grid_iterations: Option<String>,

    #[arg(long, value_name = "LIST")]
    grid_learning_rates: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Transform spec, repeatable (default: the five standard conditions)
    #[arg(long = "spec", value_name = "SPEC")]
    specs: Vec<String>,

    #[command(flatten)]
    model: ModelArgs,

    #[command(flatten)]
    eval: EvalCommonArgs,

    /// Tune each condition on the grid first and evaluate the winners
    #[arg(long)]
    grid: bool,

    #[command(flatten)]
    grid_axes: GridArgs,
}

#[derive(Args)]
struct GridSearchArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Single transform spec to tune (default: identity)
    #[arg(long = "spec", value_name = "SPEC")]
    specs: Vec<String>,

    #[command(flatten)]
    model: ModelArgs,

    #[command(flatten)]
    eval: EvalCommonArgs,

    #[command(flatten)]
    grid_axes: GridArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation report JSON written by `evaluate`
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    format: Option<String>,
    scale: Option<String>,
    transforms: Option<Vec<String>>,
    algorithm: Option<String>,
    k_folds: Option<usize>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    list_size: Option<usize>,
    jobs: Option<usize>,
    factors: Option<usize>,
    iterations: Option<usize>,
    learning_rate: Option<f64>,
    reg_bias: Option<f64>,
    reg_factors: Option<f64>,
    neighbors: Option<usize>,
    long_tail_cut: Option<f64>,
    relevance_threshold: Option<f64>,
    grid: Option<GridFileConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFileConfig {
    regularization: Option<Vec<f64>>,
    factors: Option<Vec<usize>>,
    iterations: Option<Vec<usize>>,
    learning_rates: Option<Vec<f64>>,
}

/// Settled global options every command sees.
struct Ctx {
    file: FileConfig,
    seed: u64,
    out_dir: PathBuf,
    deterministic: bool,
}

impl Ctx {
    fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("invalid config file {}", path.display()))?
        }
        None => FileConfig::default(),
    };

    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .context("cannot configure worker pool")?;
        }
    }

    let out_dir = cli
        .output_dir
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out_dir,
        deterministic: cli.deterministic,
        file,
    };

    match cli.command {
        Command::Transform(args) => cmd_transform(&ctx, &args),
        Command::Analyze(args) => cmd_analyze(&ctx, &args),
        Command::Evaluate(args) => cmd_evaluate(&ctx, &args),
        Command::GridSearch(args) => cmd_grid_search(&ctx, &args),
        Command::Report(args) => cmd_report(&args),
    }
}

fn load_dataset(ctx: &Ctx, data: &DataArgs) -> Result<Dataset64> {
    let path = data
        .input
        .clone()
        .or_else(|| ctx.file.input.clone())
        .context("no input dataset; pass --input or set `input` in the config file")?;
    if !path.exists() {
        bail!("dataset file {} does not exist", path.display());
    }
    let format = data
        .format
        .clone()
        .or_else(|| ctx.file.format.clone())
        .unwrap_or_else(|| "tab".into());
    let delimiter = Delimiter::parse_name(&format)
        .with_context(|| format!("unknown format '{format}' (expected tab, comma, or colons)"))?;
    let scale = match data.scale.clone().or_else(|| ctx.file.scale.clone()) {
        Some(text) => Some(parse_scale(&text)?),
        None => None,
    };
    load_ratings(&path, &LoadOptions { delimiter, scale })
        .with_context(|| format!("cannot load ratings from {}", path.display()))
}

fn parse_scale(text: &str) -> Result<RatingScale64> {
    let parts: Vec<&str> = text.split(':').collect();
    let usage = || format!("invalid scale '{text}' (expected lo:hi:step, e.g. 0.5:4.0:0.5)");
    if parts.len() != 3 {
        bail!(usage());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(usage)?;
    RatingScale64::from_range(nums[0], nums[1], nums[2]).with_context(usage)
}

/// CLI specs win over the config file's transform list.
fn resolve_specs(ctx: &Ctx, cli_specs: &[String]) -> Result<Option<Vec<TransformSpec>>> {
    let raw: Option<&[String]> = if !cli_specs.is_empty() {
        Some(cli_specs)
    } else {
        ctx.file.transforms.as_deref()
    };
    let Some(raw) = raw else { return Ok(None) };
    if raw.is_empty() {
        bail!("transform list is empty");
    }
    raw.iter().map(|s| parse_spec(s)).collect::<Result<Vec<_>>>().map(Some)
}

fn parse_spec(text: &str) -> Result<TransformSpec> {
    TransformSpec::from_str(text).with_context(|| {
        format!(
            "unknown transform spec '{text}'\nusage: kind[:rule][:orientation][:k=INT], \
             e.g. identity, zscore:user, per:last:user, smoothed:last:user:k=2"
        )
    })
}

fn file_stem(spec: &TransformSpec) -> String {
    spec.to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_timestamp(ctx: &Ctx, w: &mut impl Write) -> std::io::Result<()> {
    if !ctx.deterministic {
        writeln!(w, "#timestamp={}", unix_now())?;
    }
    Ok(())
}

fn cmd_transform(ctx: &Ctx, args: &TransformArgs) -> Result<u8> {
    let specs = resolve_specs(ctx, &args.specs)?
        .context("no transforms given; pass --spec or set `transforms` in the config file")?;
    let dataset = load_dataset(ctx, &args.data)?;
    for spec in specs {
        let matrix = spec.apply(&dataset);
        let path = ctx.out_path(&format!("transform_{}.tsv", file_stem(&spec)));
        let mut w = BufWriter::new(
            File::create(&path).with_context(|| format!("cannot write {}", path.display()))?,
        );
        writeln!(w, "#transform={spec}")?;
        write_timestamp(ctx, &mut w)?;
        for entry in matrix.entries() {
            writeln!(
                w,
                "{}\t{}\t{:.4}",
                matrix.user_label(entry.user),
                matrix.item_label(entry.item),
                entry.value
            )?;
        }
        w.flush()?;
        eprintln!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_analyze(ctx: &Ctx, args: &AnalyzeArgs) -> Result<u8> {
    let specs = resolve_specs(ctx, &args.specs)?.unwrap_or_else(|| vec![TransformSpec::Identity]);
    let dataset = load_dataset(ctx, &args.data)?;
    for spec in specs {
        let matrix = spec.apply(&dataset);
        let report = analyze(&matrix, dataset.scale())?;
        let stem = file_stem(&spec);

        let json_path = ctx.out_path(&format!("analysis_{stem}.json"));
        fs::write(&json_path, report.to_json())
            .with_context(|| format!("cannot write {}", json_path.display()))?;

        let csv_path = ctx.out_path(&format!("analysis_{stem}_plot.csv"));
        let mut w = BufWriter::new(
            File::create(&csv_path)
                .with_context(|| format!("cannot write {}", csv_path.display()))?,
        );
        write_timestamp(ctx, &mut w)?;
        report.write_plot_csv(&mut w)?;
        w.flush()?;

        match report.kurtosis {
            Some(k) => eprintln!(
                "{spec}: flatness {:.4}, kurtosis {:.4} -> {}",
                report.flatness,
                k,
                json_path.display()
            ),
            None => eprintln!(
                "{spec}: flatness {:.4}, kurtosis undefined -> {}",
                report.flatness,
                json_path.display()
            ),
        }
    }
    Ok(0)
}

fn model_config(ctx: &Ctx, model: &ModelArgs, seed: u64) -> Result<ModelConfig<f64>> {
    let algorithm = match (&model.algorithm, &ctx.file.algorithm) {
        (Some(a), _) => *a,
        (None, Some(name)) => Algorithm::from_str(name)?,
        (None, None) => Algorithm::BiasedMf,
    };
    let mut config = ModelConfig::new(algorithm);
    if let Some(v) = model.factors.or(ctx.file.factors) {
        config.factors = v;
    }
    if let Some(v) = model.iterations.or(ctx.file.iterations) {
        config.iterations = v;
    }
    if let Some(v) = model.learning_rate.or(ctx.file.learning_rate) {
        config.learning_rate = v;
    }
    if let Some(v) = model.reg_bias.or(ctx.file.reg_bias) {
        config.reg_bias = v;
    }
    if let Some(v) = model.reg_factors.or(ctx.file.reg_factors) {
        config.reg_factors = v;
    }
    if let Some(v) = model.neighbors.or(ctx.file.neighbors) {
        config.neighbors = v;
    }
    config.seed = seed;
    config.validate()?;
    Ok(config)
}

fn experiment_options(ctx: &Ctx, eval: &EvalCommonArgs) -> Result<ExperimentOptions> {
    let mut options = ExperimentOptions::default();
    if let Some(v) = eval.list_size.or(ctx.file.list_size) {
        if v < 1 {
            bail!("list_size must be >= 1, got {v}");
        }
        options.list_size = v;
    }
    if let Some(v) = eval.long_tail_cut.or(ctx.file.long_tail_cut) {
        options.long_tail_cut = v;
    }
    if let Some(v) = eval.relevance_threshold.or(ctx.file.relevance_threshold) {
        options.relevance_threshold = Some(v);
    }
    Ok(options)
}

fn parse_list<T: FromStr>(text: &str, axis: &str) -> Result<Vec<T>> {
    let vals: std::result::Result<Vec<T>, _> =
        text.split(',').map(|p| p.trim().parse::<T>()).collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => bail!("invalid {axis} list '{text}' (expected comma-separated values)"),
    }
}

fn grid_axes(ctx: &Ctx, grid: &GridArgs) -> Result<GridAxes<f64>> {
    let mut axes = GridAxes::default();
    let file = ctx.file.grid.as_ref();
    if let Some(text) = &grid.grid_regularization {
        axes.regularization = parse_list(text, "regularization")?;
    } else if let Some(v) = file.and_then(|g| g.regularization.clone()) {
        axes.regularization = v;
    }
    if let Some(text) = &grid.grid_factors {
        axes.factors = parse_list(text, "factors")?;
    } else if let Some(v) = file.and_then(|g| g.factors.clone()) {
        axes.factors = v;
    }
    if let Some(text) = &grid.grid_iterations {
        axes.iterations = parse_list(text, "iterations")?;
    } else if let Some(v) = file.and_then(|g| g.iterations.clone()) {
        axes.iterations = v;
    }
    if let Some(text) = &grid.grid_learning_rates {
        axes.learning_rates = parse_list(text, "learning rate")?;
    } else if let Some(v) = file.and_then(|g| g.learning_rates.clone()) {
        axes.learning_rates = v;
    }
    Ok(axes)
}

fn k_folds(ctx: &Ctx, eval: &EvalCommonArgs) -> usize {
    eval.k_folds.or(ctx.file.k_folds).unwrap_or(5)
}

fn write_report_files(ctx: &Ctx, stem: &str, report: &EvalReport<f64>) -> Result<()> {
    let json_path = ctx.out_path(&format!("{stem}.json"));
    fs::write(&json_path, report.to_json())
        .with_context(|| format!("cannot write {}", json_path.display()))?;

    let csv_path = ctx.out_path(&format!("{stem}.csv"));
    let mut w = BufWriter::new(
        File::create(&csv_path).with_context(|| format!("cannot write {}", csv_path.display()))?,
    );
    write_timestamp(ctx, &mut w)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    eprintln!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<u8> {
    let dataset = load_dataset(ctx, &args.data)?;
    let config = model_config(ctx, &args.model, ctx.seed)?;
    let options = experiment_options(ctx, &args.eval)?;
    let folds = k_folds(ctx, &args.eval);
    let specs = resolve_specs(ctx, &args.specs)?;

    let conditions: Vec<Condition<f64>> = if args.grid {
        let axes = grid_axes(ctx, &args.grid_axes)?;
        let specs = specs.unwrap_or_else(|| {
            standard_conditions(&config).into_iter().map(|c| c.transform).collect()
        });
        let mut tuned = Vec::new();
        let mut best_rows = Vec::new();
        for spec in specs {
            eprintln!("tuning {spec} on {} cells", axes.cells(config.algorithm, 0)?.len());
            let result = grid_search_with(
                &dataset,
                config.algorithm,
                &axes,
                spec,
                folds,
                ctx.seed,
                &options,
            )?;
            best_rows.push(serde_json::json!({
                "transform": spec.to_string(),
                "best_config": result.best_config,
                "best_ndcg": result.best_ndcg,
                "n_cells": result.n_cells,
                "failed_cells": result.failed.len(),
            }));
            tuned.push(Condition::new(spec, result.best_config));
        }
        let path = ctx.out_path("best_configs.json");
        fs::write(&path, serde_json::to_string_pretty(&best_rows)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
        eprintln!("wrote {}", path.display());
        tuned
    } else {
        match specs {
            Some(specs) => specs.into_iter().map(|s| Condition::new(s, config)).collect(),
            None => standard_conditions(&config),
        }
    };

    let report = run_experiment_with(&dataset, &conditions, folds, ctx.seed, &options)?;
    write_report_files(ctx, "eval_report", &report)?;

    let failed: Vec<&str> = report
        .conditions
        .iter()
        .filter(|c| c.error.is_some())
        .map(|c| c.condition.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("conditions failed to train: {}", failed.join(", "));
        Ok(2)
    }
}

fn cmd_grid_search(ctx: &Ctx, args: &GridSearchArgs) -> Result<u8> {
    let spec = match resolve_specs(ctx, &args.specs)? {
        None => TransformSpec::Identity,
        Some(specs) if specs.len() == 1 => specs[0],
        Some(specs) => bail!("grid-search tunes one transform, got {}", specs.len()),
    };
    let dataset = load_dataset(ctx, &args.data)?;
    let config = model_config(ctx, &args.model, ctx.seed)?;
    let options = experiment_options(ctx, &args.eval)?;
    let axes = grid_axes(ctx, &args.grid_axes)?;

    let result = grid_search_with(
        &dataset,
        config.algorithm,
        &axes,
        spec,
        k_folds(ctx, &args.eval),
        ctx.seed,
        &options,
    )?;

    let json_path = ctx.out_path("grid_search.json");
    fs::write(&json_path, serde_json::to_string_pretty(&result)?)
        .with_context(|| format!("cannot write {}", json_path.display()))?;
    write_report_files(ctx, "grid_search_report", &result.report)?;
    eprintln!(
        "best nDCG {:.4} over {} cells ({} failed) -> {}",
        result.best_ndcg,
        result.n_cells,
        result.failed.len(),
        json_path.display()
    );
    Ok(0)
}

fn json_f64(v: &serde_json::Value) -> Option<f64> {
    v.as_f64()
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

fn cmd_report(args: &ReportArgs) -> Result<u8> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("cannot read {}", args.input.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", args.input.display()))?;

    println!(
        "evaluation: {} folds, seed {}, list size {}",
        v["k_folds"], v["seed"], v["list_size"]
    );
    println!();
    println!(
        "{:<34} {:>10} {:>10} {:>10} {:>10}",
        "condition", "ndcg", "long_tail", "flatness", "kurtosis"
    );
    let conditions = v["conditions"].as_array().cloned().unwrap_or_default();
    for c in &conditions {
        let name = c["condition"]["name"].as_str().unwrap_or("?");
        if let Some(e) = c["error"].as_str() {
            println!("{name:<34} failed: {e}");
            continue;
        }
        println!(
            "{:<34} {:>10} {:>10} {:>10} {:>10}",
            name,
            fmt_opt(json_f64(&c["mean_ndcg"])),
            fmt_opt(json_f64(&c["mean_long_tail_ndcg"])),
            fmt_opt(json_f64(&c["mean_flatness"])),
            fmt_opt(json_f64(&c["mean_kurtosis"])),
        );
    }

    let mut printed_header = false;
    for c in &conditions {
        let name = c["condition"]["name"].as_str().unwrap_or("?");
        for s in c["significance"].as_array().into_iter().flatten() {
            if !printed_header {
                println!();
                println!("paired t-tests against the raw baseline:");
                printed_header = true;
            }
            let marker = if s["significant_p05"].as_bool().unwrap_or(false) {
                " (p < 0.05)"
            } else {
                ""
            };
            println!(
                "  {name} vs {}: {} t = {}, p = {}{marker}",
                s["baseline"].as_str().unwrap_or("?"),
                s["metric"].as_str().unwrap_or("?"),
                fmt_opt(json_f64(&s["t"])),
                fmt_opt(json_f64(&s["p"])),
            );
        }
    }

    let correlations = v["correlations"].as_array().cloned().unwrap_or_default();
    if !correlations.is_empty() {
        println!();
        println!("flatness/kurtosis vs nDCG across conditions:");
        for corr in &correlations {
            println!(
                "  {}: corr(flatness, ndcg) = {}, corr(kurtosis, ndcg) = {} over {} conditions",
                corr["group"].as_str().unwrap_or("?"),
                fmt_opt(json_f64(&corr["flatness_ndcg"])),
                fmt_opt(json_f64(&corr["kurtosis_ndcg"])),
                corr["n_conditions"],
            );
        }
    }
    Ok(0)
}
