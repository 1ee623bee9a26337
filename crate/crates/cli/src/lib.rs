//! Command-line surface of the `mixlaw` binary.

pub mod api;
pub mod server;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use mixlaw::design::{sample_design, select_fitting_subset, DesignSpace};
use mixlaw::fit::{fit_boosted, fit_explicit, fit_implicit, fit_power_law, select_form, FitConfig};
use mixlaw::io::{data_digest, points_digest};
use mixlaw::optimize::pareto_report_for;
use mixlaw::{
    critical_proportion, load_runs, run_pipeline, ArtifactModel, Error, ExpDomainLaw, LawArtifact, LawForm,
    LossTarget, Mixture, PipelineConfig, Predictor, Provenance, RunRecord,
};

use api::OptimizeRequest;

#[derive(Parser, Debug)]
#[command(name = "mixlaw", version, about = "Fit data mixing laws and search training mixtures")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Report perplexity (exp of the loss) next to each loss.
    #[arg(long, global = true)]
    pub perplexity: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a law and write it as an artifact.
    Fit(FitArgs),
    /// Compare the candidate forms M1-M4 on a fit/validation split.
    SelectForm(SelectFormArgs),
    /// Enumerate candidate mixtures and sample an experiment design.
    Design(DesignArgs),
    /// Choose the fitting subset whose law predicts all runs best.
    Subset(SubsetArgs),
    /// Nested step, size and mixing-law prediction.
    Pipeline(PipelineArgs),
    /// Loss-minimizing mixture of an artifact, optionally with a Pareto report.
    Optimize(OptimizeArgs),
    /// Continual-pretraining critical proportion.
    Critical(CriticalArgs),
    /// Evaluate an artifact at given mixtures.
    Predict(PredictArgs),
    /// Serve an artifact over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct FitOptions {
    /// JSON file with a fit configuration; flags below override it.
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub descent_iters: Option<usize>,
    /// Number of implicit validation domains.
    #[arg(short = 'k', long)]
    pub implicit_domains: Option<usize>,
    #[arg(long)]
    pub boost_stages: Option<usize>,
}

impl FitOptions {
    pub fn resolve(&self, seed: u64) -> anyhow::Result<FitConfig> {
        let mut config = match &self.fit_config {
            Some(path) => read_json(path)?,
            None => FitConfig::default(),
        };
        config.seed = seed;
        if let Some(v) = self.restarts {
            config.restarts = v;
        }
        if let Some(v) = self.max_iters {
            config.max_iters = v;
        }
        if let Some(v) = self.descent_iters {
            config.descent_iters = v;
        }
        if let Some(v) = self.implicit_domains {
            config.implicit_domains = v;
        }
        if let Some(v) = self.boost_stages {
            config.boost_stages = v;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
pub struct RunSelection {
    /// Run table (comma- or tab-separated).
    #[arg(long)]
    pub runs: PathBuf,
    /// Keep only runs of this model size.
    #[arg(long)]
    pub size: Option<u64>,
    /// Keep only rows at this step; by default each run's last row is used.
    #[arg(long)]
    pub step: Option<u64>,
}

impl RunSelection {
    pub fn load(&self) -> anyhow::Result<(Vec<RunRecord>, String)> {
        let all = load_runs(&self.runs).with_context(|| format!("loading {}", self.runs.display()))?;
        let digest = data_digest(&all)?;
        let mut rows: Vec<RunRecord> = all
            .into_iter()
            .filter(|r| self.size.is_none_or(|s| r.model_size == s))
            .filter(|r| self.step.is_none_or(|s| r.step == s))
            .collect();
        if self.step.is_none() {
            let mut last: BTreeMap<String, u64> = BTreeMap::new();
            for r in &rows {
                let e = last.entry(r.run_id.clone()).or_insert(r.step);
                *e = (*e).max(r.step);
            }
            rows.retain(|r| last[&r.run_id] == r.step);
        }
        if rows.is_empty() {
            bail!(Error::InsufficientPoints { needed: 1, got: 0 });
        }
        log::info!("using {} rows of {}", rows.len(), self.runs.display());
        Ok((rows, digest))
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(subcommand)]
    pub kind: FitKind,
}

#[derive(Subcommand, Debug)]
pub enum FitKind {
    /// One validation domain's law.
    Explicit {
        #[command(flatten)]
        runs: RunSelection,
        /// Validation domain to fit.
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "M4")]
        form: LawForm,
        #[command(flatten)]
        options: FitOptions,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Overall loss with latent validation domains and learned weights.
    Implicit {
        #[command(flatten)]
        runs: RunSelection,
        #[command(flatten)]
        options: FitOptions,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Boosted ensemble of implicit fits.
    Boosted {
        #[command(flatten)]
        runs: RunSelection,
        #[command(flatten)]
        options: FitOptions,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Power law `c + k x^alpha` from a two-column `x,loss` table.
    Power {
        #[arg(long)]
        points: PathBuf,
        #[command(flatten)]
        options: FitOptions,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct SelectFormArgs {
    #[command(flatten)]
    pub runs: RunSelection,
    #[arg(long)]
    pub target: String,
    /// Validation run ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub val_ids: Vec<String>,
    /// Fitting run ids; every other run by default.
    #[arg(long, value_delimiter = ',')]
    pub fit_ids: Vec<String>,
    #[command(flatten)]
    pub options: FitOptions,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    /// Maximum proportion per domain, non-increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    pub r_max: Vec<f64>,
    #[arg(long)]
    pub delta: f64,
    /// Number of mixtures to sample.
    #[arg(short, long)]
    pub n: usize,
    #[arg(long, value_delimiter = ',')]
    pub names: Vec<String>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SubsetArgs {
    #[command(flatten)]
    pub runs: RunSelection,
    #[arg(long)]
    pub subset_size: usize,
    #[arg(long)]
    pub resamples: usize,
    /// `overall` or a validation domain.
    #[arg(long, default_value = "overall")]
    pub target: LossTarget,
    #[command(flatten)]
    pub options: FitOptions,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub runs: PathBuf,
    /// JSON pipeline configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Mixture to predict, comma-separated; repeatable.
    #[arg(long = "target-mixture")]
    pub targets: Vec<String>,
    /// Boost the overall mixing-law fit.
    #[arg(long)]
    pub boosted: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long)]
    pub refine_iters: Option<usize>,
    /// Per-domain bounds `lo:hi`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub bounds: Vec<String>,
    /// Add a Pareto report over the validation domains.
    #[arg(long)]
    pub pareto: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CriticalArgs {
    #[arg(long)]
    pub c: f64,
    #[arg(long)]
    pub k: f64,
    #[arg(long)]
    pub t: f64,
    /// Original-data loss before continual pretraining.
    #[arg(long)]
    pub l0: f64,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    /// Mixture, comma-separated; repeatable.
    #[arg(long = "mixture")]
    pub mixtures: Vec<String>,
    /// Abscissa for power-law artifacts; repeatable.
    #[arg(long = "x")]
    pub xs: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())).into())
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Writes `text` to `output`, or stdout when no path is given.
fn emit(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            log::info!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn log_config<T: Serialize>(command: &str, seed: u64, config: &T) {
    let config = serde_json::to_string(config).unwrap_or_default();
    log::info!("{command}: seed={seed} config={config}");
}

pub fn parse_proportions(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad proportion {v:?} in {text:?}")))
        .collect()
}

fn parse_bounds(items: &[String]) -> anyhow::Result<Option<Vec<[f64; 2]>>> {
    if items.is_empty() {
        return Ok(None);
    }
    items
        .iter()
        .map(|b| {
            let (lo, hi) = b.split_once(':').with_context(|| format!("bound {b:?} is not lo:hi"))?;
            Ok([lo.trim().parse()?, hi.trim().parse()?])
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .map(Some)
}

fn save_artifact(artifact: &LawArtifact, output: Option<&Path>, summary: serde_json::Value) -> anyhow::Result<()> {
    match output {
        Some(path) => {
            artifact.save(path)?;
            log::info!("wrote {} artifact to {}", artifact.kind(), path.display());
            print!("{}", to_json(&summary)?);
        }
        None => print!("{}", artifact.to_json()?),
    }
    Ok(())
}

fn provenance(command: &str, config: serde_json::Value, seed: u64, digest: String, maes: &[(&str, f64)]) -> Provenance {
    Provenance {
        command: command.to_string(),
        config,
        seed,
        data_digest: digest,
        stage_maes: maes.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn run_fit(kind: &FitKind, seed: u64) -> anyhow::Result<()> {
    match kind {
        FitKind::Explicit { runs, target, form, options, output } => {
            let config = options.resolve(seed)?;
            log_config("fit explicit", seed, &config);
            let (records, digest) = runs.load()?;
            let report = fit_explicit(&records, target, *form, &config)?;
            let settings = json!({"fit": config, "target": target, "form": form, "size": runs.size, "step": runs.step});
            let artifact = LawArtifact::new(
                ArtifactModel::Predictor(Predictor::Mixing(report.model.clone())),
                provenance("fit explicit", settings, seed, digest, &[("train", report.train_mae)]),
            );
            let summary = json!({"kind": "explicit", "train_mae": report.train_mae, "objective": report.objective, "converged": report.converged});
            save_artifact(&artifact, output.as_deref(), summary)
        }
        FitKind::Implicit { runs, options, output } | FitKind::Boosted { runs, options, output } => {
            let boosted = matches!(kind, FitKind::Boosted { .. });
            let name = if boosted { "fit boosted" } else { "fit implicit" };
            let config = options.resolve(seed)?;
            log_config(name, seed, &config);
            let (records, digest) = runs.load()?;
            let (model, report_mae, objective, converged) = if boosted {
                let r = fit_boosted(&records, &config)?;
                (Predictor::Ensemble(r.model), r.train_mae, r.objective, r.converged)
            } else {
                let r = fit_implicit(&records, &config)?;
                (Predictor::Mixing(r.model), r.train_mae, r.objective, r.converged)
            };
            let settings = json!({"fit": config, "size": runs.size, "step": runs.step});
            let artifact = LawArtifact::new(
                ArtifactModel::Predictor(model),
                provenance(name, settings, seed, digest, &[("train", report_mae)]),
            );
            let summary = json!({"kind": artifact.kind(), "train_mae": report_mae, "objective": objective, "converged": converged});
            save_artifact(&artifact, output.as_deref(), summary)
        }
        FitKind::Power { points, options, output } => {
            let config = options.resolve(seed)?;
            log_config("fit power", seed, &config);
            let data = load_points(points)?;
            let report = fit_power_law(&data, &config)?;
            let artifact = LawArtifact::new(
                ArtifactModel::PowerLaw(report.model.clone()),
                provenance("fit power", json!({"fit": config}), seed, points_digest(&data), &[("train", report.train_mae)]),
            );
            let summary = json!({"kind": "power-law", "train_mae": report.train_mae, "objective": report.objective, "converged": report.converged});
            save_artifact(&artifact, output.as_deref(), summary)
        }
    }
}

/// Reads a two-column `x,loss` table.
fn load_points(path: &Path) -> anyhow::Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim().replace(' ', "") == "x,loss" => {}
        _ => bail!(Error::Schema(format!("{} must start with the header x,loss", path.display()))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let parse = || -> Option<(f64, f64)> {
                let (x, y) = l.split_once(',')?;
                Some((x.trim().parse().ok()?, y.trim().parse().ok()?))
            };
            parse().ok_or_else(|| Error::Parse { line: i as u64 + 1, detail: format!("expected x,loss but got {l:?}") }.into())
        })
        .collect()
}

fn load_artifact(path: &Path) -> anyhow::Result<LawArtifact> {
    LawArtifact::load(path).with_context(|| format!("loading artifact {}", path.display()))
}

fn optimize_output(
    artifact: &LawArtifact,
    request: &OptimizeRequest,
    pareto: bool,
    with_perplexity: bool,
) -> anyhow::Result<serde_json::Value> {
    let surface = artifact
        .surface()
        .ok_or_else(|| Error::InvalidConfig(format!("a {} artifact has no mixture surface", artifact.kind())))?;
    let result = api::optimize(surface, request, with_perplexity)?;
    let mut out = serde_json::to_value(&result)?;
    if pareto {
        let model = match &artifact.model {
            ArtifactModel::Predictor(Predictor::Mixing(m)) if !m.weights_learned() => m,
            ArtifactModel::Pipeline(p) if p.domain_model.is_some() => p.domain_model.as_ref().unwrap(),
            _ => bail!(Error::InvalidConfig("pareto reports need per-domain explicit laws".into())),
        };
        let step = request.config().grid_step_for(model.training_domains().len());
        out["pareto"] = serde_json::to_value(pareto_report_for(model, step)?)?;
    }
    Ok(out)
}

/// Runs one parsed command, printing its output.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Fit(args) => run_fit(&args.kind, seed),
        Command::SelectForm(args) => {
            let config = args.options.resolve(seed)?;
            log_config("select-form", seed, &config);
            let (records, _) = args.runs.load()?;
            let fit_ids: Vec<String> = if args.fit_ids.is_empty() {
                records.iter().map(|r| r.run_id.clone()).filter(|id| !args.val_ids.contains(id)).collect()
            } else {
                args.fit_ids.clone()
            };
            let table = select_form(&records, &args.target, &fit_ids, &args.val_ids, &config)?;
            emit(args.output.as_deref(), &to_json(&table)?)
        }
        Command::Design(args) => {
            let names = if args.names.is_empty() {
                mixlaw::mixture::default_domain_names(args.r_max.len())
            } else {
                args.names.clone()
            };
            let space = DesignSpace::with_names(args.r_max.clone(), args.delta, args.n, names)?;
            log_config("design", seed, &space);
            let result = sample_design(&space, seed)?;
            emit(args.output.as_deref(), &to_json(&result)?)
        }
        Command::Subset(args) => {
            let config = args.options.resolve(seed)?;
            log_config("subset", seed, &json!({"fit": config, "subset_size": args.subset_size, "resamples": args.resamples, "target": args.target}));
            let (records, _) = args.runs.load()?;
            let chosen = select_fitting_subset(&records, args.subset_size, args.resamples, &args.target, &config)?;
            emit(args.output.as_deref(), &to_json(&chosen)?)
        }
        Command::Pipeline(args) => {
            let mut config: PipelineConfig = read_json(&args.config)?;
            config.fit_config.seed = seed;
            config.boosted |= args.boosted;
            log_config("pipeline", seed, &config);
            let records = load_runs(&args.runs).with_context(|| format!("loading {}", args.runs.display()))?;
            let names = records.first().map(|r| r.mixture.domain_names().to_vec()).unwrap_or_default();
            let targets = args
                .targets
                .iter()
                .map(|t| Ok(Mixture::new(parse_proportions(t)?, names.clone())?))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let prediction = run_pipeline(&records, &targets, &config)?;
            let mut maes = vec![("step", prediction.stage_maes.step), ("size", prediction.stage_maes.size)];
            let mixing: Vec<(String, f64)> = prediction.stage_maes.mixing.iter().map(|(k, v)| (format!("mixing:{k}"), *v)).collect();
            maes.extend(mixing.iter().map(|(k, v)| (k.as_str(), *v)));
            let summary = json!({
                "kind": "pipeline",
                "stage_maes": prediction.stage_maes,
                "predicted": prediction.predicted,
                "warnings": prediction.warnings,
            });
            let artifact = LawArtifact::new(
                ArtifactModel::Pipeline(Box::new(prediction.clone())),
                provenance("pipeline", serde_json::to_value(&config)?, seed, data_digest(&records)?, &maes),
            );
            save_artifact(&artifact, args.output.as_deref(), summary)
        }
        Command::Optimize(args) => {
            let artifact = load_artifact(&args.artifact)?;
            let request = OptimizeRequest {
                bounds: parse_bounds(&args.bounds)?,
                grid_step: args.grid_step,
                refine_iters: args.refine_iters,
            };
            log_config("optimize", seed, &request.config());
            let out = optimize_output(&artifact, &request, args.pareto, cli.perplexity)?;
            emit(args.output.as_deref(), &to_json(&out)?)
        }
        Command::Critical(args) => {
            log_config("critical", seed, &json!({"c": args.c, "k": args.k, "t": args.t, "l0": args.l0}));
            let law = ExpDomainLaw::two_domain(args.c, args.k, args.t)?;
            let r = critical_proportion(&law, args.l0)?;
            println!("{r}");
            Ok(())
        }
        Command::Predict(args) => {
            let artifact = load_artifact(&args.artifact)?;
            log_config("predict", seed, &json!({"artifact": args.artifact, "mixtures": args.mixtures, "x": args.xs}));
            let out = match (&artifact.model, artifact.surface()) {
                (ArtifactModel::PowerLaw(law), _) => {
                    let rows = args
                        .xs
                        .iter()
                        .map(|&x| {
                            let loss = law.eval(x)?;
                            let mut row = json!({"x": x, "loss": loss});
                            if cli.perplexity {
                                row["perplexity"] = json!(loss.exp());
                            }
                            Ok(row)
                        })
                        .collect::<anyhow::Result<Vec<_>>>()?;
                    json!({ "predictions": rows })
                }
                (_, Some(surface)) => {
                    let rows = args
                        .mixtures
                        .iter()
                        .map(|m| Ok(api::predict_at(surface, &parse_proportions(m)?, cli.perplexity)?))
                        .collect::<anyhow::Result<Vec<_>>>()?;
                    json!({ "predictions": rows })
                }
                _ => unreachable!("every non-power artifact has a surface"),
            };
            print!("{}", to_json(&out)?);
            Ok(())
        }
        Command::Serve(args) => {
            let artifact = load_artifact(&args.artifact)?;
            log_config("serve", seed, &json!({"artifact": args.artifact, "addr": args.addr.to_string()}));
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(server::serve(artifact, args.addr))
        }
    }
}

/// Machine-readable category of a command failure.
pub fn error_category(error: &anyhow::Error) -> &'static str {
    for cause in error.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return e.category();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "parse";
        }
    }
    "usage"
}
