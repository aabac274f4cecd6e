use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gpllm::harness::config::{ExperimentConfig, ModelKind, QuerySpec};
use gpllm::harness::dataset::{ingest_csv, ResponseColumn, ResponseTransform};
use gpllm::harness::experiment::{likelihood_ratio_study, recipe, run_experiment, worker_count, RECIPES};
use gpllm::harness::explore::{explore_surfaces, log_grid};
use gpllm::harness::simulate::{gen_exp2d, gen_friedman, gen_linear};
use gpllm::model::HyperParams;
use gpllm::prior::LlmPriorParams;
use gpllm::sampler::initial_shared;

/// Bayesian GP regression with jumps to the limiting linear model.
#[derive(Parser)]
#[command(name = "gpllm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a configured experiment and print its report.
    Fit(FitArgs),
    /// Fit, then predict at the inputs of a CSV file.
    Predict {
        #[command(flatten)]
        fit: FitArgs,
        /// Query inputs, one column per input, with a header row.
        #[arg(long)]
        queries: PathBuf,
    },
    /// Profile likelihood and marginal posterior over a (d, g) grid.
    Explore(ExploreArgs),
    /// Write a synthetic dataset as CSV.
    Simulate {
        #[arg(long, value_enum)]
        surface: Surface,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Destination; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a benchmark recipe, or `lr-study` for the likelihood-ratio study.
    Bench {
        name: String,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FitArgs {
    /// Experiment configuration (TOML).
    #[arg(long, conflicts_with = "recipe", required_unless_present = "recipe")]
    config: Option<PathBuf>,
    /// A named benchmark configuration instead of a file.
    #[arg(long)]
    recipe: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the report, predictions and traces.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Also write per-replicate traces (needs --output).
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct ExploreArgs {
    /// Training data (CSV with a header row).
    #[arg(long)]
    data: PathBuf,
    /// Response column, by name or zero-based index.
    #[arg(long)]
    response: String,
    #[arg(long, value_enum, default_value_t = Transform::Identity)]
    transform: Transform,
    #[arg(long, default_value_t = 1e-4)]
    d_min: f64,
    #[arg(long, default_value_t = 1e4)]
    d_max: f64,
    #[arg(long, default_value_t = 129)]
    d_points: usize,
    #[arg(long, default_value_t = 1e-14)]
    g_min: f64,
    #[arg(long, default_value_t = 10.0)]
    g_max: f64,
    #[arg(long, default_value_t = 91)]
    g_points: usize,
    /// Surface CSV; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Surface {
    Linear,
    Exp2d,
    Friedman,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transform {
    Identity,
    Center,
    Standardize,
}

impl From<Transform> for ResponseTransform {
    fn from(t: Transform) -> Self {
        match t {
            Transform::Identity => ResponseTransform::Identity,
            Transform::Center => ResponseTransform::Center,
            Transform::Standardize => ResponseTransform::Standardize,
        }
    }
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: gpllm::GpError| e.to_string())
}

fn sink(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

impl FitArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.recipe) {
            (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(name)) => recipe(name)?,
            (None, None) => bail!("either --config or --recipe is required"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(model) = self.model {
            cfg.model = model;
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if self.output.is_some() {
            cfg.output.dir = self.output.clone();
        }
        cfg.output.traces |= self.traces;
        if cfg.output.traces && cfg.output.dir.is_none() {
            bail!("traces need an output directory");
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fit(cfg: &ExperimentConfig) -> Result<()> {
    let out = run_experiment(cfg)?;
    print!("{}", out.report.to_toml()?);
    Ok(())
}

fn explore(a: &ExploreArgs) -> Result<()> {
    let response: ResponseColumn = a.response.parse()?;
    let data = ingest_csv(&a.data, &response, a.transform.into())?;
    let obs = data.observations();
    let mut d = vec![0.0];
    d.extend(log_grid(a.d_min, a.d_max, a.d_points));
    let g = log_grid(a.g_min, a.g_max, a.g_points);
    let hyper = HyperParams::default_for(obs.m());
    let shared = initial_shared(&hyper, 1);
    let surface = explore_surfaces(&obs, &d, &g, &hyper, &LlmPriorParams::default(), &shared, 1.0)?;
    surface.write_csv(sink(a.output.as_ref())?)?;
    eprintln!("likelihood ratio max L_GP / L_LM = {:.6}", surface.likelihood_ratio());
    Ok(())
}

fn simulate(surface: Surface, n: usize, seed: u64, output: Option<&PathBuf>) -> Result<()> {
    let sim = match surface {
        Surface::Linear => gen_linear(n, seed)?,
        Surface::Exp2d => gen_exp2d(n, seed)?,
        Surface::Friedman => gen_friedman(n, seed)?,
    };
    sim.data.write_csv(sink(output)?)?;
    Ok(())
}

fn bench(
    name: &str,
    replicates: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    output: Option<PathBuf>,
) -> Result<()> {
    if name == "lr-study" {
        let study = likelihood_ratio_study(replicates.unwrap_or(200), 10, seed.unwrap_or(0), worker_count(workers))?;
        println!("replicates = {}", study.ratios.len());
        println!("fraction_below_1_5 = {}", study.fraction_below_1_5);
        println!("above_10 = {}", study.above_10);
        println!("max = {}", study.max);
        if let Some(path) = output {
            let mut w = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            writeln!(w, "ratio")?;
            for r in &study.ratios {
                writeln!(w, "{r}")?;
            }
        }
        return Ok(());
    }
    if !RECIPES.contains(&name) {
        bail!("unknown benchmark '{name}'; known: lr-study, {}", RECIPES.join(", "));
    }
    let mut cfg = recipe(name)?;
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.workers = workers.or(cfg.workers);
    cfg.output.dir = output;
    fit(&cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Fit(args) => fit(&args.resolve()?),
        Command::Predict { fit: args, queries } => {
            let mut cfg = args.resolve()?;
            cfg.query = QuerySpec::Csv { path: queries };
            fit(&cfg)
        }
        Command::Explore(args) => explore(&args),
        Command::Simulate { surface, n, seed, output } => simulate(surface, n, seed, output.as_ref()),
        Command::Bench { name, replicates, seed, workers, output } => bench(&name, replicates, seed, workers, output),
    }
}

