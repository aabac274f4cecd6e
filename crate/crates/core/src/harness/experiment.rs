//! Runs configured experiments: data, chains, predictions and scores for
//! each replicate, then a single-threaded reduction into a report.
//!
//! Replicate `r` draws its data with seed `seed + r` and runs its chain with
//! seed `seed + r + CHAIN_SEED_OFFSET`, so a configuration fixes every
//! random number. Timing is reported separately from the results.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, ModelKind, QuerySpec};
use super::dataset::{ingest_csv, Dataset, ResponseColumn, ResponseTransform};
use super::explore::{explore_surfaces, study_grids};
use super::simulate::{gen_exp2d, gen_friedman, gen_linear_with_noise, Simulated};
use crate::error::{GpError, Result};
use crate::linalg::SmallSpd;
use crate::predict::{aggregate_predictions, PredictiveMoments};
use crate::sampler::{initial_shared, run_chain, ModelSpec, Trace};
use crate::treed::{run_treed, treed_predict, TreedTrace};
use rand::SeedableRng;

pub const CHAIN_SEED_OFFSET: u64 = 0x5eed_0000;

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "GPLLM_WORKERS";

const Z95: f64 = 1.644_853_626_951_472_2;

/// Root mean squared difference.
pub fn rmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(GpError::DimensionMismatch { expected: truth.len(), found: predicted.len() });
    }
    if truth.is_empty() {
        return Err(GpError::Data("rmse of zero points".into()));
    }
    let ss: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Worker threads: the environment override, then the configured count,
/// then one per available core.
pub fn worker_count(configured: Option<usize>) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .or(configured)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// A replicate's data and, for simulated sources, the noiseless mean.
pub fn load_data(source: &DataSource, seed: u64) -> Result<(Dataset, Option<DVector<f64>>)> {
    let sim = |s: Simulated| (s.data, Some(s.mu));
    Ok(match source {
        DataSource::Csv { path, response, transform } => (ingest_csv(path, response, *transform)?, None),
        DataSource::Linear { n, noise_sd } => {
            sim(gen_linear_with_noise(*n, *noise_sd, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))?)
        }
        DataSource::Exp2d { n } => sim(gen_exp2d(*n, seed)?),
        DataSource::Friedman { n } => sim(gen_friedman(*n, seed)?),
    })
}

/// Query inputs in raw coordinates.
pub fn build_queries(spec: &QuerySpec, data: &Dataset) -> Result<DMatrix<f64>> {
    match spec {
        QuerySpec::Training => Ok(data.x_raw.clone()),
        QuerySpec::Grid { points_per_dim: k } => {
            let m = data.m_x();
            let total = k.checked_pow(m as u32).filter(|&t| t <= 1_000_000).ok_or_else(|| {
                GpError::Config(format!("a {k}^{m} query grid is too large"))
            })?;
            let scaled = DMatrix::from_fn(total, m, |r, c| {
                let idx = (r / k.pow((m - 1 - c) as u32)) % k;
                idx as f64 / (k - 1) as f64
            });
            Ok(data.unscale(&scaled))
        }
        QuerySpec::Csv { path } => {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
            let mut rows = Vec::new();
            for rec in reader.records() {
                let rec = rec?;
                let vals = rec
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|_| GpError::Data(format!("non-numeric query cell '{s}'"))))
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != data.m_x() {
                    return Err(GpError::DimensionMismatch { expected: data.m_x(), found: vals.len() });
                }
                rows.extend(vals);
            }
            Ok(DMatrix::from_row_slice(rows.len() / data.m_x().max(1), data.m_x(), &rows))
        }
    }
}

/// The posterior sample behind a fit.
#[derive(Debug, Clone)]
pub enum FitTrace {
    Stationary(Trace),
    Treed(TreedTrace),
    /// Ordinary least squares has no chain.
    LeastSquares { beta: DVector<f64>, sigma2: f64 },
}

/// Least-squares fit with normal predictive intervals on the model scale.
fn least_squares(data: &Dataset, queries: &DMatrix<f64>) -> Result<(FitTrace, PredictiveMoments)> {
    let obs = data.observations();
    let (n, m) = (obs.n(), obs.m());
    if n <= m {
        return Err(GpError::Data(format!("least squares needs more than {m} rows, found {n}")));
    }
    let ftf = SmallSpd::new(&(obs.f.transpose() * &obs.f), "FᵀF")?;
    let beta = ftf.solve(&(obs.f.transpose() * &obs.y));
    let sigma2 = (&obs.y - &obs.f * &beta).norm_squared() / (n - m) as f64;
    let fq = crate::data::extended_design(queries);
    let mut pm = PredictiveMoments { mean: vec![], variance: vec![], llm_weight: 1.0, q05: vec![], q95: vec![] };
    for row in fq.row_iter() {
        let f = row.transpose();
        let mean = f.dot(&beta);
        let var = sigma2 * (1.0 + f.dot(&ftf.solve(&f)));
        pm.mean.push(mean);
        pm.variance.push(var);
        pm.q05.push(mean - Z95 * var.sqrt());
        pm.q95.push(mean + Z95 * var.sqrt());
    }
    Ok((FitTrace::LeastSquares { beta, sigma2 }, pm))
}

/// Fits `model` and predicts at raw `queries`; moments come back on the
/// original response scale.
pub fn fit_and_predict(
    model: ModelKind,
    data: &Dataset,
    cfg: &ExperimentConfig,
    chain_seed: u64,
    queries: &DMatrix<f64>,
) -> Result<(FitTrace, PredictiveMoments)> {
    let scaled = data.scale_queries(queries)?;
    let (trace, pm) = match model {
        ModelKind::Lm => least_squares(data, &scaled)?,
        _ => {
            let obs = data.observations();
            let spec = ModelSpec::new(cfg.hyper.build(obs.m())?, cfg.llm_prior.clone(), model.boolean_mode())?;
            let mcmc = crate::sampler::McmcConfig { seed: chain_seed, ..cfg.mcmc.clone() };
            if model == ModelKind::TreedGpllm {
                let trace = run_treed(&obs, &spec, &cfg.treed.with_mcmc(mcmc))?;
                let pm = treed_predict(&trace, &obs, &scaled)?;
                (FitTrace::Treed(trace), pm)
            } else {
                let trace = run_chain(&obs, &spec, &mcmc)?;
                let pm = aggregate_predictions(&trace, &obs, &scaled)?;
                (FitTrace::Stationary(trace), pm)
            }
        }
    };
    Ok((trace, to_original_scale(pm, data)))
}

fn to_original_scale(mut pm: PredictiveMoments, data: &Dataset) -> PredictiveMoments {
    let r = data.response;
    pm.mean.iter_mut().chain(pm.q05.iter_mut()).chain(pm.q95.iter_mut()).for_each(|v| *v = r.back_mean(*v));
    pm.variance.iter_mut().for_each(|v| *v = r.back_variance(*v));
    pm
}

/// Scores of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub data_seed: u64,
    pub chain_seed: u64,
    pub n: usize,
    /// Against the noiseless mean at the training inputs.
    pub rmse: Option<f64>,
    /// Against the observed response at the training inputs.
    pub rmse_observed: f64,
    /// Fraction of kept samples in the linear model (stationary chains).
    pub llm_fraction: Option<f64>,
    /// Per dimension, posterior frequencies of b = 0 and b = 1.
    pub boolean_table: Vec<[f64; 2]>,
    /// Most frequent boolean vector, written as 0/1 digits.
    pub boolean_mode: Option<String>,
    pub beta_q05: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub beta_q95: Vec<f64>,
    pub acceptance: BTreeMap<String, f64>,
    pub llm_area: Option<f64>,
    pub modal_leaf_count: Option<usize>,
    pub mean_leaf_count: Option<f64>,
}

/// Everything produced for one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateOutput {
    pub result: ReplicateResult,
    pub queries: DMatrix<f64>,
    pub predictions: PredictiveMoments,
    pub trace: FitTrace,
    pub seconds: f64,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn beta_summary(trace: &Trace) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = trace.records.first().map_or(0, |r| r.state.beta.len());
    let mut q05 = Vec::with_capacity(m);
    let mut mean = Vec::with_capacity(m);
    let mut q95 = Vec::with_capacity(m);
    for j in 0..m {
        let mut v: Vec<f64> = trace.records.iter().map(|r| r.state.beta[j]).collect();
        mean.push(v.iter().sum::<f64>() / v.len() as f64);
        v.sort_by(f64::total_cmp);
        q05.push(quantile_sorted(&v, 0.05));
        q95.push(quantile_sorted(&v, 0.95));
    }
    (q05, mean, q95)
}

fn boolean_mode(trace: &Trace) -> Option<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in &trace.records {
        let key: String = r.state.corr.b.iter().map(|&b| if b { '1' } else { '0' }).collect();
        *counts.entry(key).or_default() += 1;
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(k, _)| k)
}

fn summarize(
    index: usize,
    data_seed: u64,
    chain_seed: u64,
    data: &Dataset,
    mu: Option<&DVector<f64>>,
    trace: &FitTrace,
    fitted: &[f64],
) -> Result<ReplicateResult> {
    let mut r = ReplicateResult {
        index,
        data_seed,
        chain_seed,
        n: data.n(),
        rmse: mu.map(|mu| rmse(fitted, mu.as_slice())).transpose()?,
        rmse_observed: rmse(fitted, data.y.as_slice())?,
        llm_fraction: None,
        boolean_table: Vec::new(),
        boolean_mode: None,
        beta_q05: Vec::new(),
        beta_mean: Vec::new(),
        beta_q95: Vec::new(),
        acceptance: BTreeMap::new(),
        llm_area: None,
        modal_leaf_count: None,
        mean_leaf_count: None,
    };
    match trace {
        FitTrace::Stationary(t) => {
            r.llm_fraction = Some(t.summary.llm_fraction);
            r.boolean_table = t.boolean_frequencies().into_iter().map(|p1| [1.0 - p1, p1]).collect();
            r.boolean_mode = boolean_mode(t);
            (r.beta_q05, r.beta_mean, r.beta_q95) = beta_summary(t);
            let mv = &t.summary.moves;
            for (k, s) in [("range", mv.range), ("nugget", mv.nugget), ("boolean", mv.boolean)] {
                if s.proposed > 0 {
                    r.acceptance.insert(k.into(), s.rate());
                }
            }
        }
        FitTrace::Treed(t) => {
            r.llm_area = Some(t.summary.mean_llm_area);
            r.modal_leaf_count = Some(t.modal_leaf_count());
            r.mean_leaf_count = Some(t.summary.mean_leaf_count);
            let (mv, tm) = (&t.summary.moves, &t.summary.tree_moves);
            for (k, s) in [
                ("range", mv.range),
                ("nugget", mv.nugget),
                ("boolean", mv.boolean),
                ("grow", tm.grow),
                ("prune", tm.prune),
                ("change", tm.change),
                ("swap", tm.swap),
            ] {
                if s.proposed > 0 {
                    r.acceptance.insert(k.into(), s.rate());
                }
            }
        }
        FitTrace::LeastSquares { beta, .. } => {
            r.beta_mean = beta.iter().copied().collect();
        }
    }
    Ok(r)
}

/// Runs replicate `index` of `cfg` on the calling thread.
pub fn run_replicate(cfg: &ExperimentConfig, index: usize) -> Result<ReplicateOutput> {
    let start = Instant::now();
    let data_seed = cfg.seed.wrapping_add(index as u64);
    let chain_seed = data_seed.wrapping_add(CHAIN_SEED_OFFSET);
    let (data, mu) = load_data(&cfg.data, data_seed)?;
    let queries = build_queries(&cfg.query, &data)?;
    let (trace, predictions) = fit_and_predict(cfg.model, &data, cfg, chain_seed, &queries)?;
    let fitted = if cfg.query == QuerySpec::Training {
        predictions.mean.clone()
    } else {
        match &trace {
            FitTrace::LeastSquares { .. } => least_squares(&data, &data.x_scaled)?.1.mean,
            FitTrace::Stationary(t) => aggregate_predictions(t, &data.observations(), &data.x_scaled)?.mean,
            FitTrace::Treed(t) => treed_predict(t, &data.observations(), &data.x_scaled)?.mean,
        }
        .into_iter()
        .map(|m| data.response.back_mean(m))
        .collect()
    };
    let result = summarize(index, data_seed, chain_seed, &data, mu.as_ref(), &trace, &fitted)?;
    Ok(ReplicateOutput { result, queries, predictions, trace, seconds: start.elapsed().as_secs_f64() })
}

/// Across-replicate summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub model: ModelKind,
    pub seed: u64,
    pub replicates: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_min: Option<f64>,
    pub rmse_max: Option<f64>,
    pub rmse_observed_mean: f64,
    pub llm_fraction_mean: Option<f64>,
    pub llm_area_mean: Option<f64>,
    /// Replicates whose modal leaf count exceeds one.
    pub multi_leaf_modes: Option<usize>,
    /// Per dimension, replicate-averaged frequency of b = 1.
    pub boolean_frequency_mean: Vec<f64>,
    /// Replicate-averaged posterior mean of each coefficient.
    pub beta_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub replicate_seconds: Vec<f64>,
    pub workers: usize,
}

/// The key-value report; everything but `timing` is a function of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: ExperimentSummary,
    pub replicate: Vec<ReplicateResult>,
    pub timing: Timing,
}

impl Report {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GpError::Config(e.to_string()))
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, k) = values.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    (k > 0).then(|| s / k as f64)
}

fn column_means(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = rows.filter(|r| !r.is_empty()).collect();
    let Some(width) = rows.first().map(Vec::len) else { return Vec::new() };
    (0..width).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
}

fn reduce(cfg: &ExperimentConfig, results: &[ReplicateResult], timing: Timing) -> Report {
    let rmses: Vec<f64> = results.iter().filter_map(|r| r.rmse).collect();
    let multi = results.iter().filter_map(|r| r.modal_leaf_count).collect::<Vec<_>>();
    let summary = ExperimentSummary {
        model: cfg.model,
        seed: cfg.seed,
        replicates: results.len(),
        rmse_mean: mean_of(rmses.iter().copied()),
        rmse_min: rmses.iter().copied().reduce(f64::min),
        rmse_max: rmses.iter().copied().reduce(f64::max),
        rmse_observed_mean: mean_of(results.iter().map(|r| r.rmse_observed)).unwrap_or(f64::NAN),
        llm_fraction_mean: mean_of(results.iter().filter_map(|r| r.llm_fraction)),
        llm_area_mean: mean_of(results.iter().filter_map(|r| r.llm_area)),
        multi_leaf_modes: (!multi.is_empty()).then(|| multi.iter().filter(|&&k| k > 1).count()),
        boolean_frequency_mean: column_means(results.iter().map(|r| r.boolean_table.iter().map(|p| p[1]).collect())),
        beta_mean: column_means(results.iter().map(|r| r.beta_mean.clone())),
    };
    Report { summary, replicate: results.to_vec(), timing }
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: Report,
    pub replicates: Vec<ReplicateOutput>,
}

/// Runs every replicate in a worker pool and writes outputs when configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let workers = worker_count(cfg.workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| GpError::Config(format!("worker pool: {e}")))?;
    let replicates: Vec<ReplicateOutput> =
        pool.install(|| (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect::<Result<_>>())?;
    let results: Vec<ReplicateResult> = replicates.iter().map(|r| r.result.clone()).collect();
    let timing = Timing {
        total_seconds: start.elapsed().as_secs_f64(),
        replicate_seconds: replicates.iter().map(|r| r.seconds).collect(),
        workers,
    };
    let out = ExperimentOutput { report: reduce(cfg, &results, timing), replicates };
    if let Some(dir) = &cfg.output.dir {
        write_outputs(&out, dir, cfg.output.traces)?;
    }
    Ok(out)
}

/// Writes `report.toml`, `predictions_<r>.csv` and, optionally, `trace_<r>.jsonl`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path, traces: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.toml"), out.report.to_toml()?)?;
    for rep in &out.replicates {
        let idx = rep.result.index;
        write_predictions(&rep.queries, &rep.predictions, File::create(dir.join(format!("predictions_{idx}.csv")))?)?;
        if traces {
            write_trace(&rep.trace, File::create(dir.join(format!("trace_{idx}.jsonl")))?)?;
        }
    }
    Ok(())
}

/// Columns x1..xm, mean, variance, q05, q95, llm_weight; the last is the
/// trace-wide fraction of linear-model samples.
pub fn write_predictions<W: Write>(queries: &DMatrix<f64>, pm: &PredictiveMoments, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=queries.ncols()).map(|i| format!("x{i}")).collect();
    header.extend(["mean", "variance", "q05", "q95", "llm_weight"].map(String::from));
    out.write_record(&header)?;
    for (i, row) in queries.row_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        for v in [pm.mean[i], pm.variance[i], pm.q05[i], pm.q95[i], pm.llm_weight] {
            rec.push(v.to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// One JSON object per kept iteration. Stationary records carry, in order,
/// `iteration, state, shared, log_posterior, is_llm`; treed records carry
/// `iteration, tree, shared, log_posterior, leaf_count, llm_area`.
pub fn write_trace<W: Write>(trace: &FitTrace, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    match trace {
        FitTrace::Stationary(t) => {
            for r in &t.records {
                serde_json::to_writer(&mut w, r)?;
                writeln!(w)?;
            }
        }
        FitTrace::Treed(t) => {
            for r in &t.records {
                serde_json::to_writer(&mut w, r)?;
                writeln!(w)?;
            }
        }
        FitTrace::LeastSquares { beta, sigma2 } => {
            serde_json::to_writer(&mut w, &serde_json::json!({ "beta": beta.as_slice(), "sigma2": sigma2 }))?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Names accepted by [`recipe`].
pub const RECIPES: &[&str] = &["friedman", "friedman-gp", "friedman-lm", "exp2d", "linear"];

/// Benchmark configurations at desk scale.
pub fn recipe(name: &str) -> Result<ExperimentConfig> {
    let friedman = |model| {
        let mut c = ExperimentConfig::new(model, DataSource::Friedman { n: 100 });
        c.replicates = 10;
        c.mcmc.n_burn = 1000;
        c.mcmc.n_keep = 1000;
        c.mcmc.thin = 2;
        c
    };
    Ok(match name {
        "friedman" => friedman(ModelKind::Gpllm),
        "friedman-gp" => friedman(ModelKind::Gp),
        "friedman-lm" => friedman(ModelKind::Lm),
        "exp2d" => {
            let mut c = ExperimentConfig::new(ModelKind::TreedGpllm, DataSource::Exp2d { n: 200 });
            c.replicates = 20;
            // The noise variance is 1e-6; the scale of the σ² prior has to sit below it.
            c.hyper.q_sigma = 1e-6;
            c.mcmc.n_burn = 1000;
            c.mcmc.n_keep = 2000;
            c
        }
        "linear" => ExperimentConfig::new(ModelKind::Gpllm, DataSource::Linear { n: 100, noise_sd: 1.0 }),
        other => return Err(GpError::Config(format!("unknown recipe '{other}'; known: {}", RECIPES.join(", ")))),
    })
}

/// The motorcycle recipe on a user-supplied CSV (time, acceleration).
pub fn motorcycle_recipe(path: &Path, response: ResponseColumn) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        ModelKind::TreedGpllm,
        DataSource::Csv { path: path.to_path_buf(), response, transform: ResponseTransform::Identity },
    );
    c.mcmc.n_burn = 1000;
    c.mcmc.n_keep = 2000;
    c
}

/// Distribution of `max L_GP / L_LM` over replicates of the linear surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatioStudy {
    pub ratios: Vec<f64>,
    pub fraction_below_1_5: f64,
    pub above_10: usize,
    pub max: f64,
}

/// `replicates` draws of the size-`n` linear surface, each profiled over
/// the default (d, g) grid. Replicate `r` uses seed `seed + r`.
pub fn likelihood_ratio_study(replicates: usize, n: usize, seed: u64, workers: usize) -> Result<LikelihoodRatioStudy> {
    let (d, g) = study_grids();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| GpError::Config(format!("worker pool: {e}")))?;
    let hyper = crate::model::HyperParams::default_for(2);
    let shared = initial_shared(&hyper, 1);
    let pp = crate::prior::LlmPriorParams::default();
    let ratios: Vec<f64> = pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
                let obs = gen_linear_with_noise(n, 1.0, &mut rng)?.data.observations();
                Ok(explore_surfaces(&obs, &d, &g, &hyper, &pp, &shared, 1.0)?.likelihood_ratio())
            })
            .collect::<Result<_>>()
    })?;
    let below = ratios.iter().filter(|&&r| r < 1.5).count();
    Ok(LikelihoodRatioStudy {
        fraction_below_1_5: below as f64 / ratios.len().max(1) as f64,
        above_10: ratios.iter().filter(|&&r| r > 10.0).count(),
        max: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(model: ModelKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(model, DataSource::Linear { n: 12, noise_sd: 0.5 });
        c.replicates = 2;
        c.workers = Some(2);
        c.mcmc.n_burn = 20;
        c.mcmc.n_keep = 30;
        c
    }

    #[test]
    fn rmse_plug_ins() {
        let t = [1.0, -2.0, 3.5];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert!((rmse(&p, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(rmse(&p[..2], &t).is_err());
    }

    #[test]
    fn identical_configs_give_identical_results() {
        for model in [ModelKind::Gpllm, ModelKind::TreedGpllm, ModelKind::Lm, ModelKind::Gp] {
            let cfg = small(model);
            let a = run_experiment(&cfg).unwrap().report;
            let b = run_experiment(&ExperimentConfig { workers: Some(1), ..cfg }).unwrap().report;
            assert_eq!(a.summary, b.summary, "{model:?}");
            assert_eq!(a.replicate, b.replicate, "{model:?}");
        }
    }

    #[test]
    fn boolean_table_rows_sum_to_one() {
        let out = run_experiment(&small(ModelKind::Gpllm)).unwrap();
        for r in &out.report.replicate {
            assert_eq!(r.boolean_table.len(), 1);
            for row in &r.boolean_table {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            }
            assert!(r.beta_q05.iter().zip(&r.beta_mean).zip(&r.beta_q95).all(|((a, b), c)| a <= b && b <= c));
        }
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let (data, _) = load_data(&DataSource::Linear { n: 30, noise_sd: 1.0 }, 3).unwrap();
        let q = DMatrix::from_column_slice(2, 1, &[0.25, 0.75]);
        let (trace, pm) = least_squares(&data, &q).unwrap();
        let FitTrace::LeastSquares { beta, .. } = trace else { panic!() };
        let f = data.f();
        let direct = (f.transpose() * &f).try_inverse().unwrap() * f.transpose() * &data.y;
        assert!((beta - &direct).amax() < 1e-10);
        assert!((pm.mean[0] - (direct[0] + 0.25 * direct[1])).abs() < 1e-10);
        assert!(pm.q05[1] < pm.mean[1] && pm.mean[1] < pm.q95[1]);
    }

    #[test]
    fn grid_queries_cover_the_observed_range() {
        let (data, _) = load_data(&DataSource::Exp2d { n: 30 }, 1).unwrap();
        let q = build_queries(&QuerySpec::Grid { points_per_dim: 3 }, &data).unwrap();
        assert_eq!(q.nrows(), 9);
        assert_eq!((q[(0, 0)], q[(0, 1)]), (-2.0, -2.0));
        assert_eq!((q[(1, 0)], q[(1, 1)]), (-2.0, 2.0));
        assert_eq!((q[(8, 0)], q[(8, 1)]), (6.0, 6.0));
    }

    #[test]
    fn writes_report_predictions_and_traces() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(ModelKind::TreedGpllm);
        cfg.replicates = 1;
        cfg.output.dir = Some(dir.path().to_path_buf());
        cfg.output.traces = true;
        run_experiment(&cfg).unwrap();
        let report: Report = toml::from_str(&std::fs::read_to_string(dir.path().join("report.toml")).unwrap()).unwrap();
        assert_eq!(report.summary.replicates, 1);
        let trace = std::fs::read_to_string(dir.path().join("trace_0.jsonl")).unwrap();
        assert_eq!(trace.lines().count(), cfg.mcmc.n_keep);
        let first = trace.lines().next().unwrap();
        serde_json::from_str::<serde_json::Value>(first).unwrap();
        let mut from = 0;
        for k in ["iteration", "tree", "shared", "log_posterior", "leaf_count", "llm_area"] {
            from += first[from..].find(&format!("\"{k}\":")).unwrap_or_else(|| panic!("{k} out of order: {first}"));
        }
        let preds = std::fs::read_to_string(dir.path().join("predictions_0.csv")).unwrap();
        assert!(preds.starts_with("x1,mean,variance,q05,q95,llm_weight\n"));
        assert_eq!(preds.lines().count(), 13);
    }

    #[test]
    fn unknown_recipe_is_a_config_error() {
        assert!(matches!(recipe("boston"), Err(GpError::Config(_))));
        for name in RECIPES {
            recipe(name).unwrap().validate().unwrap();
        }
    }
}
