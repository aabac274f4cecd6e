//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any gating criterion fails. Lines go straight to stderr so they
//! show up without `--nocapture`. `GPLLM_ACCEPTANCE_ONLY=3,5` runs a subset.

use std::io::Write;
use std::time::Instant;

use gpllm::harness::dataset::{ingest_csv, ResponseColumn};
use gpllm::harness::experiment::{likelihood_ratio_study, motorcycle_recipe, recipe, run_experiment, worker_count};
use gpllm::harness::simulate::gen_linear;
use gpllm::kernel::{factorization_counter, reset_factorization_counter};
use gpllm::predict::{aggregate_predictions, predict_gp, predict_llm};
use gpllm::sampler::{
    covariance_moves, gibbs_sweep, mh_update_range, run_chain, sample_prior, simulate_response, AcceptStats,
    BooleanMode, CovMove, Leaf, McmcConfig, ModelSpec, MoveStats, ProposalScales, StationaryChain,
};
use gpllm::{build_cov, CorrelationState, CovMatrix, GPState, GpError};
use gpllm::{HyperParams, LlmPriorParams, Observations, SharedState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

struct Outcome {
    pass: Option<bool>,
    detail: String,
    gating: bool,
}

impl Outcome {
    fn gate(pass: bool, detail: String) -> Self {
        Self { pass: Some(pass), detail, gating: true }
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

fn random_spd<R: Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| normal(rng) * 0.5);
    &a * a.transpose() + DMatrix::identity(m, m) * 0.5
}

fn random_shared<R: Rng>(m: usize, rng: &mut R) -> SharedState {
    SharedState::new(DVector::from_fn(m, |_, _| normal(rng)), random_spd(m, rng), 1).unwrap()
}

fn log_uniform<R: Rng>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &n in &[5usize, 20, 100] {
        for &m_x in &[1usize, 3, 10] {
            for _ in 0..100 {
                let m = m_x + 1;
                let x = DMatrix::from_fn(n, m_x, |_, _| rng.random::<f64>());
                let y = DVector::from_fn(n, |_, _| 3.0 * normal(&mut rng));
                let obs = Observations::new(x, y).unwrap();
                let g = log_uniform(1e-3, 1.0, &mut rng);
                let d: Vec<f64> = (0..m_x).map(|_| log_uniform(0.05, 2.0, &mut rng)).collect();
                let corr = CorrelationState::new(d, g, vec![false; m_x], vec![2.0; m_x]).unwrap();
                let state = GPState {
                    beta: DVector::from_fn(m, |_, _| normal(&mut rng)),
                    sigma2: log_uniform(0.1, 3.0, &mut rng),
                    tau2: log_uniform(0.1, 3.0, &mut rng),
                    corr,
                };
                let shared = random_shared(m, &mut rng);
                let dense = CovMatrix::from_dense(DMatrix::identity(n, n) * (1.0 + g), g).unwrap();
                let q: Vec<f64> = (0..m_x).map(|_| rng.random::<f64>() * 1.4 - 0.2).collect();
                let (ml, vl) = predict_llm(&q, &state, &shared, &obs).unwrap();
                let (mg, vg) = predict_gp(&q, &state, &shared, &obs, &dense).unwrap();
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                worst = worst.max(rel(ml, mg)).max(rel(vl, vg));
                cases += 1;
            }
        }
    }
    Outcome::gate(worst <= 1e-8, format!("{cases} cases, worst relative difference {worst:.2e} (limit 1e-8)"))
}

// ---------------------------------------------------------------- criterion 2

/// log ∫ N(y | Fβ₀, σ²C) IG(σ²; α/2, q/2) dσ² with C = K + τ²FWFᵀ, by the
/// trapezoid rule in u = ln σ².
fn quadrature_log_marginal(
    obs: &Observations,
    k: &DMatrix<f64>,
    shared: &SharedState,
    tau2: f64,
    hyper: &HyperParams,
) -> f64 {
    let n = obs.n() as f64;
    let c = k + (&obs.f * shared.w() * obs.f.transpose()) * tau2;
    let chol = c.clone().cholesky().expect("C is SPD");
    let log_det_c: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let r = &obs.y - &obs.f * &shared.beta0;
    let quad = r.dot(&chol.solve(&r));
    let (a, b) = (hyper.alpha_sigma / 2.0, hyper.q_sigma / 2.0);
    let log_integrand = |u: f64| {
        let s = u.exp();
        let log_lik = -0.5 * n * (LN_2PI + u) - 0.5 * log_det_c - 0.5 * quad / s;
        let log_ig = a * b.ln() - ln_gamma(a) - (a + 1.0) * u - b / s;
        log_lik + log_ig + u
    };
    let (lo, hi, steps) = (-60.0, 60.0, 240_000);
    let h = (hi - lo) / steps as f64;
    let vals: Vec<f64> = (0..=steps).map(|i| log_integrand(lo + i as f64 * h)).collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = vals
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 0 || i == steps { 0.5 } else { 1.0 } * (v - top).exp())
        .sum();
    top + (sum * h).ln()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let n = 2 + inst % 5;
        let m_x = 1 + inst % 2;
        let m = m_x + 1;
        let x = DMatrix::from_fn(n, m_x, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |_, _| 2.0 * normal(&mut rng));
        let obs = Observations::new(x, y).unwrap();
        let b: Vec<bool> = (0..m_x).map(|_| rng.random::<f64>() < 0.7).collect();
        let d: Vec<f64> = (0..m_x).map(|_| log_uniform(0.05, 2.0, &mut rng)).collect();
        let cs = CorrelationState::new(d, log_uniform(1e-3, 0.5, &mut rng), b, vec![2.0; m_x]).unwrap();
        let cm = build_cov(&obs.x, &cs).unwrap();
        let shared = random_shared(m, &mut rng);
        let tau2 = log_uniform(0.2, 5.0, &mut rng);
        let mut hyper = HyperParams::default_for(m);
        hyper.alpha_sigma = 2.0 + 6.0 * rng.random::<f64>();
        hyper.q_sigma = log_uniform(0.1, 20.0, &mut rng);
        let got = gpllm::model::log_marginal_posterior(&obs, &cm, &shared, tau2, &hyper, 0.0).unwrap();
        let want = quadrature_log_marginal(&obs, &cm.matrix(), &shared, tau2, &hyper);
        worst = worst.max((got - want).abs());
    }
    Outcome::gate(worst <= 1e-4, format!("20 instances, worst absolute difference {worst:.2e} (limit 1e-4)"))
}

// ---------------------------------------------------------------- criterion 3

/// Ten parameter summaries, two response summaries, then the squares of
/// the parameter summaries so that second moments are compared too.
const N_FUNCTIONALS: usize = 22;
const Y_FUNCTIONALS: [usize; 2] = [10, 11];
const FUNCTIONAL_NAMES: [&str; N_FUNCTIONALS] = [
    "ln sigma2", "ln tau2", "ln d", "g", "1{b=0}", "atan beta_0", "atan beta_1", "beta0_0", "beta0_1", "ln W_00",
    "atan ybar", "atan(y_0 - y_4)", "(ln sigma2)^2", "(ln tau2)^2", "(ln d)^2", "g^2", "1{b=0}^2", "(atan beta_0)^2",
    "(atan beta_1)^2", "beta0_0^2", "beta0_1^2", "(ln W_00)^2",
];

/// Bounded or light-tailed summaries of the joint draw.
fn functionals(state: &GPState, shared: &SharedState, y: Option<&DVector<f64>>) -> [f64; N_FUNCTIONALS] {
    let (ybar, spread) = y.map_or((0.0, 0.0), |y| (y.mean().atan(), (y[0] - y[y.len() - 1]).atan()));
    let base = [
        state.sigma2.ln(),
        state.tau2.ln(),
        state.corr.d[0].ln(),
        state.corr.g,
        if state.corr.is_llm() { 1.0 } else { 0.0 },
        state.beta[0].atan(),
        state.beta[1].atan(),
        shared.beta0[0],
        shared.beta0[1],
        shared.w()[(0, 0)].ln(),
    ];
    let mut out = [0.0; N_FUNCTIONALS];
    out[..10].copy_from_slice(&base);
    out[10] = ybar;
    out[11] = spread;
    for (o, b) in out[12..].iter_mut().zip(base) {
        *o = b * b;
    }
    out
}

fn geweke_spec() -> ModelSpec {
    let mut hyper = HyperParams::default_for(2);
    hyper.b = DMatrix::identity(2, 2);
    ModelSpec::new(hyper, LlmPriorParams::default(), BooleanMode::Free).unwrap()
}

fn geweke_x() -> DMatrix<f64> {
    DMatrix::from_column_slice(5, 1, &[0.0, 0.25, 0.5, 0.75, 1.0])
}

/// A forward draw of (θ, y); covariances the sampler would reject as
/// singular are redrawn, matching the sampler's support.
fn forward_draw<R: Rng>(spec: &ModelSpec, rng: &mut R) -> (Leaf, SharedState) {
    loop {
        let (state, shared) = sample_prior(1, spec, rng).unwrap();
        let obs = Observations::new(geweke_x(), DVector::zeros(5)).unwrap();
        match Leaf::new(obs, state) {
            Ok(mut leaf) => {
                let y = simulate_response(&leaf, rng);
                leaf.set_response(y);
                return (leaf, shared);
            }
            Err(GpError::SingularCovariance { .. }) => continue,
            Err(e) => panic!("{e}"),
        }
    }
}

struct Moments {
    mean: [f64; N_FUNCTIONALS],
    se: [f64; N_FUNCTIONALS],
}

fn iid_moments(samples: &[[f64; N_FUNCTIONALS]]) -> Moments {
    let n = samples.len() as f64;
    let mut mean = [0.0; N_FUNCTIONALS];
    let mut se = [0.0; N_FUNCTIONALS];
    for j in 0..N_FUNCTIONALS {
        let mu = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[j] - mu).powi(2)).sum::<f64>() / (n - 1.0);
        mean[j] = mu;
        se[j] = (var / n).sqrt();
    }
    Moments { mean, se }
}

fn batch_moments(samples: &[[f64; N_FUNCTIONALS]], batches: usize) -> Moments {
    let size = samples.len() / batches;
    let means: Vec<[f64; N_FUNCTIONALS]> = samples
        .chunks_exact(size)
        .map(|c| {
            let mut m = [0.0; N_FUNCTIONALS];
            for s in c {
                for j in 0..N_FUNCTIONALS {
                    m[j] += s[j] / size as f64;
                }
            }
            m
        })
        .collect();
    iid_moments(&means)
}

/// Largest |z| over the functionals and the name where it occurs.
fn worst_z(a: &Moments, b: &Moments, skip_y: bool) -> (f64, &'static str) {
    let mut worst = (0.0, "");
    for j in 0..N_FUNCTIONALS {
        if skip_y && Y_FUNCTIONALS.contains(&j) {
            continue;
        }
        let z = (a.mean[j] - b.mean[j]) / (a.se[j].powi(2) + b.se[j].powi(2)).sqrt();
        if z.abs() > worst.0 {
            worst = (z.abs(), FUNCTIONAL_NAMES[j]);
        }
    }
    worst
}

fn geweke_chain(spec: &ModelSpec, start: (Leaf, SharedState), seed: u64) -> StationaryChain {
    let mcfg = McmcConfig { seed, adapt: false, ..McmcConfig::default() };
    let mut chain = StationaryChain::new(start.0.obs(), spec.clone(), &mcfg).unwrap();
    chain.leaf = start.0;
    chain.shared = start.1;
    chain
}

/// Marginal-conditional draws against the successive-conditional chain.
fn geweke_joint(iterations: usize) -> (f64, &'static str) {
    let spec = geweke_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mc: Vec<_> = (0..iterations)
        .map(|_| {
            let (leaf, shared) = forward_draw(&spec, &mut rng);
            functionals(&leaf.state, &shared, Some(&leaf.obs().y))
        })
        .collect();
    let mut chain = geweke_chain(&spec, forward_draw(&spec, &mut rng), 304);
    let mut sc = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        chain.step().unwrap();
        let y = simulate_response(&chain.leaf, &mut rng);
        chain.leaf.set_response(y);
        sc.push(functionals(&chain.leaf.state, &chain.shared, Some(&chain.leaf.obs().y)));
    }
    worst_z(&iid_moments(&mc), &batch_moments(&sc, 100), false)
}

/// Independent chains started at a forward draw keep the prior marginal.
fn prior_reproduction(replicates: usize, steps: usize) -> (f64, &'static str) {
    let spec = geweke_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(305);
    let prior: Vec<_> = (0..50_000)
        .map(|_| {
            let (leaf, shared) = forward_draw(&spec, &mut rng);
            functionals(&leaf.state, &shared, None)
        })
        .collect();
    let ends: Vec<_> = (0..replicates)
        .map(|r| {
            let mut chain = geweke_chain(&spec, forward_draw(&spec, &mut rng), 1000 + r as u64);
            for _ in 0..steps {
                chain.step().unwrap();
            }
            functionals(&chain.leaf.state, &chain.shared, None)
        })
        .collect();
    worst_z(&iid_moments(&prior), &iid_moments(&ends), true)
}

/// KS distance between the range-only sub-chain and the grid posterior of d.
fn range_ks(steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(306);
    let spec = ModelSpec::new(HyperParams::default_for(2), LlmPriorParams::default(), BooleanMode::ForceGp).unwrap();
    let x = geweke_x();
    let y = DVector::from_vec(vec![0.3, 1.1, 0.4, -0.6, 0.2]);
    let obs = Observations::new(x, y).unwrap();
    let shared = SharedState::new(DVector::zeros(2), DMatrix::identity(2, 2), 1).unwrap();
    let corr = CorrelationState::gaussian(vec![0.5], 0.05).unwrap();
    let state = GPState { beta: DVector::zeros(2), sigma2: 1.0, tau2: 1.0, corr };
    let mut leaf = Leaf::new(obs.clone(), state).unwrap();

    // Grid posterior in u = ln d, density ∝ p(K | y) p(d) d.
    let (lo, hi, k) = (-14.0f64, 5.0f64, 20_000);
    let h = (hi - lo) / k as f64;
    let log_dens: Vec<f64> = (0..=k)
        .map(|i| {
            let u = lo + i as f64 * h;
            let cs = CorrelationState::gaussian(vec![u.exp()], 0.05).unwrap();
            match build_cov(&obs.x, &cs) {
                Ok(cm) => {
                    gpllm::model::log_marginal_posterior(&obs, &cm, &shared, 1.0, &spec.hyper, 0.0).unwrap()
                        + spec.pp.log_prior_d(u.exp()).unwrap()
                        + u
                }
                Err(_) => f64::NEG_INFINITY,
            }
        })
        .collect();
    let top = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cdf = vec![0.0; k + 1];
    for i in 1..=k {
        cdf[i] = cdf[i - 1] + 0.5 * h * ((log_dens[i - 1] - top).exp() + (log_dens[i] - top).exp());
    }
    let total = cdf[k];
    let grid_cdf = |d: f64| {
        let pos = ((d.ln() - lo) / h).clamp(0.0, k as f64);
        let i = (pos.floor() as usize).min(k - 1);
        let frac = pos - i as f64;
        (cdf[i] + frac * (cdf[i + 1] - cdf[i])) / total
    };

    let mut stats = AcceptStats::default();
    let mut current = leaf.log_marginal(&shared, &spec.hyper).unwrap();
    let mut draws = Vec::with_capacity(steps);
    for _ in 0..1000 {
        current = mh_update_range(&mut leaf, &shared, &spec, 1.0, current, &mut stats, &mut rng).unwrap();
    }
    for _ in 0..steps {
        current = mh_update_range(&mut leaf, &shared, &spec, 1.0, current, &mut stats, &mut rng).unwrap();
        draws.push(leaf.state.corr.d[0]);
    }
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let f = grid_cdf(d);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let (zj, nj) = geweke_joint(50_000);
    let (zp, np) = prior_reproduction(2500, 20);
    let ks = range_ks(500_000);
    let pass = zj < 3.0 && zp < 3.0 && ks <= 0.02;
    Outcome::gate(
        pass,
        format!("Geweke max |z| {zj:.2} ({nj}); prior reproduction max |z| {zp:.2} ({np}); d-chain KS {ks:.4} (limits 3, 3, 0.02)"),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let spec = ModelSpec::new(HyperParams::default_for(2), LlmPriorParams::default(), BooleanMode::Free).unwrap();
    let fractions: Vec<f64> = (1..=5)
        .map(|seed| {
            let obs = gen_linear(100, seed).unwrap().data.observations();
            run_chain(&obs, &spec, &McmcConfig { seed, ..McmcConfig::default() }).unwrap().summary.llm_fraction
        })
        .collect();
    let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    Outcome::gate(min > 0.5, format!("LLM fraction over 5 datasets {fractions:.3?}, minimum {min:.3} (needs > 0.5)"))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let gpllm = run_experiment(&recipe("friedman").unwrap()).unwrap().report;
    let lm = run_experiment(&recipe("friedman-lm").unwrap()).unwrap().report;
    let rmse = gpllm.summary.rmse_mean.unwrap();
    let lm_rmse = lm.summary.rmse_mean.unwrap();
    let modes = gpllm.replicate.iter().filter(|r| r.boolean_mode.as_deref() == Some("1110000000")).count();
    let (b4, b5) = (gpllm.summary.beta_mean[4], gpllm.summary.beta_mean[5]);
    let pass = (0.43..=0.90).contains(&rmse)
        && (1.7..=2.8).contains(&lm_rmse)
        && rmse < 0.9232
        && modes >= 7
        && (8.40..=10.99).contains(&b4)
        && (2.60..=9.98).contains(&b5);
    Outcome::gate(
        pass,
        format!(
            "GP LLM mean RMSE {rmse:.4} (in [0.43, 0.90], < 0.9232); linear mean RMSE {lm_rmse:.4} (in [1.7, 2.8]); \
             mode 1110000000 in {modes}/10 (>= 7); beta_4 {b4:.2} (in [8.40, 10.99]); beta_5 {b5:.2} (in [2.60, 9.98])"
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let report = run_experiment(&recipe("exp2d").unwrap()).unwrap().report;
    let area = report.summary.llm_area_mean.unwrap();
    let multi = report.summary.multi_leaf_modes.unwrap();
    Outcome::gate(
        (0.40..=0.80).contains(&area) && multi >= 15,
        format!("mean LLM area {area:.3} (in [0.40, 0.80]); multi-leaf modes {multi}/20 (>= 15)"),
    )
}

// ---------------------------------------------------------------- criterion 7

/// Advisory. Runs when `GPLLM_MOTORCYCLE_CSV` names a (time, acceleration)
/// file; `GPLLM_MOTORCYCLE_RESPONSE` picks the response column (default 1).
fn criterion_7() -> Outcome {
    let Ok(path) = std::env::var("GPLLM_MOTORCYCLE_CSV") else {
        return Outcome { pass: None, detail: "GPLLM_MOTORCYCLE_CSV not set".into(), gating: false };
    };
    let response: ResponseColumn = std::env::var("GPLLM_MOTORCYCLE_RESPONSE").unwrap_or_else(|_| "1".into()).parse().unwrap();
    let path = std::path::PathBuf::from(path);
    if let Err(e) = ingest_csv(&path, &response, Default::default()) {
        return Outcome { pass: Some(false), detail: format!("cannot ingest: {e}"), gating: false };
    }
    let area = run_experiment(&motorcycle_recipe(&path, response)).unwrap().report.summary.llm_area_mean.unwrap();
    Outcome {
        pass: Some((0.10..=0.50).contains(&area)),
        detail: format!("LLM area {area:.3} (in [0.10, 0.50])"),
        gating: false,
    }
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let s = likelihood_ratio_study(200, 10, 0, worker_count(None)).unwrap();
    Outcome::gate(
        s.fraction_below_1_5 >= 0.55 && s.above_10 >= 1,
        format!(
            "{:.1}% below 1.5 (>= 55%); {} above 10 (>= 1); max {:.2}",
            100.0 * s.fraction_below_1_5,
            s.above_10,
            s.max
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let obs = gen_linear(40, 9).unwrap().data.observations();
    let queries = DMatrix::from_fn(25, 1, |i, _| i as f64 / 24.0);

    // A forced linear-model chain: every sweep, then prediction.
    let spec = ModelSpec::new(HyperParams::default_for(2), LlmPriorParams::default(), BooleanMode::ForceLlm).unwrap();
    reset_factorization_counter();
    let trace = run_chain(&obs, &spec, &McmcConfig { n_burn: 20, n_keep: 50, ..McmcConfig::default() }).unwrap();
    aggregate_predictions(&trace, &obs, &queries).unwrap();
    let forced = factorization_counter().count;

    // Free booleans sitting at b = 0: the range and nugget moves and the Gibbs sweep.
    let spec = ModelSpec::new(HyperParams::default_for(2), LlmPriorParams::default(), BooleanMode::Free).unwrap();
    let corr = CorrelationState::new(vec![0.5], 0.1, vec![false], vec![2.0]).unwrap();
    let state = GPState { beta: DVector::zeros(2), sigma2: 1.0, tau2: 1.0, corr };
    let mut leaf = Leaf::new(obs.clone(), state).unwrap();
    let mut shared = SharedState::new(DVector::zeros(2), DMatrix::identity(2, 2), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    reset_factorization_counter();
    covariance_moves(
        &mut leaf,
        &shared,
        &spec,
        &[CovMove::Range, CovMove::Nugget],
        &ProposalScales { d: 0.5, g: 0.5 },
        &mut MoveStats::default(),
        &mut rng,
    )
    .unwrap();
    gibbs_sweep(std::slice::from_mut(&mut leaf), &mut shared, &spec.hyper, &mut rng).unwrap();
    let mut predicted = 0;
    for r in 0..queries.nrows() {
        predict_llm(&[queries[(r, 0)]], &leaf.state, &shared, &obs).unwrap();
        predicted += 1;
    }
    let free = factorization_counter().count;
    Outcome::gate(
        forced == 0 && free == 0,
        format!("dense factorizations: {forced} over 70 forced-linear sweeps and {} predictions; {free} for a free-boolean sweep at b = 0 and {predicted} predictions (need 0)", 50 * 25),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let only: Option<Vec<u32>> = std::env::var("GPLLM_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (id, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            writeln!(err, "criterion {id}: SKIP: not selected by GPLLM_ACCEPTANCE_ONLY").unwrap();
            continue;
        }
        let start = Instant::now();
        let out = run();
        let verdict = match (out.pass, out.gating) {
            (None, _) => "SKIP",
            (Some(true), _) => "PASS",
            (Some(false), true) => "FAIL",
            (Some(false), false) => "FAIL (advisory)",
        };
        writeln!(err, "criterion {id}: {verdict}: {} [{:.1} s]", out.detail, start.elapsed().as_secs_f64()).unwrap();
        if out.gating && out.pass == Some(false) {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
