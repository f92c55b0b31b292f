//! Simulation of AR paths and Monte Carlo experiments: empirical MSPE,
//! the plug-in/direct efficiency ratio table, selection frequencies, BIC
//! hit rates and the APE sign diagnostic.
//!
//! Replication `r` draws from its own ChaCha stream keyed by `(seed, r,
//! attempt)`, and results are reduced in replication order, so every
//! experiment is reproducible under either [`Execution`] mode.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::ape::{accumulate, ape_excess, start_index};
use crate::error::{Error, Result};
use crate::estimation::{dense_lags, fit_direct_lags, fit_plugin_lags, predict_at, Method, Series};
use crate::parallel::map_indexed;
pub use crate::parallel::Execution;
use crate::selection::{bic_order, default_bic_penalty, select_predictor, subset_select, Candidate};
use crate::theory::{f1, f2, g_ratio, h_step_order, loss_table, optimal_direct_coeffs, optimal_set, sigma_h2, ArModel};

pub const DEFAULT_BURN_IN: usize = 500;
/// Fresh draws allowed for a replication whose fit is singular.
pub const MAX_REDRAWS: usize = 3;

/// Innovation law, always scaled to variance `sigma^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "law")]
pub enum Innovation {
    #[default]
    Normal,
    /// Centered uniform on `(-sqrt 3, sqrt 3)` before scaling.
    Uniform,
    /// Student-t with `nu > 8` degrees of freedom, standardised.
    StudentT { nu: f64 },
    /// All innovations zero: the path stays at the zero initial state.
    Zero,
}

impl Innovation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Innovation::StudentT { nu } if !(*nu > 8.0) => Err(Error::OutOfDomain {
                value: *nu,
                domain: "nu > 8",
            }),
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            Innovation::Normal => Sampler::Normal,
            Innovation::Uniform => Sampler::Uniform,
            Innovation::StudentT { nu } => Sampler::T {
                dist: StudentT::new(nu).map_err(|e| Error::InvalidArgument(e.to_string()))?,
                scale: ((nu - 2.0) / nu).sqrt(),
            },
            Innovation::Zero => Sampler::Zero,
        })
    }
}

enum Sampler {
    Normal,
    Uniform,
    T { dist: StudentT<f64>, scale: f64 },
    Zero,
}

impl Sampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Normal => rng.sample(StandardNormal),
            Sampler::Uniform => rng.gen_range(-3f64.sqrt()..3f64.sqrt()),
            Sampler::T { dist, scale } => dist.sample(rng) * scale,
            Sampler::Zero => 0.0,
        }
    }
}

/// A simulated path with the innovations that generated it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimPath {
    pub series: Series,
    /// `innovations[t - 1]` drives `x_t`.
    pub innovations: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub burn_in: usize,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id of replication `rep`, draw `attempt`; stream 0 is reserved for
/// stand-alone paths.
fn replication_stream(rep: usize, attempt: usize) -> u64 {
    ((attempt as u64) << 48) | (rep as u64 + 1)
}

/// Simulates `n` observations after `burn_in` discarded steps from a zero
/// initial state.
pub fn simulate(model: &ArModel, n: usize, burn_in: usize, seed: u64, innovation: Innovation) -> Result<SimPath> {
    simulate_stream(model, n, burn_in, seed, 0, innovation)
}

pub fn simulate_stream(
    model: &ArModel,
    n: usize,
    burn_in: usize,
    seed: u64,
    stream: u64,
    innovation: Innovation,
) -> Result<SimPath> {
    if n == 0 {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    let sampler = innovation.sampler()?;
    let mut rng = stream_rng(seed, stream);
    let sd = model.sigma2().sqrt();
    let a = model.coeffs();
    let total = burn_in + n;
    let mut x = Vec::with_capacity(total);
    let mut eps = Vec::with_capacity(total);
    for t in 0..total {
        let e = sd * sampler.draw(&mut rng);
        let mut v = 0.0;
        for (i, ai) in a.iter().enumerate() {
            if t > i {
                v += ai * x[t - 1 - i];
            }
        }
        x.push(v + e);
        eps.push(e);
    }
    Ok(SimPath {
        series: Series::new(x.split_off(burn_in))?,
        innovations: eps.split_off(burn_in),
        seed,
        stream,
        burn_in,
    })
}

/// Largest `|x_t - sum a_i x_{t-i} - eps_t|` over retained steps whose lags
/// all lie in the retained window.
pub fn recursion_residual(model: &ArModel, path: &SimPath) -> f64 {
    let a = model.coeffs();
    let p = a.len();
    let s = &path.series;
    (p + 1..=s.len())
        .map(|t| {
            let fitted: f64 = a.iter().enumerate().map(|(i, ai)| ai * s.x(t - 1 - i)).sum();
            (s.x(t) - fitted - path.innovations[t - 1]).abs()
        })
        .fold(0.0, f64::max)
}

/// Shared Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub innovation: Innovation,
    pub execution: Execution,
}

impl McConfig {
    pub fn new(n: usize, reps: usize, seed: u64) -> Self {
        Self {
            n,
            reps,
            seed,
            burn_in: DEFAULT_BURN_IN,
            innovation: Innovation::Normal,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn validate(&self, min_reps: usize) -> Result<()> {
        if self.reps < min_reps {
            return Err(Error::InvalidArgument(format!(
                "at least {min_reps} replications required, got {}",
                self.reps
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        self.innovation.validate()
    }

    /// Seed of the `index`-th sub-experiment (one per model in a table).
    fn derived_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Runs `f` on the path of replication `rep`, redrawing with a fresh stream
/// on numerical failure.
fn with_redraws<T>(
    model: &ArModel,
    len: usize,
    cfg: &McConfig,
    rep: usize,
    f: impl Fn(&SimPath) -> Result<T>,
) -> Result<T> {
    let mut last = None;
    for attempt in 0..=MAX_REDRAWS {
        let path = simulate_stream(
            model,
            len,
            cfg.burn_in,
            cfg.seed,
            replication_stream(rep, attempt),
            cfg.innovation,
        )?;
        match f(&path) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_numerical() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::ReplicationFailed {
        rep,
        attempts: MAX_REDRAWS + 1,
        source: Box::new(last.expect("at least one attempt")),
    })
}

fn collect<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// How a replication's squared prediction error is recorded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// `(x_{n+h} - forecast)^2` on the simulated future value.
    #[default]
    SquaredError,
    /// `sigma_h^2 + (x_n(p1)' a_D(h, p1) - forecast)^2`, the expected squared
    /// error given `x_1..x_n`. Same mean, without the innovation noise.
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MspeEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub reps: usize,
    pub h: usize,
    pub lags: Vec<usize>,
    pub method: Method,
    pub n: usize,
    pub estimator: Estimator,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_se(a);
    let (mb, _) = mean_se(b);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

/// Per-replication squared-error excess over `sigma_h^2` for each candidate,
/// all evaluated on the same path.
fn excess_samples(
    model: &ArModel,
    h: usize,
    candidates: &[(Vec<usize>, Method)],
    estimator: Estimator,
    cfg: &McConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate(2)?;
    let n = cfg.n;
    let s2h = sigma_h2(model, h);
    let p1 = model.order();
    let table = model.autocovariances(h + p1)?;
    let optimal = optimal_direct_coeffs(&table, h, p1)?;
    let per_rep = map_indexed(cfg.reps, cfg.execution, |rep| {
        with_redraws(model, n + h, cfg, rep, |path| {
            let fit_on = path.series.prefix(n);
            let best = predict_at(&fit_on, n, &optimal);
            candidates
                .iter()
                .map(|(lags, method)| {
                    let coef = match method {
                        Method::PlugIn => fit_plugin_lags(&fit_on, h, lags)?,
                        Method::Direct => fit_direct_lags(&fit_on, h, lags)?,
                    };
                    let f = predict_at(&fit_on, n, &coef);
                    Ok(match estimator {
                        Estimator::SquaredError => (path.series.x(n + h) - f).powi(2) - s2h,
                        Estimator::Conditional => (best - f).powi(2),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
    });
    let per_rep = collect(per_rep)?;
    Ok((0..candidates.len())
        .map(|c| per_rep.iter().map(|r| r[c]).collect())
        .collect())
}

/// Estimate of `MSPE - sigma_h^2` for one candidate.
pub fn excess_mspe(
    model: &ArModel,
    h: usize,
    lags: &[usize],
    method: Method,
    estimator: Estimator,
    cfg: &McConfig,
) -> Result<MspeEstimate> {
    let samples = excess_samples(model, h, &[(lags.to_vec(), method)], estimator, cfg)?;
    let (mean, std_error) = mean_se(&samples[0]);
    Ok(MspeEstimate {
        mean,
        std_error,
        reps: cfg.reps,
        h,
        lags: lags.to_vec(),
        method,
        n: cfg.n,
        estimator,
    })
}

/// Empirical `E(x_{n+h} - forecast)^2` for a candidate fitted on `x_1..x_n`.
pub fn mc_mspe(
    model: &ArModel,
    h: usize,
    lags: &[usize],
    method: Method,
    estimator: Estimator,
    cfg: &McConfig,
) -> Result<MspeEstimate> {
    let mut e = excess_mspe(model, h, lags, method, estimator, cfg)?;
    e.mean += sigma_h2(model, h);
    Ok(e)
}

/// Second coefficients of the four `a1^2 + a2 = 0` models in the ratio table.
pub const TABLE1_A2: [f64; 4] = [-0.81, -0.64, -0.36, -0.25];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub coeffs: [f64; 2],
    pub sigma3_sq: f64,
    pub excess_direct: f64,
    pub excess_direct_se: f64,
    pub excess_plugin: f64,
    pub excess_plugin_se: f64,
    /// `(MSPE D(1) - sigma_3^2) / (MSPE P(2) - sigma_3^2)`.
    pub ratio: f64,
    /// Delta-method standard error of `ratio`.
    pub ratio_se: f64,
    /// Limiting value `f2(3, 1) / f1(3, 2)`.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1 {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub rows: Vec<Table1Row>,
}

fn ratio_row(model: &ArModel, estimator: Estimator, cfg: &McConfig) -> Result<Table1Row> {
    let h = 3;
    let cands = [(dense_lags(1), Method::Direct), (dense_lags(2), Method::PlugIn)];
    let s = excess_samples(model, h, &cands, estimator, cfg)?;
    let (d, dse) = mean_se(&s[0]);
    let (p, pse) = mean_se(&s[1]);
    let ratio = d / p;
    let var = (covariance(&s[0], &s[0]) - 2.0 * ratio * covariance(&s[0], &s[1])
        + ratio * ratio * covariance(&s[1], &s[1]))
        / (cfg.reps as f64 * p * p);
    Ok(Table1Row {
        coeffs: [model.coeffs()[0], model.coeffs()[1]],
        sigma3_sq: sigma_h2(model, h),
        excess_direct: d,
        excess_direct_se: dse,
        excess_plugin: p,
        excess_plugin_se: pse,
        ratio,
        ratio_se: var.max(0.0).sqrt(),
        limit: g_ratio(model.coeffs()[1])?,
    })
}

/// Direct order-one versus plug-in order-two efficiency ratio at horizon 3
/// for each model in [`TABLE1_A2`].
pub fn replicate_table1(cfg: &McConfig, estimator: Estimator) -> Result<Table1> {
    let rows = TABLE1_A2
        .iter()
        .enumerate()
        .map(|(i, &a2)| {
            let model = ArModel::vanishing_b2(a2)?;
            let sub = McConfig {
                seed: cfg.derived_seed(i),
                ..cfg.clone()
            };
            ratio_row(&model, estimator, &sub)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table1 {
        n: cfg.n,
        reps: cfg.reps,
        seed: cfg.seed,
        estimator,
        rows,
    })
}

/// Reference ratios at `n = 300`, in [`TABLE1_A2`] order.
pub const TABLE1_REFERENCE_N300: [f64; 4] = [0.688, 0.843, 1.365, 1.782];

/// Agreement bands for [`check_table1`]; the reduced-replication run
/// widens every band by [`Table1Tolerance::REDUCED_WIDENING`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Tolerance {
    pub reference_abs: f64,
    pub std_errors: f64,
    pub limit_abs: f64,
}

impl Table1Tolerance {
    pub const FULL_REPS: usize = 20_000;
    pub const REDUCED_REPS: usize = 4_000;
    pub const REDUCED_WIDENING: f64 = 1.6;

    pub fn full() -> Self {
        Self {
            reference_abs: 0.06,
            std_errors: 3.0,
            limit_abs: 0.08,
        }
    }

    pub fn reduced() -> Self {
        let f = Self::full();
        let w = Self::REDUCED_WIDENING;
        Self {
            reference_abs: f.reference_abs * w,
            std_errors: f.std_errors * w,
            limit_abs: f.limit_abs * w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1RowCheck {
    pub a2: f64,
    pub ratio: f64,
    pub reference: f64,
    pub reference_band: f64,
    pub reference_ok: bool,
    pub limit: f64,
    pub limit_ok: bool,
}

impl Table1RowCheck {
    pub fn passed(&self) -> bool {
        self.reference_ok && self.limit_ok
    }
}

/// Compares each row with the reference `n = 300` ratio and with its
/// theoretical limit.
pub fn check_table1(table: &Table1, tol: &Table1Tolerance) -> Vec<Table1RowCheck> {
    table
        .rows
        .iter()
        .zip(TABLE1_REFERENCE_N300)
        .map(|(row, reference)| {
            let band = tol.reference_abs.max(tol.std_errors * row.ratio_se);
            Table1RowCheck {
                a2: row.coeffs[1],
                ratio: row.ratio,
                reference,
                reference_band: band,
                reference_ok: (row.ratio - reference).abs() <= band,
                limit: row.limit,
                limit_ok: (row.ratio - row.limit).abs() <= tol.limit_abs,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    Dense,
    Subset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub candidate: Candidate,
    pub method: Method,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionFrequency {
    pub h: usize,
    pub k_max: usize,
    pub n: usize,
    pub reps: usize,
    pub procedure: Procedure,
    /// Sorted by decreasing count.
    pub outcomes: Vec<Outcome>,
    /// Minimal-loss pairs from the population theory (dense procedure only).
    pub optimal_set: Option<Vec<(usize, Method)>>,
    /// Fraction of replications landing in `optimal_set`.
    pub optimal_fraction: Option<f64>,
    /// Fraction with the one-step direct winner equal to the true order
    /// (dense procedure only).
    pub one_step_order_fraction: Option<f64>,
}

pub fn selection_frequency(
    model: &ArModel,
    h: usize,
    k_max: usize,
    procedure: Procedure,
    cfg: &McConfig,
) -> Result<SelectionFrequency> {
    cfg.validate(2)?;
    let picks = collect(map_indexed(cfg.reps, cfg.execution, |rep| {
        with_redraws(model, cfg.n, cfg, rep, |path| {
            let r = match procedure {
                Procedure::Dense => select_predictor(&path.series, h, k_max)?,
                Procedure::Subset => subset_select(&path.series, h, k_max)?,
            };
            Ok((r.chosen, r.method, r.audit.one_step_direct))
        })
    }))?;

    let mut counts: BTreeMap<(String, Method), (Candidate, usize)> = BTreeMap::new();
    for (c, m, _) in &picks {
        counts.entry((c.to_string(), *m)).or_insert((*c, 0)).1 += 1;
    }
    let reps = cfg.reps as f64;
    let mut outcomes: Vec<Outcome> = counts
        .into_iter()
        .map(|((_, method), (candidate, count))| Outcome {
            candidate,
            method,
            count,
            frequency: count as f64 / reps,
        })
        .collect();
    outcomes.sort_by_key(|o| std::cmp::Reverse(o.count));

    let (optimal, optimal_fraction, one_step) = match procedure {
        Procedure::Dense if k_max >= model.order() => {
            let set = optimal_set(&loss_table(model, h, k_max)?);
            let hits = picks
                .iter()
                .filter(|(c, m, _)| set.contains(&(c.order().unwrap_or(0), *m)))
                .count();
            let ones = picks
                .iter()
                .filter(|(_, _, d1)| d1.order() == Some(model.order()))
                .count();
            (Some(set), Some(hits as f64 / reps), Some(ones as f64 / reps))
        }
        _ => (None, None, None),
    };
    Ok(SelectionFrequency {
        h,
        k_max,
        n: cfg.n,
        reps: cfg.reps,
        procedure,
        outcomes,
        optimal_set: optimal,
        optimal_fraction,
        one_step_order_fraction: one_step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFrequency {
    pub h: usize,
    pub target: usize,
    /// `counts[k - 1]` replications chose order `k`.
    pub counts: Vec<usize>,
    pub hit_rate: f64,
}

/// How often the multistep BIC recovers the h-step order `p_h`.
pub fn bic_frequency(
    model: &ArModel,
    h: usize,
    k_max: usize,
    penalty: Option<f64>,
    cfg: &McConfig,
) -> Result<OrderFrequency> {
    cfg.validate(2)?;
    let c_n = penalty.unwrap_or_else(|| default_bic_penalty(cfg.n));
    let orders = collect(map_indexed(cfg.reps, cfg.execution, |rep| {
        with_redraws(model, cfg.n, cfg, rep, |path| {
            Ok(bic_order(&path.series, h, k_max, c_n)?.order)
        })
    }))?;
    let target = h_step_order(model, h)?;
    let mut counts = vec![0; k_max];
    for k in &orders {
        counts[k - 1] += 1;
    }
    Ok(OrderFrequency {
        h,
        target,
        hit_rate: counts.get(target - 1).copied().unwrap_or(0) as f64 / cfg.reps as f64,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignDiagnostic {
    pub h: usize,
    pub p1: usize,
    pub p_h: usize,
    pub f1_p1: f64,
    pub f2_ph: f64,
    /// Fraction of paths with plug-in APE at `p1` above direct APE at `p_h`.
    pub plugin_larger_fraction: f64,
    /// Fraction of paths whose APE sign matches `sign(f1_p1 - f2_ph)`.
    pub agreement_fraction: f64,
    /// Mean APE excess over `sum eta^2`, divided by `log n`.
    pub plugin_excess_per_log_n: f64,
    pub direct_excess_per_log_n: f64,
}

/// Compares plug-in APE at `p1` with direct APE at `p_h` path by path.
pub fn ape_sign_diagnostic(model: &ArModel, h: usize, cfg: &McConfig) -> Result<SignDiagnostic> {
    cfg.validate(2)?;
    let p1 = model.order();
    let p_h = h_step_order(model, h)?;
    let ma = model.ma_coefficients(h);
    let log_n = (cfg.n as f64).ln();
    let draws = collect(map_indexed(cfg.reps, cfg.execution, |rep| {
        with_redraws(model, cfg.n, cfg, rep, |path| {
            let s = &path.series;
            let m = start_index(s, h, p1)?;
            let res = accumulate(s, h, &[dense_lags(p1), dense_lags(p_h)], m, false)?;
            let plug = &res[0].0;
            let direct = &res[1].1;
            Ok((
                plug.ape,
                direct.ape,
                ape_excess(plug, &path.innovations, &ma)?,
                ape_excess(direct, &path.innovations, &ma)?,
            ))
        })
    }))?;
    let f1_p1 = f1(model, h, p1)?;
    let f2_ph = f2(model, h, p_h)?;
    let reps = cfg.reps as f64;
    let larger = draws.iter().filter(|d| d.0 > d.1).count() as f64 / reps;
    let agree = if f1_p1 > f2_ph { larger } else { 1.0 - larger };
    Ok(SignDiagnostic {
        h,
        p1,
        p_h,
        f1_p1,
        f2_ph,
        plugin_larger_fraction: larger,
        agreement_fraction: agree,
        plugin_excess_per_log_n: draws.iter().map(|d| d.2).sum::<f64>() / reps / log_n,
        direct_excess_per_log_n: draws.iter().map(|d| d.3).sum::<f64>() / reps / log_n,
    })
}
