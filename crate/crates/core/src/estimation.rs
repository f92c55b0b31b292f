//! Least-squares plug-in and direct estimators, batch and sequential.
//!
//! Observations are indexed from 1 as `x_1..x_n`, and the lag vector
//! `x_j(k) = (x_j, ..., x_{j-k+1})'`. Sums over `j = k..n-h` follow that
//! indexing exactly; `Series::x` performs the translation to storage.
//!
//! Candidate models are described by their lag sets (sorted, 1-based lags).
//! A dense order-`k` model is the lag set `1..=k`; subset models use any
//! nonempty subset of `1..=K`. Coefficient vectors returned here are always
//! expanded to the maximal lag of the set, with zeros on excluded lags.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SolveFailure};

/// Prediction method; numeric codes follow the `(k, j)` labelling with
/// `j = 1` for plug-in and `j = 2` for direct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PlugIn = 1,
    Direct = 2,
}

impl Method {
    pub fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::PlugIn => "plug-in",
            Method::Direct => "direct",
        })
    }
}

/// Observed series `x_1..x_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    values: Vec<f64>,
}

impl Series {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::TooFewObservations { needed: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("series"));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `x_j`, 1-based.
    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.values[j - 1]
    }

    /// `x_1..x_t` as a new series.
    pub fn prefix(&self, t: usize) -> Series {
        Series {
            values: self.values[..t].to_vec(),
        }
    }

    /// `x_j(k)`, 1-based; requires `j >= k`.
    pub fn lag_vector(&self, j: usize, k: usize) -> Vec<f64> {
        (0..k).map(|r| self.x(j - r)).collect()
    }

    pub fn scaled(&self, c: f64) -> Series {
        Series {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

pub fn dense_lags(k: usize) -> Vec<usize> {
    (1..=k).collect()
}

fn max_lag(lags: &[usize]) -> usize {
    *lags.last().expect("nonempty lag set")
}

fn validate_lags(lags: &[usize]) -> Result<()> {
    if lags.is_empty() || lags[0] == 0 || lags.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "lag set must be strictly increasing and 1-based, got {lags:?}"
        )));
    }
    Ok(())
}

/// Unnormalised `sum_{j=l..n-h} x_j x_j'` and `sum x_j x_{j+h}` over the lags
/// in `lags`, with `l` the largest lag; also the number of summands.
fn normal_sums(series: &Series, h: usize, lags: &[usize]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = series.len();
    let l = max_lag(lags);
    let needed = h + l;
    if n < needed {
        return Err(Error::TooFewObservations { needed, got: n });
    }
    let d = lags.len();
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut v = vec![0.0; d];
    for j in l..=n - h {
        for (slot, &lag) in v.iter_mut().zip(lags) {
            *slot = series.x(j + 1 - lag);
        }
        let y = series.x(j + h);
        for r in 0..d {
            rhs[r] += v[r] * y;
            for c in 0..d {
                gram[r * d + c] += v[r] * v[c];
            }
        }
    }
    Ok((gram, rhs, n - h - l + 1))
}

/// `Gamma_hat_n(h, k) = (1/(n-h-k+1)) sum_{j=k}^{n-h} x_j(k) x_j'(k)`.
pub fn sample_moment(series: &Series, h: usize, k: usize) -> Result<DMatrix<f64>> {
    check_order(h, k)?;
    let (gram, _, count) = normal_sums(series, h, &dense_lags(k))?;
    Ok(DMatrix::from_row_slice(k, k, &gram) / count as f64)
}

fn check_order(h: usize, k: usize) -> Result<()> {
    if h == 0 || k == 0 {
        return Err(Error::InvalidArgument("horizon and order must be at least 1".into()));
    }
    Ok(())
}

fn singular(k: usize, f: SolveFailure) -> Error {
    Error::SingularMoment {
        k,
        condition: f.condition(),
    }
}

/// Expands coefficients on `lags` into a vector over lags `1..=max_lag`.
pub fn expand(lags: &[usize], coef: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; max_lag(lags)];
    for (&lag, &c) in lags.iter().zip(coef) {
        full[lag - 1] = c;
    }
    full
}

/// Applies the propagation matrix of `one_step` to itself `h - 1` times,
/// yielding the iterated (plug-in) h-step coefficients.
pub fn iterate_one_step(one_step: &[f64], h: usize) -> Vec<f64> {
    let k = one_step.len();
    let mut v = one_step.to_vec();
    let mut next = vec![0.0; k];
    for _ in 1..h {
        let lead = v[0];
        for r in 0..k {
            next[r] = one_step[r] * lead + if r + 1 < k { v[r + 1] } else { 0.0 };
        }
        std::mem::swap(&mut v, &mut next);
    }
    v
}

/// Direct h-step least squares on an arbitrary lag set, expanded to `1..=max_lag`.
pub fn fit_direct_lags(series: &Series, h: usize, lags: &[usize]) -> Result<Vec<f64>> {
    validate_lags(lags)?;
    check_order(h, lags.len())?;
    let (gram, rhs, count) = normal_sums(series, h, lags)?;
    let c = count as f64;
    let gram: Vec<f64> = gram.iter().map(|v| v / c).collect();
    let rhs: Vec<f64> = rhs.iter().map(|v| v / c).collect();
    let coef = linalg::solve_symmetric(&gram, lags.len(), &rhs).map_err(|f| singular(lags.len(), f))?;
    Ok(expand(lags, &coef))
}

/// Plug-in h-step coefficients on a lag set: one-step fit, zero-filled over
/// excluded lags, iterated `h - 1` times.
pub fn fit_plugin_lags(series: &Series, h: usize, lags: &[usize]) -> Result<Vec<f64>> {
    let one = fit_direct_lags(series, 1, lags)?;
    Ok(iterate_one_step(&one, h))
}

/// One-step least-squares coefficients `a_hat_n(1, k)`.
pub fn fit_one_step(series: &Series, k: usize) -> Result<Vec<f64>> {
    fit_direct(series, 1, k)
}

/// Direct coefficients `a_check_n(h, k)`.
pub fn fit_direct(series: &Series, h: usize, k: usize) -> Result<Vec<f64>> {
    check_order(h, k)?;
    fit_direct_lags(series, h, &dense_lags(k))
}

/// Plug-in coefficients `A_hat^{h-1}(k) a_hat_n(1, k)`.
pub fn fit_plugin(series: &Series, h: usize, k: usize) -> Result<Vec<f64>> {
    check_order(h, k)?;
    fit_plugin_lags(series, h, &dense_lags(k))
}

/// Full-sample least-squares state for one `(h, k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsFit {
    pub h: usize,
    pub k: usize,
    pub gamma_hat: Vec<f64>,
    pub a1_hat: Vec<f64>,
    pub a_plugin: Vec<f64>,
    pub a_direct: Vec<f64>,
    pub n_used: usize,
}

impl LsFit {
    pub fn new(series: &Series, h: usize, k: usize) -> Result<Self> {
        let gamma_hat = sample_moment(series, h, k)?;
        let a1_hat = fit_one_step(series, k)?;
        let a_plugin = iterate_one_step(&a1_hat, h);
        let a_direct = if h == 1 {
            a1_hat.clone()
        } else {
            fit_direct(series, h, k)?
        };
        Ok(Self {
            h,
            k,
            gamma_hat: linalg::to_row_major(&gamma_hat),
            a1_hat,
            a_plugin,
            a_direct,
            n_used: series.len() - h - k + 1,
        })
    }

    pub fn coefficients(&self, method: Method) -> &[f64] {
        match method {
            Method::PlugIn => &self.a_plugin,
            Method::Direct => &self.a_direct,
        }
    }
}

/// `x_n(k)' a` for the chosen coefficient vector.
pub fn predict(series: &Series, fit: &LsFit, method: Method) -> f64 {
    predict_at(series, series.len(), fit.coefficients(method))
}

/// `x_t(k)' coef` with `k = coef.len()`.
#[inline]
pub fn predict_at(series: &Series, t: usize, coef: &[f64]) -> f64 {
    coef.iter().enumerate().map(|(r, c)| c * series.x(t - r)).sum()
}

/// Rank-one-updated moment sums for one maximal lag.
#[derive(Debug, Clone)]
struct Accumulator {
    dim: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    count: usize,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            gram: vec![0.0; dim * dim],
            rhs: vec![0.0; dim],
            count: 0,
        }
    }

    fn add(&mut self, series: &Series, j: usize, offset: usize) {
        let d = self.dim;
        let y = series.x(j + offset);
        for r in 0..d {
            let vr = series.x(j - r);
            self.rhs[r] += vr * y;
            for c in 0..d {
                self.gram[r * d + c] += vr * series.x(j - c);
            }
        }
        self.count += 1;
    }

    /// Recomputes the sums over `j = dim..=last` from scratch.
    fn rebuild(&mut self, series: &Series, last: usize, offset: usize) {
        self.gram.iter_mut().for_each(|v| *v = 0.0);
        self.rhs.iter_mut().for_each(|v| *v = 0.0);
        self.count = 0;
        for j in self.dim..=last {
            self.add(series, j, offset);
        }
    }

    fn solve(&self, lags: &[usize]) -> std::result::Result<Vec<f64>, SolveFailure> {
        let d = lags.len();
        if self.count == 0 {
            return Err(SolveFailure::Singular {
                condition: f64::INFINITY,
            });
        }
        let mut sub = Vec::with_capacity(d * d);
        for &r in lags {
            for &c in lags {
                sub.push(self.gram[(r - 1) * self.dim + (c - 1)]);
            }
        }
        let rhs: Vec<f64> = lags.iter().map(|&r| self.rhs[r - 1]).collect();
        linalg::solve_symmetric(&sub, d, &rhs)
    }
}

/// Plug-in and direct coefficients of one candidate at one time; `None`
/// marks a singular fit before the start index.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFit {
    pub plug_in: Option<Vec<f64>>,
    pub direct: Option<Vec<f64>>,
}

/// All candidate fits using `x_1..x_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitStep {
    pub time: usize,
    pub fits: Vec<CandidateFit>,
}

/// Steps between full recomputations of the running sums.
pub const REFRESH_PERIOD: usize = 256;

/// Streams plug-in and direct fits on growing prefixes `x_1..x_i`.
///
/// Moment sums are updated by one outer product per step and rebuilt from
/// scratch every [`REFRESH_PERIOD`] steps. Fits that are singular before
/// `strict_from` are yielded as `None`; afterwards they end the stream with
/// [`Error::SingularAfterStart`].
pub struct SequentialFitter<'a> {
    series: &'a Series,
    h: usize,
    candidates: Vec<Vec<usize>>,
    one_step: Vec<Accumulator>,
    multi_step: Vec<Accumulator>,
    time: usize,
    last: usize,
    strict_from: usize,
    since_refresh: usize,
    started: bool,
    failed: bool,
}

impl<'a> SequentialFitter<'a> {
    /// Fits at times `first..=last` for each lag set in `candidates`.
    pub fn new(
        series: &'a Series,
        h: usize,
        candidates: Vec<Vec<usize>>,
        first: usize,
        last: usize,
        strict_from: usize,
    ) -> Result<Self> {
        if h == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("no candidate models".into()));
        }
        for lags in &candidates {
            validate_lags(lags)?;
        }
        if last > series.len() {
            return Err(Error::TooFewObservations {
                needed: last,
                got: series.len(),
            });
        }
        let top = candidates.iter().map(|c| max_lag(c)).max().unwrap_or(0);
        let multi_dims = if h == 1 { 0 } else { top };
        Ok(Self {
            series,
            h,
            candidates,
            one_step: (1..=top).map(Accumulator::new).collect(),
            multi_step: (1..=multi_dims).map(Accumulator::new).collect(),
            time: first,
            last,
            strict_from,
            since_refresh: 0,
            started: false,
            failed: false,
        })
    }

    fn rebuild(&mut self) {
        let t = self.time;
        for acc in &mut self.one_step {
            if t > acc.dim {
                acc.rebuild(self.series, t - 1, 1);
            } else {
                *acc = Accumulator::new(acc.dim);
            }
        }
        let h = self.h;
        for acc in &mut self.multi_step {
            if t >= h + acc.dim {
                acc.rebuild(self.series, t - h, h);
            } else {
                *acc = Accumulator::new(acc.dim);
            }
        }
        self.since_refresh = 0;
    }

    /// Moves the sums from time `t` to `t + 1`.
    fn advance(&mut self) {
        let t = self.time;
        for acc in &mut self.one_step {
            if t >= acc.dim {
                acc.add(self.series, t, 1);
            }
        }
        let h = self.h;
        for acc in &mut self.multi_step {
            if t + 1 >= h + acc.dim {
                acc.add(self.series, t + 1 - h, h);
            }
        }
        self.time += 1;
        self.since_refresh += 1;
    }

    fn fit_now(&self) -> Result<FitStep> {
        let strict = self.time >= self.strict_from;
        let fail = || Error::SingularAfterStart {
            step: self.time,
            start: self.strict_from,
        };
        let mut fits = Vec::with_capacity(self.candidates.len());
        for lags in &self.candidates {
            let l = max_lag(lags);
            let one = match self.one_step[l - 1].solve(lags) {
                Ok(c) => Some(expand(lags, &c)),
                Err(_) if !strict => None,
                Err(_) => return Err(fail()),
            };
            let direct = if self.h == 1 {
                one.clone()
            } else {
                match self.multi_step[l - 1].solve(lags) {
                    Ok(c) => Some(expand(lags, &c)),
                    Err(_) if !strict => None,
                    Err(_) => return Err(fail()),
                }
            };
            let plug_in = one.map(|c| iterate_one_step(&c, self.h));
            fits.push(CandidateFit { plug_in, direct });
        }
        Ok(FitStep { time: self.time, fits })
    }
}

impl Iterator for SequentialFitter<'_> {
    type Item = Result<FitStep>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if !self.started {
            self.started = true;
            if self.time > self.last {
                return None;
            }
            self.rebuild();
        } else {
            if self.time >= self.last {
                return None;
            }
            self.advance();
            if self.since_refresh >= REFRESH_PERIOD {
                self.rebuild();
            }
        }
        let step = self.fit_now();
        if step.is_err() {
            self.failed = true;
        }
        Some(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn noisy(n: usize) -> Series {
        // deterministic pseudo-random values, no RNG dependency
        let mut state = 0x2545F4914F6CDD1Du64;
        let v = (0..n)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        Series::new(v).unwrap()
    }

    #[test]
    fn constant_series_moment() {
        let s = Series::new(vec![3.0; 12]).unwrap();
        let m = sample_moment(&s, 2, 3).unwrap();
        assert!(m.iter().all(|v| (*v - 9.0).abs() < 1e-12));
    }

    #[test]
    fn moment_with_one_summand() {
        let s = noisy(5);
        let m = sample_moment(&s, 2, 3).unwrap();
        let v = s.lag_vector(3, 3);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(m[(r, c)], v[r] * v[c]);
            }
        }
        assert!(matches!(sample_moment(&s, 3, 3), Err(Error::TooFewObservations { .. })));
    }

    #[test]
    fn moment_matches_naive_double_loop() {
        let s = noisy(40);
        let (h, k) = (3, 4);
        let m = sample_moment(&s, h, k).unwrap();
        let n = s.len();
        for r in 0..k {
            for c in 0..k {
                let mut acc = 0.0;
                for j in k..=n - h {
                    acc += s.values()[j - 1 - r] * s.values()[j - 1 - c];
                }
                acc /= (n - h - k + 1) as f64;
                assert_abs_diff_eq!(m[(r, c)], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn one_step_scalar_closed_form() {
        let s = Series::new((1..=10).map(f64::from).collect()).unwrap();
        let a = fit_one_step(&s, 1).unwrap();
        let num: f64 = (1..10).map(|j| (j * (j + 1)) as f64).sum();
        let den: f64 = (1..10).map(|j| (j * j) as f64).sum();
        assert_abs_diff_eq!(a[0], num / den, epsilon = 1e-14);
    }

    #[test]
    fn noiseless_recursion_recovers_coefficients() {
        let mut v = vec![1.0, 0.5];
        for t in 2..200 {
            v.push(0.9 * v[t - 1] - 0.81 * v[t - 2]);
        }
        let a = fit_one_step(&Series::new(v).unwrap(), 2).unwrap();
        assert!((a[0] - 0.9).abs() < 1e-6 && (a[1] + 0.81).abs() < 1e-6);
    }

    #[test]
    fn minimal_sample_one_equation() {
        let s = Series::new(vec![2.0, 1.0]).unwrap();
        assert_eq!(fit_one_step(&s, 1).unwrap(), vec![0.5]);
        // two lags, one equation: rank one
        let s = Series::new(vec![2.0, 1.0, 3.0]).unwrap();
        assert!(matches!(fit_one_step(&s, 2), Err(Error::SingularMoment { .. })));
        assert!(matches!(fit_direct(&s, 3, 1), Err(Error::TooFewObservations { .. })));
    }

    #[test]
    fn plugin_and_direct_agree_at_horizon_one() {
        let s = noisy(60);
        for k in 1..5 {
            assert_eq!(fit_plugin(&s, 1, k).unwrap(), fit_direct(&s, 1, k).unwrap());
            assert_eq!(fit_one_step(&s, k).unwrap(), fit_direct(&s, 1, k).unwrap());
            let fit = LsFit::new(&s, 1, k).unwrap();
            assert_eq!(predict(&s, &fit, Method::PlugIn), predict(&s, &fit, Method::Direct));
        }
    }

    #[test]
    fn scalar_plugin_squares() {
        let s = noisy(30);
        let a = fit_one_step(&s, 1).unwrap()[0];
        assert_abs_diff_eq!(fit_plugin(&s, 2, 1).unwrap()[0], a * a, epsilon = 1e-15);
    }

    #[test]
    fn iterate_matches_propagation_power() {
        let a = [0.5, -0.3, 0.2];
        let prop = crate::theory::propagation_matrix(&a);
        let v = nalgebra::DVector::from_row_slice(&a);
        let expect = prop.pow(3) * v;
        let got = iterate_one_step(&a, 4);
        for i in 0..3 {
            assert_abs_diff_eq!(got[i], expect[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn prediction_basics() {
        let s = Series::new(vec![0.0; 10]).unwrap();
        assert_eq!(predict_at(&s, 10, &[0.3, 0.2]), 0.0);
        let s = Series::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(predict_at(&s, 2, &[0.5]), 1.0);
    }

    #[test]
    fn subset_lags_expand_with_zeros() {
        let s = noisy(80);
        let c = fit_direct_lags(&s, 2, &[2, 4]).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c[0], 0.0);
        assert_eq!(c[2], 0.0);
        assert!(fit_direct_lags(&s, 2, &[3, 2]).is_err());
    }

    #[test]
    fn sequential_matches_batch_on_prefixes() {
        let s = noisy(700);
        let h = 3;
        let cands: Vec<Vec<usize>> = vec![vec![1], vec![1, 2], vec![1, 2, 3], vec![2, 3]];
        let fitter = SequentialFitter::new(&s, h, cands.clone(), 12, 690, 12).unwrap();
        let mut steps = 0;
        for step in fitter {
            let step = step.unwrap();
            let prefix = s.prefix(step.time);
            for (lags, fit) in cands.iter().zip(&step.fits) {
                let d = fit_direct_lags(&prefix, h, lags).unwrap();
                let p = fit_plugin_lags(&prefix, h, lags).unwrap();
                for (a, b) in fit.direct.as_ref().unwrap().iter().zip(&d) {
                    assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3));
                }
                for (a, b) in fit.plug_in.as_ref().unwrap().iter().zip(&p) {
                    assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3));
                }
            }
            steps += 1;
        }
        assert_eq!(steps, 690 - 12 + 1);
    }

    #[test]
    fn sequential_skips_then_fails() {
        let mut v = vec![0.0; 20];
        v.extend(noisy(30).values());
        let s = Series::new(v).unwrap();
        let fitter = SequentialFitter::new(&s, 1, vec![vec![1]], 2, 40, 30).unwrap();
        let steps: Vec<_> = fitter.collect::<Result<Vec<_>>>().unwrap();
        assert!(steps[0].fits[0].direct.is_none());
        assert!(steps.last().unwrap().fits[0].direct.is_some());

        let mut fitter = SequentialFitter::new(&s, 1, vec![vec![1]], 2, 40, 2).unwrap();
        assert!(matches!(fitter.next(), Some(Err(Error::SingularAfterStart { .. }))));
        assert!(fitter.next().is_none());
    }
}
