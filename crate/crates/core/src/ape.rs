//! Accumulated squared errors of sequential (past-only) h-step predictions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{dense_lags, predict_at, sample_moment, Method, SequentialFitter, Series};
use crate::linalg::{self, to_row_major};
use crate::theory::MaCoefficients;

/// Steps after a candidate start that must also be well conditioned.
pub const START_PROBE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApeResult {
    pub h: usize,
    /// Lags of the candidate model; `1..=k` for the dense order `k`.
    pub lags: Vec<usize>,
    pub method: Method,
    /// First prediction origin `m_h`.
    pub start: usize,
    pub n: usize,
    pub ape: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_errors: Option<Vec<f64>>,
}

impl ApeResult {
    pub fn summands(&self) -> usize {
        self.n - self.h + 1 - self.start
    }
}

fn well_conditioned(series: &Series, t: usize, h: usize, k: usize) -> bool {
    let prefix = series.prefix(t);
    [1, h].iter().all(|&hh| match sample_moment(&prefix, hh, k) {
        Ok(m) => linalg::inverse_symmetric(&to_row_major(&m), k).is_ok(),
        Err(_) => false,
    })
}

/// Smallest `i >= max(2K, 2K + h - 1)` at which the order-`K` one-step and
/// h-step moment matrices are nonsingular, both at `i` and over the next
/// `min(10, n - h - i)` prefixes.
pub fn start_index(series: &Series, h: usize, k_max: usize) -> Result<usize> {
    if h == 0 || k_max == 0 {
        return Err(Error::InvalidArgument("horizon and order must be at least 1".into()));
    }
    let n = series.len();
    let first = (2 * k_max).max(2 * k_max + h - 1);
    let no_start = Error::NoValidStart { h, k_max, n };
    if n < h || first > n - h {
        return Err(no_start);
    }
    let last = n - h;
    let mut ok: Vec<Option<bool>> = vec![None; last + 1];
    let mut check = |t: usize| *ok[t].get_or_insert_with(|| well_conditioned(series, t, h, k_max));
    'outer: for i in first..=last {
        let probe = START_PROBE.min(last - i);
        for t in i..=i + probe {
            if !check(t) {
                continue 'outer;
            }
        }
        return Ok(i);
    }
    Err(no_start)
}

/// Plug-in and direct APE for every candidate lag set over the origins
/// `start..=n-h`, in a single pass of the sequential fitter.
pub fn accumulate(
    series: &Series,
    h: usize,
    candidates: &[Vec<usize>],
    start: usize,
    keep_errors: bool,
) -> Result<Vec<(ApeResult, ApeResult)>> {
    let n = series.len();
    if h == 0 || n < h + start {
        return Err(Error::TooFewObservations {
            needed: h + start,
            got: n,
        });
    }
    let fitter = SequentialFitter::new(series, h, candidates.to_vec(), start, n - h, start)?;
    let steps = n - h + 1 - start;
    let mut sums = vec![(0.0_f64, 0.0_f64); candidates.len()];
    let mut traces: Vec<(Vec<f64>, Vec<f64>)> = if keep_errors {
        vec![(Vec::with_capacity(steps), Vec::with_capacity(steps)); candidates.len()]
    } else {
        Vec::new()
    };
    for step in fitter {
        let step = step?;
        let i = step.time;
        let target = series.x(i + h);
        for (c, fit) in step.fits.iter().enumerate() {
            // strict mode: every fit is present from `start` on
            let ep = target - predict_at(series, i, fit.plug_in.as_deref().expect("strict fit"));
            let ed = target - predict_at(series, i, fit.direct.as_deref().expect("strict fit"));
            sums[c].0 += ep * ep;
            sums[c].1 += ed * ed;
            if keep_errors {
                traces[c].0.push(ep);
                traces[c].1.push(ed);
            }
        }
    }
    let mut traces = traces.into_iter();
    Ok(candidates
        .iter()
        .zip(sums)
        .map(|(lags, (p, d))| {
            let (tp, td) = match traces.next() {
                Some((a, b)) => (Some(a), Some(b)),
                None => (None, None),
            };
            let make = |method, ape, step_errors| ApeResult {
                h,
                lags: lags.clone(),
                method,
                start,
                n,
                ape,
                step_errors,
            };
            (make(Method::PlugIn, p, tp), make(Method::Direct, d, td))
        })
        .collect())
}

fn single(series: &Series, h: usize, k: usize, start: usize, method: Method) -> Result<ApeResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    let (p, d) = accumulate(series, h, &[dense_lags(k)], start, true)?
        .pop()
        .expect("one candidate");
    Ok(match method {
        Method::PlugIn => p,
        Method::Direct => d,
    })
}

/// `sum_{i=m}^{n-h} (x_{i+h} - x_hat_{i+h}(k))^2` with plug-in predictions
/// built from `x_1..x_i` only.
pub fn ape_plugin(series: &Series, h: usize, k: usize, start: usize) -> Result<ApeResult> {
    single(series, h, k, start, Method::PlugIn)
}

/// As [`ape_plugin`] with the direct h-step regression.
pub fn ape_direct(series: &Series, h: usize, k: usize, start: usize) -> Result<ApeResult> {
    single(series, h, k, start, Method::Direct)
}

/// APE minus `sum_i eta_{i,h}^2`, with `eta_{i,h} = sum_{j<h} b_j eps_{i+h-j}`.
///
/// Only meaningful for simulated paths, where the innovations are known;
/// `innovations[t - 1]` must be the innovation of `x_t`.
pub fn ape_excess(ape: &ApeResult, innovations: &[f64], ma: &MaCoefficients) -> Result<f64> {
    if innovations.len() != ape.n {
        return Err(Error::LengthMismatch {
            expected: ape.n,
            got: innovations.len(),
        });
    }
    let h = ape.h;
    let eps = |t: usize| innovations[t - 1];
    let eta_sq: f64 = (ape.start..=ape.n - h)
        .map(|i| {
            let eta: f64 = (0..h).map(|j| ma.get(j as isize) * eps(i + h - j)).sum();
            eta * eta
        })
        .sum();
    Ok(ape.ape - eta_sq)
}
