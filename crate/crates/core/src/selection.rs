//! Joint selection of the prediction order (or lag subset) and method from
//! accumulated prediction errors, plus a multistep BIC order selector.
//!
//! The dense procedure:
//! 1. `k_D1` minimises the one-step direct APE over `1..=K`;
//! 2. `k_Dh` minimises the h-step direct APE over `1..=K`, and `k_P`
//!    minimises the h-step plug-in APE over `k_D1..=K`;
//! 3. plug-in `k_P` is chosen only if the direct APE at `k_Dh` is strictly
//!    larger than the plug-in APE at `k_P`; otherwise direct `k_Dh`.
//!
//! The subset procedure is identical with lag masks in place of orders and
//! the plug-in search restricted to supersets of the one-step winner.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::ape::{accumulate, start_index};
use crate::error::{Error, Result};
use crate::estimation::{dense_lags, fit_direct, fit_direct_lags, fit_plugin_lags, predict_at, Series};
use crate::montecarlo::{excess_mspe, Estimator, McConfig};
use crate::theory::{h_step_order, optimal_direct_coeffs, ArModel, TOL_ZERO};

pub use crate::estimation::Method;

/// Largest `K` for exhaustive subset enumeration (`2^K - 1` masks).
pub const SUBSET_CAP: usize = 12;

/// Nonempty subset of the lags `1..=K`; bit `l - 1` set means lag `l` is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubsetMask {
    bits: u32,
    k_max: usize,
}

impl SubsetMask {
    pub fn new(bits: u32, k_max: usize) -> Result<Self> {
        if k_max == 0 || k_max > 32 {
            return Err(Error::InvalidArgument(format!("mask width {k_max} out of range")));
        }
        let width = if k_max == 32 { u32::MAX } else { (1u32 << k_max) - 1 };
        if bits == 0 || bits & !width != 0 {
            return Err(Error::InvalidArgument(format!(
                "mask {bits:#b} must select at least one of {k_max} lags"
            )));
        }
        Ok(Self { bits, k_max })
    }

    pub fn from_lags(lags: &[usize], k_max: usize) -> Result<Self> {
        let mut bits = 0u32;
        for &l in lags {
            if l == 0 || l > k_max {
                return Err(Error::InvalidArgument(format!("lag {l} outside 1..={k_max}")));
            }
            bits |= 1 << (l - 1);
        }
        Self::new(bits, k_max)
    }

    pub fn dense(k: usize, k_max: usize) -> Result<Self> {
        Self::from_lags(&dense_lags(k), k_max)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn lags(&self) -> Vec<usize> {
        (1..=self.k_max).filter(|&l| self.contains(l)).collect()
    }

    pub fn contains(&self, lag: usize) -> bool {
        lag >= 1 && lag <= self.k_max && self.bits & (1 << (lag - 1)) != 0
    }

    /// Componentwise order: every lag of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &SubsetMask) -> bool {
        self.bits & !other.bits == 0
    }

    /// All `2^K - 1` masks, ordered lexicographically by their lag lists.
    pub fn enumerate(k_max: usize) -> Result<Vec<SubsetMask>> {
        if k_max > SUBSET_CAP {
            return Err(Error::SubsetTooLarge { k_max, cap: SUBSET_CAP });
        }
        let mut masks = (1u32..(1 << k_max))
            .map(|bits| SubsetMask { bits, k_max })
            .collect::<Vec<_>>();
        masks.sort_by_cached_key(|m| m.lags());
        Ok(masks)
    }
}

impl fmt::Display for SubsetMask {
    /// `theta_1 .. theta_K` as a string of 0/1.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in 1..=self.k_max {
            f.write_str(if self.contains(l) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for SubsetMask {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A candidate model: dense order or lag subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(untagged)]
pub enum Candidate {
    Order(usize),
    Mask(SubsetMask),
}

impl Candidate {
    pub fn lags(&self) -> Vec<usize> {
        match self {
            Candidate::Order(k) => dense_lags(*k),
            Candidate::Mask(m) => m.lags(),
        }
    }

    pub fn order(&self) -> Option<usize> {
        match self {
            Candidate::Order(k) => Some(*k),
            Candidate::Mask(_) => None,
        }
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Candidate::Order(k) => write!(f, "{k}"),
            Candidate::Mask(m) => write!(f, "{m}"),
        }
    }
}

/// APE values of one candidate exactly as used by the decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateApe {
    pub candidate: Candidate,
    pub ape_direct_one_step: f64,
    pub ape_direct: f64,
    pub ape_plugin: f64,
    /// Inside the restricted plug-in search range.
    pub plugin_eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionAudit {
    pub start_one_step: usize,
    pub start: usize,
    /// Step 1 winner (one-step direct APE).
    pub one_step_direct: Candidate,
    /// Step 2 direct winner (h-step direct APE).
    pub direct: Candidate,
    /// Step 2 plug-in winner over the restricted range.
    pub plugin: Candidate,
    pub candidates: Vec<CandidateApe>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub h: usize,
    pub k_max: usize,
    pub chosen: Candidate,
    pub method: Method,
    pub audit: SelectionAudit,
}

fn argmin_by<T: Copy>(items: impl Iterator<Item = (T, f64)>) -> Option<(T, f64)> {
    // strict comparison keeps the first of tied values
    items.fold(None, |best, (c, v)| match best {
        Some((_, bv)) if !(v < bv) => best,
        _ => Some((c, v)),
    })
}

fn run_procedure(
    series: &Series,
    h: usize,
    k_max: usize,
    candidates: Vec<Candidate>,
    eligible: impl Fn(&Candidate, &Candidate) -> bool,
) -> Result<SelectionResult> {
    if h == 0 || k_max == 0 {
        return Err(Error::InvalidArgument("horizon and order must be at least 1".into()));
    }
    let lags: Vec<Vec<usize>> = candidates.iter().map(Candidate::lags).collect();
    let start_one = start_index(series, 1, k_max)?;
    let one_step = accumulate(series, 1, &lags, start_one, false)?;
    let (start_h, multi) = if h == 1 {
        (start_one, one_step.clone())
    } else {
        let m = start_index(series, h, k_max)?;
        (m, accumulate(series, h, &lags, m, false)?)
    };

    let d1: Vec<f64> = one_step.iter().map(|(_, d)| d.ape).collect();
    let dh: Vec<f64> = multi.iter().map(|(_, d)| d.ape).collect();
    let ph: Vec<f64> = multi.iter().map(|(p, _)| p.ape).collect();

    let (k_d1, _) = argmin_by(candidates.iter().copied().zip(d1.iter().copied())).expect("candidates");
    let (k_dh, ape_dh) = argmin_by(candidates.iter().copied().zip(dh.iter().copied())).expect("candidates");
    let elig: Vec<bool> = candidates.iter().map(|c| eligible(c, &k_d1)).collect();
    let (k_p, ape_p) = argmin_by(
        candidates
            .iter()
            .copied()
            .zip(ph.iter().copied())
            .zip(&elig)
            .filter(|(_, e)| **e)
            .map(|(cv, _)| cv),
    )
    .expect("the one-step winner is always eligible");

    let (chosen, method) = if ape_dh > ape_p {
        (k_p, Method::PlugIn)
    } else {
        (k_dh, Method::Direct)
    };

    let audit = SelectionAudit {
        start_one_step: start_one,
        start: start_h,
        one_step_direct: k_d1,
        direct: k_dh,
        plugin: k_p,
        candidates: candidates
            .iter()
            .enumerate()
            .map(|(i, c)| CandidateApe {
                candidate: *c,
                ape_direct_one_step: d1[i],
                ape_direct: dh[i],
                ape_plugin: ph[i],
                plugin_eligible: elig[i],
            })
            .collect(),
    };
    Ok(SelectionResult {
        h,
        k_max,
        chosen,
        method,
        audit,
    })
}

/// Order-and-method selection over dense orders `1..=K`.
pub fn select_predictor(series: &Series, h: usize, k_max: usize) -> Result<SelectionResult> {
    let candidates = (1..=k_max).map(Candidate::Order).collect();
    run_procedure(series, h, k_max, candidates, |c, d1| {
        c.order().unwrap_or(0) >= d1.order().unwrap_or(0)
    })
}

/// Mask-and-method selection over every nonempty subset of `1..=K`.
pub fn subset_select(series: &Series, h: usize, k_max: usize) -> Result<SelectionResult> {
    let candidates = SubsetMask::enumerate(k_max)?.into_iter().map(Candidate::Mask).collect();
    run_procedure(series, h, k_max, candidates, |c, d1| match (c, d1) {
        (Candidate::Mask(m), Candidate::Mask(w)) => w.is_subset_of(m),
        _ => false,
    })
}

/// `x_hat_{n+h}` from the selected candidate refitted on the whole series.
pub fn forecast(series: &Series, result: &SelectionResult) -> Result<f64> {
    let lags = result.chosen.lags();
    let coef = match result.method {
        Method::PlugIn => fit_plugin_lags(series, result.h, &lags)?,
        Method::Direct => fit_direct_lags(series, result.h, &lags)?,
    };
    Ok(predict_at(series, series.len(), &coef))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BicResult {
    pub h: usize,
    pub order: usize,
    pub penalty: f64,
    /// `BIC_{n,h}(k)` for `k = 1..=K`; `None` where the fit is singular.
    pub criteria: Vec<Option<f64>>,
}

/// `c_n = log n`.
pub fn default_bic_penalty(n: usize) -> f64 {
    (n as f64).ln()
}

/// Minimises `log sigma_hat^2(k) + k c_n / n`, where `sigma_hat^2(k)` is
/// `(1/n) sum_{i=k}^{n-h} (x_{i+h} - x_i(k)' a_check_n(h, k))^2`.
/// Ties go to the smaller order; singular candidates are skipped.
pub fn bic_order(series: &Series, h: usize, k_max: usize, penalty: f64) -> Result<BicResult> {
    if !(penalty > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalty must be positive, got {penalty}"
        )));
    }
    if h == 0 || k_max == 0 {
        return Err(Error::InvalidArgument("horizon and order must be at least 1".into()));
    }
    let n = series.len();
    let mut criteria = Vec::with_capacity(k_max);
    let mut first_err = None;
    for k in 1..=k_max {
        match fit_direct(series, h, k) {
            Ok(coef) => {
                let rss: f64 = (k..=n - h)
                    .map(|i| (series.x(i + h) - predict_at(series, i, &coef)).powi(2))
                    .sum();
                criteria.push(Some((rss / n as f64).ln() + k as f64 * penalty / n as f64));
            }
            Err(e @ Error::SingularMoment { .. }) => {
                first_err.get_or_insert(e);
                criteria.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let best = argmin_by(criteria.iter().enumerate().filter_map(|(i, c)| c.map(|v| (i + 1, v))));
    match best {
        Some((order, _)) => Ok(BicResult {
            h,
            order,
            penalty,
            criteria,
        }),
        None => Err(first_err.expect("all candidates singular")),
    }
}

/// Monte Carlo losses with their standard errors; `Infinite` for
/// candidates missing a required lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EstimatedLoss {
    Finite { mean: f64, std_error: f64 },
    Infinite,
}

impl EstimatedLoss {
    pub fn mean(&self) -> Option<f64> {
        match self {
            EstimatedLoss::Finite { mean, .. } => Some(*mean),
            EstimatedLoss::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetLoss {
    pub mask: SubsetMask,
    pub plug_in: EstimatedLoss,
    pub direct: EstimatedLoss,
}

/// Most parsimonious correct masks: nonzero one-step coefficients, and
/// nonzero coefficients of the h-step prediction model. `None` when a
/// required lag exceeds `K`.
pub fn minimal_correct_masks(
    model: &ArModel,
    h: usize,
    k_max: usize,
) -> Result<(Option<SubsetMask>, Option<SubsetMask>)> {
    let to_mask = |coef: &[f64]| {
        let lags: Vec<usize> = coef
            .iter()
            .enumerate()
            .filter(|(_, c)| c.abs() > TOL_ZERO)
            .map(|(i, _)| i + 1)
            .collect();
        SubsetMask::from_lags(&lags, k_max).ok()
    };
    let p_h = h_step_order(model, h)?;
    let table = model.autocovariances(h + p_h)?;
    let ad = optimal_direct_coeffs(&table, h, p_h)?;
    Ok((to_mask(model.coeffs()), to_mask(&ad)))
}

/// `lim n (MSPE - sigma_h^2)` for every mask and method, estimated by Monte
/// Carlo at sample size `cfg.n` (infinite where the mask is not a superset
/// of the minimal correct mask).
pub fn theoretical_subset_losses(model: &ArModel, h: usize, k_max: usize, cfg: &McConfig) -> Result<Vec<SubsetLoss>> {
    let masks = SubsetMask::enumerate(k_max)?;
    let (plug_min, direct_min) = minimal_correct_masks(model, h, k_max)?;
    let scale = cfg.n as f64;
    let estimate = |mask: &SubsetMask, method: Method, min: Option<SubsetMask>| -> Result<EstimatedLoss> {
        match min {
            Some(m) if m.is_subset_of(mask) => {
                let e = excess_mspe(model, h, &mask.lags(), method, Estimator::Conditional, cfg)?;
                Ok(EstimatedLoss::Finite {
                    mean: scale * e.mean,
                    std_error: scale * e.std_error,
                })
            }
            _ => Ok(EstimatedLoss::Infinite),
        }
    };
    masks
        .iter()
        .map(|mask| {
            Ok(SubsetLoss {
                mask: *mask,
                plug_in: estimate(mask, Method::PlugIn, plug_min)?,
                direct: estimate(mask, Method::Direct, direct_min)?,
            })
        })
        .collect()
}
