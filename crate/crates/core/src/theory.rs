//! Population quantities for a known stationary AR model.
//!
//! Everything here is exact up to floating point: MA weights, autocovariances,
//! the optimal h-step coefficients `a_D(h, k)`, the second-order MSPE constants
//! of the plug-in (`f1`) and direct (`f2`) predictors, and the loss table whose
//! minimisers a selection procedure should eventually hit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Method;
use crate::linalg::{self, from_row_major, to_row_major};

/// Coefficients with magnitude at or below this are treated as zero.
pub const TOL_ZERO: f64 = 1e-10;
/// Required margin between the companion spectral radius and one.
pub const TOL_STAT: f64 = 1e-9;
/// Relative tolerance for ties in [`optimal_set`].
pub const TOL_TIE: f64 = 1e-9;

const MA_TAIL: f64 = 1e-14;
const MA_CAP: usize = 10_000;

/// A stationary AR(p1) data-generating model with innovation variance `sigma2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    coeffs: Vec<f64>,
    sigma2: f64,
}

impl ArModel {
    pub fn new(coeffs: Vec<f64>, sigma2: f64) -> Result<Self> {
        let last = *coeffs.last().ok_or(Error::EmptyCoefficients)?;
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("coefficients"));
        }
        if last == 0.0 {
            return Err(Error::ZeroLeadCoefficient);
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::NonPositiveVariance(sigma2));
        }
        let rho = spectral_radius(&coeffs);
        if !(rho < 1.0 - TOL_STAT) {
            return Err(Error::NonStationary { spectral_radius: rho });
        }
        Ok(Self { coeffs, sigma2 })
    }

    /// AR(2) with `a1 = sqrt(-a2)`, so that `b2 = a1^2 + a2 = 0` and the
    /// three-step prediction model has order one.
    pub fn vanishing_b2(a2: f64) -> Result<Self> {
        if !(a2 > -1.0 && a2 < 0.0) {
            return Err(Error::OutOfDomain {
                value: a2,
                domain: "(-1, 0)",
            });
        }
        Self::new(vec![(-a2).sqrt(), a2], 1.0)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// The exact order p1.
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn ma_coefficients(&self, len: usize) -> MaCoefficients {
        let mut b = Vec::with_capacity(len + 1);
        b.push(1.0);
        for i in 1..=len {
            let v: f64 = (1..=i.min(self.order())).map(|j| self.coeffs[j - 1] * b[i - j]).sum();
            b.push(v);
        }
        MaCoefficients { b }
    }

    /// Smallest truncation `L` after which `p1` consecutive MA weights are all
    /// below `1e-14`, capped at `1e4`.
    ///
    /// A single small weight is not enough: `b_2` vanishes exactly for the
    /// `a1^2 + a2 = 0` family while later weights do not.
    pub fn default_truncation(&self) -> usize {
        let p = self.order();
        let b = self.ma_coefficients(MA_CAP + p);
        let mut run = 0;
        for (i, v) in b.as_slice().iter().enumerate() {
            if v.abs() < MA_TAIL {
                run += 1;
                if run == p {
                    return (i + 1 - p).min(MA_CAP);
                }
            } else {
                run = 0;
            }
        }
        MA_CAP
    }

    /// Autocovariances up to `max_lag`, from the Yule-Walker system for
    /// `gamma_0..gamma_p1` extended by the AR recursion.
    pub fn autocovariances(&self, max_lag: usize) -> Result<AutocovarianceTable> {
        let p = self.order();
        let dim = p + 1;
        let mut m = vec![0.0; dim * dim];
        for j in 0..dim {
            m[j * dim + j] += 1.0;
            for i in 1..=p {
                let lag = (j as isize - i as isize).unsigned_abs();
                m[j * dim + lag] -= self.coeffs[i - 1];
            }
        }
        let mut rhs = vec![0.0; dim];
        rhs[0] = self.sigma2;
        let mut gamma = linalg::solve_general(&m, dim, &rhs).map_err(|_| Error::SingularYuleWalker)?;
        for j in dim..=max_lag {
            let v: f64 = (1..=p).map(|i| self.coeffs[i - 1] * gamma[j - i]).sum();
            gamma.push(v);
        }
        gamma.truncate(max_lag + 1);
        Ok(AutocovarianceTable { gamma })
    }
}

/// MA(inf) weights `b_0 = 1, b_1, ..., b_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaCoefficients {
    b: Vec<f64>,
}

impl MaCoefficients {
    pub fn as_slice(&self) -> &[f64] {
        &self.b
    }

    pub fn truncation(&self) -> usize {
        self.b.len() - 1
    }

    /// `b_i`, with `b_i = 0` for negative `i` or beyond the truncation.
    pub fn get(&self, i: isize) -> f64 {
        if i < 0 {
            0.0
        } else {
            self.b.get(i as usize).copied().unwrap_or(0.0)
        }
    }
}

/// `gamma_0..gamma_M` of a stationary process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocovarianceTable {
    gamma: Vec<f64>,
}

impl AutocovarianceTable {
    pub fn from_values(gamma: Vec<f64>) -> Self {
        Self { gamma }
    }

    pub fn max_lag(&self) -> usize {
        self.gamma.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    /// `gamma_j`, using `gamma_{-j} = gamma_j`.
    pub fn get(&self, lag: isize) -> Result<f64> {
        let j = lag.unsigned_abs();
        self.gamma.get(j).copied().ok_or(Error::InsufficientLags {
            needed: j,
            available: self.max_lag(),
        })
    }
}

/// Toeplitz matrix `Gamma(k)` with entries `gamma_{|r-s|}`.
pub fn gamma_matrix(table: &AutocovarianceTable, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    if k - 1 > table.max_lag() {
        return Err(Error::InsufficientLags {
            needed: k - 1,
            available: table.max_lag(),
        });
    }
    let g = table.as_slice();
    Ok(DMatrix::from_fn(k, k, |r, s| g[r.abs_diff(s)]))
}

/// Companion matrix in row form: first row `coeffs`, shifted identity below.
/// The first row of its `h`-th power is `a_D(h, k)` for a correctly specified `k`.
pub fn companion_matrix(coeffs: &[f64]) -> DMatrix<f64> {
    let k = coeffs.len();
    DMatrix::from_fn(k, k, |r, c| {
        if r == 0 {
            coeffs[c]
        } else if c + 1 == r {
            1.0
        } else {
            0.0
        }
    })
}

/// Transpose of [`companion_matrix`]: coefficients in the first column,
/// `I_{k-1}` above a zero row in the remaining columns. Powers of this matrix
/// applied to the one-step coefficients give the iterated h-step coefficients.
pub fn propagation_matrix(coeffs: &[f64]) -> DMatrix<f64> {
    companion_matrix(coeffs).transpose()
}

pub fn spectral_radius(coeffs: &[f64]) -> f64 {
    if coeffs.len() == 1 {
        return coeffs[0].abs();
    }
    companion_matrix(coeffs)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = m.nrows();
    linalg::inverse_symmetric(&to_row_major(m), k)
        .map(|inv| from_row_major(&inv, k))
        .map_err(|_| Error::SingularGamma { k })
}

/// `a_D(h, k) = Gamma(k)^{-1} (gamma_h, ..., gamma_{h+k-1})'`.
pub fn optimal_direct_coeffs(table: &AutocovarianceTable, h: usize, k: usize) -> Result<Vec<f64>> {
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if h + k - 1 > table.max_lag() {
        return Err(Error::InsufficientLags {
            needed: h + k - 1,
            available: table.max_lag(),
        });
    }
    let gam = gamma_matrix(table, k)?;
    let rhs: Vec<f64> = (0..k).map(|i| table.as_slice()[h + i]).collect();
    linalg::solve_symmetric(&to_row_major(&gam), k, &rhs).map_err(|_| Error::SingularGamma { k })
}

/// `sigma_h^2 = sigma^2 * sum_{j<h} b_j^2`.
pub fn sigma_h2(model: &ArModel, h: usize) -> f64 {
    let b = model.ma_coefficients(h.saturating_sub(1));
    model.sigma2() * b.as_slice().iter().take(h).map(|v| v * v).sum::<f64>()
}

/// Number of leading entries of `a_D(h, p1)` left after stripping trailing
/// near-zeros.
pub fn h_step_order(model: &ArModel, h: usize) -> Result<usize> {
    let p = model.order();
    let table = model.autocovariances(h + p)?;
    let ad = optimal_direct_coeffs(&table, h, p)?;
    match ad.iter().rposition(|v| v.abs() > TOL_ZERO) {
        Some(pos) => Ok(pos + 1),
        None => Err(Error::DegenerateHorizon { h }),
    }
}

/// Per-horizon population quantities for orders `1..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HStepTheory {
    pub h: usize,
    pub k_max: usize,
    /// `a_D(h, k)` for `k = 1..=k_max`, index `k - 1`.
    pub a_direct: Vec<Vec<f64>>,
    pub p_h: usize,
    pub sigma_h2: f64,
    pub ma: MaCoefficients,
}

impl HStepTheory {
    pub fn new(model: &ArModel, h: usize, k_max: usize) -> Result<Self> {
        if h == 0 || k_max == 0 {
            return Err(Error::InvalidArgument("horizon and order must be at least 1".into()));
        }
        let table = model.autocovariances(h + k_max.max(model.order()))?;
        let a_direct = (1..=k_max)
            .map(|k| optimal_direct_coeffs(&table, h, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            h,
            k_max,
            a_direct,
            p_h: h_step_order(model, h)?,
            sigma_h2: sigma_h2(model, h),
            ma: model.ma_coefficients(h.saturating_sub(1)),
        })
    }
}

struct Moments {
    table: AutocovarianceTable,
    ma: MaCoefficients,
}

impl Moments {
    fn new(model: &ArModel, h: usize, k: usize) -> Result<Self> {
        Ok(Self {
            table: model.autocovariances(h + k + model.order())?,
            ma: model.ma_coefficients(h),
        })
    }

    /// `L_h(k) = sum_{j<h} b_j A^{h-1-j}(k)` with `A(k)` the propagation
    /// matrix of `a_D(1, k)`.
    fn l_matrix(&self, h: usize, k: usize) -> Result<DMatrix<f64>> {
        let a1 = optimal_direct_coeffs(&self.table, 1, k)?;
        let prop = propagation_matrix(&a1);
        let mut power = DMatrix::identity(k, k);
        let mut l = DMatrix::zeros(k, k);
        for j in (0..h).rev() {
            l += &power * self.ma.get(j as isize);
            power = &power * &prop;
        }
        Ok(l)
    }
}

fn require_order(k: usize, min: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    if k < min {
        return Err(Error::UnderspecifiedOrder { k, min });
    }
    Ok(())
}

/// Plug-in MSPE constant `tr(Gamma L_h Gamma^{-1} L_h') sigma^2`, for `k >= p1`.
pub fn f1(model: &ArModel, h: usize, k: usize) -> Result<f64> {
    require_order(k, model.order())?;
    let mom = Moments::new(model, h, k)?;
    let gam = gamma_matrix(&mom.table, k)?;
    let ginv = inverse(&gam)?;
    let l = mom.l_matrix(h, k)?;
    let prod = &gam * &l * &ginv * l.transpose();
    Ok(prod.trace() * model.sigma2())
}

/// Direct MSPE constant `tr(Gamma^{-1} cov(sum_j b_j x_j(k))) sigma^2`, for `k >= p_h`.
pub fn f2(model: &ArModel, h: usize, k: usize) -> Result<f64> {
    require_order(k, h_step_order(model, h)?)?;
    let mom = Moments::new(model, h, k)?;
    let ginv = inverse(&gamma_matrix(&mom.table, k)?)?;
    let cov = lagged_sum_covariance(&mom, h, k)?;
    Ok((ginv * cov).trace() * model.sigma2())
}

/// `cov(sum_{j<h} b_j x_j(k))`, entry `(r, s) = sum_{j,l} b_j b_l gamma_{j-l-r+s}`.
fn lagged_sum_covariance(mom: &Moments, h: usize, k: usize) -> Result<DMatrix<f64>> {
    let mut cov = DMatrix::zeros(k, k);
    for r in 0..k {
        for s in 0..k {
            let mut v = 0.0;
            for j in 0..h {
                for l in 0..h {
                    let lag = j as isize - l as isize - r as isize + s as isize;
                    v += mom.ma.get(j as isize) * mom.ma.get(l as isize) * mom.table.get(lag)?;
                }
            }
            cov[(r, s)] = v;
        }
    }
    Ok(cov)
}

/// `e_k' L_h(k) Gamma^{-1}(k) L_h'(k) e_k sigma^4`, the amount by which the
/// direct/plug-in gap grows from horizon `h` to `h + 1`.
pub fn gap_increment(model: &ArModel, h: usize, k: usize) -> Result<f64> {
    require_order(k, model.order())?;
    let mom = Moments::new(model, h, k)?;
    let ginv = inverse(&gamma_matrix(&mom.table, k)?)?;
    let l = mom.l_matrix(h, k)?;
    let row = l.row(0).transpose();
    Ok((row.transpose() * ginv * &row)[(0, 0)] * model.sigma2() * model.sigma2())
}

/// True when `b_{h-1} != 0` or the cross-product vector `1*` is nonzero; either
/// guarantees `f1(h, k + 1) > f1(h, k)`.
pub fn monotonicity_condition(model: &ArModel, h: usize, k: usize) -> bool {
    let b = model.ma_coefficients(h);
    if b.get(h as isize - 1).abs() > TOL_ZERO {
        return true;
    }
    (0..=k).any(|offset| {
        let s: f64 = (0..h)
            .map(|i| b.get(h as isize - 1 - offset as isize - i as isize) * b.get(i as isize))
            .sum();
        s.abs() > TOL_ZERO
    })
}

/// `f2(3, 1) / f1(3, 2)` in closed form for the `a1^2 + a2 = 0` family.
pub fn g_ratio(a2: f64) -> Result<f64> {
    if !(a2 > -1.0 && a2 < 0.0) {
        return Err(Error::OutOfDomain {
            value: a2,
            domain: "(-1, 0)",
        });
    }
    let num = 1.0 - 4.0 * a2 + a2 * a2;
    let den = -4.0 * a2 + 2.0 * a2.powi(2) - 2.0 * a2.powi(3) + 4.0 * a2.powi(4);
    Ok(num / den)
}

/// The unique `a2` in `(-1, 0)` with `g_ratio(a2) = 1`, by bisection.
pub fn g_ratio_crossover() -> f64 {
    // g < 1 to the left of the root, g > 1 to the right.
    let (mut lo, mut hi) = (-1.0 + 1e-12, -1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g_ratio(mid).expect("inside domain") < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A limiting loss, infinite for underspecified candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Loss {
    Finite(f64),
    /// Serialises as `null`.
    Infinite,
}

impl Loss {
    pub fn value(&self) -> Option<f64> {
        match self {
            Loss::Finite(v) => Some(*v),
            Loss::Infinite => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Loss::Finite(_))
    }
}

impl PartialOrd for Loss {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        match (self, other) {
            (Loss::Finite(a), Loss::Finite(b)) => a.partial_cmp(b),
            (Loss::Finite(_), Loss::Infinite) => Some(Less),
            (Loss::Infinite, Loss::Finite(_)) => Some(Greater),
            (Loss::Infinite, Loss::Infinite) => Some(Equal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossTable {
    pub h: usize,
    pub k_max: usize,
    /// Plug-in losses, index `k - 1`.
    pub plug_in: Vec<Loss>,
    /// Direct losses, index `k - 1`.
    pub direct: Vec<Loss>,
}

impl LossTable {
    pub fn get(&self, k: usize, method: Method) -> Loss {
        match method {
            Method::PlugIn => self.plug_in[k - 1],
            Method::Direct => self.direct[k - 1],
        }
    }
}

pub fn loss_table(model: &ArModel, h: usize, k_max: usize) -> Result<LossTable> {
    if k_max < model.order() {
        return Err(Error::UnderspecifiedOrder {
            k: k_max,
            min: model.order(),
        });
    }
    let p_h = h_step_order(model, h)?;
    let mut plug_in = Vec::with_capacity(k_max);
    let mut direct = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        plug_in.push(if k >= model.order() {
            Loss::Finite(f1(model, h, k)?)
        } else {
            Loss::Infinite
        });
        direct.push(if k >= p_h {
            Loss::Finite(f2(model, h, k)?)
        } else {
            Loss::Infinite
        });
    }
    Ok(LossTable {
        h,
        k_max,
        plug_in,
        direct,
    })
}

/// All `(k, method)` pairs attaining the minimal loss within [`TOL_TIE`],
/// ordered by `k` then method.
pub fn optimal_set(table: &LossTable) -> Vec<(usize, Method)> {
    let min = table
        .plug_in
        .iter()
        .chain(&table.direct)
        .filter_map(Loss::value)
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Vec::new();
    }
    let bound = min + TOL_TIE * min.abs();
    let mut out = Vec::new();
    for k in 1..=table.k_max {
        for method in [Method::PlugIn, Method::Direct] {
            if matches!(table.get(k, method), Loss::Finite(v) if v <= bound) {
                out.push((k, method));
            }
        }
    }
    out
}

/// Linear growth rate of the APE excess for an underfitted candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnderfitDrift {
    pub value: f64,
    /// False when the order is large enough that the drift vanishes.
    pub underfit: bool,
}

fn padded(v: &[f64], len: usize) -> DVector<f64> {
    DVector::from_fn(len, |i, _| v.get(i).copied().unwrap_or(0.0))
}

fn quad_form(d: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (d.transpose() * m * d)[(0, 0)]
}

pub fn underfit_ape_drift(model: &ArModel, h: usize, k: usize, method: Method) -> Result<UnderfitDrift> {
    if k == 0 || h == 0 {
        return Err(Error::InvalidArgument("horizon and order must be at least 1".into()));
    }
    let p1 = model.order();
    let threshold = match method {
        Method::PlugIn => p1,
        Method::Direct => h_step_order(model, h)?,
    };
    if k >= threshold {
        return Ok(UnderfitDrift {
            value: 0.0,
            underfit: false,
        });
    }
    let table = model.autocovariances(h + p1 + 1)?;
    let ad_k = optimal_direct_coeffs(&table, h, k)?;
    let value = match method {
        Method::PlugIn => {
            let ad_p = optimal_direct_coeffs(&table, h, p1)?;
            let d1 = DVector::from_vec(ad_p) - padded(&ad_k, p1);
            let a1 = optimal_direct_coeffs(&table, 1, k)?;
            let mut iterated = DVector::from_vec(a1);
            let prop = propagation_matrix(iterated.as_slice());
            for _ in 1..h {
                iterated = &prop * iterated;
            }
            let d2 = iterated - DVector::from_vec(ad_k);
            quad_form(&d1, &gamma_matrix(&table, p1)?) + quad_form(&d2, &gamma_matrix(&table, k)?)
        }
        Method::Direct => {
            let ad_ph = optimal_direct_coeffs(&table, h, threshold)?;
            let d = DVector::from_vec(ad_ph) - padded(&ad_k, threshold);
            quad_form(&d, &gamma_matrix(&table, threshold)?)
        }
    };
    Ok(UnderfitDrift { value, underfit: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m17() -> ArModel {
        ArModel::new(vec![0.9, -0.81], 1.0).unwrap()
    }

    #[test]
    fn model_validation() {
        assert_eq!(m17().order(), 2);
        assert_eq!(ArModel::new(vec![0.5, 0.0], 1.0), Err(Error::ZeroLeadCoefficient));
        assert!(matches!(ArModel::new(vec![1.0], 1.0), Err(Error::NonStationary { .. })));
        assert!(matches!(
            ArModel::new(vec![0.5], 0.0),
            Err(Error::NonPositiveVariance(_))
        ));
        assert_eq!(ArModel::new(vec![], 1.0), Err(Error::EmptyCoefficients));
        // roots inside the unit circle via a large second coefficient
        assert!(ArModel::new(vec![0.2, 1.1], 1.0).is_err());
    }

    #[test]
    fn ma_weights() {
        let b = m17().ma_coefficients(2);
        assert_eq!(b.as_slice()[0], 1.0);
        assert_abs_diff_eq!(b.as_slice()[1], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(b.as_slice()[2], 0.0, epsilon = 1e-15);
        let ar1 = ArModel::new(vec![0.7], 1.0).unwrap().ma_coefficients(6);
        for (i, v) in ar1.as_slice().iter().enumerate() {
            assert_abs_diff_eq!(*v, 0.7_f64.powi(i as i32), epsilon = 1e-14);
        }
        assert_eq!(m17().ma_coefficients(0).as_slice(), &[1.0]);
    }

    #[test]
    fn truncation_skips_isolated_zero_weight() {
        let l = m17().default_truncation();
        assert!(l > 2);
        let b = m17().ma_coefficients(l);
        assert!(b.get(l as isize).abs() < MA_TAIL);
        assert!(b.get(l as isize).abs() < b.get(0).abs());
    }

    #[test]
    fn ar1_autocovariances() {
        let t = ArModel::new(vec![0.5], 1.0).unwrap().autocovariances(3).unwrap();
        assert_abs_diff_eq!(t.get(0).unwrap(), 4.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t.get(1).unwrap(), 2.0 / 3.0, epsilon = 1e-14);
        assert_eq!(t.get(-2).unwrap(), t.get(2).unwrap());
        let g = gamma_matrix(&t, 2).unwrap();
        assert_abs_diff_eq!(g[(0, 1)], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[(1, 1)], 4.0 / 3.0, epsilon = 1e-14);
        assert!(matches!(gamma_matrix(&t, 6), Err(Error::InsufficientLags { .. })));
    }

    #[test]
    fn autocovariances_match_ma_sum() {
        let model = m17();
        let t = model.autocovariances(10).unwrap();
        let b = model.ma_coefficients(200);
        let b = b.as_slice();
        for j in 0..=10 {
            let oracle: f64 = (0..b.len() - j).map(|i| b[i] * b[i + j]).sum::<f64>() * model.sigma2();
            assert_abs_diff_eq!(t.get(j as isize).unwrap(), oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn companion_layout() {
        let c = companion_matrix(&[0.9, -0.81]);
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[0.9, -0.81, 1.0, 0.0]));
        assert_eq!(companion_matrix(&[0.3]), DMatrix::from_element(1, 1, 0.3));
    }

    #[test]
    fn direct_coefficients() {
        let model = m17();
        let t = model.autocovariances(10).unwrap();
        let a1 = optimal_direct_coeffs(&t, 1, 2).unwrap();
        assert_abs_diff_eq!(a1[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(a1[1], -0.81, epsilon = 1e-12);
        let a3 = optimal_direct_coeffs(&t, 3, 2).unwrap();
        assert!(a3[1].abs() < TOL_ZERO);
        let c2 = companion_matrix(model.coeffs()).pow(2);
        let a2 = optimal_direct_coeffs(&t, 2, 2).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(a2[i], c2[(0, i)], epsilon = 1e-12);
        }
    }

    #[test]
    fn h_step_orders() {
        assert_eq!(h_step_order(&m17(), 3).unwrap(), 1);
        assert_eq!(h_step_order(&m17(), 1).unwrap(), 2);
        let zero_a1 = ArModel::new(vec![0.0, 0.5], 1.0).unwrap();
        assert_eq!(h_step_order(&zero_a1, 2).unwrap(), 1);
    }

    #[test]
    fn f_constants_at_horizon_one() {
        let model = ArModel::new(vec![0.3, -0.2], 2.0).unwrap();
        for k in 2..6 {
            assert_abs_diff_eq!(f1(&model, 1, k).unwrap(), k as f64 * 2.0, epsilon = 1e-10);
            assert_abs_diff_eq!(f2(&model, 1, k).unwrap(), k as f64 * 2.0, epsilon = 1e-10);
        }
        assert_eq!(f1(&model, 2, 1), Err(Error::UnderspecifiedOrder { k: 1, min: 2 }));
    }

    #[test]
    fn f_constants_at_horizon_two() {
        let model = ArModel::new(vec![0.4, 0.3, -0.2], 1.5).unwrap();
        let a1 = 0.4_f64;
        for k in 3..7 {
            let kf = k as f64;
            let ak = if k == 3 { -0.2 } else { 0.0 };
            assert_abs_diff_eq!(
                f2(&model, 2, k).unwrap(),
                (kf + (kf + 2.0) * a1 * a1) * 1.5,
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(
                f1(&model, 2, k).unwrap(),
                ((kf + 2.0) * a1 * a1 + kf - 1.0 + ak * ak) * 1.5,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn f2_three_step_order_one() {
        let a2 = -0.81;
        let expect = (1.0 - 4.0 * a2 + a2 * a2) / (1.0 - a2);
        assert_abs_diff_eq!(f2(&m17(), 3, 1).unwrap(), expect, epsilon = 1e-10);
    }

    #[test]
    fn g_ratio_values() {
        assert_abs_diff_eq!(g_ratio(-0.81).unwrap(), 0.667, epsilon = 5e-4);
        assert_abs_diff_eq!(g_ratio(-0.25).unwrap(), 1.76, epsilon = 5e-4);
        assert!(g_ratio(0.1).is_err());
        let generic = f2(&m17(), 3, 1).unwrap() / f1(&m17(), 3, 2).unwrap();
        assert_abs_diff_eq!(g_ratio(-0.81).unwrap(), generic, epsilon = 1e-10);
        assert_abs_diff_eq!(g_ratio_crossover(), -0.54977, epsilon = 1e-4);
    }

    #[test]
    fn monotonicity_condition_cases() {
        assert!(monotonicity_condition(&m17(), 1, 2));
        assert!(monotonicity_condition(&m17(), 3, 2));
        for h in 1..=5 {
            assert!(monotonicity_condition(&m17(), h, 3));
        }
    }

    #[test]
    fn loss_tables_and_optima() {
        let t1 = loss_table(&m17(), 1, 4).unwrap();
        assert_eq!(t1.plug_in[0], Loss::Infinite);
        assert_eq!(optimal_set(&t1), vec![(2, Method::PlugIn), (2, Method::Direct)]);

        let t3 = loss_table(&m17(), 3, 4).unwrap();
        assert_eq!(t3.direct[0].value().map(|v| v > 0.0), Some(true));
        assert_eq!(optimal_set(&t3), vec![(1, Method::Direct)]);

        let m20 = ArModel::new(vec![0.5, -0.25], 1.0).unwrap();
        assert_eq!(optimal_set(&loss_table(&m20, 3, 4).unwrap()), vec![(2, Method::PlugIn)]);
        let m19 = ArModel::new(vec![0.6, -0.36], 1.0).unwrap();
        assert_eq!(optimal_set(&loss_table(&m19, 3, 4).unwrap()), vec![(2, Method::PlugIn)]);

        let tie = ArModel::vanishing_b2(g_ratio_crossover()).unwrap();
        assert_eq!(
            optimal_set(&loss_table(&tie, 3, 4).unwrap()),
            vec![(1, Method::Direct), (2, Method::PlugIn)]
        );
    }

    #[test]
    fn loss_ordering() {
        assert!(Loss::Finite(1e300) < Loss::Infinite);
        assert!(Loss::Finite(1.0) < Loss::Finite(2.0));
        assert_eq!(serde_json::to_string(&Loss::Infinite).unwrap(), "null");
    }

    #[test]
    fn underfit_drift() {
        let d = underfit_ape_drift(&m17(), 1, 2, Method::PlugIn).unwrap();
        assert_eq!(
            d,
            UnderfitDrift {
                value: 0.0,
                underfit: false
            }
        );

        // oracle: (a_D(1,2) - (a_D(1,1), 0))' Gamma(2) (...), second term vanishes at h = 1
        let model = m17();
        let t = model.autocovariances(4).unwrap();
        let g = gamma_matrix(&t, 2).unwrap();
        let r1 = t.get(1).unwrap() / t.get(0).unwrap();
        let d = [0.9 - r1, -0.81];
        let oracle: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| d[i] * g[(i, j)] * d[j])
            .sum();
        let got = underfit_ape_drift(&model, 1, 1, Method::PlugIn).unwrap();
        assert!(got.underfit);
        assert_abs_diff_eq!(got.value, oracle, epsilon = 1e-12);
        assert!(got.value > 0.0);

        assert!(underfit_ape_drift(&model, 3, 0, Method::Direct).is_err());
        assert!(!underfit_ape_drift(&model, 3, 1, Method::Direct).unwrap().underfit);
        assert!(underfit_ape_drift(&model, 3, 1, Method::PlugIn).unwrap().value > 0.0);
    }
}
