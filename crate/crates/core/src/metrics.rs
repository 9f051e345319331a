//! Lift, AUC, maximum profit (MP) and expected maximum profit (EMP).
//!
//! Profit of targeting the `k` highest-scored customers is linear in the
//! acceptance probability `gamma`, so MP is a maximum over lines and EMP is
//! the integral of their upper envelope against the Beta density, evaluated
//! in closed form with the regularized incomplete beta function.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use libm::ceil;

use crate::error::bail;
use crate::special::beta_inc;
use crate::Result;

/// Lift fractions reported by default (0.5% and 5%).
pub const LIFT_FRACTIONS: [f64; 2] = [0.005, 0.05];

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        bail!(Alignment, "{} scores for {} labels", scores.len(), labels.len());
    }
    if scores.iter().any(|s| s.is_nan()) {
        bail!(Argument, "scores contain NaN");
    }
    Ok(())
}

/// Indices by descending score, ties by ascending index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Churn rate among the top `ceil(f * n)` scores over the overall churn rate.
pub fn lift(scores: &[f64], labels: &[bool], fraction: f64) -> Result<f64> {
    check(scores, labels)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!(Argument, "lift fraction must lie in (0, 1], got {fraction}");
    }
    let n = labels.len();
    let churners = labels.iter().filter(|&&l| l).count();
    if churners == 0 {
        bail!(Metric, "lift is undefined without churners");
    }
    let k = (ceil(fraction * n as f64 - 1e-9) as usize).clamp(1, n);
    let hits = ranking(scores)[..k].iter().filter(|&&i| labels[i]).count();
    Ok((hits as f64 / k as f64) / (churners as f64 / n as f64))
}

/// Area under the ROC curve via average ranks (ties count one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        bail!(Metric, "AUC needs both classes");
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&t| labels[t]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Campaign parameters of the profit measures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmpParams {
    /// Average customer lifetime value.
    pub clv: f64,
    /// Incentive cost as a fraction of CLV.
    pub delta: f64,
    /// Contact cost as a fraction of CLV.
    pub phi: f64,
    /// Beta(a, b) distribution of the acceptance probability.
    pub a: f64,
    pub b: f64,
}

impl Default for EmpParams {
    fn default() -> Self {
        EmpParams { clv: 200.0, delta: 10.0 / 200.0, phi: 1.0 / 200.0, a: 6.0, b: 14.0 }
    }
}

impl EmpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clv > 0.0 && self.clv.is_finite()) {
            bail!(Config, "CLV must be positive, got {}", self.clv);
        }
        if !(0.0..=1.0).contains(&self.delta) || !(0.0..=1.0).contains(&self.phi) {
            bail!(Config, "delta and phi must lie in [0, 1]");
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            bail!(Config, "Beta shape parameters must be positive");
        }
        Ok(())
    }
}

impl fmt::Display for EmpParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "clv={};delta={};phi={};a={};b={}", self.clv, self.delta, self.phi, self.a, self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfitResult {
    pub value: f64,
    /// Targeted fraction at the optimum (expected fraction for EMP).
    pub eta: f64,
}

/// `profit = slope * gamma + intercept` when targeting `targeted` customers.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Line {
    slope: f64,
    intercept: f64,
    eta: f64,
}

impl Line {
    fn at(&self, gamma: f64) -> f64 {
        self.slope * gamma + self.intercept
    }
}

/// One line per distinct-score cut-off, plus the empty campaign first.
fn profit_lines(scores: &[f64], labels: &[bool], p: &EmpParams) -> Vec<Line> {
    let n = labels.len() as f64;
    let order = ranking(scores);
    let mut lines = Vec::with_capacity(order.len() + 1);
    lines.push(Line { slope: 0.0, intercept: 0.0, eta: 0.0 });
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        // CLV (g(1-d)-f) pi0 F0 - CLV (d+f) pi1 F1 with pi0 F0 = tp/n, pi1 F1 = fp/n.
        lines.push(Line {
            slope: p.clv * (1.0 - p.delta) * tp / n,
            intercept: -p.clv * (p.phi * tp + (p.delta + p.phi) * fp) / n,
            eta: (tp + fp) / n,
        });
    }
    lines
}

/// Maximum profit at a fixed acceptance probability `gamma`.
pub fn mp(scores: &[f64], labels: &[bool], params: &EmpParams, gamma: f64) -> Result<ProfitResult> {
    check(scores, labels)?;
    params.validate()?;
    if !(0.0..=1.0).contains(&gamma) {
        bail!(Argument, "gamma must lie in [0, 1], got {gamma}");
    }
    if labels.is_empty() {
        return Ok(ProfitResult { value: 0.0, eta: 0.0 });
    }
    let mut best = ProfitResult { value: 0.0, eta: 0.0 };
    for l in profit_lines(scores, labels, params) {
        let v = l.at(gamma);
        if v > best.value {
            best = ProfitResult { value: v, eta: l.eta };
        }
    }
    Ok(best)
}

/// Expected maximum profit over `gamma ~ Beta(a, b)`.
pub fn emp(scores: &[f64], labels: &[bool], params: &EmpParams) -> Result<ProfitResult> {
    check(scores, labels)?;
    params.validate()?;
    if labels.is_empty() {
        return Ok(ProfitResult { value: 0.0, eta: 0.0 });
    }
    let hull = upper_envelope(profit_lines(scores, labels, params));
    let (a, b) = (params.a, params.b);
    let mean = a / (a + b);
    let mass = |lo: f64, hi: f64| beta_inc(a, b, hi) - beta_inc(a, b, lo);
    // E[gamma; lo < gamma < hi] = mean * (I_hi(a+1, b) - I_lo(a+1, b)).
    let first_moment = |lo: f64, hi: f64| mean * (beta_inc(a + 1.0, b, hi) - beta_inc(a + 1.0, b, lo));

    let mut value = 0.0;
    let mut eta = 0.0;
    let mut lo = 0.0;
    for (k, line) in hull.iter().enumerate() {
        let hi = match hull.get(k + 1) {
            Some(next) => cross(line, next).clamp(0.0, 1.0),
            None => 1.0,
        };
        if hi > lo {
            let m = mass(lo, hi);
            value += line.slope * first_moment(lo, hi) + line.intercept * m;
            eta += line.eta * m;
            lo = hi;
        }
    }
    Ok(ProfitResult { value: value.max(0.0), eta })
}

fn cross(l: &Line, r: &Line) -> f64 {
    (l.intercept - r.intercept) / (r.slope - l.slope)
}

/// Upper envelope of lines given in non-decreasing slope order, left to right.
fn upper_envelope(lines: Vec<Line>) -> Vec<Line> {
    let mut hull: Vec<Line> = Vec::with_capacity(lines.len());
    for l in lines {
        if let Some(last) = hull.last() {
            if l.slope == last.slope {
                if l.intercept <= last.intercept {
                    continue;
                }
                hull.pop();
            }
        }
        while hull.len() >= 2 {
            let (p, q) = (&hull[hull.len() - 2], &hull[hull.len() - 1]);
            if cross(p, &l) <= cross(p, q) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(l);
    }
    hull
}
