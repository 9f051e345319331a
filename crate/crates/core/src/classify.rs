//! Non-relational classification: L2-penalised logistic regression fitted by
//! Newton-Raphson (IRLS), minority oversampling and the classifier traits.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log1p, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::bail;
use crate::features::FeatureTable;
use crate::Result;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + log1p(exp(-z.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Stop once no standardised coefficient moves by more than this.
    pub tolerance: f64,
    /// Ridge penalty on the non-intercept coefficients, on the original
    /// feature scale.
    pub l2: f64,
    /// Standardised coefficients are clipped to `[-bound, bound]`.
    pub coefficient_bound: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions { max_iter: 100, tolerance: 1e-10, l2: 1e-4, coefficient_bound: 50.0 }
    }
}

/// Result of a dense fit; coefficients are on the original feature scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Columns with zero variance; their coefficient is 0.
    pub constant: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

/// Fits `P(y=1|x) = sigmoid(b0 + x.b)` on row-major `x` (`n` rows, `p` columns).
///
/// Features are standardised internally; the objective is the mean negative
/// log-likelihood plus `l2/2 * |b|^2` on the original scale, so nearly
/// constant columns are held near zero.
pub fn fit_logistic_dense(x: &[f64], p: usize, y: &[bool], opts: &LogisticOptions) -> Result<LogisticFit> {
    let n = y.len();
    if x.len() != n * p {
        bail!(Alignment, "{} feature values for {n} rows x {p} columns", x.len());
    }
    if n < 2 {
        bail!(Fitting, "need at least two rows, got {n}");
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == n {
        bail!(Fitting, "labels contain a single class");
    }
    if !(opts.l2 >= 0.0) || !(opts.tolerance > 0.0) {
        bail!(Config, "invalid logistic options");
    }

    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for r in 0..n {
        for c in 0..p {
            mean[c] += x[r * p + c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for r in 0..n {
        for c in 0..p {
            let d = x[r * p + c] - mean[c];
            sd[c] += d * d;
        }
    }
    sd.iter_mut().for_each(|s| *s = sqrt(*s / n as f64));
    let active: Vec<usize> = (0..p).filter(|&c| sd[c] > 1e-12 * (1.0 + mean[c].abs())).collect();
    let constant: Vec<usize> = (0..p).filter(|c| !active.contains(c)).collect();

    // Design matrix with a leading intercept column.
    let q = active.len() + 1;
    let mut z = vec![0.0; n * q];
    for r in 0..n {
        z[r * q] = 1.0;
        for (k, &c) in active.iter().enumerate() {
            z[r * q + k + 1] = (x[r * p + c] - mean[c]) / sd[c];
        }
    }
    let yv: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    // Penalty weight per standardised coefficient, `l2 / sd^2`.
    let mut pw = vec![0.0; q];
    for (k, &c) in active.iter().enumerate() {
        pw[k + 1] = opts.l2 / (sd[c] * sd[c]);
    }

    let objective = |theta: &[f64]| -> f64 {
        let mut loss = 0.0;
        for r in 0..n {
            let eta: f64 = (0..q).map(|k| z[r * q + k] * theta[k]).sum();
            loss += softplus(eta) - yv[r] * eta;
        }
        let pen: f64 = theta.iter().zip(&pw).map(|(b, w)| w * b * b).sum();
        loss / n as f64 + 0.5 * pen
    };

    let mut theta = vec![0.0; q];
    let base = pos as f64 / n as f64;
    theta[0] = libm::log(base / (1.0 - base));
    let mut f_old = objective(&theta);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = vec![0.0; q];
    let mut hess = vec![0.0; q * q];
    while iterations < opts.max_iter {
        iterations += 1;
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        for r in 0..n {
            let row = &z[r * q..(r + 1) * q];
            let eta: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-12);
            for a in 0..q {
                grad[a] += (mu - yv[r]) * row[a];
                for b in 0..=a {
                    hess[a * q + b] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..q {
            grad[a] /= n as f64;
            for b in 0..=a {
                hess[a * q + b] /= n as f64;
                hess[b * q + a] = hess[a * q + b];
            }
        }
        for a in 1..q {
            grad[a] += pw[a] * theta[a];
            hess[a * q + a] += pw[a];
        }
        let step = solve_spd(&hess, &grad, q);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&step)
                .enumerate()
                .map(|(k, (th, s))| {
                    let v = th - t * s;
                    if k == 0 {
                        v
                    } else {
                        v.clamp(-opts.coefficient_bound, opts.coefficient_bound)
                    }
                })
                .collect();
            let f_new = objective(&cand);
            if f_new <= f_old + 1e-15 * f_old.abs() {
                accepted = Some((cand, f_new));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, f_new)) = accepted else {
            converged = true;
            break;
        };
        let delta = cand.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        theta = cand;
        f_old = f_new;
        if delta < opts.tolerance {
            converged = true;
            break;
        }
    }

    let mut coefficients = vec![0.0; p];
    let mut intercept = theta[0];
    for (k, &c) in active.iter().enumerate() {
        let b = theta[k + 1] / sd[c];
        coefficients[c] = b;
        intercept -= b * mean[c];
    }
    Ok(LogisticFit { intercept, coefficients, constant, converged, iterations })
}

/// Solves `A s = g` for symmetric positive (semi-)definite `A` by Cholesky,
/// adding diagonal jitter when the factorisation breaks down.
fn solve_spd(a: &[f64], g: &[f64], q: usize) -> Vec<f64> {
    let mut jitter = 0.0;
    loop {
        if let Some(l) = cholesky(a, q, jitter) {
            let mut y = vec![0.0; q];
            for i in 0..q {
                let s: f64 = (0..i).map(|k| l[i * q + k] * y[k]).sum();
                y[i] = (g[i] - s) / l[i * q + i];
            }
            let mut x = vec![0.0; q];
            for i in (0..q).rev() {
                let s: f64 = (i + 1..q).map(|k| l[k * q + i] * x[k]).sum();
                x[i] = (y[i] - s) / l[i * q + i];
            }
            return x;
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
    }
}

fn cholesky(a: &[f64], q: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * q + k] * l[j * q + k]).sum();
            if i == j {
                let d = a[i * q + i] + jitter - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i * q + i] = sqrt(d);
            } else {
                l[i * q + j] = (a[i * q + j] - s) / l[j * q + j];
            }
        }
    }
    Some(l)
}

/// Something that turns a feature table into churn scores.
pub trait Predictor {
    fn columns(&self) -> &[String];
    fn predict(&self, table: &FeatureTable) -> Result<Vec<f64>>;
}

/// A trainable non-relational classifier.
pub trait Classifier {
    type Model: Predictor;
    fn id(&self) -> &str;
    fn fit(&self, table: &FeatureTable, labels: &[bool]) -> Result<Self::Model>;
}

/// Built-in logistic regression.
#[derive(Clone, Debug, Default)]
pub struct LogisticRegression {
    pub options: LogisticOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub columns: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Constant training columns, dropped from the fit.
    pub dropped: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.intercept + row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum::<f64>())
    }
}

impl Predictor for LogisticModel {
    fn columns(&self) -> &[String] {
        &self.columns
    }

    fn predict(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        if table.columns() != self.columns.as_slice() {
            bail!(Alignment, "feature columns differ from the training signature");
        }
        Ok((0..table.num_rows()).map(|r| self.predict_row(table.row(r))).collect())
    }
}

impl Classifier for LogisticRegression {
    type Model = LogisticModel;

    fn id(&self) -> &str {
        "log"
    }

    fn fit(&self, table: &FeatureTable, labels: &[bool]) -> Result<LogisticModel> {
        if labels.len() != table.num_rows() {
            bail!(Alignment, "{} labels for {} rows", labels.len(), table.num_rows());
        }
        let fit = fit_logistic_dense(table.values(), table.num_columns(), labels, &self.options)?;
        Ok(LogisticModel {
            columns: table.columns().to_vec(),
            intercept: fit.intercept,
            coefficients: fit.coefficients,
            dropped: fit.constant.iter().map(|&c| table.columns()[c].clone()).collect(),
            converged: fit.converged,
            iterations: fit.iterations,
        })
    }
}

/// Duplicates minority-class rows, sampled with replacement, until the
/// minority share reaches `ratio`. Original rows are kept in place.
pub fn oversample(table: &FeatureTable, labels: &[bool], ratio: f64, seed: u64) -> Result<(FeatureTable, Vec<bool>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        bail!(Config, "oversampling ratio must lie in (0, 1), got {ratio}");
    }
    if labels.len() != table.num_rows() {
        bail!(Alignment, "{} labels for {} rows", labels.len(), table.num_rows());
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        bail!(Sampling, "oversampling needs both classes");
    }
    let (minority, majority, minority_label) =
        if pos.len() <= neg.len() { (&pos, &neg, true) } else { (&neg, &pos, false) };
    let need = libm::ceil(ratio * majority.len() as f64 / (1.0 - ratio) - 1e-9) as usize;
    let extra = need.saturating_sub(minority.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = (0..extra).map(|_| minority[rng.random_range(0..minority.len())]).collect();
    let mut out = table.clone();
    out.append_rows(&picks);
    let mut out_labels = labels.to_vec();
    out_labels.extend(core::iter::repeat_n(minority_label, extra));
    Ok((out, out_labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;
    use rand::Rng;

    fn table(columns: &[&str], rows: &[&[f64]]) -> FeatureTable {
        let values: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        FeatureTable::new((0..rows.len() as u32).collect(), columns.iter().map(|c| c.to_string()).collect(), values)
            .unwrap()
    }

    #[test]
    fn separable_feature_gets_large_positive_weight() {
        let y = [false, false, true, true, false, true];
        let rows: Vec<[f64; 1]> = y.iter().map(|&b| [if b { 1.0 } else { 0.0 }]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = table(&["x"], &refs);
        let opts = LogisticOptions { l2: 1e-6, ..Default::default() };
        let m = LogisticRegression { options: opts }.fit(&t, &y).unwrap();
        assert!(m.coefficients[0] > 5.0);
        let acc = m.predict(&t).unwrap().iter().zip(&y).filter(|(p, &l)| (**p > 0.5) == l).count();
        assert_eq!(acc, y.len());
    }

    #[test]
    fn constant_features_give_base_rate() {
        let y = [true, false, false, false];
        let t = table(&["a", "b"], &[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        let m = LogisticRegression::default().fit(&t, &y).unwrap();
        assert_eq!(m.dropped, vec!["a".to_string(), "b".to_string()]);
        for p in m.predict(&t).unwrap() {
            assert!((p - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn fitting_errors() {
        let t = table(&["a"], &[&[1.0], &[2.0]]);
        assert!(matches!(LogisticRegression::default().fit(&t, &[true, true]), Err(crate::Error::Fitting(_))));
        let t1 = table(&["a"], &[&[1.0]]);
        assert!(matches!(LogisticRegression::default().fit(&t1, &[true]), Err(crate::Error::Fitting(_))));
    }

    #[test]
    fn predict_checks_signature_and_evaluates_sigmoid() {
        let m = LogisticModel {
            columns: vec!["a".into(), "b".into(), "c".into()],
            intercept: 0.5,
            coefficients: vec![1.0, -2.0, 0.25],
            dropped: vec![],
            converged: true,
            iterations: 1,
        };
        let t = table(&["a", "b", "c"], &[&[1.0, 1.0, 4.0], &[0.0, 0.0, 0.0]]);
        let p = m.predict(&t).unwrap();
        // 0.5 + 1 - 2 + 1 = 0.5
        assert!((p[0] - 1.0 / (1.0 + libm::exp(-0.5))).abs() < 1e-15);
        assert!((p[1] - 1.0 / (1.0 + libm::exp(-0.5))).abs() < 1e-15);
        let zero = LogisticModel { intercept: 0.0, coefficients: vec![0.0; 3], ..m.clone() };
        assert!(zero.predict(&t).unwrap().iter().all(|&v| v == 0.5));
        let other = table(&["a", "c", "b"], &[&[1.0, 1.0, 4.0]]);
        assert!(matches!(m.predict(&other), Err(crate::Error::Alignment(_))));
    }

    /// Deterministic pseudo-random data with a logistic ground truth.
    fn synthetic(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.random::<f64>() * 4.0 - 2.0;
            let b: f64 = rng.random::<f64>() * 10.0;
            x.push(a);
            x.push(b);
            y.push(rng.random::<f64>() < sigmoid(-0.5 + 1.2 * a - 0.15 * b));
        }
        (x, y)
    }

    /// Independent oracle: plain gradient descent on the same penalised
    /// objective, with its own standardisation.
    fn gradient_descent(x: &[f64], y: &[bool], l2: f64) -> (f64, [f64; 2]) {
        let n = y.len();
        let mut mean = [0.0; 2];
        let mut sd = [0.0; 2];
        for c in 0..2 {
            mean[c] = (0..n).map(|r| x[2 * r + c]).sum::<f64>() / n as f64;
            sd[c] = ((0..n).map(|r| (x[2 * r + c] - mean[c]).powi(2)).sum::<f64>() / n as f64).sqrt();
        }
        let mut th = [0.0; 3];
        for _ in 0..20_000 {
            let mut g = [0.0; 3];
            for r in 0..n {
                let z = [1.0, (x[2 * r] - mean[0]) / sd[0], (x[2 * r + 1] - mean[1]) / sd[1]];
                let eta = th[0] + th[1] * z[1] + th[2] * z[2];
                let err = 1.0 / (1.0 + (-eta).exp()) - if y[r] { 1.0 } else { 0.0 };
                for k in 0..3 {
                    g[k] += err * z[k] / n as f64;
                }
            }
            g[1] += l2 * th[1] / (sd[0] * sd[0]);
            g[2] += l2 * th[2] / (sd[1] * sd[1]);
            for k in 0..3 {
                th[k] -= 2.0 * g[k];
            }
        }
        let b = [th[1] / sd[0], th[2] / sd[1]];
        (th[0] - b[0] * mean[0] - b[1] * mean[1], b)
    }

    #[test]
    fn nearly_constant_column_stays_small() {
        // A column varying at 1e-8 that perfectly tracks the label.
        let (x2, y) = synthetic(300, 3);
        let mut x = Vec::new();
        for r in 0..y.len() {
            x.push(x2[2 * r]);
            x.push(0.04 + if y[r] { 1e-8 } else { 0.0 });
        }
        let fit = fit_logistic_dense(&x, 2, &y, &LogisticOptions::default()).unwrap();
        // A shift of 1e-3 in that column moves the logit by well under 1.
        assert!(fit.coefficients[1].abs() * 1e-3 < 0.1, "{}", fit.coefficients[1]);
    }

    #[test]
    fn newton_matches_gradient_descent_oracle() {
        let (x, y) = synthetic(400, 7);
        let l2 = 1e-3;
        let fit = fit_logistic_dense(&x, 2, &y, &LogisticOptions { l2, ..Default::default() }).unwrap();
        assert!(fit.converged);
        let (b0, b) = gradient_descent(&x, &y, l2);
        assert!((fit.intercept - b0).abs() < 1e-4, "{} vs {b0}", fit.intercept);
        assert!((fit.coefficients[0] - b[0]).abs() < 1e-4);
        assert!((fit.coefficients[1] - b[1]).abs() < 1e-4);
    }

    #[test]
    fn duplicated_column_leaves_predictions_unchanged() {
        let (x, y) = synthetic(300, 11);
        let opts = LogisticOptions { l2: 1e-9, ..Default::default() };
        let single = fit_logistic_dense(&x, 2, &y, &opts).unwrap();
        let dup: Vec<f64> = x.chunks(2).flat_map(|r| [r[0], r[0], r[1]]).collect();
        let double = fit_logistic_dense(&dup, 3, &y, &opts).unwrap();
        for r in 0..y.len() {
            let a =
                sigmoid(single.intercept + single.coefficients[0] * x[2 * r] + single.coefficients[1] * x[2 * r + 1]);
            let row = &dup[3 * r..3 * r + 3];
            let b = sigmoid(double.intercept + row.iter().zip(&double.coefficients).map(|(u, v)| u * v).sum::<f64>());
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn oversample_examples() {
        let rows: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = table(&["x"], &refs);
        let mut y = [false; 10];
        y[3] = true;
        let (o, oy) = oversample(&t, &y, 0.5, 1).unwrap();
        assert_eq!(oy.iter().filter(|&&b| b).count(), 9);
        assert_eq!(o.num_rows(), 18);
        assert_eq!(&o.values()[..10], t.values());
        assert!(o.values()[10..].iter().all(|&v| v == 3.0));
        assert_eq!(oversample(&t, &y, 0.5, 1).unwrap(), (o, oy));

        let balanced = [true, false, true, false];
        let t4 = table(&["x"], &[&[1.0], &[2.0], &[3.0], &[4.0]]);
        assert_eq!(oversample(&t4, &balanced, 0.5, 3).unwrap().0, t4);
        assert!(matches!(oversample(&t4, &[false; 4], 0.5, 3), Err(crate::Error::Sampling(_))));
    }

    proptest! {
        #[test]
        fn oversampling_reaches_target(n_pos in 1usize..20, n_neg in 1usize..60, ratio in 0.05f64..0.95, seed in 0u64..100) {
            let n = n_pos + n_neg;
            let rows: Vec<[f64; 1]> = (0..n).map(|i| [i as f64]).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let t = table(&["x"], &refs);
            let y: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
            let (o, oy) = oversample(&t, &y, ratio, seed).unwrap();
            prop_assert!(o.num_rows() >= n);
            prop_assert_eq!(&o.values()[..n], t.values());
            let minority_label = n_pos <= n_neg;
            let m = oy.iter().filter(|&&b| b == minority_label).count() as f64;
            let share = m / oy.len() as f64;
            let before = n_pos.min(n_neg) as f64 / n as f64;
            prop_assert!(share >= ratio - 1e-9 || (o.num_rows() == n && before >= ratio - 1e-9));
        }
    }
}
