//! Rank-based comparison of methods across datasets: average ranks, the
//! Friedman test with the Nemenyi post-hoc, and Kruskal-Wallis.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use libm::sqrt;

use crate::error::bail;
use crate::special::{chi_square_sf, f_sf};
use crate::Result;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Performance table: one row per dataset, one column per method.
#[derive(Clone, Debug, PartialEq)]
pub struct RankMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    higher_is_better: bool,
}

impl RankMatrix {
    /// `values` is row-major; NaN marks a missing cell and is rejected.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, higher_is_better: bool) -> Result<Self> {
        if values.len() != rows * cols {
            bail!(Argument, "{} values for a {rows} x {cols} matrix", values.len());
        }
        if values.iter().any(|v| v.is_nan()) {
            bail!(Argument, "rank matrix has missing cells");
        }
        Ok(RankMatrix { rows, cols, values, higher_is_better })
    }

    pub fn from_rows(rows: &[Vec<f64>], higher_is_better: bool) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            bail!(Argument, "ragged rank matrix");
        }
        Self::new(rows.len(), cols, rows.iter().flatten().copied().collect(), higher_is_better)
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn num_methods(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Rank 1 is best; ties share the average of the positions they occupy.
    pub fn row_ranks(&self, r: usize) -> Vec<f64> {
        let row = self.row(r);
        if self.higher_is_better {
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            rank_ascending(&neg)
        } else {
            rank_ascending(row)
        }
    }

    pub fn average_ranks(&self) -> Result<Vec<f64>> {
        if self.rows == 0 || self.cols == 0 {
            bail!(Argument, "empty rank matrix");
        }
        let mut avg = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, v) in avg.iter_mut().zip(self.row_ranks(r)) {
                *a += v;
            }
        }
        avg.iter_mut().for_each(|a| *a /= self.rows as f64);
        Ok(avg)
    }
}

/// Ascending ranks starting at 1 with ties averaged.
pub fn rank_ascending(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Per-dataset ranks averaged over datasets.
pub fn average_ranks(matrix: &RankMatrix) -> Result<Vec<f64>> {
    matrix.average_ranks()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FriedmanResult {
    /// Chi-square form of the statistic.
    pub chi_square: TestResult,
    /// Iman-Davenport F correction; `None` when the chi-square statistic
    /// reaches its maximum and F is unbounded.
    pub iman_davenport: Option<TestResult>,
    pub average_ranks: Vec<f64>,
    pub datasets: usize,
    pub methods: usize,
}

pub fn friedman(matrix: &RankMatrix) -> Result<FriedmanResult> {
    let (n, k) = (matrix.num_rows(), matrix.num_methods());
    if k < 2 || n < 2 {
        bail!(Argument, "Friedman test needs at least 2 methods and 2 datasets, got {k} and {n}");
    }
    let ranks = matrix.average_ranks()?;
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = ranks.iter().map(|r| r * r).sum();
    let chi = (12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0) * (kf + 1.0) / 4.0)).max(0.0);
    let p = chi_square_sf(chi, kf - 1.0);
    let denom = nf * (kf - 1.0) - chi;
    let iman_davenport = (denom > 1e-12).then(|| {
        let f = (nf - 1.0) * chi / denom;
        TestResult { statistic: f, p_value: f_sf(f, kf - 1.0, (kf - 1.0) * (nf - 1.0)) }
    });
    Ok(FriedmanResult {
        chi_square: TestResult { statistic: chi, p_value: p },
        iman_davenport,
        average_ranks: ranks,
        datasets: n,
        methods: k,
    })
}

/// `q_alpha / sqrt(2)` of the studentized range with infinite degrees of
/// freedom, for k = 2..=30.
const Q_010: [f64; 29] = [
    1.644854, 2.052293, 2.291341, 2.459516, 2.588521, 2.692732, 2.779884, 2.854606, 2.919889, 2.977768, 3.029694,
    3.076733, 3.119693, 3.159199, 3.195743, 3.229723, 3.261461, 3.291224, 3.319233, 3.345676, 3.370712, 3.394477,
    3.417089, 3.438651, 3.459253, 3.478971, 3.497878, 3.516033, 3.533492,
];
const Q_005: [f64; 29] = [
    1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030878, 3.101730, 3.163684, 3.218654, 3.268004,
    3.312739, 3.353618, 3.391230, 3.426041, 3.458425, 3.488685, 3.517073, 3.543799, 3.569040, 3.592946, 3.615646,
    3.637252, 3.657861, 3.677556, 3.696413, 3.714498, 3.731869, 3.748578,
];
const Q_001: [f64; 29] = [
    2.575829, 2.913494, 3.113250, 3.254686, 3.363740, 3.452213, 3.526471, 3.590339, 3.646292, 3.696021, 3.740733,
    3.781318, 3.818451, 3.852654, 3.884343, 3.913850, 3.941446, 3.967357, 3.991770, 4.014842, 4.036710, 4.057487,
    4.077275, 4.096161, 4.114220, 4.131519, 4.148118, 4.164069, 4.179420,
];

/// Critical value `q_alpha` of the Nemenyi test for `k` methods.
pub fn nemenyi_q(k: usize, alpha: f64) -> Result<f64> {
    let table = if alpha == 0.10 {
        &Q_010
    } else if alpha == 0.05 {
        &Q_005
    } else if alpha == 0.01 {
        &Q_001
    } else {
        bail!(Argument, "no Nemenyi table for alpha = {alpha} (use 0.10, 0.05 or 0.01)");
    };
    if !(2..=30).contains(&k) {
        bail!(Argument, "Nemenyi table covers 2 to 30 methods, got {k}");
    }
    Ok(table[k - 2])
}

#[derive(Clone, Debug, PartialEq)]
pub struct NemenyiResult {
    pub critical_difference: f64,
    pub average_ranks: Vec<f64>,
    /// Row-major `k x k` flags, `true` when the rank gap exceeds the CD.
    pub significant: Vec<bool>,
}

impl NemenyiResult {
    pub fn is_significant(&self, i: usize, j: usize) -> bool {
        self.significant[i * self.average_ranks.len() + j]
    }

    /// Methods whose average rank is within the CD of the best one.
    pub fn tied_with_best(&self) -> Vec<usize> {
        let best = self.average_ranks.iter().copied().fold(f64::INFINITY, f64::min);
        (0..self.average_ranks.len()).filter(|&i| self.average_ranks[i] - best <= self.critical_difference).collect()
    }
}

pub fn nemenyi(matrix: &RankMatrix, alpha: f64) -> Result<NemenyiResult> {
    let (n, k) = (matrix.num_rows(), matrix.num_methods());
    if n == 0 {
        bail!(Argument, "Nemenyi test needs at least one dataset");
    }
    let q = nemenyi_q(k, alpha)?;
    let cd = q * sqrt(k as f64 * (k as f64 + 1.0) / (6.0 * n as f64));
    let ranks = matrix.average_ranks()?;
    let mut significant = vec![false; k * k];
    for i in 0..k {
        for j in 0..k {
            significant[i * k + j] = (ranks[i] - ranks[j]).abs() > cd;
        }
    }
    Ok(NemenyiResult { critical_difference: cd, average_ranks: ranks, significant })
}

/// Kruskal-Wallis H test with tie correction.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 {
        bail!(Argument, "Kruskal-Wallis needs at least 2 groups, got {}", groups.len());
    }
    if groups.iter().any(|g| g.is_empty()) {
        bail!(Argument, "Kruskal-Wallis groups must be non-empty");
    }
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    if all.iter().any(|v| v.is_nan()) {
        bail!(Argument, "Kruskal-Wallis input contains NaN");
    }
    let n = all.len() as f64;
    let ranks = rank_ascending(&all);
    let mut h = 0.0;
    let mut offset = 0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        h += r * r / g.len() as f64;
        offset += g.len();
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

    let mut sorted = all.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0 });
    }
    let h = (h / correction).max(0.0);
    Ok(TestResult { statistic: h, p_value: chi_square_sf(h, groups.len() as f64 - 1.0) })
}
