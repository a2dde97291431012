//! Rank correlation, confidence intervals, two-sample tests, effect sizes and
//! power.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InsufficientData("correlation needs two equal-length samples of size >= 2".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("correlation of a constant sample".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InsufficientData("correlation needs two equal-length samples of size >= 2".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn students_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom")
}

/// Mean and half-width of its 95% t interval.
pub fn mean_ci95(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData("confidence interval needs at least two values".into()));
    }
    let (m, v) = mean_var(xs);
    let q = students_t(xs.len() as f64 - 1.0).inverse_cdf(0.975);
    Ok((m, q * (v / xs.len() as f64).sqrt()))
}

/// `"0.64 ± 0.03"`.
pub fn format_ci(mean: f64, half_width: f64, decimals: usize) -> String {
    format!("{mean:.decimals$} ± {half_width:.decimals$}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// `|d| < 0.2`
    Small,
    /// `0.2 <= |d| < 0.5`
    Slight,
    /// `0.5 <= |d| <= 0.8`
    Mild,
    /// `|d| > 0.8`
    Important,
}

impl Severity {
    pub fn of(d: f64) -> Severity {
        let a = d.abs();
        if a > 0.8 {
            Severity::Important
        } else if a >= 0.5 {
            Severity::Mild
        } else if a >= 0.2 {
            Severity::Slight
        } else {
            Severity::Small
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Severity::Small => "small",
            Severity::Slight => "slight",
            Severity::Mild => "mild",
            Severity::Important => "important",
        }
    }
}

/// Highlight class of a table cell: sign and size of a significant effect,
/// empty when `|d| < 0.2` or `p >= alpha`.
pub fn highlight(d: f64, p: f64, alpha: f64) -> &'static str {
    if p >= alpha || d.abs() < 0.2 {
        ""
    } else if d > 0.5 {
        "larger"
    } else if d > 0.0 {
        "slightly larger"
    } else if d < -0.5 {
        "smaller"
    } else {
        "slightly smaller"
    }
}

/// Independent two-sample comparison of `a` against `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    /// `mean(a) - mean(b)`.
    pub mean_diff: f64,
    pub ci95: f64,
    pub p_value: f64,
    pub cohens_d: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub t: f64,
}

impl EffectReport {
    pub fn severity(&self) -> Severity {
        Severity::of(self.cohens_d)
    }
}

/// Two-sided p-value of a t statistic.
pub fn t_test_p_value(t: f64, df: f64) -> f64 {
    (2.0 * students_t(df).cdf(-t.abs())).clamp(0.0, 1.0)
}

/// Pooled-variance Student t-test with Cohen's d.
pub fn two_sample_test(a: &[f64], b: &[f64]) -> Result<EffectReport> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData("each group needs at least two values".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
    let diff = ma - mb;
    if pooled <= 0.0 {
        if diff == 0.0 {
            return Ok(EffectReport { mean_diff: 0.0, ci95: 0.0, p_value: 1.0, cohens_d: 0.0, n_a: a.len(), n_b: b.len(), t: 0.0 });
        }
        return Err(Error::Undefined("zero pooled variance".into()));
    }
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let t = diff / se;
    let q = students_t(df).inverse_cdf(0.975);
    Ok(EffectReport {
        mean_diff: diff,
        ci95: q * se,
        p_value: t_test_p_value(t, df),
        cohens_d: diff / pooled.sqrt(),
        n_a: a.len(),
        n_b: b.len(),
        t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Detect a difference in the direction of `d`.
    #[default]
    OneSided,
    TwoSided,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Normal-approximation power of the two-sample test at sizes `n`, `n_other`.
pub fn approximate_power(d: f64, n: usize, n_other: usize, alpha: f64, alternative: Alternative) -> f64 {
    let z = std_normal();
    let shift = d.abs() / (1.0 / n as f64 + 1.0 / n_other as f64).sqrt();
    match alternative {
        Alternative::OneSided => z.cdf(shift - z.inverse_cdf(1.0 - alpha)),
        Alternative::TwoSided => {
            let c = z.inverse_cdf(1.0 - alpha / 2.0);
            z.cdf(shift - c) + z.cdf(-shift - c)
        }
    }
}

/// Smallest group size reaching `power` against a fixed group of `n_other`.
pub fn required_sample_size(d: f64, alpha: f64, power: f64, n_other: usize, alternative: Alternative) -> Result<usize> {
    if d == 0.0 || !d.is_finite() {
        return Err(Error::Infeasible("effect size must be finite and nonzero".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) || !(power > 0.0 && power < 1.0) || n_other < 1 {
        return Err(Error::Infeasible("alpha and power must lie in (0, 1)".into()));
    }
    let limit = approximate_power(d, usize::MAX / 4, n_other, alpha, alternative);
    if limit < power {
        return Err(Error::Infeasible(format!(
            "power {power} is out of reach against {n_other} fixed samples (limit {limit:.3})"
        )));
    }
    let (mut lo, mut hi) = (2usize, 4usize);
    while approximate_power(d, hi, n_other, alpha, alternative) < power {
        hi = hi.checked_mul(2).ok_or_else(|| Error::Infeasible("sample size overflow".into()))?;
    }
    if approximate_power(d, lo, n_other, alpha, alternative) >= power {
        return Ok(lo);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if approximate_power(d, mid, n_other, alpha, alternative) >= power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `Phi(|d| / sqrt 2)`: chance a draw from the better group beats one from
/// the other under equal-variance normals.
pub fn superiority_probability(d: f64) -> f64 {
    std_normal().cdf(d.abs() / std::f64::consts::SQRT_2)
}

/// One row of an effect-size table. `mean_diff_x100` and `ci95_x100` are in
/// percentage points of regret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub space: String,
    pub paradigm: String,
    pub mean_diff_x100: f64,
    pub ci95_x100: f64,
    pub p: f64,
    pub d: f64,
    pub severity_label: String,
    pub highlight: String,
}

impl EffectRow {
    pub fn new(space: impl Into<String>, paradigm: impl Into<String>, r: &EffectReport) -> EffectRow {
        EffectRow {
            space: space.into(),
            paradigm: paradigm.into(),
            mean_diff_x100: 100.0 * r.mean_diff,
            ci95_x100: 100.0 * r.ci95,
            p: r.p_value,
            d: r.cohens_d,
            severity_label: r.severity().label().into(),
            highlight: highlight(r.cohens_d, r.p_value, 0.05).into(),
        }
    }
}
