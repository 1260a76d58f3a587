//! Statistical kernels for evaluating a council against single-model
//! baselines, and the cost arithmetic behind the efficiency metrics.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Conventional eta-squared threshold for a large effect.
pub const ETA_SQUARED_LARGE: f64 = 0.14;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("correlation undefined: {0} is constant")]
    UndefinedCorrelation(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("effect size undefined: total variance is zero")]
    UndefinedEffect,
    #[error("kappa undefined: expected agreement is 1")]
    UndefinedKappa,
    #[error("marginal cost undefined: quality does not improve")]
    UndefinedMarginal,
    #[error("distribution error: {0}")]
    Distribution(String),
}

/// Per-item 0/1 error indicators of one expert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub label: String,
    pub values: Vec<u8>,
}

impl IndicatorSeries {
    pub fn new(label: impl Into<String>, values: Vec<u8>) -> Result<Self, StatsError> {
        if values.iter().any(|&v| v > 1) {
            return Err(StatsError::InvalidInput("indicator values must be 0 or 1".into()));
        }
        Ok(Self { label: label.into(), values })
    }

    pub fn from_bools(label: impl Into<String>, values: &[bool]) -> Self {
        Self { label: label.into(), values: values.iter().map(|&b| u8::from(b)).collect() }
    }

    pub fn error_rate(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len() as f64
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation of two error-indicator series.
pub fn pearson_error_correlation(a: &IndicatorSeries, b: &IndicatorSeries) -> Result<f64, StatsError> {
    if a.values.len() != b.values.len() || a.values.len() < 2 {
        return Err(StatsError::InvalidInput("series must have equal length of at least 2".into()));
    }
    let m = a.values.len() as f64;
    let ma = a.values.iter().map(|&v| f64::from(v)).sum::<f64>() / m;
    let mb = b.values.iter().map(|&v| f64::from(v)).sum::<f64>() / m;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(StatsError::UndefinedCorrelation(a.label.clone()));
    }
    if sbb == 0.0 {
        return Err(StatsError::UndefinedCorrelation(b.label.clone()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for `statistic` over `samples`.
pub fn bootstrap_ci<F>(samples: &[f64], statistic: F, resamples: usize, level: f64, seed: u64) -> Result<(f64, f64), StatsError>
where
    F: Fn(&[f64]) -> f64,
{
    if samples.is_empty() {
        return Err(StatsError::InvalidInput("no samples".into()));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(StatsError::InvalidInput("level must be in (0, 1) and resamples positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = samples[rng.random_range(0..n)];
            }
            statistic(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok((quantile(&stats, alpha / 2.0), quantile(&stats, 1.0 - alpha / 2.0)))
}

/// Bootstrap interval of the mean with the default resamples and level.
pub fn bootstrap_mean_ci(samples: &[f64], seed: u64) -> Result<(f64, f64), StatsError> {
    bootstrap_ci(samples, mean, DEFAULT_RESAMPLES, DEFAULT_LEVEL, seed)
}

/// Population variance (divisor |D|) of per-domain mean scores.
pub fn bias_variance(per_domain_means: &BTreeMap<String, f64>) -> Result<f64, StatsError> {
    if per_domain_means.len() < 2 {
        return Err(StatsError::InvalidInput("need at least two domains".into()));
    }
    let values: Vec<f64> = per_domain_means.values().copied().collect();
    let m = mean(&values);
    Ok(values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Neutrality,
    FactualConsistency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub groups: BTreeMap<String, Vec<f64>>,
    pub score_kind: ScoreKind,
}

impl GroupScores {
    pub fn new(score_kind: ScoreKind) -> Self {
        Self { groups: BTreeMap::new(), score_kind }
    }

    pub fn with_group(mut self, label: impl Into<String>, scores: Vec<f64>) -> Self {
        self.groups.insert(label.into(), scores);
        self
    }

    fn check(&self, min_per_group: usize) -> Result<(), StatsError> {
        if self.groups.len() < 2 {
            return Err(StatsError::InvalidInput("need at least two groups".into()));
        }
        for (label, scores) in &self.groups {
            if scores.len() < min_per_group {
                return Err(StatsError::InvalidInput(format!("group {label} has fewer than {min_per_group} observations")));
            }
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(StatsError::InvalidInput(format!("group {label} has non-finite scores")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeveneCenter {
    /// Classic Levene: deviations from the group mean.
    #[default]
    Mean,
    /// Brown–Forsythe: deviations from the group median.
    Median,
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    quantile(&s, 0.5)
}

/// Mean-centered Levene test. Returns `(W, p)`.
pub fn levene_test(groups: &GroupScores) -> Result<(f64, f64), StatsError> {
    levene_test_with(groups, LeveneCenter::Mean)
}

pub fn levene_test_with(groups: &GroupScores, center: LeveneCenter) -> Result<(f64, f64), StatsError> {
    groups.check(2)?;
    let first = groups.groups.values().next().and_then(|g| g.first()).copied().unwrap_or_default();
    if groups.groups.values().flatten().all(|&v| v == first) {
        return Err(StatsError::Degenerate("all observations are identical".into()));
    }
    let z: Vec<Vec<f64>> = groups
        .groups
        .values()
        .map(|g| {
            let c = match center {
                LeveneCenter::Mean => mean(g),
                LeveneCenter::Median => median(g),
            };
            g.iter().map(|v| (v - c).abs()).collect()
        })
        .collect();
    let k = z.len() as f64;
    let n: f64 = z.iter().map(|g| g.len() as f64).sum();
    let group_means: Vec<f64> = z.iter().map(|g| mean(g)).collect();
    let grand = z.iter().flatten().sum::<f64>() / n;
    let between: f64 = z.iter().zip(&group_means).map(|(g, m)| g.len() as f64 * (m - grand).powi(2)).sum();
    let within: f64 = z.iter().zip(&group_means).map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sum();
    if within == 0.0 {
        if between == 0.0 {
            return Err(StatsError::Degenerate("absolute deviations are identical in every group".into()));
        }
        return Ok((f64::INFINITY, 0.0));
    }
    let w = (n - k) / (k - 1.0) * between / within;
    let f = FisherSnedecor::new(k - 1.0, n - k).map_err(|e| StatsError::Distribution(e.to_string()))?;
    Ok((w, f.sf(w).clamp(0.0, 1.0)))
}

/// Between-group, within-group and total sums of squares.
pub fn sums_of_squares(groups: &GroupScores) -> Result<(f64, f64, f64), StatsError> {
    groups.check(1)?;
    let all: Vec<f64> = groups.groups.values().flatten().copied().collect();
    let grand = mean(&all);
    let mut between = 0.0;
    let mut within = 0.0;
    for g in groups.groups.values() {
        let m = mean(g);
        between += g.len() as f64 * (m - grand).powi(2);
        within += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let total = all.iter().map(|v| (v - grand).powi(2)).sum();
    Ok((between, within, total))
}

/// Share of total variance explained by group membership.
pub fn eta_squared(groups: &GroupScores) -> Result<f64, StatsError> {
    let (between, _, total) = sums_of_squares(groups)?;
    if total == 0.0 {
        return Err(StatsError::UndefinedEffect);
    }
    Ok((between / total).clamp(0.0, 1.0))
}

/// Cohen's kappa for two raters labelling the same items.
pub fn cohens_kappa<L: Ord>(rater_a: &[L], rater_b: &[L]) -> Result<f64, StatsError> {
    if rater_a.len() != rater_b.len() || rater_a.is_empty() {
        return Err(StatsError::InvalidInput("raters must label the same non-empty item list".into()));
    }
    let n = rater_a.len() as f64;
    let labels: BTreeSet<&L> = rater_a.iter().chain(rater_b).collect();
    let count = |r: &[L], l: &L| r.iter().filter(|x| *x == l).count() as f64;
    let p_o = rater_a.iter().zip(rater_b).filter(|(a, b)| a == b).count() as f64 / n;
    let p_e: f64 = labels.iter().map(|l| count(rater_a, l) * count(rater_b, l) / (n * n)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(StatsError::UndefinedKappa);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Two-sided paired t-test on `a - b`. Returns `(t, p)`.
///
/// All-zero differences carry no information and are rejected. Differences
/// that are constant but nonzero have zero variance and an unbounded
/// statistic; they return `t = ±∞`, `p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64), StatsError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(StatsError::InvalidInput("samples must be paired with at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|&x| x == 0.0) {
        return Err(StatsError::Degenerate("all paired differences are zero".into()));
    }
    let n = d.len() as f64;
    let md = mean(&d);
    let var = d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1.0);
    // Rounding noise in the differences must not turn a constant shift into
    // a huge but finite statistic.
    if var.sqrt() <= 1e-12 * md.abs() {
        return Ok((md.signum() * f64::INFINITY, 0.0));
    }
    let t = md / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| StatsError::Distribution(e.to_string()))?;
    Ok((t, (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)))
}

/// One configuration's cost and quality profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// USD per 1,000 queries.
    pub cost_per_1000_queries: f64,
    /// Quality-adjusted correctness rate in `(0, 1]`.
    pub quality_score: f64,
    /// Median latency in seconds.
    pub latency_median: f64,
    #[serde(default)]
    pub tokens_in: u64,
    #[serde(default)]
    pub tokens_out: u64,
    /// USD per input token.
    #[serde(default)]
    pub price_in: f64,
    /// USD per output token.
    #[serde(default)]
    pub price_out: f64,
}

impl CostParams {
    pub fn new(cost_per_1000_queries: f64, quality_score: f64, latency_median: f64) -> Self {
        Self { cost_per_1000_queries, quality_score, latency_median, tokens_in: 0, tokens_out: 0, price_in: 0.0, price_out: 0.0 }
    }

    fn validate(&self) -> Result<(), StatsError> {
        let values = [self.cost_per_1000_queries, self.latency_median, self.price_in, self.price_out];
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(StatsError::InvalidInput("costs, prices and latency must be nonnegative".into()));
        }
        if !(self.quality_score > 0.0 && self.quality_score <= 1.0) {
            return Err(StatsError::InvalidInput("quality score must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// USD per quality-adjusted correct answer.
    pub fn cost_per_qaca(&self) -> f64 {
        self.cost_per_1000_queries / (1000.0 * self.quality_score)
    }

    /// Quality-adjusted correct answers per USD.
    pub fn qaca_per_dollar(&self) -> f64 {
        1000.0 * self.quality_score / self.cost_per_1000_queries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub cost_ratio: f64,
    pub latency_ratio: f64,
    pub quality_ratio: f64,
    pub cost_per_qaca_single: f64,
    pub cost_per_qaca_council: f64,
    pub cost_per_qaca_ratio: f64,
    pub qaca_per_dollar_single: f64,
    pub qaca_per_dollar_council: f64,
    pub qaca_per_dollar_ratio: f64,
    /// `None` when the council is not more accurate.
    pub marginal_cost_per_qaca: Option<f64>,
}

/// Extra USD spent per extra quality-adjusted correct answer.
pub fn marginal_cost_per_qaca(single: &CostParams, council: &CostParams) -> Result<f64, StatsError> {
    let dq = council.quality_score - single.quality_score;
    if dq <= 0.0 {
        return Err(StatsError::UndefinedMarginal);
    }
    Ok((council.cost_per_1000_queries - single.cost_per_1000_queries) / (1000.0 * dq))
}

pub fn cost_report(single: &CostParams, council: &CostParams) -> Result<CostReport, StatsError> {
    single.validate()?;
    council.validate()?;
    let ratio = |a: f64, b: f64| if b == 0.0 && a == 0.0 { 1.0 } else { a / b };
    Ok(CostReport {
        cost_ratio: ratio(council.cost_per_1000_queries, single.cost_per_1000_queries),
        latency_ratio: ratio(council.latency_median, single.latency_median),
        quality_ratio: council.quality_score / single.quality_score,
        cost_per_qaca_single: single.cost_per_qaca(),
        cost_per_qaca_council: council.cost_per_qaca(),
        cost_per_qaca_ratio: ratio(council.cost_per_qaca(), single.cost_per_qaca()),
        qaca_per_dollar_single: single.qaca_per_dollar(),
        qaca_per_dollar_council: council.qaca_per_dollar(),
        qaca_per_dollar_ratio: ratio(council.qaca_per_dollar(), single.qaca_per_dollar()),
        marginal_cost_per_qaca: marginal_cost_per_qaca(single, council).ok(),
    })
}

/// USD per token, split by direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub price_in: f64,
    pub price_out: f64,
}

/// Study-time price schedule: $5.00 per million input tokens and $37.50 per
/// million output tokens, blended across the council's models.
pub const STUDY_PRICING: Pricing = Pricing { price_in: 5.0e-6, price_out: 37.5e-6 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTokens {
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// Calls made by one council query: one per expert plus the synthesis call,
/// all with the same token profile.
pub fn council_calls(n_experts: usize, tokens_in: u64, tokens_out: u64) -> Vec<CallTokens> {
    vec![CallTokens { tokens_in, tokens_out }; n_experts + 1]
}

pub fn estimate_query_cost(calls: &[CallTokens], pricing: Pricing) -> Result<f64, StatsError> {
    if !(pricing.price_in >= 0.0 && pricing.price_out >= 0.0) {
        return Err(StatsError::InvalidInput("prices must be nonnegative".into()));
    }
    Ok(calls.iter().map(|c| c.tokens_in as f64 * pricing.price_in + c.tokens_out as f64 * pricing.price_out).sum())
}
