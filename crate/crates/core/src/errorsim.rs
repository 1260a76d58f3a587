//! Correlated expert errors under a latent shared-failure factor.
//!
//! Each trial draws `Z ~ Bernoulli(z_probability)`, then every expert errs
//! independently with probability `conditional_given_z[i]` or
//! `conditional_given_not_z[i]` depending on `Z`. The shared factor is the
//! only source of correlation, so
//!
//! ```text
//! cov(E_i, E_j) = π(1-π)(a_i - b_i)(a_j - b_j)
//! ```
//!
//! with `π = P(Z)`, `a = P(E|Z)`, `b = P(E|¬Z)`. Calibration inverts this
//! relation in closed form.

use std::num::NonZeroUsize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{pearson_error_correlation, IndicatorSeries};

/// Tolerance of the total-probability consistency check.
pub const MARGINAL_TOLERANCE: f64 = 1e-9;

/// Largest allowed gap between a requested and a calibrated correlation.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

/// Trials per RNG stream. Fixed so results do not depend on thread count.
const SHARD_TRIALS: usize = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum ErrorSimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("target correlation {target} is not achievable; achievable range is [{min}, {max}]")]
    Infeasible { target: f64, min: f64, max: f64 },
    #[error("calibration residual {residual:.4} exceeds tolerance {CALIBRATION_TOLERANCE}")]
    Residual { residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModelParams {
    pub n_experts: usize,
    pub marginal_rates: Vec<f64>,
    pub z_probability: f64,
    pub conditional_given_z: Vec<f64>,
    pub conditional_given_not_z: Vec<f64>,
    pub seed: u64,
}

fn is_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl ErrorModelParams {
    /// Model with no shared factor: every expert errs independently at its
    /// marginal rate.
    pub fn independent(marginal_rates: Vec<f64>, seed: u64) -> Self {
        Self {
            n_experts: marginal_rates.len(),
            conditional_given_z: marginal_rates.clone(),
            conditional_given_not_z: marginal_rates.clone(),
            marginal_rates,
            z_probability: 0.0,
            seed,
        }
    }

    /// Builds params from the latent model, deriving marginals by total
    /// probability.
    pub fn from_conditionals(z_probability: f64, given_z: Vec<f64>, given_not_z: Vec<f64>, seed: u64) -> Result<Self, ErrorSimError> {
        let marginal_rates = given_z.iter().zip(&given_not_z).map(|(a, b)| z_probability * a + (1.0 - z_probability) * b).collect();
        let params = Self {
            n_experts: given_z.len(),
            marginal_rates,
            z_probability,
            conditional_given_z: given_z,
            conditional_given_not_z: given_not_z,
            seed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ErrorSimError> {
        let n = self.n_experts;
        if n == 0 {
            return Err(ErrorSimError::InvalidInput("n_experts must be positive".into()));
        }
        if self.marginal_rates.len() != n || self.conditional_given_z.len() != n || self.conditional_given_not_z.len() != n {
            return Err(ErrorSimError::InvalidInput("rate vectors must have n_experts entries".into()));
        }
        let all = self.marginal_rates.iter().chain(&self.conditional_given_z).chain(&self.conditional_given_not_z);
        if !is_prob(self.z_probability) || !all.copied().all(is_prob) {
            return Err(ErrorSimError::InvalidInput("probabilities must lie in [0, 1]".into()));
        }
        for i in 0..n {
            let implied = self.analytic_marginal(i);
            if (implied - self.marginal_rates[i]).abs() > MARGINAL_TOLERANCE {
                return Err(ErrorSimError::InvalidInput(format!(
                    "expert {i}: marginal {} but conditionals imply {implied}",
                    self.marginal_rates[i]
                )));
            }
        }
        Ok(())
    }

    pub fn analytic_marginal(&self, i: usize) -> f64 {
        let pi = self.z_probability;
        pi * self.conditional_given_z[i] + (1.0 - pi) * self.conditional_given_not_z[i]
    }

    /// Model correlation between experts `i` and `j`; `None` when either
    /// error indicator is constant.
    pub fn analytic_rho(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(1.0);
        }
        let pi = self.z_probability;
        let (pi_, pj) = (self.analytic_marginal(i), self.analytic_marginal(j));
        let denom = (pi_ * (1.0 - pi_) * pj * (1.0 - pj)).sqrt();
        if denom == 0.0 {
            return None;
        }
        let di = self.conditional_given_z[i] - self.conditional_given_not_z[i];
        let dj = self.conditional_given_z[j] - self.conditional_given_not_z[j];
        Some(pi * (1.0 - pi) * di * dj / denom)
    }
}

/// Draws one trial: the error indicator of every expert.
pub fn sample_trial<R: Rng + ?Sized>(params: &ErrorModelParams, rng: &mut R) -> Vec<bool> {
    let z = rng.random::<f64>() < params.z_probability;
    let rates = if z { &params.conditional_given_z } else { &params.conditional_given_not_z };
    rates.iter().map(|&r| rng.random::<f64>() < r).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub trials: usize,
    pub empirical_marginals: Vec<f64>,
    pub empirical_joint_all: f64,
    /// Pearson correlation of the error indicators; `None` where a series is
    /// constant. Symmetric with unit diagonal where defined.
    pub pairwise_rho: Vec<Vec<Option<f64>>>,
    /// Per-expert indicator series, kept only on request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicator_matrix: Option<Vec<Vec<bool>>>,
}

impl SimulationResult {
    /// Largest defined off-diagonal correlation.
    pub fn max_rho(&self) -> Option<f64> {
        let n = self.pairwise_rho.len();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter_map(|(i, j)| self.pairwise_rho[i][j]).reduce(f64::max)
    }

    /// Binomial standard error of the all-experts-wrong rate.
    pub fn joint_standard_error(&self) -> f64 {
        let p = self.empirical_joint_all;
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

fn shard_rng(seed: u64, shard: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard as u64);
    rng
}

fn run_shard(params: &ErrorModelParams, shard: usize, trials: usize) -> Vec<Vec<bool>> {
    let mut rng = shard_rng(params.seed, shard);
    let mut columns = vec![Vec::with_capacity(trials); params.n_experts];
    for _ in 0..trials {
        let z = rng.random::<f64>() < params.z_probability;
        let rates = if z { &params.conditional_given_z } else { &params.conditional_given_not_z };
        for (col, &r) in columns.iter_mut().zip(rates) {
            col.push(rng.random::<f64>() < r);
        }
    }
    columns
}

/// Simulates `trials` independent trials and summarizes them. Trials are
/// split into fixed-size shards, each with its own derived RNG stream, and
/// shards run on worker threads; the output depends only on the seed.
pub fn simulate(params: &ErrorModelParams, trials: usize) -> Result<SimulationResult, ErrorSimError> {
    simulate_with(params, trials, false)
}

pub fn simulate_with(params: &ErrorModelParams, trials: usize, keep_indicators: bool) -> Result<SimulationResult, ErrorSimError> {
    if trials == 0 {
        return Err(ErrorSimError::InvalidInput("trials must be at least 1".into()));
    }
    params.validate()?;
    let n = params.n_experts;
    let shards = trials.div_ceil(SHARD_TRIALS);
    let workers = std::thread::available_parallelism().map(NonZeroUsize::get).unwrap_or(1).min(shards);
    let mut results: Vec<Option<Vec<Vec<bool>>>> = vec![None; shards];
    std::thread::scope(|scope| {
        let chunks = results.chunks_mut(shards.div_ceil(workers));
        let mut first_shard = 0;
        for chunk in chunks {
            let start = first_shard;
            first_shard += chunk.len();
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let shard = start + k;
                    let len = SHARD_TRIALS.min(trials - shard * SHARD_TRIALS);
                    *slot = Some(run_shard(params, shard, len));
                }
            });
        }
    });

    let mut columns: Vec<Vec<bool>> = vec![Vec::with_capacity(trials); n];
    for shard in results.into_iter().map(|r| r.expect("every shard ran")) {
        for (col, part) in columns.iter_mut().zip(shard) {
            col.extend(part);
        }
    }

    let m = trials as f64;
    let empirical_marginals = columns.iter().map(|c| c.iter().filter(|&&e| e).count() as f64 / m).collect();
    let joint = (0..trials).filter(|&t| columns.iter().all(|c| c[t])).count() as f64 / m;
    let series: Vec<IndicatorSeries> =
        columns.iter().enumerate().map(|(i, c)| IndicatorSeries::from_bools(format!("expert_{i}"), c)).collect();
    let mut rho = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = pearson_error_correlation(&series[i], &series[j]).ok();
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    Ok(SimulationResult {
        trials,
        empirical_marginals,
        empirical_joint_all: joint,
        pairwise_rho: rho,
        indicator_matrix: keep_indicators.then_some(columns),
    })
}

/// Probability that every expert errs: `π∏a_i + (1-π)∏b_i`.
pub fn analytic_joint(params: &ErrorModelParams) -> f64 {
    let pi = params.z_probability;
    let given_z: f64 = params.conditional_given_z.iter().product();
    let given_not_z: f64 = params.conditional_given_not_z.iter().product();
    pi * given_z + (1.0 - pi) * given_not_z
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Correlation-adjusted cap on the all-experts-wrong probability,
/// `pⁿ + C(n,2)·ρ·p(1-p)`, clamped to `[0, 1]`.
///
/// Expects `p ∈ [0,1]`, `ρ ∈ [-1,1]` and `n ≥ 2`.
pub fn joint_bound(p: f64, rho: f64, n: usize) -> f64 {
    debug_assert!(is_prob(p) && (-1.0..=1.0).contains(&rho) && n >= 2);
    let raw = p.powi(n as i32) + choose2(n) * rho * p * (1.0 - p);
    raw.clamp(0.0, 1.0)
}

fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

/// Builds the model from per-expert loadings `u` (so that `ρ_ij = u_i u_j`),
/// picking `P(Z)` in the middle (geometrically) of the feasible range.
fn params_from_loadings(marginals: &[f64], u: &[f64], seed: u64, target: f64) -> Result<ErrorModelParams, ErrorSimError> {
    // a_i ≤ 1 and b_i ≥ 0 translate into bounds on r = π/(1-π):
    // odds_i·u_i² ≤ r ≤ odds_i / u_i².
    let lo = marginals.iter().zip(u).map(|(&p, &ui)| odds(p) * ui * ui).fold(0.0, f64::max);
    let hi = marginals.iter().zip(u).map(|(&p, &ui)| odds(p) / (ui * ui)).fold(f64::INFINITY, f64::min);
    if lo > hi {
        return Err(ErrorSimError::Infeasible { target, min: 0.0, max: max_shared_rho(marginals) });
    }
    let r = (lo * hi).sqrt();
    let pi = r / (1.0 + r);
    let scale = (pi * (1.0 - pi)).sqrt();
    let (mut given_z, mut given_not_z) = (Vec::new(), Vec::new());
    for (&p, &ui) in marginals.iter().zip(u) {
        let d = ui * (p * (1.0 - p)).sqrt() / scale;
        given_z.push((p + (1.0 - pi) * d).clamp(0.0, 1.0));
        given_not_z.push((p - pi * d).clamp(0.0, 1.0));
    }
    Ok(ErrorModelParams {
        n_experts: marginals.len(),
        marginal_rates: marginals.to_vec(),
        z_probability: pi,
        conditional_given_z: given_z,
        conditional_given_not_z: given_not_z,
        seed,
    })
}

/// Largest common pairwise correlation a single shared factor can produce
/// for these marginals: `sqrt(min odds / max odds)`.
pub fn max_shared_rho(marginals: &[f64]) -> f64 {
    if marginals.iter().any(|&p| p <= 0.0 || p >= 1.0) {
        return 0.0;
    }
    let o: Vec<f64> = marginals.iter().map(|&p| odds(p)).collect();
    let (min, max) = o.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    (min / max).sqrt()
}

fn check_marginals(n: usize, marginals: &[f64]) -> Result<(), ErrorSimError> {
    if n < 2 || marginals.len() != n {
        return Err(ErrorSimError::InvalidInput("need n ≥ 2 and one marginal per expert".into()));
    }
    if !marginals.iter().copied().all(is_prob) {
        return Err(ErrorSimError::InvalidInput("marginals must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Params whose every pairwise correlation equals `target_rho`, with the
/// given marginals. Solved exactly rather than searched: equal loadings
/// `u_i = sqrt(target)` fix every conditional once `P(Z)` is chosen.
pub fn calibrate_shared_factor(n: usize, marginal_rates: &[f64], target_rho: f64, seed: u64) -> Result<ErrorModelParams, ErrorSimError> {
    check_marginals(n, marginal_rates)?;
    let max = max_shared_rho(marginal_rates);
    if target_rho == 0.0 {
        return Ok(ErrorModelParams::independent(marginal_rates.to_vec(), seed));
    }
    if !(0.0..=max).contains(&target_rho) {
        return Err(ErrorSimError::Infeasible { target: target_rho, min: 0.0, max });
    }
    params_from_loadings(marginal_rates, &vec![target_rho.sqrt(); n], seed, target_rho)
}

/// Params matching a distinct target correlation per expert pair. Every pair
/// `(i, j)` with `i < j` must be given. A one-factor model realizes
/// `ρ_ij = u_i u_j`; loadings are fitted by least squares in log space,
/// which is exact for three experts, and rejected if any pair misses its
/// target by more than [`CALIBRATION_TOLERANCE`].
pub fn calibrate_pairwise(marginal_rates: &[f64], targets: &[((usize, usize), f64)], seed: u64) -> Result<ErrorModelParams, ErrorSimError> {
    let n = marginal_rates.len();
    check_marginals(n, marginal_rates)?;
    let mut table = vec![vec![None; n]; n];
    for &((i, j), r) in targets {
        if i >= n || j >= n || i == j {
            return Err(ErrorSimError::InvalidInput(format!("bad pair ({i}, {j})")));
        }
        if !(r > 0.0 && r <= 1.0) {
            return Err(ErrorSimError::Infeasible { target: r, min: 0.0, max: max_shared_rho(marginal_rates) });
        }
        table[i.min(j)][i.max(j)] = Some(r);
    }
    let pairs: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| table[i][j].map(|r| (i, j, r)).ok_or_else(|| ErrorSimError::InvalidInput(format!("missing target for pair ({i}, {j})"))))
        .collect::<Result<_, _>>()?;

    // Normal equations of min Σ (ln u_i + ln u_j - ln r_ij)².
    let mut ata = vec![vec![0.0; n]; n];
    let mut atb = vec![0.0; n];
    for &(i, j, r) in &pairs {
        for (a, b) in [(i, i), (j, j), (i, j), (j, i)] {
            ata[a][b] += 1.0;
        }
        atb[i] += r.ln();
        atb[j] += r.ln();
    }
    let log_u = solve(ata, atb).ok_or_else(|| ErrorSimError::InvalidInput("target pairs do not determine the loadings".into()))?;
    let u: Vec<f64> = log_u.iter().map(|l| l.exp()).collect();
    let residual = pairs.iter().map(|&(i, j, r)| (u[i] * u[j] - r).abs()).fold(0.0, f64::max);
    if residual > CALIBRATION_TOLERANCE {
        return Err(ErrorSimError::Residual { residual });
    }
    if u.iter().any(|&x| x > 1.0) {
        return Err(ErrorSimError::Infeasible { target: pairs.iter().map(|p| p.2).fold(0.0, f64::max), min: 0.0, max: 1.0 });
    }
    let max_target = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    params_from_loadings(marginal_rates, &u, seed, max_target)
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
