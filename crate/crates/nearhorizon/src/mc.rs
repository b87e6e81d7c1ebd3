//! Euler–Maruyama simulation of the wealth and factor dynamics, and the
//! Monte-Carlo estimator of expected terminal utility.
//!
//! The discretized dynamics under a policy π are
//!
//! ```text
//! ΔXᵢ = σᵢ(Y) πᵢ(τ, X, Y) (λᵢ(Y) Δτ + ΔWᵢ)
//! ΔY  = b(Y) Δτ + a(Y) [ Σᵢ ωᵢ ΔWᵢ + (1 − Σᵢ ωᵢ²)^{1/2} ΔW₀ ]
//! ```
//!
//! with ΔW = L z √Δτ drawn through the Cholesky factor L of ρ and an
//! independent ΔW₀. Each path owns an RNG substream derived from the master
//! seed by counter splitting, so results are deterministic regardless of
//! thread scheduling; aggregation uses ordered pairwise summation for the
//! same reason.
//!
//! Wealth components are clamped at a positivity floor with a per-path
//! touch counter; the admissibility integrand σᵢ²πᵢ²/Xᵢ² is accumulated as
//! an empirical diagnostic.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::stats::{log_log_slope, mean_and_stderr};
use crate::utility::{UtilityFamily, WealthPoint};

/// Fraction of floored paths above which an estimate is flagged.
pub const FLOOR_ALARM_FRACTION: f64 = 0.001;

/// Simulation knobs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Time step; the actual step is (T − t)/⌈(T − t)/dt⌉.
    pub dt: f64,
    pub seed: u64,
    /// Positivity floor relative to the smallest initial wealth component.
    #[serde(default = "default_floor")]
    pub positivity_floor: f64,
    /// Work budget: n_paths × steps may not exceed this.
    #[serde(default = "default_budget")]
    pub max_total_steps: u64,
}

fn default_floor() -> f64 {
    1e-10
}

fn default_budget() -> u64 {
    8_000_000_000
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 100_000,
            dt: 1e-3,
            seed: 42,
            positivity_floor: default_floor(),
            max_total_steps: default_budget(),
        }
    }
}

/// Terminal states of a simulated path ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    n_assets: usize,
    /// Row-major (path, asset) terminal wealth, every entry ≥ `floor`.
    terminal_wealth: Vec<f64>,
    pub terminal_factor: Vec<f64>,
    /// Paths that touched the positivity floor at least once.
    pub floored_count: usize,
    /// Absolute floor applied to wealth components.
    pub floor: f64,
    /// Path average of the accumulated admissibility integrand
    /// Σᵢ ∫ σᵢ²πᵢ²/Xᵢ² dτ.
    pub admissibility_mean: f64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.terminal_factor.len()
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn wealth(&self, path: usize) -> &[f64] {
        &self.terminal_wealth[path * self.n_assets..(path + 1) * self.n_assets]
    }

    pub fn total_wealth(&self, path: usize) -> f64 {
        self.wealth(path).iter().sum()
    }
}

/// A portfolio policy mapping (τ, wealth, factor) to per-asset discounted
/// positions. Implementations must be pure and thread-safe.
pub trait Policy: Sync {
    fn allocate(&self, tau: f64, x: &[f64], y: f64, out: &mut [f64]);
}

/// π ≡ 0: never invest in the risky assets.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn allocate(&self, _tau: f64, _x: &[f64], _y: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// A fixed position vector.
pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    fn allocate(&self, _tau: f64, _x: &[f64], _y: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Wraps a plain function as a policy.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(f64, &[f64], f64, &mut [f64]) + Sync> Policy for FnPolicy<F> {
    fn allocate(&self, tau: f64, x: &[f64], y: f64, out: &mut [f64]) {
        (self.0)(tau, x, y, out)
    }
}

/// The close-to-optimal policy: `policy::pi_hat` applied to the bundle of
/// the first-order approximation at horizon `horizon`.
///
/// Under the wealth collapse every second-derivative ratio in the closed
/// form equals one, so the allocation reduces to
/// πᵢ = [Kᵢ d_x + a Kωᵢ d_xy] / (2 σᵢ d_xx) with Kᵢ = Σₖ ρᵢₖ λₖ − 3λᵢ and
/// Kωᵢ = Σₖ ρᵢₖ ωₖ − 3ωᵢ, which is what this hot path evaluates.
pub struct TildePiPolicy<'a> {
    pub model: &'a MarketModel,
    pub utility: &'a UtilityFamily,
    pub horizon: f64,
}

impl Policy for TildePiPolicy<'_> {
    fn allocate(&self, tau: f64, x: &[f64], y: f64, out: &mut [f64]) {
        let model = self.model;
        let n = model.n();
        let delta = self.horizon - tau;
        let s: f64 = x.iter().sum();
        let ud = self
            .utility
            .u_derivs(s, 4)
            .expect("wealth stays positive under the floor");
        let rho = model.rho();
        let omega = model.omega();
        let a = model.a().value(y);

        // Q and dQ/dy through the Sharpe fields
        let lam_fields = model.lambda_fields();
        let lam = |k: usize| lam_fields[k].eval(y);
        let mut l1 = 0.0;
        let mut l1p = 0.0;
        let mut l2 = 0.0;
        let mut l2p = 0.0;
        for i in 0..n {
            let li = lam(i);
            let mut ki = -3.0 * li.value;
            let mut kip = -3.0 * li.dy;
            for k in 0..n {
                let lk = lam(k);
                ki += rho[(i, k)] * lk.value;
                kip += rho[(i, k)] * lk.dy;
            }
            l1 += li.value * ki;
            l1p += li.dy * ki + li.value * kip;
            for j in 0..n {
                let lj = lam(j);
                let mut kj = -3.0 * lj.value;
                let mut kjp = -3.0 * lj.dy;
                for k in 0..n {
                    let lk = lam(k);
                    kj += rho[(j, k)] * lk.value;
                    kjp += rho[(j, k)] * lk.dy;
                }
                l2 += rho[(i, j)] * ki * kj;
                l2p += rho[(i, j)] * (kip * kj + ki * kjp);
            }
        }
        let q = 0.5 * l1 + 0.125 * l2;
        let qy = 0.5 * l1p + 0.125 * l2p;

        let (up, upp, uppp, upppp) = (ud[1], ud[2], ud[3], ud[4]);
        let rp = 2.0 * up - up * up * uppp / (upp * upp);
        let rpp = 2.0 * upp - 2.0 * up * uppp / upp + 2.0 * up * up * uppp * uppp / (upp.powi(3))
            - up * up * upppp / (upp * upp);
        let d_x = up + delta * q * rp;
        let d_xx = upp + delta * q * rpp;
        let d_xy = delta * qy * rp;

        for i in 0..n {
            let li = lam(i);
            let mut k_i = -3.0 * li.value;
            let mut kw_i = -3.0 * omega[i];
            for k in 0..n {
                k_i += rho[(i, k)] * lam(k).value;
                kw_i += rho[(i, k)] * omega[k];
            }
            let sigma_i = model.sigma_fields()[i].value(y);
            out[i] = (k_i * d_x + a * kw_i * d_xy) / (2.0 * sigma_i * d_xx);
        }
    }
}

/// Correlated Brownian increment sampler with a precomputed Cholesky
/// factor (1e-12 diagonal jitter fallback for marginally non-PSD inputs).
#[derive(Debug, Clone)]
pub struct CorrelatedSampler {
    chol: DMatrix<f64>,
}

impl CorrelatedSampler {
    pub fn new(rho: &DMatrix<f64>) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(rho.clone())
            .or_else(|| {
                let jittered = rho + DMatrix::<f64>::identity(rho.nrows(), rho.ncols()) * 1e-12;
                nalgebra::Cholesky::new(jittered)
            })
            .ok_or_else(|| {
                Error::Domain("correlation matrix is not positive semi-definite".into())
            })?;
        Ok(CorrelatedSampler { chol: chol.l() })
    }

    pub fn n(&self) -> usize {
        self.chol.nrows()
    }

    /// Draws (ΔW, ΔW₀): ΔW = L z √dt with i.i.d. standard normal z, and an
    /// independent ΔW₀ = z₀ √dt.
    pub fn increments<R: Rng>(&self, rng: &mut R, dt: f64) -> (Vec<f64>, f64) {
        let n = self.n();
        let mut z = vec![0.0; n];
        let mut dw = vec![0.0; n];
        let dw0 = self.increments_into(rng, dt, &mut z, &mut dw);
        (dw, dw0)
    }

    /// Buffer-reusing variant for hot loops.
    fn increments_into<R: Rng>(&self, rng: &mut R, dt: f64, z: &mut [f64], dw: &mut [f64]) -> f64 {
        let n = self.n();
        let sq = dt.sqrt();
        for zi in z.iter_mut() {
            *zi = rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.chol[(i, j)] * z[j];
            }
            dw[i] = acc * sq;
        }
        rng.sample::<f64, _>(StandardNormal) * sq
    }
}

/// Simulates the ensemble from (t, x0, y0) to the horizon under `policy`.
pub fn simulate_paths<P: Policy + ?Sized>(
    model: &MarketModel,
    policy: &P,
    x0: &WealthPoint,
    y0: f64,
    t: f64,
    horizon: f64,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    if model.n() != x0.n() {
        return Err(Error::Domain(format!(
            "wealth dimension {} does not match model dimension {}",
            x0.n(),
            model.n()
        )));
    }
    if !t.is_finite() || !horizon.is_finite() || t >= horizon {
        return Err(Error::Domain(format!(
            "simulation needs t < T, got t = {t}, T = {horizon}"
        )));
    }
    if cfg.n_paths == 0 || cfg.dt <= 0.0 || cfg.positivity_floor <= 0.0 {
        return Err(Error::Domain(
            "simulation needs n_paths >= 1, dt > 0 and a positive floor".into(),
        ));
    }
    let span = horizon - t;
    let steps = (span / cfg.dt).ceil().max(1.0) as usize;
    let requested = cfg.n_paths as u64 * steps as u64;
    if requested > cfg.max_total_steps {
        return Err(Error::BudgetExceeded {
            requested,
            budget: cfg.max_total_steps,
        });
    }
    let dt = span / steps as f64;
    let n = model.n();
    let sampler = CorrelatedSampler::new(model.rho())?;
    let omega = model.omega().to_vec();
    let omega_rest = (1.0 - omega.iter().map(|w| w * w).sum::<f64>()).max(0.0).sqrt();
    let floor = cfg.positivity_floor
        * x0.components()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);

    struct PathOut {
        x: Vec<f64>,
        y: f64,
        floored: bool,
        admissibility: f64,
    }

    let paths: Vec<PathOut> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(p as u64);
            let mut x = x0.components().to_vec();
            let mut y = y0;
            let mut z = vec![0.0; n];
            let mut dw = vec![0.0; n];
            let mut pi = vec![0.0; n];
            let mut floored = false;
            let mut admissibility = 0.0;
            for k in 0..steps {
                let tau = t + k as f64 * dt;
                let dw0 = sampler.increments_into(&mut rng, dt, &mut z, &mut dw);
                policy.allocate(tau, &x, y, &mut pi);
                let a = model.a().value(y);
                let b = model.b().value(y);
                let mut factor_noise = 0.0;
                for i in 0..n {
                    let sigma = model.sigma_fields()[i].value(y);
                    let lambda = model.lambda_fields()[i].value(y);
                    let exposure = sigma * pi[i];
                    admissibility += exposure * exposure / (x[i] * x[i]) * dt;
                    x[i] += exposure * (lambda * dt + dw[i]);
                    if x[i] < floor {
                        x[i] = floor;
                        floored = true;
                    }
                    factor_noise += omega[i] * dw[i];
                }
                y += b * dt + a * (factor_noise + omega_rest * dw0);
            }
            PathOut {
                x,
                y,
                floored,
                admissibility,
            }
        })
        .collect();

    let mut terminal_wealth = Vec::with_capacity(cfg.n_paths * n);
    let mut terminal_factor = Vec::with_capacity(cfg.n_paths);
    let mut floored_count = 0;
    let mut admissibility = Vec::with_capacity(cfg.n_paths);
    for p in paths {
        terminal_wealth.extend_from_slice(&p.x);
        terminal_factor.push(p.y);
        floored_count += p.floored as usize;
        admissibility.push(p.admissibility);
    }
    let admissibility_mean = mean_and_stderr(&admissibility).0;
    Ok(PathEnsemble {
        n_assets: n,
        terminal_wealth,
        terminal_factor,
        floored_count,
        floor,
        admissibility_mean,
    })
}

/// Monte-Carlo estimate of expected terminal utility.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Set when more than 0.1% of paths touched the positivity floor;
    /// floored paths still contribute to the estimate.
    pub floor_alarm: bool,
}

pub fn mc_expected_utility(
    ensemble: &PathEnsemble,
    utility: &UtilityFamily,
) -> Result<UtilityEstimate> {
    if ensemble.n_paths() == 0 {
        return Err(Error::Domain("empty path ensemble".into()));
    }
    let values: Vec<f64> = (0..ensemble.n_paths())
        .map(|p| {
            let s = ensemble.total_wealth(p);
            utility.u_derivs(s, 0).map(|d| d[0])
        })
        .collect::<Result<_>>()?;
    let (mean, stderr) = mean_and_stderr(&values);
    let floor_alarm =
        ensemble.floored_count as f64 > FLOOR_ALARM_FRACTION * ensemble.n_paths() as f64;
    Ok(UtilityEstimate {
        mean,
        stderr,
        floor_alarm,
    })
}

/// One horizon offset of the error-scaling study.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ErrorScalingPoint {
    pub delta: f64,
    pub mc_mean: f64,
    pub stderr: f64,
    pub u_hat: f64,
    pub abs_error: f64,
    /// |error| ≤ 3 stderr: excluded from the slope fit.
    pub indistinguishable: bool,
    pub floor_alarm: bool,
}

/// Error-scaling study result.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ErrorScalingStudy {
    pub points: Vec<ErrorScalingPoint>,
    /// Log-log slope over the distinguishable points; absent when fewer
    /// than two points survive.
    pub fitted_slope: Option<f64>,
}

/// Simulates from t = T − δ under the close-to-optimal policy for each δ
/// and fits log |E − U_hat| against log δ.
pub fn error_scaling_study(
    model: &MarketModel,
    utility: &UtilityFamily,
    x0: &WealthPoint,
    y0: f64,
    horizon: f64,
    deltas: &[f64],
    cfg: &SimConfig,
) -> Result<ErrorScalingStudy> {
    let policy = TildePiPolicy {
        model,
        utility,
        horizon,
    };
    error_scaling_study_with_policy(model, utility, x0, y0, horizon, deltas, cfg, &policy)
}

/// Same study under an arbitrary policy (used to contrast against the null
/// policy, whose error scales only linearly).
#[allow(clippy::too_many_arguments)]
pub fn error_scaling_study_with_policy<P: Policy + ?Sized>(
    model: &MarketModel,
    utility: &UtilityFamily,
    x0: &WealthPoint,
    y0: f64,
    horizon: f64,
    deltas: &[f64],
    cfg: &SimConfig,
    policy: &P,
) -> Result<ErrorScalingStudy> {
    if deltas.is_empty() {
        return Err(Error::Domain("study needs at least one delta".into()));
    }
    for w in deltas.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Domain(
                "deltas must be positive and sorted descending".into(),
            ));
        }
    }
    if deltas[deltas.len() - 1] <= 0.0 || deltas[0] > horizon {
        return Err(Error::Domain(
            "deltas must lie inside (0, T]".into(),
        ));
    }
    let mut points = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let t = horizon - delta;
        let ensemble = simulate_paths(model, policy, x0, y0, t, horizon, cfg)?;
        let estimate = mc_expected_utility(&ensemble, utility)?;
        let reference = crate::expansion::u_hat(model, utility, t, horizon, x0, y0)?;
        let abs_error = (estimate.mean - reference).abs();
        points.push(ErrorScalingPoint {
            delta,
            mc_mean: estimate.mean,
            stderr: estimate.stderr,
            u_hat: reference,
            abs_error,
            indistinguishable: abs_error <= 3.0 * estimate.stderr,
            floor_alarm: estimate.floor_alarm,
        });
    }
    let usable: Vec<&ErrorScalingPoint> =
        points.iter().filter(|p| !p.indistinguishable).collect();
    let fitted_slope = if usable.len() >= 2 {
        let xs: Vec<f64> = usable.iter().map(|p| p.delta).collect();
        let ys: Vec<f64> = usable.iter().map(|p| p.abs_error).collect();
        Some(log_log_slope(&xs, &ys))
    } else {
        None
    };
    Ok(ErrorScalingStudy {
        points,
        fitted_slope,
    })
}
