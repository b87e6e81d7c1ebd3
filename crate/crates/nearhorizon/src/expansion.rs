//! Horizon expansion of the value function.
//!
//! Near the terminal time the value function is approximated by
//!
//! ```text
//! U_hat(t, x, y) = U_T(x) + (T − t) · U1(x, y),
//! ```
//!
//! accurate to O((T − t)²) · f(x). Because the terminal utility depends on x
//! only through the total wealth s = Σ xᵢ, every x-derivative collapses to an
//! s-derivative: writing K_i(y) = Σ_k ρ_ik λ_k − 3 λ_i,
//!
//! ```text
//! U1 = Q(y) · R(s),   Q = ½ Σᵢ λᵢ Kᵢ + ⅛ Σᵢⱼ ρᵢⱼ Kᵢ Kⱼ,   R = U′² / U″,
//! ```
//!
//! and the x/y partial derivatives of U1 are products of Q-derivatives
//! (through λ(y)) and s-derivatives of R.
//!
//! The second-order coefficient U2 is assembled from the intermediates B,
//! Gᵢ, Hᵢ exactly as the order-(T−t) cancellation of the policy-substituted
//! HJB operator demands; see `u2` for the diagonal-term subtlety. U2 drives
//! the super/sub-solution envelopes that bracket the true value function.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::utility::{UtilityFamily, WealthPoint};

/// All partial derivatives of a candidate value function at one (t, x, y)
/// point: the currency between the expansion and the policy machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialBundle {
    pub value: f64,
    pub d_x: DVector<f64>,
    pub d_xx: DMatrix<f64>,
    pub d_y: f64,
    pub d_yy: f64,
    pub d_xy: DVector<f64>,
}

impl PartialBundle {
    /// Bundle of the terminal utility U_T at a wealth point. All x-partials
    /// are equal by the s-collapse and there is no y-dependence.
    pub fn terminal(utility: &UtilityFamily, x: &WealthPoint) -> Result<Self> {
        let n = x.n();
        let d = utility.u_derivs(x.total(), 2)?;
        Ok(PartialBundle {
            value: d[0],
            d_x: DVector::from_element(n, d[1]),
            d_xx: DMatrix::from_element(n, n, d[2]),
            d_y: 0.0,
            d_yy: 0.0,
            d_xy: DVector::from_element(n, 0.0),
        })
    }

    /// Bundle of the first-order approximation U_hat(t) = U_T + (T−t) U1.
    pub fn first_order(
        model: &MarketModel,
        utility: &UtilityFamily,
        t: f64,
        horizon: f64,
        x: &WealthPoint,
        y: f64,
    ) -> Result<Self> {
        check_time(t, horizon)?;
        let n = check_dims(model, x)?;
        let delta = horizon - t;
        let ud = utility.u_derivs(x.total(), 2)?;
        let terms = ExpansionTerms::compute(model, utility, x, y)?;
        Ok(PartialBundle {
            value: ud[0] + delta * terms.u1,
            d_x: DVector::from_fn(n, |i, _| ud[1] + delta * terms.u1_x[i]),
            d_xx: DMatrix::from_fn(n, n, |i, j| ud[2] + delta * terms.u1_xx[(i, j)]),
            d_y: delta * terms.u1_y,
            d_yy: delta * terms.u1_yy,
            d_xy: terms.u1_xy.map(|v| delta * v),
        })
    }

    pub fn n(&self) -> usize {
        self.d_x.len()
    }

    /// True when the bundle is consistent with a function of total wealth
    /// alone: all first partials equal, all second partials equal.
    pub fn is_wealth_symmetric(&self, tol: f64) -> bool {
        let d0 = self.d_x[0];
        let dd0 = self.d_xx[(0, 0)];
        self.d_x.iter().all(|&v| (v - d0).abs() <= tol * d0.abs().max(1.0))
            && self
                .d_xx
                .iter()
                .all(|&v| (v - dd0).abs() <= tol * dd0.abs().max(1.0))
    }
}

/// First-order coefficient with all its partial derivatives, plus the
/// second-order coefficient and its G/H intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionTerms {
    pub u1: f64,
    pub u1_x: DVector<f64>,
    pub u1_xx: DMatrix<f64>,
    pub u1_y: f64,
    pub u1_yy: f64,
    pub u1_xy: DVector<f64>,
    pub u2: f64,
    pub g: DVector<f64>,
    pub h: DVector<f64>,
}

/// Super/sub-solution values bracketing the value function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub upper: f64,
    pub lower: f64,
}

/// Sharpe-combination coefficients K_i = Σ_k ρ_ik λ_k − 3 λ_i and their
/// first two y-derivatives, obtained through λ(y).
struct FactorCoeffs {
    lam: Vec<f64>,
    k: Vec<f64>,
    /// Q, dQ/dy, d²Q/dy².
    q: [f64; 3],
}

fn factor_coeffs(model: &MarketModel, y: f64) -> FactorCoeffs {
    let n = model.n();
    let rho = model.rho();
    let fv = model.sharpe_vector(y);
    let lam: Vec<f64> = fv.iter().map(|v| v.value).collect();
    let lamp: Vec<f64> = fv.iter().map(|v| v.dy).collect();
    let lampp: Vec<f64> = fv.iter().map(|v| v.dyy).collect();
    let weighted = |w: &[f64], i: usize| -> f64 { (0..n).map(|k| rho[(i, k)] * w[k]).sum() };
    let k: Vec<f64> = (0..n).map(|i| weighted(&lam, i) - 3.0 * lam[i]).collect();
    let kp: Vec<f64> = (0..n).map(|i| weighted(&lamp, i) - 3.0 * lamp[i]).collect();
    let kpp: Vec<f64> = (0..n).map(|i| weighted(&lampp, i) - 3.0 * lampp[i]).collect();

    let mut l1 = [0.0f64; 3];
    for i in 0..n {
        l1[0] += lam[i] * k[i];
        l1[1] += lamp[i] * k[i] + lam[i] * kp[i];
        l1[2] += lampp[i] * k[i] + 2.0 * lamp[i] * kp[i] + lam[i] * kpp[i];
    }
    let mut l2 = [0.0f64; 3];
    for i in 0..n {
        for j in 0..n {
            let r = rho[(i, j)];
            l2[0] += r * k[i] * k[j];
            l2[1] += r * (kp[i] * k[j] + k[i] * kp[j]);
            l2[2] += r * (kpp[i] * k[j] + 2.0 * kp[i] * kp[j] + k[i] * kpp[j]);
        }
    }
    let q = [
        0.5 * l1[0] + 0.125 * l2[0],
        0.5 * l1[1] + 0.125 * l2[1],
        0.5 * l1[2] + 0.125 * l2[2],
    ];
    FactorCoeffs { lam, k, q }
}

/// R = U′²/U″ and its first two s-derivatives. Requires utility derivatives
/// to order 4; fails if U″ vanishes.
fn wealth_ratios(ud: &[f64]) -> Result<[f64; 3]> {
    let (u1, u2, u3, u4) = (ud[1], ud[2], ud[3], ud[4]);
    if u2 == 0.0 {
        return Err(Error::Singular(
            "second derivative of the utility vanishes".into(),
        ));
    }
    let r = u1 * u1 / u2;
    let rp = 2.0 * u1 - u1 * u1 * u3 / (u2 * u2);
    let rpp = 2.0 * u2 - 2.0 * u1 * u3 / u2 + 2.0 * u1 * u1 * u3 * u3 / (u2 * u2 * u2)
        - u1 * u1 * u4 / (u2 * u2);
    Ok([r, rp, rpp])
}

fn check_time(t: f64, horizon: f64) -> Result<()> {
    if !(0.0..=horizon).contains(&t) || !horizon.is_finite() {
        return Err(Error::Domain(format!(
            "time must satisfy 0 <= t <= T, got t = {t}, T = {horizon}"
        )));
    }
    Ok(())
}

fn check_dims(model: &MarketModel, x: &WealthPoint) -> Result<usize> {
    if model.n() != x.n() {
        return Err(Error::Domain(format!(
            "wealth dimension {} does not match model dimension {}",
            x.n(),
            model.n()
        )));
    }
    Ok(model.n())
}

impl ExpansionTerms {
    /// Computes U1, all of its partials, U2 and the G/H intermediates in one
    /// pass.
    pub fn compute(
        model: &MarketModel,
        utility: &UtilityFamily,
        x: &WealthPoint,
        y: f64,
    ) -> Result<Self> {
        let n = check_dims(model, x)?;
        let ud = utility.u_derivs(x.total(), 4)?;
        let fc = factor_coeffs(model, y);
        let [r, rp, rpp] = wealth_ratios(&ud)?;
        let [q, qy, qyy] = fc.q;

        let u1 = q * r;
        let u1_x = q * rp;
        let u1_xx = q * rpp;
        let u1_y = qy * r;
        let u1_yy = qyy * r;
        let u1_xy = qy * rp;

        let (up, upp) = (ud[1], ud[2]);
        let rho = model.rho();
        let a = model.a().value(y);
        let b = model.b().value(y);
        let omega = model.omega();
        let lam = &fc.lam;

        // Ratios u1_xlxl / u0_xlxl; equal across l under the s-collapse but
        // kept per-index so the sums below mirror the assembled expression.
        let rl = vec![u1_xx / upp; n];
        let big_b: f64 = rl.iter().sum();

        let g: Vec<f64> = (0..n).map(|i| fc.k[i] * up).collect();
        let mut h = vec![0.0f64; n];
        for i in 0..n {
            let mut acc = -3.0 * (lam[i] * u1_x + a * omega[i] * u1_xy + lam[i] * up * big_b);
            for k in 0..n {
                acc += rho[(i, k)] * (lam[k] * u1_x + a * omega[k] * u1_xy);
                acc += rho[(i, k)] * lam[k] * up * rl[k];
                acc += rho[(i, k)] * lam[k] * up * (big_b - rl[k]);
            }
            h[i] = acc;
        }

        let blocks = u2_block_values(n, rho, a, b, lam, omega, up, upp, u1, u1_x, u1_xx, u1_y,
            u1_yy, u1_xy, &rl, big_b, &g, &h);
        let u2 = blocks.iter().sum();

        Ok(ExpansionTerms {
            u1,
            u1_x: DVector::from_element(n, u1_x),
            u1_xx: DMatrix::from_element(n, n, u1_xx),
            u1_y,
            u1_yy,
            u1_xy: DVector::from_element(n, u1_xy),
            u2,
            g: DVector::from_vec(g),
            h: DVector::from_vec(h),
        })
    }
}

/// The four additive blocks of the second-order coefficient.
///
/// The order-(T−t) cancellation clears the common denominator
/// Π_l (u0_xlxl + δ D_l). Each term (i, j) of the double sum then carries
/// the factor Σ_{l≠i,j} D_l/u0_xlxl counted with multiplicity: a diagonal
/// term (i = j) drops D_i twice, so the factor is (n−1)B − r_i − r_j for
/// every pair. A single drop on the diagonal would contradict the exactly
/// solvable constant-coefficient value function at n = 1; the multiplicity
/// rule reproduces it, and is what the delta-order matching requires.
#[allow(clippy::too_many_arguments)]
fn u2_block_values(
    n: usize,
    rho: &DMatrix<f64>,
    a: f64,
    b: f64,
    lam: &[f64],
    omega: &[f64],
    up: f64,
    upp: f64,
    u1: f64,
    u1_x: f64,
    u1_xx: f64,
    u1_y: f64,
    u1_yy: f64,
    u1_xy: f64,
    rl: &[f64],
    big_b: f64,
    g: &[f64],
    h: &[f64],
) -> [f64; 4] {
    let nf = n as f64;
    let m1 = -(nf + 1.0) / 2.0 * u1 * big_b;

    let mut m2 = b / 2.0 * u1_y + a * a / 4.0 * u1_yy;
    for i in 0..n {
        m2 += a / 4.0 * g[i] * omega[i] * u1_xy / upp;
    }

    let mut m3 = 0.0;
    for i in 0..n {
        let excl: f64 = big_b - rl[i];
        m3 += 0.25 * lam[i] / upp
            * (h[i] * up + g[i] * u1_x + g[i] * up * ((nf - 1.0) * big_b + excl));
    }

    let mut m4 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let excl = (nf - 1.0) * big_b - rl[i] - rl[j];
            m4 += rho[(i, j)] / (upp * upp)
                * ((g[i] * h[j] + h[i] * g[j]) * upp + g[i] * g[j] * (u1_xx + upp * excl));
        }
    }
    m4 /= 16.0;

    [m1, m2, m3, m4]
}

/// First-order expansion coefficient U1(x, y).
pub fn u1(model: &MarketModel, utility: &UtilityFamily, x: &WealthPoint, y: f64) -> Result<f64> {
    check_dims(model, x)?;
    let ud = utility.u_derivs(x.total(), 4)?;
    let fc = factor_coeffs(model, y);
    let [r, _, _] = wealth_ratios(&ud)?;
    Ok(fc.q[0] * r)
}

/// Partial derivatives of U1 in every wealth coordinate and in the factor.
#[derive(Debug, Clone, PartialEq)]
pub struct U1Partials {
    pub xi: DVector<f64>,
    pub xixj: DMatrix<f64>,
    pub y: f64,
    pub yy: f64,
    pub xiy: DVector<f64>,
}

pub fn u1_partials(
    model: &MarketModel,
    utility: &UtilityFamily,
    x: &WealthPoint,
    y: f64,
) -> Result<U1Partials> {
    let terms = ExpansionTerms::compute(model, utility, x, y)?;
    Ok(U1Partials {
        xi: terms.u1_x,
        xixj: terms.u1_xx,
        y: terms.u1_y,
        yy: terms.u1_yy,
        xiy: terms.u1_xy,
    })
}

/// Second-order expansion coefficient U2(x, y).
pub fn u2(model: &MarketModel, utility: &UtilityFamily, x: &WealthPoint, y: f64) -> Result<f64> {
    Ok(ExpansionTerms::compute(model, utility, x, y)?.u2)
}

/// First-order approximation U_hat = U_T + (T − t) U1.
pub fn u_hat(
    model: &MarketModel,
    utility: &UtilityFamily,
    t: f64,
    horizon: f64,
    x: &WealthPoint,
    y: f64,
) -> Result<f64> {
    check_time(t, horizon)?;
    let terminal = utility.u_derivs(x.total(), 0)?[0];
    Ok(terminal + (horizon - t) * u1(model, utility, x, y)?)
}

/// Single-asset closed form U_T(s) − (T − t) λ² U′(s)² / (2 U″(s)),
/// algebraically identical to `u_hat` for any one-asset model.
pub fn u_hat_one_asset(
    lambda: f64,
    utility: &UtilityFamily,
    t: f64,
    horizon: f64,
    s: f64,
) -> Result<f64> {
    check_time(t, horizon)?;
    let ud = utility.u_derivs(s, 2)?;
    if ud[2] == 0.0 {
        return Err(Error::Singular(
            "second derivative of the utility vanishes".into(),
        ));
    }
    Ok(ud[0] - (horizon - t) * lambda * lambda * ud[1] * ud[1] / (2.0 * ud[2]))
}

/// Super- and sub-solution values U_hat ± (T−t)² · cap · f(x).
pub fn super_sub(
    model: &MarketModel,
    utility: &UtilityFamily,
    t: f64,
    horizon: f64,
    x: &WealthPoint,
    y: f64,
    u2_cap: f64,
) -> Result<Envelope> {
    if u2_cap <= 0.0 {
        return Err(Error::Domain(format!(
            "envelope cap must be positive, got {u2_cap}"
        )));
    }
    let center = u_hat(model, utility, t, horizon, x, y)?;
    let delta = horizon - t;
    let width = delta * delta * u2_cap * utility.f_order(x.total())?;
    Ok(Envelope {
        upper: center + width,
        lower: center - width,
    })
}

/// Scans the four U2 blocks over a finite (s, y) box and returns the cap
/// 1 + 4 · max |block| / f. A box supremum, not a global one: adequate for
/// envelopes on the evaluation domain since every block scales like f.
pub fn u2_bound_scan(
    model: &MarketModel,
    utility: &UtilityFamily,
    s_box: &[f64],
    y_grid: &[f64],
) -> Result<f64> {
    if s_box.is_empty() || y_grid.is_empty() {
        return Err(Error::Domain("scan box must be non-empty".into()));
    }
    let mut max_ratio = 0.0f64;
    for &y in y_grid {
        for &s in s_box {
            let x = WealthPoint::split_evenly(s, model.n())?;
            let f = utility.f_order(s)?;
            let blocks = expansion_blocks(model, utility, &x, y)?;
            for m in blocks {
                max_ratio = max_ratio.max(m.abs() / f);
            }
        }
    }
    Ok(1.0 + 4.0 * max_ratio)
}

/// The four additive blocks of U2 (their sum is `u2`).
pub fn expansion_blocks(
    model: &MarketModel,
    utility: &UtilityFamily,
    x: &WealthPoint,
    y: f64,
) -> Result<[f64; 4]> {
    let n = check_dims(model, x)?;
    let ud = utility.u_derivs(x.total(), 4)?;
    let fc = factor_coeffs(model, y);
    let [r, rp, rpp] = wealth_ratios(&ud)?;
    let [q, qy, qyy] = fc.q;
    let (u1v, u1_x, u1_xx) = (q * r, q * rp, q * rpp);
    let (u1_y, u1_yy, u1_xy) = (qy * r, qyy * r, qy * rp);
    let (up, upp) = (ud[1], ud[2]);
    let a = model.a().value(y);
    let b = model.b().value(y);
    let rl = vec![u1_xx / upp; n];
    let big_b: f64 = rl.iter().sum();
    let g: Vec<f64> = (0..n).map(|i| fc.k[i] * up).collect();
    let rho = model.rho();
    let mut h = vec![0.0f64; n];
    for i in 0..n {
        let mut acc =
            -3.0 * (fc.lam[i] * u1_x + a * model.omega()[i] * u1_xy + fc.lam[i] * up * big_b);
        for k in 0..n {
            acc += rho[(i, k)] * (fc.lam[k] * u1_x + a * model.omega()[k] * u1_xy);
            acc += rho[(i, k)] * fc.lam[k] * up * rl[k];
            acc += rho[(i, k)] * fc.lam[k] * up * (big_b - rl[k]);
        }
        h[i] = acc;
    }
    Ok(u2_block_values(
        n, rho, a, b, &fc.lam, model.omega(), up, upp, u1v, u1_x, u1_xx, u1_y, u1_yy, u1_xy,
        &rl, big_b, &g, &h,
    ))
}
