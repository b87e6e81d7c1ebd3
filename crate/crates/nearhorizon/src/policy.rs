//! HJB maximization machinery.
//!
//! The first-order condition of the HJB maximization couples the assets
//! through the correlation matrix; it reads as a linear system U π = v with
//!
//! ```text
//! u_ii = U_{x_i x_i},   u_ij = σ_j ρ_ij U_{x_i x_j} / (2 σ_i)  (i ≠ j),
//! v_i  = (−λ_i U_{x_i} − a ω_i U_{x_i y}) / σ_i.
//! ```
//!
//! Under diagonal dominance the Jacobi iteration converges from any start;
//! keeping only the first Neumann term (I + T) D⁻¹ v yields the closed-form
//! policy `pi_hat` whose truncation error is quadratic in the off-diagonal
//! magnitude.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expansion::{self, PartialBundle};
use crate::market::MarketModel;
use crate::utility::{UtilityFamily, WealthPoint};

/// The first-order-condition linear system.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbLinearSystem {
    pub mat: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl HjbLinearSystem {
    pub fn n(&self) -> usize {
        self.rhs.len()
    }

    /// |u_ii| > Σ_{j≠i} |u_ij| for every row.
    pub fn is_strictly_diagonally_dominant(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| {
            let off: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| self.mat[(i, j)].abs())
                .sum();
            self.mat[(i, i)].abs() > off
        })
    }
}

/// Assembles the first-order-condition system from a partial bundle.
pub fn assemble_system(
    bundle: &PartialBundle,
    model: &MarketModel,
    y: f64,
) -> Result<HjbLinearSystem> {
    let n = bundle.n();
    if model.n() != n {
        return Err(Error::Domain(format!(
            "bundle dimension {n} does not match model dimension {}",
            model.n()
        )));
    }
    for i in 0..n {
        if bundle.d_xx[(i, i)] == 0.0 {
            return Err(Error::Singular(format!(
                "zero diagonal second derivative for asset {i}"
            )));
        }
    }
    let sigma: Vec<f64> = model.sigma_vector(y).iter().map(|f| f.value).collect();
    let lambda: Vec<f64> = model.sharpe_vector(y).iter().map(|f| f.value).collect();
    let a = model.a().value(y);
    let rho = model.rho();
    let mat = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            bundle.d_xx[(i, i)]
        } else {
            sigma[j] * rho[(i, j)] * bundle.d_xx[(i, j)] / (2.0 * sigma[i])
        }
    });
    let rhs = DVector::from_fn(n, |i, _| {
        (-lambda[i] * bundle.d_x[i] - a * model.omega()[i] * bundle.d_xy[i]) / sigma[i]
    });
    Ok(HjbLinearSystem { mat, rhs })
}

/// Jacobi iteration result.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiSolution {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// ‖mat · solution − rhs‖_∞
    pub residual: f64,
}

/// Jacobi iteration x⁽ᵏ⁾ = D⁻¹ (v − (L+V) x⁽ᵏ⁻¹⁾) from x⁽⁰⁾ = 0, stopping
/// when the max-norm update drops below `tol`. Refuses systems that are not
/// strictly diagonally dominant.
pub fn jacobi_solve(sys: &HjbLinearSystem, tol: f64, max_iter: usize) -> Result<JacobiSolution> {
    if !sys.is_strictly_diagonally_dominant() {
        return Err(Error::NotDiagonallyDominant);
    }
    let n = sys.n();
    let mut x = DVector::zeros(n);
    let mut next = DVector::zeros(n);
    for iter in 1..=max_iter {
        for i in 0..n {
            let mut acc = sys.rhs[i];
            for j in 0..n {
                if j != i {
                    acc -= sys.mat[(i, j)] * x[j];
                }
            }
            next[i] = acc / sys.mat[(i, i)];
        }
        let update = (&next - &x).amax();
        std::mem::swap(&mut x, &mut next);
        if update < tol {
            let residual = (&sys.mat * &x - &sys.rhs).amax();
            return Ok(JacobiSolution {
                solution: x,
                iterations: iter,
                residual,
            });
        }
    }
    let residual = (&sys.mat * &x - &sys.rhs).amax();
    Err(Error::MaxIterations { max_iter, residual })
}

/// First-order Neumann truncation (I + T) D⁻¹ v:
/// πᵢ = vᵢ/uᵢᵢ − (1/uᵢᵢ) Σ_{k≠i} uᵢₖ vₖ / uₖₖ.
pub fn neumann_first_order(sys: &HjbLinearSystem) -> Result<DVector<f64>> {
    let n = sys.n();
    for i in 0..n {
        if sys.mat[(i, i)] == 0.0 {
            return Err(Error::Singular(format!("zero diagonal in row {i}")));
        }
    }
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let dii = sys.mat[(i, i)];
        let mut acc = sys.rhs[i] / dii;
        for k in 0..n {
            if k != i {
                acc -= sys.mat[(i, k)] * sys.rhs[k] / (dii * sys.mat[(k, k)]);
            }
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Closed-form near-optimal policy
/// πᵢ = [−3(λᵢ U_{xᵢ} + a ωᵢ U_{xᵢy}) + Σₖ ρᵢₖ (λₖ U_{xₖ} + a ωₖ U_{xₖy}) U_{xᵢxₖ}/U_{xₖxₖ}]
///      / (2 σᵢ U_{xᵢxᵢ}),
/// algebraically identical to `neumann_first_order(assemble_system(..))`.
pub fn pi_hat(bundle: &PartialBundle, model: &MarketModel, y: f64) -> Result<DVector<f64>> {
    let n = bundle.n();
    if model.n() != n {
        return Err(Error::Domain(format!(
            "bundle dimension {n} does not match model dimension {}",
            model.n()
        )));
    }
    let sigma: Vec<f64> = model.sigma_vector(y).iter().map(|f| f.value).collect();
    let lambda: Vec<f64> = model.sharpe_vector(y).iter().map(|f| f.value).collect();
    let a = model.a().value(y);
    let rho = model.rho();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        if bundle.d_xx[(i, i)] == 0.0 {
            return Err(Error::Singular(format!(
                "zero diagonal second derivative for asset {i}"
            )));
        }
        let mut acc = -3.0 * (lambda[i] * bundle.d_x[i] + a * model.omega()[i] * bundle.d_xy[i]);
        for k in 0..n {
            if bundle.d_xx[(k, k)] == 0.0 {
                return Err(Error::Singular(format!(
                    "zero diagonal second derivative for asset {k}"
                )));
            }
            acc += rho[(i, k)]
                * (lambda[k] * bundle.d_x[k] + a * model.omega()[k] * bundle.d_xy[k])
                * bundle.d_xx[(i, k)]
                / bundle.d_xx[(k, k)];
        }
        out[i] = acc / (2.0 * sigma[i] * bundle.d_xx[(i, i)]);
    }
    Ok(out)
}

/// Zeroth-order policy πᵢ = (Σₖ ρᵢₖ λₖ − 3λᵢ) U′ / (2 σᵢ U″): `pi_hat`
/// evaluated on the terminal bundle.
pub fn pi_zero(
    model: &MarketModel,
    utility: &UtilityFamily,
    x: &WealthPoint,
    y: f64,
) -> Result<DVector<f64>> {
    let bundle = PartialBundle::terminal(utility, x)?;
    pi_hat(&bundle, model, y)
}

/// Close-to-optimal policy: `pi_hat` on the bundle of the first-order
/// approximation U_hat(t).
pub fn tilde_pi(
    model: &MarketModel,
    utility: &UtilityFamily,
    t: f64,
    horizon: f64,
    x: &WealthPoint,
    y: f64,
) -> Result<DVector<f64>> {
    let bundle = expansion::PartialBundle::first_order(model, utility, t, horizon, x, y)?;
    pi_hat(&bundle, model, y)
}

/// The HJB drift operator at a given policy:
/// H = Σ σᵢπᵢλᵢ U_{xᵢ} + ½ Σ ρᵢⱼ σᵢσⱼ πᵢπⱼ U_{xᵢxⱼ}
///     + a Σ σᵢπᵢωᵢ U_{xᵢy} + b U_y + ½ a² U_{yy}.
pub fn hjb_operator(
    bundle: &PartialBundle,
    policy: &DVector<f64>,
    model: &MarketModel,
    y: f64,
) -> f64 {
    let n = bundle.n();
    let sigma: Vec<f64> = model.sigma_vector(y).iter().map(|f| f.value).collect();
    let lambda: Vec<f64> = model.sharpe_vector(y).iter().map(|f| f.value).collect();
    let a = model.a().value(y);
    let b = model.b().value(y);
    let rho = model.rho();
    let mut h = b * bundle.d_y + 0.5 * a * a * bundle.d_yy;
    for i in 0..n {
        h += sigma[i] * policy[i] * lambda[i] * bundle.d_x[i];
        h += a * sigma[i] * policy[i] * model.omega()[i] * bundle.d_xy[i];
        for j in 0..n {
            h += 0.5 * rho[(i, j)] * sigma[i] * sigma[j] * policy[i] * policy[j]
                * bundle.d_xx[(i, j)];
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn benchmark_model() -> MarketModel {
        let lam = 0.0002354511446f64.sqrt();
        MarketModel::new(
            vec![ScalarField::constant(0.2); 2],
            vec![ScalarField::constant(lam); 2],
            ScalarField::constant(1.0),
            ScalarField::constant(0.0),
            vec![0.0, 0.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5241, 0.5241, 1.0]),
            0.0,
        )
        .unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize) -> MarketModel {
        // correlations from a random Gram matrix, scaled to unit diagonal,
        // then shrunk toward identity so dominance holds
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0f64..1.0));
        let gram = &raw * raw.transpose() + DMatrix::<f64>::identity(n, n) * 0.5;
        let mut rho = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                rho[(i, j)] = 0.4 * gram[(i, j)] / (gram[(i, i)] * gram[(j, j)]).sqrt();
            }
        }
        for i in 0..n {
            rho[(i, i)] = 1.0;
        }
        let mut omega: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let norm: f64 = omega.iter().map(|w| w * w).sum();
        if norm >= 1.0 {
            for w in &mut omega {
                *w /= (norm + 0.1).sqrt();
            }
        }
        MarketModel::new(
            (0..n)
                .map(|_| ScalarField::constant(rng.gen_range(0.1..0.5)))
                .collect(),
            (0..n)
                .map(|_| ScalarField::tanh_bounded(
                    rng.gen_range(0.05..0.4),
                    rng.gen_range(-0.04..0.04),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(1.0..3.0),
                ))
                .collect(),
            ScalarField::constant(rng.gen_range(0.3..1.2)),
            ScalarField::constant(rng.gen_range(-0.3..0.3)),
            omega,
            rho,
            0.0,
        )
        .unwrap()
    }

    fn random_bundle(rng: &mut ChaCha8Rng, n: usize) -> PartialBundle {
        // wealth-symmetric with nonzero y-derivatives, concave diagonal
        let d1 = rng.gen_range(0.2..2.0);
        let d2 = -rng.gen_range(0.5..3.0);
        let dy = rng.gen_range(-0.5..0.5);
        PartialBundle {
            value: rng.gen_range(-1.0..1.0),
            d_x: DVector::from_element(n, d1),
            d_xx: DMatrix::from_element(n, n, d2),
            d_y: rng.gen_range(-0.5..0.5),
            d_yy: rng.gen_range(-0.5..0.5),
            d_xy: DVector::from_element(n, dy),
        }
    }

    #[test]
    fn assemble_one_asset() {
        let m = MarketModel::new(
            vec![ScalarField::constant(0.3)],
            vec![ScalarField::constant(0.2)],
            ScalarField::constant(0.7),
            ScalarField::constant(0.0),
            vec![0.4],
            DMatrix::identity(1, 1),
            0.0,
        )
        .unwrap();
        let b = PartialBundle {
            value: 0.0,
            d_x: DVector::from_element(1, 1.5),
            d_xx: DMatrix::from_element(1, 1, -2.0),
            d_y: 0.0,
            d_yy: 0.0,
            d_xy: DVector::from_element(1, 0.25),
        };
        let sys = assemble_system(&b, &m, 0.0).unwrap();
        assert_eq!(sys.mat[(0, 0)], -2.0);
        let expected = (-0.2 * 1.5 - 0.7 * 0.4 * 0.25) / 0.3;
        assert!((sys.rhs[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn assemble_identity_correlation_kills_off_diagonals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MarketModel::new(
            vec![ScalarField::constant(0.2), ScalarField::constant(0.4)],
            vec![ScalarField::constant(0.1); 2],
            ScalarField::constant(1.0),
            ScalarField::constant(0.0),
            vec![0.0, 0.0],
            DMatrix::identity(2, 2),
            0.0,
        )
        .unwrap();
        let b = random_bundle(&mut rng, 2);
        let sys = assemble_system(&b, &m, 0.0).unwrap();
        assert_eq!(sys.mat[(0, 1)], 0.0);
        assert_eq!(sys.mat[(1, 0)], 0.0);
    }

    #[test]
    fn assemble_benchmark_off_diagonal() {
        let m = benchmark_model();
        let u = UtilityFamily::power(1.0, 3.0).unwrap();
        let x = WealthPoint::split_evenly(1.0, 2).unwrap();
        let b = PartialBundle::terminal(&u, &x).unwrap();
        let sys = assemble_system(&b, &m, 27.9345).unwrap();
        // u_12 = sigma_2 rho_12 U'' / (2 sigma_1) with equal sigmas
        let upp = u.u_derivs(1.0, 2).unwrap()[2];
        assert!((sys.mat[(0, 1)] - 0.5241 * upp / 2.0).abs() < 1e-15);
        assert!(sys.is_strictly_diagonally_dominant());
    }

    #[test]
    fn jacobi_diagonal_system_is_exact() {
        let sys = HjbLinearSystem {
            mat: DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, -4.0]),
            rhs: DVector::from_column_slice(&[1.0, 2.0]),
        };
        let sol = jacobi_solve(&sys, 1e-12, 100).unwrap();
        assert_eq!(sol.solution[0], -0.5);
        assert_eq!(sol.solution[1], -0.5);
        assert!(sol.iterations <= 2);
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn jacobi_one_asset_is_exact() {
        let sys = HjbLinearSystem {
            mat: DMatrix::from_element(1, 1, -4.0),
            rhs: DVector::from_element(1, 0.6),
        };
        let sol = jacobi_solve(&sys, 1e-14, 100).unwrap();
        assert_eq!(sol.solution[0], 0.6 / -4.0);
    }

    #[test]
    fn jacobi_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = 4;
            let mut mat = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0f64..1.0));
            for i in 0..n {
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| mat[(i, j)].abs()).sum();
                mat[(i, i)] = -(off + rng.gen_range(0.5..2.0));
            }
            let rhs = DVector::from_fn(n, |_, _| rng.gen_range(-1.0f64..1.0));
            let sys = HjbLinearSystem {
                mat: mat.clone(),
                rhs: rhs.clone(),
            };
            let sol = jacobi_solve(&sys, 1e-13, 10_000).unwrap();
            let direct = mat.lu().solve(&rhs).unwrap();
            assert!((&sol.solution - &direct).amax() < 1e-10);
            assert!(sol.residual < 1e-10);
        }
    }

    #[test]
    fn jacobi_refuses_non_dominant() {
        let sys = HjbLinearSystem {
            mat: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            rhs: DVector::from_column_slice(&[1.0, 1.0]),
        };
        assert!(matches!(
            jacobi_solve(&sys, 1e-12, 100),
            Err(Error::NotDiagonallyDominant)
        ));
    }

    #[test]
    fn jacobi_iteration_limit() {
        let sys = HjbLinearSystem {
            mat: DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0]),
            rhs: DVector::from_column_slice(&[1.0, -1.0]),
        };
        match jacobi_solve(&sys, 1e-15, 2) {
            Err(Error::MaxIterations { residual, .. }) => assert!(residual.is_finite()),
            other => panic!("expected iteration-limit error, got {other:?}"),
        }
    }

    #[test]
    fn neumann_one_asset_and_identity_rho() {
        let sys = HjbLinearSystem {
            mat: DMatrix::from_element(1, 1, -4.0),
            rhs: DVector::from_element(1, 0.6),
        };
        assert_eq!(neumann_first_order(&sys).unwrap()[0], 0.6 / -4.0);

        // zero off-diagonals: truncation is exact
        let sys = HjbLinearSystem {
            mat: DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, -5.0]),
            rhs: DVector::from_column_slice(&[1.0, 2.0]),
        };
        let trunc = neumann_first_order(&sys).unwrap();
        let exact = jacobi_solve(&sys, 1e-14, 100).unwrap().solution;
        assert!((trunc - exact).amax() < 1e-15);
    }

    #[test]
    fn neumann_error_is_quadratic_in_off_diagonals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let mut base = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0f64..1.0));
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| base[(i, j)].abs()).sum();
            base[(i, i)] = -(off + 1.0);
        }
        let rhs = DVector::from_fn(n, |_, _| rng.gen_range(-1.0f64..1.0));
        let mut errs = Vec::new();
        let eps_grid = [0.2, 0.1, 0.05, 0.025];
        for &eps in &eps_grid {
            let mat = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    base[(i, i)]
                } else {
                    eps * base[(i, j)]
                }
            });
            let sys = HjbLinearSystem {
                mat: mat.clone(),
                rhs: rhs.clone(),
            };
            let trunc = neumann_first_order(&sys).unwrap();
            let exact = mat.lu().solve(&rhs).unwrap();
            errs.push(((&trunc - &exact).amax()) / exact.amax());
        }
        let slope = log_log_slope(&eps_grid, &errs);
        assert!(slope >= 1.9, "truncation slope {slope}");
    }

    pub(crate) fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
        let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
        cov / var
    }

    #[test]
    fn pi_hat_matches_neumann_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(1..=5);
            let m = random_model(&mut rng, n);
            let b = random_bundle(&mut rng, n);
            let y = rng.gen_range(-1.0..1.0);
            let direct = pi_hat(&b, &m, y).unwrap();
            let via_system = neumann_first_order(&assemble_system(&b, &m, y).unwrap()).unwrap();
            for i in 0..n {
                let denom = via_system[i].abs().max(1e-12);
                assert!(
                    ((direct[i] - via_system[i]) / denom).abs() < 1e-12,
                    "asset {i}: {} vs {}",
                    direct[i],
                    via_system[i]
                );
            }
        }
    }

    #[test]
    fn pi_hat_zero_without_premium_or_loadings() {
        let m = MarketModel::new(
            vec![ScalarField::constant(0.2); 2],
            vec![ScalarField::constant(0.0); 2],
            ScalarField::constant(1.0),
            ScalarField::constant(0.0),
            vec![0.0, 0.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
            0.0,
        )
        .unwrap();
        let u = UtilityFamily::log();
        let x = WealthPoint::split_evenly(1.0, 2).unwrap();
        let b = PartialBundle::terminal(&u, &x).unwrap();
        let p = pi_hat(&b, &m, 0.0).unwrap();
        assert!(p.amax() == 0.0);
    }

    #[test]
    fn pi_hat_terminal_benchmark_closed_form() {
        // at t = T with U_T = -s^{-2}/2: pi_i = lambda (2 - rho) s / (6 sigma)
        let m = benchmark_model();
        let u = UtilityFamily::power(1.0, 3.0).unwrap();
        let lam = 0.0002354511446f64.sqrt();
        for &s in &[0.5, 1.0, 2.0] {
            let x = WealthPoint::split_evenly(s, 2).unwrap();
            let b = PartialBundle::terminal(&u, &x).unwrap();
            let p = pi_hat(&b, &m, 27.9345).unwrap();
            let expected = lam * (2.0 - 0.5241) * s / (6.0 * 0.2);
            for i in 0..2 {
                assert!(((p[i] - expected) / expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pi_zero_special_cases() {
        // identity correlation: pi_i = -lambda_i U' / (sigma_i U'')
        let m = MarketModel::new(
            vec![ScalarField::constant(0.2), ScalarField::constant(0.4)],
            vec![ScalarField::constant(0.3), ScalarField::constant(0.1)],
            ScalarField::constant(1.0),
            ScalarField::constant(0.0),
            vec![0.0, 0.0],
            DMatrix::identity(2, 2),
            0.0,
        )
        .unwrap();
        let u = UtilityFamily::power(1.0, 3.0).unwrap();
        let x = WealthPoint::split_evenly(1.0, 2).unwrap();
        let d = u.u_derivs(1.0, 2).unwrap();
        let p = pi_zero(&m, &u, &x, 0.0).unwrap();
        for (i, (lam, sig)) in [(0.3f64, 0.2f64), (0.1, 0.4)].iter().enumerate() {
            let expected = -lam * d[1] / (sig * d[2]);
            assert!(((p[i] - expected) / expected).abs() < 1e-12);
        }

        // one-asset log utility: the classical growth-optimal fraction
        let m = MarketModel::new(
            vec![ScalarField::constant(0.25)],
            vec![ScalarField::constant(0.3)],
            ScalarField::constant(1.0),
            ScalarField::constant(0.0),
            vec![0.0],
            DMatrix::identity(1, 1),
            0.0,
        )
        .unwrap();
        for &s in &[0.5, 2.0] {
            let x = WealthPoint::new(vec![s]).unwrap();
            let p = pi_zero(&m, &UtilityFamily::log(), &x, 0.0).unwrap();
            let expected = 0.3 * s / 0.25;
            assert!(((p[0] - expected) / expected).abs() < 1e-12);
        }
    }

    #[test]
    fn tilde_pi_reduces_to_pi_zero_at_horizon() {
        let m = benchmark_model();
        let u = UtilityFamily::power(1.0, 3.0).unwrap();
        let x = WealthPoint::split_evenly(1.0, 2).unwrap();
        let at_horizon = tilde_pi(&m, &u, 2.0, 2.0, &x, 27.9345).unwrap();
        let zeroth = pi_zero(&m, &u, &x, 27.9345).unwrap();
        assert!((at_horizon - zeroth).amax() < 1e-15);
    }

    #[test]
    fn tilde_pi_is_time_independent_for_single_powers() {
        // a single power collapses (U' + dQR')/(U'' + dQR'') to -s/alpha,
        // so the near-optimal policy equals the zeroth-order one at any t
        let m = benchmark_model();
        let u = UtilityFamily::power(1.0, 3.0).unwrap();
        let x = WealthPoint::split_evenly(1.0, 2).unwrap();
        let zeroth = pi_zero(&m, &u, &x, 27.9345).unwrap();
        for &delta in &[0.5, 0.1, 0.01] {
            let p = tilde_pi(&m, &u, 2.0 - delta, 2.0, &x, 27.9345).unwrap();
            for i in 0..2 {
                assert!(((p[i] - zeroth[i]) / zeroth[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tilde_pi_stays_within_linear_band_of_pi_zero() {
        // power mixtures give a genuinely time-dependent policy
        let m = benchmark_model();
        let u = UtilityFamily::power_mixture(1.0, 2.0, 1.0, 4.0).unwrap();
        let x = WealthPoint::split_evenly(1.0, 2).unwrap();
        let y = 27.9345;
        let zeroth = pi_zero(&m, &u, &x, y).unwrap();
        let mut prev_ratio: Option<f64> = None;
        for &delta in &[0.4, 0.2, 0.1, 0.05] {
            let p = tilde_pi(&m, &u, 2.0 - delta, 2.0, &x, y).unwrap();
            let diff = (&p - &zeroth).amax();
            let ratio = diff / delta;
            if let Some(prev) = prev_ratio {
                // diff / delta approaches a constant: linear in delta
                assert!((ratio / prev - 1.0f64).abs() < 0.2);
            }
            prev_ratio = Some(ratio);
        }
    }

    #[test]
    fn hjb_operator_trivia() {
        let m = benchmark_model();
        let zero_bundle = PartialBundle {
            value: 0.0,
            d_x: DVector::zeros(2),
            d_xx: DMatrix::zeros(2, 2),
            d_y: 0.0,
            d_yy: 0.0,
            d_xy: DVector::zeros(2),
        };
        let policy = DVector::from_element(2, 0.3);
        assert_eq!(hjb_operator(&zero_bundle, &policy, &m, 0.0), 0.0);

        // no premium, no loadings, zero policy: only the factor terms remain
        let m = MarketModel::new(
            vec![ScalarField::constant(0.2)],
            vec![ScalarField::constant(0.0)],
            ScalarField::constant(0.7),
            ScalarField::constant(0.4),
            vec![0.0],
            DMatrix::identity(1, 1),
            0.0,
        )
        .unwrap();
        let bundle = PartialBundle {
            value: 0.0,
            d_x: DVector::from_element(1, 1.0),
            d_xx: DMatrix::from_element(1, 1, -1.0),
            d_y: 0.3,
            d_yy: -0.2,
            d_xy: DVector::from_element(1, 0.0),
        };
        let h = hjb_operator(&bundle, &DVector::zeros(1), &m, 0.0);
        assert!((h - (0.4 * 0.3 + 0.5 * 0.49 * (-0.2))).abs() < 1e-15);
    }

    #[test]
    fn hjb_operator_at_zeroth_order_recovers_u1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(1..=4);
            let m = random_model(&mut rng, n);
            let u = UtilityFamily::power(1.0, rng.gen_range(1.5..5.0)).unwrap();
            let x = WealthPoint::split_evenly(rng.gen_range(0.5..2.0), n).unwrap();
            let y = rng.gen_range(-1.0..1.0);
            let bundle = PartialBundle::terminal(&u, &x).unwrap();
            let policy = pi_zero(&m, &u, &x, y).unwrap();
            let h = hjb_operator(&bundle, &policy, &m, y);
            let first = expansion::u1(&m, &u, &x, y).unwrap();
            assert!(
                ((h - first) / first.abs().max(1e-300)).abs() < 1e-12,
                "H = {h}, U1 = {first}"
            );
        }
    }

    #[test]
    fn one_asset_policy_is_the_argmax() {
        // perturbing the policy by ±1% decreases the maximized expression
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let m = random_model(&mut rng, 1);
            let u = UtilityFamily::power(1.0, rng.gen_range(1.5..5.0)).unwrap();
            let x = WealthPoint::new(vec![rng.gen_range(0.5..2.0)]).unwrap();
            let y = rng.gen_range(-1.0..1.0);
            let bundle = PartialBundle::terminal(&u, &x).unwrap();
            let best = pi_hat(&bundle, &m, y).unwrap();
            let inner = |p: &DVector<f64>| hjb_operator(&bundle, p, &m, y);
            let at_best = inner(&best);
            for bump in [0.99, 1.01] {
                let perturbed = best.map(|v| v * bump);
                assert!(
                    inner(&perturbed) <= at_best + 1e-14 * at_best.abs(),
                    "perturbation should not improve the objective"
                );
            }
        }
    }
}
