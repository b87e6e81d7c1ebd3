//! Backward time-stepping approximation of the value function on a
//! (total wealth, factor) grid.
//!
//! Over a partition t₀ < t₁ < … < t_m = T the recursion is
//!
//! ```text
//! U(t_k) = U(t_{k+1}) + (t_{k+1} − t_k) · H(U(t_{k+1})),
//! ```
//!
//! where H is the HJB drift operator evaluated at the near-optimal policy
//! computed from the level's own grid values. The wealth collapse makes the
//! spatial state two-dimensional: derivatives in s and y come from
//! second-order central stencils, one-sided at the boundaries.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expansion::PartialBundle;
use crate::market::MarketModel;
use crate::policy::{hjb_operator, pi_hat};
use crate::utility::UtilityFamily;

/// One time level of the scheme: values over the s × y grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeGrid {
    pub s_axis: Vec<f64>,
    pub y_axis: Vec<f64>,
    /// `values[(i, j)] = U(t_level, s_axis[i], y_axis[j])`
    pub values: DMatrix<f64>,
    pub t_level: f64,
}

fn check_axis(name: &str, axis: &[f64], positive: bool) -> Result<f64> {
    if axis.len() < 5 {
        return Err(Error::GridTooCoarse(format!(
            "{name} axis needs at least 5 points for the derivative stencils, got {}",
            axis.len()
        )));
    }
    if positive && axis[0] <= 0.0 {
        return Err(Error::Domain(format!("{name} axis must be strictly positive")));
    }
    let h = axis[1] - axis[0];
    if h <= 0.0 {
        return Err(Error::Domain(format!("{name} axis must be strictly increasing")));
    }
    for w in axis.windows(2) {
        let step = w[1] - w[0];
        if step <= 0.0 {
            return Err(Error::Domain(format!("{name} axis must be strictly increasing")));
        }
        if ((step - h) / h).abs() > 1e-9 {
            return Err(Error::Domain(format!("{name} axis must be uniformly spaced")));
        }
    }
    Ok(h)
}

/// Second-order first and second derivatives along the rows (s-direction).
fn derivatives_s(v: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (ns, ny) = v.shape();
    let mut d1 = DMatrix::zeros(ns, ny);
    let mut d2 = DMatrix::zeros(ns, ny);
    for j in 0..ny {
        for i in 1..ns - 1 {
            d1[(i, j)] = (v[(i + 1, j)] - v[(i - 1, j)]) / (2.0 * h);
            d2[(i, j)] = (v[(i + 1, j)] - 2.0 * v[(i, j)] + v[(i - 1, j)]) / (h * h);
        }
        d1[(0, j)] = (-3.0 * v[(0, j)] + 4.0 * v[(1, j)] - v[(2, j)]) / (2.0 * h);
        d1[(ns - 1, j)] =
            (3.0 * v[(ns - 1, j)] - 4.0 * v[(ns - 2, j)] + v[(ns - 3, j)]) / (2.0 * h);
        d2[(0, j)] =
            (2.0 * v[(0, j)] - 5.0 * v[(1, j)] + 4.0 * v[(2, j)] - v[(3, j)]) / (h * h);
        d2[(ns - 1, j)] = (2.0 * v[(ns - 1, j)] - 5.0 * v[(ns - 2, j)] + 4.0 * v[(ns - 3, j)]
            - v[(ns - 4, j)])
            / (h * h);
    }
    (d1, d2)
}

/// Second-order first and second derivatives along the columns (y-direction).
fn derivatives_y(v: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (ns, ny) = v.shape();
    let mut d1 = DMatrix::zeros(ns, ny);
    let mut d2 = DMatrix::zeros(ns, ny);
    for i in 0..ns {
        for j in 1..ny - 1 {
            d1[(i, j)] = (v[(i, j + 1)] - v[(i, j - 1)]) / (2.0 * h);
            d2[(i, j)] = (v[(i, j + 1)] - 2.0 * v[(i, j)] + v[(i, j - 1)]) / (h * h);
        }
        d1[(i, 0)] = (-3.0 * v[(i, 0)] + 4.0 * v[(i, 1)] - v[(i, 2)]) / (2.0 * h);
        d1[(i, ny - 1)] =
            (3.0 * v[(i, ny - 1)] - 4.0 * v[(i, ny - 2)] + v[(i, ny - 3)]) / (2.0 * h);
        d2[(i, 0)] =
            (2.0 * v[(i, 0)] - 5.0 * v[(i, 1)] + 4.0 * v[(i, 2)] - v[(i, 3)]) / (h * h);
        d2[(i, ny - 1)] = (2.0 * v[(i, ny - 1)] - 5.0 * v[(i, ny - 2)]
            + 4.0 * v[(i, ny - 3)]
            - v[(i, ny - 4)])
            / (h * h);
    }
    (d1, d2)
}

/// Runs the backward recursion over the whole partition, returning one grid
/// per level in time-ascending order (the last entry is the terminal level).
pub fn scheme_run(
    model: &MarketModel,
    utility: &UtilityFamily,
    s_axis: &[f64],
    y_axis: &[f64],
    partition: &[f64],
) -> Result<Vec<SchemeGrid>> {
    let hs = check_axis("s", s_axis, true)?;
    let hy = check_axis("y", y_axis, false)?;
    if partition.len() < 2 {
        return Err(Error::Domain("partition needs at least two times".into()));
    }
    for w in partition.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Domain("partition must be strictly increasing".into()));
        }
    }
    let n = model.n();
    let (ns, ny) = (s_axis.len(), y_axis.len());

    let mut values = DMatrix::zeros(ns, ny);
    for i in 0..ns {
        let terminal = utility.u_derivs(s_axis[i], 0)?[0];
        for j in 0..ny {
            values[(i, j)] = terminal;
        }
    }
    let mut levels = vec![SchemeGrid {
        s_axis: s_axis.to_vec(),
        y_axis: y_axis.to_vec(),
        values: values.clone(),
        t_level: *partition.last().unwrap(),
    }];

    for k in (0..partition.len() - 1).rev() {
        let dt = partition[k + 1] - partition[k];
        let (us, uss) = derivatives_s(&values, hs);
        let (uy, uyy) = derivatives_y(&values, hy);
        let (usy, _) = derivatives_s(&uy, hs);

        let drift: Vec<f64> = (0..ns * ny)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx % ns, idx / ns);
                let y = y_axis[j];
                let bundle = PartialBundle {
                    value: values[(i, j)],
                    d_x: DVector::from_element(n, us[(i, j)]),
                    d_xx: DMatrix::from_element(n, n, uss[(i, j)]),
                    d_y: uy[(i, j)],
                    d_yy: uyy[(i, j)],
                    d_xy: DVector::from_element(n, usy[(i, j)]),
                };
                let policy = pi_hat(&bundle, model, y)?;
                Ok(hjb_operator(&bundle, &policy, model, y))
            })
            .collect::<Result<Vec<f64>>>()?;

        let mut next = DMatrix::zeros(ns, ny);
        for idx in 0..ns * ny {
            let (i, j) = (idx % ns, idx / ns);
            next[(i, j)] = values[(i, j)] + dt * drift[idx];
        }
        values = next;
        levels.push(SchemeGrid {
            s_axis: s_axis.to_vec(),
            y_axis: y_axis.to_vec(),
            values: values.clone(),
            t_level: partition[k],
        });
    }

    levels.reverse();
    Ok(levels)
}

/// Uniform axis helper.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && hi > lo);
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}
