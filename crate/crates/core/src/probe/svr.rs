//! L1-loss linear support vector regression.
//!
//! The solver is dual coordinate descent over the box-constrained dual
//!
//! ```text
//! min_beta  1/2 |sum_i beta_i x_i|^2 - sum_i y_i beta_i + epsilon sum_i |beta_i|
//! s.t.      -c <= beta_i <= c
//! ```
//!
//! with `w = sum_i beta_i x_i`. Each coordinate step solves its 1-D
//! subproblem exactly, so the dual objective never increases. Inputs are
//! standardized per dimension and augmented with a constant 1 column for
//! the intercept; targets are centred on their mean first so the (weakly
//! regularized) intercept only has to absorb the residual offset.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    /// Half-width of the insensitive tube.
    pub epsilon: f64,
    /// Loss weight.
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once an epoch lowers the objective by less than this fraction.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams {
            epsilon: 0.0,
            c: 1.0,
            max_epochs: 1000,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::usage(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::usage(format!("c must be > 0, got {}", self.c)));
        }
        if self.max_epochs == 0 {
            return Err(Error::usage("max_epochs must be positive"));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::usage("tolerance must be >= 0"));
        }
        Ok(())
    }
}

/// Per-dimension mean and standard deviation. Constant dimensions get a
/// scale of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stdevs: Vec<f64>,
    pub constant: Vec<bool>,
}

const CONSTANT_EPS: f64 = 1e-12;

impl Standardizer {
    /// Fits on the given rows of `x`.
    pub fn fit<T: Copy + Into<f64>>(x: ArrayView2<'_, T>, rows: &[usize]) -> Self {
        let d = x.ncols();
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for &r in rows {
            for (m, v) in means.iter_mut().zip(x.row(r)) {
                *m += (*v).into();
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&means) {
                let dv = (*v).into() - m;
                *s += dv * dv;
            }
        }
        let mut stdevs = Vec::with_capacity(d);
        let mut constant = Vec::with_capacity(d);
        for s in var {
            let sd = (s / n).sqrt();
            if sd > CONSTANT_EPS {
                stdevs.push(sd);
                constant.push(false);
            } else {
                stdevs.push(1.0);
                constant.push(true);
            }
        }
        Standardizer {
            means,
            stdevs,
            constant,
        }
    }

    /// Standardized copies of the given rows, row-major, each followed by a
    /// trailing 1 for the intercept.
    pub(crate) fn transform_augmented<T: Copy + Into<f64>>(&self, x: ArrayView2<'_, T>, rows: &[usize]) -> Vec<f64> {
        let d = x.ncols();
        let mut out = Vec::with_capacity(rows.len() * (d + 1));
        for &r in rows {
            for ((v, m), s) in x.row(r).iter().zip(&self.means).zip(&self.stdevs) {
                out.push(((*v).into() - m) / s);
            }
            out.push(1.0);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Weights on standardized inputs.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub input_standardization: Standardizer,
}

impl LinearModel {
    pub fn predict_one<T: Copy + Into<f64>>(&self, x: &[T]) -> f64 {
        let st = &self.input_standardization;
        self.bias
            + x.iter()
                .zip(&self.weights)
                .zip(st.means.iter().zip(&st.stdevs))
                .map(|((v, w), (m, s))| w * (((*v).into() - m) / s))
                .sum::<f64>()
    }

    pub fn predict<T: Copy + Into<f64>>(&self, x: ArrayView2<'_, T>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|row| {
                let v: Vec<T> = row.iter().copied().collect();
                self.predict_one(&v)
            })
            .collect()
    }
}

/// Raw solver output on augmented standardized rows.
pub(crate) struct DualSolution {
    /// `d + 1` weights, the last one multiplies the constant column.
    pub w: Vec<f64>,
    pub y_offset: f64,
    pub objective_trace: Vec<f64>,
}

impl DualSolution {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.y_offset + row.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Dual coordinate descent on augmented rows (`n x width`, row-major).
pub(crate) fn solve_dual(rows: &[f64], width: usize, y: &[f64], params: &SvrParams, seed: u64) -> DualSolution {
    let n = y.len();
    debug_assert_eq!(rows.len(), n * width);
    let y_offset = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_offset).collect();
    let row = |i: usize| &rows[i * width..(i + 1) * width];
    let qd: Vec<f64> = (0..n).map(|i| row(i).iter().map(|v| v * v).sum()).collect();

    let mut w = vec![0.0; width];
    let mut beta = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = params.c;
    let eps = params.epsilon;
    let mut trace = Vec::new();
    let mut prev = 0.0f64;

    for _epoch in 0..params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let h = qd[i];
            if h <= 0.0 {
                continue;
            }
            let xi = row(i);
            let g = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - yc[i];
            let b = beta[i];
            let gp = g + eps;
            let gn = g - eps;
            let step = if gp < h * b {
                -gp / h
            } else if gn > h * b {
                -gn / h
            } else {
                -b
            };
            let nb = (b + step).clamp(-c, c);
            let d = nb - b;
            if d != 0.0 {
                beta[i] = nb;
                w.iter_mut().zip(xi).for_each(|(wj, xj)| *wj += d * xj);
            }
        }
        let obj = 0.5 * w.iter().map(|v| v * v).sum::<f64>() - yc.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
            + eps * beta.iter().map(|b| b.abs()).sum::<f64>();
        trace.push(obj);
        let decrease = prev - obj;
        prev = obj;
        if decrease <= params.tolerance * obj.abs() {
            break;
        }
    }
    DualSolution {
        w,
        y_offset,
        objective_trace: trace,
    }
}

fn check_inputs(x: ArrayView2<'_, f64>, y: &[f64], params: &SvrParams) -> Result<()> {
    params.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::usage(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::usage("training needs at least two samples"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("training data contains non-finite values".into()));
    }
    Ok(())
}

/// Fits a linear SVR and also returns the per-epoch dual objective.
pub fn train_svr_traced(x: ArrayView2<'_, f64>, y: &[f64], params: &SvrParams) -> Result<(LinearModel, Vec<f64>)> {
    check_inputs(x, y, params)?;
    let rows: Vec<usize> = (0..y.len()).collect();
    let st = Standardizer::fit(x, &rows);
    let aug = st.transform_augmented(x, &rows);
    let sol = solve_dual(&aug, x.ncols() + 1, y, params, params.seed);
    let d = x.ncols();
    let model = LinearModel {
        weights: sol.w[..d].to_vec(),
        bias: sol.w[d] + sol.y_offset,
        input_standardization: st,
    };
    Ok((model, sol.objective_trace))
}

/// Fits a linear SVR on standardized inputs. Deterministic for a fixed
/// `params.seed`.
pub fn train_svr(x: ArrayView2<'_, f64>, y: &[f64], params: &SvrParams) -> Result<LinearModel> {
    train_svr_traced(x, y, params).map(|(m, _)| m)
}
