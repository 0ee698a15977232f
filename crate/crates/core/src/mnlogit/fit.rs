use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::ModelData;
use super::{CoefficientSet, ModelSpec};
use crate::error::{Error, Result};
use crate::ingest::ObservationRecord;

/// Coefficient magnitude beyond which a still-improving fit is reported as
/// possible separation.
const SEPARATION_NORM: f64 = 1e3;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Convergence threshold on the raw-scale gradient, each component
    /// divided by the largest magnitude of its design column (when above 1).
    pub tolerance: f64,
    pub max_iter: usize,
    /// Ridge added to the Newton system when it is numerically singular.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-8,
            max_iter: 200,
            ridge: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: CoefficientSet,
    /// Solver layout: per equation, intercept then terms.
    pub params: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_max_norm: f64,
    /// Largest ridge used to regularise the Newton system, if any.
    pub ridge_used: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn fit(data: &[ObservationRecord], spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    let md = ModelData::build(data, spec)?;
    fit_data(&md, spec, options)
}

/// Column centring and scaling for one parameter block.
struct Scaling {
    mean: Vec<f64>,
    scale: Vec<f64>,
    intercept: Vec<bool>,
    /// Intercept index of the block each parameter belongs to.
    block_start: Vec<usize>,
}

impl Scaling {
    fn new(md: &ModelData) -> Self {
        let p = md.n_params();
        let n = md.rows.len() as f64;
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        let mut intercept = vec![false; p];
        let mut block_start = vec![0; p];
        for (&o, &w) in md.offsets.iter().zip(&md.widths) {
            intercept[o] = true;
            for j in o..o + w {
                block_start[j] = o;
            }
            for j in o + 1..o + w {
                let m = md.rows.iter().map(|r| r.design[j]).sum::<f64>() / n;
                let var = md.rows.iter().map(|r| (r.design[j] - m).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 * (1.0 + m.abs()) {
                    mean[j] = m;
                    scale[j] = sd;
                }
            }
        }
        Scaling {
            mean,
            scale,
            intercept,
            block_start,
        }
    }

    fn apply(&self, md: &ModelData) -> ModelData {
        let mut out = md.clone();
        for r in &mut out.rows {
            for (j, x) in r.design.iter_mut().enumerate() {
                if !self.intercept[j] {
                    *x = (*x - self.mean[j]) / self.scale[j];
                }
            }
        }
        out
    }

    fn to_raw(&self, scaled: &[f64]) -> Vec<f64> {
        let mut raw: Vec<f64> = scaled
            .iter()
            .enumerate()
            .map(|(j, &t)| if self.intercept[j] { t } else { t / self.scale[j] })
            .collect();
        for j in 0..raw.len() {
            if !self.intercept[j] {
                raw[self.block_start[j]] -= raw[j] * self.mean[j];
            }
        }
        raw
    }

    fn gradient_to_raw(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .enumerate()
            .map(|(j, &gj)| {
                if self.intercept[j] {
                    gj
                } else {
                    self.mean[j] * g[self.block_start[j]] + self.scale[j] * gj
                }
            })
            .collect()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Largest absolute value in each design column, floored at 1.
fn column_magnitudes(md: &ModelData) -> Vec<f64> {
    let mut mag = vec![1.0f64; md.n_params()];
    for r in &md.rows {
        for (m, x) in mag.iter_mut().zip(&r.design) {
            *m = m.max(x.abs());
        }
    }
    mag
}

/// Gradient norm used for convergence. A raw gradient of 1e-5 on a column
/// whose values reach 1e9 is at machine precision, so each component is
/// measured per unit of its column's magnitude.
fn relative_gradient_norm(g: &[f64], magnitude: &[f64]) -> f64 {
    g.iter().zip(magnitude).fold(0.0, |m, (x, s)| m.max(x.abs() / s))
}

/// Solves `a d = g` for positive definite `a`, or `None`.
fn chol_solve(a: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    let d = chol.solve(g);
    d.iter().all(|x| x.is_finite()).then_some(d)
}

/// Maximises the weighted log-likelihood by damped Newton iterations on
/// centred and scaled columns.
///
/// The observed information is used when positive definite, otherwise the
/// expected information; a ridge on non-intercept terms is added only if
/// that is singular too.
pub fn fit_data(md: &ModelData, spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    if md.n_params() != spec.n_params() {
        return Err(Error::validation("model data was built for a different spec"));
    }
    let scaling = Scaling::new(md);
    let magnitude = column_magnitudes(md);
    let smd = scaling.apply(md);
    let p = smd.n_params();
    let mut theta = vec![0.0; p];
    let mut warnings: Vec<String> = Vec::new();
    let mut ridge_used: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut separation_warned = false;

    let mut ev = smd.evaluate(&theta, true);
    let mut grad_raw = scaling.gradient_to_raw(&ev.gradient);
    loop {
        if !ev.loglik.is_finite() {
            return Err(Error::numerical(format!(
                "log-likelihood became non-finite after {iterations} iterations"
            )));
        }
        if relative_gradient_norm(&grad_raw, &magnitude) <= options.tolerance {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;

        let g = DVector::from_column_slice(&ev.gradient);
        let neg_h = -ev.hessian.take().expect("second order");
        let fisher = ev.fisher.take().expect("second order");
        let direction = match chol_solve(&neg_h, &g) {
            Some(d) => d,
            None => match chol_solve(&fisher, &g) {
                Some(d) => d,
                None => {
                    let mut ridge = options.ridge.max(f64::MIN_POSITIVE);
                    loop {
                        let mut a = fisher.clone();
                        for j in 0..p {
                            if !scaling.intercept[j] {
                                a[(j, j)] += ridge;
                            }
                        }
                        if let Some(d) = chol_solve(&a, &g) {
                            ridge_used = Some(ridge_used.map_or(ridge, |r: f64| r.max(ridge)));
                            break d;
                        }
                        ridge *= 10.0;
                        if ridge > 1e6 {
                            return Err(Error::numerical(
                                "information matrix is singular even with a large ridge",
                            ));
                        }
                    }
                }
            },
        };

        let mut step = 1.0;
        let mut accepted = None;
        let slack = 1e-13 * (1.0 + ev.loglik.abs());
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = theta
                .iter()
                .zip(direction.iter())
                .map(|(t, d)| t + step * d)
                .collect();
            let l = smd.loglik(&cand);
            if l.is_finite() && l >= ev.loglik - slack {
                accepted = Some((cand, l));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, l_new)) = accepted else {
            warnings.push(format!(
                "line search found no ascent at iteration {iterations}; gradient max-norm {:.3e}",
                max_abs(&grad_raw)
            ));
            break;
        };
        let improved = l_new > ev.loglik;
        theta = cand;
        ev = smd.evaluate(&theta, true);
        grad_raw = scaling.gradient_to_raw(&ev.gradient);
        if !separation_warned && improved && max_abs(&scaling.to_raw(&theta)) > SEPARATION_NORM {
            separation_warned = true;
            warnings.push(format!(
                "coefficients exceed {SEPARATION_NORM:e} while the likelihood still improves; \
                 the data may be separated"
            ));
        }
        debug!(
            "newton iter {iterations}: loglik {:.12} step {step} |g| {:.3e}",
            ev.loglik,
            max_abs(&grad_raw)
        );
    }
    if let Some(r) = ridge_used {
        warnings.push(format!("Newton system was singular; ridge {r:e} added on non-intercept terms"));
    }
    if !converged {
        warnings.push(format!(
            "did not converge in {iterations} iterations (gradient max-norm {:.3e})",
            max_abs(&grad_raw)
        ));
    }
    let params = scaling.to_raw(&theta);
    Ok(FitResult {
        coefficients: CoefficientSet::from_params(spec, &params)?,
        loglik: md.loglik(&params),
        gradient_max_norm: max_abs(&grad_raw),
        params,
        converged,
        iterations,
        ridge_used,
        warnings,
    })
}
