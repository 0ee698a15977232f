use nalgebra::DMatrix;

use super::ModelSpec;
use crate::basis::Transform;
use crate::cause::Period;
use crate::error::{Error, Result};
use crate::ingest::ObservationRecord;

/// Observation weight `1/sqrt(N)`.
pub fn observation_weight(total_deaths: u64) -> Result<f64> {
    if total_deaths == 0 {
        return Err(Error::validation("observation weight needs at least one death"));
    }
    Ok(1.0 / (total_deaths as f64).sqrt())
}

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub weight: f64,
    pub total: f64,
    /// (bitmask over cause indices, count)
    pub cells: Vec<(u32, f64)>,
    /// Concatenated equation blocks, each starting with the intercept 1.
    pub design: Vec<f64>,
}

/// Observations compiled against a [`ModelSpec`]: weights, cell masks over
/// cause indices, and design rows.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub(crate) n_causes: usize,
    /// Cause index of each equation.
    pub(crate) eq_cause: Vec<usize>,
    pub(crate) offsets: Vec<usize>,
    pub(crate) widths: Vec<usize>,
    pub(crate) rows: Vec<Row>,
    unit_ids: Vec<String>,
}

pub(crate) struct Evaluation {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<DMatrix<f64>>,
    /// Expected information (positive semidefinite).
    pub fisher: Option<DMatrix<f64>>,
}

impl ModelData {
    pub fn build(data: &[ObservationRecord], spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let set = &spec.cause_set;
        let dummy = spec.period_dummy_name();
        let eq_cause: Vec<usize> = spec
            .equations
            .iter()
            .map(|e| set.index_of(e.cause).expect("validated"))
            .collect();
        let widths: Vec<usize> = spec.equations.iter().map(|e| e.width() + 1).collect();
        let offsets: Vec<usize> = widths
            .iter()
            .scan(0, |acc, w| {
                let o = *acc;
                *acc += w;
                Some(o)
            })
            .collect();
        let term_lists: Vec<Vec<(String, Transform)>> = spec
            .equations
            .iter()
            .map(|e| e.terms.iter().map(|t| (t.name.clone(), t.transform.clone())).collect())
            .collect();

        let mut rows = Vec::with_capacity(data.len());
        let mut unit_ids = Vec::with_capacity(data.len());
        for obs in data {
            obs.validate(set)?;
            let in_period = match (obs.period, spec.period) {
                (p, q) if p == q => 1.0,
                (Period::Overall, _) => 0.0,
                (p, q) => {
                    return Err(Error::validation(format!(
                        "observation {} {} is for the {p} period, model is for {q}",
                        obs.unit_id, obs.year
                    )))
                }
            };
            let weight = observation_weight(obs.total_deaths)?;
            let cells = obs
                .cells
                .iter()
                .map(|c| {
                    let mask = c
                        .causes
                        .iter()
                        .fold(0u32, |m, cause| m | 1 << set.index_of(cause).expect("validated"));
                    (mask, c.deaths as f64)
                })
                .collect();
            let mut cov = obs.covariates.clone();
            if let Some(d) = dummy {
                cov.insert(d.to_string(), in_period);
            }
            let mut design = Vec::with_capacity(widths.iter().sum());
            for terms in &term_lists {
                design.push(1.0);
                design.extend(crate::basis::expand(&cov, terms).map_err(|e| match e {
                    Error::MissingCovariate(n) => Error::validation(format!(
                        "observation {} {} lacks covariate '{n}'",
                        obs.unit_id, obs.year
                    )),
                    other => other,
                })?);
            }
            rows.push(Row {
                weight,
                total: obs.total_deaths as f64,
                cells,
                design,
            });
            unit_ids.push(obs.unit_id.clone());
        }
        if rows.is_empty() {
            return Err(Error::MissingData("no observations to fit".into()));
        }
        Ok(ModelData {
            n_causes: set.len(),
            eq_cause,
            offsets,
            widths,
            rows,
            unit_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.widths.iter().sum()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// Multiplies every observation weight by `factor`.
    pub fn scale_weights(&mut self, factor: f64) {
        for r in &mut self.rows {
            r.weight *= factor;
        }
    }

    /// Rows at `indices`, repeats allowed.
    pub fn subset(&self, indices: &[usize]) -> Self {
        ModelData {
            n_causes: self.n_causes,
            eq_cause: self.eq_cause.clone(),
            offsets: self.offsets.clone(),
            widths: self.widths.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            unit_ids: indices.iter().map(|&i| self.unit_ids[i].clone()).collect(),
        }
    }

    pub(crate) fn eta(&self, row: &Row, params: &[f64], eta: &mut [f64]) {
        eta.iter_mut().for_each(|e| *e = 0.0);
        for (e, &ci) in self.eq_cause.iter().enumerate() {
            let o = self.offsets[e];
            let w = self.widths[e];
            eta[ci] = row.design[o..o + w]
                .iter()
                .zip(&params[o..o + w])
                .map(|(x, b)| x * b)
                .sum();
        }
    }

    /// Cause probabilities of row `i`, in cause-set order.
    pub fn probabilities(&self, i: usize, params: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.n_causes];
        self.eta(&self.rows[i], params, &mut eta);
        let lse = log_sum_exp(&eta, u32::MAX);
        eta.iter().map(|e| (e - lse).exp()).collect()
    }

    pub fn loglik(&self, params: &[f64]) -> f64 {
        let mut eta = vec![0.0; self.n_causes];
        let mut total = 0.0;
        for row in &self.rows {
            self.eta(row, params, &mut eta);
            let lse = log_sum_exp(&eta, u32::MAX);
            let mut li = 0.0;
            for &(mask, n) in &row.cells {
                if n > 0.0 {
                    li += n * (log_sum_exp(&eta, mask) - lse);
                }
            }
            total += row.weight * li;
        }
        total
    }

    /// Log-likelihood, gradient and, when `second_order`, the observed
    /// Hessian and expected information.
    pub(crate) fn evaluate(&self, params: &[f64], second_order: bool) -> Evaluation {
        let k = self.n_causes;
        let p = self.n_params();
        let n_eq = self.eq_cause.len();
        let mut eta = vec![0.0; k];
        let mut prob = vec![0.0; k];
        let mut q = vec![0.0; k];
        let mut cell_of = vec![0usize; k];
        let mut cell_p = Vec::new();
        let mut g_eta = vec![0.0; n_eq];
        let mut h_eta = vec![0.0; n_eq * n_eq];
        let mut f_eta = vec![0.0; n_eq * n_eq];
        let mut loglik = 0.0;
        let mut gradient = vec![0.0; p];
        let mut hessian = second_order.then(|| DMatrix::<f64>::zeros(p, p));
        let mut fisher = second_order.then(|| DMatrix::<f64>::zeros(p, p));

        for row in &self.rows {
            self.eta(row, params, &mut eta);
            let lse = log_sum_exp(&eta, u32::MAX);
            for j in 0..k {
                prob[j] = (eta[j] - lse).exp();
            }
            cell_p.clear();
            let mut li = 0.0;
            for (ci, &(mask, n)) in row.cells.iter().enumerate() {
                let lse_c = log_sum_exp(&eta, mask);
                cell_p.push((lse_c - lse).exp());
                if n > 0.0 {
                    li += n * (lse_c - lse);
                }
                for j in 0..k {
                    if mask & (1 << j) != 0 {
                        q[j] = (eta[j] - lse_c).exp();
                        cell_of[j] = ci;
                    }
                }
            }
            loglik += row.weight * li;
            let big_n = row.total;
            for (e, &j) in self.eq_cause.iter().enumerate() {
                let n_c = row.cells[cell_of[j]].1;
                g_eta[e] = n_c * q[j] - big_n * prob[j];
            }
            for e in 0..n_eq {
                let o = self.offsets[e];
                let w = self.widths[e];
                let s = row.weight * g_eta[e];
                for (g, x) in gradient[o..o + w].iter_mut().zip(&row.design[o..o + w]) {
                    *g += s * x;
                }
            }
            if !second_order {
                continue;
            }
            for (e, &j) in self.eq_cause.iter().enumerate() {
                for (f, &l) in self.eq_cause.iter().enumerate() {
                    let same = cell_of[j] == cell_of[l];
                    let delta = if j == l { 1.0 } else { 0.0 };
                    let mut h = -big_n * (delta * prob[j] - prob[j] * prob[l]);
                    let mut info = -big_n * prob[j] * prob[l];
                    if same {
                        let c = cell_of[j];
                        h += row.cells[c].1 * (delta * q[j] - q[j] * q[l]);
                        if cell_p[c] > 0.0 {
                            info += big_n * prob[j] * prob[l] / cell_p[c];
                        }
                    }
                    h_eta[e * n_eq + f] = h;
                    f_eta[e * n_eq + f] = info;
                }
            }
            let hm = hessian.as_mut().expect("second order");
            let fm = fisher.as_mut().expect("second order");
            for e in 0..n_eq {
                let (oe, we) = (self.offsets[e], self.widths[e]);
                for f in 0..n_eq {
                    let (of, wf) = (self.offsets[f], self.widths[f]);
                    let sh = row.weight * h_eta[e * n_eq + f];
                    let sf = row.weight * f_eta[e * n_eq + f];
                    for a in 0..we {
                        let xa = row.design[oe + a];
                        if xa == 0.0 {
                            continue;
                        }
                        for b in 0..wf {
                            let xb = row.design[of + b];
                            hm[(oe + a, of + b)] += sh * xa * xb;
                            fm[(oe + a, of + b)] += sf * xa * xb;
                        }
                    }
                }
            }
        }
        Evaluation {
            loglik,
            gradient,
            hessian,
            fisher,
        }
    }
}

/// log Σ exp(eta_j) over the indices set in `mask`.
pub(crate) fn log_sum_exp(eta: &[f64], mask: u32) -> f64 {
    let max = eta
        .iter()
        .enumerate()
        .filter(|(j, _)| mask & (1 << j) != 0)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = eta
        .iter()
        .enumerate()
        .filter(|(j, _)| mask & (1 << j) != 0)
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + s.ln()
}
