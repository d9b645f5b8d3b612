//! The EM algorithm over discrete hidden variables.
//!
//! `log P(X, Θ)` splits, for any frozen `Θ'`, into the auxiliary `A(Θ', Θ)` and
//! the divergence `D(Θ', Θ) >= 0`. The E-step sets `Θ' = Θ`, zeroing `D`; the
//! M-step maximizes `A(Θ', ·)`. Each iteration therefore cannot decrease the
//! log joint.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::diffnum::Scalar;
use crate::error::{Error, Result};
use crate::models::MixtureModel;

/// A finite point in unconstrained parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some(index) = theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: "parameter vector",
            });
        }
        Ok(Self(theta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Max-norm of `self - other`.
    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ParamVector::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Vec<f64> {
        p.0
    }
}

/// Observations, validated against a model at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<R> {
    records: Vec<R>,
}

impl<R: Copy> Dataset<R> {
    pub fn new<M: MixtureModel<Record = R>>(model: &M, records: Vec<R>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyData);
        }
        for (i, r) in records.iter().enumerate() {
            model.validate_record(i, r)?;
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[R] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Responsibilities `P(H_i = k | x_i, Θ)`, row-major `[records × components]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenPosterior<S> {
    resp: Vec<S>,
    components: usize,
}

impl<S: Scalar> HiddenPosterior<S> {
    pub fn num_records(&self) -> usize {
        self.resp.len() / self.components
    }

    pub fn num_components(&self) -> usize {
        self.components
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.resp[i * self.components..(i + 1) * self.components]
    }

    pub fn get(&self, i: usize, k: usize) -> S {
        self.resp[i * self.components + k]
    }

    /// Value parts of column `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.num_records())
            .map(|i| self.get(i, k).value())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the log-joint increase of an iteration falls below this.
    pub tol_loglik: f64,
    /// Stop once the max-norm parameter step falls below this.
    pub tol_param: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol_loglik: 1e-10,
            tol_param: 1e-8,
        }
    }
}

impl EmConfig {
    /// Stops on the parameter step alone (the log-joint test is set below any
    /// representable increase), tight enough that the stopping point passes the
    /// Laplace mode gate even when EM converges slowly.
    pub fn tight() -> Self {
        Self {
            max_iters: 100_000,
            tol_loglik: f64::MIN_POSITIVE,
            tol_param: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_loglik > 0.0 && self.tol_param > 0.0) {
            return Err(Error::InvalidArgument(
                "EM tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    LoglikTol,
    ParamTol,
    MaxIters,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::LoglikTol => "loglik-tol",
            StopReason::ParamTol => "param-tol",
            StopReason::MaxIters => "max-iters",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub iteration: usize,
    pub theta: ParamVector,
    pub log_joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    /// Starts with the initial point at iteration 0.
    pub iterates: Vec<Iterate>,
    pub converged: bool,
    pub reason: StopReason,
}

impl EmTrace {
    pub fn last(&self) -> &Iterate {
        self.iterates
            .last()
            .expect("trace always holds the start point")
    }

    /// Number of EM iterations performed.
    pub fn iterations(&self) -> usize {
        self.iterates.len() - 1
    }
}

fn check_theta<S: Scalar>(n: usize, theta: &[S]) -> Result<()> {
    if theta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: theta.len(),
        });
    }
    if let Some(index) = theta.iter().position(|t| !t.value().is_finite()) {
        return Err(Error::NonFinite {
            index,
            context: "parameter vector",
        });
    }
    Ok(())
}

/// `log Σ exp(terms)`, shifted by the largest value part. `None` when every
/// term is `-∞` or any is NaN.
fn log_sum_exp<S: Scalar>(terms: &[S]) -> Option<S> {
    let m = terms.iter().copied().reduce(S::max_by_value)?;
    if !m.value().is_finite() {
        return None;
    }
    let mut acc = S::zero();
    for &t in terms {
        acc += (t - m).exp();
    }
    let out = acc.ln() + m;
    out.value().is_finite().then_some(out)
}

fn component_terms<M: MixtureModel, S: Scalar>(model: &M, rec: &M::Record, theta: &[S]) -> Vec<S> {
    (0..model.num_components())
        .map(|k| model.complete_log_joint(rec, k, theta))
        .collect()
}

/// Posterior responsibilities at `theta`, generic over the scalar realization.
pub fn e_step<M: MixtureModel, S: Scalar>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &[S],
) -> Result<HiddenPosterior<S>> {
    check_theta(model.dim(), theta)?;
    let k = model.num_components();
    let mut resp = Vec::with_capacity(data.len() * k);
    for (i, rec) in data.records().iter().enumerate() {
        let terms = component_terms(model, rec, theta);
        let m = terms
            .iter()
            .copied()
            .reduce(S::max_by_value)
            .filter(|m| m.value().is_finite())
            .ok_or(Error::ZeroNormalizer { record: i })?;
        let shifted: Vec<S> = terms.iter().map(|&t| (t - m).exp()).collect();
        let mut total = S::zero();
        for &e in &shifted {
            total += e;
        }
        if !(total.value().is_finite() && total.value() > 0.0) {
            return Err(Error::ZeroNormalizer { record: i });
        }
        resp.extend(shifted.into_iter().map(|e| e / total));
    }
    Ok(HiddenPosterior {
        resp,
        components: k,
    })
}

/// `log P(X, Θ) = Σ_i log Σ_k P(x_i, k | Θ) + log P(Θ)`.
pub fn log_joint<M: MixtureModel, S: Scalar>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &[S],
) -> Result<S> {
    check_theta(model.dim(), theta)?;
    let mut acc = model.prior().log_density(theta);
    for (i, rec) in data.records().iter().enumerate() {
        let terms = component_terms(model, rec, theta);
        acc += log_sum_exp(&terms).ok_or(Error::ZeroNormalizer { record: i })?;
    }
    Ok(acc)
}

/// Closed-form (or 1-D Newton) maximizer of `A(Θ', ·)` given the posterior at `Θ'`.
pub fn m_step<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    post: &HiddenPosterior<f64>,
) -> Result<ParamVector> {
    if post.num_components() != model.num_components() || post.num_records() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len() * model.num_components(),
            found: post.resp.len(),
        });
    }
    let theta = (0..model.num_components())
        .map(|k| model.maximize_component(data.records(), &post.column(k), k))
        .collect::<Result<Vec<_>>>()?;
    ParamVector::new(theta)
}

pub fn em_step<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &ParamVector,
) -> Result<ParamVector> {
    let post = e_step(model, data, theta.as_slice())?;
    m_step(model, data, &post)
}

/// Iterates [`em_step`] from `theta0`.
///
/// The parameter-step test is applied before the log-joint test, so a start at
/// a fixed point reports [`StopReason::ParamTol`]. The log-joint test only
/// fires on a strictly positive increase below `tol_loglik`.
pub fn em_fit<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta0: &ParamVector,
    config: &EmConfig,
) -> Result<EmTrace> {
    config.validate()?;
    let lj0 = log_joint(model, data, theta0.as_slice())?;
    let mut trace = EmTrace {
        iterates: vec![Iterate {
            iteration: 0,
            theta: theta0.clone(),
            log_joint: lj0,
        }],
        converged: false,
        reason: StopReason::MaxIters,
    };

    let mut current = theta0.clone();
    let mut current_lj = lj0;
    for iteration in 1..=config.max_iters {
        let step_result = em_step(model, data, &current).and_then(|next| {
            let lj = log_joint(model, data, next.as_slice())?;
            Ok((next, lj))
        });
        let (next, lj) = match step_result {
            Ok(v) => v,
            Err(e) => {
                return Err(Error::EmAborted {
                    source: Box::new(e),
                    trace: Box::new(trace),
                })
            }
        };

        let step = next.max_abs_diff(&current);
        let increase = lj - current_lj;
        trace.iterates.push(Iterate {
            iteration,
            theta: next.clone(),
            log_joint: lj,
        });
        current = next;
        current_lj = lj;

        if step < config.tol_param {
            trace.converged = true;
            trace.reason = StopReason::ParamTol;
            return Ok(trace);
        }
        // Non-positive increases are round-off at a flat optimum, not progress
        // that has slowed; they are left to the parameter test.
        if increase > 0.0 && increase < config.tol_loglik {
            trace.converged = true;
            trace.reason = StopReason::LoglikTol;
            return Ok(trace);
        }
    }
    Ok(trace)
}

type PerRecord = Vec<Vec<f64>>;

/// Per-record complete-data log terms and log responsibilities at `theta`.
fn log_posterior<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &[f64],
) -> Result<(PerRecord, PerRecord)> {
    check_theta(model.dim(), theta)?;
    let mut terms_all = Vec::with_capacity(data.len());
    let mut log_resp = Vec::with_capacity(data.len());
    for (i, rec) in data.records().iter().enumerate() {
        let terms = component_terms(model, rec, theta);
        let lse = log_sum_exp(&terms).ok_or(Error::ZeroNormalizer { record: i })?;
        log_resp.push(terms.iter().map(|t| t - lse).collect());
        terms_all.push(terms);
    }
    Ok((terms_all, log_resp))
}

/// `A(Θ', Θ) = Σ_i Σ_k r'_ik (log P(x_i, k | Θ) - log r'_ik) + log P(Θ)`, where
/// `r'` is the posterior at `Θ'`. Terms with `r' = 0` contribute 0.
pub fn auxiliary<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta_prime: &[f64],
    theta: &[f64],
) -> Result<f64> {
    let (_, log_resp_prime) = log_posterior(model, data, theta_prime)?;
    let (terms, _) = log_posterior(model, data, theta)?;
    let mut acc = model.prior().log_density(theta);
    for (lrp, lt) in log_resp_prime.iter().zip(&terms) {
        for (&lr, &t) in lrp.iter().zip(lt) {
            let r = lr.exp();
            if r > 0.0 {
                acc += r * (t - lr);
            }
        }
    }
    Ok(acc)
}

/// `D(Θ', Θ) = Σ_i KL(P(H_i | x_i, Θ') ‖ P(H_i | x_i, Θ))`.
pub fn divergence<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta_prime: &[f64],
    theta: &[f64],
) -> Result<f64> {
    let (_, log_resp_prime) = log_posterior(model, data, theta_prime)?;
    let (_, log_resp) = log_posterior(model, data, theta)?;
    let mut acc = 0.0;
    for (lrp, lr) in log_resp_prime.iter().zip(&log_resp) {
        for (&a, &b) in lrp.iter().zip(lr) {
            let r = a.exp();
            if r > 0.0 {
                acc += r * (a - b);
            }
        }
    }
    Ok(acc)
}
