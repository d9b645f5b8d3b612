//! Brute-force references for verification.
//!
//! Nothing here calls into the production E-step, log joint or gradient: the
//! densities are transcribed again from the model definitions, marginals are
//! summed directly, derivatives are taken by finite differences, and the
//! evidence is integrated on a grid.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::em::{auxiliary, divergence, Dataset};
use crate::error::{Error, Result};
use crate::models::{CoinMixture, CoinRecord, GaussianMixture, MixtureModel};

/// Relative base step for central-difference gradients, `ε^(1/3)`.
pub fn gradient_step() -> f64 {
    f64::EPSILON.cbrt()
}

/// Relative base step for second-order stencils, `ε^(1/4)`.
pub fn hessian_step() -> f64 {
    f64::EPSILON.sqrt().sqrt()
}

/// Independent per-component formulas for a model.
pub trait OracleModel: MixtureModel {
    /// `P(x, H = k | Θ)`, evaluated directly in linear space.
    fn joint_density(&self, rec: &Self::Record, k: usize, theta: &[f64]) -> f64;

    /// `log P(x, H = k | Θ)`.
    fn joint_log_density(&self, rec: &Self::Record, k: usize, theta: &[f64]) -> f64;

    /// `∂/∂θ_k log P(x, H = k | Θ)`; all other partials are zero.
    fn joint_score(&self, rec: &Self::Record, k: usize, theta: &[f64]) -> f64;

    /// `∂²/∂θ_k² log P(x, H = k | Θ)`; all other second partials are zero.
    fn joint_curvature(&self, rec: &Self::Record, k: usize, theta: &[f64]) -> f64;
}

impl OracleModel for GaussianMixture {
    fn joint_density(&self, x: &f64, k: usize, theta: &[f64]) -> f64 {
        let var = self.variances()[k];
        let z = x - theta[k];
        self.weights()[k] * (-z * z / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
    }

    fn joint_log_density(&self, x: &f64, k: usize, theta: &[f64]) -> f64 {
        let var = self.variances()[k];
        let z = x - theta[k];
        self.weights()[k].ln() - 0.5 * (2.0 * PI).ln() - 0.5 * var.ln() - z * z / (2.0 * var)
    }

    fn joint_score(&self, x: &f64, k: usize, theta: &[f64]) -> f64 {
        (x - theta[k]) / self.variances()[k]
    }

    fn joint_curvature(&self, _x: &f64, k: usize, _theta: &[f64]) -> f64 {
        -1.0 / self.variances()[k]
    }
}

fn coin_probs(z: f64) -> (f64, f64) {
    (1.0 / (1.0 + (-z).exp()), 1.0 / (1.0 + z.exp()))
}

impl OracleModel for CoinMixture {
    fn joint_density(&self, rec: &CoinRecord, k: usize, theta: &[f64]) -> f64 {
        let (p, q) = coin_probs(theta[k]);
        let heads = rec.successes as f64;
        let tails = (rec.trials - rec.successes) as f64;
        self.weights()[k] * p.powf(heads) * q.powf(tails)
    }

    fn joint_log_density(&self, rec: &CoinRecord, k: usize, theta: &[f64]) -> f64 {
        let z = theta[k];
        let heads = rec.successes as f64;
        let tails = (rec.trials - rec.successes) as f64;
        // log p = -log(1 + e^{-z}), log q = -log(1 + e^{z})
        let log_p = -(-z).exp().ln_1p();
        let log_q = -z.exp().ln_1p();
        self.weights()[k].ln() + heads * log_p + tails * log_q
    }

    fn joint_score(&self, rec: &CoinRecord, k: usize, theta: &[f64]) -> f64 {
        let (p, q) = coin_probs(theta[k]);
        rec.successes as f64 * q - (rec.trials - rec.successes) as f64 * p
    }

    fn joint_curvature(&self, rec: &CoinRecord, k: usize, theta: &[f64]) -> f64 {
        let (p, q) = coin_probs(theta[k]);
        -(rec.trials as f64) * p * q
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

fn log_prior_direct<M: MixtureModel>(model: &M, theta: &[f64]) -> f64 {
    let prior = model.prior();
    let mut acc = CompensatedSum::default();
    for (i, t) in theta.iter().enumerate() {
        let v = prior.variances[i];
        let dev = t - prior.means[i];
        acc.add(-0.5 * (2.0 * PI * v).ln());
        acc.add(-dev * dev / (2.0 * v));
    }
    acc.total()
}

fn check_dim<M: MixtureModel>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: theta.len(),
        });
    }
    Ok(())
}

/// `log P(X, Θ)` by summing `P(x_i, k | Θ)` over `k` in linear space.
///
/// Errors when any per-record sum underflows to zero or overflows.
pub fn marginal_by_enumeration<M: OracleModel>(
    model: &M,
    data: &[M::Record],
    theta: &[f64],
) -> Result<f64> {
    check_dim(model, theta)?;
    let mut total = CompensatedSum::default();
    for rec in data {
        let mut per_record = CompensatedSum::default();
        for k in 0..model.num_components() {
            per_record.add(model.joint_density(rec, k, theta));
        }
        let s = per_record.total();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Overflow("marginal_by_enumeration"));
        }
        total.add(s.ln());
    }
    total.add(log_prior_direct(model, theta));
    Ok(total.total())
}

/// Log joint with a max-shift per record, so it stays finite far from the
/// mode. Used for grid integration.
fn log_joint_shifted<M: OracleModel>(model: &M, data: &[M::Record], theta: &[f64]) -> f64 {
    let mut total = CompensatedSum::default();
    for rec in data {
        let logs: Vec<f64> = (0..model.num_components())
            .map(|k| model.joint_log_density(rec, k, theta))
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        total.add(top + s.ln());
    }
    total.add(log_prior_direct(model, theta));
    total.total()
}

/// Posterior responsibilities from the oracle densities, row per record.
pub fn posterior_by_enumeration<M: OracleModel>(
    model: &M,
    data: &[M::Record],
    theta: &[f64],
) -> Vec<Vec<f64>> {
    data.iter()
        .map(|rec| {
            let logs: Vec<f64> = (0..model.num_components())
                .map(|k| model.joint_log_density(rec, k, theta))
                .collect();
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

fn eval_finite<F: Fn(&[f64]) -> Result<f64>>(f: &F, x: &[f64], index: usize) -> Result<f64> {
    let y = f(x)?;
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::NonFinite {
            index,
            context: "finite-difference stencil",
        })
    }
}

/// Central-difference gradient with per-coordinate offset `step · max(1, |θ_i|)`.
pub fn fd_gradient<F>(f: F, theta: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidStep(step));
    }
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = step * theta[i].abs().max(1.0);
        x[i] = theta[i] + h;
        let up = eval_finite(&f, &x, i)?;
        x[i] = theta[i] - h;
        let down = eval_finite(&f, &x, i)?;
        x[i] = theta[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Dense Hessian from second-order central stencils on `f` itself, symmetrized.
pub fn fd_hessian<F>(f: F, theta: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidStep(step));
    }
    let n = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| step * t.abs().max(1.0)).collect();
    let center = eval_finite(&f, theta, 0)?;
    let mut out = DMatrix::<f64>::zeros(n, n);
    let mut x = theta.to_vec();

    for i in 0..n {
        x[i] = theta[i] + h[i];
        let up = eval_finite(&f, &x, i)?;
        x[i] = theta[i] - h[i];
        let down = eval_finite(&f, &x, i)?;
        x[i] = theta[i];
        out[(i, i)] = (up - 2.0 * center + down) / (h[i] * h[i]);

        for j in 0..i {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                x[i] = theta[i] + si * h[i];
                x[j] = theta[j] + sj * h[j];
                let y = eval_finite(&f, &x, i);
                x[i] = theta[i];
                x[j] = theta[j];
                y
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// The two parts of `∇² log P(X, Θ)` when differentiating the gradient identity
/// directly: the auxiliary's Hessian and the posterior-derivative term.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianDecomposition {
    /// `Σ_H P(H | X, Θ) ∇² log P(X, H, Θ)`, prior included.
    pub aux_hessian: DMatrix<f64>,
    /// `[i, j] = Σ_H ∂_j P(H | X, Θ) · ∂_i log P(X, H, Θ)`.
    pub extra_term: DMatrix<f64>,
}

impl HessianDecomposition {
    pub fn total(&self) -> DMatrix<f64> {
        &self.aux_hessian + &self.extra_term
    }
}

/// Analytic auxiliary Hessian plus the extra term, whose posterior derivatives
/// are central differences of the enumerated posterior.
pub fn hessian_decomposition<M: OracleModel>(
    model: &M,
    data: &[M::Record],
    theta: &[f64],
) -> Result<HessianDecomposition> {
    check_dim(model, theta)?;
    let n = model.dim();
    let k_count = model.num_components();
    let post = posterior_by_enumeration(model, data, theta);

    let mut aux = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let mut acc = CompensatedSum::default();
        for (rec, r) in data.iter().zip(&post) {
            acc.add(r[k] * model.joint_curvature(rec, k, theta));
        }
        acc.add(-1.0 / model.prior().variances[k]);
        aux[(k, k)] = acc.total();
    }

    let mut extra = DMatrix::<f64>::zeros(n, n);
    let step = gradient_step();
    let mut x = theta.to_vec();
    for j in 0..n {
        let h = step * theta[j].abs().max(1.0);
        x[j] = theta[j] + h;
        let up = posterior_by_enumeration(model, data, &x);
        x[j] = theta[j] - h;
        let down = posterior_by_enumeration(model, data, &x);
        x[j] = theta[j];
        for i in 0..n {
            let mut acc = CompensatedSum::default();
            for (rec_idx, rec) in data.iter().enumerate() {
                for k in 0..k_count {
                    if k != i {
                        continue; // score of component k lives in slot k only
                    }
                    let dr = (up[rec_idx][k] - down[rec_idx][k]) / (2.0 * h);
                    acc.add(dr * model.joint_score(rec, k, theta));
                }
            }
            extra[(i, j)] = acc.total();
        }
    }
    if let Some(index) = extra.iter().chain(aux.iter()).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index,
            context: "hessian decomposition",
        });
    }
    Ok(HessianDecomposition {
        aux_hessian: aux,
        extra_term: extra,
    })
}

/// Axis-aligned integration grid centered on a point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub center: Vec<f64>,
    /// Half-width of each axis in prior standard deviations.
    pub half_width_sds: f64,
    /// Points per axis; odd and at least 3.
    pub points: usize,
}

impl QuadratureGrid {
    pub fn around(center: Vec<f64>, points: usize) -> Self {
        Self {
            center,
            half_width_sds: 10.0,
            points,
        }
    }
}

/// Largest `|log Z_full - log Z_half|` tolerated before the grid is deemed too coarse.
pub const QUADRATURE_RICHARDSON_TOL: f64 = 1e-4;

/// `log ∫ exp(log P(X, Θ)) dΘ` by the trapezoid rule, checked against the
/// same rule on every other grid point.
pub fn quadrature_evidence<M: OracleModel>(
    model: &M,
    data: &[M::Record],
    grid: &QuadratureGrid,
) -> Result<f64> {
    let n = model.dim();
    if n > 2 {
        return Err(Error::QuadratureDimension(n));
    }
    check_dim(model, &grid.center)?;
    if grid.points < 3 || grid.points.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "quadrature needs an odd number of points >= 3, got {}",
            grid.points
        )));
    }
    if !(grid.half_width_sds > 0.0) {
        return Err(Error::InvalidArgument(
            "grid half-width must be positive".into(),
        ));
    }

    let m = grid.points;
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|d| {
            let half = grid.half_width_sds * model.prior().variances[d].sqrt();
            let lo = grid.center[d] - half;
            let h = 2.0 * half / (m - 1) as f64;
            (0..m).map(|i| lo + h * i as f64).collect()
        })
        .collect();
    let spacing: Vec<f64> = axes.iter().map(|a| a[1] - a[0]).collect();

    // Log integrand on the full tensor grid.
    let total = m.pow(n as u32);
    let mut values = Vec::with_capacity(total);
    let mut point = vec![0.0; n];
    for flat in 0..total {
        let mut rem = flat;
        for d in 0..n {
            point[d] = axes[d][rem % m];
            rem /= m;
        }
        values.push(log_joint_shifted(model, data, &point));
    }
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Overflow("quadrature_evidence"));
    }

    let trapezoid = |stride: usize| -> f64 {
        let edge = |i: usize| i == 0 || i == m - 1;
        let mut acc = CompensatedSum::default();
        for (flat, v) in values.iter().enumerate() {
            let mut rem = flat;
            let mut weight = 1.0;
            let mut on_grid = true;
            for _ in 0..n {
                let i = rem % m;
                rem /= m;
                if !i.is_multiple_of(stride) {
                    on_grid = false;
                    break;
                }
                if edge(i) {
                    weight *= 0.5;
                }
            }
            if on_grid {
                acc.add(weight * (v - top).exp());
            }
        }
        let cell: f64 = spacing.iter().map(|h| h * stride as f64).product();
        top + (acc.total() * cell).ln()
    };

    let full = trapezoid(1);
    let half = trapezoid(2);
    let difference = (full - half).abs();
    if !(difference <= QUADRATURE_RICHARDSON_TOL) {
        return Err(Error::GridTooCoarse { difference });
    }
    Ok(full)
}

/// Central-difference derivatives of the auxiliary and the divergence at
/// `Θ' = Θ`, all of which vanish analytically.
#[derive(Debug, Clone, PartialEq)]
pub struct VanishingDerivatives {
    /// `∂/∂Θ D(Θ', Θ)`.
    pub divergence_wrt_theta: Vec<f64>,
    /// `∂/∂Θ' D(Θ', Θ)`.
    pub divergence_wrt_theta_prime: Vec<f64>,
    /// `∂/∂Θ' A(Θ', Θ)`.
    pub auxiliary_wrt_theta_prime: Vec<f64>,
}

impl VanishingDerivatives {
    pub fn max_abs(&self) -> f64 {
        self.divergence_wrt_theta
            .iter()
            .chain(&self.divergence_wrt_theta_prime)
            .chain(&self.auxiliary_wrt_theta_prime)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub fn vanishing_derivatives<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &[f64],
) -> Result<VanishingDerivatives> {
    check_dim(model, theta)?;
    let h = gradient_step();
    Ok(VanishingDerivatives {
        divergence_wrt_theta: fd_gradient(|t| divergence(model, data, theta, t), theta, h)?,
        divergence_wrt_theta_prime: fd_gradient(|t| divergence(model, data, t, theta), theta, h)?,
        auxiliary_wrt_theta_prime: fd_gradient(|t| auxiliary(model, data, t, theta), theta, h)?,
    })
}
