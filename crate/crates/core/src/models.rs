//! Concrete mixture models.
//!
//! Both models share the same skeleton: `K` components with fixed mixing
//! weights, one unconstrained parameter per component, and independent
//! Gaussian priors on those parameters. Complete-data log joints and their
//! gradients are hand-coded and generic over [`Scalar`].

use std::f64::consts::PI;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::diffnum::Scalar;
use crate::error::{Error, Result};

/// Prior variance used to stand in for a flat prior.
pub const FLAT_PRIOR_VARIANCE: f64 = 1e12;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Interface consumed by the EM and Laplace machinery.
///
/// The parameter vector has one entry per component. The prior is not part of
/// [`complete_log_joint`](MixtureModel::complete_log_joint); it is added once per
/// dataset by the callers.
pub trait MixtureModel: Sync {
    type Record: Copy + Debug + Send + Sync;

    fn num_components(&self) -> usize;

    /// Parameter dimension `n`.
    fn dim(&self) -> usize {
        self.num_components()
    }

    fn prior(&self) -> &GaussianPrior;

    fn validate_record(&self, index: usize, record: &Self::Record) -> Result<()>;

    /// `log P(x, H = k | Θ)`, without the prior.
    fn complete_log_joint<S: Scalar>(&self, record: &Self::Record, k: usize, theta: &[S]) -> S;

    /// Gradient of [`complete_log_joint`](MixtureModel::complete_log_joint) with respect to `theta`.
    fn complete_grad<S: Scalar>(&self, record: &Self::Record, k: usize, theta: &[S]) -> Vec<S>;

    /// Maximizes the responsibility-weighted complete-data log joint plus the
    /// log prior over the parameter of component `k`.
    fn maximize_component(&self, records: &[Self::Record], resp: &[f64], k: usize) -> Result<f64>;
}

/// Independent Gaussian priors on the unconstrained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                found: variances.len(),
            });
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("prior means must be finite".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(
                "prior variances must be positive".into(),
            ));
        }
        Ok(Self { means, variances })
    }

    /// Zero-mean prior with variance [`FLAT_PRIOR_VARIANCE`].
    pub fn flat(n: usize) -> Self {
        Self {
            means: vec![0.0; n],
            variances: vec![FLAT_PRIOR_VARIANCE; n],
        }
    }

    pub fn isotropic(n: usize, mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean; n], vec![variance; n])
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn log_density<S: Scalar>(&self, theta: &[S]) -> S {
        let mut acc = S::zero();
        for ((&t, &m), &v) in theta.iter().zip(&self.means).zip(&self.variances) {
            let d = t - m;
            acc += d * d / (-2.0 * v) - 0.5 * (2.0 * PI * v).ln();
        }
        acc
    }

    pub fn grad<S: Scalar>(&self, theta: &[S]) -> Vec<S> {
        theta
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&t, &m), &v)| -(t - m) / v)
            .collect()
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one component is required".into(),
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "weights sum to {sum}, not 1"
        )));
    }
    Ok(())
}

fn validate_prior(prior: &GaussianPrior, k: usize) -> Result<()> {
    if prior.dim() != k {
        return Err(Error::InvalidArgument(format!(
            "prior has {} entries for {k} components",
            prior.dim()
        )));
    }
    GaussianPrior::new(prior.means.clone(), prior.variances.clone()).map(|_| ())
}

/// Univariate Gaussian mixture with fixed weights and variances; the means are
/// the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    variances: Vec<f64>,
    prior: GaussianPrior,
    log_norm: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, variances: Vec<f64>, prior: GaussianPrior) -> Result<Self> {
        validate_weights(&weights)?;
        if variances.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} variances for {} components",
                variances.len(),
                weights.len()
            )));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        validate_prior(&prior, weights.len())?;
        // log w_k - ½ log(2π σ_k²)
        let log_norm = weights
            .iter()
            .zip(&variances)
            .map(|(w, v)| w.ln() - 0.5 * (2.0 * PI * v).ln())
            .collect();
        Ok(Self {
            weights,
            variances,
            prior,
            log_norm,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

impl MixtureModel for GaussianMixture {
    type Record = f64;

    fn num_components(&self) -> usize {
        self.weights.len()
    }

    fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    fn validate_record(&self, index: usize, record: &f64) -> Result<()> {
        if record.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidRecord {
                index,
                reason: format!("non-finite observation {record}"),
            })
        }
    }

    fn complete_log_joint<S: Scalar>(&self, x: &f64, k: usize, theta: &[S]) -> S {
        let d = theta[k] - *x;
        d * d / (-2.0 * self.variances[k]) + self.log_norm[k]
    }

    fn complete_grad<S: Scalar>(&self, x: &f64, k: usize, theta: &[S]) -> Vec<S> {
        let mut g = vec![S::zero(); theta.len()];
        g[k] = -(theta[k] - *x) / self.variances[k];
        g
    }

    fn maximize_component(&self, records: &[f64], resp: &[f64], k: usize) -> Result<f64> {
        let var = self.variances[k];
        let (pm, pv) = (self.prior.means[k], self.prior.variances[k]);
        let mut num = pm / pv;
        let mut den = 1.0 / pv;
        for (x, r) in records.iter().zip(resp) {
            num += r * x / var;
            den += r / var;
        }
        Ok(num / den)
    }
}

/// `(successes, trials)` observation for the coin mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinRecord {
    pub successes: u64,
    pub trials: u64,
}

impl CoinRecord {
    pub fn new(successes: u64, trials: u64) -> Result<Self> {
        let r = Self { successes, trials };
        r.check()
            .map_err(|reason| Error::InvalidRecord { index: 0, reason })?;
        Ok(r)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.trials == 0 {
            Err("trials must be at least 1".into())
        } else if self.successes > self.trials {
            Err(format!(
                "successes {} exceed trials {}",
                self.successes, self.trials
            ))
        } else {
            Ok(())
        }
    }
}

/// Mixture of binomial coins with fixed weights; the parameters are the
/// per-coin log-odds.
///
/// The binomial coefficient is omitted from the likelihood: it is constant in
/// the parameters and identical across components.
#[derive(Debug, Clone, PartialEq)]
pub struct CoinMixture {
    weights: Vec<f64>,
    prior: GaussianPrior,
    log_weights: Vec<f64>,
}

const NEWTON_MAX_ITERS: usize = 100;

impl CoinMixture {
    pub fn new(weights: Vec<f64>, prior: GaussianPrior) -> Result<Self> {
        validate_weights(&weights)?;
        validate_prior(&prior, weights.len())?;
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            prior,
            log_weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `1 / (1 + e^{-z})`. Branch-free; accurate for `|z| <= 700`.
pub fn logistic<S: Scalar>(z: S) -> S {
    S::one() / ((-z).exp() + 1.0)
}

/// `log(p / (1 - p))`.
pub fn log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `(log p, log(1 - p))` for `p = logistic(z)`, each as `-log(1 + e^{∓z})`.
fn log_probs<S: Scalar>(z: S) -> (S, S) {
    let lp = -((-z).exp() + 1.0).ln();
    let lq = -(z.exp() + 1.0).ln();
    (lp, lq)
}

impl MixtureModel for CoinMixture {
    type Record = CoinRecord;

    fn num_components(&self) -> usize {
        self.weights.len()
    }

    fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    fn validate_record(&self, index: usize, record: &CoinRecord) -> Result<()> {
        record
            .check()
            .map_err(|reason| Error::InvalidRecord { index, reason })
    }

    fn complete_log_joint<S: Scalar>(&self, rec: &CoinRecord, k: usize, theta: &[S]) -> S {
        let (lp, lq) = log_probs(theta[k]);
        let s = rec.successes as f64;
        let f = (rec.trials - rec.successes) as f64;
        lp * s + lq * f + self.log_weights[k]
    }

    fn complete_grad<S: Scalar>(&self, rec: &CoinRecord, k: usize, theta: &[S]) -> Vec<S> {
        let mut g = vec![S::zero(); theta.len()];
        let p = logistic(theta[k]);
        g[k] = -(p * rec.trials as f64) + rec.successes as f64;
        g
    }

    /// Root of the concave score `S - T·p(z) - (z - m)/v` by Newton's method,
    /// falling back to bisection whenever a step leaves the current bracket.
    fn maximize_component(&self, records: &[CoinRecord], resp: &[f64], k: usize) -> Result<f64> {
        let (pm, pv) = (self.prior.means[k], self.prior.variances[k]);
        let (mut succ, mut fail) = (0.0, 0.0);
        for (rec, r) in records.iter().zip(resp) {
            succ += r * rec.successes as f64;
            fail += r * (rec.trials - rec.successes) as f64;
        }
        let trials = succ + fail;
        let score = |z: f64| succ * logistic(-z) - fail * logistic(z) - (z - pm) / pv;
        let slope = |z: f64| -trials * logistic(z) * logistic(-z) - 1.0 / pv;

        let mut z = if trials > 0.0 {
            log_odds((succ + 0.5) / (trials + 1.0))
        } else {
            pm
        };

        // Bracket the root; the score is strictly decreasing.
        let (mut lo, mut hi) = (z, z);
        let mut width = 1.0;
        while score(lo) < 0.0 {
            lo = z - width;
            width *= 2.0;
            if width > 1e300 {
                return Err(Error::NewtonFailed {
                    component: k,
                    iterations: 0,
                });
            }
        }
        width = 1.0;
        while score(hi) > 0.0 {
            hi = z + width;
            width *= 2.0;
            if width > 1e300 {
                return Err(Error::NewtonFailed {
                    component: k,
                    iterations: 0,
                });
            }
        }

        for _ in 0..NEWTON_MAX_ITERS {
            let g = score(z);
            if g == 0.0 {
                return Ok(z);
            }
            if g > 0.0 {
                lo = z;
            } else {
                hi = z;
            }
            let mut next = z - g / slope(z);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - z).abs();
            z = next;
            let scale = 1.0 + z.abs();
            if step <= 4.0 * f64::EPSILON * scale || hi - lo <= 4.0 * f64::EPSILON * scale {
                return Ok(z);
            }
        }
        Err(Error::NewtonFailed {
            component: k,
            iterations: NEWTON_MAX_ITERS,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnum::Dual;

    const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

    fn gmm2() -> GaussianMixture {
        GaussianMixture::new(vec![0.5, 0.5], vec![1.0, 1.0], GaussianPrior::flat(2)).unwrap()
    }

    fn coin2() -> CoinMixture {
        CoinMixture::new(vec![0.5, 0.5], GaussianPrior::flat(2)).unwrap()
    }

    #[test]
    fn gaussian_complete_log_joint() {
        let m = gmm2();
        let l = m.complete_log_joint(&0.0, 0, &[0.0, 0.0]);
        assert!((l - (0.5f64.ln() - HALF_LOG_2PI)).abs() < 1e-15);
        let l = m.complete_log_joint(&0.0, 0, &[1.0, 0.0]);
        assert!((l - (0.5f64.ln() - HALF_LOG_2PI - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn coin_complete_log_joint() {
        let m = coin2();
        let rec = CoinRecord::new(1, 2).unwrap();
        let l = m.complete_log_joint(&rec, 1, &[0.3, 0.0]);
        assert!((l - 3.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn complete_grads() {
        assert_eq!(gmm2().complete_grad(&0.0, 0, &[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(gmm2().complete_grad(&0.0, 1, &[0.0, 1.0]), vec![0.0, -1.0]);
        let rec = CoinRecord::new(5, 10).unwrap();
        assert_eq!(coin2().complete_grad(&rec, 0, &[0.0, 2.0]), vec![0.0, 0.0]);

        // Dual-number cross-check of the Gaussian slot value.
        let d = gmm2().complete_log_joint(&0.0, 0, &[Dual::variable(1.0), Dual::constant(0.0)]);
        assert_eq!(d.eps, -1.0);
    }

    #[test]
    fn invalid_specs() {
        assert!(
            GaussianMixture::new(vec![0.5, 0.6], vec![1.0, 1.0], GaussianPrior::flat(2)).is_err()
        );
        assert!(
            GaussianMixture::new(vec![0.5, 0.5], vec![1.0, 0.0], GaussianPrior::flat(2)).is_err()
        );
        assert!(GaussianMixture::new(vec![0.5, 0.5], vec![1.0], GaussianPrior::flat(2)).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![1.0], GaussianPrior::flat(2)).is_err());
        assert!(CoinMixture::new(vec![], GaussianPrior::flat(0)).is_err());
        assert!(CoinMixture::new(vec![1.5, -0.5], GaussianPrior::flat(2)).is_err());
        assert!(GaussianPrior::new(vec![0.0], vec![-1.0]).is_err());
        assert!(CoinRecord::new(3, 2).is_err());
        assert!(CoinRecord::new(0, 0).is_err());
    }

    #[test]
    fn logistic_extremes() {
        assert!((logistic(700.0) - 1.0).abs() < 1e-15);
        assert!(logistic(-700.0) > 0.0);
        let (lp, lq) = log_probs(-700.0_f64);
        assert!((lp + 700.0).abs() < 1e-12);
        assert!(lq.abs() < 1e-300);
    }

    #[test]
    fn coin_m_step_binomial_mle() {
        let m = coin2();
        let recs = [CoinRecord::new(5, 10).unwrap()];
        let z = m.maximize_component(&recs, &[1.0], 0).unwrap();
        assert!(z.abs() < 1e-10, "{z}");
    }

    #[test]
    fn coin_m_step_all_heads_is_finite() {
        let m = coin2();
        let recs = [
            CoinRecord::new(10, 10).unwrap(),
            CoinRecord::new(3, 3).unwrap(),
        ];
        let z = m.maximize_component(&recs, &[1.0, 1.0], 0).unwrap();
        assert!(z.is_finite() && z > 10.0);
        let z = m.maximize_component(&recs, &[0.0, 0.0], 1).unwrap();
        assert_eq!(z, 0.0);
    }
}
