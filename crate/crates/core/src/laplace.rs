//! Gradient, Hessian and Laplace posterior of `log P(X, Θ)`.
//!
//! The gradient is the posterior expectation of the complete-data gradient:
//! the divergence term contributes nothing at `Θ' = Θ`, so the posterior
//! itself never needs differentiating for the gradient. The Hessian is
//! obtained by differentiating that gradient once more along each unit
//! direction (Pearlmutter's trick). Because the responsibilities inside
//! [`grad_log_joint`] are computed from the same generic-scalar `theta`, the
//! directional derivative picks up their `Θ`-dependence as well.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::diffnum::{directional_derivative, DiffFunction, DiffStrategy, Scalar};
use crate::em::{e_step, log_joint, Dataset, ParamVector};
use crate::error::{Error, Result};
use crate::models::MixtureModel;

/// Largest gradient max-norm accepted at a claimed mode.
pub const MODE_GRAD_TOL: f64 = 1e-6;

/// Relative pre-symmetrization asymmetry allowed in an assembled Hessian.
pub const ASYMMETRY_TOL: f64 = 1e-6;

/// `∇ log P(X, Θ) = Σ_i Σ_k P(k | x_i, Θ) ∇ log P(x_i, k | Θ) + ∇ log P(Θ)`.
pub fn grad_log_joint<M: MixtureModel, S: Scalar>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &[S],
) -> Result<Vec<S>> {
    let post = e_step(model, data, theta)?;
    let mut grad = model.prior().grad(theta);
    for (i, rec) in data.records().iter().enumerate() {
        for (k, &r) in post.row(i).iter().enumerate() {
            let cg = model.complete_grad(rec, k, theta);
            for (g, c) in grad.iter_mut().zip(cg) {
                *g += r * c;
            }
        }
    }
    Ok(grad)
}

struct Gradient<'a, M: MixtureModel> {
    model: &'a M,
    data: &'a Dataset<M::Record>,
}

impl<M: MixtureModel> DiffFunction for Gradient<'_, M> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        grad_log_joint(self.model, self.data, x)
    }
}

/// `∇² log P(X, theta) · v`, as the directional derivative of the gradient.
pub fn hvp<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &[f64],
    v: &[f64],
    strategy: DiffStrategy,
) -> Result<Vec<f64>> {
    if v.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: v.len(),
        });
    }
    directional_derivative(&Gradient { model, data }, theta, v, strategy)
}

/// Symmetric Hessian `Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    pub lambda: DMatrix<f64>,
    /// `max |Λ_ij - Λ_ji|` of the raw column assembly.
    pub asymmetry: f64,
}

impl HessianMatrix {
    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        row_major(&self.lambda)
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Assembles `Λ` column by column from `hvp(e_i)`; columns are evaluated in
/// parallel on the current rayon pool.
pub fn hessian<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &[f64],
    strategy: DiffStrategy,
) -> Result<HessianMatrix> {
    let n = model.dim();
    if theta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: theta.len(),
        });
    }
    let columns = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            hvp(model, data, theta, &e, strategy)
        })
        .collect::<Result<Vec<_>>>()?;

    let raw = DMatrix::from_fn(n, n, |r, c| columns[c][r]);
    let scale = raw.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let asymmetry = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .fold(0.0_f64, |m, (r, c)| {
            m.max((raw[(r, c)] - raw[(c, r)]).abs())
        });
    let tolerance = ASYMMETRY_TOL * (1.0 + scale);
    if asymmetry > tolerance {
        return Err(Error::Asymmetric {
            asymmetry,
            tolerance,
        });
    }
    let lambda = (&raw + raw.transpose()) * 0.5;
    Ok(HessianMatrix { lambda, asymmetry })
}

/// Gaussian approximation `N(Θ | Θ̂, -Λ⁻¹)` and the matching evidence estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacePosterior {
    pub mean: ParamVector,
    pub hessian: HessianMatrix,
    pub covariance: DMatrix<f64>,
    pub log_det_neg_lambda: f64,
    pub log_joint_at_mode: f64,
    /// Natural log.
    pub log_evidence: f64,
    pub grad_max_norm: f64,
}

/// Lower Cholesky factor of a symmetric matrix; reports the first
/// non-positive pivot.
pub(crate) fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// `(L Lᵀ)⁻¹` by forward and back substitution on the identity.
fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for col in 0..n {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * inv[(k, col)];
            }
            inv[(i, col)] = s / l[(i, i)];
        }
    }
    (&inv + inv.transpose()) * 0.5
}

pub fn laplace_posterior<M: MixtureModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta_hat: &ParamVector,
    strategy: DiffStrategy,
) -> Result<LaplacePosterior> {
    let grad = grad_log_joint(model, data, theta_hat.as_slice())?;
    let grad_max_norm = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    if !(grad_max_norm <= MODE_GRAD_TOL) {
        return Err(Error::NotAtMode {
            grad_norm: grad_max_norm,
            tolerance: MODE_GRAD_TOL,
        });
    }

    let hessian = hessian(model, data, theta_hat.as_slice(), strategy)?;
    let neg = -&hessian.lambda;
    let l = cholesky(&neg)?;
    let log_det_neg_lambda = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let covariance = cholesky_inverse(&l);

    let n = model.dim() as f64;
    let log_joint_at_mode = log_joint(model, data, theta_hat.as_slice())?;
    let log_evidence = log_joint_at_mode + 0.5 * n * (2.0 * PI).ln() - 0.5 * log_det_neg_lambda;

    Ok(LaplacePosterior {
        mean: theta_hat.clone(),
        hessian,
        covariance,
        log_det_neg_lambda,
        log_joint_at_mode,
        log_evidence,
        grad_max_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CoinMixture, CoinRecord, GaussianMixture, GaussianPrior};

    #[test]
    fn symmetric_gradient_is_zero() {
        let m =
            GaussianMixture::new(vec![0.5, 0.5], vec![1.0, 1.0], GaussianPrior::flat(2)).unwrap();
        let d = Dataset::new(&m, vec![0.0]).unwrap();
        let g = grad_log_joint(&m, &d, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn single_component_curvature() {
        let n_data = 5;
        let var = 2.0;
        let m = GaussianMixture::new(vec![1.0], vec![var], GaussianPrior::flat(1)).unwrap();
        let d = Dataset::new(&m, vec![0.3, -1.0, 2.0, 0.1, 0.7]).unwrap();
        for s in [
            DiffStrategy::Dual,
            DiffStrategy::complex_step(),
            DiffStrategy::central_difference(),
        ] {
            let h = hessian(&m, &d, &[0.4], s).unwrap();
            let expected = -(n_data as f64) / var - 1e-12;
            assert!((h.lambda[(0, 0)] - expected).abs() < 1e-8, "{s:?}");
        }
    }

    #[test]
    fn hvp_zero_and_dimension() {
        let m =
            GaussianMixture::new(vec![0.5, 0.5], vec![1.0, 1.0], GaussianPrior::flat(2)).unwrap();
        let d = Dataset::new(&m, vec![-1.0, 0.5, 2.0]).unwrap();
        assert_eq!(
            hvp(&m, &d, &[0.3, 1.0], &[0.0, 0.0], DiffStrategy::Dual).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(matches!(
            hvp(&m, &d, &[0.3, 1.0], &[1.0], DiffStrategy::Dual),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hessian_exactly_symmetric() {
        let m = GaussianMixture::new(
            vec![0.2, 0.3, 0.5],
            vec![1.0, 0.5, 2.0],
            GaussianPrior::isotropic(3, 0.0, 10.0).unwrap(),
        )
        .unwrap();
        let d = Dataset::new(&m, vec![-2.0, -1.5, 0.1, 0.4, 3.0, 2.2]).unwrap();
        let h = hessian(&m, &d, &[-1.0, 0.5, 2.0], DiffStrategy::Dual).unwrap();
        assert_eq!(h.lambda, h.lambda.transpose());
    }

    #[test]
    fn coin_single_parameter_hvp() {
        let prior_var = 4.0;
        let m = CoinMixture::new(
            vec![1.0],
            GaussianPrior::new(vec![0.5], vec![prior_var]).unwrap(),
        )
        .unwrap();
        let recs = vec![
            CoinRecord::new(7, 10).unwrap(),
            CoinRecord::new(2, 5).unwrap(),
        ];
        let d = Dataset::new(&m, recs).unwrap();
        let z = 0.3_f64;
        let p = 1.0 / (1.0 + (-z).exp());
        let expected = -15.0 * p * (1.0 - p) - 1.0 / prior_var;
        let got = hvp(&m, &d, &[z], &[1.0], DiffStrategy::Dual).unwrap();
        assert!((got[0] - expected).abs() < 1e-13);
    }

    #[test]
    fn not_at_mode() {
        let m = GaussianMixture::new(vec![1.0], vec![1.0], GaussianPrior::flat(1)).unwrap();
        let d = Dataset::new(&m, vec![0.0]).unwrap();
        let theta = ParamVector::new(vec![0.01]).unwrap();
        assert!(matches!(
            laplace_posterior(&m, &d, &theta, DiffStrategy::Dual),
            Err(Error::NotAtMode { .. })
        ));
    }

    #[test]
    fn cholesky_reports_pivot() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky(&a),
            Err(Error::NotPositiveDefinite { pivot: 1 })
        ));
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let l = cholesky(&a).unwrap();
        let inv = cholesky_inverse(&l);
        let id = &inv * &a;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn saddle_is_refused() {
        // Two identical components at the midpoint of two separated clusters
        // is a saddle of the log joint.
        let m =
            GaussianMixture::new(vec![0.5, 0.5], vec![1.0, 1.0], GaussianPrior::flat(2)).unwrap();
        let d = Dataset::new(&m, vec![-3.0, -3.0, 3.0, 3.0]).unwrap();
        let theta = ParamVector::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            laplace_posterior(&m, &d, &theta, DiffStrategy::Dual),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
