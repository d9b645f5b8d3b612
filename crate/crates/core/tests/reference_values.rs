//! Worked examples checked against independent references: straight-line EM
//! scripts, high-precision constants, finite differences and quadrature.

use std::f64::consts::PI;

use emlaplace::oracle::{
    fd_gradient, fd_hessian, gradient_step, hessian_decomposition, hessian_step,
    marginal_by_enumeration, quadrature_evidence, QuadratureGrid,
};
use emlaplace::{
    divergence, em_fit, em_step, grad_log_joint, hessian, hvp, laplace_posterior, log_joint,
    CoinMixture, CoinRecord, Dataset, DiffStrategy, EmConfig, GaussianMixture, GaussianPrior,
    ParamVector, StopReason,
};
use nalgebra::DMatrix;

const FOUR_POINTS: [f64; 4] = [-1.2, -0.8, 0.9, 1.1];

/// Fixed point of EM on `FOUR_POINTS` from (-2, 2); 40-digit reference run.
const FOUR_POINT_MODE: [f64; 2] = [-0.259_450_936_333_095_87, 0.259_318_584_657_521_94];

fn gmm2() -> GaussianMixture {
    GaussianMixture::new(vec![0.5, 0.5], vec![1.0, 1.0], GaussianPrior::flat(2)).unwrap()
}

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).unwrap()
}

fn rel_max_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / (1.0 + b.amax())
}

/// One EM iteration for a two-component unit-variance mixture with equal
/// weights and a N(0, 1e12) prior, written out by hand.
fn scripted_em_step(means: [f64; 2], data: &[f64]) -> [f64; 2] {
    let prior_precision = 1e-12;
    let mut num = [0.0; 2];
    let mut den = [prior_precision; 2];
    for &x in data {
        let a = 0.5 * (-(x - means[0]) * (x - means[0]) / 2.0).exp();
        let b = 0.5 * (-(x - means[1]) * (x - means[1]) / 2.0).exp();
        let r0 = a / (a + b);
        let r1 = b / (a + b);
        num[0] += r0 * x;
        den[0] += r0;
        num[1] += r1 * x;
        den[1] += r1;
    }
    [num[0] / den[0], num[1] / den[1]]
}

#[test]
fn em_step_matches_script() {
    let m = gmm2();
    let d = Dataset::new(&m, vec![-1.0, 1.0]).unwrap();
    let next = em_step(&m, &d, &pv(&[2.0, -2.0])).unwrap();
    let script = scripted_em_step([2.0, -2.0], &[-1.0, 1.0]);
    // 40-digit value: ±0.96402758007485285637
    assert!((next[0] - 0.964_027_580_074_852_9).abs() < 1e-14);
    assert!((next[1] + 0.964_027_580_074_852_9).abs() < 1e-14);
    assert!((next[0] - script[0]).abs() < 1e-14 && (next[1] - script[1]).abs() < 1e-14);
}

#[test]
fn em_fit_matches_script_to_convergence() {
    let m = gmm2();
    let d = Dataset::new(&m, FOUR_POINTS.to_vec()).unwrap();
    let trace = em_fit(&m, &d, &pv(&[-2.0, 2.0]), &EmConfig::tight()).unwrap();
    assert!(trace.converged);
    assert_eq!(trace.reason, StopReason::ParamTol);

    let mut script = [-2.0, 2.0];
    for _ in 0..5000 {
        script = scripted_em_step(script, &FOUR_POINTS);
    }
    let fit = &trace.last().theta;
    for k in 0..2 {
        assert!((fit[k] - script[k]).abs() < 1e-8);
        assert!((fit[k] - FOUR_POINT_MODE[k]).abs() < 1e-8);
    }
    assert!(fit[0] < fit[1], "start ordering is preserved");

    let g = grad_log_joint(&m, &d, fit.as_slice()).unwrap();
    assert!(g.iter().all(|x| x.abs() <= 1e-6));
}

#[test]
fn em_fixed_point_is_unchanged() {
    let m = gmm2();
    let d = Dataset::new(&m, FOUR_POINTS.to_vec()).unwrap();
    let fit = em_fit(&m, &d, &pv(&[-2.0, 2.0]), &EmConfig::tight()).unwrap();
    let mut mode = fit.last().theta.clone();
    for _ in 0..200 {
        mode = em_step(&m, &d, &mode).unwrap();
    }
    let g = grad_log_joint(&m, &d, mode.as_slice()).unwrap();
    assert!(g.iter().all(|x| x.abs() < 1e-12), "{g:?}");
    let again = em_step(&m, &d, &mode).unwrap();
    assert!(again.max_abs_diff(&mode) < 1e-10);

    let trace = em_fit(&m, &d, &mode, &EmConfig::default()).unwrap();
    assert_eq!(trace.iterations(), 1);
    assert_eq!(trace.reason, StopReason::ParamTol);
}

#[test]
fn log_joint_symmetric_means() {
    let m = gmm2();
    let d = Dataset::new(&m, vec![0.0]).unwrap();
    let theta = [1.0, -1.0];
    let prior = m.prior_log_density(&theta);
    // 40-digit: log N(0 | 1, 1) = -1.4189385332046727418
    let lj = log_joint(&m, &d, &theta).unwrap() - prior;
    assert!((lj + 1.418_938_533_204_672_7).abs() < 1e-12);
    let oracle = marginal_by_enumeration(&m, d.records(), &theta).unwrap() - prior;
    assert!((lj - oracle).abs() < 1e-12);
}

trait PriorTerm {
    fn prior_log_density(&self, theta: &[f64]) -> f64;
}

impl PriorTerm for GaussianMixture {
    fn prior_log_density(&self, theta: &[f64]) -> f64 {
        use emlaplace::MixtureModel;
        self.prior().log_density(theta)
    }
}

#[test]
fn divergence_reference_values() {
    let m = gmm2();
    let d = Dataset::new(&m, vec![0.0]).unwrap();
    // Both posteriors at x = 0 are (1/2, 1/2).
    assert!(divergence(&m, &d, &[0.0, 0.0], &[1.0, -1.0]).unwrap().abs() < 1e-15);

    let d = Dataset::new(&m, vec![0.0, 0.5]).unwrap();
    // 40-digit enumeration: 0.12011450695827752463
    let v = divergence(&m, &d, &[0.0, 0.0], &[1.0, -1.0]).unwrap();
    assert!((v - 0.120_114_506_958_277_52).abs() < 1e-14, "{v}");
}

#[test]
fn four_point_marginal_agrees_with_enumeration() {
    let m = gmm2();
    let d = Dataset::new(&m, FOUR_POINTS.to_vec()).unwrap();
    let theta = [1.0, -1.0];
    let a = log_joint(&m, &d, &theta).unwrap();
    let b = marginal_by_enumeration(&m, d.records(), &theta).unwrap();
    assert!((a - b).abs() < 1e-10);
}

#[test]
fn gradient_matches_finite_differences() {
    let m = gmm2();
    let d = Dataset::new(&m, vec![0.0]).unwrap();
    let g = grad_log_joint(&m, &d, &[1.0, -1.0]).unwrap();
    let fd = fd_gradient(
        |t: &[f64]| marginal_by_enumeration(&m, d.records(), t),
        &[1.0, -1.0],
        gradient_step(),
    )
    .unwrap();
    // Analytic: each slot is 0.5 · (0 - μ_k).
    assert!((g[0] + 0.5).abs() < 1e-11 && (g[1] - 0.5).abs() < 1e-11);
    for k in 0..2 {
        assert!((g[k] - fd[k]).abs() <= 1e-7 * fd[k].abs());
    }
}

#[test]
fn hessian_at_four_point_mode_matches_dense_fd() {
    let m = gmm2();
    let d = Dataset::new(&m, FOUR_POINTS.to_vec()).unwrap();
    let mode = FOUR_POINT_MODE;
    let reference = fd_hessian(
        |t: &[f64]| marginal_by_enumeration(&m, d.records(), t),
        &mode,
        hessian_step(),
    )
    .unwrap();
    for s in [
        DiffStrategy::Dual,
        DiffStrategy::complex_step(),
        DiffStrategy::central_difference(),
    ] {
        let h = hessian(&m, &d, &mode, s).unwrap();
        assert!(rel_max_err(&h.lambda, &reference) <= 1e-5, "{s:?}");
        for i in 0..2 {
            let mut e = [0.0; 2];
            e[i] = 1.0;
            let col = hvp(&m, &d, &mode, &e, s).unwrap();
            let col = DMatrix::from_column_slice(2, 1, &col);
            let expected = DMatrix::from_fn(2, 1, |r, _| reference[(r, i)]);
            assert!(rel_max_err(&col, &expected) <= 1e-5);
        }
    }
}

#[test]
fn decomposition_reconstructs_hessian() {
    let m = gmm2();
    let d = Dataset::new(&m, FOUR_POINTS.to_vec()).unwrap();
    for theta in [[1.0, -1.0], FOUR_POINT_MODE] {
        let parts = hessian_decomposition(&m, d.records(), &theta).unwrap();
        let h = hessian(&m, &d, &theta, DiffStrategy::Dual).unwrap();
        assert!(rel_max_err(&parts.total(), &h.lambda) <= 1e-5);
        assert!(parts.extra_term.amax() > 0.1, "posterior depends on Θ here");
    }

    // Identical components centred on the only datum: the posterior does not
    // move to first order.
    let d0 = Dataset::new(&m, vec![0.0]).unwrap();
    let parts = hessian_decomposition(&m, d0.records(), &[0.0, 0.0]).unwrap();
    assert!(parts.extra_term.amax() <= 1e-8);
    let h = hessian(&m, &d0, &[0.0, 0.0], DiffStrategy::Dual).unwrap();
    assert!(rel_max_err(&parts.aux_hessian, &h.lambda) <= 1e-8);
}

#[test]
fn laplace_conjugate_single_datum() {
    // One datum x = 0, σ² = 1, N(0, 1e12) prior: the log joint is exactly
    // quadratic, so Laplace is exact. Marginal: N(0 | 0, 1 + 1e12).
    let var_prior = 1e12;
    let m = GaussianMixture::new(vec![1.0], vec![1.0], GaussianPrior::flat(1)).unwrap();
    let d = Dataset::new(&m, vec![0.0]).unwrap();
    let fit = em_fit(&m, &d, &pv(&[0.7]), &EmConfig::tight()).unwrap();
    let post = laplace_posterior(&m, &d, &fit.last().theta, DiffStrategy::Dual).unwrap();

    let closed_cov = 1.0 / (1.0 + 1.0 / var_prior);
    let closed_evidence = -0.5 * (2.0 * PI * (1.0 + var_prior)).ln();
    assert!(post.mean[0].abs() < 1e-12);
    assert!((post.covariance[(0, 0)] - closed_cov).abs() < 1e-10);
    assert!((post.log_evidence - closed_evidence).abs() < 1e-10);
    // Removing the prior's normalizer leaves ∫ N(0 | μ, 1) dμ = 1.
    let improper = post.log_evidence + 0.5 * (2.0 * PI * var_prior).ln();
    assert!(improper.abs() < 1e-10, "{improper}");
}

#[test]
fn laplace_coin_evidence_close_to_quadrature() {
    let prior = GaussianPrior::new(vec![0.0], vec![4.0]).unwrap();
    let m = CoinMixture::new(vec![1.0], prior).unwrap();
    let recs = vec![
        CoinRecord::new(7, 10).unwrap(),
        CoinRecord::new(6, 9).unwrap(),
        CoinRecord::new(2, 4).unwrap(),
    ];
    let d = Dataset::new(&m, recs).unwrap();
    let fit = em_fit(&m, &d, &pv(&[0.0]), &EmConfig::tight()).unwrap();
    let mode = fit.last().theta.clone();
    let post = laplace_posterior(&m, &d, &mode, DiffStrategy::Dual).unwrap();
    let q = quadrature_evidence(
        &m,
        d.records(),
        &QuadratureGrid::around(mode.to_vec(), 100_001),
    )
    .unwrap();
    assert!(
        (post.log_evidence - q).abs() <= 0.02 * q.abs(),
        "{} {q}",
        post.log_evidence
    );
}

#[test]
fn single_parameter_coin_second_derivative() {
    let prior = GaussianPrior::new(vec![-0.5], vec![2.5]).unwrap();
    let m = CoinMixture::new(vec![1.0], prior).unwrap();
    let recs = vec![
        CoinRecord::new(3, 8).unwrap(),
        CoinRecord::new(9, 12).unwrap(),
    ];
    let d = Dataset::new(&m, recs).unwrap();
    for z in [-3.0, -0.2, 0.0, 1.7, 12.0] {
        // d²/dz² [s log p + (t - s) log(1 - p)] = -t p (1 - p); prior adds -1/v.
        let p: f64 = 1.0 / (1.0 + f64::exp(-z));
        let expected = -20.0 * p * (1.0 - p) - 1.0 / 2.5;
        for s in [DiffStrategy::Dual, DiffStrategy::complex_step()] {
            let got = hvp(&m, &d, &[z], &[1.0], s).unwrap()[0];
            assert!(
                (got - expected).abs() <= 1e-12 * (1.0 + expected.abs()),
                "{z} {s:?}"
            );
        }
    }
}

#[test]
fn not_at_mode_is_refused() {
    let m = gmm2();
    let d = Dataset::new(&m, FOUR_POINTS.to_vec()).unwrap();
    // Shift the mode until the gradient max-norm is about 1e-2.
    let theta = pv(&[FOUR_POINT_MODE[0] + 0.2, FOUR_POINT_MODE[1]]);
    let g = grad_log_joint(&m, &d, theta.as_slice()).unwrap();
    assert!(g.iter().any(|x| x.abs() > 1e-3));
    let err = laplace_posterior(&m, &d, &theta, DiffStrategy::Dual).unwrap_err();
    assert!(err.to_string().contains("not at mode"));
}
