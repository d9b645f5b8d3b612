//! Command execution, independent of where the output goes.

use std::time::Instant;

use emlaplace::models::FLAT_PRIOR_VARIANCE;
use emlaplace::oracle::{
    fd_gradient, fd_hessian, gradient_step, hessian_decomposition, hessian_step,
    marginal_by_enumeration, quadrature_evidence, vanishing_derivatives, OracleModel,
    QuadratureGrid,
};
use emlaplace::{
    em_fit, grad_log_joint, laplace_posterior, log_joint, CoinMixture, Dataset, DiffStrategy,
    EmConfig, EmTrace, GaussianMixture, GaussianPrior, LaplacePosterior, ParamVector,
};
use nalgebra::DMatrix;

use crate::args::{CheckArgs, Command, EmArgs, ModelArgs, ModelKind, OutputArgs, StrategyArg};
use crate::data::{parse_coins, parse_reals, DataFile};
use crate::error::CliError;
use crate::report::{
    CheckOutcome, DataDigest, EmSummary, LaplaceSummary, ModelDescriptor, RunReport, Timings,
};

pub const GRADIENT_IDENTITY_TOL: f64 = 1e-6;
pub const VANISHING_TOL: f64 = 1e-6;
pub const ENUMERATION_TOL: f64 = 1e-10;
pub const HESSIAN_TOL: f64 = 1e-5;
pub const DECOMPOSITION_TOL: f64 = 1e-5;
pub const QUADRATURE_REL_TOL: f64 = 0.02;

/// How a command finished once a report exists.
#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    /// EM hit `--max-iters` before either stopping test fired.
    NotConverged,
    /// The Laplace step refused the fitted point.
    ModeFailure(String),
    ChecksFailed,
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::NotConverged => 2,
            Status::ModeFailure(_) => 3,
            Status::ChecksFailed => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    pub status: Status,
}

/// `max|a - b| / (1 + max|b|)`, with `b` the reference.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / (1.0 + b.amax())
}

fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    rel_err(
        &DMatrix::from_column_slice(a.len(), 1, a),
        &DMatrix::from_column_slice(b.len(), 1, b),
    )
}

impl Command {
    fn parts(&self) -> (&ModelArgs, &EmArgs, &OutputArgs) {
        match self {
            Command::Fit(a) => (&a.model, &a.em, &a.output),
            Command::Laplace(a) => (&a.fit.model, &a.fit.em, &a.fit.output),
            Command::Check(a) => (
                &a.laplace.fit.model,
                &a.laplace.fit.em,
                &a.laplace.fit.output,
            ),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Laplace(_) => "laplace",
            Command::Check(_) => "check",
        }
    }

    pub fn output(&self) -> &OutputArgs {
        self.parts().2
    }

    fn strategy(&self) -> Option<DiffStrategy> {
        let arg = match self {
            Command::Fit(_) => return None,
            Command::Laplace(a) => a.strategy,
            Command::Check(a) => a.laplace.strategy,
        };
        Some(match arg {
            StrategyArg::Dual => DiffStrategy::Dual,
            StrategyArg::Complex => DiffStrategy::complex_step(),
            StrategyArg::Fd => DiffStrategy::central_difference(),
        })
    }
}

/// A single value broadcast to all components, or exactly one per component.
fn per_component(
    name: &str,
    values: Option<&[f64]>,
    k: usize,
    default: f64,
) -> Result<Vec<f64>, CliError> {
    match values {
        None => Ok(vec![default; k]),
        Some([v]) => Ok(vec![*v; k]),
        Some(vs) if vs.len() == k => Ok(vs.to_vec()),
        Some(vs) => Err(CliError::Input(format!(
            "--{name} has {} values; expected 1 or {k}",
            vs.len()
        ))),
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Component means at the `(k + 1/2) / K` quantiles of the data.
pub fn quantile_init(data: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    (0..k)
        .map(|j| quantile(&sorted, (j as f64 + 0.5) / k as f64))
        .collect()
}

/// Evenly spaced log-odds on [-1, 1]; 0 for a single component.
pub fn spread_init(k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.0];
    }
    (0..k)
        .map(|j| -1.0 + 2.0 * j as f64 / (k - 1) as f64)
        .collect()
}

struct Setup<M: OracleModel> {
    model: M,
    data: Dataset<M::Record>,
    init: ParamVector,
    descriptor: ModelDescriptor,
    digest: DataDigest,
}

/// Parses the data, builds the model and runs the command.
pub fn run(command: &Command) -> Result<Outcome, CliError> {
    let (args, _, _) = command.parts();
    let k = args.components;
    if k == 0 {
        return Err(CliError::Input("--components must be at least 1".into()));
    }
    let file = DataFile::read(&args.data)?;
    let weights = per_component("weights", args.weights.as_deref(), k, 1.0 / k as f64)?;
    let prior = GaussianPrior::new(
        per_component("prior-mean", args.prior_mean.as_deref(), k, 0.0)?,
        per_component(
            "prior-var",
            args.prior_var.as_deref(),
            k,
            FLAT_PRIOR_VARIANCE,
        )?,
    )
    .map_err(input)?;
    let init = |default: Vec<f64>| -> Result<ParamVector, CliError> {
        let theta = match &args.init {
            Some(v) if v.len() != k => {
                return Err(CliError::Input(format!(
                    "--init has {} values; expected {k}",
                    v.len()
                )))
            }
            Some(v) => v.clone(),
            None => default,
        };
        ParamVector::new(theta).map_err(input)
    };

    match args.model {
        ModelKind::Gmm => {
            let variances = per_component("variances", args.variances.as_deref(), k, 1.0)?;
            let model = GaussianMixture::new(weights.clone(), variances.clone(), prior.clone())
                .map_err(input)?;
            let records = parse_reals(&file.text)?;
            let init = init(quantile_init(&records, k))?;
            let data = Dataset::new(&model, records).map_err(input)?;
            let descriptor = ModelDescriptor {
                kind: ModelKind::Gmm,
                components: k,
                weights,
                variances: Some(variances),
                prior,
            };
            run_with(
                command,
                Setup {
                    digest: digest(&data, &file),
                    model,
                    data,
                    init,
                    descriptor,
                },
            )
        }
        ModelKind::Coin => {
            if args.variances.is_some() {
                return Err(CliError::Input(
                    "--variances applies only to --model gmm".into(),
                ));
            }
            let model = CoinMixture::new(weights.clone(), prior.clone()).map_err(input)?;
            let records = parse_coins(&file.text)?;
            let init = init(spread_init(k))?;
            let data = Dataset::new(&model, records).map_err(input)?;
            let descriptor = ModelDescriptor {
                kind: ModelKind::Coin,
                components: k,
                weights,
                variances: None,
                prior,
            };
            run_with(
                command,
                Setup {
                    digest: digest(&data, &file),
                    model,
                    data,
                    init,
                    descriptor,
                },
            )
        }
    }
}

fn digest<R: Copy>(data: &Dataset<R>, file: &DataFile) -> DataDigest {
    DataDigest {
        records: data.len(),
        sha256: file.sha256.clone(),
    }
}

fn laplace_summary(post: &LaplacePosterior, strategy: DiffStrategy) -> LaplaceSummary {
    let n = post.covariance.nrows();
    LaplaceSummary {
        strategy: strategy.name().to_string(),
        gradient_max_norm: post.grad_max_norm,
        hessian: post.hessian.to_row_major(),
        hessian_asymmetry: post.hessian.asymmetry,
        covariance: (0..n * n)
            .map(|i| post.covariance[(i / n, i % n)])
            .collect(),
        log_det_neg_lambda: post.log_det_neg_lambda,
        log_joint_at_mode: post.log_joint_at_mode,
        log_evidence: post.log_evidence,
    }
}

fn run_with<M: OracleModel>(command: &Command, setup: Setup<M>) -> Result<Outcome, CliError> {
    let (_, em_args, output) = command.parts();
    let Setup {
        model,
        data,
        init,
        descriptor,
        digest,
    } = setup;
    let config = EmConfig {
        max_iters: em_args.max_iters,
        tol_loglik: em_args.tol_loglik,
        tol_param: em_args.tol_param,
    };

    let start = Instant::now();
    let trace: EmTrace = em_fit(&model, &data, &init, &config).map_err(input)?;
    let fit_secs = start.elapsed().as_secs_f64();
    let last = trace.last();
    let mut report = RunReport {
        command: command.name().to_string(),
        model: descriptor,
        data: digest,
        theta_hat: last.theta.to_vec(),
        em: EmSummary {
            theta_init: init.to_vec(),
            iterations: trace.iterations(),
            initial_log_joint: trace.iterates[0].log_joint,
            final_log_joint: last.log_joint,
            converged: trace.converged,
            reason: trace.reason,
        },
        laplace: None,
        checks: None,
        timings: (!output.no_timings).then_some(Timings {
            fit: fit_secs,
            laplace: None,
            check: None,
        }),
    };

    let Some(strategy) = command.strategy() else {
        let status = if trace.converged {
            Status::Ok
        } else {
            Status::NotConverged
        };
        return Ok(Outcome { report, status });
    };
    if !trace.converged {
        return Ok(Outcome {
            report,
            status: Status::NotConverged,
        });
    }

    let theta_hat = last.theta.clone();
    let start = Instant::now();
    let posterior = laplace_posterior(&model, &data, &theta_hat, strategy);
    let laplace_secs = start.elapsed().as_secs_f64();
    if let Some(t) = report.timings.as_mut() {
        t.laplace = Some(laplace_secs);
    }
    let posterior = match (posterior, command) {
        (Ok(p), _) => p,
        (Err(e), Command::Check(_)) => return Err(CliError::Oracle(e.to_string())),
        (Err(e), _) => {
            return Ok(Outcome {
                report,
                status: Status::ModeFailure(e.to_string()),
            })
        }
    };
    report.laplace = Some(laplace_summary(&posterior, strategy));

    let Command::Check(check_args) = command else {
        return Ok(Outcome {
            report,
            status: Status::Ok,
        });
    };
    let start = Instant::now();
    let checks = run_checks(&model, &data, &posterior, check_args)
        .map_err(|e| CliError::Oracle(e.to_string()))?;
    if let Some(t) = report.timings.as_mut() {
        t.check = Some(start.elapsed().as_secs_f64());
    }
    let status = if checks.iter().all(|c| c.passed) {
        Status::Ok
    } else {
        Status::ChecksFailed
    };
    report.checks = Some(checks);
    Ok(Outcome { report, status })
}

fn outcome(name: &str, residual: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        residual,
        reference: None,
        tolerance: Some(tolerance),
        passed: residual <= tolerance,
    }
}

fn run_checks<M: OracleModel>(
    model: &M,
    data: &Dataset<M::Record>,
    posterior: &LaplacePosterior,
    args: &CheckArgs,
) -> emlaplace::Result<Vec<CheckOutcome>> {
    let theta = posterior.mean.as_slice();
    let lj = |t: &[f64]| log_joint(model, data, t);
    let mut out = Vec::new();

    let grad: Vec<f64> = grad_log_joint(model, data, theta)?
        .into_iter()
        .map(|g: f64| g + args.perturb_grad)
        .collect();
    let fd = fd_gradient(lj, theta, gradient_step())?;
    out.push(outcome(
        "gradient-identity",
        rel_err_vec(&grad, &fd),
        GRADIENT_IDENTITY_TOL,
    ));

    let vanishing = vanishing_derivatives(model, data, theta)?;
    out.push(outcome(
        "vanishing-derivatives",
        vanishing.max_abs(),
        VANISHING_TOL,
    ));

    let enumerated = marginal_by_enumeration(model, data.records(), theta)?;
    out.push(CheckOutcome {
        reference: Some(enumerated),
        ..outcome(
            "enumeration",
            (enumerated - posterior.log_joint_at_mode).abs(),
            ENUMERATION_TOL,
        )
    });

    let lambda = &posterior.hessian.lambda;
    let fd_h = fd_hessian(lj, theta, hessian_step())?;
    out.push(outcome(
        "hessian-vs-fd",
        rel_err(lambda, &fd_h),
        HESSIAN_TOL,
    ));

    let parts = hessian_decomposition(model, data.records(), theta)?;
    out.push(outcome(
        "decomposition",
        rel_err(&parts.total(), lambda),
        DECOMPOSITION_TOL,
    ));
    out.push(CheckOutcome {
        name: "extra-term".to_string(),
        residual: parts.extra_term.amax(),
        reference: None,
        tolerance: None,
        passed: true,
    });

    if args.quadrature {
        let grid = QuadratureGrid::around(theta.to_vec(), args.quad_points);
        let q = quadrature_evidence(model, data.records(), &grid)?;
        out.push(CheckOutcome {
            reference: Some(q),
            ..outcome(
                "quadrature-evidence",
                (posterior.log_evidence - q).abs() / q.abs(),
                QUADRATURE_REL_TOL,
            )
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_init_on_four_points() {
        let init = quantile_init(&[1.1, -1.2, 0.9, -0.8], 2);
        assert!(
            (init[0] - -0.9).abs() < 1e-15 && (init[1] - 0.95).abs() < 1e-15,
            "{init:?}"
        );
        assert_eq!(quantile_init(&[3.0], 3), vec![3.0; 3]);
    }

    #[test]
    fn spread_init_values() {
        assert_eq!(spread_init(1), vec![0.0]);
        assert_eq!(spread_init(3), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(per_component("x", None, 2, 7.0).unwrap(), vec![7.0, 7.0]);
        assert_eq!(
            per_component("x", Some(&[3.0]), 3, 0.0).unwrap(),
            vec![3.0; 3]
        );
        assert!(per_component("x", Some(&[1.0, 2.0]), 3, 0.0).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Status::Ok.exit_code(), 0);
        assert_eq!(Status::NotConverged.exit_code(), 2);
        assert_eq!(Status::ModeFailure(String::new()).exit_code(), 3);
        assert_eq!(Status::ChecksFailed.exit_code(), 4);
        assert_eq!(CliError::Input(String::new()).exit_code(), 1);
        assert_eq!(CliError::Oracle(String::new()).exit_code(), 4);
    }
}
