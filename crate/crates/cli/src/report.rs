//! The JSON run report.
//!
//! Field order is fixed by declaration order and every float is written with
//! 17 significant digits, which round-trips `f64` exactly.

use std::io::{self, Write};

use emlaplace::{GaussianPrior, StopReason};
use serde::ser::Serialize;
use serde::Deserialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::args::ModelKind;

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub model: ModelDescriptor,
    pub data: DataDigest,
    pub theta_hat: Vec<f64>,
    pub em: EmSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laplace: Option<LaplaceSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<CheckOutcome>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub kind: ModelKind,
    pub components: usize,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<Vec<f64>>,
    pub prior: GaussianPrior,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct DataDigest {
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct EmSummary {
    pub theta_init: Vec<f64>,
    pub iterations: usize,
    pub initial_log_joint: f64,
    pub final_log_joint: f64,
    pub converged: bool,
    pub reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct LaplaceSummary {
    pub strategy: String,
    pub gradient_max_norm: f64,
    /// Row-major `n × n`.
    pub hessian: Vec<f64>,
    pub hessian_asymmetry: f64,
    /// Row-major `n × n`.
    pub covariance: Vec<f64>,
    pub log_det_neg_lambda: f64,
    pub log_joint_at_mode: f64,
    pub log_evidence: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub residual: f64,
    /// Oracle value compared against, for scalar checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    /// `None` for purely informational rows.
    pub tolerance: Option<f64>,
    pub passed: bool,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        match self.tolerance {
            Some(tol) => format!(
                "[{}] {:<24} residual {:.3e} (tolerance {:.0e})",
                if self.passed { "PASS" } else { "FAIL" },
                self.name,
                self.residual,
                tol
            ),
            None => format!("[INFO] {:<24} value {:.3e}", self.name, self.residual),
        }
    }
}

/// Seconds per phase.
#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct Timings {
    pub fit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laplace: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<f64>,
}

/// Pretty JSON with every float in `d.dddddddddddddddde±x` form.
struct FixedDigits(PrettyFormatter<'static>);

impl Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut buf = Vec::new();
        let mut ser =
            serde_json::Serializer::with_formatter(&mut buf, FixedDigits(PrettyFormatter::new()));
        self.serialize(&mut ser)
            .expect("report fields are serializable");
        buf.push(b'\n');
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
