//! Generic scalars and forward-mode directional derivatives.
//!
//! Model code is written once against [`Scalar`] and evaluated with one of
//! three realizations:
//!
//! - `f64`: plain real arithmetic.
//! - [`Dual`]: value plus tangent, carrying exact first derivatives.
//! - `Complex64`: the complex step, where `Im f(x + ih) / h` approximates `f'(x)`
//!   without subtractive cancellation.
//!
//! Branches in model code must look only at [`Scalar::value`] so that every
//! realization follows the same control flow.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn from_f64(x: f64) -> Self;

    /// The real (value) part. All comparisons go through this.
    fn value(self) -> f64;

    fn exp(self) -> Self;

    /// Unchecked natural log; see [`Scalar::try_ln`].
    fn ln(self) -> Self;

    /// Unchecked square root; see [`Scalar::try_sqrt`].
    fn sqrt(self) -> Self;

    /// True when every component (value and tangent or imaginary part) is finite.
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn try_ln(self) -> Result<Self> {
        let v = self.value();
        if v > 0.0 {
            Ok(self.ln())
        } else {
            Err(Error::Domain {
                op: "log",
                value: v,
            })
        }
    }

    fn try_sqrt(self) -> Result<Self> {
        let v = self.value();
        if v > 0.0 {
            Ok(self.sqrt())
        } else {
            Err(Error::Domain {
                op: "sqrt",
                value: v,
            })
        }
    }

    fn max_by_value(self, other: Self) -> Self {
        if other.value() > self.value() {
            other
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    #[inline]
    fn value(self) -> f64 {
        self.re
    }
    #[inline]
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        Complex64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        Complex64::sqrt(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        Complex64::is_finite(self)
    }
}

/// First-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    /// A constant: zero tangent.
    pub const fn constant(re: f64) -> Self {
        Self { re, eps: 0.0 }
    }

    /// An independent variable: unit tangent.
    pub const fn variable(re: f64) -> Self {
        Self { re, eps: 1.0 }
    }
}

impl Scalar for Dual {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Dual::constant(x)
    }
    #[inline]
    fn value(self) -> f64 {
        self.re
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, e * self.eps)
    }
    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (2.0 * s))
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.re * rhs.re, self.re * rhs.eps + self.eps * rhs.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let q = self.re / rhs.re;
        Dual::new(q, (self.eps - q * rhs.eps) / rhs.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, rhs: Dual) {
        self.re += rhs.re;
        self.eps += rhs.eps;
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: f64) -> Dual {
        Dual::new(self.re + rhs, self.eps)
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: f64) -> Dual {
        Dual::new(self.re - rhs, self.eps)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: f64) -> Dual {
        Dual::new(self.re * rhs, self.eps * rhs)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: f64) -> Dual {
        Dual::new(self.re / rhs, self.eps / rhs)
    }
}

/// How a directional derivative is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DiffStrategy {
    /// Dual numbers; exact to round-off, no step.
    #[default]
    Dual,
    /// Complex step with imaginary perturbation `step`.
    ComplexStep { step: f64 },
    /// Symmetric difference. `step` is relative: the actual offset along the
    /// direction is `step · max(1, |x_i|)` over the coordinates the direction
    /// touches, divided by the direction's max-norm.
    CentralDifference { step: f64 },
}

impl DiffStrategy {
    pub const DEFAULT_COMPLEX_STEP: f64 = 1e-20;

    pub fn complex_step() -> Self {
        DiffStrategy::ComplexStep {
            step: Self::DEFAULT_COMPLEX_STEP,
        }
    }

    /// Central differences with the cube root of machine epsilon.
    pub fn central_difference() -> Self {
        DiffStrategy::CentralDifference {
            step: f64::EPSILON.cbrt(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DiffStrategy::Dual => "dual",
            DiffStrategy::ComplexStep { .. } => "complex",
            DiffStrategy::CentralDifference { .. } => "fd",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DiffStrategy::Dual => Ok(()),
            DiffStrategy::ComplexStep { step } | DiffStrategy::CentralDifference { step } => {
                if step.is_finite() && step > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidStep(step))
                }
            }
        }
    }
}

/// A vector-valued function that can be evaluated over any [`Scalar`].
///
/// Closures cannot be generic over their argument type, so functions that
/// need to be differentiated implement this trait instead.
pub trait DiffFunction {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>>;
}

/// `d/dα f(x + α v)` at `α = 0`, componentwise.
pub fn directional_derivative<F: DiffFunction + ?Sized>(
    f: &F,
    x: &[f64],
    v: &[f64],
    strategy: DiffStrategy,
) -> Result<Vec<f64>> {
    if x.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: v.len(),
        });
    }
    strategy.validate()?;

    let out = match strategy {
        DiffStrategy::Dual => {
            let seeded: Vec<Dual> = x
                .iter()
                .zip(v)
                .map(|(&xi, &vi)| Dual::new(xi, vi))
                .collect();
            f.eval(&seeded)?
                .into_iter()
                .map(|d| if d.re.is_finite() { d.eps } else { f64::NAN })
                .collect::<Vec<_>>()
        }
        DiffStrategy::ComplexStep { step } => {
            let seeded: Vec<Complex64> = x
                .iter()
                .zip(v)
                .map(|(&xi, &vi)| Complex64::new(xi, step * vi))
                .collect();
            f.eval(&seeded)?
                .into_iter()
                .map(|c| {
                    if c.re.is_finite() {
                        c.im / step
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        }
        DiffStrategy::CentralDifference { step } => central_directional(f, x, v, step)?,
    };

    if let Some(index) = out.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            index,
            context: "directional derivative",
        });
    }
    Ok(out)
}

fn central_directional<F: DiffFunction + ?Sized>(
    f: &F,
    x: &[f64],
    v: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let vmax = v.iter().fold(0.0_f64, |m, vi| m.max(vi.abs()));
    if vmax == 0.0 {
        // Still evaluate once so the output dimension is f's.
        return Ok(f.eval(x)?.iter().map(|_| 0.0).collect());
    }
    let scale = x
        .iter()
        .zip(v)
        .filter(|(_, vi)| **vi != 0.0)
        .fold(1.0_f64, |m, (xi, _)| m.max(xi.abs()));
    let alpha = step * scale / vmax;

    let plus: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi + alpha * vi).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi - alpha * vi).collect();
    let fp = f.eval(&plus)?;
    let fm = f.eval(&minus)?;
    if fp.len() != fm.len() {
        return Err(Error::DimensionMismatch {
            expected: fp.len(),
            found: fm.len(),
        });
    }
    // Divide by the actual (representable) offset.
    Ok(fp
        .iter()
        .zip(&fm)
        .map(|(a, b)| (a - b) / (2.0 * alpha))
        .collect())
}
