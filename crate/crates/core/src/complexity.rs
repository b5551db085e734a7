//! Decomposable complexity models `sum_i phi(w_i)` and their tolerance-space
//! views.
//!
//! For every coordinate the solver works with `phi_hat(tau) = phi(w0 + a * tau)`
//! where `a` is the descent sign of `phi` at `w0`. Each kind gives a smooth,
//! strictly convex `phi_hat` on `tau >= 0`:
//!
//! | kind                  | `phi_hat(tau)`      | minimizer distance       |
//! |-----------------------|---------------------|--------------------------|
//! | `LogTolerance`        | `-ln tau`           | none (`inf`)             |
//! | `QuadraticToCodeword` | `h (tau - d)^2`     | `d` = gap to nearest code |
//! | `MagnitudePrune`      | `(tau - abs(w0))^2` | `abs(w0)`                |

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComplexityKind {
    LogTolerance,
    QuadraticToCodeword,
    MagnitudePrune,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityModel {
    kind: ComplexityKind,
    codebook: Option<Vec<f64>>,
    hessian_diag: Option<Vec<f64>>,
}

/// Descent signs and distance to the minimizer along them, per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentInfo {
    pub signs: Vec<f64>,
    pub dist_to_min: Vec<f64>,
}

impl DescentInfo {
    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }
}

/// `phi_hat` of a single coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoordinatePhi {
    NegLog,
    /// `curvature * (tau - dist)^2`
    Quadratic { curvature: f64, dist: f64 },
}

impl CoordinatePhi {
    pub fn value(&self, tau: f64) -> f64 {
        match *self {
            CoordinatePhi::NegLog => -tau.ln(),
            CoordinatePhi::Quadratic { curvature, dist } => curvature * (tau - dist) * (tau - dist),
        }
    }

    /// Derivative in tau; `-inf` at `tau <= 0` for the log form.
    pub fn derivative(&self, tau: f64) -> f64 {
        match *self {
            CoordinatePhi::NegLog => {
                if tau > 0.0 {
                    -1.0 / tau
                } else {
                    f64::NEG_INFINITY
                }
            }
            CoordinatePhi::Quadratic { curvature, dist } => 2.0 * curvature * (tau - dist),
        }
    }

    /// Solves `derivative(tau) = y` for `tau >= 0`.
    pub fn inverse_derivative(&self, y: f64) -> Result<f64> {
        match *self {
            CoordinatePhi::NegLog => {
                if y < 0.0 && y.is_finite() {
                    Ok(-1.0 / y)
                } else {
                    Err(Error::Domain(format!("-1/tau never equals {y} for tau > 0")))
                }
            }
            CoordinatePhi::Quadratic { curvature, dist } => {
                let lowest = -2.0 * curvature * dist;
                if y >= lowest && y.is_finite() {
                    Ok((dist + y / (2.0 * curvature)).max(0.0))
                } else {
                    Err(Error::Domain(format!(
                        "derivative {y} below its value {lowest} at tau = 0"
                    )))
                }
            }
        }
    }
}

fn check_codebook(codebook: &[f64]) -> Result<()> {
    if codebook.is_empty() {
        return Err(Error::Config("codebook is empty".into()));
    }
    if codebook.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config("codebook contains a non-finite value".into()));
    }
    if codebook.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("codebook must be strictly ascending".into()));
    }
    Ok(())
}

/// Index of the codeword nearest `w`. Exact midpoints go to the codeword of
/// smaller magnitude, then to the lower one.
pub fn nearest_codeword(codebook: &[f64], w: f64) -> usize {
    let upper = codebook.partition_point(|&c| c < w);
    if upper == 0 {
        return 0;
    }
    if upper == codebook.len() {
        return codebook.len() - 1;
    }
    let lower = upper - 1;
    let dl = w - codebook[lower];
    let du = codebook[upper] - w;
    let tie_up = dl == du && codebook[upper].abs() < codebook[lower].abs();
    if du < dl || tie_up {
        upper
    } else {
        lower
    }
}

fn toward_zero(w: f64) -> f64 {
    if w > 0.0 {
        -1.0
    } else {
        1.0
    }
}

impl ComplexityModel {
    pub fn log_tolerance() -> Self {
        Self {
            kind: ComplexityKind::LogTolerance,
            codebook: None,
            hessian_diag: None,
        }
    }

    pub fn magnitude_prune() -> Self {
        Self {
            kind: ComplexityKind::MagnitudePrune,
            codebook: None,
            hessian_diag: None,
        }
    }

    pub fn quadratic_to_codeword(codebook: Vec<f64>, hessian_diag: Vec<f64>) -> Result<Self> {
        check_codebook(&codebook)?;
        if let Some(i) = hessian_diag.iter().position(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Config(format!(
                "hessian diagonal entry {i} is {} (must be positive)",
                hessian_diag[i]
            )));
        }
        Ok(Self {
            kind: ComplexityKind::QuadraticToCodeword,
            codebook: Some(codebook),
            hessian_diag: Some(hessian_diag),
        })
    }

    /// Rebuilds a model from its parts with the same checks as the
    /// constructors.
    pub fn from_parts(
        kind: ComplexityKind,
        codebook: Option<Vec<f64>>,
        hessian_diag: Option<Vec<f64>>,
    ) -> Result<Self> {
        match (kind, codebook, hessian_diag) {
            (ComplexityKind::LogTolerance, None, None) => Ok(Self::log_tolerance()),
            (ComplexityKind::MagnitudePrune, None, None) => Ok(Self::magnitude_prune()),
            (ComplexityKind::QuadraticToCodeword, Some(c), Some(h)) => Self::quadratic_to_codeword(c, h),
            (kind, _, _) => Err(Error::Config(format!(
                "{kind:?} takes a codebook and hessian diagonal only when quadratic"
            ))),
        }
    }

    pub fn kind(&self) -> ComplexityKind {
        self.kind
    }

    pub fn codebook(&self) -> Option<&[f64]> {
        self.codebook.as_deref()
    }

    pub fn hessian_diag(&self) -> Option<&[f64]> {
        self.hessian_diag.as_deref()
    }

    fn curvature(&self, i: usize) -> f64 {
        self.hessian_diag.as_ref().map_or(1.0, |h| h[i])
    }

    fn quadratic_parts(&self, n: usize) -> Result<(&[f64], &[f64])> {
        let cb = self
            .codebook
            .as_deref()
            .ok_or_else(|| Error::Precondition("quadratic model needs a codebook".into()))?;
        let h = self
            .hessian_diag
            .as_deref()
            .ok_or_else(|| Error::Precondition("quadratic model needs a hessian diagonal".into()))?;
        if h.len() != n {
            return Err(Error::Shape(format!(
                "hessian diagonal has {} entries for {n} parameters",
                h.len()
            )));
        }
        Ok((cb, h))
    }

    pub fn descent_info(&self, w0: &[f64]) -> Result<DescentInfo> {
        let n = w0.len();
        let (signs, dist_to_min) = match self.kind {
            ComplexityKind::LogTolerance => (
                w0.iter().map(|&w| toward_zero(w)).collect(),
                vec![f64::INFINITY; n],
            ),
            ComplexityKind::MagnitudePrune => (
                w0.iter().map(|&w| toward_zero(w)).collect(),
                w0.iter().map(|w| w.abs()).collect(),
            ),
            ComplexityKind::QuadraticToCodeword => {
                let (cb, _) = self.quadratic_parts(n)?;
                w0.iter()
                    .map(|&w| {
                        let c = cb[nearest_codeword(cb, w)];
                        let sign = if c < w { -1.0 } else { 1.0 };
                        (sign, (c - w).abs())
                    })
                    .unzip()
            }
        };
        Ok(DescentInfo { signs, dist_to_min })
    }

    pub fn coordinate(&self, descent: &DescentInfo, i: usize) -> CoordinatePhi {
        match self.kind {
            ComplexityKind::LogTolerance => CoordinatePhi::NegLog,
            ComplexityKind::MagnitudePrune => CoordinatePhi::Quadratic {
                curvature: 1.0,
                dist: descent.dist_to_min[i],
            },
            ComplexityKind::QuadraticToCodeword => CoordinatePhi::Quadratic {
                curvature: self.curvature(i),
                dist: descent.dist_to_min[i],
            },
        }
    }

    /// `phi` in parameter space, where one exists (not for `LogTolerance`).
    pub fn param_cost(&self, i: usize, w: f64) -> Option<f64> {
        match self.kind {
            ComplexityKind::LogTolerance => None,
            ComplexityKind::MagnitudePrune => Some(w * w),
            ComplexityKind::QuadraticToCodeword => {
                let cb = self.codebook.as_deref()?;
                let gap = cb[nearest_codeword(cb, w)] - w;
                Some(self.curvature(i) * gap * gap)
            }
        }
    }
}

/// `phi_hat'(tau)` for coordinate `i`.
pub fn phi_tau_derivative(cm: &ComplexityModel, descent: &DescentInfo, i: usize, tau: f64) -> Result<f64> {
    if cm.kind() == ComplexityKind::LogTolerance && !(tau > 0.0) {
        return Err(Error::Domain(format!("log tolerance needs tau > 0, got {tau}")));
    }
    Ok(cm.coordinate(descent, i).derivative(tau))
}

/// Inverse of [`phi_tau_derivative`].
pub fn inv_phi_tau_derivative(cm: &ComplexityModel, descent: &DescentInfo, i: usize, y: f64) -> Result<f64> {
    cm.coordinate(descent, i).inverse_derivative(y)
}

/// `Phi(W)`. For `LogTolerance`, `values` are tolerances and the result is the
/// bit-count proxy `sum ceil(log2(param_bound / tau))`, floored at zero bits.
pub fn total_complexity(cm: &ComplexityModel, values: &[f64], param_bound: f64) -> Result<f64> {
    match cm.kind() {
        ComplexityKind::LogTolerance => Ok(values
            .iter()
            .map(|&t| {
                if t > 0.0 {
                    (param_bound / t).log2().ceil().max(0.0)
                } else {
                    f64::INFINITY
                }
            })
            .sum()),
        ComplexityKind::MagnitudePrune => Ok(values.iter().map(|w| w * w).sum()),
        ComplexityKind::QuadraticToCodeword => {
            cm.quadratic_parts(values.len())?;
            Ok(values
                .iter()
                .enumerate()
                .map(|(i, &w)| cm.param_cost(i, w).unwrap_or(0.0))
                .sum())
        }
    }
}

/// Smallest curvature accepted from the finite-difference estimate.
pub const MIN_CURVATURE: f64 = 1e-8;

/// Diagonal of the loss Hessian by central differences of the exact gradient.
/// Non-positive estimates are raised to [`MIN_CURVATURE`].
pub fn fd_hessian_diagonal(model: &Model, data: &Dataset, step: f64) -> Result<Vec<f64>> {
    let base = model.params();
    let mut probe = model.clone();
    let mut w = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        w[i] = base[i] + step;
        probe.set_params(&w)?;
        let up = nn::gradient(&probe, data)?[i];
        w[i] = base[i] - step;
        probe.set_params(&w)?;
        let down = nn::gradient(&probe, data)?[i];
        w[i] = base[i];
        out.push(((up - down) / (2.0 * step)).max(MIN_CURVATURE));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(cb: Vec<f64>, n: usize) -> ComplexityModel {
        ComplexityModel::quadratic_to_codeword(cb, vec![1.0; n]).unwrap()
    }

    #[test]
    fn magnitude_descends_toward_zero() {
        let d = ComplexityModel::magnitude_prune().descent_info(&[0.6]).unwrap();
        assert_eq!(d.signs, vec![-1.0]);
        assert_eq!(d.dist_to_min, vec![0.6]);
    }

    #[test]
    fn quadratic_picks_nearest_codeword() {
        let cm = quad(vec![-1.0, 0.0, 1.0], 1);
        let d = cm.descent_info(&[0.6]).unwrap();
        assert_eq!(d.signs, vec![1.0]);
        assert!((d.dist_to_min[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn midpoint_tie_goes_to_smaller_magnitude() {
        let cb = [-1.0, 0.0, 1.0];
        assert_eq!(cb[nearest_codeword(&cb, 0.5)], 0.0);
        assert_eq!(cb[nearest_codeword(&cb, -0.5)], 0.0);
        let cm = quad(cb.to_vec(), 1);
        let d = cm.descent_info(&[0.5]).unwrap();
        assert_eq!(d.signs, vec![-1.0]);
    }

    #[test]
    fn log_tolerance_has_no_minimizer() {
        let d = ComplexityModel::log_tolerance()
            .descent_info(&[0.3, -2.0, 0.0])
            .unwrap();
        assert!(d.dist_to_min.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn quadratic_needs_codebook_and_hessian() {
        let bad = ComplexityModel {
            kind: ComplexityKind::QuadraticToCodeword,
            codebook: None,
            hessian_diag: None,
        };
        assert!(matches!(bad.descent_info(&[0.0]), Err(Error::Precondition(_))));
        assert!(ComplexityModel::quadratic_to_codeword(vec![1.0, 0.0], vec![1.0]).is_err());
        assert!(ComplexityModel::quadratic_to_codeword(vec![0.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn log_derivative_and_inverse() {
        let cm = ComplexityModel::log_tolerance();
        let d = cm.descent_info(&[1.0]).unwrap();
        assert_eq!(phi_tau_derivative(&cm, &d, 0, 0.5).unwrap(), -2.0);
        assert_eq!(inv_phi_tau_derivative(&cm, &d, 0, -2.0).unwrap(), 0.5);
        assert!(inv_phi_tau_derivative(&cm, &d, 0, 1.0).is_err());
        assert!(phi_tau_derivative(&cm, &d, 0, 0.0).is_err());
    }

    #[test]
    fn quadratic_derivative_by_hand() {
        let cm = quad(vec![-1.0, 0.0, 1.0], 1);
        // w0 = 0.999... sits next to codeword 1; use w0 = 0 with codebook {1}
        let cm1 = quad(vec![1.0], 1);
        let d = cm1.descent_info(&[0.0]).unwrap();
        assert_eq!(d.signs, vec![1.0]);
        assert_eq!(phi_tau_derivative(&cm1, &d, 0, 0.25).unwrap(), -1.5);
        let d = cm.descent_info(&[0.0]).unwrap();
        assert_eq!(d.dist_to_min, vec![0.0]);
        assert!(inv_phi_tau_derivative(&cm1, &cm1.descent_info(&[0.0]).unwrap(), 0, -3.0).is_err());
    }

    #[test]
    fn total_complexity_examples() {
        let mp = ComplexityModel::magnitude_prune();
        assert_eq!(total_complexity(&mp, &[0.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(total_complexity(&mp, &[3.0, 4.0], 1.0).unwrap(), 25.0);
        let q = quad(vec![-1.0, 0.0, 1.0], 3);
        assert_eq!(total_complexity(&q, &[-1.0, 0.0, 1.0], 1.0).unwrap(), 0.0);
        let lt = ComplexityModel::log_tolerance();
        // ceil(log2(1/0.25)) + ceil(log2(1/0.3)) = 2 + 2
        assert_eq!(total_complexity(&lt, &[0.25, 0.3], 1.0).unwrap(), 4.0);
        assert_eq!(total_complexity(&lt, &[2.0], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn fd_hessian_of_linear_unit() {
        use crate::nn::{Activation, Layer};
        let m = Model::new(
            vec![Layer {
                rows: 1,
                cols: 1,
                activation: Activation::Sigmoid,
                w: vec![0.3],
                b: vec![-0.1],
            }],
            None,
        )
        .unwrap();
        let d = Dataset::new(vec![1.0, -2.0], vec![1, 0], 1, 2).unwrap();
        let h = fd_hessian_diagonal(&m, &d, 1e-4).unwrap();
        // d2/dw2 of mean CE = mean(s(1-s) x^2)
        let expect: f64 = [(1.0, 0.3 - 0.1), (-2.0, -0.6 - 0.1)]
            .iter()
            .map(|&(x, z): &(f64, f64)| {
                let s = nn::sigmoid(z);
                s * (1.0 - s) * x * x
            })
            .sum::<f64>()
            / 2.0;
        assert!((h[0] - expect).abs() < 1e-7);
        assert!(h.iter().all(|&v| v >= MIN_CURVATURE));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn phis() -> impl Strategy<Value = CoordinatePhi> {
            prop_oneof![
                Just(CoordinatePhi::NegLog),
                (0.01f64..10.0, 0.0f64..2.0)
                    .prop_map(|(curvature, dist)| CoordinatePhi::Quadratic { curvature, dist }),
            ]
        }

        proptest! {
            #[test]
            fn strictly_convex(phi in phis(), a in 1e-3f64..5.0, b in 1e-3f64..5.0) {
                prop_assume!((a - b).abs() > 1e-3);
                let mid = phi.value(0.5 * (a + b));
                prop_assert!(mid < 0.5 * (phi.value(a) + phi.value(b)));
            }

            #[test]
            fn decreasing_before_minimizer(phi in phis(), u in 0.01f64..0.99, v in 0.01f64..0.99) {
                let end = match phi {
                    CoordinatePhi::NegLog => 10.0,
                    CoordinatePhi::Quadratic { dist, .. } => dist,
                };
                let (t1, t2) = (end * u.min(v), end * u.max(v));
                prop_assume!(t2 - t1 > 1e-6 * end && t1 > 0.0);
                prop_assert!(phi.value(t2) < phi.value(t1));
            }

            #[test]
            fn inverse_undoes_derivative(phi in phis(), tau in 1e-3f64..5.0) {
                let back = phi.inverse_derivative(phi.derivative(tau)).unwrap();
                prop_assert!((back - tau).abs() <= 1e-10 * tau.max(1.0));
            }
        }
    }
}
