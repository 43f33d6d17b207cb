//! Nonlinear programs `min θ(x)` subject to `h(x) = 0`, `g(x) <= 0`, and the
//! registry of built-in test problems.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, FnRole, Result};
use crate::kernels::{norm, Matrix};

/// A scalar field together with its exact gradient.
pub trait ScalarFn: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Hand-coded function/gradient pair.
#[derive(Clone)]
pub struct Analytic {
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
}

impl Analytic {
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    /// `c'x + c0`
    pub fn affine(coeffs: Vec<f64>, offset: f64) -> Self {
        let c = coeffs.clone();
        Self::new(
            move |x| c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + offset,
            move |_| coeffs.clone(),
        )
    }
}

impl ScalarFn for Analytic {
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

/// The problem data. Immutable once built; cheap to share across threads.
#[derive(Clone)]
pub struct NlpProblem {
    name: String,
    n: usize,
    objective: Arc<dyn ScalarFn>,
    equalities: Vec<Arc<dyn ScalarFn>>,
    inequalities: Vec<Arc<dyn ScalarFn>>,
    known_kkt: Vec<Vec<f64>>,
}

impl fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlpProblem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m())
            .field("k", &self.k())
            .finish()
    }
}

/// Values and Jacobians of the constraint stacks at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    /// m x n, row i is the gradient of h_i
    pub a: Matrix,
    /// k x n, row j is the gradient of g_j
    pub b: Matrix,
}

impl NlpProblem {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        objective: Arc<dyn ScalarFn>,
        equalities: Vec<Arc<dyn ScalarFn>>,
        inequalities: Vec<Arc<dyn ScalarFn>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("problem needs n >= 1".into()));
        }
        if !equalities.is_empty() && equalities.len() >= n {
            return Err(Error::TooManyEqualities {
                m: equalities.len(),
                n,
            });
        }
        Ok(Self {
            name: name.into(),
            n,
            objective,
            equalities,
            inequalities,
            known_kkt: Vec::new(),
        })
    }

    /// Attaches points known to satisfy the KKT conditions (used by sweeps
    /// and tests to measure distance to the solution).
    pub fn with_known_kkt(mut self, points: Vec<Vec<f64>>) -> Self {
        self.known_kkt = points;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.equalities.len()
    }

    pub fn k(&self) -> usize {
        self.inequalities.len()
    }

    pub fn known_kkt(&self) -> &[Vec<f64>] {
        &self.known_kkt
    }

    pub fn objective(&self) -> &dyn ScalarFn {
        self.objective.as_ref()
    }

    pub fn equality(&self, i: usize) -> &dyn ScalarFn {
        self.equalities[i].as_ref()
    }

    pub fn inequality(&self, j: usize) -> &dyn ScalarFn {
        self.inequalities[j].as_ref()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn checked_value(&self, f: &dyn ScalarFn, role: FnRole, x: &[f64]) -> Result<f64> {
        let v = f.value(x);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                role,
                what: "value",
            });
        }
        Ok(v)
    }

    fn checked_gradient(&self, f: &dyn ScalarFn, role: FnRole, x: &[f64]) -> Result<Vec<f64>> {
        let g = f.gradient(x);
        if g.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                role,
                what: "gradient",
            });
        }
        Ok(g)
    }

    /// `(θ(x), ∇θ(x))`
    pub fn objective_at(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        let f = self.objective.as_ref();
        Ok((
            self.checked_value(f, FnRole::Objective, x)?,
            self.checked_gradient(f, FnRole::Objective, x)?,
        ))
    }

    /// Constraint values and Jacobians. Empty stacks give zero-row results.
    pub fn evaluate(&self, x: &[f64]) -> Result<ConstraintEval> {
        self.check_dim(x)?;
        let mut h = Vec::with_capacity(self.m());
        let mut a_rows = Vec::with_capacity(self.m());
        for (i, f) in self.equalities.iter().enumerate() {
            let role = FnRole::Equality(i);
            h.push(self.checked_value(f.as_ref(), role, x)?);
            a_rows.push(self.checked_gradient(f.as_ref(), role, x)?);
        }
        let mut g = Vec::with_capacity(self.k());
        let mut b_rows = Vec::with_capacity(self.k());
        for (j, f) in self.inequalities.iter().enumerate() {
            let role = FnRole::Inequality(j);
            g.push(self.checked_value(f.as_ref(), role, x)?);
            b_rows.push(self.checked_gradient(f.as_ref(), role, x)?);
        }
        Ok(ConstraintEval {
            h,
            g,
            a: Matrix::from_rows(&a_rows, self.n)?,
            b: Matrix::from_rows(&b_rows, self.n)?,
        })
    }

    /// `max|h_i| <= eps_h` and `max g_j <= eps_g`; empty maxima pass.
    pub fn is_feasible(&self, x: &[f64], eps_h: f64, eps_g: f64) -> Result<bool> {
        let ev = self.evaluate(x)?;
        Ok(ev.is_feasible(eps_h, eps_g))
    }

    /// Largest relative discrepancy between the supplied gradients and
    /// central differences with the given step, over θ and every constraint.
    pub fn gradient_check(&self, x: &[f64], step: f64) -> Result<f64> {
        self.check_dim(x)?;
        let mut worst = 0.0f64;
        let all = std::iter::once(&self.objective)
            .chain(&self.equalities)
            .chain(&self.inequalities);
        for f in all {
            worst = worst.max(gradient_discrepancy(f.as_ref(), x, step));
        }
        Ok(worst)
    }
}

impl ConstraintEval {
    pub fn is_feasible(&self, eps_h: f64, eps_g: f64) -> bool {
        self.h.iter().all(|v| v.abs() <= eps_h) && self.g.iter().all(|&v| v <= eps_g)
    }
}

/// Relative discrepancy of one function's gradient against central
/// differences: `|∇f - fd| / max(1, |fd|)`.
pub fn gradient_discrepancy(f: &dyn ScalarFn, x: &[f64], step: f64) -> f64 {
    let grad = f.gradient(x);
    let mut xp = x.to_vec();
    let fd: Vec<f64> = (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + step;
            let up = f.value(&xp);
            xp[i] = orig - step;
            let down = f.value(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect();
    let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&fd).max(1.0)
}

/// Default feasibility band.
pub const DEFAULT_FEAS_EPS: f64 = 1e-8;

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &["ex71", "ex72", "rosen_suzuki"];

/// Looks up a registered problem. `ex72` uses `a = b = 1`; see
/// [`ex72_with`] for other parameters.
pub fn builtin(name: &str) -> Result<NlpProblem> {
    match name {
        "ex71" => Ok(ex71()),
        "ex72" => ex72_with(1.0, 1.0),
        "rosen_suzuki" => Ok(rosen_suzuki()),
        _ => Err(Error::UnknownProblem {
            name: name.to_string(),
            available: BUILTIN_NAMES.join(", "),
        }),
    }
}

/// Quadratic objective over a polygon, two variables and four linear
/// inequalities. The unique KKT point is the origin.
pub fn ex71() -> NlpProblem {
    let objective = Analytic::new(
        |x| x[0] * x[0] + 2.0 * x[1] * x[1] + x[0] * x[1] + 6.0 * x[0] + 10.0 * x[1],
        |x| vec![2.0 * x[0] + x[1] + 6.0, 4.0 * x[1] + x[0] + 10.0],
    );
    let ineq: Vec<Arc<dyn ScalarFn>> = vec![
        Arc::new(Analytic::affine(vec![-1.0, 2.0], -3.0)),
        Arc::new(Analytic::affine(vec![-1.0, 0.0], 0.0)),
        Arc::new(Analytic::affine(vec![0.0, -1.0], 0.0)),
        Arc::new(Analytic::affine(vec![1.0, 1.0], -2.0)),
    ];
    NlpProblem::new("ex71", 2, Arc::new(objective), vec![], ineq)
        .expect("ex71 is well formed")
        .with_known_kkt(vec![vec![0.0, 0.0]])
}

/// `min x1² + a x2²` subject to `x1 = b`. KKT point `(b, 0)`.
pub fn ex72_with(a: f64, b: f64) -> Result<NlpProblem> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ex72 needs a > 0 and b > 0, got a={a}, b={b}"
        )));
    }
    let objective = Analytic::new(
        move |x| x[0] * x[0] + a * x[1] * x[1],
        move |x| vec![2.0 * x[0], 2.0 * a * x[1]],
    );
    let eq: Vec<Arc<dyn ScalarFn>> = vec![Arc::new(Analytic::affine(vec![1.0, 0.0], -b))];
    Ok(NlpProblem::new("ex72", 2, Arc::new(objective), eq, vec![])?
        .with_known_kkt(vec![vec![b, 0.0]]))
}

/// The Rosen-Suzuki test problem: four variables, one quadratic equality,
/// two quadratic inequalities. Solution `(0, 1, 2, -1)`.
pub fn rosen_suzuki() -> NlpProblem {
    let objective = Analytic::new(
        |x| {
            x[0] * x[0] + x[1] * x[1] + 2.0 * x[2] * x[2] + x[3] * x[3] - 5.0 * x[0] - 5.0 * x[1]
                - 21.0 * x[2]
                + 7.0 * x[3]
        },
        |x| {
            vec![
                2.0 * x[0] - 5.0,
                2.0 * x[1] - 5.0,
                4.0 * x[2] - 21.0,
                2.0 * x[3] + 7.0,
            ]
        },
    );
    let h = Analytic::new(
        |x| 2.0 * x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + 2.0 * x[0] - x[1] - x[3] - 5.0,
        |x| vec![4.0 * x[0] + 2.0, 2.0 * x[1] - 1.0, 2.0 * x[2], -1.0],
    );
    let g1 = Analytic::new(
        |x| {
            x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3] + x[0] - x[1] + x[2] - x[3] - 8.0
        },
        |x| {
            vec![
                2.0 * x[0] + 1.0,
                2.0 * x[1] - 1.0,
                2.0 * x[2] + 1.0,
                2.0 * x[3] - 1.0,
            ]
        },
    );
    let g2 = Analytic::new(
        |x| x[0] * x[0] + 2.0 * x[1] * x[1] + x[2] * x[2] + 2.0 * x[3] * x[3] - x[0] - x[3] - 10.0,
        |x| vec![2.0 * x[0] - 1.0, 4.0 * x[1], 2.0 * x[2], 4.0 * x[3] - 1.0],
    );
    NlpProblem::new(
        "rosen_suzuki",
        4,
        Arc::new(objective),
        vec![Arc::new(h)],
        vec![Arc::new(g1), Arc::new(g2)],
    )
    .expect("rosen_suzuki is well formed")
    .with_known_kkt(vec![vec![0.0, 1.0, 2.0, -1.0]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_ex72_on_the_constraint() {
        let p = builtin("ex72").unwrap();
        let ev = p.evaluate(&[1.0, 0.0]).unwrap();
        assert_eq!(ev.h, vec![0.0]);
        assert_eq!(ev.a.row(0), &[1.0, 0.0]);
        assert_eq!(ev.b.rows(), 0);
        assert!(ev.g.is_empty());
    }

    #[test]
    fn evaluate_ex71_at_origin() {
        let p = builtin("ex71").unwrap();
        let ev = p.evaluate(&[0.0, 0.0]).unwrap();
        assert_eq!(ev.g, vec![-3.0, 0.0, 0.0, -2.0]);
        assert!(ev.h.is_empty());
        assert_eq!(ev.a.rows(), 0);
        assert_eq!(ev.a.cols(), 2);
    }

    #[test]
    fn evaluate_rejects_wrong_length() {
        let p = builtin("ex71").unwrap();
        assert_eq!(
            p.evaluate(&[0.0]).unwrap_err(),
            Error::DimensionMismatch {
                expected: 2,
                got: 1
            }
        );
    }

    #[test]
    fn non_finite_value_names_the_function() {
        let bad = Analytic::new(|x| 1.0 / x[0], |x| vec![-1.0 / (x[0] * x[0]), 0.0]);
        let p = NlpProblem::new(
            "bad",
            2,
            Arc::new(Analytic::affine(vec![1.0, 1.0], 0.0)),
            vec![],
            vec![Arc::new(Analytic::affine(vec![1.0, 0.0], 0.0)), Arc::new(bad)],
        )
        .unwrap();
        let err = p.evaluate(&[0.0, 1.0]).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                role: FnRole::Inequality(1),
                what: "value"
            }
        );
        assert!(err.to_string().contains("g2"));
    }

    #[test]
    fn feasibility() {
        let rs = builtin("rosen_suzuki").unwrap();
        assert!(rs.is_feasible(&[0.0, 1.0, 2.0, -1.0], 1e-9, 1e-9).unwrap());
        let e71 = builtin("ex71").unwrap();
        assert!(e71.is_feasible(&[0.0, 0.0], 0.0, 0.0).unwrap());
        assert!(e71.is_feasible(&[2.0, 0.0], 1e-9, 1e-9).unwrap());
        let e72 = builtin("ex72").unwrap();
        assert!(!e72.is_feasible(&[0.0, 0.0], 1e-8, 1e-8).unwrap());
    }

    #[test]
    fn gradient_check_cases() {
        let lin = Analytic::affine(vec![1.0, 1.0], -2.0);
        assert!(gradient_discrepancy(&lin, &[0.3, -7.0], 1e-5) <= 1e-9);

        let rs = builtin("rosen_suzuki").unwrap();
        assert!(gradient_discrepancy(rs.objective(), &[1.0; 4], 1e-5) <= 1e-6);

        let skewed = Analytic::new(
            |x| x[0] * x[0] + x[1],
            |x| vec![2.0 * x[0] * 1.1, 1.1],
        );
        let d = gradient_discrepancy(&skewed, &[1.0, 2.0], 1e-5);
        assert!((d - 0.1).abs() < 1e-6, "discrepancy {d}");
    }

    #[test]
    fn registry() {
        assert_eq!(builtin("ex71").unwrap().k(), 4);
        assert_eq!(builtin("ex71").unwrap().m(), 0);
        assert_eq!(builtin("rosen_suzuki").unwrap().n(), 4);
        let e72 = builtin("ex72").unwrap();
        assert_eq!(e72.objective().value(&[1.0, 0.0]), 1.0);
        assert_eq!((e72.m(), e72.k()), (1, 0));
        let err = builtin("nope").unwrap_err().to_string();
        assert!(err.contains("ex71") && err.contains("rosen_suzuki"));
        assert!(ex72_with(-1.0, 1.0).is_err());
    }

    #[test]
    fn evaluate_is_bit_identical() {
        let rs = rosen_suzuki();
        let x = [0.123, -4.5, 3.3, 1e-3];
        assert_eq!(rs.evaluate(&x).unwrap(), rs.evaluate(&x).unwrap());
    }
}
