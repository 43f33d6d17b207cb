//! KKT membership: multiplier recovery and residual certificates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{dot, norm, solve, ConstraintGeometry, TOL_PD};
use crate::problem::{NlpProblem, DEFAULT_FEAS_EPS};

/// Multipliers together with the residuals of the KKT system
/// `∇θ' + A'λ + B'μ = 0`, `μ ≥ 0`, `μ'g = 0`, `h = 0`, `g ≤ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktCertificate {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// `|∇θ' + A'λ + B'μ|`
    pub stationarity_residual: f64,
    /// `|μ'g|`
    pub complementarity_residual: f64,
    /// `|min(0, min_j μ_j)|`
    pub mu_negativity: f64,
    /// `|h|`
    pub equality_residual: f64,
    /// `|max_j g_j⁺|`
    pub inequality_residual: f64,
    /// `|∇θ|`, the scale of the stationarity test.
    pub grad_theta_norm: f64,
}

/// Acceptance thresholds for [`classify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktTolerances {
    /// Stationarity must be at most `stationarity * (1 + |∇θ|)`.
    pub stationarity: f64,
    pub complementarity: f64,
    pub mu_negativity: f64,
    pub eps_h: f64,
    pub eps_g: f64,
}

impl Default for KktTolerances {
    fn default() -> Self {
        Self {
            stationarity: 1e-6,
            complementarity: 1e-8,
            mu_negativity: 1e-8,
            eps_h: DEFAULT_FEAS_EPS,
            eps_g: DEFAULT_FEAS_EPS,
        }
    }
}

impl KktTolerances {
    /// Tolerances for certifying the limit of a trajectory stopped at
    /// field tolerance: stationarity, complementarity and feasibility all
    /// at `tol`.
    pub fn limit(tol: f64) -> Self {
        Self {
            stationarity: tol,
            complementarity: tol,
            eps_h: tol,
            eps_g: tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KktClass {
    KktPoint,
    FeasibleNonKkt,
    Infeasible,
    CqFailure,
}

impl std::fmt::Display for KktClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KktClass::KktPoint => "kkt_point",
            KktClass::FeasibleNonKkt => "feasible_non_kkt",
            KktClass::Infeasible => "infeasible",
            KktClass::CqFailure => "cq_failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub class: KktClass,
    /// Absent when multipliers could not be recovered.
    pub certificate: Option<KktCertificate>,
}

/// Closed-form multipliers `μ = −det(AA')/det(Q) · R'∇θ'`, then `λ` from
/// the normal equations `AA'λ = −A(∇θ' + B'μ)`.
pub fn recover_multipliers(prob: &NlpProblem, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let ev = prob.evaluate(x)?;
    let (_, t) = prob.objective_at(x)?;
    let geo = ConstraintGeometry::new(&ev.a, &ev.b, &ev.g)?;
    if !geo.licq() {
        return Err(Error::ConstraintQualification {
            det_q: if prob.m() > 0 && geo.det_aa <= TOL_PD {
                0.0
            } else {
                geo.det_q
            },
        });
    }
    let scale = -geo.det_aa / geo.det_q;
    let mu: Vec<f64> = geo.r.tr_matvec(&t).iter().map(|v| scale * v).collect();

    let lambda = if prob.m() == 0 {
        Vec::new()
    } else {
        let mut w = t.clone();
        for (wi, bi) in w.iter_mut().zip(ev.b.tr_matvec(&mu)) {
            *wi += bi;
        }
        let rhs: Vec<f64> = ev.a.matvec(&w).iter().map(|v| -v).collect();
        solve(&ev.a.gram(), &rhs)?.ok_or(Error::ConstraintQualification { det_q: 0.0 })?
    };
    Ok((lambda, mu))
}

/// Residuals of the KKT system for given multipliers.
pub fn kkt_residuals(
    prob: &NlpProblem,
    x: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> Result<KktCertificate> {
    if lambda.len() != prob.m() {
        return Err(Error::DimensionMismatch {
            expected: prob.m(),
            got: lambda.len(),
        });
    }
    if mu.len() != prob.k() {
        return Err(Error::DimensionMismatch {
            expected: prob.k(),
            got: mu.len(),
        });
    }
    let ev = prob.evaluate(x)?;
    let (_, t) = prob.objective_at(x)?;
    let mut stat = t.clone();
    for (s, v) in stat.iter_mut().zip(ev.a.tr_matvec(lambda)) {
        *s += v;
    }
    for (s, v) in stat.iter_mut().zip(ev.b.tr_matvec(mu)) {
        *s += v;
    }
    let min_mu = mu.iter().fold(0.0f64, |m, &v| m.min(v));
    Ok(KktCertificate {
        lambda: lambda.to_vec(),
        mu: mu.to_vec(),
        stationarity_residual: norm(&stat),
        complementarity_residual: dot(mu, &ev.g).abs(),
        mu_negativity: min_mu.abs(),
        equality_residual: norm(&ev.h),
        inequality_residual: ev.g.iter().fold(0.0f64, |m, &v| m.max(v)),
        grad_theta_norm: norm(&t),
    })
}

impl KktCertificate {
    pub fn passes(&self, tols: &KktTolerances) -> bool {
        self.stationarity_residual <= tols.stationarity * (1.0 + self.grad_theta_norm)
            && self.complementarity_residual <= tols.complementarity
            && self.mu_negativity <= tols.mu_negativity
    }
}

/// Sorts `x` into one of the four KKT classes.
pub fn classify(prob: &NlpProblem, x: &[f64], tols: &KktTolerances) -> Result<Classification> {
    let ev = prob.evaluate(x)?;
    if !ev.is_feasible(tols.eps_h, tols.eps_g) {
        return Ok(Classification {
            class: KktClass::Infeasible,
            certificate: None,
        });
    }
    let (lambda, mu) = match recover_multipliers(prob, x) {
        Ok(v) => v,
        Err(Error::ConstraintQualification { .. }) => {
            return Ok(Classification {
                class: KktClass::CqFailure,
                certificate: None,
            })
        }
        Err(e) => return Err(e),
    };
    let cert = kkt_residuals(prob, x, &lambda, &mu)?;
    let class = if cert.passes(tols) {
        KktClass::KktPoint
    } else {
        KktClass::FeasibleNonKkt
    };
    Ok(Classification {
        class,
        certificate: Some(cert),
    })
}
