//! The solver vector field.
//!
//! Two scalar functions drive the construction: the quadratic penalty
//! `V = ½|h|² + ½|g⁺|²`, which vanishes exactly on the feasible set, and the
//! objective `θ`. The descent field `F` decreases both (`∇θ·F ≤ 0`,
//! `∇V·F ≤ 0` everywhere) and the merged field
//!
//! ```text
//! f = σ ψ1 F − σ (ψ2 ∇V' + (|∇V|² I − ∇V'∇V) ∇θ')
//! ```
//!
//! has the KKT points as its equilibria.
//!
//! Empty constraint stacks use the conventions of [`crate::kernels`]
//! (`det(AA') = 1`, `H = I` without equalities; `det(Q) = 1`, `R` empty
//! without inequalities). With those conventions the general formula for
//! `F` reduces exactly to the special-case fields: `F = R diag(g⁻) R'∇θ' −
//! R (R'∇θ')⁺ − (det Q I − RB)(det Q I − B'R')∇θ'` when there are no
//! equalities and `F = −det(AA') H ∇θ'` when there are no inequalities.
//! Only the fully unconstrained case is dispatched separately, to plain
//! steepest descent `f = −σ∇θ'`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{dot, neg_part, norm, pos_part, ConstraintGeometry};
use crate::problem::NlpProblem;

/// Lower clamp on `det(AA')` before raising it to a negative power.
pub const DET_CLAMP: f64 = 1e-30;

/// A positive scalar function of the state used as a tuning knob.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// `det(A(x)A'(x))^(-p)`, with the determinant clamped below at
    /// [`DET_CLAMP`].
    InverseDetPower(u32),
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl Coefficient {
    pub fn eval(&self, x: &[f64], det_aa: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::InverseDetPower(p) => det_aa.max(DET_CLAMP).powi(-(*p as i32)),
            Coefficient::Custom(f) => f(x),
        }
    }

    /// Short text form, used in reports.
    pub fn describe(&self) -> String {
        match self {
            Coefficient::Constant(c) => format!("{c}"),
            Coefficient::InverseDetPower(p) => format!("invdet{p}"),
            Coefficient::Custom(_) => "custom".to_string(),
        }
    }

    /// Parses a number or a preset name `invdet<p>`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if let Some(p) = t.strip_prefix("invdet") {
            let p = p
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad preset `{t}`")))?;
            return Ok(Coefficient::InverseDetPower(p));
        }
        let c: f64 = t
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("expected a number or invdet<p>, got `{t}`")))?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "coefficients must be positive, got {c}"
            )));
        }
        Ok(Coefficient::Constant(c))
    }
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Tunable functions of the solver field.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub sigma: Coefficient,
    pub psi1: Coefficient,
    pub psi2: Coefficient,
    /// Ω numerator coefficient.
    pub c1: Coefficient,
    /// Ω denominator coefficient.
    pub c2: Coefficient,
    /// Gate constant of the switched construction, > 1.
    pub beta: f64,
    /// Scale σ by `1 / (1 + |raw field|)`.
    pub normalize_sigma: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma: Coefficient::Constant(1.0),
            psi1: Coefficient::Constant(1.0),
            psi2: Coefficient::Constant(1.0),
            c1: Coefficient::Constant(1.0),
            c2: Coefficient::Constant(1.0),
            beta: 2.0,
            normalize_sigma: true,
        }
    }
}

impl SolverConfig {
    /// σ ≡ ψ1 ≡ ψ2 ≡ 1 without normalisation.
    pub fn unit() -> Self {
        Self {
            normalize_sigma: false,
            ..Self::default()
        }
    }

    /// Normalised σ with `ψ1 = det(AA')^-10`, `ψ2 ≡ 1`; tames the large
    /// determinant powers in problems with curved equality constraints.
    pub fn det_scaled() -> Self {
        Self {
            psi1: Coefficient::InverseDetPower(10),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must exceed 1, got {}",
                self.beta
            )));
        }
        for (name, c) in [
            ("sigma", &self.sigma),
            ("psi1", &self.psi1),
            ("psi2", &self.psi2),
            ("c1", &self.c1),
            ("c2", &self.c2),
        ] {
            if let Coefficient::Constant(v) = c {
                if !(*v > 0.0) {
                    return Err(Error::InvalidConfig(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Which form of the field applies, by constraint counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    General,
    NoEqualities,
    NoInequalities,
    Unconstrained,
}

impl Regime {
    pub fn of(prob: &NlpProblem) -> Self {
        match (prob.m() > 0, prob.k() > 0) {
            (true, true) => Regime::General,
            (false, true) => Regime::NoEqualities,
            (true, false) => Regime::NoInequalities,
            (false, false) => Regime::Unconstrained,
        }
    }
}

/// Everything the field computation produces at one point.
#[derive(Debug, Clone)]
pub struct FieldReport {
    pub regime: Regime,
    pub theta: f64,
    pub grad_theta: Vec<f64>,
    pub v: f64,
    pub grad_v: Vec<f64>,
    pub det_aa: f64,
    pub det_q: f64,
    pub geometry: ConstraintGeometry,
    /// Descent field F.
    pub descent: Vec<f64>,
    /// The three summands of F, in order.
    pub descent_terms: [Vec<f64>; 3],
    /// Bound on the magnitude of the intermediate products in F.
    pub descent_scale: f64,
    /// Rounding scale of `∇θ·F` and its closed form.
    pub dtheta_scale: f64,
    /// Rounding scale of `∇V·F` and its closed form.
    pub dv_scale: f64,
    /// Merged solver field f.
    pub f: Vec<f64>,
    /// f before σ is applied.
    pub raw: Vec<f64>,
    /// Effective σ (after normalisation when enabled).
    pub sigma: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub omega: f64,
    /// `∇θ·F`, direct dot product.
    pub dtheta_f: f64,
    /// `∇θ·F` from the closed form: `d⁴ (R'∇θ')' diag(g⁻) R'∇θ' − d⁴ |(R'∇θ')⁺|² − |H M ∇θ'|²`.
    pub dtheta_f_closed: f64,
    /// `∇V·F`, direct dot product.
    pub dv_f: f64,
    /// `∇V·F` from the closed form `−d³ det(Q) (g⁺)'(R'∇θ')⁺`.
    pub dv_f_closed: f64,
    pub a_val: f64,
}

impl FieldReport {
    /// Magnitude bound of the merged field's summands.
    pub fn field_scale(&self) -> f64 {
        let gv = norm(&self.grad_v);
        let gt = norm(&self.grad_theta);
        self.sigma * (self.psi1 * self.descent_scale + self.psi2 * gv + 2.0 * gv * gv * gt)
    }
}

/// `V(x) = ½|h|² + ½|g⁺|²`.
pub fn penalty_v(prob: &NlpProblem, x: &[f64]) -> Result<f64> {
    let ev = prob.evaluate(x)?;
    Ok(penalty_from(&ev.h, &ev.g))
}

fn penalty_from(h: &[f64], g: &[f64]) -> f64 {
    let gp = pos_part(g);
    0.5 * dot(h, h) + 0.5 * dot(&gp, &gp)
}

/// `∇V = A'h + B'g⁺`.
pub fn grad_penalty(prob: &NlpProblem, x: &[f64]) -> Result<Vec<f64>> {
    let ev = prob.evaluate(x)?;
    let mut gv = ev.a.tr_matvec(&ev.h);
    for (o, v) in gv.iter_mut().zip(ev.b.tr_matvec(&pos_part(&ev.g))) {
        *o += v;
    }
    Ok(gv)
}

/// Evaluates every field quantity at `x`.
pub fn analyze(prob: &NlpProblem, cfg: &SolverConfig, x: &[f64]) -> Result<FieldReport> {
    let ev = prob.evaluate(x)?;
    let (theta, t) = prob.objective_at(x)?;
    let n = prob.n();
    let regime = Regime::of(prob);

    let gp = pos_part(&ev.g);
    let gm = neg_part(&ev.g);
    let v = penalty_from(&ev.h, &ev.g);
    let mut grad_v = ev.a.tr_matvec(&ev.h);
    for (o, w) in grad_v.iter_mut().zip(ev.b.tr_matvec(&gp)) {
        *o += w;
    }

    let geo = ConstraintGeometry::new(&ev.a, &ev.b, &ev.g)?;
    let d = geo.det_aa;
    let q = geo.det_q;
    let d4 = d.powi(4);
    let r = &geo.r;

    // R'∇θ'
    let rt = r.tr_matvec(&t);
    let rt_pos = pos_part(&rt);

    let term1: Vec<f64> = {
        let w: Vec<f64> = rt.iter().zip(&gm).map(|(a, b)| a * b).collect();
        r.matvec(&w).iter().map(|v| d4 * v).collect()
    };
    let term2: Vec<f64> = r.matvec(&rt_pos).iter().map(|v| -d4 * v).collect();

    // M∇θ' with M = det(Q) I − d B'R'
    let bt_rt = ev.b.tr_matvec(&rt);
    let mt: Vec<f64> = t.iter().zip(&bt_rt).map(|(ti, bi)| q * ti - d * bi).collect();
    let hmt = geo.h.matvec(&mt);
    // M' = det(Q) I − d R B
    let rbhmt = r.matvec(&ev.b.matvec(&hmt));
    let term3: Vec<f64> = hmt
        .iter()
        .zip(&rbhmt)
        .map(|(a, b)| -d * (q * a - d * b))
        .collect();

    let descent: Vec<f64> = (0..n).map(|i| term1[i] + term2[i] + term3[i]).collect();

    // Magnitudes of the products that build F, used as rounding scales.
    let q_mag: f64 = (0..geo.q.rows()).map(|j| norm(geo.q.row(j))).product();
    let r_mag = geo.h.norm() * ev.b.norm() * geo.adj_q.norm();
    let s_mag = r_mag * norm(&t);
    let gm_max = gm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let hmt_mag = geo.h.norm() * (q_mag * norm(&t) + d * ev.b.norm() * s_mag);
    let descent_scale =
        d4 * r_mag * s_mag * (1.0 + gm_max) + d * (q_mag + d * r_mag * ev.b.norm()) * hmt_mag;
    let dtheta_scale =
        norm(&t) * descent_scale + d4 * s_mag * s_mag * (1.0 + gm_max) + hmt_mag * hmt_mag;
    let dv_scale = norm(&grad_v) * descent_scale + d.powi(3) * q_mag * norm(&gp) * s_mag;

    let dtheta_f = dot(&t, &descent);
    let dtheta_f_closed = d4 * rt.iter().zip(&gm).map(|(a, b)| a * a * b).sum::<f64>()
        - d4 * dot(&rt_pos, &rt_pos)
        - dot(&hmt, &hmt);
    let dv_f = dot(&grad_v, &descent);
    let dv_f_closed = -d.powi(3) * q * dot(&gp, &rt_pos);

    let psi1 = cfg.psi1.eval(x, d);
    let psi2 = cfg.psi2.eval(x, d);
    let sigma_base = cfg.sigma.eval(x, d);

    let gv2 = dot(&grad_v, &grad_v);
    let gvt = dot(&grad_v, &t);
    let raw: Vec<f64> = match regime {
        Regime::Unconstrained => t.iter().map(|v| -v).collect(),
        _ => (0..n)
            .map(|i| psi1 * descent[i] - psi2 * grad_v[i] - (gv2 * t[i] - grad_v[i] * gvt))
            .collect(),
    };
    let sigma = if cfg.normalize_sigma {
        sigma_base / (1.0 + norm(&raw))
    } else {
        sigma_base
    };
    let f: Vec<f64> = raw.iter().map(|v| sigma * v).collect();

    let omega = omega_value(cfg.c1.eval(x, d), cfg.c2.eval(x, d), v, q);
    let a_val = psi1 * dtheta_f - gv2 * dot(&t, &t) - psi2 * gvt + gvt * gvt;

    Ok(FieldReport {
        regime,
        theta,
        grad_theta: t,
        v,
        grad_v,
        det_aa: d,
        det_q: q,
        geometry: geo,
        descent,
        descent_terms: [term1, term2, term3],
        descent_scale,
        dtheta_scale,
        dv_scale,
        f,
        raw,
        sigma,
        psi1,
        psi2,
        omega,
        dtheta_f,
        dtheta_f_closed,
        dv_f,
        dv_f_closed,
        a_val,
    })
}

/// The descent field F alone.
pub fn descent_field(prob: &NlpProblem, x: &[f64]) -> Result<Vec<f64>> {
    Ok(analyze(prob, &SolverConfig::unit(), x)?.descent)
}

/// The merged solver field f.
pub fn f_field(prob: &NlpProblem, cfg: &SolverConfig, x: &[f64]) -> Result<Vec<f64>> {
    Ok(analyze(prob, cfg, x)?.f)
}

/// `Ω = (1 + c1) V / (c2 det(Q) + V)`. Returns `+∞` when both `V` and
/// `det(Q)` vanish, which signals a feasible point without LICQ.
pub fn omega(prob: &NlpProblem, cfg: &SolverConfig, x: &[f64]) -> Result<f64> {
    Ok(analyze(prob, cfg, x)?.omega)
}

pub fn omega_value(c1: f64, c2: f64, v: f64, det_q: f64) -> f64 {
    let den = c2 * det_q + v;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 + c1) * v / den
}

/// `a(x) = ψ1 ∇θ·F − |∇V|²|∇θ|² − ψ2 ∇V·∇θ' + (∇V·∇θ')²`.
pub fn a_diagnostic(prob: &NlpProblem, cfg: &SolverConfig, x: &[f64]) -> Result<f64> {
    Ok(analyze(prob, cfg, x)?.a_val)
}

/// Merged feedback for a globally defined descent field:
/// `σ (ψ1 F − ψ2 ∇V' − (|∇V|² I − ∇V'∇V) ∇θ')`.
pub fn merged_field(
    grad_v: &[f64],
    grad_theta: &[f64],
    descent: &[f64],
    sigma: f64,
    psi1: f64,
    psi2: f64,
) -> Vec<f64> {
    let gv2 = dot(grad_v, grad_v);
    let gvt = dot(grad_v, grad_theta);
    (0..grad_v.len())
        .map(|i| {
            sigma
                * (psi1 * descent[i]
                    - psi2 * grad_v[i]
                    - (gv2 * grad_theta[i] - grad_v[i] * gvt))
        })
        .collect()
}

/// Gated feedback for a descent field known only where `Ω < 1`.
///
/// With `βΩ < 1`:
/// `σ(1 − βΩ) F − βσΩψ ∇V' − βσΩ (|∇V|² I − ∇V'∇V) ∇θ'`;
/// otherwise `−σψ ∇V' − σ (|∇V|² I − ∇V'∇V) ∇θ'`. The descent field is only
/// evaluated on the first branch.
pub fn switched_field(
    grad_v: &[f64],
    grad_theta: &[f64],
    omega: f64,
    psi: f64,
    sigma: f64,
    beta: f64,
    descent: impl FnOnce() -> Vec<f64>,
) -> Vec<f64> {
    let gv2 = dot(grad_v, grad_v);
    let gvt = dot(grad_v, grad_theta);
    let n = grad_v.len();
    let bo = beta * omega;
    if bo < 1.0 {
        let fd = descent();
        (0..n)
            .map(|i| {
                sigma * (1.0 - bo) * fd[i]
                    - bo * sigma * psi * grad_v[i]
                    - bo * sigma * (gv2 * grad_theta[i] - grad_v[i] * gvt)
            })
            .collect()
    } else {
        (0..n)
            .map(|i| -sigma * psi * grad_v[i] - sigma * (gv2 * grad_theta[i] - grad_v[i] * gvt))
            .collect()
    }
}

/// Quantities of the planar demonstration system.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarDemo {
    pub f: [f64; 2],
    pub v: f64,
    pub theta: f64,
    /// `∇V·f` in closed form.
    pub dv_f: f64,
    /// `∇θ·f` in closed form.
    pub dtheta_f: f64,
}

/// Global attractor of the planar demo.
pub const PLANAR_ATTRACTOR: [f64; 2] = [-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];

/// Planar system with `V = ½ max(0, |x|² − 1)²` and `θ = x1 + x2`, whose
/// trajectories all converge to `(−√2/2, −√2/2)`.
pub fn planar_demo_field(x: [f64; 2]) -> PlanarDemo {
    let [x1, x2] = x;
    let r2 = x1 * x1 + x2 * x2;
    let p = (r2 - 1.0).max(0.0);
    let nm = (r2 - 1.0).min(0.0);
    let s = x1 + x2;
    let sp = s.max(0.0);
    let qd = 4.0 * r2 - nm;
    let c = -qd * (p * p + qd / 4.0);
    let lin = 4.0 * p * p * (s - 1.0) + s * qd - sp;
    let f = [c + lin * x1, c + lin * x2];
    let dv_f = -2.0 * p * r2 * (4.0 * p * p + sp);
    let dd = (x1 - x2) * (x1 - x2);
    let dtheta_f = -4.0 * dd * p * p - s * sp - (dd - nm / 2.0) * qd - 4.0 * p * p * s;
    PlanarDemo {
        f,
        v: 0.5 * p * p,
        theta: s,
        dv_f,
        dtheta_f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::builtin;
    use approx::assert_relative_eq;

    #[test]
    fn penalty_values() {
        let p = builtin("ex72").unwrap();
        assert_eq!(penalty_v(&p, &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(penalty_v(&p, &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(grad_penalty(&p, &[1.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let p = builtin("ex71").unwrap();
        assert_eq!(penalty_v(&p, &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(grad_penalty(&p, &[0.5, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn ex72_matches_closed_form_field() {
        let p = builtin("ex72").unwrap();
        let cfg = SolverConfig::unit();
        for x in [[0.0, 0.0], [2.0, -1.0], [-0.3, 0.7]] {
            let f = f_field(&p, &cfg, &x).unwrap();
            let expect = [-(x[0] - 1.0), -(2.0 * x[1] * (1.0 + (x[0] - 1.0).powi(2)))];
            assert_relative_eq!(f[0], expect[0], max_relative = 1e-12);
            assert_relative_eq!(f[1], expect[1], max_relative = 1e-12);
        }
    }

    #[test]
    fn unconstrained_is_steepest_descent() {
        let obj = crate::problem::Analytic::new(|x| x[0] * x[0] + 3.0 * x[1], |x| vec![2.0 * x[0], 3.0]);
        let p = NlpProblem::new("free", 2, Arc::new(obj), vec![], vec![]).unwrap();
        let cfg = SolverConfig {
            sigma: Coefficient::Constant(0.5),
            psi1: Coefficient::Constant(7.0),
            ..SolverConfig::unit()
        };
        let r = analyze(&p, &cfg, &[1.0, 2.0]).unwrap();
        assert_eq!(r.regime, Regime::Unconstrained);
        assert_eq!(r.f, vec![-1.0, -1.5]);
    }

    #[test]
    fn ex71_origin_is_equilibrium() {
        let p = builtin("ex71").unwrap();
        let r = analyze(&p, &SolverConfig::unit(), &[0.0, 0.0]).unwrap();
        assert!(norm(&r.f) <= 1e-8 * r.field_scale().max(1.0));
    }

    #[test]
    fn omega_cases() {
        assert_eq!(omega_value(1.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(omega_value(1.0, 1.0, 0.0, 2.0), 0.0);
        assert!(omega_value(1.0, 1.0, 0.0, 0.0).is_infinite());
        let p = builtin("ex71").unwrap();
        assert_eq!(omega(&p, &SolverConfig::default(), &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn switched_field_branches_agree_at_threshold() {
        let gv = [0.3, -1.2];
        let gt = [2.0, 0.5];
        let beta = 2.0;
        let lo = switched_field(&gv, &gt, 0.5, 1.5, 0.7, beta, || vec![9.0, -4.0]);
        let hi = switched_field(&gv, &gt, 0.5, 1.5, 0.7, beta, || unreachable!());
        // βΩ = 1 exactly takes the second branch; the first branch's formula
        // evaluated at βΩ = 1 must agree with it.
        let bo: f64 = 1.0;
        let gv2 = dot(&gv, &gv);
        let gvt = dot(&gv, &gt);
        let first: Vec<f64> = (0..2)
            .map(|i| {
                0.7 * (1.0 - bo) * [9.0, -4.0][i]
                    - bo * 0.7 * 1.5 * gv[i]
                    - bo * 0.7 * (gv2 * gt[i] - gv[i] * gvt)
            })
            .collect();
        assert_eq!(lo, hi);
        for i in 0..2 {
            assert_relative_eq!(first[i], hi[i], max_relative = 1e-15);
        }
        let on_s = switched_field(&[0.0, 0.0], &gt, 0.0, 1.5, 0.7, beta, || vec![1.0, 2.0]);
        assert_eq!(on_s, vec![0.7, 1.4]);
    }

    #[test]
    fn coefficient_parsing() {
        assert!(matches!(Coefficient::parse("2.5").unwrap(), Coefficient::Constant(c) if c == 2.5));
        assert!(matches!(Coefficient::parse("invdet10").unwrap(), Coefficient::InverseDetPower(10)));
        assert!(Coefficient::parse("-1").is_err());
        assert!(Coefficient::parse("inv").is_err());
        assert_eq!(Coefficient::InverseDetPower(2).eval(&[], 2.0), 0.25);
        assert_relative_eq!(Coefficient::InverseDetPower(1).eval(&[], 0.0), 1e30, max_relative = 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            beta: 1.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn planar_demo_points() {
        let d = planar_demo_field(PLANAR_ATTRACTOR);
        assert!(d.f[0].abs() <= 1e-9 && d.f[1].abs() <= 1e-9);
        let d = planar_demo_field([0.3, -0.4]);
        assert_eq!(d.v, 0.0);
        assert_eq!(d.dv_f, 0.0);
        assert!(planar_demo_field([2.0, 0.0]).dv_f < 0.0);
    }
}
