#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nlpflow::kernels::Matrix;
use nlpflow::problem::{Analytic, NlpProblem, ScalarFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn na_vec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub fn rel_close(a: f64, b: f64, scale: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * scale.max(a.abs()).max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `½ x'Px + c'x + e` with symmetric `P`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub e: f64,
}

impl Quadratic {
    pub fn random(rng: &mut impl Rng, n: usize, curvature: f64) -> Self {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let p = (&m + m.transpose()) * (0.5 * curvature);
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        Self {
            p,
            c,
            e: rng.gen_range(-1.0..1.0),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let x = na_vec(x);
        0.5 * x.dot(&(&self.p * &x)) + self.c.dot(&x) + self.e
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let x = na_vec(x);
        (&self.p * x + &self.c).as_slice().to_vec()
    }

    pub fn into_fn(self) -> Arc<dyn ScalarFn> {
        let a = self.clone();
        Arc::new(Analytic::new(move |x| a.value(x), move |x| self.gradient(x)))
    }
}

pub fn random_problem(rng: &mut impl Rng, n: usize, m: usize, k: usize) -> NlpProblem {
    let obj = Quadratic::random(rng, n, 2.0).into_fn();
    let eq = (0..m).map(|_| Quadratic::random(rng, n, 1.0).into_fn()).collect();
    let ineq = (0..k).map(|_| Quadratic::random(rng, n, 1.0).into_fn()).collect();
    NlpProblem::new(format!("random_{n}_{m}_{k}"), n, obj, eq, ineq).unwrap()
}

struct Lifted {
    inner: Arc<NlpProblem>,
    n: usize,
    pad: bool,
    which: Which,
}

enum Which {
    Objective,
    Equality(usize),
    Inequality(usize),
    NewVariable,
    MinusOne,
}

impl ScalarFn for Lifted {
    fn value(&self, x: &[f64]) -> f64 {
        let y = &x[..self.n];
        match self.which {
            Which::Objective => self.inner.objective().value(y),
            Which::Equality(i) => self.inner.equality(i).value(y),
            Which::Inequality(j) => self.inner.inequality(j).value(y),
            Which::NewVariable => x[self.n],
            Which::MinusOne => -1.0,
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let y = &x[..self.n];
        let mut g = match self.which {
            Which::Objective => self.inner.objective().gradient(y),
            Which::Equality(i) => self.inner.equality(i).gradient(y),
            Which::Inequality(j) => self.inner.inequality(j).gradient(y),
            Which::NewVariable | Which::MinusOne => vec![0.0; self.n],
        };
        if self.pad {
            g.push(if matches!(self.which, Which::NewVariable) { 1.0 } else { 0.0 });
        }
        g
    }
}

fn lift(prob: &NlpProblem, pad: bool, extra_eq: Option<Which>, extra_ineq: Option<Which>) -> NlpProblem {
    let inner = Arc::new(prob.clone());
    let f = |which| -> Arc<dyn ScalarFn> {
        Arc::new(Lifted {
            inner: inner.clone(),
            n: prob.n(),
            pad,
            which,
        })
    };
    let mut eq: Vec<_> = (0..prob.m()).map(|i| f(Which::Equality(i))).collect();
    eq.extend(extra_eq.map(&f));
    let mut ineq: Vec<_> = (0..prob.k()).map(|j| f(Which::Inequality(j))).collect();
    ineq.extend(extra_ineq.map(&f));
    let n = prob.n() + usize::from(pad);
    NlpProblem::new("lifted", n, f(Which::Objective), eq, ineq).unwrap()
}

/// Adds a variable `x_{n+1}` and the equality `x_{n+1} = 0`.
pub fn with_dummy_equality(prob: &NlpProblem) -> NlpProblem {
    lift(prob, true, Some(Which::NewVariable), None)
}

/// Appends the inequality `-1 <= 0`.
pub fn with_slack_inequality(prob: &NlpProblem) -> NlpProblem {
    lift(prob, false, None, Some(Which::MinusOne))
}

/// Uniform samples from a box, rejected until feasible for the registry
/// problems. Equalities are solved for one coordinate.
pub fn feasible_sample(name: &str, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let x = match name {
            "ex71" => uniform_vec(rng, 2, -0.5, 2.5),
            "ex72" => vec![1.0, rng.gen_range(-3.0..3.0)],
            "rosen_suzuki" => {
                let mut x = uniform_vec(rng, 4, -2.5, 2.5);
                x[3] = 2.0 * x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + 2.0 * x[0] - x[1] - 5.0;
                x
            }
            other => panic!("no sampler for {other}"),
        };
        let p = nlpflow::problem::builtin(name).unwrap();
        if p.is_feasible(&x, 1e-12, 0.0).unwrap() {
            return x;
        }
    }
}

pub fn na_adjugate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if n == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    DMatrix::from_fn(n, n, |i, j| {
        let minor = m.clone().remove_row(j).remove_column(i);
        let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        s * minor.determinant()
    })
}

pub fn na_det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        1.0
    } else {
        m.determinant()
    }
}
