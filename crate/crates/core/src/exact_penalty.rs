//! Numerical check that a large enough fixed penalty recovers constrained
//! optima: minimize `f(x) + κ Σ max(0, g_i(x))` by subgradient descent and
//! compare against problems whose multipliers are known in closed form.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{ensure_len, Error, Result};

/// A smooth function with its gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Wraps a value closure and a gradient closure.
pub struct FnPair<V, G>(pub V, pub G);

impl<V, G> Differentiable for FnPair<V, G>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.1)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradientOptions {
    pub iterations: usize,
    /// Step length of the first (normalized) step.
    pub initial_step: f64,
    /// Step `k` has length `initial_step / (k + 1)^decay`; needs `decay` in (0.5, 1].
    pub decay: f64,
    /// Iterates must stay inside `[-bound, bound]^n`.
    pub bound: f64,
    pub feasibility_tol: f64,
}

impl Default for SubgradientOptions {
    fn default() -> Self {
        SubgradientOptions {
            iterations: 200_000,
            initial_step: 0.5,
            decay: 0.6,
            bound: 100.0,
            feasibility_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySolution {
    /// Best iterate by penalized objective.
    pub x: Vec<f64>,
    pub penalized_value: f64,
    pub max_violation: f64,
    /// Every constraint within `feasibility_tol` at `x`.
    pub feasible: bool,
}

fn penalized(f: &dyn Differentiable, constraints: &[&dyn Differentiable], kappa: f64, x: &[f64]) -> f64 {
    f.value(x) + kappa * constraints.iter().map(|g| g.value(x).max(0.0)).sum::<f64>()
}

/// Subgradient descent on the exact penalty function with normalized,
/// diminishing steps. Inactive constraints (`g_i ≤ 0`) contribute nothing.
pub fn verify_exact_penalty(
    f: &dyn Differentiable,
    constraints: &[&dyn Differentiable],
    kappa: f64,
    x0: &[f64],
    opts: &SubgradientOptions,
) -> Result<PenaltySolution> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument("penalty factor must be non-negative".into()));
    }
    if !(opts.decay > 0.5 && opts.decay <= 1.0) || !(opts.initial_step > 0.0) {
        return Err(Error::InvalidArgument("step schedule must be diminishing and non-summable".into()));
    }
    if x0.iter().any(|v| !(v.abs() <= opts.bound)) {
        return Err(Error::InvalidArgument("starting point lies outside the box".into()));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut best = x.clone();
    let mut best_value = penalized(f, constraints, kappa, &x);
    for k in 0..opts.iterations {
        let mut s = f.gradient(&x);
        ensure_len("objective gradient", n, s.len())?;
        for g in constraints {
            if g.value(&x) > 0.0 {
                let dg = g.gradient(&x);
                ensure_len("constraint gradient", n, dg.len())?;
                for (si, d) in s.iter_mut().zip(dg) {
                    *si += kappa * d;
                }
            }
        }
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged { iteration: k });
        }
        if norm == 0.0 {
            break;
        }
        let step = opts.initial_step / ((k + 1) as f64).powf(opts.decay);
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi -= step * si / norm;
        }
        if x.iter().any(|v| !(v.abs() <= opts.bound)) {
            return Err(Error::Diverged { iteration: k });
        }
        let value = penalized(f, constraints, kappa, &x);
        if value < best_value {
            best_value = value;
            best.copy_from_slice(&x);
        }
    }
    let max_violation = constraints.iter().map(|g| g.value(&best)).fold(f64::NEG_INFINITY, f64::max);
    let max_violation = if constraints.is_empty() { 0.0 } else { max_violation };
    Ok(PenaltySolution {
        feasible: max_violation <= opts.feasibility_tol,
        x: best,
        penalized_value: best_value,
        max_violation,
    })
}

/// `min ½ (x − c)ᵀ Q (x − c)  s.t.  aᵀx ≤ b`, built backwards from a chosen
/// optimum `x*` and multiplier `λ*` so both are known exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    pub q: Array2<f64>,
    pub center: Array1<f64>,
    pub a: Array1<f64>,
    pub b: f64,
    pub solution: Array1<f64>,
    pub multiplier: f64,
    /// `Q⁻¹ a`.
    pub direction: Array1<f64>,
}

impl QuadraticProblem {
    /// Random instance with `λ*` drawn from `multiplier_range`. The
    /// constraint is active at the optimum since `λ* > 0`.
    pub fn random<R: Rng + ?Sized>(dim: usize, multiplier_range: (f64, f64), rng: &mut R) -> Result<Self> {
        if dim == 0 || !(multiplier_range.0 > 0.0 && multiplier_range.0 <= multiplier_range.1) {
            return Err(Error::InvalidArgument("need dim ≥ 1 and a positive multiplier range".into()));
        }
        let m = Array2::from_shape_simple_fn((dim, dim), || rng.random_range(-0.5..0.5));
        let q = m.dot(&m.t()) + Array2::<f64>::eye(dim) * 0.5;
        let mut u: Array1<f64> = Array1::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0));
        let norm = u.dot(&u).sqrt().max(1e-3);
        let length = rng.random_range(0.5..1.5);
        u *= length / norm;
        let a = q.dot(&u);
        let solution = Array1::from_shape_simple_fn(dim, || rng.random_range(-2.0..2.0));
        let multiplier = rng.random_range(multiplier_range.0..=multiplier_range.1);
        let center = &solution + &(&u * multiplier);
        let b = a.dot(&solution);
        Ok(QuadraticProblem {
            q,
            center,
            a,
            b,
            solution,
            multiplier,
            direction: u,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let d = Array1::from(x.to_vec()) - &self.center;
        0.5 * d.dot(&self.q.dot(&d))
    }

    pub fn objective_gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = Array1::from(x.to_vec()) - &self.center;
        self.q.dot(&d).to_vec()
    }

    pub fn constraint_value(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.b
    }

    /// Closed-form minimizer of the penalized problem: `x*` once `κ ≥ λ*`,
    /// otherwise `c − κ Q⁻¹ a`, which violates the constraint by
    /// `(λ* − κ) aᵀQ⁻¹a`.
    pub fn penalized_minimizer(&self, kappa: f64) -> Array1<f64> {
        if kappa >= self.multiplier {
            self.solution.clone()
        } else {
            &self.center - &(&self.direction * kappa)
        }
    }

    pub fn solve_penalized(&self, kappa: f64, opts: &SubgradientOptions) -> Result<PenaltySolution> {
        let f = FnPair(|x: &[f64]| self.objective_value(x), |x: &[f64]| self.objective_gradient(x));
        let a = self.a.to_vec();
        let g = FnPair(|x: &[f64]| self.constraint_value(x), move |_: &[f64]| a.clone());
        verify_exact_penalty(&f, &[&g], kappa, &vec![0.0; self.dim()], opts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactnessCase {
    pub dim: usize,
    pub multiplier: f64,
    /// Distance to the constrained optimum with `κ = 2λ*`.
    pub exact_error: f64,
    /// Constraint value with `κ = λ*/2`.
    pub weak_violation: f64,
}

/// Runs `count` random problems (dimensions cycling through 1..=4) with the
/// factor at twice and half the true multiplier.
pub fn exactness_suite<R: Rng + ?Sized>(count: usize, opts: &SubgradientOptions, rng: &mut R) -> Result<Vec<ExactnessCase>> {
    (0..count)
        .map(|i| {
            let p = QuadraticProblem::random(1 + i % 4, (0.5, 4.0), rng)?;
            let strong = p.solve_penalized(2.0 * p.multiplier, opts)?;
            let weak = p.solve_penalized(0.5 * p.multiplier, opts)?;
            let exact_error = strong
                .x
                .iter()
                .zip(&p.solution)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok(ExactnessCase {
                dim: p.dim(),
                multiplier: p.multiplier,
                exact_error,
                weak_violation: p.constraint_value(&weak.x),
            })
        })
        .collect()
}
