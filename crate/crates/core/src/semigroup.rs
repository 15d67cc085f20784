//! Time evolution `T(t) = e^{tA}` and norm audits of the semigroup.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cone::{GridVector, POSITIVITY_TOL};
use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::linalg;
use crate::parallel::Execution;
use crate::sampling;

/// Ratios at or below this are treated as zero in the left-invertibility audit.
pub const ZERO_RATIO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    ExactExponential,
    ImplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionPlan {
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub method: Method,
}

impl EvolutionPlan {
    pub fn new(t_end: f64, dt: f64, method: Method) -> Result<Self> {
        let plan = EvolutionPlan { t_end, dt, method };
        plan.steps()?;
        Ok(plan)
    }

    /// Number of steps; fails unless `0 < dt ≤ t_end` and `dt` divides `t_end`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.t_end.is_finite() && self.dt <= self.t_end) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < dt <= t_end, got dt = {}, t_end = {}",
                self.dt, self.t_end
            )));
        }
        let ratio = self.t_end / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} does not divide t_end = {}",
                self.dt, self.t_end
            )));
        }
        Ok(steps as usize)
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        let m = self.steps()?;
        Ok((0..=m).map(|k| k as f64 * self.dt).collect())
    }
}

/// States sampled at `t_k = k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridVector>,
}

impl Trajectory {
    pub fn last(&self) -> &GridVector {
        self.states.last().expect("trajectory always holds the initial state")
    }

    /// Number of stored states with an entry below `−tol`.
    pub fn positivity_violations(&self, tol: f64) -> usize {
        self.states.iter().filter(|s| !s.is_positive(tol)).count()
    }
}

/// One-step propagator for a plan.
pub(crate) enum Stepper {
    Exact(DMatrix<f64>),
    Implicit { solver: linalg::ShiftedSolver, dt: f64 },
}

impl Stepper {
    pub(crate) fn new(a: &GeneratorModel, plan: &EvolutionPlan) -> Result<Self> {
        match plan.method {
            Method::ExactExponential => Ok(Stepper::Exact(linalg::expm(&(a.matrix() * plan.dt)))),
            Method::ImplicitEuler => {
                let solver = a.solver(1.0 / plan.dt).map_err(|e| {
                    Error::StepFailure(format!("implicit Euler matrix is singular ({e})"))
                })?;
                Ok(Stepper::Implicit { solver, dt: plan.dt })
            }
        }
    }

    pub(crate) fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Stepper::Exact(e) => e * x,
            Stepper::Implicit { solver, dt } => solver.solve(&(x / *dt)),
        }
    }
}

/// `T(t_k)x` on the plan's time grid.
pub fn evolve(a: &GeneratorModel, x: &GridVector, plan: &EvolutionPlan) -> Result<Trajectory> {
    if x.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: x.len(),
        });
    }
    let times = plan.times()?;
    let stepper = Stepper::new(a, plan)?;
    let mut states = Vec::with_capacity(times.len());
    let mut current = x.values().clone();
    states.push(x.clone());
    for _ in 1..times.len() {
        current = stepper.apply(&current);
        states.push(GridVector::from_raw(Arc::clone(a.space()), current.clone()));
    }
    Ok(Trajectory { times, states })
}

/// `T(t) = e^{tA}` as a dense matrix.
pub fn semigroup_matrix(a: &GeneratorModel, t: f64) -> DMatrix<f64> {
    linalg::expm(&(a.matrix() * t))
}

/// `‖T(t)‖` in the weighted ℓ¹ operator norm for each `t`.
pub fn operator_norm_trajectory(a: &GeneratorModel, t_grid: &[f64], exec: Execution) -> Vec<f64> {
    let w = a.space().weights();
    exec.map(t_grid, |&t| linalg::weighted_norm1(&semigroup_matrix(a, t), w))
}

/// `‖T(t_k)‖` on the uniform grid `t_k = k·horizon/points`, `k = 0..=points`.
///
/// For positive semigroups the norm is the largest weighted column sum,
/// so only the row vector `wᵀ T(t)` is propagated.
pub(crate) fn uniform_norm_trajectory(a: &GeneratorModel, horizon: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
    let dt = horizon / points as f64;
    let step = linalg::expm(&(a.matrix() * dt));
    norm_trajectory_from_step(a, &step, dt, points)
}

pub(crate) fn norm_trajectory_from_step(
    a: &GeneratorModel,
    step: &DMatrix<f64>,
    dt: f64,
    points: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = a.dim();
    let w = a.space().weights();
    let times: Vec<f64> = (0..=points).map(|k| k as f64 * dt).collect();
    let mut norms = Vec::with_capacity(points + 1);
    if a.is_metzler() {
        let wv = DVector::from_column_slice(w);
        let step_t = step.transpose();
        let mut sums = wv.clone();
        for k in 0..=points {
            if k > 0 {
                sums = &step_t * sums;
            }
            norms.push(sums.iter().zip(w).map(|(c, wj)| c / wj).fold(0.0, f64::max));
        }
    } else {
        let mut s = DMatrix::<f64>::identity(n, n);
        for k in 0..=points {
            if k > 0 {
                s = step * &s;
            }
            norms.push(linalg::weighted_norm1(&s, w));
        }
    }
    (times, norms)
}

/// Slope of `log ‖T(t)‖` over the tail half `[horizon/2, horizon]`.
pub fn growth_bound_estimate(a: &GeneratorModel, horizon: f64, points: usize) -> Result<f64> {
    if !(horizon > 0.0) || points < 4 {
        return Err(Error::InvalidArgument("growth fit needs horizon > 0 and at least 4 points".into()));
    }
    let (times, norms) = uniform_norm_trajectory(a, horizon, points);
    Ok(tail_log_slope(&times, &norms, horizon / 2.0))
}

/// Least-squares slope of `ln y` over the points with `t ≥ from`.
pub(crate) fn tail_log_slope(times: &[f64], values: &[f64], from: f64) -> f64 {
    let (t, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= from)
        .map(|(t, v)| (*t, *v))
        .unzip();
    if y.iter().any(|v| *v <= f64::MIN_POSITIVE) {
        return f64::NEG_INFINITY;
    }
    let logs: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linalg::linear_fit(&t, &logs).0
}

/// Result of sampling `‖T(t)x‖ ≥ N e^{−αt} ‖x‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeftInvertibility {
    pub n_const: f64,
    pub alpha: f64,
    pub holds: bool,
    pub times: Vec<f64>,
    pub min_ratios: Vec<f64>,
}

/// Estimates `(N, α)` for a lower exponential bound on `‖T(t)x‖/‖x‖`.
///
/// Samples the basis vectors plus `sample_count` random vectors (from the
/// positive cone when the semigroup is positive, signed otherwise). `α` is
/// the least-squares decay rate of the minimum ratio and `N` the largest
/// constant making the bound hold at every sampled time.
pub fn left_invertibility_audit(
    a: &GeneratorModel,
    t_grid: &[f64],
    sample_count: usize,
    seed: u64,
    exec: Execution,
) -> Result<LeftInvertibility> {
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be at least 1".into()));
    }
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("time grid must be nonempty and positive".into()));
    }
    let n = a.dim();
    let w = a.space().weights().to_vec();
    let positive = a.is_metzler();
    let mut rng = sampling::rng(seed, 0);
    let samples: Vec<DVector<f64>> = (0..sample_count)
        .map(|_| {
            let v = if positive {
                sampling::cone_values(&mut rng, n)
            } else {
                sampling::signed_values(&mut rng, n)
            };
            let v = DVector::from_vec(v);
            let norm = linalg::weighted_l1(&v, &w);
            if norm > 0.0 { v / norm } else { v }
        })
        .filter(|v| v.iter().any(|x| *x != 0.0))
        .collect();

    let min_ratios = exec.map(t_grid, |&t| {
        let e = semigroup_matrix(a, t);
        let basis_min = linalg::weighted_column_sums(&e, &w, true)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        samples
            .iter()
            .map(|x| linalg::weighted_l1(&(&e * x), &w))
            .fold(basis_min, f64::min)
    });

    let holds = min_ratios.iter().all(|r| *r > ZERO_RATIO_TOL);
    let (n_const, alpha) = if holds {
        let logs: Vec<f64> = min_ratios.iter().map(|r| r.ln()).collect();
        let alpha = if t_grid.len() >= 2 {
            -linalg::linear_fit(t_grid, &logs).0
        } else {
            -logs[0] / t_grid[0]
        };
        let n_const = t_grid
            .iter()
            .zip(&min_ratios)
            .map(|(t, r)| r * (alpha * t).exp())
            .fold(f64::INFINITY, f64::min);
        (n_const, alpha)
    } else {
        (0.0, f64::INFINITY)
    };
    Ok(LeftInvertibility {
        n_const,
        alpha,
        holds,
        times: t_grid.to_vec(),
        min_ratios,
    })
}

/// True when every state of the trajectory lies in the cone up to the default tolerance.
pub fn stays_positive(traj: &Trajectory) -> bool {
    traj.positivity_violations(POSITIVITY_TOL) == 0
}
