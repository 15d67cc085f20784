//! Control operators, input maps `Φ_τ u = ∫₀^τ T(τ−s) B u(s) ds`, mild
//! solutions and the admissibility audits.
//!
//! Inputs are piecewise constant, so each constant piece is integrated
//! exactly through the augmented exponential of `[[A, B], [0, 0]]`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cone::{GridSpace, GridVector, POSITIVITY_TOL};
use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::linalg;
use crate::parallel::Execution;
use crate::sampling;
use crate::semigroup::{EvolutionPlan, Method, Trajectory};
use crate::signal::{InputNorm, InputSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// `(1/h) e₀`: the boundary value entering cell 0.
    BoundaryDirichlet,
    Custom,
}

/// Injection column of a scalar input.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOperator {
    column: DVector<f64>,
    provenance: Provenance,
}

impl ControlOperator {
    pub fn boundary_dirichlet(space: &GridSpace) -> Self {
        let mut column = DVector::zeros(space.cells());
        column[0] = 1.0 / space.spacing();
        ControlOperator {
            column,
            provenance: Provenance::BoundaryDirichlet,
        }
    }

    pub fn custom(column: DVector<f64>) -> Result<Self> {
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("control operator has non-finite entries".into()));
        }
        Ok(ControlOperator {
            column,
            provenance: Provenance::Custom,
        })
    }

    pub fn column(&self) -> &DVector<f64> {
        &self.column
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_positive(&self, tol: f64) -> bool {
        self.column.iter().all(|v| *v >= -tol)
    }

    pub fn l1_norm(&self, space: &GridSpace) -> f64 {
        linalg::weighted_l1(&self.column, space.weights())
    }
}

fn check_dims(a: &GeneratorModel, b: &ControlOperator) -> Result<()> {
    if b.column.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.column.len(),
        });
    }
    Ok(())
}

/// Evaluates input maps of one `(A, B)` pair. With a grid step, signals
/// aligned to that grid are integrated by marching with a single cached
/// step pair; anything else is integrated piece by piece.
pub struct InputMap<'a> {
    a: &'a GeneratorModel,
    b: &'a ControlOperator,
    grid: Option<(f64, DMatrix<f64>, DVector<f64>)>,
}

impl<'a> InputMap<'a> {
    pub fn new(a: &'a GeneratorModel, b: &'a ControlOperator) -> Result<Self> {
        check_dims(a, b)?;
        Ok(InputMap { a, b, grid: None })
    }

    pub fn with_grid(a: &'a GeneratorModel, b: &'a ControlOperator, dt: f64) -> Result<Self> {
        check_dims(a, b)?;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("grid step must be positive".into()));
        }
        let (e, f) = linalg::expm_with_input(a.matrix(), &b.column, dt);
        Ok(InputMap {
            a,
            b,
            grid: Some((dt, e, f)),
        })
    }

    pub fn grid_step(&self) -> Option<f64> {
        self.grid.as_ref().map(|g| g.0)
    }

    fn on_grid(&self, u: &InputSignal, tau: f64) -> Option<(usize, &DMatrix<f64>, &DVector<f64>, f64)> {
        let (dt, e, f) = self.grid.as_ref()?;
        let steps = tau / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || !u.is_aligned(*dt) {
            return None;
        }
        Some((steps.round() as usize, e, f, *dt))
    }

    /// `Φ_τ u` applied on top of the free evolution of `z0`:
    /// returns `T(τ) z0 + Φ_τ u`.
    pub fn propagate(&self, z0: &DVector<f64>, u: &InputSignal, tau: f64) -> DVector<f64> {
        if let Some((steps, e, f, dt)) = self.on_grid(u, tau) {
            let mut z = z0.clone();
            for k in 0..steps {
                z = e * z;
                let v = u.grid_value(k, dt);
                if v != 0.0 {
                    z += f * v;
                }
            }
            return z;
        }
        let mut cache: HashMap<u64, (DMatrix<f64>, DVector<f64>)> = HashMap::new();
        let mut z = z0.clone();
        let mut cursor = 0.0;
        for (start, end, value) in u.segments() {
            if start >= tau {
                break;
            }
            let len = end.min(tau) - start;
            let (e, f) = cache
                .entry(len.to_bits())
                .or_insert_with(|| linalg::expm_with_input(self.a.matrix(), &self.b.column, len));
            z = &*e * z;
            if value != 0.0 {
                z += &*f * value;
            }
            cursor = end.min(tau);
        }
        if cursor < tau {
            z = linalg::expm(&(self.a.matrix() * (tau - cursor))) * z;
        }
        z
    }

    /// `Φ_τ u`.
    pub fn apply(&self, u: &InputSignal, tau: f64) -> GridVector {
        let z = self.propagate(&DVector::zeros(self.a.dim()), u, tau);
        GridVector::from_raw(Arc::clone(self.a.space()), z)
    }

    /// `T(τ) z`.
    pub fn free(&self, z: &DVector<f64>, tau: f64) -> DVector<f64> {
        self.propagate(z, &InputSignal::zero(), tau)
    }
}

/// `Φ_τ u = ∫₀^τ T(τ−s) B u(s) ds`, integrated exactly on each constant piece.
pub fn input_map(a: &GeneratorModel, b: &ControlOperator, u: &InputSignal, tau: f64) -> Result<GridVector> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    Ok(InputMap::new(a, b)?.apply(u, tau))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MildSolution {
    pub trajectory: Trajectory,
    /// Set when the signal had to be projected onto the time grid.
    pub resampled: bool,
}

/// `z(t_k) = T(t_k) x + Φ_{t_k} u` on the plan's grid.
pub fn mild_solution(
    a: &GeneratorModel,
    b: &ControlOperator,
    x: &GridVector,
    u: &InputSignal,
    plan: &EvolutionPlan,
) -> Result<MildSolution> {
    check_dims(a, b)?;
    if x.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: x.len(),
        });
    }
    let times = plan.times()?;
    let resampled = !u.is_aligned(plan.dt);
    let u = if resampled { u.resample(plan.dt) } else { u.clone() };
    let mut states = Vec::with_capacity(times.len());
    states.push(x.clone());
    let mut z = x.values().clone();
    match plan.method {
        Method::ExactExponential => {
            let (e, f) = linalg::expm_with_input(a.matrix(), &b.column, plan.dt);
            for k in 0..times.len() - 1 {
                z = &e * z + &f * u.grid_value(k, plan.dt);
                states.push(GridVector::from_raw(Arc::clone(a.space()), z.clone()));
            }
        }
        Method::ImplicitEuler => {
            let solver = a
                .solver(1.0 / plan.dt)
                .map_err(|e| Error::StepFailure(format!("implicit Euler matrix is singular ({e})")))?;
            for k in 0..times.len() - 1 {
                let rhs = (&z + &b.column * (plan.dt * u.grid_value(k, plan.dt))) / plan.dt;
                z = solver.solve(&rhs);
                states.push(GridVector::from_raw(Arc::clone(a.space()), z.clone()));
            }
        }
    }
    Ok(MildSolution {
        trajectory: Trajectory { times, states },
        resampled,
    })
}

/// Admissibility constant `κ(τ)` with `‖Φ_τ u‖ ≤ κ ‖u‖_{L^p}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub p: InputNorm,
    pub tau: f64,
    /// Exact for `p = 1`; a sampled lower bound otherwise.
    pub value: f64,
    pub is_lower_bound: bool,
    /// Hölder-type upper bound, when available.
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct KappaOptions {
    pub grid_points: usize,
    pub samples: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for KappaOptions {
    fn default() -> Self {
        KappaOptions {
            grid_points: 200,
            samples: 200,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

/// `‖T(s_k) B‖` on `s_k = kτ/m`, `k = 0..=m`.
fn impulse_norms(a: &GeneratorModel, b: &ControlOperator, tau: f64, m: usize) -> Vec<f64> {
    let w = a.space().weights();
    let e = linalg::expm(&(a.matrix() * (tau / m as f64)));
    let mut v = b.column.clone();
    let mut out = Vec::with_capacity(m + 1);
    out.push(linalg::weighted_l1(&v, w));
    for _ in 0..m {
        v = &e * v;
        out.push(linalg::weighted_l1(&v, w));
    }
    out
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    dt * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[values.len() - 1]))
}

/// Estimates `κ(τ)`. For `p = 1` this is `max_{s ≤ τ} ‖T(s)B‖` on the time
/// grid; for `p ∈ {2, ∞}` it is the largest `‖Φ_τ u‖` over random unit-norm
/// step inputs, reported with the Hölder upper bound.
pub fn admissibility_constant(
    a: &GeneratorModel,
    b: &ControlOperator,
    tau: f64,
    p: InputNorm,
    opts: KappaOptions,
) -> Result<KappaEstimate> {
    check_dims(a, b)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let m = opts.grid_points.max(1);
    let norms = impulse_norms(a, b, tau, m);
    let ds = tau / m as f64;
    if p == InputNorm::L1 {
        let value = norms.iter().copied().fold(0.0, f64::max);
        return Ok(KappaEstimate {
            p,
            tau,
            value,
            is_lower_bound: false,
            upper: Some(value),
        });
    }
    let positive = a.is_metzler() && b.is_positive(0.0);
    let map = InputMap::with_grid(a, b, ds)?;
    let w = a.space().weights();
    let upper = match p {
        InputNorm::LInf if positive => map.apply(&InputSignal::constant(1.0, tau)?, tau).l1_norm(),
        InputNorm::LInf => trapezoid(&norms, ds),
        _ => trapezoid(&norms.iter().map(|v| v * v).collect::<Vec<_>>(), ds).sqrt(),
    };
    let samples = exec_samples(&map, tau, m, p, opts);
    let mut value = samples.into_iter().fold(0.0, f64::max);
    if p == InputNorm::LInf {
        value = value.max(linalg::weighted_l1(
            map.apply(&InputSignal::constant(1.0, tau)?, tau).values(),
            w,
        ));
    }
    Ok(KappaEstimate {
        p,
        tau,
        value,
        is_lower_bound: true,
        upper: Some(upper),
    })
}

fn exec_samples(map: &InputMap<'_>, tau: f64, m: usize, p: InputNorm, opts: KappaOptions) -> Vec<f64> {
    let dt = tau / m as f64;
    opts.exec.map_range(opts.samples, |i| {
        let mut rng = sampling::rng(opts.seed, i as u64);
        let u = random_step_signal(&mut rng, dt, m, true);
        let norm = u.norm(p);
        if norm == 0.0 {
            return 0.0;
        }
        map.apply(&u.scale(1.0 / norm), tau).l1_norm()
    })
}

/// Random step signal aligned to `dt`, supported in `[0, m·dt]`.
pub fn random_step_signal<R: Rng>(rng: &mut R, dt: f64, m: usize, nonnegative: bool) -> InputSignal {
    let pieces = rng.random_range(1..=8usize.min(m.max(1)));
    let mut cuts: Vec<usize> = (0..pieces - 1).map(|_| rng.random_range(1..m.max(2))).collect();
    cuts.push(m.max(1));
    cuts.sort_unstable();
    cuts.dedup();
    let mut breakpoints = vec![0.0];
    let mut values = Vec::new();
    for c in cuts {
        breakpoints.push(c as f64 * dt);
        let v: f64 = rng.random();
        values.push(if nonnegative { v } else { 2.0 * v - 1.0 });
    }
    InputSignal::new(breakpoints, values).expect("cuts are strictly increasing")
}

/// Smallest `m_α` with `‖R(λ,A)B‖ ≤ m_α / (λ − α)^{1/p}` on the λ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventBound {
    pub alpha: f64,
    pub p: InputNorm,
    pub m_alpha: f64,
    pub argmax_lambda: f64,
}

pub fn resolvent_bound_audit(
    a: &GeneratorModel,
    b: &ControlOperator,
    alpha: f64,
    lambdas: &[f64],
    p: InputNorm,
) -> Result<ResolventBound> {
    check_dims(a, b)?;
    let s = a.spectral_bound()?;
    if !(alpha > s) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must exceed s(A) = {s}")));
    }
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > alpha)) {
        return Err(Error::InvalidArgument("every lambda must exceed alpha".into()));
    }
    let w = a.space().weights();
    let mut best = (f64::NEG_INFINITY, lambdas[0]);
    for &lambda in lambdas {
        let rb = a.solver(lambda)?.solve(&b.column);
        let v = linalg::weighted_l1(&rb, w) * (lambda - alpha).powf(p.reciprocal());
        if v > best.0 {
            best = (v, lambda);
        }
    }
    Ok(ResolventBound {
        alpha,
        p,
        m_alpha: best.0,
        argmax_lambda: best.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionCheck {
    pub residual: f64,
    pub resampled: bool,
}

/// `‖Φ_{τ+t}u − T(τ)Φ_t(𝒫_t u) − Φ_τ(𝒮_t u)‖`.
pub fn composition_law_check(
    map: &InputMap<'_>,
    u: &InputSignal,
    t: f64,
    tau: f64,
) -> Result<CompositionCheck> {
    if !(t > 0.0 && tau > 0.0) {
        return Err(Error::InvalidArgument("t and tau must be positive".into()));
    }
    let (u, resampled) = match map.grid_step() {
        Some(dt) if !u.is_aligned(dt) => (u.resample(dt), true),
        _ => (u.clone(), false),
    };
    let whole = map.apply(&u, tau + t);
    let head = map.apply(&u.truncate(t), t);
    let carried = map.free(head.values(), tau);
    let tail = map.apply(&u.shift(t), tau);
    let diff = whole.values() - carried - tail.values();
    Ok(CompositionCheck {
        residual: linalg::weighted_l1(&diff, whole.space().weights()),
        resampled,
    })
}

/// `‖Φ_τ(u + v) − Φ_τ u − Φ_τ v‖`.
pub fn additivity_residual(map: &InputMap<'_>, u: &InputSignal, v: &InputSignal, tau: f64) -> f64 {
    let lhs = map.apply(&u.add(v), tau);
    let rhs = &map.apply(u, tau) + &map.apply(v, tau);
    (&lhs - &rhs).l1_norm()
}

/// `‖Φ_τ u − (Φ_τ u₊ − Φ_τ u₋)‖`.
pub fn cone_decomposition_residual(map: &InputMap<'_>, u: &InputSignal, tau: f64) -> f64 {
    let direct = map.apply(u, tau);
    let split = &map.apply(&u.positive_part(), tau) - &map.apply(&u.negative_part(), tau);
    (&direct - &split).l1_norm()
}

/// The three positivity notions that coincide for positive semigroups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivityEquivalence {
    pub control_positive: bool,
    pub resolvent_input_positive: bool,
    pub input_map_positive: bool,
}

impl PositivityEquivalence {
    pub fn consistent(&self) -> bool {
        self.control_positive == self.resolvent_input_positive
            && self.resolvent_input_positive == self.input_map_positive
    }
}

/// Checks `B ≥ 0`, `R(λ,A)B ≥ 0` at a large λ and positivity of `Φ_τ` on
/// unit pulses of width `τ/m`.
pub fn positivity_equivalences(
    a: &GeneratorModel,
    b: &ControlOperator,
    tau: f64,
    m: usize,
) -> Result<PositivityEquivalence> {
    check_dims(a, b)?;
    let scale = b.column.amax().max(f64::MIN_POSITIVE);
    let tol = POSITIVITY_TOL * scale;
    let large = a.spectral_bound()?.max(0.0) + 100.0 * (1.0 + linalg::norm1(a.matrix()));
    let rb = a.solver(large)?.solve(&b.column) * large;
    let (e, f) = linalg::expm_with_input(a.matrix(), &b.column, tau / m as f64);
    let mut pulse = f / (tau / m as f64);
    let mut map_ok = true;
    for _ in 0..m {
        map_ok &= pulse.iter().all(|v| *v >= -tol);
        pulse = &e * pulse;
    }
    Ok(PositivityEquivalence {
        control_positive: b.is_positive(tol),
        resolvent_input_positive: rb.iter().all(|v| *v >= -tol),
        input_map_positive: map_ok,
    })
}

/// `‖Φ_τ‖` from `L^∞` for each τ, measured by `∫₀^τ ‖T(s)B‖ ds`. Tends to
/// zero as τ → 0 for zero-class admissible operators.
pub fn linf_decay_curve(a: &GeneratorModel, b: &ControlOperator, taus: &[f64]) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    taus.iter()
        .map(|&tau| {
            if !(tau > 0.0) {
                return Err(Error::InvalidArgument("tau must be positive".into()));
            }
            Ok(trapezoid(&impulse_norms(a, b, tau, 200), tau / 200.0))
        })
        .collect()
}

/// Audit summary for one `(A, B)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub tau: f64,
    pub kappa: f64,
    pub m_alpha: f64,
    pub alpha: f64,
    pub positive_admissible: bool,
    pub composition_residual: f64,
}
