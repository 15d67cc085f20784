//! Boundary perturbations: the Dirichlet operator, the boundary control
//! operator `B = (λ − A)D_λ`, the perturbed generator `A + P` and the
//! small-gain radius `r(R(0,A)P)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cone::{GridSpace, GridVector};
use crate::control::{ControlOperator, Provenance};
use crate::error::{Error, Result};
use crate::generator::{GeneratorModel, DENSE_EIGEN_LIMIT};
use crate::linalg;
use crate::parallel::Execution;
use crate::sampling;
use crate::semigroup::{semigroup_matrix, EvolutionPlan, Method};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;
/// Entrywise slack for the domination comparisons (scaled by `max(1, |S_ij|)`).
pub const DOMINATION_TOL: f64 = 1e-10;

/// Solution of `(λ − A_m) d = 0` with boundary value `Γd = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletOperator {
    pub lambda: f64,
    column: DVector<f64>,
    space: Arc<GridSpace>,
}

impl DirichletOperator {
    pub fn column(&self) -> &DVector<f64> {
        &self.column
    }

    pub fn as_grid_vector(&self) -> GridVector {
        GridVector::from_raw(Arc::clone(&self.space), self.column.clone())
    }
}

/// `d_j = d_{j−1} / (1 + h(λ + q_j))` with `d_{−1} = 1`.
pub fn dirichlet_operator(a: &GeneratorModel, lambda: f64) -> Result<DirichletOperator> {
    if a.boundary().is_none() {
        return Err(Error::InvalidArgument(
            "the Dirichlet operator needs an upwind transport build".into(),
        ));
    }
    let h = a.space().spacing();
    let mut prev = 1.0;
    let mut column = DVector::zeros(a.dim());
    for (j, q) in a.absorption().iter().enumerate() {
        let denom = 1.0 + h * (lambda + q);
        if !(denom > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda = {lambda} too negative: recursion denominator {denom} at cell {j}"
            )));
        }
        prev /= denom;
        column[j] = prev;
    }
    Ok(DirichletOperator {
        lambda,
        column,
        space: Arc::clone(a.space()),
    })
}

/// `B = (λI − A) D_λ` for the zero-inflow generator `a`.
pub fn boundary_control_operator(a: &GeneratorModel, lambda: f64) -> Result<ControlOperator> {
    a.solver(lambda)?;
    let d = dirichlet_operator(a, lambda)?;
    let column = d.column() * lambda - a.matrix() * d.column();
    let mut expected = DVector::zeros(a.dim());
    expected[0] = a.inflow_coefficient();
    let close = (&column - &expected).amax() <= 1e-10 * a.inflow_coefficient();
    if close {
        Ok(ControlOperator::boundary_dirichlet(a.space()))
    } else {
        ControlOperator::custom(column)
    }
}

/// Largest entry difference of `B` computed at the given λ values.
pub fn boundary_control_spread(a: &GeneratorModel, lambdas: &[f64]) -> Result<f64> {
    let cols: Vec<DVector<f64>> = lambdas
        .iter()
        .map(|&l| {
            let d = dirichlet_operator(a, l)?;
            Ok(d.column() * l - a.matrix() * d.column())
        })
        .collect::<Result<_>>()?;
    let mut spread: f64 = 0.0;
    for c in &cols[1..] {
        spread = spread.max((c - &cols[0]).amax());
    }
    Ok(spread)
}

/// Generator `A`, perturbation `P` and the perturbed generator `A + P`.
#[derive(Debug, Clone)]
pub struct PerturbedSystem {
    base: GeneratorModel,
    perturbation: DMatrix<f64>,
    rank_one: Option<(DVector<f64>, DVector<f64>)>,
    perturbed: GeneratorModel,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallGain {
    /// `r(R(0,A)P)` from power iteration (dense eigenvalues as fallback).
    pub radius: f64,
    /// `Λ R(0,A) B`, available for rank-one perturbations.
    pub rank_one_value: Option<f64>,
    pub iterations: usize,
}

/// `P = B Λ` with `Λ f = Σ_j β_j h f_j`.
pub fn assemble_perturbed(a: &GeneratorModel, b: &ControlOperator, beta: &[f64]) -> Result<PerturbedSystem> {
    let n = a.dim();
    if beta.len() != n || b.column().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if beta.len() != n { beta.len() } else { b.column().len() },
        });
    }
    let mut warnings = Vec::new();
    if beta.iter().any(|v| *v < 0.0) {
        warnings.push("negative birth profile: positivity of the perturbed semigroup is not guaranteed".into());
    }
    if b.provenance() != Provenance::BoundaryDirichlet {
        warnings.push("control operator is not the boundary injection".into());
    }
    let functional = DVector::from_iterator(n, beta.iter().zip(a.space().weights()).map(|(b, w)| b * w));
    let p = b.column() * functional.transpose();
    let mut sys = PerturbedSystem::from_matrix(a, p)?;
    sys.rank_one = Some((b.column().clone(), functional));
    sys.warnings = warnings;
    Ok(sys)
}

impl PerturbedSystem {
    /// General perturbation matrix `P`.
    pub fn from_matrix(a: &GeneratorModel, p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != a.dim() || p.ncols() != a.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                found: p.nrows(),
            });
        }
        let perturbed = a.with_matrix(a.matrix() + &p);
        let mut warnings = Vec::new();
        if linalg::min_entry(&p) < 0.0 {
            warnings.push("perturbation has negative entries".into());
        }
        Ok(PerturbedSystem {
            base: a.clone(),
            perturbation: p,
            rank_one: None,
            perturbed,
            warnings,
        })
    }

    pub fn base(&self) -> &GeneratorModel {
        &self.base
    }

    pub fn perturbation(&self) -> &DMatrix<f64> {
        &self.perturbation
    }

    /// `A_S = A + P`.
    pub fn perturbed(&self) -> &GeneratorModel {
        &self.perturbed
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_perturbation_positive(&self) -> bool {
        linalg::min_entry(&self.perturbation) >= 0.0
    }

    fn apply_p(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.rank_one {
            Some((col, row)) => col * row.dot(v),
            None => &self.perturbation * v,
        }
    }

    /// Spectral radius of `K = R(0,A) P`.
    pub fn small_gain_radius(&self) -> Result<SmallGain> {
        let solver = self.base.solver(0.0)?;
        let w = self.base.space().weights();
        let n = self.base.dim();
        let rank_one_value = self
            .rank_one
            .as_ref()
            .map(|(col, row)| row.dot(&solver.solve(col)));

        let mut rng = sampling::rng(0x5eed, 0);
        let mut v = DVector::from_fn(n, |_, _| 0.5 + rand::Rng::random::<f64>(&mut rng));
        v /= linalg::weighted_l1(&v, w);
        let mut history: Vec<f64> = Vec::new();
        let mut prev = f64::NAN;
        for it in 1..=POWER_MAX_ITER {
            let next = solver.solve(&self.apply_p(&v));
            let est = linalg::weighted_l1(&next, w);
            if est == 0.0 {
                return Ok(SmallGain { radius: 0.0, rank_one_value, iterations: it });
            }
            v = next / est;
            history.push(est);
            if history.len() > 10 {
                history.remove(0);
            }
            if (est - prev).abs() <= POWER_TOL * est.max(1.0) {
                return Ok(SmallGain { radius: est, rank_one_value, iterations: it });
            }
            prev = est;
        }
        if n <= DENSE_EIGEN_LIMIT {
            let k = solver.inverse(n) * &self.perturbation;
            let schur = nalgebra::linalg::Schur::try_new(k, f64::EPSILON, 100 * n.max(10))
                .ok_or_else(|| Error::Eigen("Schur iteration failed on R(0,A)P".into()))?;
            let radius = schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
            return Ok(SmallGain { radius, rank_one_value, iterations: POWER_MAX_ITER });
        }
        Err(Error::NoConvergence {
            iterations: POWER_MAX_ITER,
            history,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `"semigroup"`, `"resolvent"` or `"spectral_bound"`.
    pub kind: String,
    /// Time or λ at which the comparison failed.
    pub parameter: f64,
    pub row: usize,
    pub col: usize,
    pub unperturbed: f64,
    pub perturbed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub holds: bool,
    pub s_a: f64,
    pub s_perturbed: f64,
    pub violations: Vec<Violation>,
}

/// Checks `e^{tA} ≤ e^{t(A+P)}`, `R(λ,A) ≤ R(λ,A+P)` entrywise and `s(A) ≤ s(A+P)`.
pub fn domination_check(
    system: &PerturbedSystem,
    t_grid: &[f64],
    lambda_grid: &[f64],
    exec: Execution,
) -> Result<DominationReport> {
    let s_a = system.base.spectral_bound()?;
    let s_p = system.perturbed.spectral_bound()?;
    if let Some(l) = lambda_grid.iter().find(|l| !(**l > s_p)) {
        return Err(Error::InvalidArgument(format!(
            "lambda = {l} must exceed s(A+P) = {s_p}"
        )));
    }
    let compare = |kind: &str, param: f64, lower: &DMatrix<f64>, upper: &DMatrix<f64>| {
        let mut out = Vec::new();
        for j in 0..lower.ncols() {
            for i in 0..lower.nrows() {
                let (t, s) = (lower[(i, j)], upper[(i, j)]);
                if t > s + DOMINATION_TOL * s.abs().max(1.0) {
                    out.push(Violation {
                        kind: kind.into(),
                        parameter: param,
                        row: i,
                        col: j,
                        unperturbed: t,
                        perturbed: s,
                    });
                }
            }
        }
        out
    };
    let mut violations: Vec<Violation> = exec
        .map(t_grid, |&t| {
            compare(
                "semigroup",
                t,
                &semigroup_matrix(&system.base, t),
                &semigroup_matrix(&system.perturbed, t),
            )
        })
        .into_iter()
        .flatten()
        .collect();
    let resolvent: Vec<Result<Vec<Violation>>> = exec.map(lambda_grid, |&l| {
        Ok(compare(
            "resolvent",
            l,
            &system.base.resolvent_matrix(l)?,
            &system.perturbed.resolvent_matrix(l)?,
        ))
    });
    for r in resolvent {
        violations.extend(r?);
    }
    if s_a > s_p + 1e-9 * s_p.abs().max(1.0) {
        violations.push(Violation {
            kind: "spectral_bound".into(),
            parameter: f64::NAN,
            row: 0,
            col: 0,
            unperturbed: s_a,
            perturbed: s_p,
        });
    }
    Ok(DominationReport {
        holds: violations.is_empty(),
        s_a,
        s_perturbed: s_p,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationCheck {
    pub dt: f64,
    pub residual: f64,
    /// `residual / dt`.
    pub constant: f64,
}

/// Residual of `S(t)x = T(t)x + ∫₀^t T(t−s) P S(s)x ds` with the
/// convolution integrated by the left-endpoint rule on a `dt` grid.
pub fn variation_of_constants_check(
    system: &PerturbedSystem,
    x: &GridVector,
    t: f64,
    dt: f64,
) -> Result<VariationCheck> {
    let plan = EvolutionPlan::new(t, dt, Method::ExactExponential)?;
    let steps = plan.steps()?;
    let e_a = linalg::expm(&(system.base.matrix() * dt));
    let e_s = linalg::expm(&(system.perturbed.matrix() * dt));
    let mut s_state = x.values().clone();
    let mut t_state = x.values().clone();
    let mut conv = DVector::zeros(x.len());
    for _ in 0..steps {
        conv = &e_a * (conv + system.apply_p(&s_state) * dt);
        s_state = &e_s * s_state;
        t_state = &e_a * t_state;
    }
    let diff = s_state - t_state - conv;
    let residual = linalg::weighted_l1(&diff, x.space().weights());
    Ok(VariationCheck {
        dt,
        residual,
        constant: residual / dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_upwind_generator, BoundaryCondition};
    use approx::assert_relative_eq;

    fn dirichlet(n: usize, length: f64, q: f64) -> GeneratorModel {
        let space = GridSpace::new(length, n).unwrap();
        build_upwind_generator(space, &vec![q; n], BoundaryCondition::ZeroInflow).unwrap()
    }

    fn toy_system(beta: f64) -> PerturbedSystem {
        let a = dirichlet(2, 2.0, 1.0);
        let b = boundary_control_operator(&a, 0.0).unwrap();
        assemble_perturbed(&a, &b, &[beta, beta]).unwrap()
    }

    #[test]
    fn dirichlet_examples() {
        let a = dirichlet(2, 2.0, 1.0);
        let d = dirichlet_operator(&a, 0.0).unwrap();
        assert_eq!(d.column().as_slice(), &[0.5, 0.25]);
        let free = dirichlet(5, 3.0, 0.0);
        assert!(dirichlet_operator(&free, 0.0).unwrap().column().iter().all(|v| *v == 1.0));
        assert!(dirichlet_operator(&a, -3.0).is_err());
    }

    #[test]
    fn dirichlet_converges_to_kernel_first_order() {
        let errs: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&n| {
                let a = dirichlet(n, 5.0, 1.0);
                let d = dirichlet_operator(&a, 1.0).unwrap();
                // cell j holds the value at its right edge x = (j+1)h
                let h = a.space().spacing();
                d.column()
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - (-2.0 * (j + 1) as f64 * h).exp()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "{errs:?}");
        }
    }

    #[test]
    fn dirichlet_entries_decrease_in_unit_interval() {
        let a = dirichlet(30, 3.0, 0.5);
        let d = dirichlet_operator(&a, 0.2).unwrap();
        assert!(d.column().iter().all(|v| *v > 0.0 && *v <= 1.0));
        assert!(d.column().as_slice().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn boundary_operator_is_lambda_independent() {
        let a = dirichlet(2, 2.0, 1.0);
        let b = boundary_control_operator(&a, 0.0).unwrap();
        assert_eq!(b.provenance(), Provenance::BoundaryDirichlet);
        assert_eq!(b.column().as_slice(), &[1.0, 0.0]);
        let b3 = boundary_control_operator(&a, 3.0).unwrap();
        assert!((b.column() - b3.column()).amax() <= 1e-12);
        let free = dirichlet(4, 2.0, 0.0);
        assert_eq!(boundary_control_operator(&free, 1.0).unwrap().column()[0], 2.0);
        let big = dirichlet(100, 10.0, 1.0);
        assert!(boundary_control_spread(&big, &[0.0, 1.0, 10.0]).unwrap() <= 1e-10);
    }

    #[test]
    fn boundary_operator_unbounded_as_h_shrinks() {
        for n in [50, 100, 200] {
            let a = dirichlet(n, 10.0, 1.0);
            let b = boundary_control_operator(&a, 0.0).unwrap();
            assert_relative_eq!(b.l1_norm(a.space()), 1.0, epsilon = 1e-14);
            assert_relative_eq!(b.column().amax(), n as f64 / 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn assembly_examples() {
        let s = toy_system(0.0);
        assert_eq!(s.perturbed().matrix(), s.base().matrix());
        assert_eq!(s.small_gain_radius().unwrap().radius, 0.0);
        let b0 = 0.9;
        let s = toy_system(b0);
        assert_eq!(
            s.perturbed().matrix(),
            &DMatrix::from_row_slice(2, 2, &[-2.0 + b0, b0, 1.0, -2.0])
        );
        assert!(s.perturbed().is_metzler());
        assert!(s.warnings().is_empty());
        let a = dirichlet(2, 2.0, 1.0);
        let b = boundary_control_operator(&a, 0.0).unwrap();
        assert!(!assemble_perturbed(&a, &b, &[-0.1, 0.2]).unwrap().warnings().is_empty());
    }

    #[test]
    fn small_gain_two_cell_family() {
        for b0 in [0.25, 0.5, 1.0, 4.0 / 3.0, 2.0] {
            let g = toy_system(b0).small_gain_radius().unwrap();
            assert_relative_eq!(g.radius, 0.75 * b0, max_relative = 1e-10);
            assert_relative_eq!(g.rank_one_value.unwrap(), 0.75 * b0, max_relative = 1e-14);
        }
    }

    #[test]
    fn small_gain_geometric_closed_form() {
        let n = 2000;
        let a = dirichlet(n, 20.0, 1.0);
        let b = boundary_control_operator(&a, 0.0).unwrap();
        let s = assemble_perturbed(&a, &b, &vec![1.0; n]).unwrap();
        let r = s.small_gain_radius().unwrap().radius;
        let h: f64 = 0.01;
        let discrete = 1.0 - (1.0 + h).powi(-(n as i32));
        assert_relative_eq!(r, discrete, epsilon = 1e-9);
        assert!((r - (1.0 - (-20f64).exp())).abs() <= 2e-9 + h);
    }

    #[test]
    fn general_perturbation_power_iteration() {
        let a = dirichlet(4, 4.0, 1.0);
        let p = DMatrix::from_fn(4, 4, |i, j| 0.1 * (1 + i + 2 * j) as f64);
        let s = PerturbedSystem::from_matrix(&a, p.clone()).unwrap();
        let g = s.small_gain_radius().unwrap();
        let k = a.resolvent_matrix(0.0).unwrap() * p;
        let dense = k.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert_relative_eq!(g.radius, dense, max_relative = 1e-8);
        assert!(g.rank_one_value.is_none());
    }

    #[test]
    fn domination_examples() {
        let exec = Execution::Sequential;
        let r = domination_check(&toy_system(0.0), &[0.5, 1.0], &[0.0, 1.0], exec).unwrap();
        assert!(r.holds);
        let r = domination_check(&toy_system(0.5), &[1.0], &[0.0, 2.0], exec).unwrap();
        assert!(r.holds, "{:?}", r.violations);
        for b0 in [0.0, 0.3, 1.0, 2.0, 5.0] {
            let s = toy_system(b0);
            assert!(s.base().spectral_bound().unwrap() <= s.perturbed().spectral_bound().unwrap() + 1e-12);
        }
        assert!(domination_check(&toy_system(2.0), &[1.0], &[0.0], exec).is_err());
    }

    #[test]
    fn domination_detects_negative_perturbation() {
        let a = dirichlet(3, 3.0, 1.0);
        let s = PerturbedSystem::from_matrix(&a, DMatrix::from_element(3, 3, -0.2)).unwrap();
        let r = domination_check(&s, &[1.0], &[1.0], Execution::Sequential).unwrap();
        assert!(!r.holds);
        assert!(r.violations.iter().any(|v| v.kind == "semigroup"));
    }

    #[test]
    fn variation_of_constants_examples() {
        let s = toy_system(0.0);
        let x = GridVector::from_vec(s.base().space().clone(), vec![1.0, 1.0]).unwrap();
        assert!(variation_of_constants_check(&s, &x, 1.0, 1e-2).unwrap().residual <= 1e-12);
        let s = toy_system(0.5);
        let zero = GridVector::zeros(s.base().space().clone());
        assert_eq!(variation_of_constants_check(&s, &zero, 1.0, 1e-2).unwrap().residual, 0.0);
        let r1 = variation_of_constants_check(&s, &x, 1.0, 1e-3).unwrap();
        let r2 = variation_of_constants_check(&s, &x, 1.0, 5e-4).unwrap();
        assert!(r1.residual <= 1e-2, "{r1:?}");
        let ratio = r1.residual / r2.residual;
        assert!((1.9..2.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn exp_stability_matches_small_gain_on_sweep() {
        let a = dirichlet(2, 2.0, 1.0);
        let b = boundary_control_operator(&a, 0.0).unwrap();
        let s_a = a.spectral_bound().unwrap();
        for k in 0..20 {
            let b0 = 0.1 * k as f64 + 0.05;
            let s = assemble_perturbed(&a, &b, &[b0, b0]).unwrap();
            let r = s.small_gain_radius().unwrap().radius;
            if (r - 1.0).abs() < 1e-6 {
                continue;
            }
            let stable = s.perturbed().spectral_bound().unwrap() < 0.0;
            assert_eq!(stable, s_a < 0.0 && r < 1.0, "beta0 = {b0}");
        }
    }
}
