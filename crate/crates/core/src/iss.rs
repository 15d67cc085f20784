//! Exponential input-to-state stability: the spectral verdict
//! (`s(A) < 0` and `r(R(0,A)P) < 1`) and a trajectory-based fit of
//! `‖z(t)‖ ≤ N e^{−μt} ‖x‖ + G ‖u‖`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{self, ControlOperator, KappaOptions};
use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::linalg;
use crate::parallel::Execution;
use crate::perturbation::PerturbedSystem;
use crate::sampling;
use crate::semigroup;
use crate::signal::InputNorm;

/// Half-width of the band around the thresholds in which no verdict is given.
pub const GUARD_BAND: f64 = 1e-9;
/// Allowed amount by which a trial may exceed the fitted bound, relative to `max(1, bound)`.
pub const VALIDATION_SLACK: f64 = 1e-8;
/// Dense eigensolves of `A + P` are used up to this size; beyond it the
/// Metzler resolvent iteration takes over.
const DENSE_PERTURBED_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "eISS")]
    Eiss,
    #[serde(rename = "not_eISS")]
    NotEiss,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Eiss => "eISS",
            Verdict::NotEiss => "not_eISS",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Zero-input growth of the constant state `x ≡ 1` up to `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub initial_state: String,
    pub horizon: f64,
    pub growth_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    Exact,
    LowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainFit {
    pub n_const: f64,
    pub mu: f64,
    /// Gain for the requested input norm.
    pub g: f64,
    pub gain_kind: GainKind,
    /// `max_{s ≤ horizon} ‖S(s)B‖`, the exact L¹ gain used for validation.
    pub g_l1: f64,
    pub p: InputNorm,
    pub horizon: f64,
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub validated: bool,
    /// Smallest `bound − ‖z(t)‖` seen over all trials and grid times.
    pub min_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssReport {
    pub verdict: Verdict,
    pub s_a: f64,
    pub s_perturbed: Option<f64>,
    pub small_gain_r: f64,
    pub p: InputNorm,
    pub fitted: Option<GainFit>,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Copy)]
pub struct GainFitOptions {
    pub trials: usize,
    /// Defaults to `20/|s(A+P)|` clamped to `[10, 10⁴]`.
    pub horizon: Option<f64>,
    pub steps: usize,
    pub seed: u64,
    pub p: InputNorm,
    pub exec: Execution,
    pub guard_band: f64,
    pub slack: f64,
}

impl Default for GainFitOptions {
    fn default() -> Self {
        GainFitOptions {
            trials: 100,
            horizon: None,
            steps: 400,
            seed: 0,
            p: InputNorm::L1,
            exec: Execution::default(),
            guard_band: GUARD_BAND,
            slack: VALIDATION_SLACK,
        }
    }
}

/// `s(A + P)`, by dense eigensolve for small systems.
pub fn perturbed_spectral_bound(system: &PerturbedSystem) -> Result<f64> {
    let s = system.perturbed();
    if s.dim() <= DENSE_PERTURBED_LIMIT || !s.is_metzler() {
        s.spectral_bound()
    } else {
        linalg::metzler_spectral_bound(s.matrix(), 1e-12, 100_000)
    }
}

fn classify(s_a: f64, r: f64, band: f64) -> Verdict {
    if s_a < -band && r < 1.0 - band {
        Verdict::Eiss
    } else if r > 1.0 + band || s_a > band {
        Verdict::NotEiss
    } else {
        Verdict::Inconclusive
    }
}

fn witness(system: &PerturbedSystem, s_perturbed: f64) -> Result<Witness> {
    let a = system.perturbed();
    let horizon = if s_perturbed.abs() > 1e-3 {
        (10.0 / s_perturbed.abs()).min(1e4)
    } else {
        1e4
    };
    let w = a.space().weights();
    let x = DVector::from_element(a.dim(), 1.0);
    let end = if a.dim() <= DENSE_PERTURBED_LIMIT {
        semigroup::semigroup_matrix(a, horizon) * &x
    } else {
        let solver = a.solver(400.0 / horizon)?;
        let mut z = x.clone();
        for _ in 0..400 {
            z = solver.solve(&(z * (400.0 / horizon)));
        }
        z
    };
    Ok(Witness {
        initial_state: "constant_one".into(),
        horizon,
        growth_factor: linalg::weighted_l1(&end, w) / linalg::weighted_l1(&x, w),
    })
}

/// Spectral ISS verdict with the guard band applied to both thresholds.
pub fn iss_verdict(system: &PerturbedSystem, p: InputNorm) -> Result<IssReport> {
    iss_verdict_with_band(system, p, GUARD_BAND)
}

pub fn iss_verdict_with_band(system: &PerturbedSystem, p: InputNorm, band: f64) -> Result<IssReport> {
    let s_a = system.base().spectral_bound()?;
    let r = system.small_gain_radius()?.radius;
    let verdict = classify(s_a, r, band);
    let s_perturbed = if verdict == Verdict::NotEiss || system.perturbed().dim() <= DENSE_PERTURBED_LIMIT {
        Some(perturbed_spectral_bound(system)?)
    } else {
        None
    };
    let witness = match (verdict, s_perturbed) {
        (Verdict::NotEiss, Some(s)) => Some(witness(system, s)?),
        _ => None,
    };
    Ok(IssReport {
        verdict,
        s_a,
        s_perturbed,
        small_gain_r: r,
        p,
        fitted: None,
        witness,
    })
}

fn default_horizon(s_perturbed: f64) -> f64 {
    if s_perturbed < 0.0 {
        (20.0 / s_perturbed.abs()).clamp(10.0, 1e4)
    } else if s_perturbed > 0.0 {
        (600.0 / s_perturbed).clamp(10.0, 1e4)
    } else {
        1e4
    }
}

struct Envelope {
    horizon: f64,
    dt: f64,
    mu: f64,
    n_const: f64,
    g_l1: f64,
    step: nalgebra::DMatrix<f64>,
    input_step: DVector<f64>,
}

/// `μ` and `N` from the tail of `‖S(t)‖`, and the impulse envelope `G`.
fn envelope(a: &GeneratorModel, b: &ControlOperator, horizon: f64, steps: usize) -> Envelope {
    let dt = horizon / steps as f64;
    let (step, input_step) = linalg::expm_with_input(a.matrix(), b.column(), dt);
    let (times, norms) = semigroup::norm_trajectory_from_step(a, &step, dt, steps);
    let mu = -semigroup::tail_log_slope(&times, &norms, horizon / 2.0);
    let n_const = times
        .iter()
        .zip(&norms)
        .map(|(t, v)| v * (mu * t).exp())
        .fold(1.0, f64::max);
    let w = a.space().weights();
    let mut v = b.column().clone();
    let mut g_l1 = linalg::weighted_l1(&v, w);
    for _ in 0..steps {
        v = &step * v;
        g_l1 = g_l1.max(linalg::weighted_l1(&v, w));
    }
    Envelope {
        horizon,
        dt,
        mu,
        n_const,
        g_l1,
        step,
        input_step,
    }
}

/// Smallest slack over one trial, or the violating time.
fn run_trial(env: &Envelope, a: &GeneratorModel, steps: usize, seed: u64, trial: usize, slack_tol: f64) -> Result<f64> {
    let w = a.space().weights();
    let n = a.dim();
    let mut rng = sampling::rng(seed, trial as u64);
    // every fourth trial is input-free, every fourth starts at rest
    let x = if trial % 4 == 3 {
        DVector::zeros(n)
    } else {
        DVector::from_vec(sampling::cone_values(&mut rng, n))
    };
    let u = if trial % 4 == 2 {
        crate::signal::InputSignal::zero()
    } else {
        control::random_step_signal(&mut rng, env.dt, steps, true)
    };
    let x_norm = linalg::weighted_l1(&x, w);
    let mut z = x;
    let mut u_norm = 0.0;
    let mut min_slack = f64::INFINITY;
    for k in 0..=steps {
        let t = k as f64 * env.dt;
        let bound = env.n_const * (-env.mu * t).exp() * x_norm + env.g_l1 * u_norm;
        let state_norm = linalg::weighted_l1(&z, w);
        let slack = bound - state_norm;
        if slack < -slack_tol * bound.max(1.0) {
            return Err(Error::EstimateViolated {
                trial,
                seed,
                time: t,
                state_norm,
                bound,
            });
        }
        min_slack = min_slack.min(slack);
        if k < steps {
            let uk = u.grid_value(k, env.dt);
            z = &env.step * z + &env.input_step * uk;
            u_norm += uk.abs() * env.dt;
        }
    }
    Ok(min_slack)
}

fn fit_and_validate(
    system: &PerturbedSystem,
    b: &ControlOperator,
    s_perturbed: f64,
    opts: &GainFitOptions,
) -> Result<GainFit> {
    let a = system.perturbed();
    if b.column().len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.column().len(),
        });
    }
    if opts.steps < 8 {
        return Err(Error::InvalidArgument("gain fit needs at least 8 steps".into()));
    }
    let horizon = match opts.horizon {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::InvalidArgument(format!("horizon must be positive, got {h}"))),
        None => default_horizon(s_perturbed),
    };
    let env = envelope(a, b, horizon, opts.steps);
    if !(env.mu > 0.0) {
        return Err(Error::FitRefused(format!(
            "fitted decay rate {} is not positive",
            env.mu
        )));
    }
    let (g, gain_kind) = match opts.p {
        InputNorm::L1 => (env.g_l1, GainKind::Exact),
        p => {
            let kappa = control::admissibility_constant(
                a,
                b,
                horizon,
                p,
                KappaOptions {
                    seed: opts.seed,
                    exec: opts.exec,
                    ..KappaOptions::default()
                },
            )?;
            (kappa.value, GainKind::LowerBound)
        }
    };
    let results = opts
        .exec
        .map_range(opts.trials, |trial| run_trial(&env, a, opts.steps, opts.seed, trial, opts.slack));
    let mut min_slack = f64::INFINITY;
    for r in results {
        min_slack = min_slack.min(r?);
    }
    Ok(GainFit {
        n_const: env.n_const,
        mu: env.mu,
        g,
        gain_kind,
        g_l1: env.g_l1,
        p: opts.p,
        horizon: env.horizon,
        steps: opts.steps,
        trials: opts.trials,
        seed: opts.seed,
        validated: true,
        min_slack,
    })
}

/// Fits `(N, μ, G)` for `ż = (A + P) z + B u` and validates the estimate on
/// random positive `(x, u)` pairs. Refused unless the spectral verdict is eISS.
pub fn iss_gain_fit(system: &PerturbedSystem, b: &ControlOperator, opts: &GainFitOptions) -> Result<GainFit> {
    let report = iss_verdict_with_band(system, opts.p, opts.guard_band)?;
    if report.verdict != Verdict::Eiss {
        return Err(Error::FitRefused(format!(
            "spectral verdict is {} (s(A) = {}, r = {})",
            report.verdict.label(),
            report.s_a,
            report.small_gain_r
        )));
    }
    let s = match report.s_perturbed {
        Some(s) => s,
        None => perturbed_spectral_bound(system)?,
    };
    fit_and_validate(system, b, s, opts)
}

/// One member of a parametrised family.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub parameter: f64,
    pub system: PerturbedSystem,
    pub control: ControlOperator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub verdict: Verdict,
    pub small_gain_r: f64,
    pub s_a: f64,
    pub s_perturbed: Option<f64>,
    /// Decay rate of `‖S(t)‖` fitted from the trajectory.
    pub mu: Option<f64>,
    /// Trajectory evidence: positive decay rate and a validated estimate.
    pub simulated_eiss: Option<bool>,
    pub agreement: Option<bool>,
    pub skipped: bool,
}

/// Spectral verdict against trajectory evidence for every member.
/// Members inside the guard band are skipped.
pub fn iss_equivalence_sweep(family: &[FamilyMember], opts: &GainFitOptions) -> Result<Vec<SweepRow>> {
    let rows = opts.exec.map(family, |m| -> Result<SweepRow> {
        let report = iss_verdict_with_band(&m.system, opts.p, opts.guard_band)?;
        let mut row = SweepRow {
            parameter: m.parameter,
            verdict: report.verdict,
            small_gain_r: report.small_gain_r,
            s_a: report.s_a,
            s_perturbed: report.s_perturbed,
            mu: None,
            simulated_eiss: None,
            agreement: None,
            skipped: report.verdict == Verdict::Inconclusive,
        };
        if row.skipped {
            return Ok(row);
        }
        let s = match report.s_perturbed {
            Some(s) => s,
            None => perturbed_spectral_bound(&m.system)?,
        };
        let inner = GainFitOptions {
            exec: Execution::Sequential,
            ..*opts
        };
        let evidence = match fit_and_validate(&m.system, &m.control, s, &inner) {
            Ok(fit) => {
                row.mu = Some(fit.mu);
                true
            }
            Err(Error::FitRefused(_)) | Err(Error::EstimateViolated { .. }) => {
                let horizon = opts.horizon.unwrap_or_else(|| default_horizon(s));
                let env = envelope(m.system.perturbed(), &m.control, horizon, opts.steps);
                row.mu = Some(env.mu);
                false
            }
            Err(e) => return Err(e),
        };
        row.simulated_eiss = Some(evidence);
        row.agreement = Some(evidence == (report.verdict == Verdict::Eiss));
        Ok(row)
    });
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::GridSpace;
    use crate::generator::{build_upwind_generator, BoundaryCondition};
    use crate::perturbation::assemble_perturbed;
    use approx::assert_abs_diff_eq;

    fn toy(beta0: f64) -> (PerturbedSystem, ControlOperator) {
        let space = GridSpace::new(2.0, 2).unwrap();
        let a = build_upwind_generator(space.clone(), &[1.0, 1.0], BoundaryCondition::ZeroInflow).unwrap();
        let b = ControlOperator::boundary_dirichlet(&space);
        let sys = assemble_perturbed(&a, &b, &[beta0, beta0]).unwrap();
        (sys, b)
    }

    #[test]
    fn verdicts_on_the_two_cell_family() {
        let (sys, _) = toy(0.5);
        let rep = iss_verdict(&sys, InputNorm::L1).unwrap();
        assert_eq!(rep.verdict, Verdict::Eiss);
        assert_abs_diff_eq!(rep.small_gain_r, 0.375, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.s_a, -2.0, epsilon = 1e-12);
        assert!(rep.witness.is_none());

        let (sys, _) = toy(2.0);
        let rep = iss_verdict(&sys, InputNorm::L1).unwrap();
        assert_eq!(rep.verdict, Verdict::NotEiss);
        assert_abs_diff_eq!(rep.small_gain_r, 1.5, epsilon = 1e-10);
        assert!(rep.s_perturbed.unwrap() > 0.0);
        assert!(rep.witness.unwrap().growth_factor > 1.0);

        let (sys, _) = toy(0.0);
        assert_eq!(iss_verdict(&sys, InputNorm::L1).unwrap().verdict, Verdict::Eiss);

        let (sys, _) = toy(4.0 / 3.0);
        assert_eq!(iss_verdict(&sys, InputNorm::L1).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn fit_tracks_the_spectral_bound() {
        let (sys, b) = toy(0.5);
        let s = perturbed_spectral_bound(&sys).unwrap();
        assert_abs_diff_eq!(s, -1.0, epsilon = 1e-10);
        let fit = iss_gain_fit(
            &sys,
            &b,
            &GainFitOptions {
                trials: 200,
                seed: 7,
                ..GainFitOptions::default()
            },
        )
        .unwrap();
        assert!((fit.mu - s.abs()).abs() < 0.05, "{fit:?}");
        assert!(fit.n_const >= 1.0);
        assert!(fit.validated && fit.min_slack >= -1e-8);
        assert_eq!(fit.gain_kind, GainKind::Exact);
    }

    #[test]
    fn unit_pulse_stays_below_the_gain() {
        let (sys, b) = toy(0.5);
        let fit = iss_gain_fit(&sys, &b, &GainFitOptions { trials: 4, ..Default::default() }).unwrap();
        let u = crate::signal::InputSignal::constant(1.0, 1.0).unwrap();
        let plan = semigroup::EvolutionPlan::new(20.0, 0.05, semigroup::Method::ExactExponential).unwrap();
        let x = crate::cone::GridVector::zeros(sys.base().space().clone());
        let sol = control::mild_solution(sys.perturbed(), &b, &x, &u, &plan).unwrap();
        for z in &sol.trajectory.states {
            assert!(z.l1_norm() <= fit.g_l1 * 1.0 + 1e-12);
        }
    }

    #[test]
    fn fit_is_refused_outside_eiss() {
        let (sys, b) = toy(2.0);
        assert!(matches!(
            iss_gain_fit(&sys, &b, &GainFitOptions::default()),
            Err(Error::FitRefused(_))
        ));
    }

    #[test]
    fn wrong_envelope_is_reported() {
        let (sys, b) = toy(0.5);
        let mut env = envelope(sys.perturbed(), &b, 20.0, 400);
        env.n_const = 0.5;
        let err = run_trial(&env, sys.perturbed(), 400, 3, 0, VALIDATION_SLACK).unwrap_err();
        assert!(matches!(err, Error::EstimateViolated { trial: 0, seed: 3, .. }));
    }

    #[test]
    fn sweep_agrees_and_skips_the_threshold() {
        let family: Vec<FamilyMember> = [0.25, 0.5, 1.0, 4.0 / 3.0, 2.0]
            .iter()
            .map(|&beta| {
                let (system, control) = toy(beta);
                FamilyMember {
                    parameter: beta,
                    system,
                    control,
                }
            })
            .collect();
        let rows = iss_equivalence_sweep(
            &family,
            &GainFitOptions {
                trials: 20,
                ..Default::default()
            },
        )
        .unwrap();
        for row in &rows[..3] {
            assert_eq!(row.verdict, Verdict::Eiss);
            assert_eq!(row.agreement, Some(true));
        }
        assert!(rows[3].skipped);
        assert_eq!(rows[4].verdict, Verdict::NotEiss);
        assert_eq!(rows[4].simulated_eiss, Some(false));
        assert_eq!(rows[4].agreement, Some(true));
    }

    #[test]
    fn radius_grows_with_beta() {
        let radii: Vec<f64> = [0.1, 0.4, 0.9, 1.3]
            .iter()
            .map(|&b| toy(b).0.small_gain_radius().unwrap().radius)
            .collect();
        assert!(radii.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn verdict_labels_serialise() {
        assert_eq!(serde_json::to_string(&Verdict::Eiss).unwrap(), "\"eISS\"");
        assert_eq!(serde_json::to_string(&Verdict::NotEiss).unwrap(), "\"not_eISS\"");
    }
}
