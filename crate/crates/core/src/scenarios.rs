//! Built-in systems: the renewal equation with boundary births, transport
//! on a ring with boundary gain `a`, and a nearest-neighbour Markov cycle.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cone::GridSpace;
use crate::control::ControlOperator;
use crate::error::{Error, Result};
use crate::generator::{build_upwind_generator, BoundaryCondition, GeneratorModel};
use crate::perturbation::{assemble_perturbed, boundary_control_operator, PerturbedSystem};

/// Default cell count for renewal runs.
pub const RENEWAL_DEFAULT_CELLS: usize = 2000;
/// Truncation length in units of the slowest decay length `1/q_min`.
pub const RENEWAL_DEFAULT_DECAY_LENGTHS: f64 = 20.0;

/// A coefficient profile on `[0, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    /// One value per cell.
    Cells(Vec<f64>),
    /// Piecewise constant: `values[i]` on `[x[i], x[i+1])`, the last value
    /// continuing to `L`. Sampled at cell midpoints.
    Table { x: Vec<f64>, values: Vec<f64> },
}

impl Profile {
    fn validate(&self, name: &str) -> Result<()> {
        let check = |v: &f64| {
            if v.is_finite() && *v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be nonnegative and finite, got {v}")))
            }
        };
        match self {
            Profile::Constant(c) => check(c),
            Profile::Cells(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidArgument(format!("{name} has no cells")));
                }
                v.iter().try_for_each(check)
            }
            Profile::Table { x, values } => {
                if x.is_empty() || x.len() != values.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{name} table needs matching, nonempty x and values"
                    )));
                }
                if x[0] != 0.0 || x.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidArgument(format!(
                        "{name} table abscissae must start at 0 and increase"
                    )));
                }
                values.iter().try_for_each(check)
            }
        }
    }

    fn min(&self) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Cells(v) | Profile::Table { values: v, .. } => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// Cell count implied by a per-cell profile.
    fn cells(&self) -> Option<usize> {
        match self {
            Profile::Cells(v) => Some(v.len()),
            _ => None,
        }
    }

    pub fn sample(&self, space: &GridSpace) -> Result<Vec<f64>> {
        let n = space.cells();
        match self {
            Profile::Constant(c) => Ok(vec![*c; n]),
            Profile::Cells(v) => {
                if v.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: v.len(),
                    });
                }
                Ok(v.clone())
            }
            Profile::Table { x, values } => Ok(space
                .midpoints()
                .into_iter()
                .map(|m| values[x.partition_point(|xi| *xi <= m) - 1])
                .collect()),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Cells(v) | Profile::Table { values: v, .. } => v.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSpec {
    Renewal {
        q: Profile,
        beta: Profile,
        #[serde(default)]
        length: Option<f64>,
        #[serde(default)]
        cells: Option<usize>,
        #[serde(default)]
        note: Option<String>,
    },
    RingTransport {
        a: f64,
        length: f64,
        cells: usize,
        #[serde(default)]
        note: Option<String>,
    },
    MarkovCycle {
        cells: usize,
        #[serde(default)]
        note: Option<String>,
    },
}

impl ScenarioSpec {
    /// Named presets: `renewal` (q ≡ 1, β ≡ 0.5, L = 20, 100 cells),
    /// `renewal_two_cell` (q ≡ 1, β ≡ 0.5, L = 2, 2 cells),
    /// `ring_transport` (a = 2, L = 1, 100 cells) and `markov_cycle` (8 nodes).
    pub fn preset(name: &str) -> Option<ScenarioSpec> {
        let renewal = |length: f64, cells: usize| ScenarioSpec::Renewal {
            q: Profile::Constant(1.0),
            beta: Profile::Constant(0.5),
            length: Some(length),
            cells: Some(cells),
            note: Some(format!("preset {name}")),
        };
        match name {
            "renewal" => Some(renewal(20.0, 100)),
            "renewal_two_cell" => Some(renewal(2.0, 2)),
            "ring_transport" => Some(ScenarioSpec::RingTransport {
                a: 2.0,
                length: 1.0,
                cells: 100,
                note: Some(format!("preset {name}")),
            }),
            "markov_cycle" => Some(ScenarioSpec::MarkovCycle {
                cells: 8,
                note: Some(format!("preset {name}")),
            }),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ScenarioSpec::Renewal { .. } => "renewal",
            ScenarioSpec::RingTransport { .. } => "ring_transport",
            ScenarioSpec::MarkovCycle { .. } => "markov_cycle",
        }
    }

    /// Assembles generator, control operator and perturbed system. Systems
    /// without a boundary perturbation carry `P = 0`.
    pub fn build(&self) -> Result<BuiltScenario> {
        match self {
            ScenarioSpec::Renewal {
                q,
                beta,
                length,
                cells,
                ..
            } => {
                let r = renewal_scenario(q, beta, *length, *cells)?;
                Ok(BuiltScenario {
                    generator: r.generator,
                    control: r.control,
                    system: r.system,
                    sufficient_condition: Some(r.sufficient_condition),
                    inf_q_condition: Some(r.inf_q_condition),
                    estimate_enabled: None,
                })
            }
            ScenarioSpec::RingTransport { a, length, cells, .. } => {
                let ring = ring_transport_scenario(*a, *length, *cells)?;
                let control = ControlOperator::boundary_dirichlet(ring.generator.space());
                let zero = DMatrix::zeros(*cells, *cells);
                Ok(BuiltScenario {
                    system: PerturbedSystem::from_matrix(&ring.generator, zero)?,
                    generator: ring.generator,
                    control,
                    sufficient_condition: None,
                    inf_q_condition: None,
                    estimate_enabled: Some(ring.estimate_enabled),
                })
            }
            ScenarioSpec::MarkovCycle { cells, .. } => {
                let generator = markov_cycle_scenario(*cells)?;
                let mut e0 = nalgebra::DVector::zeros(*cells);
                e0[0] = 1.0;
                let control = ControlOperator::custom(e0)?;
                let zero = DMatrix::zeros(*cells, *cells);
                Ok(BuiltScenario {
                    system: PerturbedSystem::from_matrix(&generator, zero)?,
                    generator,
                    control,
                    sufficient_condition: None,
                    inf_q_condition: None,
                    estimate_enabled: None,
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub generator: GeneratorModel,
    pub control: ControlOperator,
    pub system: PerturbedSystem,
    pub sufficient_condition: Option<bool>,
    pub inf_q_condition: Option<bool>,
    pub estimate_enabled: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct RenewalSystem {
    /// `A`: transport with absorption and zero inflow.
    pub generator: GeneratorModel,
    /// `B = (λ − A)D_λ = (1/h) e₀`.
    pub control: ControlOperator,
    /// `A + P` with `P = BΛ`, `Λf = ∫ β f`.
    pub system: PerturbedSystem,
    /// `‖β‖∞ < ‖q‖∞`.
    pub sufficient_condition: bool,
    /// `‖β‖∞ < inf q`, which does bound the radius below 1 for every profile.
    pub inf_q_condition: bool,
}

/// Renewal equation `∂_t z + ∂_x z = −q z`, `z(t, 0) = ∫ β z + u(t)` on
/// `[0, L]`. `L` defaults to `20/q_min` and the cell count to 2000 (or the
/// length of a per-cell profile).
pub fn renewal_scenario(q: &Profile, beta: &Profile, length: Option<f64>, cells: Option<usize>) -> Result<RenewalSystem> {
    q.validate("q")?;
    beta.validate("beta")?;
    let cells = cells
        .or_else(|| q.cells())
        .or_else(|| beta.cells())
        .unwrap_or(RENEWAL_DEFAULT_CELLS);
    let length = match length {
        Some(l) => l,
        None => {
            let q_min = q.min();
            if !(q_min > 0.0) {
                return Err(Error::InvalidArgument(
                    "a length is required when q vanishes somewhere".into(),
                ));
            }
            RENEWAL_DEFAULT_DECAY_LENGTHS / q_min
        }
    };
    let space = GridSpace::new(length, cells)?;
    let q_cells = q.sample(&space)?;
    let beta_cells = beta.sample(&space)?;
    let generator = build_upwind_generator(Arc::clone(&space), &q_cells, BoundaryCondition::ZeroInflow)?;
    let control = boundary_control_operator(&generator, 0.0)?;
    let system = assemble_perturbed(&generator, &control, &beta_cells)?;
    let beta_sup = beta_cells.iter().copied().fold(0.0, f64::max);
    let q_sup = q_cells.iter().copied().fold(0.0, f64::max);
    let q_inf = q_cells.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RenewalSystem {
        generator,
        control,
        system,
        sufficient_condition: beta_sup < q_sup,
        inf_q_condition: beta_sup < q_inf,
    })
}

/// `β h Σ_j Π_{k≤j} (1 + h q_k)^{−1}` for constant `β`, the small-gain
/// radius of the discrete renewal system.
pub fn renewal_radius_closed_form(beta0: f64, q: &[f64], h: f64) -> f64 {
    let mut d = 1.0;
    let mut sum = 0.0;
    for qk in q {
        d /= 1.0 + h * qk;
        sum += d;
    }
    beta0 * h * sum
}

#[derive(Debug, Clone)]
pub struct RingTransport {
    pub generator: GeneratorModel,
    /// The estimate `‖R(λ,A)f‖ ≥ ‖f‖/λ` is only claimed for `a ≥ 1`.
    pub estimate_enabled: bool,
}

/// Pure transport on `[0, L]` with `f(0) = a f(L)`.
pub fn ring_transport_scenario(a: f64, length: f64, cells: usize) -> Result<RingTransport> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::InvalidArgument(format!("boundary gain must be nonnegative, got {a}")));
    }
    let space = GridSpace::new(length, cells)?;
    let generator = build_upwind_generator(space, &vec![0.0; cells], BoundaryCondition::Proportional(a))?;
    Ok(RingTransport {
        generator,
        estimate_enabled: a >= 1.0,
    })
}

/// Cycle of `n` unit cells in which every node sends rate ½ to each of
/// its two neighbours.
pub fn markov_cycle_scenario(n: usize) -> Result<GeneratorModel> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("a cycle needs at least 2 nodes, got {n}")));
    }
    let space = GridSpace::new(n as f64, n)?;
    let mut q = DMatrix::zeros(n, n);
    for j in 0..n {
        q[(j, j)] -= 1.0;
        q[((j + 1) % n, j)] += 0.5;
        q[((j + n - 1) % n, j)] += 0.5;
    }
    GeneratorModel::from_matrix(space, q)
}
