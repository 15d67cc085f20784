//! Matrix realisations of transport generators and the resolvent audits.
//!
//! The upwind build discretises `A_m f = −f' − q f` on `[0, L]`: cell `j`
//! receives `(f_{j−1} − f_j)/h − q_j f_j`, where `f_{−1}` is the ghost
//! boundary value `Γf`. The ghost value enters row 0 with coefficient
//! `1/h`; the boundary condition decides what the ghost value is.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cone::{GridSpace, GridVector};
use crate::error::{Error, Result};
use crate::linalg::{self, ShiftedSolver};
use crate::parallel::Execution;
use crate::sampling;

/// Dense eigensolves are used up to this size.
pub const DENSE_EIGEN_LIMIT: usize = 2000;
/// Singular-system threshold for shifted solves.
pub const SINGULAR_TOL: f64 = 1e-12;
/// Entries of a resolvent at or above `-RESOLVENT_POSITIVITY_TOL` count as nonnegative.
pub const RESOLVENT_POSITIVITY_TOL: f64 = 1e-12;

/// What the ghost value `f(0)` is tied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// `f(0) = 0`: the generator with domain `ker Γ`.
    ZeroInflow,
    /// `f(0) = a f(L)`.
    Proportional(f64),
    /// `f(0) = ∫ β f`, one `β_j` per cell.
    Nonlocal(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    space: Arc<GridSpace>,
    matrix: DMatrix<f64>,
    metzler: bool,
    absorption: Vec<f64>,
    boundary: Option<BoundaryCondition>,
}

/// Spectral quantities of a generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub spectral_bound: f64,
    pub growth_bound_estimate: f64,
    /// Smallest λ from which the resolvent was found positive (`None` if
    /// no tested λ qualified).
    pub resolvent_positive_from: Option<f64>,
}

/// First-order upwind generator with absorption `q` and the given boundary rule.
pub fn build_upwind_generator(
    space: Arc<GridSpace>,
    q: &[f64],
    boundary: BoundaryCondition,
) -> Result<GeneratorModel> {
    let n = space.cells();
    if q.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: q.len(),
        });
    }
    if let Some(bad) = q.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "absorption must be nonnegative, got {bad}"
        )));
    }
    let h = space.spacing();
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(j, j)] = -1.0 / h - q[j];
        if j > 0 {
            a[(j, j - 1)] = 1.0 / h;
        }
    }
    match &boundary {
        BoundaryCondition::ZeroInflow => {}
        BoundaryCondition::Proportional(factor) => {
            if !(factor.is_finite() && *factor >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "boundary factor must be nonnegative, got {factor}"
                )));
            }
            a[(0, n - 1)] += factor / h;
        }
        BoundaryCondition::Nonlocal(beta) => {
            if beta.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: beta.len(),
                });
            }
            if let Some(bad) = beta.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "birth profile must be nonnegative, got {bad}"
                )));
            }
            // ghost value h·Σ β_j f_j enters with weight 1/h
            for (j, b) in beta.iter().enumerate() {
                a[(0, j)] += b;
            }
        }
    }
    Ok(GeneratorModel {
        metzler: linalg::is_metzler(&a),
        space,
        matrix: a,
        absorption: q.to_vec(),
        boundary: Some(boundary),
    })
}

impl GeneratorModel {
    /// Wraps an explicit matrix (no boundary metadata).
    pub fn from_matrix(space: Arc<GridSpace>, matrix: DMatrix<f64>) -> Result<Self> {
        let n = space.cells();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("generator has non-finite entries".into()));
        }
        Ok(GeneratorModel {
            metzler: linalg::is_metzler(&matrix),
            space,
            matrix,
            absorption: vec![0.0; n],
            boundary: None,
        })
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_metzler(&self) -> bool {
        self.metzler
    }

    pub fn absorption(&self) -> &[f64] {
        &self.absorption
    }

    pub fn boundary(&self) -> Option<&BoundaryCondition> {
        self.boundary.as_ref()
    }

    /// Coefficient with which the boundary value enters cell 0.
    pub fn inflow_coefficient(&self) -> f64 {
        1.0 / self.space.spacing()
    }

    pub(crate) fn with_matrix(&self, matrix: DMatrix<f64>) -> GeneratorModel {
        GeneratorModel {
            metzler: linalg::is_metzler(&matrix),
            space: Arc::clone(&self.space),
            matrix,
            absorption: self.absorption.clone(),
            boundary: None,
        }
    }

    pub fn solver(&self, lambda: f64) -> Result<ShiftedSolver> {
        ShiftedSolver::new(&self.matrix, lambda, SINGULAR_TOL)
    }

    /// `g = R(λ, A) f`, i.e. `(λI − A) g = f`.
    pub fn resolvent_apply(&self, lambda: f64, f: &GridVector) -> Result<GridVector> {
        self.check_dim(f.len())?;
        let g = self.solver(lambda)?.solve(f.values());
        Ok(GridVector::from_raw(Arc::clone(&self.space), g))
    }

    pub fn resolvent_matrix(&self, lambda: f64) -> Result<DMatrix<f64>> {
        Ok(self.solver(lambda)?.inverse(self.dim()))
    }

    /// `s(A)`, the largest real part of the spectrum.
    pub fn spectral_bound(&self) -> Result<f64> {
        if self.dim() <= DENSE_EIGEN_LIMIT {
            linalg::dense_spectral_bound(&self.matrix)
        } else {
            linalg::metzler_spectral_bound(&self.matrix, 1e-12, 100_000)
        }
    }

    /// `λ₀ = max(s(A), 0) + 1`.
    pub fn default_lambda0(&self) -> Result<f64> {
        Ok(self.spectral_bound()?.max(0.0) + 1.0)
    }

    /// Whether `R(λ, A) ≥ −1e−12` entrywise, for each λ.
    pub fn check_resolvent_positive(&self, lambdas: &[f64], exec: Execution) -> Result<Vec<bool>> {
        exec.map(lambdas, |&l| {
            let r = self.resolvent_matrix(l)?;
            Ok(linalg::min_entry(&r) >= -RESOLVENT_POSITIVITY_TOL)
        })
        .into_iter()
        .collect()
    }

    /// Largest `c` with `‖R(λ₀,A)x‖ ≥ c‖x‖` on the positive cone: the
    /// minimum weighted column sum of the (positive) resolvent.
    pub fn inverse_estimate_constant(&self, lambda0: f64) -> Result<f64> {
        let r = self.resolvent_matrix(lambda0)?;
        let min = linalg::min_entry(&r);
        if min < -RESOLVENT_POSITIVITY_TOL {
            return Err(Error::NotPositive {
                lambda: lambda0,
                entry: min,
            });
        }
        Ok(linalg::weighted_column_sums(&r, self.space.weights(), false)
            .into_iter()
            .fold(f64::INFINITY, f64::min))
    }

    /// Minimum of `‖R(λ₀,A)x‖ / ‖x‖` over `samples` random cone vectors.
    pub fn inverse_estimate_sampled(
        &self,
        lambda0: f64,
        samples: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<f64> {
        let r = self.resolvent_matrix(lambda0)?;
        let w = self.space.weights();
        let n = self.dim();
        let chunks = 64.min(samples.max(1));
        let per_chunk = samples.div_ceil(chunks);
        let mins = exec.map_range(chunks, |c| {
            let mut rng = sampling::rng(seed, c as u64);
            let todo = per_chunk.min(samples.saturating_sub(c * per_chunk));
            let mut best = f64::INFINITY;
            for _ in 0..todo {
                let x = DVector::from_vec(sampling::cone_values(&mut rng, n));
                let norm = linalg::weighted_l1(&x, w);
                if norm == 0.0 {
                    continue;
                }
                best = best.min(linalg::weighted_l1(&(&r * &x), w) / norm);
            }
            best
        });
        Ok(mins.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// Spectral bound, tail-slope growth estimate and resolvent positivity
    /// threshold.
    pub fn spectral_report(&self, horizon: f64) -> Result<SpectralReport> {
        let s = self.spectral_bound()?;
        let growth = crate::semigroup::growth_bound_estimate(self, horizon, 200)?;
        let resolvent_positive_from = if self.metzler {
            Some(s)
        } else {
            let scale = s.abs().max(1.0);
            let grid: Vec<f64> = [1e-2, 1e-1, 1.0, 10.0, 100.0]
                .iter()
                .map(|d| s + d * scale)
                .collect();
            let ok = self.check_resolvent_positive(&grid, Execution::Sequential)?;
            // smallest grid point from which every larger one is positive
            let mut from = None;
            for (l, pos) in grid.iter().zip(&ok).rev() {
                if *pos {
                    from = Some(*l);
                } else {
                    break;
                }
            }
            from
        };
        Ok(SpectralReport {
            spectral_bound: s,
            growth_bound_estimate: growth,
            resolvent_positive_from,
        })
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: n,
            });
        }
        Ok(())
    }
}
