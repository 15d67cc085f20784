//! Dense linear-algebra kernels: matrix exponential, shifted solves,
//! spectral bounds and a few small helpers shared by the audits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which each Padé degree meets double precision.
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

/// Maximum absolute column sum.
pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Induced operator norm on ℓ¹ with per-entry weights `w`:
/// `max_j Σ_i w_i |M_ij| / w_j`.
pub fn weighted_norm1(m: &DMatrix<f64>, w: &[f64]) -> f64 {
    weighted_column_sums(m, w, true)
        .into_iter()
        .fold(0.0, f64::max)
}

/// `Σ_i w_i M_ij / w_j` for every column (absolute values when `abs`).
pub fn weighted_column_sums(m: &DMatrix<f64>, w: &[f64], abs: bool) -> Vec<f64> {
    m.column_iter()
        .enumerate()
        .map(|(j, c)| {
            let s: f64 = c
                .iter()
                .zip(w)
                .map(|(v, wi)| if abs { wi * v.abs() } else { wi * v })
                .sum();
            s / w[j]
        })
        .collect()
}

/// Weighted ℓ¹ norm of a vector.
pub fn weighted_l1(v: &DVector<f64>, w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(x, wi)| wi * x.abs()).sum()
}

pub fn min_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn is_metzler(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] >= 0.0))
}

/// Lower bandwidth if the matrix is lower triangular.
pub fn lower_bandwidth(m: &DMatrix<f64>) -> Option<usize> {
    let n = m.nrows();
    let mut band = 0;
    for j in 0..n {
        for i in 0..n {
            if m[(i, j)] != 0.0 {
                if j > i {
                    return None;
                }
                band = band.max(i - j);
            }
        }
    }
    Some(band)
}

pub fn is_upper_triangular(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|j| ((j + 1)..n).all(|i| m[(i, j)] == 0.0))
}

/// Matrix exponential by scaling and squaring with diagonal Padé
/// approximants of degree 3 to 13.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = norm1(a);
    let ident = DMatrix::<f64>::identity(n, n);

    for &(m, theta) in &THETA {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(a, coeffs, &ident);
            return pade_solve(&u, &v);
        }
    }

    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-s);
    let (u, v) = pade13(&scaled, &ident);
    let mut r = pade_solve(&u, &v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn pade_low(a: &DMatrix<f64>, b: &[f64], ident: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let a2 = a * a;
    let mut u = ident * b[1];
    let mut v = ident * b[0];
    let mut power = ident.clone();
    let mut k = 2;
    while k < b.len() {
        power = &power * &a2;
        v += &power * b[k];
        u += &power * b[k + 1];
        k += 2;
    }
    (a * u, v)
}

fn pade13(a: &DMatrix<f64>, ident: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &PADE13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + ident * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + ident * b[0];
    (u, v)
}

fn pade_solve(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for the selected scaling")
}

/// Exponential of `dt·A` together with `∫₀^dt e^{sA} b ds`, read off the
/// augmented matrix `[[A, b], [0, 0]]`.
pub fn expm_with_input(a: &DMatrix<f64>, b: &DVector<f64>, dt: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, 1)).copy_from(&(b * dt));
    let e = expm(&aug);
    let step = e.view((0, 0), (n, n)).into_owned();
    let input = e.view((0, n), (n, 1)).column(0).into_owned();
    (step, input)
}

/// Factorised `λI − A`, with a forward-substitution path for lower
/// triangular (banded) generators.
#[derive(Debug, Clone)]
pub enum ShiftedSolver {
    Lower {
        shifted: DMatrix<f64>,
        bandwidth: usize,
    },
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl ShiftedSolver {
    pub fn new(a: &DMatrix<f64>, lambda: f64, singular_tol: f64) -> Result<Self> {
        let n = a.nrows();
        let mut shifted = -a.clone();
        for i in 0..n {
            shifted[(i, i)] += lambda;
        }
        if let Some(bandwidth) = lower_bandwidth(a) {
            if (0..n).any(|i| shifted[(i, i)].abs() <= singular_tol) {
                return Err(Error::Singular { lambda });
            }
            return Ok(ShiftedSolver::Lower { shifted, bandwidth });
        }
        let scale = norm1(&shifted).max(1.0);
        let lu = shifted.lu();
        let u = lu.u();
        if (0..n).any(|i| u[(i, i)].abs() <= singular_tol * scale) {
            return Err(Error::Singular { lambda });
        }
        Ok(ShiftedSolver::Dense(lu))
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            ShiftedSolver::Lower { shifted, bandwidth } => {
                let n = rhs.len();
                let mut x = DVector::zeros(n);
                for i in 0..n {
                    let mut acc = rhs[i];
                    for k in i.saturating_sub(*bandwidth)..i {
                        acc -= shifted[(i, k)] * x[k];
                    }
                    x[i] = acc / shifted[(i, i)];
                }
                x
            }
            ShiftedSolver::Dense(lu) => lu.solve(rhs).expect("factorisation checked nonsingular"),
        }
    }

    /// Full inverse `(λI − A)^{-1}`.
    pub fn inverse(&self, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            out.set_column(j, &self.solve(&e));
        }
        out
    }
}

/// Largest real part over the eigenvalues of a dense matrix.
pub fn dense_spectral_bound(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if lower_bandwidth(a).is_some() || is_upper_triangular(a) {
        return Ok((0..n).map(|i| a[(i, i)]).fold(f64::NEG_INFINITY, f64::max));
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::Eigen(format!("Schur iteration failed for n = {n}")))?;
    let eig = schur.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Spectral bound of a Metzler matrix from power iteration on its
/// (positive) resolvent: the dominant eigenvalue of `R(σ, M)` is
/// `1/(σ − s(M))` for any `σ > s(M)`.
pub fn metzler_spectral_bound(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let n = m.nrows();
    if !is_metzler(m) {
        return Err(Error::InvalidArgument(
            "resolvent power iteration needs a Metzler matrix".into(),
        ));
    }
    // Column Gershgorin bound: s(M) ≤ max_j Σ_i M_ij.
    let upper = (0..n)
        .map(|j| m.column(j).sum())
        .fold(f64::NEG_INFINITY, f64::max);
    let sigma = upper + 1.0;
    let solver = ShiftedSolver::new(m, sigma, 0.0)?;
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let mut history = Vec::new();
    let mut last = f64::NAN;
    for it in 0..max_iter {
        let w = solver.solve(&v);
        let growth = w.iter().map(|x| x.abs()).sum::<f64>();
        if growth == 0.0 {
            return Err(Error::Eigen("resolvent iterate vanished".into()));
        }
        let estimate = sigma - 1.0 / growth;
        v = w / growth;
        history.push(estimate);
        if history.len() > 8 {
            history.remove(0);
        }
        if it > 2 && (estimate - last).abs() <= tol * estimate.abs().max(1.0) {
            return Ok(estimate);
        }
        last = estimate;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        history,
    })
}

/// Ordinary least squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        // Plain Taylor series with squaring, as an independent oracle.
        let n = a.nrows();
        let s = (norm1(a).max(1.0)).log2().ceil() as i32 + 4;
        let scaled = a * 2f64.powi(-s);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn expm_scalar_and_diagonal() {
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert_relative_eq!(expm(&a)[(0, 0)], (-1f64).exp(), max_relative = 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -3.0, 12.0]));
        let e = expm(&d);
        assert_relative_eq!(e[(0, 0)], 0.5f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-3f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(2, 2)], 12f64.exp(), max_relative = 1e-13);
    }

    #[test]
    fn expm_matches_taylor_and_nalgebra_across_norms() {
        let base = DMatrix::from_row_slice(3, 3, &[-2.0, 0.3, 1.0, 1.0, -2.5, 0.2, 0.0, 0.7, -1.0]);
        for scale in [1e-3, 0.1, 0.5, 1.5, 3.0, 10.0, 40.0] {
            let a = &base * scale;
            let ours = expm(&a);
            let taylor = taylor_expm(&a);
            let reference = a.clone().exp();
            for (x, y) in ours.iter().zip(taylor.iter()) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-3), "scale {scale}");
            }
            for (x, y) in ours.iter().zip(reference.iter()) {
                assert!((x - y).abs() <= 1e-11 * y.abs().max(1e-3), "scale {scale}");
            }
        }
    }

    #[test]
    fn lower_triangular_2x2_closed_form() {
        // exp([[−2,0],[1,−2]] t) = e^{−2t} [[1,0],[t,1]]
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 1.0, -2.0]);
        let e = expm(&a);
        let k = (-2f64).exp();
        assert_relative_eq!(e[(0, 0)], k, max_relative = 1e-14);
        assert_relative_eq!(e[(1, 0)], k, max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], k, max_relative = 1e-14);
        assert!(e[(0, 1)].abs() < 1e-300);
    }

    #[test]
    fn augmented_input_integral_matches_closed_form() {
        // ∫₀^dt e^{sA} b ds = A^{-1}(e^{dtA} − I) b for invertible A.
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 1.0, -2.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let (e, f) = expm_with_input(&a, &b, 0.7);
        let expect = a.clone().lu().solve(&((&e - DMatrix::identity(2, 2)) * &b)).unwrap();
        assert_relative_eq!(f, expect, max_relative = 1e-13);
    }

    #[test]
    fn shifted_solver_paths_agree() {
        let a = DMatrix::from_row_slice(3, 3, &[-2.0, 0.0, 0.0, 1.0, -3.0, 0.0, 0.5, 1.0, -1.0]);
        let rhs = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let lower = ShiftedSolver::new(&a, 0.3, 1e-12).unwrap();
        assert!(matches!(lower, ShiftedSolver::Lower { bandwidth: 2, .. }));
        let mut shifted = -a.clone();
        for i in 0..3 {
            shifted[(i, i)] += 0.3;
        }
        let dense = shifted.lu().solve(&rhs).unwrap();
        assert_relative_eq!(lower.solve(&rhs), dense, max_relative = 1e-14);
    }

    #[test]
    fn shifted_solver_detects_singularity() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 1.0, -2.0]);
        assert!(matches!(ShiftedSolver::new(&a, -2.0, 1e-12), Err(Error::Singular { .. })));
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!(matches!(ShiftedSolver::new(&q, 0.0, 1e-12), Err(Error::Singular { .. })));
    }

    #[test]
    fn spectral_bound_routes_agree_on_metzler() {
        let a = DMatrix::from_row_slice(3, 3, &[-3.0, 1.0, 0.5, 0.2, -1.0, 0.0, 1.0, 0.4, -2.0]);
        let dense = dense_spectral_bound(&a).unwrap();
        let perron = metzler_spectral_bound(&a, 1e-13, 10_000).unwrap();
        assert_relative_eq!(dense, perron, epsilon = 1e-9);
    }

    #[test]
    fn least_squares_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| 2.0 - 0.5 * t).collect();
        let (s, c) = linear_fit(&x, &y);
        assert_relative_eq!(s, -0.5, epsilon = 1e-14);
        assert_relative_eq!(c, 2.0, epsilon = 1e-14);
    }
}
