//! Schrödinger operators `P(h) = -h^2 Laplacian + V` on the flat torus
//! `T^n = (R / 2 pi Z)^n`, `n` in {1, 2}, in a truncated Fourier basis,
//! together with the exact spectral-theorem functional calculus.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::symbolfam::CutoffFamily;
use crate::weylquant::{Basis, CMatrix, OperatorMatrix};

/// Default containment margin in `h^2 K^2 >= E_max + ||V||_inf + margin`.
pub const DEFAULT_CONTAINMENT_MARGIN: f64 = 5.0;

/// Relative tolerance for grouping eigenvalues into clusters.
pub const CLUSTER_TOLERANCE: f64 = 1e-9;

const HERMITIAN_COEFF_TOL: f64 = 1e-14;

/// Real potential given by finitely many Fourier coefficients,
/// `V(x) = sum_k Vhat(k) e^{i k x}`. For `n = 1` the second index is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPotential {
    dim: usize,
    coeffs: BTreeMap<(i64, i64), Complex64>,
}

impl TorusPotential {
    pub fn new(dim: usize, coeffs: BTreeMap<(i64, i64), Complex64>) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::Domain(format!("torus dimension {dim} not supported")));
        }
        let mut clean = BTreeMap::new();
        for (&(k1, k2), &v) in &coeffs {
            if dim == 1 && k2 != 0 {
                return Err(Error::Domain(format!("mode ({k1}, {k2}) on a one-dimensional torus")));
            }
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::Domain(format!("non-finite coefficient at ({k1}, {k2})")));
            }
            if v != Complex64::new(0.0, 0.0) {
                clean.insert((k1, k2), v);
            }
        }
        for (&(k1, k2), &v) in &clean {
            let partner = clean.get(&(-k1, -k2)).copied().unwrap_or_default();
            if (partner - v.conj()).norm() > HERMITIAN_COEFF_TOL * (1.0 + v.norm()) {
                return Err(Error::Domain(format!(
                    "coefficients at ({k1}, {k2}) and ({}, {}) are not conjugate; V would not be real",
                    -k1, -k2
                )));
            }
        }
        Ok(Self { dim, coeffs: clean })
    }

    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(dim, BTreeMap::new())
    }

    /// `amplitude * cos x_1`.
    pub fn cosine(dim: usize, amplitude: f64) -> Result<Self> {
        let half = Complex64::new(amplitude / 2.0, 0.0);
        Self::new(dim, BTreeMap::from([((1, 0), half), ((-1, 0), half)]))
    }

    /// Named presets: `zero`, `half_cos` (0.5 cos x), `two_cos` (2 cos x).
    pub fn preset(name: &str, dim: usize) -> Result<Self> {
        match name {
            "zero" | "free" => Self::zero(dim),
            "half_cos" => Self::cosine(dim, 0.5),
            "two_cos" => Self::cosine(dim, 2.0),
            other => Err(Error::Configuration(format!("unknown potential preset '{other}'"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coefficient(&self, k: (i64, i64)) -> Complex64 {
        self.coeffs.get(&k).copied().unwrap_or_default()
    }

    pub fn coefficients(&self) -> &BTreeMap<(i64, i64), Complex64> {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Largest `|k|_inf` with a nonzero coefficient.
    pub fn bandwidth(&self) -> i64 {
        self.coeffs.keys().map(|(a, b)| a.abs().max(b.abs())).max().unwrap_or(0)
    }

    /// `V(x)`; `x` has `dim` entries.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let x2 = if self.dim == 2 { x[1] } else { 0.0 };
        self.coeffs
            .iter()
            .map(|(&(k1, k2), v)| (v * Complex64::from_polar(1.0, k1 as f64 * x[0] + k2 as f64 * x2)).re)
            .sum()
    }

    /// `d V / d x_i`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let x2 = if self.dim == 2 { x[1] } else { 0.0 };
        (0..self.dim)
            .map(|i| {
                self.coeffs
                    .iter()
                    .map(|(&(k1, k2), v)| {
                        let k = if i == 0 { k1 } else { k2 } as f64;
                        (v * Complex64::new(0.0, k) * Complex64::from_polar(1.0, k1 as f64 * x[0] + k2 as f64 * x2)).re
                    })
                    .sum()
            })
            .collect()
    }

    fn sample_extremes(&self) -> (f64, f64) {
        if self.is_zero() {
            return (0.0, 0.0);
        }
        let m = if self.dim == 1 { 4096 } else { 512 };
        let dx = 2.0 * PI / m as f64;
        let values: Vec<f64> = if self.dim == 1 {
            (0..m).map(|i| self.eval(&[i as f64 * dx])).collect()
        } else {
            (0..m * m)
                .into_par_iter()
                .map(|i| self.eval(&[(i / m) as f64 * dx, (i % m) as f64 * dx]))
                .collect()
        };
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// `(min V, max V)` by dense sampling.
    pub fn range(&self) -> (f64, f64) {
        self.sample_extremes()
    }

    /// `||V||_inf` by dense sampling.
    pub fn sup_norm(&self) -> f64 {
        let (lo, hi) = self.sample_extremes();
        lo.abs().max(hi.abs())
    }
}

/// `p(x, xi) = |xi|^2 + V(x)`.
pub fn hamiltonian_eval(v: &TorusPotential, x: &[f64], xi: &[f64]) -> f64 {
    xi.iter().map(|e| e * e).sum::<f64>() + v.eval(x)
}

/// Truncated matrix of `P(h)` in the basis `e^{i k x}`, `|k|_inf <= K`.
#[derive(Debug, Clone)]
pub struct TorusOperator {
    pub h: f64,
    pub modes: usize,
    pub dim: usize,
    pub matrix: OperatorMatrix,
}

impl TorusOperator {
    /// Mode multi-index of basis position `idx` (lexicographic for n = 2).
    pub fn mode(&self, idx: usize) -> (i64, i64) {
        mode_of(self.dim, self.modes, idx)
    }

    pub fn size(&self) -> usize {
        self.matrix.dim()
    }
}

fn mode_of(dim: usize, modes: usize, idx: usize) -> (i64, i64) {
    let k = modes as i64;
    if dim == 1 {
        (idx as i64 - k, 0)
    } else {
        let side = 2 * modes + 1;
        ((idx / side) as i64 - k, (idx % side) as i64 - k)
    }
}

/// Mode cutoff `K = ceil(sqrt(E_max + ||V||_inf + margin) / h)`.
pub fn k_rule(v: &TorusPotential, h: f64, e_max: f64, margin: f64) -> usize {
    ((e_max + v.sup_norm() + margin).max(0.0).sqrt() / h).ceil() as usize
}

/// Checks `h^2 K^2 >= E_max + ||V||_inf + margin`.
pub fn check_containment(v: &TorusPotential, h: f64, modes: usize, e_max: f64, margin: f64) -> Result<()> {
    let top = (h * modes as f64).powi(2);
    let need = e_max + v.sup_norm() + margin;
    if top < need {
        return Err(Error::Truncation(format!(
            "h^2 K^2 = {top:.6} below E_max + ||V|| + margin = {need:.6} (h = {h}, K = {modes}); \
             eigenvalues near the window would be corrupted"
        )));
    }
    Ok(())
}

/// Entries `A[k', k] = h^2 |k|^2 delta_{k'k} + Vhat(k' - k)`.
pub fn assemble_torus_operator(v: &TorusPotential, h: f64, modes: usize) -> Result<TorusOperator> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("h = {h} must be positive")));
    }
    if modes == 0 {
        return Err(Error::Domain("mode cutoff must be at least 1".into()));
    }
    let dim = v.dim();
    let size = (2 * modes + 1).pow(dim as u32);
    let mut a = CMatrix::zeros(size, size);
    for col in 0..size {
        let k = mode_of(dim, modes, col);
        a[(col, col)] += Complex64::new(h * h * ((k.0 * k.0 + k.1 * k.1) as f64), 0.0);
    }
    for (&(q1, q2), &c) in v.coefficients() {
        for col in 0..size {
            let k = mode_of(dim, modes, col);
            let (r1, r2) = (k.0 + q1, k.1 + q2);
            let m = modes as i64;
            if r1.abs() > m || r2.abs() > m {
                continue;
            }
            let row = if dim == 1 {
                (r1 + m) as usize
            } else {
                ((r1 + m) as usize) * (2 * modes + 1) + (r2 + m) as usize
            };
            a[(row, col)] += c;
        }
    }
    Ok(TorusOperator {
        h,
        modes,
        dim,
        matrix: OperatorMatrix::new(a, Basis::FourierModes, h),
    })
}

/// Assembles with mode cutoff from [`k_rule`].
pub fn assemble_contained(v: &TorusPotential, h: f64, e_max: f64, margin: f64) -> Result<TorusOperator> {
    let modes = k_rule(v, h, e_max, margin);
    check_containment(v, h, modes, e_max, margin)?;
    assemble_torus_operator(v, h, modes)
}

/// Ascending eigenvalues and orthonormal eigenvectors (as columns).
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
    pub h: f64,
    /// `||A||_2` of the decomposed matrix.
    pub norm: f64,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Index ranges of eigenvalue clusters, gaps larger than
    /// `CLUSTER_TOLERANCE * ||A||_2` separating clusters.
    pub fn clusters(&self) -> Vec<std::ops::Range<usize>> {
        let tol = CLUSTER_TOLERANCE * self.norm.max(f64::MIN_POSITIVE);
        let mut out = Vec::new();
        let mut start = 0;
        for j in 1..=self.eigenvalues.len() {
            if j == self.eigenvalues.len() || self.eigenvalues[j] - self.eigenvalues[j - 1] > tol {
                out.push(start..j);
                start = j;
            }
        }
        out
    }

    /// Mean eigenvalue of each cluster, with its multiplicity.
    pub fn cluster_values(&self) -> Vec<(f64, usize)> {
        self.clusters()
            .into_iter()
            .map(|r| {
                let mean = self.eigenvalues[r.clone()].iter().sum::<f64>() / r.len() as f64;
                (mean, r.len())
            })
            .collect()
    }

    /// `sum_j f(E_j) Pi_j`; within a cluster all members get `f` of the
    /// cluster mean, so the result does not depend on the basis chosen
    /// inside degenerate eigenspaces.
    pub fn apply<F: Fn(f64) -> f64>(&self, f: F) -> OperatorMatrix {
        let weights = self.weights(f);
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, w) in weights.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*w);
        }
        let entries = &scaled * u.adjoint();
        OperatorMatrix::new(entries, Basis::FourierModes, self.h)
    }

    /// `f` of the cluster mean for every eigenvalue.
    pub fn weights<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        for r in self.clusters() {
            let mean = self.eigenvalues[r.clone()].iter().sum::<f64>() / r.len() as f64;
            let value = f(mean);
            for slot in &mut w[r] {
                *slot = value;
            }
        }
        w
    }
}

/// Full Hermitian eigendecomposition with residual and orthogonality checks.
pub fn eigensolve(op: &OperatorMatrix) -> Result<SpectralDecomposition> {
    let a = &op.entries;
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Domain("matrix is not square".into()));
    }
    if !op.is_hermitian() {
        return Err(Error::Domain(format!(
            "matrix is not Hermitian (defect {:.3e})",
            crate::weylquant::hermitian_defect(a)
        )));
    }
    if n == 0 {
        return Ok(SpectralDecomposition {
            eigenvalues: vec![],
            eigenvectors: CMatrix::zeros(0, 0),
            h: op.h,
            norm: 0.0,
        });
    }
    let real = a.iter().all(|v| v.im == 0.0);
    let (values, vectors) = if real {
        let ar = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)].re + a[(j, i)].re));
        let eig = SymmetricEigen::try_new(ar, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical(format!("symmetric eigensolver did not converge (n = {n})")))?;
        let vecs = eig.eigenvectors.map(|v| Complex64::new(v, 0.0));
        (eig.eigenvalues.iter().cloned().collect::<Vec<f64>>(), vecs)
    } else {
        let ah = (a + a.adjoint()).scale(0.5);
        let eig = SymmetricEigen::try_new(ah, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical(format!("Hermitian eigensolver did not converge (n = {n})")))?;
        (eig.eigenvalues.iter().cloned().collect::<Vec<f64>>(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let eigenvectors = CMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    let norm = eigenvalues.iter().map(|e| e.abs()).fold(0.0, f64::max);

    let scale = norm.max(f64::MIN_POSITIVE);
    let av = a * &eigenvectors;
    let worst = (0..n)
        .into_par_iter()
        .map(|j| {
            let col = av.column(j) - eigenvectors.column(j) * Complex64::new(eigenvalues[j], 0.0);
            col.norm()
        })
        .reduce(|| 0.0, f64::max);
    if worst > 1e-8 * scale {
        return Err(Error::Numerical(format!(
            "eigenpair residual {worst:.3e} exceeds 1e-8 ||A|| = {:.3e} (n = {n})",
            1e-8 * scale
        )));
    }
    let gram = eigenvectors.adjoint() * &eigenvectors;
    let defect = (&gram - CMatrix::identity(n, n)).camax();
    if defect > 1e-8 {
        return Err(Error::Numerical(format!("eigenvectors not orthonormal (defect {defect:.3e})")));
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
        h: op.h,
        norm,
    })
}

/// `rho_h(P(h)) = sum_j rho_h(E_j) Pi_j`.
pub fn spectral_funcalc(dec: &SpectralDecomposition, fam: &CutoffFamily, h: f64) -> OperatorMatrix {
    dec.apply(|e| fam.value(e, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolfam::{make_window_family, BumpFunction};

    #[test]
    fn potential_must_be_real() {
        let bad = BTreeMap::from([((1, 0), Complex64::new(1.0, 0.0))]);
        assert!(matches!(TorusPotential::new(1, bad), Err(Error::Domain(_))));
        let v = TorusPotential::cosine(1, 2.0).unwrap();
        assert!((v.eval(&[0.0]) - 2.0).abs() < 1e-15);
        assert!((v.eval(&[PI]) + 2.0).abs() < 1e-15);
        assert!((v.sup_norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_values() {
        let zero = TorusPotential::zero(1).unwrap();
        assert_eq!(hamiltonian_eval(&zero, &[0.3], &[0.0]), 0.0);
        let two = TorusPotential::cosine(1, 2.0).unwrap();
        assert!((hamiltonian_eval(&two, &[0.0], &[1.0]) - 3.0).abs() < 1e-15);
        let half = TorusPotential::cosine(1, 0.5).unwrap();
        assert!((hamiltonian_eval(&half, &[PI], &[2f64.sqrt()]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn free_torus_one_dimension() {
        let op = assemble_torus_operator(&TorusPotential::zero(1).unwrap(), 0.1, 10).unwrap();
        let dec = eigensolve(&op.matrix).unwrap();
        let mut expect: Vec<f64> = (-10i64..=10).map(|k| 0.01 * (k * k) as f64).collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in dec.eigenvalues.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let mult: Vec<usize> = dec.cluster_values().iter().map(|c| c.1).collect();
        assert_eq!(mult[0], 1);
        assert!(mult[1..].iter().all(|&m| m == 2));
    }

    #[test]
    fn free_torus_two_dimensions() {
        let op = assemble_torus_operator(&TorusPotential::zero(2).unwrap(), 1.0, 3).unwrap();
        let dec = eigensolve(&op.matrix).unwrap();
        let cl = dec.cluster_values();
        let head: Vec<(f64, usize)> = cl.iter().take(5).cloned().collect();
        assert_eq!(head, vec![(0.0, 1), (1.0, 4), (2.0, 4), (4.0, 4), (5.0, 8)]);
    }

    #[test]
    fn mathieu_ground_state_refines() {
        let v = TorusPotential::cosine(1, 2.0).unwrap();
        let ground = |k| {
            let op = assemble_torus_operator(&v, 1.0, k).unwrap();
            eigensolve(&op.matrix).unwrap().eigenvalues[0]
        };
        let (e16, e32, e64) = (ground(16), ground(32), ground(64));
        assert!((e32 - e16).abs() < 1e-10 && (e64 - e32).abs() < 1e-10);
        // below the free value 0 by second-order perturbation: -2 * |1|^2 / 1
        assert!(e64 < 0.0 && e64 > -2.0);
    }

    #[test]
    fn window_eigenvalues_stable_under_doubling() {
        let v = TorusPotential::cosine(1, 0.5).unwrap();
        for &h in &[0.2, 0.05] {
            let k = k_rule(&v, h, 2.0, DEFAULT_CONTAINMENT_MARGIN);
            let e1 = eigensolve(&assemble_torus_operator(&v, h, k).unwrap().matrix).unwrap();
            let e2 = eigensolve(&assemble_torus_operator(&v, h, 2 * k).unwrap().matrix).unwrap();
            for (a, b) in e1.eigenvalues.iter().zip(&e2.eigenvalues).filter(|(a, _)| **a < 2.0) {
                assert!((a - b).abs() < 1e-10, "h = {h}: {a} {b}");
            }
        }
    }

    #[test]
    fn containment_is_enforced() {
        let v = TorusPotential::cosine(1, 0.5).unwrap();
        assert!(matches!(
            check_containment(&v, 0.1, 5, 1.0, DEFAULT_CONTAINMENT_MARGIN),
            Err(Error::Truncation(_))
        ));
        let k = k_rule(&v, 0.1, 1.0, DEFAULT_CONTAINMENT_MARGIN);
        assert!(check_containment(&v, 0.1, k, 1.0, DEFAULT_CONTAINMENT_MARGIN).is_ok());
    }

    #[test]
    fn diagonal_input_is_sorted() {
        let a = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(3.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(2.0, 0.0),
        ]));
        let dec = eigensolve(&OperatorMatrix::new(a, Basis::PositionGrid, 1.0)).unwrap();
        assert_eq!(dec.eigenvalues, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn funcalc_identity_zero_and_trace() {
        let v = TorusPotential::cosine(1, 2.0).unwrap();
        let op = assemble_torus_operator(&v, 0.5, 12).unwrap();
        let dec = eigensolve(&op.matrix).unwrap();
        let n = dec.len();
        let lo = dec.eigenvalues[0];
        let hi = dec.eigenvalues[n - 1];
        let wide = BumpFunction::plateau((lo - 2.0, hi + 2.0), (lo - 1.0, hi + 1.0)).unwrap();
        let fam = make_window_family(wide, 0.0, 0.0, 1.0).unwrap();
        let id = spectral_funcalc(&dec, &fam, 0.5);
        assert!((&id.entries - CMatrix::identity(n, n)).camax() < 1e-12);

        let far = make_window_family(BumpFunction::standard(), hi + 10.0, 0.0, 1.0).unwrap();
        assert!(spectral_funcalc(&dec, &far, 0.5).entries.camax() < 1e-300);

        let fam = make_window_family(BumpFunction::standard(), 1.0, 0.0, 1.0).unwrap();
        let f = spectral_funcalc(&dec, &fam, 0.5);
        let sum: f64 = dec.eigenvalues.iter().map(|&e| fam.value(e, 0.5)).sum();
        assert!((f.trace().re - sum).abs() < 1e-10);
        assert!(f.is_hermitian());
    }
}
