//! Matrix representations of Weyl quantizations on a truncated line and of
//! Fourier quantizations on flat tori.
//!
//! Line discretization: `x_i = -L + i dx`, `dx = 2L/N`. The dual variable is
//! `eta_m = h k_m` with wavenumbers `k_m = 2 pi m / (2L)`, `m = -N/2..N/2`.
//! The Weyl kernel `(2 pi h)^-1 int e^{i(x-y)eta/h} s((x+y)/2, eta) d eta`
//! is evaluated with the trapezoid rule on that dual grid, which gives
//!
//! `A[i][j] = (1/N) sum_m e^{2 pi i (i-j) m / N} s((x_i + x_j)/2, eta_m)`.
//!
//! Midpoints live on the half grid `y_p = -L + p dx/2`, so a symbol is
//! sampled on `2N x N` points. One inverse FFT per midpoint index `p = i + j`
//! yields a whole anti-diagonal of the matrix.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fit::{fit_loglog, RemainderFit};
use crate::symbolfam::OrderFunction;

pub type CMatrix = DMatrix<Complex64>;

/// Relative size of edge samples above which a compactly supported symbol
/// is considered truncated by the phase-space box.
pub const EDGE_TOLERANCE: f64 = 1e-10;

/// Uniform grid on `[-L, L)` together with its dual wavenumber grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    half_width: f64,
    points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_width: 8.0,
            points: 1024,
        }
    }
}

impl GridSpec {
    pub fn new(half_width: f64, points: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Domain(format!("half width {half_width} must be positive")));
        }
        if points < 4 || !points.is_power_of_two() {
            return Err(Error::Domain(format!("point count {points} must be a power of two >= 4")));
        }
        Ok(Self { half_width, points })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx()
    }

    /// Half-grid point `y_p = -L + p dx / 2`, `p = 0..2N`.
    pub fn midpoint(&self, p: usize) -> f64 {
        -self.half_width + 0.5 * p as f64 * self.dx()
    }

    /// Wavenumber of centered dual index `mc = 0..N` (`m = mc - N/2`).
    pub fn wavenumber(&self, mc: usize) -> f64 {
        let m = mc as f64 - (self.points / 2) as f64;
        PI * m / self.half_width
    }

    /// Wavenumber cutoff `Xi = pi N / (2L)`.
    pub fn frequency_cutoff(&self) -> f64 {
        PI * self.points as f64 / (2.0 * self.half_width)
    }

    /// Spacing of the dual variable `eta` at semiclassical parameter `h`.
    pub fn deta(&self, h: f64) -> f64 {
        h * PI / self.half_width
    }

    /// Largest `|eta|` represented at `h`.
    pub fn eta_extent(&self, h: f64) -> f64 {
        h * self.frequency_cutoff()
    }

    /// Index range of the inner `fraction` of the grid (e.g. 0.5 for the
    /// central half).
    pub fn interior(&self, fraction: f64) -> std::ops::Range<usize> {
        let n = self.points;
        let keep = ((n as f64 * fraction).round() as usize).clamp(1, n);
        let start = (n - keep) / 2;
        start..start + keep
    }

    /// Checks that a symbol supported in `|eta| <= eta_support` fits the
    /// dual box at `h`.
    pub fn check_resolution(&self, h: f64, eta_support: f64) -> Result<()> {
        if eta_support >= self.eta_extent(h) {
            return Err(Error::Resolution(format!(
                "eta support {eta_support} exceeds dual box h*Xi = {} at h = {h}",
                self.eta_extent(h)
            )));
        }
        Ok(())
    }
}

/// Claimed symbol class `S^k_delta(m)`; informational.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolClass {
    pub delta: f64,
    pub k: f64,
    pub order: OrderFunction,
}

impl Default for SymbolClass {
    fn default() -> Self {
        Self {
            delta: 0.0,
            k: 0.0,
            order: OrderFunction::One,
        }
    }
}

/// Phase-space symbol sampled on the half grid in `y` and the dual grid in
/// `eta`. Values are stored row-major by `(p, mc)`.
#[derive(Debug, Clone)]
pub struct SymbolOnGrid {
    grid: GridSpec,
    h: f64,
    values: Vec<Complex64>,
    compact: bool,
    pub class: SymbolClass,
}

impl SymbolOnGrid {
    /// Samples `s(y, eta)`. No support check is attached, which suits
    /// polynomial multipliers and other symbols that are not compactly
    /// supported.
    pub fn sample<F>(grid: GridSpec, h: f64, s: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> Complex64 + Sync,
    {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::Domain(format!("h = {h} must lie in (0, 1]")));
        }
        let n = grid.points();
        let values: Vec<Complex64> = (0..2 * n)
            .into_par_iter()
            .flat_map_iter(|p| {
                let y = grid.midpoint(p);
                let s = &s;
                (0..n).map(move |mc| s(y, h * grid.wavenumber(mc)))
            })
            .collect();
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Domain("symbol has non-finite samples".into()));
        }
        Ok(Self {
            grid,
            h,
            values,
            compact: false,
            class: SymbolClass::default(),
        })
    }

    /// Samples a real symbol.
    pub fn sample_real<F>(grid: GridSpec, h: f64, s: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        Self::sample(grid, h, |y, eta| Complex64::new(s(y, eta), 0.0))
    }

    /// Samples a symbol that is claimed to be compactly supported inside
    /// the phase-space box; quantization then verifies that the box edges
    /// carry no mass.
    pub fn sample_compact<F>(grid: GridSpec, h: f64, s: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        let mut out = Self::sample_real(grid, h, s)?;
        out.compact = true;
        Ok(out)
    }

    /// Builds a symbol from precomputed samples (layout `(p, mc)`).
    pub fn from_values(grid: GridSpec, h: f64, values: Vec<Complex64>, compact: bool) -> Result<Self> {
        if values.len() != 2 * grid.points() * grid.points() {
            return Err(Error::Domain(format!(
                "expected {} samples, got {}",
                2 * grid.points() * grid.points(),
                values.len()
            )));
        }
        Ok(Self {
            grid,
            h,
            values,
            compact,
            class: SymbolClass::default(),
        })
    }

    pub fn with_class(mut self, class: SymbolClass) -> Self {
        self.class = class;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn is_compact(&self) -> bool {
        self.compact
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn value(&self, p: usize, mc: usize) -> Complex64 {
        self.values[p * self.grid.points() + mc]
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    /// Largest modulus on the boundary of the sampled box relative to the
    /// largest modulus overall.
    pub fn edge_fraction(&self) -> f64 {
        let n = self.grid.points();
        let max = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if max == 0.0 {
            return 0.0;
        }
        let mut edge = 0.0f64;
        for p in 0..2 * n {
            edge = edge.max(self.value(p, 0).norm()).max(self.value(p, n - 1).norm());
        }
        for mc in 0..n {
            edge = edge.max(self.value(0, mc).norm()).max(self.value(2 * n - 1, mc).norm());
        }
        edge / max
    }

    /// Pointwise combination of two symbols on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.grid != other.grid || self.h != other.h {
            return Err(Error::Domain("symbols live on different grids".into()));
        }
        Ok(Self {
            grid: self.grid,
            h: self.h,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
            compact: self.compact && other.compact,
            class: self.class,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    PositionGrid,
    FourierModes,
    /// Plain coordinates with no geometric meaning.
    Abstract,
}

/// `||a - b||_F / ||b||_F`, or `||a||_F` when `b` vanishes.
pub fn relative_frobenius(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Dense matrix representing an operator in a finite basis.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub entries: CMatrix,
    pub basis: Basis,
    pub h: f64,
    hermitian: bool,
}

impl OperatorMatrix {
    /// Wraps a matrix; the Hermitian flag is set only if the matrix passes
    /// the Hermiticity check.
    pub fn new(entries: CMatrix, basis: Basis, h: f64) -> Self {
        let hermitian = hermitian_defect(&entries) <= 1e-10;
        Self {
            entries,
            basis,
            h,
            hermitian,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    /// Principal submatrix on the index range.
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Self {
        let len = range.len();
        let sub = self.entries.view((range.start, range.start), (len, len)).into_owned();
        Self::new(sub, self.basis, self.h)
    }
}

/// `||A - A*||_F / ||A||_F` (0 for the zero matrix).
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.adjoint()).norm() / norm
}

/// Weyl quantization of a sampled symbol on the line grid.
pub fn weyl_quantize_line(s: &SymbolOnGrid, grid: &GridSpec, h: f64) -> Result<OperatorMatrix> {
    if s.grid() != grid {
        return Err(Error::Domain("symbol was sampled on a different grid".into()));
    }
    if (s.h() - h).abs() > 1e-15 * h {
        return Err(Error::Domain(format!(
            "symbol sampled at h = {}, quantized at h = {h}",
            s.h()
        )));
    }
    if s.is_compact() {
        let edge = s.edge_fraction();
        if edge > EDGE_TOLERANCE {
            return Err(Error::Resolution(format!(
                "symbol reaches the phase-space box edge (relative size {edge:.3e}); \
                 dual box |eta| <= {:.4} at h = {h}",
                grid.eta_extent(h)
            )));
        }
    }
    let n = grid.points();
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let inv_n = 1.0 / n as f64;
    // anti-diagonal p = i + j, for p in 0..=2n-2
    let diagonals: Vec<Vec<Complex64>> = (0..2 * n - 1)
        .into_par_iter()
        .map(|p| {
            let mut buf: Vec<Complex64> = (0..n).map(|mc| s.value(p, mc)).collect();
            fft.process(&mut buf);
            for (d, v) in buf.iter_mut().enumerate() {
                let sign = if d % 2 == 0 { inv_n } else { -inv_n };
                *v *= sign;
            }
            let i_lo = p.saturating_sub(n - 1);
            let i_hi = p.min(n - 1);
            (i_lo..=i_hi)
                .map(|i| {
                    let j = p - i;
                    let d = (i + n - j) % n;
                    buf[d]
                })
                .collect()
        })
        .collect();
    let mut a = CMatrix::zeros(n, n);
    for (p, diag) in diagonals.iter().enumerate() {
        let i_lo = p.saturating_sub(n - 1);
        for (offset, v) in diag.iter().enumerate() {
            let i = i_lo + offset;
            a[(i, p - i)] = *v;
        }
    }
    Ok(OperatorMatrix::new(a, Basis::PositionGrid, h))
}

/// Result of integrating a symbol over the sampled phase-space box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolTrace {
    /// `(2 pi h)^-1 int int s dy d eta` (real part).
    pub value: f64,
    /// Imaginary part of the integral (zero for real symbols).
    pub imag: f64,
    /// Edge-mass estimate of what lies outside the box, in the same units
    /// as `value`; nonzero signals truncation.
    pub tail_estimate: f64,
}

impl SymbolTrace {
    pub fn truncated(&self) -> bool {
        self.tail_estimate > EDGE_TOLERANCE * (1.0 + self.value.abs())
    }
}

/// Trace predicted by the symbol: `(2 pi h)^-1 int int s(y, eta) dy d eta`,
/// by the trapezoid rule on the half grid in `y` and the dual grid in `eta`.
pub fn trace_via_symbol(s: &SymbolOnGrid) -> SymbolTrace {
    let grid = s.grid();
    let h = s.h();
    let weight = 0.5 * grid.dx() * grid.deta(h) / (2.0 * PI * h);
    let total: Complex64 = s.values().iter().sum::<Complex64>() * weight;
    let n = grid.points();
    let mut edge = 0.0;
    for p in 0..2 * n {
        edge += s.value(p, 0).norm() + s.value(p, n - 1).norm();
    }
    for mc in 0..n {
        edge += s.value(0, mc).norm() + s.value(2 * n - 1, mc).norm();
    }
    let tail_estimate = edge * weight;
    if tail_estimate > EDGE_TOLERANCE * (1.0 + total.re.abs()) {
        log::warn!("symbol trace: box truncation, edge mass estimate {tail_estimate:.3e}");
    }
    SymbolTrace {
        value: total.re,
        imag: total.im,
        tail_estimate,
    }
}

/// Singular values of a complex matrix.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Trace norm: sum of singular values.
pub fn trace_norm(a: &OperatorMatrix) -> f64 {
    if a.dim() == 0 {
        return 0.0;
    }
    if a.is_hermitian() {
        let herm = (&a.entries + a.entries.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().map(|v| v.abs()).sum()
    } else {
        singular_values(&a.entries).iter().sum()
    }
}

/// Spectral norm (largest singular value). Small matrices use a full SVD;
/// larger ones use power iteration on `A* A`.
pub fn spectral_norm(a: &CMatrix) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    if n <= 200 {
        return singular_values(a).into_iter().fold(0.0, f64::max);
    }
    power_norm(a, 1e-12, 2000)
}

fn power_norm(a: &CMatrix, tol: f64, max_iter: usize) -> f64 {
    use nalgebra::DVector;
    let n = a.ncols();
    // deterministic, generic start vector
    let mut v = DVector::from_fn(n, |i, _| {
        let t = i as f64 + 1.0;
        Complex64::new((t * 0.754_877_666).sin() + 1.1, (t * 0.569_840_291).cos())
    });
    let nv = v.norm();
    v /= Complex64::new(nv, 0.0);
    let adj = a.adjoint();
    let mut est = 0.0;
    for _ in 0..max_iter {
        let w = &adj * (a * &v);
        let lambda = v.dotc(&w).re;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        v = w / Complex64::new(nw, 0.0);
        if (lambda - est).abs() <= tol * lambda.abs() {
            est = lambda;
            break;
        }
        est = lambda;
    }
    est.max(0.0).sqrt()
}

/// Growth fit of `||Op_h(s_h)||` over an h grid.
#[derive(Debug, Clone)]
pub struct NormGrowth {
    pub norms: Vec<f64>,
    pub fit: RemainderFit,
    /// `fit.slope >= -k - 0.1`.
    pub within_bound: bool,
}

/// Fits `log ||Op_h(s_h)||_2` against `log h`, with norms taken on the
/// central half of the grid. A family in `S^k_delta(1)` should satisfy
/// `slope >= -k`, checked with a 0.1 allowance.
pub fn op_norm_bound_check<F>(grid: &GridSpec, family: F, h_grid: &[f64], k: f64, delta: f64) -> Result<NormGrowth>
where
    F: Fn(f64) -> Result<SymbolOnGrid>,
{
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::Domain(format!("delta = {delta} must lie in [0, 1/2)")));
    }
    if h_grid.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 h values, have {}", h_grid.len())));
    }
    let interior = grid.interior(0.5);
    let norms = h_grid
        .iter()
        .map(|&h| {
            let s = family(h)?;
            let op = weyl_quantize_line(&s, grid, h)?;
            Ok(spectral_norm(&op.restrict(interior.clone()).entries))
        })
        .collect::<Result<Vec<f64>>>()?;
    let fit = fit_loglog(h_grid, &norms)?;
    let within_bound = fit.slope >= -k - 0.1;
    Ok(NormGrowth {
        norms,
        fit,
        within_bound,
    })
}

/// Fourier quantization on the flat torus `T^n`, `n` in {1, 2}:
/// `A[k', k] = (2 pi)^-n int e^{-i (k' - k) x} s(x, h k) dx` in the basis
/// `e^{i k x}`, `|k|_inf <= K`. For `n = 2` modes are ordered
/// lexicographically by `(k1, k2)`.
pub fn quantize_torus<F>(dim: usize, modes: usize, h: f64, s: F) -> Result<OperatorMatrix>
where
    F: Fn(&[f64], &[f64]) -> Complex64 + Sync,
{
    if !(dim == 1 || dim == 2) {
        return Err(Error::Domain(format!("torus dimension {dim} not supported")));
    }
    if !(h > 0.0) {
        return Err(Error::Domain(format!("h = {h} must be positive")));
    }
    let side = 2 * modes + 1;
    // x samples per dimension: enough to represent differences up to 2K
    let m = (4 * modes + 2).max(32).next_power_of_two();
    let dx = 2.0 * PI / m as f64;
    let size = side.pow(dim as u32);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    let mode_of = |idx: usize| -> Vec<i64> {
        if dim == 1 {
            vec![idx as i64 - modes as i64]
        } else {
            vec![(idx / side) as i64 - modes as i64, (idx % side) as i64 - modes as i64]
        }
    };
    let columns: Vec<Vec<Complex64>> = (0..size)
        .into_par_iter()
        .map(|col| {
            let k = mode_of(col);
            let xi: Vec<f64> = k.iter().map(|&kk| h * kk as f64).collect();
            // coefficient table c[q] = (1/m^n) sum_x s(x, xi) e^{-i q x}
            let coeffs: Vec<Complex64> = if dim == 1 {
                let mut buf: Vec<Complex64> = (0..m).map(|l| s(&[l as f64 * dx], &xi)).collect();
                fft.process(&mut buf);
                buf.iter().map(|v| v / m as f64).collect()
            } else {
                let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
                for l1 in 0..m {
                    for l2 in 0..m {
                        buf[l1 * m + l2] = s(&[l1 as f64 * dx, l2 as f64 * dx], &xi);
                    }
                }
                for row in buf.chunks_mut(m) {
                    fft.process(row);
                }
                let mut colbuf = vec![Complex64::new(0.0, 0.0); m];
                for l2 in 0..m {
                    for l1 in 0..m {
                        colbuf[l1] = buf[l1 * m + l2];
                    }
                    fft.process(&mut colbuf);
                    for l1 in 0..m {
                        buf[l1 * m + l2] = colbuf[l1];
                    }
                }
                let scale = 1.0 / (m * m) as f64;
                buf.iter().map(|v| v * scale).collect()
            };
            let wrap = |q: i64| -> usize { q.rem_euclid(m as i64) as usize };
            (0..size)
                .map(|row| {
                    let kp = mode_of(row);
                    if dim == 1 {
                        coeffs[wrap(kp[0] - k[0])]
                    } else {
                        coeffs[wrap(kp[0] - k[0]) * m + wrap(kp[1] - k[1])]
                    }
                })
                .collect()
        })
        .collect();
    let a = CMatrix::from_fn(size, size, |r, c| columns[c][r]);
    Ok(OperatorMatrix::new(a, Basis::FourierModes, h))
}

/// Like [`quantize_torus`] for symbols compactly supported in `xi`: fails
/// when the outermost modes still carry weight.
pub fn quantize_torus_compact<F>(dim: usize, modes: usize, h: f64, s: F) -> Result<OperatorMatrix>
where
    F: Fn(&[f64], &[f64]) -> Complex64 + Sync,
{
    let op = quantize_torus(dim, modes, h, &s)?;
    let side = 2 * modes + 1;
    let max = op.entries.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if max > 0.0 {
        let mut edge = 0.0f64;
        for idx in 0..op.dim() {
            let on_edge = if dim == 1 {
                idx == 0 || idx == side - 1
            } else {
                let (a, b) = (idx / side, idx % side);
                a == 0 || b == 0 || a == side - 1 || b == side - 1
            };
            if on_edge {
                edge = edge.max(op.entries.column(idx).iter().map(|v| v.norm()).fold(0.0, f64::max));
            }
        }
        if edge / max > EDGE_TOLERANCE {
            return Err(Error::Truncation(format!(
                "symbol support in xi exceeds h*K = {} (edge weight {:.3e})",
                h * modes as f64,
                edge / max
            )));
        }
    }
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn small_grid() -> GridSpec {
        GridSpec::new(8.0, 256).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(8.0, 1000).is_err());
        assert!(GridSpec::new(-1.0, 64).is_err());
        let g = GridSpec::default();
        assert_eq!(g.points(), 1024);
        assert!((g.dx() - 1.0 / 64.0).abs() < 1e-15);
        assert_eq!(g.interior(0.5), 256..768);
        assert!(g.check_resolution(0.1, 30.0).is_err());
        assert!(g.check_resolution(0.1, 5.0).is_ok());
    }

    #[test]
    fn quantization_of_one_is_identity() {
        let g = small_grid();
        let s = SymbolOnGrid::sample_real(g, 0.1, |_, _| 1.0).unwrap();
        let a = weyl_quantize_line(&s, &g, 0.1).unwrap();
        let err = (&a.entries - CMatrix::identity(256, 256)).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert!(a.is_hermitian());
    }

    #[test]
    fn momentum_multiplier_on_plane_wave() {
        let g = small_grid();
        let h = 0.2;
        let s = SymbolOnGrid::sample_real(g, h, |_, eta| eta).unwrap();
        let a = weyl_quantize_line(&s, &g, h).unwrap();
        let omega = 2.0 * PI * 5.0 / (2.0 * g.half_width());
        let v = DVector::from_fn(256, |i, _| Complex64::from_polar(1.0, omega * g.x(i)));
        let av = &a.entries * &v;
        for i in g.interior(0.5) {
            let expect = v[i] * (h * omega);
            assert!((av[i] - expect).norm() <= 1e-6 * expect.norm());
        }
    }

    #[test]
    fn position_momentum_on_gaussian() {
        // Op(y eta) = (h/2i)(x d/dx + d/dx x); on phi = e^{-x^2/2} this is
        // (h/i)(x phi' + phi/2) = (h/i)(1/2 - x^2) phi
        let g = small_grid();
        let h = 0.3;
        let s = SymbolOnGrid::sample_real(g, h, |y, eta| y * eta).unwrap();
        let a = weyl_quantize_line(&s, &g, h).unwrap();
        let phi = DVector::from_fn(256, |i, _| c((-g.x(i).powi(2) / 2.0).exp()));
        let out = &a.entries * &phi;
        for i in g.interior(0.5) {
            let x = g.x(i);
            let expect = Complex64::new(0.0, -h) * ((0.5 - x * x) * (-x * x / 2.0).exp());
            assert!((out[i] - expect).norm() < 1e-8, "x={x}: {} vs {}", out[i], expect);
        }
    }

    #[test]
    fn real_symbols_give_hermitian_matrices() {
        let g = small_grid();
        let s = SymbolOnGrid::sample_real(g, 0.15, |y, eta| (y - 0.3).sin() * (-eta * eta).exp() + y * eta)
            .unwrap();
        let a = weyl_quantize_line(&s, &g, 0.15).unwrap();
        assert!(hermitian_defect(&a.entries) <= 1e-10);
    }

    #[test]
    fn gaussian_trace_via_symbol() {
        let g = GridSpec::default();
        for &h in &[0.05, 0.1, 0.2] {
            let s = SymbolOnGrid::sample_real(g, h, |y, eta| (-y * y - eta * eta).exp()).unwrap();
            let t = trace_via_symbol(&s);
            assert!((t.value - 1.0 / (2.0 * h)).abs() < 1e-9, "{} vs {}", t.value, 0.5 / h);
            assert!(!t.truncated());
        }
        let zero = SymbolOnGrid::sample_real(g, 0.1, |_, _| 0.0).unwrap();
        assert_eq!(trace_via_symbol(&zero).value, 0.0);
    }

    #[test]
    fn truncated_symbol_flags_tail() {
        let g = small_grid();
        let s = SymbolOnGrid::sample_real(g, 0.1, |y, _| (-y * y / 50.0).exp()).unwrap();
        assert!(trace_via_symbol(&s).truncated());
    }

    #[test]
    fn compact_symbol_outside_box_is_rejected() {
        let g = small_grid();
        let h = 0.02;
        // eta extent is h * Xi ~ 1.0; a unit-width eta bump does not fit
        let s = SymbolOnGrid::sample_compact(g, h, |y, eta| {
            crate::symbolfam::BumpFunction::standard_on(-2.0, 2.0).unwrap().value(y)
                * crate::symbolfam::BumpFunction::standard_on(-1.5, 1.5).unwrap().value(eta)
        })
        .unwrap();
        assert!(matches!(weyl_quantize_line(&s, &g, h), Err(Error::Resolution(_))));
    }

    #[test]
    fn trace_norm_examples() {
        let id = OperatorMatrix::new(CMatrix::identity(7, 7), Basis::PositionGrid, 1.0);
        assert!((trace_norm(&id) - 7.0).abs() < 1e-12);
        let u = DVector::from_vec(vec![c(1.0), Complex64::new(0.0, 2.0), c(-2.0)]);
        let v = DVector::from_vec(vec![c(3.0), c(4.0), c(0.0)]);
        let r1 = OperatorMatrix::new(&u * v.adjoint(), Basis::PositionGrid, 1.0);
        assert!((trace_norm(&r1) - 3.0 * 5.0).abs() < 1e-10);
    }

    #[test]
    fn spectral_norm_paths_agree() {
        let a = CMatrix::from_fn(240, 240, |i, j| {
            Complex64::new(((i * 7 + j * 3) % 11) as f64 - 5.0, ((i + 2 * j) % 5) as f64) / 40.0
        });
        let svd = singular_values(&a).into_iter().fold(0.0, f64::max);
        let pw = power_norm(&a, 1e-14, 5000);
        assert!((svd - pw).abs() < 1e-8 * svd);
    }

    #[test]
    fn norm_of_unit_symbol_is_flat() {
        let g = small_grid();
        let hs = [0.4, 0.3, 0.2, 0.15, 0.1];
        let r = op_norm_bound_check(&g, |h| SymbolOnGrid::sample_real(g, h, |_, _| 1.0), &hs, 0.0, 0.0).unwrap();
        for n in &r.norms {
            assert!((n - 1.0).abs() < 1e-10);
        }
        assert!(r.fit.slope.abs() < 1e-8 && r.within_bound);
    }

    #[test]
    fn torus_multiplier_and_potential() {
        let h = 0.1;
        let k = 6;
        let a = quantize_torus(1, k, h, |_, xi| c(xi[0] * xi[0])).unwrap();
        for r in 0..13 {
            for col in 0..13 {
                let kk = r as f64 - 6.0;
                let expect = if r == col { h * h * kk * kk } else { 0.0 };
                assert!((a.entries[(r, col)] - c(expect)).norm() < 1e-13);
            }
        }
        let v = quantize_torus(1, k, h, |x, _| c(2.0 * x[0].cos())).unwrap();
        for r in 0..13usize {
            for col in 0..13usize {
                let expect = if r.abs_diff(col) == 1 { 1.0 } else { 0.0 };
                assert!((v.entries[(r, col)] - c(expect)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn torus_product_symbol_matches_direct_quadrature() {
        let h = 0.25;
        let k = 5;
        let b = |x: f64| (x.sin()).exp();
        let w = |xi: f64| 1.0 / (1.0 + xi * xi);
        let a = quantize_torus(1, k, h, |x, xi| c(b(x[0]) * w(xi[0]))).unwrap();
        // direct trapezoid with a different node count
        let q = 400;
        for r in 0..11 {
            for col in 0..11 {
                let kp = r as f64 - 5.0;
                let kk = col as f64 - 5.0;
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..q {
                    let x = 2.0 * PI * l as f64 / q as f64;
                    acc += Complex64::from_polar(1.0, -(kp - kk) * x) * b(x);
                }
                let expect = acc / q as f64 * w(h * kk);
                assert!((a.entries[(r, col)] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn torus_two_dimensional_ordering() {
        let h = 0.5;
        let a = quantize_torus(2, 2, h, |x, xi| c(xi[0] * xi[0] + xi[1] * xi[1] + 2.0 * x[1].cos())).unwrap();
        assert_eq!(a.dim(), 25);
        // mode (k1, k2) = (-2, -2) is index 0, (-2, -1) index 1
        assert!((a.entries[(0, 0)] - c(h * h * 8.0)).norm() < 1e-12);
        assert!((a.entries[(0, 1)] - c(1.0)).norm() < 1e-12);
        assert!((a.entries[(0, 5)]).norm() < 1e-12);
        assert!(a.is_hermitian());
    }

    #[test]
    fn compact_torus_symbol_truncation() {
        let bump = crate::symbolfam::BumpFunction::standard();
        assert!(quantize_torus_compact(1, 5, 0.1, |_, xi| c(bump.value(xi[0]))).is_err());
        assert!(quantize_torus_compact(1, 12, 0.1, |_, xi| c(bump.value(xi[0]))).is_ok());
    }
}
