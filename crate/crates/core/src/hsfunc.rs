//! Helffer–Sjöstrand functional calculus.
//!
//! The almost-analytic extension is the Fourier-side construction
//!
//! `f~(x + iy) = psi(x) chi(y) G(x, y)`,
//! `G(x, y) = (1/2 pi) int e^{i (x + iy) xi} chi(y xi) F(f)(xi) d xi`,
//!
//! with `chi = 1` on `[-1, 1]` and `psi = 1` near `supp f`. Differentiating
//! under the integral gives
//!
//! `dbar G = (i / 4 pi) int xi chi'(y xi) e^{i (x + iy) xi} F(f)(xi) d xi`,
//! `dbar f~ = (psi' chi G + i psi chi'(y) G) / 2 + psi chi dbar G`,
//!
//! so `dbar f~` is evaluated in closed form on the Fourier samples of `f`.
//! Matrix functions are then `f(P) = (-1/pi) int dbar f~(z) (z - P)^{-1} dz`
//! discretized by a tensor midpoint rule.

use std::f64::consts::PI;

use nalgebra::linalg::SymmetricTridiagonal;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::symbolfam::{BumpFunction, CutoffFamily};
use crate::weylquant::{hermitian_defect, spectral_norm, CMatrix, OperatorMatrix};

/// Default extension order.
pub const DEFAULT_ORDER: usize = 8;

/// Default distance from `supp f` to the edge of the plateau of `psi`.
pub const PSI_PLATEAU_MARGIN: f64 = 1.0;

/// Default width of the ramps of `psi`.
pub const PSI_RAMP_WIDTH: f64 = 2.0;

/// Default node-skipping floor for `|Im z|`.
pub const DEFAULT_Y_FLOOR: f64 = 1e-8;

/// Relative size at which `f` counts as vanishing at its declared support edge.
const SUPPORT_EDGE_TOLERANCE: f64 = 1e-12;

/// A real function sampled on a uniform grid covering its support.
#[derive(Debug, Clone)]
pub struct SampledFunction {
    support: (f64, f64),
    start: f64,
    dx: f64,
    values: Vec<f64>,
}

impl SampledFunction {
    /// Samples `f` at `points` equispaced nodes spanning the closed interval
    /// `support`; `f` must vanish at both ends.
    pub fn new<F: Fn(f64) -> f64>(f: F, support: (f64, f64), points: usize) -> Result<Self> {
        let (a, b) = support;
        if !(b > a) || points < 8 {
            return Err(Error::Domain(format!(
                "need a nondegenerate support and at least 8 samples, got [{a}, {b}] with {points}"
            )));
        }
        let dx = (b - a) / (points - 1) as f64;
        let values: Vec<f64> = (0..points).map(|j| f(a + j as f64 * dx)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("function has non-finite samples".into()));
        }
        let peak = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let edge = values[0].abs().max(values[points - 1].abs());
        if peak > 0.0 && edge > SUPPORT_EDGE_TOLERANCE * peak {
            return Err(Error::Support(format!(
                "function is not negligible at the window edge (relative size {:.3e})",
                edge / peak
            )));
        }
        Ok(Self {
            support,
            start: a,
            dx,
            values,
        })
    }

    /// Samples `rho_h` on its support.
    pub fn from_family(fam: &CutoffFamily, h: f64, points: usize) -> Result<Self> {
        Self::new(|x| fam.value(x, h), fam.support(h), points)
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn spacing(&self) -> f64 {
        self.dx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Evaluable almost-analytic extension of a sampled function.
#[derive(Debug, Clone)]
pub struct AlmostAnalyticExtension {
    order: usize,
    chi: BumpFunction,
    psi: BumpFunction,
    support: (f64, f64),
    /// Uniform frequency grid `xi_m = m * dxi`, `m = -M/2 .. M/2 - 1`.
    dxi: f64,
    xi_first: i64,
    fourier: Vec<Complex64>,
}

/// Cutoff `chi`: equal to 1 on `[-1, 1]`, supported in `[-2, 2]`.
pub fn default_chi() -> BumpFunction {
    BumpFunction::symmetric_plateau(1.0, 2.0).expect("valid plateau")
}

/// `psi` for a function supported in `support`: plateau at distance
/// `margin` beyond it, ramps of width `ramp`.
pub fn plateau_cutoff(support: (f64, f64), margin: f64, ramp: f64) -> Result<BumpFunction> {
    let plateau = (support.0 - margin, support.1 + margin);
    BumpFunction::plateau((plateau.0 - ramp, plateau.1 + ramp), plateau)
}

/// Builds the extension with the default `chi` and `psi`.
pub fn build_extension(f: &SampledFunction, order: usize, chi: &BumpFunction) -> Result<AlmostAnalyticExtension> {
    let psi = plateau_cutoff(f.support(), PSI_PLATEAU_MARGIN, PSI_RAMP_WIDTH)?;
    build_extension_with(f, order, chi, psi)
}

/// Builds the extension with an explicit `psi`, which must equal 1 on
/// `supp f`.
pub fn build_extension_with(
    f: &SampledFunction,
    order: usize,
    chi: &BumpFunction,
    psi: BumpFunction,
) -> Result<AlmostAnalyticExtension> {
    if order == 0 {
        return Err(Error::Domain("extension order must be at least 1".into()));
    }
    let (a, b) = f.support();
    if psi.value(a) != 1.0 || psi.value(b) != 1.0 {
        return Err(Error::Domain("psi must equal 1 on the support of f".into()));
    }
    if chi.value(0.0) != 1.0 {
        return Err(Error::Domain("chi must equal 1 at 0".into()));
    }
    let (pa, pb) = psi.support();
    let (_, ly) = chi.support();
    // the trapezoid in xi periodizes G in x; the period must clear supp psi
    // plus the kernel width at |y| <= L_chi on both sides
    let span = (pb - pa) + (b - a) + 4.0 * ly;
    let period_min = 2.0 * span;
    let m = ((period_min / f.dx).ceil() as usize).next_power_of_two();
    let period = m as f64 * f.dx;
    let dxi = 2.0 * PI / period;
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for (j, v) in f.values.iter().enumerate() {
        buf[j] = Complex64::new(*v, 0.0);
    }
    FftPlanner::<f64>::new().plan_fft_forward(m).process(&mut buf);
    // F(xi_m) = dx e^{-i a xi_m} sum_j f_j e^{-2 pi i j m / M}
    let half = (m / 2) as i64;
    let fourier: Vec<Complex64> = (-half..half)
        .map(|mm| {
            let idx = mm.rem_euclid(m as i64) as usize;
            let xi = mm as f64 * dxi;
            buf[idx] * Complex64::from_polar(f.dx, -f.start * xi)
        })
        .collect();
    Ok(AlmostAnalyticExtension {
        order,
        chi: chi.clone(),
        psi,
        support: (a, b),
        dxi,
        xi_first: -half,
        fourier,
    })
}

impl AlmostAnalyticExtension {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn psi(&self) -> &BumpFunction {
        &self.psi
    }

    pub fn chi(&self) -> &BumpFunction {
        &self.chi
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// `|Im z|` beyond which the extension vanishes.
    pub fn y_extent(&self) -> f64 {
        let (lo, hi) = self.chi.support();
        lo.abs().max(hi.abs())
    }

    /// Largest frequency carried by the Fourier samples.
    pub fn xi_max(&self) -> f64 {
        (-self.xi_first) as f64 * self.dxi
    }

    /// Row sums `(G(x, y), dbar G(x, y))` for all `xs` at fixed `y`.
    fn row_integrals(&self, xs: &[f64], y: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let chi = &self.chi;
        let (clo, chi_hi) = chi.support();
        let mut idx = Vec::new();
        let mut wg = Vec::new();
        let mut wd = Vec::new();
        for (k, fk) in self.fourier.iter().enumerate() {
            let xi = (self.xi_first + k as i64) as f64 * self.dxi;
            let t = y * xi;
            if t <= clo || t >= chi_hi {
                continue;
            }
            let damp = (-t).exp();
            let cg = chi.eval(0, t);
            let cd = if y == 0.0 { 0.0 } else { chi.eval(1, t) };
            if cg == 0.0 && cd == 0.0 {
                continue;
            }
            idx.push(xi);
            wg.push(fk * (cg * damp * self.dxi / (2.0 * PI)));
            wd.push(fk * Complex64::new(0.0, xi * cd * damp * self.dxi / (4.0 * PI)));
        }
        let mut g = Vec::with_capacity(xs.len());
        let mut d = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut sg = Complex64::new(0.0, 0.0);
            let mut sd = Complex64::new(0.0, 0.0);
            if let Some(&xi0) = idx.first() {
                let step = Complex64::cis(x * self.dxi);
                let mut phase = Complex64::cis(x * xi0);
                for (k, (a, bb)) in wg.iter().zip(&wd).enumerate() {
                    if k % 256 == 0 {
                        phase = Complex64::cis(x * idx[k]);
                    }
                    sg += a * phase;
                    sd += bb * phase;
                    phase *= step;
                }
            }
            g.push(sg);
            d.push(sd);
        }
        (g, d)
    }

    /// `f~(x + iy)` at all `xs` for fixed `y`.
    pub fn values_row(&self, xs: &[f64], y: f64) -> Vec<Complex64> {
        let cy = self.chi.eval(0, y);
        if cy == 0.0 {
            return vec![Complex64::new(0.0, 0.0); xs.len()];
        }
        let (g, _) = self.row_integrals(xs, y);
        xs.iter().zip(g).map(|(&x, gv)| gv * (self.psi.value(x) * cy)).collect()
    }

    /// `dbar f~(x + iy)` at all `xs` for fixed `y`.
    pub fn dbar_row(&self, xs: &[f64], y: f64) -> Vec<Complex64> {
        let cy = self.chi.eval(0, y);
        let cdy = self.chi.eval(1, y);
        if cy == 0.0 && cdy == 0.0 {
            return vec![Complex64::new(0.0, 0.0); xs.len()];
        }
        let (g, d) = self.row_integrals(xs, y);
        xs.iter()
            .zip(g.iter().zip(&d))
            .map(|(&x, (gv, dv))| {
                let p = self.psi.eval(0, x);
                let dp = self.psi.eval(1, x);
                gv * Complex64::new(0.5 * dp * cy, 0.5 * p * cdy) + dv * (p * cy)
            })
            .collect()
    }

    pub fn value(&self, z: Complex64) -> Complex64 {
        self.values_row(&[z.re], z.im)[0]
    }

    pub fn dbar(&self, z: Complex64) -> Complex64 {
        self.dbar_row(&[z.re], z.im)[0]
    }
}

/// Per-shell supremum of `|dbar f~|` over `x` in `supp psi`, with
/// `shells` given as `(y_lo, y_hi)` pairs. Each entry reports `y_hi`.
pub fn dbar_bound_profile(ext: &AlmostAnalyticExtension, shells: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let ly = ext.y_extent();
    if let Some(s) = shells.iter().find(|s| !(s.0 > 0.0 && s.1 > s.0 && s.1 <= ly)) {
        return Err(Error::Domain(format!("shell ({}, {}) not within (0, {ly}]", s.0, s.1)));
    }
    let (pa, pb) = ext.psi().support();
    let nx = 1024;
    let xs: Vec<f64> = (0..=nx).map(|i| pa + (pb - pa) * i as f64 / nx as f64).collect();
    let per_shell = 9;
    Ok(shells
        .par_iter()
        .map(|&(lo, hi)| {
            let sup = (0..per_shell)
                .map(|k| lo * (hi / lo).powf(k as f64 / (per_shell - 1) as f64))
                .flat_map(|y| ext.dbar_row(&xs, y))
                .map(|v| v.norm())
                .fold(0.0, f64::max);
            (hi, sup)
        })
        .collect())
}

/// Dyadic shells `[2^{-k-1}, 2^{-k}]` for `k = k_min..=k_max`.
pub fn dyadic_shells(k_min: u32, k_max: u32) -> Vec<(f64, f64)> {
    (k_min..=k_max).map(|k| (0.5f64.powi(k as i32 + 1), 0.5f64.powi(k as i32))).collect()
}

/// Tensor midpoint rule on `[x_min, x_max] x [-y_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexQuadrature {
    pub x_range: (f64, f64),
    pub y_max: f64,
    pub qx: usize,
    pub qy: usize,
}

impl ComplexQuadrature {
    pub fn new(x_range: (f64, f64), y_max: f64, qx: usize, qy: usize) -> Result<Self> {
        if !(x_range.1 > x_range.0 && y_max > 0.0 && qx > 0 && qy > 0) {
            return Err(Error::Configuration(format!(
                "invalid quadrature rectangle [{}, {}] x [-{y_max}, {y_max}] with {qx} x {qy} nodes",
                x_range.0, x_range.1
            )));
        }
        Ok(Self { x_range, y_max, qx, qy })
    }

    /// Rectangle `supp psi x [-L_chi, L_chi]` of an extension.
    pub fn covering(ext: &AlmostAnalyticExtension, qx: usize, qy: usize) -> Result<Self> {
        Self::new(ext.psi().support(), ext.y_extent(), qx, qy)
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        let w = (self.x_range.1 - self.x_range.0) / self.qx as f64;
        (0..self.qx).map(|i| self.x_range.0 + (i as f64 + 0.5) * w).collect()
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        let w = 2.0 * self.y_max / self.qy as f64;
        (0..self.qy).map(|j| -self.y_max + (j as f64 + 0.5) * w).collect()
    }

    pub fn weight(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) * 2.0 * self.y_max / (self.qx * self.qy) as f64
    }

    pub fn area(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) * 2.0 * self.y_max
    }

    pub fn node_count(&self) -> usize {
        self.qx * self.qy
    }

    pub fn covers(&self, ext: &AlmostAnalyticExtension) -> bool {
        let (pa, pb) = ext.psi().support();
        self.x_range.0 <= pa && self.x_range.1 >= pb && self.y_max >= ext.y_extent()
    }
}

/// Hermitian matrix reduced to real-diagonal tridiagonal form
/// `P = Q T Q*`, used to make each resolvent solve linear in the dimension.
struct Tridiagonal {
    q: CMatrix,
    diag: Vec<f64>,
    /// `T[k + 1, k]`.
    sub: Vec<Complex64>,
}

impl Tridiagonal {
    fn new(p: &CMatrix) -> Result<Self> {
        let n = p.nrows();
        let q = SymmetricTridiagonal::new(p.clone()).q();
        let t = q.adjoint() * p * &q;
        let scale = p.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut stray = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                if i.abs_diff(j) > 1 {
                    stray = stray.max(t[(i, j)].norm());
                }
            }
        }
        if stray > 1e-10 * scale {
            return Err(Error::Numerical(format!(
                "tridiagonal reduction left off-band entries of size {stray:.3e}"
            )));
        }
        Ok(Self {
            diag: (0..n).map(|k| t[(k, k)].re).collect(),
            sub: (0..n.saturating_sub(1)).map(|k| t[(k + 1, k)]).collect(),
            q,
        })
    }

    fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `acc += c (z - T)^{-1}`, column by column via the LU factors of the
    /// tridiagonal matrix. Pivots satisfy `|Im u_k| >= |Im z|`, so no
    /// pivoting is needed off the real axis.
    fn add_resolvent(&self, z: Complex64, c: Complex64, acc: &mut CMatrix, pivots: &mut Vec<Complex64>) {
        let n = self.dim();
        pivots.clear();
        // A = z - T: diagonal z - d_k, sub -s_k, super -conj(s_k)
        pivots.push(z - self.diag[0]);
        for k in 1..n {
            let s = self.sub[k - 1];
            let prod = s * s.conj();
            let u = z - self.diag[k] - prod / pivots[k - 1];
            pivots.push(u);
        }
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            // forward: L y = e_j, L has sub entries l_k = -s_k / u_k
            for v in y.iter_mut().take(j) {
                *v = Complex64::new(0.0, 0.0);
            }
            y[j] = Complex64::new(1.0, 0.0);
            for k in j + 1..n {
                y[k] = self.sub[k - 1] / pivots[k - 1] * y[k - 1];
            }
            // back: U x = y, U has super entries -conj(s_k)
            let mut next = y[n - 1] / pivots[n - 1];
            acc[(n - 1, j)] += c * next;
            for k in (0..n - 1).rev() {
                let x = (y[k] + self.sub[k].conj() * next) / pivots[k];
                acc[(k, j)] += c * x;
                next = x;
            }
        }
    }
}

/// `(-1/pi) sum_q w dbar f~(z_q) (z_q - P)^{-1}` with nodes
/// `|Im z_q| < y_floor` skipped.
pub fn hs_apply(
    p: &OperatorMatrix,
    ext: &AlmostAnalyticExtension,
    quad: &ComplexQuadrature,
    y_floor: f64,
) -> Result<OperatorMatrix> {
    if !p.is_hermitian() {
        return Err(Error::Domain(format!(
            "operator is not Hermitian (defect {:.3e})",
            hermitian_defect(&p.entries)
        )));
    }
    if !quad.covers(ext) {
        return Err(Error::Configuration(
            "quadrature rectangle does not cover the support of the extension".into(),
        ));
    }
    let n = p.dim();
    let ys = quad.y_nodes();
    if ext.order() < 2 && ys.iter().any(|&y| y == 0.0) {
        return Err(Error::Configuration(
            "a quadrature node lies on the real axis and the extension order is below 2".into(),
        ));
    }
    if n == 0 {
        return Ok(OperatorMatrix::new(CMatrix::zeros(0, 0), p.basis, p.h));
    }
    let tri = Tridiagonal::new(&p.entries)?;
    let xs = quad.x_nodes();
    let w = quad.weight();
    // rows are grouped in fixed blocks so the reduction order does not
    // depend on the thread count
    let block = 8;
    let rows: Vec<usize> = (0..ys.len()).filter(|&j| ys[j].abs() >= y_floor).collect();
    let partials: Vec<CMatrix> = rows
        .par_chunks(block)
        .map(|chunk| {
            let mut acc = CMatrix::zeros(n, n);
            let mut pivots = Vec::with_capacity(n);
            for &j in chunk {
                let y = ys[j];
                let dbar = ext.dbar_row(&xs, y);
                for (x, d) in xs.iter().zip(&dbar) {
                    if *d == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    tri.add_resolvent(Complex64::new(*x, y), d * w, &mut acc, &mut pivots);
                }
            }
            acc
        })
        .collect();
    let mut sum = CMatrix::zeros(n, n);
    for part in &partials {
        sum += part;
    }
    sum *= Complex64::new(-1.0 / PI, 0.0);
    let out = &tri.q * sum * tri.q.adjoint();
    if out.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("non-finite entries in the contour sum".into()));
    }
    Ok(OperatorMatrix::new(out, p.basis, p.h))
}

/// `f(P)` by the Helffer–Sjöstrand formula with the default cutoffs.
pub fn hs_funcalc(
    p: &OperatorMatrix,
    f: &SampledFunction,
    order: usize,
    qx: usize,
    qy: usize,
) -> Result<OperatorMatrix> {
    if f.is_zero() {
        return Ok(OperatorMatrix::new(CMatrix::zeros(p.dim(), p.dim()), p.basis, p.h));
    }
    let ext = build_extension(f, order, &default_chi())?;
    let quad = ComplexQuadrature::covering(&ext, qx, qy)?;
    hs_apply(p, &ext, &quad, DEFAULT_Y_FLOOR)
}

/// `||(z - P)^{-1}||_2` for each `z`.
pub fn resolvent_norm_probe(p: &OperatorMatrix, zs: &[Complex64]) -> Result<Vec<(Complex64, f64)>> {
    if let Some(z) = zs.iter().find(|z| z.im == 0.0) {
        return Err(Error::Domain(format!("probe point {z} lies on the real axis")));
    }
    let n = p.dim();
    zs.par_iter()
        .map(|&z| {
            let a = CMatrix::from_diagonal_element(n, n, z) - &p.entries;
            let inv = a
                .try_inverse()
                .ok_or_else(|| Error::Numerical(format!("z - P is singular at z = {z}")))?;
            Ok((z, spectral_norm(&inv)))
        })
        .collect()
}
