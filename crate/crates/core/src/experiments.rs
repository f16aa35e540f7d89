//! Semiclassical trace formula and shrinking-window Weyl law on the torus.

use std::f64::consts::PI;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit_loglog, RemainderFit};
use crate::quad::gauss_legendre;
use crate::schrodinger::{assemble_contained, eigensolve, TorusPotential};
use crate::symbolfam::{BumpFunction, CutoffFamily};
use crate::weylquant::quantize_torus;

/// Remainders below this are treated as round-off.
pub const REMAINDER_FLOOR: f64 = 1e-10;

/// Distance to a window endpoint below which an eigenvalue is flagged.
pub const TIE_TOLERANCE: f64 = 1e-12;

const INTEGRAL_TOLERANCE: f64 = 1e-11;
const MAX_DOUBLINGS: usize = 14;
const MAX_MATRIX_SIZE: usize = 6000;

/// Geometric grid `h_i = h_max r^i`, `i < count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HGrid {
    h_max: f64,
    ratio: f64,
    count: usize,
}

impl HGrid {
    pub fn new(h_max: f64, ratio: f64, count: usize) -> Result<Self> {
        if !(h_max > 0.0 && h_max <= 1.0) {
            return Err(Error::Domain(format!("h_max = {h_max} must lie in (0, 1]")));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Domain(format!("ratio = {ratio} must lie in (0, 1)")));
        }
        if count < 6 {
            return Err(Error::Domain(format!("h grid needs at least 6 points, got {count}")));
        }
        Ok(Self { h_max, ratio, count })
    }

    /// Grid running from `h_max` down to `h_min` in `count` points.
    pub fn spanning(h_max: f64, h_min: f64, count: usize) -> Result<Self> {
        if !(h_min > 0.0 && h_min < h_max) {
            return Err(Error::Domain(format!("need 0 < h_min < h_max, got {h_min}, {h_max}")));
        }
        Self::new(h_max, (h_min / h_max).powf(1.0 / count.saturating_sub(1).max(1) as f64), count)
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.h_max * self.ratio.powi(i as i32)).collect()
    }
}

impl Default for HGrid {
    /// Ten points from 0.2 down to 0.02.
    fn default() -> Self {
        Self::spanning(0.2, 0.02, 10).expect("valid default grid")
    }
}

/// One factor of a product localizer.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalizerFactor {
    One,
    Bump(BumpFunction),
}

impl LocalizerFactor {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            LocalizerFactor::One => 1.0,
            LocalizerFactor::Bump(b) => b.value(t),
        }
    }

    fn support(&self) -> Option<(f64, f64)> {
        match self {
            LocalizerFactor::One => None,
            LocalizerFactor::Bump(b) => Some(b.support()),
        }
    }
}

/// Localizer symbol `b(x, xi) = b1(x) b2(xi)` on `T^1`, or `b = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerSpec {
    x_factor: LocalizerFactor,
    xi_factor: LocalizerFactor,
    delta_b: f64,
}

impl LocalizerSpec {
    pub fn identity() -> Self {
        Self {
            x_factor: LocalizerFactor::One,
            xi_factor: LocalizerFactor::One,
            delta_b: 0.0,
        }
    }

    /// The `x` factor must be supported inside `(0, 2 pi)` so that it is
    /// smooth on the torus.
    pub fn new(x_factor: LocalizerFactor, xi_factor: LocalizerFactor, delta_b: f64) -> Result<Self> {
        if let LocalizerFactor::Bump(b) = &x_factor {
            let (a, c) = b.support();
            if a < 0.0 || c > 2.0 * PI {
                return Err(Error::Domain(format!(
                    "x factor support [{a}, {c}] must lie in [0, 2 pi]"
                )));
            }
        }
        if !(0.0..0.5).contains(&delta_b) {
            return Err(Error::Domain(format!("localizer class delta_b = {delta_b} must lie in [0, 1/2)")));
        }
        Ok(Self {
            x_factor,
            xi_factor,
            delta_b,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.x_factor == LocalizerFactor::One && self.xi_factor == LocalizerFactor::One
    }

    pub fn x_factor(&self) -> &LocalizerFactor {
        &self.x_factor
    }

    pub fn xi_factor(&self) -> &LocalizerFactor {
        &self.xi_factor
    }

    pub fn delta_b(&self) -> f64 {
        self.delta_b
    }

    pub fn eval(&self, x: f64, xi: f64) -> f64 {
        self.x_factor.eval(x) * self.xi_factor.eval(xi)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != 1 && !self.is_identity() {
            return Err(Error::Capability(
                "non-trivial localizers are implemented for n = 1 only".into(),
            ));
        }
        Ok(())
    }
}

/// Sum of `f(i)` over `0..n`, evaluated in parallel but added in index
/// order so the result does not depend on the thread count.
fn ordered_sum<F: Fn(usize) -> f64 + Sync>(n: usize, f: F) -> f64 {
    let terms: Vec<f64> = (0..n).into_par_iter().map(&f).collect();
    terms.iter().sum()
}

/// Trapezoid over `[a, a + len)` treated as periodic, doubling until the
/// relative change is below `tol`. Previous nodes are reused.
fn doubling_trapezoid<F>(f: F, a: f64, len: f64, start: usize, tol: f64, what: &str) -> Result<f64>
where
    F: Fn(f64) -> f64 + Sync,
{
    let mut n = start;
    let mut sum = ordered_sum(n, |i| f(a + len * i as f64 / n as f64));
    let mut estimate = sum * len / n as f64;
    for _ in 0..MAX_DOUBLINGS {
        let fresh = ordered_sum(n, |i| f(a + len * (2 * i + 1) as f64 / (2 * n) as f64));
        sum += fresh;
        n *= 2;
        let next = sum * len / n as f64;
        let scale = next.abs().max(estimate.abs());
        if (next - estimate).abs() <= tol * scale || scale == 0.0 {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::Resolution(format!(
        "{what}: quadrature did not converge with {n} nodes"
    )))
}

/// Serial trapezoid on a compactly supported smooth integrand.
fn compact_trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Option<f64> {
    let mut n = 32usize;
    let mut sum: f64 = (0..n).map(|i| f(a + (b - a) * i as f64 / n as f64)).sum();
    let mut estimate = sum * (b - a) / n as f64;
    for _ in 0..MAX_DOUBLINGS + 2 {
        let fresh: f64 = (0..n).map(|i| f(a + (b - a) * (2 * i + 1) as f64 / (2 * n) as f64)).sum();
        sum += fresh;
        n *= 2;
        let next = sum * (b - a) / n as f64;
        let scale = next.abs().max(estimate.abs());
        if (next - estimate).abs() <= 1e-13 * scale || scale < 1e-300 {
            return Some(next);
        }
        estimate = next;
    }
    None
}

/// `int b(x, xi) rho_h(p(x, xi)) dx dxi` over `T^n x R^n`.
pub fn phase_space_integral(b: &LocalizerSpec, fam: &CutoffFamily, v: &TorusPotential, h: f64) -> Result<f64> {
    b.check_dim(v.dim())?;
    let (lo, hi) = fam.support(h);
    let (vmin, _) = v.range();
    if hi <= vmin {
        return Ok(0.0);
    }
    if v.dim() == 1 {
        let xi_cut = b.xi_factor.support();
        let inner = |x: f64| -> f64 {
            let vx = v.eval(&[x]);
            if hi <= vx {
                return 0.0;
            }
            let outer = (hi - vx).sqrt();
            let pieces: Vec<(f64, f64)> = if lo <= vx {
                vec![(-outer, outer)]
            } else {
                let inner_r = (lo - vx).sqrt();
                vec![(-outer, -inner_r), (inner_r, outer)]
            };
            let g = |xi: f64| fam.value(xi * xi + vx, h) * b.xi_factor.eval(xi);
            pieces
                .into_iter()
                .filter_map(|(a, c)| match xi_cut {
                    Some((s0, s1)) => {
                        let (a, c) = (a.max(s0), c.min(s1));
                        (a < c).then_some((a, c))
                    }
                    None => Some((a, c)),
                })
                .map(|(a, c)| compact_trapezoid(&g, a, c).unwrap_or(f64::NAN))
                .sum::<f64>()
                * b.x_factor.eval(x)
        };
        let (a, len) = match b.x_factor.support() {
            Some((s0, s1)) => (s0, s1 - s0),
            None => (0.0, 2.0 * PI),
        };
        let value = doubling_trapezoid(inner, a, len, 64, INTEGRAL_TOLERANCE, "phase-space integral")?;
        if !value.is_finite() {
            return Err(Error::Resolution("phase-space integral: inner xi quadrature did not converge".into()));
        }
        Ok(value)
    } else {
        // |xi|^2 = e gives d xi = pi de on R^2
        let (nodes, weights) = gauss_legendre(20);
        let window_mass = |from: f64| -> f64 {
            let a = from.max(lo);
            if a >= hi {
                return 0.0;
            }
            let panels = 32;
            let width = (hi - a) / panels as f64;
            let mut total = 0.0;
            for p in 0..panels {
                let mid = a + (p as f64 + 0.5) * width;
                for (t, w) in nodes.iter().zip(&weights) {
                    total += w * fam.value(mid + 0.5 * width * t, h);
                }
            }
            0.5 * width * total
        };
        let row = |x1: f64| -> Result<f64> {
            doubling_trapezoid(|x2| PI * window_mass(v.eval(&[x1, x2])), 0.0, 2.0 * PI, 32, INTEGRAL_TOLERANCE, "phase-space integral")
        };
        let rows = std::sync::Mutex::new(None::<Error>);
        let total = doubling_trapezoid(
            |x1| match row(x1) {
                Ok(val) => val,
                Err(e) => {
                    *rows.lock().expect("poisoned") = Some(e);
                    0.0
                }
            },
            0.0,
            2.0 * PI,
            32,
            INTEGRAL_TOLERANCE,
            "phase-space integral",
        )?;
        if let Some(e) = rows.into_inner().expect("poisoned") {
            return Err(e);
        }
        Ok(total)
    }
}

/// Phase-space volume of `{b != 0, p in supp rho_h}`.
pub fn support_volume(b: &LocalizerSpec, fam: &CutoffFamily, v: &TorusPotential, h: f64) -> Result<f64> {
    b.check_dim(v.dim())?;
    let (lo, hi) = fam.support(h);
    let m = 4096;
    let dx = 2.0 * PI / m as f64;
    let volume = if v.dim() == 1 {
        let xi_cut = b.xi_factor.support();
        (0..m)
            .map(|i| {
                let x = i as f64 * dx;
                if let Some((s0, s1)) = b.x_factor.support() {
                    if x <= s0 || x >= s1 {
                        return 0.0;
                    }
                }
                let vx = v.eval(&[x]);
                let outer = (hi - vx).max(0.0).sqrt();
                let inner = (lo - vx).max(0.0).sqrt();
                let len = |a: f64, c: f64| match xi_cut {
                    Some((s0, s1)) => (c.min(s1) - a.max(s0)).max(0.0),
                    None => c - a,
                };
                len(-outer, -inner) + len(inner, outer)
            })
            .sum::<f64>()
            * dx
    } else {
        ordered_sum(m, |i| {
            (0..m)
                .map(|j| {
                    let vx = v.eval(&[i as f64 * dx, j as f64 * dx]);
                    PI * ((hi - vx).max(0.0) - (lo - vx).max(0.0))
                })
                .sum::<f64>()
        }) * dx
            * dx
    };
    Ok(volume)
}

/// One `h` of the trace-formula experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceFormulaRow {
    pub h: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub remainder: f64,
    pub supp_volume: f64,
    /// Slope of the fit through this and all coarser rows; NaN until defined.
    pub slope_running: f64,
    pub matrix_size: usize,
}

#[derive(Debug, Clone)]
pub struct TraceFormulaResult {
    pub rows: Vec<TraceFormulaRow>,
    pub fit: Option<RemainderFit>,
    /// Fewer than three remainders above [`REMAINDER_FLOOR`].
    pub at_floor: bool,
}

/// `(2 pi h)^n tr(Op(b) rho_h(P))` with the mode cutoff from the K rule.
pub fn trace_lhs(b: &LocalizerSpec, fam: &CutoffFamily, v: &TorusPotential, h: f64, margin: f64) -> Result<(f64, usize)> {
    b.check_dim(v.dim())?;
    let n = v.dim() as i32;
    let (_, hi) = fam.support(h);
    let (vmin, _) = v.range();
    let e_max = hi.max(vmin);
    let modes = crate::schrodinger::k_rule(v, h, e_max, margin);
    let size = (2 * modes + 1).pow(v.dim() as u32);
    if size > MAX_MATRIX_SIZE {
        return Err(Error::Capability(format!(
            "torus matrix of size {size} exceeds the dense limit {MAX_MATRIX_SIZE} (h = {h})"
        )));
    }
    let op = assemble_contained(v, h, e_max, margin)?;
    let dec = eigensolve(&op.matrix)?;
    let prefactor = (2.0 * PI * h).powi(n);
    let trace = if b.is_identity() {
        dec.weights(|e| fam.value(e, h)).iter().sum::<f64>()
    } else {
        let bop = quantize_torus(1, op.modes, h, |x, xi| {
            num_complex::Complex64::new(b.eval(x[0], xi[0]), 0.0)
        })?;
        let f = dec.apply(|e| fam.value(e, h));
        (&bop.entries * &f.entries).trace().re
    };
    Ok((prefactor * trace, op.size()))
}

/// Runs the trace formula over the grid and fits `log |remainder|` against `log h`.
pub fn run_trace_formula_experiment(
    v: &TorusPotential,
    fam: &CutoffFamily,
    b: &LocalizerSpec,
    grid: &HGrid,
    margin: f64,
) -> Result<TraceFormulaResult> {
    b.check_dim(v.dim())?;
    let hs = grid.values();
    let mut rows = hs
        .par_iter()
        .map(|&h| -> Result<TraceFormulaRow> {
            let (lhs, matrix_size) = trace_lhs(b, fam, v, h, margin)?;
            let rhs = phase_space_integral(b, fam, v, h)?;
            Ok(TraceFormulaRow {
                h,
                lhs,
                rhs,
                remainder: lhs - rhs,
                supp_volume: support_volume(b, fam, v, h)?,
                slope_running: f64::NAN,
                matrix_size,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for i in 0..rows.len() {
        let (xs, ys) = above_floor(&rows[..=i]);
        if xs.len() >= 3 {
            if let Ok(fit) = fit_loglog(&xs, &ys) {
                rows[i].slope_running = fit.slope;
            }
        }
    }
    let (xs, ys) = above_floor(&rows);
    let fit = if xs.len() >= 3 { Some(fit_loglog(&xs, &ys)?) } else { None };
    Ok(TraceFormulaResult {
        at_floor: fit.is_none(),
        rows,
        fit,
    })
}

fn above_floor(rows: &[TraceFormulaRow]) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .filter(|r| r.remainder.abs() >= REMAINDER_FLOOR)
        .map(|r| (r.h, r.remainder.abs()))
        .unzip()
}

fn regularity_warning(v: &TorusPotential, e: f64) {
    let (vmin, vmax) = v.range();
    if (e - vmin).abs() < 1e-6 || (e - vmax).abs() < 1e-6 {
        warn!("energy {e} is within 1e-6 of a critical value of V; the level set may be singular");
    }
}

/// Zeros of `g` on `[a, a + 2 pi)`, found by sampling and bisection.
fn periodic_roots<F: Fn(f64) -> f64>(g: F, a: f64, samples: usize) -> Vec<f64> {
    let dx = 2.0 * PI / samples as f64;
    let mut roots = Vec::new();
    let mut prev = g(a);
    for i in 1..=samples {
        let x = a + i as f64 * dx;
        let cur = g(x);
        if (prev < 0.0) != (cur < 0.0) {
            let (mut l, mut r) = (x - dx, x);
            let neg_left = prev < 0.0;
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                if m <= l || m >= r {
                    break;
                }
                if (g(m) < 0.0) == neg_left {
                    l = m;
                } else {
                    r = m;
                }
            }
            roots.push(0.5 * (l + r));
        }
        prev = cur;
    }
    roots
}

/// Intervals of `[a, a + 2 pi)` where `V(x) < e`, given that `V(a) >= e`.
fn sublevel_intervals_1d<F: Fn(f64) -> f64>(vf: F, e: f64, a: f64) -> Vec<(f64, f64)> {
    let roots = periodic_roots(|x| vf(x) - e, a, 4096);
    roots.chunks(2).filter(|c| c.len() == 2).map(|c| (c[0], c[1])).collect()
}

/// `int_a^b dx / sqrt(e - V(x))` with `V(a) = V(b) = e`, via
/// `x = m - r cos(theta)`, which removes the inverse-square-root endpoints.
fn turning_point_integral<F: Fn(f64) -> f64>(vf: F, e: f64, a: f64, b: f64) -> Result<f64> {
    let m = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let (nodes, weights) = gauss_legendre(20);
    let integrand = |theta: f64| {
        let x = m - r * theta.cos();
        let gap = e - vf(x);
        if gap <= 0.0 {
            0.0
        } else {
            r * theta.sin() / gap.sqrt()
        }
    };
    let mut panels = 4;
    let mut prev = f64::NAN;
    for _ in 0..MAX_DOUBLINGS {
        let width = PI / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * width;
            for (t, w) in nodes.iter().zip(&weights) {
                total += w * integrand(mid + 0.5 * width * t);
            }
        }
        total *= 0.5 * width;
        if (total - prev).abs() <= 1e-12 * total.abs() {
            return Ok(total);
        }
        prev = total;
        panels *= 2;
    }
    Err(Error::Resolution(format!(
        "turning-point quadrature on [{a}, {b}] did not converge"
    )))
}

fn sublevel_measure_row<F: Fn(f64) -> f64>(vf: F, e: f64) -> f64 {
    let m = 1024;
    let dx = 2.0 * PI / m as f64;
    let (mut start, mut best) = (0.0, f64::NEG_INFINITY);
    for i in 0..m {
        let x = i as f64 * dx;
        let val = vf(x);
        if val > best {
            best = val;
            start = x;
        }
    }
    if best < e {
        return 2.0 * PI;
    }
    sublevel_intervals_1d(&vf, e, start).iter().map(|(a, b)| b - a).sum()
}

/// Liouville volume of `p^{-1}(E)`, i.e. `int dS / |grad p|`.
///
/// For `n = 1` this is `int_{V < E} dx / sqrt(E - V)`; for `n = 2` the
/// `xi`-integral is explicit and the volume is `pi * meas{V < E}`.
pub fn liouville_volume(v: &TorusPotential, e: f64) -> Result<f64> {
    let (vmin, vmax) = v.range();
    if !(e > vmin) {
        return Err(Error::EmptyLevelSet(format!("E = {e} does not exceed min V = {vmin}")));
    }
    regularity_warning(v, e);
    let vf = |x: f64| v.eval(&[x]);
    if v.dim() == 1 {
        if e > vmax {
            return doubling_trapezoid(|x| 1.0 / (e - vf(x)).sqrt(), 0.0, 2.0 * PI, 64, 1e-13, "Liouville volume");
        }
        let (mut start, mut best) = (0.0, f64::NEG_INFINITY);
        for i in 0..4096 {
            let x = 2.0 * PI * i as f64 / 4096.0;
            if vf(x) > best {
                best = vf(x);
                start = x;
            }
        }
        let intervals = sublevel_intervals_1d(vf, e, start);
        if intervals.is_empty() {
            return Err(Error::EmptyLevelSet(format!("no sublevel interval found for E = {e}")));
        }
        intervals.iter().map(|&(a, b)| turning_point_integral(vf, e, a, b)).sum()
    } else {
        if e > vmax {
            return Ok(PI * 4.0 * PI * PI);
        }
        let measure = doubling_trapezoid(
            |x1| sublevel_measure_row(|x2| v.eval(&[x1, x2]), e),
            0.0,
            2.0 * PI,
            64,
            1e-9,
            "sublevel measure",
        )?;
        Ok(PI * measure)
    }
}

/// How the torus is sampled in [`thin_shell_volume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShellSampling {
    /// Uniform grid with this many points per dimension.
    Grid(usize),
    /// Uniform random points from a seeded generator.
    Random { samples: usize, seed: u64 },
}

/// `vol{E - eps/2 < p < E + eps/2} / eps`, with the `xi`-measure of the
/// shell exact and the torus sampled.
pub fn thin_shell_volume(v: &TorusPotential, e: f64, eps: f64, sampling: ShellSampling) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("shell width {eps} must be positive")));
    }
    let dim = v.dim();
    let lo = e - 0.5 * eps;
    let hi = e + 0.5 * eps;
    let shell = |vx: f64| -> f64 {
        if dim == 1 {
            2.0 * ((hi - vx).max(0.0).sqrt() - (lo - vx).max(0.0).sqrt())
        } else {
            PI * ((hi - vx).max(0.0) - (lo - vx).max(0.0))
        }
    };
    let torus = (2.0 * PI).powi(dim as i32);
    let mean = match sampling {
        ShellSampling::Grid(m) => {
            if m == 0 {
                return Err(Error::Domain("shell grid needs at least one point".into()));
            }
            let dx = 2.0 * PI / m as f64;
            let total: f64 = if dim == 1 {
                ordered_sum(m, |i| shell(v.eval(&[(i as f64 + 0.5) * dx])))
            } else {
                ordered_sum(m, |i| {
                    (0..m)
                        .map(|j| shell(v.eval(&[(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dx])))
                        .sum::<f64>()
                })
            };
            total / (m as f64).powi(dim as i32)
        }
        ShellSampling::Random { samples, seed } => {
            if samples == 0 {
                return Err(Error::Domain("shell sampling needs at least one sample".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0.0;
            for _ in 0..samples {
                let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
                total += shell(v.eval(&x));
            }
            total / samples as f64
        }
    };
    Ok(torus * mean / eps)
}

/// Phase-space volume of `{a <= p < b}`.
pub fn window_volume(v: &TorusPotential, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::Domain(format!("empty energy window [{a}, {b})")));
    }
    let dim = v.dim();
    let cumulative = |e: f64| -> Result<f64> {
        let (vmin, vmax) = v.range();
        if e <= vmin {
            return Ok(0.0);
        }
        if dim == 1 {
            if e > vmax {
                return doubling_trapezoid(|x| 2.0 * (e - v.eval(&[x])).sqrt(), 0.0, 2.0 * PI, 64, 1e-13, "window volume");
            }
            let vf = |x: f64| v.eval(&[x]);
            let (mut start, mut best) = (0.0, f64::NEG_INFINITY);
            for i in 0..4096 {
                let x = 2.0 * PI * i as f64 / 4096.0;
                if vf(x) > best {
                    best = vf(x);
                    start = x;
                }
            }
            // sqrt(E - V) = (E - V) / sqrt(E - V): same substitution as the Liouville integral
            let (nodes, weights) = gauss_legendre(20);
            let mut total = 0.0;
            for (l, r) in sublevel_intervals_1d(vf, e, start) {
                let m = 0.5 * (l + r);
                let rad = 0.5 * (r - l);
                let panels = 64;
                let width = PI / panels as f64;
                for p in 0..panels {
                    let mid = (p as f64 + 0.5) * width;
                    for (t, w) in nodes.iter().zip(&weights) {
                        let theta = mid + 0.5 * width * t;
                        let gap = (e - vf(m - rad * theta.cos())).max(0.0);
                        total += 0.5 * width * w * 2.0 * gap.sqrt() * rad * theta.sin();
                    }
                }
            }
            Ok(total)
        } else {
            let m = 1024;
            let dx = 2.0 * PI / m as f64;
            Ok(ordered_sum(m, |i| {
                (0..m)
                    .map(|j| PI * (e - v.eval(&[(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dx])).max(0.0))
                    .sum::<f64>()
            }) * dx
                * dx)
        }
    };
    Ok(cumulative(b)? - cumulative(a)?)
}

/// One `h` of the Weyl-law experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeylCountRow {
    pub h: f64,
    pub count: u64,
    /// `(2 pi)^n h^{n - delta} N(h)`.
    pub scaled: f64,
    pub liouville: f64,
    /// `|scaled - liouville| / liouville`.
    pub deviation: f64,
    /// Eigenvalues within [`TIE_TOLERANCE`] of a window endpoint.
    pub ties: usize,
}

pub type WeylCountResult = Vec<WeylCountRow>;

/// Counts `k >= 0` with `lo <= h^2 (s + k^2) < hi`, each `k > 0` twice.
fn lattice_line_count(h: f64, s: i64, lo: f64, hi: f64) -> (u64, usize) {
    let val = |k: i64| h * h * ((s + k * k) as f64);
    let h2 = h * h;
    let root = |t: f64| ((t / h2 - s as f64).max(0.0)).sqrt().floor() as i64;
    let mut kmax = root(hi) + 1;
    while kmax >= 0 && val(kmax) >= hi {
        kmax -= 1;
    }
    if kmax < 0 {
        return (0, 0);
    }
    let mut kmin = (root(lo) - 1).max(0);
    while kmin <= kmax && val(kmin) < lo {
        kmin += 1;
    }
    let mut ties = 0;
    for k in [kmin - 1, kmin, kmax, kmax + 1] {
        if k >= 0 && ((val(k) - lo).abs() < TIE_TOLERANCE || (val(k) - hi).abs() < TIE_TOLERANCE) {
            ties += if k == 0 { 1 } else { 2 };
        }
    }
    if kmin > kmax {
        return (0, ties);
    }
    let count = if kmin == 0 {
        2 * kmax as u64 + 1
    } else {
        2 * (kmax - kmin + 1) as u64
    };
    (count, ties)
}

/// Number of eigenvalues `h^2 |k|^2` of the free torus in `[lo, hi)`.
pub fn free_torus_count(dim: usize, h: f64, lo: f64, hi: f64) -> Result<(u64, usize)> {
    match dim {
        1 => Ok(lattice_line_count(h, 0, lo, hi)),
        2 => {
            let kmax = (hi.max(0.0).sqrt() / h).ceil() as i64 + 1;
            let (count, ties) = (-kmax..=kmax)
                .into_par_iter()
                .map(|k1| lattice_line_count(h, k1 * k1, lo, hi))
                .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            Ok((count, ties))
        }
        _ => Err(Error::Domain(format!("torus dimension {dim} not supported"))),
    }
}

/// `N(h) = #{E_j in [E, E + h^delta)}` against the Liouville volume.
/// For `V = 0` the eigenvalues are counted on the lattice; otherwise the
/// truncated matrix is diagonalized. With `delta = 0` the reference is the
/// fixed-window volume of `{E <= p < E + 1}`.
pub fn run_weyl_count_experiment(
    v: &TorusPotential,
    e: f64,
    delta: f64,
    grid: &HGrid,
    margin: f64,
) -> Result<WeylCountResult> {
    if !(0.0..1.0 / 3.0).contains(&delta) {
        return Err(Error::Domain(format!(
            "delta = {delta}: the shrinking-window law requires 0 <= delta < 1/3"
        )));
    }
    let liouville = if delta == 0.0 {
        window_volume(v, e, e + 1.0)?
    } else {
        liouville_volume(v, e)?
    };
    let n = v.dim() as i32;
    let rows = grid
        .values()
        .into_par_iter()
        .map(|h| -> Result<WeylCountRow> {
            let width = h.powf(delta);
            let hi = e + width;
            let (count, ties) = if v.is_zero() {
                free_torus_count(v.dim(), h, e, hi)?
            } else {
                let modes = crate::schrodinger::k_rule(v, h, hi, margin);
                let size = (2 * modes + 1).pow(v.dim() as u32);
                if size > MAX_MATRIX_SIZE {
                    return Err(Error::Capability(format!(
                        "torus matrix of size {size} exceeds the dense limit {MAX_MATRIX_SIZE} (h = {h})"
                    )));
                }
                let op = assemble_contained(v, h, hi, margin)?;
                let dec = eigensolve(&op.matrix)?;
                let count = dec.eigenvalues.iter().filter(|&&x| x >= e && x < hi).count() as u64;
                let ties = dec
                    .eigenvalues
                    .iter()
                    .filter(|&&x| (x - e).abs() < TIE_TOLERANCE || (x - hi).abs() < TIE_TOLERANCE)
                    .count();
                (count, ties)
            };
            if ties > 0 {
                warn!("h = {h}: {ties} eigenvalue(s) within {TIE_TOLERANCE} of a window endpoint");
            }
            let scaled = (2.0 * PI).powi(n) * h.powf(n as f64 - delta) * count as f64;
            Ok(WeylCountRow {
                h,
                count,
                scaled,
                liouville,
                deviation: (scaled - liouville).abs() / liouville,
                ties,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

/// Trend test on the second half of a deviation sequence ordered by
/// decreasing `h`: the least-squares slope of `ln deviation` against
/// `ln h` is positive, i.e. deviations shrink as `h` decreases.
pub fn eventually_decreasing(hs: &[f64], deviations: &[f64]) -> bool {
    let start = hs.len() / 2;
    match fit_loglog(&hs[start..], &deviations[start..]) {
        Ok(fit) => fit.slope > 0.0 && fit.excluded.is_empty(),
        Err(_) => false,
    }
}
