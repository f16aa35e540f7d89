//! Bump functions, h-dependent cutoff windows and symbol-class diagnostics.
//!
//! The base bump is `chi(t) = exp(1 - 1/(1 - t^2))` on `(-1, 1)`. Its
//! derivatives are evaluated exactly through the representation
//! `chi^(j)(t) = chi(t) P_j(t) / (1 - t^2)^(2j)` with polynomials `P_j`
//! generated by a recurrence, so no finite-difference step has to be tuned.
//! A window family rescales the bump to `rho_h(x) = chi((x - E)/(c h^delta))`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::fit::fit_loglog;
use crate::quad::composite_gauss;

/// Highest derivative order the bump evaluators support.
pub const DEFAULT_MAX_DERIVATIVE: usize = 12;

/// Number of sampling intervals used for sup-norm estimates.
pub const SUP_NORM_SAMPLES: usize = 4096;

fn bump_polys() -> &'static Vec<Vec<f64>> {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        // P_{j+1} = (1 - t^2)^2 P_j' + (4 j t (1 - t^2) - 2 t) P_j
        let mut out: Vec<Vec<f64>> = vec![vec![1.0]];
        for j in 0..DEFAULT_MAX_DERIVATIVE + 1 {
            let p = &out[j];
            let mut next = vec![0.0; p.len() + 3];
            // (1 - 2t^2 + t^4) * P'
            for (k, &c) in p.iter().enumerate().skip(1) {
                let d = c * k as f64;
                next[k - 1] += d;
                next[k + 1] -= 2.0 * d;
                next[k + 3] += d;
            }
            // (4j - 2) t P - 4j t^3 P
            let jf = j as f64;
            for (k, &c) in p.iter().enumerate() {
                next[k + 1] += (4.0 * jf - 2.0) * c;
                next[k + 3] -= 4.0 * jf * c;
            }
            while next.len() > 1 && *next.last().unwrap() == 0.0 {
                next.pop();
            }
            out.push(next);
        }
        out
    })
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// `j`-th derivative of the standard bump on `[-1, 1]`. Zero for `|t| >= 1`.
pub fn standard_bump_derivative(j: usize, t: f64) -> f64 {
    if t.abs() >= 1.0 {
        return 0.0;
    }
    let u = 1.0 - t * t;
    let log_scale = 1.0 - 1.0 / u - 2.0 * j as f64 * u.ln();
    if log_scale < -745.0 {
        return 0.0;
    }
    log_scale.exp() * horner(&bump_polys()[j], t)
}

/// `int_{-1}^{1} chi(t) dt` for the standard bump.
pub fn standard_bump_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| 2.0 * bump_primitive(-1.0, 0.0))
}

fn bump_primitive(a: f64, b: f64) -> f64 {
    composite_gauss(|s| standard_bump_derivative(0, s), a, b, 8, 20)
}

/// Normalized primitive of the standard bump: 0 at `t <= -1`, 1 at `t >= 1`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else if t <= 0.0 {
        bump_primitive(-1.0, t) / standard_bump_mass()
    } else {
        1.0 - bump_primitive(t, 1.0) / standard_bump_mass()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BumpKind {
    StandardMollifier,
    Plateau,
}

/// Compactly supported smooth function with values in `[0, 1]`.
///
/// `StandardMollifier` is the bump affinely mapped onto `support`.
/// `Plateau` equals 1 on `plateau` and ramps down to 0 at the ends of
/// `support`; each ramp is the primitive of a rescaled bump, i.e. the
/// indicator of the plateau smoothed by convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpFunction {
    kind: BumpKind,
    support: (f64, f64),
    plateau: Option<(f64, f64)>,
    max_derivative_order: usize,
}

impl BumpFunction {
    /// The standard bump on `[-1, 1]`.
    pub fn standard() -> Self {
        Self::standard_on(-1.0, 1.0).expect("valid interval")
    }

    pub fn standard_on(a: f64, b: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Domain(format!("bump support [{a}, {b}] is empty")));
        }
        Ok(Self {
            kind: BumpKind::StandardMollifier,
            support: (a, b),
            plateau: None,
            max_derivative_order: DEFAULT_MAX_DERIVATIVE,
        })
    }

    /// Smoothed indicator: 1 on `[p, q]`, 0 outside `[a, b]`.
    pub fn plateau(support: (f64, f64), plateau: (f64, f64)) -> Result<Self> {
        let (a, b) = support;
        let (p, q) = plateau;
        if !(a < p && p <= q && q < b) {
            return Err(Error::Domain(format!(
                "plateau [{p}, {q}] must lie strictly inside support [{a}, {b}]"
            )));
        }
        Ok(Self {
            kind: BumpKind::Plateau,
            support,
            plateau: Some(plateau),
            max_derivative_order: DEFAULT_MAX_DERIVATIVE,
        })
    }

    /// Plateau bump on `[-outer, outer]` equal to 1 on `[-inner, inner]`.
    pub fn symmetric_plateau(inner: f64, outer: f64) -> Result<Self> {
        Self::plateau((-outer, outer), (-inner, inner))
    }

    pub fn kind(&self) -> BumpKind {
        self.kind
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn plateau_interval(&self) -> Option<(f64, f64)> {
        self.plateau
    }

    pub fn max_derivative_order(&self) -> usize {
        self.max_derivative_order
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(0, x)
    }

    /// `j`-th derivative at `x`; fails for `j` above the supported order.
    pub fn derivative(&self, j: usize, x: f64) -> Result<f64> {
        if j > self.max_derivative_order {
            return Err(Error::Capability(format!(
                "derivative order {j} exceeds supported order {}",
                self.max_derivative_order
            )));
        }
        Ok(self.eval(j, x))
    }

    pub(crate) fn eval(&self, j: usize, x: f64) -> f64 {
        let (a, b) = self.support;
        if x <= a || x >= b {
            return 0.0;
        }
        match self.kind {
            BumpKind::StandardMollifier => {
                let scale = 2.0 / (b - a);
                let t = (2.0 * x - a - b) / (b - a);
                standard_bump_derivative(j, t) * scale.powi(j as i32)
            }
            BumpKind::Plateau => {
                let (p, q) = self.plateau.expect("plateau bump has a plateau");
                if x >= p && x <= q {
                    return if j == 0 { 1.0 } else { 0.0 };
                }
                let mass = standard_bump_mass();
                if x < p {
                    let scale = 2.0 / (p - a);
                    let t = scale * (x - a) - 1.0;
                    if j == 0 {
                        smooth_step(t)
                    } else {
                        scale.powi(j as i32) * standard_bump_derivative(j - 1, t) / mass
                    }
                } else {
                    let scale = 2.0 / (b - q);
                    let t = scale * (b - x) - 1.0;
                    if j == 0 {
                        smooth_step(t)
                    } else {
                        let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
                        sign * scale.powi(j as i32) * standard_bump_derivative(j - 1, t) / mass
                    }
                }
            }
        }
    }
}

/// Order functions used to grade symbol growth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderFunction {
    One,
    /// `1 + |eta|^2`.
    JapBracketSq,
}

impl OrderFunction {
    pub fn eval(&self, eta: &[f64]) -> f64 {
        match self {
            OrderFunction::One => 1.0,
            OrderFunction::JapBracketSq => 1.0 + eta.iter().map(|e| e * e).sum::<f64>(),
        }
    }
}

/// The window family `rho_h(x) = chi((x - E) / (c h^delta))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffFamily {
    base: BumpFunction,
    center: f64,
    delta: f64,
    width_scale: f64,
}

/// Builds a shrinking window family around `center`.
pub fn make_window_family(
    base: BumpFunction,
    center: f64,
    delta: f64,
    width_scale: f64,
) -> Result<CutoffFamily> {
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::Domain(format!(
            "delta = {delta}: theory requires 0 <= delta < 1/2"
        )));
    }
    if !(width_scale > 0.0) || !width_scale.is_finite() {
        return Err(Error::Domain(format!("width scale c = {width_scale} must be positive")));
    }
    if !center.is_finite() {
        return Err(Error::Domain("window center must be finite".into()));
    }
    Ok(CutoffFamily {
        base,
        center,
        delta,
        width_scale,
    })
}

impl CutoffFamily {
    pub fn base(&self) -> &BumpFunction {
        &self.base
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn width_scale(&self) -> f64 {
        self.width_scale
    }

    /// Window scale `c h^delta`.
    pub fn width(&self, h: f64) -> f64 {
        self.width_scale * h.powf(self.delta)
    }

    pub fn value(&self, x: f64, h: f64) -> f64 {
        self.base.eval(0, (x - self.center) / self.width(h))
    }

    /// `j`-th derivative of `rho_h` in `x`.
    pub fn derivative(&self, j: usize, x: f64, h: f64) -> Result<f64> {
        let w = self.width(h);
        Ok(self.base.derivative(j, (x - self.center) / w)? * w.powi(-(j as i32)))
    }

    /// Support of `rho_h`.
    pub fn support(&self, h: f64) -> (f64, f64) {
        let (a, b) = self.base.support();
        let w = self.width(h);
        (self.center + w * a, self.center + w * b)
    }

    /// Fixed compact interval containing every support for `h` in `(0, 1]`.
    pub fn compact_interval(&self) -> (f64, f64) {
        let (a, b) = self.base.support();
        let c = self.width_scale;
        (self.center + c * a.min(0.0), self.center + c * b.max(0.0))
    }
}

/// Maximum of `|rho_h^(j)|` over a dense sample of the support.
pub fn deriv_sup_norm(fam: &CutoffFamily, j: usize, h: f64) -> Result<f64> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Domain(format!("h = {h} must lie in (0, 1]")));
    }
    if j > fam.base.max_derivative_order() {
        return Err(Error::Capability(format!(
            "derivative order {j} exceeds supported order {}",
            fam.base.max_derivative_order()
        )));
    }
    let (lo, hi) = fam.support(h);
    let step = (hi - lo) / SUP_NORM_SAMPLES as f64;
    let mut best = 0.0f64;
    for i in 0..=SUP_NORM_SAMPLES {
        let x = lo + i as f64 * step;
        best = best.max(fam.derivative(j, x, h)?.abs());
    }
    Ok(best)
}

/// Fitted growth exponents of `||rho_h^(j)||_inf` in `h` for `j = 0..=j_max`.
/// Membership in the class predicts exponents close to `-delta * j`.
pub fn estimate_class_exponents(
    fam: &CutoffFamily,
    j_max: usize,
    h_grid: &[f64],
) -> Result<Vec<(usize, f64)>> {
    if h_grid.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 h values, have {}",
            h_grid.len()
        )));
    }
    (0..=j_max)
        .map(|j| {
            let norms = h_grid
                .iter()
                .map(|&h| deriv_sup_norm(fam, j, h))
                .collect::<Result<Vec<f64>>>()?;
            Ok((j, fit_loglog(h_grid, &norms)?.slope))
        })
        .collect()
}
