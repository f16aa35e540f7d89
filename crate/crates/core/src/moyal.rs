//! Composition (Moyal) expansion of Weyl symbols.
//!
//! With `D = -i d` and `sigma(x, xi; y, eta) = xi y - x eta`, the k-th term is
//!
//! `(1/k!) ((ih/2) sigma(D_x, D_xi; D_y, D_eta))^k s1(x, xi) s2(y, eta)`
//!
//! restricted to `y = x, eta = xi`. Expanding the power gives
//!
//! `(1/k!) (ih/2)^k sum_a C(k, a) (-1)^a (d_x^{k-a} d_xi^a s1)(d_y^a d_eta^{k-a} s2)`,
//!
//! which is what both the exact polynomial path and the sampled path use.

use std::collections::BTreeMap;
use std::ops::{Add, Mul};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fit::{fit_loglog, RemainderFit};
use crate::weylquant::{spectral_norm, weyl_quantize_line, CMatrix, GridSpec, SymbolOnGrid};

/// Exponents `(y, eta, h)` of a monomial `y^a eta^b h^c`.
pub type Monomial = (u32, u32, u32);

/// Polynomial symbol in `(y, eta)` whose coefficients may carry explicit
/// powers of `h`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolySymbol {
    terms: BTreeMap<Monomial, Complex64>,
}

impl PolySymbol {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Complex64) -> Self {
        Self::monomial(0, 0, c)
    }

    /// `c y^dy eta^deta`.
    pub fn monomial(dy: u32, deta: u32, c: Complex64) -> Self {
        let mut out = Self::zero();
        out.add_term((dy, deta, 0), c);
        out
    }

    pub fn y() -> Self {
        Self::monomial(1, 0, Complex64::new(1.0, 0.0))
    }

    pub fn eta() -> Self {
        Self::monomial(0, 1, Complex64::new(1.0, 0.0))
    }

    /// Builds a polynomial from `((dy, deta), coefficient)` pairs.
    pub fn from_coeffs<I: IntoIterator<Item = ((u32, u32), Complex64)>>(coeffs: I) -> Self {
        let mut out = Self::zero();
        for ((a, b), c) in coeffs {
            out.add_term((a, b, 0), c);
        }
        out
    }

    fn add_term(&mut self, key: Monomial, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let entry = self.terms.entry(key).or_insert(Complex64::new(0.0, 0.0));
        *entry += c;
        if *entry == Complex64::new(0.0, 0.0) {
            self.terms.remove(&key);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Complex64)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, dy: u32, deta: u32, hpow: u32) -> Complex64 {
        self.terms.get(&(dy, deta, hpow)).copied().unwrap_or_default()
    }

    /// Total degree in `(y, eta)`; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|(a, b, _)| a + b).max()
    }

    /// Highest power of `h` carried by any coefficient.
    pub fn h_degree(&self) -> Option<u32> {
        self.terms.keys().map(|k| k.2).max()
    }

    pub fn eval(&self, y: f64, eta: f64, h: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|(&(a, b, c), coef)| coef * y.powi(a as i32) * eta.powi(b as i32) * h.powi(c as i32))
            .sum()
    }

    /// Substitutes a numerical `h`, folding h-powers into the coefficients.
    pub fn at_h(&self, h: f64) -> Self {
        let mut out = Self::zero();
        for (&(a, b, c), coef) in &self.terms {
            out.add_term((a, b, 0), coef * h.powi(c as i32));
        }
        out
    }

    /// `d_y^ny d_eta^neta`.
    pub fn derivative(&self, ny: u32, neta: u32) -> Self {
        let mut out = Self::zero();
        for (&(a, b, c), coef) in &self.terms {
            if a < ny || b < neta {
                continue;
            }
            let fa: f64 = ((a - ny + 1)..=a).map(|v| v as f64).product();
            let fb: f64 = ((b - neta + 1)..=b).map(|v| v as f64).product();
            out.add_term((a - ny, b - neta, c), coef * fa * fb);
        }
        out
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = Self::zero();
        for (k, v) in &self.terms {
            out.add_term(*k, v * c);
        }
        out
    }

    /// Multiplies by `h^p`.
    pub fn times_h_power(&self, p: u32) -> Self {
        let mut out = Self::zero();
        for (&(a, b, c), v) in &self.terms {
            out.add_term((a, b, c + p), *v);
        }
        out
    }

    /// Largest coefficient modulus.
    pub fn max_coefficient(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

impl Add for &PolySymbol {
    type Output = PolySymbol;
    fn add(self, rhs: &PolySymbol) -> PolySymbol {
        let mut out = self.clone();
        for (k, v) in &rhs.terms {
            out.add_term(*k, *v);
        }
        out
    }
}

impl Mul for &PolySymbol {
    type Output = PolySymbol;
    fn mul(self, rhs: &PolySymbol) -> PolySymbol {
        let mut out = PolySymbol::zero();
        for (&(a1, b1, c1), v1) in &self.terms {
            for (&(a2, b2, c2), v2) in &rhs.terms {
                out.add_term((a1 + a2, b1 + b2, c1 + c2), v1 * v2);
            }
        }
        out
    }
}

fn binomial(k: u32, a: u32) -> f64 {
    (1..=a).fold(1.0, |acc, i| acc * (k - a + i) as f64 / i as f64)
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// `(1/k!) (i/2)^k C(k, a) (-1)^a`: the h-free weight of the `a`-th
/// summand of the k-th term.
fn term_weight(k: u32, a: u32) -> Complex64 {
    let ihalf = Complex64::new(0.0, 0.5).powu(k);
    let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
    ihalf * (binomial(k, a) * sign / factorial(k))
}

/// k-th composition term with the factor `h^k` kept symbolic.
pub fn moyal_term_symbolic(s1: &PolySymbol, s2: &PolySymbol, k: u32) -> PolySymbol {
    let mut out = PolySymbol::zero();
    for a in 0..=k {
        let left = s1.derivative(k - a, a);
        let right = s2.derivative(a, k - a);
        if left.is_zero() || right.is_zero() {
            continue;
        }
        out = &out + &(&left * &right).scale(term_weight(k, a));
    }
    out.times_h_power(k)
}

/// k-th composition term evaluated at `h`.
pub fn moyal_term(s1: &PolySymbol, s2: &PolySymbol, k: u32, h: f64) -> PolySymbol {
    moyal_term_symbolic(s1, s2, k).at_h(h)
}

/// Sum of the composition terms `k = 0..=max_k` at `h`. For polynomials of
/// degrees `d1`, `d2` the series terminates at `min(d1, d2)`, so the result
/// is the exact symbol of the product once `max_k >= min(d1, d2)`.
pub fn moyal_compose(s1: &PolySymbol, s2: &PolySymbol, max_k: u32, h: f64) -> PolySymbol {
    let mut out = PolySymbol::zero();
    for k in 0..=max_k {
        out = &out + &moyal_term(s1, s2, k, h);
    }
    out
}

/// Order at which the expansion of two polynomials terminates.
pub fn termination_order(s1: &PolySymbol, s2: &PolySymbol) -> u32 {
    s1.degree().unwrap_or(0).min(s2.degree().unwrap_or(0))
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    out.par_chunks_mut(rows).enumerate().for_each(|(c, dst)| {
        for (r, v) in dst.iter_mut().enumerate() {
            *v = data[r * cols + c];
        }
    });
    out
}

/// Signed FFT index.
fn signed_index(idx: usize, n: usize) -> f64 {
    if idx <= n / 2 {
        idx as f64
    } else {
        idx as f64 - n as f64
    }
}

/// `(i kappa)^order`, with the Nyquist mode dropped for odd orders.
fn multiplier(idx: usize, n: usize, period: f64, order: u32) -> Complex64 {
    if order == 0 {
        return Complex64::new(1.0, 0.0);
    }
    if idx == n / 2 && order % 2 == 1 {
        return Complex64::new(0.0, 0.0);
    }
    let kappa = 2.0 * std::f64::consts::PI * signed_index(idx, n) / period;
    Complex64::new(0.0, kappa).powu(order)
}

/// Two-dimensional discrete Fourier transform of a sampled symbol, kept in
/// `(eta-frequency, y-frequency)` layout so that any mixed derivative is a
/// pointwise multiplier followed by one inverse transform.
#[derive(Debug, Clone)]
pub struct SpectralSymbol {
    grid: GridSpec,
    h: f64,
    hat: Vec<Complex64>,
}

impl SpectralSymbol {
    pub fn new(s: &SymbolOnGrid) -> Self {
        let grid = *s.grid();
        let n_eta = grid.points();
        let n_y = 2 * n_eta;
        let mut planner = FftPlanner::<f64>::new();
        let f_eta = planner.plan_fft_forward(n_eta);
        let f_y = planner.plan_fft_forward(n_y);
        let mut data = s.values().to_vec();
        data.par_chunks_mut(n_eta).for_each(|row| f_eta.process(row));
        let mut hat = transpose(&data, n_y, n_eta);
        hat.par_chunks_mut(n_y).for_each(|row| f_y.process(row));
        Self { grid, h: s.h(), hat }
    }

    /// `d_y^ny d_eta^neta` of the underlying symbol, treating the
    /// phase-space box as periodic.
    pub fn derivative(&self, ny: u32, neta: u32) -> Result<SymbolOnGrid> {
        let grid = self.grid;
        let n_eta = grid.points();
        let n_y = 2 * n_eta;
        let period_y = 2.0 * grid.half_width();
        let period_eta = n_eta as f64 * grid.deta(self.h);
        let my: Vec<Complex64> = (0..n_y).map(|i| multiplier(i, n_y, period_y, ny)).collect();
        let mut planner = FftPlanner::<f64>::new();
        let i_eta = planner.plan_fft_inverse(n_eta);
        let i_y = planner.plan_fft_inverse(n_y);
        let mut work = self.hat.clone();
        work.par_chunks_mut(n_y).enumerate().for_each(|(ke, row)| {
            let me = multiplier(ke, n_eta, period_eta, neta);
            for (v, m) in row.iter_mut().zip(&my) {
                *v *= m * me;
            }
            i_y.process(row);
        });
        let mut data = transpose(&work, n_eta, n_y);
        let scale = 1.0 / (n_eta * n_y) as f64;
        data.par_chunks_mut(n_eta).for_each(|row| {
            i_eta.process(row);
            for v in row.iter_mut() {
                *v *= scale;
            }
        });
        SymbolOnGrid::from_values(grid, self.h, data, false)
    }
}

/// Spectral partial derivative `d_y^ny d_eta^neta` of a sampled symbol.
pub fn spectral_derivative(s: &SymbolOnGrid, ny: u32, neta: u32) -> Result<SymbolOnGrid> {
    if ny == 0 && neta == 0 {
        return Ok(s.clone());
    }
    SpectralSymbol::new(s).derivative(ny, neta)
}

fn accumulate(acc: Option<SymbolOnGrid>, term: SymbolOnGrid) -> Result<SymbolOnGrid> {
    match acc {
        None => Ok(term),
        Some(prev) => prev.zip_with(&term, |u, v| u + v),
    }
}

fn term_from_spectra(
    s1: &SymbolOnGrid,
    s2: &SymbolOnGrid,
    f1: &SpectralSymbol,
    f2: &SpectralSymbol,
    k: u32,
) -> Result<SymbolOnGrid> {
    if k == 0 {
        return s1.zip_with(s2, |u, v| u * v);
    }
    let h = s1.h();
    let mut acc = None;
    for a in 0..=k {
        let left = f1.derivative(k - a, a)?;
        let right = f2.derivative(a, k - a)?;
        let w = term_weight(k, a) * h.powi(k as i32);
        acc = Some(accumulate(acc, left.zip_with(&right, |u, v| u * v * w)?)?);
    }
    acc.ok_or_else(|| Error::Domain("empty composition term".into()))
}

/// k-th composition term of two sampled symbols, with spectral
/// differentiation on the phase-space grid.
pub fn moyal_term_sampled(s1: &SymbolOnGrid, s2: &SymbolOnGrid, k: u32) -> Result<SymbolOnGrid> {
    let (f1, f2) = (SpectralSymbol::new(s1), SpectralSymbol::new(s2));
    term_from_spectra(s1, s2, &f1, &f2, k)
}

/// Sum of sampled composition terms up to `max_k`.
pub fn moyal_compose_sampled(s1: &SymbolOnGrid, s2: &SymbolOnGrid, max_k: u32) -> Result<SymbolOnGrid> {
    let (f1, f2) = (SpectralSymbol::new(s1), SpectralSymbol::new(s2));
    let mut acc = None;
    for k in 0..=max_k {
        acc = Some(accumulate(acc, term_from_spectra(s1, s2, &f1, &f2, k)?)?);
    }
    acc.ok_or_else(|| Error::Domain("empty composition".into()))
}

/// Per-h residual of the truncated composition formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositionResidual {
    pub h: f64,
    pub max_k: u32,
    /// `||Op(s1) Op(s2) - Op(sum_{k <= K} terms)||_2` on the grid interior.
    pub residual: f64,
    /// Spectral norm of the product on the interior.
    pub product_norm: f64,
    /// Residual is at the round-off floor.
    pub at_floor: bool,
}

/// Residuals and fitted order for one truncation order `K`.
#[derive(Debug, Clone)]
pub struct CompositionCheck {
    pub max_k: u32,
    pub residuals: Vec<CompositionResidual>,
    /// Fit over the points above the round-off floor; `None` if fewer than
    /// three remain.
    pub fit: Option<RemainderFit>,
}

impl CompositionCheck {
    /// Slope at least `K + 1 - 0.3`, or every residual at the floor.
    pub fn meets_order(&self) -> bool {
        match &self.fit {
            Some(f) => f.slope >= self.max_k as f64 + 1.0 - 0.3,
            None => self.residuals.iter().all(|r| r.at_floor),
        }
    }

    /// True if some residuals were dropped from the fit.
    pub fn floor_flagged(&self) -> bool {
        self.residuals.iter().any(|r| r.at_floor)
    }
}

/// Relative residual below which a composition residual counts as round-off.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Interior block of `A B`, computed from the needed rows and columns only.
fn interior_product(a: &CMatrix, b: &CMatrix, range: std::ops::Range<usize>) -> CMatrix {
    let rows = a.rows(range.start, range.len());
    let cols = b.columns(range.start, range.len());
    rows * cols
}

/// Residual of the composition formula truncated at `max_k`, as a
/// function of `h`.
pub fn verify_composition<F1, F2>(
    grid: &GridSpec,
    s1: F1,
    s2: F2,
    max_k: u32,
    h_grid: &[f64],
) -> Result<CompositionCheck>
where
    F1: Fn(f64, f64) -> f64 + Sync,
    F2: Fn(f64, f64) -> f64 + Sync,
{
    let mut out = verify_composition_orders(grid, s1, s2, &[max_k], h_grid)?;
    Ok(out.remove(0))
}

/// Same as [`verify_composition`] for several truncation orders at once;
/// the operator product is formed once per `h`.
///
/// The symbols need not be compactly supported individually, but their
/// pointwise product must vanish on the edge of the phase-space box.
pub fn verify_composition_orders<F1, F2>(
    grid: &GridSpec,
    s1: F1,
    s2: F2,
    orders: &[u32],
    h_grid: &[f64],
) -> Result<Vec<CompositionCheck>>
where
    F1: Fn(f64, f64) -> f64 + Sync,
    F2: Fn(f64, f64) -> f64 + Sync,
{
    if let Some(&k) = orders.iter().find(|&&k| k > 3) {
        return Err(Error::Domain(format!("expansion order {k} above supported 3")));
    }
    let top = orders.iter().copied().max().unwrap_or(0);
    let interior = grid.interior(0.5);
    let mut per_order: Vec<Vec<CompositionResidual>> = vec![Vec::new(); orders.len()];
    for &h in h_grid {
        let a = SymbolOnGrid::sample_real(*grid, h, &s1)?;
        let b = SymbolOnGrid::sample_real(*grid, h, &s2)?;
        let edge = a.zip_with(&b, |u, v| u * v)?.edge_fraction();
        if edge > crate::weylquant::EDGE_TOLERANCE {
            return Err(Error::Resolution(format!(
                "symbol product reaches the phase-space box edge at h = {h} (relative size {edge:.3e})"
            )));
        }
        let op_a = weyl_quantize_line(&a, grid, h)?;
        let op_b = weyl_quantize_line(&b, grid, h)?;
        let prod = interior_product(&op_a.entries, &op_b.entries, interior.clone());
        let product_norm = spectral_norm(&prod);
        let (fa, fb) = (SpectralSymbol::new(&a), SpectralSymbol::new(&b));
        let mut partial: Vec<SymbolOnGrid> = Vec::with_capacity(top as usize + 1);
        let mut acc = None;
        for k in 0..=top {
            let sum = accumulate(acc, term_from_spectra(&a, &b, &fa, &fb, k)?)?;
            partial.push(sum.clone());
            acc = Some(sum);
        }
        for (slot, &k) in orders.iter().enumerate() {
            let op_c = weyl_quantize_line(&partial[k as usize], grid, h)?.restrict(interior.clone());
            let residual = spectral_norm(&(&prod - &op_c.entries));
            let at_floor = residual <= ROUNDOFF_FLOOR * product_norm;
            per_order[slot].push(CompositionResidual {
                h,
                max_k: k,
                residual,
                product_norm,
                at_floor,
            });
        }
    }
    per_order
        .into_iter()
        .zip(orders)
        .map(|(residuals, &max_k)| {
            let (hs, rs): (Vec<f64>, Vec<f64>) = residuals
                .iter()
                .filter(|r| !r.at_floor)
                .map(|r| (r.h, r.residual))
                .unzip();
            if rs.len() < residuals.len() {
                log::info!(
                    "composition check K = {max_k}: {} of {} residuals at round-off floor, fit restricted",
                    residuals.len() - rs.len(),
                    residuals.len()
                );
            }
            let fit = if rs.len() >= 3 { Some(fit_loglog(&hs, &rs)?) } else { None };
            Ok(CompositionCheck { max_k, residuals, fit })
        })
        .collect()
}
