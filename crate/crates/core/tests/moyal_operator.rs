use nalgebra::DMatrix;
use num_complex::Complex64;
use semiweyl::moyal::{moyal_compose, termination_order, verify_composition, PolySymbol};
use semiweyl::weylquant::{weyl_quantize_line, CMatrix, GridSpec, SymbolOnGrid};

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn quantize(g: &GridSpec, h: f64, p: &PolySymbol) -> CMatrix {
    let s = SymbolOnGrid::sample(*g, h, |y, eta| p.eval(y, eta, h)).unwrap();
    weyl_quantize_line(&s, g, h).unwrap().entries
}

/// Localized wave packets used as test vectors; columns of the result.
/// They are narrow enough that the periodic jump of `x` at the box edge
/// stays below round-off after differentiation.
fn packets(g: &GridSpec) -> CMatrix {
    let shapes = [(0.0, 0.0), (-1.0, 1.0), (1.2, -2.0), (0.4, 3.0)];
    DMatrix::from_fn(g.points(), shapes.len(), |i, k| {
        let (x0, w) = shapes[k];
        let x = g.x(i);
        Complex64::from_polar((-(x - x0).powi(2)).exp(), w * x)
    })
}

/// Relative Frobenius mismatch of `A (B V)` against `C V` on interior rows.
fn mismatch(g: &GridSpec, a: &CMatrix, b: &CMatrix, comp: &CMatrix) -> f64 {
    let v = packets(g);
    let lhs = a * (b * &v);
    let rhs = comp * &v;
    let r = g.interior(0.5);
    let l = lhs.rows(r.start, r.len());
    let d = &l - rhs.rows(r.start, r.len());
    d.norm() / l.norm()
}

#[test]
fn first_term_constant_matches_matrix_oracle() {
    let g = GridSpec::default();
    for &h in &[0.05, 0.2] {
        let a = quantize(&g, h, &PolySymbol::eta());
        let b = quantize(&g, h, &PolySymbol::y());
        let yeta = quantize(&g, h, &(&PolySymbol::y() * &PolySymbol::eta()));
        let v = packets(&g).column(0).into_owned();
        let w = &a * (&b * &v) - &yeta * &v;
        let r = g.interior(0.5);
        let vi = v.rows(r.start, r.len());
        let t = vi.dotc(&w.rows(r.start, r.len())) / vi.dotc(&vi);
        assert!((t - Complex64::new(0.0, -h / 2.0)).norm() < 1e-9, "h = {h}: {t}");
    }
}

#[test]
fn polynomial_composition_is_exact_on_operators() {
    let g = GridSpec::default();
    let pairs = [
        (PolySymbol::monomial(0, 2, c(1.0)), PolySymbol::y()),
        (
            PolySymbol::from_coeffs([((2, 0), c(1.0)), ((0, 2), c(1.0))]),
            PolySymbol::from_coeffs([((1, 1), c(1.0)), ((1, 0), c(-0.5))]),
        ),
        (
            PolySymbol::from_coeffs([((0, 3), c(1.0)), ((1, 0), c(2.0))]),
            PolySymbol::from_coeffs([((2, 0), c(1.0)), ((1, 1), Complex64::new(0.0, 0.3))]),
        ),
        (
            PolySymbol::from_coeffs([((2, 1), c(0.5)), ((0, 1), c(1.0))]),
            PolySymbol::from_coeffs([((1, 2), c(1.0)), ((0, 0), c(3.0))]),
        ),
    ];
    for &h in &[0.05, 0.1, 0.3] {
        for (s1, s2) in &pairs {
            let kmax = termination_order(s1, s2);
            let comp = moyal_compose(s1, s2, kmax, h);
            let err = mismatch(&g, &quantize(&g, h, s1), &quantize(&g, h, s2), &quantize(&g, h, &comp));
            assert!(err < 1e-8, "h = {h}, K = {kmax}: {err:e}");
        }
    }
}

#[test]
fn truncating_below_termination_is_visible() {
    let g = GridSpec::default();
    let h = 0.1;
    let s1 = PolySymbol::monomial(0, 2, c(1.0));
    let s2 = PolySymbol::monomial(2, 0, c(1.0));
    let short = moyal_compose(&s1, &s2, 1, h);
    let err = mismatch(&g, &quantize(&g, h, &s1), &quantize(&g, h, &s2), &quantize(&g, h, &short));
    assert!(err > 1e-4, "{err:e}");
}

#[test]
fn commutator_of_quadratics() {
    let g = GridSpec::default();
    let h = 0.1;
    let s1 = PolySymbol::from_coeffs([((2, 0), c(1.0)), ((0, 1), c(1.0))]);
    let s2 = PolySymbol::from_coeffs([((0, 2), c(1.0)), ((1, 0), c(0.5))]);
    let (a, b) = (quantize(&g, h, &s1), quantize(&g, h, &s2));
    let odd = semiweyl::moyal::moyal_term(&s1, &s2, 1, h).scale(c(2.0));
    let v = packets(&g);
    let lhs = &a * (&b * &v) - &b * (&a * &v);
    let rhs = quantize(&g, h, &odd) * &v;
    let r = g.interior(0.5);
    let l = lhs.rows(r.start, r.len());
    let err = (&l - rhs.rows(r.start, r.len())).norm() / l.norm();
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn unit_symbol_composes_to_round_off() {
    let g = GridSpec::new(8.0, 256).unwrap();
    let s1 = |y: f64, eta: f64| (-y * y - eta * eta).exp();
    let check = verify_composition(&g, s1, |_, _| 1.0, 0, &[0.3, 0.25, 0.2]).unwrap();
    assert!(check.residuals.iter().all(|r| r.residual < 1e-12 * r.product_norm.max(1.0)));
    assert!(check.floor_flagged());
    assert!(check.meets_order());
}

#[test]
fn first_order_residual_decays_linearly() {
    let g = GridSpec::new(8.0, 256).unwrap();
    let s1 = |y: f64, eta: f64| (-y * y - eta * eta).exp();
    let s2 = |y: f64, eta: f64| (-(y - 0.5).powi(2) - (eta - 0.3).powi(2)).exp();
    let hs = [0.4, 0.33, 0.27, 0.22];
    let k0 = verify_composition(&g, s1, s2, 0, &hs).unwrap();
    let k1 = verify_composition(&g, s1, s2, 1, &hs).unwrap();
    let (f0, f1) = (k0.fit.unwrap(), k1.fit.unwrap());
    assert!(f0.slope > 0.5 && f0.slope < 1.5, "{}", f0.slope);
    assert!(f1.slope > f0.slope + 0.5, "{} vs {}", f1.slope, f0.slope);
}
