use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use semiweyl::cli::{parse_config, Experiment, ExperimentConfig};
use semiweyl::experiments::{
    free_torus_count, liouville_volume, thin_shell_volume, HGrid, ShellSampling,
};
use semiweyl::fit::fit_loglog;
use semiweyl::hsfunc::{hs_funcalc, resolvent_norm_probe, SampledFunction};
use semiweyl::moyal::{moyal_compose, moyal_term, PolySymbol};
use semiweyl::schrodinger::{assemble_contained, eigensolve, spectral_funcalc, TorusPotential};
use semiweyl::symbolfam::{make_window_family, BumpFunction};
use semiweyl::weylquant::{
    hermitian_defect, quantize_torus, weyl_quantize_line, Basis, CMatrix, GridSpec, OperatorMatrix,
    SymbolOnGrid,
};

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn poly(coeffs: &[(u32, u32, f64)]) -> PolySymbol {
    PolySymbol::from_coeffs(coeffs.iter().map(|&(a, b, v)| ((a, b), c(v))))
}

/// Hermitian matrix `U diag(evs) U*` with `U` from a QR factorization.
fn hermitian_with(evs: &[f64], seed: &[f64]) -> CMatrix {
    let n = evs.len();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let k = i * n + j;
        Complex64::new(seed[k % seed.len()] + (k as f64).sin(), seed[(k + 3) % seed.len()] - (k as f64).cos())
    });
    let q = m.qr().q();
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, evs.iter().map(|&e| c(e))));
    &q * d * q.adjoint()
}

fn config_strategy() -> impl Strategy<Value = (f64, f64, f64, f64, usize, u64)> {
    (
        -5.0..10.0f64,
        0.0..0.49f64,
        0.1..5.0f64,
        0.05..1.0f64,
        6usize..20,
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_rule_is_exact(
        e in -5.0..5.0f64,
        delta in 0.0..0.49f64,
        width in 0.1..5.0f64,
        h in 1e-4..1.0f64,
        t in -0.999..0.999f64,
    ) {
        let fam = make_window_family(BumpFunction::standard(), e, delta, width).unwrap();
        let x = e + width * h.powf(delta) * t;
        let chi = BumpFunction::standard().value(t);
        prop_assert!((fam.value(x, h) - chi).abs() <= 1e-13 * chi + 1e-15);
    }

    #[test]
    fn window_support_stays_in_compact_interval(
        e in -5.0..5.0f64,
        delta in 0.0..0.49f64,
        width in 0.1..5.0f64,
        h in 1e-6..1.0f64,
    ) {
        let fam = make_window_family(BumpFunction::standard(), e, delta, width).unwrap();
        let (lo, hi) = fam.support(h);
        let (clo, chi) = fam.compact_interval();
        prop_assert!(lo >= clo - 1e-12 && hi <= chi + 1e-12);
        prop_assert!(hi - lo <= 2.0 * width * (1.0 + 1e-12));
    }

    #[test]
    fn counting_is_monotone_in_window_width(
        h in 0.005..0.3f64,
        lo in 0.0..3.0f64,
        w1 in 0.01..1.0f64,
        extra in 0.0..1.0f64,
        dim in 1usize..=2,
    ) {
        let (n1, _) = free_torus_count(dim, h, lo, lo + w1).unwrap();
        let (n2, _) = free_torus_count(dim, h, lo, lo + w1 + extra).unwrap();
        prop_assert!(n1 <= n2);
    }

    #[test]
    fn fit_recovers_exact_power_laws(
        slope in -4.0..4.0f64,
        scale in 0.01..100.0f64,
        h_max in 0.1..1.0f64,
        ratio in 0.3..0.9f64,
        count in 6usize..14,
    ) {
        let hs = HGrid::new(h_max, ratio, count).unwrap().values();
        let ys: Vec<f64> = hs.iter().map(|h| scale * h.powf(slope)).collect();
        let fit = fit_loglog(&hs, &ys).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - scale.ln()).abs() < 1e-8);
        prop_assert!(fit.r_squared > 1.0 - 1e-9 || slope.abs() < 1e-6);
    }

    #[test]
    fn h_grids_are_geometric_and_decreasing(
        h_max in 1e-3..1.0f64,
        ratio in 0.05..0.95f64,
        count in 6usize..40,
    ) {
        let g = HGrid::new(h_max, ratio, count).unwrap();
        let hs = g.values();
        prop_assert_eq!(hs.len(), count);
        prop_assert_eq!(hs[0], h_max);
        for w in hs.windows(2) {
            prop_assert!(w[1] < w[0] && w[1] > 0.0);
            prop_assert!((w[1] / w[0] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn config_echo_round_trips((e, delta, width, h_max, count, seed) in config_strategy()) {
        let text = format!(
            "experiment = trace_formula\nE = {e:?}\ndelta = {delta:?}\nc = {width:?}\n\
             h_max = {h_max:?}\nh_min = {:?}\nh_count = {count}\nseed = {seed}\n",
            h_max / 10.0
        );
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!(cfg.energy, e);
        prop_assert_eq!(cfg.seed, seed);
        let again = parse_config(&cfg.echo()).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.echo(), cfg.echo());
    }

    #[test]
    fn resolvent_norm_is_bounded_by_distance_to_axis(
        evs in prop::collection::vec(-3.0..3.0f64, 2..8),
        seed in prop::collection::vec(-1.0..1.0f64, 8),
        zr in prop::collection::vec(-4.0..4.0f64, 5),
        zi in prop::collection::vec(0.01..2.0f64, 5),
    ) {
        let p = OperatorMatrix::new(hermitian_with(&evs, &seed), Basis::Abstract, f64::NAN);
        let zs: Vec<Complex64> = zr
            .iter()
            .zip(&zi)
            .enumerate()
            .map(|(k, (&x, &y))| Complex64::new(x, if k % 2 == 0 { y } else { -y }))
            .collect();
        for (z, norm) in resolvent_norm_probe(&p, &zs).unwrap() {
            prop_assert!(norm <= 1.0 / z.im.abs() + 1e-10, "z = {z}: {norm}");
        }
    }

    #[test]
    fn moyal_commutator_keeps_odd_terms(
        a in prop::collection::vec(-2.0..2.0f64, 6),
        b in prop::collection::vec(-2.0..2.0f64, 6),
        h in 0.01..1.0f64,
    ) {
        let monos = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)];
        let s1 = poly(&monos.iter().zip(&a).map(|(&(p, q), &v)| (p, q, v)).collect::<Vec<_>>());
        let s2 = poly(&monos.iter().zip(&b).map(|(&(p, q), &v)| (p, q, v)).collect::<Vec<_>>());
        let comm = &moyal_compose(&s1, &s2, 4, h) + &moyal_compose(&s2, &s1, 4, h).scale(c(-1.0));
        let odd = (&moyal_term(&s1, &s2, 1, h) + &moyal_term(&s1, &s2, 3, h)).scale(c(2.0));
        prop_assert!((&comm + &odd.scale(c(-1.0))).max_coefficient() < 1e-12);
        // terms beyond the smaller degree vanish
        prop_assert!(moyal_term(&s1, &s2, 3, h).max_coefficient() == 0.0);
        let prod = moyal_term(&s1, &s2, 0, h);
        prop_assert!(prod.degree().unwrap_or(0) <= 4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn real_symbols_quantize_to_hermitian_matrices(
        amp in prop::collection::vec(-2.0..2.0f64, 3),
        h in 0.05..0.5f64,
    ) {
        let g = GridSpec::new(8.0, 128).unwrap();
        let s = SymbolOnGrid::sample_real(g, h, |y, eta| {
            amp[0] * (-y * y).exp() * (amp[1] * eta).cos() + amp[2] * y.sin() * (-eta * eta).exp()
        })
        .unwrap();
        let a = weyl_quantize_line(&s, &g, h).unwrap();
        prop_assert!(hermitian_defect(&a.entries) < 1e-12);
        let t = quantize_torus(1, 12, h, |x, xi| c(amp[0] * x[0].cos() + amp[1] * xi[0] * xi[0] + amp[2])).unwrap();
        prop_assert!(hermitian_defect(&t.entries) < 1e-12);
    }

    #[test]
    fn momentum_symbols_are_diagonal_on_the_torus(
        a in -2.0..2.0f64,
        b in 0.1..3.0f64,
        h in 0.02..0.5f64,
        modes in 2usize..20,
    ) {
        let g = |xi: f64| (-(xi - a).powi(2)).exp() + b * (xi * b).cos();
        let t = quantize_torus(1, modes, h, |_, xi| c(g(xi[0]))).unwrap();
        let size = 2 * modes + 1;
        for r in 0..size {
            for col in 0..size {
                let k = col as f64 - modes as f64;
                let expect = if r == col { g(h * k) } else { 0.0 };
                prop_assert!((t.entries[(r, col)] - c(expect)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn spectral_mapping_and_trace_identity(
        amp in 0.0..2.0f64,
        h in 0.05..0.3f64,
        e in 0.0..3.0f64,
        delta in 0.0..0.49f64,
        width in 0.2..2.0f64,
    ) {
        let v = TorusPotential::cosine(1, amp).unwrap();
        let fam = make_window_family(BumpFunction::standard(), e, delta, width).unwrap();
        let e_max = fam.support(h).1;
        let op = assemble_contained(&v, h, e_max, 5.0).unwrap();
        let dec = eigensolve(&op.matrix).unwrap();
        let rho = spectral_funcalc(&dec, &fam, h);
        prop_assert!(hermitian_defect(&rho.entries) < 1e-12);

        let oracle: f64 = dec.eigenvalues.iter().map(|&x| fam.value(x, h)).sum();
        let tr = rho.trace();
        prop_assert!((tr.re - oracle).abs() < 1e-10 && tr.im.abs() < 1e-10, "{tr} vs {oracle}");

        let mut got = eigensolve(&rho).unwrap().eigenvalues;
        let mut want: Vec<f64> = dec.weights(|x| fam.value(x, h));
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (x, y) in got.iter().zip(&want) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn functions_with_nested_supports_compose(
        amp in 0.0..1.5f64,
        h in 0.05..0.3f64,
        e in 0.5..3.0f64,
        width in 0.2..1.0f64,
    ) {
        let v = TorusPotential::cosine(1, amp).unwrap();
        let op = assemble_contained(&v, h, e + 3.0 * width, 5.0).unwrap();
        let dec = eigensolve(&op.matrix).unwrap();
        let f = make_window_family(BumpFunction::standard(), e, 0.0, width).unwrap();
        let plateau = BumpFunction::symmetric_plateau(width, 2.0 * width).unwrap();
        let fp = dec.apply(|x| f.value(x, h));
        let gp = dec.apply(|x| plateau.value(x - e));
        let d = &fp.entries * &gp.entries - &fp.entries;
        prop_assert!(d.norm() < 1e-10 * fp.entries.norm().max(1.0));
        let sq = dec.apply(|x| f.value(x, h).powi(2));
        prop_assert!((&fp.entries * &fp.entries - &sq.entries).norm() < 1e-10 * sq.entries.norm().max(1.0));
    }

    #[test]
    fn liouville_quadrature_matches_thin_shell(
        amp in 0.1..2.0f64,
        e_offset in 0.0..1.0f64,
        above in any::<bool>(),
    ) {
        let v = TorusPotential::cosine(1, amp).unwrap();
        // stay clear of the critical values +-amp
        let e = if above {
            amp + 0.2 + 2.0 * e_offset
        } else {
            -amp + 0.2 + (2.0 * amp - 0.4).max(0.0) * e_offset
        };
        prop_assume!((e - amp).abs() > 0.15 && (e + amp).abs() > 0.15);
        let quad = liouville_volume(&v, e).unwrap();
        let shell = thin_shell_volume(&v, e, 1e-3, ShellSampling::Grid(1 << 20)).unwrap();
        prop_assert!((quad - shell).abs() <= 1e-4 * quad, "{quad} vs {shell}");
    }

    #[test]
    fn hs_output_is_hermitian(
        evs in prop::collection::vec(-2.0..2.0f64, 2..6),
        seed in prop::collection::vec(-1.0..1.0f64, 8),
        center in -1.0..1.0f64,
    ) {
        let p = OperatorMatrix::new(hermitian_with(&evs, &seed), Basis::Abstract, f64::NAN);
        let chi = BumpFunction::standard();
        let f = SampledFunction::new(|x| chi.value(x - center), (center - 1.0, center + 1.0), 401).unwrap();
        let out = hs_funcalc(&p, &f, 2, 120, 120).unwrap();
        prop_assert!(hermitian_defect(&out.entries) < 1e-8);
    }
}

#[test]
fn free_liouville_volume_is_closed_form() {
    let v = TorusPotential::zero(1).unwrap();
    for e in [0.25, 1.0, 4.0] {
        let got = liouville_volume(&v, e).unwrap();
        // d/dE of 2 pi * 2 sqrt(E)
        let want = 2.0 * PI / e.sqrt();
        assert!((got - want).abs() < 1e-10 * want, "{got} vs {want}");
    }
    let v2 = TorusPotential::zero(2).unwrap();
    let got = liouville_volume(&v2, 1.0).unwrap();
    let want = PI * (2.0 * PI).powi(2);
    assert!((got - want).abs() < 1e-10 * want);
}

#[test]
fn defaults_echo_round_trip_for_every_experiment() {
    for name in ["trace_formula", "weyl_law", "funcalc_check", "moyal_check", "extension_check", "class_check"] {
        let exp = Experiment::parse(name).unwrap();
        let cfg = ExperimentConfig::defaults(exp);
        let again = parse_config(&cfg.echo()).unwrap();
        assert_eq!(again, cfg, "{name}");
    }
}
