//! Configuration parsing, experiment dispatch and CSV output.
//!
//! Configurations are line-oriented `key = value` documents; `#` starts a
//! comment. Every key is optional except `experiment` (which a `preset`
//! may supply). Unknown and repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::experiments::{
    liouville_volume, run_trace_formula_experiment, run_weyl_count_experiment, thin_shell_volume, HGrid,
    LocalizerFactor, LocalizerSpec, ShellSampling,
};
use crate::hsfunc::{build_extension, dbar_bound_profile, default_chi, dyadic_shells, hs_funcalc, SampledFunction};
use crate::moyal::verify_composition_orders;
use crate::schrodinger::{assemble_torus_operator, check_containment, eigensolve, k_rule, TorusPotential};
use crate::symbolfam::{estimate_class_exponents, make_window_family, BumpFunction, CutoffFamily};
use crate::weylquant::{relative_frobenius, Basis, CMatrix, GridSpec, OperatorMatrix};

/// Name of the effective-configuration echo written next to the CSV.
pub const EFFECTIVE_CONFIG_FILE: &str = "effective.cfg";
/// Name of the run metadata file.
pub const META_FILE: &str = "meta";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    TraceFormula,
    WeylLaw,
    FuncalcCheck,
    MoyalCheck,
    ExtensionCheck,
    ClassCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::TraceFormula,
        Experiment::WeylLaw,
        Experiment::FuncalcCheck,
        Experiment::MoyalCheck,
        Experiment::ExtensionCheck,
        Experiment::ClassCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::TraceFormula => "trace_formula",
            Experiment::WeylLaw => "weyl_law",
            Experiment::FuncalcCheck => "funcalc_check",
            Experiment::MoyalCheck => "moyal_check",
            Experiment::ExtensionCheck => "extension_check",
            Experiment::ClassCheck => "class_check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    pub fn csv_name(&self) -> String {
        format!("{}.csv", self.name())
    }

    pub fn csv_header(&self) -> &'static str {
        match self {
            Experiment::TraceFormula => "h,lhs,rhs,remainder,supp_volume,slope_running",
            Experiment::WeylLaw => "h,count,scaled,liouville,deviation",
            Experiment::FuncalcCheck => "h,dim,frobenius_rel_err,quad_nodes,extension_order",
            Experiment::MoyalCheck => "h,K,residual_norm",
            Experiment::ExtensionCheck => "shell_y,sup_dbar",
            Experiment::ClassCheck => "j,fitted_exponent,predicted_exponent",
        }
    }
}

/// Potential given by a preset name or explicit Fourier coefficients
/// `(k1, k2, re, im)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Preset(String),
    Fourier(Vec<(i64, i64, f64, f64)>),
}

impl PotentialSpec {
    pub fn build(&self, dim: usize) -> Result<TorusPotential> {
        match self {
            PotentialSpec::Preset(name) => TorusPotential::preset(name, dim),
            PotentialSpec::Fourier(terms) => {
                let mut map = BTreeMap::new();
                for &(k1, k2, re, im) in terms {
                    *map.entry((k1, k2)).or_insert(Complex64::new(0.0, 0.0)) += Complex64::new(re, im);
                }
                TorusPotential::new(dim, map).map_err(|e| Error::Configuration(e.to_string()))
            }
        }
    }
}

/// Localizer factor as written in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorSpec {
    One,
    Bump(f64, f64),
}

impl FactorSpec {
    fn build(&self) -> Result<LocalizerFactor> {
        match *self {
            FactorSpec::One => Ok(LocalizerFactor::One),
            FactorSpec::Bump(a, b) => Ok(LocalizerFactor::Bump(BumpFunction::standard_on(a, b)?)),
        }
    }
}

/// Operator used by `funcalc_check`.
#[derive(Debug, Clone, PartialEq)]
pub enum FuncalcOperator {
    /// Torus Schrödinger operator of the configured potential.
    Torus,
    /// Real diagonal matrix.
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub potential: PotentialSpec,
    pub dim: usize,
    pub energy: f64,
    pub delta: f64,
    pub width_scale: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub h_count: usize,
    pub margin: f64,
    pub localizer_x: FactorSpec,
    pub localizer_xi: FactorSpec,
    pub localizer_delta: f64,
    pub order: usize,
    pub quad_x: usize,
    pub quad_y: usize,
    pub funcalc_operator: FuncalcOperator,
    /// Values of `h` for `funcalc_check` on the torus.
    pub funcalc_h: Vec<f64>,
    /// Fourier cutoff `K`; 0 selects the containment rule.
    pub modes: usize,
    pub f_center: f64,
    pub f_radius: f64,
    pub moyal_max_k: u32,
    pub moyal_width: f64,
    pub grid_half_width: f64,
    pub grid_points: usize,
    pub shell_k_min: u32,
    pub shell_k_max: u32,
    pub class_j_max: usize,
    pub seed: u64,
    pub shell_samples: usize,
    pub output: Option<String>,
}

impl ExperimentConfig {
    /// Defaults for an experiment before presets and explicit keys.
    pub fn defaults(experiment: Experiment) -> Self {
        let (h_max, h_min, h_count) = match experiment {
            Experiment::MoyalCheck => (0.16, 0.04, 8),
            _ => (0.2, 0.02, 10),
        };
        Self {
            experiment,
            potential: PotentialSpec::Preset("half_cos".into()),
            dim: 1,
            energy: 1.0,
            delta: 0.0,
            width_scale: 1.0,
            h_max,
            h_min,
            h_count,
            margin: crate::schrodinger::DEFAULT_CONTAINMENT_MARGIN,
            localizer_x: FactorSpec::One,
            localizer_xi: FactorSpec::One,
            localizer_delta: 0.0,
            order: crate::hsfunc::DEFAULT_ORDER,
            quad_x: 200,
            quad_y: 200,
            funcalc_operator: FuncalcOperator::Torus,
            funcalc_h: vec![0.5],
            modes: 0,
            f_center: 1.0,
            f_radius: 1.0,
            moyal_max_k: 2,
            moyal_width: 1.5,
            grid_half_width: 8.0,
            grid_points: 1024,
            shell_k_min: 1,
            shell_k_max: 7,
            class_j_max: 4,
            seed: 0,
            shell_samples: 200_000,
            output: None,
        }
    }

    pub fn h_grid(&self) -> Result<HGrid> {
        HGrid::spanning(self.h_max, self.h_min, self.h_count)
    }

    pub fn window_family(&self) -> Result<CutoffFamily> {
        make_window_family(BumpFunction::standard(), self.energy, self.delta, self.width_scale)
    }

    pub fn localizer(&self) -> Result<LocalizerSpec> {
        LocalizerSpec::new(self.localizer_x.build()?, self.localizer_xi.build()?, self.localizer_delta)
    }

    /// The effective configuration as a parseable document.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[f64]| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", ");
        let factor = |f: &FactorSpec| match f {
            FactorSpec::One => "one".to_string(),
            FactorSpec::Bump(a, b) => format!("bump({}, {})", fmt_num(*a), fmt_num(*b)),
        };
        let mut e = vec![("experiment", self.experiment.name().to_string())];
        match &self.potential {
            PotentialSpec::Preset(name) => e.push(("potential", name.clone())),
            PotentialSpec::Fourier(terms) => {
                let text = terms
                    .iter()
                    .map(|(k1, k2, re, im)| format!("{k1} {k2} {} {}", fmt_num(*re), fmt_num(*im)))
                    .collect::<Vec<_>>()
                    .join("; ");
                e.push(("fourier_coeffs", text));
            }
        }
        e.extend([
            ("dim", self.dim.to_string()),
            ("E", fmt_num(self.energy)),
            ("delta", fmt_num(self.delta)),
            ("c", fmt_num(self.width_scale)),
            ("h_max", fmt_num(self.h_max)),
            ("h_min", fmt_num(self.h_min)),
            ("h_count", self.h_count.to_string()),
            ("margin", fmt_num(self.margin)),
            ("localizer_x", factor(&self.localizer_x)),
            ("localizer_xi", factor(&self.localizer_xi)),
            ("localizer_delta", fmt_num(self.localizer_delta)),
            ("order", self.order.to_string()),
            ("quad_x", self.quad_x.to_string()),
            ("quad_y", self.quad_y.to_string()),
            (
                "funcalc_operator",
                match &self.funcalc_operator {
                    FuncalcOperator::Torus => "torus".to_string(),
                    FuncalcOperator::Diagonal(d) => format!("diag({})", list(d)),
                },
            ),
            ("funcalc_h", list(&self.funcalc_h)),
            ("modes", self.modes.to_string()),
            ("f_center", fmt_num(self.f_center)),
            ("f_radius", fmt_num(self.f_radius)),
            ("moyal_max_k", self.moyal_max_k.to_string()),
            ("moyal_width", fmt_num(self.moyal_width)),
            ("grid_half_width", fmt_num(self.grid_half_width)),
            ("grid_points", self.grid_points.to_string()),
            ("shell_k_min", self.shell_k_min.to_string()),
            ("shell_k_max", self.shell_k_max.to_string()),
            ("class_j_max", self.class_j_max.to_string()),
            ("seed", self.seed.to_string()),
            ("shell_samples", self.shell_samples.to_string()),
        ]);
        if let Some(o) = &self.output {
            e.push(("output", o.clone()));
        }
        e
    }
}

const KEYS: [&str; 33] = [
    "experiment",
    "preset",
    "potential",
    "fourier_coeffs",
    "dim",
    "E",
    "delta",
    "c",
    "h_max",
    "h_min",
    "h_count",
    "margin",
    "localizer_x",
    "localizer_xi",
    "localizer_delta",
    "order",
    "quad_x",
    "quad_y",
    "funcalc_operator",
    "funcalc_h",
    "modes",
    "f_center",
    "f_radius",
    "moyal_max_k",
    "moyal_width",
    "grid_half_width",
    "grid_points",
    "shell_k_min",
    "shell_k_max",
    "class_j_max",
    "seed",
    "shell_samples",
    "output",
];

/// Named presets: an experiment plus key overrides.
pub fn preset(name: &str) -> Option<(Experiment, Vec<(&'static str, &'static str)>)> {
    let p = match name {
        "free_torus_1d" => (
            Experiment::WeylLaw,
            vec![("potential", "zero"), ("E", "1"), ("delta", "0.25"), ("h_min", "1e-4")],
        ),
        "half_cos_weyl" => (
            Experiment::WeylLaw,
            vec![("potential", "half_cos"), ("E", "1"), ("delta", "0.25")],
        ),
        "half_cos_trace" => (
            Experiment::TraceFormula,
            vec![("potential", "half_cos"), ("E", "4"), ("c", "3")],
        ),
        "diag123" => (
            Experiment::FuncalcCheck,
            vec![("funcalc_operator", "diag(1, 2, 3)"), ("f_center", "1"), ("f_radius", "1")],
        ),
        "two_cos_torus" => (
            Experiment::FuncalcCheck,
            vec![
                ("funcalc_operator", "torus"),
                ("potential", "two_cos"),
                ("funcalc_h", "0.5"),
                ("modes", "40"),
                ("E", "1"),
                ("c", "1"),
                ("delta", "0"),
            ],
        ),
        "gaussian_moyal" => (Experiment::MoyalCheck, vec![]),
        "standard_bump_extension" => (Experiment::ExtensionCheck, vec![]),
        "window_class" => (Experiment::ClassCheck, vec![("delta", "0.25")]),
        _ => return None,
    };
    Some(p)
}

/// Error naming the line and key of a configuration problem.
fn config_err(line: usize, key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Configuration(format!("line {line}, key '{key}': {msg}"))
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_for(text, None)
}

/// Like [`parse_config`], with `expected` used when the document names no
/// experiment and checked against it otherwise.
pub fn parse_config_for(text: &str, expected: Option<Experiment>) -> Result<ExperimentConfig> {
    let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Configuration(format!("line {line}: expected 'key = value', found '{content}'")))?;
        let key = key.trim();
        let value = value.trim();
        if !KEYS.contains(&key) {
            return Err(config_err(line, key, "unknown key"));
        }
        if value.is_empty() {
            return Err(config_err(line, key, "missing value"));
        }
        if let Some((first, _)) = seen.get(key) {
            return Err(config_err(line, key, format!("duplicate key (first set on line {first})")));
        }
        seen.insert(key.to_string(), (line, value.to_string()));
    }

    let preset_entry = match seen.get("preset") {
        Some((line, name)) => {
            Some(preset(name).ok_or_else(|| config_err(*line, "preset", format!("unknown preset '{name}'")))?)
        }
        None => None,
    };
    let experiment = match (seen.get("experiment"), &preset_entry) {
        (Some((line, name)), p) => {
            let e = Experiment::parse(name)
                .ok_or_else(|| config_err(*line, "experiment", format!("unknown experiment '{name}'")))?;
            if let Some((pe, _)) = p {
                if *pe != e {
                    return Err(config_err(
                        *line,
                        "experiment",
                        format!("preset is for '{}', not '{}'", pe.name(), e.name()),
                    ));
                }
            }
            e
        }
        (None, Some((pe, _))) => *pe,
        (None, None) => match expected {
            Some(e) => e,
            None => return Err(Error::Configuration("experiment key required".into())),
        },
    };
    if let Some(e) = expected {
        if e != experiment {
            let line = seen.get("experiment").or_else(|| seen.get("preset")).map(|p| p.0).unwrap_or(0);
            return Err(config_err(
                line,
                "experiment",
                format!("configuration is for '{}', command line asks for '{}'", experiment.name(), e.name()),
            ));
        }
    }

    let mut cfg = ExperimentConfig::defaults(experiment);
    if let Some((_, overrides)) = &preset_entry {
        let line = seen.get("preset").map(|p| p.0).unwrap_or(0);
        for (key, value) in overrides {
            if !seen.contains_key(*key) {
                apply(&mut cfg, key, value, line)?;
            }
        }
    }
    if seen.contains_key("potential") && seen.contains_key("fourier_coeffs") {
        let line = seen["fourier_coeffs"].0;
        return Err(config_err(line, "fourier_coeffs", "give either 'potential' or 'fourier_coeffs', not both"));
    }
    for (key, (line, value)) in &seen {
        if key == "experiment" || key == "preset" {
            continue;
        }
        apply(&mut cfg, key, value, *line)?;
    }
    validate(&cfg, &seen)?;
    Ok(cfg)
}

fn num(line: usize, key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| config_err(line, key, format!("malformed number '{value}'")))?;
    if !v.is_finite() {
        return Err(config_err(line, key, format!("value '{value}' is not finite")));
    }
    Ok(v)
}

fn uint(line: usize, key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| config_err(line, key, format!("malformed non-negative integer '{value}'")))
}

fn num_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|p| num(line, key, p.trim())).collect()
}

fn call_args<'a>(value: &'a str, name: &str) -> Option<&'a str> {
    value.strip_prefix(name)?.trim().strip_prefix('(')?.strip_suffix(')')
}

fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str, line: usize) -> Result<()> {
    match key {
        "potential" => {
            if TorusPotential::preset(value, 1).is_err() {
                return Err(config_err(line, key, format!("unknown potential preset '{value}'")));
            }
            cfg.potential = PotentialSpec::Preset(value.to_string());
        }
        "fourier_coeffs" => {
            let mut terms = Vec::new();
            for part in value.split(';') {
                let fields: Vec<&str> = part.split_whitespace().collect();
                if fields.len() != 4 {
                    return Err(config_err(line, key, "each coefficient needs 'k1 k2 re im'"));
                }
                let k1 = fields[0].parse().map_err(|_| config_err(line, key, format!("bad mode '{}'", fields[0])))?;
                let k2 = fields[1].parse().map_err(|_| config_err(line, key, format!("bad mode '{}'", fields[1])))?;
                terms.push((k1, k2, num(line, key, fields[2])?, num(line, key, fields[3])?));
            }
            cfg.potential = PotentialSpec::Fourier(terms);
        }
        "dim" => cfg.dim = uint(line, key, value)? as usize,
        "E" => cfg.energy = num(line, key, value)?,
        "delta" => cfg.delta = num(line, key, value)?,
        "c" => cfg.width_scale = num(line, key, value)?,
        "h_max" => cfg.h_max = num(line, key, value)?,
        "h_min" => cfg.h_min = num(line, key, value)?,
        "h_count" => cfg.h_count = uint(line, key, value)? as usize,
        "margin" => cfg.margin = num(line, key, value)?,
        "localizer_x" | "localizer_xi" => {
            let spec = if value == "one" {
                FactorSpec::One
            } else if let Some(args) = call_args(value, "bump") {
                let v = num_list(line, key, args)?;
                if v.len() != 2 || !(v[0] < v[1]) {
                    return Err(config_err(line, key, "bump(a, b) needs a < b"));
                }
                FactorSpec::Bump(v[0], v[1])
            } else {
                return Err(config_err(line, key, format!("expected 'one' or 'bump(a, b)', found '{value}'")));
            };
            if key == "localizer_x" {
                cfg.localizer_x = spec;
            } else {
                cfg.localizer_xi = spec;
            }
        }
        "localizer_delta" => cfg.localizer_delta = num(line, key, value)?,
        "order" => cfg.order = uint(line, key, value)? as usize,
        "quad_x" => cfg.quad_x = uint(line, key, value)? as usize,
        "quad_y" => cfg.quad_y = uint(line, key, value)? as usize,
        "funcalc_operator" => {
            cfg.funcalc_operator = if value == "torus" {
                FuncalcOperator::Torus
            } else if let Some(args) = call_args(value, "diag") {
                FuncalcOperator::Diagonal(num_list(line, key, args)?)
            } else {
                return Err(config_err(line, key, format!("expected 'torus' or 'diag(...)', found '{value}'")));
            }
        }
        "funcalc_h" => cfg.funcalc_h = num_list(line, key, value)?,
        "modes" => cfg.modes = uint(line, key, value)? as usize,
        "f_center" => cfg.f_center = num(line, key, value)?,
        "f_radius" => cfg.f_radius = num(line, key, value)?,
        "moyal_max_k" => cfg.moyal_max_k = uint(line, key, value)? as u32,
        "moyal_width" => cfg.moyal_width = num(line, key, value)?,
        "grid_half_width" => cfg.grid_half_width = num(line, key, value)?,
        "grid_points" => cfg.grid_points = uint(line, key, value)? as usize,
        "shell_k_min" => cfg.shell_k_min = uint(line, key, value)? as u32,
        "shell_k_max" => cfg.shell_k_max = uint(line, key, value)? as u32,
        "class_j_max" => cfg.class_j_max = uint(line, key, value)? as usize,
        "seed" => cfg.seed = uint(line, key, value)?,
        "shell_samples" => cfg.shell_samples = uint(line, key, value)? as usize,
        "output" => cfg.output = Some(value.to_string()),
        _ => return Err(config_err(line, key, "unknown key")),
    }
    Ok(())
}

fn validate(cfg: &ExperimentConfig, seen: &BTreeMap<String, (usize, String)>) -> Result<()> {
    let line = |key: &str| seen.get(key).map(|p| p.0).unwrap_or(0);
    let check = |ok: bool, key: &str, msg: &str| -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(config_err(line(key), key, msg))
        }
    };
    check(cfg.dim == 1 || cfg.dim == 2, "dim", "torus dimension must be 1 or 2")?;
    check((0.0..0.5).contains(&cfg.delta), "delta", "δ must be in [0, ½)")?;
    if cfg.experiment == Experiment::WeylLaw {
        check(cfg.delta < 1.0 / 3.0, "delta", "the shrinking-window law needs δ < 1/3")?;
    }
    check(cfg.width_scale > 0.0, "c", "width scale must be positive")?;
    check(cfg.h_max > 0.0 && cfg.h_max <= 1.0, "h_max", "h_max must lie in (0, 1]")?;
    check(cfg.h_min > 0.0 && cfg.h_min < cfg.h_max, "h_min", "need 0 < h_min < h_max")?;
    check(cfg.h_count >= 6, "h_count", "an h grid needs at least 6 points")?;
    check(cfg.margin >= 0.0, "margin", "containment margin must be non-negative")?;
    check((0.0..0.5).contains(&cfg.localizer_delta), "localizer_delta", "δ_b must be in [0, ½)")?;
    check(cfg.order >= 1, "order", "extension order must be at least 1")?;
    check(cfg.quad_x >= 2, "quad_x", "need at least 2 nodes")?;
    check(cfg.quad_y >= 2, "quad_y", "need at least 2 nodes")?;
    check(
        !cfg.funcalc_h.is_empty() && cfg.funcalc_h.iter().all(|&h| h > 0.0 && h <= 1.0),
        "funcalc_h",
        "values of h must lie in (0, 1]",
    )?;
    if let FuncalcOperator::Diagonal(d) = &cfg.funcalc_operator {
        check(!d.is_empty(), "funcalc_operator", "diagonal needs at least one entry")?;
    }
    check(cfg.f_radius > 0.0, "f_radius", "bump radius must be positive")?;
    check(cfg.moyal_max_k <= 3, "moyal_max_k", "expansion order must be at most 3")?;
    check(cfg.moyal_width > 0.0, "moyal_width", "symbol width must be positive")?;
    check(cfg.grid_half_width > 0.0, "grid_half_width", "half width must be positive")?;
    check(
        cfg.grid_points >= 16 && cfg.grid_points % 2 == 0,
        "grid_points",
        "need an even number of at least 16 points",
    )?;
    check(cfg.shell_k_min < cfg.shell_k_max, "shell_k_max", "need shell_k_min < shell_k_max")?;
    check(cfg.shell_k_max <= 40, "shell_k_max", "shells below 2^-40 are not resolved")?;
    check(cfg.shell_samples >= 1, "shell_samples", "need at least one sample")?;
    check(cfg.localizer().is_ok(), "localizer_x", "localizer factors must be valid bumps on [0, 2π]")?;
    if let PotentialSpec::Fourier(_) = cfg.potential {
        cfg.potential.build(cfg.dim).map_err(|e| config_err(line("fourier_coeffs"), "fourier_coeffs", e))?;
    }
    if cfg.dim == 2 {
        check(
            cfg.localizer_x == FactorSpec::One && cfg.localizer_xi == FactorSpec::One,
            "localizer_x",
            "localizers are only supported on the circle (dim = 1)",
        )?;
    }
    Ok(())
}

/// Formats with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Configuration(_) | Error::Domain(_) | Error::Capability(_) => 2,
        e if e.is_resolution() => 4,
        _ => 3,
    }
}

/// Short machine-readable name of an error kind.
pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Domain(_) => "domain",
        Error::Capability(_) => "capability",
        Error::Fit(_) => "fit",
        Error::Resolution(_) => "resolution",
        Error::Truncation(_) => "truncation",
        Error::Support(_) => "support",
        Error::Configuration(_) => "configuration",
        Error::Numerical(_) => "numerical",
        Error::EmptyLevelSet(_) => "empty_level_set",
    }
}

/// Output of one run: CSV body and summary lines for the `meta` file.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub experiment: Experiment,
    pub csv: String,
    pub summary: Vec<(String, String)>,
}

struct Csv {
    text: String,
}

impl Csv {
    fn new(header: &str) -> Self {
        Self {
            text: format!("{header}\n"),
        }
    }

    fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }
}

/// Runs the configured experiment and returns its CSV text.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut csv = Csv::new(cfg.experiment.csv_header());
    let mut summary = Vec::new();
    match cfg.experiment {
        Experiment::TraceFormula => {
            let v = cfg.potential.build(cfg.dim)?;
            let res = run_trace_formula_experiment(&v, &cfg.window_family()?, &cfg.localizer()?, &cfg.h_grid()?, cfg.margin)?;
            for r in &res.rows {
                csv.row(&[r.h, r.lhs, r.rhs, r.remainder, r.supp_volume, r.slope_running].map(fmt_num));
            }
            summary.push(("at_floor".into(), res.at_floor.to_string()));
            if let Some(fit) = &res.fit {
                summary.push(("slope".into(), fmt_num(fit.slope)));
                summary.push(("intercept".into(), fmt_num(fit.intercept)));
                summary.push(("r_squared".into(), fmt_num(fit.r_squared)));
                summary.push(("predicted_slope".into(), fmt_num(1.0 - 2.0 * cfg.delta)));
            }
        }
        Experiment::WeylLaw => {
            let v = cfg.potential.build(cfg.dim)?;
            let rows = run_weyl_count_experiment(&v, cfg.energy, cfg.delta, &cfg.h_grid()?, cfg.margin)?;
            for r in &rows {
                csv.row(&[fmt_num(r.h), r.count.to_string(), fmt_num(r.scaled), fmt_num(r.liouville), fmt_num(r.deviation)]);
            }
            let ties: usize = rows.iter().map(|r| r.ties).sum();
            summary.push(("endpoint_ties".into(), ties.to_string()));
            if cfg.delta > 0.0 {
                let quad = liouville_volume(&v, cfg.energy)?;
                let sampled = thin_shell_volume(
                    &v,
                    cfg.energy,
                    1e-2,
                    ShellSampling::Random {
                        samples: cfg.shell_samples,
                        seed: cfg.seed,
                    },
                )?;
                summary.push(("liouville_quadrature".into(), fmt_num(quad)));
                summary.push(("liouville_thin_shell_sampled".into(), fmt_num(sampled)));
            }
        }
        Experiment::FuncalcCheck => {
            for (h, dim, err, nodes) in funcalc_rows(cfg)? {
                csv.row(&[fmt_num(h), dim.to_string(), fmt_num(err), nodes.to_string(), cfg.order.to_string()]);
            }
        }
        Experiment::MoyalCheck => {
            let grid = GridSpec::new(cfg.grid_half_width, cfg.grid_points)?;
            let a = cfg.moyal_width;
            let s1 = move |y: f64, eta: f64| (-(y * y + eta * eta) / (a * a)).exp();
            let s2 = move |y: f64, eta: f64| {
                (-(y - 0.5).powi(2) / (0.8 * a * a) - (eta - 0.3).powi(2) / (a * a)).exp()
            };
            let orders: Vec<u32> = (0..=cfg.moyal_max_k).collect();
            let checks = verify_composition_orders(&grid, s1, s2, &orders, &cfg.h_grid()?.values())?;
            for check in &checks {
                for r in &check.residuals {
                    csv.row(&[fmt_num(r.h), check.max_k.to_string(), fmt_num(r.residual)]);
                }
                if let Some(fit) = &check.fit {
                    summary.push((format!("slope_K{}", check.max_k), fmt_num(fit.slope)));
                }
            }
        }
        Experiment::ExtensionCheck => {
            let f = SampledFunction::new(|x| BumpFunction::standard().value(x), (-1.0, 1.0), 4097)?;
            let ext = build_extension(&f, cfg.order, &default_chi())?;
            let shells = dyadic_shells(cfg.shell_k_min, cfg.shell_k_max);
            let profile = dbar_bound_profile(&ext, &shells)?;
            for (y, s) in &profile {
                csv.row(&[fmt_num(*y), fmt_num(*s)]);
            }
            let (ys, ss): (Vec<f64>, Vec<f64>) = profile.iter().cloned().unzip();
            if let Ok(fit) = crate::fit::fit_loglog(&ys, &ss) {
                summary.push(("slope".into(), fmt_num(fit.slope)));
            }
        }
        Experiment::ClassCheck => {
            let fam = cfg.window_family()?;
            let exps = estimate_class_exponents(&fam, cfg.class_j_max, &cfg.h_grid()?.values())?;
            for (j, fitted) in exps {
                csv.row(&[j.to_string(), fmt_num(fitted), fmt_num(-cfg.delta * j as f64)]);
            }
        }
    }
    Ok(RunOutput {
        experiment: cfg.experiment,
        csv: csv.text,
        summary,
    })
}

/// Rows `(h, dim, relative Frobenius error, quadrature nodes)` comparing
/// the Helffer–Sjöstrand contour sum with the spectral theorem.
pub fn funcalc_rows(cfg: &ExperimentConfig) -> Result<Vec<(f64, usize, f64, usize)>> {
    let nodes = cfg.quad_x * cfg.quad_y;
    match &cfg.funcalc_operator {
        FuncalcOperator::Diagonal(d) => {
            let n = d.len();
            let p = OperatorMatrix::new(
                CMatrix::from_fn(n, n, |i, j| if i == j { Complex64::new(d[i], 0.0) } else { Complex64::new(0.0, 0.0) }),
                Basis::Abstract,
                f64::NAN,
            );
            let bump = BumpFunction::standard_on(cfg.f_center - cfg.f_radius, cfg.f_center + cfg.f_radius)?;
            let f = SampledFunction::new(|x| bump.value(x), bump.support(), 4097)?;
            let hs = hs_funcalc(&p, &f, cfg.order, cfg.quad_x, cfg.quad_y)?;
            let exact = CMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    Complex64::new(bump.value(d[i]), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            Ok(vec![(f64::NAN, n, relative_frobenius(&hs.entries, &exact), nodes)])
        }
        FuncalcOperator::Torus => {
            let v = cfg.potential.build(cfg.dim)?;
            let fam = cfg.window_family()?;
            cfg.funcalc_h
                .iter()
                .map(|&h| {
                    let modes = if cfg.modes > 0 {
                        cfg.modes
                    } else {
                        k_rule(&v, h, fam.support(h).1, cfg.margin)
                    };
                    check_containment(&v, h, modes, fam.support(h).1, cfg.margin)?;
                    let op = assemble_torus_operator(&v, h, modes)?;
                    let dec = eigensolve(&op.matrix)?;
                    let exact = crate::schrodinger::spectral_funcalc(&dec, &fam, h);
                    let f = SampledFunction::from_family(&fam, h, 4097)?;
                    let hs = hs_funcalc(&op.matrix, &f, cfg.order, cfg.quad_x, cfg.quad_y)?;
                    Ok((h, op.size(), relative_frobenius(&hs.entries, &exact.entries), nodes))
                })
                .collect()
        }
    }
}

/// Runs the experiment and writes the CSV, the effective configuration
/// and the `meta` file into `out_dir`. Returns the CSV path.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let output = execute(cfg)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::Configuration(format!("cannot create output directory {}: {e}", out_dir.display())))?;
    let write = |name: &str, body: &str| -> Result<PathBuf> {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::Configuration(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    };
    let csv_path = write(&cfg.experiment.csv_name(), &output.csv)?;
    write(EFFECTIVE_CONFIG_FILE, &cfg.echo())?;
    let mut meta = String::new();
    let _ = writeln!(meta, "package = semiweyl {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(meta, "experiment = {}", cfg.experiment.name());
    let _ = writeln!(meta, "seed = {}", cfg.seed);
    let _ = writeln!(meta, "csv = {}", cfg.experiment.csv_name());
    for (k, v) in &output.summary {
        let _ = writeln!(meta, "{k} = {v}");
    }
    let _ = writeln!(meta, "[effective config]");
    meta.push_str(&cfg.echo());
    write(META_FILE, &meta)?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = parse_config("experiment = weyl_law\nE = 1.0\ndelta = 0.25").unwrap();
        assert_eq!(cfg.experiment, Experiment::WeylLaw);
        assert_eq!(cfg.energy, 1.0);
        assert_eq!(cfg.delta, 0.25);
        assert_eq!(cfg.h_count, 10);
        assert_eq!(cfg.quad_x, 200);
    }

    #[test]
    fn delta_out_of_range() {
        let err = parse_config("experiment = trace_formula\ndelta = 0.6").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("delta"), "{err}");
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn empty_document() {
        let err = parse_config("").unwrap_err();
        assert!(err.to_string().contains("experiment key required"));
        let err = parse_config("# only a comment\n\n").unwrap_err();
        assert!(err.to_string().contains("experiment key required"));
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let err = parse_config("experiment = weyl_law\nfoo = 1").unwrap_err();
        assert!(err.to_string().contains("line 2, key 'foo'"), "{err}");
        let err = parse_config("experiment = weyl_law\nE = 1\nE = 2").unwrap_err();
        assert!(err.to_string().contains("line 3, key 'E'"), "{err}");
        let err = parse_config("experiment = weyl_law\nE = one").unwrap_err();
        assert!(err.to_string().contains("malformed number"), "{err}");
        let err = parse_config("experiment = weyl_law\nno equals sign").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn comments_and_presets() {
        let cfg = parse_config("preset = free_torus_1d # lattice\nh_count = 12\n").unwrap();
        assert_eq!(cfg.experiment, Experiment::WeylLaw);
        assert_eq!(cfg.potential, PotentialSpec::Preset("zero".into()));
        assert_eq!(cfg.h_min, 1e-4);
        assert_eq!(cfg.h_count, 12);
        let err = parse_config("experiment = trace_formula\npreset = free_torus_1d").unwrap_err();
        assert!(err.to_string().contains("preset"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let text = "experiment = trace_formula\nfourier_coeffs = 1 0 0.25 0; -1 0 0.25 0\nlocalizer_x = bump(1, 5)\nE = 2\nc = 0.3333333333333333\n";
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.echo()).unwrap();
        assert_eq!(cfg, again);
        let cfg = parse_config("preset = diag123").unwrap();
        assert_eq!(parse_config(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(0.1).parse::<f64>().unwrap(), 0.1);
        let x = std::f64::consts::PI;
        assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Configuration("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::Truncation("x".into())), 4);
        assert_eq!(exit_code(&Error::Resolution("x".into())), 4);
    }

    #[test]
    fn disjoint_window_gives_zero_rows() {
        let cfg = parse_config("experiment = trace_formula\nE = -5\nc = 1").unwrap();
        let out = execute(&cfg).unwrap();
        let mut lines = out.csv.lines();
        assert_eq!(lines.next().unwrap(), "h,lhs,rhs,remainder,supp_volume,slope_running");
        for line in lines {
            let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
            assert_eq!(fields[1], 0.0);
            assert_eq!(fields[2], 0.0);
        }
    }
}
