//! Run configuration schema and result serialization.
//!
//! Configs are TOML with a fixed schema: top-level `method`, a `[model]`
//! table, optional `[lindblad]`, `[initial]`, `[numerics]` tables, and an
//! `[output]` table. Unknown keys are rejected. Series are emitted as CSV or
//! JSON with one row per grid time, mean and standard-error columns per
//! observable, 17 significant digits, and non-finite values written as an
//! explicit `null` marker.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ngs,
    Twa,
    OracleClosed,
    OracleLindblad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Htc,
    Anharmonic,
    GaussianHeff,
    TcCollective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[default]
    Trotter,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// Spins polarized (up by default), vibrational modes in vacuum, cavity
    /// in a coherent state.
    #[default]
    Product,
    /// All Gaussians of the reference spin configuration populated with
    /// seed-dependent random amplitudes and displacements.
    RandomSuperposition,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default = "default_one")]
    pub n_spins: usize,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub coupling: f64,
    #[serde(default = "default_one_f")]
    pub nu: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Site energies; empty means homogeneous.
    #[serde(default)]
    pub epsilon: Vec<f64>,
    /// Quartic strength of the anharmonic mode.
    #[serde(default = "default_one_f")]
    pub anharmonicity: f64,
    /// Linear drive strength of the Gaussian effective model.
    #[serde(default)]
    pub xi: f64,
    /// Explicit cavity rotation frequency (phase-space methods only).
    #[serde(default)]
    pub cavity_frequency: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LindbladSection {
    pub cavity_decay: f64,
    pub spin_decay: f64,
    pub collective_decay: f64,
    pub photon_gain: f64,
    pub two_photon_loss: f64,
    pub momentum_kick: f64,
}

impl LindbladSection {
    pub fn is_empty(&self) -> bool {
        self.cavity_decay == 0.0
            && self.spin_decay == 0.0
            && self.collective_decay == 0.0
            && self.photon_gain == 0.0
            && self.two_photon_loss == 0.0
            && self.momentum_kick == 0.0
    }

    pub fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("cavity_decay", self.cavity_decay),
            ("spin_decay", self.spin_decay),
            ("collective_decay", self.collective_decay),
            ("photon_gain", self.photon_gain),
            ("two_photon_loss", self.two_photon_loss),
            ("momentum_kick", self.momentum_kick),
        ]
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub kind: InitialKind,
    /// Cavity coherent amplitude as `[re, im]`.
    pub cavity_alpha: [f64; 2],
    /// Start spins excited (up); false starts them in the ground state.
    pub excited: bool,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            kind: InitialKind::Product,
            cavity_alpha: [1.0, 0.0],
            excited: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdSection {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub init_step: f64,
    pub jitter: f64,
}

impl Default for GdSection {
    fn default() -> Self {
        GdSection {
            max_iters: 400,
            grad_tol: 1e-10,
            init_step: 1.0,
            jitter: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    /// Number of Gaussians per spin configuration.
    pub n_gaussians: usize,
    pub squeezing: bool,
    /// Fixed step for trajectory and phase-space integration.
    pub dt: f64,
    /// Adaptive tolerances for deterministic flows and dense references.
    pub rtol: f64,
    pub atol: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Fock cutoffs per mode for dense references; empty selects defaults.
    pub fock_cutoffs: Vec<usize>,
    pub scheme: SchemeKind,
    /// Unravel open dynamics into jump trajectories; false integrates the
    /// deterministic non-Hermitian flow (norm decays, no jumps).
    pub unraveling: bool,
    pub substeps: usize,
    /// Collective models: use the bosonic large-spin representation.
    pub hp: bool,
    pub gd: GdSection,
}

impl Default for NumericsSection {
    fn default() -> Self {
        NumericsSection {
            n_gaussians: 1,
            squeezing: false,
            dt: 1e-3,
            rtol: 1e-8,
            atol: 1e-10,
            n_traj: 1,
            seed: 0,
            fock_cutoffs: Vec::new(),
            scheme: SchemeKind::Trotter,
            unraveling: true,
            substeps: 1,
            hp: true,
            gd: GdSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub t_final: f64,
    #[serde(default)]
    pub t_start: f64,
    #[serde(default = "default_points")]
    pub n_points: usize,
    pub observables: Vec<String>,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub method: Method,
    pub model: ModelSection,
    #[serde(default)]
    pub lindblad: LindbladSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    pub output: OutputSection,
}

fn default_one() -> usize {
    1
}
fn default_one_f() -> f64 {
    1.0
}
fn default_points() -> usize {
    101
}

/// Observable selector parsed from its column name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservableSpec {
    /// `sz`: collective spin projection `Σ_j ⟨σ_j^z⟩ / 2`.
    TotalSz,
    /// `sz_<j>`: single-site `⟨σ_j^z⟩`.
    SzSite(usize),
    /// `n_cav`: cavity occupation (tracker variable for phase-space runs).
    CavityNumber,
    /// `n_cav_symbol`: phase-space symbol estimator `|A|² - 1/2`.
    CavityNumberSymbol,
    /// `n_vib_<k>`: vibrational occupation of mode `k`.
    VibNumber(usize),
    /// `n_vib_symbol_<k>`.
    VibNumberSymbol(usize),
    /// `x_cav`: cavity quadrature `⟨a + a†⟩/√2`.
    CavityX,
    /// `re_cav` / `im_cav`: real and imaginary parts of `⟨a⟩`.
    CavityRe,
    CavityIm,
    /// `n_spin`: spin-wave occupation of the collective representation.
    SpinNumber,
    /// `n_spin_symbol`.
    SpinNumberSymbol,
    /// `norm`: squared state norm (or density-matrix trace).
    Norm,
    /// `energy`: normalized `⟨H⟩`.
    Energy,
    /// `infidelity`: `1 - |⟨reference|state⟩|` against the dense reference.
    Infidelity,
}

pub fn parse_observable(name: &str) -> Result<ObservableSpec> {
    let bad = || Error::Config(format!("unknown observable '{name}'"));
    let index = |s: &str| s.parse::<usize>().map_err(|_| bad());
    Ok(match name {
        "sz" => ObservableSpec::TotalSz,
        "n_cav" => ObservableSpec::CavityNumber,
        "n_cav_symbol" => ObservableSpec::CavityNumberSymbol,
        "x_cav" => ObservableSpec::CavityX,
        "re_cav" => ObservableSpec::CavityRe,
        "im_cav" => ObservableSpec::CavityIm,
        "n_spin" => ObservableSpec::SpinNumber,
        "n_spin_symbol" => ObservableSpec::SpinNumberSymbol,
        "norm" => ObservableSpec::Norm,
        "energy" => ObservableSpec::Energy,
        "infidelity" => ObservableSpec::Infidelity,
        _ => {
            if let Some(rest) = name.strip_prefix("sz_") {
                ObservableSpec::SzSite(index(rest)?)
            } else if let Some(rest) = name.strip_prefix("n_vib_symbol_") {
                ObservableSpec::VibNumberSymbol(index(rest)?)
            } else if let Some(rest) = name.strip_prefix("n_vib_") {
                ObservableSpec::VibNumber(index(rest)?)
            } else {
                return Err(bad());
            }
        }
    })
}

impl RunSpec {
    /// Uniform output grid from `t_start` to `t_final` inclusive.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.output.n_points;
        if n == 1 {
            return vec![self.output.t_final];
        }
        let h = (self.output.t_final - self.output.t_start) / (n - 1) as f64;
        (0..n).map(|k| self.output.t_start + h * k as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        let m = &self.model;
        if !(m.nu.is_finite() && m.nu > 0.0) {
            return err(format!("model.nu = {} out of range (must be > 0)", m.nu));
        }
        for (name, v) in [
            ("model.delta", m.delta),
            ("model.coupling", m.coupling),
            ("model.lambda", m.lambda),
            ("model.anharmonicity", m.anharmonicity),
            ("model.xi", m.xi),
            ("model.cavity_frequency", m.cavity_frequency),
        ] {
            if !v.is_finite() {
                return err(format!("{name} = {v} is not finite"));
            }
        }
        match m.kind {
            ModelKind::Htc | ModelKind::TcCollective => {
                if m.n_spins == 0 {
                    return err("model.n_spins must be at least 1".into());
                }
                if !m.epsilon.is_empty() && m.epsilon.len() != m.n_spins {
                    return err(format!(
                        "model.epsilon has {} entries for n_spins = {}",
                        m.epsilon.len(),
                        m.n_spins
                    ));
                }
            }
            ModelKind::Anharmonic | ModelKind::GaussianHeff => {}
        }
        for (name, v) in self.lindblad.fields() {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("lindblad.{name} = {v} out of range (must be >= 0)"));
            }
        }
        let n = &self.numerics;
        if n.n_gaussians == 0 {
            return err("numerics.n_gaussians must be at least 1".into());
        }
        if !(n.dt.is_finite() && n.dt > 0.0) {
            return err(format!("numerics.dt = {} out of range (must be > 0)", n.dt));
        }
        for (name, v) in [("numerics.rtol", n.rtol), ("numerics.atol", n.atol)] {
            if !(v.is_finite() && v > 0.0) {
                return err(format!("{name} = {v} out of range (must be > 0)"));
            }
        }
        if n.n_traj == 0 {
            return err("numerics.n_traj must be at least 1".into());
        }
        if n.substeps == 0 {
            return err("numerics.substeps must be at least 1".into());
        }
        for &c in &n.fock_cutoffs {
            if c == 0 {
                return err("numerics.fock_cutoffs entries must be at least 1".into());
            }
        }
        let o = &self.output;
        if !(o.t_start.is_finite() && o.t_start >= 0.0) {
            return err(format!("output.t_start = {} out of range", o.t_start));
        }
        if !(o.t_final.is_finite() && o.t_final > o.t_start) {
            return err(format!(
                "output.t_final = {} out of range (must exceed t_start = {})",
                o.t_final, o.t_start
            ));
        }
        if o.n_points == 0 {
            return err("output.n_points must be at least 1".into());
        }
        if o.observables.is_empty() {
            return err("output.observables must not be empty".into());
        }
        for name in &o.observables {
            parse_observable(name)?;
        }
        for &[re, im] in [&self.initial.cavity_alpha].iter() {
            if !(re.is_finite() && im.is_finite()) {
                return err("initial.cavity_alpha must be finite".into());
            }
        }
        Ok(())
    }
}

/// Parse and validate a TOML run configuration.
pub fn parse_config(text: &str) -> Result<RunSpec> {
    let spec: RunSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Canonical TOML form of a spec (field order fixed by the schema).
pub fn to_toml(spec: &RunSpec) -> String {
    toml::to_string_pretty(spec).expect("spec serialization cannot fail")
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash of the canonical serialized spec; stable across runs of one build.
pub fn config_hash(spec: &RunSpec) -> u64 {
    fnv1a(to_toml(spec).as_bytes())
}

/// Engine diagnostics carried in result metadata.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub total_jumps: usize,
    pub min_fidelity: Option<f64>,
    pub floor_hits: usize,
    pub clamp_events: usize,
    pub min_geometry_rank: Option<usize>,
    pub max_hp_fraction: Option<f64>,
    pub integrator_steps: usize,
}

/// A finished run: metadata plus the time-series table.
#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub config_hash: u64,
    pub code_version: &'static str,
    pub method: Method,
    pub seed: u64,
    pub n_traj: usize,
    /// Wall time of the engine; excluded from emitted files so identical
    /// runs produce identical bytes.
    pub wall_time_s: f64,
    pub diagnostics: Diagnostics,
    pub grid: Vec<f64>,
    pub columns: Vec<String>,
    pub mean: Array2<f64>,
    pub stderr: Array2<f64>,
}

/// `{:.16e}` gives 17 significant digits; non-finite values become `null`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Ngs => "ngs",
        Method::Twa => "twa",
        Method::OracleClosed => "oracle_closed",
        Method::OracleLindblad => "oracle_lindblad",
    }
}

fn diagnostics_line(d: &Diagnostics) -> String {
    let mut parts = vec![
        format!("jumps={}", d.total_jumps),
        format!("floor_hits={}", d.floor_hits),
        format!("clamp_events={}", d.clamp_events),
        format!("integrator_steps={}", d.integrator_steps),
    ];
    if let Some(f) = d.min_fidelity {
        parts.push(format!("min_jump_fidelity={}", format_float(f)));
    }
    if let Some(r) = d.min_geometry_rank {
        parts.push(format!("min_geometry_rank={r}"));
    }
    if let Some(f) = d.max_hp_fraction {
        parts.push(format!("max_hp_fraction={}", format_float(f)));
    }
    parts.join(" ")
}

pub fn emit_csv(bundle: &ResultBundle) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# spinboson v{} method={} config_hash={:016x} seed={} n_traj={} time_unit=1/nu\n",
        bundle.code_version,
        method_name(bundle.method),
        bundle.config_hash,
        bundle.seed,
        bundle.n_traj
    ));
    out.push_str(&format!("# diagnostics: {}\n", diagnostics_line(&bundle.diagnostics)));
    let mut header = vec!["t".to_string()];
    for c in &bundle.columns {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_stderr"));
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (gi, &t) in bundle.grid.iter().enumerate() {
        let mut row = vec![format_float(t)];
        for k in 0..bundle.columns.len() {
            row.push(format_float(bundle.mean[(gi, k)]));
            row.push(format_float(bundle.stderr[(gi, k)]));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn json_number(x: f64) -> serde_json::Value {
    match serde_json::Number::from_f64(x) {
        Some(n) => serde_json::Value::Number(n),
        None => serde_json::Value::Null,
    }
}

pub fn emit_json(bundle: &ResultBundle) -> String {
    use serde_json::{json, Value};
    let series: Vec<Value> = bundle
        .columns
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mean: Vec<Value> = (0..bundle.grid.len())
                .map(|gi| json_number(bundle.mean[(gi, k)]))
                .collect();
            let stderr: Vec<Value> = (0..bundle.grid.len())
                .map(|gi| json_number(bundle.stderr[(gi, k)]))
                .collect();
            json!({"name": name, "mean": mean, "stderr": stderr})
        })
        .collect();
    let doc = json!({
        "metadata": {
            "code_version": bundle.code_version,
            "method": method_name(bundle.method),
            "config_hash": format!("{:016x}", bundle.config_hash),
            "seed": bundle.seed,
            "n_traj": bundle.n_traj,
            "time_unit": "1/nu",
            "diagnostics": {
                "total_jumps": bundle.diagnostics.total_jumps,
                "min_jump_fidelity": bundle.diagnostics.min_fidelity.map(json_number),
                "floor_hits": bundle.diagnostics.floor_hits,
                "clamp_events": bundle.diagnostics.clamp_events,
                "min_geometry_rank": bundle.diagnostics.min_geometry_rank,
                "max_hp_fraction": bundle.diagnostics.max_hp_fraction.map(json_number),
                "integrator_steps": bundle.diagnostics.integrator_steps,
            },
        },
        "grid": bundle.grid.iter().map(|&t| json_number(t)).collect::<Vec<_>>(),
        "series": series,
    });
    serde_json::to_string_pretty(&doc).expect("json serialization cannot fail")
}

/// Parse a CSV produced by [`emit_csv`]: returns header names and rows;
/// `null` markers come back as NaN.
pub fn parse_series_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if header.is_empty() {
            header = line.split(',').map(str::to_string).collect();
            continue;
        }
        let mut row = Vec::with_capacity(header.len());
        for field in line.split(',') {
            if field == "null" {
                row.push(f64::NAN);
            } else {
                row.push(
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad csv field '{field}'")))?,
                );
            }
        }
        if row.len() != header.len() {
            return Err(Error::Config("csv row width mismatch".into()));
        }
        rows.push(row);
    }
    if header.is_empty() {
        return Err(Error::Config("csv has no header".into()));
    }
    Ok((header, rows))
}
