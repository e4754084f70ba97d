//! Problem files.
//!
//! A problem is one JSON document. Unknown keys are rejected, omitted blocks take the
//! defaults below, and every field dimension left unstated is taken from the top-level
//! `dimension`. The canonical form is the fully defaulted document with sorted keys,
//! pretty-printed with two-space indentation and a trailing newline; its SHA-256 is the
//! config hash embedded in every JSON output.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell::DissipationPotential;
use crate::convex::ConvexPotential;
use crate::error::ConfigIssue;
use crate::fields::{Constitutive, MatrixField, OscillatoryField, SlowProfile};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dimension: usize,
    pub domain: DomainSpec,
    pub potential: ConvexPotential,
    pub flux: FluxSpec,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub cell: CellSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Intervals per axis for runs without ε (homogenized runs, or when no rule applies).
    #[serde(default = "default_domain_nodes")]
    pub nodes: usize,
    /// `N(ε) = nodes_per_eps / ε`; must be at least 8.
    #[serde(default = "default_nodes_per_eps")]
    pub nodes_per_eps: f64,
    pub t_final: f64,
    pub dt: f64,
}

fn default_domain_nodes() -> usize {
    128
}

fn default_nodes_per_eps() -> f64 {
    16.0
}

impl DomainSpec {
    /// Intervals per axis for a run at `eps`.
    pub fn nodes_for(&self, eps: Option<f64>) -> usize {
        match eps {
            Some(e) => (self.nodes_per_eps / e).round() as usize,
            None => self.nodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", try_from = "FluxRecord")]
pub enum FluxSpec {
    /// `a = h(u) K(z) η`; `h` is the matrix modulation. With `kirchhoff`, runs use the
    /// transformed variable `V = H(u)`.
    Linear {
        matrix: MatrixField,
        #[serde(default)]
        kirchhoff: bool,
    },
    /// `a = ∇_η ψ(z, u, η)`.
    Potential { psi: DissipationPotential },
}

/// Flat form of [`FluxSpec`]: read without buffering, so errors inside the matrix keep
/// their exact position.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FluxRecord {
    #[serde(rename = "type")]
    kind: FluxKind,
    matrix: Option<MatrixField>,
    #[serde(default)]
    kirchhoff: bool,
    psi: Option<DissipationPotential>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum FluxKind {
    Linear,
    Potential,
}

impl TryFrom<FluxRecord> for FluxSpec {
    type Error = String;

    fn try_from(r: FluxRecord) -> std::result::Result<Self, String> {
        match (r.kind, r.matrix, r.psi) {
            (FluxKind::Linear, Some(matrix), None) => Ok(FluxSpec::Linear { matrix, kirchhoff: r.kirchhoff }),
            (FluxKind::Potential, None, Some(psi)) if !r.kirchhoff => Ok(FluxSpec::Potential { psi }),
            (FluxKind::Linear, _, _) => Err("a linear flux takes `matrix` and optionally `kirchhoff`".into()),
            (FluxKind::Potential, _, _) => Err("a potential flux takes `psi` only".into()),
        }
    }
}

/// `f = factor(z) · profile(x) · nonlinearity(u) + h_f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default = "zero_field")]
    pub factor: OscillatoryField,
    #[serde(default)]
    pub profile: SlowProfile,
    #[serde(default = "unit_constitutive")]
    pub nonlinearity: Constitutive,
    #[serde(default)]
    pub h_f: f64,
}

fn zero_field() -> OscillatoryField {
    OscillatoryField::constant(0, 0.0)
}

fn unit_field() -> OscillatoryField {
    OscillatoryField::constant(0, 1.0)
}

fn unit_constitutive() -> Constitutive {
    Constitutive::Constant { value: 1.0 }
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec { factor: zero_field(), profile: SlowProfile::default(), nonlinearity: unit_constitutive(), h_f: 0.0 }
    }
}

impl SourceSpec {
    #[inline]
    pub fn value(&self, z: &[f64], x: &[f64], u: f64) -> f64 {
        self.factor.value(z) * self.profile.eval(x) * self.nonlinearity.eval(u) + self.h_f
    }

    pub fn is_zero(&self) -> bool {
        self.h_f == 0.0 && self.factor.is_constant() && self.factor.constant_term() == 0.0
    }

    /// The fast-variable mean: the factor replaced by its mean value.
    pub fn averaged(&self) -> Self {
        SourceSpec { factor: OscillatoryField::constant(self.factor.dimension(), self.factor.constant_term()), ..self.clone() }
    }
}

/// `w₀ = factor(z) · profile(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default = "unit_field")]
    pub factor: OscillatoryField,
    #[serde(default)]
    pub profile: SlowProfile,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec { factor: unit_field(), profile: SlowProfile::Constant { value: 0.0 } }
    }
}

impl InitialSpec {
    #[inline]
    pub fn value(&self, z: &[f64], x: &[f64]) -> f64 {
        self.factor.value(z) * self.profile.eval(x)
    }

    pub fn averaged(&self) -> Self {
        InitialSpec { factor: OscillatoryField::constant(self.factor.dimension(), self.factor.constant_term()), ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    /// Cell grid nodes per axis per unit period.
    #[serde(default = "default_cell_nodes")]
    pub nodes: usize,
    /// Denominator bound for rationalizing quasi-periodic frequencies.
    #[serde(default = "default_rational_q")]
    pub rational_q: u64,
    /// Largest supercell (total nodes) before giving up.
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
    /// Cell grid nodes per axis used by the ψ₀ table in evolution runs.
    #[serde(default = "default_psi0_nodes")]
    pub psi0_nodes: usize,
}

fn default_cell_nodes() -> usize {
    256
}

fn default_rational_q() -> u64 {
    64
}

fn default_max_nodes() -> usize {
    1 << 22
}

fn default_psi0_nodes() -> usize {
    64
}

impl Default for CellSpec {
    fn default() -> Self {
        CellSpec {
            nodes: default_cell_nodes(),
            rational_q: default_rational_q(),
            max_nodes: default_max_nodes(),
            psi0_nodes: default_psi0_nodes(),
        }
    }
}

/// Every tolerance used by the library, with its default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative residual of the cell-problem CG solves.
    pub cell_cg: f64,
    /// Accepted relative residual of the discrete cell equations.
    pub cell_residual: f64,
    /// Discrete mean bound for correctors.
    pub corrector_mean: f64,
    /// Stopping rule of the ψ₀ minimization (relative RMS gradient).
    pub psi0_gradient: f64,
    /// Quantization step of the ψ₀ flux table in `η`.
    pub psi0_step: f64,
    /// Nonlinear step acceptance: `‖F‖∞ ≤ nonlinear · (1 + ‖wⁿ‖∞)`.
    pub nonlinear: f64,
    pub max_nonlinear_iterations: usize,
    pub max_halvings: usize,
    /// Relative residual of the linear solves inside a nonlinear step.
    pub linear: f64,
    /// Nodewise normalized Fenchel gap.
    pub fenchel_gap: f64,
    /// Lower bound on the a-priori slack.
    pub apriori_slack: f64,
    /// Relative slack of the contraction test (times `E(0)`).
    pub contraction: f64,
    /// Relative slack of the monotone error column.
    pub monotone: f64,
    /// Voigt–Reuss bound slack.
    pub voigt_reuss: f64,
    /// Per-step mass balance defect.
    pub mass_balance: f64,
    /// Ratio band for the uniform-in-ε energy bound.
    pub energy_band: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            cell_cg: 1e-10,
            cell_residual: 1e-8,
            corrector_mean: 1e-10,
            psi0_gradient: 1e-8,
            psi0_step: 1e-3,
            nonlinear: 1e-8,
            max_nonlinear_iterations: 500,
            max_halvings: 5,
            linear: 1e-12,
            fenchel_gap: 1e-8,
            apriori_slack: 1e-6,
            contraction: 1e-8,
            monotone: 0.1,
            voigt_reuss: 1e-8,
            mass_balance: 1e-6,
            energy_band: 3.0,
        }
    }
}

/// Optional overrides of the structural constants. Unset constants are derived from the
/// problem data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    /// Declared ellipticity bounds `[k₀, k₁]` of the linear flux matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipticity: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_alpha: Option<f64>,
    /// Hölder exponent shared by the flux continuity and source growth conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_f: Option<f64>,
    /// Growth constants `c`, `h` of the potential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSpec {
    /// Box half-widths for numeric mean values.
    pub mean_half_widths: Vec<f64>,
    /// Averaging radii for the ergodicity defect.
    pub ergodicity_t: Vec<f64>,
    /// Half-width of the outer mean of the ergodicity defect.
    pub sample_l: f64,
    /// Gradients at which ψ₀ is evaluated by the `psi0` subcommand.
    pub psi0_etas: Vec<Vec<f64>>,
    /// Sine modes `k` of the weak-convergence test family `sin(kπx)·(t/T)^l`.
    pub weak_modes: Vec<u32>,
    /// Time powers `l` of the weak-convergence test family.
    pub weak_powers: Vec<u32>,
    /// Amplitude `δ` of the `δ·sin(πx)` perturbation in the contraction test.
    pub perturbation: f64,
    /// Whether the convergence table asserts `final error ≤ first error / decay`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            mean_half_widths: vec![10.0, 100.0, 1000.0],
            ergodicity_t: vec![10.0, 100.0, 1000.0],
            sample_l: 200.0,
            psi0_etas: Vec::new(),
            weak_modes: vec![1, 2, 3, 4],
            weak_powers: vec![0, 1, 2],
            perturbation: 0.1,
            decay: None,
        }
    }
}

impl ProblemSpec {
    /// Parses and validates a problem document.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut spec: ProblemSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(vec![ConfigIssue {
                path,
                message: strip_position(&inner.to_string()),
                line: Some(inner.line()),
                column: Some(inner.column()),
            }])
        })?;
        spec.normalize();
        let issues = spec.issues();
        if issues.is_empty() {
            Ok(spec)
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Fills unstated field dimensions from the problem dimension.
    fn normalize(&mut self) {
        let n = self.dimension;
        if let Some(m) = self.potential.oscillation_mut() {
            m.factor.infer_dimension(n);
        }
        match &mut self.flux {
            FluxSpec::Linear { matrix, .. } => matrix.infer_dimension(),
            FluxSpec::Potential { psi } => psi.infer_dimension(n),
        }
        self.source.factor.infer_dimension(n);
        self.initial.factor.infer_dimension(n);
    }

    /// Semantic checks after parsing. Each issue names the offending key path.
    fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut push = |path: &str, message: String| out.push(ConfigIssue { path: path.into(), message, line: None, column: None });
        let n = self.dimension;
        if !(1..=2).contains(&n) {
            push("dimension", format!("must be 1 or 2, got {n}"));
            return out;
        }
        let d = &self.domain;
        if !(d.t_final > 0.0 && d.t_final.is_finite()) {
            push("domain.t_final", format!("must be positive, got {}", d.t_final));
        }
        if !(d.dt > 0.0 && d.dt <= d.t_final) {
            push("domain.dt", format!("must lie in (0, t_final], got {}", d.dt));
        }
        if d.nodes < 4 {
            push("domain.nodes", format!("must be at least 4, got {}", d.nodes));
        }
        if !(d.nodes_per_eps >= 8.0) {
            push("domain.nodes_per_eps", format!("must be at least 8 (resolution rule N >= 8/eps), got {}", d.nodes_per_eps));
        }
        for (i, e) in self.eps.iter().enumerate() {
            if !(*e > 0.0 && *e <= 1.0) {
                push(&format!("eps[{i}]"), format!("must lie in (0, 1], got {e}"));
            }
        }
        let mut sorted = self.eps.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            push("eps", "values must be distinct".into());
        }

        if let Some(m) = self.potential.oscillation() {
            let mut ok = true;
            if let Err(e) = m.factor.check() {
                push("potential.oscillation.factor", e.to_string());
                ok = false;
            } else if m.factor.dimension() != n {
                push("potential.oscillation.factor", format!("dimension {} differs from problem dimension {n}", m.factor.dimension()));
                ok = false;
            }
            if let Err(e) = m.profile.check(n) {
                push("potential.oscillation.profile", e);
                ok = false;
            }
            let (lo, _) = self.potential.multiplier_bounds(n);
            if ok && !(lo > 0.0) {
                push("potential.oscillation", format!("multiplier must be positive, lower bound is {lo}"));
            }
        }

        match &self.flux {
            FluxSpec::Linear { matrix, kirchhoff } => {
                if matrix.dimension() != n {
                    push("flux.matrix", format!("dimension {} differs from problem dimension {n}", matrix.dimension()));
                } else if let Err(e) = matrix.check() {
                    push("flux.matrix", e.to_string());
                } else {
                    if !matrix.is_symmetric() {
                        push("flux.matrix", "only symmetric matrices are supported".into());
                    }
                    let (k0, k1) = match self.constants.ellipticity {
                        Some(b) => (b[0], b[1]),
                        None => matrix.gershgorin_bounds(),
                    };
                    if !(k0 > 0.0 && k0 <= k1) {
                        push("constants.ellipticity", format!("bounds must satisfy 0 < k0 <= k1, got [{k0}, {k1}]"));
                    } else if let Some((z, q)) = ellipticity_violation(matrix, k0, k1) {
                        push("flux.matrix", format!("not elliptic within [{k0}, {k1}]: quadratic form ratio {q} at z = {z:?}"));
                    }
                }
                if let Some(h) = matrix.modulation {
                    if *kirchhoff && !h.class().positive {
                        push("flux.matrix.modulation", "the Kirchhoff transformation needs a density positive almost everywhere".into());
                    }
                    if !h.class().positive && !matches!(h, Constitutive::Constant { .. }) {
                        push("flux.matrix.modulation", "flux modulation must be nonnegative".into());
                    }
                    if let Constitutive::Constant { value } = h {
                        if !(value > 0.0) {
                            push("flux.matrix.modulation", format!("constant modulation must be positive, got {value}"));
                        }
                    }
                }
                if *kirchhoff && matches!(self.potential.kind(), crate::convex::PotentialKind::Kirchhoff { .. }) {
                    push("flux.kirchhoff", "the potential is already in Kirchhoff form".into());
                }
            }
            FluxSpec::Potential { psi } => {
                if let Err(e) = psi.check(n) {
                    push("flux.psi", e);
                }
            }
        }

        if let Err(e) = self.source.factor.check() {
            push("source.factor", e.to_string());
        }
        if let Err(e) = self.source.profile.check(n) {
            push("source.profile", e);
        }
        if let Err(e) = self.source.nonlinearity.check() {
            push("source.nonlinearity", e);
        }
        if !self.source.h_f.is_finite() {
            push("source.h_f", "must be finite".into());
        }
        if let Err(e) = self.initial.factor.check() {
            push("initial.factor", e.to_string());
        }
        if let Err(e) = self.initial.profile.check(n) {
            push("initial.profile", e);
        }

        if self.cell.nodes < 8 {
            push("cell.nodes", format!("must be at least 8, got {}", self.cell.nodes));
        }
        if self.cell.psi0_nodes < 8 {
            push("cell.psi0_nodes", format!("must be at least 8, got {}", self.cell.psi0_nodes));
        }
        if self.cell.rational_q < 1 {
            push("cell.rational_q", "must be at least 1".into());
        }

        let t = &self.tolerances;
        for (name, v) in [
            ("cell_cg", t.cell_cg),
            ("cell_residual", t.cell_residual),
            ("corrector_mean", t.corrector_mean),
            ("psi0_gradient", t.psi0_gradient),
            ("psi0_step", t.psi0_step),
            ("nonlinear", t.nonlinear),
            ("linear", t.linear),
            ("fenchel_gap", t.fenchel_gap),
            ("apriori_slack", t.apriori_slack),
            ("contraction", t.contraction),
            ("monotone", t.monotone),
            ("voigt_reuss", t.voigt_reuss),
            ("mass_balance", t.mass_balance),
            ("energy_band", t.energy_band),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                push(&format!("tolerances.{name}"), format!("must be positive, got {v}"));
            }
        }
        if t.max_nonlinear_iterations == 0 {
            push("tolerances.max_nonlinear_iterations", "must be positive".into());
        }

        if let Some(s) = self.constants.sigma {
            if !(s > 0.0 && s < 1.0) {
                push("constants.sigma", format!("must lie in (0, 1), got {s}"));
            }
        }
        for (i, eta) in self.diagnostics.psi0_etas.iter().enumerate() {
            if eta.len() != n {
                push(&format!("diagnostics.psi0_etas[{i}]"), format!("has {} components, expected {n}", eta.len()));
            }
        }
        if self.diagnostics.weak_modes.is_empty() || self.diagnostics.weak_powers.is_empty() {
            push("diagnostics", "the weak test family must be nonempty".into());
        }
        out
    }

    /// Canonical text: sorted keys, two-space indentation, trailing newline.
    pub fn canonical(&self) -> String {
        let value = serde_json::to_value(self).expect("problem specs serialize");
        let mut text = serde_json::to_string_pretty(&value).expect("values serialize");
        text.push('\n');
        text
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// `c_α` of the coercivity condition, declared or derived from the flux data.
    pub fn c_alpha(&self) -> f64 {
        if let Some(c) = self.constants.c_alpha {
            return c;
        }
        match &self.flux {
            FluxSpec::Linear { matrix, .. } => {
                let k0 = self.constants.ellipticity.map_or_else(|| matrix.gershgorin_bounds().0, |b| b[0]);
                k0 * matrix.modulation.map_or(1.0, modulation_infimum)
            }
            FluxSpec::Potential { psi } => {
                let g = psi.oscillation.as_ref().map_or(1.0, OscillatoryField::lower_bound);
                let m = psi.modulation.map_or(1.0, modulation_infimum);
                let k = match &psi.kind {
                    crate::cell::DissipationKind::Quadratic { matrix } => matrix.gershgorin_bounds().0,
                    crate::cell::DissipationKind::Regularized { .. } => 1.0,
                };
                k * g * m
            }
        }
    }

    pub fn h_alpha(&self) -> f64 {
        self.constants.h_alpha.unwrap_or(0.0)
    }
}

/// `inf_u F(u)` for a flux modulation (zero for the degenerate entries).
pub fn modulation_infimum(m: Constitutive) -> f64 {
    match m {
        Constitutive::Constant { value } => value,
        _ => 0.0,
    }
}

/// Samples `ξ·K(z)ξ / |ξ|²` on a lattice of `z` over one unit box and a fan of directions.
fn ellipticity_violation(k: &MatrixField, k0: f64, k1: f64) -> Option<(Vec<f64>, f64)> {
    let n = k.dimension();
    let samples: usize = if n == 1 { 512 } else { 48 };
    let dirs: Vec<[f64; 2]> = if n == 1 {
        vec![[1.0, 0.0]]
    } else {
        (0..16).map(|i| {
            let a = std::f64::consts::PI * i as f64 / 16.0;
            [a.cos(), a.sin()]
        })
        .collect()
    };
    let tol = 1e-12 * (1.0 + k1.abs());
    let mut m = [0.0; 4];
    for idx in 0..samples.pow(n as u32) {
        let z: Vec<f64> = (0..n).map(|d| ((idx / samples.pow(d as u32)) % samples) as f64 / samples as f64 * 7.3).collect();
        k.eval_into(&z, &mut m[..n * n]);
        for xi in &dirs {
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    q += xi[i] * m[i * n + j] * xi[j];
                }
            }
            if q < k0 - tol || q > k1 + tol {
                return Some((z, q));
            }
        }
    }
    None
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"{
        "dimension": 1,
        "domain": {"t_final": 0.1, "dt": 0.001},
        "potential": {"type": "quadratic", "a": 1.0},
        "flux": {"type": "linear", "matrix": {"entries": [[{"constant": 1.0}]]}}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = ProblemSpec::parse(HEAT).unwrap();
        assert_eq!(spec.domain.nodes, 128);
        assert_eq!(spec.cell.rational_q, 64);
        assert_eq!(spec.tolerances.nonlinear, 1e-8);
        assert_eq!(spec.tolerances.max_nonlinear_iterations, 500);
        assert!(spec.source.is_zero());
        assert_eq!(spec.seed, 0);
        match &spec.flux {
            FluxSpec::Linear { matrix, kirchhoff } => {
                assert_eq!(matrix.entries[0][0].dimension(), 1);
                assert!(!kirchhoff);
            }
            _ => panic!("wrong flux"),
        }
    }

    #[test]
    fn canonical_round_trip() {
        let spec = ProblemSpec::parse(HEAT).unwrap();
        let text = spec.canonical();
        let again = ProblemSpec::parse(&text).unwrap();
        assert_eq!(again, spec);
        assert_eq!(again.canonical(), text);
        assert_eq!(spec.hash().len(), 64);
    }

    #[test]
    fn zero_frequency_is_a_located_error() {
        let text = r#"{
  "dimension": 1,
  "domain": {"t_final": 0.1, "dt": 0.001},
  "potential": {"type": "quadratic", "a": 1.0},
  "flux": {"type": "linear", "matrix": {"entries": [[{"constant": 2.0, "modes": [
    {"amplitude": 1.0, "frequency": [0.0], "waveform": "sine"}
  ]}]]}}
}"#;
        let Err(Error::Config(issues)) = ProblemSpec::parse(text) else { panic!("expected a config error") };
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("zero frequency"), "{}", issues[0].message);
        assert!(issues[0].path.contains("modes[0]"), "{}", issues[0].path);
        // The position is where the mode object was closed.
        assert!(matches!(issues[0].line, Some(6 | 7)), "{:?}", issues[0]);
    }

    #[test]
    fn unknown_keys_and_catalog_names_are_rejected() {
        let bad_key = HEAT.replace("\"seed\"", "").replace("\"dimension\": 1,", "\"dimension\": 1, \"sead\": 3,");
        assert!(matches!(ProblemSpec::parse(&bad_key), Err(Error::Config(_))));
        let bad_kind = HEAT.replace("quadratic", "cubic");
        let Err(Error::Config(issues)) = ProblemSpec::parse(&bad_kind) else { panic!() };
        assert!(issues[0].message.contains("cubic"));
    }

    #[test]
    fn declared_ellipticity_is_checked() {
        let text = HEAT.replace(
            r#""flux": {"type": "linear", "matrix": {"entries": [[{"constant": 1.0}]]}}"#,
            r#""flux": {"type": "linear", "matrix": {"entries": [[{"constant": 2.0, "modes": [{"amplitude": 1.0, "frequency": [6.283185307179586], "waveform": "sine"}]}]]}},
               "constants": {"ellipticity": [1.5, 3.0]}"#,
        );
        let Err(Error::Config(issues)) = ProblemSpec::parse(&text) else { panic!("expected a config error") };
        assert!(issues[0].message.contains("not elliptic"));
        let ok = text.replace("[1.5, 3.0]", "[1.0, 3.0]");
        assert!(ProblemSpec::parse(&ok).is_ok());
    }

    #[test]
    fn semantic_errors_name_their_path() {
        let text = HEAT.replace("\"dt\": 0.001", "\"dt\": -1.0");
        let Err(Error::Config(issues)) = ProblemSpec::parse(&text) else { panic!() };
        assert_eq!(issues[0].path, "domain.dt");
    }
}
