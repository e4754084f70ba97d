//! Sampled checks of the structural hypotheses on Ψ, the flux `a` and the source `f`.
//!
//! Every check runs over a deterministic lattice of `(z, x, u, η)` points and a batch of
//! probes drawn from a ChaCha generator seeded by the config. Failures carry the first
//! offending point.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cell::{DissipationKind, DissipationPotential};
use crate::config::{FluxSpec, ProblemSpec};
use crate::fields::{Constitutive, MatrixField};

const PROBES: usize = 256;
/// Fast-variable lattice spans this many units per axis, so quasi-periodic fields are
/// not sampled on a single period.
const Z_SPAN: f64 = 7.3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub point: BTreeMap<String, Vec<f64>>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub passed: bool,
    pub samples: usize,
    pub detail: String,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Sample points in `(z, x)`.
struct Points {
    z: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
}

fn lattice(n: usize, per_axis: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let step = if per_axis > 1 { (hi - lo) / (per_axis - 1) as f64 } else { 0.0 };
    (0..per_axis.pow(n as u32))
        .map(|idx| (0..n).map(|d| lo + step * ((idx / per_axis.pow(d as u32)) % per_axis) as f64).collect())
        .collect()
}

fn points(n: usize, rng: &mut ChaCha8Rng) -> Points {
    let mut z = lattice(n, if n == 1 { 24 } else { 6 }, 0.0, Z_SPAN);
    z.extend((0..16).map(|_| (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect()));
    let mut x = lattice(n, if n == 1 { 5 } else { 3 }, 0.05, 0.95);
    x.extend((0..4).map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()));
    Points { z, x }
}

fn u_values(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut u: Vec<f64> = (-20..=20).map(|i| 0.5 * i as f64).collect();
    u.extend((0..PROBES / 8).map(|_| rng.gen_range(-10.0..10.0)));
    u
}

fn eta_values(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut e = lattice(n, if n == 1 { 11 } else { 5 }, -5.0, 5.0);
    e.extend((0..PROBES / 16).map(|_| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()));
    e
}

fn witness(entries: &[(&str, &[f64])], lhs: f64, rhs: f64) -> Witness {
    Witness { point: entries.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(), lhs, rhs }
}

/// Accumulates samples and keeps the first violation.
struct Tally {
    name: &'static str,
    samples: usize,
    witness: Option<Witness>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally { name, samples: 0, witness: None }
    }

    /// Records `lhs ≤ rhs` (up to `tol`); returns false once a witness is held.
    fn le(&mut self, lhs: f64, rhs: f64, tol: f64, at: impl FnOnce() -> Vec<(&'static str, Vec<f64>)>) -> bool {
        self.samples += 1;
        if !(lhs <= rhs + tol) {
            let entries = at();
            let refs: Vec<(&str, &[f64])> = entries.iter().map(|(k, v)| (*k, v.as_slice())).collect();
            self.witness = Some(witness(&refs, lhs, rhs));
            return false;
        }
        true
    }

    fn finish(self, detail: String) -> ConditionCheck {
        ConditionCheck { name: self.name.into(), passed: self.witness.is_none(), samples: self.samples, detail, witness: self.witness }
    }

    fn fail(name: &'static str, detail: String) -> ConditionCheck {
        ConditionCheck { name: name.into(), passed: false, samples: 0, detail, witness: None }
    }
}

/// Runs every check on a problem.
pub fn validate_hypotheses(spec: &ProblemSpec) -> ValidationReport {
    let n = spec.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pts = points(n, &mut rng);
    let us = u_values(&mut rng);
    let etas = eta_values(n, &mut rng);
    let checks = vec![
        check_multiplier(spec),
        check_strict_convexity(spec, &pts, &us),
        check_growth(spec, &pts, &us),
        check_coercivity(spec, &pts, &us),
        check_flux_coercivity(spec, &pts, &us, &etas),
        check_flux_continuity(spec, &pts, &etas),
        check_source_growth(spec, &pts, &us),
    ];
    ValidationReport { seed: spec.seed, checks }
}

fn check_multiplier(spec: &ProblemSpec) -> ConditionCheck {
    let (g_min, g_max) = spec.potential.multiplier_bounds(spec.dimension);
    ConditionCheck {
        name: "multiplier_positive".into(),
        passed: g_min > 0.0,
        samples: 1,
        detail: format!("g ∈ [{g_min}, {g_max}]"),
        witness: None,
    }
}

/// Strict midpoint convexity in `u` at every sampled `(z, x)`; pairs closer than 0.1 are
/// skipped so the strict gap stays above rounding.
fn check_strict_convexity(spec: &ProblemSpec, pts: &Points, us: &[f64]) -> ConditionCheck {
    let p = &spec.potential;
    let mut t = Tally::new("psi2_strict_convexity");
    'outer: for z in &pts.z {
        for x in &pts.x {
            for (i, &a) in us.iter().enumerate() {
                for &b in &us[i + 1..] {
                    if (a - b).abs() < 0.1 {
                        continue;
                    }
                    let avg = 0.5 * (p.value(z, x, a) + p.value(z, x, b));
                    let mid = p.value(z, x, 0.5 * (a + b));
                    // Strictness: the midpoint must sit measurably below the chord.
                    if !t.le(mid, avg - 1e-12 * (1.0 + avg.abs()), 0.0, || vec![("z", z.clone()), ("x", x.clone()), ("u", vec![a, b])]) {
                        break 'outer;
                    }
                }
            }
        }
    }
    t.finish("Ψ(½(u₁+u₂)) < ½(Ψ(u₁)+Ψ(u₂))".into())
}

fn growth_constants(spec: &ProblemSpec) -> (f64, f64) {
    let g = spec.potential.growth_constants();
    (spec.constants.c.unwrap_or(g.c), spec.constants.h.unwrap_or(g.h))
}

/// `|Ψ(λ) − Ψ(μ)| ≤ |λ − μ| (c g_max max(|λ|, |μ|) + h g(z, x))`.
fn check_growth(spec: &ProblemSpec, pts: &Points, us: &[f64]) -> ConditionCheck {
    let p = &spec.potential;
    let (c, h) = growth_constants(spec);
    let (_, g_max) = p.multiplier_bounds(spec.dimension);
    let mut t = Tally::new("psi3_growth");
    'outer: for z in &pts.z {
        for x in &pts.x {
            let g = p.multiplier(z, x);
            for &a in us {
                for &b in us {
                    let lhs = (p.value(z, x, a) - p.value(z, x, b)).abs();
                    let rhs = (a - b).abs() * (c * g_max * a.abs().max(b.abs()) + h * g);
                    if !t.le(lhs, rhs, 1e-9 * (1.0 + rhs), || vec![("z", z.clone()), ("x", x.clone()), ("u", vec![a, b])]) {
                        break 'outer;
                    }
                }
            }
        }
    }
    t.finish(format!("c = {c}, h = {h}, g_max = {g_max}"))
}

/// `Ψ(λ) ≥ c̃ g_min λ² + g W λ + g h̃` with `c̃ g_min > 0`.
fn check_coercivity(spec: &ProblemSpec, pts: &Points, us: &[f64]) -> ConditionCheck {
    let p = &spec.potential;
    let gc = p.growth_constants();
    let (g_min, _) = p.multiplier_bounds(spec.dimension);
    let c_tilde = gc.c_tilde * g_min;
    if !(c_tilde > 0.0) {
        return Tally::fail("psi4_coercivity", format!("quadratic coefficient c̃ = {c_tilde} is not positive"));
    }
    let mut t = Tally::new("psi4_coercivity");
    'outer: for z in &pts.z {
        for x in &pts.x {
            let g = p.multiplier(z, x);
            for &u in us {
                let lhs = c_tilde * u * u + g * (gc.w_lin * u + gc.h_tilde);
                let rhs = p.value(z, x, u);
                if !t.le(lhs, rhs, 1e-9 * (1.0 + rhs.abs()), || vec![("z", z.clone()), ("x", x.clone()), ("u", vec![u])]) {
                    break 'outer;
                }
            }
        }
    }
    t.finish(format!("c̃ = {c_tilde}, W = {}, h̃ = {}", gc.w_lin, gc.h_tilde))
}

/// The flux `a(z, u, η)` as configured.
fn flux(spec: &FluxSpec, z: &[f64], u: f64, eta: &[f64]) -> [f64; 2] {
    let n = eta.len();
    match spec {
        FluxSpec::Linear { matrix, .. } => {
            let mut k = [0.0; 4];
            matrix.eval_into(z, &mut k[..n * n]);
            let m = matrix.modulation.map_or(1.0, |c| c.eval(u));
            let mut out = [0.0; 2];
            for i in 0..n {
                out[i] = m * (0..n).map(|j| k[i * n + j] * eta[j]).sum::<f64>();
            }
            out
        }
        FluxSpec::Potential { psi } => psi.eval(z, u, eta).gradient,
    }
}

fn check_flux_coercivity(spec: &ProblemSpec, pts: &Points, us: &[f64], etas: &[Vec<f64>]) -> ConditionCheck {
    let (c_alpha, h_alpha) = (spec.c_alpha(), spec.h_alpha());
    if !(c_alpha > 0.0) {
        return Tally::fail("alpha3_coercivity", format!("c_α = {c_alpha} is not positive"));
    }
    let mut t = Tally::new("alpha3_coercivity");
    'outer: for z in &pts.z {
        for &u in us {
            for eta in etas {
                let a = flux(&spec.flux, z, u, eta);
                let lhs = c_alpha * eta.iter().map(|e| e * e).sum::<f64>() + h_alpha;
                let rhs: f64 = a.iter().zip(eta).map(|(a, e)| a * e).sum();
                if !t.le(lhs, rhs, 1e-9 * (1.0 + lhs.abs()), || vec![("z", z.clone()), ("u", vec![u]), ("eta", eta.clone())]) {
                    break 'outer;
                }
            }
        }
    }
    t.finish(format!("c_α = {c_alpha}, h_α = {h_alpha}"))
}

/// Sup of `|m|` over the sampled range, the modulation's global bound when it has one.
fn modulation_sup(m: Option<Constitutive>) -> f64 {
    match m {
        None => 1.0,
        Some(c) => {
            let class = c.class();
            if class.bounded {
                class.growth.2.max(class.growth.1)
            } else {
                // Only a growth bound exists; the value at |u| = 1 is used and the check
                // then reports the violation.
                class.growth.1 + class.growth.2
            }
        }
    }
}

fn default_d_alpha(spec: &FluxSpec) -> f64 {
    let k1 = |m: &MatrixField| m.gershgorin_bounds().1;
    match spec {
        FluxSpec::Linear { matrix, .. } => k1(matrix) * modulation_sup(matrix.modulation),
        FluxSpec::Potential { psi } => {
            let DissipationPotential { kind, oscillation, modulation } = psi;
            let g = oscillation.as_ref().map_or(1.0, |o| o.upper_bound());
            let lip = match kind {
                DissipationKind::Quadratic { matrix } => k1(matrix),
                DissipationKind::Regularized { mu } => 1.0 + mu,
            };
            g * lip * modulation_sup(*modulation)
        }
    }
}

/// `|a(v₁, η₁) − a(v₂, η₂)| ≤ d_α (|v₁ − v₂|^σ + |η₁ − η₂|)`.
fn check_flux_continuity(spec: &ProblemSpec, pts: &Points, etas: &[Vec<f64>]) -> ConditionCheck {
    let d_alpha = spec.constants.d_alpha.unwrap_or_else(|| default_d_alpha(&spec.flux));
    let sigma = spec.constants.sigma.unwrap_or(0.5);
    if !(sigma > 0.0 && sigma < 1.0) {
        return Tally::fail("alpha5_continuity", format!("σ = {sigma} is outside (0, 1)"));
    }
    let vs = [-10.0, -3.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0, 10.0];
    let z_count = if spec.dimension == 1 { pts.z.len() } else { 16 };
    let mut t = Tally::new("alpha5_continuity");
    'outer: for z in pts.z.iter().take(z_count) {
        for &v1 in &vs {
            for &v2 in &vs {
                for e1 in etas {
                    let a1 = flux(&spec.flux, z, v1, e1);
                    for e2 in etas {
                        let a2 = flux(&spec.flux, z, v2, e2);
                        let lhs = a1.iter().zip(&a2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                        let de = e1.iter().zip(e2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                        let rhs = d_alpha * ((v1 - v2).abs().powf(sigma) + de);
                        if !t.le(lhs, rhs, 1e-9 * (1.0 + rhs), || vec![("z", z.clone()), ("v", vec![v1, v2]), ("eta1", e1.clone()), ("eta2", e2.clone())]) {
                            break 'outer;
                        }
                    }
                }
            }
        }
    }
    t.finish(format!("d_α = {d_alpha}, σ = {sigma}"))
}

/// `|f(z, x, u)| ≤ c_f |u|^σ + h_f`.
fn check_source_growth(spec: &ProblemSpec, pts: &Points, us: &[f64]) -> ConditionCheck {
    let s = &spec.source;
    let sigma = spec.constants.sigma.unwrap_or(0.5);
    let (p_lo, p_hi) = s.profile.sampled_bounds(spec.dimension);
    let amp = s.factor.sup_bound() * p_lo.abs().max(p_hi.abs());
    let (_, gc, gh) = s.nonlinearity.class().growth;
    let c_f = spec.constants.c_f.unwrap_or(amp * gc);
    let h_f = spec.constants.h_f.unwrap_or(s.h_f.abs() + amp * gh);
    let mut t = Tally::new("f3_source_growth");
    'outer: for z in &pts.z {
        for x in &pts.x {
            for &u in us {
                let lhs = s.value(z, x, u).abs();
                let rhs = c_f * u.abs().powf(sigma) + h_f;
                if !t.le(lhs, rhs, 1e-9 * (1.0 + rhs), || vec![("z", z.clone()), ("x", x.clone()), ("u", vec![u])]) {
                    break 'outer;
                }
            }
        }
    }
    t.finish(format!("c_f = {c_f}, h_f = {h_f}, σ = {sigma}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::{ConvexPotential, PotentialKind};

    fn base() -> ProblemSpec {
        ProblemSpec::parse(
            r#"{"dimension": 1, "domain": {"t_final": 0.1, "dt": 0.01},
                "potential": {"type": "quadratic", "a": 1.0},
                "flux": {"type": "linear", "matrix": {"entries": [[{"constant": 1.0}]]}}}"#,
        )
        .unwrap()
    }

    #[test]
    fn heat_spec_passes() {
        let r = validate_hypotheses(&base());
        assert!(r.passed(), "{r:#?}");
    }

    #[test]
    fn stefan_growth_with_unit_constants() {
        let mut s = base();
        s.potential = ConvexPotential::stefan(1.0).unwrap();
        s.constants.c = Some(1.0);
        s.constants.h = Some(1.0);
        let r = validate_hypotheses(&s);
        assert!(r.get("psi3_growth").unwrap().passed);
        assert!(r.passed(), "{r:#?}");
        // Too small a constant is caught.
        s.constants.c = Some(0.4);
        s.constants.h = Some(0.0);
        assert!(!validate_hypotheses(&s).get("psi3_growth").unwrap().passed);
    }

    #[test]
    fn absolute_value_fails_strict_convexity_with_witness() {
        let mut s = base();
        s.potential = ConvexPotential::new(PotentialKind::Tabulated { breakpoints: vec![-1.0, 0.0, 0.0, 1.0], slopes: vec![-1.0, -1.0, 1.0, 1.0] }, None).unwrap();
        let c = validate_hypotheses(&s).get("psi2_strict_convexity").cloned().unwrap();
        assert!(!c.passed);
        let w = c.witness.unwrap();
        let u = &w.point["u"];
        // The witness lies on one side of the kink, where |u| is affine.
        assert!(u[0] * u[1] >= 0.0);
        assert!((w.lhs - w.rhs).abs() < 1e-10);
    }

    #[test]
    fn identity_flux_is_coercive() {
        let r = validate_hypotheses(&base());
        let c = r.get("alpha3_coercivity").unwrap();
        assert!(c.passed && c.samples > 100);
    }

    #[test]
    fn linear_source_violates_sublinear_growth() {
        let mut s = base();
        s.source.nonlinearity = Constitutive::Identity;
        s.source.factor = crate::fields::OscillatoryField::constant(1, 1.0);
        assert!(!validate_hypotheses(&s).get("f3_source_growth").unwrap().passed);
        s.source.nonlinearity = Constitutive::Holder { exponent: 0.5 };
        assert!(validate_hypotheses(&s).get("f3_source_growth").unwrap().passed);
    }

    #[test]
    fn reports_are_deterministic() {
        let s = base();
        assert_eq!(validate_hypotheses(&s), validate_hypotheses(&s));
    }
}
