//! Convex potentials `Ψ(z, x, u) = g(z, x) · Ψ_base(u)`.
//!
//! Every base kind has a piecewise-affine derivative: on each piece `Ψ_base′(σ) = p + qσ`,
//! and derivative jumps between pieces are the subdifferential gaps. This one
//! representation gives closed forms for values, subdifferentials, `β = (Ψ*)′`,
//! conjugates and resolvents. The Kirchhoff kind composes a base with `u = H⁻¹(V)`.

use serde::{Deserialize, Serialize};

use crate::fields::{Constitutive, ModulatedField, OscillatoryField};
use crate::{Error, Result};

/// A closed interval `[lo, hi]` (possibly degenerate, possibly unbounded).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// The point of the interval closest to `v`.
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    fn scaled(self, g: f64) -> Self {
        Interval { lo: g * self.lo, hi: g * self.hi }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `½ a u²`.
    Quadratic { a: f64 },
    /// `½ u² + L u⁺`.
    Stefan { latent: f64 },
    /// Piecewise-quadratic potential given by its derivative at breakpoints; the derivative
    /// is interpolated linearly and extrapolated with the end slopes. A repeated breakpoint
    /// encodes a derivative jump. `Ψ(0) = 0`.
    Tabulated { breakpoints: Vec<f64>, slopes: Vec<f64> },
    /// `Ψ̃(V)` with `∂Ψ̃(V) = ∂Ψ_base(H⁻¹(V))`, `H` the antiderivative of `density`.
    Kirchhoff { base: Box<PotentialKind>, density: Constitutive },
}

/// One affine piece of the base derivative: `Ψ′(σ) = p + qσ` on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Piece {
    lo: f64,
    hi: f64,
    p: f64,
    q: f64,
}

impl Piece {
    #[inline]
    fn slope_at(&self, s: f64) -> f64 {
        if self.q == 0.0 {
            self.p
        } else {
            self.p + self.q * s
        }
    }

    /// Range of the derivative on the piece.
    #[inline]
    fn range(&self) -> (f64, f64) {
        (self.slope_at(self.lo), self.slope_at(self.hi))
    }
}

/// Constants of the growth hypotheses for the base potential:
/// `|Ψ(λ) − Ψ(μ)| ≤ |λ − μ|(c·max(|λ|, |μ|) + h)` and `Ψ(λ) ≥ c̃λ² + Wλ + h̃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub c: f64,
    pub h: f64,
    pub c_tilde: f64,
    pub w_lin: f64,
    pub h_tilde: f64,
}

/// Base kind compiled into pieces.
#[derive(Clone, Debug, PartialEq)]
struct Compiled {
    pieces: Vec<Piece>,
    density: Option<Constitutive>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PotentialSpec", into = "PotentialSpec")]
pub struct ConvexPotential {
    kind: PotentialKind,
    oscillation: Option<ModulatedField>,
    compiled: Compiled,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PotentialSpec {
    #[serde(flatten)]
    kind: PotentialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oscillation: Option<ModulatedField>,
}

impl TryFrom<PotentialSpec> for ConvexPotential {
    type Error = Error;
    fn try_from(s: PotentialSpec) -> Result<Self> {
        ConvexPotential::new(s.kind, s.oscillation)
    }
}

impl From<ConvexPotential> for PotentialSpec {
    fn from(p: ConvexPotential) -> Self {
        PotentialSpec { kind: p.kind, oscillation: p.oscillation }
    }
}

fn compile_base(kind: &PotentialKind) -> Result<Vec<Piece>> {
    let inf = f64::INFINITY;
    match kind {
        PotentialKind::Quadratic { a } => {
            if !(*a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!("quadratic coefficient must be positive, got {a}")));
            }
            Ok(vec![Piece { lo: -inf, hi: inf, p: 0.0, q: *a }])
        }
        PotentialKind::Stefan { latent } => {
            if !(*latent > 0.0 && latent.is_finite()) {
                return Err(Error::InvalidArgument(format!("latent heat must be positive, got {latent}")));
            }
            Ok(vec![Piece { lo: -inf, hi: 0.0, p: 0.0, q: 1.0 }, Piece { lo: 0.0, hi: inf, p: *latent, q: 1.0 }])
        }
        PotentialKind::Tabulated { breakpoints, slopes } => {
            if breakpoints.len() != slopes.len() || breakpoints.len() < 2 {
                return Err(Error::InvalidArgument(
                    "tabulated potential needs at least two breakpoints and one slope per breakpoint".into(),
                ));
            }
            if breakpoints.iter().chain(slopes).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("tabulated potential has non-finite entries".into()));
            }
            if breakpoints.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidArgument("tabulated breakpoints must be nondecreasing".into()));
            }
            if slopes.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidArgument("tabulated slopes must be nondecreasing (convexity)".into()));
            }
            let mut pieces = Vec::new();
            for j in 0..breakpoints.len() - 1 {
                let (b0, b1) = (breakpoints[j], breakpoints[j + 1]);
                if b1 > b0 {
                    let q = (slopes[j + 1] - slopes[j]) / (b1 - b0);
                    pieces.push(Piece { lo: b0, hi: b1, p: slopes[j] - q * b0, q });
                }
            }
            if pieces.is_empty() {
                return Err(Error::InvalidArgument("tabulated breakpoints are all equal".into()));
            }
            pieces.first_mut().unwrap().lo = -inf;
            pieces.last_mut().unwrap().hi = inf;
            Ok(pieces)
        }
        PotentialKind::Kirchhoff { .. } => Err(Error::Unsupported("nested Kirchhoff potentials".into())),
    }
}

fn compile(kind: &PotentialKind) -> Result<Compiled> {
    match kind {
        PotentialKind::Kirchhoff { base, density } => {
            let map = KirchhoffMap::new(*density)?;
            Ok(Compiled { pieces: compile_base(base)?, density: Some(map.density) })
        }
        other => Ok(Compiled { pieces: compile_base(other)?, density: None }),
    }
}

impl ConvexPotential {
    pub fn new(kind: PotentialKind, oscillation: Option<ModulatedField>) -> Result<Self> {
        let compiled = compile(&kind)?;
        if let Some(m) = &oscillation {
            // An unstated dimension is filled in by the problem file before use.
            if m.factor.dimension() != 0 {
                m.factor.check()?;
            }
        }
        Ok(ConvexPotential { kind, oscillation, compiled })
    }

    pub fn quadratic(a: f64) -> Result<Self> {
        Self::new(PotentialKind::Quadratic { a }, None)
    }

    pub fn stefan(latent: f64) -> Result<Self> {
        Self::new(PotentialKind::Stefan { latent }, None)
    }

    pub fn with_oscillation(self, oscillation: ModulatedField) -> Result<Self> {
        Self::new(self.kind, Some(oscillation))
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn oscillation(&self) -> Option<&ModulatedField> {
        self.oscillation.as_ref()
    }

    pub(crate) fn oscillation_mut(&mut self) -> Option<&mut ModulatedField> {
        self.oscillation.as_mut()
    }

    /// The multiplier `g(z, x)`; 1 without oscillation.
    #[inline]
    pub fn multiplier(&self, z: &[f64], x: &[f64]) -> f64 {
        self.oscillation.as_ref().map_or(1.0, |m| m.value(z, x))
    }

    /// The potential frozen at a point `(z, x)`.
    #[inline]
    pub fn at(&self, z: &[f64], x: &[f64]) -> LocalPotential<'_> {
        self.with_multiplier(self.multiplier(z, x))
    }

    /// The base potential scaled by an explicit multiplier.
    #[inline]
    pub fn with_multiplier(&self, g: f64) -> LocalPotential<'_> {
        LocalPotential { compiled: &self.compiled, g }
    }

    pub fn value(&self, z: &[f64], x: &[f64], u: f64) -> f64 {
        self.at(z, x).value(u)
    }

    pub fn subdifferential(&self, z: &[f64], x: &[f64], u: f64) -> Interval {
        self.at(z, x).subdifferential(u)
    }

    pub fn conjugate(&self, z: &[f64], x: &[f64], w: f64) -> f64 {
        self.at(z, x).conjugate(w)
    }

    pub fn beta(&self, z: &[f64], x: &[f64], w: f64) -> f64 {
        self.at(z, x).beta(w)
    }

    /// Returns `(u, s)` with `s ∈ ∂Ψ(z, x, u)` and `u + τ s = v`.
    pub fn resolvent(&self, z: &[f64], x: &[f64], v: f64, tau: f64) -> Result<(f64, f64)> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("resolvent step must be positive, got {tau}")));
        }
        Ok(self.at(z, x).resolvent(v, tau))
    }

    /// Growth constants of the base potential (the multiplier is applied by callers).
    pub fn growth_constants(&self) -> GrowthConstants {
        match self.compiled.density {
            None => piece_growth(&self.compiled.pieces),
            Some(_) => sampled_growth(self.with_multiplier(1.0)),
        }
    }

    /// Whether the base derivative is strictly increasing everywhere.
    pub fn is_strictly_convex(&self) -> bool {
        let density_ok = self.compiled.density.map_or(true, |d| d.class().positive);
        density_ok && self.compiled.pieces.iter().all(|p| p.q > 0.0)
    }

    /// Bounds `(g_min, g_max)` of the multiplier, or `(1, 1)` without oscillation.
    pub fn multiplier_bounds(&self, dimension: usize) -> (f64, f64) {
        match &self.oscillation {
            None => (1.0, 1.0),
            Some(m) => {
                let (pl, ph) = m.profile.sampled_bounds(dimension);
                let (fl, fh) = (m.factor.lower_bound(), m.factor.upper_bound());
                let c = [pl * fl, pl * fh, ph * fl, ph * fh];
                (c.iter().copied().fold(f64::INFINITY, f64::min), c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
        }
    }

    /// `|Ψ(z, x, 0)|` bound, zero for every implemented kind.
    pub fn value_at_zero(&self) -> f64 {
        0.0
    }
}

/// The mean over the fast variable: the multiplier's oscillating factor is replaced by its
/// mean value.
pub fn averaged_potential(p: &ConvexPotential) -> ConvexPotential {
    ConvexPotential {
        kind: p.kind.clone(),
        oscillation: p.oscillation.as_ref().map(ModulatedField::averaged),
        compiled: p.compiled.clone(),
    }
}

fn piece_growth(pieces: &[Piece]) -> GrowthConstants {
    let c = pieces.iter().map(|p| p.q).fold(0.0, f64::max);
    let h = pieces.iter().map(|p| p.p.abs()).fold(0.0, f64::max);
    let q_min = pieces.iter().map(|p| p.q).fold(f64::INFINITY, f64::min);
    let left_of_zero = pieces.iter().find(|p| p.lo < 0.0 && p.hi >= 0.0).unwrap_or(&pieces[0]);
    GrowthConstants { c, h, c_tilde: 0.5 * q_min, w_lin: left_of_zero.slope_at(0.0), h_tilde: 0.0 }
}

/// Growth constants fitted on a sample of `[−R, R]` for kinds without closed forms.
fn sampled_growth(local: LocalPotential<'_>) -> GrowthConstants {
    let samples: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 0.025).collect();
    let h = samples
        .iter()
        .filter(|v| v.abs() <= 1.0)
        .map(|&v| {
            let s = local.subdifferential(v);
            s.lo.abs().max(s.hi.abs())
        })
        .fold(0.0, f64::max);
    let c = samples
        .iter()
        .filter(|v| v.abs() > 1.0)
        .map(|&v| {
            let s = local.subdifferential(v);
            s.lo.abs().max(s.hi.abs()) / v.abs()
        })
        .fold(0.0, f64::max);
    let w_lin = local.subdifferential(0.0).lo;
    let c_tilde = samples
        .iter()
        .filter(|v| **v != 0.0)
        .map(|&v| (local.value(v) - w_lin * v) / (v * v))
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    GrowthConstants { c, h, c_tilde, w_lin, h_tilde: 0.0 }
}

/// A potential frozen at one point: `g · Ψ_base`.
#[derive(Clone, Copy, Debug)]
pub struct LocalPotential<'a> {
    compiled: &'a Compiled,
    g: f64,
}

impl LocalPotential<'_> {
    pub fn multiplier(&self) -> f64 {
        self.g
    }

    pub fn value(&self, u: f64) -> f64 {
        self.g
            * match self.compiled.density {
                None => base_integral(&self.compiled.pieces, u, None),
                Some(d) => {
                    let s = KirchhoffMap { density: d }.inverse(u);
                    base_integral(&self.compiled.pieces, s, Some(d))
                }
            }
    }

    pub fn subdifferential(&self, u: f64) -> Interval {
        let s = match self.compiled.density {
            None => u,
            Some(d) => KirchhoffMap { density: d }.inverse(u),
        };
        base_subdifferential(&self.compiled.pieces, s).scaled(self.g)
    }

    /// `sup_u (u w − Ψ(u))`, evaluated as `w·β(w) − Ψ(β(w))`, which is exact because
    /// `w ∈ ∂Ψ(β(w))`.
    pub fn conjugate(&self, w: f64) -> f64 {
        let u = self.beta(w);
        if !u.is_finite() {
            return f64::INFINITY;
        }
        w * u - self.value(u)
    }

    /// The unique `u` with `w ∈ ∂Ψ(u)`.
    pub fn beta(&self, w: f64) -> f64 {
        let s = base_beta(&self.compiled.pieces, w / self.g);
        match self.compiled.density {
            None => s,
            Some(d) => d.antiderivative(s),
        }
    }

    /// An element of the generalized derivative of `β` at `w`.
    pub fn beta_slope(&self, w: f64) -> f64 {
        let wg = w / self.g;
        let slope = base_beta_slope(&self.compiled.pieces, wg) / self.g;
        match self.compiled.density {
            None => slope,
            Some(d) => d.eval(base_beta(&self.compiled.pieces, wg)) * slope,
        }
    }

    /// `(u, s)` with `s ∈ ∂Ψ(u)` and `u + τ s = v`.
    pub fn resolvent(&self, v: f64, tau: f64) -> (f64, f64) {
        let t = tau * self.g;
        match self.compiled.density {
            None => {
                let (u, sb) = base_resolvent(&self.compiled.pieces, v, t);
                (u, self.g * sb)
            }
            Some(d) => {
                let u = kirchhoff_resolvent(&self.compiled.pieces, d, v, t);
                let big_v = d.antiderivative(u);
                (big_v, (v - big_v) / tau)
            }
        }
    }
}

/// `∫₀ᵘ s(σ) ρ(σ) dσ` with `s` the piecewise-affine derivative and `ρ` the density (1 if
/// absent), in closed form.
fn base_integral(pieces: &[Piece], u: f64, density: Option<Constitutive>) -> f64 {
    let (a, b, sign) = if u >= 0.0 { (0.0, u, 1.0) } else { (u, 0.0, -1.0) };
    let mut total = 0.0;
    for piece in pieces {
        let lo = piece.lo.max(a);
        let hi = piece.hi.min(b);
        if hi <= lo {
            continue;
        }
        total += match density {
            None => piece.p * (hi - lo) + 0.5 * piece.q * (hi * hi - lo * lo),
            Some(d) => {
                let first = |s: f64| d.antiderivative(s);
                let moment = |s: f64| s * d.antiderivative(s) - d.second_antiderivative(s);
                piece.p * (first(hi) - first(lo)) + piece.q * (moment(hi) - moment(lo))
            }
        };
    }
    sign * total
}

fn base_subdifferential(pieces: &[Piece], u: f64) -> Interval {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for piece in pieces {
        if u >= piece.lo && u <= piece.hi {
            let s = piece.slope_at(u);
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    Interval { lo, hi }
}

fn base_beta(pieces: &[Piece], w: f64) -> f64 {
    for (j, piece) in pieces.iter().enumerate() {
        let (rlo, rhi) = piece.range();
        if w <= rhi {
            if w >= rlo {
                return if piece.q > 0.0 { ((w - piece.p) / piece.q).clamp(piece.lo, piece.hi) } else { piece.lo.max(piece.hi.min(0.0)) };
            }
            // In the gap before this piece.
            return if j == 0 { f64::NEG_INFINITY } else { piece.lo };
        }
    }
    f64::INFINITY
}

fn base_beta_slope(pieces: &[Piece], w: f64) -> f64 {
    for piece in pieces {
        let (rlo, rhi) = piece.range();
        if w <= rhi {
            return if w >= rlo && piece.q > 0.0 { 1.0 / piece.q } else { 0.0 };
        }
    }
    0.0
}

fn base_resolvent(pieces: &[Piece], v: f64, tau: f64) -> (f64, f64) {
    // u + τ s(u) is increasing; locate the piece or gap containing v.
    for (j, piece) in pieces.iter().enumerate() {
        let lo_val = piece.lo + tau * piece.slope_at(piece.lo);
        let hi_val = piece.hi + tau * piece.slope_at(piece.hi);
        if v <= hi_val || j == pieces.len() - 1 {
            if v >= lo_val || j == 0 {
                let u = ((v - tau * piece.p) / (1.0 + tau * piece.q)).clamp(piece.lo, piece.hi);
                return (u, (v - u) / tau);
            }
            let u = piece.lo;
            return (u, (v - u) / tau);
        }
    }
    unreachable!("last piece extends to infinity")
}

/// Solves `H(u) + τ s(u) ∋ v` for `u` by bisection.
fn kirchhoff_resolvent(pieces: &[Piece], density: Constitutive, v: f64, tau: f64) -> f64 {
    let f_lo = |u: f64| density.antiderivative(u) + tau * base_subdifferential(pieces, u).lo;
    let f_hi = |u: f64| density.antiderivative(u) + tau * base_subdifferential(pieces, u).hi;
    let mut lo = -1.0;
    while f_hi(lo) > v {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while f_lo(hi) < v {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f_hi(mid) < v {
            lo = mid;
        } else if f_lo(mid) > v {
            hi = mid;
        } else {
            return mid;
        }
    }
    0.5 * (lo + hi)
}

/// Numerical Legendre transform `sup_u (u w − Ψ(u))` by golden-section search on the
/// concave objective; the bracket comes from the quadratic-growth constants and is widened
/// until the maximizer is interior.
pub fn conjugate_numeric(local: LocalPotential<'_>, growth: &GrowthConstants, w: f64) -> f64 {
    let c_tilde = (growth.c_tilde * local.multiplier()).max(1e-12);
    let c_grow = (growth.w_lin * local.multiplier()).abs() + 1.0;
    let mut r = (w.abs() + c_grow) / c_tilde + 1.0;
    let objective = |u: f64| u * w - local.value(u);
    for _ in 0..60 {
        let (u, _) = golden_max(&objective, -r, r, 1e-10);
        if u.abs() < 0.99 * r {
            return objective(u);
        }
        r *= 2.0;
    }
    f64::INFINITY
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let u = 0.5 * (a + b);
    (u, f(u))
}

/// The Kirchhoff map `V = H(u) = ∫₀ᵘ h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KirchhoffMap {
    pub density: Constitutive,
}

impl KirchhoffMap {
    /// Requires a density that is positive almost everywhere, so `H` is strictly increasing.
    pub fn new(density: Constitutive) -> Result<Self> {
        density.check().map_err(Error::InvalidArgument)?;
        if !density.class().positive {
            return Err(Error::InvalidArgument(format!("Kirchhoff density {density:?} is not positive almost everywhere")));
        }
        Ok(KirchhoffMap { density })
    }

    pub fn forward(&self, u: f64) -> f64 {
        self.density.antiderivative(u)
    }

    /// `H⁻¹(V)` by safeguarded Newton iteration inside a bisection bracket.
    pub fn inverse(&self, v: f64) -> f64 {
        if v == 0.0 {
            return 0.0;
        }
        let h = |u: f64| self.density.antiderivative(u) - v;
        let (mut lo, mut hi) = if v > 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
        while h(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        while h(lo) > 0.0 {
            hi = lo;
            lo *= 2.0;
        }
        let mut u = 0.5 * (lo + hi);
        for _ in 0..200 {
            let r = h(u);
            if r == 0.0 {
                return u;
            }
            if r < 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            let d = self.density.eval(u);
            let newton = if d > 0.0 { u - r / d } else { f64::NAN };
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - u).abs() <= 1e-16 * (1.0 + u.abs()) || hi - lo <= 1e-15 * (1.0 + u.abs()) {
                return next;
            }
            u = next;
        }
        u
    }
}

/// The oscillation multiplier with its factor replaced by a constant, used by tests and
/// by the effective model.
pub fn constant_multiplier(dimension: usize, value: f64) -> ModulatedField {
    ModulatedField::new(OscillatoryField::constant(dimension, value), Default::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::SlowProfile;

    const Z: [f64; 1] = [0.0];

    fn tabulated() -> ConvexPotential {
        ConvexPotential::new(
            PotentialKind::Tabulated { breakpoints: vec![-1.0, 0.0, 0.0, 2.0], slopes: vec![-2.0, 0.0, 0.5, 3.0] },
            None,
        )
        .unwrap()
    }

    #[test]
    fn values() {
        let q = ConvexPotential::quadratic(1.0).unwrap();
        assert_eq!(q.value(&Z, &Z, 3.0), 4.5);
        let s = ConvexPotential::stefan(1.0).unwrap();
        assert_eq!(s.value(&Z, &Z, -2.0), 2.0);
        assert_eq!(s.value(&Z, &Z, 2.0), 4.0);
    }

    #[test]
    fn subdifferentials() {
        let s = ConvexPotential::stefan(1.0).unwrap();
        assert_eq!(s.subdifferential(&Z, &Z, -2.0), Interval::point(-2.0));
        assert_eq!(s.subdifferential(&Z, &Z, 0.0), Interval { lo: 0.0, hi: 1.0 });
        let q = ConvexPotential::quadratic(2.0).unwrap();
        assert_eq!(q.subdifferential(&Z, &Z, 5.0), Interval::point(10.0));
        // One-sided difference quotients at the kink.
        let d = 1e-7;
        let right = (s.value(&Z, &Z, d) - s.value(&Z, &Z, 0.0)) / d;
        let left = (s.value(&Z, &Z, 0.0) - s.value(&Z, &Z, -d)) / d;
        assert!((right - 1.0).abs() < 1e-6 && left.abs() < 1e-6);
    }

    #[test]
    fn stefan_conjugate_and_beta() {
        let s = ConvexPotential::stefan(1.0).unwrap();
        let local = s.with_multiplier(1.0);
        for (w, conj, beta) in [(-1.0, 0.5, -1.0), (0.5, 0.0, 0.0), (2.0, 0.5, 1.0)] {
            assert!((local.conjugate(w) - conj).abs() < 1e-15);
            assert!((local.beta(w) - beta).abs() < 1e-15);
            // Brute-force supremum over a fine grid.
            let brute = (-500_000..=500_000).map(|i| i as f64 * 1e-4).map(|u| u * w - local.value(u)).fold(f64::NEG_INFINITY, f64::max);
            assert!((brute - conj).abs() < 1e-7, "w={w}: brute {brute}");
        }
    }

    #[test]
    fn resolvents() {
        let q = ConvexPotential::quadratic(1.0).unwrap();
        assert_eq!(q.resolvent(&Z, &Z, 2.0, 1.0).unwrap().0, 1.0);
        let s = ConvexPotential::stefan(1.0).unwrap();
        let (u, sel) = s.resolvent(&Z, &Z, 0.5, 1.0).unwrap();
        assert_eq!(u, 0.0);
        assert!((sel - 0.5).abs() < 1e-15);
        assert!(s.resolvent(&Z, &Z, 0.5, 0.0).is_err());
        for p in [q, s, tabulated()] {
            for v in [-3.0, -0.1, 0.0, 0.3, 4.0] {
                let (u, _) = p.resolvent(&Z, &Z, v, 1e-8).unwrap();
                let sub = p.subdifferential(&Z, &Z, v);
                assert!((u - v).abs() <= 1e-6 * (1.0 + sub.lo.abs().max(sub.hi.abs())));
            }
        }
    }

    #[test]
    fn kirchhoff_map() {
        let id = KirchhoffMap::new(Constitutive::Constant { value: 1.0 }).unwrap();
        assert_eq!(id.forward(0.7), 0.7);
        let cube = KirchhoffMap::new(Constitutive::Power { exponent: 3.0 }).unwrap();
        assert!((cube.forward(2.0) - 8.0).abs() < 1e-14);
        assert!((cube.inverse(8.0) - 2.0).abs() < 1e-12);
        for m in [Constitutive::Power { exponent: 2.0 }, Constitutive::Power { exponent: 1.5 }, Constitutive::Constant { value: 0.3 }] {
            let map = KirchhoffMap::new(m).unwrap();
            for i in -100..=100 {
                let u = i as f64 * 0.1;
                assert!((map.inverse(map.forward(u)) - u).abs() < 1e-10, "{m:?} u={u}");
            }
        }
        assert!(KirchhoffMap::new(Constitutive::Saturating).is_err());
    }

    #[test]
    fn kirchhoff_kind_matches_base_for_unit_density() {
        let k = ConvexPotential::new(
            PotentialKind::Kirchhoff { base: Box::new(PotentialKind::Stefan { latent: 1.0 }), density: Constitutive::Constant { value: 1.0 } },
            None,
        )
        .unwrap();
        let s = ConvexPotential::stefan(1.0).unwrap();
        for i in -30..=30 {
            let u = i as f64 * 0.13;
            assert!((k.value(&Z, &Z, u) - s.value(&Z, &Z, u)).abs() < 1e-13);
            assert!((k.beta(&Z, &Z, u) - s.beta(&Z, &Z, u)).abs() < 1e-13);
        }
    }

    #[test]
    fn kirchhoff_value_matches_quadrature() {
        let k = ConvexPotential::new(
            PotentialKind::Kirchhoff { base: Box::new(PotentialKind::Stefan { latent: 0.5 }), density: Constitutive::Power { exponent: 2.0 } },
            None,
        )
        .unwrap();
        let map = KirchhoffMap::new(Constitutive::Power { exponent: 2.0 }).unwrap();
        for v in [-3.0, -0.2, 0.4, 2.5] {
            // ∫₀^V s(H⁻¹(ν)) dν by the midpoint rule.
            let n = 200_000;
            let h = v / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let nu = (i as f64 + 0.5) * h;
                let u = map.inverse(nu);
                acc += if u > 0.0 { u + 0.5 } else { u };
            }
            assert!((acc * h - k.value(&Z, &Z, v)).abs() < 1e-6, "V={v}");
        }
    }

    #[test]
    fn tabulated_kind() {
        let t = tabulated();
        assert_eq!(t.subdifferential(&Z, &Z, 0.0), Interval { lo: 0.0, hi: 0.5 });
        assert_eq!(t.beta(&Z, &Z, 0.25), 0.0);
        // Ψ′ = 2u on [−1, 0]: Ψ(−1) = 1.
        assert!((t.value(&Z, &Z, -1.0) - 1.0).abs() < 1e-15);
        assert!(t.is_strictly_convex());
        let flat = ConvexPotential::new(
            PotentialKind::Tabulated { breakpoints: vec![-1.0, 0.0, 0.0, 1.0], slopes: vec![-1.0, -1.0, 1.0, 1.0] },
            None,
        )
        .unwrap();
        assert!(!flat.is_strictly_convex());
        assert_eq!(flat.value(&Z, &Z, -2.0), 2.0);
    }

    #[test]
    fn numeric_conjugate_agrees_with_closed_form() {
        for p in [ConvexPotential::stefan(1.0).unwrap(), ConvexPotential::quadratic(3.0).unwrap(), tabulated()] {
            let g = p.growth_constants();
            let local = p.with_multiplier(1.7);
            for w in [-4.0, -1.0, 0.0, 0.3, 1.2, 6.0] {
                let closed = local.conjugate(w);
                let numeric = conjugate_numeric(local, &g, w);
                assert!((closed - numeric).abs() < 1e-8, "{:?} w={w}: {closed} vs {numeric}", p.kind());
            }
        }
    }

    #[test]
    fn averaging() {
        let osc = ModulatedField::new(OscillatoryField::sinusoid(1, 2.0, 1.0, 0, 1.0), SlowProfile::default());
        let p = ConvexPotential::quadratic(1.0).unwrap().with_oscillation(osc).unwrap();
        let avg = averaged_potential(&p);
        for z in [0.1, 0.37] {
            assert!((avg.value(&[z], &Z, 3.0) - 9.0).abs() < 1e-14);
        }
        let plain = ConvexPotential::stefan(1.0).unwrap();
        assert_eq!(averaged_potential(&plain), plain);
        let three = ConvexPotential::stefan(1.0).unwrap().with_oscillation(constant_multiplier(1, 3.0)).unwrap();
        assert_eq!(averaged_potential(&three).value(&[0.4], &Z, 2.0), 12.0);
    }

    #[test]
    fn growth_constants_examples() {
        let s = ConvexPotential::stefan(1.0).unwrap().growth_constants();
        assert_eq!((s.c, s.h, s.c_tilde, s.w_lin), (1.0, 1.0, 0.5, 0.0));
        let q = ConvexPotential::quadratic(2.0).unwrap().growth_constants();
        assert_eq!((q.c, q.h, q.c_tilde), (2.0, 0.0, 1.0));
    }

    #[test]
    fn serde_round_trip() {
        let p = tabulated();
        let json = serde_json::to_string(&p).unwrap();
        let back: ConvexPotential = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        let bad: std::result::Result<ConvexPotential, _> = serde_json::from_str(r#"{"type":"quadratic","a":-1}"#);
        assert!(bad.is_err());
    }
}
