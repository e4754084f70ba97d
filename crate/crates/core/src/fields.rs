//! Oscillatory coefficient fields.
//!
//! Every oscillatory coefficient is a finite trigonometric sum
//! `c + Σ a_j · wave_j(k_j · z + φ_j)` in the fast variable `z`. Periodic and
//! quasi-periodic (incommensurate) frequencies are both allowed. Such sums have an exact
//! mean value (the constant term), which is what makes every averaged quantity computable.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Minimum number of quadrature samples per shortest wavelength in numeric means.
pub const SAMPLES_PER_WAVELENGTH: usize = 16;

/// Frequencies below this norm are treated as zero when simplifying products.
const ZERO_FREQUENCY: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Sine,
    Cosine,
}

impl Waveform {
    #[inline]
    pub fn apply(self, theta: f64) -> f64 {
        match self {
            Waveform::Sine => theta.sin(),
            Waveform::Cosine => theta.cos(),
        }
    }
}

/// One term `amplitude · waveform(frequency · z + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModeSpec")]
pub struct Mode {
    pub amplitude: f64,
    pub frequency: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
    pub waveform: Waveform,
}

#[derive(Deserialize)]
struct ModeSpec {
    amplitude: f64,
    frequency: Vec<f64>,
    #[serde(default)]
    phase: f64,
    waveform: Waveform,
}

impl TryFrom<ModeSpec> for Mode {
    type Error = String;

    fn try_from(m: ModeSpec) -> std::result::Result<Self, String> {
        if m.frequency.iter().all(|&k| k == 0.0) {
            return Err(format!("mode with amplitude {} has a zero frequency vector", m.amplitude));
        }
        Ok(Mode { amplitude: m.amplitude, frequency: m.frequency, phase: m.phase, waveform: m.waveform })
    }
}

impl Mode {
    pub fn sine(amplitude: f64, frequency: Vec<f64>) -> Self {
        Mode { amplitude, frequency, phase: 0.0, waveform: Waveform::Sine }
    }

    pub fn cosine(amplitude: f64, frequency: Vec<f64>) -> Self {
        Mode { amplitude, frequency, phase: 0.0, waveform: Waveform::Cosine }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    fn frequency_norm(&self) -> f64 {
        self.frequency.iter().map(|k| k * k).sum::<f64>().sqrt()
    }

    #[inline]
    fn argument(&self, z: &[f64]) -> f64 {
        self.frequency.iter().zip(z).map(|(k, zi)| k * zi).sum::<f64>() + self.phase
    }
}

/// A trigonometric polynomial in the fast variable.
///
/// A `dimension` of zero in a deserialized value means "not stated"; problem specs fill it
/// in from the problem dimension before validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatoryField {
    #[serde(default)]
    dimension: usize,
    #[serde(default)]
    constant: f64,
    #[serde(default)]
    modes: Vec<Mode>,
}

impl OscillatoryField {
    pub fn try_new(dimension: usize, constant: f64, modes: Vec<Mode>) -> Result<Self> {
        let field = OscillatoryField { dimension, constant, modes };
        field.check()?;
        Ok(field)
    }

    pub fn constant(dimension: usize, value: f64) -> Self {
        OscillatoryField { dimension, constant: value, modes: Vec::new() }
    }

    /// `constant + amplitude · sin(2π · cycles · z_axis)`, the common test coefficient.
    pub fn sinusoid(dimension: usize, constant: f64, amplitude: f64, axis: usize, cycles: f64) -> Self {
        let mut frequency = vec![0.0; dimension];
        frequency[axis] = 2.0 * PI * cycles;
        OscillatoryField { dimension, constant, modes: vec![Mode::sine(amplitude, frequency)] }
    }

    pub fn with_mode(mut self, mode: Mode) -> Result<Self> {
        self.modes.push(mode);
        self.check()?;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn is_constant(&self) -> bool {
        self.modes.is_empty()
    }

    /// Fills in an unstated dimension. Stated dimensions are left alone.
    pub(crate) fn infer_dimension(&mut self, dimension: usize) {
        if self.dimension == 0 {
            self.dimension = dimension;
        }
    }

    /// Checks the structural invariants: known dimension, matching frequency lengths,
    /// nonzero finite frequencies and finite coefficients.
    pub fn check(&self) -> Result<()> {
        if !(1..=2).contains(&self.dimension) {
            return Err(Error::InvalidField(format!("dimension must be 1 or 2, got {}", self.dimension)));
        }
        if !self.constant.is_finite() {
            return Err(Error::InvalidField("constant term is not finite".into()));
        }
        for (j, mode) in self.modes.iter().enumerate() {
            if mode.frequency.len() != self.dimension {
                return Err(Error::InvalidField(format!(
                    "mode {j}: frequency has {} components, field dimension is {}",
                    mode.frequency.len(),
                    self.dimension
                )));
            }
            if !mode.amplitude.is_finite() || !mode.phase.is_finite() || mode.frequency.iter().any(|k| !k.is_finite()) {
                return Err(Error::InvalidField(format!("mode {j}: non-finite coefficient")));
            }
            if mode.frequency.iter().all(|&k| k == 0.0) {
                return Err(Error::InvalidField(format!("mode {j}: frequency vector is zero")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got: z.len() });
        }
        Ok(self.value(z))
    }

    /// Evaluation without the dimension check, for hot loops over grids of known shape.
    #[inline]
    pub fn value(&self, z: &[f64]) -> f64 {
        debug_assert!(self.modes.is_empty() || z.len() == self.dimension);
        self.constant + self.modes.iter().map(|m| m.amplitude * m.waveform.apply(m.argument(z))).sum::<f64>()
    }

    /// `|c| + Σ|a_j|`, a bound on `|value|` everywhere.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs() + self.oscillation_amplitude()
    }

    /// `c − Σ|a_j|`, a lower bound on the field everywhere.
    pub fn lower_bound(&self) -> f64 {
        self.constant - self.oscillation_amplitude()
    }

    /// `c + Σ|a_j|`, an upper bound on the field everywhere.
    pub fn upper_bound(&self) -> f64 {
        self.constant + self.oscillation_amplitude()
    }

    fn oscillation_amplitude(&self) -> f64 {
        self.modes.iter().map(|m| m.amplitude.abs()).sum()
    }

    /// Largest frequency norm over all modes, zero for constant fields.
    pub fn max_frequency(&self) -> f64 {
        self.modes.iter().map(Mode::frequency_norm).fold(0.0, f64::max)
    }

    /// The field translated by `y`: `shifted(y).value(z) == value(z + y)`.
    pub fn shifted(&self, y: &[f64]) -> Result<Self> {
        if y.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got: y.len() });
        }
        let modes = self
            .modes
            .iter()
            .map(|m| Mode { phase: m.argument(y), ..m.clone() })
            .collect();
        Ok(OscillatoryField { modes, ..self.clone() })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        OscillatoryField {
            dimension: self.dimension,
            constant: self.constant * factor,
            modes: self.modes.iter().map(|m| Mode { amplitude: m.amplitude * factor, ..m.clone() }).collect(),
        }
    }

    /// The oscillating part only (constant term removed).
    pub fn fluctuation(&self) -> Self {
        OscillatoryField { constant: 0.0, ..self.clone() }
    }

    /// Pointwise product, expanded by product-to-sum identities. Terms whose frequencies
    /// cancel are folded into the constant.
    pub fn product(&self, other: &OscillatoryField) -> Result<Self> {
        if self.dimension != other.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got: other.dimension });
        }
        let n = self.dimension;
        let mut constant = self.constant * other.constant;
        let mut modes = Vec::with_capacity(2 * self.modes.len() * other.modes.len() + self.modes.len() + other.modes.len());
        for m in &self.modes {
            modes.push(Mode { amplitude: m.amplitude * other.constant, ..m.clone() });
        }
        for m in &other.modes {
            modes.push(Mode { amplitude: m.amplitude * self.constant, ..m.clone() });
        }
        for a in &self.modes {
            for b in &other.modes {
                let half = 0.5 * a.amplitude * b.amplitude;
                let diff: Vec<f64> = (0..n).map(|d| a.frequency[d] - b.frequency[d]).collect();
                let sum: Vec<f64> = (0..n).map(|d| a.frequency[d] + b.frequency[d]).collect();
                let (pd, ps) = (a.phase - b.phase, a.phase + b.phase);
                // (coefficient, waveform) for the difference and sum terms.
                let (d_term, s_term) = match (a.waveform, b.waveform) {
                    (Waveform::Sine, Waveform::Sine) => ((half, Waveform::Cosine), (-half, Waveform::Cosine)),
                    (Waveform::Cosine, Waveform::Cosine) => ((half, Waveform::Cosine), (half, Waveform::Cosine)),
                    (Waveform::Sine, Waveform::Cosine) => ((half, Waveform::Sine), (half, Waveform::Sine)),
                    (Waveform::Cosine, Waveform::Sine) => ((-half, Waveform::Sine), (half, Waveform::Sine)),
                };
                for ((coef, wave), freq, phase) in [(d_term, diff, pd), (s_term, sum, ps)] {
                    if coef == 0.0 {
                        continue;
                    }
                    if freq.iter().map(|k| k * k).sum::<f64>().sqrt() <= ZERO_FREQUENCY {
                        constant += coef * wave.apply(phase);
                    } else {
                        modes.push(Mode { amplitude: coef, frequency: freq, phase, waveform: wave });
                    }
                }
            }
        }
        Ok(OscillatoryField { dimension: n, constant, modes })
    }
}

/// How a mean value is computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeanMode {
    /// The constant term, which is the exact mean of a trigonometric sum.
    Exact,
    /// Average over the box `[−L, L]ⁿ` by composite Simpson quadrature.
    Numeric { half_width: f64 },
}

pub fn mean_value(field: &OscillatoryField, mode: MeanMode) -> Result<f64> {
    match mode {
        MeanMode::Exact => Ok(field.constant),
        MeanMode::Numeric { half_width } => box_average(field, half_width),
    }
}

/// Composite Simpson average over `[−L, L]ⁿ`.
///
/// The tensor-product rule is applied mode by mode: writing each mode as the real or
/// imaginary part of `e^{iφ} Π_d e^{i k_d z_d}`, the n-dimensional quadrature sum factorizes
/// into one-dimensional sums. The value equals the full tensor-product quadrature.
fn box_average(field: &OscillatoryField, half_width: f64) -> Result<f64> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(Error::InvalidArgument(format!("box half-width must be positive, got {half_width}")));
    }
    let intervals = simpson_intervals(2.0 * half_width, field.max_frequency());
    let h = 2.0 * half_width / intervals as f64;
    let weights: Vec<f64> = (0..=intervals)
        .map(|j| {
            let w = if j == 0 || j == intervals {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0 / (2.0 * half_width)
        })
        .collect();
    let mut total = field.constant;
    for mode in &field.modes {
        // Π_d avg(e^{i k_d z}) as a complex number (re, im).
        let (mut re, mut im) = (mode.phase.cos(), mode.phase.sin());
        for &k in &mode.frequency {
            let (mut sr, mut si) = (0.0, 0.0);
            for (j, w) in weights.iter().enumerate() {
                let theta = k * (-half_width + j as f64 * h);
                sr += w * theta.cos();
                si += w * theta.sin();
            }
            let (nr, ni) = (re * sr - im * si, re * si + im * sr);
            re = nr;
            im = ni;
        }
        total += mode.amplitude
            * match mode.waveform {
                Waveform::Cosine => re,
                Waveform::Sine => im,
            };
    }
    Ok(total)
}

/// Even number of Simpson intervals giving at least 16 samples per shortest wavelength.
fn simpson_intervals(length: f64, max_frequency: f64) -> usize {
    let per_length = if max_frequency > 0.0 {
        SAMPLES_PER_WAVELENGTH as f64 * max_frequency / (2.0 * PI)
    } else {
        0.0
    };
    let n = ((length * per_length).ceil() as usize).max(16);
    n + n % 2
}

/// Average of `e^{i k·x}` over the ball `B(0, t)` (a real number by symmetry).
pub fn ball_multiplier(frequency_norm: f64, t: f64, dimension: usize) -> f64 {
    let r = frequency_norm * t;
    if r.abs() < 1e-8 {
        return 1.0;
    }
    match dimension {
        1 => r.sin() / r,
        _ => 2.0 * bessel_j1(r) / r,
    }
}

/// Bessel function J₁ from its integral representation
/// `J₁(x) = (1/π) ∫₀^π cos(τ − x sin τ) dτ`, by the trapezoidal rule on the periodic
/// integrand (exponentially convergent once the node count exceeds `x`).
pub fn bessel_j1(x: f64) -> f64 {
    let n = (x.abs().ceil() as usize + 64) * 2;
    let h = PI / n as f64;
    // Integrand is even about τ = 0 and 2π-periodic: trapezoid over [0, π] with half-weight ends.
    let f = |tau: f64| (tau - x * tau.sin()).cos();
    let mut s = 0.5 * (f(0.0) + f(PI));
    for j in 1..n {
        s += f(j as f64 * h);
    }
    s * h / PI
}

/// The finite-`t` ergodicity defect: the mean over `y` of
/// `|avg_{B(0,t)} f(x + y) dx − M(f)|²`.
///
/// The inner ball average is exact mode by mode (`ball_multiplier`); the outer mean is a
/// numeric box average over `[−sample_l, sample_l]ⁿ` of the squared trigonometric sum.
pub fn ergodicity_defect(field: &OscillatoryField, t: f64, sample_l: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("ball radius must be positive, got {t}")));
    }
    if !(sample_l > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling half-width must be positive, got {sample_l}")));
    }
    let averaged = averaged_fluctuation(field, t);
    let squared = averaged.product(&averaged)?;
    Ok(box_average(&squared, sample_l)?.max(0.0))
}

/// Closed form of the ergodicity defect (exact outer mean), used as a cross-check.
pub fn ergodicity_defect_exact(field: &OscillatoryField, t: f64) -> Result<f64> {
    let averaged = averaged_fluctuation(field, t);
    Ok(averaged.product(&averaged)?.constant.max(0.0))
}

fn averaged_fluctuation(field: &OscillatoryField, t: f64) -> OscillatoryField {
    let modes = field
        .modes
        .iter()
        .map(|m| Mode { amplitude: m.amplitude * ball_multiplier(m.frequency_norm(), t, field.dimension), ..m.clone() })
        .collect();
    OscillatoryField { dimension: field.dimension, constant: 0.0, modes }
}

/// Closed-form slow profile `s(x)` on the physical domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SlowProfile {
    Constant { value: f64 },
    /// `offset + slope · x`.
    Affine { offset: f64, slope: Vec<f64> },
    /// `amplitude · Π_d sin(k_d π x_d)`.
    SineProduct { amplitude: f64, modes: Vec<u32> },
    /// `below` where `x_axis < threshold`, `above` otherwise.
    Step { axis: usize, threshold: f64, below: f64, above: f64 },
    Sum { terms: Vec<SlowProfile> },
}

impl Default for SlowProfile {
    fn default() -> Self {
        SlowProfile::Constant { value: 1.0 }
    }
}

impl SlowProfile {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SlowProfile::Constant { value } => *value,
            SlowProfile::Affine { offset, slope } => offset + slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            SlowProfile::SineProduct { amplitude, modes } => {
                amplitude * modes.iter().zip(x).map(|(&k, &xi)| (k as f64 * PI * xi).sin()).product::<f64>()
            }
            SlowProfile::Step { axis, threshold, below, above } => {
                if x[*axis] < *threshold {
                    *below
                } else {
                    *above
                }
            }
            SlowProfile::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
        }
    }

    pub(crate) fn check(&self, dimension: usize) -> std::result::Result<(), String> {
        match self {
            SlowProfile::Constant { value } if !value.is_finite() => Err("non-finite value".into()),
            SlowProfile::Affine { slope, .. } if slope.len() != dimension => {
                Err(format!("slope has {} components, expected {dimension}", slope.len()))
            }
            SlowProfile::SineProduct { modes, .. } if modes.len() != dimension => {
                Err(format!("modes has {} entries, expected {dimension}", modes.len()))
            }
            SlowProfile::Step { axis, .. } if *axis >= dimension => Err(format!("axis {axis} out of range")),
            SlowProfile::Sum { terms } => terms.iter().try_for_each(|t| t.check(dimension)),
            _ => Ok(()),
        }
    }

    /// Bounds `(min, max)` estimated on a uniform sample of the unit box.
    pub fn sampled_bounds(&self, dimension: usize) -> (f64, f64) {
        let n = 64usize;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let count = n.pow(dimension as u32);
        let mut x = vec![0.0; dimension];
        for idx in 0..=count {
            let mut rem = idx.min(count - 1);
            for xd in x.iter_mut().rev() {
                *xd = (rem % n) as f64 / (n - 1) as f64;
                rem /= n;
            }
            let v = self.eval(&x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// An oscillatory factor times a slow profile: `g(z) · s(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulatedField {
    pub factor: OscillatoryField,
    #[serde(default)]
    pub profile: SlowProfile,
}

impl ModulatedField {
    pub fn new(factor: OscillatoryField, profile: SlowProfile) -> Self {
        ModulatedField { factor, profile }
    }

    #[inline]
    pub fn value(&self, z: &[f64], x: &[f64]) -> f64 {
        self.factor.value(z) * self.profile.eval(x)
    }

    /// Mean over the fast variable: `M(g) · s(x)` as a field with constant factor.
    pub fn averaged(&self) -> Self {
        ModulatedField {
            factor: OscillatoryField::constant(self.factor.dimension, self.factor.constant),
            profile: self.profile.clone(),
        }
    }
}

/// Closed-form scalar functions of `u` used as Kirchhoff densities, flux modulations and
/// source nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constitutive {
    Identity,
    Constant { value: f64 },
    /// `m |u|^{m−1}`, m > 1.
    Power { exponent: f64 },
    /// `u / (1 + |u|)`.
    Saturating,
    /// `sign(u) |u|^σ`, 0 < σ < 1.
    Holder { exponent: f64 },
}

/// Regularity and growth class declared by a catalog entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstitutiveClass {
    /// Global Hölder exponent and constant: `|F(a) − F(b)| ≤ C |a − b|^e`. `None` when the
    /// function is only locally Hölder.
    pub holder: Option<(f64, f64)>,
    /// Growth `|F(u)| ≤ c |u|^p + h` as `(p, c, h)`.
    pub growth: (f64, f64, f64),
    /// `F(u) > 0` for almost every `u`.
    pub positive: bool,
    pub bounded: bool,
}

impl Constitutive {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Constitutive::Identity => u,
            Constitutive::Constant { value } => value,
            Constitutive::Power { exponent } => exponent * u.abs().powf(exponent - 1.0),
            Constitutive::Saturating => u / (1.0 + u.abs()),
            Constitutive::Holder { exponent } => u.signum() * u.abs().powf(exponent),
        }
    }

    /// `∫₀ᵘ F(σ) dσ` in closed form.
    pub fn antiderivative(&self, u: f64) -> f64 {
        match *self {
            Constitutive::Identity => 0.5 * u * u,
            Constitutive::Constant { value } => value * u,
            Constitutive::Power { exponent } => u.signum() * u.abs().powf(exponent),
            Constitutive::Saturating => u.abs() - u.abs().ln_1p(),
            Constitutive::Holder { exponent } => u.abs().powf(exponent + 1.0) / (exponent + 1.0),
        }
    }

    /// `∫₀ᵘ (∫₀^σ F) dσ` in closed form.
    pub fn second_antiderivative(&self, u: f64) -> f64 {
        let a = u.abs();
        match *self {
            Constitutive::Identity => u * u * u / 6.0,
            Constitutive::Constant { value } => 0.5 * value * u * u,
            Constitutive::Power { exponent } => a.powf(exponent + 1.0) / (exponent + 1.0),
            Constitutive::Saturating => u.signum() * (0.5 * a * a - (1.0 + a) * a.ln_1p() + a),
            Constitutive::Holder { exponent } => {
                u.signum() * a.powf(exponent + 2.0) / ((exponent + 1.0) * (exponent + 2.0))
            }
        }
    }

    pub fn class(&self) -> ConstitutiveClass {
        match *self {
            Constitutive::Identity => ConstitutiveClass {
                holder: Some((1.0, 1.0)),
                growth: (1.0, 1.0, 0.0),
                positive: false,
                bounded: false,
            },
            Constitutive::Constant { value } => ConstitutiveClass {
                holder: Some((1.0, 0.0)),
                growth: (0.0, 0.0, value.abs()),
                positive: value > 0.0,
                bounded: true,
            },
            Constitutive::Power { exponent } => ConstitutiveClass {
                holder: (exponent <= 2.0).then_some((exponent - 1.0, exponent)),
                growth: (exponent - 1.0, exponent, 0.0),
                positive: true,
                bounded: false,
            },
            Constitutive::Saturating => ConstitutiveClass {
                holder: Some((1.0, 1.0)),
                growth: (0.0, 0.0, 1.0),
                positive: false,
                bounded: true,
            },
            Constitutive::Holder { exponent } => ConstitutiveClass {
                holder: Some((exponent, 2f64.powf(1.0 - exponent))),
                growth: (exponent, 1.0, 0.0),
                positive: false,
                bounded: false,
            },
        }
    }

    pub(crate) fn check(&self) -> std::result::Result<(), String> {
        match *self {
            Constitutive::Power { exponent } if !(exponent > 1.0) => Err(format!("power exponent must exceed 1, got {exponent}")),
            Constitutive::Holder { exponent } if !(exponent > 0.0 && exponent < 1.0) => {
                Err(format!("Hölder exponent must lie in (0, 1), got {exponent}"))
            }
            Constitutive::Constant { value } if !value.is_finite() => Err("non-finite constant".into()),
            _ => Ok(()),
        }
    }
}

/// An `n × n` matrix of oscillatory fields, optionally scaled by a catalog function of `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixField {
    pub entries: Vec<Vec<OscillatoryField>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<Constitutive>,
}

impl MatrixField {
    pub fn try_new(entries: Vec<Vec<OscillatoryField>>) -> Result<Self> {
        let m = MatrixField { entries, modulation: None };
        m.check()?;
        Ok(m)
    }

    /// `k(z) · I`.
    pub fn isotropic(k: OscillatoryField) -> Self {
        let n = k.dimension();
        let entries = (0..n)
            .map(|i| (0..n).map(|j| if i == j { k.clone() } else { OscillatoryField::constant(n, 0.0) }).collect())
            .collect();
        MatrixField { entries, modulation: None }
    }

    /// A constant matrix given row-major.
    pub fn constant(dimension: usize, values: &[f64]) -> Self {
        let entries = (0..dimension)
            .map(|i| (0..dimension).map(|j| OscillatoryField::constant(dimension, values[i * dimension + j])).collect())
            .collect();
        MatrixField { entries, modulation: None }
    }

    pub fn with_modulation(mut self, modulation: Option<Constitutive>) -> Self {
        self.modulation = modulation;
        self
    }

    pub fn dimension(&self) -> usize {
        self.entries.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.entries.len();
        if !(1..=2).contains(&n) {
            return Err(Error::InvalidField(format!("matrix dimension must be 1 or 2, got {n}")));
        }
        for (i, row) in self.entries.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidField(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, f) in row.iter().enumerate() {
                f.check().map_err(|e| Error::InvalidField(format!("entry ({i},{j}): {e}")))?;
                if f.dimension() != n {
                    return Err(Error::InvalidField(format!("entry ({i},{j}) has dimension {}, expected {n}", f.dimension())));
                }
            }
        }
        if let Some(m) = &self.modulation {
            m.check().map_err(Error::InvalidField)?;
        }
        Ok(())
    }

    pub(crate) fn infer_dimension(&mut self) {
        let n = self.entries.len();
        for f in self.entries.iter_mut().flatten() {
            f.infer_dimension(n);
        }
    }

    /// Symmetric part of `K(z)` written row-major into `out` (length n²), without modulation.
    #[inline]
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        let n = self.entries.len();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.entries[i][j].value(z);
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.entries.len();
        (0..n).all(|i| (0..i).all(|j| self.entries[i][j] == self.entries[j][i]))
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().flatten().all(OscillatoryField::is_constant)
    }

    pub fn modulation_value(&self, u: f64) -> f64 {
        self.modulation.map_or(1.0, |m| m.eval(u))
    }

    /// Gershgorin-type bounds `(k₀, k₁)` on the quadratic form from the fields' sup bounds.
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let n = self.entries.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| self.entries[i][j].sup_bound()).sum();
            lo = lo.min(self.entries[i][i].lower_bound() - off);
            hi = hi.max(self.entries[i][i].upper_bound() + off);
        }
        (lo, hi)
    }

    /// Entry-wise fast-variable means.
    pub fn mean_matrix(&self) -> Vec<f64> {
        self.entries.iter().flatten().map(OscillatoryField::constant_term).collect()
    }

    pub fn all_fields(&self) -> impl Iterator<Item = &OscillatoryField> {
        self.entries.iter().flatten()
    }
}

/// Extreme eigenvalues of the symmetric part of an n×n (n ≤ 2) row-major matrix.
pub fn symmetric_eigen_bounds(m: &[f64], n: usize) -> (f64, f64) {
    match n {
        1 => (m[0], m[0]),
        _ => {
            let a = m[0];
            let d = m[3];
            let b = 0.5 * (m[1] + m[2]);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (mid - rad, mid + rad)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sin_sq_pair() -> OscillatoryField {
        // sin²(z) + sin²(√2 z) = 1 − ½cos(2z) − ½cos(2√2 z)
        OscillatoryField::try_new(
            1,
            1.0,
            vec![Mode::cosine(-0.5, vec![2.0]), Mode::cosine(-0.5, vec![2.0 * 2f64.sqrt()])],
        )
        .unwrap()
    }

    #[test]
    fn eval_examples() {
        let c = OscillatoryField::constant(1, 5.0);
        assert_eq!(c.eval(&[0.3]).unwrap(), 5.0);
        let s = OscillatoryField::sinusoid(1, 0.0, 1.0, 0, 1.0);
        assert!((s.eval(&[0.25]).unwrap() - 1.0).abs() < 1e-15);
        let sin_sq = OscillatoryField::try_new(1, 0.5, vec![Mode::cosine(-0.5, vec![2.0])]).unwrap();
        assert!(sin_sq.eval(&[0.0]).unwrap().abs() < 1e-15);
        let z: f64 = 0.7;
        assert!((sin_sq.eval(&[z]).unwrap() - z.sin().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = OscillatoryField::sinusoid(2, 0.0, 1.0, 0, 1.0);
        assert!(matches!(s.eval(&[0.1]), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn zero_frequency_rejected() {
        let err = OscillatoryField::try_new(1, 0.0, vec![Mode::sine(1.0, vec![0.0])]).unwrap_err();
        assert!(err.to_string().contains("mode 0"));
    }

    #[test]
    fn mean_values() {
        let s = OscillatoryField::sinusoid(1, 0.0, 1.0, 0, 1.0);
        assert_eq!(mean_value(&s, MeanMode::Exact).unwrap(), 0.0);
        let f = sin_sq_pair();
        assert_eq!(mean_value(&f, MeanMode::Exact).unwrap(), 1.0);
        let numeric = mean_value(&f, MeanMode::Numeric { half_width: 1e4 }).unwrap();
        assert!((numeric - 1.0).abs() < 1e-3, "numeric mean {numeric}");
        let c = OscillatoryField::constant(1, 7.0);
        assert!((mean_value(&c, MeanMode::Numeric { half_width: 1.0 }).unwrap() - 7.0).abs() < 1e-14);
        assert!(mean_value(&c, MeanMode::Numeric { half_width: 0.0 }).is_err());
    }

    #[test]
    fn numeric_mean_matches_brute_force_in_2d() {
        let f = OscillatoryField::try_new(
            2,
            0.3,
            vec![Mode::sine(1.0, vec![1.3, 0.7]).with_phase(0.4), Mode::cosine(0.5, vec![0.0, 2.1])],
        )
        .unwrap();
        let l = 3.0;
        let fast = mean_value(&f, MeanMode::Numeric { half_width: l }).unwrap();
        // Direct tensor-product Simpson sum with the same node count.
        let n = simpson_intervals(2.0 * l, f.max_frequency());
        let h = 2.0 * l / n as f64;
        let w = |j: usize| {
            if j == 0 || j == n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let mut s = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                s += w(i) * w(j) * f.value(&[-l + i as f64 * h, -l + j as f64 * h]);
            }
        }
        let brute = s * (h / 3.0) * (h / 3.0) / (4.0 * l * l);
        assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
    }

    #[test]
    fn numeric_mean_error_envelope_decreases() {
        let f = sin_sq_pair();
        // |box average of cos(kz)| ≤ 1/(kL): C = Σ |a|/|k|.
        let c: f64 = f.modes().iter().map(|m| m.amplitude.abs() / m.frequency_norm()).sum();
        for l in [10.0, 100.0, 1000.0] {
            let err = (mean_value(&f, MeanMode::Numeric { half_width: l }).unwrap() - 1.0).abs();
            assert!(err <= c / l + 1e-12, "L={l}: err {err} > {}", c / l);
        }
    }

    #[test]
    fn ergodicity_defect_examples() {
        let c = OscillatoryField::constant(1, 3.0);
        assert_eq!(ergodicity_defect(&c, 2.0, 10.0).unwrap(), 0.0);
        let s = OscillatoryField::sinusoid(1, 0.0, 1.0, 0, 1.0);
        assert!(ergodicity_defect(&s, 1.0, 100.0).unwrap() < 1e-20);
        let sin_z = OscillatoryField::try_new(1, 0.0, vec![Mode::sine(1.0, vec![1.0])]).unwrap();
        let closed = 2.0 / (PI * PI);
        let numeric = ergodicity_defect(&sin_z, PI / 2.0, 1e3).unwrap();
        assert!((numeric - closed).abs() < 1e-3, "{numeric} vs {closed}");
        let exact = ergodicity_defect_exact(&sin_z, PI / 2.0).unwrap();
        assert!((exact - closed).abs() < 1e-14);
        assert!(ergodicity_defect(&sin_z, 0.0, 1.0).is_err());
    }

    #[test]
    fn periodic_defect_vanishes_along_period_multiples() {
        let s = OscillatoryField::sinusoid(1, 1.0, 0.8, 0, 1.0);
        for t in [1.0, 2.0, 4.0, 8.0] {
            assert!(ergodicity_defect(&s, t, 50.0).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn bessel_j1_reference_values() {
        // Tabulated: J1(1) = 0.4400505857449335, J1(10) = 0.04347274616886144
        assert!((bessel_j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((bessel_j1(10.0) - 0.043_472_746_168_861_44).abs() < 1e-14);
    }

    #[test]
    fn product_matches_pointwise() {
        let a = OscillatoryField::try_new(1, 0.5, vec![Mode::sine(1.0, vec![1.0]), Mode::cosine(0.3, vec![2.5]).with_phase(0.2)]).unwrap();
        let b = OscillatoryField::try_new(1, -1.0, vec![Mode::sine(0.7, vec![1.0]).with_phase(1.1), Mode::cosine(2.0, vec![0.4])]).unwrap();
        let p = a.product(&b).unwrap();
        for z in [-3.0, 0.0, 0.37, 5.2] {
            assert!((p.value(&[z]) - a.value(&[z]) * b.value(&[z])).abs() < 1e-13);
        }
    }

    #[test]
    fn catalog_antiderivatives() {
        let cube = Constitutive::Power { exponent: 3.0 };
        assert_eq!(cube.eval(2.0), 12.0);
        assert!((cube.antiderivative(2.0) - 8.0).abs() < 1e-14);
        assert!((cube.antiderivative(-2.0) + 8.0).abs() < 1e-14);
        for f in [Constitutive::Identity, Constitutive::Saturating, Constitutive::Holder { exponent: 0.5 }] {
            // Central difference of the antiderivative recovers the function.
            let u = 0.8;
            let d = (f.antiderivative(u + 1e-6) - f.antiderivative(u - 1e-6)) / 2e-6;
            assert!((d - f.eval(u)).abs() < 1e-8, "{f:?}");
        }
    }

    #[test]
    fn matrix_bounds() {
        let k = MatrixField::isotropic(OscillatoryField::sinusoid(2, 2.0, 1.0, 0, 1.0));
        assert_eq!(k.gershgorin_bounds(), (1.0, 3.0));
        assert!(k.is_symmetric());
        let (lo, hi) = symmetric_eigen_bounds(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((lo - 1.0).abs() < 1e-15 && (hi - 3.0).abs() < 1e-15);
    }
}
