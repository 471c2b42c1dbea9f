//! Domain types and right-hand sides of the SGZP dynamics.
//!
//! Three variants share the same four-compartment state (susceptible,
//! germinator, zombie, passive): the plain model, the model with a halting
//! action that converts zombies to passives, and the model where the
//! defender throttles the contact rate as a function of the observed
//! zombie fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `S + G + Z + P = 1` for stored states.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Looser tolerance applied to in-flight integrator stage states.
pub const STAGE_SIMPLEX_TOL: f64 = 1e-7;
/// Control box violations up to this size are clamped, larger ones are errors.
pub const CONTROL_CLAMP_TOL: f64 = 1e-12;
/// Below this argument, `f'` of a power efficacy with p < 1 is frozen.
pub const FPRIME_CLAMP: f64 = 1e-12;
/// Power-law damage terms are not C^3 where their argument is below this
/// band; quadrature and finite-difference checks treat that region specially.
pub const POWER_SINGULAR_BAND: f64 = 1e-3;

/// Population fractions of the four compartments at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpidemicState {
    pub s: f64,
    pub g: f64,
    pub z: f64,
    pub p: f64,
}

impl EpidemicState {
    pub fn new(s: f64, g: f64, z: f64, p: f64) -> Result<Self> {
        let state = Self { s, g, z, p };
        state.validate(SIMPLEX_TOL)?;
        Ok(state)
    }

    pub fn total(&self) -> f64 {
        self.s + self.g + self.z + self.p
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        for (name, v) in [("S", self.s), ("G", self.g), ("Z", self.z), ("P", self.p)] {
            if !v.is_finite() {
                return Err(Error::InvalidState(format!("{name} is not finite")));
            }
        }
        if self.s <= 0.0 {
            return Err(Error::InvalidState(format!("S = {} must be positive", self.s)));
        }
        if self.z < -tol || self.p < -tol || self.g < 0.0 {
            return Err(Error::InvalidState(format!(
                "negative compartment (G={}, Z={}, P={})",
                self.g, self.z, self.p
            )));
        }
        let drift = (self.total() - 1.0).abs();
        if drift > tol {
            return Err(Error::InvalidState(format!(
                "S+G+Z+P = 1 violated by {drift:e}"
            )));
        }
        Ok(())
    }
}

/// The attacker's instantaneous control values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub u_z: f64,
    pub u_p: f64,
    pub u_h: f64,
}

impl ControlVector {
    pub const ZERO: Self = Self { u_z: 0.0, u_p: 0.0, u_h: 0.0 };

    /// Builds a control, clamping box violations up to [`CONTROL_CLAMP_TOL`]
    /// and rejecting anything larger.
    pub fn new(u_z: f64, u_p: f64, u_h: f64) -> Result<Self> {
        let clamp = |name: &str, v: f64| -> Result<f64> {
            if !v.is_finite() {
                return Err(Error::InvalidControl(format!("{name} is not finite")));
            }
            if v < -CONTROL_CLAMP_TOL || v > 1.0 + CONTROL_CLAMP_TOL {
                return Err(Error::InvalidControl(format!("{name} = {v} outside [0, 1]")));
            }
            Ok(v.clamp(0.0, 1.0))
        };
        let u_z = clamp("u_Z", u_z)?;
        let u_p = clamp("u_P", u_p)?;
        let u_h = clamp("u_h", u_h)?;
        if u_z + u_p > 1.0 + CONTROL_CLAMP_TOL {
            return Err(Error::InvalidControl(format!(
                "u_Z + u_P = {} exceeds 1",
                u_z + u_p
            )));
        }
        Ok(Self { u_z, u_p, u_h })
    }

    pub fn validate(&self, variant: Variant) -> Result<()> {
        Self::new(self.u_z, self.u_p, self.u_h)?;
        if variant != Variant::Halting && self.u_h > 0.0 {
            return Err(Error::InvalidControl(
                "u_h must be zero outside the halting variant".into(),
            ));
        }
        Ok(())
    }
}

/// Which dynamics the model follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoHalting,
    Halting,
    Adaptive,
}

/// The defender's effective contact rate as a function of the zombie fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSpec {
    Constant { beta: f64 },
    Affine { a: f64, beta_max: f64 },
    Sigmoid { beta_0: f64, alpha: f64, z_th: f64 },
}

impl BetaSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaSpec::Constant { beta } => {
                if !(beta > 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidModel(format!("beta = {beta} must be positive")));
                }
            }
            BetaSpec::Affine { a, beta_max } => {
                if !(beta_max > 0.0) || !beta_max.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "beta_max = {beta_max} must be positive"
                    )));
                }
                // a = beta_max would shut the network down completely at Z = 1.
                if !(0.0..beta_max).contains(&a) {
                    return Err(Error::InvalidModel(format!(
                        "affine slope a = {a} must lie in [0, beta_max)"
                    )));
                }
            }
            BetaSpec::Sigmoid { beta_0, alpha, z_th } => {
                if !(beta_0 > 0.0) || !beta_0.is_finite() {
                    return Err(Error::InvalidModel(format!("beta_0 = {beta_0} must be positive")));
                }
                if !(alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::InvalidModel(format!("alpha = {alpha} must be positive")));
                }
                if !(0.0 < z_th && z_th < 1.0) {
                    return Err(Error::InvalidModel(format!("Z_th = {z_th} must lie in (0, 1)")));
                }
            }
        }
        Ok(())
    }

    /// Effective mixing rate at zombie fraction `z`.
    pub fn eval(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::InvalidState(format!("Z = {z} outside [0, 1]")));
        }
        self.validate()?;
        Ok(self.eval_unchecked(z))
    }

    pub(crate) fn eval_unchecked(&self, z: f64) -> f64 {
        match *self {
            BetaSpec::Constant { beta } => beta,
            BetaSpec::Affine { a, beta_max } => beta_max - a * z,
            BetaSpec::Sigmoid { beta_0, alpha, z_th } => {
                beta_0 / (1.0 + (alpha * (z - z_th)).exp())
            }
        }
    }

    /// Analytic derivative with respect to `z`.
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            BetaSpec::Constant { .. } => 0.0,
            BetaSpec::Affine { a, .. } => -a,
            BetaSpec::Sigmoid { beta_0, alpha, z_th } => {
                let e = (alpha * (z - z_th)).exp();
                -beta_0 * alpha * e / ((1.0 + e) * (1.0 + e))
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, BetaSpec::Constant { .. })
    }
}

/// Efficacy payoff `f` of the total infected fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EfficacySpec {
    /// `f(x) = x^p` with `0 < p <= 1`.
    Power { p: f64 },
    /// Degenerate `f = 0`; rejected by model validation, usable only where a
    /// homogeneous costate system is wanted.
    Zero,
}

impl EfficacySpec {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            EfficacySpec::Power { p } => x.max(0.0).powf(p),
            EfficacySpec::Zero => 0.0,
        }
    }

    /// `f'(x)`, frozen below [`FPRIME_CLAMP`] for p < 1. Returns the value and
    /// whether the freeze was applied.
    pub fn derivative(&self, x: f64) -> (f64, bool) {
        match *self {
            EfficacySpec::Power { p } => {
                if p < 1.0 && x < FPRIME_CLAMP {
                    (p * FPRIME_CLAMP.powf(p - 1.0), true)
                } else {
                    (p * x.powf(p - 1.0), false)
                }
            }
            EfficacySpec::Zero => (0.0, false),
        }
    }
}

/// Visibility penalty `g` of the zombie fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisibilitySpec {
    Zero,
    /// `g(x) = k_g * x` with `k_g > 0`.
    Linear { k_g: f64 },
    /// `g(x) = k * x^q` with `q >= 1`.
    ConvexPower { k: f64, q: f64 },
}

impl VisibilitySpec {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            VisibilitySpec::Zero => 0.0,
            VisibilitySpec::Linear { k_g } => k_g * x,
            VisibilitySpec::ConvexPower { k, q } => k * x.max(0.0).powf(q),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            VisibilitySpec::Zero => 0.0,
            VisibilitySpec::Linear { k_g } => k_g,
            VisibilitySpec::ConvexPower { k, q } => {
                if q == 1.0 {
                    k
                } else {
                    k * q * x.max(0.0).powf(q - 1.0)
                }
            }
        }
    }
}

/// The attacker's damage integrand pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamageSpec {
    pub f: EfficacySpec,
    pub g: VisibilitySpec,
}

impl DamageSpec {
    pub fn validate(&self, variant: Variant) -> Result<()> {
        match self.f {
            EfficacySpec::Power { p } => {
                if !(0.0 < p && p <= 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "efficacy exponent p = {p} must lie in (0, 1]"
                    )));
                }
            }
            EfficacySpec::Zero => {
                return Err(Error::InvalidModel(
                    "efficacy f must be strictly increasing".into(),
                ));
            }
        }
        match self.g {
            VisibilitySpec::Zero => {}
            VisibilitySpec::Linear { k_g } => {
                if !(k_g > 0.0) {
                    return Err(Error::InvalidModel(format!("k_g = {k_g} must be positive")));
                }
            }
            VisibilitySpec::ConvexPower { k, q } => {
                if !(k > 0.0) || !(q >= 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "convex-power visibility needs k > 0 and q >= 1 (k = {k}, q = {q})"
                    )));
                }
            }
        }
        match variant {
            Variant::NoHalting => {}
            Variant::Halting => {
                if !matches!(self.g, VisibilitySpec::Linear { .. }) {
                    return Err(Error::InvalidModel(
                        "the halting variant requires linear visibility g".into(),
                    ));
                }
            }
            Variant::Adaptive => {
                if !matches!(self.g, VisibilitySpec::Zero) {
                    return Err(Error::InvalidModel(
                        "the adaptive variant requires g = 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Whether the damage integrand is three times continuously
    /// differentiable at this state. Fractional powers of a near-zero
    /// argument are not, and derivative-based numerical checks skip
    /// such points.
    pub fn integrand_is_c3(&self, state: &EpidemicState) -> bool {
        if let EfficacySpec::Power { p } = self.f {
            if p < 1.0 && state.z + state.p < POWER_SINGULAR_BAND {
                return false;
            }
        }
        if let VisibilitySpec::ConvexPower { q, .. } = self.g {
            if q < 3.0 && q != 1.0 && q != 2.0 && state.z > 0.0 && state.z < POWER_SINGULAR_BAND {
                return false;
            }
        }
        true
    }
}

/// Full problem instance: variant, parameters, horizon, initial state, damage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub beta: BetaSpec,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
    #[serde(rename = "t")]
    pub horizon: f64,
    pub init: EpidemicState,
    pub damage: DamageSpec,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.validate_dynamics()?;
        self.damage.validate(self.variant)
    }

    /// Everything except the damage-function checks; forward dynamics do not
    /// involve `f` or `g`.
    pub fn validate_dynamics(&self) -> Result<()> {
        self.beta.validate()?;
        if self.variant != Variant::Adaptive && !self.beta.is_constant() {
            return Err(Error::InvalidModel(
                "no_halting/halting variants require a constant contact rate".into(),
            ));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidModel(format!("gamma = {} must be positive", self.gamma)));
        }
        match (self.variant, self.pi) {
            (Variant::Halting, Some(pi)) => {
                if !(0.0 < pi && pi <= 1.0) {
                    return Err(Error::InvalidModel(format!("pi = {pi} must lie in (0, 1]")));
                }
            }
            (Variant::Halting, None) => {
                return Err(Error::InvalidModel("the halting variant requires pi".into()));
            }
            (_, Some(_)) => {
                return Err(Error::InvalidModel(
                    "pi is only meaningful in the halting variant".into(),
                ));
            }
            (_, None) => {}
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidModel(format!(
                "horizon T = {} must be positive",
                self.horizon
            )));
        }
        self.init.validate(SIMPLEX_TOL)?;
        if !(self.init.g > 0.0) {
            return Err(Error::InvalidModel("G(0) must be positive".into()));
        }
        Ok(())
    }

    /// Effective contact rate at zombie fraction `z` (constant outside the
    /// adaptive variant).
    pub fn beta_eff(&self, z: f64) -> f64 {
        match self.variant {
            Variant::Adaptive => self.beta.eval_unchecked(z.clamp(0.0, 1.0)),
            _ => self.beta.eval_unchecked(0.0),
        }
    }

    /// State derivative `(dS, dG, dZ, dP)` under `control`.
    ///
    /// `dS` is defined as `-(dZ + dP)` so the components sum to zero exactly.
    pub fn rhs(&self, state: &EpidemicState, control: &ControlVector) -> Result<[f64; 4]> {
        state.validate(STAGE_SIMPLEX_TOL)?;
        control.validate(self.variant)?;
        Ok(self.rhs_with_beta(state, control, self.beta_eff(state.z)))
    }

    /// Same as [`rhs`](Self::rhs) but with the contact rate supplied by the
    /// caller (used when the defender acts on a noisy zombie estimate).
    pub(crate) fn rhs_with_beta(
        &self,
        state: &EpidemicState,
        control: &ControlVector,
        beta: f64,
    ) -> [f64; 4] {
        let seeding = beta * state.g * state.s;
        let z_from_g = seeding * control.u_z;
        let p_from_g = seeding * control.u_p;
        let z_from_z = self.gamma * beta * state.z.max(0.0) * state.s;
        let halted = match self.variant {
            Variant::Halting => {
                self.pi.unwrap_or(0.0) * beta * state.g * state.z.max(0.0) * control.u_h
            }
            _ => 0.0,
        };
        let dz = z_from_g + z_from_z - halted;
        let dp = p_from_g + halted;
        let ds = -(dz + dp);
        [ds, 0.0, dz, dp]
    }

    /// Instantaneous damage rate `f(Z + P) - g(Z)`.
    pub fn damage_rate(&self, state: &EpidemicState) -> f64 {
        self.damage.f.eval(state.z + state.p) - self.damage.g.eval(state.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1_model(gamma: f64) -> ModelSpec {
        ModelSpec {
            variant: Variant::NoHalting,
            beta: BetaSpec::Constant { beta: 2.0 },
            gamma,
            pi: None,
            horizon: 5.0,
            init: EpidemicState::new(0.99, 0.01, 0.0, 0.0).unwrap(),
            damage: DamageSpec {
                f: EfficacySpec::Power { p: 0.5 },
                g: VisibilitySpec::Linear { k_g: 0.7 },
            },
        }
    }

    #[test]
    fn rhs_seeding_only() {
        let model = fig1_model(0.5);
        let state = EpidemicState::new(0.99, 0.01, 0.0, 0.0).unwrap();
        let control = ControlVector::new(1.0, 0.0, 0.0).unwrap();
        let d = model.rhs(&state, &control).unwrap();
        assert!((d[0] + 0.0198).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 0.0198).abs() < 1e-12);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn rhs_all_channels_null() {
        for variant in [Variant::NoHalting, Variant::Halting, Variant::Adaptive] {
            let model = ModelSpec {
                variant,
                beta: BetaSpec::Constant { beta: 2.0 },
                gamma: 0.5,
                pi: (variant == Variant::Halting).then_some(0.5),
                horizon: 5.0,
                init: EpidemicState::new(0.5, 0.01, 0.0, 0.49).unwrap(),
                damage: DamageSpec {
                    f: EfficacySpec::Power { p: 0.5 },
                    g: match variant {
                        Variant::Adaptive => VisibilitySpec::Zero,
                        _ => VisibilitySpec::Linear { k_g: 0.7 },
                    },
                },
            };
            let state = EpidemicState::new(0.5, 0.01, 0.0, 0.49).unwrap();
            let d = model.rhs(&state, &ControlVector::ZERO).unwrap();
            assert_eq!(d, [0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn rhs_halting_channel() {
        let model = ModelSpec {
            variant: Variant::Halting,
            beta: BetaSpec::Constant { beta: 1.0 },
            gamma: 1.0,
            pi: Some(0.5),
            horizon: 5.0,
            init: EpidemicState::new(0.5, 0.1, 0.2, 0.2).unwrap(),
            damage: DamageSpec {
                f: EfficacySpec::Power { p: 0.5 },
                g: VisibilitySpec::Linear { k_g: 0.7 },
            },
        };
        let state = EpidemicState::new(0.5, 0.1, 0.2, 0.2).unwrap();
        let control = ControlVector::new(0.0, 0.0, 1.0).unwrap();
        let d = model.rhs(&state, &control).unwrap();
        assert!((d[2] - 0.09).abs() < 1e-12);
        assert!((d[3] - 0.01).abs() < 1e-12);
        assert!((d[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn rhs_rejects_u_h_outside_halting() {
        let model = fig1_model(0.5);
        let state = model.init;
        let control = ControlVector::new(0.0, 0.0, 1.0).unwrap();
        assert!(model.rhs(&state, &control).is_err());
    }

    #[test]
    fn rhs_rejects_off_simplex_state() {
        let model = fig1_model(0.5);
        let state = EpidemicState { s: 0.9, g: 0.01, z: 0.2, p: 0.0 };
        assert!(model.rhs(&state, &ControlVector::ZERO).is_err());
    }

    #[test]
    fn beta_of_families() {
        assert_eq!(BetaSpec::Constant { beta: 2.0 }.eval(0.7).unwrap(), 2.0);
        let affine = BetaSpec::Affine { a: 1.0, beta_max: 2.0 };
        assert!((affine.eval(0.5).unwrap() - 1.5).abs() < 1e-15);
        let sigmoid = BetaSpec::Sigmoid { beta_0: 1.0, alpha: 100.0, z_th: 0.01 };
        assert!((sigmoid.eval(0.01).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn beta_of_rejects_bad_inputs() {
        assert!(BetaSpec::Constant { beta: 2.0 }.eval(1.5).is_err());
        assert!(BetaSpec::Affine { a: 3.0, beta_max: 2.0 }.eval(0.5).is_err());
    }

    #[test]
    fn damage_rate_examples() {
        let model = fig1_model(0.5);
        let zero = EpidemicState::new(0.98, 0.02, 0.0, 0.0).unwrap();
        assert_eq!(model.damage_rate(&zero), 0.0);

        let state = EpidemicState::new(0.74, 0.01, 0.04, 0.21).unwrap();
        let expected = 0.25_f64.sqrt() - 0.7 * 0.04;
        assert!((model.damage_rate(&state) - expected).abs() < 1e-12);
        assert!((expected - 0.472).abs() < 1e-9);

        let adaptive = ModelSpec {
            variant: Variant::Adaptive,
            beta: BetaSpec::Constant { beta: 1.0 },
            gamma: 1.4,
            pi: None,
            horizon: 15.0,
            init: EpidemicState::new(0.999, 0.001, 0.0, 0.0).unwrap(),
            damage: DamageSpec { f: EfficacySpec::Power { p: 0.9 }, g: VisibilitySpec::Zero },
        };
        let state = EpidemicState::new(0.79, 0.01, 0.1, 0.1).unwrap();
        assert!((adaptive.damage_rate(&state) - 0.2_f64.powf(0.9)).abs() < 1e-12);
    }

    #[test]
    fn control_clamps_tiny_violations() {
        let c = ControlVector::new(-5e-13, 1.0 + 5e-13, 0.0).unwrap();
        assert_eq!(c.u_z, 0.0);
        assert_eq!(c.u_p, 1.0);
        assert!(ControlVector::new(-1e-9, 0.0, 0.0).is_err());
        assert!(ControlVector::new(0.6, 0.6, 0.0).is_err());
    }

    #[test]
    fn fprime_clamp_at_origin() {
        let f = EfficacySpec::Power { p: 0.5 };
        let (v, clamped) = f.derivative(0.0);
        assert!(clamped);
        assert!((v - 0.5 * FPRIME_CLAMP.powf(-0.5)).abs() < 1e-6);
        let (_, clamped) = f.derivative(0.1);
        assert!(!clamped);
        let (v1, clamped) = EfficacySpec::Power { p: 1.0 }.derivative(0.0);
        assert!(!clamped);
        assert_eq!(v1, 1.0);
    }

    #[test]
    fn model_validation_rejects_incompatible_combinations() {
        let mut m = fig1_model(0.5);
        m.variant = Variant::Halting;
        assert!(m.validate().is_err()); // missing pi
        m.pi = Some(0.5);
        assert!(m.validate().is_ok());
        m.damage.g = VisibilitySpec::Zero;
        assert!(m.validate().is_err()); // halting requires linear g

        let mut a = fig1_model(0.5);
        a.variant = Variant::Adaptive;
        assert!(a.validate().is_err()); // adaptive requires g = 0
        a.damage.g = VisibilitySpec::Zero;
        assert!(a.validate().is_ok());

        let mut n = fig1_model(0.5);
        n.beta = BetaSpec::Affine { a: 1.0, beta_max: 2.0 };
        assert!(n.validate().is_err()); // non-adaptive requires constant beta
    }
}
