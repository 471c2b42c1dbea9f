//! Forward integration of the mean-field dynamics and quadrature of the
//! damage objective.
//!
//! Fixed-step classical Runge-Kutta with the grid aligned to every control
//! breakpoint, so each integration step sees a smooth right-hand side and
//! runs are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ControlVector, EfficacySpec, EpidemicState, ModelSpec, Variant, POWER_SINGULAR_BAND,
};

/// Default number of steps across the horizon.
pub const DEFAULT_STEPS: f64 = 2000.0;

pub fn default_step(model: &ModelSpec) -> f64 {
    model.horizon / DEFAULT_STEPS
}

/// Simple fixed-shape policies used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum HeuristicKind {
    AlwaysZombie,
    AlwaysPassive,
    StaticMix { rho: f64 },
}

/// A control signal on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlPolicy {
    /// `u_Z = 1` on `[0, t*)`, then `u_P = 1` (and `u_h = 1` in the halting
    /// variant) on `[t*, T]`.
    Threshold { t_star: f64 },
    /// Piecewise-constant controls on `breakpoints[i]..breakpoints[i+1]`.
    Piecewise { breakpoints: Vec<f64>, controls: Vec<ControlVector> },
    Heuristic(HeuristicKind),
}

impl ControlPolicy {
    pub fn threshold(t_star: f64) -> Self {
        ControlPolicy::Threshold { t_star }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        match self {
            ControlPolicy::Threshold { t_star } => {
                if !(0.0..=model.horizon).contains(t_star) {
                    return Err(Error::InvalidPolicy(format!(
                        "t* = {t_star} outside [0, {}]",
                        model.horizon
                    )));
                }
            }
            ControlPolicy::Piecewise { breakpoints, controls } => {
                if breakpoints.len() < 2
                    || breakpoints.len() != controls.len() + 1
                    || breakpoints[0] != 0.0
                    || (breakpoints[breakpoints.len() - 1] - model.horizon).abs() > 1e-12
                {
                    return Err(Error::InvalidPolicy(
                        "breakpoints must run 0 = tau_0 < ... < tau_K = T with one control per segment"
                            .into(),
                    ));
                }
                if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidPolicy("breakpoints must strictly increase".into()));
                }
                for c in controls {
                    c.validate(model.variant)?;
                }
            }
            ControlPolicy::Heuristic(HeuristicKind::StaticMix { rho }) => {
                if !(0.0..=1.0).contains(rho) {
                    return Err(Error::InvalidPolicy(format!("rho = {rho} outside [0, 1]")));
                }
            }
            ControlPolicy::Heuristic(_) => {}
        }
        Ok(())
    }

    /// Control applied at time `t` (segment value; switch points take the
    /// right segment's value).
    pub fn control_at(&self, t: f64, variant: Variant) -> ControlVector {
        match self {
            ControlPolicy::Threshold { t_star } => {
                if t < *t_star {
                    ControlVector { u_z: 1.0, u_p: 0.0, u_h: 0.0 }
                } else {
                    ControlVector {
                        u_z: 0.0,
                        u_p: 1.0,
                        u_h: if variant == Variant::Halting { 1.0 } else { 0.0 },
                    }
                }
            }
            ControlPolicy::Piecewise { breakpoints, controls } => {
                let mut idx = match breakpoints[1..].iter().position(|b| t < *b) {
                    Some(i) => i,
                    None => controls.len() - 1,
                };
                if idx >= controls.len() {
                    idx = controls.len() - 1;
                }
                controls[idx]
            }
            ControlPolicy::Heuristic(kind) => match kind {
                HeuristicKind::AlwaysZombie => ControlVector { u_z: 1.0, u_p: 0.0, u_h: 0.0 },
                HeuristicKind::AlwaysPassive => ControlVector { u_z: 0.0, u_p: 1.0, u_h: 0.0 },
                HeuristicKind::StaticMix { rho } => {
                    ControlVector { u_z: *rho, u_p: 1.0 - *rho, u_h: 0.0 }
                }
            },
        }
    }

    /// Breakpoints strictly inside `(0, T)`.
    pub fn interior_breakpoints(&self, horizon: f64) -> Vec<f64> {
        match self {
            ControlPolicy::Threshold { t_star } => {
                if *t_star > 0.0 && *t_star < horizon {
                    vec![*t_star]
                } else {
                    vec![]
                }
            }
            ControlPolicy::Piecewise { breakpoints, .. } => {
                breakpoints[1..breakpoints.len() - 1].to_vec()
            }
            ControlPolicy::Heuristic(_) => vec![],
        }
    }
}

/// Forward solution on a grid, with the applied controls and the damage
/// integrand sampled alongside.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<EpidemicState>,
    /// Control applied on the step starting at each grid point (last entry
    /// repeats the final segment's control).
    pub controls: Vec<ControlVector>,
    pub beta_eff: Vec<f64>,
    pub damage: Vec<f64>,
    /// Accumulated objective, composite-Simpson over the grid.
    pub j: f64,
    /// Grid indices of segment boundaries, including 0 and the last index.
    pub segment_bounds: Vec<usize>,
}

impl Trajectory {
    pub fn final_state(&self) -> &EpidemicState {
        self.states.last().expect("trajectory is never empty")
    }

    /// True when `idx` is within `band` grid points of a segment boundary.
    pub fn near_boundary(&self, idx: usize, band: usize) -> bool {
        self.segment_bounds
            .iter()
            .any(|&b| idx.abs_diff(b) <= band)
    }
}

/// How a per-step observation error perturbs the defender's zombie estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `Z_hat = Z * (1 + eta)`.
    #[default]
    Multiplicative,
    /// `Z_hat = Z + eta`.
    Additive,
}

impl NoiseModel {
    pub fn apply(&self, z: f64, eta: f64) -> f64 {
        let z_hat = match self {
            NoiseModel::Multiplicative => z * (1.0 + eta),
            NoiseModel::Additive => z + eta,
        };
        z_hat.clamp(0.0, 1.0)
    }
}

/// Integrates the mean-field dynamics under `policy` with step size `step`.
pub fn integrate_forward(model: &ModelSpec, policy: &ControlPolicy, step: f64) -> Result<Trajectory> {
    integrate_with_noise(model, policy, step, NoiseModel::Multiplicative, &mut || 0.0)
}

/// Same integration, but each step draws one observation error `eta` and the
/// defender's contact rate is evaluated at the perturbed zombie fraction.
/// With `eta = 0` this reduces bit-for-bit to [`integrate_forward`].
pub fn integrate_with_noise(
    model: &ModelSpec,
    policy: &ControlPolicy,
    step: f64,
    noise_model: NoiseModel,
    draw_eta: &mut dyn FnMut() -> f64,
) -> Result<Trajectory> {
    model.validate_dynamics()?;
    policy.validate(model)?;
    if !(step > 0.0) {
        return Err(Error::InvalidPolicy(format!("step = {step} must be positive")));
    }

    let horizon = model.horizon;
    let mut bounds = vec![0.0];
    for b in policy.interior_breakpoints(horizon) {
        if b - bounds[bounds.len() - 1] > 1e-12 && horizon - b > 1e-12 {
            bounds.push(b);
        }
    }
    bounds.push(horizon);

    let mut grid = vec![0.0];
    let mut states = vec![model.init];
    let mut controls: Vec<ControlVector> = Vec::new();
    let mut segment_bounds = vec![0usize];

    for seg in bounds.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let n = ((b - a) / step).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let control = policy.control_at(a + 0.5 * h, model.variant);
        control.validate(model.variant)?;
        for i in 0..n {
            let t = a + i as f64 * h;
            let state = *states.last().unwrap();
            let eta = draw_eta();
            let next = rk4_step(model, &state, &control, h, eta, noise_model)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFinite { t },
                    other => other,
                })?;
            let next = clamp_state(next, t + h)?;
            grid.push(if i + 1 == n { b } else { a + (i + 1) as f64 * h });
            states.push(next);
            controls.push(control);
        }
        segment_bounds.push(grid.len() - 1);
    }
    controls.push(*controls.last().unwrap());

    let beta_eff: Vec<f64> = states.iter().map(|s| model.beta_eff(s.z)).collect();
    let damage: Vec<f64> = states.iter().map(|s| model.damage_rate(s)).collect();

    let mut traj = Trajectory { grid, states, controls, beta_eff, damage, j: 0.0, segment_bounds };
    traj.j = objective(&traj, &model.damage);
    Ok(traj)
}

fn deriv(
    model: &ModelSpec,
    state: &EpidemicState,
    control: &ControlVector,
    eta: f64,
    noise_model: NoiseModel,
) -> Result<[f64; 4]> {
    if !state.s.is_finite() || !state.z.is_finite() || !state.p.is_finite() {
        return Err(Error::NonFinite { t: f64::NAN });
    }
    let beta = match model.variant {
        Variant::Adaptive => {
            let z_hat = noise_model.apply(state.z.max(0.0), eta);
            model.beta.eval_unchecked(z_hat)
        }
        _ => model.beta_eff(0.0),
    };
    Ok(model.rhs_with_beta(state, control, beta))
}

fn rk4_step(
    model: &ModelSpec,
    state: &EpidemicState,
    control: &ControlVector,
    h: f64,
    eta: f64,
    noise_model: NoiseModel,
) -> Result<EpidemicState> {
    let advance = |s: &EpidemicState, k: &[f64; 4], w: f64| EpidemicState {
        s: s.s + w * k[0],
        g: s.g,
        z: s.z + w * k[2],
        p: s.p + w * k[3],
    };
    let k1 = deriv(model, state, control, eta, noise_model)?;
    let k2 = deriv(model, &advance(state, &k1, 0.5 * h), control, eta, noise_model)?;
    let k3 = deriv(model, &advance(state, &k2, 0.5 * h), control, eta, noise_model)?;
    let k4 = deriv(model, &advance(state, &k3, h), control, eta, noise_model)?;
    let mix = |i: usize| (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    Ok(EpidemicState {
        s: state.s + mix(0),
        g: state.g,
        z: state.z + mix(2),
        p: state.p + mix(3),
    })
}

fn clamp_state(mut s: EpidemicState, t: f64) -> Result<EpidemicState> {
    if !s.s.is_finite() || !s.z.is_finite() || !s.p.is_finite() {
        return Err(Error::NonFinite { t });
    }
    for v in [&mut s.z, &mut s.p] {
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::SimplexViolation { t, magnitude: -*v });
            }
            *v = 0.0;
        }
    }
    if s.s <= 0.0 {
        return Err(Error::SimplexViolation { t, magnitude: -s.s });
    }
    Ok(s)
}

/// Composite Simpson quadrature of the damage integrand over the stored grid,
/// segment by segment, falling back to a trapezoid on the odd tail interval.
pub fn objective(traj: &Trajectory, damage: &crate::model::DamageSpec) -> f64 {
    let integrand: Vec<f64> = traj
        .states
        .iter()
        .map(|s| damage.f.eval(s.z + s.p) - damage.g.eval(s.z))
        .collect();
    let mut total = 0.0;
    for seg in traj.segment_bounds.windows(2) {
        let (i0, i1) = (seg[0], seg[1]);
        let n = i1 - i0;
        if n == 0 {
            continue;
        }
        let h = (traj.grid[i1] - traj.grid[i0]) / n as f64;
        let even_end = if n % 2 == 0 { i1 } else { i1 - 1 };
        let mut i = i0;
        while i + 2 <= even_end {
            total += h / 3.0 * (integrand[i] + 4.0 * integrand[i + 1] + integrand[i + 2]);
            i += 2;
        }
        if even_end < i1 {
            total += 0.5 * h * (integrand[i1 - 1] + integrand[i1]);
        }
    }

    // A fractional-power efficacy with Z + P starting at zero puts an
    // integrable cusp at t = 0 that ruins Simpson's order on the first
    // panel. Replace that panel's f-contribution with the exact integral
    // of f along a locally linear Z + P.
    if let EfficacySpec::Power { p } = damage.f {
        let x = |i: usize| traj.states[i].z + traj.states[i].p;
        if p < 1.0 && x(0) < POWER_SINGULAR_BAND {
            let exact_f = |a: f64, b: f64, w: f64| {
                if b > a {
                    let r = (b - a) / w;
                    (b.powf(p + 1.0) - a.powf(p + 1.0)) / (r * (p + 1.0))
                } else {
                    damage.f.eval(a) * w
                }
            };
            let n = traj.segment_bounds[1];
            let h = traj.grid[n] / n as f64;
            let (end, old_f) = if n >= 2 {
                (
                    2,
                    h / 3.0
                        * (damage.f.eval(x(0))
                            + 4.0 * damage.f.eval(x(1))
                            + damage.f.eval(x(2))),
                )
            } else {
                (1, 0.5 * h * (damage.f.eval(x(0)) + damage.f.eval(x(1))))
            };
            let new_f: f64 = (0..end).map(|i| exact_f(x(i), x(i + 1), h)).sum();
            total += new_f - old_f;
        }
    }
    total
}

/// Observed order of accuracy from runs at `h`, `h/2`, `h/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvergenceOrder {
    /// All three runs agree to round-off (e.g. a constant trajectory).
    Exact,
    Order(f64),
}

pub fn convergence_order(model: &ModelSpec, policy: &ControlPolicy) -> Result<ConvergenceOrder> {
    let h = model.horizon / 100.0;
    let runs: Vec<EpidemicState> = [h, h / 2.0, h / 4.0]
        .iter()
        .map(|&s| Ok(*integrate_forward(model, policy, s)?.final_state()))
        .collect::<Result<_>>()?;
    let dist = |a: &EpidemicState, b: &EpidemicState| -> f64 {
        (a.s - b.s).abs().max((a.z - b.z).abs()).max((a.p - b.p).abs())
    };
    let e1 = dist(&runs[0], &runs[1]);
    let e2 = dist(&runs[1], &runs[2]);
    if e1 < 1e-15 && e2 < 1e-15 {
        return Ok(ConvergenceOrder::Exact);
    }
    Ok(ConvergenceOrder::Order((e1 / e2).log2()))
}
