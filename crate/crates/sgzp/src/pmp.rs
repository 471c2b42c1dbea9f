//! Backward costate integration, switching functions, and numerical checks
//! of the Pontryagin necessary conditions for a candidate policy.
//!
//! The costates run backward from zero terminal conditions on the same grid
//! as the forward pass, with forward states linearly interpolated inside
//! each step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlVector, EpidemicState, ModelSpec, Variant};
use crate::ode::{integrate_forward, ControlPolicy, Trajectory};

/// Grid points this close to a control breakpoint are excluded from
/// pointwise sign checks.
pub const BREAKPOINT_BAND: usize = 2;

/// Costates and switching functions on the forward grid.
#[derive(Debug, Clone)]
pub struct CostateTrajectory {
    pub grid: Vec<f64>,
    pub lambda_s: Vec<f64>,
    pub lambda_z: Vec<f64>,
    pub lambda_p: Vec<f64>,
    /// Abnormal multiplier; always 1 for this problem family.
    pub lambda_0: f64,
    pub phi_p: Vec<f64>,
    pub phi_z: Vec<f64>,
    /// Halting switching function; empty outside the halting variant.
    pub phi_h: Vec<f64>,
    /// Whether the `f'` freeze near zero argument was ever applied.
    pub fprime_clamp_activated: bool,
}

struct CostateRhs<'a> {
    model: &'a ModelSpec,
    clamped: bool,
}

impl<'a> CostateRhs<'a> {
    fn new(model: &'a ModelSpec) -> Self {
        Self { model, clamped: false }
    }

    fn eval(&mut self, state: &EpidemicState, control: &ControlVector, l: [f64; 3]) -> [f64; 3] {
        let m = self.model;
        let [ls, lz, lp] = l;
        let (fp, hit) = m.damage.f.derivative(state.z + state.p);
        self.clamped |= hit;
        let gp = m.damage.g.derivative(state.z);
        let (g, s, z) = (state.g, state.s, state.z);
        let (u_z, u_p, u_h) = (control.u_z, control.u_p, control.u_h);
        let gamma = m.gamma;
        match m.variant {
            Variant::NoHalting => {
                let b = m.beta_eff(z);
                [
                    b * ((ls - lp) * g * u_p + (ls - lz) * g * u_z + (ls - lz) * gamma * z),
                    -fp + gp + (ls - lz) * gamma * b * s,
                    -fp,
                ]
            }
            Variant::Halting => {
                let b = m.beta_eff(z);
                let pi = m.pi.unwrap_or(0.0);
                [
                    (ls - lp) * b * g * u_p + (ls - lz) * (b * g * u_z + gamma * b * z),
                    gp - fp + (ls - lz) * gamma * b * s + (lz - lp) * pi * b * g * u_h,
                    -fp,
                ]
            }
            Variant::Adaptive => {
                let b = m.beta_eff(z);
                let bp = m.beta.derivative(z.clamp(0.0, 1.0));
                [
                    b * ((ls - lp) * g * u_p + (ls - lz) * (g * u_z + gamma * z)),
                    -fp + (ls - lz) * gamma * b * s
                        + bp * ((ls - lp) * g * s * u_p
                            + (ls - lz) * g * s * u_z
                            + (ls - lz) * gamma * z * s),
                    -fp,
                ]
            }
        }
    }
}

/// Integrates the costate system backward from `lambda(T) = 0` over the
/// forward trajectory's grid.
pub fn integrate_costates_backward(model: &ModelSpec, traj: &Trajectory) -> Result<CostateTrajectory> {
    let m = traj.grid.len();
    if m < 2 || traj.states.len() != m || traj.controls.len() != m {
        return Err(Error::GridMismatch(format!(
            "trajectory with {} grid points, {} states, {} controls",
            m,
            traj.states.len(),
            traj.controls.len()
        )));
    }

    let mut rhs = CostateRhs::new(model);
    let mut lambda_s = vec![0.0; m];
    let mut lambda_z = vec![0.0; m];
    let mut lambda_p = vec![0.0; m];

    let midpoint = |a: &EpidemicState, b: &EpidemicState| EpidemicState {
        s: 0.5 * (a.s + b.s),
        g: a.g,
        z: 0.5 * (a.z + b.z),
        p: 0.5 * (a.p + b.p),
    };

    for i in (1..m).rev() {
        let h = traj.grid[i - 1] - traj.grid[i]; // negative
        let control = traj.controls[i - 1];
        let here = &traj.states[i];
        let there = &traj.states[i - 1];
        let mid = midpoint(here, there);
        let l = [lambda_s[i], lambda_z[i], lambda_p[i]];
        let add = |l: [f64; 3], k: [f64; 3], w: f64| {
            [l[0] + w * k[0], l[1] + w * k[1], l[2] + w * k[2]]
        };
        let k1 = rhs.eval(here, &control, l);
        let k2 = rhs.eval(&mid, &control, add(l, k1, 0.5 * h));
        let k3 = rhs.eval(&mid, &control, add(l, k2, 0.5 * h));
        let k4 = rhs.eval(there, &control, add(l, k3, h));
        for (out, j) in [(&mut lambda_s, 0), (&mut lambda_z, 1), (&mut lambda_p, 2)] {
            out[i - 1] = l[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            if !out[i - 1].is_finite() {
                return Err(Error::NonFinite { t: traj.grid[i - 1] });
            }
        }
    }

    let mut phi_p = vec![0.0; m];
    let mut phi_z = vec![0.0; m];
    for i in 0..m {
        let st = &traj.states[i];
        let b = model.beta_eff(st.z);
        phi_p[i] = (lambda_p[i] - lambda_s[i]) * b * st.g * st.s;
        phi_z[i] = (lambda_z[i] - lambda_s[i]) * b * st.g * st.s;
    }
    let phi_h = if model.variant == Variant::Halting {
        let pi = model.pi.unwrap_or(0.0);
        (0..m)
            .map(|i| {
                let st = &traj.states[i];
                (lambda_p[i] - lambda_z[i]) * pi * model.beta_eff(st.z) * st.g * st.z
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(CostateTrajectory {
        grid: traj.grid.clone(),
        lambda_s,
        lambda_z,
        lambda_p,
        lambda_0: 1.0,
        phi_p,
        phi_z,
        phi_h,
        fprime_clamp_activated: rhs.clamped,
    })
}

/// Closed-form switching-function derivatives at a grid point.
fn phi_dot(
    model: &ModelSpec,
    state: &EpidemicState,
    control: &ControlVector,
    phi_p: f64,
    phi_z: f64,
) -> (f64, f64) {
    let (fp, _) = model.damage.f.derivative(state.z + state.p);
    let gp = model.damage.g.derivative(state.z);
    let (g, s, z) = (state.g, state.s, state.z);
    let (u_z, u_p, u_h) = (control.u_z, control.u_p, control.u_h);
    let gamma = model.gamma;
    match model.variant {
        Variant::NoHalting => {
            let b = model.beta_eff(z);
            (
                b * (g * u_z * (phi_z - phi_p) + gamma * z * (phi_z - phi_p) - g * s * fp),
                b * (g * s * (gp - fp) + g * u_p * (phi_p - phi_z) - gamma * s * phi_z),
            )
        }
        Variant::Halting => {
            let b = model.beta_eff(z);
            let pi = model.pi.unwrap_or(0.0);
            (
                -b * g * s * fp + b * g * u_z * (phi_z - phi_p) + gamma * b * z * (phi_z - phi_p),
                b * g * s * (gp - fp) - gamma * b * s * phi_z
                    + b * g * (u_p - pi * u_h) * (phi_p - phi_z),
            )
        }
        Variant::Adaptive => {
            let b = model.beta_eff(z);
            let bp = model.beta.derivative(z.clamp(0.0, 1.0));
            (
                -b * g * s * fp + bp * s * phi_p * (g * u_z + gamma * z)
                    - (phi_p - phi_z) * b * (g * u_z + gamma * z),
                -b * g * s * fp - phi_p * g * u_p * bp * s - phi_z * b * gamma * s
                    + (phi_p - phi_z) * b * g * u_p,
            )
        }
    }
}

/// Deviations between finite-difference and closed-form switching-function
/// derivatives, plus the halting identity check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidualReport {
    pub phi_p: f64,
    pub phi_z: f64,
    /// Max violation of `phi_h = pi (Z/S)(phi_P - phi_Z)` where `S > 1e-9`;
    /// zero outside the halting variant.
    pub phi_h_identity: f64,
}

pub fn switching_residuals(
    model: &ModelSpec,
    traj: &Trajectory,
    costates: &CostateTrajectory,
) -> Result<ResidualReport> {
    let m = traj.grid.len();
    if costates.grid.len() != m {
        return Err(Error::GridMismatch(format!(
            "forward grid has {m} points, backward grid has {}",
            costates.grid.len()
        )));
    }
    let mut worst_p = 0.0_f64;
    let mut worst_z = 0.0_f64;
    for i in 1..m - 1 {
        if traj.near_boundary(i, 1) {
            continue; // segment interiors only
        }
        // Central differences assume a C^3 integrand; skip the power-law
        // singular band (fractional powers of a near-zero argument).
        if !(i - 1..=i + 1).all(|k| model.damage.integrand_is_c3(&traj.states[k])) {
            continue;
        }
        let dt = traj.grid[i + 1] - traj.grid[i - 1];
        let num_p = (costates.phi_p[i + 1] - costates.phi_p[i - 1]) / dt;
        let num_z = (costates.phi_z[i + 1] - costates.phi_z[i - 1]) / dt;
        let (dp, dz) = phi_dot(
            model,
            &traj.states[i],
            &traj.controls[i],
            costates.phi_p[i],
            costates.phi_z[i],
        );
        worst_p = worst_p.max((num_p - dp).abs());
        worst_z = worst_z.max((num_z - dz).abs());
    }

    let mut worst_h = 0.0_f64;
    if model.variant == Variant::Halting {
        let pi = model.pi.unwrap_or(0.0);
        for i in 0..m {
            let st = &traj.states[i];
            if st.s <= 1e-9 {
                continue;
            }
            let expected = pi * (st.z / st.s) * (costates.phi_p[i] - costates.phi_z[i]);
            worst_h = worst_h.max((costates.phi_h[i] - expected).abs());
        }
    }

    Ok(ResidualReport { phi_p: worst_p, phi_z: worst_z, phi_h_identity: worst_h })
}

/// Hamiltonian value at grid point `i`.
pub fn hamiltonian_at(
    model: &ModelSpec,
    traj: &Trajectory,
    costates: &CostateTrajectory,
    i: usize,
) -> f64 {
    let st = &traj.states[i];
    let c = &traj.controls[i];
    let b = model.beta_eff(st.z);
    let running = match model.variant {
        Variant::Adaptive => model.damage.f.eval(st.z + st.p),
        _ => model.damage.f.eval(st.z + st.p) - model.damage.g.eval(st.z),
    };
    let mut h = running
        + costates.phi_p[i] * c.u_p
        + costates.phi_z[i] * c.u_z
        + (costates.lambda_z[i] - costates.lambda_s[i]) * model.gamma * b * st.z * st.s;
    if model.variant == Variant::Halting {
        h += costates.phi_h[i] * c.u_h;
    }
    h
}

/// Outcome of the pointwise Pontryagin-condition check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictReport {
    pub pass: bool,
    /// Size of the worst violated sign condition (0 when passing).
    pub worst_violation: f64,
    pub worst_time: Option<f64>,
    /// Which optimality case failed, when one did.
    pub worst_case: Option<String>,
    /// Spread (max - min) of the Hamiltonian along the trajectory.
    pub hamiltonian_drift: f64,
    /// Points where neither strict condition applied (excluded from
    /// pass/fail; singular-arc candidates).
    pub singular_points: usize,
    pub checked_points: usize,
    pub fprime_clamp_activated: bool,
}

/// Runs the forward and backward passes for `policy` and checks the
/// switching-sign optimality cases pointwise at tolerance `tol`.
pub fn verify_pmp(
    model: &ModelSpec,
    policy: &ControlPolicy,
    tol: f64,
    step: f64,
) -> Result<VerdictReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidPolicy(format!("tol = {tol} must be positive")));
    }
    let traj = integrate_forward(model, policy, step)?;
    let costates = integrate_costates_backward(model, &traj)?;
    Ok(check_conditions(model, &traj, &costates, tol))
}

fn check_conditions(
    model: &ModelSpec,
    traj: &Trajectory,
    costates: &CostateTrajectory,
    tol: f64,
) -> VerdictReport {
    let m = traj.grid.len();
    let mut worst_violation = 0.0_f64;
    let mut worst_time = None;
    let mut worst_case = None;
    let mut singular = 0usize;
    let mut checked = 0usize;

    let record = |mag: f64,
                      t: f64,
                      case: &str,
                      worst_violation: &mut f64,
                      worst_time: &mut Option<f64>,
                      worst_case: &mut Option<String>| {
        if mag > *worst_violation {
            *worst_violation = mag;
            *worst_time = Some(t);
            *worst_case = Some(case.to_string());
        }
    };

    for i in 0..m {
        if traj.near_boundary(i, BREAKPOINT_BAND) {
            continue;
        }
        checked += 1;
        let t = traj.grid[i];
        let c = &traj.controls[i];
        let (fp, fz) = (costates.phi_p[i], costates.phi_z[i]);

        if fp > fz.max(0.0) + tol {
            if !(c.u_p == 1.0 && c.u_z == 0.0) {
                record(
                    fp - fz.max(0.0),
                    t,
                    "phi_P dominant but (u_P, u_Z) != (1, 0)",
                    &mut worst_violation,
                    &mut worst_time,
                    &mut worst_case,
                );
            }
        } else if fz > fp.max(0.0) + tol {
            if !(c.u_z == 1.0 && c.u_p == 0.0) {
                record(
                    fz - fp.max(0.0),
                    t,
                    "phi_Z dominant but (u_P, u_Z) != (0, 1)",
                    &mut worst_violation,
                    &mut worst_time,
                    &mut worst_case,
                );
            }
        } else if fp.max(fz) > tol {
            // Not strictly separated; the sum condition below still applies.
            singular += 1;
        }

        if fp.max(fz) > tol && (c.u_p + c.u_z - 1.0).abs() > 1e-9 {
            record(
                fp.max(fz),
                t,
                "positive switching function but u_P + u_Z != 1",
                &mut worst_violation,
                &mut worst_time,
                &mut worst_case,
            );
        }

        if model.variant == Variant::Halting {
            let fh = costates.phi_h[i];
            if fh > tol && c.u_h != 1.0 {
                record(
                    fh,
                    t,
                    "phi_h > 0 but u_h != 1",
                    &mut worst_violation,
                    &mut worst_time,
                    &mut worst_case,
                );
            }
            if fh < -tol && c.u_h != 0.0 {
                record(
                    -fh,
                    t,
                    "phi_h < 0 but u_h != 0",
                    &mut worst_violation,
                    &mut worst_time,
                    &mut worst_case,
                );
            }
        }
    }

    // The backward pass is only accurate where the costate right-hand side
    // is smooth, so drift is measured outside the power-law singular band.
    let mut h_min = f64::INFINITY;
    let mut h_max = f64::NEG_INFINITY;
    for i in 0..m {
        if !model.damage.integrand_is_c3(&traj.states[i]) {
            continue;
        }
        let h = hamiltonian_at(model, traj, costates, i);
        h_min = h_min.min(h);
        h_max = h_max.max(h);
    }
    if h_min > h_max {
        (h_min, h_max) = (0.0, 0.0);
    }

    VerdictReport {
        pass: worst_violation == 0.0,
        worst_violation,
        worst_time,
        worst_case,
        hamiltonian_drift: h_max - h_min,
        singular_points: singular,
        checked_points: checked,
        fprime_clamp_activated: costates.fprime_clamp_activated,
    }
}
