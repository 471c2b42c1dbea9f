//! CSV emission. Numbers are written in Rust's shortest round-trip decimal
//! form so identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sgzp::{CostateTrajectory, Trajectory};

pub const TRAJECTORY_HEADER: &str = "t,S,G,Z,P,u_Z,u_P,u_h,beta_eff,damage_rate";
pub const COSTATE_COLUMNS: &str = "lambda_S,lambda_Z,lambda_P,phi_P,phi_Z,phi_h";

/// Writes one row per grid point; costate columns are appended when a
/// backward pass is supplied.
pub fn emit_trajectory(
    traj: &Trajectory,
    costates: Option<&CostateTrajectory>,
    path: &Path,
) -> anyhow::Result<()> {
    if let Some(cs) = costates {
        anyhow::ensure!(
            cs.grid.len() == traj.grid.len(),
            "forward and backward grids differ"
        );
    }
    let mut out = String::new();
    out.push_str(TRAJECTORY_HEADER);
    if costates.is_some() {
        out.push(',');
        out.push_str(COSTATE_COLUMNS);
    }
    out.push('\n');
    for i in 0..traj.grid.len() {
        let s = &traj.states[i];
        let c = &traj.controls[i];
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            traj.grid[i], s.s, s.g, s.z, s.p, c.u_z, c.u_p, c.u_h, traj.beta_eff[i], traj.damage[i]
        )?;
        if let Some(cs) = costates {
            let phi_h = cs.phi_h.get(i).copied().unwrap_or(0.0);
            write!(
                out,
                ",{},{},{},{},{},{}",
                cs.lambda_s[i], cs.lambda_z[i], cs.lambda_p[i], cs.phi_p[i], cs.phi_z[i], phi_h
            )?;
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a generic CSV: a header line plus pre-formatted rows.
pub fn emit_csv(header: &str, rows: &[String], path: &Path) -> anyhow::Result<()> {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
