//! Finite-population continuous-time Markov simulation of the SGZP process,
//! plus the robustness sweeps (defender estimation error in the mean-field
//! integrator, germinator synchronization error in the finite-N simulator).
//!
//! Pair rates follow the Kurtz scaling: each relevant ordered pair contacts
//! at rate beta/N (gamma*beta/N for zombie-susceptible pairs), so expected
//! fraction flows match the mean-field right-hand side exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Variant};
use crate::ode::{integrate_forward, integrate_with_noise, ControlPolicy, NoiseModel};

/// Integer-count population state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Population {
    pub n: usize,
    pub n_s: usize,
    pub n_g: usize,
    pub n_z: usize,
    pub n_p: usize,
}

impl Population {
    /// Rounds initial fractions to counts, assigning the remainder to S.
    pub fn from_fractions(model: &ModelSpec, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidPerturbation(format!("N = {n} must be at least 2")));
        }
        let round = |f: f64| (f * n as f64).round() as usize;
        let n_g = round(model.init.g);
        let n_z = round(model.init.z);
        let n_p = round(model.init.p);
        if n_g == 0 {
            return Err(Error::InvalidPerturbation(format!(
                "G(0) = {} rounds to zero germinators at N = {n}",
                model.init.g
            )));
        }
        let used = n_g + n_z + n_p;
        if used >= n {
            return Err(Error::InvalidPerturbation(format!(
                "no susceptible nodes left at N = {n}"
            )));
        }
        Ok(Self { n, n_s: n - used, n_g, n_z, n_p })
    }

    pub fn fractions(&self) -> [f64; 4] {
        let n = self.n as f64;
        [
            self.n_s as f64 / n,
            self.n_g as f64 / n,
            self.n_z as f64 / n,
            self.n_p as f64 / n,
        ]
    }
}

/// How a run is perturbed away from the synchronized, fully-informed ideal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSpec {
    None,
    /// Each germinator draws its own switch time uniformly from
    /// [t*(1-range), t*(1+range)], clamped to [0, T].
    SyncError { range: f64 },
    /// The defender acts on an estimate of Z with relative error drawn
    /// uniformly from [-range, range], redrawn after every event.
    EstimationError {
        range: f64,
        #[serde(default)]
        noise: NoiseModel,
    },
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        let range = match self {
            PerturbationSpec::None => return Ok(()),
            PerturbationSpec::SyncError { range } => range,
            PerturbationSpec::EstimationError { range, .. } => range,
        };
        if !(*range >= 0.0) || !range.is_finite() {
            return Err(Error::InvalidPerturbation(format!(
                "perturbation range {range} must be finite and non-negative"
            )));
        }
        Ok(())
    }
}

/// One realized run: piecewise-constant counts between state-changing
/// events, and the exactly-integrated realized objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRun {
    pub n: usize,
    /// Times of state changes, starting at 0.
    pub times: Vec<f64>,
    /// Counts (S, G, Z, P) holding from each time until the next.
    pub counts: Vec<[usize; 4]>,
    /// Realized J over [0, T].
    pub j: f64,
}

impl SimulationRun {
    pub fn final_counts(&self) -> [usize; 4] {
        *self.counts.last().expect("run records the initial state")
    }

    /// Compartment fractions in effect at time `t`.
    pub fn fractions_at(&self, t: f64) -> [f64; 4] {
        let idx = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let n = self.n as f64;
        self.counts[idx].map(|c| c as f64 / n)
    }

    pub fn sample_fractions(&self, grid: &[f64]) -> Vec<[f64; 4]> {
        grid.iter().map(|&t| self.fractions_at(t)).collect()
    }
}

/// Exact-event simulation of the finite-N contact process under `policy`.
/// Reproducible per seed.
pub fn simulate_population(
    model: &ModelSpec,
    policy: &ControlPolicy,
    n: usize,
    perturb: &PerturbationSpec,
    seed: u64,
) -> Result<SimulationRun> {
    model.validate_dynamics()?;
    policy.validate(model)?;
    perturb.validate()?;
    let mut pop = Population::from_fractions(model, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per-germinator switch times under synchronization error; `None` means
    // all germinators follow the shared policy.
    let switch_times: Option<Vec<f64>> = match perturb {
        PerturbationSpec::SyncError { range } => {
            let ControlPolicy::Threshold { t_star } = policy else {
                return Err(Error::InvalidPerturbation(
                    "synchronization error needs a threshold policy".into(),
                ));
            };
            Some(
                (0..pop.n_g)
                    .map(|_| {
                        let lo = t_star * (1.0 - range);
                        let hi = t_star * (1.0 + range);
                        let t = if hi > lo { rng.gen_range(lo..=hi) } else { *t_star };
                        t.clamp(0.0, model.horizon)
                    })
                    .collect(),
            )
        }
        _ => None,
    };
    let estimation = match perturb {
        PerturbationSpec::EstimationError { range, noise } => Some((*range, *noise)),
        _ => None,
    };

    let germinator_control = |g: usize, t: f64, switch_times: &Option<Vec<f64>>| match switch_times
    {
        Some(ts) => ControlPolicy::threshold(ts[g]).control_at(t, model.variant),
        None => policy.control_at(t, model.variant),
    };

    let draw_eta = |rng: &mut ChaCha8Rng| match estimation {
        Some((range, _)) if range > 0.0 => rng.gen_range(-range..=range),
        _ => 0.0,
    };

    let horizon = model.horizon;
    let pi = model.pi.unwrap_or(0.0);
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut counts = vec![[pop.n_s, pop.n_g, pop.n_z, pop.n_p]];
    let mut j = 0.0;
    let mut last_change = 0.0;
    let mut eta = draw_eta(&mut rng);

    let integrand = |pop: &Population| {
        let [_, _, z, p] = pop.fractions();
        model.damage.f.eval(z + p) - model.damage.g.eval(z)
    };

    loop {
        let z_frac = pop.n_z as f64 / n as f64;
        let beta = match (model.variant, estimation) {
            (Variant::Adaptive, Some((_, noise))) => {
                model.beta.eval_unchecked(noise.apply(z_frac, eta))
            }
            _ => model.beta_eff(z_frac),
        };
        let scale = beta / n as f64;
        let r_gs = scale * (pop.n_g * pop.n_s) as f64;
        let r_zs = model.gamma * scale * (pop.n_z * pop.n_s) as f64;
        let r_gz = if model.variant == Variant::Halting {
            scale * (pop.n_g * pop.n_z) as f64
        } else {
            0.0
        };
        let total = r_gs + r_zs + r_gz;
        if total <= 0.0 {
            break;
        }
        t += -(1.0 - rng.gen::<f64>()).ln() / total;
        if t >= horizon {
            break;
        }

        let pick = rng.gen::<f64>() * total;
        let mut changed = false;
        if pick < r_gs {
            let g = if pop.n_g > 1 { rng.gen_range(0..pop.n_g) } else { 0 };
            let c = germinator_control(g, t, &switch_times);
            let u = rng.gen::<f64>();
            if u < c.u_z {
                pop.n_s -= 1;
                pop.n_z += 1;
                changed = true;
            } else if u < c.u_z + c.u_p {
                pop.n_s -= 1;
                pop.n_p += 1;
                changed = true;
            }
        } else if pick < r_gs + r_zs {
            pop.n_s -= 1;
            pop.n_z += 1;
            changed = true;
        } else {
            let g = if pop.n_g > 1 { rng.gen_range(0..pop.n_g) } else { 0 };
            let c = germinator_control(g, t, &switch_times);
            if rng.gen::<f64>() < pi * c.u_h {
                pop.n_z -= 1;
                pop.n_p += 1;
                changed = true;
            }
        }

        if changed {
            j += integrand(&Population {
                n,
                n_s: counts.last().unwrap()[0],
                n_g: pop.n_g,
                n_z: counts.last().unwrap()[2],
                n_p: counts.last().unwrap()[3],
            }) * (t - last_change);
            last_change = t;
            times.push(t);
            counts.push([pop.n_s, pop.n_g, pop.n_z, pop.n_p]);
        }
        eta = draw_eta(&mut rng);
    }
    j += integrand(&pop) * (horizon - last_change);

    Ok(SimulationRun { n, times, counts, j })
}

/// Which robustness experiment a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    SyncError,
    EstimationError,
}

/// Per-range summary of a robustness sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub range: f64,
    pub mean_j: f64,
    pub std_j: f64,
    /// (J_unperturbed - mean J) / J_unperturbed against the mean-field run.
    pub rel_loss: f64,
}

/// Numerically stable mean/variance accumulator.
#[derive(Debug, Default, Clone, Copy)]
struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}

/// Deterministic per-run seed derivation (sub-streams of the sweep seed).
fn derived_seed(seed: u64, range_idx: usize, run: usize) -> u64 {
    seed ^ (range_idx as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((run as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB)
}

/// Runs the perturbation experiment over `ranges`: estimation error in the
/// mean-field integrator (noise injected into beta(Z_hat) once per step),
/// synchronization error in the finite-N simulator.
#[allow(clippy::too_many_arguments)]
pub fn robustness_sweep(
    model: &ModelSpec,
    policy: &ControlPolicy,
    kind: PerturbationKind,
    ranges: &[f64],
    runs: usize,
    n: Option<usize>,
    step: f64,
    noise: NoiseModel,
    seed: u64,
) -> Result<Vec<RobustnessPoint>> {
    model.validate()?;
    if runs == 0 {
        return Err(Error::InvalidPerturbation("runs must be positive".into()));
    }
    if ranges.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::InvalidPerturbation("ranges must be finite and non-negative".into()));
    }
    if kind == PerturbationKind::EstimationError && model.variant != Variant::Adaptive {
        return Err(Error::InvalidPerturbation(
            "estimation error applies to the adaptive variant (the defender estimates Z)".into(),
        ));
    }
    let n = match kind {
        PerturbationKind::SyncError => Some(n.ok_or_else(|| {
            Error::InvalidPerturbation("synchronization sweeps need a finite N".into())
        })?),
        PerturbationKind::EstimationError => None,
    };

    let baseline = integrate_forward(model, policy, step)?.j;
    let mut out = Vec::with_capacity(ranges.len());
    for (ri, &range) in ranges.iter().enumerate() {
        let mut acc = Welford::default();
        for run in 0..runs {
            let j = match kind {
                PerturbationKind::EstimationError => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, ri, run));
                    let mut eta = move || {
                        if range > 0.0 {
                            rng.gen_range(-range..=range)
                        } else {
                            0.0
                        }
                    };
                    integrate_with_noise(model, policy, step, noise, &mut eta)?.j
                }
                PerturbationKind::SyncError => {
                    let perturb = PerturbationSpec::SyncError { range };
                    simulate_population(
                        model,
                        policy,
                        n.unwrap(),
                        &perturb,
                        derived_seed(seed, ri, run),
                    )?
                    .j
                }
            };
            acc.push(j);
        }
        out.push(RobustnessPoint {
            range,
            mean_j: acc.mean,
            std_j: acc.std(),
            rel_loss: (baseline - acc.mean) / baseline,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        BetaSpec, ControlVector, DamageSpec, EfficacySpec, EpidemicState, VisibilitySpec,
    };
    use crate::ode::HeuristicKind;
    use crate::optimize::optimal_threshold;

    fn fig4_model() -> ModelSpec {
        ModelSpec {
            variant: Variant::NoHalting,
            beta: BetaSpec::Constant { beta: 2.0 },
            gamma: 0.5,
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
    fn zero_controls_give_constant_run() {
        let model = fig4_model();
        let policy = ControlPolicy::Piecewise {
            breakpoints: vec![0.0, 5.0],
            controls: vec![ControlVector::ZERO],
        };
        let run = simulate_population(&model, &policy, 200, &PerturbationSpec::None, 7).unwrap();
        assert_eq!(run.counts, vec![[198, 2, 0, 0]]);
        assert_eq!(run.j, 0.0);
    }

    #[test]
    fn two_node_contact_probability_matches_closed_form() {
        // One germinator, one susceptible, always-passive, beta = 2, T = 1:
        // the single pair contacts at rate beta/N = 1, so
        // P(passive at T) = 1 - e^{-1}.
        let mut model = fig4_model();
        model.horizon = 1.0;
        model.init = EpidemicState::new(0.5, 0.5, 0.0, 0.0).unwrap();
        let policy = ControlPolicy::Heuristic(HeuristicKind::AlwaysPassive);
        let trials = 10_000;
        let mut hits = 0;
        for seed in 0..trials {
            let run =
                simulate_population(&model, &policy, 2, &PerturbationSpec::None, seed).unwrap();
            if run.final_counts()[3] == 1 {
                hits += 1;
            }
        }
        let p = 1.0 - (-1.0_f64).exp();
        let freq = hits as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * se,
            "freq {freq} vs {p} (3 SE = {})",
            3.0 * se
        );
    }

    #[test]
    fn same_seed_reproduces_run_exactly() {
        let model = fig4_model();
        let policy = ControlPolicy::threshold(2.0);
        let a = simulate_population(&model, &policy, 500, &PerturbationSpec::None, 42).unwrap();
        let b = simulate_population(&model, &policy, 500, &PerturbationSpec::None, 42).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.j, b.j);
        let c = simulate_population(&model, &policy, 500, &PerturbationSpec::None, 43).unwrap();
        assert_ne!(a.times, c.times);
    }

    #[test]
    fn counts_conserved_and_zombies_monotone_without_halting() {
        let model = fig4_model();
        let policy = ControlPolicy::threshold(3.0);
        let run = simulate_population(&model, &policy, 300, &PerturbationSpec::None, 11).unwrap();
        assert!(run.counts.len() > 1, "expected events");
        for w in run.counts.windows(2) {
            assert_eq!(w[1].iter().sum::<usize>(), 300);
            assert_eq!(w[1][1], w[0][1], "germinator count changed");
            assert!(w[1][2] >= w[0][2], "zombies decreased without halting");
        }
    }

    #[test]
    fn mean_realized_objective_tracks_mean_field() {
        let model = fig4_model();
        let step = 5.0 / 400.0;
        let sol = optimal_threshold(&model, step, 33, 40).unwrap();
        let policy = ControlPolicy::threshold(sol.t_star);
        let mut acc = Welford::default();
        for seed in 0..100 {
            let run =
                simulate_population(&model, &policy, 500, &PerturbationSpec::None, seed).unwrap();
            acc.push(run.j);
        }
        let rel = (acc.mean - sol.j_star).abs() / sol.j_star;
        assert!(rel <= 0.05, "mean {} vs mean-field {} ({rel:.3})", acc.mean, sol.j_star);
    }

    #[test]
    fn estimation_sweep_at_zero_range_has_zero_loss() {
        let model = ModelSpec {
            variant: Variant::Adaptive,
            beta: BetaSpec::Sigmoid { beta_0: 1.0, alpha: 100.0, z_th: 0.01 },
            gamma: 1.4,
            pi: None,
            horizon: 15.0,
            init: EpidemicState::new(0.999, 0.001, 0.0, 0.0).unwrap(),
            damage: DamageSpec { f: EfficacySpec::Power { p: 0.9 }, g: VisibilitySpec::Zero },
        };
        let step = 15.0 / 2000.0;
        let policy = ControlPolicy::threshold(15.0);
        let points = robustness_sweep(
            &model,
            &policy,
            PerturbationKind::EstimationError,
            &[0.0, 0.2],
            5,
            None,
            step,
            NoiseModel::Multiplicative,
            9,
        )
        .unwrap();
        assert_eq!(points[0].rel_loss, 0.0);
        assert_eq!(points[0].std_j, 0.0);
        assert!(points[1].mean_j.is_finite());
    }

    #[test]
    fn sweep_rejects_mismatched_setups() {
        let model = fig4_model();
        let policy = ControlPolicy::threshold(2.0);
        // Estimation error outside the adaptive variant.
        let err = robustness_sweep(
            &model,
            &policy,
            PerturbationKind::EstimationError,
            &[0.1],
            3,
            None,
            5.0 / 400.0,
            NoiseModel::Multiplicative,
            1,
        );
        assert!(matches!(err, Err(Error::InvalidPerturbation(_))));
        // Sync sweep without a population size.
        let err = robustness_sweep(
            &model,
            &policy,
            PerturbationKind::SyncError,
            &[0.1],
            3,
            None,
            5.0 / 400.0,
            NoiseModel::Multiplicative,
            1,
        );
        assert!(matches!(err, Err(Error::InvalidPerturbation(_))));
        // Sync perturbation needs a threshold policy.
        let err = simulate_population(
            &model,
            &ControlPolicy::Heuristic(HeuristicKind::AlwaysZombie),
            100,
            &PerturbationSpec::SyncError { range: 0.1 },
            1,
        );
        assert!(matches!(err, Err(Error::InvalidPerturbation(_))));
    }

    #[test]
    fn sync_sweep_runs_and_degrades_gracefully() {
        let model = fig4_model();
        let step = 5.0 / 400.0;
        let sol = optimal_threshold(&model, step, 33, 40).unwrap();
        let points = robustness_sweep(
            &model,
            &ControlPolicy::threshold(sol.t_star),
            PerturbationKind::SyncError,
            &[0.0, 0.3],
            20,
            Some(500),
            step,
            NoiseModel::Multiplicative,
            5,
        )
        .unwrap();
        for p in &points {
            assert!(p.mean_j.is_finite() && p.std_j.is_finite());
            assert!(p.rel_loss.abs() < 0.5, "rel loss {} at range {}", p.rel_loss, p.range);
        }
    }

    #[test]
    fn population_rounding_assigns_remainder_to_susceptibles() {
        let model = fig4_model();
        let pop = Population::from_fractions(&model, 500).unwrap();
        assert_eq!((pop.n_s, pop.n_g, pop.n_z, pop.n_p), (495, 5, 0, 0));
        assert!(Population::from_fractions(&model, 10).is_err()); // G rounds to 0
    }
}
