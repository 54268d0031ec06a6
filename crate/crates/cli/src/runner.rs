//! Executes one scenario against the library and collects the evidence.

use std::path::Path;
use std::time::Instant;

use invset::coincidence::{symplectic_base, verify_coincidence, DEFAULT_DEVIATION_TOL};
use invset::differentiate::jacobian;
use invset::integrate::{flow_adaptive, monitor_drift, Trajectory};
use invset::invariance::{
    verify_critical_invariance, verify_N_invariance, verify_rank_invariance, verify_set_persistence, InvarianceReport,
};
use invset::models::kepler;
use invset::models::toda::{self, ExplicitSetId, Lattice};
use invset::rank_sets::DEFAULT_RANK_TOL;
use invset::{ConservedQuantitySet, Error, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CheckKind, Model, ModelKind, ScenarioConfig};
use crate::export;
use crate::report::{
    drift_table, CoincidenceEvidence, DeviationPoint, DriftEvidence, Evidence, Integration, InvarianceEvidence,
    OracleEvidence, OracleRow, Outcome, RankCount, RunReport,
};

pub const DEFAULT_N_TOL: f64 = 1e-6;
pub const DEFAULT_SET_TOL: f64 = 1e-8;
pub const DEFAULT_ORACLE_TOL: f64 = 1e-12;
pub const DEFAULT_DRIFT_TOL: f64 = 1e-8;
pub const DEFAULT_PROBES: usize = 100;
const CURVE_POINTS: usize = 9;

/// Everything a check needs, built and validated from the config.
pub struct Prepared {
    pub model: Model,
    pub quantity: ConservedQuantitySet,
    pub components: Vec<usize>,
    pub x0: StateVector,
    pub set: Option<ExplicitSetId>,
}

pub fn prepare(c: &ScenarioConfig) -> Result<Prepared, String> {
    let model = Model::build(&c.model)?;
    let (quantity, components) = model.quantity(c.quantity.as_deref())?;
    let (x0, set) = model.initial_state(&c.initial_state)?;
    let positive = |name: &str, v: Option<f64>| match v {
        Some(v) if !(v.is_finite() && v > 0.0) => Err(format!("`{name}` must be positive, got {v}")),
        _ => Ok(()),
    };
    positive("integrator.abs_tol", Some(c.integrator.abs_tol))?;
    positive("integrator.rel_tol", Some(c.integrator.rel_tol))?;
    positive("residual_tol", c.residual_tol)?;
    if let Some(t) = c.rank_tol {
        if !(t > 0.0 && t < 1.0) {
            return Err(format!("`rank_tol` must lie in (0, 1), got {t}"));
        }
    }
    if c.check != CheckKind::OracleEquality {
        positive("t_end", Some(c.t_end))?;
        if c.integrator.samples < 2 {
            return Err(format!("`integrator.samples` must be at least 2, got {}", c.integrator.samples));
        }
    }
    if let Some(e) = &c.expect {
        let known = ["pass", "fail", "borderline", "hypothesis-error", "config-error"];
        if !known.contains(&e.as_str()) {
            return Err(format!("unknown `expect` value {e:?}; valid options: {}", known.join(", ")));
        }
    }
    Ok(Prepared {
        model,
        quantity,
        components,
        x0,
        set,
    })
}

/// Result of one scenario, with the trajectory kept for export.
pub struct RunOutput {
    pub report: RunReport,
    pub trajectory: Option<Trajectory>,
    pub prepared: Option<Prepared>,
}

pub fn run(config: ScenarioConfig) -> RunOutput {
    let start = Instant::now();
    let mut out = match prepare(&config) {
        Err(msg) => RunOutput {
            report: RunReport::new(Some(config), Outcome::ConfigError, Some(msg), None),
            trajectory: None,
            prepared: None,
        },
        Ok(p) => {
            let (outcome, message, evidence, trajectory) = match execute(&config, &p) {
                Ok(done) => done,
                Err(e) => {
                    let outcome = match e {
                        Error::Hypothesis(_) => Outcome::HypothesisError,
                        Error::Usage(_) | Error::DimensionMismatch { .. } | Error::EmptySet(_) => Outcome::ConfigError,
                        _ => Outcome::Fail,
                    };
                    (outcome, Some(e.to_string()), None, None)
                }
            };
            RunOutput {
                report: RunReport::new(Some(config), outcome, message, evidence),
                trajectory,
                prepared: Some(p),
            }
        }
    };
    out.report.elapsed_seconds = start.elapsed().as_secs_f64();
    out
}

/// Loads, overrides and runs a scenario file. Load failures become
/// config-error reports.
pub fn run_file(path: &Path, overrides: &crate::config::Overrides) -> RunOutput {
    match ScenarioConfig::load(path) {
        Ok(mut c) => {
            c.apply(overrides);
            c.resolve_outputs(path.parent().unwrap_or(Path::new(".")));
            run(c)
        }
        Err(msg) => RunOutput {
            report: RunReport::new(None, Outcome::ConfigError, Some(msg), None),
            trajectory: None,
            prepared: None,
        },
    }
}

/// Writes the report and CSV files named in `output`.
pub fn write_outputs(out: &RunOutput) -> Result<(), String> {
    let Some(config) = &out.report.config else {
        return Ok(());
    };
    if let Some(path) = &config.output.report {
        std::fs::write(path, out.report.to_json() + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    if let (Some(path), Some(traj), Some(p)) = (&config.output.csv, &out.trajectory, &out.prepared) {
        let tau = config.rank_tol.unwrap_or(DEFAULT_RANK_TOL);
        export::write_csv(path, traj, &p.quantity, &p.model.coordinates, tau)?;
    }
    Ok(())
}

type Executed = (Outcome, Option<String>, Option<Evidence>, Option<Trajectory>);

fn execute(c: &ScenarioConfig, p: &Prepared) -> invset::Result<Executed> {
    let opts = c.flow_options();
    let tau = c.rank_tol.unwrap_or(DEFAULT_RANK_TOL);
    let sys = &p.model.system;
    match c.check {
        CheckKind::RankInvariance => Ok(invariance(verify_rank_invariance(sys, &p.quantity, &p.x0, c.t_end, tau, &opts)?)),
        CheckKind::CriticalInvariance => {
            Ok(invariance(verify_critical_invariance(sys, &p.quantity, &p.x0, c.t_end, tau, &opts)?))
        }
        CheckKind::NInvariance => {
            let r = c.order.ok_or_else(|| Error::Usage("n-invariance needs `order`".into()))?;
            let tol = c.residual_tol.unwrap_or(DEFAULT_N_TOL);
            Ok(invariance(verify_N_invariance(sys, &p.quantity, &p.x0, r, c.t_end, tol, &opts)?))
        }
        CheckKind::SetPersistence => {
            let tol = c.residual_tol.unwrap_or(DEFAULT_SET_TOL);
            let rep = match (&p.set, p.model.kind) {
                (Some(id), _) => {
                    let n = p.model.n;
                    let res = |x: &StateVector| toda::explicit_set_residual(id, n, x.as_slice());
                    verify_set_persistence(sys, &res, &p.x0, c.t_end, tol, &opts)?
                }
                (None, ModelKind::Kepler) => {
                    let k = kepler::k_quantity(p.model.a)?;
                    let res = |x: &StateVector| Ok(jacobian(&k, x)?.max_abs());
                    verify_set_persistence(sys, &res, &p.x0, c.t_end, tol, &opts)?
                }
                _ => {
                    return Err(Error::Usage(
                        "set-persistence needs initial_state.set (toda) or initial_state.circular (kepler)".into(),
                    ))
                }
            };
            Ok(invariance(rep))
        }
        CheckKind::Coincidence => coincidence(c, p),
        CheckKind::OracleEquality => oracle(c, p),
        CheckKind::Drift => {
            let tol = c.residual_tol.unwrap_or(DEFAULT_DRIFT_TOL);
            let traj = flow_adaptive(sys, &p.x0, c.t_end, &opts)?;
            let d = monitor_drift(&traj, &p.quantity)?;
            let worst = d.worst();
            let outcome = if worst <= tol { Outcome::Pass } else { Outcome::Fail };
            let ev = Evidence::Drift(DriftEvidence {
                tolerance: tol,
                worst,
                rows: drift_table(&d),
                integration: Integration::of(traj.stats(), traj.len()),
            });
            Ok((outcome, None, Some(ev), Some(traj)))
        }
    }
}

fn invariance(r: InvarianceReport) -> Executed {
    let mut profile: Vec<RankCount> = Vec::new();
    for s in r.ranks() {
        match profile.iter_mut().find(|c| c.rank == s) {
            Some(c) => c.samples += 1,
            None => profile.push(RankCount { rank: s, samples: 1 }),
        }
    }
    profile.sort_by_key(|c| c.rank);
    let message = r.equilibrium.then(|| "start is an equilibrium; invariance holds trivially".to_string());
    let ev = Evidence::Invariance(InvarianceEvidence {
        kind: r.kind.to_string(),
        equilibrium: r.equilibrium,
        initial: (&r.initial).into(),
        worst: (&r.worst).into(),
        max_residual: r.max_residual(),
        rank_profile: profile,
        min_margin: r.min_margin(),
        max_conservation_residual: r.max_conservation_residual,
        drift: r.drift.as_ref().map(drift_table).unwrap_or_default(),
        integration: Integration::of(r.trajectory.stats(), r.trajectory.len()),
    });
    (r.verdict.into(), message, Some(ev), Some(r.trajectory))
}

fn coincidence(c: &ScenarioConfig, p: &Prepared) -> invset::Result<Executed> {
    if p.model.kind != ModelKind::Kepler {
        return Err(Error::Usage(format!(
            "coincidence is available for the kepler model only, not {}",
            p.model.kind_name()
        )));
    }
    let tol = c.residual_tol.unwrap_or(DEFAULT_DEVIATION_TOL);
    let rep = verify_coincidence(
        &symplectic_base(4)?,
        &kepler::hamiltonian(),
        &kepler::linear_driver(p.model.a)?,
        &p.x0,
        1,
        c.t_end,
        tol,
        &c.flow_options(),
    )?;
    let stride = (rep.deviations.len().saturating_sub(1) / (CURVE_POINTS - 1)).max(1);
    let mut curve: Vec<DeviationPoint> = rep
        .deviations
        .iter()
        .step_by(stride)
        .map(|&(t, d)| DeviationPoint { t, deviation: d })
        .collect();
    if let Some(&(t, d)) = rep.deviations.last() {
        if curve.last().map(|q| q.t) != Some(t) {
            curve.push(DeviationPoint { t, deviation: d });
        }
    }
    let message = rep.hypothesis.clone();
    let ev = Evidence::Coincidence(CoincidenceEvidence {
        e_residual: rep.e_residual,
        order: rep.order,
        difference_conservation_residual: rep.difference_conservation_residual,
        max_deviation: rep.max_deviation,
        time_of_max: rep.time_of_max,
        tolerance: rep.tolerance,
        deviation_curve: curve,
        hypothesis: rep.hypothesis,
        integration_error: rep.integration_error,
    });
    Ok((rep.verdict.into(), message, Some(ev), rep.trajectory_f))
}

/// Uniform random Toda state with `X ∈ [0.2, 1.5]`, `u ∈ [−1, 1]`.
pub fn random_toda_state(rng: &mut ChaCha8Rng, lattice: Lattice, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..lattice.x_len(n)).map(|_| rng.gen_range(0.2..1.5)).collect();
    v.extend((0..n).map(|_| rng.gen_range(-1.0..1.0)));
    v
}

fn oracle(c: &ScenarioConfig, p: &Prepared) -> invset::Result<Executed> {
    let lattice = p.model.lattice().ok_or_else(|| {
        Error::Usage(format!(
            "oracle-equality compares closed forms on the toda models, not {}",
            p.model.kind_name()
        ))
    })?;
    let n = p.model.n;
    let tol = c.residual_tol.unwrap_or(DEFAULT_ORACLE_TOL);
    let probes = c.probes.unwrap_or(DEFAULT_PROBES);
    if probes == 0 {
        return Err(Error::Usage("`probes` must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let states: Vec<Vec<f64>> = (0..probes).map(|_| random_toda_state(&mut rng, lattice, n)).collect();
    let mut rows = Vec::new();
    for &m in &p.components {
        let (closed, reference) = match lattice {
            Lattice::Periodic => (toda::henon_closed_form(n, m)?, toda::henon_invariant_oracle(n, m)?),
            Lattice::Nonperiodic => (toda::flaschka_closed_form(n, m)?, toda::flaschka_trace(n, m)?),
        };
        let worst = states.iter().fold(0.0_f64, |w, x| {
            let (a, b) = (closed.value_raw(x)[0], reference.value_raw(x)[0]);
            if a == b {
                w
            } else {
                w.max((a - b).abs() / a.abs().max(b.abs()))
            }
        });
        rows.push(OracleRow {
            quantity: format!("{}{m}", lattice.quantity_prefix()),
            worst_relative_gap: worst,
        });
    }
    let ok = rows.iter().all(|r| r.worst_relative_gap <= tol);
    let ev = Evidence::Oracle(OracleEvidence {
        probes,
        seed: c.seed,
        tolerance: tol,
        rows,
    });
    Ok((if ok { Outcome::Pass } else { Outcome::Fail }, None, Some(ev), None))
}
