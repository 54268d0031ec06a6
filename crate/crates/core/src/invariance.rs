//! Checks along integrated trajectories that rank-level sets, derivative
//! vanishing sets, the critical set and explicitly described sets are
//! invariant under the flow.
//!
//! Every check first tests its hypotheses (the quantity is conserved, the
//! start lies in the set) and returns [`Error::Hypothesis`] when they fail.
//! Invariance is checked at trajectory samples only.

use std::fmt;

use crate::error::{Error, Result};
use crate::integrate::{flow_adaptive, monitor_drift, DriftReport, FlowOptions, Trajectory};
use crate::rank_sets::{classify_M, member_N, RankDecision};
use crate::system::{conservation_residual, ConservedQuantitySet, StateVector, SystemDefinition};

/// Conservation residual allowed at each sample, relative to `max(1, ‖x‖)`.
pub const HYPOTHESIS_TOL: f64 = 1e-8;
/// A start whose field is below this (relative to `max(1, ‖x‖)`) is an
/// equilibrium and therefore trivially invariant.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvarianceKind {
    Rank,
    NOrder,
    ExplicitSet,
    Critical,
}

impl fmt::Display for InvarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvarianceKind::Rank => "rank",
            InvarianceKind::NOrder => "n_order",
            InvarianceKind::ExplicitSet => "explicit_set",
            InvarianceKind::Critical => "critical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Borderline,
    HypothesisError,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Borderline => "borderline",
            Verdict::HypothesisError => "hypothesis-error",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    /// Numerical rank, for rank-based kinds.
    pub rank: Option<usize>,
    pub margin: Option<f64>,
    /// Signed distance from the set boundary (`<= 0` inside) for rank and
    /// `N_(r)` kinds; the nonnegative set residual for explicit sets.
    pub residual: f64,
    pub inside: bool,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub kind: InvarianceKind,
    pub initial: SampleRecord,
    pub samples: Vec<SampleRecord>,
    pub verdict: Verdict,
    /// First sample leaving the set, else the sample closest to the boundary.
    pub worst: SampleRecord,
    pub drift: Option<DriftReport>,
    /// Largest conservation residual `|∇F_i·f|` seen along the trajectory.
    pub max_conservation_residual: Option<f64>,
    pub equilibrium: bool,
    pub trajectory: Trajectory,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn max_residual(&self) -> f64 {
        self.samples.iter().fold(f64::NEG_INFINITY, |m, s| m.max(s.residual))
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.samples.iter().filter_map(|s| s.rank).collect()
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.samples.iter().filter_map(|s| s.margin).reduce(f64::min)
    }
}

fn is_equilibrium(system: &SystemDefinition, x: &StateVector) -> Result<bool> {
    let f = system.evaluate(x)?;
    Ok(f.max_abs() <= EQUILIBRIUM_TOL * x.scale())
}

/// Largest `|∇F_i·f|` over the samples, failing on the first one above
/// `HYPOTHESIS_TOL·max(1, ‖x‖)`.
fn check_conserved(quantity: &ConservedQuantitySet, system: &SystemDefinition, traj: &Trajectory) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (t, x) in traj.iter() {
        let r = conservation_residual(quantity, system, x)?
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if r > HYPOTHESIS_TOL * x.scale() {
            return Err(Error::Hypothesis(format!(
                "{} is not conserved by {}: |grad F . f| = {r:e} at t = {t}",
                quantity.labels().join(","),
                system.label()
            )));
        }
        worst = worst.max(r);
    }
    Ok(worst)
}

fn rank_record(t: f64, d: RankDecision, residual: f64, inside: bool) -> SampleRecord {
    SampleRecord {
        t,
        rank: Some(d.s),
        margin: Some(d.margin),
        residual,
        inside,
        singular_values: d.singular_values,
    }
}

fn residual_record(t: f64, residual: f64, inside: bool) -> SampleRecord {
    SampleRecord {
        t,
        rank: None,
        margin: None,
        residual,
        inside,
        singular_values: Vec::new(),
    }
}

/// Verdict and worst sample. Borderline applies to rank-based samples only.
fn summarize(samples: &[SampleRecord]) -> (Verdict, SampleRecord) {
    if let Some(out) = samples.iter().find(|s| !s.inside) {
        return (Verdict::Fail, out.clone());
    }
    let with_margin = samples
        .iter()
        .filter(|s| s.margin.is_some())
        .min_by(|a, b| a.margin.unwrap().total_cmp(&b.margin.unwrap()));
    if let Some(w) = with_margin {
        let v = if w.margin.unwrap() < crate::rank_sets::BORDERLINE_MARGIN {
            Verdict::Borderline
        } else {
            Verdict::Pass
        };
        return (v, w.clone());
    }
    let w = samples
        .iter()
        .max_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("at least one sample");
    (Verdict::Pass, w.clone())
}

enum RankCheck {
    Exact,
    BelowK,
}

fn rank_based(
    kind: InvarianceKind,
    check: RankCheck,
    system: &SystemDefinition,
    quantity: &ConservedQuantitySet,
    x0: &StateVector,
    t_end: f64,
    tau: f64,
    opts: &FlowOptions,
) -> Result<InvarianceReport> {
    let k = quantity.k();
    let d0 = classify_M(quantity, x0, tau)?;
    let s0 = d0.s;
    if let RankCheck::BelowK = check {
        if s0 >= k {
            return Err(Error::Hypothesis(format!(
                "start is not critical: rank {s0} equals k = {k} (singular values {:?})",
                d0.singular_values
            )));
        }
    }
    let equilibrium = is_equilibrium(system, x0)?;
    let traj = flow_adaptive(system, x0, t_end, opts)?;
    let max_cons = check_conserved(quantity, system, &traj)?;
    let mut samples = Vec::with_capacity(traj.len());
    for (t, x) in traj.iter() {
        let d = classify_M(quantity, x, tau)?;
        let (residual, inside) = match check {
            RankCheck::Exact => (d.residual_for_rank(s0), d.s == s0),
            RankCheck::BelowK => (d.residual_for_critical(k), d.s < k),
        };
        samples.push(rank_record(t, d, residual, inside));
    }
    let (verdict, worst) = summarize(&samples);
    Ok(InvarianceReport {
        kind,
        initial: samples[0].clone(),
        verdict,
        worst,
        drift: Some(monitor_drift(&traj, quantity)?),
        max_conservation_residual: Some(max_cons),
        equilibrium,
        samples,
        trajectory: traj,
    })
}

/// The rank of `∇F` stays at its initial value along the flow.
pub fn verify_rank_invariance(
    system: &SystemDefinition,
    quantity: &ConservedQuantitySet,
    x0: &StateVector,
    t_end: f64,
    tau: f64,
    opts: &FlowOptions,
) -> Result<InvarianceReport> {
    rank_based(InvarianceKind::Rank, RankCheck::Exact, system, quantity, x0, t_end, tau, opts)
}

/// From a critical start the rank stays below `k`.
pub fn verify_critical_invariance(
    system: &SystemDefinition,
    quantity: &ConservedQuantitySet,
    x0: &StateVector,
    t_end: f64,
    tau: f64,
    opts: &FlowOptions,
) -> Result<InvarianceReport> {
    rank_based(InvarianceKind::Critical, RankCheck::BelowK, system, quantity, x0, t_end, tau, opts)
}

/// From a start in `N_(r)` every sample stays in `N_(r)`.
#[allow(non_snake_case)]
pub fn verify_N_invariance(
    system: &SystemDefinition,
    quantity: &ConservedQuantitySet,
    x0: &StateVector,
    r: usize,
    t_end: f64,
    abs_tol: f64,
    opts: &FlowOptions,
) -> Result<InvarianceReport> {
    let m0 = member_N(quantity, x0, r, abs_tol)?;
    if !m0.verdict {
        return Err(Error::Hypothesis(format!(
            "start is not in N_({r}): largest partial exceeds {:e} by {:e}",
            m0.threshold, m0.residual
        )));
    }
    let equilibrium = is_equilibrium(system, x0)?;
    let traj = flow_adaptive(system, x0, t_end, opts)?;
    let max_cons = check_conserved(quantity, system, &traj)?;
    let samples = traj
        .iter()
        .map(|(t, x)| member_N(quantity, x, r, abs_tol).map(|m| residual_record(t, m.residual, m.verdict)))
        .collect::<Result<Vec<_>>>()?;
    let (verdict, worst) = summarize(&samples);
    Ok(InvarianceReport {
        kind: InvarianceKind::NOrder,
        initial: samples[0].clone(),
        verdict,
        worst,
        drift: Some(monitor_drift(&traj, quantity)?),
        max_conservation_residual: Some(max_cons),
        equilibrium,
        samples,
        trajectory: traj,
    })
}

/// A nonnegative residual that vanishes on the set stays within `tol`.
pub fn verify_set_persistence(
    system: &SystemDefinition,
    residual_fn: &dyn Fn(&StateVector) -> Result<f64>,
    x0: &StateVector,
    t_end: f64,
    tol: f64,
    opts: &FlowOptions,
) -> Result<InvarianceReport> {
    let r0 = residual_fn(x0)?;
    if !(r0 <= tol) {
        return Err(Error::Hypothesis(format!(
            "start is not in the set: residual {r0:e} exceeds {tol:e}"
        )));
    }
    let equilibrium = is_equilibrium(system, x0)?;
    let traj = flow_adaptive(system, x0, t_end, opts)?;
    let samples = traj
        .iter()
        .map(|(t, x)| residual_fn(x).map(|r| residual_record(t, r, r <= tol)))
        .collect::<Result<Vec<_>>>()?;
    let (verdict, worst) = summarize(&samples);
    Ok(InvarianceReport {
        kind: InvarianceKind::ExplicitSet,
        initial: samples[0].clone(),
        verdict,
        worst,
        drift: None,
        max_conservation_residual: None,
        equilibrium,
        samples,
        trajectory: traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{kepler, oscillator, toda};
    use std::f64::consts::PI;

    fn sv(v: &[f64]) -> StateVector {
        StateVector::from_slice(v).unwrap()
    }

    const PATTERN: [f64; 8] = [0.3, 0.7, 0.3, 0.7, 0.5, -0.2, 0.5, -0.2];
    const GENERIC: [f64; 8] = [0.9, 0.4, 1.2, 0.6, 0.3, -0.5, 0.1, 0.2];

    fn toda4() -> (SystemDefinition, ConservedQuantitySet) {
        (toda::periodic_field(4).unwrap(), toda::periodic_quantity(4, &[1, 2, 3]).unwrap())
    }

    #[test]
    fn rank_two_persists_on_pattern_set() {
        let (f, q) = toda4();
        let r = verify_rank_invariance(&f, &q, &sv(&PATTERN), 10.0, 1e-8, &FlowOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.worst);
        assert!(r.ranks().iter().all(|&s| s == 2));
        assert_eq!(r.samples.len(), 401);
    }

    #[test]
    fn rank_three_persists_from_generic_start() {
        let (f, q) = toda4();
        let r = verify_rank_invariance(&f, &q, &sv(&GENERIC), 10.0, 1e-8, &FlowOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.ranks().iter().all(|&s| s == 3));
    }

    #[test]
    fn kepler_k_is_rank_zero_along_circle() {
        let x0 = sv(&[0.0, 1.0, 1.0, 0.0]);
        let r = verify_rank_invariance(
            &kepler::kepler_field(),
            &kepler::k_quantity(1.0).unwrap(),
            &x0,
            2.0 * PI,
            1e-8,
            &FlowOptions::default(),
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.worst);
        assert!(r.ranks().iter().all(|&s| s == 0));
    }

    #[test]
    fn circle_stays_in_n2() {
        let r = verify_N_invariance(
            &oscillator::harmonic_field(),
            &oscillator::circle_power(3),
            &sv(&[1.0, 0.0]),
            2,
            2.0 * PI,
            1e-4,
            &FlowOptions::default(),
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn third_order_is_a_hypothesis_error() {
        let err = verify_N_invariance(
            &oscillator::harmonic_field(),
            &oscillator::circle_power(3),
            &sv(&[1.0, 0.0]),
            3,
            2.0 * PI,
            1e-4,
            &FlowOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)), "{err}");
    }

    #[test]
    fn constant_quantity_is_trivially_in_n_r() {
        let q = ConservedQuantitySet::constant(2, vec![1.0]).unwrap();
        for r in 1..=4 {
            let rep = verify_N_invariance(&oscillator::harmonic_field(), &q, &sv(&[0.4, -2.0]), r, 3.0, 1e-12, &FlowOptions::default())
                .unwrap();
            assert!(rep.passed());
        }
    }

    #[test]
    fn explicit_sets_persist() {
        let id: toda::ExplicitSetId = "M1_I13".parse().unwrap();
        let f = toda::periodic_field(4).unwrap();
        let res = |x: &StateVector| toda::explicit_set_residual(&id, 4, x);
        let r = verify_set_persistence(&f, &res, &sv(&[0.4, 0.9, 0.4, 0.9, 0.6, -0.6, 0.6, -0.6]), 10.0, 1e-7, &FlowOptions::default())
            .unwrap();
        assert!(r.passed() && r.max_residual() < 1e-7);

        let id: toda::ExplicitSetId = "M2_F123".parse().unwrap();
        let f = toda::nonperiodic_field(4).unwrap();
        let res = |x: &StateVector| toda::explicit_set_residual(&id, 4, x);
        let r = verify_set_persistence(&f, &res, &sv(&[0.5, 0.0, 0.5, 0.2, -0.1, 0.2, -0.1]), 10.0, 1e-7, &FlowOptions::default())
            .unwrap();
        assert!(r.passed());

        let zero = |_: &StateVector| Ok(0.0);
        let r = verify_set_persistence(&f, &zero, &sv(&[0.9, 0.4, 1.2, 0.3, -0.5, 0.1, 0.2]), 5.0, 0.0, &FlowOptions::default()).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn off_set_start_is_a_hypothesis_error() {
        let id: toda::ExplicitSetId = "M1_I13".parse().unwrap();
        let res = |x: &StateVector| toda::explicit_set_residual(&id, 4, x);
        let err = verify_set_persistence(&toda::periodic_field(4).unwrap(), &res, &sv(&GENERIC), 1.0, 1e-7, &FlowOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
    }

    #[test]
    fn critical_set_examples() {
        let (f, q) = toda4();
        let r = verify_critical_invariance(&f, &q, &sv(&PATTERN), 10.0, 1e-8, &FlowOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        let err = verify_critical_invariance(&f, &q, &sv(&GENERIC), 10.0, 1e-8, &FlowOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));

        let ha = ConservedQuantitySet::stack(&[kepler::hamiltonian(), kepler::angular_momentum()]).unwrap();
        let r = verify_critical_invariance(&kepler::kepler_field(), &ha, &sv(&[0.0, 1.0, 1.0, 0.0]), 2.0 * PI, 1e-8, &FlowOptions::default())
            .unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.ranks().iter().all(|&s| s == 1));
    }

    #[test]
    fn non_conserved_probe_is_rejected() {
        let probe = ConservedQuantitySet::scalar(2, "x1", |x| x[0]).unwrap();
        let err = verify_rank_invariance(&oscillator::harmonic_field(), &probe, &sv(&[1.0, 1.0]), 1.0, 1e-8, &FlowOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
    }

    #[test]
    fn equilibria_are_flagged() {
        let f = toda::periodic_field(3).unwrap();
        let q = toda::periodic_quantity(3, &[1, 2, 3]).unwrap();
        let r = verify_rank_invariance(&f, &q, &sv(&[0.7, 0.7, 0.7, 0.0, 0.0, 0.0]), 5.0, 1e-8, &FlowOptions::default()).unwrap();
        assert!(r.equilibrium && r.passed());
    }
}
