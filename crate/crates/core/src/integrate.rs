//! Flow maps: adaptive Dormand–Prince 5(4) and fixed-step RK4, plus drift
//! monitoring of conserved quantities along the result.

use crate::error::{usage, Error, Result};
use crate::system::{check_dim, ConservedQuantitySet, StateVector, SystemDefinition};

pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const DEFAULT_SAMPLES: usize = 401;
pub const DEFAULT_MAX_STEPS: usize = 5_000_000;
const MAX_FIXED_STEPS: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub samples: usize,
    /// Accepted plus rejected steps before giving up.
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: DEFAULT_REL_TOL,
            samples: DEFAULT_SAMPLES,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl FlowOptions {
    pub fn with_tolerances(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("abs_tol", self.abs_tol), ("rel_tol", self.rel_tol)] {
            if !(v > 0.0 && v <= 1e-2) {
                return Err(usage(format!("{name} must be in (0, 1e-2], got {v}")));
            }
        }
        if self.samples < 2 {
            return Err(usage(format!("sample count must be at least 2, got {}", self.samples)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorStats {
    pub method: &'static str,
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// `(abs_tol, rel_tol)` for adaptive runs, `None` for fixed step.
    pub tolerances: Option<(f64, f64)>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<StateVector>,
    stats: IntegratorStats,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn stats(&self) -> &IntegratorStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> &StateVector {
        &self.states[0]
    }

    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectories hold at least two samples")
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &StateVector)> {
        self.times.iter().copied().zip(self.states.iter())
    }

    /// Largest max-norm gap between matching samples of two trajectories and
    /// the time where it occurs.
    pub fn max_deviation(&self, other: &Trajectory) -> Result<(f64, f64)> {
        check_dim(self.len(), other.len())?;
        let mut worst = (0.0, 0.0);
        for ((t, a), b) in self.iter().zip(other.states()) {
            let d = a.max_abs_diff(b);
            if d > worst.0 || d.is_nan() {
                worst = (d, t);
            }
        }
        Ok(worst)
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

struct Stepper<'a> {
    system: &'a SystemDefinition,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    evaluations: usize,
}

impl<'a> Stepper<'a> {
    fn new(system: &'a SystemDefinition) -> Self {
        let n = system.dim();
        Self {
            system,
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            evaluations: 0,
        }
    }

    fn eval(&mut self, x: &[f64]) -> Vec<f64> {
        self.evaluations += 1;
        self.system.rhs(x)
    }

    /// One trial step from `y` with `k[0] = f(y)` already set. Returns the
    /// fifth-order solution and its error estimate, or `None` when a stage
    /// produced a non-finite value.
    fn try_step(&mut self, y: &[f64], h: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = y.len();
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * self.k[j][i];
                }
                self.stage[i] = y[i] + h * acc;
            }
            if !all_finite(&self.stage) {
                return None;
            }
            let ks = self.eval(&self.stage.clone());
            if ks.len() != n || !all_finite(&ks) {
                return None;
            }
            self.k[s] = ks;
        }
        // stage 7 is evaluated at the fifth-order solution
        let y_new = self.stage.clone();
        let err: Vec<f64> = (0..n)
            .map(|i| h * (0..7).map(|j| E[j] * self.k[j][i]).sum::<f64>())
            .collect();
        debug_assert!((0..n).all(|i| {
            let b: f64 = y[i] + h * (0..7).map(|j| B[j] * self.k[j][i]).sum::<f64>();
            (b - y_new[i]).abs() <= 1e-12 * b.abs().max(1.0)
        }));
        Some((y_new, err))
    }
}

fn check_start(system: &SystemDefinition, x0: &StateVector, t_end: f64) -> Result<()> {
    check_dim(system.dim(), x0.dim())?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(usage(format!("t_end must be positive and finite, got {t_end}")));
    }
    Ok(())
}

fn initial_step(stepper: &mut Stepper, y0: &[f64], f0: &[f64], opts: &FlowOptions, span: f64) -> f64 {
    let sc: Vec<f64> = y0.iter().map(|v| opts.abs_tol + opts.rel_tol * v.abs()).collect();
    let scaled = |v: &[f64]| v.iter().zip(&sc).fold(0.0_f64, |m, (a, s)| m.max(a.abs() / s));
    let (d0, d1) = (scaled(y0), scaled(f0));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let f1 = stepper.eval(&y1);
    let d2 = if all_finite(&f1) {
        let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
        scaled(&diff) / h0
    } else {
        f64::INFINITY
    };
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Adaptive Dormand–Prince 5(4) integration reporting `opts.samples`
/// uniformly spaced states on `[0, t_end]`. Steps are shortened to land on
/// each sample time, so no interpolation is involved.
pub fn flow_adaptive(
    system: &SystemDefinition,
    x0: &StateVector,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    check_start(system, x0, t_end)?;
    opts.validate()?;
    let m = opts.samples;
    let sample_times: Vec<f64> = (0..m)
        .map(|i| if i == m - 1 { t_end } else { t_end * i as f64 / (m - 1) as f64 })
        .collect();

    let mut stepper = Stepper::new(system);
    let mut y = x0.to_vec();
    let f0 = stepper.eval(&y);
    if f0.len() != y.len() || !all_finite(&f0) {
        let index = f0.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite {
            index,
            context: "vector field at the initial state".into(),
        });
    }
    let mut h = initial_step(&mut stepper, &y, &f0, opts, t_end);
    stepper.k[0] = f0;

    let mut t = 0.0;
    let (mut steps, mut rejected) = (0usize, 0usize);
    let mut states = Vec::with_capacity(m);
    states.push(x0.clone());

    for &target in &sample_times[1..] {
        while t < target {
            if steps + rejected >= opts.max_steps {
                return Err(Error::Integration {
                    t_last: t,
                    reason: format!("step limit {} reached", opts.max_steps),
                });
            }
            let remaining = target - t;
            let landing = h >= remaining * (1.0 - 1e-12);
            let h_try = if landing { remaining } else { h };
            if h_try < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t_last: t, step: h_try });
            }
            match stepper.try_step(&y, h_try) {
                Some((y_new, err)) => {
                    let scale = opts.abs_tol + opts.rel_tol * inf_norm(&y).max(inf_norm(&y_new));
                    let e = inf_norm(&err) / scale;
                    if e <= 1.0 {
                        steps += 1;
                        t = if landing { target } else { t + h_try };
                        y = y_new;
                        stepper.k[0] = std::mem::take(&mut stepper.k[6]);
                        let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                        h = if landing { h.max(h_try * factor) } else { h_try * factor };
                    } else {
                        rejected += 1;
                        h = h_try * (0.9 * e.powf(-0.2)).clamp(0.2, 1.0);
                    }
                }
                None => {
                    rejected += 1;
                    h = h_try * 0.2;
                }
            }
        }
        states.push(StateVector::new(y.clone())?);
    }

    Ok(Trajectory {
        times: sample_times,
        states,
        stats: IntegratorStats {
            method: "dopri5",
            steps,
            rejected,
            evaluations: stepper.evaluations,
            tolerances: Some((opts.abs_tol, opts.rel_tol)),
            dt: None,
        },
    })
}

/// Classic fixed-step RK4 recording every step; the last step is shortened
/// to end exactly at `t_end`.
pub fn flow_fixed(system: &SystemDefinition, x0: &StateVector, t_end: f64, dt: f64) -> Result<Trajectory> {
    check_start(system, x0, t_end)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(usage(format!("dt must be positive, got {dt}")));
    }
    let ratio = t_end / dt;
    if ratio > MAX_FIXED_STEPS {
        return Err(usage(format!("t_end/dt = {ratio:e} exceeds the limit {MAX_FIXED_STEPS:e}")));
    }
    let n_steps = (ratio.ceil() as usize).max(1);
    let n = x0.dim();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(x0.clone());
    let mut y = x0.to_vec();
    let mut evaluations = 0;
    let mut eval = |x: &[f64], t: f64| -> Result<Vec<f64>> {
        evaluations += 1;
        let v = system.rhs(x);
        match v.iter().position(|c| !c.is_finite()) {
            Some(i) => Err(Error::Integration {
                t_last: t,
                reason: format!("non-finite field component {i}"),
            }),
            None => Ok(v),
        }
    };
    let axpy = |y: &[f64], a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(p, q)| p + a * q).collect() };
    for step in 1..=n_steps {
        let t0 = (step - 1) as f64 * dt;
        let t1 = if step == n_steps { t_end } else { step as f64 * dt };
        let h = t1 - t0;
        let k1 = eval(&y, t0)?;
        let k2 = eval(&axpy(&y, h / 2.0, &k1), t0)?;
        let k3 = eval(&axpy(&y, h / 2.0, &k2), t0)?;
        let k4 = eval(&axpy(&y, h, &k3), t0)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let s = StateVector::new(y.clone()).map_err(|_| Error::Integration {
            t_last: t0,
            reason: "non-finite state".into(),
        })?;
        times.push(t1);
        states.push(s);
    }
    Ok(Trajectory {
        times,
        states,
        stats: IntegratorStats {
            method: "rk4",
            steps: n_steps,
            rejected: 0,
            evaluations,
            tolerances: None,
            dt: Some(dt),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub labels: Vec<String>,
    /// `max_t |F_i(x(t)) − F_i(x(0))|` per component.
    pub max_drift: Vec<f64>,
    pub time_of_max: Vec<f64>,
}

impl DriftReport {
    pub fn worst(&self) -> f64 {
        self.max_drift.iter().fold(0.0_f64, |m, &d| m.max(d))
    }
}

pub fn monitor_drift(traj: &Trajectory, quantity: &ConservedQuantitySet) -> Result<DriftReport> {
    let f0 = quantity.value(traj.first())?;
    let k = quantity.k();
    let mut max_drift = vec![0.0; k];
    let mut time_of_max = vec![0.0; k];
    for (t, x) in traj.iter().skip(1) {
        let f = quantity.value(x)?;
        for i in 0..k {
            let d = (f[i] - f0[i]).abs();
            if d > max_drift[i] {
                max_drift[i] = d;
                time_of_max[i] = t;
            }
        }
    }
    Ok(DriftReport {
        labels: quantity.labels().to_vec(),
        max_drift,
        time_of_max,
    })
}
