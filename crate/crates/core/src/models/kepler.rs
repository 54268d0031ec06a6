//! Planar Kepler problem with unit gravitational parameter and unit mass.
//!
//! State layout `(x₁, x₂, y₁, y₂)`: position then velocity.
//!
//! For `a > 0` the quantity `K = H + A/a³` has `∇K = 0` exactly on the
//! clockwise circular orbits of radius `a²` and speed `1/a`. On that set the
//! Kepler field agrees with the Hamiltonian field of `−A/a³`, which is the
//! linear rotation `(x₂, −x₁, y₂, −y₁)/a³`.
//!
//! Note on orientation: the counter-clockwise rotation `(−x₂, x₁, −y₂, y₁)`
//! (Hamiltonian `A`) is the time reversal of the motion on `{∇K = 0}`; the
//! pairing here uses `−A/a³`, the sign for which `F − G = K` is conserved.

use crate::error::{usage, Result};
use crate::system::{ConservedQuantitySet, StateVector, SystemDefinition};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeplerState {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
}

impl KeplerState {
    pub fn to_state(self) -> Result<StateVector> {
        StateVector::new(vec![self.x1, self.x2, self.y1, self.y2])
    }

    pub fn from_state(x: &StateVector) -> Result<Self> {
        crate::system::check_dim(4, x.dim())?;
        Ok(Self {
            x1: x[0],
            x2: x[1],
            y1: x[2],
            y2: x[3],
        })
    }
}

/// Parameters of the circular-motion set `{∇K = 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularSetParams {
    pub a: f64,
    pub theta: f64,
}

impl CircularSetParams {
    pub fn sample(self) -> Result<KeplerState> {
        circular_sample(self.a, self.theta)
    }
}

pub fn kepler_field() -> SystemDefinition {
    SystemDefinition::new(4, "kepler", |s| {
        let r2 = s[0] * s[0] + s[1] * s[1];
        let r3 = r2 * r2.sqrt();
        vec![s[2], s[3], -s[0] / r3, -s[1] / r3]
    })
    .expect("fixed dimension")
}

/// `H = ½|y|² − 1/|x|`.
pub fn hamiltonian() -> ConservedQuantitySet {
    ConservedQuantitySet::scalar(4, "H", |s| {
        0.5 * (s[2] * s[2] + s[3] * s[3]) - 1.0 / (s[0] * s[0] + s[1] * s[1]).sqrt()
    })
    .expect("fixed dimension")
    .with_gradient(|s| {
        let r2 = s[0] * s[0] + s[1] * s[1];
        let r3 = r2 * r2.sqrt();
        vec![s[0] / r3, s[1] / r3, s[2], s[3]]
    })
}

/// `A = x₁y₂ − x₂y₁`.
pub fn angular_momentum() -> ConservedQuantitySet {
    ConservedQuantitySet::scalar(4, "A", |s| s[0] * s[3] - s[1] * s[2])
        .expect("fixed dimension")
        .with_gradient(|s| vec![s[3], -s[2], -s[1], s[0]])
        .with_partials(|s, alpha| {
            let v = match alpha {
                [j] => [s[3], -s[2], -s[1], s[0]][*j],
                [0, 3] => 1.0,
                [1, 2] => -1.0,
                _ => 0.0,
            };
            vec![v]
        })
}

fn check_a(a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("circular-set parameter a must be positive, got {a}")))
    }
}

/// `K = H + A/a³`.
pub fn k_quantity(a: f64) -> Result<ConservedQuantitySet> {
    check_a(a)?;
    let c = 1.0 / (a * a * a);
    let (h, am) = (hamiltonian(), angular_momentum());
    let (hv, av) = (h.clone(), am.clone());
    Ok(ConservedQuantitySet::scalar(4, "K", move |s| {
        hv.value_raw(s)[0] + c * av.value_raw(s)[0]
    })?
    .with_gradient(move |s| {
        let gh = h.analytic_gradient_raw(s).expect("analytic");
        let ga = am.analytic_gradient_raw(s).expect("analytic");
        gh.iter().zip(&ga).map(|(p, q)| p + c * q).collect()
    }))
}

/// `(H, A, K)`.
pub fn kepler_quantities(a: f64) -> Result<ConservedQuantitySet> {
    ConservedQuantitySet::stack(&[hamiltonian(), angular_momentum(), k_quantity(a)?])
}

/// Driving quantity of the linear pair system, `G = −A/a³`.
pub fn linear_driver(a: f64) -> Result<ConservedQuantitySet> {
    check_a(a)?;
    angular_momentum()
        .scaled(-1.0 / (a * a * a))
        .relabeled(vec!["G".into()])
}

/// Point of the circular set: `x = a²(sin θ, cos θ)`, `y = (cos θ, −sin θ)/a`.
pub fn circular_sample(a: f64, theta: f64) -> Result<KeplerState> {
    check_a(a)?;
    let (s, c) = theta.sin_cos();
    Ok(KeplerState {
        x1: a * a * s,
        x2: a * a * c,
        y1: c / a,
        y2: -s / a,
    })
}

/// Period of the circular orbit through `circular_sample(a, ·)`.
pub fn circular_period(a: f64) -> f64 {
    2.0 * std::f64::consts::PI * a * a * a
}

/// Hamiltonian field of `−A/a³` for the standard symplectic form.
pub fn linear_pair_field(a: f64) -> Result<SystemDefinition> {
    check_a(a)?;
    let c = 1.0 / (a * a * a);
    SystemDefinition::new(4, format!("kepler-linear-pair(a={a})"), move |s| {
        vec![c * s[1], -c * s[0], c * s[3], -c * s[2]]
    })
}
