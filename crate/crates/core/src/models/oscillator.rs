//! Planar harmonic oscillator `ẋ₁ = x₂, ẋ₂ = −x₁` and radial quantities.

use crate::system::{ConservedQuantitySet, SystemDefinition};

pub fn harmonic_field() -> SystemDefinition {
    SystemDefinition::new(2, "harmonic-oscillator", |x| vec![x[1], -x[0]])
        .expect("fixed dimension")
}

/// `x₁² + x₂²`.
pub fn radius_squared() -> ConservedQuantitySet {
    ConservedQuantitySet::scalar(2, "R2", |x| x[0] * x[0] + x[1] * x[1])
        .expect("fixed dimension")
        .with_gradient(|x| vec![2.0 * x[0], 2.0 * x[1]])
        .with_partials(|x, alpha| {
            let v = match alpha {
                [i] => 2.0 * x[*i],
                [i, j] if i == j => 2.0,
                _ => 0.0,
            };
            vec![v]
        })
}

/// `(x₁² + x₂² − 1)^p`; every partial of order below `p` vanishes on the
/// unit circle.
pub fn circle_power(p: i32) -> ConservedQuantitySet {
    assert!(p >= 1, "exponent must be positive");
    ConservedQuantitySet::scalar(2, format!("CIRCLE{p}"), move |x| {
        (x[0] * x[0] + x[1] * x[1] - 1.0).powi(p)
    })
    .expect("fixed dimension")
    .with_gradient(move |x| {
        let g = x[0] * x[0] + x[1] * x[1] - 1.0;
        let c = p as f64 * g.powi(p - 1) * 2.0;
        vec![c * x[0], c * x[1]]
    })
}
