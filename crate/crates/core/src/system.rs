//! States, vector fields and vector-valued conserved quantities.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;
use std::sync::Arc;

use crate::differentiate;
use crate::error::{usage, Error, Result};

/// Map from a state slice to a vector of reals.
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Analytic partial derivative provider: given a state and a sorted, 0-based
/// multi-index, returns `∂^α F_i(x)` for every component `i`.
pub type PartialFn = Arc<dyn Fn(&[f64], &[usize]) -> Vec<f64> + Send + Sync>;

/// Smoothness order used for quantities that are C^∞ (polynomials, rational
/// functions away from their poles).
pub const SMOOTH: usize = usize::MAX;

/// A point in ℝⁿ with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(usage("state vector must have at least one component"));
        }
        if let Some(index) = components.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: "state vector".into(),
            });
        }
        Ok(Self(components))
    }

    pub fn from_slice(components: &[f64]) -> Result<Self> {
        Self::new(components.to_vec())
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "state dimension must be positive");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `max(1, ‖x‖)`, the scale used by absolute membership thresholds.
    pub fn scale(&self) -> f64 {
        self.norm().max(1.0)
    }

    /// Largest componentwise absolute difference.
    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for StateVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Flat array of decimal numbers with 17 significant digits, e.g.
/// `[1.0000000000000000e0, -2.5000000000000000e-1]`.
impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.16e}")?;
        }
        write!(f, "]")
    }
}

impl FromStr for StateVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let body = s
            .trim()
            .strip_prefix('[')
            .and_then(|t| t.strip_suffix(']'))
            .ok_or_else(|| usage(format!("state vector must be a bracketed list: {s:?}")))?;
        let values = body
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| usage(format!("bad number {tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// An autonomous system `ẋ = f(x)` on ℝⁿ.
#[derive(Clone)]
pub struct SystemDefinition {
    dim: usize,
    label: String,
    field: VectorFn,
}

impl fmt::Debug for SystemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDefinition")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl SystemDefinition {
    pub fn new<F>(dim: usize, label: impl Into<String>, field: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(usage("system dimension must be positive"));
        }
        Ok(Self {
            dim,
            label: label.into(),
            field: Arc::new(field),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Raw right-hand side, no dimension or finiteness checks.
    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        (self.field)(x)
    }

    pub fn evaluate(&self, x: &StateVector) -> Result<StateVector> {
        evaluate_field(self, x)
    }

    /// Field with the given label, same right-hand side.
    pub fn relabeled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Evaluates `f(x)`, rejecting dimension mismatches and non-finite output.
pub fn evaluate_field(system: &SystemDefinition, x: &StateVector) -> Result<StateVector> {
    check_dim(system.dim, x.dim())?;
    let out = system.rhs(x);
    check_dim(system.dim, out.len())?;
    if let Some(index) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index,
            context: format!("field of {}", system.label),
        });
    }
    Ok(StateVector(out))
}

/// A multi-index `α = (α₁,…,α_l)` of coordinate positions (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(entries: Vec<usize>, dim: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(usage("multi-index must have order at least 1"));
        }
        if let Some(&bad) = entries.iter().find(|&&j| j >= dim) {
            return Err(usage(format!(
                "multi-index entry {bad} out of range for dimension {dim}"
            )));
        }
        Ok(Self(entries))
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    /// Sorted representative; mixed partials of C^q functions do not depend
    /// on the order of differentiation.
    pub fn canonical(&self) -> MultiIndex {
        let mut e = self.0.clone();
        e.sort_unstable();
        MultiIndex(e)
    }
}

/// A vector-valued conserved quantity `F: ℝⁿ → ℝᵏ`.
#[derive(Clone)]
pub struct ConservedQuantitySet {
    dim: usize,
    labels: Vec<String>,
    value: VectorFn,
    gradient: Option<VectorFn>,
    partials: Option<PartialFn>,
    smoothness: usize,
}

impl fmt::Debug for ConservedQuantitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConservedQuantitySet")
            .field("dim", &self.dim)
            .field("labels", &self.labels)
            .field("analytic_gradient", &self.gradient.is_some())
            .field("analytic_partials", &self.partials.is_some())
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl ConservedQuantitySet {
    /// `value` must return `labels.len()` components.
    pub fn new<F>(dim: usize, labels: Vec<String>, value: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(usage("quantity dimension must be positive"));
        }
        if labels.is_empty() {
            return Err(usage("quantity needs at least one component"));
        }
        if labels.len() > dim {
            return Err(usage(format!(
                "quantity has {} components but the state dimension is {dim}",
                labels.len()
            )));
        }
        Ok(Self {
            dim,
            labels,
            value: Arc::new(value),
            gradient: None,
            partials: None,
            smoothness: SMOOTH,
        })
    }

    pub fn scalar<F>(dim: usize, label: impl Into<String>, value: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(dim, vec![label.into()], move |x| vec![value(x)])
    }

    /// Row-major `k × n` analytic Jacobian.
    pub fn with_gradient<F>(mut self, gradient: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_partials<F>(mut self, partials: F) -> Self
    where
        F: Fn(&[f64], &[usize]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.partials = Some(Arc::new(partials));
        self
    }

    pub fn with_smoothness(mut self, q: usize) -> Self {
        self.smoothness = q;
        self
    }

    /// Drops the analytic gradient and partials so every consumer goes
    /// through finite differences.
    pub fn without_analytic(mut self) -> Self {
        self.gradient = None;
        self.partials = None;
        self
    }

    /// `F ≡ c`, with exact zero derivatives.
    pub fn constant(dim: usize, values: Vec<f64>) -> Result<Self> {
        let k = values.len();
        let labels = (1..=k).map(|i| format!("C{i}")).collect();
        Ok(Self::new(dim, labels, move |_| values.clone())?
            .with_gradient(move |_| vec![0.0; k * dim])
            .with_partials(move |_, _| vec![0.0; k]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn smoothness(&self) -> usize {
        self.smoothness
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn has_analytic_partials(&self) -> bool {
        self.partials.is_some()
    }

    pub fn value_raw(&self, x: &[f64]) -> Vec<f64> {
        (self.value)(x)
    }

    pub fn value(&self, x: &StateVector) -> Result<Vec<f64>> {
        check_dim(self.dim, x.dim())?;
        let v = self.value_raw(x);
        check_dim(self.k(), v.len())?;
        if let Some(index) = v.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: format!("value of {}", self.labels.join(",")),
            });
        }
        Ok(v)
    }

    pub(crate) fn analytic_gradient_raw(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(x))
    }

    pub(crate) fn analytic_partial_raw(&self, x: &[f64], alpha: &[usize]) -> Option<Vec<f64>> {
        if alpha.len() == 1 {
            if let Some(g) = &self.gradient {
                let n = self.dim;
                let j = alpha[0];
                return Some(g(x).chunks(n).map(|row| row[j]).collect());
            }
        }
        self.partials.as_ref().map(|p| p(x, alpha))
    }

    /// Concatenates the components of several quantities on the same space.
    pub fn stack(parts: &[ConservedQuantitySet]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| usage("cannot stack an empty list of quantities"))?;
        let dim = first.dim;
        for p in parts {
            check_dim(dim, p.dim)?;
        }
        let labels: Vec<String> = parts.iter().flat_map(|p| p.labels.clone()).collect();
        let values: Vec<VectorFn> = parts.iter().map(|p| p.value.clone()).collect();
        let mut out = Self::new(dim, labels, move |x| {
            values.iter().flat_map(|v| v(x)).collect()
        })?
        .with_smoothness(parts.iter().map(|p| p.smoothness).min().unwrap_or(SMOOTH));
        if parts.iter().all(|p| p.gradient.is_some()) {
            let grads: Vec<VectorFn> = parts.iter().filter_map(|p| p.gradient.clone()).collect();
            out = out.with_gradient(move |x| grads.iter().flat_map(|g| g(x)).collect());
        }
        if parts.iter().all(|p| p.partials.is_some()) {
            let providers: Vec<ConservedQuantitySet> = parts.to_vec();
            out = out.with_partials(move |x, alpha| {
                providers
                    .iter()
                    .flat_map(|p| p.analytic_partial_raw(x, alpha).unwrap_or_default())
                    .collect()
            });
        }
        Ok(out)
    }

    /// Sub-quantity made of the listed components, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let k = self.k();
        if indices.is_empty() {
            return Err(usage("selection must name at least one component"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(usage(format!("component {bad} out of range (k = {k})")));
        }
        let idx = indices.to_vec();
        let labels = idx.iter().map(|&i| self.labels[i].clone()).collect();
        let value = self.value.clone();
        let pick = idx.clone();
        let mut out = Self::new(self.dim, labels, move |x| {
            let v = value(x);
            pick.iter().map(|&i| v[i]).collect()
        })?
        .with_smoothness(self.smoothness);
        let n = self.dim;
        if let Some(g) = self.gradient.clone() {
            let pick = idx.clone();
            out = out.with_gradient(move |x| {
                let full = g(x);
                pick.iter()
                    .flat_map(|&i| full[i * n..(i + 1) * n].to_vec())
                    .collect()
            });
        }
        if let Some(p) = self.partials.clone() {
            out = out.with_partials(move |x, alpha| {
                let full = p(x, alpha);
                idx.iter().map(|&i| full[i]).collect()
            });
        }
        Ok(out)
    }

    /// Componentwise `F − G`.
    pub fn difference(&self, other: &ConservedQuantitySet) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        check_dim(self.k(), other.k())?;
        let labels = self
            .labels
            .iter()
            .zip(&other.labels)
            .map(|(a, b)| format!("({a})-({b})"))
            .collect();
        let (fa, fb) = (self.value.clone(), other.value.clone());
        let mut out = Self::new(self.dim, labels, move |x| sub(fa(x), &fb(x)))?
            .with_smoothness(self.smoothness.min(other.smoothness));
        if let (Some(ga), Some(gb)) = (self.gradient.clone(), other.gradient.clone()) {
            out = out.with_gradient(move |x| sub(ga(x), &gb(x)));
        }
        if self.has_analytic_partials() && other.has_analytic_partials() {
            let (a, b) = (self.clone(), other.clone());
            out = out.with_partials(move |x, alpha| {
                sub(
                    a.analytic_partial_raw(x, alpha).unwrap_or_default(),
                    &b.analytic_partial_raw(x, alpha).unwrap_or_default(),
                )
            });
        }
        Ok(out)
    }

    /// `c · F`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        let v = self.value.clone();
        out.value = Arc::new(move |x| v(x).into_iter().map(|e| c * e).collect());
        if let Some(g) = self.gradient.clone() {
            out.gradient = Some(Arc::new(move |x| g(x).into_iter().map(|e| c * e).collect()));
        }
        if let Some(p) = self.partials.clone() {
            out.partials = Some(Arc::new(move |x, a| {
                p(x, a).into_iter().map(|e| c * e).collect()
            }));
        }
        out.labels = self.labels.iter().map(|l| format!("{c}*{l}")).collect();
        out
    }

    pub fn relabeled(mut self, labels: Vec<String>) -> Result<Self> {
        check_dim(self.k(), labels.len())?;
        self.labels = labels;
        Ok(self)
    }
}

fn sub(mut a: Vec<f64>, b: &[f64]) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x -= y;
    }
    a
}

/// `∇F_i(x)·f(x)` for every component; zero certifies pointwise
/// conservation.
pub fn conservation_residual(
    quantity: &ConservedQuantitySet,
    system: &SystemDefinition,
    x: &StateVector,
) -> Result<Vec<f64>> {
    check_dim(system.dim(), quantity.dim())?;
    let f = evaluate_field(system, x)?;
    let jac = differentiate::jacobian(quantity, x)?;
    Ok((0..jac.rows())
        .map(|i| jac.row(i).iter().zip(f.iter()).map(|(g, v)| g * v).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::oscillator;

    #[test]
    fn state_rejects_non_finite_and_empty() {
        assert!(matches!(
            StateVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(StateVector::new(vec![]).is_err());
    }

    #[test]
    fn state_text_round_trip_is_exact() {
        let x = StateVector::new(vec![0.1, -1.0 / 3.0, 1e-300, 6.02e23]).unwrap();
        let back: StateVector = x.to_string().parse().unwrap();
        assert_eq!(x, back);
        assert!("1, 2".parse::<StateVector>().is_err());
    }

    #[test]
    fn harmonic_field_at_unit_point() {
        let sys = oscillator::harmonic_field();
        let x = StateVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(evaluate_field(&sys, &x).unwrap().as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn field_dimension_mismatch_is_usage_error() {
        let sys = oscillator::harmonic_field();
        let x = StateVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            evaluate_field(&sys, &x),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn non_finite_field_names_component() {
        let sys = SystemDefinition::new(2, "bad", |x| vec![x[0], 1.0 / x[1]]).unwrap();
        let x = StateVector::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            evaluate_field(&sys, &x),
            Err(Error::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn residual_of_radius_is_zero_on_oscillator() {
        let sys = oscillator::harmonic_field();
        let q = oscillator::radius_squared();
        let x = StateVector::new(vec![0.3, -0.8]).unwrap();
        assert_eq!(conservation_residual(&q, &sys, &x).unwrap(), vec![0.0]);
    }

    #[test]
    fn residual_of_coordinate_probe_is_velocity() {
        let sys = oscillator::harmonic_field();
        let q = ConservedQuantitySet::scalar(2, "x1", |x| x[0])
            .unwrap()
            .with_gradient(|_| vec![1.0, 0.0]);
        let x = StateVector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(conservation_residual(&q, &sys, &x).unwrap(), vec![1.0]);
    }

    #[test]
    fn quantity_rejects_k_above_n() {
        let r = ConservedQuantitySet::new(1, vec!["a".into(), "b".into()], |x| vec![x[0], x[0]]);
        assert!(r.is_err());
    }

    #[test]
    fn select_and_difference_keep_gradients() {
        let a = ConservedQuantitySet::scalar(2, "a", |x| x[0] * x[1])
            .unwrap()
            .with_gradient(|x| vec![x[1], x[0]]);
        let b = ConservedQuantitySet::scalar(2, "b", |x| x[0])
            .unwrap()
            .with_gradient(|_| vec![1.0, 0.0]);
        let ab = ConservedQuantitySet::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.k(), 2);
        let ba = ab.select(&[1, 0]).unwrap();
        assert_eq!(ba.value_raw(&[2.0, 3.0]), vec![2.0, 6.0]);
        assert_eq!(
            ba.analytic_gradient_raw(&[2.0, 3.0]).unwrap(),
            vec![1.0, 0.0, 3.0, 2.0]
        );
        let d = a.difference(&b).unwrap();
        assert_eq!(d.value_raw(&[2.0, 3.0]), vec![4.0]);
        assert_eq!(d.analytic_gradient_raw(&[2.0, 3.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn multi_index_canonical_sorts() {
        let a = MultiIndex::new(vec![2, 0, 1, 0], 3).unwrap();
        assert_eq!(a.canonical().entries(), &[0, 0, 1, 2]);
        assert!(MultiIndex::new(vec![3], 3).is_err());
        assert!(MultiIndex::new(vec![], 3).is_err());
    }
}
