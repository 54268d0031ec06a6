//! Gradients, Jacobians and higher partial derivatives.
//!
//! Analytic providers attached to a [`ConservedQuantitySet`] are used when
//! present; otherwise central finite differences are taken with per
//! coordinate step `h_j = s · max(1, |x_j|)`, where `s = ε^(1/(l+2))` for
//! derivatives of order `l` (so `ε^(1/3)` for gradients).

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{usage, Error, Result};
use crate::system::{check_dim, ConservedQuantitySet, MultiIndex, StateVector};

/// Deepest derivative order available through nested finite differences.
pub const FD_ORDER_CAP: usize = 4;

/// Deepest order accepted at all, analytic providers included.
pub const MAX_ORDER: usize = 8;

pub fn default_step_scale() -> f64 {
    f64::EPSILON.cbrt()
}

/// Step scale for finite-difference derivatives of the given order.
pub fn step_scale_for_order(order: usize) -> f64 {
    f64::EPSILON.powf(1.0 / (order as f64 + 2.0))
}

/// `k × n` matrix of first partials, row `i` = `∇F_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl JacobianMatrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(usage("jacobian must have positive shape"));
        }
        check_dim(rows * cols, data.len())?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: "jacobian entry".into(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

fn fd_step(x_j: f64, scale: f64) -> f64 {
    let h = scale * x_j.abs().max(1.0);
    // representable step
    (x_j + h) - x_j
}

/// Central-difference gradient of a scalar function.
pub fn gradient(
    f: &dyn Fn(&[f64]) -> f64,
    x: &StateVector,
    step_scale: Option<f64>,
) -> Result<Vec<f64>> {
    let scale = step_scale.unwrap_or_else(default_step_scale);
    let mut probe = x.to_vec();
    (0..x.dim())
        .map(|j| {
            let h = fd_step(x[j], scale);
            probe[j] = x[j] + h;
            let fp = f(&probe);
            probe[j] = x[j] - h;
            let fm = f(&probe);
            probe[j] = x[j];
            let d = (fp - fm) / (2.0 * h);
            if d.is_finite() {
                Ok(d)
            } else {
                Err(Error::NonFinite {
                    index: j,
                    context: "finite-difference gradient coordinate".into(),
                })
            }
        })
        .collect()
}

/// Jacobian of a quantity, analytic when a provider is attached.
pub fn jacobian(quantity: &ConservedQuantitySet, x: &StateVector) -> Result<JacobianMatrix> {
    check_dim(quantity.dim(), x.dim())?;
    match quantity.analytic_gradient_raw(x) {
        Some(data) => JacobianMatrix::from_row_major(quantity.k(), quantity.dim(), data),
        None => jacobian_fd(quantity, x, None),
    }
}

/// Finite-difference Jacobian, ignoring any analytic provider.
pub fn jacobian_fd(
    quantity: &ConservedQuantitySet,
    x: &StateVector,
    step_scale: Option<f64>,
) -> Result<JacobianMatrix> {
    check_dim(quantity.dim(), x.dim())?;
    let (k, n) = (quantity.k(), quantity.dim());
    let scale = step_scale.unwrap_or_else(default_step_scale);
    let mut data = vec![0.0; k * n];
    let mut probe = x.to_vec();
    for j in 0..n {
        let h = fd_step(x[j], scale);
        probe[j] = x[j] + h;
        let fp = quantity.value_raw(&probe);
        probe[j] = x[j] - h;
        let fm = quantity.value_raw(&probe);
        probe[j] = x[j];
        check_dim(k, fp.len())?;
        for i in 0..k {
            let d = (fp[i] - fm[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    index: j,
                    context: format!("finite-difference jacobian row {i}"),
                });
            }
            data[i * n + j] = d;
        }
    }
    JacobianMatrix::from_row_major(k, n, data)
}

/// All partials `∂^α F_i(x)` with `1 ≤ |α| ≤ order`, one entry per sorted
/// multi-index.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTensor {
    dim: usize,
    components: usize,
    order: usize,
    entries: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl PartialTensor {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// `∂^α F_i(x)` for any ordering of `α`.
    pub fn get(&self, component: usize, alpha: &MultiIndex) -> Option<f64> {
        self.get_raw(component, alpha.entries())
    }

    pub fn get_raw(&self, component: usize, alpha: &[usize]) -> Option<f64> {
        let mut key = alpha.to_vec();
        key.sort_unstable();
        self.entries.get(&key).and_then(|v| v.get(component).copied())
    }

    /// Sorted multi-index and the `k` component values.
    pub fn iter(&self) -> impl Iterator<Item = (&[usize], &[f64])> {
        self.entries.iter().map(|(a, v)| (a.as_slice(), v.as_slice()))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_of_order(&self, l: usize) -> f64 {
        self.entries
            .iter()
            .filter(|(a, _)| a.len() == l)
            .flat_map(|(_, v)| v)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Nondecreasing multi-indices of length `order` over `0..dim`.
pub fn sorted_multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(order);
    fn rec(dim: usize, order: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == order {
            out.push(cur.clone());
            return;
        }
        for j in start..dim {
            cur.push(j);
            rec(dim, order, j, cur, out);
            cur.pop();
        }
    }
    rec(dim, order, 0, &mut cur, &mut out);
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Mixed partial by a tensor product of central difference stencils: for a
/// coordinate differentiated `c` times the stencil is
/// `Σ_m (−1)^m C(c,m) f(x + (c/2 − m) h)` divided by `h^c`.
fn fd_partial(quantity: &ConservedQuantitySet, x: &[f64], alpha: &[usize]) -> Result<Vec<f64>> {
    let scale = step_scale_for_order(alpha.len());
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &j in alpha {
        match counts.last_mut() {
            Some((jj, c)) if *jj == j => *c += 1,
            _ => counts.push((j, 1)),
        }
    }
    let steps: Vec<f64> = counts.iter().map(|&(j, _)| fd_step(x[j], scale)).collect();
    let k = quantity.k();
    let mut acc = vec![0.0; k];
    let mut probe = x.to_vec();
    // odometer over stencil positions m_d ∈ 0..=c_d
    let mut m = vec![0usize; counts.len()];
    loop {
        let mut weight = 1.0;
        for (d, &(j, c)) in counts.iter().enumerate() {
            let sign = if m[d] % 2 == 0 { 1.0 } else { -1.0 };
            weight *= sign * binomial(c, m[d]);
            probe[j] = x[j] + (c as f64 / 2.0 - m[d] as f64) * steps[d];
        }
        let v = quantity.value_raw(&probe);
        check_dim(k, v.len())?;
        for i in 0..k {
            acc[i] += weight * v[i];
        }
        let mut d = 0;
        loop {
            if d == m.len() {
                let denom: f64 = counts
                    .iter()
                    .zip(&steps)
                    .map(|(&(_, c), h)| h.powi(c as i32))
                    .product();
                let out: Vec<f64> = acc.iter().map(|a| a / denom).collect();
                if let Some(i) = out.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        index: counts[0].0,
                        context: format!("finite-difference partial {alpha:?} of component {i}"),
                    });
                }
                return Ok(out);
            }
            m[d] += 1;
            if m[d] <= counts[d].1 {
                break;
            }
            m[d] = 0;
            d += 1;
        }
    }
}

/// Every partial of order `1..=order`, analytic where providers exist.
pub fn partial_tensor(
    quantity: &ConservedQuantitySet,
    x: &StateVector,
    order: usize,
) -> Result<PartialTensor> {
    check_dim(quantity.dim(), x.dim())?;
    validate_order(quantity, order)?;
    let n = quantity.dim();
    let mut entries = BTreeMap::new();
    for l in 1..=order {
        for alpha in sorted_multi_indices(n, l) {
            let v = match quantity.analytic_partial_raw(x, &alpha) {
                Some(v) => v,
                None => fd_partial(quantity, x, &alpha)?,
            };
            check_dim(quantity.k(), v.len())?;
            entries.insert(alpha, v);
        }
    }
    Ok(PartialTensor {
        dim: n,
        components: quantity.k(),
        order,
        entries,
    })
}

pub(crate) fn validate_order(quantity: &ConservedQuantitySet, order: usize) -> Result<()> {
    if order == 0 {
        return Err(usage("derivative order must be at least 1"));
    }
    if order > quantity.smoothness() {
        return Err(usage(format!(
            "order {order} exceeds the quantity's smoothness order {}",
            quantity.smoothness()
        )));
    }
    let cap = if quantity.has_analytic_partials() {
        MAX_ORDER
    } else {
        FD_ORDER_CAP
    };
    if order > cap {
        return Err(usage(format!(
            "order {order} exceeds the cap {cap} (finite differences stop at {FD_ORDER_CAP}; \
             higher orders need analytic partials)"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{kepler, oscillator, toda};

    fn sv(v: &[f64]) -> StateVector {
        StateVector::from_slice(v).unwrap()
    }

    #[test]
    fn gradient_of_squared_norm() {
        let g = gradient(&|x: &[f64]| x[0] * x[0] + x[1] * x[1], &sv(&[1.0, 2.0]), None).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] - 4.0).abs() < 1e-9, "{g:?}");
    }

    #[test]
    fn gradient_reports_non_finite_coordinate() {
        let r = gradient(&|x: &[f64]| if x[1] < 0.0 { f64::NAN } else { x[1] }, &sv(&[1.0, 0.0]), None);
        assert!(matches!(r, Err(Error::NonFinite { index: 1, .. })));
    }

    #[test]
    fn kepler_energy_gradient_matches_hand_formula() {
        // x/|x|^3 and y
        let h = kepler::hamiltonian();
        let x = sv(&[1.0, 0.0, 0.0, 1.0]);
        let g = gradient(&|s: &[f64]| h.value_raw(s)[0], &x, None).unwrap();
        for (a, b) in g.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-7, "{g:?}");
        }
    }

    #[test]
    fn first_henon_gradient_is_constant_indicator() {
        let q = toda::henon_closed_form(4, 1).unwrap();
        let x = sv(&[0.3, -1.2, 2.0, 0.5, 0.1, 0.2, -0.7, 1.9]);
        let j = jacobian(&q, &x).unwrap();
        assert_eq!(j.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let jf = jacobian_fd(&q, &x, None).unwrap();
        assert!(jf.row(0).iter().zip(j.row(0)).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn jacobian_of_i12_at_all_ones() {
        let q = toda::periodic_quantity(3, &[1, 2]).unwrap();
        let j = jacobian(&q, &sv(&[1.0; 6])).unwrap();
        assert_eq!(j.row(0), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(j.row(1), &[-1.0, -1.0, -1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn jacobian_of_f12_nonperiodic() {
        let q = toda::nonperiodic_quantity(3, &[1, 2]).unwrap();
        let j = jacobian(&q, &sv(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        assert_eq!(j.row(0), &[0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(j.row(1), &[1.0, 1.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn constant_quantity_has_zero_jacobian() {
        let q = ConservedQuantitySet::constant(3, vec![2.0, -1.0]).unwrap();
        let x = sv(&[0.4, 5.0, -3.0]);
        assert_eq!(jacobian(&q, &x).unwrap(), JacobianMatrix::zeros(2, 3));
        assert_eq!(jacobian_fd(&q, &x, None).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn mixed_second_partial_of_monomial() {
        let q = ConservedQuantitySet::scalar(2, "x1^2 x2", |x| x[0] * x[0] * x[1]).unwrap();
        let t = partial_tensor(&q, &sv(&[1.0, 1.0]), 2).unwrap();
        assert!((t.get_raw(0, &[0, 1]).unwrap() - 2.0).abs() < 1e-5);
        assert!((t.get_raw(0, &[1, 0]).unwrap() - 2.0).abs() < 1e-5);
        assert!((t.get_raw(0, &[0, 0]).unwrap() - 2.0).abs() < 1e-5);
        assert!(t.get_raw(0, &[1, 1]).unwrap().abs() < 1e-5);
    }

    #[test]
    fn cubed_circle_vanishes_to_second_order_on_circle() {
        let q = oscillator::circle_power(3).without_analytic();
        let t = partial_tensor(&q, &sv(&[1.0, 0.0]), 2).unwrap();
        assert!(t.max_abs() < 1e-4, "{t:?}");
    }

    #[test]
    fn third_partial_of_cube_is_six() {
        let q = ConservedQuantitySet::scalar(2, "x1^3", |x| x[0].powi(3)).unwrap();
        let t = partial_tensor(&q, &sv(&[0.0, 0.0]), 3).unwrap();
        assert!((t.get_raw(0, &[0, 0, 0]).unwrap() - 6.0).abs() < 1e-4);
        assert!(t.max_abs_of_order(2) < 1e-6);
    }

    #[test]
    fn fourth_order_stencil_on_quartic() {
        let q = ConservedQuantitySet::scalar(2, "x1^2 x2^2", |x| (x[0] * x[1]).powi(2)).unwrap();
        let t = partial_tensor(&q, &sv(&[0.5, -0.3]), 4).unwrap();
        assert!((t.get_raw(0, &[0, 0, 1, 1]).unwrap() - 4.0).abs() < 1e-3);
        assert!(t.get_raw(0, &[0, 0, 0, 0]).unwrap().abs() < 1e-3);
    }

    #[test]
    fn linear_quantity_second_order_analytic_and_fd() {
        let q = toda::henon_closed_form(4, 1).unwrap();
        let x = sv(&[0.3, 0.2, 0.9, 1.1, -0.4, 0.6, 0.7, 0.1]);
        let t = partial_tensor(&q, &x, 2).unwrap();
        assert_eq!(t.max_abs_of_order(2), 0.0);
        let tf = partial_tensor(&q.clone().without_analytic(), &x, 2).unwrap();
        assert!(tf.max_abs_of_order(2) < 1e-6);
    }

    #[test]
    fn order_guards() {
        let q = ConservedQuantitySet::scalar(2, "f", |x| x[0]).unwrap();
        let x = sv(&[0.0, 0.0]);
        assert!(matches!(partial_tensor(&q, &x, 5), Err(Error::Usage(_))));
        assert!(matches!(partial_tensor(&q, &x, 0), Err(Error::Usage(_))));
        let q1 = q.with_smoothness(1);
        assert!(matches!(partial_tensor(&q1, &x, 2), Err(Error::Usage(_))));
    }

    #[test]
    fn sorted_index_counts() {
        // C(n + l - 1, l)
        assert_eq!(sorted_multi_indices(4, 2).len(), 10);
        assert_eq!(sorted_multi_indices(3, 3).len(), 10);
        assert_eq!(sorted_multi_indices(8, 4).len(), 330);
    }

    #[test]
    fn richardson_halving_shrinks_error_quadratically() {
        let f = |x: &[f64]| (x[0] * 1.3).sin() * x[1].exp();
        let x = sv(&[0.4, -0.2]);
        let exact = [1.3 * (0.52_f64).cos() * (-0.2_f64).exp(), (0.52_f64).sin() * (-0.2_f64).exp()];
        let s = 1e-2;
        let g1 = gradient(&f, &x, Some(s)).unwrap();
        let g2 = gradient(&f, &x, Some(s / 2.0)).unwrap();
        for j in 0..2 {
            let e1 = (g1[j] - exact[j]).abs();
            let e2 = (g2[j] - exact[j]).abs();
            assert!(e2 < e1 / 3.0, "coordinate {j}: {e1} -> {e2}");
            // truncation bound h^2/6 * max|f'''| with |f'''| <= 1.3^3 e^0
            assert!((g1[j] - g2[j]).abs() < s * s / 6.0 * 2.2 * 1.3_f64.powi(3));
        }
    }
}
