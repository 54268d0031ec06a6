//! Gradient-driven systems `ẋ = f(x, Δ^r F(x))` and the coincidence of
//! their flows with `ẋ = f(x, Δ^r G(x))` from starts where the derivatives
//! of `F` and `G` agree and `F − G` is conserved.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::differentiate::{jacobian, partial_tensor, validate_order};
use crate::error::{usage, Error, Result};
use crate::integrate::{flow_adaptive, FlowOptions, Trajectory};
use crate::invariance::{Verdict, HYPOTHESIS_TOL};
use crate::system::{check_dim, conservation_residual, ConservedQuantitySet, StateVector, SystemDefinition, VectorFn};

pub const DEFAULT_DEVIATION_TOL: f64 = 1e-6;
pub const ANTISYMMETRY_TOL: f64 = 1e-12;

/// `Δ¹F(x), …, Δ^rF(x)`: block `l` holds `∂^α F_i` for every component `i`
/// and every ordered tuple `α ∈ {1..n}^l`, in lexicographic order of
/// `(i, α)`. Block `l` has length `k·n^l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    k: usize,
    n: usize,
    blocks: Vec<Vec<f64>>,
}

impl DerivativeStack {
    pub fn order(&self) -> usize {
        self.blocks.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Block of order `l` (1-based).
    pub fn block(&self, l: usize) -> &[f64] {
        &self.blocks[l - 1]
    }

    /// The row-major Jacobian.
    pub fn gradient(&self) -> &[f64] {
        &self.blocks[0]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }
}

pub fn assemble_derivative_stack(quantity: &ConservedQuantitySet, x: &StateVector, r: usize) -> Result<DerivativeStack> {
    validate_order(quantity, r)?;
    let (k, n) = (quantity.k(), quantity.dim());
    let mut blocks = vec![jacobian(quantity, x)?.as_row_major().to_vec()];
    if r >= 2 {
        let t = partial_tensor(quantity, x, r)?;
        for l in 2..=r {
            let len = n.pow(l as u32);
            let mut block = Vec::with_capacity(k * len);
            for i in 0..k {
                let mut alpha = vec![0usize; l];
                for _ in 0..len {
                    block.push(t.get_raw(i, &alpha).expect("every order up to r is present"));
                    // odometer over ordered tuples, last entry fastest
                    for d in (0..l).rev() {
                        alpha[d] += 1;
                        if alpha[d] < n {
                            break;
                        }
                        alpha[d] = 0;
                    }
                }
            }
            blocks.push(block);
        }
    }
    Ok(DerivativeStack { k, n, blocks })
}

fn check_pair(f: &ConservedQuantitySet, g: &ConservedQuantitySet) -> Result<()> {
    check_dim(f.dim(), g.dim())?;
    if f.k() != g.k() {
        return Err(usage(format!("paired quantities need equal k, got {} and {}", f.k(), g.k())));
    }
    Ok(())
}

/// `max |∂^α F_i(x) − ∂^α G_i(x)|` over `1 ≤ |α| ≤ r`. Values themselves
/// (order 0) are not compared.
pub fn e_residual(f: &ConservedQuantitySet, g: &ConservedQuantitySet, x: &StateVector, r: usize) -> Result<f64> {
    check_pair(f, g)?;
    let mut worst = jacobian(f, x)?
        .as_row_major()
        .iter()
        .zip(jacobian(g, x)?.as_row_major())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    if r >= 2 {
        let (tf, tg) = (partial_tensor(f, x, r)?, partial_tensor(g, x, r)?);
        for ((alpha, a), (_, b)) in tf.iter().zip(tg.iter()) {
            if alpha.len() < 2 {
                continue;
            }
            for (p, q) in a.iter().zip(b) {
                worst = worst.max((p - q).abs());
            }
        }
    } else if r == 0 {
        return Err(usage("derivative order must be at least 1"));
    }
    Ok(worst)
}

/// `f(x, Δ^r F(x))`.
pub type BaseMap = Arc<dyn Fn(&[f64], &DerivativeStack) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub struct GradientDrivenSystem {
    base: BaseMap,
    quantity: ConservedQuantitySet,
    order: usize,
    system: SystemDefinition,
}

impl fmt::Debug for GradientDrivenSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GradientDrivenSystem")
            .field("quantity", &self.quantity.labels())
            .field("order", &self.order)
            .field("system", &self.system)
            .finish()
    }
}

impl GradientDrivenSystem {
    pub fn new(base: BaseMap, quantity: ConservedQuantitySet, order: usize) -> Result<Self> {
        validate_order(&quantity, order)?;
        let n = quantity.dim();
        let (b, q) = (base.clone(), quantity.clone());
        let label = format!("driven-by({})", quantity.labels().join(","));
        let system = SystemDefinition::new(n, label, move |x| {
            // assembly failures surface as non-finite field values
            let sx = match StateVector::from_slice(x) {
                Ok(s) => s,
                Err(_) => return vec![f64::NAN; n],
            };
            match assemble_derivative_stack(&q, &sx, order) {
                Ok(stack) => b(x, &stack),
                Err(_) => vec![f64::NAN; n],
            }
        })?;
        Ok(Self {
            base,
            quantity,
            order,
            system,
        })
    }

    pub fn system(&self) -> &SystemDefinition {
        &self.system
    }

    pub fn quantity(&self) -> &ConservedQuantitySet {
        &self.quantity
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn base(&self) -> &BaseMap {
        &self.base
    }

    /// Same base map driven by another quantity.
    pub fn driven_by(&self, quantity: ConservedQuantitySet) -> Result<Self> {
        Self::new(self.base.clone(), quantity, self.order)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceReport {
    pub e_residual: f64,
    pub order: usize,
    /// Largest `|∇(F_i − G_i)·f_F|` over the samples of the `F` flow.
    pub difference_conservation_residual: f64,
    /// `(t, ‖Φ_t^F(x0) − Φ_t^G(x0)‖_max)` per sample.
    pub deviations: Vec<(f64, f64)>,
    pub max_deviation: f64,
    pub time_of_max: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// Which hypothesis failed, when one did.
    pub hypothesis: Option<String>,
    /// Integration failure of either flow, recorded only when a hypothesis
    /// already failed; otherwise the failure is returned as an error.
    pub integration_error: Option<String>,
    pub trajectory_f: Option<Trajectory>,
    pub trajectory_g: Option<Trajectory>,
}

impl CoincidenceReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Integrates `ẋ = f(x, Δ^rF)` and `ẋ = f(x, Δ^rG)` from `x0` and compares
/// them. Hypothesis failures give a `HypothesisError` verdict; the measured
/// deviation is still recorded as a diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn verify_coincidence(
    base: &BaseMap,
    f: &ConservedQuantitySet,
    g: &ConservedQuantitySet,
    x0: &StateVector,
    r: usize,
    t_end: f64,
    tol: f64,
    opts: &FlowOptions,
) -> Result<CoincidenceReport> {
    check_pair(f, g)?;
    check_dim(f.dim(), x0.dim())?;
    let sys_f = GradientDrivenSystem::new(base.clone(), f.clone(), r)?;
    let sys_g = GradientDrivenSystem::new(base.clone(), g.clone(), r)?;
    let hyp_tol = HYPOTHESIS_TOL * x0.scale();
    let e0 = e_residual(f, g, x0, r)?;
    let outside = (e0 > hyp_tol).then(|| {
        format!("start is outside E_{r}: derivatives of F and G differ by {e0:e} (limit {hyp_tol:e})")
    });

    let flows = flow_adaptive(sys_f.system(), x0, t_end, opts)
        .and_then(|a| flow_adaptive(sys_g.system(), x0, t_end, opts).map(|b| (a, b)));
    let (traj_f, traj_g) = match (flows, &outside) {
        (Ok(pair), _) => pair,
        (Err(e), Some(_)) => {
            return Ok(CoincidenceReport {
                e_residual: e0,
                order: r,
                difference_conservation_residual: f64::NAN,
                deviations: Vec::new(),
                max_deviation: f64::INFINITY,
                time_of_max: f64::NAN,
                tolerance: tol,
                verdict: Verdict::HypothesisError,
                hypothesis: outside,
                integration_error: Some(e.to_string()),
                trajectory_f: None,
                trajectory_g: None,
            })
        }
        (Err(e), None) => return Err(e),
    };

    let diff = f.difference(g)?;
    let mut cons = 0.0_f64;
    let mut cons_fail = None;
    for (t, x) in traj_f.iter() {
        let c = conservation_residual(&diff, sys_f.system(), x)?
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if c > HYPOTHESIS_TOL * x.scale() && cons_fail.is_none() {
            cons_fail = Some(format!("F - G is not conserved along the F flow: residual {c:e} at t = {t}"));
        }
        cons = cons.max(c);
    }

    let mut deviations = Vec::with_capacity(traj_f.len());
    let (mut max_dev, mut t_max) = (0.0_f64, 0.0);
    for ((t, a), b) in traj_f.iter().zip(traj_g.states()) {
        let d = a.max_abs_diff(b);
        if d > max_dev {
            max_dev = d;
            t_max = t;
        }
        deviations.push((t, d));
    }

    let hypothesis = outside.or(cons_fail);
    let verdict = match (&hypothesis, max_dev <= tol) {
        (Some(_), _) => Verdict::HypothesisError,
        (None, true) => Verdict::Pass,
        (None, false) => Verdict::Fail,
    };
    Ok(CoincidenceReport {
        e_residual: e0,
        order: r,
        difference_conservation_residual: cons,
        deviations,
        max_deviation: max_dev,
        time_of_max: t_max,
        tolerance: tol,
        verdict,
        hypothesis,
        integration_error: None,
        trajectory_f: Some(traj_f),
        trajectory_g: Some(traj_g),
    })
}

/// `x ↦ Π(x)`, an `n×n` matrix expected to be antisymmetric.
pub type PoissonStructure = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Constant `[[0, I], [−I, 0]]` on `ℝ^{2m}`.
pub fn symplectic_structure(dim: usize) -> Result<PoissonStructure> {
    if dim == 0 || dim % 2 != 0 {
        return Err(usage(format!("symplectic structure needs an even positive dimension, got {dim}")));
    }
    let m = dim / 2;
    let j = DMatrix::from_fn(dim, dim, |i, k| {
        if k == i + m {
            1.0
        } else if i == k + m {
            -1.0
        } else {
            0.0
        }
    });
    Ok(Arc::new(move |_| j.clone()))
}

/// Field `Π(x)∇F(x)` for scalar `F`. `Π` is checked for antisymmetry at the
/// probe states.
pub fn build_poisson_system(
    pi: PoissonStructure,
    quantity: ConservedQuantitySet,
    probes: &[StateVector],
) -> Result<GradientDrivenSystem> {
    if quantity.k() != 1 {
        return Err(usage(format!("a Poisson system is driven by a scalar quantity, got k = {}", quantity.k())));
    }
    if probes.is_empty() {
        return Err(usage("antisymmetry check needs at least one probe state"));
    }
    let n = quantity.dim();
    for p in probes {
        check_dim(n, p.dim())?;
        let m = pi(p);
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: m.nrows().max(m.ncols()),
            });
        }
        let asym = (&m + m.transpose()).amax();
        if asym > ANTISYMMETRY_TOL {
            return Err(usage(format!("structure matrix is not antisymmetric at {p}: |P + P^T| = {asym:e}")));
        }
    }
    let base: BaseMap = Arc::new(move |x, stack| {
        let g = nalgebra::DVector::from_column_slice(stack.gradient());
        (pi(x) * g).iter().copied().collect()
    });
    GradientDrivenSystem::new(base, quantity, 1)
}

/// `ẋ = h(x)` and `ẋ = h(x) + g(∇G(x))`. Requires `g(0) = 0`.
pub fn build_perturbed_pair(
    h: &SystemDefinition,
    g: VectorFn,
    big_g: &ConservedQuantitySet,
) -> Result<(SystemDefinition, SystemDefinition)> {
    let base = perturbed_base(h, g, big_g)?;
    let perturbed = GradientDrivenSystem::new(base, big_g.clone(), 1)?;
    let sys = perturbed.system().clone().relabeled(format!("{}+g(grad {})", h.label(), big_g.labels().join(",")));
    Ok((h.clone(), sys))
}

fn perturbed_base(
    h: &SystemDefinition,
    g: VectorFn,
    big_g: &ConservedQuantitySet,
) -> Result<BaseMap> {
    check_dim(h.dim(), big_g.dim())?;
    let width = big_g.k() * big_g.dim();
    let g0 = g(&vec![0.0; width]);
    check_dim(h.dim(), g0.len())?;
    let off = g0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if off > 0.0 {
        return Err(usage(format!("perturbation must vanish at zero gradient, |g(0)| = {off:e}")));
    }
    let h = h.clone();
    Ok(Arc::new(move |x, stack| {
        let hx = h.rhs(x);
        let gx = g(stack.gradient());
        hx.iter().zip(&gx).map(|(a, b)| a + b).collect()
    }))
}

/// Coincidence of the perturbed pair from `x0`, with `F ≡ 0` driving the
/// unperturbed system so that `E_1 = {∇G = 0}`.
pub fn verify_perturbed_coincidence(
    h: &SystemDefinition,
    g: VectorFn,
    big_g: &ConservedQuantitySet,
    x0: &StateVector,
    t_end: f64,
    tol: f64,
    opts: &FlowOptions,
) -> Result<CoincidenceReport> {
    let base = perturbed_base(h, g, big_g)?;
    let zero = ConservedQuantitySet::constant(big_g.dim(), vec![0.0; big_g.k()])?;
    verify_coincidence(&base, &zero, big_g, x0, 1, t_end, tol, opts)
}

/// Base map `(x, g) ↦ J g` of the canonical symplectic structure.
pub fn symplectic_base(dim: usize) -> Result<BaseMap> {
    if dim == 0 || dim % 2 != 0 {
        return Err(usage(format!("symplectic base map needs an even dimension, got {dim}")));
    }
    let m = dim / 2;
    Ok(Arc::new(move |_, stack| {
        let g = stack.gradient();
        let mut out = vec![0.0; dim];
        for i in 0..m {
            out[i] = g[m + i];
            out[m + i] = -g[i];
        }
        out
    }))
}
