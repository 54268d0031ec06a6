//! Periodic and non-periodic Toda lattices in Flaschka-type variables.
//!
//! Periodic state layout: `(X₁…X_n, u₁…u_n)` with indices taken mod `n`.
//! Non-periodic layout: `(X₁…X_{n−1}, u₁…u_n)` with `X₀ = X_n = 0`.
//!
//! Equations of motion: `Ẋ_i = X_i (u_i − u_{i+1})`, `u̇_i = X_{i−1} − X_i`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{usage, Error, Result};
use crate::system::{check_dim, ConservedQuantitySet, StateVector, SystemDefinition};

/// Largest lattice size accepted by the Hénon enumeration oracle.
pub const ORACLE_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lattice {
    Periodic,
    Nonperiodic,
}

impl Lattice {
    pub fn state_dim(self, n: usize) -> usize {
        match self {
            Lattice::Periodic => 2 * n,
            Lattice::Nonperiodic => 2 * n - 1,
        }
    }

    /// Number of `X` coordinates.
    pub fn x_len(self, n: usize) -> usize {
        match self {
            Lattice::Periodic => n,
            Lattice::Nonperiodic => n - 1,
        }
    }

    pub fn quantity_prefix(self) -> char {
        match self {
            Lattice::Periodic => 'I',
            Lattice::Nonperiodic => 'F',
        }
    }

    /// Column names `X1..,u1..` matching the state layout.
    pub fn coordinate_names(self, n: usize) -> Vec<String> {
        (1..=self.x_len(n))
            .map(|i| format!("X{i}"))
            .chain((1..=n).map(|i| format!("u{i}")))
            .collect()
    }
}

/// Index `i` reduced mod `n` (0-based). Every periodic neighbour lookup,
/// including the `X₀ ≡ X_n` convention, goes through here.
#[inline]
pub fn wrap(n: usize, i: isize) -> usize {
    i.rem_euclid(n as isize) as usize
}

fn check_n(n: usize) -> Result<()> {
    if n >= 2 {
        Ok(())
    } else {
        Err(usage(format!("lattice size must be at least 2, got {n}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TodaPeriodicState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl TodaPeriodicState {
    pub fn new(x: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        check_n(u.len())?;
        check_dim(u.len(), x.len())?;
        Ok(Self { x, u })
    }

    pub fn from_state(n: usize, s: &[f64]) -> Result<Self> {
        check_n(n)?;
        check_dim(2 * n, s.len())?;
        Ok(Self {
            x: s[..n].to_vec(),
            u: s[n..].to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn to_state(&self) -> Result<StateVector> {
        StateVector::new(self.x.iter().chain(&self.u).copied().collect())
    }

    /// All `X_i > 0`, the regime in which the variables come from particle
    /// positions. Not required for the equations to make sense.
    pub fn is_physical(&self) -> bool {
        self.x.iter().all(|&v| v > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TodaNonperiodicState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl TodaNonperiodicState {
    pub fn new(x: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        check_n(u.len())?;
        check_dim(u.len() - 1, x.len())?;
        Ok(Self { x, u })
    }

    pub fn from_state(n: usize, s: &[f64]) -> Result<Self> {
        check_n(n)?;
        check_dim(2 * n - 1, s.len())?;
        Ok(Self {
            x: s[..n - 1].to_vec(),
            u: s[n - 1..].to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn to_state(&self) -> Result<StateVector> {
        StateVector::new(self.x.iter().chain(&self.u).copied().collect())
    }

    pub fn is_physical(&self) -> bool {
        self.x.iter().all(|&v| v > 0.0)
    }

    /// `X_i` for `i ∈ 0..=n` (1-based lattice index) with zero boundaries.
    fn x_ext(&self, i: usize) -> f64 {
        if i == 0 || i >= self.n() {
            0.0
        } else {
            self.x[i - 1]
        }
    }
}

pub fn periodic_field(n: usize) -> Result<SystemDefinition> {
    check_n(n)?;
    SystemDefinition::new(2 * n, format!("toda-periodic(n={n})"), move |s| {
        let (x, u) = s.split_at(n);
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            let next = wrap(n, i as isize + 1);
            let prev = wrap(n, i as isize - 1);
            out[i] = x[i] * (u[i] - u[next]);
            out[n + i] = x[prev] - x[i];
        }
        out
    })
}

pub fn nonperiodic_field(n: usize) -> Result<SystemDefinition> {
    check_n(n)?;
    SystemDefinition::new(2 * n - 1, format!("toda-nonperiodic(n={n})"), move |s| {
        let (x, u) = s.split_at(n - 1);
        // X_i with X_0 = X_n = 0, 0-based i in -1..=n-1
        let xe = |i: isize| -> f64 {
            if i < 0 || i as usize >= n - 1 {
                0.0
            } else {
                x[i as usize]
            }
        };
        let mut out = vec![0.0; 2 * n - 1];
        for i in 0..n - 1 {
            out[i] = x[i] * (u[i] - u[i + 1]);
        }
        for i in 0..n {
            out[n - 1 + i] = xe(i as isize - 1) - xe(i as isize);
        }
        out
    })
}

pub fn field(lattice: Lattice, n: usize) -> Result<SystemDefinition> {
    match lattice {
        Lattice::Periodic => periodic_field(n),
        Lattice::Nonperiodic => nonperiodic_field(n),
    }
}

/// Elementary symmetric polynomials `e₀…e_m` of `values`.
fn elementary_symmetric(values: &[f64], m: usize) -> Vec<f64> {
    let mut e = vec![0.0; m + 1];
    e[0] = 1.0;
    for &v in values {
        for j in (1..=m).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e
}

/// `U = Σu_i`, `V = Σ_{i<j} u_i u_j`, `Y = ΣX_j` of a periodic state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TodaAggregates {
    pub u_sum: f64,
    pub v: f64,
    pub y_sum: f64,
}

impl TodaAggregates {
    pub fn of(state: &TodaPeriodicState) -> Self {
        let e = elementary_symmetric(&state.u, 2);
        Self {
            u_sum: e[1],
            v: e[2],
            y_sum: state.x.iter().sum(),
        }
    }
}

/// Brute-force Hénon invariant `I_m`: sum over all index families where the
/// `u` indices and the pairs `{j, j+1}` carried by each `X_j` are pairwise
/// distinct mod `n` and cover `m` indices. Each family is enumerated once as
/// a set, so reordered products are never counted twice.
pub fn henon_invariant_oracle(n: usize, m: usize) -> Result<ConservedQuantitySet> {
    check_n(n)?;
    if n > ORACLE_MAX_N {
        return Err(usage(format!(
            "enumeration oracle is limited to n <= {ORACLE_MAX_N}, got {n}"
        )));
    }
    if m == 0 || m > n {
        return Err(usage(format!("invariant index m must be in 1..={n}, got {m}")));
    }
    let terms = henon_terms(n, m);
    ConservedQuantitySet::scalar(2 * n, format!("I{m}[oracle]"), move |s| {
        let (x, u) = s.split_at(n);
        terms
            .iter()
            .map(|&(umask, xmask)| {
                let mut p = 1.0;
                for i in 0..n {
                    if umask & (1 << i) != 0 {
                        p *= u[i];
                    }
                    if xmask & (1 << i) != 0 {
                        p *= -x[i];
                    }
                }
                p
            })
            .sum()
    })
}

/// `(u-index mask, X-index mask)` of every admissible term.
fn henon_terms(n: usize, m: usize) -> Vec<(u32, u32)> {
    let mut terms = Vec::new();
    for xmask in 0u32..(1 << n) {
        let pairs = xmask.count_ones() as usize;
        if 2 * pairs > m {
            continue;
        }
        let mut occupied = 0u32;
        let mut ok = true;
        for j in 0..n {
            if xmask & (1 << j) == 0 {
                continue;
            }
            let window = (1u32 << j) | (1u32 << wrap(n, j as isize + 1));
            if window.count_ones() != 2 || occupied & window != 0 {
                ok = false;
                break;
            }
            occupied |= window;
        }
        if !ok {
            continue;
        }
        let singles = m - 2 * pairs;
        for umask in 0u32..(1 << n) {
            if umask & occupied == 0 && umask.count_ones() as usize == singles {
                terms.push((umask, xmask));
            }
        }
    }
    terms
}

/// Closed forms of `I₁, I₂, I₃` with analytic gradients.
pub fn henon_closed_form(n: usize, m: usize) -> Result<ConservedQuantitySet> {
    check_n(n)?;
    let dim = 2 * n;
    match m {
        1 => Ok(ConservedQuantitySet::scalar(dim, "I1", move |s| s[n..].iter().sum())?
            .with_gradient(move |_| {
                let mut g = vec![0.0; dim];
                g[n..].fill(1.0);
                g
            })
            .with_partials(move |_, alpha| {
                let v = match alpha {
                    [j] if *j >= n => 1.0,
                    _ => 0.0,
                };
                vec![v]
            })),
        2 => Ok(ConservedQuantitySet::scalar(dim, "I2", move |s| {
            let (x, u) = s.split_at(n);
            elementary_symmetric(u, 2)[2] - x.iter().sum::<f64>()
        })?
        .with_gradient(move |s| {
            let u = &s[n..];
            let total: f64 = u.iter().sum();
            let mut g = vec![-1.0; dim];
            for k in 0..n {
                g[n + k] = total - u[k];
            }
            g
        })
        .with_partials(move |s, alpha| {
            let v = match alpha {
                [j] if *j < n => -1.0,
                [j] => s[n..].iter().sum::<f64>() - s[*j],
                [a, b] if *a >= n && *b >= n && a != b => 1.0,
                _ => 0.0,
            };
            vec![v]
        })),
        3 => Ok(ConservedQuantitySet::scalar(dim, "I3", move |s| {
            let (x, u) = s.split_at(n);
            let y: f64 = x.iter().sum();
            let mixed: f64 = (0..n)
                .map(|i| u[i] * (y - x[i] - x[wrap(n, i as isize - 1)]))
                .sum();
            elementary_symmetric(u, 3)[3] - mixed
        })?
        .with_gradient(move |s| {
            let st = TodaPeriodicState::from_state(n, s).expect("dimension checked by caller");
            let agg = TodaAggregates::of(&st);
            let (x, u) = (&st.x, &st.u);
            let mut g = vec![0.0; dim];
            for k in 0..n {
                let next = wrap(n, k as isize + 1);
                let prev = wrap(n, k as isize - 1);
                g[k] = -(agg.u_sum - u[k] - u[next]);
                g[n + k] = agg.v - u[k] * (agg.u_sum - u[k]) - (agg.y_sum - x[prev] - x[k]);
            }
            g
        })),
        _ => Err(usage(format!(
            "closed forms exist for I1, I2, I3 only (got m = {m}); use the enumeration oracle"
        ))),
    }
}

/// Stack of `I_m` for the listed `m` (e.g. `[1, 2, 3]` for `𝕀₁₂₃`).
pub fn periodic_quantity(n: usize, which: &[usize]) -> Result<ConservedQuantitySet> {
    let parts = which
        .iter()
        .map(|&m| henon_closed_form(n, m))
        .collect::<Result<Vec<_>>>()?;
    ConservedQuantitySet::stack(&parts)
}

/// Lax matrices of a non-periodic state.
#[derive(Debug, Clone, PartialEq)]
pub struct LaxPair {
    /// Diagonal `u_i`, superdiagonal `X_i`, subdiagonal `1`.
    pub l: DMatrix<f64>,
    /// Superdiagonal `−X_i`, zero elsewhere.
    pub b: DMatrix<f64>,
}

impl LaxPair {
    pub fn from_state(n: usize, s: &[f64]) -> Result<Self> {
        let st = TodaNonperiodicState::from_state(n, s)?;
        let mut l = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = st.u[i];
        }
        for i in 0..n - 1 {
            l[(i, i + 1)] = st.x[i];
            l[(i + 1, i)] = 1.0;
            b[(i, i + 1)] = -st.x[i];
        }
        Ok(Self { l, b })
    }

    pub fn commutator(&self) -> DMatrix<f64> {
        &self.b * &self.l - &self.l * &self.b
    }
}

/// `F_k = tr(L^k)/k` evaluated through the matrix power, any `1 ≤ k ≤ n`.
pub fn flaschka_trace(n: usize, k: usize) -> Result<ConservedQuantitySet> {
    check_n(n)?;
    if k == 0 || k > n {
        return Err(usage(format!("Flaschka index k must be in 1..={n}, got {k}")));
    }
    ConservedQuantitySet::scalar(2 * n - 1, format!("F{k}[trace]"), move |s| {
        let lax = LaxPair::from_state(n, s).expect("dimension checked by caller");
        lax.l.pow(k as u32).trace() / k as f64
    })
}

/// Closed forms of `F₁, F₂, F₃` with analytic gradients.
pub fn flaschka_closed_form(n: usize, k: usize) -> Result<ConservedQuantitySet> {
    check_n(n)?;
    let dim = 2 * n - 1;
    let xl = n - 1;
    match k {
        1 => Ok(ConservedQuantitySet::scalar(dim, "F1", move |s| s[xl..].iter().sum())?
            .with_gradient(move |_| {
                let mut g = vec![0.0; dim];
                g[xl..].fill(1.0);
                g
            })
            .with_partials(move |_, alpha| {
                let v = match alpha {
                    [j] if *j >= xl => 1.0,
                    _ => 0.0,
                };
                vec![v]
            })),
        2 => Ok(ConservedQuantitySet::scalar(dim, "F2", move |s| {
            let (x, u) = s.split_at(xl);
            x.iter().sum::<f64>() + u.iter().map(|v| 0.5 * v * v).sum::<f64>()
        })?
        .with_gradient(move |s| {
            let mut g = vec![1.0; dim];
            g[xl..].copy_from_slice(&s[xl..]);
            g
        })
        .with_partials(move |s, alpha| {
            let v = match alpha {
                [j] if *j < xl => 1.0,
                [j] => s[*j],
                [a, b] if a == b && *a >= xl => 1.0,
                _ => 0.0,
            };
            vec![v]
        })),
        3 => Ok(ConservedQuantitySet::scalar(dim, "F3", move |s| {
            let (x, u) = s.split_at(xl);
            let mixed: f64 = (0..xl).map(|i| x[i] * (u[i] + u[i + 1])).sum();
            mixed + u.iter().map(|v| v * v * v).sum::<f64>() / 3.0
        })?
        .with_gradient(move |s| {
            let st = TodaNonperiodicState::from_state(n, s).expect("dimension checked by caller");
            let mut g = vec![0.0; dim];
            for i in 0..xl {
                g[i] = st.u[i] + st.u[i + 1];
            }
            for k in 0..n {
                // 1-based lattice index k+1: X_k + X_{k+1} + u_{k+1}^2
                g[xl + k] = st.x_ext(k) + st.x_ext(k + 1) + st.u[k] * st.u[k];
            }
            g
        })),
        _ => Err(usage(format!(
            "closed forms exist for F1, F2, F3 only (got k = {k}); use flaschka_trace"
        ))),
    }
}

/// `F_k`: closed form with analytic gradient for `k ≤ 3`, trace otherwise.
pub fn flaschka_invariant(n: usize, k: usize) -> Result<ConservedQuantitySet> {
    if k <= 3 && k <= n {
        flaschka_closed_form(n, k)
    } else {
        flaschka_trace(n, k)
    }
}

/// Stack of `F_k` for the listed `k` (e.g. `[1, 2, 3]` for `𝔽₁₂₃`).
pub fn nonperiodic_quantity(n: usize, which: &[usize]) -> Result<ConservedQuantitySet> {
    let parts = which
        .iter()
        .map(|&k| flaschka_invariant(n, k))
        .collect::<Result<Vec<_>>>()?;
    ConservedQuantitySet::stack(&parts)
}

pub fn lattice_quantity(lattice: Lattice, n: usize, which: &[usize]) -> Result<ConservedQuantitySet> {
    match lattice {
        Lattice::Periodic => periodic_quantity(n, which),
        Lattice::Nonperiodic => nonperiodic_quantity(n, which),
    }
}

/// `‖L̇ − [B, L]‖_max` with `L̇` assembled from the non-periodic field.
pub fn lax_commutator_residual(n: usize, s: &StateVector) -> Result<f64> {
    let lax = LaxPair::from_state(n, s)?;
    let f = nonperiodic_field(n)?.evaluate(s)?;
    let df = TodaNonperiodicState::from_state(n, &f)?;
    let mut l_dot = DMatrix::zeros(n, n);
    for i in 0..n {
        l_dot[(i, i)] = df.u[i];
    }
    for i in 0..n - 1 {
        l_dot[(i, i + 1)] = df.x[i];
    }
    Ok((l_dot - lax.commutator()).amax())
}

/// Named invariant sets with explicit descriptions, plus the ones known to
/// be empty. Written `M{s}_{I|F}{components}`, e.g. `M2_I123`, `M0_F3`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExplicitSetId {
    lattice: Lattice,
    rank: usize,
    components: Vec<usize>,
}

const NONEMPTY: [(usize, &[usize]); 4] = [(0, &[3]), (1, &[1, 3]), (1, &[2, 3]), (2, &[1, 2, 3])];
const EMPTY: [(usize, &[usize]); 8] = [
    (0, &[1]),
    (0, &[2]),
    (0, &[1, 2]),
    (1, &[1, 2]),
    (0, &[1, 3]),
    (0, &[2, 3]),
    (0, &[1, 2, 3]),
    (1, &[1, 2, 3]),
];

impl ExplicitSetId {
    pub fn new(lattice: Lattice, rank: usize, components: &[usize]) -> Result<Self> {
        let known = NONEMPTY
            .iter()
            .chain(EMPTY.iter())
            .any(|&(r, c)| r == rank && c == components);
        if !known {
            return Err(usage(format!(
                "no explicit description for rank {rank} of {}{}; known ids: {}",
                lattice.quantity_prefix(),
                components.iter().map(|c| c.to_string()).collect::<String>(),
                Self::all(lattice)
                    .iter()
                    .map(|id| id.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        Ok(Self {
            lattice,
            rank,
            components: components.to_vec(),
        })
    }

    /// The four sets with explicit descriptions on a lattice.
    pub fn nonempty(lattice: Lattice) -> Vec<ExplicitSetId> {
        NONEMPTY
            .iter()
            .map(|&(rank, c)| Self {
                lattice,
                rank,
                components: c.to_vec(),
            })
            .collect()
    }

    /// The eight rank-level sets that are empty for every `n`.
    pub fn empty(lattice: Lattice) -> Vec<ExplicitSetId> {
        EMPTY
            .iter()
            .map(|&(rank, c)| Self {
                lattice,
                rank,
                components: c.to_vec(),
            })
            .collect()
    }

    pub fn all(lattice: Lattice) -> Vec<ExplicitSetId> {
        let mut v = Self::nonempty(lattice);
        v.extend(Self::empty(lattice));
        v
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Which of `I₁,I₂,I₃` (or `F₁,F₂,F₃`) make up the quantity.
    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn is_empty_set(&self) -> bool {
        EMPTY
            .iter()
            .any(|&(r, c)| r == self.rank && c == self.components.as_slice())
    }

    pub fn quantity(&self, n: usize) -> Result<ConservedQuantitySet> {
        lattice_quantity(self.lattice, n, &self.components)
    }

    fn quantity_name(&self) -> String {
        format!(
            "{}{}",
            self.lattice.quantity_prefix(),
            self.components.iter().map(|c| c.to_string()).collect::<String>()
        )
    }

    fn emptiness_error(&self) -> Error {
        let lattice = match self.lattice {
            Lattice::Periodic => "periodic",
            Lattice::Nonperiodic => "non-periodic",
        };
        Error::EmptySet(format!(
            "set {self} is empty: the Jacobian of {} never has rank {} on the {lattice} \
             Toda lattice, for odd and even n alike",
            self.quantity_name(),
            self.rank
        ))
    }

    /// Names of the free parameters accepted by [`explicit_set_sample`].
    pub fn sample_params(&self, n: usize) -> Result<&'static [&'static str]> {
        if self.is_empty_set() {
            return Err(self.emptiness_error());
        }
        let even = n % 2 == 0;
        Ok(match (self.lattice, self.rank, even) {
            (Lattice::Periodic, 0, true) => &["X1", "u"],
            (Lattice::Periodic, 0, false) => &[],
            (Lattice::Periodic, 1, true) if self.components == [1, 3] => &["X1", "X2", "u"],
            (Lattice::Periodic, 1, false) if self.components == [1, 3] => &["X"],
            (Lattice::Periodic, 1, true) => &["X1", "u1", "u2"],
            (Lattice::Periodic, 1, false) => &["u"],
            (Lattice::Periodic, _, true) => &["X1", "X2", "u1", "u2"],
            (Lattice::Periodic, _, false) => &["X", "u"],
            (Lattice::Nonperiodic, 0, true) => &["u"],
            (Lattice::Nonperiodic, 0, false) => &[],
            (Lattice::Nonperiodic, 1, true) if self.components == [1, 3] => &["X", "u"],
            (Lattice::Nonperiodic, 1, false) if self.components == [1, 3] => &[],
            (Lattice::Nonperiodic, 1, _) => &["u1", "u2"],
            (Lattice::Nonperiodic, _, true) => &["X", "u1", "u2"],
            (Lattice::Nonperiodic, _, false) => &["u1", "u2"],
        })
    }
}

impl fmt::Display for ExplicitSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}_{}", self.rank, self.quantity_name())
    }
}

impl FromStr for ExplicitSetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || usage(format!("malformed set id {s:?}; expected e.g. M2_I123 or M0_F3"));
        let rest = s.strip_prefix('M').ok_or_else(bad)?;
        let (rank, q) = rest.split_once('_').ok_or_else(bad)?;
        let rank: usize = rank.parse().map_err(|_| bad())?;
        let mut chars = q.chars();
        let lattice = match chars.next() {
            Some('I') => Lattice::Periodic,
            Some('F') => Lattice::Nonperiodic,
            _ => return Err(bad()),
        };
        let components = chars
            .map(|c| c.to_digit(10).map(|d| d as usize).ok_or_else(bad))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lattice, rank, &components)
    }
}

fn check_set_dims(id: &ExplicitSetId, n: usize, len: usize) -> Result<()> {
    check_n(n)?;
    check_dim(id.lattice.state_dim(n), len)?;
    if id.is_empty_set() {
        return Err(id.emptiness_error());
    }
    Ok(())
}

/// Largest deviation from a period-2 pattern (`v_i = v_{i mod 2}`).
fn alternation_residual(v: &[f64]) -> f64 {
    v.iter()
        .enumerate()
        .skip(2)
        .fold(0.0_f64, |m, (i, &e)| m.max((e - v[i % 2]).abs()))
}

/// Largest deviation from a constant vector.
fn constancy_residual(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &e| m.max((e - v[0]).abs()))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, e| m.max(e.abs()))
}

/// Largest absolute violation of the set's defining equalities; zero exactly
/// on the set.
pub fn explicit_set_residual(id: &ExplicitSetId, n: usize, s: &[f64]) -> Result<f64> {
    check_set_dims(id, n, s.len())?;
    let even = n % 2 == 0;
    let (x, u) = s.split_at(id.lattice.x_len(n));
    let nf = n as f64;
    let r = match id.lattice {
        Lattice::Periodic if even => {
            let pattern = alternation_residual(x).max(alternation_residual(u));
            let (x1, x2, u1, u2) = (x[0], x[1], u[0], u[1]);
            let constraint = match (id.rank, id.components.as_slice()) {
                (0, _) => (u1 + u2).abs().max((x1 + x2 - u1 * u2).abs()),
                (1, [1, 3]) => (u1 + u2).abs(),
                (1, _) => (x1 + x2 + nf / 4.0 * (u1 + u2).powi(2) - u1 * u2).abs(),
                _ => 0.0,
            };
            pattern.max(constraint)
        }
        Lattice::Periodic => {
            let pattern = constancy_residual(x).max(constancy_residual(u));
            let (xc, uc) = (x[0], u[0]);
            let constraint = match (id.rank, id.components.as_slice()) {
                (0, _) => xc.abs().max(uc.abs()),
                (1, [1, 3]) => uc.abs(),
                (1, _) => (xc + (nf - 1.0) / 2.0 * uc * uc).abs(),
                _ => 0.0,
            };
            pattern.max(constraint)
        }
        Lattice::Nonperiodic if even => {
            // (X,0,X,…,0,X) and (u1,u2,u1,u2,…)
            let xc = x[0];
            let xpat = x.iter().enumerate().fold(0.0_f64, |m, (i, &e)| {
                let want = if i % 2 == 0 { xc } else { 0.0 };
                m.max((e - want).abs())
            });
            let pattern = xpat.max(alternation_residual(u));
            let (u1, u2) = (u[0], u[1]);
            let constraint = match (id.rank, id.components.as_slice()) {
                (0, _) => (u1 + u2).abs().max((xc - u1 * u2).abs()),
                (1, [1, 3]) => (u1 + u2).abs(),
                (1, _) => (xc - u1 * u2).abs(),
                _ => 0.0,
            };
            pattern.max(constraint)
        }
        Lattice::Nonperiodic => {
            let xz = max_abs(x);
            let upart = match (id.rank, id.components.as_slice()) {
                (0, _) | (1, [1, 3]) => max_abs(u),
                (1, _) => {
                    // (u1,0,u1,…,u1) or (0,u2,0,…,0)
                    let fam = |keep_even: bool| {
                        let lead = if keep_even { u[0] } else { u[1] };
                        u.iter().enumerate().fold(0.0_f64, |m, (i, &e)| {
                            let want = if (i % 2 == 0) == keep_even { lead } else { 0.0 };
                            m.max((e - want).abs())
                        })
                    };
                    fam(true).min(fam(false))
                }
                _ => alternation_residual(u),
            };
            xz.max(upart)
        }
    };
    Ok(r)
}

/// A point of the set built from its free parameters (see
/// [`ExplicitSetId::sample_params`]).
pub fn explicit_set_sample(id: &ExplicitSetId, n: usize, params: &[f64]) -> Result<StateVector> {
    check_set_dims(id, n, id.lattice.state_dim(n))?;
    let names = id.sample_params(n)?;
    if params.len() != names.len() {
        return Err(usage(format!(
            "set {id} with n = {n} takes {} parameter(s) ({}), got {}",
            names.len(),
            names.join(", "),
            params.len()
        )));
    }
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            index: i,
            context: format!("parameters of {id}"),
        });
    }
    let even = n % 2 == 0;
    let nf = n as f64;
    let alternate = |a: f64, b: f64, len: usize| -> Vec<f64> {
        (0..len).map(|i| if i % 2 == 0 { a } else { b }).collect()
    };
    let comps = id.components.as_slice();
    let (x, u) = match id.lattice {
        Lattice::Periodic if even => {
            let (x1, x2, u1, u2) = match (id.rank, comps) {
                (0, _) => {
                    let (x1, u) = (params[0], params[1]);
                    (x1, -u * u - x1, u, -u)
                }
                (1, [1, 3]) => (params[0], params[1], params[2], -params[2]),
                (1, _) => {
                    let (x1, u1, u2) = (params[0], params[1], params[2]);
                    (x1, -nf / 4.0 * (u1 + u2).powi(2) + u1 * u2 - x1, u1, u2)
                }
                _ => (params[0], params[1], params[2], params[3]),
            };
            (alternate(x1, x2, n), alternate(u1, u2, n))
        }
        Lattice::Periodic => {
            let (xc, uc) = match (id.rank, comps) {
                (0, _) => (0.0, 0.0),
                (1, [1, 3]) => (params[0], 0.0),
                (1, _) => (-(nf - 1.0) / 2.0 * params[0] * params[0], params[0]),
                _ => (params[0], params[1]),
            };
            (vec![xc; n], vec![uc; n])
        }
        Lattice::Nonperiodic if even => {
            let (xc, u1, u2) = match (id.rank, comps) {
                (0, _) => (-params[0] * params[0], params[0], -params[0]),
                (1, [1, 3]) => (params[0], params[1], -params[1]),
                (1, _) => (params[0] * params[1], params[0], params[1]),
                _ => (params[0], params[1], params[2]),
            };
            (alternate(xc, 0.0, n - 1), alternate(u1, u2, n))
        }
        Lattice::Nonperiodic => {
            let (u1, u2) = match (id.rank, comps) {
                (0, _) | (1, [1, 3]) => (0.0, 0.0),
                (1, _) => {
                    if params[0] != 0.0 && params[1] != 0.0 {
                        return Err(usage(format!(
                            "set {id} with odd n needs u1 = 0 or u2 = 0, got ({}, {})",
                            params[0], params[1]
                        )));
                    }
                    (params[0], params[1])
                }
                _ => (params[0], params[1]),
            };
            (vec![0.0; n - 1], alternate(u1, u2, n))
        }
    };
    StateVector::new(x.into_iter().chain(u).collect())
}

/// Dynamics restricted to the period-2 pattern sets with even `n`.
#[derive(Debug, Clone)]
pub struct ReducedDynamics {
    lattice: Lattice,
    system: SystemDefinition,
}

/// Two-particle periodic system on `(X₁, X₂, u₁, u₂)` or the three-variable
/// non-periodic system on `(X, u₁, u₂)`.
pub fn reduced_dynamics(id: &ExplicitSetId) -> Result<ReducedDynamics> {
    if id.is_empty_set() {
        return Err(id.emptiness_error());
    }
    let system = match id.lattice {
        Lattice::Periodic => SystemDefinition::new(4, "toda-periodic-reduced", |z| {
            vec![
                z[0] * (z[2] - z[3]),
                z[1] * (z[3] - z[2]),
                z[1] - z[0],
                z[0] - z[1],
            ]
        })?,
        Lattice::Nonperiodic => SystemDefinition::new(3, "toda-nonperiodic-reduced", |z| {
            vec![z[0] * (z[1] - z[2]), -z[0], z[0]]
        })?,
    };
    Ok(ReducedDynamics {
        lattice: id.lattice,
        system,
    })
}

impl ReducedDynamics {
    pub fn system(&self) -> &SystemDefinition {
        &self.system
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    fn check_even(n: usize) -> Result<()> {
        check_n(n)?;
        if n % 2 == 0 {
            Ok(())
        } else {
            Err(usage(format!("reduced dynamics lift needs even n, got {n}")))
        }
    }

    /// Replicates the reduced state into the full lattice.
    pub fn lift(&self, z: &[f64], n: usize) -> Result<StateVector> {
        Self::check_even(n)?;
        check_dim(self.system.dim(), z.len())?;
        let v: Vec<f64> = match self.lattice {
            Lattice::Periodic => (0..n)
                .map(|i| z[i % 2])
                .chain((0..n).map(|i| z[2 + i % 2]))
                .collect(),
            Lattice::Nonperiodic => (0..n - 1)
                .map(|i| if i % 2 == 0 { z[0] } else { 0.0 })
                .chain((0..n).map(|i| z[1 + i % 2]))
                .collect(),
        };
        StateVector::new(v)
    }

    /// Projects a pattern state onto the reduced coordinates.
    pub fn restrict(&self, s: &[f64], n: usize) -> Result<StateVector> {
        Self::check_even(n)?;
        check_dim(self.lattice.state_dim(n), s.len())?;
        let v = match self.lattice {
            Lattice::Periodic => vec![s[0], s[1], s[n], s[n + 1]],
            Lattice::Nonperiodic => vec![s[0], s[n - 1], s[n]],
        };
        StateVector::new(v)
    }
}

/// Lattice variables from displacements `y` and velocities `u` of particles
/// with mass `m` around an equilibrium of spacing `λ`:
/// `X_i = (e^{−λ}/m) e^{−(y_{i+1} − y_i)}`.
pub fn physical_to_lattice(
    lattice: Lattice,
    y: &[f64],
    u: &[f64],
    mass: f64,
    lambda: f64,
) -> Result<StateVector> {
    let n = u.len();
    check_n(n)?;
    check_dim(n, y.len())?;
    if !(mass > 0.0) {
        return Err(usage(format!("mass must be positive, got {mass}")));
    }
    let c = (-lambda).exp() / mass;
    let x = (0..lattice.x_len(n)).map(|i| c * (-(y[wrap(n, i as isize + 1)] - y[i])).exp());
    StateVector::new(x.chain(u.iter().copied()).collect())
}
