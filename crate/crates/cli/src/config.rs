//! Scenario files: one JSON object per file describing a model, a check,
//! the quantity it uses and where the trajectory starts.

use std::fmt;
use std::path::{Path, PathBuf};

use invset::integrate::{FlowOptions, DEFAULT_ABS_TOL, DEFAULT_REL_TOL, DEFAULT_SAMPLES};
use invset::models::toda::{self, ExplicitSetId, Lattice};
use invset::models::{kepler, oscillator};
use invset::{ConservedQuantitySet, StateVector, SystemDefinition};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Kepler,
    TodaPeriodic,
    TodaNonperiodic,
    Oscillator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    RankInvariance,
    CriticalInvariance,
    NInvariance,
    SetPersistence,
    Coincidence,
    OracleEquality,
    Drift,
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Lattice size for the Toda models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Circular-orbit parameter for Kepler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Vector(Vec<f64>),
    Set {
        id: String,
        #[serde(default)]
        params: Vec<f64>,
    },
    Circular {
        theta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub samples: usize,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: DEFAULT_REL_TOL,
            samples: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// The statement being checked, in plain words.
    pub claim: String,
    pub model: ModelSpec,
    pub check: CheckKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<String>,
    pub initial_state: InitialState,
    #[serde(default)]
    pub t_end: f64,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    /// Derivative order for `n-invariance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    /// Number of random states for `oracle-equality`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Verdict that `run-all` treats as the intended outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Command-line values that replace the corresponding config fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub rank_tol: Option<f64>,
    pub residual_tol: Option<f64>,
    pub t_end: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.abs_tol {
            self.integrator.abs_tol = v;
        }
        if let Some(v) = o.rel_tol {
            self.integrator.rel_tol = v;
        }
        if let Some(v) = o.samples {
            self.integrator.samples = v;
        }
        if let Some(v) = o.t_end {
            self.t_end = v;
        }
        self.rank_tol = o.rank_tol.or(self.rank_tol);
        self.residual_tol = o.residual_tol.or(self.residual_tol);
        self.seed = o.seed.unwrap_or(self.seed);
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions::with_tolerances(self.integrator.abs_tol, self.integrator.rel_tol)
            .with_samples(self.integrator.samples)
    }

    /// Relative paths in `output` are taken from the config file's folder.
    pub fn resolve_outputs(&mut self, base: &Path) {
        for p in [&mut self.output.report, &mut self.output.csv].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// A model instance ready to integrate.
pub struct Model {
    pub kind: ModelKind,
    pub n: usize,
    pub a: f64,
    pub system: SystemDefinition,
    pub coordinates: Vec<String>,
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self, String> {
        let lattice = |l: Lattice| -> Result<Self, String> {
            let n = spec.n.ok_or("toda models need `model.n`")?;
            if spec.a.is_some() {
                return Err("`model.a` only applies to the kepler model".into());
            }
            Ok(Self {
                kind: spec.kind,
                n,
                a: f64::NAN,
                system: toda::field(l, n).map_err(|e| e.to_string())?,
                coordinates: l.coordinate_names(n),
            })
        };
        match spec.kind {
            ModelKind::TodaPeriodic => lattice(Lattice::Periodic),
            ModelKind::TodaNonperiodic => lattice(Lattice::Nonperiodic),
            ModelKind::Kepler => {
                if spec.n.is_some() {
                    return Err("`model.n` only applies to the toda models".into());
                }
                let a = spec.a.unwrap_or(1.0);
                if !(a.is_finite() && a > 0.0) {
                    return Err(format!("`model.a` must be positive, got {a}"));
                }
                Ok(Self {
                    kind: spec.kind,
                    n: 2,
                    a,
                    system: kepler::kepler_field(),
                    coordinates: ["x1", "x2", "y1", "y2"].map(String::from).to_vec(),
                })
            }
            ModelKind::Oscillator => {
                if spec.n.is_some() || spec.a.is_some() {
                    return Err("the oscillator model takes no parameters".into());
                }
                Ok(Self {
                    kind: spec.kind,
                    n: 1,
                    a: f64::NAN,
                    system: oscillator::harmonic_field(),
                    coordinates: vec!["x1".into(), "x2".into()],
                })
            }
        }
    }

    pub fn lattice(&self) -> Option<Lattice> {
        match self.kind {
            ModelKind::TodaPeriodic => Some(Lattice::Periodic),
            ModelKind::TodaNonperiodic => Some(Lattice::Nonperiodic),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    fn default_quantity(&self) -> &'static str {
        match self.kind {
            ModelKind::TodaPeriodic => "I123",
            ModelKind::TodaNonperiodic => "F123",
            ModelKind::Kepler => "H,A,K",
            ModelKind::Oscillator => "R2",
        }
    }

    fn quantity_options(&self) -> &'static str {
        match self.kind {
            ModelKind::TodaPeriodic => "I1, I2, I3, I12, I13, I23, I123",
            ModelKind::TodaNonperiodic => "F1, F2, F3, F12, F13, F23, F123",
            ModelKind::Kepler => "comma-separated list of H, A, K, G (e.g. H,A,K)",
            ModelKind::Oscillator => "R2, CIRCLE1 ... CIRCLE8",
        }
    }

    /// Parses a quantity name. For the Toda models the selected
    /// components are returned too.
    pub fn quantity(&self, name: Option<&str>) -> Result<(ConservedQuantitySet, Vec<usize>), String> {
        let name = name.unwrap_or(self.default_quantity()).trim();
        let bad = || format!("unknown quantity `{name}` for {}; valid options: {}", self.kind_name(), self.quantity_options());
        match self.lattice() {
            Some(l) => {
                let digits = name.strip_prefix(l.quantity_prefix()).ok_or_else(bad)?;
                let which: Vec<usize> = digits
                    .chars()
                    .map(|c| c.to_digit(10).map(|d| d as usize))
                    .collect::<Option<_>>()
                    .ok_or_else(bad)?;
                let sorted = which.windows(2).all(|w| w[0] < w[1]);
                if which.is_empty() || !sorted || which.iter().any(|&d| !(1..=3).contains(&d)) {
                    return Err(bad());
                }
                let q = toda::lattice_quantity(l, self.n, &which).map_err(|e| e.to_string())?;
                Ok((q, which))
            }
            None if self.kind == ModelKind::Kepler => {
                let parts = name
                    .split(',')
                    .map(|t| match t.trim() {
                        "H" => Ok(kepler::hamiltonian()),
                        "A" => Ok(kepler::angular_momentum()),
                        "K" => kepler::k_quantity(self.a).map_err(|e| e.to_string()),
                        "G" => kepler::linear_driver(self.a).map_err(|e| e.to_string()),
                        _ => Err(bad()),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let q = ConservedQuantitySet::stack(&parts).map_err(|e| e.to_string())?;
                Ok((q, Vec::new()))
            }
            None => {
                if name == "R2" {
                    return Ok((oscillator::radius_squared(), Vec::new()));
                }
                let p: i32 = name.strip_prefix("CIRCLE").and_then(|p| p.parse().ok()).ok_or_else(bad)?;
                if !(1..=8).contains(&p) {
                    return Err(bad());
                }
                Ok((oscillator::circle_power(p), Vec::new()))
            }
        }
    }

    pub fn kind_name(&self) -> String {
        serde_json::to_value(self.kind).expect("unit variant").as_str().expect("string").to_owned()
    }

    /// Start state, plus the explicit set it was sampled from, if any.
    pub fn initial_state(&self, init: &InitialState) -> Result<(StateVector, Option<ExplicitSetId>), String> {
        match init {
            InitialState::Vector(v) => {
                if v.len() != self.dim() {
                    return Err(format!(
                        "initial_state.vector has {} entries but the {} state has {} ({})",
                        v.len(),
                        self.kind_name(),
                        self.dim(),
                        self.coordinates.join(",")
                    ));
                }
                Ok((StateVector::from_slice(v).map_err(|e| e.to_string())?, None))
            }
            InitialState::Set { id, params } => {
                let lattice = self
                    .lattice()
                    .ok_or_else(|| format!("initial_state.set needs a toda model, not {}", self.kind_name()))?;
                let parsed: ExplicitSetId = id.parse().map_err(|e: invset::Error| {
                    let valid: Vec<_> = ExplicitSetId::nonempty(lattice).iter().map(|s| s.to_string()).collect();
                    format!("{e}; valid set ids for {}: {}", self.kind_name(), valid.join(", "))
                })?;
                if parsed.lattice() != lattice {
                    let valid: Vec<_> = ExplicitSetId::nonempty(lattice).iter().map(|s| s.to_string()).collect();
                    return Err(format!(
                        "set {id} belongs to the other lattice; valid set ids for {}: {}",
                        self.kind_name(),
                        valid.join(", ")
                    ));
                }
                let names = parsed.sample_params(self.n).map_err(|e| e.to_string())?;
                if names.len() != params.len() {
                    return Err(format!(
                        "set {id} with n = {} takes {} parameters ({}), got {}",
                        self.n,
                        names.len(),
                        names.join(", "),
                        params.len()
                    ));
                }
                let x = toda::explicit_set_sample(&parsed, self.n, params).map_err(|e| e.to_string())?;
                Ok((x, Some(parsed)))
            }
            InitialState::Circular { theta } => {
                if self.kind != ModelKind::Kepler {
                    return Err(format!("initial_state.circular needs the kepler model, not {}", self.kind_name()));
                }
                let s = kepler::circular_sample(self.a, *theta).map_err(|e| e.to_string())?;
                Ok((s.to_state().map_err(|e| e.to_string())?, None))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ModelKind, n: Option<usize>) -> ModelSpec {
        ModelSpec { kind, n, a: None }
    }

    #[test]
    fn parses_a_minimal_config() {
        let c = ScenarioConfig::from_json(
            r#"{"name": "x", "claim": "y", "model": {"kind": "toda-periodic", "n": 4},
                "check": "drift", "initial_state": {"vector": [1, 1, 1, 1, 0, 0, 0, 0]}, "t_end": 1}"#,
        )
        .unwrap();
        assert_eq!(c.model.kind, ModelKind::TodaPeriodic);
        assert_eq!(c.integrator, IntegratorSpec::default());
        assert_eq!(c.check.to_string(), "drift");
    }

    #[test]
    fn unknown_model_names_valid_options() {
        let e = ScenarioConfig::from_json(
            r#"{"name": "x", "claim": "y", "model": {"kind": "lorenz"}, "check": "drift",
                "initial_state": {"vector": [0]}}"#,
        )
        .unwrap_err();
        assert!(e.contains("kepler") && e.contains("toda-periodic"), "{e}");
    }

    #[test]
    fn overrides_replace_fields() {
        let mut c = ScenarioConfig::from_json(
            r#"{"name": "x", "claim": "y", "model": {"kind": "oscillator"}, "check": "drift",
                "initial_state": {"vector": [1, 0]}, "t_end": 1, "rank_tol": 1e-6}"#,
        )
        .unwrap();
        c.apply(&Overrides {
            abs_tol: Some(1e-12),
            t_end: Some(3.0),
            samples: Some(11),
            ..Default::default()
        });
        assert_eq!(c.integrator.abs_tol, 1e-12);
        assert_eq!(c.integrator.rel_tol, DEFAULT_REL_TOL);
        assert_eq!((c.t_end, c.integrator.samples, c.rank_tol), (3.0, 11, Some(1e-6)));
    }

    #[test]
    fn quantity_names() {
        let m = Model::build(&spec(ModelKind::TodaNonperiodic, Some(4))).unwrap();
        let (q, which) = m.quantity(Some("F13")).unwrap();
        assert_eq!((q.k(), which), (2, vec![1, 3]));
        assert!(m.quantity(Some("I13")).unwrap_err().contains("F123"));
        assert!(m.quantity(Some("F31")).is_err());
        let k = Model::build(&spec(ModelKind::Kepler, None)).unwrap();
        assert_eq!(k.quantity(None).unwrap().0.k(), 3);
        assert_eq!(k.quantity(Some("G")).unwrap().0.labels(), ["G"]);
        let o = Model::build(&spec(ModelKind::Oscillator, None)).unwrap();
        assert_eq!(o.quantity(Some("CIRCLE3")).unwrap().0.labels(), ["CIRCLE3"]);
        assert!(o.quantity(Some("CIRCLE0")).is_err());
    }

    #[test]
    fn empty_set_is_rejected_with_reason() {
        let m = Model::build(&spec(ModelKind::TodaPeriodic, Some(4))).unwrap();
        let e = m
            .initial_state(&InitialState::Set {
                id: "M0_I1".into(),
                params: vec![],
            })
            .unwrap_err();
        assert!(e.contains("empty"), "{e}");
    }

    #[test]
    fn set_from_wrong_lattice_lists_options() {
        let m = Model::build(&spec(ModelKind::TodaPeriodic, Some(4))).unwrap();
        let e = m
            .initial_state(&InitialState::Set {
                id: "M0_F3".into(),
                params: vec![0.1],
            })
            .unwrap_err();
        assert!(e.contains("M2_I123"), "{e}");
    }

    #[test]
    fn vector_dimension_is_checked() {
        let m = Model::build(&spec(ModelKind::TodaNonperiodic, Some(3))).unwrap();
        assert!(m.initial_state(&InitialState::Vector(vec![0.0; 6])).is_err());
        assert!(m.initial_state(&InitialState::Vector(vec![0.5; 5])).is_ok());
    }

    #[test]
    fn circular_start_lies_on_orbit() {
        let m = Model::build(&ModelSpec {
            kind: ModelKind::Kepler,
            n: None,
            a: Some(1.5),
        })
        .unwrap();
        let (x, _) = m.initial_state(&InitialState::Circular { theta: 0.0 }).unwrap();
        assert!((x[1] - 2.25).abs() < 1e-15);
    }
}
