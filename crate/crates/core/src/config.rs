//! Run configuration: a TOML document with one table per concern.
//!
//! ```toml
//! [grid]
//! dim = 2
//! cells = 128
//! length = 1.0
//! origin = 0.0            # position of the first node (optional)
//!
//! [physics]
//! eps = 0.01
//! mobility = { kind = "two_sided", exponent = 1.0 }
//!
//! [scheme]
//! kind = "dscn"           # or "dsbe"
//! s1 = 2.0                # optional, must be >= 2
//! s2 = "auto"             # optional, "auto" or a number
//!
//! [time]
//! horizon = 20.0
//! steps = { mode = "adaptive", tau_max = 0.25, tau_min = 0.025, alpha = 1e10 }
//!
//! [initial]
//! kind = "random_uniform"
//! lo = -0.8
//! hi = 0.8
//! seed = 1
//! ```
//!
//! Optional tables: `[solver]` (`rel_tol`, `abs_tol`, `max_iter`),
//! `[forcing]` (`enabled`), `[monitors]` (`mbp`, `energy` in
//! `off|warn|abort`, plus slacks) and `[output]` (`dir`, `csv_every`,
//! `snapshot_every`). Unknown keys are rejected.

use std::f64::consts::PI;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::initial::InitialCondition;
use crate::linsolve::KrylovConfig;
use crate::physics::Mobility;
use crate::schemes::{compute_s2_min, SchemeKind, SchemeParams};
use crate::timestepping::{ManufacturedSolution, MonitorMode, MonitorPolicy, Simulation, StepMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub scheme: SchemeSection,
    pub time: TimeSection,
    pub initial: InitialCondition,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub forcing: ForcingSection,
    #[serde(default)]
    pub monitors: MonitorSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub cells: usize,
    pub length: f64,
    #[serde(default)]
    pub origin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub eps: f64,
    pub mobility: Mobility,
}

/// `S₂` either fixed or resolved to the bound-preserving minimum at start.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum S2Setting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for S2Setting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            S2Setting::Auto => s.serialize_str("auto"),
            S2Setting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for S2Setting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(S2Setting::Fixed(v)),
            Raw::Text(t) if t == "auto" => Ok(S2Setting::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "s2 must be a number or \"auto\", got \"{t}\""
            ))),
        }
    }
}

fn default_s1() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: SchemeKind,
    #[serde(default = "default_s1")]
    pub s1: f64,
    #[serde(default)]
    pub s2: S2Setting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub horizon: f64,
    pub steps: StepMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let k = KrylovConfig::default();
        Self {
            rel_tol: k.rel_tol,
            abs_tol: k.abs_tol,
            max_iter: k.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ForcingSection {
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorSection {
    pub mbp: MonitorMode,
    pub energy: MonitorMode,
    pub mbp_slack: f64,
    pub energy_slack: f64,
    pub energy_bound_slack: f64,
}

impl Default for MonitorSection {
    fn default() -> Self {
        let p = MonitorPolicy::default();
        Self {
            mbp: p.mbp,
            energy: p.energy,
            mbp_slack: p.mbp_slack,
            energy_slack: p.energy_slack,
            energy_bound_slack: p.energy_bound_slack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Write every k-th step record to the CSV (0 disables the CSV).
    pub csv_every: usize,
    /// Write a field snapshot every k-th step (0 disables snapshots).
    pub snapshot_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "output".into(),
            csv_every: 1,
            snapshot_every: 0,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::ConfigParse {
            line,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes a configuration back to TOML.
pub fn serialize_config(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| invalid("<document>", e.to_string()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.grid.dim, self.grid.cells, self.grid.length)
            .map_err(|e| invalid("grid", e.to_string()))?;
        if !self.grid.origin.is_finite() {
            return Err(invalid("grid.origin", "must be finite"));
        }
        if !(self.physics.eps > 0.0 && self.physics.eps.is_finite()) {
            return Err(invalid("physics.eps", format!("must be > 0, got {}", self.physics.eps)));
        }
        self.physics.mobility.validate().map_err(|m| invalid("physics.mobility", m))?;
        if !(self.scheme.s1 >= 2.0 && self.scheme.s1.is_finite()) {
            return Err(invalid(
                "scheme.s1",
                format!("bound preservation requires S₁ ≥ 2, got {}", self.scheme.s1),
            ));
        }
        if let S2Setting::Fixed(v) = self.scheme.s2 {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid("scheme.s2", format!("must be >= 0, got {v}")));
            }
        }
        if !(self.time.horizon >= 0.0 && self.time.horizon.is_finite()) {
            return Err(invalid("time.horizon", format!("must be >= 0, got {}", self.time.horizon)));
        }
        self.time.steps.validate().map_err(|m| invalid("time.steps", m))?;
        self.initial.validate().map_err(|m| invalid("initial", m))?;
        if self.initial == InitialCondition::Bubbles3d && self.grid.dim != 3 {
            return Err(invalid("initial", "bubbles3d needs a 3-D grid"));
        }
        if matches!(self.initial, InitialCondition::Flower { .. }) && self.grid.dim != 2 {
            return Err(invalid("initial", "flower needs a 2-D grid"));
        }
        let s = &self.solver;
        if !(s.rel_tol > 0.0 && s.abs_tol > 0.0) {
            return Err(invalid("solver", "tolerances must be > 0"));
        }
        if s.max_iter == 0 {
            return Err(invalid("solver.max_iter", "must be >= 1"));
        }
        let m = &self.monitors;
        for (name, v) in [
            ("monitors.mbp_slack", m.mbp_slack),
            ("monitors.energy_slack", m.energy_slack),
            ("monitors.energy_bound_slack", m.energy_bound_slack),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.dim, self.grid.cells, self.grid.length)
    }

    /// Scheme parameters with `S₂ = "auto"` resolved on this grid.
    pub fn scheme_params(&self) -> Result<SchemeParams> {
        let grid = self.grid_spec()?;
        let base = SchemeParams::new(self.scheme.kind, self.physics.eps, self.scheme.s1, 0.0)?;
        let s2 = match self.scheme.s2 {
            S2Setting::Auto => compute_s2_min(&base, &self.physics.mobility, &grid),
            S2Setting::Fixed(v) => v,
        };
        base.with_s2(s2)
    }

    pub fn krylov(&self) -> KrylovConfig {
        KrylovConfig {
            rel_tol: self.solver.rel_tol,
            abs_tol: self.solver.abs_tol,
            max_iter: self.solver.max_iter,
            ..KrylovConfig::default()
        }
    }

    pub fn manufactured(&self) -> ManufacturedSolution {
        ManufacturedSolution {
            eps: self.physics.eps,
            mobility: self.physics.mobility,
            origin: self.grid.origin,
        }
    }

    pub fn simulation(&self) -> Result<Simulation> {
        let m = &self.monitors;
        Ok(Simulation {
            params: self.scheme_params()?,
            mobility: self.physics.mobility,
            horizon: self.time.horizon,
            steps: self.time.steps,
            solver: self.krylov(),
            forcing: self.forcing.enabled.then(|| self.manufactured()),
            monitors: MonitorPolicy {
                mbp: m.mbp,
                energy: m.energy,
                mbp_slack: m.mbp_slack,
                energy_slack: m.energy_slack,
                energy_bound_slack: m.energy_bound_slack,
            },
        })
    }

    pub fn initial_field(&self) -> Result<Field> {
        Ok(self
            .initial
            .build(self.grid_spec()?, self.grid.origin, self.physics.eps))
    }
}

/// Names accepted by [`preset_experiment`].
pub const PRESETS: [&str; 5] = [
    "convergence_forced",
    "coarsening_2d",
    "adaptive_2d",
    "mobility_effect_2d",
    "bubbles_3d",
];

/// Step counts of the temporal refinement study.
pub const CONVERGENCE_STEPS: [usize; 5] = [20, 40, 80, 160, 320];

/// Uniform steps of the coarsening study.
pub const COARSENING_TAUS: [f64; 3] = [0.5, 0.1, 0.025];

/// Mobility families of the degeneracy study: `(1 - φ²)^m` for
/// `m = 0, 1, 3, 5` (with `m = 0` meaning constant mobility) and one-sided.
pub fn mobility_effect_family() -> [Mobility; 5] {
    [
        Mobility::Constant { value: 1.0 },
        Mobility::TwoSided { exponent: 1.0 },
        Mobility::TwoSided { exponent: 3.0 },
        Mobility::TwoSided { exponent: 5.0 },
        Mobility::OneSided,
    ]
}

const COARSENING_SEED: u64 = 2024;

fn base_2d_unit(eps: f64, mobility: Mobility, kind: SchemeKind, time: TimeSection, initial: InitialCondition) -> RunConfig {
    RunConfig {
        grid: GridSection {
            dim: 2,
            cells: 128,
            length: 1.0,
            origin: 0.0,
        },
        physics: PhysicsSection { eps, mobility },
        scheme: SchemeSection {
            kind,
            s1: 2.0,
            s2: S2Setting::Auto,
        },
        time,
        initial,
        solver: SolverSection::default(),
        forcing: ForcingSection::default(),
        monitors: MonitorSection::default(),
        output: OutputSection::default(),
    }
}

/// Parameter sets of the reference experiments.
pub fn preset_experiment(name: &str) -> Result<RunConfig> {
    let random_init = InitialCondition::RandomUniform {
        lo: -0.8,
        hi: 0.8,
        seed: COARSENING_SEED,
    };
    let cfg = match name {
        "convergence_forced" => RunConfig {
            grid: GridSection {
                dim: 2,
                cells: 400,
                length: 2.0 * PI,
                origin: 0.0,
            },
            physics: PhysicsSection {
                eps: 0.01,
                mobility: Mobility::Constant { value: 1.0 },
            },
            scheme: SchemeSection {
                kind: SchemeKind::DsBE,
                s1: 2.0,
                s2: S2Setting::Auto,
            },
            time: TimeSection {
                horizon: 1.0,
                steps: StepMode::Uniform { tau: 1.0 / 320.0 },
            },
            initial: InitialCondition::Manufactured,
            solver: SolverSection::default(),
            forcing: ForcingSection { enabled: true },
            monitors: MonitorSection {
                mbp: MonitorMode::Off,
                energy: MonitorMode::Off,
                ..MonitorSection::default()
            },
            output: OutputSection::default(),
        },
        "coarsening_2d" => base_2d_unit(
            0.01,
            Mobility::TwoSided { exponent: 1.0 },
            SchemeKind::DsBE,
            TimeSection {
                horizon: 20.0,
                steps: StepMode::Uniform { tau: 0.1 },
            },
            random_init,
        ),
        "adaptive_2d" => base_2d_unit(
            0.01,
            Mobility::Constant { value: 1.0 },
            SchemeKind::DsCN,
            TimeSection {
                horizon: 1000.0,
                steps: StepMode::Adaptive {
                    tau_max: 0.25,
                    tau_min: 0.025,
                    alpha: 1e10,
                },
            },
            random_init,
        ),
        "mobility_effect_2d" => base_2d_unit(
            0.01,
            Mobility::TwoSided { exponent: 1.0 },
            SchemeKind::DsCN,
            TimeSection {
                horizon: 200.0,
                steps: StepMode::Adaptive {
                    tau_max: 0.25,
                    tau_min: 0.025,
                    alpha: 1e7,
                },
            },
            InitialCondition::Flower { lambda: 0.01 * 0.01 },
        ),
        "bubbles_3d" => RunConfig {
            grid: GridSection {
                dim: 3,
                cells: 64,
                length: 1.0,
                origin: -0.5,
            },
            physics: PhysicsSection {
                eps: 0.03,
                mobility: Mobility::Constant { value: 1.0 },
            },
            scheme: SchemeSection {
                kind: SchemeKind::DsCN,
                s1: 2.0,
                s2: S2Setting::Auto,
            },
            time: TimeSection {
                horizon: 20.0,
                steps: StepMode::Adaptive {
                    tau_max: 0.1,
                    tau_min: 0.01,
                    alpha: 1e7,
                },
            },
            initial: InitialCondition::Bubbles3d,
            solver: SolverSection::default(),
            forcing: ForcingSection::default(),
            monitors: MonitorSection::default(),
            output: OutputSection::default(),
        },
        other => {
            return Err(invalid(
                "preset",
                format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", ")),
            ))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
dim = 2
cells = 16
length = 1

[physics]
eps = 0.05
mobility = { kind = "one_sided" }

[scheme]
kind = "dscn"

[time]
horizon = 1.0
steps = { mode = "uniform", tau = 0.1 }

[initial]
kind = "constant"
value = 0.25
"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.scheme.s2, S2Setting::Auto);
        assert_eq!(cfg.scheme.s1, 2.0);
        assert_eq!(cfg.solver.rel_tol, 1e-10);
        assert_eq!(cfg.solver.max_iter, 500);
        assert_eq!(cfg.monitors.mbp, MonitorMode::Warn);
        assert!(!cfg.forcing.enabled);
        assert_eq!(cfg.grid.origin, 0.0);
    }

    #[test]
    fn s1_below_two_is_rejected() {
        let text = MINIMAL.replace("kind = \"dscn\"", "kind = \"dscn\"\ns1 = 1.5");
        match parse_config(&text) {
            Err(Error::ConfigInvalid { field, message }) => {
                assert_eq!(field, "scheme.s1");
                assert!(message.contains("S₁ ≥ 2"), "{message}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let text = MINIMAL.replace("eps = 0.05", "eps = 0.05\nepsilon = 0.1");
        match parse_config(&text) {
            Err(Error::ConfigParse { line, message }) => {
                assert!(message.contains("epsilon"), "{message}");
                assert!((7..=9).contains(&line), "line {line}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = MINIMAL.replace("tau = 0.1", "tau = 0.1, gamma = 2");
        assert!(matches!(parse_config(&text), Err(Error::ConfigParse { .. })));
    }

    #[test]
    fn bad_values_name_the_field() {
        let text = MINIMAL.replace("mobility = { kind = \"one_sided\" }", "mobility = { kind = \"two_sided\", exponent = -1 }");
        assert!(matches!(parse_config(&text), Err(Error::ConfigInvalid { field, .. }) if field == "physics.mobility"));
        let text = MINIMAL.replace("[scheme]\nkind = \"dscn\"", "[scheme]\nkind = \"dscn\"\ns2 = \"big\"");
        assert!(matches!(parse_config(&text), Err(Error::ConfigParse { .. })));
        let text = MINIMAL.replace("[scheme]\nkind = \"dscn\"", "[scheme]\nkind = \"dscn\"\ns2 = 3");
        assert_eq!(parse_config(&text).unwrap().scheme.s2, S2Setting::Fixed(3.0));
    }

    #[test]
    fn presets_round_trip() {
        for name in PRESETS {
            let cfg = preset_experiment(name).unwrap();
            cfg.validate().unwrap();
            let text = serialize_config(&cfg).unwrap();
            let back = parse_config(&text).unwrap();
            assert_eq!(back, cfg, "{name}:\n{text}");
        }
        assert!(preset_experiment("nope").is_err());
    }

    #[test]
    fn preset_stabilization_constants() {
        let s2 = |name| preset_experiment(name).unwrap().scheme_params().unwrap().s2();
        assert!((s2("convergence_forced") - 0.8195).abs() < 5e-5);
        assert!((s2("coarsening_2d") - 4.5728).abs() < 5e-5);
        assert!((s2("bubbles_3d") - 36.3561).abs() < 5e-5);
    }

    #[test]
    fn config_builds_runtime_objects() {
        let cfg = parse_config(MINIMAL).unwrap();
        let sim = cfg.simulation().unwrap();
        assert!(sim.forcing.is_none());
        let phi = cfg.initial_field().unwrap();
        assert_eq!(phi.values().len(), 256);
        assert!(phi.values().iter().all(|&v| v == 0.25));
    }
}
