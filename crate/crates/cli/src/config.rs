//! TOML run configuration: a registered base scenario recombined with new
//! control schedules and tolerances.
//!
//! ```toml
//! [system]
//! scenario = "polar"
//! x0 = [1.0, 0.5]
//!
//! [controls]
//! name = "late-switch"
//! u_switch_times = [0.4]
//! u_values = [[0.0, 0.0], [0.3, 1.0]]
//! u_point_values = [{ t = 0.8, value = [0.5, 1.5] }]
//! v_starts = [0.0, 0.5]
//! v_values = [[0.5], [-0.8]]
//!
//! [tolerances]
//! rtol = 1e-9
//! eps_accumulation = 1e-5
//! ```
//!
//! `[controls]` may instead name a registered pair with `preset = "modified"`.

use std::path::Path;

use impulseflow::chart::JacobianMode;
use impulseflow::scenarios::{self, NamedControls, Scenario};
use impulseflow::{BoxSet, ImpulsiveControl, OrdinaryControl, SolveConfig, SolveOverrides};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: SystemSection,
    pub controls: Option<ControlsSection>,
    #[serde(default)]
    pub tolerances: TolerancesSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub scenario: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub region: Option<RegionSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsSection {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub u_switch_times: Option<Vec<f64>>,
    pub u_values: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub u_point_values: Vec<PointValue>,
    pub v_starts: Option<Vec<f64>>,
    pub v_values: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointValue {
    pub t: f64,
    pub value: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSection {
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub flow_tol: Option<f64>,
    pub eps_accumulation: Option<f64>,
    pub max_steps: Option<usize>,
    pub jacobian: Option<JacobianMode>,
}

/// A scenario together with the controls and settings of one run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub controls: NamedControls,
    pub cfg: SolveConfig,
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

/// Combines `--scenario`, an optional config file and the command-line
/// overrides, which take precedence over `[tolerances]`.
pub fn resolve(
    scenario_flag: Option<&str>,
    config: Option<&RunConfig>,
    controls_flag: Option<&str>,
    overrides: &SolveOverrides,
) -> Result<Resolved, CliError> {
    let from_config = config.and_then(|c| c.system.scenario.as_deref());
    let name = match (scenario_flag, from_config) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Config(format!(
                "--scenario {a} conflicts with config scenario {b}"
            )))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => {
            return Err(CliError::Config(
                "no scenario given (use --scenario or a config file)".into(),
            ))
        }
    };
    let mut scenario = scenarios::by_name(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown scenario '{name}' (known: {})",
            scenarios::NAMES.join(", ")
        ))
    })?;

    let mut cfg = scenario.solve.clone();
    let mut controls = scenario.default_controls().clone();
    if let Some(config) = config {
        if let Some(x0) = &config.system.x0 {
            if x0.len() != scenario.spec.n() {
                return Err(CliError::Config(format!(
                    "x0 needs {} components",
                    scenario.spec.n()
                )));
            }
            scenario.x0 = x0.clone();
        }
        if let Some(r) = &config.system.region {
            scenario.region = BoxSet::new(r.lower.clone(), r.upper.clone())?;
        }
        if let Some(section) = &config.controls {
            controls = controls_from(&scenario, section)?;
        }
        apply_tolerances(&mut cfg, &config.tolerances);
    }
    if let Some(preset) = controls_flag {
        controls = preset_controls(&scenario, preset)?;
    }
    let cfg = overrides.apply(&cfg);
    cfg.integration.validate(scenario.spec.interval())?;
    Ok(Resolved {
        scenario,
        controls,
        cfg,
    })
}

fn preset_controls(scenario: &Scenario, name: &str) -> Result<NamedControls, CliError> {
    scenario.controls_named(name).cloned().ok_or_else(|| {
        let known: Vec<&str> = scenario.controls.iter().map(|c| c.name.as_str()).collect();
        CliError::Config(format!(
            "scenario {} has no controls '{name}' (known: {})",
            scenario.name,
            known.join(", ")
        ))
    })
}

fn controls_from(scenario: &Scenario, s: &ControlsSection) -> Result<NamedControls, CliError> {
    if let Some(preset) = &s.preset {
        let custom = s.u_switch_times.is_some()
            || s.u_values.is_some()
            || !s.u_point_values.is_empty()
            || s.v_starts.is_some()
            || s.v_values.is_some();
        if custom || s.name.is_some() {
            return Err(CliError::Config(
                "[controls] preset cannot be combined with a schedule".into(),
            ));
        }
        return preset_controls(scenario, preset);
    }
    let name = s.name.clone().unwrap_or_else(|| "custom".to_string());
    if scenario.controls_named(&name).is_some() {
        return Err(CliError::Config(format!(
            "control name '{name}' is reserved by the scenario"
        )));
    }
    let spec = &scenario.spec;
    let base = scenario.default_controls();
    let iv = spec.interval();
    let u = match (&s.u_switch_times, &s.u_values) {
        (Some(times), Some(values)) => ImpulsiveControl::piecewise_constant(
            spec.u_box().clone(),
            iv,
            times.clone(),
            values.clone(),
            s.u_point_values
                .iter()
                .map(|p| (p.t, p.value.clone()))
                .collect(),
        )?,
        (None, None) if base.ac.is_none() => base.u.with_point_values(
            s.u_point_values
                .iter()
                .map(|p| (p.t, p.value.clone()))
                .collect(),
        )?,
        (None, None) => {
            return Err(CliError::Config(
                "this scenario's controls cannot be recombined".into(),
            ))
        }
        _ => {
            return Err(CliError::Config(
                "u_switch_times and u_values must be given together".into(),
            ))
        }
    };
    let v = match (&s.v_starts, &s.v_values) {
        (Some(starts), Some(values)) => {
            OrdinaryControl::new(iv, starts.clone(), values.clone(), spec.v_set())?
        }
        (None, None) => base.v.clone(),
        _ => {
            return Err(CliError::Config(
                "v_starts and v_values must be given together".into(),
            ))
        }
    };
    Ok(NamedControls {
        name,
        u,
        v,
        ac: None,
    })
}

fn apply_tolerances(cfg: &mut SolveConfig, t: &TolerancesSection) {
    if let Some(x) = t.rtol {
        cfg.integration.rtol = x;
    }
    if let Some(x) = t.atol {
        cfg.integration.atol = x;
    }
    if let Some(x) = t.flow_tol {
        cfg.chart.flow_tol = x;
    }
    if let Some(x) = t.eps_accumulation {
        cfg.integration.eps_accumulation = x;
    }
    if let Some(x) = t.max_steps {
        cfg.integration.max_steps = x;
    }
    if let Some(x) = t.jacobian {
        cfg.chart.jac_mode = x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn schedule_replaces_default_controls() {
        let cfg = parse(
            r#"
            [system]
            scenario = "trivial"
            x0 = [0.0]
            [controls]
            u_switch_times = [0.25]
            u_values = [[0.0], [2.0]]
            [tolerances]
            rtol = 1e-8
            "#,
        );
        let r = resolve(None, Some(&cfg), None, &SolveOverrides::default()).unwrap();
        assert_eq!(r.controls.name, "custom");
        assert_eq!(r.controls.u.eval(0.3).unwrap(), vec![2.0]);
        assert_eq!(r.scenario.x0, vec![0.0]);
        assert_eq!(r.cfg.integration.rtol, 1e-8);
    }

    #[test]
    fn flags_override_config_tolerances() {
        let cfg =
            parse("[system]\nscenario = \"trivial\"\n[tolerances]\neps_accumulation = 1e-3\n");
        let over = SolveOverrides {
            tol: None,
            eps_accumulation: Some(1e-5),
        };
        let r = resolve(None, Some(&cfg), None, &over).unwrap();
        assert_eq!(r.cfg.integration.eps_accumulation, 1e-5);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(toml::from_str::<RunConfig>("[system]\nscenaro = \"x\"\n").is_err());
        let none = SolveOverrides::default();
        assert!(matches!(
            resolve(None, None, None, &none),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            resolve(Some("nope"), None, None, &none),
            Err(CliError::Config(_))
        ));
        let cfg = parse("[system]\nscenario = \"trivial\"\nx0 = [1.0, 2.0]\n");
        assert!(matches!(
            resolve(None, Some(&cfg), None, &none),
            Err(CliError::Config(_))
        ));
        let cfg = parse("[system]\nscenario = \"trivial\"\n");
        assert!(matches!(
            resolve(Some("polar"), Some(&cfg), None, &none),
            Err(CliError::Config(_))
        ));
        let cfg = parse("[system]\nscenario = \"trivial\"\n[controls]\nu_values = [[0.0]]\n");
        assert!(matches!(
            resolve(None, Some(&cfg), None, &none),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn preset_selects_registered_pair() {
        let cfg = parse("[system]\nscenario = \"example25\"\n[controls]\npreset = \"modified\"\n");
        let r = resolve(None, Some(&cfg), None, &SolveOverrides::default()).unwrap();
        assert_eq!(r.controls.name, "modified");
    }
}
