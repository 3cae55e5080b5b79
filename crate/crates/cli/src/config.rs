//! Scenario configuration files.
//!
//! The format is TOML: an optional `[defaults]` table plus one
//! `[scenario.<id>]` table per scenario, all sharing the same keys. A
//! scenario value overrides the default; `n`, `p`, `replicates`, and
//! `estimators` must be present after merging.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use mhr_core::{CovariateSet, Estimator, GeneratorParams, ScenarioConfig};
use serde::Deserialize;

/// The bundled full-study configuration.
pub const PAPER_SCENARIOS: &str = include_str!("../../../configs/paper_scenarios.toml");

/// Names under which the bundled configuration can be requested.
const BUILTIN_NAMES: [&str; 2] = ["paper", "paper_scenarios"];

/// Returns the text of `--config`: a built-in name or a file path.
pub fn resolve_config_text(config: &str) -> Result<String> {
    if BUILTIN_NAMES.contains(&config) {
        return Ok(PAPER_SCENARIOS.to_string());
    }
    std::fs::read_to_string(config)
        .with_context(|| format!("cannot read config file {config}"))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Section {
    n: Option<usize>,
    p: Option<usize>,
    k: Option<f64>,
    target_mhr: Option<f64>,
    censoring_rate: Option<f64>,
    eta: Option<f64>,
    gamma: Option<f64>,
    alpha_z_star: Option<f64>,
    theta: Option<f64>,
    calibration_size: Option<usize>,
    beta_base: Option<Vec<f64>>,
    alpha: Option<Vec<f64>>,
    replicates: Option<usize>,
    base_seed: Option<u64>,
    estimators: Option<Vec<String>>,
    true_confounders: Option<Vec<usize>>,
}

impl Section {
    /// Scenario values win; absent ones fall back to the defaults section.
    fn merged_over(&self, defaults: &Section) -> Section {
        Section {
            n: self.n.or(defaults.n),
            p: self.p.or(defaults.p),
            k: self.k.or(defaults.k),
            target_mhr: self.target_mhr.or(defaults.target_mhr),
            censoring_rate: self.censoring_rate.or(defaults.censoring_rate),
            eta: self.eta.or(defaults.eta),
            gamma: self.gamma.or(defaults.gamma),
            alpha_z_star: self.alpha_z_star.or(defaults.alpha_z_star),
            theta: self.theta.or(defaults.theta),
            calibration_size: self.calibration_size.or(defaults.calibration_size),
            beta_base: self.beta_base.clone().or_else(|| defaults.beta_base.clone()),
            alpha: self.alpha.clone().or_else(|| defaults.alpha.clone()),
            replicates: self.replicates.or(defaults.replicates),
            base_seed: self.base_seed.or(defaults.base_seed),
            estimators: self.estimators.clone().or_else(|| defaults.estimators.clone()),
            true_confounders: self
                .true_confounders
                .clone()
                .or_else(|| defaults.true_confounders.clone()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    defaults: Section,
    scenario: BTreeMap<String, Section>,
}

/// Parses a configuration into scenario configs ordered by numeric id.
pub fn load_scenarios(text: &str) -> Result<Vec<ScenarioConfig>> {
    let file: ConfigFile = toml::from_str(text).context("config does not parse")?;
    if file.scenario.is_empty() {
        bail!("config defines no [scenario.<id>] sections");
    }
    let mut scenarios = Vec::with_capacity(file.scenario.len());
    for (key, section) in &file.scenario {
        let id: u32 = key
            .parse()
            .map_err(|_| anyhow!("scenario id {key:?} is not a number"))?;
        let merged = section.merged_over(&file.defaults);
        scenarios.push(
            build_scenario(id, &merged).with_context(|| format!("scenario {id}"))?,
        );
    }
    scenarios.sort_by_key(|s| s.id);
    Ok(scenarios)
}

fn build_scenario(id: u32, section: &Section) -> Result<ScenarioConfig> {
    let n = section.n.ok_or_else(|| anyhow!("missing required key n"))?;
    let p = section.p.ok_or_else(|| anyhow!("missing required key p"))?;
    let replicates =
        section.replicates.ok_or_else(|| anyhow!("missing required key replicates"))?;
    let tokens = section
        .estimators
        .as_ref()
        .ok_or_else(|| anyhow!("missing required key estimators"))?;

    let mut estimators = Vec::with_capacity(tokens.len());
    for token in tokens {
        let estimator = Estimator::parse_token(token).ok_or_else(|| {
            let valid: Vec<&str> = Estimator::ALL.iter().map(|e| e.label()).collect();
            anyhow!("unknown estimator {token:?}; valid tokens: {}", valid.join(", "))
        })?;
        if estimators.contains(&estimator) {
            bail!("estimator {token:?} is listed twice");
        }
        estimators.push(estimator);
    }

    let mut params = GeneratorParams::new(n, p);
    if let Some(v) = section.k {
        params.k = v;
    }
    if let Some(v) = section.target_mhr {
        params.target_mhr = v;
    }
    if let Some(v) = section.censoring_rate {
        params.censoring_rate = v;
    }
    if let Some(v) = section.eta {
        params.eta = v;
    }
    if let Some(v) = section.gamma {
        params.gamma = v;
    }
    if let Some(v) = section.alpha_z_star {
        params.alpha_z_star = Some(v);
    }
    if let Some(v) = section.theta {
        params.theta = Some(v);
    }
    if let Some(v) = section.calibration_size {
        params.calibration_size = v;
    }
    if let Some(v) = &section.beta_base {
        params.beta_base = v.clone();
    }
    if let Some(v) = &section.alpha {
        params.alpha = v.clone();
    }
    params.validate()?;

    let base_seed = section.base_seed.unwrap_or(0);
    let mut config = ScenarioConfig::new(id, params, replicates, estimators, base_seed);
    if let Some(indices) = &section.true_confounders {
        config.true_confounders = CovariateSet::new(indices.iter().copied())
            .context("true_confounders must be positive indices")?;
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_defines_twelve_scenarios() {
        let scenarios = load_scenarios(PAPER_SCENARIOS).unwrap();
        assert_eq!(scenarios.len(), 12);
        assert_eq!(
            scenarios.iter().map(|s| s.id).collect::<Vec<_>>(),
            (1..=12).collect::<Vec<_>>()
        );
        for s in &scenarios {
            assert_eq!(s.replicates, 1000);
            assert_eq!(s.base_seed, 20_260_814);
            assert_eq!(s.true_confounders.indices(), &[1, 2, 3, 4]);
            let has_all = s.estimators.contains(&Estimator::OracleAll);
            assert_eq!(has_all, s.params.n > s.params.p, "scenario {}", s.id);
        }
        let six = &scenarios[5];
        assert_eq!((six.params.n, six.params.p, six.params.k), (1000, 1000, 3.0));
        let ten = &scenarios[9];
        assert_eq!(ten.params.target_mhr, 0.5);
        let eleven = &scenarios[10];
        assert_eq!(eleven.params.censoring_rate, 0.2);
    }

    #[test]
    fn scenario_values_override_defaults() {
        let text = r#"
            [defaults]
            replicates = 5
            estimators = ["x_int"]
            k = 1.0

            [scenario.3]
            n = 100
            p = 10
            k = 2.5
        "#;
        let scenarios = load_scenarios(text).unwrap();
        assert_eq!(scenarios.len(), 1);
        assert_eq!(scenarios[0].id, 3);
        assert_eq!(scenarios[0].params.k, 2.5);
        assert_eq!(scenarios[0].replicates, 5);
        assert_eq!(scenarios[0].base_seed, 0);
    }

    #[test]
    fn helpful_errors_for_bad_configs() {
        let missing = "[scenario.1]\nn = 100\n";
        let err = load_scenarios(missing).unwrap_err();
        assert!(format!("{err:#}").contains("missing required key"));

        let unknown = "[scenario.1]\nn = 100\np = 10\nreplicates = 2\nestimators = [\"x_q\"]\n";
        let err = load_scenarios(unknown).unwrap_err();
        assert!(format!("{err:#}").contains("valid tokens"));

        let bad_id = "[scenario.one]\nn = 100\np = 10\nreplicates = 2\nestimators = [\"x_int\"]\n";
        let err = load_scenarios(bad_id).unwrap_err();
        assert!(format!("{err:#}").contains("not a number"));

        let typo = "[scenario.1]\nn = 100\np = 10\nreplicas = 2\n";
        assert!(load_scenarios(typo).is_err());
    }
}
