//! Experiment registry. Every preset is a TOML file under `presets/`.

use crate::config::ExperimentConfig;
use crate::CliError;

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../presets/", $name, ".toml")))),*]
    };
}

pub const PRESETS: &[(&str, &str)] = presets![
    "fig1a",
    "fig1b",
    "fig1c",
    "fig1d",
    "fig2-sigma0.1",
    "fig2-sigma1",
    "fig2-sigma5",
    "fig3",
    "fig4-multistep",
    "fig4-singlestep",
    "fig4-linear",
    "fig5a",
    "fig5b",
    "fig5a-case1",
    "fig5a-case2a",
    "fig5b-case2b",
    "fig5b-case3-shared",
    "fig5b-case3-individual",
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| {
            CliError::Config(format!(
                "unknown preset {name:?}; available: {}",
                names().collect::<Vec<_>>().join(", ")
            ))
        })?;
    ExperimentConfig::from_toml(text)
        .map_err(|e| CliError::Config(format!("preset {name}: {e}")))
}
