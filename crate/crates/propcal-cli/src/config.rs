//! Run configuration: merges command-line flags over an optional TOML file
//! and resolves the design specification. Unknown keys in the file are
//! rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use propcal::data::{Dataset, DesignSpec, Term};
use propcal::loss::LossKind;
use serde::Deserialize;

use crate::FitFlags;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub treatment: Option<String>,
    pub outcome: Option<String>,
    pub loss: Option<String>,
    pub lambda: Option<f64>,
    pub cv: Option<bool>,
    pub cv_folds: Option<usize>,
    pub grid_subdiv: Option<u32>,
    pub grid_depth: Option<u32>,
    pub seed: Option<u64>,
    pub standardize: Option<bool>,
    pub interactions: Option<bool>,
    pub min_nonzero: Option<usize>,
    pub out_prefix: Option<PathBuf>,
    pub shared_lambda: Option<bool>,
    pub design: Option<DesignSection>,
}

/// Explicit term selection; omitted sections fall back to the flag-driven
/// defaults (all main effects, optional all pairwise interactions).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub main_effects: Option<Vec<String>>,
    pub interactions: Option<Vec<[String; 2]>>,
    pub squares: Option<Vec<String>>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub treatment: String,
    pub outcome: Option<String>,
    pub loss: String,
    pub lambda: Option<f64>,
    pub cv: bool,
    pub cv_folds: usize,
    pub grid_subdiv: u32,
    pub grid_depth: u32,
    pub seed: u64,
    pub standardize: bool,
    pub interactions: bool,
    pub min_nonzero: usize,
    pub out_prefix: PathBuf,
    pub shared_lambda: bool,
    pub main_effects: Option<Vec<String>>,
    pub explicit_interactions: Option<Vec<(String, String)>>,
    pub squares: Vec<String>,
}

pub fn resolve(flags: &FitFlags, default_loss: &str) -> Result<RunConfig> {
    let file: FileConfig = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let design = file.design.unwrap_or_default();

    let input = flags
        .input
        .clone()
        .or(file.input)
        .context("missing required option --input")?;
    let treatment = flags
        .treatment
        .clone()
        .or(file.treatment)
        .context("missing required option --treatment")?;
    let out_prefix = flags
        .out_prefix
        .clone()
        .or(file.out_prefix)
        .context("missing required option --out-prefix")?;
    let loss = flags
        .loss
        .clone()
        .or(file.loss)
        .unwrap_or_else(|| default_loss.into());

    let config = RunConfig {
        input,
        treatment,
        outcome: flags.outcome.clone().or(file.outcome),
        loss,
        lambda: flags.lambda.or(file.lambda),
        cv: flags.cv || file.cv.unwrap_or(false),
        cv_folds: flags.cv_folds.or(file.cv_folds).unwrap_or(5),
        grid_subdiv: flags.grid_subdiv.or(file.grid_subdiv).unwrap_or(1),
        grid_depth: flags.grid_depth.or(file.grid_depth).unwrap_or(10),
        seed: flags.seed.or(file.seed).unwrap_or(1),
        standardize: flags.standardize || file.standardize.unwrap_or(false),
        interactions: flags.interactions || file.interactions.unwrap_or(false),
        min_nonzero: flags.min_nonzero.or(file.min_nonzero).unwrap_or(0),
        out_prefix,
        shared_lambda: flags.shared_lambda || file.shared_lambda.unwrap_or(false),
        main_effects: design.main_effects,
        explicit_interactions: design
            .interactions
            .map(|v| v.into_iter().map(|[a, b]| (a, b)).collect()),
        squares: design.squares.unwrap_or_default(),
    };
    if config.lambda.is_some() && config.cv {
        bail!("--lambda and --cv are mutually exclusive");
    }
    if let Some(l) = config.lambda {
        if !l.is_finite() || l < 0.0 {
            bail!("--lambda must be nonnegative, got {l}");
        }
    }
    Ok(config)
}

pub fn parse_loss(name: &str) -> Result<LossKind> {
    Ok(match name {
        "ml" => LossKind::Ml,
        "cal1" => LossKind::Cal1,
        "cal0" => LossKind::Cal0,
        "bal" => LossKind::Bal,
        other => bail!("unknown loss '{other}' (expected ml|cal1|cal0|bal)"),
    })
}

/// Builds the design specification from the resolved configuration.
pub fn design_spec(config: &RunConfig, dataset: &Dataset) -> Result<DesignSpec> {
    let mut terms: Vec<Term> = Vec::new();
    let mains: Vec<String> = match &config.main_effects {
        Some(list) => list.clone(),
        None => dataset.covariate_names().to_vec(),
    };
    terms.extend(mains.iter().cloned().map(Term::Main));
    match &config.explicit_interactions {
        Some(pairs) => {
            terms.extend(pairs.iter().map(|(a, b)| Term::interaction(a.clone(), b.clone())));
        }
        None if config.interactions => {
            for i in 0..mains.len() {
                for j in (i + 1)..mains.len() {
                    terms.push(Term::interaction(mains[i].clone(), mains[j].clone()));
                }
            }
        }
        None => {}
    }
    terms.extend(config.squares.iter().cloned().map(Term::Square));
    Ok(DesignSpec::new(terms, config.standardize, config.min_nonzero)?)
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let file = std::fs::File::open(&config.input)
        .with_context(|| format!("opening {}", config.input.display()))?;
    Ok(propcal::data::read_csv(
        file,
        &config.treatment,
        config.outcome.as_deref(),
    )?)
}

/// Report name for `out_prefix` with an extension appended.
pub fn out_path(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}
