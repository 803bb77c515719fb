//! Reproduction recipes: layout checks and optional execution against the
//! thresholds listed in each recipe's `expected/checks.toml`.
//!
//! ```text
//! recipes/
//!   index.toml            recipes = ["structural", ...]
//!   README.md             lists every recipe by name
//!   <name>/config.toml    run configuration (benchmark.suites selects the suites)
//!   <name>/README.md
//!   <name>/expected/checks.toml
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;

use crate::config::RunConfig;
use crate::error::{Result, TadError};
use crate::eval::experiment::{run_experiment_to_dir, CancelToken};
use crate::eval::suites::suite_spec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecipeScale {
    Smoke,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckScale {
    #[default]
    Any,
    Smoke,
    Full,
}

impl CheckScale {
    fn applies(self, run: RecipeScale) -> bool {
        match self {
            CheckScale::Any => true,
            CheckScale::Smoke => run == RecipeScale::Smoke,
            CheckScale::Full => run == RecipeScale::Full,
        }
    }
}

/// One threshold on a value of a result CSV.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    /// Path relative to the recipe's output directory.
    pub file: String,
    /// Column filters selecting exactly one row; numeric fields compare by value.
    #[serde(rename = "where")]
    pub filter: BTreeMap<String, String>,
    pub column: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// The value must strictly exceed the same column of this other row.
    pub exceeds: Option<BTreeMap<String, String>>,
    /// The value must be at least the same column of this other row.
    pub at_least: Option<BTreeMap<String, String>>,
    /// The value must lie strictly within `tolerance` of this other row.
    pub near: Option<BTreeMap<String, String>>,
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub scale: CheckScale,
    /// Acceptance criterion this check backs, if any.
    pub criterion: Option<u32>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    /// Files every run must produce, relative to the recipe's output directory.
    pub files: Vec<String>,
    /// Configuration overrides applied for smoke-scale runs.
    #[serde(default)]
    pub smoke: toml::Table,
    #[serde(default, rename = "check")]
    pub checks: Vec<Check>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    recipes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecipeReport {
    pub name: String,
    pub problems: Vec<String>,
    pub executed: bool,
    pub seconds: f64,
}

impl RecipeReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Recipe names from `index.toml`, in order.
pub fn recipe_names(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join("index.toml");
    let text = std::fs::read_to_string(&path).map_err(|e| TadError::io(&path, e))?;
    let index: Index =
        toml::from_str(&text).map_err(|e| TadError::Config(format!("{}: {}", path.display(), e.message())))?;
    Ok(index.recipes)
}

fn read_expected(path: &Path) -> Result<Expected> {
    let text = std::fs::read_to_string(path).map_err(|e| TadError::io(path, e))?;
    toml::from_str(&text).map_err(|e| TadError::Config(format!("{}: {}", path.display(), e.message())))
}

/// Effective configuration of a recipe at the given scale.
pub fn recipe_config(recipe_dir: &Path, scale: RecipeScale) -> Result<RunConfig> {
    let config_path = recipe_dir.join("config.toml");
    let base = std::fs::read_to_string(&config_path).map_err(|e| TadError::io(&config_path, e))?;
    match scale {
        RecipeScale::Full => RunConfig::from_toml_str(&base),
        RecipeScale::Smoke => {
            let expected = read_expected(&recipe_dir.join("expected").join("checks.toml"))?;
            let overlay = toml::to_string(&expected.smoke)
                .map_err(|e| TadError::Config(format!("smoke overrides: {e}")))?;
            RunConfig::from_layers(&[&base, &overlay])
        }
    }
}

fn same_value(a: &str, b: &str) -> bool {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0),
        _ => a.trim() == b.trim(),
    }
}

fn lookup(file: &Path, filter: &BTreeMap<String, String>, column: &str) -> std::result::Result<f64, String> {
    let mut reader = csv::Reader::from_path(file).map_err(|e| format!("{}: {e}", file.display()))?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("{}: no column '{name}'", file.display()))
    };
    let target = col(column)?;
    let filters = filter
        .iter()
        .map(|(k, v)| Ok((col(k)?, v.as_str())))
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let mut found = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        if filters.iter().all(|(i, v)| same_value(&rec[*i], v)) {
            found.push(rec[target].to_string());
        }
    }
    match found.as_slice() {
        [one] => one
            .parse()
            .map_err(|_| format!("{}: '{one}' in column {column} is not a number", file.display())),
        [] => Err(format!("{}: no row matches {filter:?}", file.display())),
        _ => Err(format!("{}: {} rows match {filter:?}", file.display(), found.len())),
    }
}

fn evaluate(check: &Check, out: &Path) -> std::result::Result<(), String> {
    let file = out.join(&check.file);
    let v = lookup(&file, &check.filter, &check.column)?;
    let tag = check.criterion.map(|c| format!(" (criterion {c})")).unwrap_or_default();
    let what = format!("{} {:?} {}{tag}", check.file, check.filter, check.column);
    if v.is_nan() {
        return Err(format!("{what} is NaN"));
    }
    if let Some(lo) = check.min {
        if v < lo {
            return Err(format!("{what} = {v} below {lo}"));
        }
    }
    if let Some(hi) = check.max {
        if v > hi {
            return Err(format!("{what} = {v} above {hi}"));
        }
    }
    if let Some(other) = &check.exceeds {
        let w = lookup(&file, other, &check.column)?;
        if !(v > w) {
            return Err(format!("{what} = {v} does not exceed {w} of {other:?}"));
        }
    }
    if let Some(other) = &check.at_least {
        let w = lookup(&file, other, &check.column)?;
        if !(v >= w) {
            return Err(format!("{what} = {v} is below {w} of {other:?}"));
        }
    }
    if let Some(other) = &check.near {
        let tol = check
            .tolerance
            .ok_or_else(|| format!("{what}: 'near' needs a tolerance"))?;
        let w = lookup(&file, other, &check.column)?;
        if !((v - w).abs() < tol) {
            return Err(format!("{what} = {v} is not within {tol} of {w} of {other:?}"));
        }
    }
    Ok(())
}

/// Runs the recipe's suites into `out` at `scale`.
pub fn run_recipe(recipe_dir: &Path, scale: RecipeScale, out: &Path) -> Result<()> {
    let cfg = recipe_config(recipe_dir, scale)?;
    let opts = cfg.suite_options();
    let cancel = CancelToken::new();
    for &suite in &cfg.benchmark.suites {
        let spec = suite_spec(suite, &opts)?;
        run_experiment_to_dir(&spec, &out.join(suite.as_str()), suite.table(), &cancel)?;
    }
    Ok(())
}

fn check_layout(dir: &Path, name: &str) -> (Vec<String>, Option<Expected>) {
    let rdir = dir.join(name);
    let mut problems = Vec::new();
    if !rdir.is_dir() {
        problems.push(format!("{name}: recipe directory missing"));
        return (problems, None);
    }
    if !rdir.join("README.md").is_file() {
        problems.push(format!("{name}: README.md missing"));
    }
    if !rdir.join("expected").is_dir() {
        problems.push(format!("{name}: expected/ missing"));
    }
    if !rdir.join("config.toml").is_file() {
        problems.push(format!("{name}: config.toml missing"));
    }
    let expected = match read_expected(&rdir.join("expected").join("checks.toml")) {
        Ok(e) => Some(e),
        Err(e) => {
            problems.push(format!("{name}: {e}"));
            None
        }
    };
    if problems.is_empty() {
        for scale in [RecipeScale::Full, RecipeScale::Smoke] {
            match recipe_config(&rdir, scale) {
                Ok(cfg) if cfg.benchmark.suites.is_empty() => {
                    problems.push(format!("{name}: config selects no suite"))
                }
                Ok(_) => {}
                Err(e) => problems.push(format!("{name}: {scale:?} config: {e}")),
            }
        }
    }
    (problems, expected)
}

/// Checks every recipe's layout and, when `scale` is given, executes it under
/// `work` and evaluates its checks.
pub fn validate_recipes(dir: &Path, scale: Option<RecipeScale>, work: &Path) -> Result<Vec<RecipeReport>> {
    let names = recipe_names(dir)?;
    let mut reports = Vec::new();
    let listing = std::fs::read_to_string(dir.join("README.md")).unwrap_or_default();
    let mut on_disk: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| TadError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    on_disk.sort();
    let mut stray: Vec<String> = on_disk.into_iter().filter(|d| !names.contains(d)).collect();
    stray.retain(|d| !d.starts_with('.'));
    if !stray.is_empty() {
        reports.push(RecipeReport {
            name: "index".into(),
            problems: vec![format!("directories not listed in index.toml: {stray:?}")],
            executed: false,
            seconds: 0.0,
        });
    }
    for name in &names {
        let clock = Instant::now();
        let (mut problems, expected) = check_layout(dir, name);
        if !listing.contains(&format!("`{name}`")) {
            problems.push(format!("{name}: not listed in recipes/README.md"));
        }
        let mut executed = false;
        if let (Some(scale), Some(expected), true) = (scale, expected, problems.is_empty()) {
            let out: PathBuf = work.join(name);
            match run_recipe(&dir.join(name), scale, &out) {
                Ok(()) => {
                    executed = true;
                    for f in &expected.files {
                        if !out.join(f).is_file() {
                            problems.push(format!("{name}: expected output {f} missing"));
                        }
                    }
                    for check in expected.checks.iter().filter(|c| c.scale.applies(scale)) {
                        if let Err(msg) = evaluate(check, &out) {
                            problems.push(format!("{name}: {msg}"));
                        }
                    }
                }
                Err(e) => problems.push(format!("{name}: run failed: {e}")),
            }
        }
        reports.push(RecipeReport {
            name: name.clone(),
            problems,
            executed,
            seconds: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_filters_compare_by_value() {
        assert!(same_value("5.0000000000000003e-2", "0.05"));
        assert!(!same_value("0.1", "0.05"));
        assert!(same_value("late", "late"));
    }
}
