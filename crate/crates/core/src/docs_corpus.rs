//! Design-decision ledger and configuration reference kept in `docs/`.
//!
//! Each ledger row names a code item; [`lint`] reports rows whose item no
//! longer exists and configuration keys missing from the reference.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::config::CONFIG_KEYS;
use crate::error::{Result, TadError};

pub const LEDGER_CSV: &str = "design_decisions.csv";
pub const LEDGER_MD: &str = "design_decisions.md";
pub const CONFIG_MD: &str = "config.md";

pub const MODULES: [&str; 11] = [
    "ndnum",
    "data_gen",
    "windowing",
    "backbone",
    "purify",
    "scoring",
    "decision",
    "attribution",
    "eval",
    "cli",
    "docs_corpus",
];

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct Decision {
    pub id: String,
    pub decision: String,
    pub module: String,
    pub rationale: String,
    pub code_ref: String,
}

pub fn read_ledger(path: &Path) -> Result<Vec<Decision>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| TadError::Data(format!("cannot read {}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| TadError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn render_markdown(rows: &[Decision]) -> String {
    let mut out = String::from(
        "# Design decisions\n\nGenerated from `design_decisions.csv`; edit the CSV and regenerate.\n\n\
         | ID | Module | Decision | Rationale | Code |\n|---|---|---|---|---|\n",
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | `{}` |\n",
            r.id,
            r.module,
            r.decision.replace('|', "\\|"),
            r.rationale.replace('|', "\\|"),
            r.code_ref
        ));
    }
    out
}

fn rust_sources(root: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            rust_sources(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
    Ok(())
}

/// Identifiers introduced by `const`, `static`, `fn`, `struct`, `enum` or `type`.
pub fn declared_items(src: &str) -> BTreeSet<String> {
    const KEYWORDS: [&str; 6] = ["const", "static", "fn", "struct", "enum", "type"];
    let mut items = BTreeSet::new();
    let tokens: Vec<&str> = src
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|s| !s.is_empty())
        .collect();
    for pair in tokens.windows(2) {
        if KEYWORDS.contains(&pair[0]) {
            items.insert(pair[1].to_string());
        }
    }
    items
}

pub fn workspace_items(crates_dir: &Path) -> Result<BTreeSet<String>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(crates_dir).map_err(|e| TadError::Data(e.to_string()))? {
        let src = entry.map_err(|e| TadError::Data(e.to_string()))?.path().join("src");
        if src.is_dir() {
            rust_sources(&src, &mut files).map_err(|e| TadError::Data(e.to_string()))?;
        }
    }
    let mut items = BTreeSet::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| TadError::Data(format!("{}: {e}", f.display())))?;
        items.extend(declared_items(&text));
    }
    Ok(items)
}

/// Keys written as `` `key` `` in the first column of a table row.
pub fn documented_keys(markdown: &str) -> BTreeSet<String> {
    markdown
        .lines()
        .filter_map(|l| l.strip_prefix("| `"))
        .filter_map(|l| l.split('`').next())
        .map(str::to_string)
        .collect()
}

/// Problems found in `docs_dir` against the sources under `crates_dir`.
pub fn lint(docs_dir: &Path, crates_dir: &Path) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let rows = read_ledger(&docs_dir.join(LEDGER_CSV))?;
    let items = workspace_items(crates_dir)?;
    let mut ids = BTreeSet::new();
    for r in &rows {
        if !ids.insert(r.id.clone()) {
            problems.push(format!("{}: duplicate id", r.id));
        }
        if !MODULES.contains(&r.module.as_str()) {
            problems.push(format!("{}: unknown module '{}'", r.id, r.module));
        }
        if !items.contains(&r.code_ref) && !CONFIG_KEYS.contains(&r.code_ref.as_str()) {
            problems.push(format!("{}: code_ref '{}' not found", r.id, r.code_ref));
        }
        if r.decision.trim().is_empty() || r.rationale.trim().is_empty() {
            problems.push(format!("{}: empty decision or rationale", r.id));
        }
    }
    match std::fs::read_to_string(docs_dir.join(LEDGER_MD)) {
        Ok(md) if md == render_markdown(&rows) => {}
        Ok(_) => problems.push(format!("{LEDGER_MD} is stale")),
        Err(e) => problems.push(format!("{LEDGER_MD}: {e}")),
    }
    let config_md = std::fs::read_to_string(docs_dir.join(CONFIG_MD))
        .map_err(|e| TadError::Data(format!("{CONFIG_MD}: {e}")))?;
    let documented = documented_keys(&config_md);
    for key in CONFIG_KEYS {
        if !documented.contains(*key) {
            problems.push(format!("{CONFIG_MD}: key '{key}' undocumented"));
        }
    }
    for key in &documented {
        if !CONFIG_KEYS.contains(&key.as_str()) {
            problems.push(format!("{CONFIG_MD}: documents unknown key '{key}'"));
        }
    }
    Ok(problems)
}
