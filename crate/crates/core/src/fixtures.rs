//! Domains, maps and experiment configs shipped with the crate.

use crate::domain_io::{parse_domain, DomainFile};
use crate::planning::PlanningTask;

pub const DOMAINS: [&str; 3] = ["bridge", "gold", "gold-or-gem"];

pub fn domain_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "bridge" => include_str!("../data/domains/bridge.dom"),
        "gold" => include_str!("../data/domains/gold.dom"),
        "gold-or-gem" => include_str!("../data/domains/gold-or-gem.dom"),
        _ => return None,
    })
}

pub fn domain(name: &str) -> Option<DomainFile> {
    domain_text(name).map(|t| parse_domain(t).expect("bundled domain parses"))
}

/// The task of the same name from the bundled domain of that name.
pub fn task(name: &str) -> Option<PlanningTask> {
    domain(name)?.task(name).cloned()
}

/// Directory holding the bundled data files, for tools that need paths.
pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Path of a bundled map, e.g. `bridge-7` or `gold-15-2`.
pub fn map_path(name: &str) -> std::path::PathBuf {
    data_dir().join("maps").join(format!("{name}.map"))
}

pub fn map(name: &str) -> std::io::Result<crate::craftworld::GridMap> {
    let text = std::fs::read_to_string(map_path(name))?;
    crate::craftworld::parse_map(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Path of a bundled experiment config, e.g. `desk-bridge`.
pub fn experiment_path(name: &str) -> std::path::PathBuf {
    data_dir().join("experiments").join(format!("{name}.exp"))
}
