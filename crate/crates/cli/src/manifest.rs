use std::collections::BTreeMap;
use std::path::Path;

use gmfe::Result;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub graphons: Vec<String>,
    pub artifacts: Vec<String>,
    pub residuals: BTreeMap<String, f64>,
    pub passed: Option<bool>,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn write(&self, out: &Path) -> Result<()> {
        let path = out.join(format!("manifest_{}.json", self.command));
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
