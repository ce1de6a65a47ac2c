//! Output directory handling and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::Resolved;
use crate::SCHEMA_VERSION;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub file: String,
    /// Sweep point the file belongs to, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<serde_json::Value>,
}

/// Everything needed to reproduce the outputs. Deliberately free of
/// timestamps and host details so that repeated runs are byte-identical.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub package: String,
    pub version: String,
    pub core_version: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &Resolved) -> Self {
        let mut config = serde_json::to_value(cfg).expect("config serializes");
        // neither affects the results; artifact paths are relative to the manifest
        if let Some(map) = config.as_object_mut() {
            map.remove("threads");
            map.remove("output_dir");
        }
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: cphase_mps::VERSION.to_string(),
            config,
            artifacts: Vec::new(),
        }
    }

    pub fn add<P: Serialize>(&mut self, file: &str, point: Option<&P>) {
        let point = point.map(|p| serde_json::to_value(p).expect("point serializes"));
        self.artifacts.push(Artifact { file: file.to_string(), point });
    }
}

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn create_file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn write_csv<T: Serialize, P: Serialize>(
        &self,
        manifest: &mut Manifest,
        name: &str,
        rows: &[T],
        point: Option<&P>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.create_file(name)?);
        for row in rows {
            w.serialize(row).with_context(|| format!("writing {name}"))?;
        }
        w.flush()?;
        manifest.add(name, point);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, manifest: &mut Manifest, name: &str, value: &T) -> Result<()> {
        let mut w = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        manifest.add::<()>(name, None);
        Ok(())
    }

    pub fn finish(&self, manifest: Manifest) -> Result<()> {
        let mut w = self.create_file(MANIFEST)?;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}
