//! Result files: one JSON document per command plus tidy CSV series.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub struct Output {
    dir: PathBuf,
    command: String,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), command: command.to_string(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    /// Writes `<command>_<series>.csv`.
    pub fn csv<I, R>(&mut self, series: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.path(&format!("{}_{series}.csv", self.command));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes a file produced by a library writer under `<command>_<name>`.
    pub fn raw(&mut self, name: &str, write: impl FnOnce(fs::File) -> Result<()>) -> Result<()> {
        let path = self.path(&format!("{}_{name}", self.command));
        let f = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        write(f)
    }

    /// Writes `<command>.json` and echoes it on stdout.
    pub fn finish(mut self, seed: u64, config: Value, result: impl Serialize) -> Result<()> {
        let name = format!("{}.json", self.command);
        let path = self.path(&name);
        let doc = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": config,
            "files": self.files,
            "result": result,
        });
        let text = serde_json::to_string_pretty(&doc)?;
        let mut f = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        println!("{text}");
        Ok(())
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}
