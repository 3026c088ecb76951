use std::fs;
use std::path::{Path, PathBuf};

use cluster_expansion::config::OutputSpec;
use cluster_expansion::{Error, Result};
use serde::Serialize;

/// Writes the artifacts of one subcommand under a single directory.
pub struct Sink {
    dir: PathBuf,
    json: bool,
    csv: bool,
}

impl Sink {
    pub fn new(spec: &OutputSpec, dir_override: Option<&Path>) -> Result<Self> {
        let dir = dir_override.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&spec.dir));
        if spec.json || spec.csv {
            fs::create_dir_all(&dir)?;
        }
        Ok(Sink {
            dir,
            json: spec.json,
            csv: spec.csv,
        })
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if !self.json {
            return Ok(());
        }
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.dir.join(format!("{name}.json")), text)?;
        Ok(())
    }

    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        if !self.csv {
            return Ok(());
        }
        write_csv(fs::File::create(self.dir.join(format!("{name}.csv")))?, rows)
    }
}

pub fn write_csv<W: std::io::Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Input(format!("csv: {other:?}")),
    }
}

/// `{0,2}` style label for a set of sites.
pub fn support_label(sites: &[usize]) -> String {
    let inner: Vec<String> = sites.iter().map(|s| s.to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

/// `0:0 1:0` style label for correlation points (site:component).
pub fn points_label(points: &[(usize, usize)]) -> String {
    points.iter().map(|(x, c)| format!("{x}:{c}")).collect::<Vec<_>>().join(" ")
}
