//! Report emission: CSV (RFC-4180 quoting), plain-text summaries, and
//! output-file naming. Filenames embed the command, seed, and config
//! hash; a run writes nothing until the output directory proved writable.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;

/// Create the output directory and prove it writable before any
/// computation starts.
pub fn prepare_out_dir(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"ok")?;
    fs::remove_file(&probe)?;
    Ok(())
}

pub fn out_file(cfg: &ExperimentConfig, kind: &str, ext: &str) -> PathBuf {
    cfg.out_dir.join(format!(
        "{}_seed{}_{}_{}.{ext}",
        cfg.command.name(),
        cfg.seed,
        cfg.hash(),
        kind
    ))
}

fn quote_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Write a CSV with a mandatory header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| quote_field(h)).collect::<Vec<_>>().join(","));
    out.push_str("\r\n");
    for row in rows {
        out.push_str(&row.iter().map(|f| quote_field(f)).collect::<Vec<_>>().join(","));
        out.push_str("\r\n");
    }
    fs::write(path, out)
}

pub fn write_text(path: &Path, body: &str) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(body.as_bytes())
}

/// Deterministic float formatting for report files.
pub fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v:.12e}")
    }
}
