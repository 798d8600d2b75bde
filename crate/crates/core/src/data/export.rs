//! Line-delimited dataset export: `client_id,clean_label,observed_label,f1,...,fD`.
//!
//! Floats are written in shortest round-trip form, so a re-read is bit-exact.

use std::io::{BufRead, Write};

use super::dataset::ClientDataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ExportedSample {
    pub client_id: usize,
    pub clean_label: usize,
    pub observed_label: usize,
    pub features: Vec<f64>,
}

pub fn write_samples<W: Write>(mut out: W, clients: &[ClientDataset]) -> Result<()> {
    for c in clients {
        for s in c.samples() {
            write!(out, "{},{},{}", c.client_id, s.clean, s.observed)?;
            for f in &s.features {
                write!(out, ",{f}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<ExportedSample>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse { line: n + 1, reason };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(bad(format!("expected at least 4 fields, got {}", fields.len())));
        }
        let int = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        let features =
            fields[3..].iter().map(|s| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")))).collect::<Result<Vec<_>>>()?;
        out.push(ExportedSample { client_id: int(fields[0])?, clean_label: int(fields[1])?, observed_label: int(fields[2])?, features });
    }
    Ok(out)
}
