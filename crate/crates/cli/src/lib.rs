//! Shared argument parsing and output helpers for the command line tools.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// Parses `start:stop:step` (inclusive, within half a step) or a comma list.
pub fn parse_values(arg: &str) -> Result<Vec<f64>> {
    let arg = arg.trim();
    if arg.contains(':') {
        let parts: Vec<f64> = arg
            .split(':')
            .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number {p:?} in {arg:?}")))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            bail!("range must be start:stop:step, got {arg:?}");
        };
        if !(step > 0.0) || !(stop >= start) {
            bail!("range {arg:?} needs step > 0 and stop >= start");
        }
        let count = ((stop - start) / step + 0.5).floor() as usize;
        return Ok((0..=count).map(|i| start + i as f64 * step).collect());
    }
    arg.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number {p:?}")))
        .collect()
}

/// Pretty JSON to `path`, or to stdout when `path` is `None`.
pub fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_values("0:0.5:0.25").unwrap(), vec![0.0, 0.25, 0.5]);
        let v = parse_values("0:0.5:0.01").unwrap();
        assert_eq!(v.len(), 51);
        assert!((v[50] - 0.5).abs() < 1e-12);
        assert_eq!(parse_values("0.01, 0.02,0.04").unwrap(), vec![0.01, 0.02, 0.04]);
        assert!(parse_values("1:0:0.1").is_err());
        assert!(parse_values("a,b").is_err());
    }
}
