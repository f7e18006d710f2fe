//! Config loading: TOML file plus `--set key=value` overrides.

use std::fs;
use std::path::Path;

use weakclass::{Error, Result, RunConfig};

/// Load the config file (if present), apply dotted-key overrides, validate.
/// A missing file with overrides supplying everything is allowed.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let mut value: toml::Value = if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else if overrides.is_empty() {
        return Err(Error::Config(format!(
            "config file {} not found (and no --set overrides given)",
            path.display()
        )));
    } else {
        toml::Value::Table(toml::map::Map::new())
    };

    for item in overrides {
        let (key, raw) = item.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got {item:?}"))
        })?;
        apply_override(&mut value, key.trim(), raw.trim())?;
    }

    let cfg: RunConfig = value
        .try_into()
        .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Set `value[a][b][c] = parsed(raw)` for a dotted key `a.b.c`.
fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    // parse the value as TOML, falling back to a plain string
    let parsed: toml::Value = match format!("x = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("x").expect("key x exists"),
        _ => toml::Value::String(raw.to_string()),
    };

    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("--set {key}: {part} is not a table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let last = parts.last().expect("non-empty key");
    cursor
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("--set {key}: parent is not a table")))?
        .insert(last.to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_plus_overrides() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "seed = 1\nrun_dir = \"/tmp/x\"\n[synthetic]\nclasses = 3").unwrap();
        let cfg = load_config(
            f.path(),
            &["seed=9".into(), "synthetic.purity=0.9".into(), "tau=0.5".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.tau, 0.5);
        let syn = cfg.synthetic.unwrap();
        assert_eq!(syn.classes, 3);
        assert_eq!(syn.purity, 0.9);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "sede = 1").unwrap();
        let err = load_config(f.path(), &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "tau = -2.0").unwrap();
        let err = load_config(f.path(), &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn string_values_keep_strings() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "seed = 1").unwrap();
        let cfg = load_config(f.path(), &["provider=precomputed:/data/emb".into()]).unwrap();
        assert_eq!(cfg.provider, "precomputed:/data/emb");
    }
}
