//! Layered run configuration: built-in defaults, then the command's section
//! of a TOML file, then command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::Table;

use crate::error::CliError;

/// Sections a config file may carry besides the command sections. They are
/// written into run manifests and ignored on input, so a manifest can be
/// fed back as `--config`.
const RESERVED: [&str; 3] = ["run", "inputs", "outputs"];

pub const COMMANDS: [&str; 7] = [
    "simulate",
    "separate",
    "loss-surface",
    "loss-eval",
    "wiener",
    "metrics",
    "align",
];

pub fn read_file(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let table: Table = text
        .parse()
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    for key in table.keys() {
        if !COMMANDS.contains(&key.as_str()) && !RESERVED.contains(&key.as_str()) {
            return Err(CliError::Validation(format!(
                "config {}: unknown section [{key}]",
                path.display()
            )));
        }
    }
    Ok(table)
}

fn to_table<T: Serialize>(value: &T) -> Result<Table, CliError> {
    match toml::Value::try_from(value) {
        Ok(toml::Value::Table(t)) => Ok(t),
        Ok(_) => unreachable!("option structs serialize to tables"),
        Err(e) => Err(CliError::Validation(format!("cannot encode options: {e}"))),
    }
}

/// Overlay `defaults < file[command] < cli` and decode the result. Unknown
/// keys in the file section are rejected by the option struct.
pub fn resolve<T: Serialize + DeserializeOwned>(
    command: &str,
    defaults: &T,
    file: Option<&Table>,
    cli: &T,
) -> Result<T, CliError> {
    let mut merged = to_table(defaults)?;
    if let Some(section) = file.and_then(|f| f.get(command)) {
        let section = section.as_table().ok_or_else(|| {
            CliError::Validation(format!("config section [{command}] must be a table"))
        })?;
        // Decode on its own first so unknown keys are reported against the file.
        toml::Value::Table(section.clone())
            .try_into::<T>()
            .map_err(|e| CliError::Validation(format!("config section [{command}]: {e}")))?;
        merged.extend(section.clone());
    }
    merged.extend(to_table(cli)?);
    toml::Value::Table(merged)
        .try_into()
        .map_err(|e| CliError::Validation(format!("{command} options: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Opts {
        #[serde(skip_serializing_if = "Option::is_none")]
        a: Option<u32>,
        #[serde(skip_serializing_if = "Option::is_none")]
        b: Option<String>,
    }

    #[test]
    fn precedence_is_cli_then_file_then_default() {
        let defaults = Opts {
            a: Some(1),
            b: Some("x".into()),
        };
        let file: Table = "[simulate]\na = 2\nb = \"y\"\n".parse().unwrap();
        let cli = Opts {
            a: Some(3),
            b: None,
        };
        let out = resolve("simulate", &defaults, Some(&file), &cli).unwrap();
        assert_eq!(
            out,
            Opts {
                a: Some(3),
                b: Some("y".into())
            }
        );
        let out = resolve("simulate", &defaults, None, &Opts::default()).unwrap();
        assert_eq!(out, defaults);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let file: Table = "[simulate]\nz = 2\n".parse().unwrap();
        let err = resolve("simulate", &Opts::default(), Some(&file), &Opts::default()).unwrap_err();
        assert!(matches!(err, CliError::Validation(m) if m.contains("unknown field")));
    }
}
