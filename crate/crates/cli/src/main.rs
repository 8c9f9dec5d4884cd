mod args;
mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use args::{Cli, EXCLUSIVE_GROUPS};

/// Bad flags or an inconsistent configuration; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const USAGE: u8 = 1;
const FAILURE: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let argv: Vec<OsString> = std::env::args_os().collect();
    match run(argv) {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(USAGE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(FAILURE)
        }
    }
}

fn run(argv: Vec<OsString>) -> anyhow::Result<ExitCode> {
    let matches = match parse(argv.clone())? {
        Parsed::Done(code) => return Ok(code),
        Parsed::Matches(m) => m,
    };
    let matches = match Cli::from_arg_matches(&matches)?.config {
        Some(path) => match parse(with_config(&argv, &path)?)? {
            Parsed::Done(code) => return Ok(code),
            Parsed::Matches(m) => m,
        },
        None => matches,
    };
    let cli = Cli::from_arg_matches(&matches)?;
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    commands::dispatch(cli.command, sub)
}

enum Parsed {
    Matches(clap::ArgMatches),
    Done(ExitCode),
}

fn parse(argv: Vec<OsString>) -> anyhow::Result<Parsed> {
    let command = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true));
    match command.try_get_matches_from(argv) {
        Ok(m) => Ok(Parsed::Matches(m)),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.print()?;
            Ok(Parsed::Done(ExitCode::SUCCESS))
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            e.print()?;
            Ok(Parsed::Done(ExitCode::from(USAGE)))
        }
        Err(e) => Err(UsageError(e.render().to_string().trim_end().trim_start_matches("error: ").to_string()).into()),
    }
}

/// Inserts the file's flags right after the subcommand so that later
/// command-line occurrences override them.
fn with_config(argv: &[OsString], path: &Path) -> anyhow::Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
    let serde_json::Value::Object(entries) = value else {
        return Err(UsageError(format!("config {} is not a JSON object", path.display())).into());
    };
    let sub_at = subcommand_position(argv).ok_or_else(|| UsageError("missing subcommand".into()))?;
    let given: Vec<String> = argv[sub_at + 1..]
        .iter()
        .filter_map(|a| a.to_str()?.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut injected = Vec::new();
    for (key, value) in entries {
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err(UsageError("a config file cannot name another config file".into()).into());
        }
        let overridden = EXCLUSIVE_GROUPS
            .iter()
            .any(|g| g.contains(&flag.as_str()) && given.iter().any(|f| g.contains(&f.as_str())));
        if overridden {
            continue;
        }
        let text = match value {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => b.to_string(),
            other => {
                return Err(UsageError(format!("config key {key}: unsupported value {other}")).into());
            }
        };
        injected.push(OsString::from(format!("--{flag}={text}")));
    }
    let mut out = argv[..=sub_at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[sub_at + 1..]);
    Ok(out)
}

fn subcommand_position(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_str()?;
        if a == "--config" {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}
