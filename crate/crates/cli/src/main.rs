use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches};
use morphograph::config::{flag_value, parse_config, RunConfig, KEY_DOCS, SEED_ENV};
use morphograph::pipeline::{self, Command};
use serde_json::{Map, Value};

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn display_default(value: &Value) -> Option<String> {
    match value {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

fn cli() -> clap::Command {
    let defaults = RunConfig::defaults_json();
    let mut cmd = clap::Command::new("morphograph")
        .about("Knee radiograph grading from bone-contour graphs and images")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help(format!(
            "Settings are layered: defaults, then {SEED_ENV}, then --config, then flags."
        ))
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .global(true)
                .help("JSON file with any subset of the settings below"),
        );
    for (key, doc) in KEY_DOCS {
        let mut arg = Arg::new(*key)
            .long(flag_name(key))
            .value_name("VALUE")
            .global(true)
            .help(*doc);
        if let Some(default) = defaults.get(*key).and_then(display_default) {
            arg = arg.default_value(default);
        }
        cmd = cmd.arg(arg);
    }
    for c in Command::ALL {
        cmd = cmd.subcommand(clap::Command::new(c.name()).about(c.about()));
    }
    cmd
}

fn overrides(matches: &ArgMatches) -> morphograph::Result<Map<String, Value>> {
    let mut map = Map::new();
    for (key, _) in KEY_DOCS {
        if matches.value_source(key) == Some(ValueSource::CommandLine) {
            let raw: &String = matches.get_one(key).expect("value present");
            map.insert(key.to_string(), flag_value(key, raw)?);
        }
    }
    Ok(map)
}

fn run(name: &str, matches: &ArgMatches) -> morphograph::Result<String> {
    let command: Command = name.parse()?;
    let file = matches.get_one::<PathBuf>("config");
    let cfg = parse_config(file.map(PathBuf::as_path), &overrides(matches)?)?;
    pipeline::run(command, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
