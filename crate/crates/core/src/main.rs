use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mpft_core::report::config::RunConfig;
use mpft_core::report::{default_out_dir, run_command, write_error_record, Command, ErrorRecord};
use mpft_core::{Error, Result};

/// Texture-aware masked fine-tuning toolkit.
///
/// Any `--section.key value` pair overrides one config field, e.g.
/// `--train.epochs 3` or `--mask.ratio_interval [0.2,0.4]`.
#[derive(Parser, Debug)]
#[command(name = "mpft", version)]
struct Cli {
    /// synth, mask, train, eval, matrix, perturb, features, embed, cam, sweep or report.
    command: String,
    /// JSON run config (a previous `run.json` works too).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets the training, data and perturbation seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory. Defaults to `$MPFT_RUN_DIR/<command>` or `runs/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Splits `--a.b value` pairs off the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--") {
            Some(key) if key.contains('.') && !key.contains('=') => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("override --{key} needs a value")))?;
                overrides.push((key.to_string(), v));
            }
            Some(kv) if kv.split('=').next().is_some_and(|k| k.contains('.')) => {
                let (k, v) = kv.split_once('=').expect("contains =");
                overrides.push((k.to_string(), v.to_string()));
            }
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(e) => return fail("cli", None, &e),
    };
    let cli = Cli::parse_from(args);
    let cmd: Command = match cli.command.parse() {
        Ok(c) => c,
        Err(e) => return fail(&cli.command, None, &e),
    };
    let out = cli.out.clone().unwrap_or_else(|| default_out_dir(cmd));
    let result = RunConfig::resolve(cli.config.as_deref(), cli.seed, &overrides)
        .and_then(|cfg| run_command(cmd, &cfg, &out));
    match result {
        Ok(outcome) => {
            println!(
                "{}",
                serde_json::json!({
                    "command": cmd.name(),
                    "out_dir": outcome.out_dir,
                    "artifacts": outcome.outputs.len(),
                })
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(cmd.name(), Some(&out), &e),
    }
}

fn fail(command: &str, out: Option<&std::path::Path>, e: &Error) -> ExitCode {
    let rec = ErrorRecord::new(command, e);
    if let Some(dir) = out {
        let _ = write_error_record(dir, &rec);
    }
    eprintln!("{}", serde_json::to_string(&rec).unwrap_or_else(|_| e.to_string()));
    ExitCode::from(rec.exit_code as u8)
}
