use std::process::ExitCode;

use nomore::config::{Command, ExperimentConfig};

const USAGE: &str = "\
usage: nomore <command> [--config FILE] [--key value]...

commands:
  assertions     batch-noise hypothesis tests (intra/inter extraction, decomposition)
  variance       activation-variance-by-depth probe for all wrappers
  train-compare  paired bn / skipinit / nomore training runs
  sensitivity    accuracy across noise amplitudes
  noise-sim      empirical delta moments against the closed-form law

common flags (flags override config-file values):
  --config FILE          key = value config file
  --seed N               master seed (default 1)
  --seeds a,b,c          per-run seeds for multi-seed commands (default 1,2,3)
  --out DIR              output directory (default out/)
  --wrapper bn|ln|skipinit|nomore
  --gamma-noise F        noise amplitude (default 0.1 for bn-replacing blocks)
  --dataset synth|cifar10:PATH
  --steps N  --batch-size N  --lr F  --gammas a,b,c
  --bench true           measure per-step wall time (exclusive runs)
";

fn parse_args(args: &[String]) -> Result<ExperimentConfig, String> {
    let command = args
        .first()
        .and_then(|a| Command::parse(a))
        .ok_or_else(|| format!("expected a command, got {:?}", args.first()))?;
    let mut cfg = ExperimentConfig::defaults(command);

    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let key = args[i]
            .strip_prefix("--")
            .ok_or_else(|| format!("expected --flag, got {}", args[i]))?;
        // Boolean flags may stand alone: `--bench` means `--bench true`.
        let bare_bool = key == "bench"
            && args.get(i + 1).map(|v| v.starts_with("--")).unwrap_or(true);
        if bare_bool {
            pairs.push((key.to_string(), "true".to_string()));
            i += 1;
            continue;
        }
        let value = args
            .get(i + 1)
            .ok_or_else(|| format!("--{key} needs a value"))?;
        pairs.push((key.to_string(), value.clone()));
        i += 2;
    }
    // Config file first, then remaining flags in order: flags win.
    if let Some((_, path)) = pairs.iter().find(|(k, _)| k == "config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {path}: {e}"))?;
        cfg.apply_file(&text).map_err(|e| e.to_string())?;
    }
    for (key, value) in pairs.iter().filter(|(k, _)| k != "config") {
        cfg.apply(key, value).map_err(|e| e.to_string())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        print!("{USAGE}");
        return if args.is_empty() { ExitCode::from(2) } else { ExitCode::SUCCESS };
    }
    let cfg = match parse_args(&args) {
        Ok(cfg) => cfg,
        Err(message) => {
            eprintln!("error: {message}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    match nomore::execute(&cfg) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
