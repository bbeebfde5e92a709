use std::path::Path;
use std::process::ExitCode;

use sectorcalc_cli::{parse_config, run, Outcome, ParseOutcome, EXIT_FAIL, EXIT_PASS, EXIT_USAGE};

const THREADS_VAR: &str = "SECTORIAL_THREADS";

fn threads() -> Result<Option<usize>, String> {
    match std::env::var(THREADS_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_VAR}: expected a positive integer, found `{v}`")),
        },
        Err(e) => Err(format!("{THREADS_VAR}: {e}")),
    }
}

fn write_outputs(dir: &Path, outcome: &Outcome) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.txt"), outcome.report.to_string())?;
    for (name, contents) in &outcome.artifacts {
        std::fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

fn usage_exit(message: &str) -> ExitCode {
    eprintln!("usage error: {message}");
    ExitCode::from(EXIT_USAGE as u8)
}

fn main() -> ExitCode {
    let config = match parse_config(std::env::args()) {
        Ok(c) => c,
        Err(ParseOutcome::Info(text)) => {
            print!("{text}");
            return ExitCode::from(EXIT_PASS as u8);
        }
        Err(ParseOutcome::Usage(e)) => return usage_exit(&e.0),
    };
    match threads() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: thread pool: {e}");
                return ExitCode::from(EXIT_FAIL as u8);
            }
        }
        Ok(None) => {}
        Err(e) => return usage_exit(&e),
    }
    let outcome = match run(&config) {
        Ok(o) => o,
        Err(e) => return usage_exit(&e.0),
    };
    print!("{}", outcome.report);
    if let Some(dir) = &config.command.output().out {
        if let Err(e) = write_outputs(dir, &outcome) {
            eprintln!("error: writing {}: {e}", dir.display());
            return ExitCode::from(EXIT_FAIL as u8);
        }
    }
    ExitCode::from(if outcome.pass { EXIT_PASS } else { EXIT_FAIL } as u8)
}
