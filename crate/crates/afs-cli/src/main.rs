//! The `afs` command line tool: type-check, normalize, and run affine
//! session programs, build characteristic processes, and fuzz the engine.
//!
//! Exit codes: 0 success, 1 type or parse error, 2 step budget exhausted or
//! stuck, 3 property failure under `fuzz`, 4 internal defect.

use std::io::{IsTerminal, Write};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use afs_core::analysis::{characteristic, is_inactive, progress_check, Chooser, NameSupply};
use afs_core::congruence::normalize;
use afs_core::harness::{run_suite, GenConfig};
use afs_core::parse;
use afs_core::reduce::{run, EngineVariant};
use afs_core::syntax::Program;
use afs_core::typecheck::check;

const OK: u8 = 0;
const BAD_INPUT: u8 = 1;
const EXHAUSTED: u8 = 2;
const PROPERTY_FAILURE: u8 = 3;
const DEFECT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "afs",
    version,
    about = "A workbench for affine sessions: check, run, and test protocol scripts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Type-check a program and print the interface it uses
    Check { path: PathBuf },
    /// Reduce a program to a normal form
    Run {
        path: PathBuf,
        /// Give up after this many steps
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
        /// Print every step and the form it leads to
        #[arg(long)]
        trace: bool,
        /// Run even if the program fails the type check
        #[arg(long)]
        unchecked: bool,
    },
    /// Print the canonical form of a program
    Norm { path: PathBuf },
    /// Print the dual of a session type
    Dual { r#type: String },
    /// Print the canonical process of an endpoint, given as "a : TYPE"
    Charproc {
        endpoint: String,
        /// Labels to pick, in order, at each internal choice
        #[arg(long, value_delimiter = ',')]
        choose: Vec<String>,
    },
    /// Classify a program's normal form and exhibit an observer for it
    Progress {
        path: PathBuf,
        /// Give up after this many steps
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
    },
    /// Generate random sessions, damage them, and check the metatheory
    Fuzz {
        /// Decimal or 0x-prefixed hex, as printed in failure reports
        #[arg(long, default_value_t = 42, value_parser = parse_seed)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        /// Bound on the depth of generated session types
        #[arg(long, default_value_t = 5)]
        depth: usize,
        /// Bound on the arms of generated choices
        #[arg(long, default_value_t = 3)]
        labels: usize,
        /// Chance of damaging each position of a generated process
        #[arg(long, default_value_t = 0.3)]
        rate: f64,
        /// Write a machine-readable summary to this file
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Engine to test: faithful, out-drops-object-cancel, or
        /// req-drops-peer-cancel
        #[arg(long, default_value = "faithful")]
        variant: String,
    },
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("{e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => OK,
                _ => BAD_INPUT,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let color = want_color(std::io::stderr().is_terminal());
    std::panic::set_hook(Box::new(|_| {}));
    let code = std::panic::catch_unwind(AssertUnwindSafe(|| {
        let mut out = std::io::stdout().lock();
        let mut err = std::io::stderr().lock();
        execute(cli.command, &mut out, &mut err, color)
    }))
    .unwrap_or_else(|payload| {
        let what = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".to_string());
        eprintln!("error: internal defect: {what}");
        DEFECT
    });
    ExitCode::from(code)
}

fn want_color(tty: bool) -> bool {
    match std::env::var("AFS_COLOR").as_deref() {
        Ok("always") => true,
        Ok("never") => false,
        _ => tty,
    }
}

/// One diagnostic line on the error stream, optionally colored.
fn diag(err: &mut dyn Write, color: bool, message: &dyn std::fmt::Display) {
    let _ = if color {
        writeln!(err, "\x1b[31merror:\x1b[0m {message}")
    } else {
        writeln!(err, "error: {message}")
    };
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write, color: bool) -> u8 {
    match cmd {
        Command::Check { path } => cmd_check(&path, out, err, color),
        Command::Run {
            path,
            max_steps,
            trace,
            unchecked,
        } => cmd_run(&path, max_steps, trace, unchecked, out, err, color),
        Command::Norm { path } => cmd_norm(&path, out, err, color),
        Command::Dual { r#type } => cmd_dual(&r#type, out, err, color),
        Command::Charproc { endpoint, choose } => cmd_charproc(&endpoint, choose, out, err, color),
        Command::Progress { path, max_steps } => cmd_progress(&path, max_steps, out, err, color),
        Command::Fuzz {
            seed,
            cases,
            depth,
            labels,
            rate,
            summary,
            variant,
        } => {
            let cfg = GenConfig {
                seed,
                cases,
                max_type_depth: depth,
                max_labels: labels,
                mutation_rate: rate,
            };
            cmd_fuzz(&cfg, summary.as_deref(), &variant, out, err, color)
        }
    }
}

fn load(path: &Path, err: &mut dyn Write, color: bool) -> Result<Program, u8> {
    let source = std::fs::read_to_string(path).map_err(|e| {
        diag(err, color, &format!("{}: {e}", path.display()));
        BAD_INPUT
    })?;
    parse::program(&source).map_err(|e| {
        diag(err, color, &format!("{}:{e}", path.display()));
        BAD_INPUT
    })
}

fn cmd_check(path: &Path, out: &mut dyn Write, err: &mut dyn Write, color: bool) -> u8 {
    let prog = match load(path, err, color) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match check(&prog.interface, &prog.process) {
        Ok(usage) => {
            let _ = writeln!(out, "ok: uses {usage}");
            OK
        }
        Err(e) => {
            diag(err, color, &e);
            BAD_INPUT
        }
    }
}

fn cmd_run(
    path: &Path,
    max_steps: usize,
    trace: bool,
    unchecked: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
    color: bool,
) -> u8 {
    let prog = match load(path, err, color) {
        Ok(p) => p,
        Err(code) => return code,
    };
    if !unchecked {
        if let Err(e) = check(&prog.interface, &prog.process) {
            diag(err, color, &e);
            return BAD_INPUT;
        }
    }
    let result = run(&prog.process, max_steps, EngineVariant::Faithful);
    if trace {
        for (k, (redex, form)) in result.steps.iter().enumerate() {
            let _ = writeln!(out, "step {}: {}", k + 1, redex);
            let _ = writeln!(out, "  {form}");
        }
    }
    let n = result.steps.len();
    if result.exhausted {
        let _ = writeln!(out, "budget exhausted after {n} steps");
        EXHAUSTED
    } else if is_inactive(result.terminal()) {
        let _ = writeln!(out, "inactive after {n} steps");
        OK
    } else {
        let _ = writeln!(out, "stuck after {n} steps: {}", result.terminal());
        EXHAUSTED
    }
}

fn cmd_norm(path: &Path, out: &mut dyn Write, err: &mut dyn Write, color: bool) -> u8 {
    match load(path, err, color) {
        Ok(prog) => {
            let _ = writeln!(out, "{}", normalize(&prog.process));
            OK
        }
        Err(code) => code,
    }
}

fn cmd_dual(text: &str, out: &mut dyn Write, err: &mut dyn Write, color: bool) -> u8 {
    match parse::session_type(text) {
        Ok(t) => {
            let _ = writeln!(out, "{}", t.dual());
            OK
        }
        Err(e) => {
            diag(err, color, &e);
            BAD_INPUT
        }
    }
}

fn cmd_charproc(
    endpoint: &str,
    choose: Vec<String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
    color: bool,
) -> u8 {
    let Some((name, type_text)) = endpoint.split_once(':') else {
        diag(err, color, &"expected an endpoint of the form \"a : TYPE\"");
        return BAD_INPUT;
    };
    let name = name.trim().to_string();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        diag(err, color, &format!("not an endpoint name: {name:?}"));
        return BAD_INPUT;
    }
    let t = match parse::session_type(type_text) {
        Ok(t) => t,
        Err(e) => {
            diag(err, color, &e);
            return BAD_INPUT;
        }
    };
    let mut chooser = if choose.is_empty() {
        Chooser::least()
    } else {
        Chooser::scripted(choose)
    };
    let mut supply = NameSupply::avoiding([name.clone()]);
    match characteristic(&name, &t, &mut chooser, &mut supply) {
        Ok(p) => {
            let _ = writeln!(out, "{p}");
            OK
        }
        Err(e) => {
            diag(err, color, &e);
            BAD_INPUT
        }
    }
}

fn cmd_progress(
    path: &Path,
    max_steps: usize,
    out: &mut dyn Write,
    err: &mut dyn Write,
    color: bool,
) -> u8 {
    use afs_core::analysis::ProgressError;
    let prog = match load(path, err, color) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match progress_check(&prog.interface, &prog.process, max_steps) {
        Ok(report) => {
            let _ = writeln!(out, "{report}");
            OK
        }
        Err(ProgressError::Type(e)) => {
            diag(err, color, &e);
            BAD_INPUT
        }
        Err(e @ ProgressError::Budget { .. }) => {
            diag(err, color, &e);
            EXHAUSTED
        }
        Err(e @ ProgressError::Violation(_)) => {
            diag(err, color, &e);
            DEFECT
        }
    }
}

fn cmd_fuzz(
    cfg: &GenConfig,
    summary: Option<&Path>,
    variant: &str,
    out: &mut dyn Write,
    err: &mut dyn Write,
    color: bool,
) -> u8 {
    let variant = match variant {
        "faithful" => EngineVariant::Faithful,
        "out-drops-object-cancel" => EngineVariant::OutDropsObjectCancel,
        "req-drops-peer-cancel" => EngineVariant::ReqDropsPeerCancel,
        other => {
            diag(err, color, &format!("unknown engine variant: {other}"));
            return BAD_INPUT;
        }
    };
    let report = match run_suite(cfg, variant) {
        Ok(r) => r,
        Err(e) => {
            diag(err, color, &e);
            return BAD_INPUT;
        }
    };
    let _ = write!(out, "{}", report.render());
    if let Some(path) = summary {
        if let Err(e) = std::fs::write(path, report.summary()) {
            diag(err, color, &format!("{}: {e}", path.display()));
            return BAD_INPUT;
        }
    }
    if report.passed() {
        OK
    } else {
        PROPERTY_FAILURE
    }
}
