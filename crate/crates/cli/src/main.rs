use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use specgate::plan::{parse_plan, AnalysisPlan};
use specgate::run::{run_plan, summary, Command, Outcome, RunOutput, EXIT_USAGE};

#[derive(Parser)]
#[command(
    name = "specgate",
    version,
    about = "Weak orbit governance and resolvent certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// Analysis plan (JSON).
    plan: PathBuf,
    /// Directory for CSV curves.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Suppress the human-readable summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Test whether sampled weak orbits are governed by the plan's family.
    Govern(Common),
    /// Governance plus resolvent probes, estimate chains and lower bounds.
    Certify(Common),
    /// Integrability hypothesis and strip certificate for `e^{tA}`.
    Semigroup(Common),
    /// Randomized sweep over stable and marginal operators.
    Fuzz {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn load(path: &Path) -> Result<AnalysisPlan, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_plan(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_outputs(out: &RunOutput, plan: &AnalysisPlan, csv: Option<&Path>) -> Result<(), String> {
    let json = out.report.to_json();
    match &plan.output.report {
        Some(path) => fs::write(path, &json).map_err(|e| format!("{path}: {e}"))?,
        None => print!("{json}"),
    }
    let csv_dir = csv
        .map(Path::to_path_buf)
        .or_else(|| plan.output.csv_dir.as_ref().map(PathBuf::from));
    if let Some(dir) = csv_dir {
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        for f in &out.csv {
            let path = dir.join(&f.name);
            fs::write(&path, &f.content).map_err(|e| format!("{}: {e}", path.display()))?;
        }
    }
    if let (Outcome::Fuzz(s), Some(dir)) = (&out.report.outcome, &plan.fuzz.reproducer_dir) {
        fs::create_dir_all(dir).map_err(|e| format!("{dir}: {e}"))?;
        for r in &s.reproducers {
            if let Some(p) = &r.plan {
                let path = Path::new(dir).join(format!("case-{}.json", r.index));
                fs::write(&path, p.to_normalized_json())
                    .map_err(|e| format!("{}: {e}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<i32, String> {
    let (command, common, overrides) = match cli.command {
        Sub::Govern(c) => (Command::Govern, c, None),
        Sub::Certify(c) => (Command::Certify, c, None),
        Sub::Semigroup(c) => (Command::Semigroup, c, None),
        Sub::Fuzz {
            common,
            cases,
            seed,
            workers,
        } => (Command::Fuzz, common, Some((cases, seed, workers))),
    };
    let mut plan = load(&common.plan)?;
    if let Some((cases, seed, workers)) = overrides {
        if let Some(k) = cases {
            plan.fuzz.cases = k;
        }
        if let Some(s) = seed {
            plan.sample_plan.seed = s;
        }
        if let Some(w) = workers {
            plan.fuzz.workers = w;
        }
        plan = plan.validate().map_err(|e| e.to_string())?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if command == Command::Fuzz {
            plan.fuzz.workers
        } else {
            0
        })
        .build()
        .map_err(|e| e.to_string())?;
    let out = pool
        .install(|| run_plan(command, &plan))
        .map_err(|e| e.to_string())?;
    write_outputs(&out, &plan, common.csv.as_deref())?;
    if !common.quiet {
        eprint!("{}", summary(&out.report));
    }
    Ok(out.report.exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
