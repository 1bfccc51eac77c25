use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stlppc::io::{cmd_check, cmd_eval, cmd_run, RunOverrides, EXIT_ERROR};

#[derive(Parser)]
#[command(
    name = "stlppc",
    version,
    about = "Funnel control of multi-agent STL tasks with online repair"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write traj.csv, events.jsonl and summary.json.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Validate a scenario and report feasibility and clusters.
    Check { scenario: PathBuf },
    /// Evaluate a formula on a stored trajectory.
    Eval {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        formula: String,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            dt,
        } => match cmd_run(&scenario, &out, &RunOverrides { seed, dt }) {
            Ok((result, code)) => {
                for a in &result.summary.agents {
                    let verdicts: Vec<String> = a
                        .units
                        .iter()
                        .map(|u| match u.robustness {
                            Some(v) => format!("{v:.4} ({})", if u.satisfied { "satisfied" } else { "violated" }),
                            None => "window not covered".into(),
                        })
                        .collect();
                    println!(
                        "agent {}: r = {}, jumps = {}, {}",
                        a.agent,
                        a.final_r,
                        a.jump_count,
                        verdicts.join(", ")
                    );
                }
                println!("wrote {}", out.display());
                code
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        },
        Command::Check { scenario } => match cmd_check(&scenario) {
            Ok(report) => {
                print!("{}", report.text);
                report.code
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        },
        Command::Eval { trace, formula, t0 } => match cmd_eval(&trace, &formula, t0) {
            Ok(v) => {
                println!("{} {}", v.value, if v.satisfied { "satisfied" } else { "violated" });
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        },
    };
    ExitCode::from(code as u8)
}
