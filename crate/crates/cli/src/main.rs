use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zerochain::audit::{self, LemmaId};
use zerochain::harness::{self, ExperimentManifest};
use zerochain::protocol::Trace;
use zerochain::transforms::required_dimension;
use zerochain::Error;

#[derive(Parser)]
#[command(name = "zerochain", version, about = "Zero-chain hard instances and their audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run audit suites and print one line per clause.
    Verify {
        /// Suite id (lemma2, obs2, obsa1, lemma3, lemma4, lemma7, lemma8, lemmab1, lemmaa1, quad) or "all".
        #[arg(long, default_value = "all")]
        suite: String,
        /// Samples per suite; each suite has its own default.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run one trial of a manifest and write its trace.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Accuracy to use; defaults to the first grid entry.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Re-run a recorded trace and check it is reproduced bit for bit.
    Replay {
        /// Manifest providing the solver configuration.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run every (eps, trial) cell of a manifest.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; overrides the manifest's.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Hitting-time simulation for the greedy walker.
    Lemma1 {
        #[arg(long, default_value_t = 20)]
        t: usize,
        #[arg(long, default_value_t = 0.05)]
        p: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exhaustive check of the permuted seed-to-bits map.
    Active {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        key: u64,
    },
    /// Ambient dimension needed by the rotated construction.
    Dim {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        t: u64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        radius: Option<f64>,
    },
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Argument(_)
        | Error::Domain(_)
        | Error::InvalidProbability(_)
        | Error::Infeasible { .. }
        | Error::Manifest(_)
        | Error::DimensionMismatch { .. }
        | Error::IndexOutOfRange { .. }
        | Error::Unsupported(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(command: Command) -> zerochain::Result<ExitCode> {
    match command {
        Command::Verify { suite, budget, seed, json } => {
            let ids: Vec<LemmaId> =
                if suite == "all" { LemmaId::ALL.to_vec() } else { vec![suite.parse()?] };
            let mut reports = Vec::new();
            for id in ids {
                let part = audit::lemma_suite(id, budget.unwrap_or(id.default_budget()), seed)?;
                if !json {
                    for r in &part {
                        println!("{r}");
                    }
                }
                reports.extend(part);
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            }
            let failed = reports.iter().filter(|r| !r.pass).count();
            eprintln!("{} clauses, {} failed", reports.len(), failed);
            Ok(verdict(failed == 0))
        }
        Command::Run { manifest, eps, trial, trace } => {
            let m = ExperimentManifest::load(&manifest)?;
            let (instance, t) = harness::trace_trial(&m, eps.unwrap_or(m.eps_grid[0]), trial)?;
            for w in &instance.warnings {
                eprintln!("warning: {w}");
            }
            std::fs::write(&trace, t.to_text())?;
            println!("{} rounds written to {}", t.rounds.len(), trace.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { manifest, trace } => {
            let m = ExperimentManifest::load(&manifest)?;
            let t = Trace::from_text(&std::fs::read_to_string(&trace)?)?;
            let same = harness::replay_matches(&t, &m.solver)?;
            println!("{}", if same { "replay identical" } else { "replay differs" });
            Ok(verdict(same))
        }
        Command::Sweep { manifest, output } => {
            let m = ExperimentManifest::load(&manifest)?;
            let dir = output.or_else(|| m.output.clone()).unwrap_or_else(|| PathBuf::from("."));
            let result = harness::sweep(&m)?;
            harness::write_outputs(&result, &dir)?;
            for s in &result.summary.per_eps {
                let med = s.median_queries.map_or("censored".to_string(), |q| format!("{q}"));
                println!("eps={:<10} median_queries={:<14} censored={}/{}", s.eps, med, s.censored, s.trials);
            }
            if let Some(f) = result.summary.fit {
                println!("slope={:.4} +/- {:.4} over {} points", f.slope, f.stderr, f.points);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Lemma1 { t, p, delta, trials, seed } => {
            let r = audit::hitting_time_sim(t, p, delta, trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(verdict(r.pass))
        }
        Command::Active { n, t, key } => {
            let r = audit::active_equivalence(n, t, key)?;
            println!(
                "N={} T={} pattern counts {} marginals {}",
                r.n,
                r.t,
                if r.pattern_counts_ok { "match" } else { "MISMATCH" },
                if r.marginals_ok { "match" } else { "MISMATCH" }
            );
            Ok(verdict(r.pass))
        }
        Command::Dim { k, t, p, delta, radius } => {
            println!("{}", required_dimension(k, t, p, delta, radius)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
