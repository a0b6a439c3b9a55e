use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use hrsched::model::{AgentId, JobId, MetricState};
use hrsched::monitor::Trace;
use hrsched::sim::{compare_policies, plan_job, run_shift, ShiftOptions};
use hrsched::{load_scenario, ShiftSpec};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "hrsched",
    version,
    about = "Human-robot task scheduling for assembly shifts"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the assignment of one job and print it as JSON.
    Solve {
        scenario: PathBuf,
        /// Job to solve; defaults to the first.
        #[arg(long)]
        job: Option<JobId>,
        /// Quality state carried in from earlier jobs (JSON).
        #[arg(long)]
        state: Option<PathBuf>,
        /// Node budget of the branch and bound.
        #[arg(long, default_value_t = hrsched::assignment::DEFAULT_NODE_BUDGET)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a whole shift against a trace.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        no_reschedule: bool,
        #[arg(long)]
        no_comms: bool,
        /// Overrides the trace's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the full JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a shift with rescheduling on and off and tabulate the difference.
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write both reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve the live HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Scenario loaded by `POST /shift` with an empty body.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Solve {
            scenario,
            job,
            state,
            budget,
            out,
        } => solve(&scenario, job, state.as_deref(), budget, out.as_deref()),
        Cmd::Simulate {
            scenario,
            trace,
            no_reschedule,
            no_comms,
            seed,
            report,
        } => {
            let mut options = ShiftOptions {
                seed,
                ..ShiftOptions::default()
            };
            if no_reschedule {
                options = options.without_reschedule();
            }
            if no_comms {
                options = options.without_comms();
            }
            simulate(&scenario, trace.as_deref(), options, report.as_deref())
        }
        Cmd::Compare {
            scenario,
            trace,
            seed,
            json,
        } => {
            let shift = load_scenario(&scenario)?;
            let trace = read_trace(trace.as_deref())?;
            let options = ShiftOptions {
                seed,
                ..ShiftOptions::default()
            };
            let diff = compare_policies(&shift, &trace, options)?;
            print!("{}", diff.table());
            println!("total dc {:.3}", diff.total_delta_cycle());
            write_json(json.as_deref(), &diff)
        }
        Cmd::Serve {
            port,
            host,
            scenario,
        } => serve(&host, port, scenario.as_deref()),
    }
}

fn read_trace(path: Option<&Path>) -> Result<Trace> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(Trace::default()),
    }
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn solve(
    scenario: &Path,
    job: Option<JobId>,
    state: Option<&Path>,
    budget: u64,
    out: Option<&Path>,
) -> Result<()> {
    let shift: ShiftSpec = load_scenario(scenario)?;
    let job = match job {
        Some(id) => shift
            .job(id)
            .ok_or_else(|| anyhow!("no job {id} in the scenario"))?,
        None => &shift.jobs[0],
    };
    let state = match state {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => MetricState::initial(&shift.metrics),
    };
    let (solved, planned) = plan_job(job, &shift.metrics, &state, budget)?;
    let value = json!({
        "job": job.id,
        "assignment": solved.assignment,
        "objective": solved.objective,
        "cycle_time": solved.assignment.total_cycle_time(),
        "nodes_explored": solved.nodes_explored,
        "proven_optimal": solved.proven_optimal,
        "planned": planned,
    });
    match out {
        Some(_) => write_json(out, &value),
        None => {
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
    }
}

fn simulate(
    scenario: &Path,
    trace: Option<&Path>,
    options: ShiftOptions,
    report: Option<&Path>,
) -> Result<()> {
    let shift = load_scenario(scenario)?;
    let trace = read_trace(trace)?;
    let r = run_shift(&shift, &trace, options)?;
    println!("job  c       idleH   idleR   metrics");
    for j in &r.jobs {
        let metrics: Vec<String> = j
            .report
            .metrics
            .metrics
            .iter()
            .map(|m| {
                format!(
                    "K{}={:.3}{}",
                    m.id,
                    m.value,
                    if m.satisfied { "" } else { "!" }
                )
            })
            .collect();
        println!(
            "{:<4} {:<7.3} {:<7.3} {:<7.3} {}",
            j.job,
            j.report.cycle_time,
            j.report.idle[AgentId::Human],
            j.report.idle[AgentId::Robot],
            metrics.join(" ")
        );
    }
    println!("total c {:.3}", r.total_cycle());
    write_json(report, &r)
}

#[tokio::main]
async fn serve(host: &str, port: u16, scenario: Option<&Path>) -> Result<()> {
    let default = scenario.map(load_scenario).transpose()?;
    let addr: SocketAddr = format!("{host}:{port}").parse()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    hrsched_service::serve(listener, hrsched_service::AppState::new(default)).await?;
    Ok(())
}
