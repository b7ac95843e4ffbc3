//! The three subcommands. Each returns the process exit code and reports
//! diagnostics on standard error.

use thiserror::Error;
use zcbf::acc::{run_tradeoff_sweep, simulate_acc, CellSummary};

use crate::config::{RunConfig, Scenario};
use crate::output::{self, OutputError};
use crate::verify::run_checks;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_UNSAFE: u8 = 2;

/// Caps the number of sweep worker threads.
pub const THREADS_ENV: &str = "SAFETY_FILTER_THREADS";

#[derive(Debug, Error)]
enum CommandError {
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Model(#[from] zcbf::Error),
    #[error("{0}")]
    Other(String),
}

fn finish(result: Result<u8, CommandError>) -> u8 {
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_ERROR
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> u8 {
    finish(simulate(cfg))
}

pub fn cmd_sweep(cfg: &RunConfig) -> u8 {
    finish(sweep(cfg))
}

pub fn cmd_verify(cfg: &RunConfig) -> u8 {
    finish(verify(cfg))
}

fn simulate(cfg: &RunConfig) -> Result<u8, CommandError> {
    if cfg.scenario == Scenario::AccSweep {
        return Err(CommandError::Other("scenario acc_sweep is run with the sweep command".into()));
    }
    let params = &cfg.acc;
    let perturbed = cfg.scenario.perturbed(params);
    let int = &cfg.integrator;
    let dir = &cfg.output.dir;

    let traj = match simulate_acc(params, perturbed, int.t_final, int.dt) {
        Ok(traj) => traj,
        Err(aborted) => {
            // Keep what was simulated before the failure when it is printable.
            if !aborted.partial.is_empty() {
                if let Ok(csv) = output::trajectory_csv(&aborted.partial) {
                    output::write(dir, "trajectory.csv", &csv)?;
                }
            }
            return Err(CommandError::Model(aborted.reason));
        }
    };

    let bound = if perturbed { params.theta_amp } else { 0.0 };
    let summary = CellSummary::from_trajectory(params, &traj, bound)?;
    output::write(dir, "trajectory.csv", &output::trajectory_csv(&traj)?)?;
    output::write(dir, "summary.csv", &output::summary_csv(&summary)?)?;
    if cfg.output.plot_script {
        output::write(dir, "plot_trajectory.py", output::TRAJECTORY_PLOT)?;
    }

    let floor = -summary.gamma_max - int.tol;
    if let Some(i) = traj.h_values.iter().position(|h| *h < floor) {
        eprintln!(
            "safety violation: h = {} < {} at t = {} s (min h = {})",
            output::num(traj.h_values[i]),
            output::num(floor),
            traj.times[i],
            output::num(summary.min_h)
        );
        return Ok(EXIT_UNSAFE);
    }
    Ok(EXIT_OK)
}

fn thread_pool() -> Result<rayon::ThreadPool, CommandError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n = raw
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CommandError::Other(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CommandError::Other(e.to_string()))
}

fn sweep(cfg: &RunConfig) -> Result<u8, CommandError> {
    let int = &cfg.integrator;
    let cells = thread_pool()?.install(|| {
        run_tradeoff_sweep(&cfg.acc, &cfg.sweep.kappa, &cfg.sweep.theta, int.t_final, int.dt)
    })?;
    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    for c in &cells {
        if let Err(reason) = &c.outcome {
            eprintln!("cell kappa = {}, theta_bound = {} failed: {reason}", c.kappa, c.theta_bound);
        }
    }
    output::write(&cfg.output.dir, "sweep.csv", &output::sweep_csv(&cells)?)?;
    if cfg.output.plot_script {
        output::write(&cfg.output.dir, "plot_sweep.py", output::SWEEP_PLOT)?;
    }
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", cells.len());
        return Ok(EXIT_ERROR);
    }
    Ok(EXIT_OK)
}

fn verify(cfg: &RunConfig) -> Result<u8, CommandError> {
    let rows = run_checks(cfg);
    output::write(&cfg.output.dir, "verify.csv", &output::verify_csv(&rows))?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(EXIT_ERROR)
    }
}
