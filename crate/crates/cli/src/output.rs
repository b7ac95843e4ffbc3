//! CSV emission. Every number is written with 17 significant digits so a
//! rerun with the same configuration reproduces the files byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use zcbf::acc::{CellSummary, SweepCell};
use zcbf::sim::Trajectory;

pub const TRAJECTORY_HEADER: &str = "t,v_l,v_f,D,u,delta,h,V,V_C,kkt_residual";
pub const SUMMARY_HEADER: &str = "min_h,gamma_max,min_u_over_mg";
pub const SWEEP_HEADER: &str = "kappa,theta_bound,min_h,gamma_max,gamma_plus_min_h,min_u_over_mg";
pub const VERIFY_HEADER: &str = "check,worst_residual,status";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("non-finite value in {file} column `{column}`")]
    NonFinite { file: &'static str, column: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn row(file: &'static str, columns: &[&str], values: &[f64], out: &mut String) -> Result<(), OutputError> {
    for (i, (c, v)) in columns.iter().zip(values).enumerate() {
        if !v.is_finite() {
            return Err(OutputError::NonFinite {
                file,
                column: c.to_string(),
            });
        }
        if i > 0 {
            out.push(',');
        }
        out.push_str(&num(*v));
    }
    out.push('\n');
    Ok(())
}

pub fn trajectory_csv(traj: &Trajectory) -> Result<String, OutputError> {
    let columns: Vec<&str> = TRAJECTORY_HEADER.split(',').collect();
    let mut out = String::with_capacity(traj.len() * 256);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for i in 0..traj.len() {
        let x = &traj.states[i];
        let values = [
            traj.times[i],
            x[0],
            x[1],
            x[2],
            traj.inputs[i][0],
            traj.deltas[i],
            traj.h_values[i],
            traj.v_values[i],
            traj.vc_values[i],
            traj.kkt_residuals[i],
        ];
        row("trajectory.csv", &columns, &values, &mut out)?;
    }
    Ok(out)
}

pub fn summary_csv(s: &CellSummary) -> Result<String, OutputError> {
    let columns: Vec<&str> = SUMMARY_HEADER.split(',').collect();
    let mut out = format!("{SUMMARY_HEADER}\n");
    row("summary.csv", &columns, &[s.min_h, s.gamma_max, s.min_u_over_mg], &mut out)?;
    Ok(out)
}

/// Failed cells are written with empty value fields; the `status` column is
/// only present when at least one cell failed.
pub fn sweep_csv(cells: &[SweepCell]) -> Result<String, OutputError> {
    let columns: Vec<&str> = SWEEP_HEADER.split(',').collect();
    let with_status = cells.iter().any(|c| c.outcome.is_err());
    let mut out = String::from(SWEEP_HEADER);
    if with_status {
        out.push_str(",status");
    }
    out.push('\n');
    for c in cells {
        match &c.outcome {
            Ok(s) => {
                let values = [c.kappa, c.theta_bound, s.min_h, s.gamma_max, s.gamma_plus_min_h, s.min_u_over_mg];
                row("sweep.csv", &columns, &values, &mut out)?;
                if with_status {
                    out.pop();
                    out.push_str(",ok\n");
                }
            }
            Err(reason) => {
                let _ = writeln!(out, "{},{},,,,,{}", num(c.kappa), num(c.theta_bound), quote(&format!("error: {reason}")));
            }
        }
    }
    Ok(out)
}

pub struct CheckRow {
    pub name: &'static str,
    pub worst: f64,
    pub pass: bool,
}

/// Non-finite residuals are written as `inf`/`nan` here; the check itself is
/// then reported as failed.
pub fn verify_csv(rows: &[CheckRow]) -> String {
    let mut out = format!("{VERIFY_HEADER}\n");
    for r in rows {
        let worst = if r.worst.is_finite() {
            num(r.worst)
        } else {
            r.worst.to_string()
        };
        let _ = writeln!(out, "{},{},{}", r.name, worst, if r.pass { "pass" } else { "fail" });
    }
    out
}

fn quote(s: &str) -> String {
    let flat = s.replace(['\n', '\r'], " ");
    if flat.contains([',', '"']) {
        format!("\"{}\"", flat.replace('"', "\"\""))
    } else {
        flat
    }
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<(), OutputError> {
    let io = |source| OutputError::Io {
        path: dir.join(name).display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(name), contents).map_err(io)
}

pub const TRAJECTORY_PLOT: &str = r#"import sys
import pandas as pd
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "trajectory.csv"
df = pd.read_csv(path)
fig, ax = plt.subplots(3, 1, sharex=True, figsize=(7, 8))
ax[0].plot(df.t, df.v_l, label="lead")
ax[0].plot(df.t, df.v_f, label="follower")
ax[0].set_ylabel("speed [m/s]")
ax[0].legend()
ax[1].plot(df.t, df.h)
ax[1].axhline(0.0, color="k", lw=0.5)
ax[1].set_ylabel("h")
ax[2].plot(df.t, df.u)
ax[2].set_ylabel("u [N]")
ax[2].set_xlabel("t [s]")
fig.tight_layout()
fig.savefig("trajectory.png", dpi=150)
"#;

pub const SWEEP_PLOT: &str = r#"import sys
import pandas as pd
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "sweep.csv"
df = pd.read_csv(path)
fig, ax = plt.subplots(1, 2, figsize=(10, 4))
for bound, g in df.groupby("theta_bound"):
    ax[0].plot(g.kappa, -g.min_h, marker="o", label=f"bound {bound:g}")
    ax[1].plot(g.kappa, g.min_u_over_mg.abs(), marker="o", label=f"bound {bound:g}")
ax[0].set_xlabel("kappa")
ax[0].set_ylabel("-min h")
ax[1].set_xlabel("kappa")
ax[1].set_ylabel("|min u| / (m g)")
ax[0].legend()
fig.tight_layout()
fig.savefig("sweep.png", dpi=150)
"#;
