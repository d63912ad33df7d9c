//! Result envelope and renderers. Every JSON output embeds the resolved
//! configuration so a result file is reproducible on its own; every CSV
//! follows the per-experiment layouts.

use serde::{Deserialize, Serialize};

use compass_bell::dynamics::{write_lyapunov_csv, BifurcationDataset};
use compass_bell::eprb::{BellResult, ScanHit, SwitchingResult};
use compass_bell::nonlocal::SynthesisReport;
use compass_bell::ode::{fmt_f64, Trajectory};
use compass_bell::separatrix::SeparatrixReport;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub command: String,
    pub config: ExperimentConfig,
    pub result: CommandResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table1Row {
    pub x: f64,
    /// Wrapped angle at the measuring time, one entry per initial
    /// condition.
    pub theta_wrapped: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrobeRow {
    pub t: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub theta_wrapped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapRow {
    pub x: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftResult {
    /// The experiment at the configured measuring time.
    pub direct: BellResult,
    pub direct_t_m: f64,
    /// Escalation-search hit when the direct run missed `|S| = 4`.
    pub search: Option<ScanHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum CommandResult {
    Traj { trajectory: Trajectory },
    Table1 { rows: Vec<Table1Row> },
    Strobe { rows: Vec<StrobeRow> },
    Lyap { rows: Vec<LyapRow> },
    Bifurcate { dataset: BifurcationDataset },
    BellStatic { result: BellResult },
    BellDrift { result: DriftResult },
    BellRandom { result: SwitchingResult },
    SynthCos { report: SynthesisReport },
    SepCos { report: SeparatrixReport },
}

impl CommandResult {
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        match self {
            CommandResult::Traj { trajectory } => trajectory.write_csv(w),
            CommandResult::Table1 { rows } => {
                let n = rows.first().map_or(0, |r| r.theta_wrapped.len());
                write!(w, "x")?;
                for i in 1..=n {
                    write!(w, ",theta_wrapped_{i}")?;
                }
                writeln!(w)?;
                for r in rows {
                    write!(w, "{}", fmt_f64(r.x))?;
                    for v in &r.theta_wrapped {
                        write!(w, ",{}", fmt_f64(*v))?;
                    }
                    writeln!(w)?;
                }
                Ok(())
            }
            CommandResult::Strobe { rows } => {
                writeln!(w, "t,theta,theta_dot,theta_wrapped")?;
                for r in rows {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        fmt_f64(r.t),
                        fmt_f64(r.theta),
                        fmt_f64(r.theta_dot),
                        fmt_f64(r.theta_wrapped)
                    )?;
                }
                Ok(())
            }
            CommandResult::Lyap { rows } => {
                let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.x, r.lambda_max)).collect();
                write_lyapunov_csv(&pairs, w)
            }
            CommandResult::Bifurcate { dataset } => dataset.write_csv(w),
            CommandResult::BellStatic { result } => result.write_csv(w),
            CommandResult::BellDrift { result } => {
                let (bell, t_m) = match &result.search {
                    Some(hit) => (&hit.result, hit.t_m),
                    None => (&result.direct, result.direct_t_m),
                };
                bell.write_csv(w)?;
                writeln!(w, "t_m,{}", fmt_f64(t_m))
            }
            CommandResult::BellRandom { result } => result.write_csv(w),
            CommandResult::SynthCos { report } => report.write_csv(w),
            CommandResult::SepCos { report } => report.write_csv(w),
        }
    }
}
