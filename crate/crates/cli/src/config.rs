//! The experiment configuration document: one JSON file describing every
//! subcommand's inputs, schema-validated (unknown keys rejected), with
//! defaults matching the standard model values throughout.

use serde::{Deserialize, Serialize};

use compass_bell::dynamics::LyapunovSettings;
use compass_bell::eprb::{Dichotomizer, SideCorrections, SwitchingMenu};
use compass_bell::nonlocal::SynthesisOptions;
use compass_bell::ode::{IntegratorSettings, Model, PhaseState};
use compass_bell::separatrix::Assignment;

fn state(theta: f64, theta_dot: f64) -> PhaseState {
    PhaseState::new(theta, theta_dot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: Model,
    pub integrator: IntegratorSettings,
    /// Measurement rule for `bell-static` and `bell-random`.
    pub dichotomizer: Dichotomizer,
    /// Seed for the random-switching generator (ChaCha8); `--seed`
    /// overrides it.
    pub seed: u64,
    pub traj: TrajConfig,
    pub table1: Table1Config,
    pub strobe: StrobeConfig,
    pub lyap: LyapConfig,
    pub bifurcate: BifurcateConfig,
    pub bell_static: BellStaticConfig,
    pub bell_drift: BellDriftConfig,
    pub bell_random: BellRandomConfig,
    /// Full synthesis options, self-contained (own dichotomizer/budget).
    pub synth_cos: SynthesisOptions,
    pub sep_cos: SepCosConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajConfig {
    pub x: f64,
    pub initial: PhaseState,
    pub t_end: f64,
    pub sample_every: usize,
}

impl Default for TrajConfig {
    fn default() -> Self {
        Self {
            x: 0.160,
            initial: state(0.6, 0.0),
            t_end: 100.0,
            sample_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table1Config {
    pub x_values: Vec<f64>,
    pub initials: Vec<PhaseState>,
    pub t_m: f64,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            x_values: vec![0.160, 0.170, 0.230, 0.232],
            initials: vec![state(0.6, 0.0), state(0.6, 1e-3)],
            t_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrobeConfig {
    pub x: f64,
    pub initial: PhaseState,
    pub n_transient: u64,
    pub n_keep: u64,
}

impl Default for StrobeConfig {
    fn default() -> Self {
        Self {
            x: 0.232,
            initial: state(0.6, 0.0),
            n_transient: 200,
            n_keep: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapConfig {
    pub x_values: Vec<f64>,
    pub initial: PhaseState,
    pub settings: LyapunovSettings,
}

impl Default for LyapConfig {
    fn default() -> Self {
        Self {
            x_values: vec![0.160, 0.170, 0.230, 0.232],
            initial: state(0.6, 0.0),
            settings: LyapunovSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BifurcateConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    pub initial: PhaseState,
    pub n_transient: u64,
    pub n_keep: u64,
}

impl Default for BifurcateConfig {
    fn default() -> Self {
        Self {
            x_lo: 0.1600,
            x_hi: 0.2321,
            n_x: 100,
            initial: state(0.6, 0.0),
            n_transient: 200,
            n_keep: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellStaticConfig {
    pub a: f64,
    pub b: f64,
    pub a_prime: f64,
    pub b_prime: f64,
    pub ensemble: Vec<PhaseState>,
}

impl Default for BellStaticConfig {
    fn default() -> Self {
        Self {
            a: 0.160,
            b: 0.170,
            a_prime: 0.230,
            b_prime: 0.232,
            ensemble: vec![state(0.6, 0.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellDriftConfig {
    pub a: f64,
    pub b: f64,
    pub a_prime: f64,
    pub b_prime: f64,
    /// Hidden variable used by each of the four runs.
    pub lambda_runs: [PhaseState; 4],
    pub delta: f64,
    pub t_m: f64,
    pub search: DriftSearchConfig,
}

impl Default for BellDriftConfig {
    fn default() -> Self {
        Self {
            a: 0.160,
            b: 0.170,
            a_prime: 0.230,
            b_prime: 0.232,
            lambda_runs: [
                state(0.6, 0.0),
                state(0.6, 0.0),
                state(0.6, 0.0),
                state(0.6, 1e-3),
            ],
            delta: 0.3,
            t_m: 100.0,
            search: DriftSearchConfig::default(),
        }
    }
}

/// Measuring-time escalation search, used when the configured `t_m` does
/// not already reach `|S| = 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSearchConfig {
    pub enabled: bool,
    pub t_max: f64,
    pub spacing: f64,
}

impl Default for DriftSearchConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            t_max: 3200.0,
            spacing: 1.0,
        }
    }
}

/// Setting-dependent corrections for `bell-random`: none, or an explicit
/// table indexed by setting combination and ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum CorrectionsConfig {
    #[default]
    Zero,
    /// `table[combo][member]` with combos in row-major order
    /// `(0,0), (0,1), (1,0), (1,1)` over (side I choice, side II choice).
    Table(Vec<Vec<SideCorrections>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellRandomConfig {
    pub menu: SwitchingMenu,
    pub ensemble: Vec<PhaseState>,
    pub n_pairs: u64,
    pub corrections: CorrectionsConfig,
}

impl Default for BellRandomConfig {
    fn default() -> Self {
        Self {
            menu: SwitchingMenu {
                side_i: [0.160, 0.230],
                side_ii: [0.170, 0.232],
            },
            ensemble: vec![state(0.6, 0.0)],
            n_pairs: 4000,
            corrections: CorrectionsConfig::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SepCosConfig {
    pub grid: Vec<f64>,
    pub n: usize,
    pub epsilon: f64,
    pub assignment: Assignment,
}

impl Default for SepCosConfig {
    fn default() -> Self {
        Self {
            grid: compass_bell::nonlocal::default_angle_grid(),
            n: 8,
            epsilon: 1e-3,
            assignment: Assignment::Nearest,
        }
    }
}
