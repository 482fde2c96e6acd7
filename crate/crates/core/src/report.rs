//! Serializable records of what every solve stage measured: iteration
//! counts, contraction ratios, residuals, identity checks, fitted decay.

use serde::{Deserialize, Serialize};

use crate::diagnostics::IdentityReport;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub hash: String,
    pub rule: String,
    pub n_per_axis: usize,
    pub n_nodes: usize,
    pub v_max: f64,
    pub drift: [f64; 3],
    /// Analytic Maxwellian mass outside the cutoff ball.
    pub tail_mass: f64,
    /// `1 - quad(mu)` on the actual grid.
    pub mass_defect: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorReport {
    pub kernel_version: u32,
    pub nu0: f64,
    pub nu1: f64,
    pub c0: f64,
    pub cbar0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub lambda6: f64,
    pub null_residuals: [f64; 5],
    /// Measured constant of the kernel row-sum bound.
    pub kernel_row_const: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaStageReport {
    pub lambda: f64,
    pub increment: f64,
    /// Contraction ratio of the increment map measured by plain iteration.
    pub measured_ratio: Option<f64>,
    pub halvings: usize,
    pub iters: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsSolveReport {
    pub eps: f64,
    pub damp: f64,
    pub warm_start: bool,
    pub iters: usize,
    pub residual: f64,
    pub plain_ratio: Option<f64>,
    pub residual_history: Vec<f64>,
    pub boundary_defect: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainReport {
    pub d: f64,
    pub n_x: usize,
    pub lambda_stages: Vec<LambdaStageReport>,
    pub eps_solves: Vec<EpsSolveReport>,
    /// Differences between successive schedule solutions.
    pub eps_diffs: Vec<f64>,
    /// `|f_eps - f_{eps/2}|` per schedule entry, when measured.
    pub eps_half_diffs: Vec<f64>,
    /// Fitted slope of `log diff` vs `log eps`.
    pub eps_rate_slope: Option<f64>,
    pub unpenalized_residual: f64,
    /// Damping-level study: `|f_n - f_2n|` along the n schedule.
    pub n_diffs: Vec<f64>,
    pub conservation: Vec<IdentityReport>,
    /// Measured constant of the weighted dissipation bound
    /// `int e^{2 sigma1 x} |(I-P) f|_nu^2 dx <= C |e^{sigma1 x} g|^2`.
    pub dissipation_ratio: f64,
    pub shift_phi: [f64; 4],
    pub shift_residuals_before: [f64; 4],
    pub shift_residuals_after: [f64; 4],
    pub sigma_fit: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearReport {
    pub compatibility_moments: [f64; 4],
    pub damping_n0: usize,
    pub damping_ratios: Vec<f64>,
    pub domains: Vec<DomainReport>,
    /// Weighted sup discrepancies between successive slab doublings on the
    /// shared half-slab.
    pub d_discrepancies: Vec<f64>,
    pub d_converged: bool,
    pub sigma_final: Option<f64>,
    /// Relative change of the fitted decay across the last doubling.
    pub sigma_drift: Option<f64>,
    pub phi: [f64; 4],
    pub final_sup_w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonlinearReport {
    pub delta: f64,
    pub iters: usize,
    pub diff_norms: Vec<f64>,
    pub ratios: Vec<f64>,
    pub terminal_ratio: Option<f64>,
    pub residual: f64,
    pub boundary_defect: f64,
    pub source_null_defect: f64,
    pub converged: bool,
    pub sigma_fit: Option<f64>,
    /// Measured constant of the uniform iterate bound
    /// `|e^{sigma x} w f^j| <= 2 C1 delta / (sigma0 - sigma)`.
    pub uniform_bound_c1: f64,
    pub first_iterate: Box<LinearReport>,
}

/// Top-level run record; serialized to JSON by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub subcommand: String,
    pub grid: GridReport,
    pub operator: Option<OperatorReport>,
    pub identities: Vec<IdentityReport>,
    pub linear: Option<LinearReport>,
    pub nonlinear: Option<NonlinearReport>,
    pub timings: Vec<(String, f64)>,
}
