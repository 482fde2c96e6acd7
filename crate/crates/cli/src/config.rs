//! Run configuration: plain-text sections with strict key checking.

use anyhow::{bail, Context};
use serde::Deserialize;
use std::sync::Arc;

use knudsen_core::linear::{SolveConfig, SourceSpec};
use knudsen_core::nonlinear::PicardOptions;
use knudsen_core::operator::WeightSpec;
use knudsen_core::velocity::{build_grid, GridSpec, QuadRule, VelocityGrid};
use knudsen_core::Scalar;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub weight: WeightSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub nonlinear: NonlinearSection,
    #[serde(default)]
    pub gamma: GammaSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub v_max: f64,
    pub n_per_axis: usize,
    pub rule: String,
    pub drift: [f64; 2],
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { v_max: 6.0, n_per_axis: 16, rule: "hermite".into(), drift: [0.0, 0.0] }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSection {
    pub beta: f64,
    pub varsigma: f64,
}

impl Default for WeightSection {
    fn default() -> Self {
        WeightSection { beta: 3.0, varsigma: 0.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub sigma0: f64,
    pub lambda_steps: Vec<f64>,
    pub n_schedule: Vec<usize>,
    pub eps_schedule: Vec<f64>,
    pub d_schedule: Vec<f64>,
    pub tol_fixed_point: f64,
    pub tol_cauchy: f64,
    pub d_tol_rel: f64,
    pub krylov_depth: usize,
    pub max_inner_iters: usize,
    pub measure_eps_halving: bool,
    pub measure_n_limit: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveConfig::<Scalar>::default();
        SolverSection {
            sigma0: 0.3,
            lambda_steps: d.lambda_steps,
            n_schedule: d.n_schedule,
            eps_schedule: d.eps_schedule,
            d_schedule: d.d_schedule,
            tol_fixed_point: d.tol_fixed_point,
            tol_cauchy: d.tol_cauchy,
            d_tol_rel: d.d_tol_rel,
            krylov_depth: d.anderson_depth,
            max_inner_iters: d.max_inner_iters,
            measure_eps_halving: d.measure_eps_halving,
            measure_n_limit: d.measure_n_limit,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    /// "zero" | "shear" | "stream" | "tabulated"
    pub fb_family: String,
    /// Target weighted sup of the boundary data.
    pub fb_scale_sup_w: f64,
    /// Node values file for the tabulated family.
    pub fb_path: Option<String>,
    /// "zero" | "stress_decay" | "tabulated"
    pub source_family: String,
    pub source_amplitude: f64,
    pub source_rate: f64,
    /// Node values file for the tabulated source profile.
    pub source_path: Option<String>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            fb_family: "shear".into(),
            fb_scale_sup_w: 0.05,
            fb_path: None,
            source_family: "zero".into(),
            source_amplitude: 0.0,
            source_rate: 1.0,
            source_path: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearSection {
    pub max_picard: usize,
    pub tol_picard: f64,
}

impl Default for NonlinearSection {
    fn default() -> Self {
        NonlinearSection { max_picard: 50, tol_picard: 1e-8 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaSection {
    pub n_phi: usize,
    pub n_polar: usize,
}

impl Default for GammaSection {
    fn default() -> Self {
        GammaSection { n_phi: 16, n_polar: 8 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsSection {
    pub write_csv: bool,
    pub write_field: bool,
    pub write_report: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection { write_csv: true, write_field: true, write_report: true }
    }
}

impl Config {
    pub fn from_path(path: &std::path::Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match self.grid.rule.as_str() {
            "hermite" | "uniform" => {}
            other => bail!("grid.rule must be \"hermite\" or \"uniform\", got {other:?}"),
        }
        match self.problem.fb_family.as_str() {
            "zero" | "shear" | "stream" | "tabulated" => {}
            other => bail!("problem.fb_family {other:?} unknown"),
        }
        if self.problem.fb_family == "tabulated" && self.problem.fb_path.is_none() {
            bail!("problem.fb_path required for the tabulated family");
        }
        match self.problem.source_family.as_str() {
            "zero" | "stress_decay" | "tabulated" => {}
            other => bail!("problem.source_family {other:?} unknown"),
        }
        if self.problem.source_family == "tabulated" && self.problem.source_path.is_none() {
            bail!("problem.source_path required for the tabulated source family");
        }
        self.grid_spec().validate().map_err(|e| anyhow::anyhow!("grid: {e}"))?;
        self.weight_spec().map_err(|e| anyhow::anyhow!("weight: {e}"))?;
        self.solve_config().validate().map_err(|e| anyhow::anyhow!(e))?;
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec<Scalar> {
        let rule = match self.grid.rule.as_str() {
            "uniform" => QuadRule::Uniform,
            _ => QuadRule::Hermite,
        };
        GridSpec::new(self.grid.v_max, self.grid.n_per_axis, rule, self.grid.drift)
    }

    pub fn build_grid(&self) -> anyhow::Result<Arc<VelocityGrid<Scalar>>> {
        Ok(Arc::new(build_grid(&self.grid_spec())?))
    }

    pub fn weight_spec(&self) -> anyhow::Result<WeightSpec<Scalar>> {
        Ok(WeightSpec::new(self.weight.beta, self.weight.varsigma)?)
    }

    pub fn solve_config(&self) -> SolveConfig<Scalar> {
        SolveConfig {
            lambda_steps: self.solver.lambda_steps.clone(),
            n_schedule: self.solver.n_schedule.clone(),
            eps_schedule: self.solver.eps_schedule.clone(),
            d_schedule: self.solver.d_schedule.clone(),
            tol_fixed_point: self.solver.tol_fixed_point,
            tol_cauchy: self.solver.tol_cauchy,
            d_tol_rel: self.solver.d_tol_rel,
            anderson_depth: self.solver.krylov_depth,
            max_inner_iters: self.solver.max_inner_iters,
            measure_ratio_iters: 2,
            measure_eps_halving: self.solver.measure_eps_halving,
            measure_n_limit: self.solver.measure_n_limit,
        }
    }

    pub fn picard_options(&self) -> PicardOptions<Scalar> {
        PicardOptions { max_iters: self.nonlinear.max_picard, tol: self.nonlinear.tol_picard }
    }

    /// Boundary data on the grid, scaled to the configured weighted sup.
    pub fn boundary_data(
        &self,
        grid: &VelocityGrid<Scalar>,
        weight: &WeightSpec<Scalar>,
    ) -> anyhow::Result<Vec<Scalar>> {
        let mut fb: Vec<Scalar> = match self.problem.fb_family.as_str() {
            "zero" => vec![0.0; grid.len()],
            "shear" => grid
                .nodes()
                .iter()
                .map(|v| {
                    if v[2] < 0.0 {
                        v[0] * v[1] * (-(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
                    } else {
                        0.0
                    }
                })
                .collect(),
            "stream" => grid
                .nodes()
                .iter()
                .map(|v| {
                    if v[2] < 0.0 {
                        v[0] * (-(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
                    } else {
                        0.0
                    }
                })
                .collect(),
            "tabulated" => {
                let path = self.problem.fb_path.as_ref().expect("validated");
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading tabulated boundary data {path}"))?;
                let vals: Vec<Scalar> = text
                    .split_whitespace()
                    .map(|t| t.parse::<Scalar>().map_err(anyhow::Error::from))
                    .collect::<anyhow::Result<_>>()?;
                if vals.len() != grid.len() {
                    bail!("tabulated data has {} values, grid has {} nodes", vals.len(), grid.len());
                }
                vals
            }
            _ => unreachable!(),
        };
        if self.problem.fb_family != "zero" && self.problem.fb_scale_sup_w > 0.0 {
            let w = weight.values(grid);
            let sup = fb.iter().zip(&w).fold(0.0f64, |m, (&f, &wi)| m.max((wi * f).abs()));
            if sup > 0.0 {
                let s = self.problem.fb_scale_sup_w / sup;
                for x in fb.iter_mut() {
                    *x *= s;
                }
            }
        }
        Ok(fb)
    }

    pub fn source_spec(&self, grid: &VelocityGrid<Scalar>) -> anyhow::Result<SourceSpec<Scalar>> {
        Ok(match self.problem.source_family.as_str() {
            "stress_decay" => {
                let mut profile = knudsen_core::operator::a31(grid);
                for x in profile.iter_mut() {
                    *x *= self.problem.source_amplitude;
                }
                SourceSpec::Separable { profile, rate: self.problem.source_rate }
            }
            "tabulated" => {
                let path = self.problem.source_path.as_ref().expect("validated");
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading tabulated source profile {path}"))?;
                let profile: Vec<Scalar> = text
                    .split_whitespace()
                    .map(|t| t.parse::<Scalar>().map_err(anyhow::Error::from))
                    .collect::<anyhow::Result<_>>()?;
                if profile.len() != grid.len() {
                    bail!(
                        "tabulated source has {} values, grid has {} nodes",
                        profile.len(),
                        grid.len()
                    );
                }
                SourceSpec::Separable { profile, rate: self.problem.source_rate }
            }
            _ => SourceSpec::Zero,
        })
    }
}
