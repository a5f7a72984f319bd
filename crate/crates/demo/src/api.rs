use famhe_core::adiabatic::adiabatic_sweep;
use famhe_core::bundle::{DolbeaultData, MetricData, Preset};
use famhe_core::flow::{flow_run, theta, FlowConfig, FlowProblem};
use famhe_core::geometry::{build_grid, GridSpec, ProductGrid};
use famhe_core::moment_map::{nu, DeformationData, Path};
use famhe_core::projection::{holo_frame, HoloFrame, HOLO_TOL};
use famhe_core::random::FieldRng;
use serde::{Deserialize, Serialize};

/// Largest grid the page may request; keeps each call interactive.
pub const MAX_N: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("bad parameters: {0}")]
    Params(#[from] serde_json::Error),
    #[error("{0}")]
    Range(String),
    #[error(transparent)]
    Core(#[from] famhe_core::Error),
}

type Result<T> = std::result::Result<T, DemoError>;

/// Grid and deformation shared by all operations.
#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct Common {
    pub preset: String,
    pub epsilon: f64,
    pub fibre_n: usize,
    pub base_n: usize,
    /// Radial count when the preset lives on an annulus.
    pub radial_n: usize,
}

impl Default for Common {
    fn default() -> Self {
        Common { preset: "nilpotent_constant".into(), epsilon: 0.3, fibre_n: 8, base_n: 16, radial_n: 17 }
    }
}

impl Common {
    fn grid(&self, preset: &Preset) -> Result<ProductGrid> {
        for (name, n) in [("fibre_n", self.fibre_n), ("base_n", self.base_n), ("radial_n", self.radial_n)] {
            if !(4..=MAX_N + 1).contains(&n) {
                return Err(DemoError::Range(format!("{name} = {n} must lie in 4..={}", MAX_N + 1)));
            }
        }
        let spec = match preset {
            Preset::AnnulusMixed { .. } => GridSpec::annulus(self.fibre_n, self.radial_n, self.base_n),
            _ => GridSpec::torus(self.fibre_n, self.base_n),
        };
        Ok(build_grid(&spec)?)
    }

    fn setup(&self) -> Result<(ProductGrid, DolbeaultData)> {
        let preset = Preset::from_name(&self.preset, self.epsilon)?;
        let g = self.grid(&preset)?;
        let d = DolbeaultData::from_preset(&g, &preset)?;
        Ok((g, d))
    }
}

fn frame(g: &ProductGrid) -> Result<HoloFrame> {
    Ok(holo_frame(g, &DolbeaultData::trivial(g, 2), HOLO_TOL)?)
}

/// A scalar field on the base, row-major in (x, y).
#[derive(Debug, Serialize)]
pub struct Heatmap {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    fn new(g: &ProductGrid, values: Vec<f64>) -> Self {
        let (nx, ny) = g.base_dims();
        Heatmap { nx, ny, values }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    #[serde(flatten)]
    pub common: Common,
    pub lambda: f64,
    pub amplitude: f64,
    pub seed: u64,
    pub t_end: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { common: Common::default(), lambda: 1.0, amplitude: 0.3, seed: 0, t_end: 0.05 }
    }
}

#[derive(Debug, Serialize)]
pub struct FlowOutput {
    pub steps: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub sup_theta: Vec<f64>,
    pub residual: Vec<f64>,
    pub max_theta_increase: f64,
    pub theta_initial: Heatmap,
    pub theta_final: Heatmap,
}

/// Longest flow the page may request, in steps.
pub const MAX_STEPS: usize = 5000;

pub fn run_flow(params: &str) -> Result<String> {
    let p: FlowParams = serde_json::from_str(params)?;
    let (g, d) = p.common.setup()?;
    if g.base_kind() != famhe_core::geometry::BaseKind::Torus {
        return Err(DemoError::Range("the flow demo runs on a torus base".into()));
    }
    if !(p.amplitude >= 0.0 && p.amplitude <= 2.0) {
        return Err(DemoError::Range("amplitude must lie in [0, 2]".into()));
    }
    let pr = FlowProblem::new(&g, &DeformationData::from_dolbeault(&g, &d), p.lambda)?;
    if !(p.t_end > 0.0) || p.t_end / pr.default_dt() > MAX_STEPS as f64 {
        return Err(DemoError::Range(format!("t_end must be positive and at most {MAX_STEPS} steps")));
    }
    let u0 = FieldRng::new(p.seed).hermitian_base(&g, 2, 1, p.amplitude);
    let cfg = FlowConfig { t_end: p.t_end, snapshots: false, ..Default::default() };
    let rep = flow_run(&pr, &u0, &cfg)?;
    let last = rep.final_state.as_ref().expect("flow_run keeps the final state");
    let out = FlowOutput {
        steps: rep.steps,
        dt: rep.dt,
        theta_initial: Heatmap::new(&g, theta(&pr, &u0)),
        theta_final: Heatmap::new(&g, theta(&pr, &last.u)),
        times: rep.times,
        sup_theta: rep.sup_theta,
        residual: rep.residual,
        max_theta_increase: rep.max_theta_increase,
    };
    Ok(serde_json::to_string(&out)?)
}

#[derive(Debug, Serialize)]
pub struct MomentMapOutput {
    /// Diagonal entries of iν, which are real.
    pub nu_00: Heatmap,
    pub nu_11: Heatmap,
    /// Largest modulus of the off-diagonal entry.
    pub off_diagonal: f64,
    pub sup_norm: f64,
}

pub fn moment_map(params: &str) -> Result<String> {
    let c: Common = serde_json::from_str(params)?;
    let (g, d) = c.setup()?;
    let a = DeformationData::from_dolbeault(&g, &d);
    let inu = nu(&g, &MetricData::identity(&g, 2), &frame(&g)?, &a)?.i_nu();
    let entry = |i, j| (0..g.nbase()).map(|b| inu.at(b).get(i, j).re).collect::<Vec<_>>();
    let out = MomentMapOutput {
        nu_00: Heatmap::new(&g, entry(0, 0)),
        nu_11: Heatmap::new(&g, entry(1, 1)),
        off_diagonal: (0..g.nbase()).map(|b| inu.at(b).get(0, 1).norm()).fold(0.0, f64::max),
        sup_norm: inu.sup_norm(),
    };
    Ok(serde_json::to_string(&out)?)
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct AdiabaticParams {
    #[serde(flatten)]
    pub common: Common,
    pub lambda: f64,
    pub k_list: Vec<f64>,
}

impl Default for AdiabaticParams {
    fn default() -> Self {
        AdiabaticParams { common: Common::default(), lambda: 1.0, k_list: vec![16.0, 32.0, 64.0, 128.0] }
    }
}

#[derive(Debug, Serialize)]
pub struct AdiabaticOutput {
    pub k_list: Vec<f64>,
    pub defects: Vec<f64>,
    pub slope: Option<f64>,
}

pub fn adiabatic(params: &str) -> Result<String> {
    let p: AdiabaticParams = serde_json::from_str(params)?;
    if p.k_list.len() > 8 {
        return Err(DemoError::Range("at most 8 values of k".into()));
    }
    let (g, d) = p.common.setup()?;
    let rep = adiabatic_sweep(&g, &MetricData::identity(&g, 2), &frame(&g)?, &Path::linear(d), p.lambda, &p.k_list)?;
    Ok(serde_json::to_string(&AdiabaticOutput { k_list: rep.k_list, defects: rep.defects, slope: rep.slope })?)
}
