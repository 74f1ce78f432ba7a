//! Experiment configuration: a versioned TOML document with one section per
//! concern. Every section has defaults; an experiment preset supplies the
//! values a file leaves out.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use kcl_core::metrics::{W2Method, WindowPolicy};
use kcl_core::particles::{GaussianInit, McmcConfig, SimParams};
use kcl_core::potential::{
    confinement_registry, interaction_registry, Benchmark, CertifyOptions, ConvexSplit,
    DissipativityConstants, PotentialSpec,
};
use kcl_core::registry::Params;
use kcl_core::vlasov::{FixedPointConfig, GridSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "certify")]
    Certify,
    E1_rate_independence,
    E2_chaos_scaling,
    E3_empirical_rate,
    E4_pde_vs_particles,
    E5_gaussian_oracle,
    E6_moment_uniformity,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::Certify,
        ExperimentId::E1_rate_independence,
        ExperimentId::E2_chaos_scaling,
        ExperimentId::E3_empirical_rate,
        ExperimentId::E4_pde_vs_particles,
        ExperimentId::E5_gaussian_oracle,
        ExperimentId::E6_moment_uniformity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Certify => "certify",
            ExperimentId::E1_rate_independence => "E1_rate_independence",
            ExperimentId::E2_chaos_scaling => "E2_chaos_scaling",
            ExperimentId::E3_empirical_rate => "E3_empirical_rate",
            ExperimentId::E4_pde_vs_particles => "E4_pde_vs_particles",
            ExperimentId::E5_gaussian_oracle => "E5_gaussian_oracle",
            ExperimentId::E6_moment_uniformity => "E6_moment_uniformity",
        }
    }

    /// Directory name under the output root (`E1`, ..., `certify`).
    pub fn short(self) -> &'static str {
        match self {
            ExperimentId::Certify => "certify",
            other => &other.name()[..2],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s || e.short() == s)
    }

    /// Experiments that refuse to run without a passing certificate.
    pub fn needs_certificate(self) -> bool {
        matches!(
            self,
            ExperimentId::E1_rate_independence
                | ExperimentId::E2_chaos_scaling
                | ExperimentId::E3_empirical_rate
                | ExperimentId::E4_pde_vs_particles
        )
    }
}

/// A registered confinement or interaction with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: Params,
}

/// Dissipativity constants as written in a config; `β` comes from the
/// dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    pub c_v: f64,
    pub c_v_prime: f64,
    pub c_w: f64,
    pub c_w_prime: f64,
    pub r: f64,
    pub hess_w_mixed_sup: f64,
    pub hess_v_sup: f64,
    pub hess_w_sup: f64,
}

/// Either a shipped benchmark or a custom model pair with its constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confinement: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convex_split: Option<ConvexSplit>,
}

impl PotentialConfig {
    pub fn benchmark(name: &str) -> Self {
        PotentialConfig {
            benchmark: Some(name.into()),
            confinement: None,
            interaction: None,
            constants: None,
            convex_split: None,
        }
    }

    pub fn build(&self, gamma: f64, sigma: f64) -> Result<PotentialSpec> {
        if let Some(name) = &self.benchmark {
            if self.confinement.is_some() || self.interaction.is_some() || self.constants.is_some()
            {
                return Err(HarnessError::config(
                    "potential",
                    "give either `benchmark` or a custom model, not both",
                ));
            }
            let b = Benchmark::by_name(name).ok_or_else(|| {
                HarnessError::config(
                    "potential.benchmark",
                    format!("unknown benchmark `{name}` (available: convex, nonconvex)"),
                )
            })?;
            return Ok(b.spec(gamma, sigma)?);
        }
        let (Some(v), Some(w), Some(c)) = (&self.confinement, &self.interaction, &self.constants)
        else {
            return Err(HarnessError::config(
                "potential",
                "a custom potential needs `confinement`, `interaction` and `constants`",
            ));
        };
        let v = confinement_registry().create(&v.name, &v.params)?;
        let w = interaction_registry().create(&w.name, &w.params)?;
        let constants = DissipativityConstants {
            c_v: c.c_v,
            c_v_prime: c.c_v_prime,
            c_w: c.c_w,
            c_w_prime: c.c_w_prime,
            r: c.r,
            hess_w_mixed_sup: c.hess_w_mixed_sup,
            hess_v_sup: c.hess_v_sup,
            hess_w_sup: c.hess_w_sup,
            beta: 1.0,
        }
        .with_dynamics(gamma, sigma);
        let mut spec = PotentialSpec::new(Arc::from(v), Arc::from(w), 1, constants)?;
        if let Some(split) = self.convex_split {
            spec = spec.with_convex_split(split);
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub gamma: f64,
    pub sigma: f64,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: String,
    pub kernel: String,
    #[serde(default)]
    pub kernel_params: Params,
}

impl DynamicsConfig {
    pub fn sim_params(&self, seed: u64) -> SimParams {
        SimParams {
            gamma: self.gamma,
            sigma: self.sigma,
            dt: self.dt,
            scheme: self.scheme.clone(),
            kernel: self.kernel.clone(),
            kernel_params: self.kernel_params.clone(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Particle numbers, ascending.
    pub n_list: Vec<usize>,
    pub replicas: usize,
    /// Observation every this many steps.
    pub stride: usize,
}

/// Grid for the one-dimensional kinetic solver and fixed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_y: usize,
    /// Half-widths of the box; sized from the potential when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_half: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_half: Option<f64>,
    /// Fraction of the largest stable step used by the solver.
    pub cfl_fraction: f64,
    pub boundary_mass_tol: f64,
    #[serde(default)]
    pub fixed_point: FixedPointConfig,
}

impl GridConfig {
    pub fn grid(&self, spec: &PotentialSpec, beta: f64) -> Result<GridSpec> {
        let auto = GridSpec::auto(spec, beta, self.n_x, self.n_y)?;
        Ok(GridSpec::symmetric(
            self.x_half.unwrap_or(auto.x_max),
            self.n_x,
            self.y_half.unwrap_or(auto.y_max),
            self.n_y,
        )?)
    }
}

/// Pass/fail thresholds. Defaults are the acceptance values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// E1: largest allowed max/min ratio of fitted rates across `N`.
    pub rate_ratio_max: f64,
    /// E2: admissible log-log slope of `E|Z − Z̄|²` against `N`.
    pub chaos_slope: [f64; 2],
    /// E3: admissible log-log slope of `E W₂²` against `N`.
    pub empirical_slope: [f64; 2],
    /// E4: largest `W₁` between particle and grid `x`-marginals.
    pub pde_w1_max: f64,
    /// E5: largest relative `W₂` error of the Gaussian fit.
    pub gaussian_rel_error_max: f64,
    /// E6: confidence level of the slope interval that must contain 0.
    pub moment_ci_level: f64,
    /// Gibbs invariance: moments within this many combined standard errors.
    pub gibbs_se_multiplier: f64,
    /// Largest allowed increase of `H_W` between diagnostics of the grid
    /// solver.
    pub hw_increase_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            rate_ratio_max: 1.25,
            chaos_slope: [-1.3, -0.7],
            empirical_slope: [-0.7, -0.3],
            pde_w1_max: 0.02,
            gaussian_rel_error_max: 0.05,
            moment_ci_level: 0.95,
            gibbs_se_multiplier: 3.0,
            hw_increase_tol: 1e-9,
        }
    }
}

/// Settings of the empirical-rate experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalConfig {
    /// Size of the fixed sample of the stationary law.
    pub reference_samples: usize,
    pub w2: W2Method,
}

/// One full experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub potential: PotentialConfig,
    pub dynamics: DynamicsConfig,
    pub run: RunConfig,
    /// Initial law of the particles.
    pub init: GaussianInit,
    /// Second initial law (the other side of a synchronous coupling).
    pub init_b: GaussianInit,
    pub fit: WindowPolicy,
    pub grid: GridConfig,
    pub mcmc: McmcConfig,
    pub empirical: EmpiricalConfig,
    pub certify: CertifyOptionsConfig,
    pub thresholds: Thresholds,
}

/// Scan settings of the certificate (the dynamics come from `[dynamics]`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptionsConfig {
    pub scan: kcl_core::potential::ScanConfig,
    pub quadrature: kcl_core::potential::QuadratureConfig,
}

impl ExperimentConfig {
    /// Acceptance-sized defaults for an experiment.
    pub fn preset(id: ExperimentId) -> Self {
        let mut c = ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: id,
            seed: 20_240_601,
            out_dir: PathBuf::from("out"),
            potential: PotentialConfig::benchmark("nonconvex"),
            dynamics: DynamicsConfig {
                gamma: 1.0,
                sigma: std::f64::consts::SQRT_2,
                dt: 0.01,
                t_end: 8.0,
                scheme: "baoab".into(),
                kernel: "chebyshev".into(),
                kernel_params: Params::new(),
            },
            run: RunConfig {
                n_list: vec![64, 256, 1024, 4096],
                replicas: 20,
                stride: 10,
            },
            init: GaussianInit {
                x_mean: 1.0,
                x_std: 1.0,
                y_mean: 0.0,
                y_std: 1.0,
            },
            init_b: GaussianInit {
                x_mean: -1.0,
                x_std: 1.0,
                y_mean: 0.0,
                y_std: 1.0,
            },
            fit: WindowPolicy::default(),
            grid: GridConfig {
                n_x: 240,
                n_y: 160,
                x_half: None,
                y_half: None,
                cfl_fraction: 0.9,
                boundary_mass_tol: 1e-4,
                fixed_point: FixedPointConfig::default(),
            },
            mcmc: McmcConfig::default(),
            empirical: EmpiricalConfig {
                reference_samples: 4096,
                w2: W2Method::Exact,
            },
            certify: CertifyOptionsConfig::default(),
            thresholds: Thresholds::default(),
        };
        match id {
            ExperimentId::Certify => {
                c.run.n_list = vec![1];
                c.run.replicas = 1;
            }
            ExperimentId::E1_rate_independence => {
                c.fit.t_lo = Some(1.0);
                c.fit.t_hi = Some(8.0);
            }
            ExperimentId::E2_chaos_scaling => {
                c.potential = PotentialConfig::benchmark("convex");
                c.dynamics.t_end = 1.0;
                c.run.n_list = vec![128, 512, 2048, 8192];
                c.run.replicas = 32;
                c.init = GaussianInit {
                    x_mean: 1.0,
                    x_std: 0.8,
                    y_mean: 0.0,
                    y_std: 1.0,
                };
            }
            ExperimentId::E3_empirical_rate => {
                c.dynamics.t_end = 2.0;
                c.run.n_list = vec![256, 1024, 4096];
                c.run.replicas = 8;
            }
            ExperimentId::E4_pde_vs_particles => {
                c.dynamics.t_end = 2.0;
                c.run.n_list = vec![100_000];
                c.run.replicas = 1;
                c.init = GaussianInit {
                    x_mean: 1.0,
                    x_std: 0.5,
                    y_mean: 0.0,
                    y_std: 1.0,
                };
            }
            ExperimentId::E5_gaussian_oracle => {
                c.potential = PotentialConfig::benchmark("convex");
                c.dynamics.dt = 0.005;
                c.dynamics.t_end = 5.0;
                c.run.n_list = vec![10_000];
                c.run.replicas = 10;
                c.run.stride = 100;
                c.init = GaussianInit {
                    x_mean: 1.0,
                    x_std: 0.5,
                    y_mean: -0.5,
                    y_std: 0.8,
                };
            }
            ExperimentId::E6_moment_uniformity => {
                c.dynamics.t_end = 20.0;
                c.run.replicas = 8;
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::config(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        let d = &self.dynamics;
        if !(d.dt.is_finite() && d.dt > 0.0) {
            return Err(HarnessError::config(
                "dynamics.dt",
                format!("dt must be positive, got {}", d.dt),
            ));
        }
        if !(d.t_end.is_finite() && d.t_end > 0.0) {
            return Err(HarnessError::config("dynamics.t_end", "must be positive"));
        }
        self.sim_params(0)
            .validate()
            .map_err(|e| HarnessError::config("dynamics", e.to_string()))?;
        let r = &self.run;
        if r.n_list.is_empty() || r.n_list.contains(&0) {
            return Err(HarnessError::config(
                "run.n_list",
                "must be a nonempty list of positive sizes",
            ));
        }
        if r.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HarnessError::config(
                "run.n_list",
                "must be strictly ascending",
            ));
        }
        if r.replicas == 0 || r.stride == 0 {
            return Err(HarnessError::config(
                "run",
                "replicas and stride must be positive",
            ));
        }
        if !(self.grid.cfl_fraction > 0.0 && self.grid.cfl_fraction <= 1.0) {
            return Err(HarnessError::config(
                "grid.cfl_fraction",
                "must lie in (0, 1]",
            ));
        }
        self.spec()?;
        Ok(())
    }

    pub fn sim_params(&self, seed: u64) -> SimParams {
        self.dynamics.sim_params(seed)
    }

    pub fn spec(&self) -> Result<PotentialSpec> {
        self.potential
            .build(self.dynamics.gamma, self.dynamics.sigma)
    }

    pub fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            gamma: self.dynamics.gamma,
            sigma: self.dynamics.sigma,
            scan: self.certify.scan.clone(),
            quadrature: self.certify.quadrature.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::config("<root>", e.to_string()))
    }

    /// Parses a config. The `experiment` key selects a preset that fills in
    /// omitted sections and keys.
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::config("<root>", e.to_string()))?;
        if !doc.contains_key("schema_version") {
            return Err(HarnessError::config("schema_version", "missing field"));
        }
        let id = match doc.get("experiment") {
            Some(toml::Value::String(s)) => ExperimentId::parse(s).ok_or_else(|| {
                HarnessError::config("experiment", format!("unknown experiment `{s}`"))
            })?,
            Some(_) => return Err(HarnessError::config("experiment", "must be a string")),
            None => return Err(HarnessError::config("experiment", "missing field")),
        };
        let mut doc = doc;
        doc.insert("experiment".into(), toml::Value::String(id.name().into()));
        let preset = toml::Table::try_from(Self::preset(id))
            .map_err(|e| HarnessError::config("<preset>", e.to_string()))?;
        let merged = merge(preset, doc);
        let mut track = serde_path_to_error::Track::new();
        let de = serde_path_to_error::Deserializer::new(toml::Value::Table(merged), &mut track);
        let cfg = ExperimentConfig::deserialize(de)
            .map_err(|e| HarnessError::config(track.path().to_string(), e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Overlays `over` on `base`, recursing into tables.
fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if k != "potential" => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
