//! JSON scenario configuration: strict schema, named presets, and the
//! resolved run description the drivers consume.

use crate::error::{Error, Result};
use crate::nbody::{ClusterPartition, MassSystem, State};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Dd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSettings {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default)]
    pub max_step: Option<f64>,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Collision stop: min pairwise distance in the focus cluster below this
    /// fraction of the initial cluster size.
    #[serde(default = "default_stop_fraction")]
    pub stop_fraction: f64,
    #[serde(default)]
    pub precision: Precision,
}

fn default_rel_tol() -> f64 {
    1e-12
}
fn default_abs_tol() -> f64 {
    1e-14
}
fn default_t_max() -> f64 {
    50.0
}
fn default_stop_fraction() -> f64 {
    1e-8
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            max_step: None,
            t_max: default_t_max(),
            stop_fraction: default_stop_fraction(),
            precision: Precision::Double,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisToggles {
    #[serde(default = "yes")]
    pub rates: bool,
    #[serde(default = "yes")]
    pub perturbation: bool,
    #[serde(default)]
    pub segment: bool,
    #[serde(default = "yes")]
    pub spin: bool,
    #[serde(default = "yes")]
    pub cc_residual: bool,
}

fn yes() -> bool {
    true
}

impl Default for AnalysisToggles {
    fn default() -> Self {
        AnalysisToggles {
            rates: true,
            perturbation: true,
            segment: false,
            spin: true,
            cc_residual: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootSettings {
    pub param_min: f64,
    pub param_max: f64,
    #[serde(default = "default_target_fraction")]
    pub target_fraction: f64,
}

fn default_target_fraction() -> f64 {
    1e-10
}

/// One scenario: either a named preset or explicit masses plus state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub masses: Option<Vec<f64>>,
    #[serde(default)]
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub velocities: Option<Vec<[f64; 2]>>,
    /// Focus-cluster member indices.
    #[serde(default)]
    pub cluster: Option<Vec<usize>>,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default)]
    pub analyses: AnalysisToggles,
    #[serde(default)]
    pub fit_window: Option<FitWindow>,
    #[serde(default)]
    pub shoot: Option<ShootSettings>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// A scenario with everything expanded to explicit values.
pub struct ResolvedScenario {
    pub name: String,
    pub masses: MassSystem,
    pub state: State,
    pub part: ClusterPartition,
    pub integrator: IntegratorSettings,
    pub analyses: AnalysisToggles,
    pub fit_window: Option<FitWindow>,
    pub shoot: Option<ShootSettings>,
    /// Parametrized initial state for shooting scenarios.
    pub family: Option<Box<dyn Fn(f64) -> State + Send + Sync>>,
    pub seed: u64,
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Config {
        field: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    if scenario.schema != SCHEMA_VERSION {
        return Err(Error::Config {
            field: "schema".into(),
            message: format!(
                "unsupported schema version {} (expected {})",
                scenario.schema, SCHEMA_VERSION
            ),
        });
    }
    Ok(scenario)
}

struct PresetData {
    masses: Vec<f64>,
    positions: Vec<Vec2>,
    velocities: Vec<Vec2>,
    cluster: Vec<usize>,
    t_max: f64,
    shoot: Option<ShootSettings>,
}

fn preset(name: &str) -> Result<PresetData> {
    let h = 3f64.sqrt();
    match name {
        "kepler_pair" => Ok(PresetData {
            masses: vec![1.0, 1.0],
            positions: vec![Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0)],
            velocities: vec![Vec2::ZERO, Vec2::ZERO],
            cluster: vec![0, 1],
            t_max: 4.0,
            shoot: None,
        }),
        "lagrange_homothetic" => Ok(PresetData {
            masses: vec![1.0, 1.0, 1.0],
            positions: vec![
                Vec2::new(-0.5, -h / 6.0),
                Vec2::new(0.5, -h / 6.0),
                Vec2::new(0.0, h / 3.0),
            ],
            velocities: vec![Vec2::ZERO; 3],
            cluster: vec![0, 1, 2],
            t_max: 2.0,
            shoot: None,
        }),
        "euler_homothetic" => Ok(PresetData {
            masses: vec![1.0, 1.0, 1.0],
            positions: vec![
                Vec2::new(-1.0, 0.0),
                Vec2::new(0.0, 0.0),
                Vec2::new(1.0, 0.0),
            ],
            velocities: vec![Vec2::ZERO; 3],
            cluster: vec![0, 1, 2],
            t_max: 2.0,
            shoot: None,
        }),
        "binary_in_3body" => Ok(PresetData {
            masses: vec![1.0, 1.0, 0.8],
            positions: vec![
                Vec2::new(-0.5, 0.0),
                Vec2::new(0.5, 0.0),
                Vec2::new(2.5, 2.0),
            ],
            velocities: vec![Vec2::new(0.3, 0.0), Vec2::new(-0.3, 0.0), Vec2::ZERO],
            cluster: vec![0, 1],
            t_max: 6.0,
            shoot: Some(ShootSettings {
                param_min: -0.2,
                param_max: 0.2,
                target_fraction: 1e-10,
            }),
        }),
        "binary_in_4body" => Ok(PresetData {
            masses: vec![1.0, 1.0, 0.8, 0.6],
            positions: vec![
                Vec2::new(-0.5, 0.0),
                Vec2::new(0.5, 0.0),
                Vec2::new(2.5, 2.0),
                Vec2::new(-2.0, 2.5),
            ],
            velocities: vec![
                Vec2::new(0.3, 0.0),
                Vec2::new(-0.3, 0.0),
                Vec2::ZERO,
                Vec2::ZERO,
            ],
            cluster: vec![0, 1],
            t_max: 6.0,
            shoot: Some(ShootSettings {
                param_min: -0.2,
                param_max: 0.2,
                target_fraction: 1e-10,
            }),
        }),
        other => Err(Error::Config {
            field: "preset".into(),
            message: format!(
                "unknown preset `{other}` (known: kepler_pair, lagrange_homothetic, \
                 euler_homothetic, binary_in_3body, binary_in_4body)"
            ),
        }),
    }
}

/// Shooting family of a binary preset: the parameter is the transverse
/// velocity offset applied antisymmetrically to the pair.
fn binary_family(masses: Vec<f64>, positions: Vec<Vec2>, velocities: Vec<Vec2>) -> impl Fn(f64) -> State {
    move |p: f64| {
        let mut v = velocities.clone();
        v[0].y += p;
        v[1].y -= p;
        let _ = &masses;
        State::new(0.0, positions.clone(), v)
    }
}

impl Scenario {
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        let (masses, positions, velocities, cluster, t_max_default, shoot_default) =
            if let Some(name) = &self.preset {
                let p = preset(name)?;
                (
                    p.masses,
                    p.positions,
                    p.velocities,
                    p.cluster,
                    Some(p.t_max),
                    p.shoot,
                )
            } else {
                let masses = self.masses.clone().ok_or_else(|| Error::Config {
                    field: "masses".into(),
                    message: "explicit scenarios need masses".into(),
                })?;
                let positions: Vec<Vec2> = self
                    .positions
                    .clone()
                    .ok_or_else(|| Error::Config {
                        field: "positions".into(),
                        message: "explicit scenarios need positions".into(),
                    })?
                    .into_iter()
                    .map(|[x, y]| Vec2::new(x, y))
                    .collect();
                let velocities: Vec<Vec2> = self
                    .velocities
                    .clone()
                    .ok_or_else(|| Error::Config {
                        field: "velocities".into(),
                        message: "explicit scenarios need velocities".into(),
                    })?
                    .into_iter()
                    .map(|[x, y]| Vec2::new(x, y))
                    .collect();
                let cluster = self.cluster.clone().ok_or_else(|| Error::Config {
                    field: "cluster".into(),
                    message: "explicit scenarios need a focus cluster".into(),
                })?;
                (masses, positions, velocities, cluster, None, None)
            };

        if positions.len() != masses.len() || velocities.len() != masses.len() {
            return Err(Error::Config {
                field: "positions".into(),
                message: "positions/velocities length must match masses".into(),
            });
        }
        // explicit states must be non-singular
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if (positions[i] - positions[j]).norm() < 1e-12 {
                    return Err(Error::Config {
                        field: "positions".into(),
                        message: format!("bodies {i} and {j} coincide"),
                    });
                }
            }
        }

        let mass_system = MassSystem::new(masses.clone())?;
        // an explicit cluster wins over the preset's default
        let cluster = self.cluster.clone().unwrap_or(cluster);
        let part = ClusterPartition::focus_with_rest(cluster, masses.len())?;
        let mut integrator = self.integrator.clone();
        if let Some(tm) = t_max_default {
            if (integrator.t_max - default_t_max()).abs() < 1e-30 {
                integrator.t_max = tm;
            }
        }
        let shoot = self.shoot.or(shoot_default);
        let family: Option<Box<dyn Fn(f64) -> State + Send + Sync>> = if shoot.is_some() {
            Some(Box::new(binary_family(
                masses,
                positions.clone(),
                velocities.clone(),
            )))
        } else {
            None
        };
        Ok(ResolvedScenario {
            name: self
                .name
                .clone()
                .or_else(|| self.preset.clone())
                .unwrap_or_else(|| "scenario".into()),
            masses: mass_system,
            state: State::new(0.0, positions, velocities),
            part,
            integrator,
            analyses: self.analyses.clone(),
            fit_window: self.fit_window,
            shoot,
            family,
            seed: self.seed.unwrap_or(0),
        })
    }
}
