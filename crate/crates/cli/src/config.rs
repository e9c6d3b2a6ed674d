//! Run configuration: a TOML file, optionally layered over a named preset.
//!
//! A config names a preset with `preset = "..."` and overrides any subset of
//! its fields; tables merge key-by-key, everything else (scalars, arrays)
//! replaces. Without a preset the file must specify the problem in full.
//! Unknown keys are rejected so typos surface as configuration errors.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use otmap_core::grid::{Disc, SourceDensity, SourceRegion};
use otmap_core::grid::Domain;
use otmap_core::operators::GradScheme;
use otmap_core::solver::{Formulation, SolverConfig};
use otmap_core::target::{TargetDensity, TargetShape};
use otmap_core::Vec2;

/// A configuration problem: unreadable file, parse failure, missing or
/// inconsistent fields. Messages carry the offending field path.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

/// Built-in experiment presets, complete configurations in their own right.
pub const PRESETS: [&str; 6] = [
    "square-to-disc",
    "square-to-heptagon",
    "bfo",
    "gaussian-target",
    "random-source",
    "holes",
];

/// Uniform square mapped to a uniform disc of the same area.
const SQUARE_TO_DISC: &str = r#"
tag = "square-to-disc"
[grid]
n = 128
width = 5
[domain]
lo = [0.0, 0.0]
side = 1.0
[source]
kind = "rect"
lo = [0.2, 0.2]
hi = [0.8, 0.8]
density = "uniform"
[target]
shape = "disc"
center = [0.5, 0.5]
radius = 0.3385137501286538
density = "uniform"
"#;

/// Uniform square mapped to a regular heptagon of the same area, tilted off
/// the grid axes.
const SQUARE_TO_HEPTAGON: &str = r#"
tag = "square-to-heptagon"
[grid]
n = 128
width = 2
[domain]
lo = [0.0, 0.0]
side = 1.0
[source]
kind = "rect"
lo = [0.2, 0.2]
hi = [0.8, 0.8]
density = "uniform"
[target]
shape = "regular-polygon"
center = [0.5, 0.5]
sides = 7
circumradius = 0.3627109367638469
rotation = 0.3
density = "uniform"
"#;

/// The classical smooth test case with a known transport map: its analytic
/// density on the centered unit square, sent to the uniform density on the
/// same square. Grid sized so the source boundary lies on grid lines.
const BFO: &str = r#"
tag = "bfo"
[grid]
n = 97
width = 2
[domain]
lo = [-0.75, -0.75]
side = 1.5
[source]
kind = "rect"
lo = [-0.5, -0.5]
hi = [0.5, 0.5]
density = "bfo"
[target]
shape = "polygon"
vertices = [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]
density = "uniform"
"#;

/// Uniform square to a disc carrying an off-center gaussian density.
const GAUSSIAN_TARGET: &str = r#"
tag = "gaussian-target"
[grid]
n = 64
width = 3
[domain]
lo = [0.0, 0.0]
side = 1.0
[source]
kind = "rect"
lo = [0.2, 0.2]
hi = [0.8, 0.8]
density = "uniform"
[target]
shape = "disc"
center = [0.5, 0.5]
radius = 0.3385137501286538
density = "gaussian"
density_center = [0.55, 0.45]
density_sigma = 0.15
"#;

/// Seeded random piecewise-constant source density to a uniform disc.
const RANDOM_SOURCE: &str = r#"
tag = "random-source"
[grid]
n = 64
width = 3
[domain]
lo = [0.0, 0.0]
side = 1.0
[source]
kind = "rect"
lo = [0.2, 0.2]
hi = [0.8, 0.8]
density = "random-cells"
seed = 1234
[target]
shape = "disc"
center = [0.5, 0.5]
radius = 0.3385137501286538
density = "uniform"
"#;

/// Non-convex source: the square with two discs removed, to a uniform disc
/// of the remaining area.
const HOLES: &str = r#"
tag = "holes"
[grid]
n = 96
width = 3
[domain]
lo = [0.0, 0.0]
side = 1.0
[source]
kind = "rect-minus-discs"
lo = [0.2, 0.2]
hi = [0.8, 0.8]
holes = [
    { center = [0.38, 0.62], radius = 0.08 },
    { center = [0.62, 0.38], radius = 0.08 },
]
density = "uniform"
[target]
shape = "disc"
center = [0.5, 0.5]
radius = 0.31904789456469484
density = "uniform"
"#;

/// A full experiment description.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name of the preset this config was layered over, if any.
    #[serde(default)]
    pub preset: Option<String>,
    /// Label used as the stem of every output file.
    #[serde(default)]
    pub tag: Option<String>,
    pub grid: GridSection,
    pub domain: DomainSection,
    pub source: SourceSection,
    pub target: TargetSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Grid nodes per axis.
    pub n: usize,
    /// Stencil width (largest direction coordinate).
    pub width: i64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lo: [f64; 2],
    pub side: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    /// `rect` or `rect-minus-discs`.
    #[serde(default = "default_rect")]
    pub kind: String,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    #[serde(default)]
    pub holes: Vec<HoleSection>,
    /// `uniform`, `bfo`, `gaussian-mixture` or `random-cells`.
    #[serde(default = "default_uniform")]
    pub density: String,
    #[serde(default)]
    pub components: Vec<MixtureComponent>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HoleSection {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub center: [f64; 2],
    pub sigma: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// `disc`, `polygon`, `ellipse` or `regular-polygon`.
    pub shape: String,
    #[serde(default)]
    pub center: Option<[f64; 2]>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub vertices: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub semi_axes: Option<[f64; 2]>,
    #[serde(default)]
    pub rotation: Option<f64>,
    #[serde(default)]
    pub sides: Option<usize>,
    #[serde(default)]
    pub circumradius: Option<f64>,
    /// `uniform` or `gaussian`.
    #[serde(default = "default_uniform")]
    pub density: String,
    #[serde(default)]
    pub density_center: Option<[f64; 2]>,
    #[serde(default)]
    pub density_sigma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// `alternative` (extra mass-balance unknown) or `plain` (pinned
    /// anchor equation).
    #[serde(default = "default_formulation")]
    pub formulation: String,
    /// `centered`, `forward` or `backward`.
    #[serde(default = "default_gradient")]
    pub gradient: String,
    #[serde(default)]
    pub viscosity: bool,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            formulation: default_formulation(),
            gradient: default_gradient(),
            viscosity: false,
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; the `OTMAP_OUT` environment variable overrides it.
    #[serde(default = "default_out_dir")]
    pub dir: String,
    /// Slope-sampling resolution for the envelope diagnostics in the
    /// summary; 0 disables them, otherwise at least 64.
    #[serde(default)]
    pub measure_resolution: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
            measure_resolution: 0,
        }
    }
}

fn default_rect() -> String {
    "rect".into()
}
fn default_uniform() -> String {
    "uniform".into()
}
fn default_weight() -> f64 {
    1.0
}
fn default_formulation() -> String {
    "alternative".into()
}
fn default_gradient() -> String {
    "centered".into()
}
fn default_tolerance() -> f64 {
    1e-10
}
fn default_max_iterations() -> usize {
    300
}
fn default_out_dir() -> String {
    "out".into()
}

/// Reads and parses a config file, layering it over its preset.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

/// Parses config text, layering it over its preset.
pub fn parse(text: &str) -> Result<RunConfig> {
    let user: toml::Value =
        toml::from_str(text).map_err(|e| ConfigError(format!("config does not parse: {e}")))?;
    let merged = match user.get("preset") {
        None => user,
        Some(toml::Value::String(name)) => merge(preset_value(name)?, user),
        Some(other) => {
            return Err(ConfigError(format!(
                "preset: expected a string, got {other}"
            )))
        }
    };
    let config: RunConfig = merged
        .try_into()
        .map_err(|e| ConfigError(format!("{e}")))?;
    config.validate()?;
    Ok(config)
}

/// The complete configuration of a named preset.
pub fn preset(name: &str) -> Result<RunConfig> {
    let config: RunConfig = preset_value(name)?
        .try_into()
        .expect("embedded presets deserialize");
    Ok(config)
}

fn preset_value(name: &str) -> Result<toml::Value> {
    let text = match name {
        "square-to-disc" => SQUARE_TO_DISC,
        "square-to-heptagon" => SQUARE_TO_HEPTAGON,
        "bfo" => BFO,
        "gaussian-target" => GAUSSIAN_TARGET,
        "random-source" => RANDOM_SOURCE,
        "holes" => HOLES,
        other => {
            return Err(ConfigError(format!(
                "preset: unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(toml::from_str(text).expect("embedded presets parse"))
}

/// Key-by-key table merge; `over` wins on scalars and arrays.
fn merge(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut base), toml::Value::Table(over)) => {
            for (key, value) in over {
                let merged = match base.remove(&key) {
                    Some(b) => merge(b, value),
                    None => value,
                };
                base.insert(key, merged);
            }
            toml::Value::Table(base)
        }
        (_, over) => over,
    }
}

impl RunConfig {
    /// Output file stem.
    pub fn tag(&self) -> &str {
        self.tag
            .as_deref()
            .or(self.preset.as_deref())
            .unwrap_or("run")
    }

    /// Whether the configured source density comes with an exact transport
    /// map to compare against.
    pub fn has_exact_map(&self) -> bool {
        self.source.density == "bfo"
    }

    pub fn domain(&self) -> Domain {
        Domain {
            lo: vec2(self.domain.lo),
            side: self.domain.side,
        }
    }

    pub fn region(&self) -> Result<SourceRegion> {
        let lo = vec2(self.source.lo);
        let hi = vec2(self.source.hi);
        match self.source.kind.as_str() {
            "rect" => Ok(SourceRegion::Rect { lo, hi }),
            "rect-minus-discs" => Ok(SourceRegion::RectMinusDiscs {
                lo,
                hi,
                holes: self
                    .source
                    .holes
                    .iter()
                    .map(|h| Disc {
                        center: vec2(h.center),
                        radius: h.radius,
                    })
                    .collect(),
            }),
            other => Err(ConfigError(format!(
                "source.kind: expected \"rect\" or \"rect-minus-discs\", got {other:?}"
            ))),
        }
    }

    pub fn source_density(&self) -> Result<SourceDensity> {
        match self.source.density.as_str() {
            "uniform" => Ok(SourceDensity::Uniform),
            "bfo" => Ok(SourceDensity::Bfo),
            "gaussian-mixture" => Ok(SourceDensity::GaussianMixture {
                components: self
                    .source
                    .components
                    .iter()
                    .map(|c| (vec2(c.center), c.sigma, c.weight))
                    .collect(),
            }),
            "random-cells" => Ok(SourceDensity::RandomCells {
                seed: self.source.seed.ok_or_else(|| {
                    ConfigError("source.seed: required when density = \"random-cells\"".into())
                })?,
            }),
            other => Err(ConfigError(format!(
                "source.density: expected \"uniform\", \"bfo\", \"gaussian-mixture\" or \
                 \"random-cells\", got {other:?}"
            ))),
        }
    }

    pub fn target_shape(&self) -> Result<TargetShape> {
        let t = &self.target;
        let need = |field: &str, opt: Option<f64>| {
            opt.ok_or_else(|| {
                ConfigError(format!(
                    "target.{field}: required when shape = {:?}",
                    t.shape
                ))
            })
        };
        match t.shape.as_str() {
            "disc" => Ok(TargetShape::Disc {
                center: vec2(t.center.ok_or_else(|| {
                    ConfigError("target.center: required when shape = \"disc\"".into())
                })?),
                radius: need("radius", t.radius)?,
            }),
            "polygon" => {
                let vertices = t.vertices.as_ref().ok_or_else(|| {
                    ConfigError("target.vertices: required when shape = \"polygon\"".into())
                })?;
                Ok(TargetShape::Polygon {
                    vertices: vertices.iter().copied().map(vec2).collect(),
                })
            }
            "ellipse" => Ok(TargetShape::Ellipse {
                center: vec2(t.center.ok_or_else(|| {
                    ConfigError("target.center: required when shape = \"ellipse\"".into())
                })?),
                semi_axes: t.semi_axes.ok_or_else(|| {
                    ConfigError("target.semi_axes: required when shape = \"ellipse\"".into())
                })?,
                rotation: t.rotation.unwrap_or(0.0),
            }),
            "regular-polygon" => {
                let center = vec2(t.center.ok_or_else(|| {
                    ConfigError(
                        "target.center: required when shape = \"regular-polygon\"".into(),
                    )
                })?);
                let sides = t.sides.ok_or_else(|| {
                    ConfigError("target.sides: required when shape = \"regular-polygon\"".into())
                })?;
                if sides < 3 {
                    return Err(ConfigError(format!(
                        "target.sides: a polygon needs at least 3 sides, got {sides}"
                    )));
                }
                let r = need("circumradius", t.circumradius)?;
                let rotation = t.rotation.unwrap_or(0.0);
                let vertices = (0..sides)
                    .map(|k| {
                        let angle = rotation
                            + 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
                        center + Vec2::new(r * angle.cos(), r * angle.sin())
                    })
                    .collect();
                Ok(TargetShape::Polygon { vertices })
            }
            other => Err(ConfigError(format!(
                "target.shape: expected \"disc\", \"polygon\", \"ellipse\" or \
                 \"regular-polygon\", got {other:?}"
            ))),
        }
    }

    pub fn target_density(&self) -> Result<TargetDensity> {
        let shape = self.target_shape()?;
        match self.target.density.as_str() {
            "uniform" => TargetDensity::uniform(shape)
                .map_err(|e| ConfigError(format!("target: {e}"))),
            "gaussian" => {
                let sigma = self.target.density_sigma.ok_or_else(|| {
                    ConfigError(
                        "target.density_sigma: required when density = \"gaussian\"".into(),
                    )
                })?;
                let center = self
                    .target
                    .density_center
                    .map(vec2)
                    .unwrap_or_else(|| shape.center());
                TargetDensity::gaussian(shape, center, sigma)
                    .map_err(|e| ConfigError(format!("target: {e}")))
            }
            other => Err(ConfigError(format!(
                "target.density: expected \"uniform\" or \"gaussian\", got {other:?}"
            ))),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let formulation = match self.solver.formulation.as_str() {
            "alternative" => Formulation::Alternative,
            "plain" => Formulation::Plain,
            other => {
                return Err(ConfigError(format!(
                    "solver.formulation: expected \"alternative\" or \"plain\", got {other:?}"
                )))
            }
        };
        let gradient = match self.solver.gradient.as_str() {
            "centered" => GradScheme::Centered,
            "forward" => GradScheme::Forward,
            "backward" => GradScheme::Backward,
            other => {
                return Err(ConfigError(format!(
                    "solver.gradient: expected \"centered\", \"forward\" or \"backward\", \
                     got {other:?}"
                )))
            }
        };
        Ok(SolverConfig {
            formulation,
            gradient,
            viscosity: self.solver.viscosity,
            tolerance: self.solver.tolerance,
            max_iterations: self.solver.max_iterations,
            ..SolverConfig::default()
        })
    }

    /// Field-level checks; cross-field geometry is validated when the grid
    /// and system are built.
    fn validate(&self) -> Result<()> {
        if self.grid.n < 8 {
            return Err(ConfigError(format!(
                "grid.n: at least 8 nodes per axis, got {}",
                self.grid.n
            )));
        }
        if self.grid.width < 1 {
            return Err(ConfigError(format!(
                "grid.width: at least 1, got {}",
                self.grid.width
            )));
        }
        if !(self.domain.side > 0.0) {
            return Err(ConfigError(format!(
                "domain.side: must be positive, got {}",
                self.domain.side
            )));
        }
        if !(self.solver.tolerance > 0.0) {
            return Err(ConfigError(format!(
                "solver.tolerance: must be positive, got {}",
                self.solver.tolerance
            )));
        }
        if self.solver.max_iterations == 0 {
            return Err(ConfigError("solver.max_iterations: must be at least 1".into()));
        }
        if self.output.measure_resolution != 0 && self.output.measure_resolution < 64 {
            return Err(ConfigError(format!(
                "output.measure_resolution: 0 to disable or at least 64, got {}",
                self.output.measure_resolution
            )));
        }
        if self.source.kind == "rect-minus-discs" && self.source.holes.is_empty() {
            return Err(ConfigError(
                "source.holes: at least one hole when kind = \"rect-minus-discs\"".into(),
            ));
        }
        if self.source.density == "gaussian-mixture" && self.source.components.is_empty() {
            return Err(ConfigError(
                "source.components: at least one component when density = \
                 \"gaussian-mixture\""
                    .into(),
            ));
        }
        // Surface enum typos and per-shape requirements immediately.
        self.region()?;
        self.source_density()?;
        self.target_shape()?;
        self.solver_config()?;
        if self.target.density == "gaussian" && self.target.density_sigma.is_none() {
            return Err(ConfigError(
                "target.density_sigma: required when density = \"gaussian\"".into(),
            ));
        }
        if !matches!(self.target.density.as_str(), "uniform" | "gaussian") {
            return Err(ConfigError(format!(
                "target.density: expected \"uniform\" or \"gaussian\", got {:?}",
                self.target.density
            )));
        }
        Ok(())
    }
}

fn vec2(p: [f64; 2]) -> Vec2 {
    Vec2::new(p[0], p[1])
}
