//! Run configuration: flat `key = value` files over built-in defaults.
//!
//! Every knob has a default matching the reference drum setup, so an empty
//! file (or none at all) describes the standard campaign. Keys use dotted
//! paths, values are scalars or comma lists, `#` starts a comment. Unknown
//! keys are rejected so typos cannot silently fall back to defaults.

use crate::geometry::{drum_phantom, GridSpec, Scene};
use crate::sinogram::SinogramSpec;
use crate::source::{FluxModel, SourcePlane};
use crate::transport::{DetectorPair, SimulationSetup, TransportConfig};
use nalgebra::Point3;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    BadValue { line: usize, key: String, message: String },
}

/// Region metric settings: which coronal slab to analyze, how far to erode
/// material masks, which material pairs to contrast, and where the edge
/// profile is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    /// x index of the slab the regions are restricted to.
    pub slab_x: usize,
    /// Intensity threshold (rad) for the segmentation check.
    pub threshold: f64,
    /// Erosion steps per material region.
    pub erosions: Vec<(String, usize)>,
    /// (foreground, background) material pairs for contrast-to-noise.
    pub pairs: Vec<(String, String)>,
    /// Edge profile location: along y at this (ix, iz), over [iy_lo, iy_hi].
    pub edge_ix: usize,
    pub edge_iz: usize,
    pub edge_iy_lo: usize,
    pub edge_iy_hi: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            slab_x: 36,
            threshold: 0.0475,
            erosions: vec![
                ("tungsten".into(), 1),
                ("brass".into(), 1),
                ("concrete".into(), 2),
                ("air".into(), 2),
            ],
            pairs: vec![
                ("tungsten".into(), "concrete".into()),
                ("brass".into(), "concrete".into()),
            ],
            edge_ix: 36,
            edge_iz: 19,
            edge_iy_lo: 9,
            edge_iy_hi: 20,
        }
    }
}

impl MetricsConfig {
    pub fn erosion_for(&self, material: &str) -> usize {
        self.erosions
            .iter()
            .find(|(name, _)| name == material)
            .map(|(_, e)| *e)
            .unwrap_or(0)
    }
}

/// View-count and statistics grid for the sparse-data sweep. Empty events
/// means "use the campaign events per view".
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub views: Vec<usize>,
    pub events: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { views: vec![24, 2], events: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: usize,
    pub events_per_view: usize,
    /// Number of equally spaced orientations over the full turn.
    pub n_views: usize,
    /// Explicit orientations in degrees; overrides `n_views` when set.
    pub orientations_deg: Option<Vec<f64>>,
    pub scene: Scene,
    pub flux: FluxModel,
    pub plane: SourcePlane,
    pub detectors: DetectorPair,
    pub transport: TransportConfig,
    pub grid: GridSpec,
    pub sinogram: SinogramSpec,
    pub metrics: MetricsConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            workers: 0,
            events_per_view: 100_000,
            n_views: 24,
            orientations_deg: None,
            scene: drum_phantom(),
            flux: FluxModel::default(),
            plane: SourcePlane::default(),
            detectors: DetectorPair::default(),
            transport: TransportConfig::default(),
            grid: default_grid(),
            sinogram: SinogramSpec::default(),
            metrics: MetricsConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Reconstruction grid over the drum: 1 cm voxels, x along the spin axis.
pub fn default_grid() -> GridSpec {
    GridSpec { nx: 50, ny: 51, nz: 51, origin: Point3::new(-25.0, -25.5, -25.5), edge: 1.0 }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed { line, text: stripped.to_string() })?;
            config.apply(key.trim(), value.trim(), line)?;
        }
        config.finalize();
        Ok(config)
    }

    /// Campaign orientations in radians.
    pub fn orientations(&self) -> Vec<f64> {
        match &self.orientations_deg {
            Some(list) => list.iter().map(|d| d.to_radians()).collect(),
            None => {
                let n = self.n_views.max(1);
                (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
            }
        }
    }

    pub fn setup(&self) -> SimulationSetup {
        SimulationSetup {
            scene: self.scene.clone(),
            flux: self.flux,
            plane: self.plane,
            detectors: self.detectors,
            transport: self.transport,
        }
    }

    /// Keeps the sinogram slab axis glued to the voxel grid's x axis.
    fn finalize(&mut self) {
        self.sinogram.n_slabs = self.grid.nx;
        self.sinogram.x_min = self.grid.origin.x;
        self.sinogram.dx = self.grid.edge;
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue {
            line,
            key: key.to_string(),
            message,
        };
        macro_rules! set {
            ($field:expr, $ty:ty) => {
                $field = value.parse::<$ty>().map_err(|e| bad(e.to_string()))?
            };
        }
        match key {
            "seed" => self.seed = Some(value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
            "workers" => set!(self.workers, usize),
            "campaign.events" => set!(self.events_per_view, usize),
            "campaign.views" => {
                set!(self.n_views, usize);
                if self.n_views == 0 {
                    return Err(bad("need at least one view".into()));
                }
            }
            "campaign.orientations" => {
                self.orientations_deg = Some(parse_list(value).map_err(bad)?)
            }
            "source.rate" => set!(self.flux.event_rate, f64),
            "source.spectral_index" => set!(self.flux.spectral_index, f64),
            "source.soft_pivot" => set!(self.flux.soft_pivot, f64),
            "source.second_term_weight" => set!(self.flux.second_term_weight, f64),
            "source.critical_p1" => set!(self.flux.critical_p1, f64),
            "source.critical_p2" => set!(self.flux.critical_p2, f64),
            "source.p_min" => set!(self.flux.p_min, f64),
            "source.p_max" => set!(self.flux.p_max, f64),
            "source.plane_z" => set!(self.plane.z, f64),
            "source.half_x" => set!(self.plane.half_x, f64),
            "source.half_y" => set!(self.plane.half_y, f64),
            "detector.top_z" => set!(self.detectors.top_z, f64),
            "detector.bottom_z" => set!(self.detectors.bottom_z, f64),
            "detector.half_x" => set!(self.detectors.half_x, f64),
            "detector.half_y" => set!(self.detectors.half_y, f64),
            "transport.substep_dense" => set!(self.transport.substep_dense, f64),
            "transport.substep_air" => set!(self.transport.substep_air, f64),
            "transport.energy_loss" => set!(self.transport.energy_loss, bool),
            "transport.energy_loss_rate" => set!(self.transport.energy_loss_rate, f64),
            "grid.nx" => set!(self.grid.nx, usize),
            "grid.ny" => set!(self.grid.ny, usize),
            "grid.nz" => set!(self.grid.nz, usize),
            "grid.origin_x" => set!(self.grid.origin.x, f64),
            "grid.origin_y" => set!(self.grid.origin.y, f64),
            "grid.origin_z" => set!(self.grid.origin.z, f64),
            "grid.edge" => set!(self.grid.edge, f64),
            "sinogram.n_r" => set!(self.sinogram.n_r, usize),
            "sinogram.r_min" => set!(self.sinogram.r_min, f64),
            "sinogram.dr" => set!(self.sinogram.dr, f64),
            "sinogram.n_theta" => set!(self.sinogram.n_theta, usize),
            "metrics.slab_x" => set!(self.metrics.slab_x, usize),
            "metrics.threshold" => set!(self.metrics.threshold, f64),
            "metrics.pairs" => self.metrics.pairs = parse_pairs(value).map_err(bad)?,
            "metrics.edge.ix" => set!(self.metrics.edge_ix, usize),
            "metrics.edge.iz" => set!(self.metrics.edge_iz, usize),
            "metrics.edge.iy_lo" => set!(self.metrics.edge_iy_lo, usize),
            "metrics.edge.iy_hi" => set!(self.metrics.edge_iy_hi, usize),
            "sweep.views" => self.sweep.views = parse_list(value).map_err(bad)?,
            "sweep.events" => self.sweep.events = parse_list(value).map_err(bad)?,
            _ => {
                if let Some(rest) = key.strip_prefix("metrics.erosion.") {
                    let steps: usize = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
                    match self.metrics.erosions.iter_mut().find(|(n, _)| n == rest) {
                        Some(entry) => entry.1 = steps,
                        None => self.metrics.erosions.push((rest.to_string(), steps)),
                    }
                    return Ok(());
                }
                if let Some(rest) = key.strip_prefix("material.") {
                    return self.apply_material(rest, key, value, line);
                }
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
        }
        Ok(())
    }

    fn apply_material(
        &mut self,
        rest: &str,
        key: &str,
        value: &str,
        line: usize,
    ) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue {
            line,
            key: key.to_string(),
            message,
        };
        let (name, prop) = rest
            .split_once('.')
            .ok_or_else(|| bad("expected material.<name>.<property>".into()))?;
        let id = self
            .scene
            .material_named(name)
            .ok_or_else(|| bad(format!("no material named `{name}` in the scene")))?;
        let parsed: f64 = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let material = &mut self.scene.materials[id.0];
        match prop {
            "density" => material.density = parsed,
            "radiation_length" => material.radiation_length = parsed,
            "z_eff" => material.z_eff = parsed,
            _ => {
                return Err(bad(format!(
                    "unknown material property `{prop}` (density, radiation_length, z_eff)"
                )))
            }
        }
        Ok(())
    }

    /// Renders the effective configuration back as parseable text.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "campaign.events = {}", self.events_per_view);
        match &self.orientations_deg {
            Some(list) => {
                let text: Vec<String> = list.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "campaign.orientations = {}", text.join(","));
            }
            None => {
                let _ = writeln!(s, "campaign.views = {}", self.n_views);
            }
        }
        s
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let items: Result<Vec<T>, String> = value
        .split(',')
        .map(|item| item.trim().parse::<T>().map_err(|e| e.to_string()))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn parse_pairs(value: &str) -> Result<Vec<(String, String)>, String> {
    value
        .split(',')
        .map(|item| {
            item.trim()
                .split_once(':')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| format!("expected `foreground:background`, got `{item}`"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_text_gives_the_reference_campaign() {
        let config = RunConfig::parse_str("").unwrap();
        assert_eq!(config, RunConfig::default());
        let orientations = config.orientations();
        assert_eq!(orientations.len(), 24);
        assert_relative_eq!(orientations[1], 15f64.to_radians(), epsilon = 1e-12);
        assert_relative_eq!(orientations[23], 345f64.to_radians(), epsilon = 1e-12);
        assert!(config.seed.is_none());
        // sinogram slabs follow the grid
        assert_eq!(config.sinogram.n_slabs, config.grid.nx);
        assert_eq!(config.sinogram.x_min, config.grid.origin.x);
    }

    #[test]
    fn keys_reach_their_fields() {
        let text = "\
seed = 42
workers = 3
campaign.events = 5000   # trailing comment
campaign.views = 8

# a comment line
source.rate = 20.5
source.soft_pivot = 2000
detector.half_x = 45
transport.energy_loss = true
grid.nx = 40
grid.origin_x = -20
sinogram.n_theta = 90
metrics.slab_x = 10
metrics.threshold = 0.05
";
        let config = RunConfig::parse_str(text).unwrap();
        assert_eq!(config.seed, Some(42));
        assert_eq!(config.workers, 3);
        assert_eq!(config.events_per_view, 5000);
        assert_eq!(config.n_views, 8);
        assert_eq!(config.orientations().len(), 8);
        assert_eq!(config.flux.event_rate, 20.5);
        assert_eq!(config.flux.soft_pivot, 2000.0);
        assert_eq!(config.detectors.half_x, 45.0);
        assert!(config.transport.energy_loss);
        assert_eq!(config.grid.nx, 40);
        assert_eq!(config.sinogram.n_theta, 90);
        assert_eq!(config.metrics.slab_x, 10);
        assert_eq!(config.metrics.threshold, 0.05);
        // derived slab axis picked up the grid override
        assert_eq!(config.sinogram.n_slabs, 40);
        assert_eq!(config.sinogram.x_min, -20.0);
    }

    #[test]
    fn explicit_orientations_override_the_view_count() {
        let config = RunConfig::parse_str("campaign.orientations = 0, 90, 180").unwrap();
        let got = config.orientations();
        assert_eq!(got.len(), 3);
        assert_relative_eq!(got[1], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = RunConfig::parse_str("campaign.events = 5\nsource.rat = 33\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(line, 2);
                assert_eq!(key, "source.rat");
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_and_values_are_rejected() {
        assert!(matches!(
            RunConfig::parse_str("just some words"),
            Err(ConfigError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse_str("workers = many"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse_str("campaign.views = 0"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse_str("campaign.orientations = 1,,3"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn material_overrides_edit_the_scene() {
        let config = RunConfig::parse_str("material.tungsten.density = 18.0").unwrap();
        let id = config.scene.material_named("tungsten").unwrap();
        assert_eq!(config.scene.material(id).density, 18.0);
        // untouched properties survive
        assert_eq!(config.scene.material(id).radiation_length, 0.3504);

        assert!(matches!(
            RunConfig::parse_str("material.unobtainium.density = 1.0"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse_str("material.tungsten.colour = 1.0"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn metric_lists_parse() {
        let config = RunConfig::parse_str(
            "metrics.pairs = lead:concrete\nmetrics.erosion.lead = 3\nmetrics.erosion.concrete = 1\n",
        )
        .unwrap();
        assert_eq!(config.metrics.pairs, vec![("lead".into(), "concrete".into())]);
        assert_eq!(config.metrics.erosion_for("lead"), 3);
        assert_eq!(config.metrics.erosion_for("concrete"), 1);
        // untouched defaults stay
        assert_eq!(config.metrics.erosion_for("air"), 2);
        // unconfigured materials default to no erosion
        assert_eq!(config.metrics.erosion_for("steel"), 0);

        assert!(matches!(
            RunConfig::parse_str("metrics.pairs = lead"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn sweep_lists_parse() {
        let config =
            RunConfig::parse_str("sweep.views = 24, 12, 2\nsweep.events = 1000, 2000").unwrap();
        assert_eq!(config.sweep.views, vec![24, 12, 2]);
        assert_eq!(config.sweep.events, vec![1000, 2000]);
    }

    #[test]
    fn describe_round_trips_through_the_parser() {
        let mut config = RunConfig::default();
        config.seed = Some(9);
        config.events_per_view = 1234;
        config.orientations_deg = Some(vec![0.0, 45.0]);
        let text = config.describe();
        let back = RunConfig::parse_str(&text).unwrap();
        assert_eq!(back.seed, Some(9));
        assert_eq!(back.events_per_view, 1234);
        assert_eq!(back.orientations_deg, Some(vec![0.0, 45.0]));
    }
}
