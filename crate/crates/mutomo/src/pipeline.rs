//! End-to-end campaign stages and their on-disk layout.
//!
//! A run directory looks like
//!
//! ```text
//! out/
//!   config.txt                  effective settings echo
//!   events/view_000.muevt       one event file per orientation
//!   recon/dof_tallies.muvox     mergeable tally sums
//!   recon/dof_intensity.muvox   depth-of-field image
//!   recon/fbp_sinogram.musin    binned projections
//!   recon/fbp_intensity.muvox   filtered backprojection image
//!   metrics/metrics.csv         route,metric,value rows
//!   slices/*.pgm                viewing exports
//!   MANIFEST.txt                sha256 inventory plus provenance
//! ```
//!
//! Stages are restartable: each consumes the files of the previous one, so
//! reconstruction and metrics can rerun without repeating the simulation.

use crate::config::RunConfig;
use crate::event::{read_events, write_events, EventDataset, EventFileError};
use crate::geometry::VoxelMask;
use crate::metrics::{
    cnr, edge_rise, largest_component, region_stats, threshold_voxels, y_profile, MetricsError,
    RegionStats,
};
use crate::sinogram::{
    reconstruct_fbp, write_sinogram, FbpError, SinogramAccum, SinogramFileError,
};
use crate::transport::simulate_view;
use crate::voxel::{
    read_intensity_volume, write_intensity_volume, write_tally_volume, IntensityVolume,
    VoxelFileError, VoxelVolume,
};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("event file {path}: {source}")]
    Event { path: PathBuf, source: EventFileError },
    #[error("voxel file {path}: {source}")]
    Voxel { path: PathBuf, source: VoxelFileError },
    #[error("sinogram file {path}: {source}")]
    Sinogram { path: PathBuf, source: SinogramFileError },
    #[error("reconstruction failed: {0}")]
    Fbp(#[from] FbpError),
    #[error("metrics failed: {0}")]
    Metrics(#[from] MetricsError),
    #[error("no seed configured; set `seed` in the config or pass --seed")]
    MissingSeed,
    #[error("view at {orientation_deg} degrees holds {have} events, need {need}")]
    NotEnoughEvents { orientation_deg: f64, have: usize, need: usize },
    #[error("cannot pick {requested} distinct views from {available} simulated orientations")]
    InsufficientViews { requested: usize, available: usize },
    #[error("scene has no material named `{0}`")]
    UnknownMaterial(String),
    #[error("slab {slab} is outside the grid (nx = {nx})")]
    BadSlab { slab: usize, nx: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// One metric observation, written as a CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub route: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub view_files: Vec<PathBuf>,
    pub total_events: usize,
    pub total_attempts: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<MetricRow>,
    pub manifest: PathBuf,
    pub simulate_seconds: f64,
    pub recon_seconds: f64,
}

pub struct Pipeline {
    pub config: RunConfig,
    pub out_dir: PathBuf,
}

impl Pipeline {
    pub fn new(config: RunConfig, out_dir: PathBuf) -> Self {
        Self { config, out_dir }
    }

    fn events_dir(&self) -> PathBuf {
        self.out_dir.join("events")
    }

    pub fn view_path(&self, index: usize) -> PathBuf {
        self.events_dir().join(format!("view_{index:03}.muevt"))
    }

    pub fn dof_tallies_path(&self) -> PathBuf {
        self.out_dir.join("recon/dof_tallies.muvox")
    }

    pub fn dof_intensity_path(&self) -> PathBuf {
        self.out_dir.join("recon/dof_intensity.muvox")
    }

    pub fn sinogram_path(&self) -> PathBuf {
        self.out_dir.join("recon/fbp_sinogram.musin")
    }

    pub fn fbp_intensity_path(&self) -> PathBuf {
        self.out_dir.join("recon/fbp_intensity.muvox")
    }

    fn create_dir(&self, path: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(path).map_err(io_err(path))
    }

    /// Simulates every configured orientation, one event file per view.
    /// Views run in sequence so only one dataset is in memory at a time.
    pub fn simulate(&self) -> Result<SimulateReport, PipelineError> {
        let seed = self.config.seed.ok_or(PipelineError::MissingSeed)?;
        self.create_dir(&self.events_dir())?;
        let setup = self.config.setup();
        let orientations = self.config.orientations();
        let mut view_files = Vec::new();
        let mut total_events = 0;
        let mut total_attempts = 0;
        for (i, &orientation) in orientations.iter().enumerate() {
            let (dataset, stats) =
                simulate_view(&setup, orientation, i, self.config.events_per_view, seed);
            let path = self.view_path(i);
            write_events(&path, &dataset)
                .map_err(|source| PipelineError::Event { path: path.clone(), source })?;
            total_events += dataset.events.len();
            total_attempts += stats.attempts;
            view_files.push(path);
        }
        Ok(SimulateReport { view_files, total_events, total_attempts })
    }

    fn read_view(&self, index: usize) -> Result<EventDataset, PipelineError> {
        let path = self.view_path(index);
        read_events(&path).map_err(|source| PipelineError::Event { path, source })
    }

    /// Ensures event files exist, simulating them when absent.
    fn ensure_events(&self) -> Result<(), PipelineError> {
        let all_present =
            (0..self.config.orientations().len()).all(|i| self.view_path(i).is_file());
        if !all_present {
            self.simulate()?;
        }
        Ok(())
    }

    /// Depth-of-field route: tally every view into one drum-frame volume.
    pub fn recon_dof(&self) -> Result<PathBuf, PipelineError> {
        self.ensure_events()?;
        self.create_dir(&self.out_dir.join("recon"))?;
        let mut volume = VoxelVolume::new(self.config.grid);
        for i in 0..self.config.orientations().len() {
            let dataset = self.read_view(i)?;
            volume.tally_dataset_parallel(&dataset);
        }
        let tallies = self.dof_tallies_path();
        write_tally_volume(&tallies, &volume)
            .map_err(|source| PipelineError::Voxel { path: tallies.clone(), source })?;
        let intensity = self.dof_intensity_path();
        write_intensity_volume(&intensity, &volume.intensity())
            .map_err(|source| PipelineError::Voxel { path: intensity.clone(), source })?;
        Ok(intensity)
    }

    /// Tomographic route: bin all views into a sinogram stack, then invert
    /// slab by slab.
    pub fn recon_fbp(&self) -> Result<PathBuf, PipelineError> {
        self.ensure_events()?;
        self.create_dir(&self.out_dir.join("recon"))?;
        let mut accum = SinogramAccum::new(self.config.sinogram);
        for i in 0..self.config.orientations().len() {
            let dataset = self.read_view(i)?;
            accum.add_dataset(&dataset);
        }
        let sino = accum.finish();
        let sino_path = self.sinogram_path();
        write_sinogram(&sino_path, &sino)
            .map_err(|source| PipelineError::Sinogram { path: sino_path.clone(), source })?;
        let volume = reconstruct_fbp(&sino, &self.config.grid)?;
        let intensity = self.fbp_intensity_path();
        write_intensity_volume(&intensity, &volume)
            .map_err(|source| PipelineError::Voxel { path: intensity.clone(), source })?;
        Ok(intensity)
    }

    /// Material region masks for the configured metric slab.
    pub fn region_masks(&self) -> Result<Vec<(String, VoxelMask)>, PipelineError> {
        let config = &self.config;
        if config.metrics.slab_x >= config.grid.nx {
            return Err(PipelineError::BadSlab {
                slab: config.metrics.slab_x,
                nx: config.grid.nx,
            });
        }
        let mut masks = Vec::new();
        for (name, erosion) in &config.metrics.erosions {
            let id = config
                .scene
                .material_named(name)
                .ok_or_else(|| PipelineError::UnknownMaterial(name.clone()))?;
            let mask = config
                .scene
                .region_mask(&config.grid, id, *erosion as u32)
                .restricted_to_slab(config.metrics.slab_x);
            masks.push((name.clone(), mask));
        }
        Ok(masks)
    }

    /// Region statistics, contrasts and edge sharpness for one volume.
    pub fn route_metrics(
        &self,
        route: &str,
        volume: &IntensityVolume,
    ) -> Result<Vec<MetricRow>, PipelineError> {
        let config = &self.config;
        let masks = self.region_masks()?;
        let mut rows = Vec::new();
        let mut stats: Vec<(String, RegionStats)> = Vec::new();
        for (name, mask) in &masks {
            let s = region_stats(volume, mask)?;
            rows.push(row(route, format!("mean.{name}"), s.mean));
            rows.push(row(route, format!("std.{name}"), s.std_dev));
            rows.push(row(route, format!("voxels.{name}"), s.count as f64));
            stats.push((name.clone(), s));
        }
        let lookup = |name: &str| stats.iter().find(|(n, _)| n == name).map(|(_, s)| *s);
        for (fg, bg) in &config.metrics.pairs {
            if let (Some(f), Some(b)) = (lookup(fg), lookup(bg)) {
                rows.push(row(route, format!("cnr.{fg}.{bg}"), cnr(&f, &b)?));
            }
        }
        if let Some((fg, bg)) = config.metrics.pairs.first() {
            if let (Some(f), Some(b)) = (lookup(fg), lookup(bg)) {
                let m = &config.metrics;
                let profile = y_profile(volume, m.edge_ix, m.edge_iz);
                let lo = m.edge_iy_lo.min(profile.len().saturating_sub(1));
                let hi = (m.edge_iy_hi + 1).min(profile.len());
                if let Ok(rise) = edge_rise(&profile[lo..hi], b.mean, f.mean) {
                    rows.push(row(route, "edge_rise_px".into(), rise));
                }
            }
        }
        let above = threshold_voxels(volume, config.metrics.threshold);
        rows.push(row(route, "threshold_voxels".into(), above.count() as f64));
        rows.push(
            row(route, "largest_component_voxels".into(), largest_component(&above).count() as f64),
        );
        Ok(rows)
    }

    fn read_intensity(&self, path: &Path) -> Result<IntensityVolume, PipelineError> {
        read_intensity_volume(path)
            .map_err(|source| PipelineError::Voxel { path: path.to_path_buf(), source })
    }

    /// Metrics over both reconstruction routes, written to metrics.csv.
    pub fn metrics(&self) -> Result<Vec<MetricRow>, PipelineError> {
        let mut rows = Vec::new();
        rows.extend(self.route_metrics("dof", &self.read_intensity(&self.dof_intensity_path())?)?);
        rows.extend(self.route_metrics("fbp", &self.read_intensity(&self.fbp_intensity_path())?)?);
        self.create_dir(&self.out_dir.join("metrics"))?;
        let path = self.out_dir.join("metrics/metrics.csv");
        let mut text = String::from("route,metric,value\n");
        for r in &rows {
            let _ = writeln!(text, "{},{},{}", r.route, r.metric, r.value);
        }
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(rows)
    }

    /// Exports one coronal slab as an 8-bit PGM image, y across, z up.
    pub fn export_slab(
        &self,
        volume: &IntensityVolume,
        slab: usize,
        path: &Path,
    ) -> Result<(), PipelineError> {
        let grid = &volume.grid;
        if slab >= grid.nx {
            return Err(PipelineError::BadSlab { slab, nx: grid.nx });
        }
        if let Some(parent) = path.parent() {
            self.create_dir(parent)?;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (v, ok) in volume.values.iter().zip(&volume.valid) {
            if *ok {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        let degenerate = !(hi > lo);
        let mut pixels = Vec::with_capacity(grid.ny * grid.nz);
        for iz in (0..grid.nz).rev() {
            for iy in 0..grid.ny {
                let i = grid.index(slab, iy, iz);
                let level = if !volume.valid[i] {
                    0u8
                } else if degenerate {
                    128
                } else {
                    (255.0 * (volume.values[i] - lo) / (hi - lo)).round() as u8
                };
                pixels.push(level);
            }
        }
        let mut file = fs::File::create(path).map_err(io_err(path))?;
        write!(file, "P5\n{} {}\n255\n", grid.ny, grid.nz).map_err(io_err(path))?;
        file.write_all(&pixels).map_err(io_err(path))?;
        Ok(())
    }

    /// Full campaign: simulate, reconstruct both routes, measure, manifest.
    /// On failure the manifest still gets written, flagged incomplete.
    pub fn run(&self) -> Result<RunReport, PipelineError> {
        match self.run_stages() {
            Ok(report) => Ok(report),
            Err(e) => {
                let _ = self.write_manifest(Some(&e.to_string()));
                Err(e)
            }
        }
    }

    fn run_stages(&self) -> Result<RunReport, PipelineError> {
        self.create_dir(&self.out_dir)?;
        let config_echo = self.out_dir.join("config.txt");
        fs::write(&config_echo, self.config.describe()).map_err(io_err(&config_echo))?;

        let t0 = Instant::now();
        self.simulate()?;
        let simulate_seconds = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let dof = self.recon_dof()?;
        let fbp = self.recon_fbp()?;
        let recon_seconds = t1.elapsed().as_secs_f64();

        let rows = self.metrics()?;
        let slab = self.config.metrics.slab_x;
        let dof_volume = self.read_intensity(&dof)?;
        let fbp_volume = self.read_intensity(&fbp)?;
        self.export_slab(
            &dof_volume,
            slab,
            &self.out_dir.join(format!("slices/dof_slab_{slab:03}.pgm")),
        )?;
        self.export_slab(
            &fbp_volume,
            slab,
            &self.out_dir.join(format!("slices/fbp_slab_{slab:03}.pgm")),
        )?;

        let manifest = self.write_manifest(None)?;
        Ok(RunReport { rows, manifest, simulate_seconds, recon_seconds })
    }

    /// Sparse-data sweep: reconstructs every (view count, events per view)
    /// cell from prefixes of the simulated events and tabulates the metrics.
    pub fn sweep(&self) -> Result<PathBuf, PipelineError> {
        self.ensure_events()?;
        let orientations = self.config.orientations();
        let events_grid = if self.config.sweep.events.is_empty() {
            vec![self.config.events_per_view]
        } else {
            self.config.sweep.events.clone()
        };
        let mut text = String::from("views,events_per_view,route,metric,value\n");
        for &k in &self.config.sweep.views {
            let subset = select_view_subset(&orientations, k)?;
            for &events in &events_grid {
                let mut volume = VoxelVolume::new(self.config.grid);
                let mut accum = SinogramAccum::new(self.config.sinogram);
                for &view in &subset {
                    let dataset = self.read_view(view)?;
                    if dataset.events.len() < events {
                        return Err(PipelineError::NotEnoughEvents {
                            orientation_deg: dataset.orientation.to_degrees(),
                            have: dataset.events.len(),
                            need: events,
                        });
                    }
                    let prefix = EventDataset {
                        orientation: dataset.orientation,
                        events: dataset.events[..events].to_vec(),
                    };
                    volume.tally_dataset_parallel(&prefix);
                    accum.add_dataset(&prefix);
                }
                let dof_rows = self.route_metrics("dof", &volume.intensity())?;
                let fbp_volume = reconstruct_fbp(&accum.finish(), &self.config.grid)?;
                let fbp_rows = self.route_metrics("fbp", &fbp_volume)?;
                for r in dof_rows.iter().chain(&fbp_rows) {
                    let _ = writeln!(text, "{k},{events},{},{},{}", r.route, r.metric, r.value);
                }
            }
        }
        self.create_dir(&self.out_dir.join("metrics"))?;
        let path = self.out_dir.join("metrics/sweep.csv");
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Inventory of every file in the run directory with its digest, plus
    /// the provenance needed to reproduce the run.
    pub fn write_manifest(&self, incomplete: Option<&str>) -> Result<PathBuf, PipelineError> {
        let manifest_path = self.out_dir.join("MANIFEST.txt");
        let mut files = Vec::new();
        collect_files(&self.out_dir, &self.out_dir, &mut files)
            .map_err(io_err(&self.out_dir))?;
        files.retain(|rel| rel != Path::new("MANIFEST.txt"));
        files.sort();

        let mut text = String::new();
        let _ = writeln!(text, "# mutomo {}", env!("CARGO_PKG_VERSION"));
        match self.config.seed {
            Some(seed) => {
                let _ = writeln!(text, "# seed {seed}");
            }
            None => {
                let _ = writeln!(text, "# seed unset");
            }
        }
        let _ = writeln!(
            text,
            "# views {} events-per-view {}",
            self.config.orientations().len(),
            self.config.events_per_view
        );
        if let Some(reason) = incomplete {
            let _ = writeln!(text, "# INCOMPLETE: {reason}");
        }
        for rel in &files {
            let full = self.out_dir.join(rel);
            let (digest, bytes) = sha256_file(&full).map_err(io_err(&full))?;
            let _ = writeln!(text, "{}  {}  {}", rel.display(), digest, bytes);
        }
        fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
        Ok(manifest_path)
    }
}

fn row(route: &str, metric: String, value: f64) -> MetricRow {
    MetricRow { route: route.to_string(), metric, value }
}

/// Picks `count` distinct simulated views whose projection angles are as
/// close as possible to an even spread over the half turn. Projection
/// geometry repeats every half turn, so targets are j * 180 / count degrees.
pub fn select_view_subset(
    orientations: &[f64],
    count: usize,
) -> Result<Vec<usize>, PipelineError> {
    if count == 0 || count > orientations.len() {
        return Err(PipelineError::InsufficientViews {
            requested: count,
            available: orientations.len(),
        });
    }
    let half_turn_gap = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(PI);
        d.min(PI - d)
    };
    let mut picked: Vec<usize> = Vec::new();
    for j in 0..count {
        let target = PI * j as f64 / count as f64;
        let best = orientations
            .iter()
            .enumerate()
            .filter(|(i, _)| !picked.contains(i))
            .min_by(|(_, a), (_, b)| {
                half_turn_gap(**a, target).total_cmp(&half_turn_gap(**b, target))
            })
            .map(|(i, _)| i)
            .expect("fewer candidates than requested views");
        picked.push(best);
    }
    picked.sort();
    Ok(picked)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("entries live under root").to_path_buf());
        }
    }
    Ok(())
}

fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok((format!("{:x}", hasher.finalize()), bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use nalgebra::Point3;

    /// Coarse 3 cm voxels over the wedge-bearing end of the drum: cheap to
    /// simulate with full voxel coverage, so the strict gap checks hold.
    fn quick_config() -> RunConfig {
        let mut config = RunConfig::parse_str(
            "seed = 11\ncampaign.events = 4000\ncampaign.views = 4\nsweep.views = 4,2\nsweep.events = 4000\n",
        )
        .unwrap();
        config.grid = GridSpec {
            nx: 4,
            ny: 17,
            nz: 17,
            origin: Point3::new(6.0, -25.5, -25.5),
            edge: 3.0,
        };
        config.sinogram.n_slabs = 4;
        config.sinogram.x_min = 6.0;
        config.sinogram.dx = 3.0;
        // slab containing the dense wedge pair
        config.metrics.slab_x = 1;
        config.metrics.edge_ix = 1;
        config.metrics.edge_iz = 6;
        config.metrics.edge_iy_lo = 2;
        config.metrics.edge_iy_hi = 6;
        // 3 cm voxels leave no room to erode the wedge regions
        for entry in &mut config.metrics.erosions {
            entry.1 = 0;
        }
        config
    }

    #[test]
    fn view_subsets_spread_over_the_half_turn() {
        let full: Vec<f64> = (0..24).map(|i| (15.0 * i as f64).to_radians()).collect();
        // two views: straight on and quarter turn
        assert_eq!(select_view_subset(&full, 2).unwrap(), vec![0, 6]);
        // three views: 0, 60, 120 degrees
        assert_eq!(select_view_subset(&full, 3).unwrap(), vec![0, 4, 8]);
        // everything
        assert_eq!(select_view_subset(&full, 24).unwrap(), (0..24).collect::<Vec<_>>());
        assert!(matches!(
            select_view_subset(&full, 25),
            Err(PipelineError::InsufficientViews { .. })
        ));
        assert!(matches!(
            select_view_subset(&full, 0),
            Err(PipelineError::InsufficientViews { .. })
        ));
    }

    #[test]
    fn missing_seed_fails_before_any_work() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config();
        config.seed = None;
        let pipeline = Pipeline::new(config, dir.path().to_path_buf());
        assert!(matches!(pipeline.simulate(), Err(PipelineError::MissingSeed)));
        assert!(!dir.path().join("events").exists());
    }

    #[test]
    fn full_run_produces_the_documented_layout() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::new(quick_config(), dir.path().to_path_buf());
        let report = pipeline.run().unwrap();

        for rel in [
            "config.txt",
            "events/view_000.muevt",
            "events/view_003.muevt",
            "recon/dof_tallies.muvox",
            "recon/dof_intensity.muvox",
            "recon/fbp_sinogram.musin",
            "recon/fbp_intensity.muvox",
            "metrics/metrics.csv",
            "slices/dof_slab_001.pgm",
            "slices/fbp_slab_001.pgm",
            "MANIFEST.txt",
        ] {
            assert!(dir.path().join(rel).is_file(), "missing {rel}");
        }
        assert!(!report.rows.is_empty());
        assert!(report.rows.iter().any(|r| r.route == "dof" && r.metric == "mean.tungsten"));
        assert!(report.rows.iter().any(|r| r.route == "fbp" && r.metric.starts_with("cnr.")));

        // manifest covers every file except itself, with real digests
        let manifest = fs::read_to_string(dir.path().join("MANIFEST.txt")).unwrap();
        assert!(manifest.contains("# seed 11"));
        assert!(!manifest.contains("INCOMPLETE"));
        let mut listed = 0;
        for line in manifest.lines().filter(|l| !l.starts_with('#')) {
            let mut parts = line.split_whitespace();
            let rel = parts.next().unwrap();
            let digest = parts.next().unwrap();
            let bytes: u64 = parts.next().unwrap().parse().unwrap();
            let full = dir.path().join(rel);
            let (expect_digest, expect_bytes) = sha256_file(&full).unwrap();
            assert_eq!(digest, expect_digest, "stale digest for {rel}");
            assert_eq!(bytes, expect_bytes);
            listed += 1;
        }
        assert_eq!(listed, 12);
    }

    #[test]
    fn runs_with_equal_seeds_are_identical() {
        let config = quick_config();
        let digests = |dir: &Path| {
            let manifest = fs::read_to_string(dir.join("MANIFEST.txt")).unwrap();
            manifest
                .lines()
                .filter(|l| !l.starts_with('#'))
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
        };
        let a = tempfile::tempdir().unwrap();
        Pipeline::new(config.clone(), a.path().to_path_buf()).run().unwrap();
        let b = tempfile::tempdir().unwrap();
        Pipeline::new(config.clone(), b.path().to_path_buf()).run().unwrap();
        assert_eq!(digests(a.path()), digests(b.path()));

        let mut other = config;
        other.seed = Some(12);
        let c = tempfile::tempdir().unwrap();
        Pipeline::new(other, c.path().to_path_buf()).run().unwrap();
        assert_ne!(digests(a.path()), digests(c.path()));
    }

    #[test]
    fn sweep_reuses_event_prefixes() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::new(quick_config(), dir.path().to_path_buf());
        let csv_path = pipeline.sweep().unwrap();
        let csv = fs::read_to_string(&csv_path).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("views,events_per_view,route,metric,value"));
        let rows: Vec<&str> = lines.collect();
        assert!(rows.iter().all(|r| r.starts_with("4,4000,") || r.starts_with("2,4000,")));
        assert!(rows.iter().any(|r| r.contains(",dof,cnr.tungsten.concrete,")));
        assert!(rows.iter().any(|r| r.contains(",fbp,cnr.tungsten.concrete,")));

        // asking for more events than simulated names the view
        let mut config = quick_config();
        config.sweep.events = vec![100_000];
        let pipeline = Pipeline::new(config, dir.path().to_path_buf());
        assert!(matches!(
            pipeline.sweep(),
            Err(PipelineError::NotEnoughEvents { need: 100_000, .. })
        ));
    }

    #[test]
    fn failed_runs_leave_an_incomplete_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config();
        config.metrics.slab_x = 99;
        let pipeline = Pipeline::new(config, dir.path().to_path_buf());
        assert!(matches!(pipeline.run(), Err(PipelineError::BadSlab { slab: 99, .. })));
        let manifest = fs::read_to_string(dir.path().join("MANIFEST.txt")).unwrap();
        assert!(manifest.contains("# INCOMPLETE"));
        assert!(manifest.contains("slab 99"));
    }

    #[test]
    fn slab_exports_are_valid_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec {
            nx: 2,
            ny: 3,
            nz: 4,
            origin: Point3::new(0.0, 0.0, 0.0),
            edge: 1.0,
        };
        let n = grid.len();
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let volume = IntensityVolume { grid, values, valid: vec![true; n] };
        let pipeline = Pipeline::new(quick_config(), dir.path().to_path_buf());
        let path = dir.path().join("slice.pgm");
        pipeline.export_slab(&volume, 1, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n3 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 12);
        // brightest voxel of slab 1 is (ny-1, nz-1): bottom-up export puts it
        // in the first row, last column
        assert_eq!(bytes[header.len() + 2], 255);

        // a flat volume maps to mid gray
        let flat = IntensityVolume {
            grid,
            values: vec![1.0; n],
            valid: vec![true; n],
        };
        pipeline.export_slab(&flat, 0, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes[header.len()..].iter().all(|b| *b == 128));

        assert!(matches!(
            pipeline.export_slab(&flat, 5, &path),
            Err(PipelineError::BadSlab { slab: 5, nx: 2 })
        ));
    }
}
