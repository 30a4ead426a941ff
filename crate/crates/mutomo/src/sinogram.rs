//! Sinogram binning and filtered backprojection.
//!
//! The drum spins about the x axis, so for tomography each muon track is
//! reduced to a line in the transverse (y, z) plane of the drum frame plus
//! the slab coordinate x* where the track passes closest to the spin axis.
//! Tracks binned by (slab, signed line offset r, line angle theta) with
//! their mean scattering angle form a per-slab sinogram that a standard
//! ramp-filtered backprojection inverts slice by slice.
//!
//! The line convention pairs with backprojection as r = y cos(theta) +
//! z sin(theta), theta in [0, pi).

use crate::event::{incoming_ray, scattering_angle, to_drum_frame, MuonEvent};
use crate::event::EventDataset;
use crate::geometry::GridSpec;
use crate::voxel::IntensityVolume;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const SINOGRAM_MAGIC: &[u8; 8] = b"MUSIN001";

/// Bin layout of a sinogram stack: `n_slabs` slabs along the spin axis, each
/// an (r, theta) histogram. Flat index is theta-fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinogramSpec {
    pub n_slabs: usize,
    pub x_min: f64,
    pub dx: f64,
    pub n_r: usize,
    pub r_min: f64,
    pub dr: f64,
    pub n_theta: usize,
}

impl Default for SinogramSpec {
    fn default() -> Self {
        Self { n_slabs: 50, x_min: -25.0, dx: 1.0, n_r: 51, r_min: -25.5, dr: 1.0, n_theta: 180 }
    }
}

impl SinogramSpec {
    pub fn dtheta(&self) -> f64 {
        PI / self.n_theta as f64
    }

    pub fn len(&self) -> usize {
        self.n_slabs * self.n_r * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, slab: usize, ir: usize, it: usize) -> usize {
        (slab * self.n_r + ir) * self.n_theta + it
    }

    pub fn r_center(&self, ir: usize) -> f64 {
        self.r_min + (ir as f64 + 0.5) * self.dr
    }

    pub fn theta_center(&self, it: usize) -> f64 {
        (it as f64 + 0.5) * self.dtheta()
    }
}

/// Track line in drum coordinates: slab position of closest approach to the
/// spin axis, signed offset r and normal angle theta of the transverse line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineParams {
    pub x_star: f64,
    pub r: f64,
    pub theta: f64,
}

/// Reduces an event to its transverse line. Works on the incoming track,
/// rotated into the drum frame for the recording orientation.
pub fn line_params(event: &MuonEvent, orientation: f64) -> LineParams {
    let drum = to_drum_frame(event, orientation);
    let ray = incoming_ray(&drum);
    let (o, d) = (ray.origin, ray.dir);
    let t2 = d.y * d.y + d.z * d.z;
    assert!(t2 > 0.0, "track parallel to the spin axis has no transverse line");

    let t_star = -(o.y * d.y + o.z * d.z) / t2;
    let x_star = o.x + t_star * d.x;

    // unit normal of the projected line, folded so theta lies in [0, pi)
    let norm = t2.sqrt();
    let (mut ny, mut nz) = (-d.z / norm, d.y / norm);
    let mut theta = nz.atan2(ny);
    if theta < 0.0 {
        theta += PI;
        ny = -ny;
        nz = -nz;
    } else if theta >= PI {
        theta -= PI;
        ny = -ny;
        nz = -nz;
    }
    let r = o.y * ny + o.z * nz;
    LineParams { x_star, r, theta }
}

/// Sinogram under construction: per-bin angle sums and counts plus counters
/// for tracks that fell outside the binning windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SinogramAccum {
    pub spec: SinogramSpec,
    pub sums: Vec<f64>,
    pub counts: Vec<u32>,
    pub dropped_slab: u64,
    pub dropped_r: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SinogramError {
    #[error("sinogram bin layouts differ, cannot merge")]
    SpecMismatch,
}

impl SinogramAccum {
    pub fn new(spec: SinogramSpec) -> Self {
        let n = spec.len();
        Self { spec, sums: vec![0.0; n], counts: vec![0; n], dropped_slab: 0, dropped_r: 0 }
    }

    pub fn add_event(&mut self, event: &MuonEvent, orientation: f64) {
        let line = line_params(event, orientation);
        let spec = &self.spec;
        let slab = ((line.x_star - spec.x_min) / spec.dx).floor();
        if slab < 0.0 || slab >= spec.n_slabs as f64 {
            self.dropped_slab += 1;
            return;
        }
        let ir = ((line.r - spec.r_min) / spec.dr).floor();
        if ir < 0.0 || ir >= spec.n_r as f64 {
            self.dropped_r += 1;
            return;
        }
        let it = ((line.theta / spec.dtheta()).floor() as usize).min(spec.n_theta - 1);
        let drum = to_drum_frame(event, orientation);
        let angle = scattering_angle(&drum.top_dir, &drum.bottom_dir);
        let i = spec.index(slab as usize, ir as usize, it);
        self.sums[i] += angle;
        self.counts[i] += 1;
    }

    pub fn add_dataset(&mut self, dataset: &EventDataset) {
        for ev in &dataset.events {
            self.add_event(ev, dataset.orientation);
        }
    }

    pub fn merge(&mut self, other: &SinogramAccum) -> Result<(), SinogramError> {
        if self.spec != other.spec {
            return Err(SinogramError::SpecMismatch);
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.dropped_slab += other.dropped_slab;
        self.dropped_r += other.dropped_r;
        Ok(())
    }

    /// Per-bin mean scattering angles; empty bins read zero.
    pub fn finish(&self) -> Sinogram {
        let means = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
            .collect();
        Sinogram { spec: self.spec, means, counts: self.counts.clone() }
    }
}

/// Finished sinogram stack: mean angle and track count per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub spec: SinogramSpec,
    pub means: Vec<f64>,
    pub counts: Vec<u32>,
}

#[derive(Debug, Error, PartialEq)]
pub enum FbpError {
    #[error("slab {slab} has no populated view angles")]
    EmptySlab { slab: usize },
    #[error("voxel grid is not aligned with the sinogram slabs")]
    GridMismatch,
}

/// Ramp-filters and backprojects one slab onto the (y, z) cross-section of
/// `grid`. Returns the slice values with z fastest, matching the volume
/// layout at fixed x index.
pub fn fbp_slice(sino: &Sinogram, slab: usize, grid: &GridSpec) -> Result<Vec<f64>, FbpError> {
    let spec = &sino.spec;
    assert!(slab < spec.n_slabs, "slab index out of range");

    // view angles that actually saw data in this slab
    let used: Vec<bool> = (0..spec.n_theta)
        .map(|it| (0..spec.n_r).any(|ir| sino.counts[spec.index(slab, ir, it)] > 0))
        .collect();
    let n_used = used.iter().filter(|u| **u).count();
    if n_used == 0 {
        return Err(FbpError::EmptySlab { slab });
    }

    // ramp filter in the frequency domain, zero-padded to kill wraparound
    let n_fft = (2 * spec.n_r).next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(n_fft);
    let inverse = planner.plan_fft_inverse(n_fft);
    let ramp: Vec<f64> = (0..n_fft)
        .map(|k| 2.0 * k.min(n_fft - k) as f64 / (n_fft as f64 * spec.dr))
        .collect();

    let mut filtered = vec![0.0f64; spec.n_r * spec.n_theta];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for it in 0..spec.n_theta {
        if !used[it] {
            continue;
        }
        for (k, slot) in buf.iter_mut().enumerate() {
            let v = if k < spec.n_r { sino.means[spec.index(slab, k, it)] } else { 0.0 };
            *slot = Complex::new(v, 0.0);
        }
        forward.process(&mut buf);
        for (slot, h) in buf.iter_mut().zip(&ramp) {
            *slot *= h;
        }
        inverse.process(&mut buf);
        for ir in 0..spec.n_r {
            filtered[it * spec.n_r + ir] = buf[ir].re / n_fft as f64;
        }
    }

    let scale = PI / (2.0 * n_used as f64);
    let mut slice = vec![0.0f64; grid.ny * grid.nz];
    for it in 0..spec.n_theta {
        if !used[it] {
            continue;
        }
        let theta = spec.theta_center(it);
        let (cos_t, sin_t) = (theta.cos(), theta.sin());
        let q = &filtered[it * spec.n_r..(it + 1) * spec.n_r];
        for iy in 0..grid.ny {
            let y = grid.origin.y + (iy as f64 + 0.5) * grid.edge;
            for iz in 0..grid.nz {
                let z = grid.origin.z + (iz as f64 + 0.5) * grid.edge;
                let r = y * cos_t + z * sin_t;
                // linear interpolation between bin centers
                let fr = (r - spec.r_min) / spec.dr - 0.5;
                let i0 = fr.floor();
                let w = fr - i0;
                let i0 = i0 as isize;
                let left = if (0..spec.n_r as isize).contains(&i0) { q[i0 as usize] } else { 0.0 };
                let i1 = i0 + 1;
                let right = if (0..spec.n_r as isize).contains(&i1) { q[i1 as usize] } else { 0.0 };
                slice[iy * grid.nz + iz] += (1.0 - w) * left + w * right;
            }
        }
    }
    for v in &mut slice {
        *v *= scale;
    }
    Ok(slice)
}

/// Reconstructs the full stack onto `grid`, one slab per x index. Slabs with
/// no data are marked invalid rather than failing the whole volume.
pub fn reconstruct_fbp(sino: &Sinogram, grid: &GridSpec) -> Result<IntensityVolume, FbpError> {
    let spec = &sino.spec;
    if spec.n_slabs != grid.nx
        || (spec.x_min - grid.origin.x).abs() > 1e-9
        || (spec.dx - grid.edge).abs() > 1e-9
    {
        return Err(FbpError::GridMismatch);
    }
    let slices: Vec<Result<Vec<f64>, FbpError>> =
        (0..spec.n_slabs).into_par_iter().map(|slab| fbp_slice(sino, slab, grid)).collect();

    let mut values = vec![f64::NAN; grid.len()];
    let mut valid = vec![false; grid.len()];
    for (ix, result) in slices.into_iter().enumerate() {
        match result {
            Ok(slice) => {
                for iy in 0..grid.ny {
                    for iz in 0..grid.nz {
                        let i = grid.index(ix, iy, iz);
                        values[i] = slice[iy * grid.nz + iz];
                        valid[i] = true;
                    }
                }
            }
            Err(FbpError::EmptySlab { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(IntensityVolume { grid: *grid, values, valid })
}

#[derive(Debug, Error)]
pub enum SinogramFileError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a sinogram file (bad magic)")]
    BadMagic,
    #[error("file ends before the payload does")]
    Truncated,
    #[error("inconsistent header: {0}")]
    BadHeader(String),
}

fn map_eof(e: io::Error) -> SinogramFileError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        SinogramFileError::Truncated
    } else {
        SinogramFileError::Io(e)
    }
}

pub fn write_sinogram(path: &Path, sino: &Sinogram) -> Result<(), SinogramFileError> {
    let spec = &sino.spec;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SINOGRAM_MAGIC)?;
    w.write_all(&(spec.n_slabs as u32).to_le_bytes())?;
    w.write_all(&(spec.n_r as u32).to_le_bytes())?;
    w.write_all(&(spec.n_theta as u32).to_le_bytes())?;
    for v in [spec.r_min, spec.dr, spec.dtheta(), spec.x_min, spec.dx] {
        w.write_all(&v.to_le_bytes())?;
    }
    for m in &sino.means {
        w.write_all(&(*m as f32).to_le_bytes())?;
    }
    for c in &sino.counts {
        w.write_all(&c.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram, SinogramFileError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(map_eof)?;
    if &magic != SINOGRAM_MAGIC {
        return Err(SinogramFileError::BadMagic);
    }
    let mut head = [0u8; 52];
    r.read_exact(&mut head).map_err(map_eof)?;
    let n_slabs = u32::from_le_bytes(head[0..4].try_into().unwrap()) as usize;
    let n_r = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let n_theta = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let f = |a: usize| f64::from_le_bytes(head[12 + 8 * a..20 + 8 * a].try_into().unwrap());
    let (r_min, dr, dtheta, x_min, dx) = (f(0), f(1), f(2), f(3), f(4));
    if n_theta == 0 || n_r == 0 || n_slabs == 0 {
        return Err(SinogramFileError::BadHeader("zero-sized axis".into()));
    }
    let spec = SinogramSpec { n_slabs, x_min, dx, n_r, r_min, dr, n_theta };
    if (dtheta - spec.dtheta()).abs() > 1e-12 {
        return Err(SinogramFileError::BadHeader(format!(
            "stored dtheta {dtheta} does not match pi/{n_theta}"
        )));
    }
    let n = spec.len();
    let mut means = Vec::with_capacity(n);
    let mut buf4 = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf4).map_err(map_eof)?;
        means.push(f32::from_le_bytes(buf4) as f64);
    }
    let mut counts = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf4).map_err(map_eof)?;
        counts.push(u32::from_le_bytes(buf4));
    }
    Ok(Sinogram { spec, means, counts })
}
