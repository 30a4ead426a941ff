//! Voxel ray traversal and the combined depth-of-field reconstruction.
//!
//! Every recorded muon deposits its scattering angle along the incoming
//! track, weighted by the chord length it spends in each voxel. The voxel
//! estimate is the length-weighted mean angle of all tracks through it, so
//! crossing tracks sharpen features anywhere along the track instead of only
//! at a nominal focal depth.

use crate::event::{incoming_ray, scattering_angle, to_drum_frame, EventDataset, MuonEvent};
use crate::geometry::{GridSpec, Ray};
use rayon::prelude::*;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const VOXEL_MAGIC: &[u8; 8] = b"MUVOX001";
/// f32 intensities plus a validity bitmap.
pub const PAYLOAD_INTENSITY: u8 = 0;
/// Raw f64 tally sums, exact for checkpoint and merge.
pub const PAYLOAD_TALLIES: u8 = 1;

/// Events per work chunk in the parallel tally. Chunks are reduced in order,
/// so results do not depend on the thread count.
const CHUNK_EVENTS: usize = 65_536;

/// One voxel crossed by a ray and the chord length inside it (cm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelChord {
    pub ix: usize,
    pub iy: usize,
    pub iz: usize,
    pub length: f64,
}

/// Walks the ray through the grid face by face and returns every voxel the
/// ray crosses, in traversal order, with positive chord lengths. Rays that
/// miss the grid give an empty list.
pub fn traverse_voxels(grid: &GridSpec, ray: &Ray) -> Vec<VoxelChord> {
    let lo = grid.origin;
    let hi = grid.max_corner();
    let dims = [grid.nx, grid.ny, grid.nz];

    // clip the ray against the grid box
    let mut t_enter = 0.0f64;
    let mut t_exit = f64::INFINITY;
    for k in 0..3 {
        let (o, d) = (ray.origin[k], ray.dir[k]);
        if d == 0.0 {
            if o < lo[k] || o > hi[k] {
                return Vec::new();
            }
        } else {
            let (a, b) = ((lo[k] - o) / d, (hi[k] - o) / d);
            t_enter = t_enter.max(a.min(b));
            t_exit = t_exit.min(a.max(b));
        }
    }
    if t_enter >= t_exit {
        return Vec::new();
    }

    let entry = ray.at(t_enter);
    let mut idx = [0isize; 3];
    for k in 0..3 {
        let i = ((entry[k] - lo[k]) / grid.edge).floor() as isize;
        idx[k] = i.clamp(0, dims[k] as isize - 1);
    }

    let mut chords = Vec::new();
    let mut t = t_enter;
    loop {
        // time at which the ray leaves the current voxel along each axis
        let mut t_next = [f64::INFINITY; 3];
        for k in 0..3 {
            let d = ray.dir[k];
            if d > 0.0 {
                t_next[k] = (lo[k] + (idx[k] + 1) as f64 * grid.edge - ray.origin[k]) / d;
            } else if d < 0.0 {
                t_next[k] = (lo[k] + idx[k] as f64 * grid.edge - ray.origin[k]) / d;
            }
        }
        let mut axis = 0;
        if t_next[1] < t_next[0] {
            axis = 1;
        }
        if t_next[2] < t_next[axis] {
            axis = 2;
        }
        let t_end = t_next[axis].min(t_exit);
        if t_end > t {
            chords.push(VoxelChord {
                ix: idx[0] as usize,
                iy: idx[1] as usize,
                iz: idx[2] as usize,
                length: t_end - t,
            });
        }
        if t_next[axis] >= t_exit {
            break;
        }
        idx[axis] += if ray.dir[axis] > 0.0 { 1 } else { -1 };
        if idx[axis] < 0 || idx[axis] >= dims[axis] as isize {
            break;
        }
        t = t_next[axis];
    }
    chords
}

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("voxel grids differ, cannot merge")]
    GridMismatch,
}

/// Running tally of scattering weight and path length per voxel, in the
/// drum's rest frame. Merging tallies is exact, so work can be split into
/// chunks and recombined.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    pub grid: GridSpec,
    pub weighted: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl VoxelVolume {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.len();
        Self { grid, weighted: vec![0.0; n], lengths: vec![0.0; n] }
    }

    /// Deposits one event along its incoming track, rotated into the drum
    /// frame for the orientation the event was recorded at.
    pub fn tally_event(&mut self, event: &MuonEvent, orientation: f64) {
        let drum = to_drum_frame(event, orientation);
        let angle = scattering_angle(&drum.top_dir, &drum.bottom_dir);
        let ray = incoming_ray(&drum);
        for chord in traverse_voxels(&self.grid, &ray) {
            let i = self.grid.index(chord.ix, chord.iy, chord.iz);
            self.weighted[i] += angle * chord.length;
            self.lengths[i] += chord.length;
        }
    }

    pub fn tally_dataset(&mut self, dataset: &EventDataset) {
        for ev in &dataset.events {
            self.tally_event(ev, dataset.orientation);
        }
    }

    /// Parallel tally over fixed-size event chunks, merged in chunk order so
    /// the result is bit-identical for any thread count.
    pub fn tally_dataset_parallel(&mut self, dataset: &EventDataset) {
        let partials: Vec<VoxelVolume> = dataset
            .events
            .par_chunks(CHUNK_EVENTS)
            .map(|chunk| {
                let mut part = VoxelVolume::new(self.grid);
                for ev in chunk {
                    part.tally_event(ev, dataset.orientation);
                }
                part
            })
            .collect();
        for part in partials {
            self.merge(&part).expect("chunk grids match by construction");
        }
    }

    pub fn merge(&mut self, other: &VoxelVolume) -> Result<(), VoxelError> {
        if self.grid != other.grid {
            return Err(VoxelError::GridMismatch);
        }
        for (a, b) in self.weighted.iter_mut().zip(&other.weighted) {
            *a += b;
        }
        for (a, b) in self.lengths.iter_mut().zip(&other.lengths) {
            *a += b;
        }
        Ok(())
    }

    /// Length-weighted mean scattering angle per voxel. Voxels no track
    /// crossed are marked invalid and carry NaN.
    pub fn intensity(&self) -> IntensityVolume {
        let mut values = Vec::with_capacity(self.grid.len());
        let mut valid = Vec::with_capacity(self.grid.len());
        for (w, l) in self.weighted.iter().zip(&self.lengths) {
            if *l > 0.0 {
                values.push(w / l);
                valid.push(true);
            } else {
                values.push(f64::NAN);
                valid.push(false);
            }
        }
        IntensityVolume { grid: self.grid, values, valid }
    }
}

/// Reconstructed image on a voxel grid. Both reconstruction routes produce
/// this type, so the quality metrics apply to either.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVolume {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl IntensityVolume {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Tallies every dataset into one volume. Chunk-parallel per dataset.
pub fn reconstruct_dof(grid: GridSpec, datasets: &[EventDataset]) -> VoxelVolume {
    let mut volume = VoxelVolume::new(grid);
    for ds in datasets {
        volume.tally_dataset_parallel(ds);
    }
    volume
}

#[derive(Debug, Error)]
pub enum VoxelFileError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a voxel volume file (bad magic)")]
    BadMagic,
    #[error("unknown payload kind {0}")]
    BadKind(u8),
    #[error("file ends before the payload does")]
    Truncated,
}

fn write_grid_header<W: Write>(w: &mut W, grid: &GridSpec, kind: u8) -> io::Result<()> {
    w.write_all(VOXEL_MAGIC)?;
    w.write_all(&(grid.nx as u32).to_le_bytes())?;
    w.write_all(&(grid.ny as u32).to_le_bytes())?;
    w.write_all(&(grid.nz as u32).to_le_bytes())?;
    for k in 0..3 {
        w.write_all(&grid.origin[k].to_le_bytes())?;
    }
    w.write_all(&grid.edge.to_le_bytes())?;
    w.write_all(&[kind])?;
    Ok(())
}

fn read_grid_header<R: Read>(r: &mut R) -> Result<(GridSpec, u8), VoxelFileError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(map_eof)?;
    if &magic != VOXEL_MAGIC {
        return Err(VoxelFileError::BadMagic);
    }
    let mut head = [0u8; 45];
    r.read_exact(&mut head).map_err(map_eof)?;
    let nx = u32::from_le_bytes(head[0..4].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let nz = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let origin = nalgebra::Point3::new(
        f64::from_le_bytes(head[12..20].try_into().unwrap()),
        f64::from_le_bytes(head[20..28].try_into().unwrap()),
        f64::from_le_bytes(head[28..36].try_into().unwrap()),
    );
    let edge = f64::from_le_bytes(head[36..44].try_into().unwrap());
    let kind = head[44];
    Ok((GridSpec { nx, ny, nz, origin, edge }, kind))
}

fn map_eof(e: io::Error) -> VoxelFileError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        VoxelFileError::Truncated
    } else {
        VoxelFileError::Io(e)
    }
}

/// Writes raw tally sums (payload kind 1), bit-exact for later merging.
pub fn write_tally_volume(path: &Path, volume: &VoxelVolume) -> Result<(), VoxelFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid_header(&mut w, &volume.grid, PAYLOAD_TALLIES)?;
    for v in volume.weighted.iter().chain(&volume.lengths) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tally_volume(path: &Path) -> Result<VoxelVolume, VoxelFileError> {
    let mut r = BufReader::new(File::open(path)?);
    let (grid, kind) = read_grid_header(&mut r)?;
    if kind != PAYLOAD_TALLIES {
        return Err(VoxelFileError::BadKind(kind));
    }
    let n = grid.len();
    let mut read_block = |out: &mut Vec<f64>| -> Result<(), VoxelFileError> {
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(map_eof)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(())
    };
    let mut weighted = Vec::with_capacity(n);
    read_block(&mut weighted)?;
    let mut lengths = Vec::with_capacity(n);
    read_block(&mut lengths)?;
    Ok(VoxelVolume { grid, weighted, lengths })
}

/// Writes an image as f32 values (payload kind 0) plus a validity bitmap,
/// least significant bit first in voxel index order.
pub fn write_intensity_volume(
    path: &Path,
    volume: &IntensityVolume,
) -> Result<(), VoxelFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid_header(&mut w, &volume.grid, PAYLOAD_INTENSITY)?;
    for v in &volume.values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    let mut bitmap = vec![0u8; volume.valid.len().div_ceil(8)];
    for (i, ok) in volume.valid.iter().enumerate() {
        if *ok {
            bitmap[i >> 3] |= 1 << (i & 7);
        }
    }
    w.write_all(&bitmap)?;
    w.flush()?;
    Ok(())
}

pub fn read_intensity_volume(path: &Path) -> Result<IntensityVolume, VoxelFileError> {
    let mut r = BufReader::new(File::open(path)?);
    let (grid, kind) = read_grid_header(&mut r)?;
    if kind != PAYLOAD_INTENSITY {
        return Err(VoxelFileError::BadKind(kind));
    }
    let n = grid.len();
    let mut values = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(map_eof)?;
        values.push(f32::from_le_bytes(buf) as f64);
    }
    let mut bitmap = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bitmap).map_err(map_eof)?;
    let valid: Vec<bool> = (0..n).map(|i| bitmap[i >> 3] & (1 << (i & 7)) != 0).collect();
    Ok(IntensityVolume { grid, values, valid })
}
