//! Image quality metrics for reconstructed volumes.
//!
//! Contrast is measured between material regions cut out of the known
//! geometry, spatial resolution as the 10 to 90 percent rise distance of an
//! intensity profile across a material boundary.

use crate::geometry::VoxelMask;
use crate::voxel::IntensityVolume;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("region contains no voxels")]
    EmptyRegion,
    #[error("voxel ({ix}, {iy}, {iz}) in the region has no reconstructed value")]
    NoData { ix: usize, iy: usize, iz: usize },
    #[error("mask and volume use different grids")]
    GridMismatch,
    #[error("background spread is zero, contrast-to-noise is undefined")]
    ZeroBackgroundSpread,
    #[error("volume has no intensity range to normalize")]
    DegenerateRange,
    #[error("profile never crosses the {threshold} level")]
    NoCrossing { threshold: f64 },
}

/// Mean and population standard deviation of a voxel region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStats {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
}

/// Fused single-pass mean and spread over the masked voxels. Every masked
/// voxel must hold data; the first gap is reported by position.
pub fn region_stats(
    volume: &IntensityVolume,
    mask: &VoxelMask,
) -> Result<RegionStats, MetricsError> {
    if volume.grid != mask.grid {
        return Err(MetricsError::GridMismatch);
    }
    let grid = &volume.grid;
    let mut count = 0usize;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            for iz in 0..grid.nz {
                let i = grid.index(ix, iy, iz);
                if !mask.inside[i] {
                    continue;
                }
                if !volume.valid[i] {
                    return Err(MetricsError::NoData { ix, iy, iz });
                }
                count += 1;
                let delta = volume.values[i] - mean;
                mean += delta / count as f64;
                m2 += delta * (volume.values[i] - mean);
            }
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptyRegion);
    }
    Ok(RegionStats { count, mean, std_dev: (m2 / count as f64).sqrt() })
}

/// Contrast-to-noise ratio: mean separation over the background spread.
pub fn cnr(foreground: &RegionStats, background: &RegionStats) -> Result<f64, MetricsError> {
    if background.std_dev == 0.0 {
        return Err(MetricsError::ZeroBackgroundSpread);
    }
    Ok((foreground.mean - background.mean) / background.std_dev)
}

/// Affinely rescales the valid voxels onto [0, 1]. Voxels without data stay
/// untouched.
pub fn normalize_unit(volume: &IntensityVolume) -> Result<IntensityVolume, MetricsError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (v, ok) in volume.values.iter().zip(&volume.valid) {
        if *ok {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !(hi > lo) {
        return Err(MetricsError::DegenerateRange);
    }
    let span = hi - lo;
    let values = volume
        .values
        .iter()
        .zip(&volume.valid)
        .map(|(v, ok)| if *ok { (v - lo) / span } else { *v })
        .collect();
    Ok(IntensityVolume { grid: volume.grid, values, valid: volume.valid.clone() })
}

/// Fractional sample position where the profile first reaches `level`,
/// scanning forward from `start`. Values are linearly interpolated between
/// samples.
fn crossing_position(profile: &[f64], level: f64, start: usize) -> Option<f64> {
    for i in start..profile.len() {
        if profile[i] >= level {
            if i == 0 {
                return Some(0.0);
            }
            let (a, b) = (profile[i - 1], profile[i]);
            if b == a {
                return Some(i as f64);
            }
            return Some((i - 1) as f64 + (level - a) / (b - a));
        }
    }
    None
}

/// 10 to 90 percent rise distance of an edge profile, in samples.
///
/// The profile is normalized with the supplied low and high reference levels
/// and scanned from its low end, so a profile and its reverse give the same
/// distance.
pub fn edge_rise(profile: &[f64], low: f64, high: f64) -> Result<f64, MetricsError> {
    assert!(high != low, "reference levels must differ");
    let normalized: Vec<f64> = profile.iter().map(|v| (v - low) / (high - low)).collect();
    let forward = match (normalized.first(), normalized.last()) {
        (Some(a), Some(b)) => a <= b,
        _ => return Err(MetricsError::NoCrossing { threshold: 0.1 }),
    };
    let scan: Vec<f64> =
        if forward { normalized } else { normalized.into_iter().rev().collect() };
    let p10 = crossing_position(&scan, 0.1, 0)
        .ok_or(MetricsError::NoCrossing { threshold: 0.1 })?;
    let p90 = crossing_position(&scan, 0.9, p10.ceil() as usize)
        .ok_or(MetricsError::NoCrossing { threshold: 0.9 })?;
    Ok(p90 - p10)
}

/// Profile of values along the y axis at fixed (ix, iz), low y to high y.
pub fn y_profile(volume: &IntensityVolume, ix: usize, iz: usize) -> Vec<f64> {
    let grid = &volume.grid;
    (0..grid.ny).map(|iy| volume.values[grid.index(ix, iy, iz)]).collect()
}

/// Marks every valid voxel at or above the threshold.
pub fn threshold_voxels(volume: &IntensityVolume, threshold: f64) -> VoxelMask {
    let inside = volume
        .values
        .iter()
        .zip(&volume.valid)
        .map(|(v, ok)| *ok && *v >= threshold)
        .collect();
    VoxelMask { grid: volume.grid, inside }
}

/// Largest face-connected component of the mask (6-neighborhood).
pub fn largest_component(mask: &VoxelMask) -> VoxelMask {
    let grid = &mask.grid;
    let mut label = vec![usize::MAX; mask.inside.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..mask.inside.len() {
        if !mask.inside[start] || label[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0usize;
        label[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (ix, iy, iz) = grid.coords(i);
            let mut visit = |jx: isize, jy: isize, jz: isize| {
                if jx < 0
                    || jy < 0
                    || jz < 0
                    || jx >= grid.nx as isize
                    || jy >= grid.ny as isize
                    || jz >= grid.nz as isize
                {
                    return;
                }
                let j = grid.index(jx as usize, jy as usize, jz as usize);
                if mask.inside[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            };
            let (x, y, z) = (ix as isize, iy as isize, iz as isize);
            visit(x - 1, y, z);
            visit(x + 1, y, z);
            visit(x, y - 1, z);
            visit(x, y + 1, z);
            visit(x, y, z - 1);
            visit(x, y, z + 1);
        }
        sizes.push(size);
    }

    let best = sizes
        .iter()
        .enumerate()
        .max_by_key(|(_, s)| **s)
        .map(|(i, _)| i)
        .unwrap_or(usize::MAX);
    let inside = label.iter().map(|l| *l == best && best != usize::MAX).collect();
    VoxelMask { grid: *grid, inside }
}
