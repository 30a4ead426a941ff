//! Muon scattering tomography workbench.
//!
//! Simulates cosmic-ray muons through a rotatable test object between two
//! tracking planes, reconstructs scattering-intensity volumes by filtered
//! backprojection and by depth-of-field voxel tallies, and scores the images
//! with contrast-to-noise and edge-sharpness metrics.

pub mod config;
pub mod event;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod sinogram;
pub mod source;
pub mod transport;
pub mod voxel;
