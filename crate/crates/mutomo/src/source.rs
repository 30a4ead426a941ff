//! Parametric sea-level cosmic-ray muon source.
//!
//! Directions follow the standard cos^2 intensity law; crossing a horizontal
//! plane adds one cosine, so the sampled zenith density is cos^3(t)*sin(t)
//! with closed-form CDF 1 - cos^4(t). Momenta follow a Gaisser-form spectrum
//!
//! ```text
//! dN/dp ~ [p (1 + p_soft / (p cos^1.29 t))]^(-gamma)
//!         * [ 1/(1 + 1.1 p cos t / 115 GeV) + 0.054/(1 + 1.1 p cos t / 850 GeV) ]
//! ```
//!
//! The softening pivot `p_soft` reproduces the sub-GeV turnover of the
//! sea-level flux that the bare power law lacks; the default 2.5 GeV/c puts
//! the vertical mean momentum at 3.40 GeV/c. Momenta are drawn by rejection
//! from the exact power-law envelope (p + a)^(-gamma), which has an invertible
//! CDF, so acceptance stays above 90%.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Exp};

/// Momentum spectrum and arrival-rate parameters. Momenta are MeV/c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxModel {
    pub spectral_index: f64,
    /// Low-energy softening pivot (MeV/c); shifts the power law to (p + pivot)^-gamma.
    pub soft_pivot: f64,
    /// Weight of the second (kaon-parent) Gaisser term.
    pub second_term_weight: f64,
    /// Critical momenta (MeV/c) of the two Gaisser terms.
    pub critical_p1: f64,
    pub critical_p2: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Seed muons per second crossing the source plane.
    pub event_rate: f64,
}

impl Default for FluxModel {
    fn default() -> Self {
        Self {
            spectral_index: 2.7,
            soft_pivot: 2_500.0,
            second_term_weight: 0.054,
            critical_p1: 115_000.0,
            critical_p2: 850_000.0,
            p_min: 200.0,
            p_max: 1_000_000.0,
            event_rate: 33.0,
        }
    }
}

/// Horizontal generation plane above the top detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourcePlane {
    pub z: f64,
    pub half_x: f64,
    pub half_y: f64,
}

impl Default for SourcePlane {
    fn default() -> Self {
        Self { z: 35.0, half_x: 60.0, half_y: 60.0 }
    }
}

/// Muon ready for transport: where/when it pierces the source plane, its
/// downward unit direction and momentum (MeV/c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedMuon {
    pub time: f64,
    pub pos: Point3<f64>,
    pub dir: Vector3<f64>,
    pub momentum: f64,
}

/// Zenith-angle probability density (unnormalized), zero outside [0, pi/2).
pub fn zenith_density(theta: f64) -> f64 {
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
        return 0.0;
    }
    theta.cos().powi(3) * theta.sin()
}

/// Cumulative zenith distribution, 1 - cos^4(theta).
pub fn zenith_cdf(theta: f64) -> f64 {
    if theta <= 0.0 {
        0.0
    } else if theta >= std::f64::consts::FRAC_PI_2 {
        1.0
    } else {
        1.0 - theta.cos().powi(4)
    }
}

/// Unnormalized momentum density at zenith angle with cosine `cos_zenith`;
/// `p` in MeV/c.
pub fn momentum_density(flux: &FluxModel, p: f64, cos_zenith: f64) -> f64 {
    if p < flux.p_min || p > flux.p_max {
        return 0.0;
    }
    let a = flux.soft_pivot / cos_zenith.powf(1.29);
    let bracket = 1.0 / (1.0 + 1.1 * p * cos_zenith / flux.critical_p1)
        + flux.second_term_weight / (1.0 + 1.1 * p * cos_zenith / flux.critical_p2);
    (p + a).powf(-flux.spectral_index) * bracket
}

/// Draws a downward unit direction: zenith by inverting 1 - cos^4, azimuth
/// uniform. The -z axis points down toward the detectors.
pub fn sample_direction(rng: &mut impl Rng) -> Vector3<f64> {
    let u: f64 = rng.gen();
    let cos_t = u.powf(0.25);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), -cos_t)
}

/// Draws a momentum (MeV/c) for a muon arriving at the given zenith cosine.
pub fn sample_momentum(rng: &mut impl Rng, flux: &FluxModel, cos_zenith: f64) -> f64 {
    assert!(cos_zenith > 0.0, "momentum sampling needs a downward direction");
    let a = flux.soft_pivot / cos_zenith.powf(1.29);
    let g1 = 1.0 - flux.spectral_index; // exponent of the envelope CDF
    let lo = (flux.p_min + a).powf(g1);
    let hi = (flux.p_max + a).powf(g1);
    let bracket_max = 1.0 + flux.second_term_weight;
    loop {
        let u: f64 = rng.gen();
        let p = (lo + (hi - lo) * u).powf(1.0 / g1) - a;
        let p = p.clamp(flux.p_min, flux.p_max);
        let bracket = 1.0 / (1.0 + 1.1 * p * cos_zenith / flux.critical_p1)
            + flux.second_term_weight / (1.0 + 1.1 * p * cos_zenith / flux.critical_p2);
        if rng.gen::<f64>() * bracket_max <= bracket {
            return p;
        }
    }
}

/// Draws the next seed muon: uniform position on the plane, direction and
/// momentum from the flux model, timestamp advanced from `prev_time` by an
/// exponential inter-arrival at the configured rate.
pub fn sample_event_seed(
    rng: &mut impl Rng,
    flux: &FluxModel,
    plane: &SourcePlane,
    prev_time: f64,
) -> SeedMuon {
    let wait = Exp::new(flux.event_rate).expect("event rate must be positive").sample(rng);
    let pos = Point3::new(
        plane.half_x * (2.0 * rng.gen::<f64>() - 1.0),
        plane.half_y * (2.0 * rng.gen::<f64>() - 1.0),
        plane.z,
    );
    let dir = sample_direction(rng);
    let momentum = sample_momentum(rng, flux, -dir.z);
    SeedMuon { time: prev_time + wait, pos, dir, momentum }
}
