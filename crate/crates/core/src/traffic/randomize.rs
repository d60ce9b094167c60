use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{wrap_angle, FrameScene, TrafficError};
use crate::rng;

/// Domain randomization applied to simulated vehicle poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationParams {
    /// Variance (m^2) of the longitudinal and lateral Gaussian offsets.
    pub pos_variance: f64,
    /// Half-width (rad) of the uniform heading offset.
    pub heading_range: f64,
}

impl Default for RandomizationParams {
    fn default() -> Self {
        Self { pos_variance: 0.5, heading_range: 5f64.to_radians() }
    }
}

impl RandomizationParams {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.pos_variance.is_finite() && self.pos_variance >= 0.0) {
            return Err(TrafficError::InvalidInput("pos_variance must be >= 0".into()));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_4).contains(&self.heading_range) {
            return Err(TrafficError::InvalidInput("heading_range must be in [0, pi/4]".into()));
        }
        Ok(())
    }
}

/// Offsets every vehicle along its own longitudinal and lateral axes and
/// perturbs its heading. Draws are keyed by `(seed, vehicle id, scene time)`
/// so a vehicle's offset does not depend on which other vehicles exist.
pub fn randomize_poses(scene: &FrameScene, p: &RandomizationParams, seed: u64) -> FrameScene {
    let sigma = p.pos_variance.sqrt();
    let offsets = Normal::new(0.0, sigma).ok().filter(|_| sigma > 0.0);
    let headings = Uniform::new_inclusive(-p.heading_range, p.heading_range)
        .ok()
        .filter(|_| p.heading_range > 0.0);
    let mut out = scene.clone();
    for v in &mut out.vehicles {
        let mut r = rng::stream(seed, &["randomize".into(), v.id.into(), scene.time.into()]);
        let (lon, lat) = match &offsets {
            Some(n) => (n.sample(&mut r), n.sample(&mut r)),
            None => (0.0, 0.0),
        };
        let dh = headings.map_or(0.0, |u| u.sample(&mut r));
        if lon != 0.0 || lat != 0.0 {
            let (s, c) = v.heading.sin_cos();
            v.position[0] += lon * c - lat * s;
            v.position[1] += lon * s + lat * c;
        }
        if dh != 0.0 {
            v.heading = wrap_angle(v.heading + dh);
        }
    }
    out
}
