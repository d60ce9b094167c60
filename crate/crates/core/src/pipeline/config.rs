use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::background::{Condition, Lighting as LightTag, Weather};
use crate::traffic::{Flows, IdmParams};

fn default_images_per_view() -> usize {
    10
}

fn default_min_visible() -> f64 {
    crate::annotate::DEFAULT_MIN_VISIBLE
}

fn default_padding() -> u32 {
    crate::enhance::DEFAULT_PADDING
}

fn default_ring() -> u32 {
    crate::enhance::DEFAULT_RING_WIDTH
}

/// Top-level `generate` configuration (TOML). Relative paths are resolved
/// against the directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_images_per_view")]
    pub images_per_view: usize,
    pub model_dir: PathBuf,
    pub network: PathBuf,
    /// Route id to arrival rate (veh/s). Routes not listed use the rate in
    /// the network file.
    #[serde(default)]
    pub flows: Flows,
    #[serde(default = "default_min_visible")]
    pub min_visible: f64,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub randomization: RandomizationConfig,
    #[serde(default)]
    pub enhancement: EnhancementConfig,
    #[serde(default)]
    pub lighting: Option<LightingConfig>,
    pub cameras: Vec<CameraConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Simulated seconds before the first frame is taken.
    pub warmup_s: f64,
    /// Simulated seconds between consecutive frames of one view.
    pub frame_interval_s: f64,
    pub dt: f64,
    pub idm: IdmParams,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { warmup_s: 60.0, frame_interval_s: 2.0, dt: 0.5, idm: IdmParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationConfig {
    pub pos_variance: f64,
    pub heading_range_deg: f64,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self { pos_variance: 0.5, heading_range_deg: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhancementConfig {
    /// `off`, `baseline`, or `external:DIR` where DIR names the exchange
    /// directory (relative to the output directory's staging area).
    #[serde(default = "default_mode")]
    pub mode: String,
    /// Program and leading arguments; the exchange directory is appended.
    #[serde(default)]
    pub external_command: Vec<String>,
    #[serde(default = "default_padding")]
    pub padding: u32,
    #[serde(default = "default_ring")]
    pub ring_width: u32,
}

fn default_mode() -> String {
    "off".into()
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        Self { mode: default_mode(), external_command: Vec::new(), padding: default_padding(), ring_width: default_ring() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnhancementMode {
    Off,
    Baseline,
    External { exchange: String, command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightingConfig {
    pub sun_dir: [f64; 3],
    pub ambient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub id: String,
    pub intrinsics: PathBuf,
    /// Solved pose file; takes precedence over `landmarks`.
    #[serde(default)]
    pub pose: Option<PathBuf>,
    #[serde(default)]
    pub landmarks: Option<PathBuf>,
    /// Background library index for this view.
    pub backgrounds: PathBuf,
    /// Condition (`"weather/lighting"`) to image count; counts must add up
    /// to `images_per_view`. Empty means uniform sampling.
    #[serde(default)]
    pub sampling: BTreeMap<String, usize>,
}

pub(crate) fn parse_condition(s: &str) -> Result<Condition, String> {
    let (w, l) = s.split_once('/').ok_or_else(|| format!("condition {s:?} must look like \"sunny/day\""))?;
    Ok(Condition { weather: w.parse::<Weather>()?, lighting: l.parse::<LightTag>()? })
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.model_dir);
        fix(&mut self.network);
        for c in &mut self.cameras {
            fix(&mut c.intrinsics);
            fix(&mut c.backgrounds);
            if let Some(p) = &mut c.pose {
                fix(p);
            }
            if let Some(p) = &mut c.landmarks {
                fix(p);
            }
        }
    }

    pub fn enhancement_mode(&self) -> Result<EnhancementMode, PipelineError> {
        let e = &self.enhancement;
        match e.mode.as_str() {
            "off" => Ok(EnhancementMode::Off),
            "baseline" => Ok(EnhancementMode::Baseline),
            m => match m.strip_prefix("external:") {
                Some(dir) if valid_id(dir) => {
                    if e.external_command.is_empty() {
                        return Err(PipelineError::Config("external enhancement needs external_command".into()));
                    }
                    Ok(EnhancementMode::External { exchange: dir.to_string(), command: e.external_command.clone() })
                }
                _ => Err(PipelineError::Config(format!(
                    "enhancement mode {m:?} must be off, baseline, or external:NAME"
                ))),
            },
        }
    }

    /// Checks values and that every referenced path exists. Performs no
    /// writes.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.images_per_view < 1 {
            return bad("images_per_view must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_visible) {
            return bad("min_visible must be in [0, 1]".into());
        }
        let s = &self.simulation;
        if !(s.dt > 0.0 && s.dt.is_finite()) || !(s.warmup_s >= 0.0) || !(s.frame_interval_s > 0.0) {
            return bad("simulation dt and frame_interval_s must be positive, warmup_s non-negative".into());
        }
        let r = &self.randomization;
        if !(r.pos_variance >= 0.0 && r.pos_variance.is_finite()) || !(0.0..=45.0).contains(&r.heading_range_deg) {
            return bad("randomization pos_variance must be >= 0 and heading_range_deg in [0, 45]".into());
        }
        if let Some(l) = &self.lighting {
            let n = (l.sun_dir[0].powi(2) + l.sun_dir[1].powi(2) + l.sun_dir[2].powi(2)).sqrt();
            if !(n > 0.0 && n.is_finite()) || !(0.0..=1.0).contains(&l.ambient) {
                return bad("lighting needs a nonzero sun_dir and ambient in [0, 1]".into());
            }
        }
        self.enhancement_mode()?;
        for (route, rate) in &self.flows {
            if !(rate.is_finite() && *rate >= 0.0) {
                return bad(format!("flow for {route:?} must be non-negative"));
            }
        }
        if !self.model_dir.is_dir() {
            return bad(format!("model directory {} does not exist", self.model_dir.display()));
        }
        if !self.network.is_file() {
            return bad(format!("network file {} does not exist", self.network.display()));
        }
        if self.cameras.is_empty() {
            return bad("at least one camera is required".into());
        }
        let mut ids = std::collections::HashSet::new();
        for c in &self.cameras {
            if !valid_id(&c.id) || !ids.insert(c.id.as_str()) {
                return bad(format!("camera id {:?} is invalid or duplicated", c.id));
            }
            if !c.intrinsics.is_file() {
                return bad(format!("camera {}: intrinsics {} does not exist", c.id, c.intrinsics.display()));
            }
            match (&c.pose, &c.landmarks) {
                (Some(p), _) if !p.is_file() => {
                    return bad(format!("camera {}: pose {} does not exist", c.id, p.display()))
                }
                (None, Some(p)) if !p.is_file() => {
                    return bad(format!("camera {}: landmarks {} does not exist", c.id, p.display()))
                }
                (None, None) => return bad(format!("camera {}: needs pose or landmarks", c.id)),
                _ => {}
            }
            if !c.backgrounds.is_file() {
                return bad(format!("camera {}: background index {} does not exist", c.id, c.backgrounds.display()));
            }
            if !c.sampling.is_empty() {
                let mut total = 0;
                for (cond, n) in &c.sampling {
                    parse_condition(cond).map_err(|m| PipelineError::Config(format!("camera {}: {m}", c.id)))?;
                    total += n;
                }
                if total != self.images_per_view {
                    return bad(format!(
                        "camera {}: sampling plan totals {total}, images_per_view is {}",
                        c.id, self.images_per_view
                    ));
                }
            }
        }
        Ok(())
    }
}
