//! JSON run configuration shared by every command.
//!
//! Every section has defaults describing the 5 s desk geometry; only the
//! scenario id is mandatory. Unknown fields are rejected so typos surface
//! as validation errors instead of silently falling back to defaults.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ErrorScales, Scenario};
use crate::distortion::AnalysisSettings;
use crate::error::{Error, Result};
use crate::nav::{generate_level_trajectory, Trajectory, Vec3};
use crate::sar::{ErrorEpoch, ImageGrid, PointTarget, RadarParams, SceneRender, TargetScene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    /// Ground speed along track, m/s.
    pub speed: f64,
    pub altitude: f64,
    /// Cross-track ground distance from the flight line to the scene, m.
    pub standoff: f64,
    pub aperture_s: f64,
    pub pulse_rate: f64,
    pub error_epoch: ErrorEpoch,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            speed: 10.0,
            altitude: 1000.0,
            standoff: 1732.0,
            aperture_s: 5.0,
            pulse_rate: 200.0,
            error_epoch: ErrorEpoch::Center,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarConfig {
    pub carrier_wavelength: f64,
    pub range_resolution: f64,
    pub range_bin_spacing: f64,
    /// Padding of the range window beyond the imaged area, m.
    pub window_margin: f64,
    /// Per-component std of additive complex noise on the phase history;
    /// zero disables it.
    pub noise_std: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig {
            carrier_wavelength: 0.03125,
            range_resolution: 0.6,
            range_bin_spacing: 0.15,
            window_margin: 50.0,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_at: usize,
    pub n_ct: usize,
    pub at_spacing: f64,
    pub ct_spacing: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_at: ImageGrid::DEFAULT_SIZE,
            n_ct: ImageGrid::DEFAULT_SIZE,
            at_spacing: 0.3,
            ct_spacing: 0.3,
        }
    }
}

/// How the point scatterers of each target location are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub scatterers: usize,
    /// Scatterers are drawn uniform within ± this many metres of the grid
    /// center on both axes, then the layout is shifted so its
    /// reflectivity-weighted centroid sits on the center.
    pub half_extent: f64,
    pub min_reflectivity: f64,
    pub max_reflectivity: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            scatterers: 6,
            half_extent: 6.0,
            min_reflectivity: 0.5,
            max_reflectivity: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Counts {
    pub targets: usize,
    pub pairs_per_target: usize,
    /// Train / validation / test fractions of the targets.
    pub split: [f64; 3],
}

impl Default for Counts {
    fn default() -> Self {
        Counts {
            targets: 10,
            pairs_per_target: 20,
            split: [0.7, 0.1, 0.2],
        }
    }
}

/// Fixed label standardization constants replacing dataset statistics,
/// e.g. zero mean and filter-derived standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelOverride {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub radar: RadarConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    pub scenario: u8,
    #[serde(default)]
    pub scales: ErrorScales,
    #[serde(default)]
    pub counts: Counts,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub label_override: Option<LabelOverride>,
}

/// Seed stream tags keeping the independent random draws apart.
pub(crate) mod stream {
    pub const SCENE: u64 = 1;
    pub const ERROR: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const NOISE: u64 = 4;
}

/// Mixes a base seed, a stream tag and an index into an independent seed
/// (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    /// Defaults for everything with the given scenario.
    pub fn for_scenario(scenario: u8) -> Self {
        RunConfig {
            geometry: Geometry::default(),
            radar: RadarConfig::default(),
            grid: GridConfig::default(),
            scene: SceneConfig::default(),
            scenario,
            scales: ErrorScales::default(),
            counts: Counts::default(),
            seed: 0,
            output_dir: None,
            analysis: AnalysisSettings::default(),
            label_override: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks every field against the preconditions of the modules it
    /// feeds, before any work starts.
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        positive("geometry.speed", g.speed)?;
        positive("geometry.altitude", g.altitude)?;
        positive("geometry.standoff", g.standoff)?;
        positive("geometry.aperture_s", g.aperture_s)?;
        positive("geometry.pulse_rate", g.pulse_rate)?;

        let r = &self.radar;
        positive("radar.carrier_wavelength", r.carrier_wavelength)?;
        positive("radar.range_resolution", r.range_resolution)?;
        positive("radar.range_bin_spacing", r.range_bin_spacing)?;
        positive("radar.window_margin", r.window_margin)?;
        if r.range_bin_spacing > r.range_resolution / 2.0 {
            return Err(Error::invalid(
                "radar.range_bin_spacing",
                "must not exceed half of radar.range_resolution",
            ));
        }
        if !(r.noise_std >= 0.0 && r.noise_std.is_finite()) {
            return Err(Error::invalid("radar.noise_std", "must be non-negative"));
        }

        let gr = &self.grid;
        if gr.n_at < 3 || gr.n_ct < 3 {
            return Err(Error::invalid("grid", "need at least 3×3 pixels"));
        }
        positive("grid.at_spacing", gr.at_spacing)?;
        positive("grid.ct_spacing", gr.ct_spacing)?;

        let s = &self.scene;
        if s.scatterers == 0 {
            return Err(Error::invalid("scene.scatterers", "must be at least 1"));
        }
        if !(s.half_extent >= 0.0) {
            return Err(Error::invalid("scene.half_extent", "must be non-negative"));
        }
        let (half_at, half_ct) = self.grid_half_extent();
        if s.half_extent >= half_at.min(half_ct) {
            return Err(Error::invalid(
                "scene.half_extent",
                "scatterers must fall inside the image grid",
            ));
        }
        if !(s.min_reflectivity >= 0.0 && s.min_reflectivity <= s.max_reflectivity) {
            return Err(Error::invalid(
                "scene.min_reflectivity",
                "need 0 <= min_reflectivity <= max_reflectivity",
            ));
        }
        if !(s.max_reflectivity > 0.0 && s.max_reflectivity.is_finite()) {
            return Err(Error::invalid("scene.max_reflectivity", "must be positive"));
        }

        let scenario = Scenario::new(self.scenario)?;
        self.scales.validate(&scenario)?;

        let c = &self.counts;
        if c.targets < 3 {
            return Err(Error::invalid("counts.targets", "need at least 3 targets"));
        }
        if c.pairs_per_target == 0 {
            return Err(Error::invalid("counts.pairs_per_target", "must be at least 1"));
        }
        if c.split.iter().any(|f| !(*f >= 0.0)) || (c.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("counts.split", "fractions must be non-negative and sum to 1"));
        }
        if c.targets * c.pairs_per_target < 2 {
            return Err(Error::invalid("counts", "need at least two samples"));
        }

        self.analysis.validate()?;

        if let Some(o) = &self.label_override {
            let m = scenario.m();
            if o.mean.len() != m || o.std.len() != m {
                return Err(Error::invalid(
                    "label_override",
                    format!("mean and std need {m} entries for scenario {}", self.scenario),
                ));
            }
            if o.std.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::invalid("label_override.std", "must be positive"));
            }
        }
        Ok(())
    }

    fn grid_half_extent(&self) -> (f64, f64) {
        (
            0.5 * (self.grid.n_at as f64 - 1.0) * self.grid.at_spacing,
            0.5 * (self.grid.n_ct as f64 - 1.0) * self.grid.ct_spacing,
        )
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::new(self.scenario)
    }

    pub fn truth_trajectory(&self) -> Result<Trajectory> {
        let g = &self.geometry;
        generate_level_trajectory(g.speed, g.altitude, g.aperture_s, g.pulse_rate)
    }

    /// Ground point broadside to the aperture midpoint at the configured
    /// standoff.
    pub fn scene_center(&self, traj: &Trajectory) -> Vec3 {
        Vec3::new(traj.mid_position().x, self.geometry.standoff, 0.0)
    }

    pub fn image_grid(&self, center: Vec3) -> Result<ImageGrid> {
        ImageGrid::new(
            center,
            self.grid.at_spacing,
            self.grid.ct_spacing,
            self.grid.n_at,
            self.grid.n_ct,
        )
    }

    /// Range window covering the whole image grid along `traj`.
    pub fn radar_params(&self, traj: &Trajectory, grid: &ImageGrid) -> Result<RadarParams> {
        let (n_at, n_ct) = grid.shape();
        let corners = [
            grid.pixel_position(0, 0),
            grid.pixel_position(0, n_ct - 1),
            grid.pixel_position(n_at - 1, 0),
            grid.pixel_position(n_at - 1, n_ct - 1),
        ];
        RadarParams::covering(
            self.radar.carrier_wavelength,
            self.radar.range_resolution,
            self.radar.range_bin_spacing,
            traj,
            &corners,
            self.radar.window_margin,
        )
    }

    /// Point scatterers of target location `target_id`.
    pub fn target_scene(&self, target_id: usize, center: Vec3) -> Result<TargetScene> {
        let s = &self.scene;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, stream::SCENE, target_id as u64));
        let layout: Vec<(f64, f64, f64)> = (0..s.scatterers)
            .map(|_| {
                let at = rng.random_range(-1.0..=1.0) * s.half_extent;
                let ct = rng.random_range(-1.0..=1.0) * s.half_extent;
                let reflectivity = if s.max_reflectivity > s.min_reflectivity {
                    rng.random_range(s.min_reflectivity..s.max_reflectivity)
                } else {
                    s.min_reflectivity
                };
                (at, ct, reflectivity)
            })
            .collect();
        // Centre the layout on its reflectivity-weighted centroid so that a
        // scale change about the scene centre does not read as a shift.
        let total: f64 = layout.iter().map(|t| t.2).sum();
        let (c_at, c_ct) = if total > 0.0 {
            (
                layout.iter().map(|t| t.0 * t.2).sum::<f64>() / total,
                layout.iter().map(|t| t.1 * t.2).sum::<f64>() / total,
            )
        } else {
            (0.0, 0.0)
        };
        let targets = layout
            .into_iter()
            .map(|(at, ct, reflectivity)| PointTarget {
                position: Vec3::new(center.x + at - c_at, center.y + ct - c_ct, 0.0),
                reflectivity,
            })
            .collect();
        TargetScene::new(targets)
    }

    /// Simulates target location `target_id` along the true trajectory and
    /// forms its reference image.
    pub fn render_target(&self, target_id: usize) -> Result<SceneRender> {
        let traj = self.truth_trajectory()?;
        let center = self.scene_center(&traj);
        let grid = self.image_grid(center)?;
        let params = self.radar_params(&traj, &grid)?;
        let scene = self.target_scene(target_id, center)?;
        let ph = crate::sar::simulate_phase_history(&traj, &scene, &params)?.with_noise(
            self.radar.noise_std,
            derive_seed(self.seed, stream::NOISE, target_id as u64),
        )?;
        SceneRender::from_phase_history(&traj, ph, &grid, &params, self.geometry.error_epoch)
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.output_dir.as_deref()
    }
}
