//! Seeded synthetic sea-clutter scenes with planted wake half-lines.
//!
//! The background is `mean · (1 + swell) · (1 + noise)` with a single
//! sinusoidal swell and per-pixel multiplicative Gaussian noise. Each wake is
//! an anti-aliased half-line from the wake apex, multiplying intensity by
//! `1 + contrast · coverage`. An optional bright blob marks the ship.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detect::{angular_distance, WakeKind};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterSpec {
    pub mean: f64,
    /// Standard deviation of the multiplicative noise factor.
    pub noise: f64,
    pub swell_amplitude: f64,
    pub swell_wavelength: f64,
    pub swell_direction_deg: f64,
}

impl Default for ClutterSpec {
    fn default() -> Self {
        Self { mean: 1000.0, noise: 0.1, swell_amplitude: 0.05, swell_wavelength: 24.0, swell_direction_deg: 30.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WakeSpec {
    pub kind: WakeKind,
    /// Direction of the half-line from the apex, degrees counter-clockwise
    /// from the image `+x` axis (`y` up).
    pub heading_deg: f64,
    /// Relative intensity change on the wake; negative for dark wakes.
    pub contrast: f64,
    /// Full width in pixels.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub size: usize,
    pub clutter: ClutterSpec,
    pub wakes: Vec<WakeSpec>,
    /// Azimuth (`y`) displacement of the wake apex from the ship, in pixels.
    #[serde(default)]
    pub apex_shift: f64,
    /// Relative brightness of the ship blob (0 disables it).
    #[serde(default)]
    pub ship_contrast: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Wake-free scene with default clutter.
    pub fn empty(size: usize, seed: u64) -> Self {
        Self { size, clutter: ClutterSpec::default(), wakes: vec![], apex_shift: 0.0, ship_contrast: 0.0, seed }
    }

    pub fn ship_center(&self) -> (f64, f64) {
        let c = (self.size as f64 - 1.0) / 2.0;
        (c, c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::invalid(format!("scene size {} is below 16", self.size)));
        }
        let c = &self.clutter;
        if !(c.mean > 0.0) || !(c.noise >= 0.0) || !(c.swell_amplitude >= 0.0 && c.swell_amplitude < 1.0) {
            return Err(Error::invalid("clutter needs mean > 0, noise ≥ 0 and swell amplitude in [0, 1)"));
        }
        if c.swell_amplitude > 0.0 && !(c.swell_wavelength > 0.0) {
            return Err(Error::invalid("swell wavelength must be positive"));
        }
        if self.apex_shift.abs() > self.size as f64 / 4.0 {
            return Err(Error::invalid("apex shift exceeds M/4"));
        }
        for (i, w) in self.wakes.iter().enumerate() {
            if !(-0.9..=5.0).contains(&w.contrast) {
                return Err(Error::invalid(format!("wake contrast {} outside [-0.9, 5]", w.contrast)));
            }
            if !(w.width > 0.0) {
                return Err(Error::invalid("wake width must be positive"));
            }
            if self.wakes[..i].iter().any(|o| o.kind == w.kind) {
                return Err(Error::invalid(format!("duplicate {} wake", w.kind.name())));
            }
        }
        let turbulent = self.wakes.iter().find(|w| w.kind == WakeKind::Turbulent);
        for w in &self.wakes {
            if w.kind == WakeKind::Turbulent {
                continue;
            }
            let t = turbulent.ok_or_else(|| Error::invalid("wake arms need a turbulent wake"))?;
            let d = heading_distance(w.heading_deg, t.heading_deg);
            let ok = if w.kind.is_narrow() { d > 0.0 && d <= 4.0 } else { (10.0..=20.0).contains(&d) };
            if !ok {
                return Err(Error::invalid(format!("{} is {d:.2}° from the turbulent wake", w.kind.name())));
            }
        }
        Ok(())
    }
}

/// Angle between two headings in degrees, in `[0, 180]`.
fn heading_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Line-normal angle in `[0, 180)` for a heading.
pub fn normal_angle(heading_deg: f64) -> f64 {
    (heading_deg + 90.0).rem_euclid(180.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WakeTruth {
    pub kind: WakeKind,
    pub visible: bool,
    pub r: f64,
    pub theta_deg: f64,
    /// Direction of the visible half-line, as in [`WakeSpec::heading_deg`].
    pub heading_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    /// Ship position `(row, col)`.
    pub ship_center: [f64; 2],
    pub wakes: Vec<WakeTruth>,
}

impl GroundTruth {
    pub fn wake(&self, kind: WakeKind) -> &WakeTruth {
        self.wakes.iter().find(|w| w.kind == kind).expect("truth lists every kind")
    }

    pub fn visible_count(&self) -> usize {
        self.wakes.iter().filter(|w| w.visible).count()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let truth: GroundTruth = serde_json::from_str(text)?;
        for kind in WakeKind::ALL {
            if truth.wakes.iter().filter(|w| w.kind == kind).count() != 1 {
                return Err(Error::invalid(format!("truth {} must list {} exactly once", truth.id, kind.name())));
            }
        }
        Ok(truth)
    }
}

fn truth_for(spec: &SceneSpec, id: &str) -> GroundTruth {
    let (row, col) = spec.ship_center();
    let wakes = WakeKind::ALL
        .iter()
        .map(|&kind| match spec.wakes.iter().find(|w| w.kind == kind) {
            Some(w) => {
                let theta = normal_angle(w.heading_deg);
                // apex at (0, apex_shift) in centred coordinates
                let r = spec.apex_shift * theta.to_radians().sin();
                WakeTruth { kind, visible: true, r, theta_deg: theta, heading_deg: w.heading_deg.rem_euclid(360.0) }
            }
            None => WakeTruth { kind, visible: false, r: 0.0, theta_deg: 0.0, heading_deg: 0.0 },
        })
        .collect();
    GroundTruth { id: id.to_string(), ship_center: [row, col], wakes }
}

/// Renders a scene; deterministic for a fixed spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<(Image, GroundTruth)> {
    generate_scene_with_id(spec, "scene")
}

pub fn generate_scene_with_id(spec: &SceneSpec, id: &str) -> Result<(Image, GroundTruth)> {
    spec.validate()?;
    let m = spec.size;
    let c = (m as f64 - 1.0) / 2.0;
    let cl = spec.clutter;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let swell_dir = cl.swell_direction_deg.to_radians();
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let wakes: Vec<_> = spec
        .wakes
        .iter()
        .map(|w| {
            let h = w.heading_deg.to_radians();
            (h.cos(), h.sin(), w.contrast, w.width)
        })
        .collect();
    let mut pixels = Array2::<f64>::zeros((m, m));
    for ((row, col), px) in pixels.indexed_iter_mut() {
        let x = col as f64 - c;
        let y = c - row as f64;
        let mut v = cl.mean;
        if cl.swell_amplitude > 0.0 {
            let s = (x * swell_dir.cos() + y * swell_dir.sin()) / cl.swell_wavelength;
            v *= 1.0 + cl.swell_amplitude * (std::f64::consts::TAU * s + phase).sin();
        }
        let noise: f64 = rng.sample(StandardNormal);
        v *= (1.0 + cl.noise * noise).max(0.0);
        let (px_, py_) = (x, y - spec.apex_shift);
        for &(dx, dy, contrast, width) in &wakes {
            let along = px_ * dx + py_ * dy;
            let perp = (px_ * dy - py_ * dx).abs();
            let coverage = (width / 2.0 + 0.5 - perp).clamp(0.0, 1.0) * (along + 0.5).clamp(0.0, 1.0);
            v *= 1.0 + contrast * coverage;
        }
        if spec.ship_contrast > 0.0 {
            let d = (x * x + y * y).sqrt();
            v *= 1.0 + spec.ship_contrast * (3.5 - d).clamp(0.0, 1.0);
        }
        *px = v;
    }
    Ok((Image::new(pixels)?, truth_for(spec, id)))
}

/// Scene ids and visible-wake patterns of the 28-tile reference table.
pub const PAPER_CASES: [(&str, &[WakeKind]); 28] = {
    use WakeKind::*;
    const ALL5: &[WakeKind] = &[Turbulent, NarrowV1, NarrowV2, Kelvin1, Kelvin2];
    const TNKK: &[WakeKind] = &[Turbulent, NarrowV1, Kelvin1, Kelvin2];
    const TNNK: &[WakeKind] = &[Turbulent, NarrowV1, NarrowV2, Kelvin1];
    const TNK: &[WakeKind] = &[Turbulent, NarrowV1, Kelvin1];
    const TN: &[WakeKind] = &[Turbulent, NarrowV1];
    [
        ("1.1", ALL5),
        ("1.2", TNK),
        ("1.3", TNK),
        ("1.4", TN),
        ("2.1", TNKK),
        ("2.2", TN),
        ("2.3", TNK),
        ("2.4", TNK),
        ("2.5", ALL5),
        ("3.1", TNK),
        ("3.2", TNK),
        ("3.3", TNK),
        ("4.1", TN),
        ("5.1", TN),
        ("5.2", TN),
        ("5.3", TNK),
        ("6.1", TNNK),
        ("6.2", TN),
        ("6.3", TNK),
        ("7.1", TNK),
        ("8.1", TN),
        ("8.2", TNK),
        ("8.3", TN),
        ("9.1", TN),
        ("10.1", TN),
        ("10.2", TN),
        ("10.3", TN),
        ("11.1", TN),
    ]
};

/// Knobs for the reference suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub size: usize,
    pub seed: u64,
    pub noise: f64,
    /// Smallest absolute wake contrast; contrasts are drawn from `[min, min + 0.3]`.
    pub min_contrast: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { size: 128, seed: 0, noise: 0.1, min_contrast: 0.3 }
    }
}

/// Random geometry for one visibility pattern.
pub fn random_scene_spec(visible: &[WakeKind], config: &SuiteConfig, rng: &mut ChaCha8Rng) -> SceneSpec {
    let heading_t: f64 = rng.random_range(0.0..360.0);
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let lo = config.min_contrast;
    let contrast = |rng: &mut ChaCha8Rng| rng.random_range(lo..lo + 0.3);
    let mut wakes = Vec::new();
    for &kind in visible {
        let (offset, sign, width): (f64, f64, f64) = match kind {
            WakeKind::Turbulent => (0.0, 1.0, rng.random_range(2.0..3.0)),
            WakeKind::NarrowV1 => (rng.random_range(3.0..4.0), side, 1.5),
            WakeKind::NarrowV2 => (rng.random_range(3.0..4.0), -side, 1.5),
            WakeKind::Kelvin1 => (rng.random_range(11.0..19.0), 1.0, 1.5),
            WakeKind::Kelvin2 => (rng.random_range(11.0..19.0), -1.0, 1.5),
        };
        let c = contrast(rng);
        let contrast = if kind == WakeKind::Turbulent { -c } else { c };
        wakes.push(WakeSpec { kind, heading_deg: (heading_t + sign * offset).rem_euclid(360.0), contrast, width });
    }
    let clutter = ClutterSpec {
        noise: config.noise,
        swell_direction_deg: rng.random_range(0.0..180.0),
        swell_wavelength: rng.random_range(16.0..32.0),
        ..ClutterSpec::default()
    };
    SceneSpec {
        size: config.size,
        clutter,
        wakes,
        apex_shift: rng.random_range(-2.0..2.0),
        ship_contrast: 2.0,
        seed: rng.random(),
    }
}

/// The 28 reference scenes, each with its id, spec, image and truth.
pub fn paper_case_suite_with(config: &SuiteConfig) -> Result<Vec<(SceneSpec, Image, GroundTruth)>> {
    PAPER_CASES
        .iter()
        .enumerate()
        .map(|(i, (id, visible))| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            let spec = random_scene_spec(visible, config, &mut rng);
            let (image, truth) = generate_scene_with_id(&spec, id)?;
            Ok((spec, image, truth))
        })
        .collect()
}

/// The 28-scene suite at default settings for `seed`.
pub fn paper_case_suite(seed: u64) -> Result<Vec<(Image, GroundTruth)>> {
    Ok(paper_case_suite_with(&SuiteConfig { seed, ..SuiteConfig::default() })?
        .into_iter()
        .map(|(_, image, truth)| (image, truth))
        .collect())
}

/// Wake-free scenes (clutter only, with a ship blob).
pub fn noise_scenes(count: usize, config: &SuiteConfig) -> Result<Vec<(Image, GroundTruth)>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(1000 + i as u64);
            let mut spec = random_scene_spec(&[], config, &mut rng);
            spec.apex_shift = 0.0;
            generate_scene_with_id(&spec, &format!("noise-{i:03}"))
        })
        .collect()
}

/// CSV manifest: scene id and a 0/1 visibility flag per wake kind.
pub fn write_manifest(truths: &[GroundTruth], mut out: impl Write) -> Result<()> {
    let header: Vec<_> = WakeKind::ALL.iter().map(|k| k.name()).collect();
    writeln!(out, "scene_id,{}", header.join(","))?;
    for t in truths {
        let flags: Vec<_> = WakeKind::ALL.iter().map(|&k| if t.wake(k).visible { "1" } else { "0" }).collect();
        writeln!(out, "{},{}", t.id, flags.join(","))?;
    }
    Ok(())
}

/// Reads a scene PGM and its truth sidecar (`<stem>.json`) if present.
pub fn read_truth_sidecar(pgm: &Path) -> Result<Option<GroundTruth>> {
    let json = pgm.with_extension("json");
    if !json.exists() {
        return Ok(None);
    }
    Ok(Some(GroundTruth::from_json(&std::fs::read_to_string(json)?)?))
}

/// Whether a detected line `(r, θ)` matches a truth line within tolerances.
pub fn line_matches(truth: &WakeTruth, r: f64, theta_deg: f64, theta_tol: f64, r_tol: f64) -> bool {
    let d = angular_distance(theta_deg, truth.theta_deg);
    // across the 0/180 seam the normals point opposite ways, flipping r
    let r_here = if (theta_deg - truth.theta_deg).abs() > 90.0 { -truth.r } else { truth.r };
    d <= theta_tol && (r - r_here).abs() <= r_tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_has_reference_patterns() {
        assert_eq!(PAPER_CASES.len(), 28);
        assert_eq!(PAPER_CASES.iter().filter(|(_, v)| v.len() == 5).count(), 2);
        assert!(PAPER_CASES.iter().all(|(_, v)| v.contains(&WakeKind::Turbulent)));
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        let mut spec = SceneSpec::empty(32, 1);
        spec.wakes.push(WakeSpec { kind: WakeKind::Turbulent, heading_deg: 270.0, contrast: -0.3, width: 2.0 });
        assert!(spec.validate().is_ok());
        spec.wakes.push(WakeSpec { kind: WakeKind::Kelvin1, heading_deg: 275.0, contrast: 0.3, width: 1.0 });
        assert!(spec.validate().is_err());
        spec.wakes[1].heading_deg = 285.0;
        assert!(spec.validate().is_ok());
        spec.wakes[1].contrast = 6.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn normal_angle_of_vertical_heading_is_zero() {
        assert_eq!(normal_angle(270.0), 0.0);
        assert_eq!(normal_angle(90.0), 0.0);
        assert_eq!(normal_angle(0.0), 90.0);
    }
}
