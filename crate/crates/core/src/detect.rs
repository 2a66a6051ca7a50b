//! Wake detection in the estimated sinogram and confirmation in the image.
//!
//! The ship sits at a known pixel; every wake is a half-line leaving it. In
//! the sinogram a dark turbulent wake is a trough and the bright narrow-V and
//! Kelvin arms are peaks at fixed angular offsets from it. Candidate lines are
//! cut at the ship, one half is kept, and the mean intensity along that half
//! decides confirmation.
//!
//! Angles are line-normal angles in degrees on `[0, 180)`; angular distances
//! wrap modulo 180. Ties are always broken toward the smallest `(θ, r)`.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{write_pgm8, Image};
use crate::solver::{solve, SolverConfig};
use crate::transform::Sinogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WakeKind {
    Turbulent,
    NarrowV1,
    NarrowV2,
    Kelvin1,
    Kelvin2,
}

impl WakeKind {
    pub const ALL: [WakeKind; 5] =
        [WakeKind::Turbulent, WakeKind::NarrowV1, WakeKind::NarrowV2, WakeKind::Kelvin1, WakeKind::Kelvin2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            WakeKind::Turbulent => "turbulent",
            WakeKind::NarrowV1 => "narrow_v1",
            WakeKind::NarrowV2 => "narrow_v2",
            WakeKind::Kelvin1 => "kelvin1",
            WakeKind::Kelvin2 => "kelvin2",
        }
    }

    pub fn is_narrow(self) -> bool {
        matches!(self, WakeKind::NarrowV1 | WakeKind::NarrowV2)
    }

    pub fn is_kelvin(self) -> bool {
        matches!(self, WakeKind::Kelvin1 | WakeKind::Kelvin2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WakeStatus {
    Confirmed,
    Discarded,
    NotSearched,
}

/// Segment from `start` to `end` in `(row, col)` pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfLine {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl HalfLine {
    pub fn length(&self) -> f64 {
        ((self.end[0] - self.start[0]).powi(2) + (self.end[1] - self.start[1]).powi(2)).sqrt()
    }

    /// Unit direction in centred Cartesian coordinates `(x, y)` with `y` up.
    pub fn direction_xy(&self) -> (f64, f64) {
        let len = self.length();
        if len == 0.0 {
            return (0.0, 0.0);
        }
        ((self.end[1] - self.start[1]) / len, -(self.end[0] - self.start[0]) / len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WakeCandidate {
    pub kind: WakeKind,
    /// Signed line offset from the image centre in pixels.
    pub r: f64,
    pub theta_deg: f64,
    pub peak_value: f64,
    #[serde(rename = "endpoints")]
    pub half_line: Option<HalfLine>,
    pub f_index: Option<f64>,
    pub status: WakeStatus,
}

impl WakeCandidate {
    pub fn not_searched(kind: WakeKind) -> Self {
        Self { kind, r: 0.0, theta_deg: 0.0, peak_value: 0.0, half_line: None, f_index: None, status: WakeStatus::NotSearched }
    }

    fn at(kind: WakeKind, sino: &Sinogram, bin: (usize, usize)) -> Self {
        Self {
            kind,
            r: sino.offset(bin.0),
            theta_deg: sino.grid().angle_deg(bin.1),
            peak_value: sino.values()[bin],
            half_line: None,
            f_index: None,
            status: WakeStatus::Discarded,
        }
    }

    pub fn is_searched(&self) -> bool {
        self.status != WakeStatus::NotSearched
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Maximum azimuth shift in pixels; `None` means `M / 4`.
    #[serde(default)]
    pub a: Option<f64>,
    /// Largest angular distance between the turbulent wake and a narrow-V arm.
    #[serde(default = "default_tn_window")]
    pub tn_window: f64,
    /// Angular distance where the Kelvin search starts.
    #[serde(default = "default_kelvin_start")]
    pub kelvin_start: f64,
    /// Width of the Kelvin search window.
    #[serde(default = "default_kelvin_window")]
    pub kelvin_window: f64,
    /// Non-turbulent wakes need `F_I > f_margin`.
    #[serde(default = "default_f_margin")]
    pub f_margin: f64,
    #[serde(default = "default_mask_radius")]
    pub mask_radius: f64,
    #[serde(default = "default_halfline_cone")]
    pub halfline_cone: f64,
}

fn default_tn_window() -> f64 {
    4.0
}
fn default_kelvin_start() -> f64 {
    10.0
}
fn default_kelvin_window() -> f64 {
    10.0
}
fn default_f_margin() -> f64 {
    0.1
}
fn default_mask_radius() -> f64 {
    8.0
}
fn default_halfline_cone() -> f64 {
    45.0
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            a: None,
            tn_window: default_tn_window(),
            kelvin_start: default_kelvin_start(),
            kelvin_window: default_kelvin_window(),
            f_margin: default_f_margin(),
            mask_radius: default_mask_radius(),
            halfline_cone: default_halfline_cone(),
        }
    }
}

impl DetectConfig {
    /// Effective `A` for an image of side `m`.
    pub fn a_for(&self, m: usize) -> f64 {
        self.a.unwrap_or(m as f64 / 4.0)
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let a = self.a_for(m);
        if !(a > 0.0 && a < m as f64 / std::f64::consts::SQRT_2) {
            return Err(Error::invalid(format!("A = {a} outside (0, M/sqrt 2) for M = {m}")));
        }
        for (name, v) in [
            ("tn_window", self.tn_window),
            ("kelvin_window", self.kelvin_window),
            ("halfline_cone", self.halfline_cone),
            ("mask_radius", self.mask_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kelvin_start >= 0.0) || self.kelvin_start + self.kelvin_window > 90.0 {
            return Err(Error::invalid("Kelvin search range must lie within 90 degrees"));
        }
        if self.f_margin.is_nan() {
            return Err(Error::invalid("f_margin is NaN"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WakeReport {
    pub source: String,
    /// Ship position as `(row, col)`.
    pub ship_center: [f64; 2],
    pub candidates: Vec<WakeCandidate>,
    pub config: DetectConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl WakeReport {
    pub fn candidate(&self, kind: WakeKind) -> &WakeCandidate {
        self.candidates.iter().find(|c| c.kind == kind).expect("report holds every kind")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: WakeReport = serde_json::from_str(text)?;
        for kind in WakeKind::ALL {
            if report.candidates.iter().filter(|c| c.kind == kind).count() != 1 {
                return Err(Error::invalid(format!("report must hold exactly one {} entry", kind.name())));
            }
        }
        Ok(report)
    }
}

/// Wrapped angular distance in degrees, in `[0, 90]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Signed wrapped offset `a - b` in `(-90, 90]`.
pub fn signed_offset(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    if d > 90.0 {
        d - 180.0
    } else {
        d
    }
}

const ANGLE_EPS: f64 = 1e-9;

/// Marks every pixel closer than `radius` to `center` (row, col) as inactive.
/// An existing mask is kept and intersected.
pub fn mask_ship(image: &Image, center: (f64, f64), radius: f64) -> Result<Image> {
    let m = image.size();
    let max = (m - 1) as f64;
    if !(0.0..=max).contains(&center.0) || !(0.0..=max).contains(&center.1) {
        return Err(Error::invalid(format!("ship centre {center:?} outside the {m}x{m} image")));
    }
    if !(radius >= 0.0) || radius >= m as f64 / 2.0 {
        return Err(Error::invalid(format!("mask radius {radius} must be below M/2 = {}", m as f64 / 2.0)));
    }
    let mut mask = image.mask().cloned().unwrap_or_else(|| Array2::from_elem((m, m), true));
    for ((r, c), keep) in mask.indexed_iter_mut() {
        let d2 = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
        if d2 < radius * radius {
            *keep = false;
        }
    }
    image.clone().with_mask(mask)
}

/// Sine-wave search region `|r - r_ship(θ)| ≤ A sin θ` around a ship at
/// centred coordinates `ship_xy`.
pub fn restrict_search_about(sino: &Sinogram, a: f64, ship_xy: (f64, f64)) -> Array2<bool> {
    let (rows, cols) = sino.values().dim();
    let grid = sino.grid();
    Array2::from_shape_fn((rows, cols), |(b, k)| {
        let theta = grid.angle_deg(k).to_radians();
        let r_ship = ship_xy.0 * theta.cos() + ship_xy.1 * theta.sin();
        (sino.offset(b) - r_ship).abs() <= a * theta.sin() + ANGLE_EPS
    })
}

/// Sine-wave search region `|r| ≤ A sin θ` for a ship at the image centre.
pub fn restrict_search(sino: &Sinogram, a: f64) -> Array2<bool> {
    restrict_search_about(sino, a, (0.0, 0.0))
}

/// Masked extremum of one angle column, lowest `r` first on ties.
fn column_extremum(values: &Array2<f64>, mask: &Array2<bool>, k: usize, want_max: bool) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for b in 0..values.nrows() {
        if !mask[(b, k)] {
            continue;
        }
        let v = values[(b, k)];
        let better = match best {
            None => true,
            Some((_, bv)) => (want_max && v > bv) || (!want_max && v < bv),
        };
        if better {
            best = Some((b, v));
        }
    }
    best
}

fn check_mask(sino: &Sinogram, mask: &Array2<bool>) -> Result<()> {
    if sino.values().dim() != mask.dim() {
        return Err(Error::DimensionMismatch(format!("mask {:?} vs sinogram {:?}", mask.dim(), sino.values().dim())));
    }
    Ok(())
}

/// Picks the trough/peak pair in distinct angle columns at most `window`
/// degrees apart that maximises `peak - trough`.
pub fn detect_tn_pair(sino: &Sinogram, mask: &Array2<bool>, window: f64) -> Result<(WakeCandidate, WakeCandidate)> {
    check_mask(sino, mask)?;
    let values = sino.values();
    let grid = sino.grid();
    let t = grid.count();
    let mins: Vec<_> = (0..t).map(|k| column_extremum(values, mask, k, false)).collect();
    let maxs: Vec<_> = (0..t).map(|k| column_extremum(values, mask, k, true)).collect();
    let mut best: Option<(f64, (usize, usize), (usize, usize))> = None;
    // columns and rows are visited in ascending order, so a strict comparison
    // keeps the lexicographically smallest pair on ties
    for kt in 0..t {
        let Some((bt, vt)) = mins[kt] else { continue };
        for kn in 0..t {
            let d = angular_distance(grid.angle_deg(kt), grid.angle_deg(kn));
            if kn == kt || d > window + ANGLE_EPS {
                continue;
            }
            let Some((bn, vn)) = maxs[kn] else { continue };
            let score = vn - vt;
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, (bt, kt), (bn, kn)));
            }
        }
    }
    let (_, tb, nb) = best.ok_or(Error::NoCandidates)?;
    Ok((WakeCandidate::at(WakeKind::Turbulent, sino, tb), WakeCandidate::at(WakeKind::NarrowV1, sino, nb)))
}

/// Masked maximum over columns whose signed offset from `theta_ref` lies in
/// `[lo, hi]` degrees, excluding the reference column itself.
fn window_max(sino: &Sinogram, mask: &Array2<bool>, theta_ref: f64, lo: f64, hi: f64) -> Option<(usize, usize)> {
    let grid = sino.grid();
    let values = sino.values();
    let mut best: Option<((usize, usize), f64)> = None;
    for k in 0..grid.count() {
        let off = signed_offset(grid.angle_deg(k), theta_ref);
        if off.abs() < ANGLE_EPS || off < lo - ANGLE_EPS || off > hi + ANGLE_EPS {
            continue;
        }
        if let Some((b, v)) = column_extremum(values, mask, k, true) {
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some(((b, k), v));
            }
        }
    }
    best.map(|(bin, _)| bin)
}

/// Maximum within `window` degrees on the side of the turbulent wake
/// opposite to the first narrow-V arm.
pub fn detect_second_narrow(
    sino: &Sinogram,
    mask: &Array2<bool>,
    turbulent: &WakeCandidate,
    narrow1: &WakeCandidate,
    window: f64,
) -> Result<WakeCandidate> {
    check_mask(sino, mask)?;
    let side = signed_offset(narrow1.theta_deg, turbulent.theta_deg);
    let (lo, hi) = if side >= 0.0 { (-window, 0.0) } else { (0.0, window) };
    Ok(match window_max(sino, mask, turbulent.theta_deg, lo, hi) {
        Some(bin) => WakeCandidate::at(WakeKind::NarrowV2, sino, bin),
        None => WakeCandidate::not_searched(WakeKind::NarrowV2),
    })
}

/// Maxima in `θ_turb + [start, start + window]` (Kelvin 1) and
/// `θ_turb - [start, start + window]` (Kelvin 2).
pub fn detect_kelvin(
    sino: &Sinogram,
    mask: &Array2<bool>,
    turbulent: &WakeCandidate,
    start: f64,
    window: f64,
) -> Result<(WakeCandidate, WakeCandidate)> {
    check_mask(sino, mask)?;
    let theta = turbulent.theta_deg;
    let pick = |kind, lo, hi| match window_max(sino, mask, theta, lo, hi) {
        Some(bin) => WakeCandidate::at(kind, sino, bin),
        None => WakeCandidate::not_searched(kind),
    };
    Ok((
        pick(WakeKind::Kelvin1, start, start + window),
        pick(WakeKind::Kelvin2, -(start + window), -start),
    ))
}

/// Clips the ray `p + t·d`, `t ≥ 0`, against the pixel box; returns the exit `t`.
fn ray_exit(p: (f64, f64), d: (f64, f64), max: f64) -> Option<f64> {
    let mut t_lo: f64 = 0.0;
    let mut t_hi = f64::INFINITY;
    for (pi, di) in [(p.0, d.0), (p.1, d.1)] {
        if di.abs() < 1e-15 {
            if pi < -1e-9 || pi > max + 1e-9 {
                return None;
            }
            continue;
        }
        let a = (0.0 - pi) / di;
        let b = (max - pi) / di;
        t_lo = t_lo.max(a.min(b));
        t_hi = t_hi.min(a.max(b));
    }
    (t_hi >= t_lo && t_lo <= 1e-9).then_some(t_hi)
}

/// The two half-lines of candidate line `(r, θ)`, split at the foot of the
/// perpendicular from the ship centre. Halves that miss the image are `None`.
pub fn split_line(size: usize, r: f64, theta_deg: f64, ship: (f64, f64)) -> [Option<HalfLine>; 2] {
    let c = (size as f64 - 1.0) / 2.0;
    let max = (size - 1) as f64;
    let th = theta_deg.to_radians();
    let (cs, sn) = (th.cos(), th.sin());
    // ship in centred coordinates, then its foot on the line
    let sx = ship.1 - c;
    let sy = c - ship.0;
    let shift = r - (sx * cs + sy * sn);
    let fx = sx + shift * cs;
    let fy = sy + shift * sn;
    let foot = (c - fy, fx + c);
    // line direction (-sin, cos) in (x, y) is (-cos, -sin) in (row, col)
    let dirs = [(-cs, -sn), (cs, sn)];
    dirs.map(|d| {
        let inside = (0.0..=max).contains(&foot.0) && (0.0..=max).contains(&foot.1);
        if !inside {
            return None;
        }
        let t = ray_exit(foot, d, max)?;
        (t > 0.0).then(|| HalfLine { start: [foot.0, foot.1], end: [foot.0 + t * d.0, foot.1 + t * d.1] })
    })
}

/// Bilinear samples at unit steps along `line`, skipping masked pixels.
pub fn sample_half_line(image: &Image, line: &HalfLine) -> Vec<f64> {
    let len = line.length();
    let steps = len.floor() as usize;
    let (dr, dc) = if len > 0.0 {
        ((line.end[0] - line.start[0]) / len, (line.end[1] - line.start[1]) / len)
    } else {
        (0.0, 0.0)
    };
    let m = image.size();
    (0..=steps)
        .filter_map(|k| {
            let row = line.start[0] + k as f64 * dr;
            let col = line.start[1] + k as f64 * dc;
            let (ri, ci) = (row.round() as usize, col.round() as usize);
            if ri >= m || ci >= m || !image.is_active(ri, ci) {
                return None;
            }
            image.bilinear(row, col)
        })
        .collect()
}

fn half_mean(image: &Image, line: &Option<HalfLine>) -> Option<f64> {
    let samples = sample_half_line(image, line.as_ref()?);
    (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Orders endpoints by `(col, row)`.
fn endpoint_key(line: &Option<HalfLine>) -> (f64, f64) {
    line.map(|l| (l.end[1], l.end[0])).unwrap_or((f64::NEG_INFINITY, f64::NEG_INFINITY))
}

/// Resolves the 180° ambiguity of a candidate line.
///
/// The turbulent wake keeps its darker half (ties go to the half whose end
/// point has the larger `(col, row)`). Other wakes keep the half pointing
/// within `cone` degrees of `turbulent_dir` and are discarded otherwise; with
/// no turbulent direction the brighter half is kept.
pub fn resolve_halfline(
    image: &Image,
    candidate: &WakeCandidate,
    ship: (f64, f64),
    turbulent_dir: Option<(f64, f64)>,
    cone: f64,
) -> WakeCandidate {
    let mut out = candidate.clone();
    if !candidate.is_searched() {
        return out;
    }
    let halves = split_line(image.size(), candidate.r, candidate.theta_deg, ship);
    let chosen = if candidate.kind == WakeKind::Turbulent || turbulent_dir.is_none() {
        let darker = candidate.kind == WakeKind::Turbulent;
        let means = [half_mean(image, &halves[0]), half_mean(image, &halves[1])];
        match means {
            [None, None] => None,
            [Some(_), None] => halves[0],
            [None, Some(_)] => halves[1],
            [Some(a), Some(b)] => {
                if a == b {
                    if endpoint_key(&halves[0]) >= endpoint_key(&halves[1]) {
                        halves[0]
                    } else {
                        halves[1]
                    }
                } else if (a < b) == darker {
                    halves[0]
                } else {
                    halves[1]
                }
            }
        }
    } else {
        let (tx, ty) = turbulent_dir.expect("checked above");
        let cos_cone = cone.to_radians().cos();
        halves.into_iter().flatten().find(|h| {
            let (x, y) = h.direction_xy();
            x * tx + y * ty >= cos_cone - 1e-12
        })
    };
    out.half_line = chosen;
    if chosen.is_none() {
        out.status = WakeStatus::Discarded;
    }
    out
}

/// `F_I = mean(samples along the half-line) / mean(active pixels) - 1`.
pub fn f_index(image: &Image, line: &HalfLine) -> Result<f64> {
    let samples = sample_half_line(image, line);
    if samples.len() < 5 {
        return Err(Error::InsufficientSupport(samples.len()));
    }
    let mean = image.active_mean().ok_or_else(|| Error::invalid("mask excludes every pixel"))?;
    if !(mean > 0.0) {
        return Err(Error::invalid(format!("image mean {mean} must be positive for the F index")));
    }
    let line_mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(line_mean / mean - 1.0)
}

/// Confirmation rule: turbulent needs `F_I < 0`, the others `F_I > margin`.
pub fn is_confirmed(kind: WakeKind, f: f64, margin: f64) -> bool {
    if kind == WakeKind::Turbulent {
        f < 0.0
    } else {
        f > margin
    }
}

/// Sets each resolved candidate's status from its F index; candidates without
/// an F index keep `Discarded` / `NotSearched`.
pub fn confirm_wakes(candidates: &mut [WakeCandidate], margin: f64) {
    for c in candidates {
        if let Some(f) = c.f_index {
            c.status = if is_confirmed(c.kind, f, margin) { WakeStatus::Confirmed } else { WakeStatus::Discarded };
        }
    }
}

/// Runs the Radon-domain search and the image-domain confirmation on an
/// already estimated sinogram. `image` carries the ship mask and original intensities.
pub fn detect_in_sinogram(
    image: &Image,
    sino: &Sinogram,
    ship: (f64, f64),
    config: &DetectConfig,
) -> Result<(Vec<WakeCandidate>, Vec<String>)> {
    config.validate(image.size())?;
    let m = image.size();
    let c = (m as f64 - 1.0) / 2.0;
    let ship_xy = (ship.1 - c, c - ship.0);
    let region = restrict_search_about(sino, config.a_for(m), ship_xy);
    let mut diagnostics = Vec::new();
    let (turb, n1) = match detect_tn_pair(sino, &region, config.tn_window) {
        Ok(pair) => pair,
        Err(Error::NoCandidates) => {
            diagnostics.push(Error::NoCandidates.to_string());
            return Ok((WakeKind::ALL.map(WakeCandidate::not_searched).to_vec(), diagnostics));
        }
        Err(e) => return Err(e),
    };
    let n2 = detect_second_narrow(sino, &region, &turb, &n1, config.tn_window)?;
    let (k1, k2) = detect_kelvin(sino, &region, &turb, config.kelvin_start, config.kelvin_window)?;

    let turb = resolve_halfline(image, &turb, ship, None, config.halfline_cone);
    let dir = turb.half_line.map(|h| h.direction_xy());
    let mut candidates = vec![turb];
    for cand in [n1, n2, k1, k2] {
        candidates.push(resolve_halfline(image, &cand, ship, dir, config.halfline_cone));
    }
    for cand in candidates.iter_mut() {
        if let Some(line) = cand.half_line {
            match f_index(image, &line) {
                Ok(f) => cand.f_index = Some(f),
                Err(e) => {
                    diagnostics.push(format!("{}: {e}", cand.kind.name()));
                    cand.status = WakeStatus::Discarded;
                }
            }
        } else if cand.is_searched() {
            diagnostics.push(format!("{}: no admissible half-line", cand.kind.name()));
        }
    }
    confirm_wakes(&mut candidates, config.f_margin);
    Ok((candidates, diagnostics))
}

/// Full pipeline: mask the ship, standardise, invert, search, confirm.
/// Solver failures are returned as errors; detection-stage failures mark the
/// affected candidates `NotSearched` and are logged in the report.
pub fn detect_pipeline(
    image: &Image,
    ship: (f64, f64),
    solver: &SolverConfig,
    config: &DetectConfig,
    source: &str,
) -> Result<(WakeReport, crate::solver::SolverResult)> {
    config.validate(image.size())?;
    let masked = mask_ship(image, ship, config.mask_radius)?;
    let y = masked.standardized()?;
    let result = solve(&y, solver)?;
    let (candidates, diagnostics) = detect_in_sinogram(&masked, &result.estimate, ship, config)?;
    let report = WakeReport {
        source: source.to_string(),
        ship_center: [ship.0, ship.1],
        candidates,
        config: *config,
        solver: Some(*solver),
        diagnostics,
    };
    Ok((report, result))
}

/// Gray level used for a confirmed wake in the overlay.
pub fn overlay_level(kind: WakeKind) -> u8 {
    match kind {
        WakeKind::Turbulent => 255,
        WakeKind::NarrowV1 | WakeKind::NarrowV2 => 200,
        WakeKind::Kelvin1 | WakeKind::Kelvin2 => 160,
    }
}

/// 8-bit overlay: the image stretched to `[0, 127]` with confirmed half-lines burned in.
pub fn render_overlay(image: &Image, report: &WakeReport) -> Array2<u8> {
    let px = image.pixels();
    let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = px.mapv(|v| ((v - lo) / span * 127.0).round() as u8);
    let m = image.size();
    for cand in &report.candidates {
        let (Some(line), WakeStatus::Confirmed) = (cand.half_line, cand.status) else { continue };
        let steps = (line.length() * 2.0).ceil() as usize;
        for k in 0..=steps {
            let f = if steps == 0 { 0.0 } else { k as f64 / steps as f64 };
            let r = (line.start[0] + f * (line.end[0] - line.start[0])).round();
            let c = (line.start[1] + f * (line.end[1] - line.start[1])).round();
            if r >= 0.0 && c >= 0.0 && (r as usize) < m && (c as usize) < m {
                out[(r as usize, c as usize)] = overlay_level(cand.kind);
            }
        }
    }
    out
}

pub fn write_overlay(image: &Image, report: &WakeReport, out: impl Write) -> Result<()> {
    write_pgm8(&render_overlay(image, report), out)
}
