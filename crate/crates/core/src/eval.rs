//! Scoring wake reports against ground truth, detection metrics and ROC sweeps.
//!
//! Every scene contributes exactly five outcomes, one per wake kind. The two
//! narrow-V arms are interchangeable, as are the two Kelvin arms, so each pair
//! is scored under whichever labelling gives more correct outcomes.

use std::io::Write;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::detect::{confirm_wakes, detect_pipeline, DetectConfig, WakeCandidate, WakeKind, WakeReport, WakeStatus};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::solver::SolverConfig;
use crate::synth::{line_matches, GroundTruth, WakeTruth};

/// Outcome tallies. Fractional values are allowed so published percentage
/// tables can be replayed directly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl DetectionCounts {
    pub fn new(tp: f64, tn: f64, fp: f64, fn_: f64) -> Result<Self> {
        if [tp, tn, fp, fn_].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("counts must be finite and non-negative"));
        }
        Ok(Self { tp, tn, fp, fn_ })
    }

    pub fn n(&self) -> f64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for DetectionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, tn: self.tn + o.tn, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl std::iter::Sum for DetectionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn ser_ratio<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn de_ratio<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) if s == "inf" => Ok(f64::INFINITY),
        Num::S(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        Num::S(s) => Err(serde::de::Error::custom(format!("bad ratio {s:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy_pct: f64,
    pub f1: f64,
    /// Positive likelihood ratio; `+∞` (serialised `"inf"`) when specificity is 1.
    #[serde(serialize_with = "ser_ratio", deserialize_with = "de_ratio")]
    pub lr_plus: f64,
    pub youden_j: f64,
    /// Set when there were no positives and sensitivity defaulted to 1.
    pub sensitivity_undefined: bool,
    /// Set when there were no negatives and specificity defaulted to 1.
    pub specificity_undefined: bool,
}

/// Sensitivity, specificity, accuracy, F1, LR+ and Youden's J.
pub fn compute_metrics(c: &DetectionCounts) -> Result<Metrics> {
    let n = c.n();
    if !(n > 0.0) {
        return Err(Error::invalid("no outcomes to score"));
    }
    let ratio = |num: f64, den: f64| if den > 0.0 { (num / den, false) } else { (1.0, true) };
    let (sensitivity, sensitivity_undefined) = ratio(c.tp, c.tp + c.fn_);
    let (specificity, specificity_undefined) = ratio(c.tn, c.tn + c.fp);
    let f1_den = 2.0 * c.tp + c.fp + c.fn_;
    let f1 = if f1_den > 0.0 { 2.0 * c.tp / f1_den } else { 1.0 };
    let lr_plus = if specificity < 1.0 { sensitivity / (1.0 - specificity) } else { f64::INFINITY };
    Ok(Metrics {
        sensitivity,
        specificity,
        accuracy_pct: 100.0 * (c.tp + c.tn) / n,
        f1,
        lr_plus,
        youden_j: sensitivity + specificity - 1.0,
        sensitivity_undefined,
        specificity_undefined,
    })
}

/// Location tolerances for counting a confirmation as in place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub theta_tol: f64,
    pub r_tol: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { theta_tol: 3.0, r_tol: 5.0 }
    }
}

/// Whether a confirmed candidate lies on the truth line and on the right half.
pub fn in_place(c: &WakeCandidate, truth: &WakeTruth, tol: &ScoreConfig) -> bool {
    let Some(line) = c.half_line else { return false };
    if !line_matches(truth, c.r, c.theta_deg, tol.theta_tol, tol.r_tol) {
        return false;
    }
    let (x, y) = line.direction_xy();
    let h = truth.heading_deg.to_radians();
    x * h.cos() + y * h.sin() > 0.0
}

fn outcome(c: &WakeCandidate, truth: &WakeTruth, tol: &ScoreConfig) -> DetectionCounts {
    let confirmed = c.status == WakeStatus::Confirmed;
    let mut out = DetectionCounts::default();
    match (truth.visible, confirmed) {
        (true, true) if in_place(c, truth, tol) => out.tp = 1.0,
        (true, true) | (false, true) => out.fp = 1.0,
        (true, false) => out.fn_ = 1.0,
        (false, false) => out.tn = 1.0,
    }
    out
}

/// Per-wake outcomes of one report; the arm pairs use the better labelling.
pub fn score_report(report: &WakeReport, truth: &GroundTruth, tol: &ScoreConfig) -> Result<DetectionCounts> {
    if !(tol.theta_tol > 0.0 && tol.r_tol > 0.0) {
        return Err(Error::invalid("tolerances must be positive"));
    }
    for kind in WakeKind::ALL {
        let in_report = report.candidates.iter().filter(|c| c.kind == kind).count();
        let in_truth = truth.wakes.iter().filter(|w| w.kind == kind).count();
        if in_report != 1 || in_truth != 1 {
            return Err(Error::invalid(format!("{} must appear once in report and truth", kind.name())));
        }
    }
    let cand = |k| report.candidate(k);
    let mut total = outcome(cand(WakeKind::Turbulent), truth.wake(WakeKind::Turbulent), tol);
    for (a, b) in [(WakeKind::NarrowV1, WakeKind::NarrowV2), (WakeKind::Kelvin1, WakeKind::Kelvin2)] {
        let straight = outcome(cand(a), truth.wake(a), tol) + outcome(cand(b), truth.wake(b), tol);
        let swapped = outcome(cand(a), truth.wake(b), tol) + outcome(cand(b), truth.wake(a), tol);
        let correct = |c: &DetectionCounts| c.tp + c.tn;
        total = total + if correct(&swapped) > correct(&straight) { swapped } else { straight };
    }
    Ok(total)
}

/// One scene processed by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRun {
    pub report: WakeReport,
    pub truth: GroundTruth,
    pub iterations: usize,
}

/// Runs the pipeline on every scene using `jobs` worker threads. Results come
/// back in input order and do not depend on `jobs`.
pub fn run_scenes(
    scenes: &[(Image, GroundTruth)],
    solver: &SolverConfig,
    detect: &DetectConfig,
    jobs: usize,
) -> Result<Vec<SceneRun>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        scenes
            .par_iter()
            .map(|(image, truth)| {
                let ship = (truth.ship_center[0], truth.ship_center[1]);
                let (report, result) = detect_pipeline(image, ship, solver, detect, &truth.id)?;
                Ok(SceneRun { report, truth: truth.clone(), iterations: result.iterations })
            })
            .collect()
    })
}

/// Totals over a set of scored scenes.
pub fn aggregate(runs: &[SceneRun], tol: &ScoreConfig) -> Result<DetectionCounts> {
    runs.iter().map(|r| score_report(&r.report, &r.truth, tol)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(serialize_with = "ser_ratio", deserialize_with = "de_ratio")]
    pub margin: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Default margin grid: `-∞`, `-0.5, -0.4, …, 1.0`, `+∞`.
pub fn default_margins() -> Vec<f64> {
    let mut m = vec![f64::NEG_INFINITY];
    m.extend((0..=15).map(|i| -0.5 + 0.1 * i as f64));
    m.push(f64::INFINITY);
    m
}

/// Re-applies the confirmation rule at each margin to already detected
/// scenes and returns the ROC points sorted by `(fpr, tpr)`.
pub fn roc_sweep(runs: &[SceneRun], margins: &[f64], tol: &ScoreConfig) -> Result<Vec<RocPoint>> {
    if margins.is_empty() {
        return Err(Error::invalid("margin grid is empty"));
    }
    let mut points = Vec::with_capacity(margins.len());
    for &margin in margins {
        let mut total = DetectionCounts::default();
        for run in runs {
            let mut report = run.report.clone();
            confirm_wakes(&mut report.candidates, margin);
            total = total + score_report(&report, &run.truth, tol)?;
        }
        let m = compute_metrics(&total)?;
        points.push(RocPoint { margin, fpr: 1.0 - m.specificity, tpr: m.sensitivity });
    }
    points.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)));
    Ok(points)
}

/// Best true-positive rate reachable at false-positive rate at most `fpr`.
fn tpr_at(curve: &[RocPoint], fpr: f64) -> Option<f64> {
    curve.iter().filter(|p| p.fpr <= fpr + 1e-12).map(|p| p.tpr).reduce(f64::max)
}

/// Fraction of the shared fpr grid (the union of both curves' fpr values
/// inside their common range) where `a` reaches at least the tpr of `b`.
pub fn dominance_fraction(a: &[RocPoint], b: &[RocPoint]) -> Option<f64> {
    let range = |c: &[RocPoint]| {
        c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.fpr), hi.max(p.fpr)))
    };
    let (lo_a, hi_a) = range(a);
    let (lo_b, hi_b) = range(b);
    let (lo, hi) = (lo_a.max(lo_b), hi_a.min(hi_b));
    let mut grid: Vec<f64> = a.iter().chain(b).map(|p| p.fpr).filter(|f| *f >= lo && *f <= hi).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.is_empty() {
        return None;
    }
    let wins = grid
        .iter()
        .filter(|&&f| match (tpr_at(a, f), tpr_at(b, f)) {
            (Some(x), Some(y)) => x >= y - 1e-12,
            _ => false,
        })
        .count();
    Some(wins as f64 / grid.len() as f64)
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

pub fn write_roc_csv(points: &[RocPoint], mut out: impl Write) -> Result<()> {
    writeln!(out, "margin,fpr,tpr")?;
    for p in points {
        writeln!(out, "{},{},{}", fmt_num(p.margin), p.fpr, p.tpr)?;
    }
    Ok(())
}

/// Per-scene outcome table.
pub fn write_counts_csv(rows: &[(String, DetectionCounts)], mut out: impl Write) -> Result<()> {
    writeln!(out, "scene_id,tp,tn,fp,fn")?;
    for (id, c) in rows {
        writeln!(out, "{id},{},{},{},{}", c.tp, c.tn, c.fp, c.fn_)?;
    }
    Ok(())
}

/// Summary table with counts as percentages of all outcomes.
pub fn write_table_csv(rows: &[(String, DetectionCounts)], mut out: impl Write) -> Result<()> {
    writeln!(out, "method,tp_pct,tn_pct,fp_pct,fn_pct,sensitivity_pct,specificity_pct,accuracy_pct,f1,lr_plus,youden_j")?;
    for (name, c) in rows {
        let m = compute_metrics(c)?;
        let pct = |v: f64| 100.0 * v / c.n();
        writeln!(
            out,
            "{name},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{},{:.2}",
            pct(c.tp),
            pct(c.tn),
            pct(c.fp),
            pct(c.fn_),
            100.0 * m.sensitivity,
            100.0 * m.specificity,
            m.accuracy_pct,
            m.f1,
            if m.lr_plus.is_finite() { format!("{:.2}", m.lr_plus) } else { "inf".into() },
            m.youden_j
        )?;
    }
    Ok(())
}
