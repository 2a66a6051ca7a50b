mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use wakescan::detect::*;
use wakescan::eval::{score_report, ScoreConfig};
use wakescan::prox::PriorSpec;
use wakescan::solver::SolverConfig;
use wakescan::synth::{generate_scene_with_id, noise_scenes, ClutterSpec, SceneSpec, SuiteConfig, WakeSpec};
use wakescan::transform::{radon, AngleGrid, Sinogram};
use wakescan::Image;

fn planted(m: usize, entries: &[(f64, f64, f64)]) -> Sinogram {
    let mut s = Sinogram::zeros(m, AngleGrid::default());
    for &(r, theta, v) in entries {
        let b = s.bin_of(r).unwrap();
        let k = s.grid().nearest_index(theta);
        s.values_mut()[[b, k]] = v;
    }
    s
}

fn all_true(s: &Sinogram) -> Array2<bool> {
    Array2::from_elem(s.values().dim(), true)
}

fn pos(c: &WakeCandidate) -> (f64, f64) {
    (c.r, c.theta_deg)
}

#[test]
fn mask_ship_examples() {
    let mut r = rng(11);
    let image = Image::new(random_grid(32, 32, 1.0, &mut r)).unwrap();
    let tiny = mask_ship(&image, (15.5, 15.5), 0.4).unwrap();
    assert_eq!(tiny.active_count(), 32 * 32);
    assert_eq!(tiny.pixels(), image.pixels());

    let centre = image.center();
    let masked = mask_ship(&image, centre, 5.0).unwrap();
    let mut inside = 0;
    for row in 0..32 {
        for col in 0..32 {
            let d = ((row as f64 - centre.0).powi(2) + (col as f64 - centre.1).powi(2)).sqrt();
            let expect_active = d >= 5.0;
            assert_eq!(masked.is_active(row, col), expect_active, "pixel ({row}, {col})");
            inside += usize::from(!expect_active);
        }
    }
    assert_eq!(masked.active_count(), 32 * 32 - inside);
    assert_eq!(masked.pixels(), image.pixels());

    assert!(mask_ship(&image, centre, 16.0).is_err());
    assert!(mask_ship(&image, (-1.0, 3.0), 2.0).is_err());
    assert!(mask_ship(&image, (3.0, 32.0), 2.0).is_err());
}

#[test]
fn masking_changes_only_lines_through_the_disk() {
    let m = 32;
    let mut r = rng(12);
    let image = Image::new(random_grid(m, m, 1.0, &mut r).mapv(|v| v + 2.0)).unwrap();
    let ship = (12.0, 19.0);
    let radius = 4.0;
    let grid = AngleGrid::new(60).unwrap();
    let full = radon(&image, grid).unwrap();
    let masked = radon(&mask_ship(&image, ship, radius).unwrap(), grid).unwrap();
    let c = (m as f64 - 1.0) / 2.0;
    let (sx, sy) = (ship.1 - c, c - ship.0);
    let mut changed_inside = 0;
    for ((b, k), &v) in full.values().indexed_iter() {
        let th = grid.angle_deg(k).to_radians();
        let dist = (sx * th.cos() + sy * th.sin() - full.offset(b)).abs();
        let w = masked.values()[(b, k)];
        if dist >= radius + 1.0 {
            assert_eq!(v, w, "bin ({b}, {k}) at distance {dist} changed");
        } else if dist < radius - 1.0 && (v - w).abs() > 1e-9 {
            changed_inside += 1;
        }
    }
    assert!(changed_inside > 0);
}

#[test]
fn restrict_search_examples() {
    let s = Sinogram::zeros(64, AngleGrid::default());
    let a = 10.0;
    let mask = restrict_search(&s, a);
    for b in 0..s.offsets() {
        assert_eq!(mask[(b, 90)], s.offset(b).abs() <= a, "θ = 90, r = {}", s.offset(b));
        assert_eq!(mask[(b, 0)], s.offset(b) == 0.0, "θ = 0, r = {}", s.offset(b));
    }
    let mut r = rng(13);
    for _ in 0..10 {
        let a = rand::Rng::random_range(&mut r, 0.5..40.0);
        let mask = restrict_search(&s, a);
        let mut expect = 0;
        for b in 0..s.offsets() {
            for k in 0..180 {
                let th = (k as f64).to_radians();
                if s.offset(b).abs() <= a * th.sin() + 1e-9 {
                    expect += 1;
                }
            }
        }
        assert_eq!(mask.iter().filter(|&&v| v).count(), expect);
    }
}

#[test]
fn tn_pair_finds_planted_extrema() {
    let s = planted(64, &[(0.0, 30.0, -10.0), (3.0, 32.0, 10.0)]);
    let (t, n) = detect_tn_pair(&s, &all_true(&s), 4.0).unwrap();
    assert_eq!(pos(&t), (0.0, 30.0));
    assert_eq!(pos(&n), (3.0, 32.0));
    assert_eq!((t.peak_value, n.peak_value), (-10.0, 10.0));
    assert_eq!(t.kind, WakeKind::Turbulent);
    assert_eq!(n.kind, WakeKind::NarrowV1);
}

#[test]
fn tn_pair_respects_the_window() {
    let s = planted(64, &[(0.0, 30.0, -10.0), (3.0, 36.0, 10.0), (-2.0, 28.0, 4.0)]);
    let (t, n) = detect_tn_pair(&s, &all_true(&s), 4.0).unwrap();
    assert_eq!(pos(&t), (0.0, 30.0));
    assert_eq!(pos(&n), (-2.0, 28.0));
}

#[test]
fn tn_pair_needs_candidates() {
    let s = Sinogram::zeros(16, AngleGrid::default());
    let none = Array2::from_elem(s.values().dim(), false);
    assert!(detect_tn_pair(&s, &none, 4.0).is_err());
}

#[test]
fn second_narrow_examples() {
    let s = planted(64, &[(0.0, 60.0, -10.0), (2.0, 63.0, 10.0), (-2.0, 57.0, 6.0), (5.0, 62.0, 8.0)]);
    let mask = all_true(&s);
    let (t, n) = detect_tn_pair(&s, &mask, 4.0).unwrap();
    let n2 = detect_second_narrow(&s, &mask, &t, &n, 4.0).unwrap();
    assert_eq!(pos(&n2), (-2.0, 57.0));
    assert_eq!(n2.kind, WakeKind::NarrowV2);

    // nothing planted on the opposite side: the first zero bin wins
    let s = planted(64, &[(0.0, 60.0, -10.0), (2.0, 63.0, 10.0)]);
    let (t, n) = detect_tn_pair(&s, &mask, 4.0).unwrap();
    let n2 = detect_second_narrow(&s, &mask, &t, &n, 4.0).unwrap();
    assert_eq!(n2.peak_value, 0.0);
    assert_eq!(n2.theta_deg, 56.0);
    assert_eq!(n2.r, s.offset(0));
    assert_eq!(n2.status, WakeStatus::Discarded);

    let mut mask = all_true(&s);
    for k in 56..60 {
        mask.column_mut(k).fill(false);
    }
    let n2 = detect_second_narrow(&s, &mask, &t, &n, 4.0).unwrap();
    assert_eq!(n2.status, WakeStatus::NotSearched);
}

#[test]
fn kelvin_examples() {
    let s = planted(64, &[(0.0, 90.0, -10.0), (4.0, 105.0, 7.0), (-3.0, 78.0, 5.0)]);
    let mask = all_true(&s);
    let t = detect_tn_pair(&s, &mask, 4.0).unwrap().0;
    let (k1, k2) = detect_kelvin(&s, &mask, &t, 10.0, 10.0).unwrap();
    assert_eq!(pos(&k1), (4.0, 105.0));
    assert_eq!(pos(&k2), (-3.0, 78.0));

    let s = planted(64, &[(0.0, 90.0, -10.0), (4.0, 115.0, 9.0), (1.0, 108.0, 3.0)]);
    let (k1, _) = detect_kelvin(&s, &mask, &t, 10.0, 10.0).unwrap();
    assert_eq!(pos(&k1), (1.0, 108.0));

    let mut mask = all_true(&s);
    for k in 70..=80 {
        mask.column_mut(k).fill(false);
    }
    let (k1, k2) = detect_kelvin(&s, &mask, &t, 10.0, 10.0).unwrap();
    assert!(k1.is_searched());
    assert_eq!(k2.status, WakeStatus::NotSearched);
}

fn candidate(kind: WakeKind, r: f64, theta: f64) -> WakeCandidate {
    WakeCandidate { status: WakeStatus::Discarded, r, theta_deg: theta, ..WakeCandidate::not_searched(kind) }
}

#[test]
fn halfline_keeps_the_dark_side() {
    let m = 33;
    let image = Image::from_fn(m, |(row, col)| if col == 16 && row > 16 { 50.0 } else { 100.0 }).unwrap();
    let turb = resolve_halfline(&image, &candidate(WakeKind::Turbulent, 0.0, 0.0), (16.0, 16.0), None, 45.0);
    let line = turb.half_line.unwrap();
    assert_eq!(line.start, [16.0, 16.0]);
    assert_eq!(line.end, [32.0, 16.0]);

    let flipped = Image::from_fn(m, |(row, col)| if col == 16 && row < 16 { 50.0 } else { 100.0 }).unwrap();
    let turb = resolve_halfline(&flipped, &candidate(WakeKind::Turbulent, 0.0, 0.0), (16.0, 16.0), None, 45.0);
    assert_eq!(turb.half_line.unwrap().end, [0.0, 16.0]);
}

#[test]
fn halfline_symmetric_tie_goes_to_larger_endpoint() {
    let image = Image::from_fn(9, |_| 5.0).unwrap();
    let turb = resolve_halfline(&image, &candidate(WakeKind::Turbulent, 0.0, 0.0), (4.0, 4.0), None, 45.0);
    assert_eq!(turb.half_line.unwrap().end, [8.0, 4.0]);
}

#[test]
fn halfline_cone_excludes_perpendicular_arms() {
    let image = Image::from_fn(33, |_| 5.0).unwrap();
    let ship = (16.0, 16.0);
    // turbulent wake pointing down the image
    let down = (0.0, -1.0);
    let arm = resolve_halfline(&image, &candidate(WakeKind::NarrowV1, 0.0, 90.0), ship, Some(down), 45.0);
    assert_eq!(arm.status, WakeStatus::Discarded);
    assert!(arm.half_line.is_none());

    let arm = resolve_halfline(&image, &candidate(WakeKind::NarrowV1, 0.0, 3.0), ship, Some(down), 45.0);
    let (x, y) = arm.half_line.unwrap().direction_xy();
    assert!(y < -0.99 && x.abs() < 0.06, "({x}, {y})");
}

#[test]
fn f_index_examples() {
    let flat = Image::from_fn(32, |_| 7.0).unwrap();
    let line = HalfLine { start: [0.0, 16.0], end: [15.0, 16.0] };
    assert!(f_index(&flat, &line).unwrap().abs() < 1e-12);

    // 16 samples at 150 and the rest chosen so the image mean is exactly 100
    let rest = (100.0 * 1024.0 - 16.0 * 150.0) / 1008.0;
    let image = Image::from_fn(32, |(row, col)| if col == 16 && row < 16 { 150.0 } else { rest }).unwrap();
    assert!((f_index(&image, &line).unwrap() - 0.5).abs() < 1e-12);

    let short = HalfLine { start: [3.0, 3.0], end: [3.0, 6.0] };
    assert!(f_index(&flat, &short).is_err());
}

#[test]
fn f_index_of_synthetic_dark_wake() {
    let mut spec = SceneSpec::empty(128, 5);
    spec.clutter = ClutterSpec { noise: 0.0, swell_amplitude: 0.0, ..ClutterSpec::default() };
    spec.wakes.push(WakeSpec { kind: WakeKind::Turbulent, heading_deg: 250.0, contrast: -0.3, width: 3.0 });
    let (image, truth) = generate_scene_with_id(&spec, "dark").unwrap();
    let ship = (truth.ship_center[0], truth.ship_center[1]);
    let t = truth.wake(WakeKind::Turbulent);
    let c = resolve_halfline(&image, &candidate(WakeKind::Turbulent, t.r, t.theta_deg), ship, None, 45.0);
    let f = f_index(&image, &c.half_line.unwrap()).unwrap();
    assert!((f + 0.3).abs() < 0.05, "F = {f}");
}

#[test]
fn confirmation_examples() {
    let mut cands = vec![candidate(WakeKind::Turbulent, 0.0, 0.0), candidate(WakeKind::NarrowV1, 0.0, 2.0), candidate(WakeKind::Kelvin1, 0.0, 15.0), WakeCandidate::not_searched(WakeKind::Kelvin2)];
    cands[0].f_index = Some(-0.2);
    cands[1].f_index = Some(0.05);
    cands[2].f_index = Some(0.12);
    confirm_wakes(&mut cands, 0.1);
    let status: Vec<_> = cands.iter().map(|c| c.status).collect();
    assert_eq!(status, [WakeStatus::Confirmed, WakeStatus::Discarded, WakeStatus::Confirmed, WakeStatus::NotSearched]);
}

fn gmc() -> SolverConfig {
    SolverConfig::new(PriorSpec::gmc(0.3, 0.6).unwrap())
}

fn three_wake_scene() -> (Image, wakescan::synth::GroundTruth) {
    let mut spec = SceneSpec::empty(128, 21);
    spec.ship_contrast = 2.0;
    spec.apex_shift = 1.0;
    spec.wakes = vec![
        WakeSpec { kind: WakeKind::Turbulent, heading_deg: 235.0, contrast: -0.5, width: 3.0 },
        WakeSpec { kind: WakeKind::NarrowV1, heading_deg: 239.0, contrast: 0.5, width: 1.5 },
        WakeSpec { kind: WakeKind::Kelvin1, heading_deg: 250.0, contrast: 0.5, width: 1.5 },
    ];
    generate_scene_with_id(&spec, "three").unwrap()
}

#[test]
fn pipeline_confirms_three_visible_wakes() {
    let (image, truth) = three_wake_scene();
    let ship = (truth.ship_center[0], truth.ship_center[1]);
    let (report, _) = detect_pipeline(&image, ship, &gmc(), &DetectConfig::default(), "three").unwrap();
    let counts = score_report(&report, &truth, &ScoreConfig::default()).unwrap();
    assert_eq!((counts.tp, counts.tn, counts.fp, counts.fn_), (3.0, 2.0, 0.0, 0.0), "{report:#?}");
}

#[test]
fn pipeline_is_invariant_to_intensity_scale() {
    let (image, truth) = three_wake_scene();
    let ship = (truth.ship_center[0], truth.ship_center[1]);
    let config = DetectConfig::default();
    let solver = SolverConfig::new(PriorSpec::l1(0.3).unwrap());
    let (base, _) = detect_pipeline(&image, ship, &solver, &config, "a").unwrap();
    for c in [0.01, 3.7, 250.0] {
        let (scaled, _) = detect_pipeline(&image.scaled(c).unwrap(), ship, &solver, &config, "a").unwrap();
        for (p, q) in base.candidates.iter().zip(&scaled.candidates) {
            assert_eq!((p.r, p.theta_deg, p.status), (q.r, q.theta_deg, q.status), "scale {c}");
        }
    }
}

#[test]
fn pipeline_on_constant_image_discards_everything() {
    let image = Image::from_fn(64, |_| 3.0).unwrap();
    let (report, _) = detect_pipeline(&image, (31.5, 31.5), &gmc(), &DetectConfig::default(), "flat").unwrap();
    let turb = report.candidate(WakeKind::Turbulent);
    assert_eq!(turb.f_index, Some(0.0));
    assert!(report.candidates.iter().all(|c| c.status != WakeStatus::Confirmed));
}

#[test]
fn pipeline_is_deterministic() {
    let (image, truth) = three_wake_scene();
    let ship = (truth.ship_center[0], truth.ship_center[1]);
    let a = detect_pipeline(&image, ship, &gmc(), &DetectConfig::default(), "x").unwrap();
    let b = detect_pipeline(&image, ship, &gmc(), &DetectConfig::default(), "x").unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.estimate, b.1.estimate);
}

/// False-alarm rate on wake-free clutter. The turbulent rule keeps the darker
/// half of the deepest trough and confirms it whenever that half is below the
/// image mean, which on pure clutter happens most of the time, so the arms
/// and the turbulent wake are tracked separately.
#[test]
fn pure_noise_false_alarms() {
    let scenes = noise_scenes(50, &SuiteConfig::default()).unwrap();
    let mut clean = 0;
    let mut arms_clean = 0;
    for (image, truth) in &scenes {
        let ship = (truth.ship_center[0], truth.ship_center[1]);
        let (report, _) = detect_pipeline(image, ship, &gmc(), &DetectConfig::default(), &truth.id).unwrap();
        let confirmed: Vec<_> =
            report.candidates.iter().filter(|c| c.status == WakeStatus::Confirmed).map(|c| c.kind).collect();
        clean += usize::from(confirmed.is_empty());
        arms_clean += usize::from(confirmed.iter().all(|&k| k == WakeKind::Turbulent));
    }
    let (all_rate, arm_rate) = (clean as f64 / 50.0, arms_clean as f64 / 50.0);
    println!("pure noise: all five discarded {all_rate:.2}, all arms discarded {arm_rate:.2}");
    assert!(arm_rate >= 0.9, "arm false-alarm-free rate {arm_rate}");
    assert!(all_rate >= 0.2, "all-discarded rate {all_rate}");
}

fn random_sinogram(m: usize, seed: u64) -> Sinogram {
    let mut r = rng(seed);
    let grid = AngleGrid::default();
    let rows = Sinogram::zeros(m, grid).offsets();
    Sinogram::new(m, grid, random_grid(rows, 180, 1.0, &mut r)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn detection_invariants_hold(seed in 0u64..10_000, a in 2.0f64..12.0, margin in -0.3f64..0.5) {
        let m = 32;
        let sino = random_sinogram(m, seed);
        let mut r = rng(seed ^ 0xabc);
        let image = Image::new(random_grid(m, m, 1.0, &mut r).mapv(|v| v + 3.0)).unwrap();
        let config = DetectConfig { a: Some(a), f_margin: margin, mask_radius: 3.0, ..DetectConfig::default() };
        let ship = image.center();
        let masked = mask_ship(&image, ship, config.mask_radius).unwrap();
        let (cands, _) = detect_in_sinogram(&masked, &sino, ship, &config).unwrap();
        prop_assert_eq!(cands.len(), 5);
        let turb = &cands[0];
        prop_assert_eq!(turb.kind, WakeKind::Turbulent);
        for c in cands.iter().filter(|c| c.is_searched()) {
            prop_assert!(c.r.abs() <= a * c.theta_deg.to_radians().sin() + 1e-9);
            if c.kind.is_kelvin() {
                let d = angular_distance(c.theta_deg, turb.theta_deg);
                prop_assert!((10.0 - 1e-9..=20.0 + 1e-9).contains(&d), "Kelvin at {} deg", d);
            }
            if c.status == WakeStatus::Confirmed {
                let f = c.f_index.unwrap();
                if c.kind == WakeKind::Turbulent {
                    prop_assert!(f < 0.0);
                } else {
                    prop_assert!(f > margin);
                }
            }
        }
        prop_assert!(cands[1].peak_value >= turb.peak_value);
    }
}
