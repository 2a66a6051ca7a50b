mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use wakescan::detect::{detect_pipeline, mask_ship, write_overlay, WakeReport};
use wakescan::eval::{
    aggregate, compute_metrics, default_margins, dominance_fraction, roc_sweep, run_scenes, score_report,
    write_counts_csv, write_roc_csv, write_table_csv, DetectionCounts, Metrics, RocPoint, SceneRun,
};
use wakescan::synth::{
    paper_case_suite_with, read_truth_sidecar, random_scene_spec, generate_scene_with_id, noise_scenes, write_manifest,
    GroundTruth, SuiteConfig,
};
use wakescan::{solver::solve, Image};

use config::RunConfig;
use output::{file_stem, list_files, load_scenes, roc_svg, write_atomic, write_text};

#[derive(Parser)]
#[command(name = "wakescan", version, about = "Ship wake detection with a sparse inverse Radon transform")]
struct Cli {
    /// JSON run configuration; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes with truth sidecars and a manifest
    Simulate(SimulateArgs),
    /// Invert an image into a regularised sinogram estimate
    Invert(InvertArgs),
    /// Run the detection pipeline on one image
    Detect(DetectArgs),
    /// Score reports against truths, or replay published counts
    Eval(EvalArgs),
    /// Sweep the F-index margin and write ROC curves per prior
    Roc(RocArgs),
    /// Run the synthetic suite end to end and tabulate the scores
    Batch(BatchArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Emit the 28 reference visibility patterns
    #[arg(long, conflicts_with = "no_wakes")]
    paper_suite: bool,
    /// Emit wake-free clutter scenes
    #[arg(long)]
    no_wakes: bool,
    /// Number of scenes when not using the reference suite [default: 1]
    #[arg(short = 'n', long)]
    count: Option<usize>,
    /// Image side M [default: 128]
    #[arg(long)]
    size: Option<usize>,
    /// Speckle strength [default: 0.1]
    #[arg(long)]
    noise: Option<f64>,
    /// Smallest absolute wake contrast [default: 0.3]
    #[arg(long)]
    min_contrast: Option<f64>,
    /// Output directory [default: .]
    #[arg(short = 'o', long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ShipArgs {
    /// Input image (PGM)
    input: Option<PathBuf>,
    /// Ship centre as ROW,COL; read from the truth sidecar when omitted
    #[arg(long, value_delimiter = ',', num_args = 2)]
    ship: Option<Vec<f64>>,
}

#[derive(clap::Args)]
struct InvertArgs {
    #[command(flatten)]
    ship: ShipArgs,
    /// Output sinogram [default: <input stem>.sino]
    #[arg(short = 'o', long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DetectArgs {
    #[command(flatten)]
    ship: ShipArgs,
    /// Output directory for report, overlay and trace [default: .]
    #[arg(short = 'o', long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Directory of `*.report.json` files
    #[arg(long, required_unless_present = "replay_counts")]
    reports: Option<PathBuf>,
    /// Directory of truth JSON files [default: the reports directory]
    #[arg(long)]
    truths: Option<PathBuf>,
    /// Compute metrics from TP TN FP FN directly
    #[arg(long, num_args = 4, value_names = ["TP", "TN", "FP", "FN"], allow_negative_numbers = true)]
    replay_counts: Option<Vec<f64>>,
    /// Output directory [default: .]
    #[arg(short = 'o', long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SuiteArgs {
    /// Priors to run, comma separated [default: the configured prior]
    #[arg(long, value_delimiter = ',')]
    priors: Option<Vec<String>>,
    /// Directory of scenes with truth sidecars [default: generate the reference suite]
    #[arg(long)]
    scenes: Option<PathBuf>,
    /// Number of consecutive seeds for the generated suite [default: 1]
    #[arg(long)]
    seeds: Option<u64>,
    /// Output directory [default: .]
    #[arg(short = 'o', long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RocArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    /// F-index margins, comma separated; inf and -inf allowed [default: -inf, -0.5 to 1.0 by 0.1, inf]
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    margins: Option<Vec<f64>>,
    /// Skip the SVG plot
    #[arg(long)]
    no_svg: bool,
}

#[derive(clap::Args)]
struct BatchArgs {
    #[command(flatten)]
    suite: SuiteArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for numerical failures anywhere in the chain, 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e.chain().any(|c| c.downcast_ref::<wakescan::Error>().is_some_and(|w| w.is_numerical()));
    if numerical {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cli.run.over(&file);
    cfg.validate()?;
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Invert(a) => invert(&cfg, a),
        Command::Detect(a) => detect(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Roc(a) => roc(&cfg, a),
        Command::Batch(a) => batch(&cfg, a),
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."))
}

fn simulate(cfg: &RunConfig, a: SimulateArgs) -> anyhow::Result<()> {
    let suite = SuiteConfig {
        size: a.size.unwrap_or(128),
        seed: cfg.seed()?,
        noise: a.noise.unwrap_or(0.1),
        min_contrast: a.min_contrast.unwrap_or(0.3),
    };
    let scenes: Vec<(Image, GroundTruth)> = if a.paper_suite {
        paper_case_suite_with(&suite)?.into_iter().map(|(_, i, t)| (i, t)).collect()
    } else if a.no_wakes {
        noise_scenes(a.count.unwrap_or(1), &suite)?
    } else {
        use rand::SeedableRng;
        (0..a.count.unwrap_or(1))
            .map(|i| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(suite.seed);
                rng.set_stream(5000 + i as u64);
                let spec = random_scene_spec(&wakescan::detect::WakeKind::ALL, &suite, &mut rng);
                generate_scene_with_id(&spec, &format!("scene-{i:03}"))
            })
            .collect::<wakescan::Result<_>>()?
    };
    let dir = out_dir(a.out, cfg);
    for (image, truth) in &scenes {
        let stem = file_stem(&truth.id);
        write_atomic(&dir.join(format!("{stem}.pgm")), |w| image.write_pgm16(w))?;
        write_text(&dir.join(format!("{stem}.json")), &(serde_json::to_string_pretty(truth)? + "\n"))?;
    }
    let truths: Vec<_> = scenes.iter().map(|(_, t)| t.clone()).collect();
    write_atomic(&dir.join("manifest.csv"), |w| write_manifest(&truths, w))?;
    println!("wrote {} scenes to {}", scenes.len(), dir.display());
    Ok(())
}

fn input_path(a: &ShipArgs, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    match (&a.input, &cfg.input) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(p)) => Ok(PathBuf::from(p)),
        _ => bail!("no input image given"),
    }
}

/// Loads the image, its ship centre and the scene id.
fn load_input(a: &ShipArgs, cfg: &RunConfig) -> anyhow::Result<(PathBuf, Image, (f64, f64), String)> {
    let path = input_path(a, cfg)?;
    let image = Image::read_pgm(&path).with_context(|| format!("reading {}", path.display()))?;
    let truth = read_truth_sidecar(&path)?;
    let ship = match (&a.ship, &truth) {
        (Some(v), _) => (v[0], v[1]),
        (None, Some(t)) => (t.ship_center[0], t.ship_center[1]),
        (None, None) => bail!("no ship centre: pass --ship ROW,COL or provide {}", path.with_extension("json").display()),
    };
    let id = match truth {
        Some(t) => t.id,
        None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    Ok((path, image, ship, id))
}

fn invert(cfg: &RunConfig, a: InvertArgs) -> anyhow::Result<()> {
    let (path, image, ship, _) = load_input(&a.ship, cfg)?;
    let detect = cfg.detect();
    detect.validate(image.size())?;
    let y = mask_ship(&image, ship, detect.mask_radius)?.standardized()?;
    let result = solve(&y, &cfg.solver()?)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from(path.file_stem().unwrap_or_default()).with_extension("sino"));
    write_atomic(&out, |w| result.estimate.write_to(w))?;
    println!("{} iterations, converged {}, wrote {}", result.iterations, result.converged, out.display());
    Ok(())
}

fn detect(cfg: &RunConfig, a: DetectArgs) -> anyhow::Result<()> {
    let (_, image, ship, id) = load_input(&a.ship, cfg)?;
    let (report, result) = detect_pipeline(&image, ship, &cfg.solver()?, &cfg.detect(), &id)?;
    let dir = out_dir(a.out, cfg);
    let stem = file_stem(&id);
    write_text(&dir.join(format!("{stem}.report.json")), &(report.to_json()? + "\n"))?;
    write_atomic(&dir.join(format!("{stem}.overlay.pgm")), |w| write_overlay(&image, &report, w))?;
    write_atomic(&dir.join(format!("{stem}.trace.csv")), |w| result.write_trace_csv(w))?;
    for c in &report.candidates {
        println!(
            "{:<10} {:?} theta {:>6.1} r {:>6.1} F {}",
            c.kind.name(),
            c.status,
            c.theta_deg,
            c.r,
            c.f_index.map_or("-".to_string(), |f| format!("{f:.3}"))
        );
    }
    Ok(())
}

fn print_metrics(m: &Metrics) {
    println!(
        "accuracy {:.2}%  sensitivity {:.4}  specificity {:.4}  F1 {:.2}  LR+ {:.2}  J {:.2}",
        m.accuracy_pct, m.sensitivity, m.specificity, m.f1, m.lr_plus, m.youden_j
    );
}

fn write_scores(dir: &Path, rows: &[(String, DetectionCounts)], total: &DetectionCounts) -> anyhow::Result<Metrics> {
    let metrics = compute_metrics(total)?;
    write_atomic(&dir.join("counts.csv"), |w| write_counts_csv(rows, w))?;
    write_text(&dir.join("metrics.json"), &(serde_json::to_string_pretty(&metrics)? + "\n"))?;
    Ok(metrics)
}

fn eval(cfg: &RunConfig, a: EvalArgs) -> anyhow::Result<()> {
    if let Some(v) = a.replay_counts {
        let counts = DetectionCounts::new(v[0], v[1], v[2], v[3])?;
        let m = compute_metrics(&counts)?;
        print_metrics(&m);
        if let Some(dir) = a.out {
            write_text(&dir.join("metrics.json"), &(serde_json::to_string_pretty(&m)? + "\n"))?;
            write_atomic(&dir.join("table.csv"), |w| write_table_csv(&[("replay".to_string(), counts)], w))?;
        }
        return Ok(());
    }
    let report_dir = a.reports.context("--reports is required")?;
    let truth_dir = a.truths.unwrap_or_else(|| report_dir.clone());
    let mut reports = Vec::new();
    for p in list_files(&report_dir, ".report.json")? {
        let text = std::fs::read_to_string(&p)?;
        reports.push(WakeReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))?);
    }
    if reports.is_empty() {
        bail!("no reports in {}", report_dir.display());
    }
    let mut truths = std::collections::BTreeMap::new();
    for p in list_files(&truth_dir, ".json")? {
        let name = p.to_string_lossy();
        if name.ends_with(".report.json") || name.ends_with("metrics.json") {
            continue;
        }
        if let Ok(t) = GroundTruth::from_json(&std::fs::read_to_string(&p)?) {
            truths.insert(t.id.clone(), t);
        }
    }
    let unmatched: Vec<_> = reports.iter().filter(|r| !truths.contains_key(&r.source)).map(|r| r.source.clone()).collect();
    if !unmatched.is_empty() {
        bail!("no truth for scene ids: {}", unmatched.join(", "));
    }
    let tol = cfg.score();
    let mut rows = Vec::new();
    for r in &reports {
        rows.push((r.source.clone(), score_report(r, &truths[&r.source], &tol)?));
    }
    let total: DetectionCounts = rows.iter().map(|(_, c)| *c).sum();
    let label = reports[0].solver.map_or("reports".to_string(), |s| s.prior.kind.name().to_string());
    let dir = out_dir(a.out, cfg);
    let m = write_scores(&dir, &rows, &total)?;
    write_atomic(&dir.join("table.csv"), |w| write_table_csv(&[(label.clone(), total)], w))?;
    print_metrics(&m);
    Ok(())
}

/// Scenes for suite commands: a directory if given, else the generated
/// reference suite for each seed.
fn suite_scenes(cfg: &RunConfig, a: &SuiteArgs) -> anyhow::Result<Vec<(String, Vec<(Image, GroundTruth)>)>> {
    if let Some(dir) = &a.scenes {
        // named by the last path component so per-set outputs stay under -o
        let name = dir.file_name().map_or("scenes".to_string(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, load_scenes(dir)?)]);
    }
    let base = cfg.seed()?;
    (0..a.seeds.unwrap_or(1).max(1))
        .map(|k| {
            let seed = base + k;
            let suite = SuiteConfig { seed, ..SuiteConfig::default() };
            let scenes = paper_case_suite_with(&suite)?.into_iter().map(|(_, i, t)| (i, t)).collect();
            Ok((format!("seed{seed}"), scenes))
        })
        .collect()
}

fn priors(cfg: &RunConfig, a: &SuiteArgs) -> Vec<String> {
    a.priors.clone().unwrap_or_else(|| vec![cfg.prior_name()])
}

fn run_suite(cfg: &RunConfig, prior: &str, sets: &[(String, Vec<(Image, GroundTruth)>)]) -> anyhow::Result<Vec<(String, Vec<SceneRun>)>> {
    let solver = cfg.solver_for(prior)?;
    let detect = cfg.detect();
    sets.iter()
        .map(|(name, scenes)| {
            let runs = run_scenes(scenes, &solver, &detect, cfg.jobs())
                .with_context(|| format!("prior {prior}, scene set {name}"))?;
            Ok((name.clone(), runs))
        })
        .collect()
}

fn roc(cfg: &RunConfig, a: RocArgs) -> anyhow::Result<()> {
    let sets = suite_scenes(cfg, &a.suite)?;
    let margins = a.margins.clone().unwrap_or_else(default_margins);
    let tol = cfg.score();
    let dir = out_dir(a.suite.out.clone(), cfg);
    let mut curves: Vec<(String, Vec<RocPoint>)> = Vec::new();
    for prior in priors(cfg, &a.suite) {
        let runs: Vec<SceneRun> = run_suite(cfg, &prior, &sets)?.into_iter().flat_map(|(_, r)| r).collect();
        let points = roc_sweep(&runs, &margins, &tol)?;
        write_atomic(&dir.join(format!("roc_{}.csv", file_stem(&prior))), |w| write_roc_csv(&points, w))?;
        println!("{prior}: {} points", points.len());
        curves.push((prior, points));
    }
    let find = |n: &str| curves.iter().find(|(p, _)| p.eq_ignore_ascii_case(n)).map(|(_, c)| c);
    if let (Some(g), Some(l)) = (find("gmc"), find("l1")) {
        if let Some(f) = dominance_fraction(g, l) {
            println!("gmc weakly dominates l1 at {:.1}% of shared fpr points", 100.0 * f);
        }
    }
    if !a.no_svg {
        write_text(&dir.join("roc.svg"), &roc_svg(&curves))?;
    }
    Ok(())
}

fn batch(cfg: &RunConfig, a: BatchArgs) -> anyhow::Result<()> {
    let sets = suite_scenes(cfg, &a.suite)?;
    let tol = cfg.score();
    let dir = out_dir(a.suite.out.clone(), cfg);
    let mut table = Vec::new();
    for prior in priors(cfg, &a.suite) {
        let prior_dir = dir.join(file_stem(&prior));
        let mut rows = Vec::new();
        let mut total = DetectionCounts::default();
        for (set, runs) in run_suite(cfg, &prior, &sets)? {
            for run in &runs {
                let stem = file_stem(&run.truth.id);
                write_text(&prior_dir.join(&set).join(format!("{stem}.report.json")), &(run.report.to_json()? + "\n"))?;
                rows.push((format!("{set}/{}", run.truth.id), score_report(&run.report, &run.truth, &tol)?));
            }
            total = total + aggregate(&runs, &tol)?;
        }
        let m = write_scores(&prior_dir, &rows, &total)?;
        print!("{prior:<8} ");
        print_metrics(&m);
        table.push((prior, total));
    }
    write_atomic(&dir.join("table.csv"), |w| write_table_csv(&table, w))?;
    Ok(())
}
