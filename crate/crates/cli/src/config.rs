use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use wakescan::detect::DetectConfig;
use wakescan::eval::ScoreConfig;
use wakescan::prox::{PriorKind, PriorSpec, DEFAULT_INNER_ITERS};
use wakescan::transform::AngleGrid;
use wakescan::SolverConfig;

/// Regularisation constant used when neither a flag nor the config file gives
/// one. The solver input is standardised, so this is `0.1` times its spread.
pub const FALLBACK_LAMBDA: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 0.6;
pub const DEFAULT_P: f64 = 0.5;

/// Settings shared by every subcommand. Each field may come from a flag, from
/// the JSON config file, or from the built-in default, in that order.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Prior: gmc, l1, lp, tv or nuclear [default: gmc]
    #[arg(long, global = true)]
    pub prior: Option<String>,
    /// Regularisation constant [default: per-prior value from the config, else 0.1]
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Per-prior regularisation constants, config file only
    #[arg(skip)]
    #[serde(default)]
    pub lambdas: BTreeMap<String, f64>,
    /// GMC non-convexity γ in [0, 1) [default: 0.6]
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Lp exponent in (0, 1) [default: 0.5]
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Forward-backward step factor μ [default: 0.5]
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    /// TwIST over-relaxation α [default: 1.96]
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Relative-change stopping tolerance [default: 0.001]
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Iteration cap [default: 1000]
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Inner iterations for TV and GST [default: 40]
    #[arg(long, global = true)]
    pub inner_iters: Option<usize>,
    /// Number of projection angles T [default: 180]
    #[arg(long, global = true)]
    pub angles: Option<usize>,
    /// Maximum azimuth shift A in pixels [default: M/4]
    #[arg(long = "azimuth-shift", global = true)]
    pub a: Option<f64>,
    /// Turbulent / narrow-V window in degrees [default: 4]
    #[arg(long, global = true)]
    pub tn_window: Option<f64>,
    /// Start of the Kelvin search, degrees from the turbulent wake [default: 10]
    #[arg(long, global = true)]
    pub kelvin_start: Option<f64>,
    /// Kelvin window width in degrees [default: 10]
    #[arg(long, global = true)]
    pub kelvin_window: Option<f64>,
    /// F-index margin for non-turbulent wakes [default: 0.1]
    #[arg(long, global = true)]
    pub f_margin: Option<f64>,
    /// Ship mask radius in pixels [default: 8]
    #[arg(long, global = true)]
    pub mask_radius: Option<f64>,
    /// Half-line cone around the turbulent direction, degrees [default: 45]
    #[arg(long, global = true)]
    pub halfline_cone: Option<f64>,
    /// Angle tolerance for scoring, degrees [default: 3]
    #[arg(long, global = true)]
    pub theta_tol: Option<f64>,
    /// Offset tolerance for scoring, pixels [default: 5]
    #[arg(long, global = true)]
    pub r_tol: Option<f64>,
    /// Random seed [default: $WAKESCAN_SEED, else 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch work [default: 1]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Input path, config file only (flags take positional inputs)
    #[arg(skip)]
    pub input: Option<String>,
    /// Output path, config file only (flags use -o)
    #[arg(skip)]
    pub output: Option<String>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr; $($f:ident),*) => {
        RunConfig {
            lambdas: {
                let mut m = $lo.lambdas.clone();
                m.extend($hi.lambdas.clone());
                m
            },
            $($f: $hi.$f.clone().or($lo.$f.clone()),)*
        }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// `self` wins over `lower` field by field.
    pub fn over(&self, lower: &RunConfig) -> RunConfig {
        overlay!(self, lower; prior, lambda, gamma, p, mu, alpha, tol, max_iter, inner_iters, angles, a,
            tn_window, kelvin_start, kelvin_window, f_margin, mask_radius, halfline_cone, theta_tol, r_tol,
            seed, jobs, input, output)
    }

    pub fn prior_name(&self) -> String {
        self.prior.clone().unwrap_or_else(|| "gmc".to_string())
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("WAKESCAN_SEED") {
            Ok(v) => v.trim().parse().with_context(|| format!("WAKESCAN_SEED is not an integer: {v:?}")),
            Err(_) => Ok(0),
        }
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1).max(1)
    }

    /// Prior for `name`; an explicit `lambda` beats the per-prior table.
    pub fn prior_spec(&self, name: &str) -> anyhow::Result<PriorSpec> {
        let mut key = name.to_ascii_lowercase();
        if key == "nuc" {
            key = "nuclear".to_string();
        }
        let lambda = self.lambda.or_else(|| self.lambdas.get(&key).copied()).unwrap_or(FALLBACK_LAMBDA);
        let kind = match key.as_str() {
            "gmc" => PriorKind::Gmc { gamma: self.gamma.unwrap_or(DEFAULT_GAMMA) },
            "l1" => PriorKind::L1,
            "lp" => PriorKind::Lp { p: self.p.unwrap_or(DEFAULT_P) },
            "tv" => PriorKind::Tv,
            "nuclear" => PriorKind::Nuclear,
            other => bail!("unknown prior {other:?} (expected gmc, l1, lp, tv or nuclear)"),
        };
        let mut spec = PriorSpec::new(kind, lambda)?;
        spec.inner_iters = self.inner_iters.unwrap_or(DEFAULT_INNER_ITERS);
        Ok(spec)
    }

    pub fn solver_for(&self, name: &str) -> anyhow::Result<SolverConfig> {
        let mut cfg = SolverConfig::new(self.prior_spec(name)?);
        if let Some(v) = self.mu {
            cfg.mu = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(t) = self.angles {
            cfg.grid = AngleGrid::new(t)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn solver(&self) -> anyhow::Result<SolverConfig> {
        self.solver_for(&self.prior_name())
    }

    pub fn detect(&self) -> DetectConfig {
        let d = DetectConfig::default();
        DetectConfig {
            a: self.a.or(d.a),
            tn_window: self.tn_window.unwrap_or(d.tn_window),
            kelvin_start: self.kelvin_start.unwrap_or(d.kelvin_start),
            kelvin_window: self.kelvin_window.unwrap_or(d.kelvin_window),
            f_margin: self.f_margin.unwrap_or(d.f_margin),
            mask_radius: self.mask_radius.unwrap_or(d.mask_radius),
            halfline_cone: self.halfline_cone.unwrap_or(d.halfline_cone),
        }
    }

    pub fn score(&self) -> ScoreConfig {
        let d = ScoreConfig::default();
        ScoreConfig { theta_tol: self.theta_tol.unwrap_or(d.theta_tol), r_tol: self.r_tol.unwrap_or(d.r_tol) }
    }

    /// Checks everything that can be checked without an image.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.solver()?;
        self.seed()?;
        // A is checked against the image size once an image is loaded
        if let Some(a) = self.a {
            if !(a > 0.0 && a.is_finite()) {
                bail!("azimuth shift must be positive, got {a}");
            }
        }
        DetectConfig { a: None, ..self.detect() }.validate(128)?;
        let s = self.score();
        if !(s.theta_tol > 0.0 && s.r_tol > 0.0) {
            bail!("scoring tolerances must be positive");
        }
        Ok(())
    }
}
