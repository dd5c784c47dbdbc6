use std::fs;
use std::path::Path;
use std::time::Instant;

use fgd_core::experiment::output;
use fgd_core::experiment::verify::{self, Suite};
use fgd_core::experiment::{self, Derived, ExperimentConfig, ExperimentError, ExperimentSummary, RunSummary};
use fgd_core::SigmaKind;
use serde::Serialize;

use crate::svg;
use crate::Overrides;

pub const DEFAULT_SEED: u64 = 20240101;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

fn exit_code(e: &ExperimentError) -> u8 {
    match e {
        ExperimentError::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

fn fail(e: ExperimentError) -> u8 {
    log::error!("{e}");
    exit_code(&e)
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<(), ExperimentError> {
    if let Some(seed) = o.seed {
        cfg.base_seed = seed;
    }
    if let Some(d) = o.d {
        if cfg.spec.kind() != SigmaKind::Identity {
            return Err(ExperimentError::Config(
                "--d applies only to identity covariance".into(),
            ));
        }
        experiment::with_identity_dimension(cfg, d)?;
    }
    if let Some(n) = o.steps {
        cfg.n_steps = n;
    }
    if let Some(r) = o.runs {
        for m in &mut cfg.methods {
            m.runs = r;
        }
    }
    if let Some(a) = o.a {
        cfg.a_param = a;
    }
    if o.shared_data {
        cfg.shared_data = true;
    }
    if let Some(c) = o.checkpoints {
        cfg.checkpoint_count = c;
    }
    if let Some(s) = o.step_scale {
        cfg.step_scale = s;
    }
    Ok(())
}

fn create_dir(out: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(out).map_err(|source| ExperimentError::Io {
        path: out.display().to_string(),
        source,
    })
}

fn log_resolved(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    let d = Derived::of(cfg)?;
    log::info!(
        "d = {}, a = {:.6}, c_d = {:.6}, alpha_1 = {:.6e}, kappa = {:.4}, k_star = {}",
        d.d,
        d.a,
        d.c_d,
        d.alpha_1,
        d.kappa,
        d.k_star.map_or("n/a".to_string(), |k| format!("{k:.1}"))
    );
    Ok(())
}

fn print_summaries(summaries: &[RunSummary]) {
    for s in summaries {
        let ratio = s.ratio_to_reference.map_or("-".to_string(), |r| format!("{r:.3}"));
        let slope = s.slope.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<17} runs {:>3}  final mse {:.4e}  k*mse/ref {}  slope {}",
            s.method.as_str(),
            s.runs,
            s.final_mse_geo_mean,
            ratio,
            slope
        );
    }
}

fn run_and_write(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary, ExperimentError> {
    log_resolved(cfg)?;
    create_dir(out)?;
    let started = Instant::now();
    let trajectories = experiment::run_experiment(cfg)?;
    log::info!(
        "{} trajectories in {:.1} s",
        trajectories.len(),
        started.elapsed().as_secs_f64()
    );
    output::write_trajectories_csv(&out.join("trajectories.csv"), &trajectories)?;
    let summary = ExperimentSummary::new(cfg, &trajectories)?;
    output::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn simulate(config: &Path, out: &Path, overrides: &Overrides) -> u8 {
    let result = load_config(config, overrides).and_then(|cfg| run_and_write(&cfg, out));
    match result {
        Ok(summary) => {
            print_summaries(&summary.summaries);
            EXIT_OK
        }
        Err(e) => fail(e),
    }
}

#[derive(Serialize)]
struct TheorySummary {
    config: ExperimentConfig,
    derived: Derived,
    curves: Vec<&'static str>,
    /// Largest exact/bound ratio over the checkpoints with `k ≥ 1`.
    max_exact_over_bound: Option<f64>,
    final_exact: f64,
}

pub fn theory(config: &Path, out: &Path, overrides: &Overrides) -> u8 {
    let run = || -> Result<TheorySummary, ExperimentError> {
        let cfg = load_config(config, overrides)?;
        log_resolved(&cfg)?;
        create_dir(out)?;
        let curves = experiment::theory_curves(&cfg)?;
        output::write_curves_csv(&out.join("theory.csv"), &curves)?;
        let exact = &curves[0].points;
        let max_ratio = curves.get(1).map(|b| {
            exact
                .iter()
                .zip(&b.points)
                .filter(|(e, _)| e.k > 0)
                .map(|(e, b)| e.mse / b.mse)
                .fold(f64::NEG_INFINITY, f64::max)
        });
        let summary = TheorySummary {
            derived: Derived::of(&cfg)?,
            curves: curves.iter().map(|c| c.name).collect(),
            max_exact_over_bound: max_ratio,
            final_exact: exact.last().map_or(f64::NAN, |r| r.mse),
            config: cfg,
        };
        output::write_json(&out.join("summary.json"), &summary)?;
        Ok(summary)
    };
    match run() {
        Ok(s) => {
            println!("final exact risk {:.6e}", s.final_exact);
            if let Some(r) = s.max_exact_over_bound {
                println!("max exact/bound {r:.6}");
            }
            EXIT_OK
        }
        Err(e) => fail(e),
    }
}

pub fn verify(suites: &[Suite], seed: u64, ablate: bool) -> u8 {
    if ablate {
        log::warn!("running with tampered constants; every suite is expected to fail");
    }
    let mut all_passed = true;
    for &suite in suites {
        let started = Instant::now();
        match verify::run_suite(suite, seed, ablate) {
            Ok(report) => {
                print!("{report}");
                println!("  ({:.1} s)", started.elapsed().as_secs_f64());
                all_passed &= report.passed();
            }
            Err(e) => return fail(e),
        }
    }
    if all_passed {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    }
}

pub fn reproduce_fig2(out: &Path, d: usize, seed: u64, steps: Option<u64>) -> u8 {
    let run = || -> Result<ExperimentSummary, ExperimentError> {
        let mut cfg = experiment::figure2_config(d, seed)?;
        if let Some(n) = steps {
            cfg.n_steps = n;
            cfg.validate()?;
        }
        let summary = run_and_write(&cfg, out)?;
        let rows = output::read_csv(&out.join("trajectories.csv"))?;
        let fig = svg::figure_from_rows(&rows, Some(d), &format!("forward gradient vs SGD, d = {d}"));
        let path = out.join("figure2.svg");
        fs::write(&path, svg::render(&fig)).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(summary)
    };
    match run() {
        Ok(summary) => {
            print_summaries(&summary.summaries);
            EXIT_OK
        }
        Err(e) => fail(e),
    }
}

pub fn plot(input: &Path, out: &Path, d: Option<usize>) -> u8 {
    let run = || -> Result<(), ExperimentError> {
        let rows = output::read_csv(input)?;
        let fig = svg::figure_from_rows(&rows, d, "squared error");
        fs::write(out, svg::render(&fig)).map_err(|source| ExperimentError::Io {
            path: out.display().to_string(),
            source,
        })
    };
    match run() {
        Ok(()) => EXIT_OK,
        Err(e) => fail(e),
    }
}
