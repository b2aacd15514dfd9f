//! Verification suites over random quadratic task sequences.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::digest_of;
use super::{prepare_out_dir, resolve_out_dir, short, write_file, write_json, CliError, CliResult};
use crate::error::{Error, Result};
use crate::quadlab::{
    diagonalized_comparison, forgetting_and_bound, gap_stats, proposition1_gap, random_instance,
    random_psd, GapStats, GapTrial, GeneratorConfig,
};
use crate::trainers::derive_seed;

/// Largest accepted two-task gap between the prediction and the oracle.
pub const EXACTNESS_TOL: f64 = 1e-10;
/// Relative slack for the spectral forgetting bound.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadSuite {
    pub seed: u64,
    pub min_dim: usize,
    pub max_dim: usize,
    pub ridge: f64,
    /// Random two-task instances checked for exactness.
    pub exactness_trials: usize,
    /// Later steps whose gap is measured but not asserted.
    pub gap_steps: Vec<usize>,
    pub gap_trials: usize,
    pub diagonal_trials: usize,
    pub diagonal_correlation: f64,
    pub forgetting_trials: usize,
    /// Break positive semi-definiteness of every generated curvature.
    pub corrupt: bool,
}

impl Default for QuadSuite {
    fn default() -> Self {
        Self {
            seed: 0,
            min_dim: 1,
            max_dim: 20,
            ridge: 1e-6,
            exactness_trials: 100,
            gap_steps: vec![3, 4],
            gap_trials: 50,
            diagonal_trials: 20,
            diagonal_correlation: 0.9,
            forgetting_trials: 50,
            corrupt: false,
        }
    }
}

impl QuadSuite {
    fn generator(&self, correlation: Option<f64>) -> GeneratorConfig {
        GeneratorConfig {
            min_dim: self.min_dim,
            max_dim: self.max_dim,
            ridge: self.ridge,
            correlation,
            corrupt: self.corrupt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStudy {
    pub t: usize,
    pub full: GapStats,
    pub diag: GapStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalSummary {
    pub trials: usize,
    pub correlation: f64,
    pub full: GapStats,
    pub diag: GapStats,
    /// Trials where the diagonal prediction lands further from the oracle.
    pub diag_exceeds_full: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgettingSummary {
    pub trials: usize,
    /// Largest `forgetting / bound` over random displacements.
    pub max_ratio: f64,
    /// Largest relative `|forgetting - bound|` along the top eigenvector.
    pub max_top_direction_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadcheckReport {
    pub config_digest: String,
    pub suite: QuadSuite,
    pub exactness: Option<GapStats>,
    pub gap_study: Vec<GapStudy>,
    pub diagonal: Option<DiagonalSummary>,
    pub forgetting: Option<ForgettingSummary>,
    pub trials_csv: String,
    pub assertions: Vec<AssertionOutcome>,
}

impl QuadcheckReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

#[derive(Clone, Debug)]
pub struct QuadcheckOptions {
    pub suite: Option<PathBuf>,
    pub corrupt: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub output_root: PathBuf,
    pub force: bool,
}

fn load_suite(path: Option<&Path>) -> CliResult<QuadSuite> {
    match path {
        None => Ok(QuadSuite::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn stats(values: impl Iterator<Item = f64>) -> Result<GapStats> {
    let v: Vec<f64> = values.collect();
    gap_stats(&v).ok_or_else(|| Error::InvalidConfig("suite needs at least one trial".into()))
}

fn forgetting_suite(suite: &QuadSuite) -> Result<ForgettingSummary> {
    let mut max_ratio = 0.0f64;
    let mut max_err = 0.0f64;
    for trial in 0..suite.forgetting_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(suite.seed, &[5, trial as u64]));
        let n = rng.random_range(suite.min_dim..=suite.max_dim);
        let mut h = random_psd(&mut rng, n, suite.ridge);
        if suite.corrupt {
            let tr = h.trace();
            h[(0, 0)] -= tr + 1.0;
        }
        let theta1 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = forgetting_and_bound(&h, &theta, &theta1, 0.0)?;
        if r.bound.bound_value > 0.0 {
            max_ratio = max_ratio.max(r.forgetting / r.bound.bound_value);
        }
        let scale = rng.random_range(0.5..2.0);
        let top = &theta1 + DVector::from_vec(r.bound.attained_direction.clone()) * scale;
        let e = forgetting_and_bound(&h, &top, &theta1, 0.0)?;
        max_err =
            max_err.max((e.forgetting - e.bound.bound_value).abs() / e.bound.bound_value.max(1.0));
    }
    Ok(ForgettingSummary {
        trials: suite.forgetting_trials,
        max_ratio,
        max_top_direction_error: max_err,
    })
}

fn trials_csv(trials: &[GapTrial], digest: &str) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["config_digest", "trial", "t", "dim", "gap_full", "gap_diag"])
        .map_err(csv_err)?;
    for t in trials {
        w.write_record([
            digest.to_string(),
            t.trial.to_string(),
            t.t.to_string(),
            t.dim.to_string(),
            format!("{:?}", t.gap_full),
            format!("{:?}", t.gap_diag),
        ])
        .map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)
        .map_err(|e| CliError::Io(e.to_string()))
}

fn precondition(name: &str, e: &Error) -> AssertionOutcome {
    AssertionOutcome {
        name: name.into(),
        passed: false,
        detail: format!("precondition failed: {e}"),
    }
}

/// Runs every suite and writes `trials.csv` and `report.json`. A violated
/// property or a failed precondition turns into an assertion error after
/// the report is written.
pub fn cmd_quadcheck(opts: &QuadcheckOptions) -> CliResult<(PathBuf, QuadcheckReport)> {
    let mut suite = load_suite(opts.suite.as_deref())?;
    suite.corrupt |= opts.corrupt;
    if let Some(s) = opts.seed {
        suite.seed = s;
    }
    if suite.min_dim == 0 || suite.min_dim > suite.max_dim {
        return Err(CliError::Usage("need 1 <= min_dim <= max_dim".into()));
    }
    let digest = digest_of(&suite)?;
    let out = resolve_out_dir(
        opts.out.as_deref(),
        None,
        &opts.output_root,
        &format!("quadcheck-{}", short(&digest)),
    );
    prepare_out_dir(&out, opts.force)?;

    let mut assertions = Vec::new();
    let mut all_trials = Vec::new();

    let plain = suite.generator(None);
    let exactness = match proposition1_gap(&plain, 2, suite.exactness_trials, suite.seed) {
        Ok(trials) => {
            let s = stats(trials.iter().map(|t| t.gap_full))?;
            assertions.push(AssertionOutcome {
                name: "two_task_exactness".into(),
                passed: s.max <= EXACTNESS_TOL,
                detail: format!(
                    "max gap {:e} over {} trials (tolerance {EXACTNESS_TOL:e})",
                    s.max, s.trials
                ),
            });
            all_trials.extend(trials);
            Some(s)
        }
        Err(e) => {
            assertions.push(precondition("two_task_exactness", &e));
            None
        }
    };

    let mut gap_study = Vec::new();
    for &t in &suite.gap_steps {
        match proposition1_gap(&plain, t, suite.gap_trials, suite.seed) {
            Ok(trials) => {
                gap_study.push(GapStudy {
                    t,
                    full: stats(trials.iter().map(|x| x.gap_full))?,
                    diag: stats(trials.iter().map(|x| x.gap_diag))?,
                });
                all_trials.extend(trials);
            }
            Err(e) => assertions.push(precondition(&format!("gap_study_t{t}"), &e)),
        }
    }

    let correlated = suite.generator(Some(suite.diagonal_correlation));
    let diagonal = (0..suite.diagonal_trials)
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(suite.seed, &[6, trial as u64]));
            let dim = rng.random_range(suite.min_dim.max(2)..=suite.max_dim.max(2));
            let tasks = random_instance(&mut rng, dim, 2, &correlated)?;
            diagonalized_comparison(&tasks, 2)
        })
        .collect::<Result<Vec<_>>>();
    let diagonal = match diagonal {
        Ok(rows) if !rows.is_empty() => Some(DiagonalSummary {
            trials: rows.len(),
            correlation: suite.diagonal_correlation,
            full: stats(rows.iter().map(|r| r.gap_full))?,
            diag: stats(rows.iter().map(|r| r.gap_diag))?,
            diag_exceeds_full: rows.iter().filter(|r| r.gap_diag > r.gap_full).count(),
        }),
        Ok(_) => None,
        Err(e) => {
            assertions.push(precondition("diagonal_comparison", &e));
            None
        }
    };

    let forgetting = match forgetting_suite(&suite) {
        Ok(f) => {
            assertions.push(AssertionOutcome {
                name: "forgetting_bound".into(),
                passed: f.max_ratio <= 1.0 + BOUND_TOL,
                detail: format!(
                    "max forgetting/bound ratio {:.12} over {} trials",
                    f.max_ratio, f.trials
                ),
            });
            assertions.push(AssertionOutcome {
                name: "forgetting_bound_attained".into(),
                passed: f.max_top_direction_error <= BOUND_TOL,
                detail: format!(
                    "max relative error along the top eigenvector {:e}",
                    f.max_top_direction_error
                ),
            });
            Some(f)
        }
        Err(e) => {
            assertions.push(precondition("forgetting_bound", &e));
            None
        }
    };

    let trials_path = out.join("trials.csv");
    write_file(&trials_path, trials_csv(&all_trials, &digest)?)?;
    let report = QuadcheckReport {
        config_digest: digest,
        suite,
        exactness,
        gap_study,
        diagonal,
        forgetting,
        trials_csv: trials_path.display().to_string(),
        assertions,
    };
    write_json(&out.join("report.json"), &report)?;
    if !report.passed() {
        let failed: Vec<String> = report
            .assertions
            .iter()
            .filter(|a| !a.passed)
            .map(|a| format!("{}: {}", a.name, a.detail))
            .collect();
        return Err(CliError::Assertion(failed.join("; ")));
    }
    Ok((out, report))
}
