//! Result bundles: running a config over its seeds and comparing bundles.
//!
//! Bundle layout:
//!
//! ```text
//! <out>/config.toml            canonical config after overrides
//! <out>/manifest.json          digests, tool version, seeds, failures
//! <out>/metrics.json           per-seed reports and their mean/std
//! <out>/table.txt              AA / LA / FM table
//! <out>/seed-<s>/accuracy.csv  accuracy matrix, long format
//! <out>/seed-<s>/ivt_log.csv   every increment-transform firing
//! <out>/seed-<s>/stream.json   class order and task sizes
//! <out>/seed-<s>/timing.json   wall-clock seconds per task
//! <out>/seed-<s>/checkpoints/task<t>.ckpt
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::LoadedConfig;
use super::{
    io_err, prepare_out_dir, read_json, resolve_out_dir, short, write_file, write_json, CliError,
    CliResult, TOOL_VERSION,
};
use crate::checkpoint::Checkpoint;
use crate::metrics::{
    aggregate, avg_improvement, format_table, metrics_report, AggregateReport, MetricsReport,
    TableRow,
};
use crate::trainers::{run_sequence, RunRecord};

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub config: PathBuf,
    pub force: bool,
    /// Replaces the configured seed list with this single seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub output_root: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub completed_tasks: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub tool: String,
    pub tool_version: String,
    pub config_digest: String,
    pub dataset_digest: String,
    pub label: String,
    pub seeds: Vec<u64>,
    pub complete: bool,
    pub failures: Vec<SeedFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMetrics {
    pub config_digest: String,
    pub label: String,
    pub seeds: Vec<SeedMetrics>,
    /// Present only when every configured seed finished.
    pub aggregate: Option<AggregateReport>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub digest: String,
    pub records: Vec<RunRecord>,
    pub metrics: BundleMetrics,
    pub table: String,
}

fn ivt_log_csv(record: &RunRecord, digest: &str) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let row_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record([
        "config_digest",
        "task",
        "epoch",
        "mean_coefficient",
        "displacement_norm",
    ])
    .map_err(row_err)?;
    for f in &record.ivt_log {
        w.write_record([
            digest.to_string(),
            f.task.to_string(),
            f.epoch.to_string(),
            format!("{:?}", f.mean_coefficient),
            format!("{:?}", f.displacement_norm),
        ])
        .map_err(row_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

fn write_seed(dir: &Path, seed: u64, record: &RunRecord, loaded: &LoadedConfig) -> CliResult<()> {
    let digest = &loaded.digest;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join("accuracy.csv"), record.accuracy.to_csv(digest))?;
    write_file(&dir.join("ivt_log.csv"), ivt_log_csv(record, digest)?)?;
    write_json(
        &dir.join("stream.json"),
        &serde_json::json!({ "config_digest": digest, "stream": record.stream }),
    )?;
    write_json(
        &dir.join("timing.json"),
        &serde_json::json!({ "config_digest": digest, "wall_clock_secs": record.wall_clock_secs }),
    )?;
    let emit = &loaded.config.emit;
    if emit.checkpoints || emit.json_checkpoints {
        let ckdir = dir.join("checkpoints");
        fs::create_dir_all(&ckdir).map_err(|e| io_err(&ckdir, e))?;
        for tc in &record.checkpoints {
            let ck = Checkpoint {
                task_id: tc.task_id,
                seed,
                config_digest: Some(digest.clone()),
                params: tc.params.clone(),
                optimizer: Some(tc.optimizer.clone()),
                ledger: tc.ledger.clone(),
            };
            if emit.checkpoints {
                ck.write(&ckdir.join(format!("task{}.ckpt", tc.task_id)))?;
            }
            if emit.json_checkpoints {
                write_file(
                    &ckdir.join(format!("task{}.json", tc.task_id)),
                    ck.to_json_text()?,
                )?;
            }
        }
    }
    Ok(())
}

/// Trains the configured method once per seed and writes the bundle. Seeds
/// run in parallel; everything written is ordered by the seed list.
pub fn cmd_run(opts: &RunOptions) -> CliResult<RunSummary> {
    let loaded = LoadedConfig::from_path(&opts.config, opts.seed)?;
    let cfg = &loaded.config;
    let stem = opts
        .config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let out = resolve_out_dir(
        opts.out.as_deref(),
        cfg.output_dir.as_deref(),
        &opts.output_root,
        &format!("{stem}-{}", short(&loaded.digest)),
    );
    let stream = loaded.build_stream()?;
    prepare_out_dir(&out, opts.force)?;
    write_file(
        &out.join("config.toml"),
        format!("# config_digest = \"{}\"\n{}", loaded.digest, loaded.text),
    )?;

    let outcomes: Vec<_> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut method = cfg.method.clone();
            method.train.seed = seed;
            log::info!("seed {seed}: training {} task(s)", stream.len());
            run_sequence(&stream, &method)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut seed_metrics = Vec::new();
    for (&seed, outcome) in cfg.seeds.iter().zip(outcomes) {
        let record = match outcome {
            Ok(mut r) => {
                r.config_digest = Some(loaded.digest.clone());
                r
            }
            Err(f) => {
                failures.push(SeedFailure {
                    seed,
                    completed_tasks: f.record.checkpoints.len(),
                    error: f.error.to_string(),
                });
                let mut r = f.record;
                r.config_digest = Some(loaded.digest.clone());
                write_seed(&out.join(format!("seed-{seed}")), seed, &r, &loaded)?;
                continue;
            }
        };
        write_seed(&out.join(format!("seed-{seed}")), seed, &record, &loaded)?;
        seed_metrics.push(SeedMetrics {
            seed,
            report: metrics_report(&record.accuracy, cfg.emit.metrics)?,
        });
        records.push(record);
    }

    let label = cfg.label();
    let complete = failures.is_empty();
    let agg = if complete {
        let reports: Vec<MetricsReport> = seed_metrics.iter().map(|s| s.report.clone()).collect();
        Some(aggregate(&reports)?)
    } else {
        None
    };
    let metrics = BundleMetrics {
        config_digest: loaded.digest.clone(),
        label: label.clone(),
        seeds: seed_metrics,
        aggregate: agg.clone(),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    let table = match agg {
        Some(report) => format_table(&[TableRow::Method {
            name: label.clone(),
            report,
        }]),
        None => String::from("incomplete run: no aggregate\n"),
    };
    write_file(
        &out.join("table.txt"),
        format!("# config_digest = {}\n{table}", loaded.digest),
    )?;
    write_json(
        &out.join("manifest.json"),
        &BundleManifest {
            tool: "ivtlab".into(),
            tool_version: TOOL_VERSION.into(),
            config_digest: loaded.digest.clone(),
            dataset_digest: loaded.dataset_digest.clone(),
            label,
            seeds: cfg.seeds.clone(),
            complete,
            failures: failures.clone(),
        },
    )?;

    if !complete {
        let detail: Vec<String> = failures
            .iter()
            .map(|f| {
                format!(
                    "seed {} stopped after {} task(s): {}",
                    f.seed, f.completed_tasks, f.error
                )
            })
            .collect();
        return Err(CliError::Io(format!(
            "partial run in {}: {}; completed tasks and their checkpoints were kept, rerun with --force once fixed",
            out.display(),
            detail.join("; ")
        )));
    }
    Ok(RunSummary {
        out_dir: out,
        digest: loaded.digest,
        records,
        metrics,
        table,
    })
}

#[derive(Clone, Debug)]
pub struct ReportOptions {
    pub bundles: Vec<PathBuf>,
    /// `(baseline, treated)` bundle labels or 1-based positions.
    pub pairs: Vec<(String, String)>,
    pub out: Option<PathBuf>,
}

struct LoadedBundle {
    manifest: BundleManifest,
    metrics: BundleMetrics,
}

fn find<'a>(bundles: &'a [LoadedBundle], key: &str) -> CliResult<&'a LoadedBundle> {
    if let Ok(i) = key.parse::<usize>() {
        if (1..=bundles.len()).contains(&i) {
            return Ok(&bundles[i - 1]);
        }
    }
    let hits: Vec<&LoadedBundle> = bundles.iter().filter(|b| b.manifest.label == key).collect();
    match hits.as_slice() {
        [one] => Ok(one),
        [] => Err(CliError::Usage(format!("no bundle labelled {key}"))),
        _ => Err(CliError::Usage(format!(
            "label {key} is ambiguous; use a position"
        ))),
    }
}

/// Comparison table over finished bundles, with one improvement row per
/// declared `(baseline, treated)` pair. Pairs must cover the same seeds.
pub fn cmd_report(opts: &ReportOptions) -> CliResult<String> {
    if opts.bundles.is_empty() {
        return Err(CliError::Usage("report needs at least one bundle".into()));
    }
    let mut bundles = Vec::new();
    for dir in &opts.bundles {
        let manifest: BundleManifest = read_json(&dir.join("manifest.json"))?;
        let metrics: BundleMetrics = read_json(&dir.join("metrics.json"))?;
        if metrics.config_digest != manifest.config_digest {
            return Err(CliError::Usage(format!(
                "{}: metrics and manifest digests differ",
                dir.display()
            )));
        }
        if !manifest.complete || metrics.aggregate.is_none() {
            return Err(CliError::Usage(format!(
                "{}: bundle is incomplete",
                dir.display()
            )));
        }
        bundles.push(LoadedBundle { manifest, metrics });
    }
    let dataset = &bundles[0].manifest.dataset_digest;
    if let Some(odd) = bundles
        .iter()
        .find(|b| &b.manifest.dataset_digest != dataset)
    {
        return Err(CliError::Usage(format!(
            "bundle {} was built on dataset {} but {} expects {}",
            odd.manifest.label,
            short(&odd.manifest.dataset_digest),
            bundles[0].manifest.label,
            short(dataset)
        )));
    }

    let mut rows: Vec<TableRow> = bundles
        .iter()
        .map(|b| TableRow::Method {
            name: b.manifest.label.clone(),
            report: b.metrics.aggregate.clone().expect("checked complete"),
        })
        .collect();
    for (base_key, treated_key) in &opts.pairs {
        let base = find(&bundles, base_key)?;
        let treated = find(&bundles, treated_key)?;
        let seeds = |b: &LoadedBundle| b.metrics.seeds.iter().map(|s| s.seed).collect::<Vec<_>>();
        if seeds(base) != seeds(treated) {
            return Err(CliError::Usage(format!(
                "cannot pair {} with {}: seeds {:?} vs {:?}",
                base.manifest.label,
                treated.manifest.label,
                seeds(base),
                seeds(treated)
            )));
        }
        let before: Vec<MetricsReport> = base
            .metrics
            .seeds
            .iter()
            .map(|s| s.report.clone())
            .collect();
        let after: Vec<MetricsReport> = treated
            .metrics
            .seeds
            .iter()
            .map(|s| s.report.clone())
            .collect();
        rows.push(TableRow::Improvement {
            name: format!(
                "Avg. Imp. ({} vs {})",
                treated.manifest.label, base.manifest.label
            ),
            delta: avg_improvement(&before, &after)?,
        });
    }

    let mut text = String::new();
    let _ = writeln!(text, "# dataset_digest = {dataset}");
    for b in &bundles {
        let _ = writeln!(
            text,
            "# {} config_digest = {}",
            b.manifest.label, b.manifest.config_digest
        );
    }
    text.push_str(&format_table(&rows));
    if let Some(path) = &opts.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        write_file(path, &text)?;
    }
    Ok(text)
}
