//! Commands that evaluate saved checkpoints: single evaluation, linear
//! interpolation scans and two-dimensional landscape grids.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::LoadedConfig;
use super::{
    io_err, prepare_out_dir, resolve_out_dir, short, write_file, write_json, CliError, CliResult,
};
use crate::checkpoint::Checkpoint;
use crate::geometry::{
    landscape_grid, lmc_scan, EvalSet, GridSpec, InterpolationScan, LandscapeGrid, Projection,
};
use crate::paramspace::{evaluate, ParamVector};
use crate::taskdata::{LabeledDataset, TaskStream};

/// One test set per task whose classes the model already has, plus `seen`
/// pooling all of them. Predictions range over the classes of those tasks,
/// matching the evaluation done during training.
pub fn eval_sets(stream: &TaskStream, params: &ParamVector) -> CliResult<Vec<EvalSet>> {
    let layout = params.layout();
    let covered = (1..=stream.len())
        .take_while(|&t| {
            stream.tasks[t - 1]
                .class_ids
                .iter()
                .all(|&c| layout.has_class(c))
        })
        .last()
        .ok_or_else(|| {
            CliError::Usage("checkpoint holds none of the stream's first-task classes".into())
        })?;
    let scope = stream.classes_through(covered);
    let mut sets: Vec<EvalSet> = stream.tasks[..covered]
        .iter()
        .map(|task| EvalSet {
            name: format!("task{}", task.task_id),
            data: task.test.clone(),
            scope: scope.clone(),
        })
        .collect();
    let seen = LabeledDataset::concat(
        stream.dim(),
        crate::taskdata::Split::Test,
        stream.tasks[..covered].iter().map(|t| &t.test),
    )?;
    sets.push(EvalSet {
        name: "seen".into(),
        data: seen,
        scope,
    });
    Ok(sets)
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::read(path).map_err(|e| io_err(path, e))
}

fn warn_digest(ck: &Checkpoint, path: &Path, digest: &str) {
    if let Some(d) = &ck.config_digest {
        if d != digest {
            log::warn!(
                "{} was written under config {} not {}",
                path.display(),
                short(d),
                short(digest)
            );
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    /// Also write the checkpoint as JSON text here.
    pub export: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Evaluates one checkpoint; returns CSV `config_digest,eval,accuracy,loss`.
pub fn cmd_eval(opts: &EvalOptions) -> CliResult<String> {
    let loaded = LoadedConfig::from_path(&opts.config, None)?;
    let ck = read_checkpoint(&opts.checkpoint)?;
    warn_digest(&ck, &opts.checkpoint, &loaded.digest);
    let stream = loaded.build_stream()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["config_digest", "eval", "accuracy", "loss"])
        .map_err(csv_err)?;
    for set in eval_sets(&stream, &ck.params)? {
        let e = evaluate(&ck.params, set.data.batch(), &set.scope)?;
        w.write_record([
            loaded.digest.as_str(),
            &set.name,
            &format!("{:?}", e.accuracy()),
            &format!("{:?}", e.loss),
        ])
        .map_err(csv_err)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)
        .map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(path) = &opts.export {
        write_file(path, ck.to_json_text()?)?;
    }
    if let Some(path) = &opts.out {
        write_file(path, &text)?;
    }
    Ok(text)
}

#[derive(Clone, Debug)]
pub struct LmcOptions {
    pub config: PathBuf,
    pub anchor: PathBuf,
    pub target: PathBuf,
    pub out: Option<PathBuf>,
    pub output_root: PathBuf,
    pub force: bool,
}

#[derive(Serialize)]
struct LmcManifest<'a> {
    config_digest: &'a str,
    anchor: String,
    target: String,
    anchor_task: usize,
    target_task: usize,
    lambda_hat: f64,
    grid_size: usize,
    scopes: Vec<String>,
    rows: usize,
}

/// Scans the straight line from the anchor checkpoint to the target over
/// the default grid. Writes `scan.csv` and `manifest.json`.
pub fn cmd_lmc(opts: &LmcOptions) -> CliResult<(PathBuf, InterpolationScan)> {
    let loaded = LoadedConfig::from_path(&opts.config, None)?;
    let a = read_checkpoint(&opts.anchor)?;
    let b = read_checkpoint(&opts.target)?;
    warn_digest(&a, &opts.anchor, &loaded.digest);
    warn_digest(&b, &opts.target, &loaded.digest);
    let stream = loaded.build_stream()?;
    let sets = eval_sets(&stream, &b.params)?;
    let scan = lmc_scan(&a.params, &b.params, None, &sets)?;

    let out = resolve_out_dir(
        opts.out.as_deref(),
        None,
        &opts.output_root,
        &format!(
            "lmc-{}-s{}-t{}-t{}",
            short(&loaded.digest),
            b.seed,
            a.task_id,
            b.task_id
        ),
    );
    prepare_out_dir(&out, opts.force)?;
    write_file(&out.join("scan.csv"), scan.to_csv(&loaded.digest)?)?;
    write_json(
        &out.join("manifest.json"),
        &LmcManifest {
            config_digest: &loaded.digest,
            anchor: opts.anchor.display().to_string(),
            target: opts.target.display().to_string(),
            anchor_task: a.task_id,
            target_task: b.task_id,
            lambda_hat: scan.lambda_hat,
            grid_size: scan.points.len(),
            scopes: sets.iter().map(|s| s.name.clone()).collect(),
            rows: scan.points.len() * sets.len(),
        },
    )?;
    Ok((out, scan))
}

#[derive(Clone, Debug)]
pub struct LandscapeOptions {
    pub config: PathBuf,
    pub origin: PathBuf,
    pub dir_a: PathBuf,
    pub dir_b: PathBuf,
    /// Grid spans `[-extent, extent]` along both basis vectors.
    pub extent: f64,
    pub steps: usize,
    /// Extra checkpoints to project onto the plane, by name.
    pub project: Vec<(String, PathBuf)>,
    pub out: Option<PathBuf>,
    pub output_root: PathBuf,
    pub force: bool,
}

#[derive(Serialize)]
struct LandscapeManifest<'a> {
    config_digest: &'a str,
    origin: String,
    dir_a: String,
    dir_b: String,
    extent: f64,
    steps: usize,
    rows: usize,
    eval: String,
    projections: &'a std::collections::BTreeMap<String, Projection>,
}

/// Evaluates the plane through `origin` spanned by the displacements to
/// `dir_a` and `dir_b`. All models are lifted into the widest head first.
pub fn cmd_landscape(opts: &LandscapeOptions) -> CliResult<(PathBuf, LandscapeGrid)> {
    if !(opts.extent > 0.0 && opts.extent.is_finite()) {
        return Err(CliError::Usage("extent must be positive".into()));
    }
    let loaded = LoadedConfig::from_path(&opts.config, None)?;
    let mut models = vec![
        ("origin".to_string(), opts.origin.clone()),
        ("a".to_string(), opts.dir_a.clone()),
        ("b".to_string(), opts.dir_b.clone()),
    ];
    models.extend(opts.project.iter().cloned());
    let mut params = Vec::new();
    for (name, path) in &models {
        let ck = read_checkpoint(path)?;
        warn_digest(&ck, path, &loaded.digest);
        params.push((name.clone(), ck.params));
    }
    let widest = params
        .iter()
        .max_by_key(|(_, p)| p.layout().classes().len())
        .map(|(_, p)| p.clone())
        .expect("three models");
    let lifted: Vec<(String, ParamVector)> = params
        .into_iter()
        .map(|(n, p)| Ok((n, p.reconcile_to(&widest)?)))
        .collect::<crate::Result<_>>()?;

    let origin = &lifted[0].1;
    let dir_a = lifted[1].1.sub(origin)?;
    let dir_b = lifted[2].1.sub(origin)?;
    let stream = loaded.build_stream()?;
    let set = eval_sets(&stream, origin)?.pop().expect("seen set");
    let mut grid = landscape_grid(
        origin,
        &dir_a,
        &dir_b,
        &GridSpec::symmetric(opts.extent, opts.steps),
        &set,
    )?;
    for (name, p) in &lifted {
        grid.add_projection(name, p)?;
    }

    let out = resolve_out_dir(
        opts.out.as_deref(),
        None,
        &opts.output_root,
        &format!("landscape-{}", short(&loaded.digest)),
    );
    prepare_out_dir(&out, opts.force)?;
    write_file(&out.join("grid.csv"), grid.to_csv(&loaded.digest)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["config_digest", "name", "a", "b", "residual"])
        .map_err(csv_err)?;
    for (name, p) in &grid.projections {
        w.write_record([
            loaded.digest.as_str(),
            name,
            &format!("{:?}", p.a),
            &format!("{:?}", p.b),
            &format!("{:?}", p.residual),
        ])
        .map_err(csv_err)?;
    }
    write_file(
        &out.join("projections.csv"),
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))?,
    )?;
    write_json(
        &out.join("manifest.json"),
        &LandscapeManifest {
            config_digest: &loaded.digest,
            origin: opts.origin.display().to_string(),
            dir_a: opts.dir_a.display().to_string(),
            dir_b: opts.dir_b.display().to_string(),
            extent: opts.extent,
            steps: opts.steps,
            rows: grid.points.len(),
            eval: set.name,
            projections: &grid.projections,
        },
    )?;
    Ok((out, grid))
}
