//! Linear paths and planes through parameter space.
//!
//! A scan walks `anchor + lambda * U` with `U` the unit vector towards a
//! target model. The endpoints `lambda = 0` and `lambda = |target - anchor|`
//! evaluate the anchor and the target themselves, so the scan reproduces
//! direct evaluations bit for bit.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paramspace::{evaluate, ClassId, ParamVector};
use crate::taskdata::LabeledDataset;

/// A named test set and the classes its predictions range over.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub name: String,
    pub data: LabeledDataset,
    pub scope: Vec<ClassId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScopeEval {
    pub scope: String,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub lambda: f64,
    pub evals: Vec<ScopeEval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationScan {
    /// The anchor lifted into the target's layout.
    pub anchor: ParamVector,
    pub target: ParamVector,
    pub direction: ParamVector,
    pub lambda_hat: f64,
    pub points: Vec<ScanPoint>,
}

/// Unit direction from `anchor` to `target` and the distance between them.
/// Returns the anchor lifted into the target's layout as well; head columns
/// it lacks take the target's recorded initialization.
pub fn build_direction(
    anchor: &ParamVector,
    target: &ParamVector,
) -> Result<(ParamVector, f64, ParamVector)> {
    let anchor = anchor.reconcile_to(target)?;
    let diff = target.sub(&anchor)?;
    let norm = diff.norm();
    if norm == 0.0 {
        return Err(Error::ZeroDisplacement);
    }
    let dir = diff.with_values(diff.values().iter().map(|v| v / norm).collect())?;
    Ok((dir, norm, anchor))
}

/// 41 evenly spaced points on `[0, 1.25 lambda_hat]` plus `lambda_hat`.
pub fn default_grid(lambda_hat: f64) -> Vec<f64> {
    let end = 1.25 * lambda_hat;
    let mut grid: Vec<f64> = (0..41).map(|k| end * k as f64 / 40.0).collect();
    grid.push(lambda_hat);
    normalize_grid(grid, lambda_hat)
}

fn normalize_grid(mut grid: Vec<f64>, lambda_hat: f64) -> Vec<f64> {
    grid.push(0.0);
    grid.push(lambda_hat);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

impl InterpolationScan {
    /// Parameters at distance `lambda` along the path.
    pub fn materialize(&self, lambda: f64) -> Result<ParamVector> {
        materialize(
            &self.anchor,
            &self.target,
            &self.direction,
            self.lambda_hat,
            lambda,
        )
    }

    pub fn point(&self, lambda: f64) -> Option<&ScanPoint> {
        self.points.iter().find(|p| p.lambda == lambda)
    }

    /// Long-format rows `config_digest,lambda,scope,accuracy,loss`.
    pub fn to_csv(&self, digest: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["config_digest", "lambda", "scope", "accuracy", "loss"])?;
        for p in &self.points {
            for e in &p.evals {
                w.write_record([
                    digest,
                    &format!("{:?}", p.lambda),
                    &e.scope,
                    &format!("{:?}", e.accuracy),
                    &format!("{:?}", e.loss),
                ])?;
            }
        }
        csv_string(w)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn materialize(
    anchor: &ParamVector,
    target: &ParamVector,
    dir: &ParamVector,
    lambda_hat: f64,
    lambda: f64,
) -> Result<ParamVector> {
    if lambda == 0.0 {
        return Ok(anchor.clone());
    }
    if lambda == lambda_hat {
        return Ok(target.clone());
    }
    anchor.with_values(
        anchor
            .values()
            .iter()
            .zip(dir.values())
            .map(|(a, u)| a + lambda * u)
            .collect(),
    )
}

fn evaluate_sets(params: &ParamVector, sets: &[EvalSet]) -> Result<Vec<ScopeEval>> {
    sets.iter()
        .map(|s| {
            let e = evaluate(params, s.data.batch(), &s.scope)?;
            Ok(ScopeEval {
                scope: s.name.clone(),
                accuracy: e.accuracy(),
                loss: e.loss,
            })
        })
        .collect()
}

/// Evaluates every set at every grid value. `grid = None` uses
/// [`default_grid`]; a supplied grid is extended with `0` and the endpoint.
pub fn lmc_scan(
    anchor: &ParamVector,
    target: &ParamVector,
    grid: Option<Vec<f64>>,
    sets: &[EvalSet],
) -> Result<InterpolationScan> {
    let (direction, lambda_hat, anchor) = build_direction(anchor, target)?;
    let grid = match grid {
        Some(g) => normalize_grid(g, lambda_hat),
        None => default_grid(lambda_hat),
    };
    if grid.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidConfig(
            "non-finite lambda in scan grid".into(),
        ));
    }
    let points = grid
        .par_iter()
        .map(|&lambda| {
            let p = materialize(&anchor, target, &direction, lambda_hat, lambda)?;
            let evals = evaluate_sets(&p, sets).map_err(|e| Error::AtLambda {
                lambda,
                source: Box::new(e),
            })?;
            Ok(ScanPoint { lambda, evals })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InterpolationScan {
        anchor,
        target: target.clone(),
        direction,
        lambda_hat,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line through `(x, y)` pairs. `None` when all `x` coincide.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<Option<LinearFit>> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Ok(None);
    }
    let slope = sxy / sxx;
    Ok(Some(LinearFit {
        slope,
        intercept: my - slope * mx,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub lambda: f64,
    /// Mean accuracy over the old-task scopes.
    pub old_accuracy: f64,
    pub new_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub points: Vec<TradeoffPoint>,
    /// New-task accuracy regressed on old-task accuracy; `None` when the
    /// old accuracy never changes.
    pub fit: Option<LinearFit>,
}

impl TradeoffCurve {
    pub fn is_degenerate(&self) -> bool {
        self.fit.is_none()
    }
}

pub fn stability_plasticity_curve(
    scan: &InterpolationScan,
    old_scopes: &[&str],
    new_scope: &str,
) -> Result<TradeoffCurve> {
    if old_scopes.is_empty() {
        return Err(Error::InvalidConfig("no old-task scopes".into()));
    }
    let find = |p: &ScanPoint, name: &str| {
        p.evals
            .iter()
            .find(|e| e.scope == name)
            .map(|e| e.accuracy)
            .ok_or_else(|| Error::InvalidConfig(format!("scan has no scope named {name}")))
    };
    let mut points = Vec::with_capacity(scan.points.len());
    for p in &scan.points {
        let mut old = 0.0;
        for s in old_scopes {
            old += find(p, s)?;
        }
        points.push(TradeoffPoint {
            lambda: p.lambda,
            old_accuracy: old / old_scopes.len() as f64,
            new_accuracy: find(p, new_scope)?,
        });
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.old_accuracy, p.new_accuracy))
        .collect();
    let fit = linear_fit(&xy)?;
    Ok(TradeoffCurve { points, fit })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub a_steps: usize,
    pub b_steps: usize,
}

impl GridSpec {
    /// Square grid over `[-extent, extent]^2`.
    pub fn symmetric(extent: f64, steps: usize) -> Self {
        Self {
            a_min: -extent,
            a_max: extent,
            b_min: -extent,
            b_max: extent,
            a_steps: steps,
            b_steps: steps,
        }
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..n)
            .map(|k| {
                let v = lo + (hi - lo) * k as f64 / (n - 1) as f64;
                // Snap the symmetric midpoint so the origin is hit exactly.
                if v.abs() < 1e-12 * (hi - lo).abs() {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }

    pub fn coordinates(&self) -> Result<Vec<(f64, f64)>> {
        if self.a_steps == 0 || self.b_steps == 0 {
            return Err(Error::InvalidConfig("grid resolution must be >= 1".into()));
        }
        let a = Self::axis(self.a_min, self.a_max, self.a_steps);
        let b = Self::axis(self.b_min, self.b_max, self.b_steps);
        Ok(a.iter()
            .flat_map(|&x| b.iter().map(move |&y| (x, y)))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub a: f64,
    pub b: f64,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub a: f64,
    pub b: f64,
    /// Norm of the displacement component outside the plane.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub origin: ParamVector,
    pub basis_u: ParamVector,
    pub basis_v: ParamVector,
    pub points: Vec<GridPoint>,
    pub projections: BTreeMap<String, Projection>,
}

/// Orthonormal basis of the plane spanned by `dir_a` and `dir_b`.
pub fn orthonormal_basis(
    dir_a: &ParamVector,
    dir_b: &ParamVector,
) -> Result<(ParamVector, ParamVector)> {
    let na = dir_a.norm();
    let nb = dir_b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroDisplacement);
    }
    let u = dir_a.with_values(dir_a.values().iter().map(|v| v / na).collect())?;
    let c = dir_b.dot(&u)?;
    let perp: Vec<f64> = dir_b
        .values()
        .iter()
        .zip(u.values())
        .map(|(b, u)| b - c * u)
        .collect();
    let np = perp.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np <= 1e-10 * nb {
        return Err(Error::ParallelDirections);
    }
    let v = dir_b.with_values(perp.iter().map(|x| x / np).collect())?;
    Ok((u, v))
}

impl LandscapeGrid {
    pub fn point_at(&self, a: f64, b: f64) -> Result<ParamVector> {
        if a == 0.0 && b == 0.0 {
            return Ok(self.origin.clone());
        }
        self.origin.with_values(
            self.origin
                .values()
                .iter()
                .zip(self.basis_u.values())
                .zip(self.basis_v.values())
                .map(|((o, u), v)| o + a * u + b * v)
                .collect(),
        )
    }

    /// In-plane coordinates of `model` relative to the origin.
    pub fn project(&self, model: &ParamVector) -> Result<Projection> {
        let model = model.reconcile_to(&self.origin)?;
        let d = model.sub(&self.origin)?;
        let a = d.dot(&self.basis_u)?;
        let b = d.dot(&self.basis_v)?;
        let residual = d
            .values()
            .iter()
            .zip(self.basis_u.values())
            .zip(self.basis_v.values())
            .map(|((x, u), v)| (x - a * u - b * v).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(Projection { a, b, residual })
    }

    pub fn add_projection(&mut self, name: &str, model: &ParamVector) -> Result<Projection> {
        let p = self.project(model)?;
        self.projections.insert(name.to_string(), p);
        Ok(p)
    }

    /// Rows `config_digest,a,b,accuracy,loss`.
    pub fn to_csv(&self, digest: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["config_digest", "a", "b", "accuracy", "loss"])?;
        for p in &self.points {
            w.write_record([
                digest,
                &format!("{:?}", p.a),
                &format!("{:?}", p.b),
                &format!("{:?}", p.accuracy),
                &format!("{:?}", p.loss),
            ])?;
        }
        csv_string(w)
    }
}

/// Evaluates `set` over the plane through `origin` spanned by `dir_a` and
/// the part of `dir_b` orthogonal to it.
pub fn landscape_grid(
    origin: &ParamVector,
    dir_a: &ParamVector,
    dir_b: &ParamVector,
    grid: &GridSpec,
    set: &EvalSet,
) -> Result<LandscapeGrid> {
    origin.ensure_same_layout(dir_a.layout())?;
    origin.ensure_same_layout(dir_b.layout())?;
    let (basis_u, basis_v) = orthonormal_basis(dir_a, dir_b)?;
    let mut out = LandscapeGrid {
        origin: origin.clone(),
        basis_u,
        basis_v,
        points: Vec::new(),
        projections: BTreeMap::new(),
    };
    let coords = grid.coordinates()?;
    out.points = coords
        .par_iter()
        .map(|&(a, b)| {
            let p = out.point_at(a, b)?;
            let e = evaluate(&p, set.data.batch(), &set.scope)?;
            Ok(GridPoint {
                a,
                b,
                accuracy: e.accuracy(),
                loss: e.loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out)
}
