//! Reconstruction metrics: Chamfer distance, earth mover's distance and
//! relative surface-area error.

mod assignment;
mod kdtree;

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

pub use assignment::{auction, hungarian, AuctionResult};
pub use kdtree::KdTree;

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, surface_area, TriangleMesh, Vec3};

/// Largest EMD instance solved exactly.
pub const EXACT_EMD_LIMIT: usize = 512;
/// Certified relative gap accepted from the auction solver.
pub const EMD_MAX_GAP: f64 = 0.01;
pub const DEFAULT_EVAL_POINTS: usize = 4096;

/// Symmetric Chamfer distance with squared distances:
/// `mean_a min_b |a-b|² + mean_b min_a |a-b|²`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(one_sided(a, b) + one_sided(b, a))
}

/// Mean squared distance from each point of `from` to its nearest point in `to`.
pub fn one_sided(from: &[Vec3], to: &[Vec3]) -> f64 {
    let tree = KdTree::new(to);
    from.iter().map(|p| tree.nearest_squared(p)).sum::<f64>() / from.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmdExactness {
    Exact,
    /// Within the stated relative gap of the optimum.
    Approx,
}

impl fmt::Display for EmdExactness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmdExactness::Exact => "exact",
            EmdExactness::Approx => "approx",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Emd {
    /// Mean matched (unsquared) distance.
    pub value: f64,
    pub exactness: EmdExactness,
    /// Certified lower bound on the optimal mean distance.
    pub lower_bound: f64,
}

fn cloud_order(a: &[Vec3], b: &[Vec3]) -> Ordering {
    let bits = |c: &[Vec3]| -> Vec<u64> { c.iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect::<Vec<_>>() };
    bits(a).cmp(&bits(b))
}

/// Earth mover's distance between equal-size clouds: the mean Euclidean
/// distance under the optimal bijection. Exact up to [`EXACT_EMD_LIMIT`]
/// points, otherwise an auction solution certified within [`EMD_MAX_GAP`].
/// The argument order is canonicalized so `emd(a, b) == emd(b, a)` exactly.
pub fn emd(a: &[Vec3], b: &[Vec3]) -> Result<Emd> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (a, b) = if cloud_order(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let n = a.len();
    let dist = |i: usize, j: usize| (a[i] - b[j]).norm();
    if n <= EXACT_EMD_LIMIT {
        let cost: Vec<f64> = (0..n * n).map(|k| dist(k / n, k % n)).collect();
        let assignment = hungarian(n, &cost);
        let value = (0..n).map(|i| cost[i * n + assignment[i]]).sum::<f64>() / n as f64;
        Ok(Emd {
            value,
            exactness: EmdExactness::Exact,
            lower_bound: value,
        })
    } else {
        let r = auction(n, dist, EMD_MAX_GAP);
        Ok(Emd {
            value: r.cost / n as f64,
            exactness: EmdExactness::Approx,
            lower_bound: r.lower_bound / n as f64,
        })
    }
}

/// `|S_pred - S_gt| / S_gt · 100`.
pub fn surface_error(pred: &TriangleMesh, gt: &TriangleMesh) -> Result<f64> {
    surface_error_from_areas(surface_area(pred), surface_area(gt))
}

pub fn surface_error_from_areas(pred_area: f64, gt_area: f64) -> Result<f64> {
    if !(gt_area > 0.0) {
        return Err(Error::ZeroGtArea);
    }
    Ok((pred_area - gt_area).abs() / gt_area * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconstructionReport {
    pub cd: f64,
    pub emd: f64,
    pub emd_exactness: EmdExactness,
    pub surface_error_pct: f64,
    pub n_points: usize,
    pub seed: u64,
}

/// Samples `n_points` from each mesh with the same seed and computes all
/// three metrics.
pub fn evaluate(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    n_points: usize,
    seed: u64,
) -> Result<ReconstructionReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let p = sample_surface(pred, n_points, seed)?;
    let g = sample_surface(gt, n_points, seed)?;
    let e = emd(&p.points, &g.points)?;
    Ok(ReconstructionReport {
        cd: chamfer(&p.points, &g.points)?,
        emd: e.value,
        emd_exactness: e.exactness,
        surface_error_pct: surface_error(pred, gt)?,
        n_points,
        seed,
    })
}

/// Chamfer distance between surface samples of two meshes.
pub fn mesh_chamfer(pred: &TriangleMesh, gt: &TriangleMesh, n_points: usize, seed: u64) -> Result<f64> {
    let p = sample_surface(pred, n_points, seed)?;
    let g = sample_surface(gt, n_points, seed)?;
    chamfer(&p.points, &g.points)
}

/// One CSV row of the report table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub shape_id: u64,
    pub touches: usize,
    pub seed: u64,
    pub report: ReconstructionReport,
}

pub const CSV_HEADER: &str = "shape_id,touches,seed,cd,emd,surface_error_pct,emd_exactness";

impl ReportRow {
    pub fn to_csv(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{:.9e},{:.9e},{:.6},{}",
            self.shape_id, self.touches, self.seed, r.cd, r.emd, r.surface_error_pct, r.emd_exactness
        )
    }
}

pub fn write_report_csv(rows: &[ReportRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}
