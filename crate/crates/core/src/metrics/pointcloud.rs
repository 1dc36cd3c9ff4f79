//! Accuracy, completion and overall error between point clouds.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{median, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnMethod {
    BruteForce,
    /// Uniform hash grid with exact ring search.
    #[default]
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointCloudMetrics {
    pub acc_mean: f64,
    pub acc_median: f64,
    pub comp_mean: f64,
    pub comp_median: f64,
    pub overall_mean: f64,
    pub overall_median: f64,
}

fn dist(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm()
}

fn nn_brute(queries: &[Vector3<f64>], targets: &[Vector3<f64>]) -> Vec<f64> {
    queries
        .iter()
        .map(|q| targets.iter().map(|t| dist(q, t)).fold(f64::INFINITY, f64::min))
        .collect()
}

struct Grid<'a> {
    cell: f64,
    origin: Vector3<f64>,
    cells: HashMap<[i64; 3], Vec<usize>>,
    points: &'a [Vector3<f64>],
    max_ring: i64,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let volume = ext.iter().map(|e| e.max(1e-9)).product::<f64>();
        // Roughly two points per occupied cell.
        let mut cell = (2.0 * volume / points.len() as f64).cbrt();
        if !(cell.is_finite() && cell > 0.0) {
            cell = 1.0;
        }
        cell = cell.max(ext.max() / 1e6).max(1e-12);
        let mut g = Self {
            cell,
            origin: lo,
            cells: HashMap::new(),
            points,
            max_ring: 0,
        };
        for (i, p) in points.iter().enumerate() {
            g.cells.entry(g.key(p)).or_default().push(i);
        }
        g.max_ring = (ext.max() / cell).ceil() as i64 + 1;
        g
    }

    fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        let r = (p - self.origin) / self.cell;
        [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
    }

    fn visit(&self, q: &Vector3<f64>, k: [i64; 3], best: &mut f64) {
        if let Some(ids) = self.cells.get(&k) {
            for &i in ids {
                let d = dist(q, &self.points[i]);
                if d < *best {
                    *best = d;
                }
            }
        }
    }

    fn nearest(&self, q: &Vector3<f64>) -> f64 {
        let c = self.key(q);
        let mut best = f64::INFINITY;
        let mut r = 0i64;
        loop {
            let ring_cells = (2 * r + 1).pow(3) - (2 * r - 1).max(0).pow(3);
            if ring_cells as usize > self.cells.len() || r > self.max_ring + 1 {
                // Far from the cloud: a full scan is cheaper than more rings.
                return self.points.iter().map(|p| dist(q, p)).fold(best, f64::min);
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    if dx.abs() == r || dy.abs() == r {
                        for dz in -r..=r {
                            self.visit(q, [c[0] + dx, c[1] + dy, c[2] + dz], &mut best);
                        }
                    } else {
                        self.visit(q, [c[0] + dx, c[1] + dy, c[2] - r], &mut best);
                        if r > 0 {
                            self.visit(q, [c[0] + dx, c[1] + dy, c[2] + r], &mut best);
                        }
                    }
                }
            }
            // Cells beyond ring r are at least r cell widths away.
            if best <= r as f64 * self.cell {
                return best;
            }
            r += 1;
        }
    }
}

/// Distance from each query to its nearest target.
pub fn nearest_distances(queries: &[Vector3<f64>], targets: &[Vector3<f64>], method: NnMethod) -> Vec<f64> {
    match method {
        NnMethod::BruteForce => nn_brute(queries, targets),
        NnMethod::Grid => {
            let g = Grid::new(targets);
            queries.iter().map(|q| g.nearest(q)).collect()
        }
    }
}

/// Caller supplies clouds already in a common frame.
pub fn pointcloud_metrics(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    method: NnMethod,
) -> Result<PointCloudMetrics, MetricsError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let acc = nearest_distances(pred, gt, method);
    let comp = nearest_distances(gt, pred, method);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (acc_mean, comp_mean) = (mean(&acc), mean(&comp));
    let acc_median = median(&acc).expect("non-empty");
    let comp_median = median(&comp).expect("non-empty");
    Ok(PointCloudMetrics {
        acc_mean,
        acc_median,
        comp_mean,
        comp_median,
        overall_mean: 0.5 * (acc_mean + comp_mean),
        overall_median: 0.5 * (acc_median + comp_median),
    })
}
