//! Symmetric Chamfer distance with unsquared Euclidean norms:
//!
//! `CD(P1, P2) = mean_{x∈P1} min_{y∈P2} ‖x−y‖ + mean_{y∈P2} min_{x∈P1} ‖x−y‖`
//!
//! Two exact routes are provided: exhaustive search, and a uniform spatial
//! hash with expanding ring search. Both break nearest-neighbour ties toward
//! the lowest index and sum in the same order, so they agree bit for bit.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::tensor::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChamferResult {
    pub value: f64,
    /// Mean distance from each point of `p1` to its nearest point in `p2`.
    pub term1: f64,
    /// Mean distance from each point of `p2` to its nearest point in `p1`.
    pub term2: f64,
}

impl ChamferResult {
    fn from_terms(term1: f64, term2: f64) -> Self {
        ChamferResult {
            value: term1 + term2,
            term1,
            term2,
        }
    }
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

fn check_nonempty(p1: &[Point3], p2: &[Point3]) -> Result<()> {
    if p1.is_empty() || p2.is_empty() {
        return Err(Error::EmptyInput("chamfer distance needs two non-empty clouds"));
    }
    Ok(())
}

/// Exhaustive nearest neighbour: `(index, squared distance)`.
fn nearest_exhaustive(q: &Point3, targets: &[Point3]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, t) in targets.iter().enumerate() {
        let d = dist2(q, t);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn mean_nn_distance(nn: &[(usize, f64)]) -> f64 {
    nn.iter().map(|(_, d2)| d2.sqrt()).sum::<f64>() / nn.len() as f64
}

pub fn chamfer_bruteforce(p1: &PointCloud, p2: &PointCloud) -> Result<ChamferResult> {
    check_nonempty(&p1.points, &p2.points)?;
    let fwd: Vec<_> = p1.points.iter().map(|q| nearest_exhaustive(q, &p2.points)).collect();
    let bwd: Vec<_> = p2.points.iter().map(|q| nearest_exhaustive(q, &p1.points)).collect();
    Ok(ChamferResult::from_terms(mean_nn_distance(&fwd), mean_nn_distance(&bwd)))
}

/// Uniform grid over a point set for exact nearest-neighbour queries.
pub struct SpatialHash<'a> {
    points: &'a [Point3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> SpatialHash<'a> {
    pub fn new(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let c = Self::key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            cells.entry(c).or_default().push(i);
        }
        SpatialHash {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    fn key(p: &Point3, cell: f64) -> [i64; 3] {
        [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ]
    }

    /// Exact nearest neighbour `(index, squared distance)`, lowest index on ties.
    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        let c = Self::key(q, self.cell);
        // Chebyshev ring beyond which no occupied cell exists
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let budget = self.points.len();
        let mut visited = 0usize;
        let mut best = (usize::MAX, f64::INFINITY);

        let visit = |key: [i64; 3], best: &mut (usize, f64)| {
            if let Some(ids) = self.cells.get(&key) {
                for &i in ids {
                    let d = dist2(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
        };

        for r in 0..=max_ring {
            let (x0, x1) = ((c[0] - r).max(self.lo[0]), (c[0] + r).min(self.hi[0]));
            let (y0, y1) = ((c[1] - r).max(self.lo[1]), (c[1] + r).min(self.hi[1]));
            for x in x0..=x1 {
                for y in y0..=y1 {
                    if (x - c[0]).abs() == r || (y - c[1]).abs() == r {
                        let (z0, z1) = ((c[2] - r).max(self.lo[2]), (c[2] + r).min(self.hi[2]));
                        for z in z0..=z1 {
                            visit([x, y, z], &mut best);
                        }
                        visited += (z1 - z0 + 1).max(0) as usize;
                    } else {
                        for z in [c[2] - r, c[2] + r] {
                            if z >= self.lo[2] && z <= self.hi[2] {
                                visit([x, y, z], &mut best);
                            }
                        }
                        visited += 2;
                    }
                }
            }
            // anything outside ring r is at least r cells away
            if best.1.sqrt() < r as f64 * self.cell {
                return best;
            }
            if visited > budget {
                return nearest_exhaustive(q, self.points);
            }
        }
        best
    }
}

/// Median nearest-neighbour spacing over an evenly strided sample of up to
/// 100 points. Falls back to a bounding-box estimate for degenerate clouds.
pub fn default_cell_size(points: &[Point3]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let step = n.div_ceil(100);
    let mut spacing: Vec<f64> = (0..n)
        .step_by(step)
        .map(|i| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, p)| dist2(&points[i], p))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    spacing.sort_by(f64::total_cmp);
    let median = spacing[spacing.len() / 2];
    if median > 0.0 && median.is_finite() {
        return median;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let diag = dist2(&lo, &hi).sqrt();
    if diag > 0.0 && diag.is_finite() {
        diag / (n as f64).cbrt()
    } else {
        1.0
    }
}

/// Nearest neighbour in `targets` for every query.
pub fn nearest_neighbors(queries: &[Point3], targets: &[Point3], cell: f64) -> Vec<(usize, f64)> {
    let grid = SpatialHash::new(targets, cell);
    queries.iter().map(|q| grid.nearest(q)).collect()
}

fn matches_fast(p1: &[Point3], p2: &[Point3], cell: f64) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    (nearest_neighbors(p1, p2, cell), nearest_neighbors(p2, p1, cell))
}

pub fn chamfer_fast(p1: &PointCloud, p2: &PointCloud, cell_size: f64) -> Result<ChamferResult> {
    check_nonempty(&p1.points, &p2.points)?;
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::Config(format!("cell size must be positive, got {cell_size}")));
    }
    let (fwd, bwd) = matches_fast(&p1.points, &p2.points, cell_size);
    Ok(ChamferResult::from_terms(mean_nn_distance(&fwd), mean_nn_distance(&bwd)))
}

/// [`chamfer_fast`] with the cell size estimated from `p2`.
pub fn chamfer(p1: &PointCloud, p2: &PointCloud) -> Result<ChamferResult> {
    check_nonempty(&p1.points, &p2.points)?;
    chamfer_fast(p1, p2, default_cell_size(&p2.points))
}

/// Chamfer distance as a differentiable loss in the `N×3` point tensor `p1`.
///
/// Correspondences are recomputed on every call. Each matched pair pushes a
/// unit vector (scaled by the term's `1/|P|`) onto its `p1` endpoint;
/// coincident pairs contribute nothing.
pub fn chamfer_loss(g: &mut Graph, p1: Var, p2: &PointCloud) -> Result<Var> {
    let shape = g.shape(p1);
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::Dimension(format!("chamfer_loss expects N×3 points, got {shape:?}")));
    }
    let pts: Vec<Point3> = g
        .value(p1)
        .data()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    check_nonempty(&pts, &p2.points)?;
    let cell = default_cell_size(&p2.points);
    let (fwd, bwd) = matches_fast(&pts, &p2.points, cell);
    let value = mean_nn_distance(&fwd) + mean_nn_distance(&bwd);

    let mut jac = vec![0.0; pts.len() * 3];
    let mut push = |i: usize, y: &Point3, d2: f64, w: f64| {
        if d2 > 0.0 {
            let inv = w / d2.sqrt();
            for a in 0..3 {
                jac[i * 3 + a] += (pts[i][a] - y[a]) * inv;
            }
        }
    };
    let w1 = 1.0 / pts.len() as f64;
    for (i, &(j, d2)) in fwd.iter().enumerate() {
        push(i, &p2.points[j], d2, w1);
    }
    let w2 = 1.0 / p2.len() as f64;
    for (j, &(i, d2)) in bwd.iter().enumerate() {
        push(i, &p2.points[j], d2, w2);
    }
    g.custom_scalar(p1, value, jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cloud(pts: &[Point3]) -> PointCloud {
        PointCloud::new(pts.to_vec())
    }

    #[test]
    fn singletons_double_the_distance() {
        let r = chamfer_bruteforce(&cloud(&[[0.0, 0.0, 0.0]]), &cloud(&[[3.0, 0.0, 0.0]])).unwrap();
        assert_eq!(r.value, 6.0);
    }

    #[test]
    fn hand_enumerated_pair() {
        let a = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        let r = chamfer_bruteforce(&a, &b).unwrap();
        assert_eq!((r.term1, r.term2, r.value), (1.0, 1.0, 2.0));
        assert_eq!(chamfer_fast(&a, &b, 0.3).unwrap(), r);
    }

    #[test]
    fn identical_clouds_are_zero() {
        let a = cloud(&[[0.5, 1.0, 2.0], [-1.0, 0.0, 3.0], [4.0, 4.0, 4.0]]);
        assert_eq!(chamfer_bruteforce(&a, &a).unwrap().value, 0.0);
        assert_eq!(chamfer(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn empty_cloud_errors() {
        let a = cloud(&[[0.0; 3]]);
        assert!(matches!(chamfer_bruteforce(&a, &PointCloud::default()), Err(Error::EmptyInput(_))));
        assert!(chamfer_fast(&PointCloud::default(), &a, 1.0).is_err());
        assert!(chamfer_fast(&a, &a, 0.0).is_err());
    }

    #[test]
    fn far_query_falls_back_exactly() {
        let targets: Vec<Point3> = (0..50).map(|i| [i as f64 * 0.01, 0.0, 0.0]).collect();
        let grid = SpatialHash::new(&targets, 0.01);
        assert_eq!(grid.nearest(&[100.0, 3.0, -2.0]), nearest_exhaustive(&[100.0, 3.0, -2.0], &targets));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let targets = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let grid = SpatialHash::new(&targets, 0.7);
        assert_eq!(grid.nearest(&[0.0, 0.0, 0.0]).0, 0);
    }

    #[test]
    fn singleton_gradient() {
        let mut g = Graph::new();
        let p = g.param(Tensor::new([1, 3], vec![1.0, 0.0, 0.0]).unwrap());
        let l = chamfer_loss(&mut g, p, &cloud(&[[0.0, 0.0, 0.0]])).unwrap();
        assert_eq!(g.value(l).item(), Some(2.0));
        g.backward(l).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn coincident_clouds_have_zero_loss_and_gradient() {
        let pts = [[0.5, 1.0, 2.0], [-1.0, 0.0, 3.0]];
        let mut g = Graph::new();
        let p = g.param(cloud(&pts).to_tensor().unwrap());
        let l = chamfer_loss(&mut g, p, &cloud(&pts)).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
        g.backward(l).unwrap();
        assert!(g.grad(p).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
