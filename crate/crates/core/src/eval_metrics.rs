//! Depth-completion error metrics and a nearest-neighbour fill baseline.
//!
//! Depths are meters internally. Reports use millimeters for RMSE/MAE and
//! 1/km for the inverse-depth metrics.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::DepthImage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    /// mm
    pub rmse: f64,
    /// mm
    pub mae: f64,
    /// 1/km
    pub irmse: f64,
    /// 1/km
    pub imae: f64,
    pub valid_pixels: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "rmse,mae,irmse,imae,valid_pixels";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.rmse, self.mae, self.irmse, self.imae, self.valid_pixels
        )
    }

    /// One `metric=value` per line.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rmse={}", self.rmse)?;
        writeln!(f, "mae={}", self.mae)?;
        writeln!(f, "irmse={}", self.irmse)?;
        writeln!(f, "imae={}", self.imae)?;
        writeln!(f, "valid_pixels={}", self.valid_pixels)
    }
}

/// Running sums, so a dataset can be scored as one pooled pixel set.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    sq: f64,
    abs: f64,
    inv_sq: f64,
    inv_abs: f64,
    count: usize,
}

impl MetricsAccumulator {
    pub fn add(&mut self, pred: &DepthImage, gt: &DepthImage) -> Result<()> {
        if pred.width() != gt.width() || pred.height() != gt.height() {
            return Err(Error::Dimension(format!(
                "prediction {}×{} vs ground truth {}×{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        // validate first so a failed image leaves the sums untouched
        for (i, (&p, &t)) in pred.values().iter().zip(gt.values()).enumerate() {
            if t > 0.0 && p <= 0.0 {
                return Err(Error::InverseDomain {
                    u: i % gt.width(),
                    v: i / gt.width(),
                    value: p,
                });
            }
        }
        for (&p, &t) in pred.values().iter().zip(gt.values()) {
            if t > 0.0 {
                let e = p - t;
                let ie = 1.0 / p - 1.0 / t;
                self.sq += e * e;
                self.abs += e.abs();
                self.inv_sq += ie * ie;
                self.inv_abs += ie.abs();
                self.count += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> Result<MetricsReport> {
        if self.count == 0 {
            return Err(Error::Degenerate("ground truth has no valid pixels".into()));
        }
        let n = self.count as f64;
        Ok(MetricsReport {
            rmse: 1000.0 * (self.sq / n).sqrt(),
            mae: 1000.0 * self.abs / n,
            irmse: 1000.0 * (self.inv_sq / n).sqrt(),
            imae: 1000.0 * self.inv_abs / n,
            valid_pixels: self.count,
        })
    }
}

/// Scores `pred` against every valid pixel of `gt`.
pub fn evaluate(pred: &DepthImage, gt: &DepthImage) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::default();
    acc.add(pred, gt)?;
    acc.report()
}

/// Fills every missing pixel with the depth of the nearest valid pixel
/// (Euclidean pixel distance, lowest row-major index on ties).
pub fn nn_fill_baseline(sparse: &DepthImage) -> Result<DepthImage> {
    let valid: Vec<(usize, usize, f64)> = sparse.valid_pixels().collect();
    if valid.is_empty() {
        return Err(Error::Degenerate("nothing to fill from: no valid pixels".into()));
    }
    let (w, h) = (sparse.width(), sparse.height());
    let mut out = sparse.clone();
    for v in 0..h {
        for u in 0..w {
            if sparse.is_valid(u, v) {
                continue;
            }
            let mut best = (usize::MAX, 0.0);
            for &(vu, vv, d) in &valid {
                let du = vu as isize - u as isize;
                let dv = vv as isize - v as isize;
                let dist = (du * du + dv * dv) as usize;
                if dist < best.0 {
                    best = (dist, d);
                }
            }
            out.set(u, v, best.1);
        }
    }
    Ok(out)
}
