//! Displacement-error metrics, best-of-N scoring and report formatting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::dataio::DensityGroup;
use crate::error::{Error, Result};
use crate::gauss::{displacements_to_absolute, sample_displacements, BiGaussianSeq};
use crate::ndnum::Tensor;

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize)> {
    let s = pred.shape();
    if s != gt.shape() || s.len() != 3 || s[2] != 2 || s[0] == 0 || s[1] == 0 {
        return Err(Error::Shape(format!("trajectories must share a [T, n, 2] shape, got {:?} and {:?}", s, gt.shape())));
    }
    Ok((s[0], s[1]))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean Euclidean error over every pedestrian and predicted step.
pub fn ade(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (t, n) = check_pair(pred, gt)?;
    let total: f64 = pred.data().chunks_exact(2).zip(gt.data().chunks_exact(2)).map(|(a, b)| dist(a, b)).sum();
    Ok(total / (t * n) as f64)
}

/// Mean Euclidean error at the last predicted step.
pub fn fde(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (t, n) = check_pair(pred, gt)?;
    let from = (t - 1) * n * 2;
    let total: f64 = pred.data()[from..].chunks_exact(2).zip(gt.data()[from..].chunks_exact(2)).map(|(a, b)| dist(a, b)).sum();
    Ok(total / n as f64)
}

/// How the best of several samples is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Selection {
    /// One sample: the lowest ADE, reported with its own FDE.
    #[default]
    ByAde,
    /// Minimum ADE and minimum FDE taken independently.
    PerMetric,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestOfN {
    pub ade: f64,
    pub fde: f64,
    /// Index of the lowest-ADE sample.
    pub index: usize,
}

/// Draw `n` trajectories from `dist`, anchored at `origin`, and score the closest to `gt`.
///
/// Ties go to the earliest sample. Samples are drawn in order from `rng`,
/// so a larger `n` on the same stream sees a superset of the draws.
pub fn best_of_n<R: Rng + ?Sized>(
    dist: &BiGaussianSeq,
    origin: &[[f64; 2]],
    gt: &Tensor,
    n: usize,
    selection: Selection,
    rng: &mut R,
) -> Result<BestOfN> {
    if n == 0 {
        return Err(Error::Input("best-of-N needs at least one sample".into()));
    }
    let mut best = BestOfN { ade: f64::INFINITY, fde: f64::INFINITY, index: 0 };
    let mut min_fde = f64::INFINITY;
    for k in 0..n {
        let pred = displacements_to_absolute(&sample_displacements(dist, rng), origin)?;
        let (a, f) = (ade(&pred, gt)?, fde(&pred, gt)?);
        if a < best.ade {
            best = BestOfN { ade: a, fde: f, index: k };
        }
        min_fde = min_fde.min(f);
    }
    if selection == Selection::PerMetric {
        best.fde = min_fde;
    }
    Ok(best)
}

/// Point-weighted totals for one slice of the evaluation set.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GroupStats {
    pub n_windows: usize,
    pub n_pedestrians: usize,
    /// Pedestrian-steps scored.
    pub n_points: usize,
    ade_sum: f64,
    fde_sum: f64,
}

impl GroupStats {
    fn add(&mut self, ade: f64, fde: f64, n_peds: usize, t_pred: usize) {
        self.n_windows += 1;
        self.n_pedestrians += n_peds;
        self.n_points += n_peds * t_pred;
        self.ade_sum += ade * (n_peds * t_pred) as f64;
        self.fde_sum += fde * n_peds as f64;
    }

    pub fn ade(&self) -> f64 {
        if self.n_points == 0 {
            0.0
        } else {
            self.ade_sum / self.n_points as f64
        }
    }

    pub fn fde(&self) -> f64 {
        if self.n_pedestrians == 0 {
            0.0
        } else {
            self.fde_sum / self.n_pedestrians as f64
        }
    }
}

/// Aggregate metrics for one predictor over a set of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub samples_per_window: usize,
    pub overall: GroupStats,
    pub groups: BTreeMap<DensityGroup, GroupStats>,
}

impl EvalReport {
    pub fn new(model: impl Into<String>, samples_per_window: usize) -> Self {
        Self { model: model.into(), samples_per_window, overall: GroupStats::default(), groups: BTreeMap::new() }
    }

    /// Fold in one window's scores. ADE is weighted by pedestrian-steps, FDE by pedestrians.
    pub fn add_window(&mut self, group: DensityGroup, ade: f64, fde: f64, n_peds: usize, t_pred: usize) {
        self.overall.add(ade, fde, n_peds, t_pred);
        self.groups.entry(group).or_default().add(ade, fde, n_peds, t_pred);
    }

    pub fn ade(&self) -> f64 {
        self.overall.ade()
    }

    pub fn fde(&self) -> f64 {
        self.overall.fde()
    }

    pub fn n_windows(&self) -> usize {
        self.overall.n_windows
    }

    pub fn n_pedestrians(&self) -> usize {
        self.overall.n_pedestrians
    }
}

pub const REPORT_CSV_HEADER: &str = "model,group,samples,n_windows,n_pedestrians,ade,fde";

/// One row per model and group, plus an `all` row per model.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        let rows = std::iter::once(("all".to_string(), &r.overall)).chain(r.groups.iter().map(|(g, s)| (g.to_string(), s)));
        for (name, s) in rows {
            let _ = writeln!(out, "{},{},{},{},{},{:.6},{:.6}", r.model, name, r.samples_per_window, s.n_windows, s.n_pedestrians, s.ade(), s.fde());
        }
    }
    out
}

/// Aligned text table: one row per model, `ADE/FDE` per density group and overall.
pub fn reports_to_table(reports: &[EvalReport]) -> String {
    let groups: Vec<DensityGroup> =
        DensityGroup::ALL.iter().copied().filter(|g| reports.iter().any(|r| r.groups.contains_key(g))).collect();
    let mut header = vec!["model".to_string()];
    header.extend(groups.iter().map(|g| g.to_string()));
    header.push("all".into());
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![r.model.clone()];
        for g in &groups {
            row.push(match r.groups.get(g) {
                Some(s) => format!("{:.3}/{:.3}", s.ade(), s.fde()),
                None => "-".into(),
            });
        }
        row.push(format!("{:.3}/{:.3}", r.ade(), r.fde()));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    let _ = writeln!(out, "(ADE/FDE in metres)");
    out
}
