//! Attribute inference sets over a scalar sensitive attribute.
//!
//! With the other features held fixed, the baseline set `I_y` holds every
//! attribute value the classifier maps to the observed label `y`. If each
//! compatible value `z` is certified with radius `R_z`, then the released label
//! is also compatible with all of `[z - R_z, z + R_z]`. The union of those
//! intervals is the expanded set. The real line is discretized on an explicit
//! grid, so boundaries are reported to grid resolution.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decimal resolution that grid and trajectory points are snapped to.
const SNAP: f64 = 1e9;

fn snap(v: f64) -> f64 {
    (v * SNAP).round() / SNAP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::domain(format!("interval: invalid bounds [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Finite union of disjoint closed intervals, sorted by lower bound.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<Interval>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet::default()
    }

    /// Sorts and merges overlapping or touching intervals.
    pub fn from_intervals(mut intervals: Vec<Interval>) -> Self {
        intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => merged.push(iv),
            }
        }
        IntervalSet { intervals: merged }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, v: f64) -> bool {
        // intervals are sorted and disjoint
        let idx = self.intervals.partition_point(|iv| iv.hi < v);
        self.intervals.get(idx).is_some_and(|iv| iv.contains(v))
    }

    /// Every interval of `other` lies inside one interval of `self`.
    pub fn contains_set(&self, other: &IntervalSet) -> bool {
        other.intervals.iter().all(|iv| {
            let idx = self.intervals.partition_point(|s| s.hi < iv.lo);
            self.intervals
                .get(idx)
                .is_some_and(|s| s.lo <= iv.lo && iv.hi <= s.hi)
        })
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut all = self.intervals.clone();
        all.extend_from_slice(&other.intervals);
        IntervalSet::from_intervals(all)
    }

    pub fn min(&self) -> Option<f64> {
        self.intervals.first().map(|iv| iv.lo)
    }

    pub fn max(&self) -> Option<f64> {
        self.intervals.last().map(|iv| iv.hi)
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(Interval::width).sum()
    }
}

/// `lo..hi` entries separated by `;`; `{}` for the empty set.
impl fmt::Display for IntervalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return write!(f, "{{}}");
        }
        for (i, iv) in self.intervals.iter().enumerate() {
            if i > 0 {
                write!(f, ";")?;
            }
            write!(f, "{}..{}", iv.lo, iv.hi)?;
        }
        Ok(())
    }
}

/// Uniform grid over the sensitive attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApeGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl ApeGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let g = ApeGrid { lo, hi, step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::domain(format!("grid: need lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::domain(format!("grid: step must be positive, got {}", self.step)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        snap(self.lo + i as f64 * self.step)
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Grid points inside `[lo, hi]`.
    fn points_within(&self, lo: f64, hi: f64) -> impl Iterator<Item = f64> + '_ {
        let first = ((lo - self.lo) / self.step - 1e-9).ceil().max(0.0) as usize;
        (first..self.len())
            .map(move |i| self.point(i))
            .skip_while(move |&z| z < lo)
            .take_while(move |&z| z <= hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub threshold_b: f64,
    pub step_s: f64,
    pub count_j: usize,
}

/// `[B - j s for j in 0..=J]`, strictly decreasing.
pub fn build_trajectory(spec: &TrajectorySpec) -> Result<Vec<f64>> {
    if !(spec.step_s > 0.0) || !spec.step_s.is_finite() || !spec.threshold_b.is_finite() {
        return Err(Error::domain(format!(
            "trajectory: need finite B and positive step, got B={} s={}",
            spec.threshold_b, spec.step_s
        )));
    }
    Ok((0..=spec.count_j)
        .map(|j| snap(spec.threshold_b - j as f64 * spec.step_s))
        .collect())
}

/// Grid points `z` with `classify(z) == y`, merged into maximal runs of
/// consecutive grid points. Each run is reported as `[first, last]`.
pub fn baseline_inference_set<L: PartialEq>(
    mut classify: impl FnMut(f64) -> L,
    y: &L,
    grid: &ApeGrid,
) -> IntervalSet {
    let mut runs = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for z in grid.points() {
        if classify(z) == *y {
            open = Some(match open {
                Some((first, _)) => (first, z),
                None => (z, z),
            });
        } else if let Some((first, last)) = open.take() {
            runs.push(Interval { lo: first, hi: last });
        }
    }
    if let Some((first, last)) = open {
        runs.push(Interval { lo: first, hi: last });
    }
    // runs are already sorted and separated by at least one grid step
    IntervalSet { intervals: runs }
}

/// `baseline ∪ ⋃_z [z - R_z, z + R_z]` over the endpoints of each baseline
/// interval and the grid points inside it.
pub fn expanded_inference_set(
    baseline: &IntervalSet,
    mut radius_at: impl FnMut(f64) -> f64,
    grid: &ApeGrid,
) -> Result<IntervalSet> {
    let mut pieces = baseline.intervals.clone();
    let mut push = |z: f64, r: f64| -> Result<()> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::domain(format!("expanded_inference_set: radius {r} at z={z}")));
        }
        pieces.push(Interval { lo: z - r, hi: z + r });
        Ok(())
    };
    for iv in &baseline.intervals {
        push(iv.lo, radius_at(iv.lo))?;
        for z in grid.points_within(iv.lo, iv.hi) {
            if z > iv.lo && z < iv.hi {
                push(z, radius_at(z))?;
            }
        }
        if iv.hi > iv.lo {
            push(iv.hi, radius_at(iv.hi))?;
        }
    }
    Ok(IntervalSet::from_intervals(pieces))
}

/// `max(0, B - min(positives))`; 0 when nothing was predicted positive.
pub fn empirical_expansion(threshold_b: f64, positive_attribute_values: &[f64]) -> f64 {
    positive_attribute_values
        .iter()
        .copied()
        .reduce(f64::min)
        .map_or(0.0, |min| (threshold_b - min).max(0.0))
}

/// Histogram bin index with edges at `anchor + k * width`.
fn bin_index(v: f64, anchor: f64, width: f64) -> i64 {
    // snap first so values sitting on an edge land in the bin to their right
    snap((v - anchor) / width).floor() as i64
}

/// Expansion read off a histogram: `B` minus the lower edge of the leftmost
/// non-empty bin, with bin edges anchored at `B`.
pub fn binned_expansion(threshold_b: f64, positive_attribute_values: &[f64], width: f64) -> f64 {
    positive_attribute_values
        .iter()
        .map(|&v| bin_index(v, threshold_b, width))
        .min()
        .map_or(0.0, |k| (-(k as f64) * width).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub count: u64,
}

/// Counts per `width`-wide bin, edges anchored at `anchor`; only non-empty bins.
pub fn histogram(values: &[f64], anchor: f64, width: f64) -> Vec<HistogramBin> {
    let mut counts = std::collections::BTreeMap::<i64, u64>::new();
    for &v in values {
        *counts.entry(bin_index(v, anchor, width)).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(k, count)| HistogramBin {
            bin_lo: snap(anchor + k as f64 * width),
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(f64, f64)]) -> IntervalSet {
        IntervalSet::from_intervals(pairs.iter().map(|&(a, b)| Interval::new(a, b).unwrap()).collect())
    }

    #[test]
    fn trajectory_examples() {
        let t = build_trajectory(&TrajectorySpec {
            threshold_b: 33.4,
            step_s: 0.01,
            count_j: 500,
        })
        .unwrap();
        assert_eq!(t.len(), 501);
        assert_eq!(t[0], 33.4);
        assert_eq!(t[500], 28.4);
        assert!(t.windows(2).all(|w| w[0] > w[1]));

        let single = build_trajectory(&TrajectorySpec {
            threshold_b: 10.0,
            step_s: 1.0,
            count_j: 0,
        })
        .unwrap();
        assert_eq!(single, vec![10.0]);

        let four = build_trajectory(&TrajectorySpec {
            threshold_b: 10.0,
            step_s: 1.0,
            count_j: 3,
        })
        .unwrap();
        assert_eq!(four, vec![10.0, 9.0, 8.0, 7.0]);
    }

    #[test]
    fn constant_classifier_covers_grid() {
        let grid = ApeGrid::new(1.0, 2.0, 0.1).unwrap();
        let s = baseline_inference_set(|_| 1u8, &1, &grid);
        assert_eq!(s, set(&[(1.0, 2.0)]));
    }

    #[test]
    fn hard_threshold_baseline() {
        let grid = ApeGrid::new(28.4, 38.4, 0.01).unwrap();
        assert_eq!(grid.len(), 1001);
        let classify = |z: f64| usize::from(z >= 33.4);
        assert_eq!(baseline_inference_set(classify, &1, &grid), set(&[(33.4, 38.4)]));
        assert_eq!(baseline_inference_set(classify, &0, &grid), set(&[(28.4, 33.39)]));
    }

    #[test]
    fn uniform_radius_expands_both_ends() {
        let grid = ApeGrid::new(0.0, 10.0, 0.5).unwrap();
        let base = set(&[(2.0, 4.0)]);
        let out = expanded_inference_set(&base, |_| 1.0, &grid).unwrap();
        assert_eq!(out, set(&[(1.0, 5.0)]));
    }

    #[test]
    fn zero_radius_keeps_baseline() {
        let grid = ApeGrid::new(0.0, 10.0, 0.5).unwrap();
        let base = set(&[(2.0, 4.0), (6.0, 6.0)]);
        assert_eq!(expanded_inference_set(&base, |_| 0.0, &grid).unwrap(), base);
    }

    #[test]
    fn overlapping_expansions_merge() {
        let grid = ApeGrid::new(-5.0, 10.0, 0.25).unwrap();
        let base = set(&[(0.0, 1.0), (5.0, 6.0)]);
        let out = expanded_inference_set(&base, |_| 2.0, &grid).unwrap();
        assert_eq!(out, set(&[(-2.0, 8.0)]));
    }

    #[test]
    fn negative_radius_rejected() {
        let grid = ApeGrid::new(0.0, 1.0, 0.5).unwrap();
        assert!(expanded_inference_set(&set(&[(0.0, 1.0)]), |_| -0.1, &grid).is_err());
    }

    #[test]
    fn expansion_estimators() {
        assert!((empirical_expansion(33.4, &[32.4, 35.0]) - 1.0).abs() < 1e-12);
        assert_eq!(empirical_expansion(33.4, &[33.4, 34.0]), 0.0);
        assert_eq!(empirical_expansion(33.4, &[]), 0.0);
        assert!((empirical_expansion(33.4, &[33.0, 33.2]) - 0.4).abs() < 1e-12);

        // 33.0 sits on the edge of bin [33.0, 33.2)
        assert!((binned_expansion(33.4, &[33.0, 33.2], 0.2) - 0.4).abs() < 1e-12);
        assert!((binned_expansion(33.4, &[33.05], 0.2) - 0.4).abs() < 1e-12);
        assert_eq!(binned_expansion(33.4, &[33.4, 40.0], 0.2), 0.0);
    }

    #[test]
    fn histogram_counts_are_conserved() {
        let values = [33.4, 33.5, 33.61, 32.0, 33.39];
        let h = histogram(&values, 33.4, 0.2);
        assert_eq!(h.iter().map(|b| b.count).sum::<u64>(), values.len() as u64);
        assert_eq!(h[0], HistogramBin { bin_lo: 32.0, count: 1 });
        assert_eq!(h.last().unwrap().bin_lo, 33.6);
        assert!(h.iter().any(|b| b.bin_lo == 33.2 && b.count == 1));
        assert!(h.iter().any(|b| b.bin_lo == 33.4 && b.count == 2));
    }

    #[test]
    fn set_queries_and_display() {
        let s = set(&[(5.0, 6.0), (0.0, 1.0), (0.5, 2.0)]);
        assert_eq!(s.intervals().len(), 2);
        assert!(s.contains(1.5) && !s.contains(3.0) && s.contains(6.0));
        assert!(s.contains_set(&set(&[(0.2, 1.9), (5.5, 5.6)])));
        assert!(!s.contains_set(&set(&[(1.5, 5.5)])));
        assert_eq!(s.to_string(), "0..2;5..6");
        assert_eq!(IntervalSet::empty().to_string(), "{}");
    }
}
