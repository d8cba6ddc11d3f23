//! Segmentation quality against ground-truth regions.
//!
//! Per (region r, segment s) pair:
//!   OS = 1 − |r ∩ s| / |r|
//!   US = 1 − |r ∩ s| / |s|
//!   ED = sqrt((OS² + US²) / 2)
//! Each region is matched to the segment with the largest pixel
//! intersection; a segment may serve several regions.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cube::GroundTruth;
use crate::segment::SegmentMap;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("empty pixel set on the {side} side")]
    EmptySet { side: &'static str },
    #[error("ground truth is {gt_h}x{gt_w}, segment map is {seg_h}x{seg_w}")]
    GridMismatch {
        gt_h: usize,
        gt_w: usize,
        seg_h: usize,
        seg_w: usize,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub os: f64,
    pub us: f64,
    pub ed: f64,
}

pub(crate) fn metrics_from_counts(
    region_area: usize,
    segment_area: usize,
    intersection: usize,
) -> PairMetrics {
    let os = 1.0 - intersection as f64 / region_area as f64;
    let us = 1.0 - intersection as f64 / segment_area as f64;
    PairMetrics {
        os,
        us,
        ed: ((os * os + us * us) / 2.0).sqrt(),
    }
}

/// OS/US/ED between two explicit pixel sets.
pub fn pair_metrics(
    region: &[(usize, usize)],
    segment: &[(usize, usize)],
) -> Result<PairMetrics, MetricsError> {
    if region.is_empty() {
        return Err(MetricsError::EmptySet { side: "region" });
    }
    if segment.is_empty() {
        return Err(MetricsError::EmptySet { side: "segment" });
    }
    let set: std::collections::HashSet<_> = region.iter().collect();
    let intersection = segment.iter().filter(|p| set.contains(p)).count();
    Ok(metrics_from_counts(
        region.len(),
        segment.len(),
        intersection,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionEval {
    pub region_id: u32,
    pub class_name: String,
    pub matched_segment_id: u32,
    pub intersection_px: usize,
    pub os: f64,
    pub us: f64,
    pub ed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub os_mean: f64,
    pub os_median: f64,
    pub us_mean: f64,
    pub us_median: f64,
    pub ed_mean: f64,
    pub ed_median: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_region: Vec<RegionEval>,
    pub overall: MetricSummary,
    pub per_class: BTreeMap<String, MetricSummary>,
    /// Regions with zero intersection against every segment; excluded from
    /// the aggregates.
    pub unmatched_regions: Vec<u32>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn summarize(rows: &[&RegionEval]) -> MetricSummary {
    let collect = |f: fn(&RegionEval) -> f64| -> (f64, f64) {
        let mut v: Vec<f64> = rows.iter().map(|r| f(r)).collect();
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (mean, median(&v))
    };
    let (os_mean, os_median) = collect(|r| r.os);
    let (us_mean, us_median) = collect(|r| r.us);
    let (ed_mean, ed_median) = collect(|r| r.ed);
    MetricSummary {
        os_mean,
        os_median,
        us_mean,
        us_median,
        ed_mean,
        ed_median,
    }
}

/// Matches every ground-truth region to the segment maximizing pixel
/// intersection (ties to the lower segment id) and aggregates OS/US/ED
/// overall and per class.
pub fn match_segments(gt: &GroundTruth, smap: &SegmentMap) -> Result<EvalReport, MetricsError> {
    if gt.height != smap.height || gt.width != smap.width {
        return Err(MetricsError::GridMismatch {
            gt_h: gt.height,
            gt_w: gt.width,
            seg_h: smap.height,
            seg_w: smap.width,
        });
    }
    let mut per_region = Vec::new();
    let mut unmatched = Vec::new();
    for region in &gt.regions {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &(r, c) in &region.pixels {
            let sid = smap.segment_id(r, c);
            if sid != 0 {
                *counts.entry(sid).or_default() += 1;
            }
        }
        // BTreeMap iterates ids ascending, so strict `>` keeps the lower id
        // on ties.
        let mut best: Option<(u32, usize)> = None;
        for (&sid, &n) in &counts {
            if best.is_none_or(|(_, bn)| n > bn) {
                best = Some((sid, n));
            }
        }
        match best {
            None => unmatched.push(region.id),
            Some((sid, intersection)) => {
                let seg_area = smap.segments[(sid - 1) as usize].area;
                let m = metrics_from_counts(region.pixels.len(), seg_area, intersection);
                per_region.push(RegionEval {
                    region_id: region.id,
                    class_name: region.class_name.clone(),
                    matched_segment_id: sid,
                    intersection_px: intersection,
                    os: m.os,
                    us: m.us,
                    ed: m.ed,
                });
            }
        }
    }
    let all: Vec<&RegionEval> = per_region.iter().collect();
    let overall = if all.is_empty() {
        MetricSummary {
            os_mean: f64::NAN,
            os_median: f64::NAN,
            us_mean: f64::NAN,
            us_median: f64::NAN,
            ed_mean: f64::NAN,
            ed_median: f64::NAN,
        }
    } else {
        summarize(&all)
    };
    let mut per_class = BTreeMap::new();
    let mut by_class: BTreeMap<&str, Vec<&RegionEval>> = BTreeMap::new();
    for row in &per_region {
        by_class.entry(&row.class_name).or_default().push(row);
    }
    for (class, rows) in by_class {
        per_class.insert(class.to_string(), summarize(&rows));
    }
    Ok(EvalReport {
        per_region,
        overall,
        per_class,
        unmatched_regions: unmatched,
    })
}

/// One CSV row per evaluated region.
pub fn write_csv<W: Write>(report: &EvalReport, writer: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "region_id",
        "class_name",
        "matched_segment_id",
        "intersection_px",
        "os",
        "us",
        "ed",
    ])?;
    for row in &report.per_region {
        w.write_record([
            row.region_id.to_string(),
            row.class_name.clone(),
            row.matched_segment_id.to_string(),
            row.intersection_px.to_string(),
            row.os.to_string(),
            row.us.to_string(),
            row.ed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::GtRegion;
    use crate::segment::{connected_components, ClusterMap};

    fn rect(r0: usize, c0: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut px = Vec::new();
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                px.push((r, c));
            }
        }
        px
    }

    #[test]
    fn perfect_match_is_zero() {
        let a = rect(0, 0, 2, 3);
        let m = pair_metrics(&a, &a).unwrap();
        assert_eq!((m.os, m.us, m.ed), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_overlap() {
        // |r|=100, |s|=100, |r∩s|=50.
        let r = rect(0, 0, 10, 10);
        let s = rect(0, 5, 10, 10);
        let m = pair_metrics(&r, &s).unwrap();
        assert_eq!(m.os, 0.5);
        assert_eq!(m.us, 0.5);
        assert_eq!(m.ed, 0.5);
    }

    #[test]
    fn region_inside_segment() {
        // |r|=100 inside |s|=200.
        let r = rect(0, 0, 10, 10);
        let s = rect(0, 0, 10, 20);
        let m = pair_metrics(&r, &s).unwrap();
        assert_eq!(m.os, 0.0);
        assert_eq!(m.us, 0.5);
        assert_eq!(m.ed, 0.125f64.sqrt());
    }

    #[test]
    fn empty_sets_error() {
        let a = rect(0, 0, 1, 1);
        assert!(matches!(
            pair_metrics(&[], &a),
            Err(MetricsError::EmptySet { side: "region" })
        ));
        assert!(matches!(
            pair_metrics(&a, &[]),
            Err(MetricsError::EmptySet { side: "segment" })
        ));
    }

    #[test]
    fn swapping_sides_swaps_os_and_us() {
        let r = rect(0, 0, 3, 4);
        let s = rect(1, 1, 4, 4);
        let a = pair_metrics(&r, &s).unwrap();
        let b = pair_metrics(&s, &r).unwrap();
        assert_eq!(a.os, b.us);
        assert_eq!(a.us, b.os);
        assert!((a.ed - b.ed).abs() < 1e-15);
    }

    #[test]
    fn growing_the_segment_grows_us() {
        let r = rect(0, 0, 2, 2);
        let mut prev_us = 0.0;
        for extra in 0..4 {
            let s = rect(0, 0, 2, 2 + extra);
            let m = pair_metrics(&r, &s).unwrap();
            assert!(m.us >= prev_us);
            prev_us = m.us;
        }
    }

    fn toy_setup() -> (GroundTruth, SegmentMap) {
        // Segment map: left 3 columns cluster 1, right 3 cluster 2 on 4x6.
        let labels: Vec<u32> = (0..24).map(|i| if i % 6 < 3 { 1 } else { 2 }).collect();
        let smap = connected_components(&ClusterMap {
            height: 4,
            width: 6,
            labels,
        });
        let gt = GroundTruth {
            height: 4,
            width: 6,
            regions: vec![
                GtRegion {
                    id: 1,
                    class_name: "left".into(),
                    pixels: rect(0, 0, 4, 3),
                },
                GtRegion {
                    id: 2,
                    class_name: "straddler".into(),
                    // Rows 0..2, cols 1..6: 4 px on the left segment, 6 px
                    // on the right one.
                    pixels: rect(0, 1, 2, 5),
                },
            ],
        };
        (gt, smap)
    }

    #[test]
    fn exact_region_scores_zero() {
        let (gt, smap) = toy_setup();
        let report = match_segments(&gt, &smap).unwrap();
        let row = &report.per_region[0];
        assert_eq!(row.matched_segment_id, 1);
        assert_eq!((row.os, row.us, row.ed), (0.0, 0.0, 0.0));
    }

    #[test]
    fn straddling_region_matches_bigger_share() {
        let (gt, smap) = toy_setup();
        let report = match_segments(&gt, &smap).unwrap();
        let row = &report.per_region[1];
        // 4 px on segment 1 vs 6 px on segment 2.
        assert_eq!(row.matched_segment_id, 2);
        assert_eq!(row.intersection_px, 6);
    }

    #[test]
    fn background_only_region_is_unmatched() {
        let labels = vec![0, 0, 0, 1];
        let smap = connected_components(&ClusterMap {
            height: 2,
            width: 2,
            labels,
        });
        let gt = GroundTruth {
            height: 2,
            width: 2,
            regions: vec![
                GtRegion {
                    id: 1,
                    class_name: "bg".into(),
                    pixels: vec![(0, 0), (0, 1)],
                },
                GtRegion {
                    id: 2,
                    class_name: "ok".into(),
                    pixels: vec![(1, 1)],
                },
            ],
        };
        let report = match_segments(&gt, &smap).unwrap();
        assert_eq!(report.unmatched_regions, vec![1]);
        assert_eq!(report.per_region.len(), 1);
        assert_eq!(report.overall.ed_mean, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (gt, _) = toy_setup();
        let smap = connected_components(&ClusterMap {
            height: 2,
            width: 2,
            labels: vec![1; 4],
        });
        assert!(matches!(
            match_segments(&gt, &smap),
            Err(MetricsError::GridMismatch { .. })
        ));
    }

    #[test]
    fn report_invariants_hold() {
        let (gt, smap) = toy_setup();
        let report = match_segments(&gt, &smap).unwrap();
        for row in &report.per_region {
            assert!((0.0..=1.0).contains(&row.os));
            assert!((0.0..=1.0).contains(&row.us));
            let ed = ((row.os * row.os + row.us * row.us) / 2.0).sqrt();
            assert!((row.ed - ed).abs() < 1e-12);
        }
        assert!(report.per_class.contains_key("left"));
        assert!(report.per_class.contains_key("straddler"));
    }

    #[test]
    fn csv_has_one_row_per_region() {
        let (gt, smap) = toy_setup();
        let report = match_segments(&gt, &smap).unwrap();
        let mut buf = Vec::new();
        write_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + report.per_region.len());
        assert!(text.starts_with("region_id,class_name"));
    }
}
