//! From a fitted model to spatial segments: per-pixel cluster assignment,
//! 4-connected components over equal cluster labels, and boundary masks.

use rayon::prelude::*;

use crate::cube::HsiCube;
use crate::model::{self, ModelParams};

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error("cube has {cube} bands but the model expects {model}")]
    BandMismatch { model: usize, cube: usize },
    #[error(transparent)]
    Model(#[from] model::ModelError),
}

/// Which rule turns a spectrum into a cluster id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictMode {
    /// argmax of the component density alone (the default rule).
    #[default]
    MaxLikelihood,
    /// argmax of π-weighted density (posterior mode).
    Weighted,
}

/// Per-pixel cluster ids in [1, K]; 0 marks background pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl ClusterMap {
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }
}

/// Runs the model over every valid pixel of a standardized cube.
pub fn assign_clusters(theta: &ModelParams, cube: &HsiCube) -> Result<ClusterMap, SegmentError> {
    assign_clusters_with_mode(theta, cube, PredictMode::MaxLikelihood)
}

pub fn assign_clusters_with_mode(
    theta: &ModelParams,
    cube: &HsiCube,
    mode: PredictMode,
) -> Result<ClusterMap, SegmentError> {
    if cube.bands() != theta.d {
        return Err(SegmentError::BandMismatch {
            model: theta.d,
            cube: cube.bands(),
        });
    }
    let d = cube.bands();
    let labels: Vec<u32> = (0..cube.height() * cube.width())
        .into_par_iter()
        .map_init(
            || vec![0f64; d],
            |scratch, p| {
                if !cube.mask()[p] {
                    return 0u32;
                }
                for (s, &v) in scratch.iter_mut().zip(&cube.data()[p * d..(p + 1) * d]) {
                    *s = v as f64;
                }
                let id = match mode {
                    PredictMode::MaxLikelihood => model::predict(theta, scratch),
                    PredictMode::Weighted => model::predict_weighted(theta, scratch),
                };
                id.expect("dimensions checked above") as u32
            },
        )
        .collect();
    Ok(ClusterMap {
        height: cube.height(),
        width: cube.width(),
        labels,
    })
}

/// One maximal 4-connected set of equal-cluster pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: u32,
    pub cluster_id: u32,
    pub area: usize,
    /// (min_row, min_col, max_row, max_col), inclusive.
    pub bbox: (usize, usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct SegmentMap {
    pub height: usize,
    pub width: usize,
    /// Per-pixel segment id; 0 = background.
    pub segment_ids: Vec<u32>,
    pub segments: Vec<Segment>,
}

impl SegmentMap {
    pub fn segment_id(&self, row: usize, col: usize) -> u32 {
        self.segment_ids[row * self.width + col]
    }
}

/// Array-backed union-find with path halving.
pub struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let grand = self.parent[self.parent[x] as usize];
            self.parent[x] = grand;
            x = grand as usize;
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so discovery order stays raster-stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo as u32;
        }
    }
}

/// 4-connected components over equal nonzero cluster labels; segment ids are
/// assigned in raster-scan discovery order starting at 1.
pub fn connected_components(cmap: &ClusterMap) -> SegmentMap {
    let (h, w) = (cmap.height, cmap.width);
    let mut uf = UnionFind::new(h * w);
    for r in 0..h {
        for c in 0..w {
            let l = cmap.label(r, c);
            if l == 0 {
                continue;
            }
            if c > 0 && cmap.label(r, c - 1) == l {
                uf.union(r * w + c, r * w + c - 1);
            }
            if r > 0 && cmap.label(r - 1, c) == l {
                uf.union(r * w + c, (r - 1) * w + c);
            }
        }
    }
    let mut id_of_root: Vec<u32> = vec![0; h * w];
    let mut segment_ids = vec![0u32; h * w];
    let mut segments: Vec<Segment> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let l = cmap.labels[p];
            if l == 0 {
                continue;
            }
            let root = uf.find(p);
            if id_of_root[root] == 0 {
                segments.push(Segment {
                    id: segments.len() as u32 + 1,
                    cluster_id: l,
                    area: 0,
                    bbox: (r, c, r, c),
                });
                id_of_root[root] = segments.len() as u32;
            }
            let id = id_of_root[root];
            segment_ids[p] = id;
            let seg = &mut segments[(id - 1) as usize];
            seg.area += 1;
            seg.bbox.0 = seg.bbox.0.min(r);
            seg.bbox.1 = seg.bbox.1.min(c);
            seg.bbox.2 = seg.bbox.2.max(r);
            seg.bbox.3 = seg.bbox.3.max(c);
        }
    }
    SegmentMap {
        height: h,
        width: w,
        segment_ids,
        segments,
    }
}

/// A segment pixel is boundary iff any 4-neighbor (or the image edge) holds
/// a different segment id. Background pixels are never boundary.
pub fn boundaries(smap: &SegmentMap) -> Vec<bool> {
    let (h, w) = (smap.height, smap.width);
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let id = smap.segment_id(r, c);
            if id == 0 {
                continue;
            }
            let differs = |rr: isize, cc: isize| -> bool {
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                    return true;
                }
                smap.segment_id(rr as usize, cc as usize) != id
            };
            let (ri, ci) = (r as isize, c as isize);
            out[r * w + c] = differs(ri - 1, ci)
                || differs(ri + 1, ci)
                || differs(ri, ci - 1)
                || differs(ri, ci + 1);
        }
    }
    out
}

/// Merges every segment smaller than `min_area` into its largest 4-adjacent
/// segment (ties to the lower id), smallest segments first. Segments with no
/// neighbor (islands in background) are left alone. Ids are renumbered in
/// raster-scan order afterwards.
pub fn merge_small_segments(smap: &SegmentMap, min_area: usize) -> SegmentMap {
    let (h, w) = (smap.height, smap.width);
    let mut ids = smap.segment_ids.clone();
    let mut area: Vec<usize> = std::iter::once(0)
        .chain(smap.segments.iter().map(|s| s.area))
        .collect();
    let mut alive: Vec<bool> = vec![true; area.len()];
    let mut skipped: Vec<bool> = vec![false; area.len()];

    loop {
        // Smallest live sub-threshold segment not yet known to be isolated.
        let candidate = (1..area.len())
            .filter(|&s| alive[s] && !skipped[s] && area[s] < min_area)
            .min_by_key(|&s| (area[s], s));
        let Some(victim) = candidate else { break };

        // Largest adjacent segment.
        let mut best: Option<u32> = None;
        for r in 0..h {
            for c in 0..w {
                if ids[r * w + c] != victim as u32 {
                    continue;
                }
                let mut consider = |rr: isize, cc: isize| {
                    if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                        return;
                    }
                    let other = ids[rr as usize * w + cc as usize];
                    if other != 0 && other != victim as u32 {
                        let better = match best {
                            None => true,
                            Some(b) => {
                                let (ba, oa) = (area[b as usize], area[other as usize]);
                                oa > ba || (oa == ba && other < b)
                            }
                        };
                        if better {
                            best = Some(other);
                        }
                    }
                };
                let (ri, ci) = (r as isize, c as isize);
                consider(ri - 1, ci);
                consider(ri + 1, ci);
                consider(ri, ci - 1);
                consider(ri, ci + 1);
            }
        }
        match best {
            Some(target) => {
                for id in ids.iter_mut() {
                    if *id == victim as u32 {
                        *id = target;
                    }
                }
                area[target as usize] += area[victim];
                alive[victim] = false;
            }
            None => skipped[victim] = true,
        }
    }

    // Renumber in raster-scan discovery order and rebuild the segment list.
    // Absorbed pixels already carry their absorber's original id, so the
    // rebuilt cluster_id is the absorber's.
    let mut remap: Vec<u32> = vec![0; smap.segments.len() + 1];
    let mut segments: Vec<Segment> = Vec::new();
    let mut out_ids = vec![0u32; h * w];
    for r in 0..h {
        for c in 0..w {
            let old = ids[r * w + c];
            if old == 0 {
                continue;
            }
            if remap[old as usize] == 0 {
                segments.push(Segment {
                    id: segments.len() as u32 + 1,
                    cluster_id: smap.segments[(old - 1) as usize].cluster_id,
                    area: 0,
                    bbox: (r, c, r, c),
                });
                remap[old as usize] = segments.len() as u32;
            }
            let id = remap[old as usize];
            out_ids[r * w + c] = id;
            let seg = &mut segments[(id - 1) as usize];
            seg.area += 1;
            seg.bbox.0 = seg.bbox.0.min(r);
            seg.bbox.1 = seg.bbox.1.min(c);
            seg.bbox.2 = seg.bbox.2.max(r);
            seg.bbox.3 = seg.bbox.3.max(c);
        }
    }
    SegmentMap {
        height: h,
        width: w,
        segment_ids: out_ids,
        segments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::HsiCube;
    use crate::model::ModelParams;

    fn cmap(h: usize, w: usize, labels: Vec<u32>) -> ClusterMap {
        ClusterMap {
            height: h,
            width: w,
            labels,
        }
    }

    fn symmetric_model() -> ModelParams {
        ModelParams::new(
            2,
            1,
            vec![0.5, 0.5],
            vec![-1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn single_component_labels_everything_one() {
        let theta = ModelParams::new(1, 1, vec![1.0], vec![0.5], vec![1.0], vec![1.0]).unwrap();
        let cube = HsiCube::new(2, 2, vec![400.0], vec![1.0, 2.0, 0.0, 3.0]).unwrap();
        let cm = assign_clusters(&theta, &cube).unwrap();
        assert_eq!(cm.labels, vec![1, 1, 0, 1]);
    }

    #[test]
    fn pixels_at_each_mean_get_their_component() {
        let cube = HsiCube::new(1, 2, vec![400.0], vec![-1.0, 1.0]).unwrap();
        let cm = assign_clusters(&symmetric_model(), &cube).unwrap();
        assert_eq!(cm.labels, vec![1, 2]);
    }

    #[test]
    fn permuting_components_permutes_labels() {
        let theta = symmetric_model();
        let swapped = ModelParams::new(
            2,
            1,
            vec![0.5, 0.5],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let cube = HsiCube::new(1, 4, vec![400.0], vec![-1.5, -0.6, 0.7, 1.2]).unwrap();
        let a = assign_clusters(&theta, &cube).unwrap().labels;
        let b = assign_clusters(&swapped, &cube).unwrap().labels;
        let flipped: Vec<u32> = b.iter().map(|&l| if l == 1 { 2 } else { 1 }).collect();
        assert_eq!(a, flipped);
    }

    #[test]
    fn band_mismatch_is_rejected() {
        let theta = symmetric_model();
        let cube = HsiCube::new(1, 1, vec![400.0, 500.0], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            assign_clusters(&theta, &cube),
            Err(SegmentError::BandMismatch { model: 1, cube: 2 })
        ));
    }

    #[test]
    fn checkerboard_shatters_into_singletons() {
        let labels: Vec<u32> = (0..16)
            .map(|i| if (i / 4 + i % 4) % 2 == 0 { 1 } else { 2 })
            .collect();
        let sm = connected_components(&cmap(4, 4, labels));
        assert_eq!(sm.segments.len(), 16);
        assert!(sm.segments.iter().all(|s| s.area == 1));
    }

    #[test]
    fn uniform_grid_is_one_segment() {
        let sm = connected_components(&cmap(3, 5, vec![2; 15]));
        assert_eq!(sm.segments.len(), 1);
        assert_eq!(sm.segments[0].area, 15);
        assert_eq!(sm.segments[0].cluster_id, 2);
        assert_eq!(sm.segments[0].bbox, (0, 0, 2, 4));
    }

    #[test]
    fn diagonal_contact_stays_separate() {
        let labels = vec![1, 0, 0, 1];
        let sm = connected_components(&cmap(2, 2, labels));
        assert_eq!(sm.segments.len(), 2);
    }

    #[test]
    fn segment_ids_follow_raster_discovery_order() {
        let labels = vec![
            2, 2, 3, //
            1, 1, 3, //
        ];
        let sm = connected_components(&cmap(2, 3, labels));
        // Discovery order: cluster-2 blob, cluster-3 blob, cluster-1 blob.
        assert_eq!(sm.segment_id(0, 0), 1);
        assert_eq!(sm.segment_id(0, 2), 2);
        assert_eq!(sm.segment_id(1, 0), 3);
        assert_eq!(
            sm.segments.iter().map(|s| s.cluster_id).collect::<Vec<_>>(),
            vec![2, 3, 1]
        );
    }

    #[test]
    fn partition_covers_exactly_the_valid_pixels() {
        let labels = vec![1, 0, 2, 2, 0, 1, 1, 2, 0];
        let sm = connected_components(&cmap(3, 3, labels.clone()));
        let valid = labels.iter().filter(|&&l| l != 0).count();
        let total: usize = sm.segments.iter().map(|s| s.area).sum();
        assert_eq!(total, valid);
        for (p, &l) in labels.iter().enumerate() {
            assert_eq!(sm.segment_ids[p] == 0, l == 0);
        }
        assert!(sm.segments.iter().all(|s| s.area > 0));
    }

    #[test]
    fn components_are_idempotent_on_their_own_projection() {
        let labels = vec![1, 1, 2, 2, 1, 2, 1, 1, 1, 2, 2, 2];
        let sm = connected_components(&cmap(3, 4, labels));
        // Re-run on the segment ids themselves: structure must be identical.
        let again = connected_components(&cmap(3, 4, sm.segment_ids.clone()));
        assert_eq!(again.segment_ids, sm.segment_ids);
        assert_eq!(again.segments.len(), sm.segments.len());
    }

    #[test]
    fn full_image_boundary_is_the_border_ring() {
        let sm = connected_components(&cmap(4, 5, vec![1; 20]));
        let b = boundaries(&sm);
        for r in 0..4 {
            for c in 0..5 {
                let expected = r == 0 || r == 3 || c == 0 || c == 4;
                assert_eq!(b[r * 5 + c], expected, "({r},{c})");
            }
        }
    }

    #[test]
    fn singleton_segment_is_boundary() {
        let labels = vec![0, 0, 0, 0, 1, 0, 0, 0, 0];
        let sm = connected_components(&cmap(3, 3, labels));
        let b = boundaries(&sm);
        assert!(b[4]);
        assert_eq!(b.iter().filter(|&&x| x).count(), 1);
    }

    #[test]
    fn checkerboard_is_all_boundary() {
        let labels: Vec<u32> = (0..16)
            .map(|i| if (i / 4 + i % 4) % 2 == 0 { 1 } else { 2 })
            .collect();
        let sm = connected_components(&cmap(4, 4, labels));
        let b = boundaries(&sm);
        assert!(b.iter().all(|&x| x));
    }

    #[test]
    fn boundaries_invariant_under_id_permutation() {
        let labels = vec![1, 1, 2, 2, 1, 2, 3, 3, 3];
        let sm = connected_components(&cmap(3, 3, labels));
        let base = boundaries(&sm);
        let mut permuted = sm.clone();
        let perm = |id: u32| -> u32 {
            match id {
                0 => 0,
                x => (x % permuted_max(&sm)) + 1,
            }
        };
        fn permuted_max(sm: &SegmentMap) -> u32 {
            sm.segments.len() as u32
        }
        for id in permuted.segment_ids.iter_mut() {
            *id = perm(*id);
        }
        assert_eq!(boundaries(&permuted), base);
    }

    #[test]
    fn small_segments_merge_into_largest_neighbor() {
        // A 1-px segment of cluster 2 wedged between a big cluster-1 blob
        // (left) and a smaller cluster-3 blob (right).
        let labels = vec![
            1, 1, 1, 2, 3, //
            1, 1, 1, 3, 3, //
        ];
        let sm = connected_components(&cmap(2, 5, labels));
        assert_eq!(sm.segments.len(), 3);
        let merged = merge_small_segments(&sm, 2);
        assert_eq!(merged.segments.len(), 2);
        // The singleton joined the 6-px cluster-1 segment, not the 3-px one.
        assert_eq!(merged.segment_id(0, 3), merged.segment_id(0, 0));
        let total: usize = merged.segments.iter().map(|s| s.area).sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn isolated_small_segment_survives_merge() {
        let labels = vec![
            1, 0, 0, //
            0, 0, 0, //
            0, 0, 2,
        ];
        let sm = connected_components(&cmap(3, 3, labels));
        let merged = merge_small_segments(&sm, 5);
        assert_eq!(merged.segments.len(), 2);
    }
}
