//! Flowpipe size and safety metrics: reachable-set size over 1-D interval
//! unions or 2-D rectangle unions (exact sweep line), and minimum distance
//! from the flowpipe to a set of wall segments.

use serde::{Deserialize, Serialize};

use crate::geometry::{Interval, Segment};
use crate::reach::Flowpipe;
use crate::{Error, Result};

/// Total length covered by a union of intervals.
pub fn interval_union_width(ivs: &[Interval]) -> f64 {
    let mut sorted: Vec<&Interval> = ivs.iter().collect();
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut total = 0.0;
    let mut end = f64::NEG_INFINITY;
    for iv in sorted {
        if iv.hi > end {
            total += iv.hi - iv.lo.max(end);
            end = iv.hi;
        }
    }
    total
}

/// Exact area of a union of axis-aligned rectangles: sweep over x slabs,
/// within each slab sum the union of active y-intervals.
pub fn rect_union_area(rects: &[[Interval; 2]]) -> f64 {
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r[0].lo, r[0].hi]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 <= x0 {
            continue;
        }
        let active: Vec<Interval> = rects
            .iter()
            .filter(|r| r[0].lo <= x0 && r[0].hi >= x1)
            .map(|r| r[1])
            .collect();
        area += interval_union_width(&active) * (x1 - x0);
    }
    area
}

/// Reachable-set size: per-step size of the union of branch boxes projected
/// onto `dims` (width for one dimension, exact area for two), summed over
/// steps; also returns the per-step maximum.
pub fn rss(flowpipe: &Flowpipe, dims: &[usize]) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut max_step = 0.0f64;
    for boxes in &flowpipe.steps {
        let size = match dims {
            [d] => {
                let ivs: Vec<Interval> = boxes.iter().map(|b| b.dims[*d]).collect();
                interval_union_width(&ivs)
            }
            [dx, dy] => {
                let rects: Vec<[Interval; 2]> =
                    boxes.iter().map(|b| [b.dims[*dx], b.dims[*dy]]).collect();
                rect_union_area(&rects)
            }
            _ => {
                return Err(Error::Validation(
                    "reachable-set size supports 1 or 2 dimensions".into(),
                ))
            }
        };
        total += size;
        max_step = max_step.max(size);
    }
    Ok((total, max_step))
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    orient(a, b, p).abs() <= 1e-12
        && p[0] >= a[0].min(b[0]) - 1e-12
        && p[0] <= a[0].max(b[0]) + 1e-12
        && p[1] >= a[1].min(b[1]) - 1e-12
        && p[1] <= a[1].max(b[1]) + 1e-12
}

fn segments_intersect(s: &Segment, t: &Segment) -> bool {
    let (o1, o2) = (orient(s.a, s.b, t.a), orient(s.a, s.b, t.b));
    let (o3, o4) = (orient(t.a, t.b, s.a), orient(t.a, t.b, s.b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    on_segment(s.a, s.b, t.a)
        || on_segment(s.a, s.b, t.b)
        || on_segment(t.a, t.b, s.a)
        || on_segment(t.a, t.b, s.b)
}

fn segment_segment_distance(s: &Segment, t: &Segment) -> f64 {
    if segments_intersect(s, t) {
        return 0.0;
    }
    s.distance_to_point(t.a)
        .min(s.distance_to_point(t.b))
        .min(t.distance_to_point(s.a))
        .min(t.distance_to_point(s.b))
}

/// Euclidean distance from an axis-aligned rectangle to a segment; 0 when
/// they touch or the segment enters the rectangle.
pub fn rect_segment_distance(rect: &[Interval; 2], seg: &Segment) -> f64 {
    let inside = |p: [f64; 2]| rect[0].contains(p[0]) && rect[1].contains(p[1]);
    if inside(seg.a) || inside(seg.b) {
        return 0.0;
    }
    let (x0, x1, y0, y1) = (rect[0].lo, rect[0].hi, rect[1].lo, rect[1].hi);
    let edges = [
        Segment { a: [x0, y0], b: [x1, y0] },
        Segment { a: [x1, y0], b: [x1, y1] },
        Segment { a: [x1, y1], b: [x0, y1] },
        Segment { a: [x0, y1], b: [x0, y0] },
    ];
    edges
        .iter()
        .map(|e| segment_segment_distance(e, seg))
        .fold(f64::INFINITY, f64::min)
}

/// Minimum over steps, branches, and walls of the distance from the
/// projected position rectangle to the wall; 0 means contact (unsafe).
pub fn safe_distance(flowpipe: &Flowpipe, dims: [usize; 2], walls: &[Segment]) -> f64 {
    let mut min_d = f64::INFINITY;
    for boxes in &flowpipe.steps {
        for b in boxes {
            let rect = [b.dims[dims[0]], b.dims[dims[1]]];
            for w in walls {
                min_d = min_d.min(rect_segment_distance(&rect, w));
            }
        }
    }
    min_d
}

/// Summary emitted next to the flowpipe CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachMetrics {
    pub rss: f64,
    pub max_rss: f64,
    pub safe_distance: Option<f64>,
    pub per_step_branch_counts: Vec<usize>,
    pub wall_clock: f64,
}
