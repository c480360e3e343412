//! Convex polygons in the plane: half-plane clipping and support functions.

/// Counter-clockwise vertices of the rectangle `[lo, hi]`.
pub(crate) fn rectangle(lo: [f64; 2], hi: [f64; 2]) -> Vec<[f64; 2]> {
    vec![[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]
}

/// Intersects a convex polygon with `{x : <a, x> <= b}`.
pub(crate) fn clip(poly: &[[f64; 2]], a: [f64; 2], b: f64) -> Vec<[f64; 2]> {
    let m = poly.len();
    let mut out = Vec::with_capacity(m + 1);
    let val = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
    for k in 0..m {
        let p = poly[k];
        let q = poly[(k + 1) % m];
        let (vp, vq) = (val(&p), val(&q));
        if vp <= 0.0 {
            out.push(p);
        }
        if (vp < 0.0 && vq > 0.0) || (vp > 0.0 && vq < 0.0) {
            let t = vp / (vp - vq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

/// Label of edges that come from the polygon being clipped rather than a cut.
pub(crate) const OUTLINE: u32 = u32::MAX;

/// [`clip`] for polygons whose vertices carry the label of the edge leaving
/// them. The new edge along the cut gets `label`.
pub(crate) fn clip_labelled(poly: &[([f64; 2], u32)], a: [f64; 2], b: f64, label: u32) -> Vec<([f64; 2], u32)> {
    let m = poly.len();
    let mut out = Vec::with_capacity(m + 1);
    let val = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
    let cross = |p: [f64; 2], q: [f64; 2], vp: f64, vq: f64| {
        let t = vp / (vp - vq);
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    };
    for k in 0..m {
        let (p, lp) = poly[k];
        let q = poly[(k + 1) % m].0;
        let (vp, vq) = (val(&p), val(&q));
        if vp <= 0.0 {
            out.push((p, lp));
            if vq > 0.0 {
                out.push((cross(p, q, vp, vq), label));
            }
        } else if vq < 0.0 {
            out.push((cross(p, q, vp, vq), lp));
        }
    }
    out
}

/// Total length of the edges of `poly` carrying each label other than [`OUTLINE`].
pub(crate) fn labelled_lengths(poly: &[([f64; 2], u32)], mut f: impl FnMut(u32, f64)) {
    let m = poly.len();
    for k in 0..m {
        let (p, l) = poly[k];
        if l != OUTLINE {
            let q = poly[(k + 1) % m].0;
            f(l, ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt());
        }
    }
}

/// `max_{p in poly} <v, p>`, or `-inf` for an empty polygon.
pub(crate) fn support(poly: &[[f64; 2]], v: [f64; 2]) -> f64 {
    poly.iter().map(|p| v[0] * p[0] + v[1] * p[1]).fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn area(poly: &[[f64; 2]]) -> f64 {
    let m = poly.len();
    let mut s = 0.0;
    for k in 0..m {
        let (p, q) = (poly[k], poly[(k + 1) % m]);
        s += p[0] * q[1] - p[1] * q[0];
    }
    0.5 * s.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_square_diagonally() {
        let sq = rectangle([0.0, 0.0], [1.0, 1.0]);
        let tri = clip(&sq, [1.0, 1.0], 1.0);
        assert!((area(&tri) - 0.5).abs() < 1e-15);
        assert!((support(&tri, [1.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((support(&tri, [1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!(clip(&sq, [1.0, 0.0], -1.0).is_empty());
        assert_eq!(support(&[], [1.0, 0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn labelled_cuts_record_their_edges() {
        let sq: Vec<_> = rectangle([0.0, 0.0], [1.0, 1.0]).into_iter().map(|p| (p, OUTLINE)).collect();
        let half = clip_labelled(&sq, [1.0, 0.0], 0.5, 7);
        let tri = clip_labelled(&half, [-1.0, -1.0], -1.0, 3);
        let pts: Vec<[f64; 2]> = tri.iter().map(|v| v.0).collect();
        assert!((area(&pts) - 0.125).abs() < 1e-15);
        let mut lens = std::collections::BTreeMap::new();
        labelled_lengths(&tri, |l, d| *lens.entry(l).or_insert(0.0) += d);
        assert!((lens[&7] - 0.5).abs() < 1e-15);
        assert!((lens[&3] - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(lens.len(), 2);
    }
}
