//! Planar convex hull and rotating-calipers diameter.

/// Convex hull in counter-clockwise order without collinear points.
pub(crate) fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Largest pairwise distance among the points.
pub(crate) fn diameter(points: &[[f64; 2]]) -> f64 {
    let h = convex_hull(points);
    let d2 = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    match h.len() {
        0 | 1 => 0.0,
        2 => d2(&h[0], &h[1]).sqrt(),
        m => {
            let area2 = |a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]| {
                ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs()
            };
            let mut best: f64 = 0.0;
            let mut j = 1;
            for i in 0..m {
                let ni = (i + 1) % m;
                // Advance the antipodal pointer while the triangle grows.
                while area2(&h[i], &h[ni], &h[(j + 1) % m]) > area2(&h[i], &h[ni], &h[j]) {
                    j = (j + 1) % m;
                }
                best = best.max(d2(&h[i], &h[j])).max(d2(&h[ni], &h[j]));
            }
            best.sqrt()
        }
    }
}
