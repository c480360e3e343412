//! Exact squared Euclidean distance transform on a rectilinear grid.
//!
//! Separable lower-envelope algorithm: one pass of the 1D parabola envelope per
//! axis, linear in the number of pixels. Distances are between pixel centers in
//! physical units, so anisotropic spacing is handled exactly.

/// Squared distance from every pixel center to the nearest feature pixel center.
/// Pixels with no feature anywhere get `f64::INFINITY`.
pub(crate) fn squared_edt(feature: &[bool], shape: &[usize], spacing: &[f64]) -> Vec<f64> {
    let total: usize = shape.iter().product();
    debug_assert_eq!(feature.len(), total);
    let mut f: Vec<f64> = feature.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let mut stride = 1usize;
    let mut line_in = Vec::new();
    let mut line_out = Vec::new();
    let mut v = Vec::new();
    let mut z = Vec::new();
    for (axis, &len) in shape.iter().enumerate() {
        let h = spacing[axis];
        line_in.resize(len, 0.0);
        line_out.resize(len, 0.0);
        let outer = total / len;
        for line in 0..outer {
            // Start of this line: split `line` into the part below and above `axis`.
            let lo = line % stride;
            let hi = line / stride;
            let base = lo + hi * stride * len;
            for k in 0..len {
                line_in[k] = f[base + k * stride];
            }
            envelope_1d(&line_in, h, &mut line_out, &mut v, &mut z);
            for k in 0..len {
                f[base + k * stride] = line_out[k];
            }
        }
        stride *= len;
    }
    f
}

fn envelope_1d(f: &[f64], h: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64 * h;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let pf = p as f64 * h;
                    let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64 * h;
        while k + 1 < v.len() && z[k + 1] < qf {
            k += 1;
        }
        let p = v[k];
        let d = qf - p as f64 * h;
        *o = d * d + f[p];
    }
}
