//! Naive reference implementations.
//!
//! Plain scalar loops over `Vec<Vec<f64>>`, deliberately written without
//! anything from [`crate::losses`], so that a bug in the fast path cannot be
//! mirrored here. Only meant for small instances.

#![allow(clippy::needless_range_loop)]

/// Per-class mean of the support rows.
pub fn naive_prototypes(support: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Vec<Vec<f64>> {
    let dim = support.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; dim]; n_classes];
    for c in 0..n_classes {
        let mut count = 0.0;
        for i in 0..support.len() {
            if labels[i] == c {
                for j in 0..dim {
                    out[c][j] += support[i][j];
                }
                count += 1.0;
            }
        }
        for j in 0..dim {
            out[c][j] /= count;
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.len() {
        s += (a[j] - b[j]) * (a[j] - b[j]);
    }
    s
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// Prototypical cross-entropy. `literal` divides by queries-per-class instead
/// of by the total number of queries.
pub fn naive_fs_loss(
    queries: &[Vec<f64>],
    labels: &[usize],
    prototypes: &[Vec<f64>],
    squared: bool,
    literal: bool,
) -> f64 {
    let n = prototypes.len();
    let mut total = 0.0;
    for i in 0..queries.len() {
        let mut d = vec![0.0; n];
        for c in 0..n {
            d[c] = sq_dist(&queries[i], &prototypes[c]);
            if !squared {
                d[c] = d[c].sqrt();
            }
        }
        // -log softmax(-d)[y] = d_y + log sum exp(-d_c), shifted by min d
        let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut z = 0.0;
        for c in 0..n {
            z += (dmin - d[c]).exp();
        }
        total += d[labels[i]] - dmin + z.ln();
    }
    let denom = if literal {
        queries.len() as f64 / n as f64
    } else {
        queries.len() as f64
    };
    total / denom
}

/// Contrastive prototype loss with explicitly supplied negatives, given as
/// `(class, positive query, negative queries)`.
pub fn naive_cpl(
    prototypes: &[Vec<f64>],
    queries: &[Vec<f64>],
    terms: &[(usize, usize, Vec<usize>)],
    temperature: f64,
) -> f64 {
    let mut total = 0.0;
    for (c, pos, negs) in terms {
        let s_pos = inner(&prototypes[*c], &queries[*pos]) / temperature;
        let mut s = vec![s_pos];
        for &t in negs {
            s.push(inner(&prototypes[*c], &queries[t]) / temperature);
        }
        let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in &s {
            z += (v - top).exp();
        }
        // -log(e+ / (e+ + sum e-))
        total += top + z.ln() - s_pos;
    }
    total / queries.len() as f64
}

/// Angle at the negative vertex in degrees.
pub fn naive_angle(a: &[f64], p: &[f64], n: &[f64]) -> f64 {
    let mut ap = 0.0;
    let mut nc = 0.0;
    for j in 0..a.len() {
        ap += (p[j] - a[j]).powi(2);
        nc += (n[j] - 0.5 * (a[j] + p[j])).powi(2);
    }
    if nc == 0.0 {
        90.0
    } else {
        (ap.sqrt() / (2.0 * nc.sqrt())).atan() * 180.0 / std::f64::consts::PI
    }
}

/// Mined `(anchor, positive, negative)` triplets over `rows`, whose first
/// `n_prototypes` entries are prototypes.
pub fn naive_mine(
    rows: &[Vec<f64>],
    labels: &[usize],
    n_prototypes: usize,
    alpha_deg: f64,
    prototype_anchors_only: bool,
) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for a in 0..rows.len() {
        if prototype_anchors_only && a >= n_prototypes {
            continue;
        }
        for p in 0..rows.len() {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for n in 0..rows.len() {
                if labels[n] != labels[a] && naive_angle(&rows[a], &rows[p], &rows[n]) > alpha_deg {
                    out.push((a, p, n));
                }
            }
        }
    }
    out
}

/// Angular prototype loss over a fixed triplet list.
pub fn naive_apl_with(
    rows: &[Vec<f64>],
    triplets: &[(usize, usize, usize)],
    alpha_deg: f64,
) -> f64 {
    let tan = (alpha_deg * std::f64::consts::PI / 180.0).tan();
    let t2 = tan * tan;
    let mut groups: Vec<((usize, usize), Vec<f64>)> = Vec::new();
    for &(a, p, n) in triplets {
        let mut sum_n = 0.0;
        for j in 0..rows[a].len() {
            sum_n += (rows[a][j] + rows[p][j]) * rows[n][j];
        }
        let f = 4.0 * t2 * sum_n - 2.0 * (1.0 + t2) * inner(&rows[a], &rows[p]);
        match groups.iter_mut().find(|(key, _)| *key == (a, p)) {
            Some((_, fs)) => fs.push(f),
            None => groups.push(((a, p), vec![f])),
        }
    }
    let mut total = 0.0;
    for (_, fs) in &groups {
        let top = fs.iter().cloned().fold(0.0, f64::max);
        let mut z = (-top).exp();
        for f in fs {
            z += (f - top).exp();
        }
        total += top + z.ln();
    }
    total / rows.len() as f64
}

/// Mining followed by the angular loss.
pub fn naive_apl(
    rows: &[Vec<f64>],
    labels: &[usize],
    n_prototypes: usize,
    alpha_deg: f64,
    prototype_anchors_only: bool,
) -> f64 {
    let triplets = naive_mine(
        rows,
        labels,
        n_prototypes,
        alpha_deg,
        prototype_anchors_only,
    );
    naive_apl_with(rows, &triplets, alpha_deg)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Step for the five-point stencil used on the full network.
pub const FIVE_POINT_STEP: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Largest analytic value treated as an exact zero.
pub const EXACT_ZERO: f64 = 1e-12;
/// Round-off resolution of a central difference in `f64` at the default
/// step for losses of order one (about `eps * |L| / h`, with headroom).
/// Exactly-zero gradients (from symmetries such as softmax shift invariance)
/// cannot be resolved more finely than this.
pub const FD_ZERO_FLOOR: f64 = 1e-9;

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Fourth-order central differences (five-point stencil). Truncation error
/// falls as `step^4`, so a larger step can be used, which keeps round-off in
/// the loss from swamping small derivatives.
pub fn finite_diff_gradient_five_point(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut at = |probe: &mut Vec<f64>, i: usize, offset: f64| {
        probe[i] = x[i] + offset;
        let v = f(probe);
        probe[i] = x[i];
        v
    };
    (0..x.len())
        .map(|i| {
            let near = at(&mut probe, i, step) - at(&mut probe, i, -step);
            let far = at(&mut probe, i, 2.0 * step) - at(&mut probe, i, -2.0 * step);
            (8.0 * near - far) / (12.0 * step)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Outcome of comparing one analytic gradient against finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    /// Maximum relative error over the coordinates with a nonzero gradient.
    pub max_rel_error: f64,
    pub step: f64,
    pub checked: usize,
    /// Coordinates whose analytic gradient is exactly zero and whose
    /// difference quotient is within round-off of zero.
    pub zero_agreements: usize,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn compare(name: impl Into<String>, analytic: &[f64], numeric: &[f64], step: f64) -> Self {
        assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
        let mut max_rel_error = 0.0f64;
        let mut zero_agreements = 0;
        for (&a, &f) in analytic.iter().zip(numeric) {
            if a.abs() <= EXACT_ZERO && f.abs() <= FD_ZERO_FLOOR {
                zero_agreements += 1;
            } else {
                max_rel_error = max_rel_error.max(relative_error(a, f));
            }
        }
        Self {
            name: name.into(),
            max_rel_error,
            step,
            checked: analytic.len(),
            zero_agreements,
            passed: max_rel_error < GRADCHECK_TOLERANCE,
        }
    }

    /// Folds several reports on the same quantity into one.
    pub fn merge(name: impl Into<String>, parts: &[GradCheckReport]) -> Self {
        let max_rel_error = parts.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        Self {
            name: name.into(),
            max_rel_error,
            step: parts.first().map_or(DEFAULT_FD_STEP, |r| r.step),
            checked: parts.iter().map(|r| r.checked).sum(),
            zero_agreements: parts.iter().map(|r| r.zero_agreements).sum(),
            passed: parts.iter().all(|r| r.passed),
        }
    }
}
