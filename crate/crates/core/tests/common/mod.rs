//! Independent reference implementations used as test oracles. None of these
//! call into the library's numeric code.

#![allow(dead_code)]

use lanepatch_core::attention::AttentionWeights;
use lanepatch_core::DenseLane;

/// Plain-loop multi-head attention over `T` tokens where query `i` may only
/// look at keys `j` with `allowed(i, j)`. Rows with no allowed key are zero.
pub fn dense_masked_attention(
    x: &[Vec<f64>],
    w: &AttentionWeights,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Vec<Vec<f64>> {
    let t = x.len();
    let c = w.query.nrows();
    let d = c / w.heads;
    let project = |m: &ndarray::Array2<f64>| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| (0..c).map(|o| (0..c).map(|k| row[k] * m[[k, o]]).sum()).collect())
            .collect()
    };
    let (q, k, v) = (project(&w.query), project(&w.key), project(&w.value));
    let mut concat = vec![vec![0.0; c]; t];
    for h in 0..w.heads {
        let cols = h * d..(h + 1) * d;
        for i in 0..t {
            let keys: Vec<usize> = (0..t).filter(|&j| allowed(i, j)).collect();
            if keys.is_empty() {
                continue;
            }
            let logits: Vec<f64> = keys
                .iter()
                .map(|&j| cols.clone().map(|a| q[i][a] * k[j][a]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (p, &j) in exps.iter().zip(&keys) {
                for a in cols.clone() {
                    concat[i][a] += p / z * v[j][a];
                }
            }
        }
    }
    (0..t)
        .map(|i| {
            (0..c)
                .map(|o| {
                    let y: f64 = (0..c).map(|a| concat[i][a] * w.output[[a, o]]).sum();
                    if w.residual {
                        y + x[i][o]
                    } else {
                        y
                    }
                })
                .collect()
        })
        .collect()
}

/// Row-major matrix product on nested vectors.
pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect())
        .collect()
}

/// Maximum total weight over all one-to-one pairings, by trying every
/// injection of the smaller side into the larger.
pub fn brute_force_max_matching(weights: &[Vec<i64>]) -> i64 {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0;
    }
    fn go(weights: &[Vec<i64>], r: usize, used: &mut Vec<bool>, transpose: bool) -> i64 {
        let (rows, cols) = if transpose {
            (weights[0].len(), weights.len())
        } else {
            (weights.len(), weights[0].len())
        };
        if r == rows {
            return 0;
        }
        let mut best = i64::MIN;
        for c in 0..cols {
            if used[c] {
                continue;
            }
            used[c] = true;
            let w = if transpose { weights[c][r] } else { weights[r][c] };
            best = best.max(w + go(weights, r + 1, used, transpose));
            used[c] = false;
        }
        best
    }
    let transpose = rows > cols;
    let mut used = vec![false; if transpose { rows } else { cols }];
    go(weights, 0, &mut used, transpose)
}

/// `(1/M) * sum_j (|s_hat_j - s_j|_1 + |e_hat_j - e_j|_1)`, one component at a time.
pub fn l1_loss_oracle(s_hat: &[[f64; 3]], e_hat: &[[f64; 3]], s: &[[f64; 3]], e: &[[f64; 3]]) -> f64 {
    let m = s_hat.len();
    let mut total = 0.0;
    for j in 0..m {
        for a in 0..3 {
            total += (s_hat[j][a] - s[j][a]).abs();
            total += (e_hat[j][a] - e[j][a]).abs();
        }
    }
    total / m as f64
}

/// Inference post-processing as written in the reference Python: keep the
/// visible points, then shift the first by its start delta and the last by
/// its end delta. Returns `None` below two visible points.
#[allow(clippy::type_complexity)]
pub fn reference_post_process(
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    vis: &[bool],
    s: &[[f64; 3]],
    e: &[[f64; 3]],
) -> Option<Vec<[f64; 3]>> {
    let keep: Vec<usize> = (0..xs.len()).filter(|&j| vis[j]).collect();
    if keep.len() < 2 {
        return None;
    }
    let mut cur_xs: Vec<f64> = keep.iter().map(|&j| xs[j]).collect();
    let mut cur_ys: Vec<f64> = keep.iter().map(|&j| ys[j]).collect();
    let mut cur_zs: Vec<f64> = keep.iter().map(|&j| zs[j]).collect();
    let starts: Vec<[f64; 3]> = keep.iter().map(|&j| s[j]).collect();
    let ends: Vec<[f64; 3]> = keep.iter().map(|&j| e[j]).collect();
    let last = keep.len() - 1;
    cur_xs[0] += starts[0][0];
    cur_xs[last] += ends[last][0];
    cur_ys[0] += starts[0][1];
    cur_ys[last] += ends[last][1];
    cur_zs[0] += starts[0][2];
    cur_zs[last] += ends[last][2];
    Some((0..keep.len()).map(|i| [cur_xs[i], cur_ys[i], cur_zs[i]]).collect())
}

/// Straight lane at constant `x`, `z = 0`, sampled every metre (plus the end).
pub fn straight_lane(x: f64, y0: f64, y1: f64) -> DenseLane {
    let mut pts = Vec::new();
    let mut y = y0;
    while y < y1 {
        pts.push([x, y, 0.0]);
        y += 1.0;
    }
    pts.push([x, y1, 0.0]);
    DenseLane::new(pts, 0).unwrap()
}

/// Linear interpolation by scanning segments; `None` outside the lane.
pub fn scan_interpolate(points: &[[f64; 3]], y: f64) -> Option<(f64, f64)> {
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a[1] <= y && y <= b[1] {
            let t = (y - a[1]) / (b[1] - a[1]);
            return Some((a[0] + t * (b[0] - a[0]), a[2] + t * (b[2] - a[2])));
        }
    }
    None
}
