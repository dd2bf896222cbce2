//! Continuous piecewise-linear depth alignment maps and their constrained
//! least-squares fit.
//!
//! A map is stored by its knot positions and the values it takes there;
//! continuity is therefore structural. Per-segment scale and shift are
//! derived on demand. Outside the knot range the end segments extend
//! linearly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearMap {
    knots: Vec<f64>,
    values: Vec<f64>,
}

/// One linear piece `y = scale · x + shift` on `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub scale: f64,
    pub shift: f64,
}

/// Equal-width knots over `[lo, hi]`; a degenerate range is widened to unit width.
pub fn uniform_knots(lo: f64, hi: f64, segments: usize) -> Vec<f64> {
    let segments = segments.max(1);
    let hi = if hi > lo { hi } else { lo + 1.0 };
    (0..=segments)
        .map(|k| {
            if k == segments {
                hi
            } else {
                lo + (hi - lo) * k as f64 / segments as f64
            }
        })
        .collect()
}

impl PiecewiseLinearMap {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Config(format!(
                "piecewise-linear map needs matching knot/value lists of length >= 2 (got {} and {})",
                knots.len(),
                values.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("knots must be strictly increasing".into()));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("piecewise-linear map parameters"));
        }
        Ok(Self { knots, values })
    }

    /// The identity line on `segments` equal segments over `[lo, hi]`.
    pub fn identity(lo: f64, hi: f64, segments: usize) -> Self {
        let knots = uniform_knots(lo, hi, segments);
        Self {
            values: knots.clone(),
            knots,
        }
    }

    /// Builds a map from per-segment scale/shift pairs, checking continuity.
    pub fn from_segments(knots: Vec<f64>, scales: &[f64], shifts: &[f64]) -> Result<Self> {
        let k = knots.len().saturating_sub(1);
        if scales.len() != k || shifts.len() != k || k == 0 {
            return Err(Error::Config("segment count does not match knots".into()));
        }
        let mut values = Vec::with_capacity(k + 1);
        values.push(scales[0] * knots[0] + shifts[0]);
        for j in 0..k {
            let right = scales[j] * knots[j + 1] + shifts[j];
            if j + 1 < k {
                let next = scales[j + 1] * knots[j + 1] + shifts[j + 1];
                let tol = 1e-9 * (1.0 + right.abs().max(next.abs()));
                if (right - next).abs() > tol {
                    return Err(Error::Config(format!(
                        "discontinuity of {:e} at knot {}",
                        right - next,
                        j + 1
                    )));
                }
            }
            values.push(right);
        }
        Self::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segment_count(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn scale(&self, j: usize) -> f64 {
        (self.values[j + 1] - self.values[j]) / (self.knots[j + 1] - self.knots[j])
    }

    pub fn shift(&self, j: usize) -> f64 {
        self.values[j] - self.scale(j) * self.knots[j]
    }

    pub fn segments(&self) -> Vec<Segment> {
        (0..self.segment_count())
            .map(|j| Segment {
                start: self.knots[j],
                end: self.knots[j + 1],
                scale: self.scale(j),
                shift: self.shift(j),
            })
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        self.knots == self.values
    }

    pub fn is_monotone(&self, min_slope: f64) -> bool {
        (0..self.segment_count()).all(|j| self.scale(j) >= min_slope)
    }

    /// Segment containing `x`, with end segments extended outward.
    pub fn segment_of(&self, x: f64) -> usize {
        let k = self.segment_count();
        // first knot strictly greater than x
        let upper = self.knots.partition_point(|&kn| kn <= x);
        upper.clamp(1, k) - 1
    }

    #[inline]
    pub fn apply_scalar(&self, x: f64) -> f64 {
        let j = self.segment_of(x);
        let (x0, x1) = (self.knots[j], self.knots[j + 1]);
        let t = (x - x0) / (x1 - x0);
        self.values[j] + t * (self.values[j + 1] - self.values[j])
    }

    pub fn apply(&self, depth: &[f64]) -> Result<Vec<f64>> {
        if depth.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("patch depth"));
        }
        Ok(depth.iter().map(|&x| self.apply_scalar(x)).collect())
    }

    /// Inverse of a strictly increasing map.
    pub fn apply_inverse_scalar(&self, y: f64) -> Option<f64> {
        if !self.is_monotone(f64::MIN_POSITIVE) {
            return None;
        }
        let k = self.segment_count();
        let upper = self.values.partition_point(|&v| v <= y);
        let j = upper.clamp(1, k) - 1;
        let (y0, y1) = (self.values[j], self.values[j + 1]);
        let t = (y - y0) / (y1 - y0);
        Some(self.knots[j] + t * (self.knots[j + 1] - self.knots[j]))
    }
}

/// Which knots of a uniform knot set remain free after merging segments
/// that the data cannot determine.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSupport {
    pub knots: Vec<f64>,
    /// Indices into `knots` of the retained (free) knots; always includes both ends.
    pub kept: Vec<usize>,
    /// True when the data hold fewer than two distinct values overall.
    pub degenerate: bool,
}

impl KnotSupport {
    /// Merges every segment holding fewer than two distinct sample values
    /// into a neighbor.
    pub fn analyze(knots: Vec<f64>, xs: &[f64]) -> Self {
        let k = knots.len() - 1;
        let mut kept: Vec<usize> = (0..=k).collect();
        let distinct_in = |lo: f64, hi: f64, last: bool| -> usize {
            let mut first: Option<f64> = None;
            for &x in xs {
                let inside = x >= lo && (x < hi || (last && x <= hi));
                if !inside {
                    continue;
                }
                match first {
                    None => first = Some(x),
                    Some(f) if f != x => return 2,
                    _ => {}
                }
            }
            usize::from(first.is_some())
        };
        loop {
            let segs = kept.len() - 1;
            if segs <= 1 {
                break;
            }
            let bad = (0..segs).find(|&s| {
                distinct_in(knots[kept[s]], knots[kept[s + 1]], s + 1 == segs) < 2
            });
            match bad {
                Some(s) if s + 1 < segs => {
                    kept.remove(s + 1);
                }
                Some(s) => {
                    kept.remove(s);
                }
                None => break,
            }
        }
        let degenerate = {
            let mut it = xs.iter();
            match it.next() {
                Some(&x0) => it.all(|&x| x == x0),
                None => true,
            }
        };
        Self {
            knots,
            kept,
            degenerate,
        }
    }

    pub fn merged_segments(&self) -> usize {
        self.knots.len() - self.kept.len()
    }

    /// Hat-basis weights of `x` on the kept knots: `(left, right, w_left, w_right)`.
    #[inline]
    pub fn basis(&self, x: f64) -> (usize, usize, f64, f64) {
        let m = self.kept.len() - 1;
        let upper = self.kept.partition_point(|&i| self.knots[i] <= x);
        let s = upper.clamp(1, m) - 1;
        let (x0, x1) = (self.knots[self.kept[s]], self.knots[self.kept[s + 1]]);
        let t = (x - x0) / (x1 - x0);
        (s, s + 1, 1.0 - t, t)
    }

    /// Expands values on kept knots to all knots by linear interpolation.
    pub fn expand(&self, kept_values: &[f64]) -> Vec<f64> {
        let mut values = vec![0.0; self.knots.len()];
        for s in 0..self.kept.len() - 1 {
            let (a, b) = (self.kept[s], self.kept[s + 1]);
            let (x0, x1) = (self.knots[a], self.knots[b]);
            for (i, v) in values.iter_mut().enumerate().take(b + 1).skip(a) {
                let t = (self.knots[i] - x0) / (x1 - x0);
                *v = kept_values[s] + t * (kept_values[s + 1] - kept_values[s]);
            }
        }
        values
    }
}

/// Options for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Enforce every segment scale `>= min_slope`.
    pub monotone: bool,
    pub min_slope: f64,
}

/// Least-squares fit of `targets ≈ G(xs)` over continuous piecewise-linear
/// `G` on `support`'s kept knots, optionally with all slopes `>= min_slope`.
pub fn fit(support: &KnotSupport, xs: &[f64], targets: &[f64], opts: FitOptions) -> PiecewiseLinearMap {
    debug_assert_eq!(xs.len(), targets.len());
    let knots = support.knots.clone();
    if support.degenerate || xs.is_empty() {
        // slope cannot be identified: keep unit slope, fit the offset
        let n = xs.len().max(1) as f64;
        let offset = xs.iter().zip(targets).map(|(x, t)| t - x).sum::<f64>() / n;
        let values = knots.iter().map(|k| k + offset).collect();
        return PiecewiseLinearMap { knots, values };
    }

    let m = support.kept.len();
    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for (&x, &t) in xs.iter().zip(targets) {
        let (a, b, wa, wb) = support.basis(x);
        gram[a * m + a] += wa * wa;
        gram[a * m + b] += wa * wb;
        gram[b * m + a] += wa * wb;
        gram[b * m + b] += wb * wb;
        rhs[a] += wa * t;
        rhs[b] += wb * t;
    }

    let kept_values = if opts.monotone {
        // y = T z + e with z = (y0, slack_1..slack_m-1), slack >= 0
        let widths: Vec<f64> = support
            .kept
            .windows(2)
            .map(|w| knots[w[1]] - knots[w[0]])
            .collect();
        let mut offset = vec![0.0; m];
        for s in 1..m {
            offset[s] = offset[s - 1] + opts.min_slope * widths[s - 1];
        }
        // H = Tᵀ G T, g = Tᵀ (r − G e); T[i][j] = 1 for j <= i
        let g_e: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| gram[i * m + j] * offset[j]).sum())
            .collect();
        let r: Vec<f64> = (0..m).map(|i| rhs[i] - g_e[i]).collect();
        // suffix sums: H[a][b] = Σ_{i>=a} Σ_{j>=b} G[i][j]
        let mut h = vec![0.0; m * m];
        for a in (0..m).rev() {
            for b in (0..m).rev() {
                let mut v = gram[a * m + b];
                if a + 1 < m {
                    v += h[(a + 1) * m + b];
                }
                if b + 1 < m {
                    v += h[a * m + b + 1];
                }
                if a + 1 < m && b + 1 < m {
                    v -= h[(a + 1) * m + b + 1];
                }
                h[a * m + b] = v;
            }
        }
        let g: Vec<f64> = (0..m).map(|a| r[a..].iter().sum()).collect();
        let bounded: Vec<bool> = (0..m).map(|j| j > 0).collect();
        let z = bounded_qp(&h, &g, &bounded);
        let mut y = vec![0.0; m];
        let mut acc = 0.0;
        for s in 0..m {
            acc += z[s];
            y[s] = acc + offset[s];
        }
        y
    } else {
        solve_spd(&gram, &rhs, m).unwrap_or_else(|| {
            let ridge = 1e-12 * (0..m).map(|i| gram[i * m + i]).sum::<f64>().max(1e-300);
            let mut g = gram.clone();
            for i in 0..m {
                g[i * m + i] += ridge;
            }
            solve_spd(&g, &rhs, m).unwrap_or_else(|| vec![0.0; m])
        })
    };

    let values = support.expand(&kept_values);
    PiecewiseLinearMap { knots, values }
}

/// Sum of squared residuals `Σ (target − G(x))²`.
pub fn residual(map: &PiecewiseLinearMap, xs: &[f64], targets: &[f64]) -> f64 {
    xs.iter()
        .zip(targets)
        .map(|(&x, &t)| {
            let r = t - map.apply_scalar(x);
            r * r
        })
        .sum()
}

/// Cholesky solve of the `m × m` symmetric positive definite system.
fn solve_spd(a: &[f64], b: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                let scale = a[i * m + i].abs().max(1e-300);
                if s <= 1e-14 * scale {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    let mut y = vec![0.0; m];
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * m + k] * y[k];
        }
        y[i] = s / l[i * m + i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in i + 1..m {
            s -= l[k * m + i] * x[k];
        }
        x[i] = s / l[i * m + i];
    }
    Some(x)
}

/// Minimizes `½ zᵀ H z − gᵀ z` subject to `z_j >= 0` where `bounded[j]`,
/// by a primal active-set method (Lawson–Hanson generalized to free variables).
fn bounded_qp(h: &[f64], g: &[f64], bounded: &[bool]) -> Vec<f64> {
    let m = g.len();
    let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0)
        * (0..m).map(|i| h[i * m + i]).fold(1.0f64, f64::max);
    let tol = 1e-13 * scale;

    let solve_on = |passive: &[bool]| -> Vec<f64> {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let p = idx.len();
        let mut sub = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        for (a, &i) in idx.iter().enumerate() {
            rhs[a] = g[i];
            for (b, &j) in idx.iter().enumerate() {
                sub[a * p + b] = h[i * m + j];
            }
        }
        let sol = solve_spd(&sub, &rhs, p).unwrap_or_else(|| {
            let ridge = 1e-12 * (0..p).map(|i| sub[i * p + i]).sum::<f64>().max(1e-300);
            for i in 0..p {
                sub[i * p + i] += ridge;
            }
            solve_spd(&sub, &rhs, p).unwrap_or_else(|| vec![0.0; p])
        });
        let mut full = vec![0.0; m];
        for (a, &i) in idx.iter().enumerate() {
            full[i] = sol[a];
        }
        full
    };

    let mut passive: Vec<bool> = bounded.iter().map(|&b| !b).collect();
    let mut z = solve_on(&passive);
    let max_rounds = 10 * m + 10;

    for _ in 0..max_rounds {
        let grad: Vec<f64> = (0..m)
            .map(|i| g[i] - (0..m).map(|j| h[i * m + j] * z[j]).sum::<f64>())
            .collect();
        let Some(enter) = (0..m)
            .filter(|&j| bounded[j] && !passive[j] && grad[j] > tol)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]))
        else {
            break;
        };
        passive[enter] = true;

        for _ in 0..max_rounds {
            let s = solve_on(&passive);
            let blocking: Vec<usize> = (0..m)
                .filter(|&j| bounded[j] && passive[j] && s[j] <= 0.0)
                .collect();
            if blocking.is_empty() {
                z = s;
                break;
            }
            let alpha = blocking
                .iter()
                .map(|&j| z[j] / (z[j] - s[j]))
                .fold(1.0f64, f64::min)
                .max(0.0);
            for j in 0..m {
                z[j] += alpha * (s[j] - z[j]);
            }
            let zmax = z.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for j in 0..m {
                if bounded[j] && passive[j] && z[j] <= 1e-12 * zmax {
                    passive[j] = false;
                    z[j] = 0.0;
                }
            }
        }
    }
    z
}
