//! Quadrature and root-finding primitives shared by every solver.

use std::sync::OnceLock;

/// Nodes and weights of an n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        if b <= a {
            return 0.0;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
    }

    /// Integrates over [a, b] split at every breakpoint strictly inside the interval.
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(&self, a: f64, b: f64, breaks: &[f64], f: F) -> f64 {
        let mut cuts: Vec<f64> = breaks.iter().copied().filter(|x| x.is_finite() && *x > a && *x < b).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut total = 0.0;
        let mut left = a;
        for c in cuts.into_iter().chain(std::iter::once(b)) {
            total += self.integrate(left, c, &f);
            left = c;
        }
        total
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// The shared 256-node rule used for expectations over scheduled demand.
pub fn gauss_legendre_256() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(256))
}

/// Adaptive Simpson quadrature with an absolute error target.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, abs_tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Composite Simpson over `panels` (rounded up to even) equal subintervals.
pub fn composite_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = (panels.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}

/// Per-interval weights on the samples used by `cumulative_simpson`:
/// interval `i` is `h * Σ c_j y[first + j]`.
fn interval_stencil(i: usize, n: usize) -> (usize, &'static [f64]) {
    const TRAP: [f64; 2] = [0.5, 0.5];
    const Q_FWD: [f64; 3] = [5.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0];
    const Q_BWD: [f64; 3] = [-1.0 / 12.0, 8.0 / 12.0, 5.0 / 12.0];
    const C_FIRST: [f64; 4] = [9.0 / 24.0, 19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0];
    const C_MID: [f64; 4] = [-1.0 / 24.0, 13.0 / 24.0, 13.0 / 24.0, -1.0 / 24.0];
    const C_LAST: [f64; 4] = [1.0 / 24.0, -5.0 / 24.0, 19.0 / 24.0, 9.0 / 24.0];
    match n {
        2 => (0, &TRAP),
        3 => {
            if i == 0 {
                (0, &Q_FWD)
            } else {
                (0, &Q_BWD)
            }
        }
        _ => {
            if i == 0 {
                (0, &C_FIRST)
            } else if i + 2 == n {
                (n - 4, &C_LAST)
            } else {
                (i - 1, &C_MID)
            }
        }
    }
}

/// Running integral of samples `y` on a uniform grid with spacing `h`.
///
/// Each interval integrates the cubic through four neighbouring samples, so
/// every node is fourth-order accurate. Output[0] is 0.
pub fn cumulative_simpson(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let (first, c) = interval_stencil(i, n);
        let piece: f64 = c.iter().enumerate().map(|(j, cj)| cj * y[first + j]).sum();
        out[i + 1] = out[i] + h * piece;
    }
    out
}

/// Quadrature weights matching `cumulative_simpson`'s total on a uniform grid.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let (first, c) = interval_stencil(i, n);
        for (j, cj) in c.iter().enumerate() {
            w[first + j] += h * cj;
        }
    }
    w
}

/// Bisection on a bracket whose endpoints have opposite signs.
///
/// Returns `None` if `f(lo)` and `f(hi)` share a strict sign.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, x_tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        if hi - lo <= x_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Scans `f` on `steps` equal intervals of [a, b] and returns every bracket
/// where the sign goes from strictly positive to non-positive.
pub fn downcrossing_brackets<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, steps: usize) -> (Vec<(f64, f64)>, Vec<f64>) {
    let h = (b - a) / steps as f64;
    let xs: Vec<f64> = (0..=steps).map(|i| a + h * i as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let brackets = xs
        .windows(2)
        .zip(vals.windows(2))
        .filter(|(_, v)| v[0] > 0.0 && v[1] <= 0.0)
        .map(|(x, _)| (x[0], x[1]))
        .collect();
    (brackets, vals)
}

/// Number of strict sign changes in a sequence, ignoring exact zeros.
pub fn sign_changes(vals: &[f64]) -> usize {
    let mut last = 0.0_f64;
    let mut count = 0;
    for &v in vals {
        if v == 0.0 || v.is_nan() {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            count += 1;
        }
        last = v;
    }
    count
}

/// Evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect()
        }
    }
}

/// Linear interpolation on an ascending grid, clamped at both ends.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let t = (x - x0) / (x1 - x0);
    ys[j - 1] + t * (ys[j] - ys[j - 1])
}

/// Brute-force maximizer of `f` over `lo, lo + step, ..., hi`; ties go to the
/// smaller point.
pub fn grid_argmax<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64) -> f64 {
    // Round-off must not drop `hi` when the range is a whole number of steps.
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut best = (lo, f(lo));
    for i in 1..=n {
        let x = (lo + step * i as f64).min(hi);
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best.0
}

/// Formats with 9 significant digits, dropping trailing zeros.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(8);
        let v = rule.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
        let big = gauss_legendre_256();
        let s: f64 = big.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-12);
        assert!((big.integrate(0.0, std::f64::consts::PI, f64::sin) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn breaks_handle_kinks() {
        let rule = GaussLegendre::new(16);
        let v = rule.integrate_with_breaks(-1.0, 2.0, &[0.0], |x| x.abs());
        assert!((v - 2.5).abs() < 1e-13);
    }

    #[test]
    fn adaptive_simpson_matches_closed_form() {
        let v = adaptive_simpson(|x| (-x).exp(), 0.0, 5.0, 1e-10);
        assert!((v - (1.0 - (-5.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn cumulative_simpson_is_fourth_order() {
        let xs = linspace(0.0, 1.0, 11);
        let y: Vec<f64> = xs.iter().map(|x| x * x * x).collect();
        let c = cumulative_simpson(&y, 0.1);
        for (x, v) in xs.iter().zip(&c) {
            assert!((v - x.powi(4) / 4.0).abs() < 1e-14, "{x} {v}");
        }
        let w = simpson_weights(11, 0.1);
        let total: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((total - c[10]).abs() < 1e-14);
    }

    #[test]
    fn bisect_finds_sqrt_two() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-11);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-12).is_none());
    }

    #[test]
    fn sign_change_counting() {
        assert_eq!(sign_changes(&[1.0, 0.5, 0.0, -1.0, -2.0]), 1);
        assert_eq!(sign_changes(&[-1.0, 1.0, -1.0]), 2);
    }

    #[test]
    fn grid_argmax_prefers_smaller_tie() {
        let x = grid_argmax(|x| -(x - 1.0).abs().max(0.5), 0.0, 2.0, 0.25);
        assert_eq!(x, 0.5);
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(-0.0), "0");
        assert_eq!(format_sig9(123456789012.0), "123456789000");
        assert_eq!(format_sig9(2.5), "2.5");
    }
}
