//! Quadrature on uniform grids.

/// Composite Simpson rule over uniformly spaced nodes (endpoints included).
///
/// With an odd number of intervals the last panel falls back to the
/// trapezoid rule; the returned flag reports whether that happened.
pub fn simpson(values: &[f64], h: f64) -> (f64, bool) {
    let intervals = values.len().saturating_sub(1);
    if intervals == 0 {
        return (0.0, false);
    }
    if intervals == 1 {
        return (0.5 * h * (values[0] + values[1]), true);
    }
    let even = intervals - intervals % 2;
    let mut acc = values[0] + values[even];
    for (k, v) in values[1..even].iter().enumerate() {
        acc += if k % 2 == 0 { 4.0 * v } else { 2.0 * v };
    }
    let mut total = acc * h / 3.0;
    let fallback = even != intervals;
    if fallback {
        total += 0.5 * h * (values[intervals - 1] + values[intervals]);
    }
    (total, fallback)
}

/// Simpson rule for a field given on interior nodes of a zero-boundary grid.
///
/// `f` is applied to every interior value; the two boundary nodes contribute
/// `f(0)`, which callers guarantee to be zero for the integrands used here.
pub fn simpson_interior<F: Fn(f64) -> f64>(interior: &[f64], h: f64, f: F) -> (f64, bool) {
    let n = interior.len();
    let intervals = n + 1;
    let even = intervals - intervals % 2;
    // node k of the full grid is interior[k - 1]
    let node = |k: usize| -> f64 {
        if k == 0 || k == intervals {
            0.0
        } else {
            f(interior[k - 1])
        }
    };
    let mut acc = node(0) + node(even);
    for k in 1..even {
        acc += if k % 2 == 1 { 4.0 * node(k) } else { 2.0 * node(k) };
    }
    let mut total = acc * h / 3.0;
    let fallback = even != intervals;
    if fallback {
        total += 0.5 * h * (node(intervals - 1) + node(intervals));
    }
    (total, fallback)
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

/// Running trapezoid integral; element `k` is the integral over `[t_0, t_k]`.
pub fn trapezoid_cumulative(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    if let Some(&first) = values.first() {
        out.push(0.0);
        let mut prev = first;
        for &v in &values[1..] {
            acc += 0.5 * h * (prev + v);
            out.push(acc);
            prev = v;
        }
    }
    out
}
