//! Gauss–Legendre nodes, triangle rules (7-point degree 5 and collapsed
//! Gauss) and composite Simpson weights.

use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// 32-point Gauss–Legendre rule mapped to [0, 1].
pub fn gl32_unit() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let (x, w) = gauss_legendre(32);
        (
            x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
            w.iter().map(|v| 0.5 * v).collect(),
        )
    })
}

/// Integral of `f` over [a, b] with the 32-point rule.
pub fn gl32(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (x, w) = gl32_unit();
    let h = b - a;
    x.iter().zip(w).map(|(t, wt)| wt * f(a + h * t)).sum::<f64>() * h
}

/// Barycentric points and weights (summing to 1) of the 7-point rule,
/// exact for polynomials of degree 5.
pub fn triangle7() -> &'static [([f64; 3], f64); 7] {
    static RULE: OnceLock<[([f64; 3], f64); 7]> = OnceLock::new();
    RULE.get_or_init(|| {
        let r = 15f64.sqrt();
        let a1 = (9.0 + 2.0 * r) / 21.0;
        let b1 = (6.0 - r) / 21.0;
        let a2 = (9.0 - 2.0 * r) / 21.0;
        let b2 = (6.0 + r) / 21.0;
        let w1 = (155.0 - r) / 1200.0;
        let w2 = (155.0 + r) / 1200.0;
        [
            ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0),
            ([a1, b1, b1], w1),
            ([b1, a1, b1], w1),
            ([b1, b1, a1], w1),
            ([a2, b2, b2], w2),
            ([b2, a2, b2], w2),
            ([b2, b2, a2], w2),
        ]
    })
}

/// Collapsed n×n Gauss rule on the triangle (barycentric points, weights
/// summing to 1), exact for polynomials of degree 2n − 2.
pub fn collapsed_triangle_rule(n: usize) -> Vec<([f64; 3], f64)> {
    let (x, w) = gauss_legendre(n);
    let mut rule = Vec::with_capacity(n * n);
    for (xu, wu) in x.iter().zip(&w) {
        let u = 0.5 * (xu + 1.0);
        for (xv, wv) in x.iter().zip(&w) {
            let v = 0.5 * (xv + 1.0) * (1.0 - u);
            rule.push(([1.0 - u - v, u, v], 0.5 * wu * wv * (1.0 - u)));
        }
    }
    rule
}

/// [`collapsed_triangle_rule`] with n = 8.
pub fn triangle64() -> &'static [([f64; 3], f64)] {
    static RULE: OnceLock<Vec<([f64; 3], f64)>> = OnceLock::new();
    RULE.get_or_init(|| collapsed_triangle_rule(8))
}

/// Composite Simpson weights on `n` equal intervals of width `dt` (n even).
pub fn simpson_weights(n: usize, dt: f64) -> Vec<f64> {
    assert!(n >= 2 && n % 2 == 0, "Simpson needs an even number of intervals");
    let mut w = vec![0.0; n + 1];
    for (k, wk) in w.iter_mut().enumerate() {
        *wk = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        } * dt
            / 3.0;
    }
    w
}
