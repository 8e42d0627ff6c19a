//! Gauss–Legendre quadrature.
//!
//! Nodes and weights are generated by Newton iteration on the Legendre
//! polynomial recurrence rather than hard-coded tables, then cached.

use std::sync::OnceLock;

const N: usize = 64;

/// Legendre polynomial `P_n(x)` and its derivative via the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // Derivative from P_n and P_{n-1}.
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn nodes_weights() -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut nodes = vec![0.0; N];
        let mut weights = vec![0.0; N];
        for i in 0..N {
            // Chebyshev-based initial guess, refined by Newton.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(N, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre(N, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// 64-node Gauss–Legendre approximation of `∫_a^b f(t) dt`.
pub fn integrate<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let (nodes, weights) = nodes_weights();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for i in 0..N {
        acc += weights[i] * f(mid + half * nodes[i]);
    }
    half * acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_polynomials() {
        // Degree up to 2*64-1 is integrated exactly; check a modest case.
        let val = integrate(0.0, 2.0, |t| 3.0 * t * t + t);
        assert!((val - (8.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn log_integrand_high_accuracy() {
        // ∫_0^16 log(1+t) dt = 17 ln 17 - 16
        let val = integrate(0.0, 16.0, |t| (1.0 + t).ln());
        let exact = 17.0 * (17.0f64).ln() - 16.0;
        assert!((val - exact).abs() / exact < 1e-12);
    }
}
