//! Expected improvement for maximization.

use statrs::function::erf::erfc;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `EI = (mu - f*) Phi(Z) + sigma phi(Z)`, `Z = (mu - f*) / sigma`; the
/// deterministic limit `max(mu - f*, 0)` when `sigma = 0`.
pub fn expected_improvement(mean: f64, std: f64, f_best: f64) -> f64 {
    let d = mean - f_best;
    if !(std > 0.0) {
        return d.max(0.0);
    }
    let z = d / std;
    (d * std_normal_cdf(z) + std * std_normal_pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_limits() {
        assert_eq!(expected_improvement(0.5, 0.0, 0.8), 0.0);
        assert_eq!(expected_improvement(0.8, 0.0, 0.8), 0.0);
        assert!((expected_improvement(1.1, 0.0, 0.8) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn nonnegative_and_monotone_in_std() {
        let mut prev = 0.0;
        for i in 1..200 {
            let s = i as f64 * 0.05;
            let e = expected_improvement(1.0, s, 0.8);
            assert!(e >= prev);
            prev = e;
            assert!(expected_improvement(-5.0, s, 3.0) >= 0.0);
        }
    }
}
