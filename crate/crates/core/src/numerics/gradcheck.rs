use super::params::{Gradients, ParameterStore};

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat coordinate with the largest error.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against `(f(θ+h) - f(θ-h)) / 2h` for every scalar
/// of `params`. The relative error uses `max(|analytic|, |numeric|, 1e-8)`
/// as denominator.
pub fn finite_diff_check<F>(loss: F, params: &ParameterStore, analytic: &Gradients, step: f64) -> GradCheck
where
    F: Fn(&ParameterStore) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let analytic: Vec<f64> = analytic.flat().collect();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.get_flat(k);
        probe.set_flat(k, orig + step);
        let up = loss(&probe);
        probe.set_flat(k, orig - step);
        let down = loss(&probe);
        probe.set_flat(k, orig);
        let numeric = (up - down) / (2.0 * step);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if err > out.max_rel_error || !err.is_finite() {
            out = GradCheck {
                max_rel_error: err,
                worst: k,
                analytic: a,
                numeric,
            };
        }
    }
    out
}
