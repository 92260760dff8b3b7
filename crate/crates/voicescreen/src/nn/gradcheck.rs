//! Central finite-difference verification of reverse-mode gradients.
//!
//! Runs in 64-bit precision: the default tolerance 1e-4 is unreachable in
//! 32-bit arithmetic, so callers convert parameter sets up before checking.

use super::model::{register_params, BoundParams};
use super::params::ParamSet;
use super::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compare the tape gradient of `build`'s scalar output against central
/// finite differences over every trainable coordinate.
///
/// `build` must be a pure function of the parameter values (fix any dropout
/// seeds), and the loss must be smooth at the probe point. The error metric
/// per coordinate is |g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|).
pub fn grad_check<B>(params: &ParamSet<f64>, epsilon: f64, build: B) -> GradCheckReport
where
    B: Fn(&mut Tape<f64>, &BoundParams<f64>) -> NodeId,
{
    let eval = |p: &ParamSet<f64>| -> f64 {
        let mut tape = Tape::<f64>::new();
        let ids = register_params(&mut tape, p);
        let bound = BoundParams::new(p, &ids);
        let root = build(&mut tape, &bound);
        let v = tape.value(root).item();
        assert!(v.is_finite(), "non-finite loss during finite differencing");
        v
    };

    // Reverse-mode gradients at the probe point.
    let mut tape = Tape::<f64>::new();
    let ids = register_params(&mut tape, params);
    let bound = BoundParams::new(params, &ids);
    let root = build(&mut tape, &bound);
    let grads = tape.backward(root);

    let mut work = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut coords_checked = 0usize;
    for i in 0..params.len() {
        if !params.entries()[i].trainable {
            continue;
        }
        let n = params.entries()[i].value.len();
        for j in 0..n {
            let g_ad = grads.get(ids[i]).map_or(0.0, |g| g.data[j]);
            let orig = work.entries()[i].value.data[j];
            work.entries_mut()[i].value.data[j] = orig + epsilon;
            let plus = eval(&work);
            work.entries_mut()[i].value.data[j] = orig - epsilon;
            let minus = eval(&work);
            work.entries_mut()[i].value.data[j] = orig;
            let g_fd = (plus - minus) / (2.0 * epsilon);
            let rel = (g_ad - g_fd).abs() / 1e-8f64.max(g_ad.abs() + g_fd.abs());
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            coords_checked += 1;
        }
    }
    GradCheckReport { max_rel_err, coords_checked }
}
