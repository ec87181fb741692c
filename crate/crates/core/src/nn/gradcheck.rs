use super::rng::Rng;
use super::Tensors;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates compared; all are compared when there are fewer.
    pub samples: usize,
    /// Denominator floor so that near-zero gradients are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples: 200,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(tensor, index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub pass: bool,
}

/// Compares `analytic` against central differences of `objective` on a random
/// subsample of coordinates of `params`.
///
/// `objective` must be deterministic, i.e. any sampling noise inside it has
/// to come from a freshly seeded generator on every call.
pub fn finite_diff_check<P, G, F>(
    params: &P,
    analytic: &G,
    mut objective: F,
    config: &GradCheckConfig,
    rng: &mut Rng,
) -> GradCheckReport
where
    P: Tensors + Clone,
    G: Tensors + ?Sized,
    F: FnMut(&P) -> f64,
{
    let lens: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let grads = analytic.tensors();
    assert_eq!(
        lens,
        grads.iter().map(|g| g.len()).collect::<Vec<_>>(),
        "gradient layout must mirror parameters"
    );
    let mut coords: Vec<(usize, usize)> = lens
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| (0..n).map(move |i| (t, i)))
        .collect();
    if coords.len() > config.samples {
        rng.shuffle(&mut coords);
        coords.truncate(config.samples);
        coords.sort_unstable();
    }

    let mut work = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst = (0, 0);
    for &(t, i) in &coords {
        let orig = work.tensors()[t][i];
        work.tensors_mut()[t][i] = orig + config.step;
        let up = objective(&work);
        work.tensors_mut()[t][i] = orig - config.step;
        let down = objective(&work);
        work.tensors_mut()[t][i] = orig;
        let numeric = (up - down) / (2.0 * config.step);
        let a = grads[t][i];
        let denom = a.abs().max(numeric.abs()).max(config.floor);
        let rel = (a - numeric).abs() / denom;
        if !(rel <= max_rel_err) {
            max_rel_err = rel;
            worst = (t, i);
        }
    }
    GradCheckReport {
        max_rel_err,
        checked: coords.len(),
        worst,
        pass: max_rel_err < config.tolerance,
    }
}
