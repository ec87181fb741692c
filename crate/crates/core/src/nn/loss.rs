use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::rng::Rng;
use crate::error::{Error, Result};

pub const LOG_SIGMA_MIN: f64 = -10.0;
pub const LOG_SIGMA_MAX: f64 = 10.0;

const BERNOULLI_EPS: f64 = 1e-7;

/// Diagonal Gaussian `N(mu, diag(exp(log_sigma))^2)` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Array2<f64>,
    pub log_sigma: Array2<f64>,
}

impl GaussianPosterior {
    /// Splits a `(batch, 2K)` encoder head into mean and clamped log-std.
    pub fn from_head(head: ArrayView2<f64>) -> Result<Self> {
        if head.ncols() % 2 != 0 {
            return Err(Error::dim(format!(
                "posterior head width {} is odd",
                head.ncols()
            )));
        }
        let k = head.ncols() / 2;
        Ok(Self {
            mu: head.slice(s![.., ..k]).to_owned(),
            log_sigma: head
                .slice(s![.., k..])
                .mapv(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)),
        })
    }

    /// Gradient w.r.t. the raw head given gradients w.r.t. `mu` and the
    /// clamped `log_sigma`. The clamp passes no gradient outside its range.
    pub fn head_grad(
        head: ArrayView2<f64>,
        d_mu: &Array2<f64>,
        d_log_sigma: &Array2<f64>,
    ) -> Array2<f64> {
        let k = d_mu.ncols();
        let mut out = Array2::zeros(head.raw_dim());
        out.slice_mut(s![.., ..k]).assign(d_mu);
        let mut tail = out.slice_mut(s![.., k..]);
        ndarray::Zip::from(&mut tail)
            .and(head.slice(s![.., k..]))
            .and(d_log_sigma)
            .for_each(|o, &raw, &g| {
                *o = if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&raw) {
                    g
                } else {
                    0.0
                };
            });
        out
    }

    pub fn sigma(&self) -> Array2<f64> {
        self.log_sigma.mapv(f64::exp)
    }

    pub fn nrows(&self) -> usize {
        self.mu.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }
}

/// Reparameterized draw `z = mu + eps ⊙ sigma`, one sample per row.
/// Returns `(z, eps)`.
pub fn sample_gaussian(post: &GaussianPosterior, rng: &mut Rng) -> (Array2<f64>, Array2<f64>) {
    let eps = Array2::from_shape_simple_fn(post.mu.raw_dim(), || rng.normal());
    (reparameterize(post, &eps), eps)
}

pub fn reparameterize(post: &GaussianPosterior, eps: &Array2<f64>) -> Array2<f64> {
    &post.mu + &(eps * &post.sigma())
}

/// `KL(q ‖ N(0, I))` per row: `½ Σ (mu² + sigma² − 1 − 2 log sigma)`.
pub fn kl_diag_gaussian(post: &GaussianPosterior) -> Array1<f64> {
    let mut out = Array1::zeros(post.nrows());
    for ((o, mu), ls) in out
        .iter_mut()
        .zip(post.mu.rows())
        .zip(post.log_sigma.rows())
    {
        *o = 0.5
            * mu.iter()
                .zip(ls.iter())
                .map(|(&m, &l)| m * m + (2.0 * l).exp() - 1.0 - 2.0 * l)
                .sum::<f64>();
    }
    out
}

/// Gradients of the summed KL w.r.t. `(mu, log_sigma)`.
pub fn kl_diag_gaussian_grad(post: &GaussianPosterior) -> (Array2<f64>, Array2<f64>) {
    (
        post.mu.clone(),
        post.log_sigma.mapv(|l| (2.0 * l).exp() - 1.0),
    )
}

/// Multinomial log-likelihood `Σ_j r_j log softmax(logits)_j` per row, where
/// row `b` of `r` is given by its active item ids.
///
/// Returns the per-row values and the gradient of their sum w.r.t. the
/// logits, `r − (Σ_j r_j)·softmax(logits)`.
pub fn multinomial_ll(
    logits: ArrayView2<f64>,
    rows: &[&[usize]],
) -> Result<(Array1<f64>, Array2<f64>)> {
    if logits.nrows() != rows.len() {
        return Err(Error::dim(format!(
            "{} logit rows for {} rating rows",
            logits.nrows(),
            rows.len()
        )));
    }
    let n_items = logits.ncols();
    let mut values = Array1::zeros(rows.len());
    let mut grad = Array2::zeros(logits.raw_dim());
    for (b, items) in rows.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let row = logits.row(b);
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let sum_exp: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let mut ll = 0.0;
        for &j in items.iter() {
            if j >= n_items {
                return Err(Error::dim(format!("item {j} outside {n_items} logits")));
            }
            ll += row[j] - lse;
        }
        values[b] = ll;
        let count = items.len() as f64;
        let mut g = grad.row_mut(b);
        g.zip_mut_with(&row, |gv, &x| *gv = -count * (x - lse).exp());
        for &j in items.iter() {
            g[j] += 1.0;
        }
    }
    Ok((values, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContentLikelihood {
    /// `N(x̂, λ_x⁻¹ I)`; the decoder output is the mean.
    Gaussian { precision: f64 },
    /// Independent Bernoulli on sigmoid outputs.
    Bernoulli,
}

impl Default for ContentLikelihood {
    fn default() -> Self {
        ContentLikelihood::Gaussian { precision: 1.0 }
    }
}

impl ContentLikelihood {
    pub fn validate_features(&self, x: ArrayView2<f64>) -> Result<()> {
        match self {
            ContentLikelihood::Gaussian { precision } => {
                if !(*precision >= 0.0) {
                    return Err(Error::config("content precision must be >= 0"));
                }
            }
            ContentLikelihood::Bernoulli => {
                if let Some(((r, c), v)) = x
                    .indexed_iter()
                    .find(|(_, v)| !(0.0..=1.0).contains(*v))
                {
                    return Err(Error::config(format!(
                        "bernoulli likelihood needs features in [0,1]; found {v} at ({r}, {c})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Content log-likelihood per row with its gradient w.r.t. `x_hat`.
///
/// Gaussian mode drops the normalizing constant: `−(λ_x/2)‖x − x̂‖²`.
/// Bernoulli mode clamps `x̂` into `[1e-7, 1 − 1e-7]`; clamped entries
/// receive zero gradient.
pub fn content_ll(
    x: ArrayView2<f64>,
    x_hat: ArrayView2<f64>,
    mode: ContentLikelihood,
) -> Result<(Array1<f64>, Array2<f64>)> {
    if x.dim() != x_hat.dim() {
        return Err(Error::dim(format!(
            "features {:?} vs reconstruction {:?}",
            x.dim(),
            x_hat.dim()
        )));
    }
    mode.validate_features(x)?;
    match mode {
        ContentLikelihood::Gaussian { precision } => {
            let diff = &x - &x_hat;
            let values = diff
                .map_axis(Axis(1), |r| -0.5 * precision * r.iter().map(|d| d * d).sum::<f64>());
            Ok((values, diff * precision))
        }
        ContentLikelihood::Bernoulli => {
            let mut values = Array1::zeros(x.nrows());
            let mut grad = Array2::zeros(x.raw_dim());
            for b in 0..x.nrows() {
                let mut acc = 0.0;
                for j in 0..x.ncols() {
                    let xv = x[[b, j]];
                    let raw = x_hat[[b, j]];
                    let p = raw.clamp(BERNOULLI_EPS, 1.0 - BERNOULLI_EPS);
                    acc += xv * p.ln() + (1.0 - xv) * (1.0 - p).ln();
                    if raw > BERNOULLI_EPS && raw < 1.0 - BERNOULLI_EPS {
                        grad[[b, j]] = xv / p - (1.0 - xv) / (1.0 - p);
                    }
                }
                values[b] = acc;
            }
            Ok((values, grad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use crate::nn::rng::Rng;

    fn post(mu: Array2<f64>, ls: Array2<f64>) -> GaussianPosterior {
        GaussianPosterior { mu, log_sigma: ls }
    }

    #[test]
    fn zero_noise_returns_mean() {
        let p = post(array![[0.5, -1.0]], array![[0.3, 2.0]]);
        let z = reparameterize(&p, &Array2::zeros((1, 2)));
        assert_eq!(z, p.mu);
    }

    #[test]
    fn unit_posterior_scales_noise_identically() {
        let p = post(array![[0.0]], array![[0.0]]);
        let z = reparameterize(&p, &array![[1.5]]);
        assert_eq!(z[[0, 0]], 1.5);
    }

    #[test]
    fn monte_carlo_moments_of_standard_normal() {
        let n = 100_000;
        let p = post(Array2::zeros((n, 1)), Array2::zeros((n, 1)));
        let (z, _) = sample_gaussian(&p, &mut Rng::new(2024));
        let mean = z.mean().unwrap();
        let var = z.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn kl_is_zero_at_prior() {
        let p = post(Array2::zeros((2, 3)), Array2::zeros((2, 3)));
        assert_eq!(kl_diag_gaussian(&p), array![0.0, 0.0]);
    }

    /// Trapezoidal integration of q log(q/p) for q = N(1, 1), p = N(0, 1).
    #[test]
    fn kl_matches_numerical_integration() {
        let normal = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (lo, hi, n) = (-15.0, 17.0, 200_000);
        let h = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let q = normal(x, 1.0);
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            if q > 0.0 {
                integral += w * q * (q / normal(x, 0.0)).ln() * h;
            }
        }
        assert!((integral - 0.5).abs() < 1e-8, "oracle {integral}");
        let kl = kl_diag_gaussian(&post(array![[1.0]], array![[0.0]]));
        assert!((kl[0] - integral).abs() < 1e-8);
    }

    #[test]
    fn multinomial_of_empty_row_is_zero() {
        let logits = array![[1.0, 2.0, 3.0]];
        let (v, g) = multinomial_ll(logits.view(), &[&[]]).unwrap();
        assert_eq!(v[0], 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn multinomial_uniform_logits_two_hits() {
        let logits = Array2::zeros((1, 4));
        let (v, _) = multinomial_ll(logits.view(), &[&[0, 2]]).unwrap();
        // 2·log(1/4)
        assert!((v[0] - (-2.772588722239781)).abs() < 1e-12);
    }

    #[test]
    fn multinomial_gradient_sums_to_zero() {
        let logits = array![[0.1, -2.0, 3.0, 0.7]];
        let (_, g) = multinomial_ll(logits.view(), &[&[1, 3]]).unwrap();
        assert!(g.sum().abs() < 1e-12);
    }

    #[test]
    fn multinomial_handles_huge_logits() {
        let logits = array![[1e4, -1e4, 0.0]];
        let (v, g) = multinomial_ll(logits.view(), &[&[0, 1]]).unwrap();
        assert!(v[0].is_finite() && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn gaussian_content_ll_values() {
        let x = array![[1.0, 2.0]];
        let (v, _) = content_ll(x.view(), x.view(), ContentLikelihood::default()).unwrap();
        assert_eq!(v[0], 0.0);
        let xh = array![[0.0, 1.0]];
        let (v, g) = content_ll(x.view(), xh.view(), ContentLikelihood::default()).unwrap();
        assert_eq!(v[0], -1.0);
        assert_eq!(g, array![[1.0, 1.0]]);
    }

    #[test]
    fn bernoulli_content_ll_value() {
        let (v, _) = content_ll(
            array![[1.0]].view(),
            array![[0.5]].view(),
            ContentLikelihood::Bernoulli,
        )
        .unwrap();
        assert!((v[0] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_rejects_out_of_range_features() {
        let err = content_ll(
            array![[2.0]].view(),
            array![[0.5]].view(),
            ContentLikelihood::Bernoulli,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn clamp_blocks_head_gradient() {
        let head = array![[0.0, 12.0]];
        let g = GaussianPosterior::head_grad(head.view(), &array![[1.0]], &array![[1.0]]);
        assert_eq!(g, array![[1.0, 0.0]]);
        let p = GaussianPosterior::from_head(head.view()).unwrap();
        assert_eq!(p.log_sigma[[0, 0]], LOG_SIGMA_MAX);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(mu in -20.0f64..20.0, ls in -10.0f64..10.0) {
            let kl = kl_diag_gaussian(&post(array![[mu]], array![[ls]]));
            prop_assert!(kl[0] >= 0.0);
        }

        #[test]
        fn multinomial_is_nonpositive_and_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 6),
            shift in -1e3f64..1e3,
            mask in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let items: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j).collect();
            let a = Array2::from_shape_vec((1, 6), logits.clone()).unwrap();
            let b = a.mapv(|x| x + shift);
            let (va, _) = multinomial_ll(a.view(), &[&items]).unwrap();
            let (vb, _) = multinomial_ll(b.view(), &[&items]).unwrap();
            prop_assert!(va[0] <= 0.0);
            prop_assert!((va[0] - vb[0]).abs() <= 1e-10);
        }
    }
}
