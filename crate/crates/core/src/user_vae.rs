//! User-oriented VAE over binary interaction rows.
//!
//! The decoder's last layer is the item embedding matrix `V` (J × K_v) with a
//! per-item bias. The encoder's first layer sums the embeddings of the items
//! a user interacted with; in symmetric mode that embedding table *is* `V`,
//! in normal mode it is a separate untied table of the same shape.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::layer::{add_weight_decay, glorot_uniform};
use crate::nn::loss::{kl_diag_gaussian_grad, reparameterize};
use crate::nn::{
    kl_diag_gaussian, multinomial_ll, Activation, DenseLayer, GaussianPosterior, Mlp, MlpSpec,
    Rng, Tensors,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Untied encoder first layer.
    Normal,
    /// Encoder first layer shares storage with the item embeddings.
    Symmetric,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Mode::Normal),
            "symmetric" => Ok(Mode::Symmetric),
            other => Err(Error::config(format!(
                "mode must be normal or symmetric, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Normal => "normal",
            Mode::Symmetric => "symmetric",
        })
    }
}

/// Linear KL warm-up: `beta_max · min(1, step / anneal_steps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaSchedule {
    pub beta_max: f64,
    pub anneal_steps: u64,
}

impl BetaSchedule {
    pub fn beta(&self, step: u64) -> f64 {
        kl_anneal(step, self)
    }
}

pub fn kl_anneal(step: u64, schedule: &BetaSchedule) -> f64 {
    if schedule.anneal_steps == 0 {
        return schedule.beta_max;
    }
    schedule.beta_max * (step as f64 / schedule.anneal_steps as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserVaeSpec {
    pub mode: Mode,
    pub n_items: usize,
    pub k_u: usize,
    pub k_v: usize,
    /// Extra encoder widths between the embedding sum and the posterior
    /// head; the decoder mirrors them.
    pub hidden: Vec<usize>,
    /// Scale each input row by `1/sqrt(#interactions)` before the sum.
    pub normalize_input: bool,
}

impl UserVaeSpec {
    pub fn encoder_spec(&self) -> Result<MlpSpec> {
        let mut d = vec![self.k_v];
        d.extend(&self.hidden);
        d.push(2 * self.k_u);
        MlpSpec::new(d, Activation::Linear)
    }

    pub fn decoder_spec(&self) -> Result<MlpSpec> {
        let mut d = vec![self.k_u];
        d.extend(self.hidden.iter().rev());
        d.push(self.k_v);
        MlpSpec::new(d, Activation::Tanh)
    }
}

#[derive(Debug, Clone)]
pub struct UserVae {
    pub spec: UserVaeSpec,
    /// Untied embedding table (J, K_v); `None` in symmetric mode.
    pub first_weight: Option<Array2<f64>>,
    pub first_bias: Array1<f64>,
    /// Embedding sum (after tanh) to the `(μ, log σ)` head.
    pub encoder: Mlp,
    /// Latent user to the K_v-wide item-embedding space.
    pub decoder: Mlp,
    /// Item embeddings `V` (J, K_v).
    pub item_emb: Array2<f64>,
    pub item_bias: Array1<f64>,
}

/// Gradients laid out like [`UserVae`]'s tensors.
#[derive(Debug, Clone)]
pub struct UserVaeGrads {
    pub first_weight: Option<Array2<f64>>,
    pub first_bias: Array1<f64>,
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
    pub item_emb: Array2<f64>,
    pub item_bias: Array1<f64>,
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

impl Tensors for UserVae {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = Vec::new();
        if let Some(w) = &self.first_weight {
            t.push(slice(w));
        }
        t.push(self.first_bias.as_slice().expect("standard layout"));
        t.extend(self.encoder.tensors());
        t.extend(self.decoder.tensors());
        t.push(slice(&self.item_emb));
        t.push(self.item_bias.as_slice().expect("standard layout"));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = Vec::new();
        if let Some(w) = &mut self.first_weight {
            t.push(slice_mut(w));
        }
        t.push(self.first_bias.as_slice_mut().expect("standard layout"));
        t.extend(self.encoder.tensors_mut());
        t.extend(self.decoder.tensors_mut());
        t.push(slice_mut(&mut self.item_emb));
        t.push(self.item_bias.as_slice_mut().expect("standard layout"));
        t
    }
}

impl Tensors for UserVaeGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = Vec::new();
        if let Some(w) = &self.first_weight {
            t.push(slice(w));
        }
        t.push(self.first_bias.as_slice().expect("standard layout"));
        t.extend(self.encoder.tensors());
        t.extend(self.decoder.tensors());
        t.push(slice(&self.item_emb));
        t.push(self.item_bias.as_slice().expect("standard layout"));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = Vec::new();
        if let Some(w) = &mut self.first_weight {
            t.push(slice_mut(w));
        }
        t.push(self.first_bias.as_slice_mut().expect("standard layout"));
        t.extend(self.encoder.tensors_mut());
        t.extend(self.decoder.tensors_mut());
        t.push(slice_mut(&mut self.item_emb));
        t.push(self.item_bias.as_slice_mut().expect("standard layout"));
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BStepHyper {
    pub lambda_v: f64,
    pub lambda_w: f64,
    pub beta: f64,
    /// Users in this batch over training users; scales both penalties.
    pub batch_fraction: f64,
    pub dropout: f64,
}

/// Objective terms of one user batch; `objective()` is maximized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BStepTerms {
    pub multinomial_ll: f64,
    /// Unweighted KL sum.
    pub kl: f64,
    /// `β · kl` as it enters the objective.
    pub beta_kl: f64,
    pub coupling: f64,
    pub weight_decay: f64,
}

impl BStepTerms {
    pub fn objective(&self) -> f64 {
        self.multinomial_ll - self.beta_kl - self.coupling - self.weight_decay
    }

    pub fn accumulate(&mut self, other: &BStepTerms) {
        self.multinomial_ll += other.multinomial_ll;
        self.kl += other.kl;
        self.beta_kl += other.beta_kl;
        self.coupling += other.coupling;
        self.weight_decay += other.weight_decay;
    }
}

/// Items surviving input dropout and their common per-row scale.
struct MaskedInput {
    kept: Vec<Vec<usize>>,
    scale: Vec<f64>,
}

impl UserVae {
    pub fn new(spec: UserVaeSpec, rng: &mut Rng) -> Result<Self> {
        if spec.n_items == 0 || spec.k_u == 0 || spec.k_v == 0 {
            return Err(Error::config("n_items, k_u and k_v must be positive"));
        }
        let (j, k) = (spec.n_items, spec.k_v);
        let first_weight = match spec.mode {
            Mode::Normal => Some(glorot_uniform(j, k, j, k, rng)),
            Mode::Symmetric => None,
        };
        let encoder = Mlp::new(spec.encoder_spec()?, rng);
        let decoder = Mlp::new(spec.decoder_spec()?, rng);
        let item_emb = glorot_uniform(j, k, k, j, rng);
        Ok(Self {
            first_bias: Array1::zeros(k),
            item_bias: Array1::zeros(j),
            first_weight,
            encoder,
            decoder,
            item_emb,
            spec,
        })
    }

    /// Checks that every tensor matches the spec.
    pub fn validate(&self) -> Result<()> {
        let (j, k) = (self.spec.n_items, self.spec.k_v);
        let first_ok = match (self.spec.mode, &self.first_weight) {
            (Mode::Normal, Some(w)) => w.dim() == (j, k),
            (Mode::Symmetric, None) => true,
            _ => false,
        };
        if !first_ok
            || self.first_bias.len() != k
            || self.item_emb.dim() != (j, k)
            || self.item_bias.len() != j
            || self.encoder.spec() != &self.spec.encoder_spec()?
            || self.decoder.spec() != &self.spec.decoder_spec()?
        {
            return Err(Error::dim("user VAE tensors do not match the spec"));
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.spec.mode
    }

    pub fn num_items(&self) -> usize {
        self.spec.n_items
    }

    /// The encoder's first-layer embedding table; `V` itself in symmetric
    /// mode.
    pub fn encoder_first_weight(&self) -> &Array2<f64> {
        self.first_weight.as_ref().unwrap_or(&self.item_emb)
    }

    pub fn zero_grads(&self) -> UserVaeGrads {
        UserVaeGrads {
            first_weight: self.first_weight.as_ref().map(|w| Array2::zeros(w.raw_dim())),
            first_bias: Array1::zeros(self.first_bias.len()),
            encoder: self.encoder.zero_grads(),
            decoder: self.decoder.zero_grads(),
            item_emb: Array2::zeros(self.item_emb.raw_dim()),
            item_bias: Array1::zeros(self.item_bias.len()),
        }
    }

    /// Squared Frobenius norm of every weight matrix under weight decay:
    /// the untied first layer and all dense layers, but not `V`.
    pub fn decayed_sq_norm(&self) -> f64 {
        let first = self
            .first_weight
            .as_ref()
            .map_or(0.0, |w| w.iter().map(|x| x * x).sum());
        first + self.encoder.weight_sq_norm() + self.decoder.weight_sq_norm()
    }

    fn check_rows(&self, rows: &[&[usize]]) -> Result<()> {
        let j = self.spec.n_items;
        for (b, row) in rows.iter().enumerate() {
            if let Some(&bad) = row.iter().find(|&&i| i >= j) {
                return Err(Error::dim(format!(
                    "row {b} references item {bad} outside a catalog of {j}"
                )));
            }
        }
        Ok(())
    }

    fn mask(&self, rows: &[&[usize]], dropout: f64, rng: &mut Rng) -> Result<MaskedInput> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        let mut kept = Vec::with_capacity(rows.len());
        let mut scale = Vec::with_capacity(rows.len());
        for row in rows {
            let norm = if self.spec.normalize_input && !row.is_empty() {
                1.0 / (row.len() as f64).sqrt()
            } else {
                1.0
            };
            if dropout > 0.0 {
                kept.push(row.iter().copied().filter(|_| rng.uniform() >= dropout).collect());
                scale.push(norm / (1.0 - dropout));
            } else {
                kept.push(row.to_vec());
                scale.push(norm);
            }
        }
        Ok(MaskedInput { kept, scale })
    }

    fn embedding_sum(&self, input: &MaskedInput) -> Array2<f64> {
        let w = self.encoder_first_weight();
        let mut a = Array2::zeros((input.kept.len(), self.spec.k_v));
        for (u, items) in input.kept.iter().enumerate() {
            let mut acc = a.row_mut(u);
            for &j in items {
                acc.scaled_add(input.scale[u], &w.row(j));
            }
            acc += &self.first_bias;
        }
        a
    }

    /// First-layer pre-activation `Σ_{j ∈ row} w_j + b` (no dropout).
    pub fn first_layer(&self, rows: &[&[usize]]) -> Result<Array2<f64>> {
        self.check_rows(rows)?;
        let input = self.mask(rows, 0.0, &mut Rng::new(0))?;
        Ok(self.embedding_sum(&input))
    }

    pub fn encode_users(
        &self,
        rows: &[&[usize]],
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<GaussianPosterior> {
        self.check_rows(rows)?;
        let input = self.mask(rows, dropout, rng)?;
        let h1 = self.embedding_sum(&input).mapv(f64::tanh);
        GaussianPosterior::from_head(self.encoder.predict(h1.view())?.view())
    }

    /// `h Vᵀ + bias` for decoder outputs `h` (B, K_v).
    pub fn logits_from_hidden(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        if h.ncols() != self.spec.k_v {
            return Err(Error::dim(format!(
                "hidden width {} does not match K_v = {}",
                h.ncols(),
                self.spec.k_v
            )));
        }
        Ok(h.dot(&self.item_emb.t()) + &self.item_bias)
    }

    pub fn decode_users(&self, u: ArrayView2<f64>) -> Result<Array2<f64>> {
        if u.ncols() != self.spec.k_u {
            return Err(Error::dim(format!(
                "latent width {} does not match K_u = {}",
                u.ncols(),
                self.spec.k_u
            )));
        }
        let h = self.decoder.predict(u)?;
        self.logits_from_hidden(h.view())
    }

    /// One stochastic evaluation of the user-side objective
    ///
    /// `Σ_u log Mult(r_u | softmax(logits_u)) − β Σ_u KL(q(u|r_u) ‖ N(0,I))
    ///   − f·(λ_v/2)‖V − Ẑ‖² − f·(λ_W/2)·Σ‖W‖²`
    ///
    /// where `f` is the batch fraction, with one reparameterized sample per
    /// user, and its ascent gradient. `z_hat` is treated as a constant and
    /// may be omitted only when `λ_v = 0`. Input dropout draws from `rng`
    /// before the latent noise does.
    pub fn b_step(
        &self,
        rows: &[&[usize]],
        z_hat: Option<ArrayView2<f64>>,
        hp: &BStepHyper,
        rng: &mut Rng,
    ) -> Result<(BStepTerms, UserVaeGrads)> {
        if !(hp.beta >= 0.0) || !(hp.lambda_v >= 0.0) || !(hp.lambda_w >= 0.0) {
            return Err(Error::config("beta, lambda_v and lambda_w must be >= 0"));
        }
        if let Some(z) = z_hat {
            if z.dim() != self.item_emb.dim() {
                return Err(Error::dim(format!(
                    "content means {:?} do not match item embeddings {:?}",
                    z.dim(),
                    self.item_emb.dim()
                )));
            }
        } else if hp.lambda_v > 0.0 {
            return Err(Error::config("lambda_v > 0 requires content means"));
        }
        self.check_rows(rows)?;

        let input = self.mask(rows, hp.dropout, rng)?;
        let h1 = self.embedding_sum(&input).mapv(f64::tanh);
        let (head, enc_cache) = self.encoder.forward(h1.view())?;
        let post = GaussianPosterior::from_head(head.view())?;
        let eps = Array2::from_shape_simple_fn(post.mu.raw_dim(), || rng.normal());
        let z = reparameterize(&post, &eps);
        let (h, dec_cache) = self.decoder.forward(z.view())?;
        let logits = self.logits_from_hidden(h.view())?;
        let (ll, d_logits) = multinomial_ll(logits.view(), rows)?;
        let kl = kl_diag_gaussian(&post).sum();

        let f = hp.batch_fraction;
        let diff = z_hat.map(|zh| &self.item_emb - &zh);
        let coupling = diff
            .as_ref()
            .map_or(0.0, |d| 0.5 * f * hp.lambda_v * d.iter().map(|x| x * x).sum::<f64>());
        let terms = BStepTerms {
            multinomial_ll: ll.sum(),
            kl,
            beta_kl: hp.beta * kl,
            coupling,
            weight_decay: 0.5 * f * hp.lambda_w * self.decayed_sq_norm(),
        };

        let mut g = self.zero_grads();
        g.item_bias = d_logits.sum_axis(Axis(0));
        g.item_emb = d_logits.t().dot(&h);
        let dh = d_logits.dot(&self.item_emb);
        let (dz, dec_grads) = self.decoder.backward(&dec_cache, &dh)?;
        let (kl_mu, kl_ls) = kl_diag_gaussian_grad(&post);
        let d_mu = &dz - &(kl_mu * hp.beta);
        let d_ls = &dz * &eps * &post.sigma() - &(kl_ls * hp.beta);
        let d_head = GaussianPosterior::head_grad(head.view(), &d_mu, &d_ls);
        let (dh1, enc_grads) = self.encoder.backward(&enc_cache, &d_head)?;
        let da = dh1 * &h1.mapv(|t| 1.0 - t * t);
        g.first_bias = da.sum_axis(Axis(0));
        {
            let target = g.first_weight.as_mut().unwrap_or(&mut g.item_emb);
            for (u, items) in input.kept.iter().enumerate() {
                for &j in items {
                    target.row_mut(j).scaled_add(input.scale[u], &da.row(u));
                }
            }
        }
        g.encoder = enc_grads;
        g.decoder = dec_grads;

        if let Some(d) = diff {
            g.item_emb.scaled_add(-f * hp.lambda_v, &d);
        }
        let wd = f * hp.lambda_w;
        add_weight_decay(&mut g.encoder, self.encoder.layers(), wd);
        add_weight_decay(&mut g.decoder, self.decoder.layers(), wd);
        if let (Some(gw), Some(w)) = (g.first_weight.as_mut(), self.first_weight.as_ref()) {
            gw.scaled_add(-wd, w);
        }
        Ok((terms, g))
    }

    /// Appends item rows to `V` and the bias. Only a symmetric model can be
    /// extended, since an untied first layer has no rows for new items.
    pub fn with_new_items(&self, v_new: ArrayView2<f64>, bias_new: &[f64]) -> Result<UserVae> {
        if self.spec.mode != Mode::Symmetric {
            return Err(extension_unsupported());
        }
        if v_new.ncols() != self.spec.k_v || v_new.nrows() != bias_new.len() {
            return Err(Error::dim(format!(
                "new item block {:?} with {} biases does not fit K_v = {}",
                v_new.dim(),
                bias_new.len(),
                self.spec.k_v
            )));
        }
        let mut out = self.clone();
        out.spec.n_items += v_new.nrows();
        out.item_emb = ndarray::concatenate![Axis(0), self.item_emb.view(), v_new];
        out.item_bias = self.item_bias.iter().chain(bias_new).copied().collect();
        Ok(out)
    }
}

pub(crate) fn extension_unsupported() -> Error {
    Error::Unsupported(
        "adding items without retraining requires a symmetric-mode model; a normal-mode model \
         has no encoder weights for unseen items and must be retrained once interactions are \
         collected"
            .into(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, Adam, GradCheckConfig};
    use ndarray::array;

    fn spec(mode: Mode, n_items: usize) -> UserVaeSpec {
        UserVaeSpec {
            mode,
            n_items,
            k_u: 3,
            k_v: 4,
            hidden: vec![],
            normalize_input: false,
        }
    }

    fn toy_rows() -> Vec<Vec<usize>> {
        vec![
            vec![0, 2, 5],
            vec![1],
            vec![3, 4, 6, 7],
            vec![0, 7],
            vec![2, 3, 5, 6],
        ]
    }

    fn refs(rows: &[Vec<usize>]) -> Vec<&[usize]> {
        rows.iter().map(|r| r.as_slice()).collect()
    }

    #[test]
    fn anneal_schedule() {
        let s = BetaSchedule {
            beta_max: 0.2,
            anneal_steps: 100,
        };
        assert_eq!(kl_anneal(0, &s), 0.0);
        assert_eq!(kl_anneal(100, &s), 0.2);
        assert!((kl_anneal(50, &s) - 0.1).abs() < 1e-15);
        assert_eq!(kl_anneal(500, &s), 0.2);
    }

    #[test]
    fn mode_round_trips_through_text() {
        for m in [Mode::Normal, Mode::Symmetric] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("tied".parse::<Mode>().is_err());
    }

    #[test]
    fn empty_row_yields_bias_only() {
        let mut vae = UserVae::new(spec(Mode::Normal, 8), &mut Rng::new(1)).unwrap();
        vae.first_bias = array![0.1, 0.2, 0.3, 0.4];
        let a = vae.first_layer(&[&[]]).unwrap();
        assert_eq!(a.row(0), vae.first_bias);
    }

    #[test]
    fn single_interaction_adds_one_embedding() {
        for mode in [Mode::Normal, Mode::Symmetric] {
            let mut vae = UserVae::new(spec(mode, 8), &mut Rng::new(1)).unwrap();
            vae.first_bias = array![0.1, 0.2, 0.3, 0.4];
            let a = vae.first_layer(&[&[5]]).unwrap();
            let expected = &vae.encoder_first_weight().row(5) + &vae.first_bias;
            assert_eq!(a.row(0), expected);
        }
    }

    #[test]
    fn symmetric_sum_matches_dense_transpose_product() {
        let vae = UserVae::new(spec(Mode::Symmetric, 8), &mut Rng::new(4)).unwrap();
        let rows = toy_rows();
        let a = vae.first_layer(&refs(&rows)).unwrap();
        for (u, row) in rows.iter().enumerate() {
            let mut r = vec![0.0; 8];
            row.iter().for_each(|&j| r[j] = 1.0);
            for k in 0..4 {
                let mut acc = 0.0;
                for (j, &rj) in r.iter().enumerate() {
                    acc += rj * vae.item_emb[[j, k]];
                }
                assert_eq!(a[[u, k]], acc + vae.first_bias[k]);
            }
        }
    }

    #[test]
    fn out_of_range_item_is_dimension_error() {
        let vae = UserVae::new(spec(Mode::Normal, 8), &mut Rng::new(1)).unwrap();
        let err = vae.encode_users(&[&[8]], 0.0, &mut Rng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn zero_embeddings_give_bias_logits() {
        let mut vae = UserVae::new(spec(Mode::Normal, 3), &mut Rng::new(1)).unwrap();
        vae.item_emb.fill(0.0);
        vae.item_bias = array![0.5, -1.0, 2.0];
        let logits = vae.decode_users(array![[0.3, -0.2, 1.0]].view()).unwrap();
        assert_eq!(logits, array![[0.5, -1.0, 2.0]]);
    }

    #[test]
    fn scalar_embedding_logits() {
        let mut vae = UserVae::new(
            UserVaeSpec {
                k_v: 1,
                ..spec(Mode::Normal, 2)
            },
            &mut Rng::new(1),
        )
        .unwrap();
        vae.item_emb = array![[1.0], [2.0]];
        let logits = vae.logits_from_hidden(array![[3.0]].view()).unwrap();
        assert_eq!(logits, array![[3.0, 6.0]]);
    }

    #[test]
    fn permuting_items_permutes_logits() {
        let vae = UserVae::new(spec(Mode::Normal, 6), &mut Rng::new(2)).unwrap();
        let mut rng = Rng::new(3);
        let perm = [4usize, 0, 5, 2, 1, 3];
        let mut permuted = vae.clone();
        permuted.item_emb = vae.item_emb.select(Axis(0), &perm);
        permuted.item_bias = vae.item_bias.select(Axis(0), &perm);
        let u = Array2::from_shape_simple_fn((2, 3), || rng.normal());
        let a = vae.decode_users(u.view()).unwrap();
        let b = permuted.decode_users(u.view()).unwrap();
        for (k, &src) in perm.iter().enumerate() {
            assert_eq!(b.column(k), a.column(src));
        }
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let vae = UserVae::new(spec(Mode::Normal, 8), &mut Rng::new(1)).unwrap();
        let rows = toy_rows();
        let base = BStepHyper {
            lambda_v: 0.0,
            lambda_w: 0.0,
            beta: 0.2,
            batch_fraction: 1.0,
            dropout: 0.0,
        };
        for hp in [
            BStepHyper { beta: -0.1, ..base },
            BStepHyper { lambda_v: -1.0, ..base },
            BStepHyper { lambda_v: 1.0, ..base },
            BStepHyper { dropout: 1.0, ..base },
        ] {
            let r = vae.b_step(&refs(&rows), None, &hp, &mut Rng::new(0));
            assert!(matches!(r, Err(Error::Config(_))), "{hp:?}");
        }
    }

    fn gradcheck(vae: &UserVae, hp: BStepHyper) {
        let rows = toy_rows();
        let rows = refs(&rows);
        let mut rng = Rng::new(50);
        let z_hat = Array2::from_shape_simple_fn(vae.item_emb.raw_dim(), || rng.normal());
        let (_, grads) = vae
            .b_step(&rows, Some(z_hat.view()), &hp, &mut Rng::new(9))
            .unwrap();
        let report = finite_diff_check(
            vae,
            &grads,
            |m| {
                m.b_step(&rows, Some(z_hat.view()), &hp, &mut Rng::new(9))
                    .unwrap()
                    .0
                    .objective()
            },
            &GradCheckConfig::default(),
            &mut Rng::new(1),
        );
        assert!(report.pass, "{:?} {hp:?}: {report:?}", vae.mode());
    }

    #[test]
    fn b_step_gradient_matches_finite_differences() {
        let hp = BStepHyper {
            lambda_v: 2.0,
            lambda_w: 0.5,
            beta: 0.3,
            batch_fraction: 0.5,
            dropout: 0.0,
        };
        for mode in [Mode::Normal, Mode::Symmetric] {
            for (hidden, normalize) in [(vec![], false), (vec![5], true)] {
                let sp = UserVaeSpec {
                    hidden,
                    normalize_input: normalize,
                    ..spec(mode, 8)
                };
                let vae = UserVae::new(sp, &mut Rng::new(12)).unwrap();
                gradcheck(&vae, hp);
            }
        }
        // a fixed dropout mask is just another frozen random draw
        let vae = UserVae::new(spec(Mode::Symmetric, 8), &mut Rng::new(13)).unwrap();
        gradcheck(&vae, BStepHyper { dropout: 0.5, ..hp });
    }

    #[test]
    fn symmetric_tie_survives_optimizer_steps() {
        let mut vae = UserVae::new(spec(Mode::Symmetric, 8), &mut Rng::new(5)).unwrap();
        let rows = toy_rows();
        let hp = BStepHyper {
            lambda_v: 0.0,
            lambda_w: 0.1,
            beta: 0.2,
            batch_fraction: 1.0,
            dropout: 0.5,
        };
        let mut opt = Adam::new(1e-2);
        let mut rng = Rng::new(6);
        for _ in 0..5 {
            let (_, mut g) = vae.b_step(&refs(&rows), None, &hp, &mut rng).unwrap();
            g.scale(-1.0);
            opt.step(&mut vae, &g).unwrap();
            assert!(std::ptr::eq(vae.encoder_first_weight(), &vae.item_emb));
            assert_eq!(vae.encoder_first_weight(), &vae.item_emb);
        }
    }

    #[test]
    fn mean_encode_decode_is_deterministic() {
        let vae = UserVae::new(spec(Mode::Normal, 8), &mut Rng::new(5)).unwrap();
        let rows = toy_rows();
        let run = || {
            let post = vae.encode_users(&refs(&rows), 0.0, &mut Rng::new(0)).unwrap();
            vae.decode_users(post.mu.view()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn extension_requires_symmetric_mode() {
        let v_new = array![[0.1, 0.2, 0.3, 0.4]];
        let normal = UserVae::new(spec(Mode::Normal, 8), &mut Rng::new(1)).unwrap();
        assert!(matches!(
            normal.with_new_items(v_new.view(), &[0.0]),
            Err(Error::Unsupported(_))
        ));
        let sym = UserVae::new(spec(Mode::Symmetric, 8), &mut Rng::new(1)).unwrap();
        let ext = sym.with_new_items(v_new.view(), &[0.5]).unwrap();
        assert_eq!(ext.num_items(), 9);
        assert_eq!(ext.item_emb.row(8), v_new.row(0));
        assert_eq!(ext.item_bias[8], 0.5);
        ext.validate().unwrap();
    }
}
