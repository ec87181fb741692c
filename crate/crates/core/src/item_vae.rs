//! Item-content VAE: `q(z_t | x)` encoder, `p(x | z_t)` decoder, greedy
//! layerwise pretraining and the content-side alternating step.

use ndarray::{s, Array2, ArrayView2, Axis};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::layer::add_weight_decay;
use crate::nn::loss::{kl_diag_gaussian_grad, reparameterize};
use crate::nn::{
    content_ll, kl_diag_gaussian, Activation, Adam, ContentLikelihood, DenseLayer,
    GaussianPosterior, Mlp, MlpSpec, Rng, Tensors,
};

/// Posterior over content embeddings, one row per item.
pub type ContentPosterior = GaussianPosterior;

#[derive(Debug, Clone, PartialEq)]
pub struct ItemVaeSpec {
    pub s_dim: usize,
    /// Encoder hidden widths, input side first. The decoder mirrors them.
    pub hidden: Vec<usize>,
    pub k_v: usize,
    pub likelihood: ContentLikelihood,
}

impl ItemVaeSpec {
    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.s_dim];
        d.extend(&self.hidden);
        d.push(2 * self.k_v);
        d
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.k_v];
        d.extend(self.hidden.iter().rev());
        d.push(self.s_dim);
        d
    }

    fn output_activation(&self) -> Activation {
        match self.likelihood {
            ContentLikelihood::Gaussian { .. } => Activation::Linear,
            ContentLikelihood::Bernoulli => Activation::Sigmoid,
        }
    }

    pub fn encoder_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(self.encoder_dims(), Activation::Linear)
    }

    pub fn decoder_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(self.decoder_dims(), self.output_activation())
    }
}

#[derive(Debug, Clone)]
pub struct ItemVae {
    pub spec: ItemVaeSpec,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

#[derive(Debug, Clone)]
pub struct ItemVaeGrads {
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
}

impl Tensors for ItemVae {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }
}

impl Tensors for ItemVaeGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TStepHyper {
    pub lambda_v: f64,
    pub lambda_w: f64,
    /// Share of the catalog in this batch; scales the weight decay.
    pub batch_fraction: f64,
}

/// Objective terms of one content-side batch; `objective()` is maximized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TStepTerms {
    pub content_ll: f64,
    pub kl: f64,
    pub coupling: f64,
    pub weight_decay: f64,
}

impl TStepTerms {
    pub fn objective(&self) -> f64 {
        self.content_ll - self.kl - self.coupling - self.weight_decay
    }

    pub fn accumulate(&mut self, other: &TStepTerms) {
        self.content_ll += other.content_ll;
        self.kl += other.kl;
        self.coupling += other.coupling;
        self.weight_decay += other.weight_decay;
    }
}

impl ItemVae {
    pub fn new(spec: ItemVaeSpec, rng: &mut Rng) -> Result<Self> {
        let encoder = Mlp::new(spec.encoder_spec()?, rng);
        let decoder = Mlp::new(spec.decoder_spec()?, rng);
        Ok(Self {
            spec,
            encoder,
            decoder,
        })
    }

    pub fn from_parts(spec: ItemVaeSpec, encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if encoder.spec() != &spec.encoder_spec()? || decoder.spec() != &spec.decoder_spec()? {
            return Err(Error::dim("item VAE layers do not match the spec"));
        }
        Ok(Self {
            spec,
            encoder,
            decoder,
        })
    }

    pub fn zero_grads(&self) -> ItemVaeGrads {
        ItemVaeGrads {
            encoder: self.encoder.zero_grads(),
            decoder: self.decoder.zero_grads(),
        }
    }

    pub fn weight_sq_norm(&self) -> f64 {
        self.encoder.weight_sq_norm() + self.decoder.weight_sq_norm()
    }

    pub fn encode_content(&self, x: ArrayView2<f64>) -> Result<ContentPosterior> {
        if x.ncols() != self.spec.s_dim {
            return Err(Error::dim(format!(
                "content encoder expects {} features, got {}",
                self.spec.s_dim,
                x.ncols()
            )));
        }
        GaussianPosterior::from_head(self.encoder.predict(x)?.view())
    }

    /// Posterior means for all rows of `x`, computed in chunks.
    pub fn content_means(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.spec.k_v));
        for start in (0..x.nrows()).step_by(1024) {
            let end = (start + 1024).min(x.nrows());
            let post = self.encode_content(x.slice(s![start..end, ..]))?;
            out.slice_mut(s![start..end, ..]).assign(&post.mu);
        }
        Ok(out)
    }

    pub fn decode_content(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.predict(z)
    }

    /// Reconstruction through the posterior mean.
    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let post = self.encode_content(x)?;
        self.decode_content(post.mu.view())
    }

    /// One stochastic evaluation of the content-side objective
    ///
    /// `Σ_j [log p(x_j|z_j) − (λ_v/2)‖v̂_j − z_j‖²] − Σ_j KL(q(z_j|x_j) ‖ N(0,I))
    ///   − batch_fraction·(λ_W/2)·Σ_l ‖W_l‖²`
    ///
    /// with one reparameterized `z_j` per item, and its ascent gradient.
    /// `v_hat` is treated as a constant.
    pub fn t_step(
        &self,
        x: ArrayView2<f64>,
        v_hat: ArrayView2<f64>,
        hp: &TStepHyper,
        rng: &mut Rng,
    ) -> Result<(TStepTerms, ItemVaeGrads)> {
        if !(hp.lambda_v >= 0.0) || !(hp.lambda_w >= 0.0) {
            return Err(Error::config("lambda_v and lambda_w must be >= 0"));
        }
        if v_hat.dim() != (x.nrows(), self.spec.k_v) {
            return Err(Error::dim(format!(
                "v_hat {:?} does not match batch ({}, {})",
                v_hat.dim(),
                x.nrows(),
                self.spec.k_v
            )));
        }
        let (head, enc_cache) = self.encoder.forward(x)?;
        let post = GaussianPosterior::from_head(head.view())?;
        let eps = Array2::from_shape_simple_fn(post.mu.raw_dim(), || rng.normal());
        let z = reparameterize(&post, &eps);
        let (x_hat, dec_cache) = self.decoder.forward(z.view())?;
        let (ll, d_xhat) = content_ll(x, x_hat.view(), self.spec.likelihood)?;
        let diff = &v_hat - &z;
        let kl = kl_diag_gaussian(&post);

        let wd_scale = hp.batch_fraction * hp.lambda_w;
        let terms = TStepTerms {
            content_ll: ll.sum(),
            kl: kl.sum(),
            coupling: 0.5 * hp.lambda_v * diff.iter().map(|d| d * d).sum::<f64>(),
            weight_decay: 0.5 * wd_scale * self.weight_sq_norm(),
        };

        let (dz_dec, mut dec_grads) = self.decoder.backward(&dec_cache, &d_xhat)?;
        let dz = dz_dec + &(diff * hp.lambda_v);
        let (kl_mu, kl_ls) = kl_diag_gaussian_grad(&post);
        let d_mu = &dz - &kl_mu;
        let d_ls = &dz * &eps * &post.sigma() - &kl_ls;
        let d_head = GaussianPosterior::head_grad(head.view(), &d_mu, &d_ls);
        let (_, mut enc_grads) = self.encoder.backward(&enc_cache, &d_head)?;
        add_weight_decay(&mut enc_grads, self.encoder.layers(), wd_scale);
        add_weight_decay(&mut dec_grads, self.decoder.layers(), wd_scale);
        Ok((
            terms,
            ItemVaeGrads {
                encoder: enc_grads,
                decoder: dec_grads,
            },
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    /// Epochs per greedy layer.
    pub epochs: usize,
    /// Epochs of joint VAE training (coupling off) after the greedy stage.
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_w: f64,
}

/// Trains a one-hidden-layer auto-encoder `in → code → in` on `codes` with
/// squared reconstruction error and returns `(encoder, decoder)`.
fn train_autoencoder(
    codes: &Array2<f64>,
    code_dim: usize,
    code_act: Activation,
    out_act: Activation,
    cfg: &PretrainConfig,
    rng: &mut Rng,
) -> Result<(Mlp, Mlp)> {
    let in_dim = codes.ncols();
    let mut enc = Mlp::new(MlpSpec::new(vec![in_dim, code_dim], code_act)?, rng);
    let mut dec = Mlp::new(MlpSpec::new(vec![code_dim, in_dim], out_act)?, rng);
    let mut enc_opt = Adam::new(cfg.learning_rate);
    let mut dec_opt = Adam::new(cfg.learning_rate);
    let n = codes.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch = codes.select(Axis(0), chunk);
            let (c, enc_cache) = enc.forward(batch.view())?;
            let (r, dec_cache) = dec.forward(c.view())?;
            // descent gradient of ½‖r − x‖²
            let dr = &r - &batch;
            let (dc, dec_grads) = dec.backward(&dec_cache, &dr)?;
            let (_, enc_grads) = enc.backward(&enc_cache, &dc)?;
            dec_opt.step(&mut dec, &dec_grads)?;
            enc_opt.step(&mut enc, &enc_grads)?;
        }
    }
    Ok((enc, dec))
}

/// Greedy stacked auto-encoder pretraining: level `l` learns to reconstruct
/// the codes of level `l − 1`, and its halves seed encoder layer `l` and the
/// mirrored decoder layer. The top level fills the mean half of the encoder
/// head; the log-σ half keeps its initialization. Zero epochs returns the
/// initialized model. An optional joint VAE stage follows.
pub fn pretrain_layerwise(
    x: ArrayView2<f64>,
    spec: &ItemVaeSpec,
    cfg: &PretrainConfig,
    rng: &mut Rng,
) -> Result<ItemVae> {
    let mut vae = ItemVae::new(spec.clone(), rng)?;
    if cfg.epochs == 0 || x.nrows() == 0 {
        return Ok(vae);
    }
    spec.likelihood.validate_features(x)?;
    let levels = spec.hidden.len() + 1;
    let enc_dims = spec.encoder_dims();
    let mut codes = x.to_owned();
    for level in 0..levels {
        let top = level + 1 == levels;
        let code_dim = if top { spec.k_v } else { enc_dims[level + 1] };
        let code_act = if top { Activation::Linear } else { Activation::Tanh };
        let out_act = if level == 0 {
            spec.decoder_spec()?.output
        } else {
            Activation::Tanh
        };
        let (enc, dec) = train_autoencoder(&codes, code_dim, code_act, out_act, cfg, rng)?;
        {
            let layer = &mut vae.encoder.layers_mut()[level];
            let src = &enc.layers()[0];
            layer
                .weight
                .slice_mut(s![..code_dim, ..])
                .assign(&src.weight);
            layer.bias.slice_mut(s![..code_dim]).assign(&src.bias);
        }
        vae.decoder.layers_mut()[levels - 1 - level] = dec.layers()[0].clone();
        codes = enc.predict(codes.view())?;
    }

    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    for _ in 0..cfg.finetune_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = x.select(Axis(0), chunk);
            let vb = Array2::zeros((chunk.len(), spec.k_v));
            let hp = TStepHyper {
                lambda_v: 0.0,
                lambda_w: cfg.lambda_w,
                batch_fraction: chunk.len() as f64 / x.nrows() as f64,
            };
            let (_, mut grads) = vae.t_step(xb.view(), vb.view(), &hp, rng)?;
            grads.scale(-1.0);
            opt.step(&mut vae, &grads)?;
        }
    }
    Ok(vae)
}
