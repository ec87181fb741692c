//! Finite-difference checks of both step functions on toy shapes.

use ndarray::Array2;
use serde::Serialize;

use crate::item_vae::{ItemVae, ItemVaeSpec, TStepHyper};
use crate::nn::{finite_diff_check, ContentLikelihood, GradCheckConfig, Rng};
use crate::user_vae::{BStepHyper, Mode, UserVae, UserVaeSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub pass: bool,
}

const USERS: usize = 8;
const ITEMS: usize = 12;
const FEATURES: usize = 6;

fn toy_rows(rng: &mut Rng) -> Vec<Vec<usize>> {
    (0..USERS)
        .map(|_| (0..ITEMS).filter(|_| rng.uniform() < 0.3).collect())
        .collect()
}

fn t_step_suite(name: &str, likelihood: ContentLikelihood, seed: u64) -> SuiteResult {
    let mut rng = Rng::derive(seed, 1);
    let spec = ItemVaeSpec {
        s_dim: FEATURES,
        hidden: vec![5],
        k_v: 3,
        likelihood,
    };
    let vae = ItemVae::new(spec, &mut rng).expect("toy spec is valid");
    let x = Array2::from_shape_simple_fn((ITEMS, FEATURES), || rng.uniform());
    let v = Array2::from_shape_simple_fn((ITEMS, 3), || rng.normal());
    let hp = TStepHyper {
        lambda_v: 2.0,
        lambda_w: 0.1,
        batch_fraction: 0.5,
    };
    let noise = derive_noise_seed(seed);
    let objective = |m: &ItemVae| {
        m.t_step(x.view(), v.view(), &hp, &mut Rng::new(noise))
            .expect("toy t_step")
            .0
            .objective()
    };
    let (_, grads) = vae
        .t_step(x.view(), v.view(), &hp, &mut Rng::new(noise))
        .expect("toy t_step");
    let r = finite_diff_check(&vae, &grads, objective, &GradCheckConfig::default(), &mut rng);
    SuiteResult {
        name: name.to_string(),
        max_rel_err: r.max_rel_err,
        checked: r.checked,
        pass: r.pass,
    }
}

fn b_step_suite(name: &str, mode: Mode, seed: u64) -> SuiteResult {
    let mut rng = Rng::derive(seed, 2);
    let spec = UserVaeSpec {
        mode,
        n_items: ITEMS,
        k_u: 3,
        k_v: 4,
        hidden: vec![5],
        normalize_input: false,
    };
    let vae = UserVae::new(spec, &mut rng).expect("toy spec is valid");
    let rows = toy_rows(&mut rng);
    let rows: Vec<&[usize]> = rows.iter().map(Vec::as_slice).collect();
    let z_hat = Array2::from_shape_simple_fn((ITEMS, 4), || rng.normal());
    let hp = BStepHyper {
        lambda_v: 2.0,
        lambda_w: 0.1,
        beta: 0.3,
        batch_fraction: 0.5,
        dropout: 0.0,
    };
    let noise = derive_noise_seed(seed);
    let objective = |m: &UserVae| {
        m.b_step(&rows, Some(z_hat.view()), &hp, &mut Rng::new(noise))
            .expect("toy b_step")
            .0
            .objective()
    };
    let (_, grads) = vae
        .b_step(&rows, Some(z_hat.view()), &hp, &mut Rng::new(noise))
        .expect("toy b_step");
    let r = finite_diff_check(&vae, &grads, objective, &GradCheckConfig::default(), &mut rng);
    SuiteResult {
        name: name.to_string(),
        max_rel_err: r.max_rel_err,
        checked: r.checked,
        pass: r.pass,
    }
}

fn derive_noise_seed(seed: u64) -> u64 {
    crate::nn::derive_seed(seed, 3)
}

/// Content step under both likelihoods, user step in both modes.
pub fn run_suites(seed: u64) -> Vec<SuiteResult> {
    vec![
        t_step_suite("t_step gaussian", ContentLikelihood::Gaussian { precision: 1.5 }, seed),
        t_step_suite("t_step bernoulli", ContentLikelihood::Bernoulli, seed),
        b_step_suite("b_step normal", Mode::Normal, seed),
        b_step_suite("b_step symmetric", Mode::Symmetric, seed),
    ]
}
