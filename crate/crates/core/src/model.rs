//! A trained recommender: the user VAE plus, when content is enabled, the
//! item-content VAE, along with the configuration that produced them.

use crate::error::{Error, Result};
use crate::item_vae::ItemVae;
use crate::nn::{Rng, Tensors};
use crate::trainer::TrainConfig;
use crate::user_vae::{Mode, UserVae};

#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub user: UserVae,
    pub item: Option<ItemVae>,
}

impl Model {
    /// Freshly initialized model for a catalog of `n_items`; `s_dim` is
    /// required exactly when content is enabled.
    pub fn new(
        config: TrainConfig,
        n_items: usize,
        s_dim: Option<usize>,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let user = UserVae::new(config.user_spec(n_items), rng)?;
        let item = match (config.use_content, s_dim) {
            (true, Some(s)) => Some(ItemVae::new(config.item_spec(s), rng)?),
            (false, _) => None,
            (true, None) => return Err(Error::config("content is enabled but no features were given")),
        };
        Ok(Self { config, user, item })
    }

    pub fn mode(&self) -> Mode {
        self.user.mode()
    }

    pub fn num_items(&self) -> usize {
        self.user.num_items()
    }

    pub fn s_dim(&self) -> Option<usize> {
        self.item.as_ref().map(|i| i.spec.s_dim)
    }

    pub fn num_params(&self) -> usize {
        self.user.num_params() + self.item.as_ref().map_or(0, |i| i.num_params())
    }
}
