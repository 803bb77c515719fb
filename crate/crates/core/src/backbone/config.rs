use serde::{Deserialize, Serialize};

use crate::error::{Result, TadError};

/// Architecture and training budget of the generative backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Input window length.
    pub l: usize,
    /// Forecast horizon.
    pub h: usize,
    /// Number of features.
    pub p: usize,
    pub conv_layers: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub dropout: f64,
    pub lstm_hidden: usize,
    pub latent_dim: usize,
    pub refine_hidden: usize,
    /// `(w1, w2, wr)`: first-pass forecast, refined forecast, reconstruction.
    pub loss_weights: [f64; 3],
    pub latent_penalty: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Embedding width used by default. 128 is not divisible by six heads; 132 is
/// the nearest width that is.
pub const DEFAULT_EMBED_DIM: usize = 132;

impl BackboneConfig {
    pub fn new(l: usize, h: usize, p: usize) -> Self {
        Self {
            l,
            h,
            p,
            conv_layers: 2,
            conv_filters: 64,
            conv_width: 3,
            embed_dim: DEFAULT_EMBED_DIM,
            heads: 6,
            ff_width: 128,
            dropout: 0.1,
            lstm_hidden: 32,
            latent_dim: 128,
            refine_hidden: 128,
            loss_weights: [0.2, 0.8, 0.5],
            latent_penalty: 0.0,
            lr: 1e-3,
            epochs: 30,
            batch_size: 32,
        }
    }

    /// Reduced widths for single-core statistical experiments.
    pub fn desk(l: usize, h: usize, p: usize) -> Self {
        Self {
            conv_filters: 16,
            embed_dim: 24,
            ff_width: 32,
            lstm_hidden: 8,
            latent_dim: 16,
            refine_hidden: 32,
            epochs: 10,
            ..Self::new(l, h, p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("l", self.l),
            ("h", self.h),
            ("p", self.p),
            ("conv_layers", self.conv_layers),
            ("conv_filters", self.conv_filters),
            ("conv_width", self.conv_width),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("ff_width", self.ff_width),
            ("lstm_hidden", self.lstm_hidden),
            ("latent_dim", self.latent_dim),
            ("refine_hidden", self.refine_hidden),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(TadError::Config(format!("backbone.{name} must be positive")));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(TadError::Config(format!(
                "backbone.embed_dim {} is not divisible by backbone.heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.embed_dim < 2 {
            return Err(TadError::Config("backbone.embed_dim must be at least 2".into()));
        }
        if self.conv_width % 2 == 0 || self.conv_width > self.l {
            return Err(TadError::Config(format!(
                "backbone.conv_width {} must be odd and at most L = {}",
                self.conv_width, self.l
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TadError::Config("backbone.dropout must lie in [0, 1)".into()));
        }
        if self.loss_weights.iter().any(|w| *w < 0.0 || !w.is_finite())
            || self.latent_penalty < 0.0
        {
            return Err(TadError::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TadError::Config("backbone.lr must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        BackboneConfig::new(36, 5, 20).validate().unwrap();
        BackboneConfig::desk(36, 5, 20).validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = BackboneConfig::new(36, 5, 20);
        c.embed_dim = 128;
        assert!(matches!(c.validate(), Err(TadError::Config(_))));
    }
}
