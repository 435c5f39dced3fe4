use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinearity between the two fully connected layers of the regression head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivation {
    #[default]
    Gelu,
    Identity,
}

/// Architecture hyperparameters of the backbone and regression head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub fc1_width: usize,
    #[serde(default = "two")]
    pub num_outputs: usize,
    #[serde(default)]
    pub head_activation: HeadActivation,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn two() -> usize {
    2
}

fn default_ln_eps() -> f64 {
    1e-6
}

impl VitConfig {
    /// ViT-Tiny backbone at 224x224x3 with a 128-wide regression head.
    pub fn tiny() -> Self {
        VitConfig {
            image_height: 224,
            image_width: 224,
            channels: 3,
            patch_size: 16,
            depth: 12,
            embed_dim: 192,
            num_heads: 3,
            mlp_hidden: 4 * 192,
            fc1_width: 128,
            num_outputs: 2,
            head_activation: HeadActivation::Gelu,
            layer_norm_eps: 1e-6,
        }
    }

    /// Desk-scale model: 8-pixel patches, 2 layers, 64-dim tokens, 4 heads.
    pub fn toy(size: usize) -> Self {
        VitConfig {
            image_height: size,
            image_width: size,
            channels: 3,
            patch_size: 8,
            depth: 2,
            embed_dim: 64,
            num_heads: 4,
            mlp_hidden: 4 * 64,
            fc1_width: 128,
            num_outputs: 2,
            head_activation: HeadActivation::Gelu,
            layer_norm_eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("depth", self.depth),
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
            ("mlp_hidden", self.mlp_hidden),
            ("fc1_width", self.fc1_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.image_height % self.patch_size != 0 || self.image_width % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible by patch size {}",
                self.image_height, self.image_width, self.patch_size
            )));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_outputs != 2 {
            return Err(Error::Config(format!(
                "num_outputs must be 2 (left, right), got {}",
                self.num_outputs
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_height(&self) -> usize {
        self.image_height / self.patch_size
    }

    pub fn grid_width(&self) -> usize {
        self.image_width / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_height() * self.grid_width()
    }

    /// Patches plus the CLS token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn image_len(&self) -> usize {
        self.image_height * self.image_width * self.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_shapes() {
        let c = VitConfig::tiny();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 196);
        assert_eq!(c.patch_dim(), 768);
        assert_eq!(c.num_tokens(), 197);
    }

    #[test]
    fn rejects_indivisible() {
        let mut c = VitConfig::toy(32);
        c.image_width = 30;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = VitConfig::toy(32);
        c.num_heads = 5;
        assert!(c.validate().is_err());
        let mut c = VitConfig::toy(32);
        c.num_outputs = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let mut v = serde_json::to_value(VitConfig::toy(32)).unwrap();
        v["bogus"] = 1.into();
        assert!(serde_json::from_value::<VitConfig>(v).is_err());
    }
}
