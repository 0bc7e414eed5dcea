use std::sync::Arc;

use super::config::{BackendConfig, ExperimentConfig, TargetSpec};
use crate::bridge::{BridgeClient, BridgeEncoder, BridgeGenerator, BridgeObjective, Endpoint};
use crate::error::Result;
use crate::latent::{InitStrategy, LatentCode, LatentInit, LatentShape};
use crate::objective::{
    CutoutPolicy, Encoder, FeatureVector, FitnessFunction, Generator, Objective,
};
use crate::seed;
use crate::toy::{toy_text_target, ToyConfig, ToyEncoder, ToyGenerator};
use crate::ImageTensor;

/// The generator/encoder pair an experiment runs against.
pub enum Models {
    Toy {
        generator: Arc<ToyGenerator>,
        encoder: Arc<ToyEncoder>,
    },
    Bridge {
        client: Arc<BridgeClient>,
        generator: Arc<BridgeGenerator>,
        encoder: Arc<BridgeEncoder>,
    },
}

impl Models {
    pub fn toy(config: ToyConfig) -> Result<Self> {
        Ok(Models::Toy {
            generator: Arc::new(config.generator()?),
            encoder: Arc::new(config.encoder()?),
        })
    }

    /// Connects to a model server and checks it serves `shape`.
    pub fn bridge(endpoint: &Endpoint, shape: LatentShape) -> Result<Self> {
        let client = Arc::new(BridgeClient::connect(endpoint)?);
        let info = client.info()?;
        Ok(Models::Bridge {
            generator: Arc::new(BridgeGenerator::new(client.clone(), &info, shape)?),
            encoder: Arc::new(BridgeEncoder::new(client.clone(), &info)),
            client,
        })
    }

    pub fn open(cfg: &ExperimentConfig) -> Result<Self> {
        match &cfg.backend {
            BackendConfig::Toy => Models::toy(cfg.toy),
            BackendConfig::Bridge { endpoint } => {
                Models::bridge(&endpoint.parse()?, cfg.latent_shape()?)
            }
        }
    }

    pub fn generator(&self) -> Arc<dyn Generator> {
        match self {
            Models::Toy { generator, .. } => generator.clone(),
            Models::Bridge { generator, .. } => generator.clone(),
        }
    }

    pub fn encoder(&self) -> Arc<dyn Encoder> {
        match self {
            Models::Toy { encoder, .. } => encoder.clone(),
            Models::Bridge { encoder, .. } => encoder.clone(),
        }
    }

    pub fn shape(&self) -> LatentShape {
        self.generator().shape()
    }

    pub fn text_features(&self, text: &str) -> Result<FeatureVector> {
        match self {
            Models::Toy { encoder, .. } => toy_text_target(text, encoder.feature_dim()),
            Models::Bridge { client, .. } => client.encode_text(text),
        }
    }

    /// Side the encoder expects; for servers that resize themselves, the
    /// configured cutout size.
    fn encoder_side(&self, fallback: usize) -> usize {
        self.encoder().input_side().unwrap_or(fallback)
    }

    /// Full-frame features of a latent's image.
    pub fn frame_features(&self, latent: &LatentCode, side: usize) -> Result<FeatureVector> {
        self.image_features(&self.generator().generate(latent)?, side)
    }

    /// Encodes a whole image, resized to the encoder's input side when it
    /// has one, else to `side`.
    pub fn image_features(&self, image: &ImageTensor, side: usize) -> Result<FeatureVector> {
        let crop = CutoutPolicy::full_frame(self.encoder_side(side)).make_cutouts(image, 0);
        self.encoder().encode(&crop[0])
    }

    pub fn target(&self, cfg: &ExperimentConfig) -> Result<FeatureVector> {
        match cfg.target {
            TargetSpec::Text => self.text_features(&cfg.text),
            TargetSpec::Anchors {
                count,
                spread,
                seed,
            } => {
                let side = cfg.cutout_policy().resize_to;
                let mut sum = vec![0.0; self.encoder().feature_dim()];
                for anchor in anchor_latents(self.shape(), count, spread, seed)? {
                    let f = self.frame_features(&anchor, side)?;
                    for (s, v) in sum.iter_mut().zip(f.values()) {
                        *s += v;
                    }
                }
                FeatureVector::new(sum)?.normalized()
            }
        }
    }

    pub fn fitness_function(
        &self,
        target: FeatureVector,
        cutouts: CutoutPolicy,
    ) -> Result<Box<dyn FitnessFunction>> {
        let objective = Objective::new(self.generator(), self.encoder(), target, cutouts)?;
        Ok(match self {
            Models::Toy { .. } => Box::new(objective),
            Models::Bridge { client, .. } => {
                Box::new(BridgeObjective::new(client.clone(), objective))
            }
        })
    }
}

/// Latents behind an anchor target: standard normal draws scaled by
/// `spread`, seeded per anchor.
pub fn anchor_latents(
    shape: LatentShape,
    count: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<LatentCode>> {
    (0..count as u64)
        .map(|i| {
            let init = LatentInit::new(
                InitStrategy::StandardNormal,
                seed::derive_seed(seed, "anchor", i),
            );
            let z = LatentCode::new(shape, init)?;
            let scaled: Vec<f64> = z.flatten().iter().map(|v| v * spread).collect();
            LatentCode::unflatten(&scaled, shape)
        })
        .collect()
}

impl std::fmt::Debug for Models {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Models")
            .field("generator", &self.generator().identity())
            .field("encoder", &self.encoder().identity())
            .finish()
    }
}
