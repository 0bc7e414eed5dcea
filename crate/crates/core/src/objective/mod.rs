//! Fitness of a latent code: generate, cut windows, encode, compare with the
//! target by cosine similarity, average over windows.

mod cutout;
mod features;

use std::sync::Arc;

pub use cutout::{CutoutPolicy, Window};
pub(crate) use features::{cosine_grad_wrt_first, dot};
pub use features::{cosine_similarity, FeatureVector};

use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;
use crate::latent::{LatentCode, LatentShape};

/// Vector-Jacobian product of a forward pass: maps a cotangent on the output
/// to a cotangent on the input.
pub type Pullback<'a> = Box<dyn FnOnce(&[f64]) -> Vec<f64> + Send + 'a>;

pub trait Generator: Send + Sync {
    fn shape(&self) -> LatentShape;

    /// Stable description of the model, recorded in run manifests.
    fn identity(&self) -> String;

    fn generate(&self, latent: &LatentCode) -> Result<ImageTensor>;

    fn is_differentiable(&self) -> bool {
        false
    }

    /// Forward pass plus a pullback from image cotangents (one per image
    /// value) to flat-latent cotangents.
    fn generate_differentiable(&self, _latent: &LatentCode) -> Result<(ImageTensor, Pullback<'_>)> {
        Err(Error::Capability(format!(
            "generator {} does not provide gradients",
            self.identity()
        )))
    }
}

pub trait Encoder: Send + Sync {
    fn feature_dim(&self) -> usize;

    /// Required square input side, if the encoder only accepts one size.
    fn input_side(&self) -> Option<usize>;

    fn identity(&self) -> String;

    fn encode(&self, image: &ImageTensor) -> Result<FeatureVector>;

    fn is_differentiable(&self) -> bool {
        false
    }

    fn encode_differentiable(&self, _image: &ImageTensor) -> Result<(FeatureVector, Pullback<'_>)> {
        Err(Error::Capability(format!(
            "encoder {} does not provide gradients",
            self.identity()
        )))
    }
}

/// Anything the optimizers can search over. Fitness is maximized; the
/// gradient returned is that of the loss `-fitness`.
pub trait FitnessFunction: Send + Sync {
    fn latent_shape(&self) -> LatentShape;

    fn fitness(&self, latent: &LatentCode, iteration: u64) -> Result<f64>;

    fn fitness_and_loss_gradient(
        &self,
        latent: &LatentCode,
        iteration: u64,
    ) -> Result<(f64, Vec<f64>)>;

    fn supports_gradient(&self) -> bool;
}

/// The generate → cut → encode → cosine pipeline.
#[derive(Clone)]
pub struct Objective {
    generator: Arc<dyn Generator>,
    encoder: Arc<dyn Encoder>,
    target: FeatureVector,
    cutouts: CutoutPolicy,
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective")
            .field("generator", &self.generator.identity())
            .field("encoder", &self.encoder.identity())
            .field("target_dim", &self.target.len())
            .field("cutouts", &self.cutouts)
            .finish()
    }
}

impl Objective {
    pub fn new(
        generator: Arc<dyn Generator>,
        encoder: Arc<dyn Encoder>,
        target: FeatureVector,
        cutouts: CutoutPolicy,
    ) -> Result<Self> {
        cutouts.validate()?;
        if target.len() != encoder.feature_dim() {
            return Err(Error::shape(
                format!("target of encoder dimension {}", encoder.feature_dim()),
                target.len(),
            ));
        }
        if target.norm() == 0.0 {
            return Err(Error::Degenerate("target feature vector is zero".into()));
        }
        if let Some(side) = encoder.input_side() {
            if side != cutouts.resize_to {
                return Err(Error::Config(format!(
                    "cutouts resize to {} but the encoder expects {side}x{side}",
                    cutouts.resize_to
                )));
            }
        }
        Ok(Objective {
            generator,
            encoder,
            target,
            cutouts,
        })
    }

    pub fn generator(&self) -> &Arc<dyn Generator> {
        &self.generator
    }

    pub fn encoder(&self) -> &Arc<dyn Encoder> {
        &self.encoder
    }

    pub fn target(&self) -> &FeatureVector {
        &self.target
    }

    pub fn cutouts(&self) -> &CutoutPolicy {
        &self.cutouts
    }

    pub fn with_target(&self, target: FeatureVector) -> Result<Self> {
        Objective::new(
            self.generator.clone(),
            self.encoder.clone(),
            target,
            self.cutouts,
        )
    }

    fn check_shape(&self, latent: &LatentCode) -> Result<()> {
        if latent.shape() != self.generator.shape() {
            return Err(Error::shape(
                format!("{:?}", self.generator.shape()),
                format!("{:?}", latent.shape()),
            ));
        }
        Ok(())
    }

    /// Mean cosine similarity between the target and each encoded window.
    /// Scores are summed in window order, then divided by the window count.
    pub fn fitness(&self, latent: &LatentCode, iteration: u64) -> Result<f64> {
        self.fitness_with_seed(latent, self.cutouts.iteration_seed(iteration))
    }

    /// [`Objective::fitness`] with the windows drawn from `seed` directly.
    pub fn fitness_with_seed(&self, latent: &LatentCode, seed: u64) -> Result<f64> {
        self.check_shape(latent)?;
        let image = self.generator.generate(latent)?;
        let windows = self
            .cutouts
            .windows_from_seed(image.width(), image.height(), seed);
        let mut total = 0.0;
        for window in &windows {
            let features = self
                .encoder
                .encode(&window.resample(&image, self.cutouts.resize_to))?;
            total += cosine_similarity(&features, &self.target)?;
        }
        Ok(total / windows.len() as f64)
    }

    /// Fitness and the gradient of the loss (negated fitness) with respect
    /// to the flat latent, by reverse-mode through the whole pipeline.
    pub fn fitness_gradient(&self, latent: &LatentCode, iteration: u64) -> Result<(f64, Vec<f64>)> {
        self.fitness_gradient_with_seed(latent, self.cutouts.iteration_seed(iteration))
    }

    /// [`Objective::fitness_gradient`] with the windows drawn from `seed` directly.
    pub fn fitness_gradient_with_seed(
        &self,
        latent: &LatentCode,
        seed: u64,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_shape(latent)?;
        let (image, generator_pullback) = self.generator.generate_differentiable(latent)?;
        let windows = self
            .cutouts
            .windows_from_seed(image.width(), image.height(), seed);
        let out = self.cutouts.resize_to;
        let scale = -1.0 / windows.len() as f64;
        let mut total = 0.0;
        let mut grad_image = vec![0.0; image.len()];
        for window in &windows {
            let cut = window.resample(&image, out);
            let (features, encoder_pullback) = self.encoder.encode_differentiable(&cut)?;
            if features.norm() == 0.0 {
                return Err(Error::Degenerate("encoder produced a zero vector".into()));
            }
            let (cos, dcos) = cosine_grad_wrt_first(features.values(), self.target.values());
            total += cos.clamp(-1.0, 1.0);
            let cotangent: Vec<f64> = dcos.iter().map(|g| g * scale).collect();
            let grad_cut = encoder_pullback(&cotangent);
            window.resample_adjoint(image.width(), out, &grad_cut, &mut grad_image);
        }
        let grad = generator_pullback(&grad_image);
        Ok((total / windows.len() as f64, grad))
    }
}

impl FitnessFunction for Objective {
    fn latent_shape(&self) -> LatentShape {
        self.generator.shape()
    }

    fn fitness(&self, latent: &LatentCode, iteration: u64) -> Result<f64> {
        Objective::fitness(self, latent, iteration)
    }

    fn fitness_and_loss_gradient(
        &self,
        latent: &LatentCode,
        iteration: u64,
    ) -> Result<(f64, Vec<f64>)> {
        self.fitness_gradient(latent, iteration)
    }

    fn supports_gradient(&self) -> bool {
        self.generator.is_differentiable() && self.encoder.is_differentiable()
    }
}
