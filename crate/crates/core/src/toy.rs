//! Small, frozen, analytically differentiable generator/encoder pair.
//!
//! The generator mirrors per-layer latent conditioning: stage `i` is an
//! affine map followed by `tanh`, consuming `[h_{i-1}; class_i; noise_i]`
//! (stage 0 has no `h`). The last stage emits `side * side * 3` values,
//! mapped to pixels by `(tanh + 1) / 2`. The encoder is
//! `normalize(tanh(W (x - 0.5) + b))`. All weights are drawn once from a
//! seeded normal distribution with variance `gain² / fan_in` and never
//! change.
//!
//! Matrix-vector products accumulate in index order, so results are
//! reproducible bit-for-bit on any IEEE-754 platform.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_tensor::{ImageTensor, CHANNELS};
use crate::latent::{InitStrategy, LatentCode, LatentInit, LatentShape};
use crate::objective::{
    dot, CutoutPolicy, Encoder, FeatureVector, FitnessFunction, Generator, Objective, Pullback,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub hidden_layers: usize,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub image_side: usize,
    pub feature_dim: usize,
    pub encoder_input_side: usize,
    pub generator_seed: u64,
    pub encoder_seed: u64,
    pub generator_gain: f64,
    pub encoder_gain: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            hidden_layers: 2,
            latent_dim: 16,
            hidden_width: 64,
            image_side: 32,
            feature_dim: 32,
            encoder_input_side: 64,
            generator_seed: 1,
            encoder_seed: 2,
            generator_gain: 1.0,
            encoder_gain: 2.0,
        }
    }
}

impl ToyConfig {
    pub fn shape(&self) -> Result<LatentShape> {
        LatentShape::new(self.hidden_layers, self.latent_dim)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        for (name, v) in [
            ("hidden_width", self.hidden_width),
            ("image_side", self.image_side),
            ("feature_dim", self.feature_dim),
            ("encoder_input_side", self.encoder_input_side),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("toy {name} must be at least 1")));
            }
        }
        if !(self.generator_gain.is_finite() && self.encoder_gain.is_finite()) {
            return Err(Error::Config("toy gains must be finite".into()));
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<ToyGenerator> {
        ToyGenerator::new(*self)
    }

    pub fn encoder(&self) -> Result<ToyEncoder> {
        ToyEncoder::new(*self)
    }

    /// Objective for this toy pair; cutouts are resized to the encoder input.
    pub fn objective(&self, target: FeatureVector, cutouts: CutoutPolicy) -> Result<Objective> {
        let cutouts = CutoutPolicy {
            resize_to: self.encoder_input_side,
            ..cutouts
        };
        Objective::new(
            Arc::new(self.generator()?),
            Arc::new(self.encoder()?),
            target,
            cutouts,
        )
    }
}

/// Dense affine layer, row-major `out x in` weights.
#[derive(Debug, Clone)]
struct Affine {
    inputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Affine {
    fn random(
        inputs: usize,
        outputs: usize,
        gain: f64,
        bias_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let std = gain / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let bias = (0..outputs)
            .map(|_| bias_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Affine {
            inputs,
            weights,
            bias,
        }
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, input) + b)
            .collect()
    }

    /// `Wᵀ g`
    fn backward(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.inputs];
        for (row, g) in self.weights.chunks_exact(self.inputs).zip(grad_out) {
            if *g == 0.0 {
                continue;
            }
            for (acc, w) in grad_in.iter_mut().zip(row) {
                *acc += w * g;
            }
        }
        grad_in
    }
}

#[derive(Debug, Clone)]
pub struct ToyGenerator {
    config: ToyConfig,
    shape: LatentShape,
    stages: Vec<Affine>,
}

impl ToyGenerator {
    pub fn new(config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let shape = config.shape()?;
        let mut rng = seed::rng(seed::derive_seed(config.generator_seed, "toy-generator", 0));
        let z = shape.latent_dim;
        let pixels = config.image_side * config.image_side * CHANNELS;
        let stages = (0..shape.layers())
            .map(|i| {
                let inputs = if i == 0 {
                    2 * z
                } else {
                    config.hidden_width + 2 * z
                };
                let outputs = if i + 1 == shape.layers() {
                    pixels
                } else {
                    config.hidden_width
                };
                Affine::random(inputs, outputs, config.generator_gain, 0.1, &mut rng)
            })
            .collect();
        Ok(ToyGenerator {
            config,
            shape,
            stages,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    /// Runs every stage, returning the post-`tanh` activations of each.
    fn activations(&self, latent: &LatentCode) -> Result<Vec<Vec<f64>>> {
        if latent.shape() != self.shape {
            return Err(Error::shape(
                format!("{:?}", self.shape),
                format!("{:?}", latent.shape()),
            ));
        }
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let mut input = Vec::with_capacity(stage.inputs);
            if let Some(prev) = acts.last() {
                input.extend_from_slice(prev);
            }
            input.extend_from_slice(latent.class_row(i));
            input.extend_from_slice(latent.noise_row(i));
            let mut out = stage.forward(&input);
            out.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(out);
        }
        Ok(acts)
    }

    fn to_image(&self, last: &[f64]) -> ImageTensor {
        let side = self.config.image_side;
        let values = last
            .iter()
            .map(|a| ((a + 1.0) * 0.5).clamp(0.0, 1.0))
            .collect();
        ImageTensor::new(side, side, values).expect("toy image has the configured size")
    }

    fn pullback(&self, acts: &[Vec<f64>], grad_image: &[f64]) -> Vec<f64> {
        let z = self.shape.latent_dim;
        let mut grad_class = vec![0.0; self.shape.part_len()];
        let mut grad_noise = vec![0.0; self.shape.part_len()];
        // d pixel / d a = 1/2 at the output
        let mut grad_act: Vec<f64> = grad_image.iter().map(|g| 0.5 * g).collect();
        for i in (0..self.stages.len()).rev() {
            let grad_pre: Vec<f64> = grad_act
                .iter()
                .zip(&acts[i])
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
            let grad_in = self.stages[i].backward(&grad_pre);
            let h = if i == 0 { 0 } else { self.config.hidden_width };
            grad_class[i * z..(i + 1) * z].copy_from_slice(&grad_in[h..h + z]);
            grad_noise[i * z..(i + 1) * z].copy_from_slice(&grad_in[h + z..h + 2 * z]);
            grad_act = grad_in[..h].to_vec();
        }
        grad_class.extend(grad_noise);
        grad_class
    }
}

impl Generator for ToyGenerator {
    fn shape(&self) -> LatentShape {
        self.shape
    }

    fn identity(&self) -> String {
        let c = &self.config;
        format!(
            "toy-generator/v1 H={} Z={} width={} side={} seed={} gain={}",
            c.hidden_layers,
            c.latent_dim,
            c.hidden_width,
            c.image_side,
            c.generator_seed,
            c.generator_gain
        )
    }

    fn generate(&self, latent: &LatentCode) -> Result<ImageTensor> {
        let acts = self.activations(latent)?;
        Ok(self.to_image(acts.last().expect("at least one stage")))
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn generate_differentiable(&self, latent: &LatentCode) -> Result<(ImageTensor, Pullback<'_>)> {
        let acts = self.activations(latent)?;
        let image = self.to_image(acts.last().expect("at least one stage"));
        Ok((image, Box::new(move |g: &[f64]| self.pullback(&acts, g))))
    }
}

#[derive(Debug, Clone)]
pub struct ToyEncoder {
    config: ToyConfig,
    map: Affine,
}

impl ToyEncoder {
    pub fn new(config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive_seed(config.encoder_seed, "toy-encoder", 0));
        let inputs = config.encoder_input_side * config.encoder_input_side * CHANNELS;
        let map = Affine::random(
            inputs,
            config.feature_dim,
            config.encoder_gain,
            0.1,
            &mut rng,
        );
        Ok(ToyEncoder { config, map })
    }

    fn activations(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let side = self.config.encoder_input_side;
        if image.width() != side || image.height() != side {
            return Err(Error::shape(
                format!("{side}x{side} image"),
                format!("{}x{}", image.width(), image.height()),
            ));
        }
        let centered: Vec<f64> = image.values().iter().map(|v| v - 0.5).collect();
        let mut acts = self.map.forward(&centered);
        acts.iter_mut().for_each(|v| *v = v.tanh());
        Ok(acts)
    }

    fn normalize(acts: &[f64]) -> Result<(f64, FeatureVector)> {
        let norm = dot(acts, acts).sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(
                "toy encoder activations are all zero".into(),
            ));
        }
        let features = FeatureVector::new(acts.iter().map(|a| a / norm).collect())?;
        Ok((norm, features))
    }
}

impl Encoder for ToyEncoder {
    fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn input_side(&self) -> Option<usize> {
        Some(self.config.encoder_input_side)
    }

    fn identity(&self) -> String {
        let c = &self.config;
        format!(
            "toy-encoder/v1 F={} side={} seed={} gain={}",
            c.feature_dim, c.encoder_input_side, c.encoder_seed, c.encoder_gain
        )
    }

    fn encode(&self, image: &ImageTensor) -> Result<FeatureVector> {
        let acts = self.activations(image)?;
        Ok(ToyEncoder::normalize(&acts)?.1)
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn encode_differentiable(&self, image: &ImageTensor) -> Result<(FeatureVector, Pullback<'_>)> {
        let acts = self.activations(image)?;
        let (norm, features) = ToyEncoder::normalize(&acts)?;
        let unit = features.values().to_vec();
        let pullback = move |g: &[f64]| {
            // d(a/|a|) = (g - f (f·g)) / |a|
            let proj = dot(&unit, g);
            let grad_pre: Vec<f64> = g
                .iter()
                .zip(&unit)
                .zip(&acts)
                .map(|((gi, fi), ai)| (gi - fi * proj) / norm * (1.0 - ai * ai))
                .collect();
            self.map.backward(&grad_pre)
        };
        Ok((features, Box::new(pullback)))
    }
}

/// Unit feature vector derived from a stable hash of the text.
pub fn toy_text_target(text: &str, feature_dim: usize) -> Result<FeatureVector> {
    if feature_dim == 0 {
        return Err(Error::Config("feature_dim must be at least 1".into()));
    }
    let mut rng = seed::rng(seed::derive_seed(seed::hash_str(text), "toy-text", 0));
    loop {
        let raw: Vec<f64> = (0..feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        if dot(&raw, &raw) > 0.0 {
            return FeatureVector::new(raw)?.normalized();
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Coordinates whose gradients are both below this are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-7;

/// Largest per-coordinate `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub step: f64,
    /// Max relative error of each probe.
    pub errors: Vec<f64>,
}

impl GradientCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_error() < tolerance
    }
}

/// Compares the analytic loss gradient with central differences at `probes`
/// standard-normal latents. Probe `p` uses cutout iteration `p`.
pub fn gradient_check(
    f: &dyn FitnessFunction,
    probes: usize,
    step: f64,
    seed: u64,
) -> Result<GradientCheck> {
    if !f.supports_gradient() {
        return Err(Error::Capability(
            "objective has no analytic gradient".into(),
        ));
    }
    let shape = f.latent_shape();
    let mut errors = Vec::with_capacity(probes);
    for p in 0..probes as u64 {
        let init = LatentInit::new(
            InitStrategy::StandardNormal,
            seed::derive_seed(seed, "gradcheck", p),
        );
        let z = LatentCode::new(shape, init)?;
        let (_, analytic) = f.fitness_and_loss_gradient(&z, p)?;
        let mut failure = None;
        let numeric = finite_diff_grad(
            |x| {
                let probe = LatentCode::unflatten(x, shape).expect("probe keeps the latent length");
                match f.fitness(&probe, p) {
                    Ok(v) => -v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &z.flatten(),
            step,
        )?;
        if let Some(e) = failure {
            return Err(e.in_context(format!("gradient probe {p}")));
        }
        errors.push(max_relative_error(&analytic, &numeric));
    }
    Ok(GradientCheck { step, errors })
}
