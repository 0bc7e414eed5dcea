//! Square windows cut from a generated image and resized for the encoder.
//!
//! Sampling: for each cut, three uniforms are drawn in order (side fraction,
//! x position, y position) from a ChaCha8 stream seeded by
//! `derive_seed(seed_stream, "cutouts", iteration)`. The side is
//! `round(fraction * min(width, height))`, clamped to `[1, min(width, height)]`.
//! A cut whose side spans the short edge is centered along the long edge;
//! otherwise its top-left corner is uniform over all valid integer positions.
//!
//! Resizing is bilinear with corner-aligned sampling: output index `i` of `R`
//! reads source coordinate `offset + i * (side - 1) / (R - 1)` (or the window
//! center when `R == 1`). Each output pixel is
//! `(1-wy)*((1-wx)*p00 + wx*p01) + wy*((1-wx)*p10 + wx*p11)`, evaluated in
//! exactly that order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_tensor::{ImageTensor, CHANNELS};
use crate::seed;

/// Missing fields in a config file take the toy defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CutoutPolicy {
    pub num_cuts: usize,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub resize_to: usize,
    pub seed_stream: u64,
}

impl CutoutPolicy {
    /// Defaults for the toy backend: 8 cuts covering 40-100% of the short side, 64px.
    pub fn toy_default() -> Self {
        CutoutPolicy {
            num_cuts: 8,
            min_fraction: 0.4,
            max_fraction: 1.0,
            resize_to: 64,
            seed_stream: 0,
        }
    }

    /// Same windowing, resized to 224px for large pretrained encoders.
    pub fn bridge_default() -> Self {
        CutoutPolicy {
            resize_to: 224,
            ..CutoutPolicy::toy_default()
        }
    }

    /// A single full-frame window: the centered square over the short side.
    pub fn full_frame(resize_to: usize) -> Self {
        CutoutPolicy {
            num_cuts: 1,
            min_fraction: 1.0,
            max_fraction: 1.0,
            resize_to,
            seed_stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cuts == 0 {
            return Err(Error::Config("num_cuts must be at least 1".into()));
        }
        if self.resize_to == 0 {
            return Err(Error::Config("resize_to must be at least 1".into()));
        }
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        if !ok(self.min_fraction) || !ok(self.max_fraction) || self.min_fraction > self.max_fraction
        {
            return Err(Error::Config(format!(
                "cut fractions must satisfy 0 < min <= max <= 1, got [{}, {}]",
                self.min_fraction, self.max_fraction
            )));
        }
        Ok(())
    }

    /// Windows for one evaluation; deterministic in `(seed_stream, iteration)`.
    pub fn windows(&self, width: usize, height: usize, iteration: u64) -> Vec<Window> {
        self.windows_from_seed(width, height, self.iteration_seed(iteration))
    }

    /// Seed of the window draw at `iteration`.
    pub fn iteration_seed(&self, iteration: u64) -> u64 {
        seed::derive_seed(self.seed_stream, "cutouts", iteration)
    }

    /// Windows drawn from an explicit seed, ignoring `seed_stream`.
    pub fn windows_from_seed(&self, width: usize, height: usize, seed: u64) -> Vec<Window> {
        let mut rng = seed::rng(seed);
        let short = width.min(height);
        (0..self.num_cuts)
            .map(|_| {
                let u_frac: f64 = rng.random();
                let u_x: f64 = rng.random();
                let u_y: f64 = rng.random();
                let fraction = self.min_fraction + (self.max_fraction - self.min_fraction) * u_frac;
                let side = ((fraction * short as f64).round() as usize).clamp(1, short);
                let place = |extent: usize, u: f64| {
                    let slack = extent - side;
                    if side == short {
                        slack / 2
                    } else {
                        ((u * (slack + 1) as f64) as usize).min(slack)
                    }
                };
                Window {
                    x: place(width, u_x),
                    y: place(height, u_y),
                    side,
                }
            })
            .collect()
    }

    /// Crops and resizes every window of this evaluation.
    pub fn make_cutouts(&self, img: &ImageTensor, iteration: u64) -> Vec<ImageTensor> {
        self.windows(img.width(), img.height(), iteration)
            .iter()
            .map(|w| w.resample(img, self.resize_to))
            .collect()
    }
}

impl Default for CutoutPolicy {
    fn default() -> Self {
        CutoutPolicy::toy_default()
    }
}

/// Square window with top-left corner `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

/// One bilinear tap along an axis: `(lo, hi, weight_of_hi)`.
type Tap = (usize, usize, f64);

fn axis_taps(offset: usize, side: usize, out: usize) -> Vec<Tap> {
    let last = offset + side - 1;
    (0..out)
        .map(|i| {
            let src = if out == 1 {
                offset as f64 + (side - 1) as f64 / 2.0
            } else {
                offset as f64 + i as f64 * (side - 1) as f64 / (out - 1) as f64
            };
            let lo = (src.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl Window {
    /// Bilinear crop-and-resize to `out x out`.
    pub fn resample(&self, img: &ImageTensor, out: usize) -> ImageTensor {
        let xs = axis_taps(self.x, self.side, out);
        let ys = axis_taps(self.y, self.side, out);
        let src = img.values();
        let w = img.width();
        let mut values = Vec::with_capacity(out * out * CHANNELS);
        for &(y0, y1, wy) in &ys {
            let row0 = &src[y0 * w * CHANNELS..(y0 + 1) * w * CHANNELS];
            let row1 = &src[y1 * w * CHANNELS..(y1 + 1) * w * CHANNELS];
            for &(x0, x1, wx) in &xs {
                let (a0, a1) = (x0 * CHANNELS, x1 * CHANNELS);
                for c in 0..CHANNELS {
                    let top = (1.0 - wx) * row0[a0 + c] + wx * row0[a1 + c];
                    let bottom = (1.0 - wx) * row1[a0 + c] + wx * row1[a1 + c];
                    let v = (1.0 - wy) * top + wy * bottom;
                    values.push(v.clamp(0.0, 1.0));
                }
            }
        }
        ImageTensor::new(out, out, values).expect("bilinear resample stays in range")
    }

    /// Adjoint of [`Window::resample`]: accumulates `cotangent` (one value per
    /// output element) into `grad_image` (one value per source element).
    pub fn resample_adjoint(
        &self,
        width: usize,
        out: usize,
        cotangent: &[f64],
        grad_image: &mut [f64],
    ) {
        let xs = axis_taps(self.x, self.side, out);
        let ys = axis_taps(self.y, self.side, out);
        let mut k = 0;
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                for c in 0..CHANNELS {
                    let g = cotangent[k];
                    k += 1;
                    let mut add = |x: usize, y: usize, weight: f64| {
                        grad_image[(y * width + x) * CHANNELS + c] += weight * g;
                    };
                    add(x0, y0, (1.0 - wy) * (1.0 - wx));
                    add(x1, y0, (1.0 - wy) * wx);
                    add(x0, y1, wy * (1.0 - wx));
                    add(x1, y1, wy * wx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..w * h * 3).map(|_| rng.random::<f64>()).collect();
        ImageTensor::new(w, h, values).unwrap()
    }

    #[test]
    fn full_frame_is_center_square() {
        let img = random_image(12, 8, 1);
        let policy = CutoutPolicy::full_frame(8);
        let cuts = policy.windows(12, 8, 5);
        assert_eq!(
            cuts,
            vec![Window {
                x: 2,
                y: 0,
                side: 8
            }]
        );
        // resizing an 8x8 window to 8x8 reproduces the pixels exactly
        let crop = &policy.make_cutouts(&img, 5)[0];
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    assert_eq!(crop.pixel(x, y, c), img.pixel(x + 2, y, c));
                }
            }
        }
    }

    #[test]
    fn cut_count_and_size() {
        let img = random_image(32, 32, 2);
        let policy = CutoutPolicy {
            resize_to: 20,
            ..CutoutPolicy::toy_default()
        };
        let cuts = policy.make_cutouts(&img, 0);
        assert_eq!(cuts.len(), 8);
        assert!(cuts.iter().all(|c| c.width() == 20 && c.height() == 20));
    }

    #[test]
    fn windows_are_deterministic_and_in_bounds() {
        let policy = CutoutPolicy {
            num_cuts: 64,
            min_fraction: 0.1,
            max_fraction: 0.9,
            ..CutoutPolicy::toy_default()
        };
        assert_eq!(policy.windows(40, 30, 3), policy.windows(40, 30, 3));
        assert_ne!(policy.windows(40, 30, 3), policy.windows(40, 30, 4));
        for w in policy.windows(40, 30, 3) {
            assert!(w.side >= 1 && w.x + w.side <= 40 && w.y + w.side <= 30);
            assert!(w.side >= 3 && w.side <= 27);
        }
    }

    #[test]
    fn invalid_policies_rejected() {
        let base = CutoutPolicy::toy_default();
        for bad in [
            CutoutPolicy {
                num_cuts: 0,
                ..base
            },
            CutoutPolicy {
                min_fraction: 0.0,
                ..base
            },
            CutoutPolicy {
                max_fraction: 1.2,
                ..base
            },
            CutoutPolicy {
                min_fraction: 0.8,
                max_fraction: 0.5,
                ..base
            },
            CutoutPolicy {
                resize_to: 0,
                ..base
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert!(base.validate().is_ok());
    }

    #[test]
    fn constant_image_resamples_to_constant() {
        let img = ImageTensor::filled(9, 7, 0.25).unwrap();
        for crop in CutoutPolicy::toy_default().make_cutouts(&img, 11) {
            assert!(crop.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn adjoint_matches_resample() {
        // <resample(x), g> == <x, adjoint(g)> for the linear crop-resize map
        let img = random_image(10, 10, 3);
        let window = Window {
            x: 2,
            y: 1,
            side: 7,
        };
        let out = 5;
        let resized = window.resample(&img, out);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g: Vec<f64> = (0..out * out * 3)
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let mut back = vec![0.0; img.len()];
        window.resample_adjoint(10, out, &g, &mut back);
        let lhs: f64 = resized.values().iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.values().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
