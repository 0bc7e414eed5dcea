//! Structured per-layer latent input and its flat-vector view.
//!
//! A generator with `H` hidden blocks takes one class-conditioning vector and
//! one noise vector per layer (input layer plus each hidden block), each of
//! length `Z`. The flat view used by the optimizers is
//!
//! ```text
//! [class row 0, class row 1, .., class row H, noise row 0, .., noise row H]
//! ```
//!
//! i.e. all class rows in layer order followed by all noise rows. The layout
//! is fixed so that flat vectors and dump files are portable across runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentShape {
    pub num_hidden_layers: usize,
    pub latent_dim: usize,
}

impl LatentShape {
    pub fn new(num_hidden_layers: usize, latent_dim: usize) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        Ok(LatentShape {
            num_hidden_layers,
            latent_dim,
        })
    }

    /// The generator configuration used for full-size runs: one input layer
    /// plus 14 hidden blocks, 128-dimensional latents.
    pub const fn large() -> Self {
        LatentShape {
            num_hidden_layers: 14,
            latent_dim: 128,
        }
    }

    /// Number of layers that receive their own input (input layer + hidden blocks).
    pub fn layers(&self) -> usize {
        1 + self.num_hidden_layers
    }

    /// Elements in one of the two parts (class or noise).
    pub fn part_len(&self) -> usize {
        self.layers() * self.latent_dim
    }

    pub fn total(&self) -> usize {
        2 * self.part_len()
    }
}

/// How fresh latent codes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum InitStrategy {
    StandardNormal,
    TruncatedNormal { bound: f64 },
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentInit {
    #[serde(flatten)]
    pub strategy: InitStrategy,
    pub seed: u64,
}

impl LatentInit {
    pub fn new(strategy: InitStrategy, seed: u64) -> Self {
        LatentInit { strategy, seed }
    }

    pub fn zeros() -> Self {
        LatentInit::new(InitStrategy::Zeros, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if let InitStrategy::TruncatedNormal { bound } = self.strategy {
            if !(bound > 0.0) || !bound.is_finite() {
                return Err(Error::Config(format!(
                    "truncated-normal bound must be a positive finite number, got {bound}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    shape: LatentShape,
    class_part: Vec<f64>,
    noise_part: Vec<f64>,
}

impl LatentCode {
    pub fn zeros(shape: LatentShape) -> Self {
        LatentCode {
            shape,
            class_part: vec![0.0; shape.part_len()],
            noise_part: vec![0.0; shape.part_len()],
        }
    }

    /// Draws a fresh code. Deterministic in `(shape, init)`.
    pub fn new(shape: LatentShape, init: LatentInit) -> Result<Self> {
        init.validate()?;
        let mut rng = seed::rng(init.seed);
        let mut draw = |_: usize| -> f64 {
            match init.strategy {
                InitStrategy::Zeros => 0.0,
                InitStrategy::StandardNormal => rng.sample(StandardNormal),
                InitStrategy::TruncatedNormal { bound } => loop {
                    let x: f64 = rng.sample(StandardNormal);
                    if x.abs() <= bound {
                        break x;
                    }
                },
            }
        };
        let class_part = (0..shape.part_len()).map(&mut draw).collect();
        let noise_part = (0..shape.part_len()).map(&mut draw).collect();
        Ok(LatentCode {
            shape,
            class_part,
            noise_part,
        })
    }

    pub fn shape(&self) -> LatentShape {
        self.shape
    }

    /// Row-major `(1+H) x Z` matrix of projected class vectors.
    pub fn class_part(&self) -> &[f64] {
        &self.class_part
    }

    /// Row-major `(1+H) x Z` matrix of per-layer noise vectors.
    pub fn noise_part(&self) -> &[f64] {
        &self.noise_part
    }

    pub fn class_row(&self, layer: usize) -> &[f64] {
        let z = self.shape.latent_dim;
        &self.class_part[layer * z..(layer + 1) * z]
    }

    pub fn noise_row(&self, layer: usize) -> &[f64] {
        let z = self.shape.latent_dim;
        &self.noise_part[layer * z..(layer + 1) * z]
    }

    pub fn noise_row_mut(&mut self, layer: usize) -> &mut [f64] {
        let z = self.shape.latent_dim;
        &mut self.noise_part[layer * z..(layer + 1) * z]
    }

    pub fn class_row_mut(&mut self, layer: usize) -> &mut [f64] {
        let z = self.shape.latent_dim;
        &mut self.class_part[layer * z..(layer + 1) * z]
    }

    pub fn is_finite(&self) -> bool {
        self.class_part
            .iter()
            .chain(&self.noise_part)
            .all(|x| x.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.shape.total());
        flat.extend_from_slice(&self.class_part);
        flat.extend_from_slice(&self.noise_part);
        flat
    }

    pub fn unflatten(values: &[f64], shape: LatentShape) -> Result<Self> {
        if values.len() != shape.total() {
            return Err(Error::shape(
                format!("{} latent elements", shape.total()),
                values.len(),
            ));
        }
        let (class_part, noise_part) = values.split_at(shape.part_len());
        Ok(LatentCode {
            shape,
            class_part: class_part.to_vec(),
            noise_part: noise_part.to_vec(),
        })
    }

    /// Serializes as `latent v1 H Z` followed by one value per line.
    pub fn to_dump(&self) -> String {
        let mut out = format!(
            "latent v1 {} {}\n",
            self.shape.num_hidden_layers, self.shape.latent_dim
        );
        for x in self.class_part.iter().chain(&self.noise_part) {
            // 17 significant digits round-trip any f64 exactly
            let _ = writeln!(out, "{x:.16e}");
        }
        out
    }

    pub fn from_dump(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty latent dump")?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (h, z) = match fields.as_slice() {
            ["latent", "v1", h, z] => (
                h.parse::<usize>().map_err(|e| format!("bad H: {e}"))?,
                z.parse::<usize>().map_err(|e| format!("bad Z: {e}"))?,
            ),
            _ => return Err(format!("unrecognized latent header {header:?}")),
        };
        let shape = LatentShape::new(h, z).map_err(|e| e.to_string())?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| format!("{l:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        LatentCode::unflatten(&values, shape).map_err(|e| e.to_string())
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_dump()).map_err(|e| Error::io(path, e))
    }

    pub fn read_dump(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LatentCode::from_dump(&text).map_err(|m| Error::parse(path, m))
    }
}

/// Free-function form of [`LatentCode::new`].
pub fn new_latent(shape: LatentShape, init: LatentInit) -> Result<LatentCode> {
    LatentCode::new(shape, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn large_shape_has_3840_elements() {
        let code = new_latent(LatentShape::large(), LatentInit::zeros()).unwrap();
        assert_eq!(code.flatten().len(), 3840);
        assert!(code.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn small_shape_total() {
        let shape = LatentShape::new(2, 16).unwrap();
        assert_eq!(shape.total(), 96);
        let code = new_latent(shape, LatentInit::zeros()).unwrap();
        assert_eq!(code.flatten(), vec![0.0; 96]);
        assert_eq!(LatentCode::unflatten(&[0.0; 96], shape).unwrap(), code);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let shape = LatentShape::new(2, 16).unwrap();
        let init = LatentInit::new(InitStrategy::StandardNormal, 7);
        let a = new_latent(shape, init).unwrap();
        let b = new_latent(shape, init).unwrap();
        let bits = |c: &LatentCode| c.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let other = new_latent(shape, LatentInit::new(InitStrategy::StandardNormal, 8)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn truncated_normal_respects_bound() {
        let shape = LatentShape::new(3, 32).unwrap();
        let code = new_latent(
            shape,
            LatentInit::new(InitStrategy::TruncatedNormal { bound: 0.5 }, 1),
        )
        .unwrap();
        assert!(code.flatten().iter().all(|x| x.abs() <= 0.5));
        for bad in [0.0, -1.0, f64::NAN] {
            let init = LatentInit::new(InitStrategy::TruncatedNormal { bound: bad }, 1);
            assert!(matches!(new_latent(shape, init), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_latent_dim_rejected() {
        assert!(LatentShape::new(3, 0).is_err());
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let shape = LatentShape::new(2, 16).unwrap();
        assert!(matches!(
            LatentCode::unflatten(&[0.0; 95], shape),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn layout_is_class_rows_then_noise_rows() {
        let shape = LatentShape::new(1, 2).unwrap();
        let code = LatentCode::unflatten(&[1., 2., 3., 4., 5., 6., 7., 8.], shape).unwrap();
        assert_eq!(code.class_row(0), &[1., 2.]);
        assert_eq!(code.class_row(1), &[3., 4.]);
        assert_eq!(code.noise_row(0), &[5., 6.]);
        assert_eq!(code.noise_row(1), &[7., 8.]);
    }

    #[test]
    fn dump_rejects_bad_header() {
        assert!(LatentCode::from_dump("features v1 3\n1\n2\n3\n").is_err());
        assert!(LatentCode::from_dump("latent v1 0 2\n1\n2\n3\n").is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(h in 0usize..4, z in 1usize..6, seed in any::<u64>()) {
            let shape = LatentShape::new(h, z).unwrap();
            let code = new_latent(shape, LatentInit::new(InitStrategy::StandardNormal, seed)).unwrap();
            let flat = code.flatten();
            prop_assert_eq!(flat.len(), shape.total());
            prop_assert_eq!(&LatentCode::unflatten(&flat, shape).unwrap(), &code);
            prop_assert_eq!(LatentCode::unflatten(&flat, shape).unwrap().flatten(), flat);
        }

        #[test]
        fn dump_is_lossless(values in proptest::collection::vec(-1e300f64..1e300, 12)) {
            let shape = LatentShape::new(2, 2).unwrap();
            let code = LatentCode::unflatten(&values, shape).unwrap();
            let back = LatentCode::from_dump(&code.to_dump()).unwrap();
            let bits = |c: &LatentCode| c.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&code));
        }
    }
}
