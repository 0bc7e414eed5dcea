use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Fixed-length embedding produced by an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("empty feature vector".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature value {bad}")));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> FeatureVector {
        FeatureVector(self.0.iter().map(|x| x * factor).collect())
    }

    /// Returns the vector scaled to unit length.
    pub fn normalized(&self) -> Result<FeatureVector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Degenerate("cannot normalize a zero vector".into()));
        }
        Ok(self.scaled(1.0 / n))
    }

    /// `features v1 F` header followed by one value per line.
    pub fn to_dump(&self) -> String {
        let mut out = format!("features v1 {}\n", self.0.len());
        for x in &self.0 {
            let _ = writeln!(out, "{x:.16e}");
        }
        out
    }

    pub fn from_dump(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty feature dump")?;
        let len = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["features", "v1", n] => n.parse::<usize>().map_err(|e| format!("bad F: {e}"))?,
            _ => return Err(format!("unrecognized feature header {header:?}")),
        };
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| format!("{l:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if values.len() != len {
            return Err(format!(
                "header declares {len} values, found {}",
                values.len()
            ));
        }
        FeatureVector::new(values).map_err(|e| e.to_string())
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_dump()).map_err(|e| Error::io(path, e))
    }

    pub fn read_dump(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FeatureVector::from_dump(&text).map_err(|m| Error::parse(path, m))
    }
}

/// Dot product with a fixed summation order: element `i` goes to lane
/// `i % 8`, the lanes are combined pairwise `((0+4)+(2+6))+((1+5)+(3+7))`,
/// and the tail past the last full block of 8 is added last, in order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let blocks = a.len() / 8;
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for k in 0..8 {
            lanes[k] += ca[k] * cb[k];
        }
    }
    let mut sum = ((lanes[0] + lanes[4]) + (lanes[2] + lanes[6]))
        + ((lanes[1] + lanes[5]) + (lanes[3] + lanes[7]));
    for i in blocks * 8..a.len().min(b.len()) {
        sum += a[i] * b[i];
    }
    sum
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            format!("{} features", a.len()),
            format!("{} features", b.len()),
        ));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot(a.values(), b.values()) / (na * nb)).clamp(-1.0, 1.0))
}

/// Gradient of `cos(f, t)` with respect to `f`:
/// `t / (‖f‖‖t‖) - cos · f / ‖f‖²`.
pub(crate) fn cosine_grad_wrt_first(f: &[f64], t: &[f64]) -> (f64, Vec<f64>) {
    let nf = dot(f, f).sqrt();
    let nt = dot(t, t).sqrt();
    let cos = dot(f, t) / (nf * nt);
    let grad = f
        .iter()
        .zip(t)
        .map(|(fi, ti)| ti / (nf * nt) - cos * fi / (nf * nf))
        .collect();
    (cos, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(
            cosine_similarity(&fv(&[1., 0.]), &fv(&[1., 0.])).unwrap(),
            1.0
        );
        assert_eq!(
            cosine_similarity(&fv(&[1., 0.]), &fv(&[0., 1.])).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            cosine_similarity(&fv(&[1., 1.]), &fv(&[1., 0.])).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_rejects_zero_and_mismatch() {
        assert!(matches!(
            cosine_similarity(&fv(&[0., 0.]), &fv(&[1., 0.])),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            cosine_similarity(&fv(&[1., 0., 0.]), &fv(&[1., 0.])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn cosine_is_symmetric_and_scale_free() {
        let a = fv(&[0.3, -1.2, 2.0]);
        let b = fv(&[1.5, 0.1, -0.7]);
        let ab = cosine_similarity(&a, &b).unwrap();
        assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
        assert_abs_diff_eq!(
            ab,
            cosine_similarity(&a, &b.scaled(3.5)).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn feature_dump_round_trip() {
        let f = fv(&[0.1, -2.5e-7, 3.0]);
        assert_eq!(FeatureVector::from_dump(&f.to_dump()).unwrap(), f);
        assert!(FeatureVector::from_dump("features v1 4\n1\n2\n").is_err());
    }
}
