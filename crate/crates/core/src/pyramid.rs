//! Image pyramid construction.

use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear, Tensor};

/// Images `I_0..I_{N-1}`, each half the resolution of the previous one.
#[derive(Clone, Debug)]
pub struct PyramidSet {
    levels: Vec<Tensor>,
}

impl PyramidSet {
    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> Option<&Tensor> {
        self.levels.get(i)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Level 0 is `image` itself; level `i` is the align-corners bilinear resize
/// to `(H/2^i, W/2^i)`.
pub fn build_pyramid(image: &Tensor, n_levels: usize) -> Result<PyramidSet> {
    if n_levels < 2 {
        return Err(Error::Precondition(format!(
            "an image pyramid needs at least 2 levels, got {n_levels}"
        )));
    }
    let (h, w) = image.shape().spatial();
    let multiple = 1usize << (n_levels - 1);
    if h % multiple != 0 || w % multiple != 0 {
        return Err(Error::Precondition(format!(
            "image {h}x{w} must be a multiple of {multiple} for a {n_levels}-level pyramid"
        )));
    }
    let mut levels = Vec::with_capacity(n_levels);
    levels.push(image.clone());
    for i in 1..n_levels {
        levels.push(resize_bilinear(image, h >> i, w >> i)?);
    }
    Ok(PyramidSet { levels })
}

/// Per-channel `(x − mean) / std`.
pub fn normalize_image(image: &Tensor, mean: &[f64], std: &[f64]) -> Result<Tensor> {
    let s = image.shape();
    if mean.len() != s.c() || std.len() != s.c() {
        return Err(Error::Shape(format!(
            "normalisation stats have {}/{} entries for {} channels",
            mean.len(),
            std.len(),
            s.c()
        )));
    }
    Ok(Tensor::from_fn(s, |n, c, y, x| (image.at(n, c, y, x) - mean[c]) / std[c]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_levels_of_128() {
        let img = Tensor::from_fn([1, 3, 128, 128], |_, c, y, x| (c + y * x) as f64);
        let p = build_pyramid(&img, 4).unwrap();
        let sides: Vec<_> = p.levels().iter().map(|t| t.shape().h()).collect();
        assert_eq!(sides, vec![128, 64, 32, 16]);
        assert!(p.levels()[0].bitwise_eq(&img));
    }

    #[test]
    fn rejects_single_level_and_indivisible() {
        let img = Tensor::zeros([1, 3, 24, 24]);
        assert!(build_pyramid(&img, 1).is_err());
        let err = build_pyramid(&img, 5).unwrap_err().to_string();
        assert!(err.contains("multiple of 16"), "{err}");
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::full([1, 3, 64, 64], 0.37);
        for level in build_pyramid(&img, 4).unwrap().levels() {
            assert!(level.data().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn ramp_mean_preserved() {
        let img = Tensor::from_fn([1, 1, 64, 64], |_, _, y, x| 0.5 * x as f64 - 0.25 * y as f64 + 3.0);
        let p = build_pyramid(&img, 4).unwrap();
        let m0 = p.levels()[0].mean();
        for l in p.levels() {
            assert!((l.mean() - m0).abs() < 1e-9);
        }
    }
}
