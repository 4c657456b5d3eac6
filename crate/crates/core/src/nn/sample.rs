use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Network input range: 8-bit reflectances are divided by this.
pub const INPUT_SCALE: f64 = 255.0;

/// One training example: `[1, C, H, W]` image, `[1, 1, H, W]` target in
/// [0, 1] and binary weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<T> {
    pub image: Tensor<T>,
    pub target: Tensor<T>,
    pub weight: Tensor<T>,
}

/// Image raster (any band count, nodata ignored) to a `[1, bands, H, W]`
/// tensor scaled to [0, 1].
pub fn image_tensor<T: Scalar>(image: &Raster) -> Tensor<T> {
    let data = (0..image.data().len())
        .map(|i| T::from_f64(image.data().get(i) / INPUT_SCALE))
        .collect();
    Tensor::from_vec([1, image.bands(), image.height(), image.width()], data).expect("raster shape")
}

fn band_tensor<T: Scalar>(r: &Raster, f: impl Fn(Option<f64>) -> f64) -> Tensor<T> {
    let data = r.band_values(0).into_iter().map(|v| T::from_f64(f(v))).collect();
    Tensor::from_vec([1, 1, r.height(), r.width()], data).expect("raster shape")
}

impl<T: Scalar> TrainSample<T> {
    pub fn new(image: Tensor<T>, target: Tensor<T>, weight: Tensor<T>) -> Result<Self> {
        let [n, _, h, w] = image.shape();
        if n != 1 || target.shape() != [1, 1, h, w] || weight.shape() != [1, 1, h, w] {
            return Err(Error::shape(format!(
                "sample tensors disagree: image {:?}, target {:?}, weight {:?}",
                image.shape(),
                target.shape(),
                weight.shape()
            )));
        }
        Ok(Self { image, target, weight })
    }

    /// From co-registered rasters. Nodata targets and weights count as zero.
    pub fn from_rasters(image: &Raster, target: &Raster, weight: &Raster) -> Result<Self> {
        if !image.same_grid(target) || !image.same_grid(weight) {
            return Err(Error::shape("image, target and weight rasters must share a grid"));
        }
        Self::new(
            image_tensor(image),
            band_tensor(target, |v| v.unwrap_or(0.0)),
            band_tensor(weight, |v| v.unwrap_or(0.0)),
        )
    }

    pub fn cast<U: Scalar>(&self) -> TrainSample<U> {
        TrainSample {
            image: self.image.cast(),
            target: self.target.cast(),
            weight: self.weight.cast(),
        }
    }
}
