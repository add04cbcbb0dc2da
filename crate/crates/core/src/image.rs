//! Image tensors and brightness scaling.
//!
//! Both tensor types share one channel-major, row-major layout:
//! `data[c * h * w + y * w + x]`. [`ImageTensor`] holds finite values in
//! [0, 1] and is what decoding and model outputs produce. [`RawTensor`]
//! holds arbitrary finite values and is where unclamped intermediates
//! (scaled predictions, gradients) live. Constructors enforce the
//! invariants so downstream code never re-checks them.

use crate::error::{Error, Result};

/// Default floor applied to a mean brightness before it is used as a divisor.
pub const DEFAULT_MEAN_FLOOR: f64 = 1e-6;

/// Read access shared by both tensor types.
pub trait Tensor {
    /// (channels, height, width).
    fn shape(&self) -> (usize, usize, usize);

    /// Channel-major, row-major data; length equals the shape product.
    fn data(&self) -> &[f64];
}

fn check_shape(channels: usize, height: usize, width: usize, data_len: usize) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidParameter {
            name: "channels",
            reason: format!("must be 1 or 3, got {channels}"),
        });
    }
    if height == 0 || width == 0 {
        return Err(Error::EmptyTensor);
    }
    let expected = channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or(Error::InvalidParameter {
            name: "shape",
            reason: format!("{channels}x{height}x{width} overflows usize"),
        })?;
    if data_len != expected {
        return Err(Error::DataLength {
            shape: [channels, height, width],
            expected,
            actual: data_len,
        });
    }
    Ok(())
}

/// An image: channels in {1, 3}, every value finite and in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Validates shape, finiteness, and the [0, 1] range.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(channels, height, width, data.len())?;
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: "image data",
                });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRange {
                    context: "image data",
                    index,
                    value,
                });
            }
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Constant-valued image; `value` must lie in [0, 1].
    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Internal constructor for data already known to satisfy the invariants.
    pub(crate) fn from_checked_parts(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Self {
        debug_assert!(check_shape(channels, height, width, data.len()).is_ok());
        debug_assert!(data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructors reject zero-element shapes
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Copies the data into an unconstrained tensor.
    pub fn to_raw(&self) -> RawTensor {
        RawTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

impl Tensor for ImageTensor {
    fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn data(&self) -> &[f64] {
        &self.data
    }
}

/// An unconstrained tensor: same layout as [`ImageTensor`], values finite
/// but not range-restricted.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RawTensor {
    /// Validates shape and finiteness.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(channels, height, width, data.len())?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "raw tensor data",
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Internal constructor for data already known to be finite.
    pub(crate) fn from_checked_parts(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Self {
        debug_assert!(check_shape(channels, height, width, data.len()).is_ok());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Clamps every value into [0, 1], yielding a valid image.
    pub fn clamp_to_image(&self) -> ImageTensor {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        ImageTensor::from_checked_parts(self.channels, self.height, self.width, data)
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

impl Tensor for RawTensor {
    fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Errors unless `a` and `b` have identical shapes.
pub fn same_shape<A: Tensor + ?Sized, B: Tensor + ?Sized>(a: &A, b: &B) -> Result<()> {
    let (ac, ah, aw) = a.shape();
    let (bc, bh, bw) = b.shape();
    if (ac, ah, aw) != (bc, bh, bw) {
        return Err(Error::ShapeMismatch {
            expected: [ac, ah, aw],
            actual: [bc, bh, bw],
        });
    }
    Ok(())
}

/// Arithmetic mean over all channels and pixels.
///
/// Summation is sequential in memory order, which keeps results bitwise
/// reproducible.
pub fn mean_brightness<T: Tensor + ?Sized>(t: &T) -> f64 {
    let data = t.data();
    let sum: f64 = data.iter().sum();
    sum / data.len() as f64
}

/// Rescales `pred` so its mean brightness matches `target`'s.
///
/// Returns the scaled tensor (unclamped; values may leave [0, 1]) and the
/// factor `lambda = mean(target) / max(mean(pred), mean_floor)`. The floor
/// keeps the division away from zero for black or near-black predictions.
pub fn scale_to_target_mean<P, T>(pred: &P, target: &T, mean_floor: f64) -> Result<(RawTensor, f64)>
where
    P: Tensor + ?Sized,
    T: Tensor + ?Sized,
{
    if !(mean_floor.is_finite() && mean_floor > 0.0) {
        return Err(Error::InvalidParameter {
            name: "mean_floor",
            reason: format!("must be finite and > 0, got {mean_floor}"),
        });
    }
    same_shape(pred, target)?;
    let lambda = mean_brightness(target) / mean_brightness(pred).max(mean_floor);
    let (c, h, w) = pred.shape();
    let data: Vec<f64> = pred.data().iter().map(|v| lambda * v).collect();
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "scaled prediction",
        });
    }
    Ok((RawTensor::from_checked_parts(c, h, w, data), lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_rejects_bad_channel_counts() {
        assert!(matches!(
            ImageTensor::new(2, 2, 2, vec![0.0; 8]),
            Err(Error::InvalidParameter { name: "channels", .. })
        ));
        assert!(matches!(
            RawTensor::new(4, 2, 2, vec![0.0; 16]),
            Err(Error::InvalidParameter { name: "channels", .. })
        ));
    }

    #[test]
    fn constructor_rejects_zero_dimensions() {
        assert!(matches!(
            ImageTensor::new(1, 0, 4, vec![]),
            Err(Error::EmptyTensor)
        ));
        assert!(matches!(
            RawTensor::new(3, 4, 0, vec![]),
            Err(Error::EmptyTensor)
        ));
    }

    #[test]
    fn constructor_rejects_length_mismatch() {
        assert!(matches!(
            ImageTensor::new(1, 2, 2, vec![0.0; 5]),
            Err(Error::DataLength { expected: 4, actual: 5, .. })
        ));
    }

    #[test]
    fn image_rejects_out_of_range_and_non_finite() {
        assert!(matches!(
            ImageTensor::new(1, 1, 2, vec![0.5, 1.5]),
            Err(Error::OutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            ImageTensor::new(1, 1, 2, vec![0.5, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        // Raw tensors accept out-of-range but never non-finite values.
        assert!(RawTensor::new(1, 1, 2, vec![-3.0, 7.5]).is_ok());
        assert!(matches!(
            RawTensor::new(1, 1, 2, vec![0.0, f64::INFINITY]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn boundary_values_are_accepted() {
        let img = ImageTensor::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn mean_brightness_small_example() {
        // Dyadic values: every partial sum is exact in any order.
        let img = ImageTensor::new(1, 2, 2, vec![0.125, 0.25, 0.375, 0.25]).unwrap();
        let reference = (0.25 + 0.375 + 0.25 + 0.125) / 4.0;
        assert_eq!(mean_brightness(&img), reference);
        assert_eq!(mean_brightness(&img), 0.25);
    }

    #[test]
    fn scale_to_target_mean_plain_case() {
        let pred = ImageTensor::new(1, 1, 2, vec![0.2, 0.2]).unwrap();
        let target = ImageTensor::new(1, 1, 2, vec![0.4, 0.4]).unwrap();
        let (scaled, lambda) = scale_to_target_mean(&pred, &target, DEFAULT_MEAN_FLOOR).unwrap();
        assert_eq!(lambda, 2.0);
        assert_eq!(scaled.data(), &[0.4, 0.4]);
    }

    #[test]
    fn scale_to_target_mean_floor_engages_on_black_input() {
        let pred = ImageTensor::constant(1, 2, 2, 0.0).unwrap();
        let target = ImageTensor::constant(1, 2, 2, 0.4).unwrap();
        let (scaled, lambda) = scale_to_target_mean(&pred, &target, 1e-6).unwrap();
        assert!((lambda - 0.4 / 1e-6).abs() / lambda < 1e-15);
        assert!(scaled.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_to_target_mean_result_may_leave_unit_range() {
        let pred = ImageTensor::new(1, 1, 2, vec![0.1, 0.9]).unwrap();
        let target = ImageTensor::constant(1, 1, 2, 0.9).unwrap();
        let (scaled, lambda) = scale_to_target_mean(&pred, &target, DEFAULT_MEAN_FLOOR).unwrap();
        assert!(lambda > 1.0);
        assert!(scaled.data()[1] > 1.0, "no clamping on the scaled tensor");
    }

    #[test]
    fn scale_to_target_mean_validates_floor_and_shape() {
        let a = ImageTensor::constant(1, 2, 2, 0.5).unwrap();
        let b = ImageTensor::constant(3, 2, 2, 0.5).unwrap();
        assert!(matches!(
            scale_to_target_mean(&a, &a, 0.0),
            Err(Error::InvalidParameter { name: "mean_floor", .. })
        ));
        assert!(matches!(
            scale_to_target_mean(&a, &b, DEFAULT_MEAN_FLOOR),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn clamp_to_image_saturates() {
        let raw = RawTensor::new(1, 1, 3, vec![-0.5, 0.25, 2.0]).unwrap();
        let img = raw.clamp_to_image();
        assert_eq!(img.data(), &[0.0, 0.25, 1.0]);
    }
}
