use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// An 8-bit image stored planar (channel-major), as `[C, H, W]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != channels * height * width || data.is_empty() {
            return Err(Error::InvalidShape {
                op: "raster",
                detail: format!("{} bytes for a {channels}x{height}x{width} raster", data.len()),
            });
        }
        Ok(Raster {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Values scaled by `1/255`, shaped `[C, H, W]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let scale = T::lit(1.0 / 255.0);
        let data = self.data.iter().map(|&v| T::lit(v as f64) * scale).collect();
        Tensor::from_vec(&[self.channels, self.height, self.width], data).expect("raster is non-empty")
    }
}

/// A registered image pair with its binary change label.
#[derive(Clone, Debug, PartialEq)]
pub struct BiTemporalSample<T> {
    /// Pre-event image `[3, H, W]` in `[0, 1]`.
    pub xa: Tensor<T>,
    /// Post-event image `[3, H, W]` in `[0, 1]`.
    pub xb: Tensor<T>,
    /// `[1, H, W]`, exactly 0 or 1.
    pub y: Tensor<T>,
}

impl<T: Real> BiTemporalSample<T> {
    /// Scales both images to `[0, 1]` and maps label 255 to 1 and 0 to 0.
    pub fn from_rasters(a: &Raster, b: &Raster, label: &Raster) -> Result<Self> {
        if a.channels != 3 || b.channels != 3 || label.channels != 1 {
            return Err(Error::InvalidShape {
                op: "sample",
                detail: format!(
                    "expected 3-channel images and a 1-channel label, got {}, {} and {}",
                    a.channels, b.channels, label.channels
                ),
            });
        }
        if a.dims() != b.dims() || a.dims() != label.dims() {
            return Err(Error::InvalidShape {
                op: "sample",
                detail: format!(
                    "dimension mismatch: A {:?}, B {:?}, label {:?}",
                    a.dims(),
                    b.dims(),
                    label.dims()
                ),
            });
        }
        if let Some(v) = label.data.iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::Domain {
                op: "sample",
                detail: format!("label value {v} is neither 0 nor 255"),
            });
        }
        let y = label.data.iter().map(|&v| if v == 255 { T::one() } else { T::zero() }).collect();
        Ok(BiTemporalSample {
            xa: a.to_tensor(),
            xb: b.to_tensor(),
            y: Tensor::from_vec(&[1, label.height, label.width], y)?,
        })
    }

    pub fn height(&self) -> usize {
        self.y.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.y.shape()[2]
    }

    pub fn changed_pixels(&self) -> usize {
        self.y.data().iter().filter(|&&v| v == T::one()).count()
    }
}

/// Samples stacked along a new leading batch axis.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[N, 3, H, W]`.
    pub xa: Tensor<T>,
    pub xb: Tensor<T>,
    /// `[N, 1, H, W]`.
    pub y: Tensor<T>,
}

pub fn stack<T: Real>(samples: &[&BiTemporalSample<T>]) -> Result<Batch<T>> {
    let first = samples.first().ok_or_else(|| Error::Invalid("cannot stack an empty batch".into()))?;
    let cat = |get: &dyn Fn(&BiTemporalSample<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
        let shape = get(first).shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * get(first).len());
        for s in samples {
            let t = get(s);
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let mut full = alloc::vec![samples.len()];
        full.extend_from_slice(&shape);
        Tensor::from_vec(&full, data)
    };
    Ok(Batch {
        xa: cat(&|s| &s.xa)?,
        xb: cat(&|s| &s.xb)?,
        y: cat(&|s| &s.y)?,
    })
}
