//! Digital-halftoning forward pipeline: grayscale conversion,
//! Floyd-Steinberg error diffusion, and normalized Sobel
//! gradient-magnitude maps. These generate both the network inputs and
//! the supervision targets, and double as the ground truth for
//! evaluation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::tensor::{Dims, Tensor};

/// Scale that maps the largest Sobel magnitude attainable on unit-range
/// inputs (|Gx| <= 4, |Gy| <= 4) into [0, 1].
const SOBEL_NORM: f32 = 0.176_776_7; // 1 / (4 * sqrt(2))

#[derive(Clone, Debug, PartialEq)]
pub enum HalftoneError {
    /// A pixel outside [0, 1] where unit range is required; callers clamp.
    OutOfRange { index: usize, value: f32 },
    /// Image smaller than the operation's minimum extent.
    TooSmall { h: usize, w: usize, min: usize },
    LengthMismatch { h: usize, w: usize, len: usize },
}

impl fmt::Display for HalftoneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HalftoneError::OutOfRange { index, value } => {
                write!(f, "pixel {index} is {value}, outside the required [0, 1] range")
            }
            HalftoneError::TooSmall { h, w, min } => {
                write!(f, "{h}x{w} image is smaller than the required {min}x{min}")
            }
            HalftoneError::LengthMismatch { h, w, len } => {
                write!(f, "{len} pixels cannot back a {h}x{w} image")
            }
        }
    }
}

impl core::error::Error for HalftoneError {}

/// 8-bit RGB image, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorImage {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl ColorImage {
    pub fn from_raw(h: usize, w: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), h * w * 3, "RGB buffer length mismatch");
        ColorImage { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn rgb(&self, y: usize, x: usize) -> (u8, u8, u8) {
        let i = (y * self.w + x) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }
}

/// Continuous-tone image with row-major values nominally in [0, 1].
///
/// `from_vec` enforces the range; `from_raw` trusts the caller (used for
/// values that were just computed inside that range, or deliberately
/// unclamped network output on its way to a clamp).
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

/// Binary image produced by halftoning: every value is exactly 0.0 or 1.0.
#[derive(Clone, Debug, PartialEq)]
pub struct HalftoneImage {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

/// Normalized gradient-magnitude map in [0, 1]; zero on constant regions.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientImage {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

macro_rules! image_common {
    ($ty:ident) => {
        impl $ty {
            pub fn height(&self) -> usize {
                self.h
            }

            pub fn width(&self) -> usize {
                self.w
            }

            pub fn data(&self) -> &[f32] {
                &self.data
            }

            #[inline]
            pub fn at(&self, y: usize, x: usize) -> f32 {
                self.data[y * self.w + x]
            }

            /// The `size`x`size` window whose top-left corner is (y0, x0).
            pub fn crop(&self, y0: usize, x0: usize, size: usize) -> Self {
                assert!(y0 + size <= self.h && x0 + size <= self.w, "crop out of range");
                let mut data = Vec::with_capacity(size * size);
                for y in y0..y0 + size {
                    data.extend_from_slice(&self.data[y * self.w + x0..y * self.w + x0 + size]);
                }
                $ty {
                    h: size,
                    w: size,
                    data,
                }
            }

            /// Single-item, single-channel tensor view of the image.
            pub fn to_tensor(&self) -> Tensor<f32> {
                Tensor::from_vec(Dims::new(1, 1, self.h, self.w), self.data.clone())
                    .expect("image buffer length matches dims")
            }
        }
    };
}

image_common!(GrayImage);
image_common!(HalftoneImage);
image_common!(GradientImage);

impl GrayImage {
    pub fn from_vec(h: usize, w: usize, data: Vec<f32>) -> Result<Self, HalftoneError> {
        if data.len() != h * w {
            return Err(HalftoneError::LengthMismatch { h, w, len: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(HalftoneError::OutOfRange {
                index,
                value: data[index],
            });
        }
        Ok(GrayImage { h, w, data })
    }

    pub fn from_raw(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w, "gray buffer length mismatch");
        GrayImage { h, w, data }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        GrayImage { h, w, data }
    }

    /// Clamp channel (n, c) of a tensor into [0, 1] and wrap it as an
    /// image; how unbounded reconstructions become writable pixels.
    pub fn from_tensor_channel(t: &Tensor<f32>, n: usize, c: usize) -> Self {
        let d = t.dims();
        let data = t.plane(n, c).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        GrayImage {
            h: d.h,
            w: d.w,
            data,
        }
    }
}

impl HalftoneImage {
    /// Wrap a buffer that is already binary; asserts the invariant.
    pub fn from_raw(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w, "halftone buffer length mismatch");
        assert!(
            data.iter().all(|&v| v == 0.0 || v == 1.0),
            "halftone values must be exactly 0 or 1"
        );
        HalftoneImage { h, w, data }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Reinterpret as a continuous-tone image (0/1 are valid gray values).
    pub fn as_gray(&self) -> GrayImage {
        GrayImage {
            h: self.h,
            w: self.w,
            data: self.data.clone(),
        }
    }
}

impl GradientImage {
    pub fn from_raw(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w, "gradient buffer length mismatch");
        GradientImage { h, w, data }
    }
}

/// BT.601 luma: `(0.299 R + 0.587 G + 0.114 B) / 255`, clamped to [0, 1].
pub fn to_grayscale(rgb: &ColorImage) -> GrayImage {
    let data = rgb
        .data
        .chunks_exact(3)
        .map(|p| {
            let luma = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            ((luma / 255.0) as f32).clamp(0.0, 1.0)
        })
        .collect();
    GrayImage {
        h: rgb.h,
        w: rgb.w,
        data,
    }
}

/// Pixel visiting order for error diffusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScanOrder {
    /// Top-to-bottom, left-to-right on every row.
    #[default]
    Raster,
    /// Alternate rows scan right-to-left with the kernel mirrored.
    Serpentine,
}

/// Floyd-Steinberg error diffusion in classic raster order. Threshold is
/// 0.5 with ties quantizing to 1; the quantization error is spread 7/16
/// right, 3/16 below-left, 5/16 below, 1/16 below-right, and shares that
/// fall outside the image are dropped.
pub fn error_diffuse_fs(gray: &GrayImage) -> Result<HalftoneImage, HalftoneError> {
    error_diffuse_fs_with(gray, ScanOrder::Raster)
}

/// [`error_diffuse_fs`] with an explicit scan order.
pub fn error_diffuse_fs_with(
    gray: &GrayImage,
    order: ScanOrder,
) -> Result<HalftoneImage, HalftoneError> {
    if let Some(index) = gray.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(HalftoneError::OutOfRange {
            index,
            value: gray.data[index],
        });
    }
    let (h, w) = (gray.h, gray.w);
    let mut acc = gray.data.clone();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        let reversed = order == ScanOrder::Serpentine && y % 2 == 1;
        for step in 0..w {
            let x = if reversed { w - 1 - step } else { step };
            let i = y * w + x;
            let v = acc[i];
            let q = if v >= 0.5 { 1.0 } else { 0.0 };
            out[i] = q;
            let err = v - q;
            // `ahead` is +1 in scan direction; the kernel mirrors with it.
            let ahead: isize = if reversed { -1 } else { 1 };
            let xi = x as isize;
            let spread = [
                (xi + ahead, y, 7.0 / 16.0),
                (xi - ahead, y + 1, 3.0 / 16.0),
                (xi, y + 1, 5.0 / 16.0),
                (xi + ahead, y + 1, 1.0 / 16.0),
            ];
            for (tx, ty, share) in spread {
                if tx >= 0 && (tx as usize) < w && ty < h {
                    acc[ty * w + tx as usize] += err * share;
                }
            }
        }
    }
    Ok(HalftoneImage { h, w, data: out })
}

/// Normalized Sobel gradient magnitude with replicate padding at the
/// borders. `Gx = [[-1,0,1],[-2,0,2],[-1,0,1]]`, `Gy` its transpose;
/// magnitude `sqrt(Gx^2 + Gy^2) / (4*sqrt(2))` so unit-range inputs map
/// into [0, 1].
pub fn sobel_gradient(gray: &GrayImage) -> Result<GradientImage, HalftoneError> {
    if gray.h < 3 || gray.w < 3 {
        return Err(HalftoneError::TooSmall {
            h: gray.h,
            w: gray.w,
            min: 3,
        });
    }
    let (h, w) = (gray.h, gray.w);
    let clamp_at = |y: isize, x: isize| -> f32 {
        let cy = y.clamp(0, h as isize - 1) as usize;
        let cx = x.clamp(0, w as isize - 1) as usize;
        gray.data[cy * w + cx]
    };
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let tl = clamp_at(y - 1, x - 1);
            let tc = clamp_at(y - 1, x);
            let tr = clamp_at(y - 1, x + 1);
            let ml = clamp_at(y, x - 1);
            let mr = clamp_at(y, x + 1);
            let bl = clamp_at(y + 1, x - 1);
            let bc = clamp_at(y + 1, x);
            let br = clamp_at(y + 1, x + 1);
            let gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            let gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
            let mag = (gx * gx + gy * gy).sqrt() * SOBEL_NORM;
            data.push(mag.min(1.0));
        }
    }
    Ok(GradientImage { h, w, data })
}

/// Identifier type for image provenance (file stem or synthetic label).
pub type SourceId = String;
