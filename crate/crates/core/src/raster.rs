//! Image containers and pixel-level geometry.
//!
//! Two representations are used: [`GrayRaster`] is the 8-bit form that lives
//! in PNG files and comes out of the synthetic renderer; [`ImageTensor`] is
//! the normalized `f64` form consumed by the network. Ink polarity is fixed
//! across the crate: 0.0 is ink, 1.0 is background.

use ndarray::Array2;
use std::path::Path;

use crate::error::{Result, ScribeError};

/// Target height every image is normalized to.
pub const NORM_HEIGHT: usize = 64;

/// Background value for `ImageTensor` (white paper).
pub const BACKGROUND: f64 = 1.0;

/// An 8-bit grayscale raster (0 = black ink, 255 = background).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayRaster {
    pub data: Array2<u8>,
}

impl GrayRaster {
    pub fn new(data: Array2<u8>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| ScribeError::ImageCodec(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = Array2::from_shape_fn((h, w), |(y, x)| img.get_pixel(x as u32, y as u32).0[0]);
        Ok(Self { data })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel(x as u32, y as u32, image::Luma([self.data[[y, x]]]));
            }
        }
        img.save(path)
            .map_err(|e| ScribeError::ImageCodec(format!("{}: {e}", path.display())))
    }
}

/// Height-normalized grayscale word image.
///
/// Single channel, fixed height [`NORM_HEIGHT`], variable width, values in
/// [0, 1] with 0 = ink and 1 = background.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array2<f64>,
}

impl ImageTensor {
    /// Wrap a value array. Panics if values fall outside [0, 1].
    pub fn new(data: Array2<f64>) -> Self {
        debug_assert!(
            data.iter().all(|v| (0.0..=1.0).contains(v)),
            "ImageTensor values must lie in [0,1]"
        );
        Self { data }
    }

    /// Constant-background image.
    pub fn background(height: usize, width: usize) -> Self {
        Self {
            data: Array2::from_elem((height, width), BACKGROUND),
        }
    }

    pub fn channels(&self) -> usize {
        1
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_values(self) -> Array2<f64> {
        self.data
    }

    /// Total ink mass, counting darkness against the background.
    pub fn ink_mass(&self) -> f64 {
        self.data.iter().map(|v| BACKGROUND - v).sum()
    }

    pub fn to_raster(&self) -> GrayRaster {
        GrayRaster::new(self.data.map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    }
}

/// Rescale an 8-bit raster to height 64, preserving aspect ratio.
///
/// Width maps to `round(w * 64 / h)` (half-up), floored at one pixel, and
/// values rescale to [0, 1] with bilinear resampling.
pub fn normalize_image(raw: &GrayRaster) -> Result<ImageTensor> {
    let (h, w) = (raw.height(), raw.width());
    if h == 0 || w == 0 {
        return Err(ScribeError::InvalidInput(format!(
            "empty raster ({h}x{w})"
        )));
    }
    let new_w = (((w * NORM_HEIGHT) as f64 / h as f64) + 0.5).floor().max(1.0) as usize;
    let float = raw.data.map(|&p| p as f64 / 255.0);
    let resized = resize_bilinear(&float, NORM_HEIGHT, new_w);
    Ok(ImageTensor::new(resized.map(|v| v.clamp(0.0, 1.0))))
}

/// Bilinear resize of a value array (align-corners-free, pixel-center grid).
pub fn resize_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = (src.nrows(), src.ncols());
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let dy = fy - y0 as f64;
        let dx = fx - x0 as f64;
        src[[y0, x0]] * (1.0 - dy) * (1.0 - dx)
            + src[[y0, x1]] * (1.0 - dy) * dx
            + src[[y1, x0]] * dy * (1.0 - dx)
            + src[[y1, x1]] * dy * dx
    })
}

/// Bilinear sample at a real-valued location; out-of-bounds reads `fill`.
pub fn sample_bilinear(src: &Array2<f64>, y: f64, x: f64, fill: f64) -> f64 {
    let (h, w) = (src.nrows(), src.ncols());
    let y0 = y.floor();
    let x0 = x.floor();
    let dy = y - y0;
    let dx = x - x0;
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy > (h - 1) as f64 || xx > (w - 1) as f64 {
            fill
        } else {
            src[[yy as usize, xx as usize]]
        }
    };
    at(y0, x0) * (1.0 - dy) * (1.0 - dx)
        + at(y0, x0 + 1.0) * (1.0 - dy) * dx
        + at(y0 + 1.0, x0) * dy * (1.0 - dx)
        + at(y0 + 1.0, x0 + 1.0) * dy * dx
}

/// Warp by an inverse affine map: `src_coords = m * [x, y, 1]`.
///
/// `m` is row-major `[[a, b, c], [d, e, f]]` with `sx = a*x + b*y + c`,
/// `sy = d*x + e*y + f`. Output keeps the input shape; exposed regions fill
/// with `fill`.
pub fn warp_affine(src: &Array2<f64>, m: [[f64; 3]; 2], fill: f64) -> Array2<f64> {
    let (h, w) = (src.nrows(), src.ncols());
    Array2::from_shape_fn((h, w), |(y, x)| {
        let xf = x as f64;
        let yf = y as f64;
        let sx = m[0][0] * xf + m[0][1] * yf + m[0][2];
        let sy = m[1][0] * xf + m[1][1] * yf + m[1][2];
        sample_bilinear(src, sy, sx, fill)
    })
}

/// Exact 90-degree-step rotations (counter-clockwise) of a square array.
pub fn rotate_quarter(src: &Array2<f64>, quarter_turns: usize) -> Array2<f64> {
    let (h, w) = (src.nrows(), src.ncols());
    assert_eq!(h, w, "quarter rotations are defined on squares here");
    match quarter_turns % 4 {
        0 => src.clone(),
        1 => Array2::from_shape_fn((w, h), |(y, x)| src[[x, w - 1 - y]]),
        2 => Array2::from_shape_fn((h, w), |(y, x)| src[[h - 1 - y, w - 1 - x]]),
        3 => Array2::from_shape_fn((w, h), |(y, x)| src[[h - 1 - x, y]]),
        _ => unreachable!(),
    }
}

/// Mirror along the horizontal axis (left-right flip).
pub fn flip_horizontal(src: &Array2<f64>) -> Array2<f64> {
    let (h, w) = (src.nrows(), src.ncols());
    Array2::from_shape_fn((h, w), |(y, x)| src[[y, w - 1 - x]])
}

/// Mirror along the vertical axis (top-bottom flip).
pub fn flip_vertical(src: &Array2<f64>) -> Array2<f64> {
    let (h, w) = (src.nrows(), src.ncols());
    Array2::from_shape_fn((h, w), |(y, x)| src[[h - 1 - y, x]])
}

/// Right-pad with `fill` to at least `width` columns.
pub fn pad_right(src: &Array2<f64>, width: usize, fill: f64) -> Array2<f64> {
    let (h, w) = (src.nrows(), src.ncols());
    if w >= width {
        return src.clone();
    }
    let mut out = Array2::from_elem((h, width), fill);
    out.slice_mut(ndarray::s![.., ..w]).assign(src);
    out
}

/// Copy a rectangular window.
pub fn crop(src: &Array2<f64>, y0: usize, x0: usize, h: usize, w: usize) -> Array2<f64> {
    assert!(y0 + h <= src.nrows() && x0 + w <= src.ncols(), "crop out of bounds");
    src.slice(ndarray::s![y0..y0 + h, x0..x0 + w]).to_owned()
}

/// 2D convolution with replicate border handling. Kernel dims must be odd.
pub fn convolve_replicate(src: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = (src.nrows(), src.ncols());
    let (kh, kw) = (kernel.nrows(), kernel.ncols());
    assert!(kh % 2 == 1 && kw % 2 == 1);
    let (ry, rx) = (kh as isize / 2, kw as isize / 2);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for ky in 0..kh {
            for kx in 0..kw {
                let sy = (y as isize + ky as isize - ry).clamp(0, h as isize - 1) as usize;
                let sx = (x as isize + kx as isize - rx).clamp(0, w as isize - 1) as usize;
                acc += src[[sy, sx]] * kernel[[ky, kx]];
            }
        }
        acc
    })
}

/// Grayscale erosion with a 3x3 structuring element (min filter).
///
/// On dark-ink images this thickens strokes.
pub fn erode3(src: &Array2<f64>) -> Array2<f64> {
    min_max_filter3(src, true)
}

/// Grayscale dilation with a 3x3 structuring element (max filter).
pub fn dilate3(src: &Array2<f64>) -> Array2<f64> {
    min_max_filter3(src, false)
}

fn min_max_filter3(src: &Array2<f64>, take_min: bool) -> Array2<f64> {
    let (h, w) = (src.nrows(), src.ncols());
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut best = src[[y, x]];
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let yy = y as isize + dy;
                let xx = x as isize + dx;
                if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                    let v = src[[yy as usize, xx as usize]];
                    best = if take_min { best.min(v) } else { best.max(v) };
                }
            }
        }
        best
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn raster_filled(h: usize, w: usize, v: u8) -> GrayRaster {
        GrayRaster::new(Array2::from_elem((h, w), v))
    }

    #[test]
    fn normalize_exact_downscale() {
        let t = normalize_image(&raster_filled(128, 256, 200)).unwrap();
        assert_eq!((t.height(), t.width()), (64, 128));
    }

    #[test]
    fn normalize_identity_height() {
        let t = normalize_image(&raster_filled(64, 100, 0)).unwrap();
        assert_eq!((t.height(), t.width()), (64, 100));
    }

    #[test]
    fn normalize_rounds_half_up() {
        // round(333 * 64 / 100) = round(213.12) = 213
        let t = normalize_image(&raster_filled(100, 333, 10)).unwrap();
        assert_eq!((t.height(), t.width()), (64, 213));
    }

    #[test]
    fn normalize_floors_width_at_one() {
        let t = normalize_image(&raster_filled(400, 2, 10)).unwrap();
        assert_eq!((t.height(), t.width()), (64, 1));
    }

    #[test]
    fn normalize_rejects_empty() {
        let empty = GrayRaster::new(Array2::from_elem((0, 5), 0u8));
        assert!(normalize_image(&empty).is_err());
    }

    #[test]
    fn normalize_idempotent_on_normalized() {
        let mut r = crate::rng::RandomSource::from_seed(5);
        let raw = GrayRaster::new(Array2::from_shape_fn((64, 80), |_| r.below(256) as u8));
        let once = normalize_image(&raw).unwrap();
        let again = normalize_image(&once.to_raster()).unwrap();
        assert_eq!((again.height(), again.width()), (once.height(), once.width()));
        for (a, b) in once.values().iter().zip(again.values().iter()) {
            // one u8 quantization plus resampling slack
            assert!((a - b).abs() < 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn quarter_rotations_compose_to_identity() {
        let src = array![[0.0, 0.25], [0.5, 1.0]];
        let r1 = rotate_quarter(&src, 1);
        let r3 = rotate_quarter(&r1, 3);
        assert_eq!(src, r3);
        assert_eq!(rotate_quarter(&src, 2), rotate_quarter(&rotate_quarter(&src, 1), 1));
    }

    #[test]
    fn flips_are_involutions() {
        let src = array![[0.0, 0.25, 0.5], [0.5, 1.0, 0.75]];
        assert_eq!(flip_horizontal(&flip_horizontal(&src)), src);
        assert_eq!(flip_vertical(&flip_vertical(&src)), src);
    }

    #[test]
    fn erode_then_dilate_identity_on_constant() {
        let c = Array2::from_elem((10, 12), 0.7);
        assert_eq!(dilate3(&erode3(&c)), c);
    }

    #[test]
    fn warp_identity_preserves() {
        let src = Array2::from_shape_fn((6, 7), |(y, x)| (y * 7 + x) as f64 / 41.0);
        let out = warp_affine(&src, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 1.0);
        for (a, b) in src.iter().zip(out.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut r = crate::rng::RandomSource::from_seed(3);
        let raw = GrayRaster::new(Array2::from_shape_fn((20, 33), |_| r.below(256) as u8));
        raw.save_png(&path).unwrap();
        let back = GrayRaster::load_png(&path).unwrap();
        assert_eq!(raw, back);
    }
}
