//! Constants of the standard multi-scale SSIM definition.

/// Gaussian window length.
pub const WINDOW_SIZE: usize = 11;

/// Gaussian window standard deviation.
pub const WINDOW_SIGMA: f64 = 1.5;

/// Luminance stabilizer coefficient.
pub const K1: f64 = 0.01;

/// Contrast/structure stabilizer coefficient.
pub const K2: f64 = 0.03;

/// Per-scale exponents, finest scale first.
pub const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Values are compared on the normalized `[0, 1]` scale.
pub const DATA_RANGE: f64 = 1.0;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
