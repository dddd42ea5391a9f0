//! Collapsing an event stream along time into a static frame.
//!
//! Each pixel accumulates either its spike count or the sum of its spike
//! times, and the frame is divided by its own maximum so the brightest pixel
//! of every pattern is exactly 1. Normalization never looks beyond the
//! pattern being collapsed.
//!
//! All rounding in this module is half away from zero.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::aer::{EventStream, Polarity};
use crate::events::{self, OpsError, SaccadePlan};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CollapseError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Ops(#[from] OpsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CollapseMode {
    /// Number of events per pixel.
    #[default]
    Count,
    /// Sum of event timestamps per pixel.
    TimeSum,
}

/// Per-pixel accumulation, row-major with `y` selecting the row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeCountFrame {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u64>,
    pub mode: CollapseMode,
}

impl SpikeCountFrame {
    pub fn get(&self, x: u32, y: u32) -> u64 {
        self.values[(y * self.width + x) as usize]
    }
}

/// Normalized intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedImage {
    pub width: u32,
    pub height: u32,
    pub intensities: Vec<f64>,
    /// Set when the source frame had no activity; the image is then black.
    pub all_zero: bool,
}

/// 8-bit image, row-major top-down, channels interleaved per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGrid8 {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl PixelGrid8 {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, CollapseError> {
        if width == 0 || height == 0 {
            return Err(CollapseError::InvalidArgument(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(CollapseError::InvalidArgument(format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(CollapseError::InvalidArgument(format!(
                "expected {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(PixelGrid8 {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: u32, height: u32, data: Vec<u8>) -> Result<Self, CollapseError> {
        Self::new(width, height, 1, data)
    }

    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        let idx = ((y * self.width + x) as usize) * self.channels as usize + c as usize;
        self.data[idx]
    }

    /// One channel as a row-major plane.
    pub fn plane(&self, c: u8) -> Vec<u8> {
        self.data
            .iter()
            .skip(c as usize)
            .step_by(self.channels as usize)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResizeMethod {
    #[default]
    Nearest,
    Bilinear,
}

pub fn accumulate(stream: &EventStream, mode: CollapseMode) -> SpikeCountFrame {
    let w = stream.width as usize;
    let mut values = vec![0u64; w * stream.height as usize];
    for e in &stream.events {
        let idx = e.y as usize * w + e.x as usize;
        values[idx] += match mode {
            CollapseMode::Count => 1,
            CollapseMode::TimeSum => u64::from(e.timestamp),
        };
    }
    SpikeCountFrame {
        width: stream.width,
        height: stream.height,
        values,
        mode,
    }
}

pub fn normalize(frame: &SpikeCountFrame) -> CollapsedImage {
    let max = frame.values.iter().copied().max().unwrap_or(0);
    let intensities = if max == 0 {
        vec![0.0; frame.values.len()]
    } else {
        let m = max as f64;
        frame.values.iter().map(|&v| v as f64 / m).collect()
    };
    CollapsedImage {
        width: frame.width,
        height: frame.height,
        intensities,
        all_zero: max == 0,
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn quantize(img: &CollapsedImage) -> PixelGrid8 {
    PixelGrid8 {
        width: img.width,
        height: img.height,
        channels: 1,
        data: img.intensities.iter().map(|&v| to_u8(255.0 * v)).collect(),
    }
}

/// Source index for destination index `i` under pixel-centre nearest sampling:
/// `floor((i + 0.5) * src / dst)`, computed exactly in integers.
fn nearest_index(i: u32, src: u32, dst: u32) -> usize {
    let idx = ((2 * u64::from(i) + 1) * u64::from(src)) / (2 * u64::from(dst));
    idx.min(u64::from(src) - 1) as usize
}

/// Edge-clamped bilinear taps at the same pixel centres.
fn bilinear_taps(i: u32, src: u32, dst: u32) -> (usize, usize, f64) {
    let pos = (f64::from(i) + 0.5) * f64::from(src) / f64::from(dst) - 0.5;
    let pos = pos.clamp(0.0, f64::from(src - 1));
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src as usize - 1);
    (lo, hi, pos - lo as f64)
}

fn resize_plane<T: Copy>(
    src: &[T],
    (sw, sh): (u32, u32),
    (dw, dh): (u32, u32),
    method: ResizeMethod,
    to_f: impl Fn(T) -> f64,
    from_f: impl Fn(f64) -> T,
) -> Vec<T> {
    let at = |x: usize, y: usize| src[y * sw as usize + x];
    let mut out = Vec::with_capacity(dw as usize * dh as usize);
    match method {
        ResizeMethod::Nearest => {
            for y in 0..dh {
                let sy = nearest_index(y, sh, dh);
                for x in 0..dw {
                    out.push(at(nearest_index(x, sw, dw), sy));
                }
            }
        }
        ResizeMethod::Bilinear => {
            for y in 0..dh {
                let (y0, y1, fy) = bilinear_taps(y, sh, dh);
                for x in 0..dw {
                    let (x0, x1, fx) = bilinear_taps(x, sw, dw);
                    let top = to_f(at(x0, y0)) * (1.0 - fx) + to_f(at(x1, y0)) * fx;
                    let bot = to_f(at(x0, y1)) * (1.0 - fx) + to_f(at(x1, y1)) * fx;
                    out.push(from_f(top * (1.0 - fy) + bot * fy));
                }
            }
        }
    }
    out
}

fn check_dims(out_w: u32, out_h: u32) -> Result<(), CollapseError> {
    if out_w == 0 || out_h == 0 {
        return Err(CollapseError::InvalidArgument(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    Ok(())
}

pub fn resize(
    grid: &PixelGrid8,
    out_w: u32,
    out_h: u32,
    method: ResizeMethod,
) -> Result<PixelGrid8, CollapseError> {
    check_dims(out_w, out_h)?;
    let planes: Vec<Vec<u8>> = (0..grid.channels)
        .map(|c| {
            resize_plane(
                &grid.plane(c),
                (grid.width, grid.height),
                (out_w, out_h),
                method,
                f64::from,
                to_u8,
            )
        })
        .collect();
    let n = out_w as usize * out_h as usize;
    let data = (0..n)
        .flat_map(|i| planes.iter().map(move |p| p[i]))
        .collect();
    Ok(PixelGrid8 {
        width: out_w,
        height: out_h,
        channels: grid.channels,
        data,
    })
}

/// Resizes the real-valued image before quantization. The `all_zero` flag is kept.
pub fn resize_intensities(
    img: &CollapsedImage,
    out_w: u32,
    out_h: u32,
    method: ResizeMethod,
) -> Result<CollapsedImage, CollapseError> {
    check_dims(out_w, out_h)?;
    Ok(CollapsedImage {
        width: out_w,
        height: out_h,
        intensities: resize_plane(
            &img.intensities,
            (img.width, img.height),
            (out_w, out_h),
            method,
            |v| v,
            |v| v,
        ),
        all_zero: img.all_zero,
    })
}

pub fn replicate_channels(grid: &PixelGrid8) -> Result<PixelGrid8, CollapseError> {
    if grid.channels != 1 {
        return Err(CollapseError::InvalidArgument(format!(
            "expected a 1-channel grid, got {} channels",
            grid.channels
        )));
    }
    Ok(PixelGrid8 {
        width: grid.width,
        height: grid.height,
        channels: 3,
        data: grid.data.iter().flat_map(|&v| [v, v, v]).collect(),
    })
}

/// `round(0.21 R + 0.72 G + 0.07 B)`, evaluated in integer hundredths so the
/// tie rule is exact.
pub fn rgb_to_gray(grid: &PixelGrid8) -> Result<PixelGrid8, CollapseError> {
    if grid.channels != 3 {
        return Err(CollapseError::InvalidArgument(format!(
            "expected a 3-channel grid, got {} channels",
            grid.channels
        )));
    }
    let data = grid
        .data
        .chunks_exact(3)
        .map(|px| {
            let weighted = 21 * u32::from(px[0]) + 72 * u32::from(px[1]) + 7 * u32::from(px[2]);
            ((weighted + 50) / 100) as u8
        })
        .collect();
    Ok(PixelGrid8 {
        width: grid.width,
        height: grid.height,
        channels: 1,
        data,
    })
}

/// Whether resizing happens on the 8-bit grid or on the real-valued image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResizeOrder {
    #[default]
    QuantizeThenResize,
    ResizeThenQuantize,
}

/// Which part of the recording contributes to the frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SaccadeSelection {
    /// Every event.
    All,
    /// Equal windows over `[0, span]` (span defaults to the stream's last timestamp).
    Equal {
        windows: usize,
        span: Option<u64>,
        indices: BTreeSet<usize>,
    },
    /// Explicit half-open windows.
    Explicit {
        bounds: Vec<(u64, u64)>,
        indices: BTreeSet<usize>,
    },
}

impl SaccadeSelection {
    /// The first `n` of `windows` equal saccades.
    pub fn first(n: usize, windows: usize) -> Self {
        SaccadeSelection::Equal {
            windows,
            span: None,
            indices: (0..n).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseOptions {
    /// `None` keeps both polarities.
    pub polarity: Option<Polarity>,
    pub saccades: SaccadeSelection,
    pub mode: CollapseMode,
    pub resize: Option<(u32, u32)>,
    pub method: ResizeMethod,
    pub order: ResizeOrder,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        CollapseOptions {
            polarity: Some(Polarity::On),
            saccades: SaccadeSelection::All,
            mode: CollapseMode::Count,
            resize: None,
            method: ResizeMethod::Nearest,
            order: ResizeOrder::QuantizeThenResize,
        }
    }
}

/// Result of the full collapse pipeline for one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedFrame {
    pub grid: PixelGrid8,
    pub all_zero: bool,
    pub events_used: usize,
}

/// Polarity filter, saccade selection, accumulation, normalization,
/// quantization and optional resize.
pub fn collapse_stream(
    stream: &EventStream,
    opts: &CollapseOptions,
) -> Result<CollapsedFrame, CollapseError> {
    let filtered = match opts.polarity {
        Some(p) => events::filter_polarity(stream, p),
        None => stream.clone(),
    };
    let selected = match &opts.saccades {
        SaccadeSelection::All => filtered,
        SaccadeSelection::Equal {
            windows,
            span,
            indices,
        } => {
            // Windows come from the unfiltered recording so that polarity
            // filtering cannot move saccade boundaries.
            let span = span.unwrap_or_else(|| u64::from(stream.max_timestamp()));
            let plan = SaccadePlan::equal(span, *windows)?;
            events::select_saccades(&filtered, &plan, indices)?
        }
        SaccadeSelection::Explicit { bounds, indices } => {
            let plan = SaccadePlan::from_boundaries(bounds)?;
            events::select_saccades(&filtered, &plan, indices)?
        }
    };
    let image = normalize(&accumulate(&selected, opts.mode));
    let grid = match (opts.resize, opts.order) {
        (None, _) => quantize(&image),
        (Some((w, h)), ResizeOrder::QuantizeThenResize) => {
            resize(&quantize(&image), w, h, opts.method)?
        }
        (Some((w, h)), ResizeOrder::ResizeThenQuantize) => {
            quantize(&resize_intensities(&image, w, h, opts.method)?)
        }
    };
    Ok(CollapsedFrame {
        grid,
        all_zero: image.all_zero,
        events_used: selected.len(),
    })
}
