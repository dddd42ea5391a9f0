//! BMP and PGM byte codecs.
//!
//! Writing produces 8-bit paletted grayscale BMP (bottom-up rows, 256-entry
//! `(i, i, i, 0)` palette) and binary PGM (P5). Reading accepts 8-bit BMP
//! with a grayscale palette, uncompressed 24-bit BMP, and P5 PGM with
//! maxval 255.

use thiserror::Error;

use crate::collapse::PixelGrid8;

const FILE_HEADER_LEN: usize = 14;
const INFO_HEADER_LEN: usize = 40;
const PALETTE_LEN: usize = 256 * 4;
const GRAY8_PIXEL_OFFSET: usize = FILE_HEADER_LEN + INFO_HEADER_LEN + PALETTE_LEN;
const PIXELS_PER_METER: i32 = 2835;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated image data: {0}")]
    Truncated(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    BmpGray8,
    BmpRgb24,
    PgmRaw,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::BmpGray8 | ImageFormat::BmpRgb24 => "bmp",
            ImageFormat::PgmRaw => "pgm",
        }
    }
}

/// Expected encoded size of an image of a given format and dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageFileSpec {
    pub format: ImageFormat,
    pub width: u32,
    pub height: u32,
}

impl ImageFileSpec {
    pub fn row_stride(&self) -> usize {
        let bytes_per_row = match self.format {
            ImageFormat::BmpGray8 | ImageFormat::PgmRaw => self.width as usize,
            ImageFormat::BmpRgb24 => 3 * self.width as usize,
        };
        match self.format {
            ImageFormat::PgmRaw => bytes_per_row,
            _ => bytes_per_row.div_ceil(4) * 4,
        }
    }

    pub fn expected_size(&self) -> usize {
        let pixels = self.height as usize * self.row_stride();
        match self.format {
            ImageFormat::BmpGray8 => GRAY8_PIXEL_OFFSET + pixels,
            ImageFormat::BmpRgb24 => FILE_HEADER_LEN + INFO_HEADER_LEN + pixels,
            ImageFormat::PgmRaw => pgm_header(self.width, self.height).len() + pixels,
        }
    }
}

fn require_gray(grid: &PixelGrid8) -> Result<(), ImageError> {
    if grid.channels != 1 {
        return Err(ImageError::InvalidArgument(format!(
            "expected a 1-channel grid, got {} channels",
            grid.channels
        )));
    }
    if grid.width == 0 || grid.height == 0 {
        return Err(ImageError::InvalidArgument("empty grid".into()));
    }
    Ok(())
}

pub fn write_bmp_gray8(grid: &PixelGrid8) -> Result<Vec<u8>, ImageError> {
    require_gray(grid)?;
    let spec = ImageFileSpec {
        format: ImageFormat::BmpGray8,
        width: grid.width,
        height: grid.height,
    };
    let stride = spec.row_stride();
    let image_size = stride * grid.height as usize;
    let file_size = spec.expected_size();

    let mut out = Vec::with_capacity(file_size);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&(file_size as u32).to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&(GRAY8_PIXEL_OFFSET as u32).to_le_bytes());

    out.extend_from_slice(&(INFO_HEADER_LEN as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width as i32).to_le_bytes());
    out.extend_from_slice(&(grid.height as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&8u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(image_size as u32).to_le_bytes());
    out.extend_from_slice(&PIXELS_PER_METER.to_le_bytes());
    out.extend_from_slice(&PIXELS_PER_METER.to_le_bytes());
    out.extend_from_slice(&256u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());

    for i in 0..=255u8 {
        out.extend_from_slice(&[i, i, i, 0]);
    }

    let w = grid.width as usize;
    let pad = stride - w;
    for row in grid.data.chunks_exact(w).rev() {
        out.extend_from_slice(row);
        out.extend(std::iter::repeat_n(0u8, pad));
    }
    debug_assert_eq!(out.len(), file_size);
    Ok(out)
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn le_i32(b: &[u8], at: usize) -> i32 {
    le_u32(b, at) as i32
}

pub fn read_bmp(bytes: &[u8]) -> Result<PixelGrid8, ImageError> {
    let unsupported = |m: String| Err(ImageError::UnsupportedFormat(m));
    if bytes.len() < 2 || &bytes[..2] != b"BM" {
        return unsupported("missing BM signature".into());
    }
    if bytes.len() < FILE_HEADER_LEN + INFO_HEADER_LEN {
        return Err(ImageError::Truncated("BMP headers".into()));
    }
    let pixel_offset = le_u32(bytes, 10) as usize;
    let info_len = le_u32(bytes, 14) as usize;
    if info_len < INFO_HEADER_LEN {
        return unsupported(format!("info header of {info_len} bytes"));
    }
    let width = le_i32(bytes, 18);
    let raw_height = le_i32(bytes, 22);
    let bpp = le_u16(bytes, 28);
    let compression = le_u32(bytes, 30);
    if compression != 0 {
        return unsupported(format!("compression method {compression}"));
    }
    if width <= 0 || raw_height == 0 || raw_height == i32::MIN {
        return unsupported(format!("dimensions {width}x{raw_height}"));
    }
    let width = width as u32;
    let height = raw_height.unsigned_abs();
    let top_down = raw_height < 0;

    let (channels, format) = match bpp {
        8 => (1u8, ImageFormat::BmpGray8),
        24 => (3u8, ImageFormat::BmpRgb24),
        other => return unsupported(format!("{other} bits per pixel")),
    };

    let gray_lut = if bpp == 8 {
        let declared = le_u32(bytes, 46) as usize;
        let colors = if declared == 0 { 256 } else { declared };
        if colors > 256 {
            return unsupported(format!("palette of {colors} entries"));
        }
        let start = FILE_HEADER_LEN + info_len;
        let end = start + colors * 4;
        if bytes.len() < end {
            return Err(ImageError::Truncated("palette".into()));
        }
        let mut lut = Vec::with_capacity(colors);
        for (i, e) in bytes[start..end].chunks_exact(4).enumerate() {
            if e[0] != e[1] || e[1] != e[2] {
                return unsupported(format!("palette entry {i} is not gray"));
            }
            lut.push(e[0]);
        }
        Some(lut)
    } else {
        None
    };

    let stride = ImageFileSpec {
        format,
        width,
        height,
    }
    .row_stride();
    let needed = pixel_offset + stride * height as usize;
    if bytes.len() < needed {
        return Err(ImageError::Truncated(format!(
            "pixel data needs {needed} bytes, file has {}",
            bytes.len()
        )));
    }

    let w = width as usize;
    let mut data = Vec::with_capacity(w * height as usize * channels as usize);
    for y in 0..height as usize {
        let file_row = if top_down { y } else { height as usize - 1 - y };
        let row = &bytes[pixel_offset + file_row * stride..][..stride];
        match &gray_lut {
            Some(lut) => {
                for &idx in &row[..w] {
                    let v = *lut.get(idx as usize).ok_or_else(|| {
                        ImageError::UnsupportedFormat(format!("pixel index {idx} outside palette"))
                    })?;
                    data.push(v);
                }
            }
            None => {
                for bgr in row[..3 * w].chunks_exact(3) {
                    data.extend_from_slice(&[bgr[2], bgr[1], bgr[0]]);
                }
            }
        }
    }
    Ok(PixelGrid8 {
        width,
        height,
        channels,
        data,
    })
}

fn pgm_header(width: u32, height: u32) -> String {
    format!("P5\n{width} {height}\n255\n")
}

pub fn write_pgm(grid: &PixelGrid8) -> Result<Vec<u8>, ImageError> {
    require_gray(grid)?;
    let mut out = pgm_header(grid.width, grid.height).into_bytes();
    out.extend_from_slice(&grid.data);
    Ok(out)
}

/// Reads binary PGM with maxval 255; `#` comments in the header are skipped.
pub fn read_pgm(bytes: &[u8]) -> Result<PixelGrid8, ImageError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(ImageError::UnsupportedFormat("missing P5 signature".into()));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::UnsupportedFormat("malformed PGM header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::UnsupportedFormat("malformed PGM header".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::UnsupportedFormat(format!("PGM maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::UnsupportedFormat(format!(
            "dimensions {width}x{height}"
        )));
    }
    let n = width as usize * height as usize;
    let data = bytes
        .get(pos..pos + n)
        .ok_or_else(|| ImageError::Truncated("PGM pixel data".into()))?;
    Ok(PixelGrid8 {
        width,
        height,
        channels: 1,
        data: data.to_vec(),
    })
}

/// Dispatches on the file signature.
pub fn read_image(bytes: &[u8]) -> Result<PixelGrid8, ImageError> {
    match bytes.get(..2) {
        Some(b"BM") => read_bmp(bytes),
        Some(b"P5") => read_pgm(bytes),
        _ => Err(ImageError::UnsupportedFormat(
            "neither BMP nor binary PGM".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: u32, h: u32, data: Vec<u8>) -> PixelGrid8 {
        PixelGrid8::gray(w, h, data).unwrap()
    }

    // Hand-assembled 24-bit BMP, 2x1, bottom-up.
    fn rgb24_fixture() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"BM");
        b.extend_from_slice(&62u32.to_le_bytes());
        b.extend_from_slice(&[0; 4]);
        b.extend_from_slice(&54u32.to_le_bytes());
        b.extend_from_slice(&40u32.to_le_bytes());
        b.extend_from_slice(&2i32.to_le_bytes());
        b.extend_from_slice(&1i32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&24u16.to_le_bytes());
        b.extend_from_slice(&[0; 24]);
        // pixels stored as BGR: (R=10,G=20,B=30), (R=100,G=200,B=50), then 2 pad bytes
        b.extend_from_slice(&[30, 20, 10, 50, 200, 100, 0, 0]);
        b
    }

    #[test]
    fn bmp_sizes_follow_layout() {
        assert_eq!(write_bmp_gray8(&gray(2, 2, vec![0; 4])).unwrap().len(), 1086);
        let wide = write_bmp_gray8(&gray(4, 1, vec![1, 2, 3, 4])).unwrap();
        assert_eq!(wide.len(), 1082);
        assert_eq!(&wide[1078..], &[1, 2, 3, 4]);

        let one = write_bmp_gray8(&gray(1, 1, vec![0])).unwrap();
        assert_eq!(one.len(), 1082);
        assert_eq!(&one[1078..1082], &[0, 0, 0, 0]);
    }

    #[test]
    fn bmp_rows_are_bottom_up() {
        let b = write_bmp_gray8(&gray(1, 2, vec![7, 9])).unwrap();
        assert_eq!(&b[1078..], &[9, 0, 0, 0, 7, 0, 0, 0]);
    }

    #[test]
    fn bmp_rejects_color_and_garbage() {
        let rgb = PixelGrid8::new(1, 1, 3, vec![1, 2, 3]).unwrap();
        assert!(matches!(write_bmp_gray8(&rgb), Err(ImageError::InvalidArgument(_))));
        assert!(matches!(read_bmp(b"PK\x03\x04"), Err(ImageError::UnsupportedFormat(_))));

        let mut tinted = write_bmp_gray8(&gray(2, 2, vec![0, 1, 2, 3])).unwrap();
        tinted[54 + 4 * 3] = 99; // blue component of palette entry 3
        assert!(matches!(read_bmp(&tinted), Err(ImageError::UnsupportedFormat(_))));

        let mut rle = write_bmp_gray8(&gray(2, 2, vec![0; 4])).unwrap();
        rle[30] = 1;
        assert!(matches!(read_bmp(&rle), Err(ImageError::UnsupportedFormat(_))));

        let full = write_bmp_gray8(&gray(2, 2, vec![0; 4])).unwrap();
        assert!(matches!(read_bmp(&full[..1080]), Err(ImageError::Truncated(_))));
    }

    #[test]
    fn reads_24_bit_bmp() {
        let g = read_bmp(&rgb24_fixture()).unwrap();
        assert_eq!((g.width, g.height, g.channels), (2, 1, 3));
        assert_eq!(g.data, vec![10, 20, 30, 100, 200, 50]);
    }

    #[test]
    fn reads_top_down_bmp() {
        let mut b = write_bmp_gray8(&gray(1, 2, vec![7, 9])).unwrap();
        b[22..26].copy_from_slice(&(-2i32).to_le_bytes());
        // rows in file order are now interpreted top to bottom
        assert_eq!(read_bmp(&b).unwrap().data, vec![9, 7]);
    }

    #[test]
    fn pgm_layout() {
        let one = write_pgm(&gray(1, 1, vec![7])).unwrap();
        assert_eq!(one.len(), 12);
        assert_eq!(one, b"P5\n1 1\n255\n\x07".to_vec());
        let two = write_pgm(&gray(2, 1, vec![3, 4])).unwrap();
        assert_eq!(&two[two.len() - 2..], &[3, 4]);
        assert!(write_pgm(&PixelGrid8::new(1, 1, 3, vec![0; 3]).unwrap()).is_err());
        assert_eq!(
            ImageFileSpec { format: ImageFormat::PgmRaw, width: 1, height: 1 }.expected_size(),
            12
        );
    }

    #[test]
    fn pgm_reader_skips_comments() {
        let g = read_pgm(b"P5\n# made by hand\n2 1\n255\n\x01\x02").unwrap();
        assert_eq!(g.data, vec![1, 2]);
        assert!(read_pgm(b"P5\n2 1\n65535\n\x01\x02").is_err());
        assert!(read_pgm(b"P5\n2 2\n255\n\x01").is_err());
    }

    fn arb_grid() -> impl Strategy<Value = PixelGrid8> {
        (1u32..20, 1u32..20).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), (w * h) as usize)
                .prop_map(move |d| PixelGrid8::gray(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn gray_round_trips(g in arb_grid()) {
            let bmp = write_bmp_gray8(&g).unwrap();
            prop_assert_eq!(
                bmp.len(),
                ImageFileSpec { format: ImageFormat::BmpGray8, width: g.width, height: g.height }.expected_size()
            );
            prop_assert_eq!(read_bmp(&bmp).unwrap(), g.clone());
            prop_assert_eq!(read_image(&write_pgm(&g).unwrap()).unwrap(), g);
        }
    }
}
