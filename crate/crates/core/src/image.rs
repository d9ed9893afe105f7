//! Raw RGB images, normalized frames and binary PPM (P6) I/O.

use std::io::{self, BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHANNELS: usize = 3;

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * CHANNELS],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * CHANNELS {
            return Err(Error::shape(
                "rgb image bytes",
                width * height * CHANNELS,
                data.len(),
            ));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    /// Fills the clipped rectangle `[x0, x1) × [y0, y1)`.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
        let (x0, x1) = (x0.max(0) as usize, x1.clamp(0, self.width as i64) as usize);
        let (y0, y1) = (y0.max(0) as usize, y1.clamp(0, self.height as i64) as usize);
        for y in y0..y1 {
            for x in x0..x1 {
                self.put_pixel(x, y, rgb);
            }
        }
    }

    /// Nearest-neighbor resize. Returns a clone when the size already matches.
    pub fn resize_nearest(&self, width: usize, height: usize) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = RgbImage::new(width, height);
        for y in 0..height {
            let sy = (y * self.height / height).min(self.height - 1);
            for x in 0..width {
                let sx = (x * self.width / width).min(self.width - 1);
                out.put_pixel(x, y, self.pixel(sx, sy));
            }
        }
        out
    }

    /// Integer upscale, each pixel becoming a `factor × factor` block.
    pub fn upscale(&self, factor: usize) -> RgbImage {
        self.resize_nearest(self.width * factor, self.height * factor)
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.data.len() + 20);
        self.write_ppm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_ppm<R: BufRead>(mut r: R) -> Result<RgbImage> {
        let mut header = Vec::new();
        // magic, width, height, maxval: four whitespace separated tokens
        while header.len() < 4 {
            let token = read_token(&mut r)?;
            header.push(token);
        }
        if header[0] != "P6" {
            return Err(Error::Config(format!("not a binary PPM: magic {}", header[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad PPM header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval != 255 {
            return Err(Error::Config(format!("unsupported PPM maxval {maxval}")));
        }
        let mut data = vec![0; width * height * CHANNELS];
        r.read_exact(&mut data)?;
        RgbImage::from_raw(width, height, data)
    }

    /// Divides every byte by 255.
    pub fn to_frame<T: Scalar>(&self) -> Frame<T> {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| T::of(b as f64 / 255.0)).collect(),
        }
    }
}

fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        let c = byte[0];
        if c == b'#' && token.is_empty() {
            let mut comment = Vec::new();
            r.read_until(b'\n', &mut comment)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(token);
        }
        token.push(c as char);
    }
}

/// H×W×3 image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * CHANNELS {
            return Err(Error::shape("frame values", width * height * CHANNELS, data.len()));
        }
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Frame {
            width,
            height,
            data: vec![value; width * height * CHANNELS],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, channel: usize) -> T {
        self.data[(y * self.width + x) * CHANNELS + channel]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = RgbImage::new(3, 2);
        img.put_pixel(2, 1, [10, 20, 30]);
        img.put_pixel(0, 0, [255, 0, 7]);
        let bytes = img.to_ppm_bytes();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        let back = RgbImage::read_ppm(io::Cursor::new(bytes)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_header_comments_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        let img = RgbImage::read_ppm(io::Cursor::new(bytes)).unwrap();
        assert_eq!(img.pixel(0, 0), [1, 2, 3]);
    }

    #[test]
    fn nearest_resize_halves() {
        let mut img = RgbImage::new(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                img.put_pixel(x, y, [(x * 10) as u8, (y * 10) as u8, 0]);
            }
        }
        let small = img.resize_nearest(2, 2);
        assert_eq!(small.pixel(1, 1), [20, 20, 0]);
        assert_eq!(small.pixel(0, 1), [0, 20, 0]);
    }

    #[test]
    fn normalized_frame_is_unit_range() {
        let img = RgbImage::from_raw(1, 1, vec![0, 128, 255]).unwrap();
        let f: Frame<f64> = img.to_frame();
        assert_eq!(f.at(0, 0, 0), 0.0);
        assert_eq!(f.at(0, 0, 2), 1.0);
        assert!((f.at(0, 0, 1) - 128.0 / 255.0).abs() < 1e-15);
    }
}
