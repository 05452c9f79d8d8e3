//! Multi-channel images: planar (CHW) storage with values in `[0, 1]`,
//! area resampling, and binary PPM files (one per 3-channel camera).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image {channels}x{height}x{width} cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image pixels".into()));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// From 8-bit planar samples, scaled by 1/255.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, channels, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Channels `[3i, 3i+3)` as a separate image.
    pub fn camera(&self, i: usize) -> Result<Image> {
        if 3 * (i + 1) > self.channels {
            return Err(Error::invalid(format!("image has no camera {i}")));
        }
        let plane = self.height * self.width;
        Image::new(self.height, self.width, 3, self.data[3 * i * plane..3 * (i + 1) * plane].to_vec())
    }

    /// Concatenates images of equal size along the channel axis.
    pub fn stack(parts: &[Image]) -> Result<Image> {
        let first = parts.first().ok_or_else(|| Error::invalid("no images to stack"))?;
        if parts.iter().any(|p| p.height != first.height || p.width != first.width) {
            return Err(Error::invalid("stacked images must share a resolution"));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Image::new(first.height, first.width, channels, data)
    }

    /// Box-filter resample to `height x width`: every output pixel is the
    /// area-weighted mean of the input pixels it covers. Handles both
    /// down- and up-sampling.
    pub fn resize_area(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("target resolution must be positive"));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let wy = area_weights(self.height, height);
        let wx = area_weights(self.width, width);
        let mut out = Vec::with_capacity(height * width * self.channels);
        let mut rows = vec![0.0f64; self.width];
        for c in 0..self.channels {
            for taps_y in &wy {
                rows.iter_mut().for_each(|v| *v = 0.0);
                for &(y, w) in taps_y {
                    for (x, r) in rows.iter_mut().enumerate() {
                        *r += w * self.get(c, y, x) as f64;
                    }
                }
                for taps_x in &wx {
                    out.push(taps_x.iter().map(|&(x, w)| w * rows[x]).sum::<f64>() as f32);
                }
            }
        }
        Image::new(height, width, self.channels, out)
    }

    /// Writes each 3-channel camera to its own binary PPM (P6).
    pub fn write_ppm_cameras(&self, paths: &[impl AsRef<Path>]) -> Result<()> {
        if self.channels != 3 * paths.len() {
            return Err(Error::invalid(format!(
                "{} channels need {} PPM files, got {}",
                self.channels,
                self.channels / 3,
                paths.len()
            )));
        }
        for (i, p) in paths.iter().enumerate() {
            self.camera(i)?.write_ppm(p.as_ref())?;
        }
        Ok(())
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::invalid("PPM output needs exactly 3 channels"));
        }
        let bytes = self.to_u8();
        let plane = self.height * self.width;
        let mut buf = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for i in 0..plane {
            buf.extend_from_slice(&[bytes[i], bytes[plane + i], bytes[2 * plane + i]]);
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let perr = |m: &str| Error::parse(path, m.to_string());
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(perr("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P6" {
            return Err(perr("only binary PPM (P6) is supported"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| perr("bad header number"));
        let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(perr("only 8-bit PPM is supported"));
        }
        let plane = w * h;
        if bytes.len() < pos + 3 * plane {
            return Err(perr("truncated pixel data"));
        }
        let px = &bytes[pos..pos + 3 * plane];
        let mut planar = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                planar[c * plane + i] = px[3 * i + c];
            }
        }
        Image::from_u8(h, w, 3, &planar)
    }
}

/// For each output cell, the input cells it overlaps with normalized
/// overlap weights.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let taps: Vec<(usize, f64)> = (first..last)
                .map(|i| (i, (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0)))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.into_iter().map(|(i, w)| (i, w / total)).collect()
        })
        .collect()
}
