//! Belief stacks and their ideal (target) construction.
//!
//! Coordinates are continuous image pixels `(u, v)`: `u` grows to the right,
//! `v` grows downwards, and pixel `(col, row)` covers `[col, col+1) × [row, row+1)`.
//! Heatmap cell `(x, y)` at stride `s` is represented by its centre
//! `(x·s + s/2, y·s + s/2)`, for both target construction and extraction.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CpmError, Result};
use crate::tensor::{Real, Tensor};

/// Per-part locations; `None` marks an absent part.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Keypoints {
    pub points: Vec<Option<[f32; 2]>>,
}

impl Keypoints {
    pub fn new(points: Vec<Option<[f32; 2]>>) -> Self {
        Self { points }
    }

    pub fn absent(parts: usize) -> Self {
        Self { points: vec![None; parts] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, p: usize) -> Option<[f32; 2]> {
        self.points.get(p).copied().flatten()
    }

    /// Largest side of the bounding box of the present parts.
    pub fn bbox_max_side(&self) -> Option<f32> {
        let present: Vec<[f32; 2]> = self.points.iter().flatten().copied().collect();
        if present.is_empty() {
            return None;
        }
        let (mut lo, mut hi) = ([f32::INFINITY; 2], [f32::NEG_INFINITY; 2]);
        for p in &present {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((hi[0] - lo[0]).max(hi[1] - lo[1]))
    }
}

/// `channels × height × width` score maps for one sample; the last channel
/// is background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefStack {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl BeliefStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; channels * height * width] }
    }

    pub fn parts(&self) -> usize {
        self.channels.saturating_sub(1)
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn background(&self) -> &[f32] {
        self.channel(self.channels - 1)
    }

    /// Sample `n` of a `[N, C, h, w]` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let (bn, c, h, w) = t.dims4()?;
        if n >= bn {
            return Err(CpmError::shape("BeliefStack::from_tensor", format!("sample {n} of {bn}")));
        }
        let len = c * h * w;
        let data = t.data()[n * len..(n + 1) * len].iter().map(|v| v.as_f64() as f32).collect();
        Ok(Self { width: w, height: h, channels: c, data })
    }

    /// `[1, C, h, w]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            vec![1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
        )
        .expect("stack dims match data")
    }

    /// Batches equally sized stacks into `[N, C, h, w]`.
    pub fn batch<T: Real>(stacks: &[&BeliefStack]) -> Result<Tensor<T>> {
        let first = stacks.first().ok_or_else(|| CpmError::shape("BeliefStack::batch", "empty"))?;
        if stacks.iter().any(|s| (s.channels, s.height, s.width) != (first.channels, first.height, first.width)) {
            return Err(CpmError::shape("BeliefStack::batch", "stacks differ in size"));
        }
        let data = stacks.iter().flat_map(|s| s.data.iter().map(|&v| T::from_f64_lossy(v as f64))).collect();
        Tensor::new(vec![stacks.len(), first.channels, first.height, first.width], data)
    }

    /// Writes one 8-bit grayscale PNG per channel, values clamped to `[0, 1]`.
    pub fn write_pngs(&self, dir: &Path, prefix: &str) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| CpmError::io(dir, e))?;
        (0..self.channels)
            .map(|c| {
                let path = dir.join(format!("{prefix}_c{c}.png"));
                write_gray_png(&path, self.width, self.height, self.channel(c))?;
                Ok(path)
            })
            .collect()
    }

    /// Raw dump: one JSON header line, then little-endian `f32` data in
    /// channel-major order.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Header {
            format: &'static str,
            dtype: &'static str,
            channels: usize,
            height: usize,
            width: usize,
        }
        let header = Header { format: "belief-stack", dtype: "f32", channels: self.channels, height: self.height, width: self.width };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, out).map_err(|e| CpmError::io(path, e))
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            channels: usize,
            height: usize,
            width: usize,
        }
        let bytes = std::fs::read(path).map_err(|e| CpmError::io(path, e))?;
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| CpmError::Config("raw stack lacks header".into()))?;
        let h: Header = serde_json::from_slice(&bytes[..nl])?;
        let body = &bytes[nl + 1..];
        if body.len() != h.channels * h.height * h.width * 4 {
            return Err(CpmError::Config(format!("{}: wrong payload size", path.display())));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { width: h.width, height: h.height, channels: h.channels, data })
    }
}

pub(crate) fn write_gray_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let file = File::create(path).map_err(|e| CpmError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut writer = enc.write_header()?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefMode {
    /// Peaks for every person in the list.
    AllPeople,
    /// Peaks for the first person only.
    PrimaryOnly,
}

/// Centre of heatmap cell `i` in image pixels.
#[inline]
pub fn cell_center(i: usize, stride: usize) -> f32 {
    (i * stride) as f32 + stride as f32 / 2.0
}

fn gaussian(x: usize, y: usize, at: [f32; 2], sigma: f32, stride: usize) -> f32 {
    let du = cell_center(x, stride) - at[0];
    let dv = cell_center(y, stride) - at[1];
    (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp()
}

/// Unit-peak Gaussian targets on a `grid = (h, w)` heatmap. People are
/// combined by elementwise max; the background channel is
/// `max(0, 1 − max_p part_p)`.
pub fn ideal_beliefs(people: &[Keypoints], grid: (usize, usize), sigma: f32, stride: usize, mode: BeliefMode) -> BeliefStack {
    let parts = people.first().map_or(0, Keypoints::len);
    let (h, w) = grid;
    let mut stack = BeliefStack::zeros(parts + 1, h, w);
    let selected = match mode {
        BeliefMode::AllPeople => people,
        BeliefMode::PrimaryOnly => &people[..people.len().min(1)],
    };
    for person in selected {
        for p in 0..parts {
            let Some(at) = person.get(p) else { continue };
            for y in 0..h {
                for x in 0..w {
                    let v = gaussian(x, y, at, sigma, stride);
                    let cell = stack.at_mut(p, y, x);
                    *cell = cell.max(v);
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let peak = (0..parts).map(|p| stack.at(p, y, x)).fold(0.0f32, f32::max);
            *stack.at_mut(parts, y, x) = (1.0 - peak).max(0.0);
        }
    }
    stack
}

/// Single-channel `[1, h, w]` Gaussian marking the subject centre.
pub fn center_map(center: [f32; 2], sigma: f32, stride: usize, grid: (usize, usize)) -> Tensor<f32> {
    let (h, w) = grid;
    Tensor::from_fn(vec![1, h, w], |i| gaussian(i % w, i / w, center, sigma, stride))
}

fn bilinear(plane: &[f32], h: usize, w: usize, x: f32, y: f32) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let fetch = |xi: f32, yi: f32| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f32 || yi >= h as f32 {
            0.0
        } else {
            plane[yi as usize * w + xi as usize]
        }
    };
    let top = fetch(x0, y0) * (1.0 - fx) + fetch(x0 + 1.0, y0) * fx;
    let bottom = fetch(x0, y0 + 1.0) * (1.0 - fx) + fetch(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Averages stacks predicted from copies of one image rescaled by
/// `scales[i]` about its centre. Each stack is bilinearly resampled back to
/// the unscaled frame on the largest grid among the inputs.
pub fn merge_scales(stacks: &[BeliefStack], scales: &[f32]) -> Result<BeliefStack> {
    if stacks.is_empty() {
        return Err(CpmError::Config("merge_scales needs at least one stack".into()));
    }
    if stacks.len() != scales.len() || scales.iter().any(|&s| !(s > 0.0)) {
        return Err(CpmError::Config("merge_scales needs one positive scale per stack".into()));
    }
    let channels = stacks[0].channels;
    if stacks.iter().any(|s| s.channels != channels) {
        return Err(CpmError::Config("merge_scales: channel counts differ".into()));
    }
    let h = stacks.iter().map(|s| s.height).max().unwrap_or(0);
    let w = stacks.iter().map(|s| s.width).max().unwrap_or(0);
    let mut out = BeliefStack::zeros(channels, h, w);
    for (s, &scale) in stacks.iter().zip(scales) {
        let (rx, ry) = (s.width as f32 / w as f32, s.height as f32 / h as f32);
        let (cx, cy) = (s.width as f32 / 2.0, s.height as f32 / 2.0);
        for c in 0..channels {
            let plane = s.channel(c);
            for y in 0..h {
                for x in 0..w {
                    // Reference cell centre in the source grid, then into the scaled frame.
                    let sx = cx + ((x as f32 + 0.5) * rx - cx) * scale - 0.5;
                    let sy = cy + ((y as f32 + 0.5) * ry - cy) * scale - 0.5;
                    *out.at_mut(c, y, x) += bilinear(plane, s.height, s.width, sx, sy);
                }
            }
        }
    }
    let k = stacks.len() as f32;
    for v in &mut out.data {
        *v /= k;
    }
    Ok(out)
}

/// Arg-max cell of every part channel, mapped to its centre in image
/// pixels. Ties go to the smallest row-major index.
pub fn extract_keypoints(stack: &BeliefStack, stride: usize) -> Keypoints {
    let points = (0..stack.parts())
        .map(|p| {
            let ch = stack.channel(p);
            let mut best = 0;
            for (i, &v) in ch.iter().enumerate() {
                if v > ch[best] {
                    best = i;
                }
            }
            Some([cell_center(best % stack.width, stride), cell_center(best / stack.width, stride)])
        })
        .collect();
    Keypoints { points }
}
