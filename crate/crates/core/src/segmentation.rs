//! Bright-blob segmentation of 8-bit intensity images.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{BoxSource, DetectionBox};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize) -> Self {
        IntensityImage { width, height, data: vec![0; width * height] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::SizeMismatch { expected: width * height, actual: data.len() });
        }
        Ok(IntensityImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Fills the pixel rectangle `[x0, x1) × [y0, y1)`, clipped to the image.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, v: u8) {
        let clip = |a: i64, hi: usize| a.clamp(0, hi as i64) as usize;
        let (x0, x1) = (clip(x0, self.width), clip(x1, self.width));
        let (y0, y1) = (clip(y0, self.height), clip(y1, self.height));
        for y in y0..y1 {
            self.data[y * self.width + x0..y * self.width + x1].fill(v);
        }
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    /// Binary (P5) PGM with maxval 255.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<Self, ImageError> {
        let mut reader = BufReader::new(r);
        let mut header = Vec::new();
        // magic, width, height, maxval; comments start with '#'
        while header.len() < 4 {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(ImageError::Pgm("unexpected end of header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            header.extend(content.split_whitespace().map(str::to_owned));
        }
        if header[0] != "P5" {
            return Err(ImageError::Pgm(format!("unsupported magic {}", header[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| ImageError::Pgm(format!("bad header field '{s}'")));
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval != 255 {
            return Err(ImageError::Pgm(format!("unsupported maxval {maxval}")));
        }
        let mut data = vec![0u8; width * height];
        reader.read_exact(&mut data).map_err(|_| ImageError::Pgm("truncated pixel data".into()))?;
        Self::from_raw(width, height, data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Pixels strictly brighter than this are foreground.
    pub threshold: u8,
    /// Components with fewer pixels are dropped.
    pub min_area: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams { threshold: 220, min_area: 4 }
    }
}

/// Pixel-index bounding box of a connected component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Component {
    pub min: (usize, usize),
    pub max: (usize, usize),
    pub area: usize,
}

impl Component {
    pub fn to_box(&self) -> DetectionBox {
        let center = Vector2::new(
            0.5 * (self.min.0 + self.max.0) as f64,
            0.5 * (self.min.1 + self.max.1) as f64,
        );
        let extents = Vector2::new((self.max.0 - self.min.0 + 1) as f64, (self.max.1 - self.min.1 + 1) as f64);
        DetectionBox::new(center, extents, BoxSource::Segmentation)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Horizontal run of foreground pixels `[x0, x1)` on row `y`.
#[derive(Clone, Copy, Debug)]
struct Run {
    y: usize,
    x0: usize,
    x1: usize,
    label: usize,
}

/// Run-length labeling: runs on adjacent rows are 8-connected when their
/// column ranges overlap after widening by one pixel.
fn labeled_runs(img: &IntensityImage, threshold: u8) -> (Vec<Run>, Vec<Component>) {
    let w = img.width;
    let mut runs: Vec<Run> = Vec::new();
    let mut parent: Vec<usize> = Vec::new();
    let mut prev = 0..0;
    for (y, row) in img.data.chunks_exact(w.max(1)).enumerate().take(img.height) {
        let row_start = runs.len();
        let mut x = 0;
        while x < w {
            let Some(off) = row[x..].iter().position(|&v| v > threshold) else {
                break;
            };
            let x0 = x + off;
            let x1 = row[x0..].iter().position(|&v| v <= threshold).map_or(w, |e| x0 + e);
            runs.push(Run { y, x0, x1, label: usize::MAX });
            x = x1;
        }
        let mut j = prev.start;
        for i in row_start..runs.len() {
            let (x0, x1) = (runs[i].x0, runs[i].x1);
            // skip previous-row runs that end too far left to touch this one
            while j < prev.end && runs[j].x1 < x0 {
                j += 1;
            }
            let mut label = usize::MAX;
            let mut k = j;
            while k < prev.end && runs[k].x0 <= x1 {
                let root = find(&mut parent, runs[k].label);
                if label == usize::MAX {
                    label = root;
                } else if root != label {
                    let (lo, hi) = (label.min(root), label.max(root));
                    parent[hi] = lo;
                    label = lo;
                }
                k += 1;
            }
            if label == usize::MAX {
                label = parent.len();
                parent.push(label);
            }
            runs[i].label = label;
        }
        prev = row_start..runs.len();
    }

    let mut dense = vec![usize::MAX; parent.len()];
    let mut comps: Vec<Component> = Vec::new();
    for r in &mut runs {
        let root = find(&mut parent, r.label);
        if dense[root] == usize::MAX {
            dense[root] = comps.len();
            comps.push(Component { min: (r.x0, r.y), max: (r.x1 - 1, r.y), area: 0 });
        }
        let id = dense[root];
        let c = &mut comps[id];
        c.min = (c.min.0.min(r.x0), c.min.1.min(r.y));
        c.max = (c.max.0.max(r.x1 - 1), c.max.1.max(r.y));
        c.area += r.x1 - r.x0;
        r.label = id;
    }
    (runs, comps)
}

/// 8-connected components of the thresholded mask, in raster order of their
/// first pixel. Returns per-pixel labels (`usize::MAX` for background) too.
pub fn label_components(img: &IntensityImage, threshold: u8) -> (Vec<usize>, Vec<Component>) {
    let (runs, comps) = labeled_runs(img, threshold);
    let mut labels = vec![usize::MAX; img.width * img.height];
    for r in &runs {
        labels[r.y * img.width + r.x0..r.y * img.width + r.x1].fill(r.label);
    }
    (labels, comps)
}

/// Bounding boxes of bright connected blobs.
pub fn segment_boxes(img: &IntensityImage, params: &SegmentationParams) -> Vec<DetectionBox> {
    let (_, comps) = labeled_runs(img, params.threshold);
    comps.iter().filter(|c| c.area >= params.min_area).map(Component::to_box).collect()
}
