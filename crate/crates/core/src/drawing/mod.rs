//! Semantic rasters of architectural and structural drawings.
//!
//! An architectural drawing carries infill walls, windows and gates. The
//! structural drawing of the same plan recolors a subset of its infill walls
//! as shear walls. Stage 1 works on single-channel canvases; stage 2
//! recomposes the colored drawing.

mod png;
mod segments;
pub mod synth;

pub use png::{
    decode_canvas_png, decode_drawing_png, encode_canvas_png, encode_drawing_png, is_canvas_png,
    load_drawing, read_canvas, read_drawing, write_canvas, write_drawing, SnapMode,
};
pub use segments::{parse_segments, rasterize_segments, read_segments, SegmentKind, WallSegment};

use std::fmt;

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Per-pixel semantic class. The discriminant is the class index used by the
/// metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    ShearWall = 1,
    InfillWall = 2,
    Window = 3,
    Gate = 4,
}

impl Class {
    pub const ALL: [Class; 5] = [
        Class::Background,
        Class::ShearWall,
        Class::InfillWall,
        Class::Window,
        Class::Gate,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Self::ALL.get(i).copied()
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Class::Background => [255, 255, 255],
            Class::ShearWall => [255, 0, 0],
            Class::InfillWall => [152, 152, 152],
            Class::Window => [0, 255, 0],
            Class::Gate => [0, 0, 255],
        }
    }

    pub fn from_rgb(rgb: [u8; 3]) -> Option<Class> {
        Self::ALL.into_iter().find(|c| c.rgb() == rgb)
    }

    /// Class whose canonical color is nearest in Euclidean RGB distance;
    /// ties go to the earlier class.
    pub fn nearest(rgb: [u8; 3]) -> Class {
        let dist = |c: Class| -> u32 {
            c.rgb()
                .iter()
                .zip(rgb)
                .map(|(&a, b)| (a as i32 - b as i32).pow(2) as u32)
                .sum()
        };
        Self::ALL
            .into_iter()
            .min_by_key(|&c| dist(c))
            .expect("non-empty")
    }

    pub fn is_wall(self) -> bool {
        matches!(self, Class::ShearWall | Class::InfillWall)
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Background => "background",
            Class::ShearWall => "shear",
            Class::InfillWall => "infill",
            Class::Window => "window",
            Class::Gate => "gate",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Seismic design group carried in dataset filenames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupTag {
    Group7H1,
    Group7H2,
    Group8,
}

impl GroupTag {
    pub const ALL: [GroupTag; 3] = [GroupTag::Group7H1, GroupTag::Group7H2, GroupTag::Group8];

    pub fn tag(self) -> &'static str {
        match self {
            GroupTag::Group7H1 => "7degree-H1",
            GroupTag::Group7H2 => "7degree-H2",
            GroupTag::Group8 => "8degree",
        }
    }

    /// Scalar physical condition `d`.
    pub fn condition(self) -> f64 {
        match self {
            GroupTag::Group7H1 => 1.0,
            GroupTag::Group7H2 => 1.5,
            GroupTag::Group8 => 2.5,
        }
    }

    /// Reads the group from a file name. `"8degree"` stands alone;
    /// `"7degree"` needs a height tag `H1` or `H2`.
    pub fn from_name(name: &str) -> Result<Option<GroupTag>> {
        if name.contains("8degree") {
            return Ok(Some(GroupTag::Group8));
        }
        if name.contains("7degree") {
            let after = &name[name.find("7degree").unwrap()..];
            return match (after.contains("H1"), after.contains("H2")) {
                (true, false) => Ok(Some(GroupTag::Group7H1)),
                (false, true) => Ok(Some(GroupTag::Group7H2)),
                _ => Err(Error::Data(format!(
                    "{name}: 7degree drawings need exactly one height tag H1 or H2"
                ))),
            };
        }
        Ok(None)
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Condition `d` encoded in a file name, if any.
pub fn condition_from_name(name: &str) -> Result<Option<f64>> {
    Ok(GroupTag::from_name(name)?.map(GroupTag::condition))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDrawing {
    width: usize,
    height: usize,
    classes: Vec<Class>,
    pub condition: Option<f64>,
    pub origin_id: String,
}

impl SemanticDrawing {
    pub fn new(width: usize, height: usize, classes: Vec<Class>) -> Result<Self> {
        if width == 0 || height == 0 {
            return dim_err(format!("drawing extent {width}x{height} is empty"));
        }
        if classes.len() != width * height {
            return dim_err(format!(
                "{width}x{height} drawing needs {} labels, got {}",
                width * height,
                classes.len()
            ));
        }
        Ok(Self {
            width,
            height,
            classes,
            condition: None,
            origin_id: String::new(),
        })
    }

    pub fn filled(width: usize, height: usize, class: Class) -> Self {
        Self::new(width, height, vec![class; width * height]).expect("positive extent")
    }

    /// Builds a drawing from rows of class characters: `.` background,
    /// `S` shear, `I` infill, `W` window, `G` gate.
    pub fn from_ascii(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut classes = Vec::with_capacity(width * height);
        for (y, r) in rows.iter().enumerate() {
            if r.len() != width {
                return dim_err(format!("row {y} has {} columns, expected {width}", r.len()));
            }
            for ch in r.chars() {
                classes.push(match ch {
                    '.' => Class::Background,
                    'S' => Class::ShearWall,
                    'I' => Class::InfillWall,
                    'W' => Class::Window,
                    'G' => Class::Gate,
                    other => return Err(Error::Data(format!("unknown class symbol {other:?}"))),
                });
            }
        }
        Self::new(width, height, classes)
    }

    pub fn with_condition(mut self, d: Option<f64>) -> Self {
        self.condition = d;
        self
    }

    pub fn with_origin(mut self, id: impl Into<String>) -> Self {
        self.origin_id = id.into();
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> &[Class] {
        &self.classes
    }

    pub fn get(&self, x: usize, y: usize) -> Class {
        self.classes[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Class) {
        self.classes[y * self.width + x] = c;
    }

    pub fn class_counts(&self) -> [usize; Class::COUNT] {
        let mut n = [0; Class::COUNT];
        for c in &self.classes {
            n[c.index()] += 1;
        }
        n
    }

    pub fn count(&self, class: Class) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn same_extent(&self, other: &SemanticDrawing) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return dim_err(format!(
                "drawing extents differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            ));
        }
        Ok(())
    }

    fn remap(&self, f: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let (sx, sy) = f(x, y);
                out.classes[y * self.width + x] = self.get(sx, sy);
            }
        }
        out
    }

    /// Mirror top to bottom.
    pub fn flip_vertical(&self) -> Self {
        let h = self.height;
        self.remap(|x, y| (x, h - 1 - y))
    }

    /// Mirror left to right.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        self.remap(|x, y| (w - 1 - x, y))
    }

    pub fn rotate180(&self) -> Self {
        let (w, h) = (self.width, self.height);
        self.remap(|x, y| (w - 1 - x, h - 1 - y))
    }

    /// Resamples to `width × height`. Each target pixel takes the most
    /// frequent class over its source footprint; ties prefer walls, then
    /// openings, over background. Upsampling replicates.
    pub fn resample(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return dim_err(format!("target extent {width}x{height} is empty"));
        }
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        const TIE_ORDER: [Class; 5] = [
            Class::ShearWall,
            Class::InfillWall,
            Class::Window,
            Class::Gate,
            Class::Background,
        ];
        let span = |i: usize, n_out: usize, n_in: usize| -> (usize, usize) {
            let lo = i * n_in / n_out;
            let hi = ((i + 1) * n_in).div_ceil(n_out).max(lo + 1);
            (lo, hi.min(n_in))
        };
        let mut classes = Vec::with_capacity(width * height);
        for ty in 0..height {
            let (y0, y1) = span(ty, height, self.height);
            for tx in 0..width {
                let (x0, x1) = span(tx, width, self.width);
                let mut n = [0usize; Class::COUNT];
                for y in y0..y1 {
                    for x in x0..x1 {
                        n[self.get(x, y).index()] += 1;
                    }
                }
                let best = TIE_ORDER
                    .into_iter()
                    .rev()
                    .max_by_key(|c| n[c.index()])
                    .expect("non-empty");
                classes.push(best);
            }
        }
        let mut out = Self::new(width, height, classes)?;
        out.condition = self.condition;
        out.origin_id = self.origin_id.clone();
        Ok(out)
    }
}

/// Single-channel stage-1 raster with values in `{−1, 0, +1}` for
/// background, infill wall and shear wall.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

pub const CANVAS_BACKGROUND: f64 = -1.0;
pub const CANVAS_INFILL: f64 = 0.0;
pub const CANVAS_SHEAR: f64 = 1.0;

impl Canvas {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return dim_err(format!(
                "{width}x{height} canvas with {} values",
                values.len()
            ));
        }
        if let Some(v) = values
            .iter()
            .find(|v| ![CANVAS_BACKGROUND, CANVAS_INFILL, CANVAS_SHEAR].contains(v))
        {
            return Err(Error::Data(format!(
                "canvas value {v} is not one of -1, 0, 1"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn count(&self, v: f64) -> usize {
        self.values.iter().filter(|&&u| u == v).count()
    }

    /// `[1, H, W]` tensor for the network.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.height, self.width], self.values.clone()).expect("consistent shape")
    }

    /// Reads a `[1, H, W]` or `[H, W]` tensor whose values are already in
    /// `{−1, 0, +1}`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = tensor_hw(t)?;
        Self::new(w, h, t.data().to_vec())
    }

    fn same_extent(&self, w: usize, h: usize) -> Result<()> {
        if (self.width, self.height) != (w, h) {
            return dim_err(format!(
                "canvas is {}x{}, drawing is {w}x{h}",
                self.width, self.height
            ));
        }
        Ok(())
    }
}

fn tensor_hw(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [1, h, w] | [h, w] => Ok((*h, *w)),
        s => dim_err(format!("expected a [1, H, W] raster, got {s:?}")),
    }
}

/// Keeps infill walls (0) and blanks everything else (−1).
pub fn extract_canvas(arch: &SemanticDrawing) -> Result<Canvas> {
    if let Some(i) = arch.classes.iter().position(|&c| c == Class::ShearWall) {
        return Err(Error::Usage(format!(
            "{}: shear wall at pixel ({}, {}); the input is already a structural drawing",
            display_id(arch),
            i % arch.width,
            i / arch.width
        )));
    }
    Ok(Canvas {
        width: arch.width,
        height: arch.height,
        values: arch
            .classes
            .iter()
            .map(|&c| {
                if c == Class::InfillWall {
                    CANVAS_INFILL
                } else {
                    CANVAS_BACKGROUND
                }
            })
            .collect(),
    })
}

fn display_id(d: &SemanticDrawing) -> &str {
    if d.origin_id.is_empty() {
        "drawing"
    } else {
        &d.origin_id
    }
}

/// Snaps each value to the nearest of `{−1, 0, +1}`, then demotes any `+1`
/// that sits on canvas background back to `−1`.
pub fn quantize_line_drawing(raw: &Tensor, canvas: &Canvas) -> Result<Canvas> {
    let (h, w) = tensor_hw(raw)?;
    canvas.same_extent(w, h)?;
    raw.check_finite("raw line drawing")?;
    let values = raw
        .data()
        .iter()
        .zip(&canvas.values)
        .map(|(&v, &c)| {
            let q = if v < -0.5 {
                CANVAS_BACKGROUND
            } else if v <= 0.5 {
                CANVAS_INFILL
            } else {
                CANVAS_SHEAR
            };
            if q == CANVAS_SHEAR && c == CANVAS_BACKGROUND {
                CANVAS_BACKGROUND
            } else {
                q
            }
        })
        .collect();
    Ok(Canvas {
        width: w,
        height: h,
        values,
    })
}

/// Colors a line drawing and repaints the openings of `arch`.
pub fn compose_structural(line: &Canvas, arch: &SemanticDrawing) -> Result<SemanticDrawing> {
    line.same_extent(arch.width, arch.height)?;
    let classes = line
        .values
        .iter()
        .zip(&arch.classes)
        .map(|(&v, &a)| match a {
            Class::Window | Class::Gate => a,
            _ if v == CANVAS_SHEAR => Class::ShearWall,
            _ if v == CANVAS_INFILL => Class::InfillWall,
            _ => Class::Background,
        })
        .collect();
    let mut out = SemanticDrawing::new(arch.width, arch.height, classes)?;
    out.condition = arch.condition;
    out.origin_id = arch.origin_id.clone();
    Ok(out)
}

/// The architectural drawing a structural drawing was designed from: shear
/// walls turn back into infill walls.
pub fn architectural_view(structural: &SemanticDrawing) -> SemanticDrawing {
    let mut out = structural.clone();
    for c in &mut out.classes {
        if *c == Class::ShearWall {
            *c = Class::InfillWall;
        }
    }
    out
}

/// Stage-1 target of a structural drawing: shear `+1`, infill `0`, else `−1`.
pub fn line_drawing(structural: &SemanticDrawing) -> Canvas {
    Canvas {
        width: structural.width,
        height: structural.height,
        values: structural
            .classes
            .iter()
            .map(|c| match c {
                Class::ShearWall => CANVAS_SHEAR,
                Class::InfillWall => CANVAS_INFILL,
                _ => CANVAS_BACKGROUND,
            })
            .collect(),
    }
}

/// `(x_0, y)` pair of a structural drawing: its line drawing and the canvas
/// of its architectural view.
pub fn training_pair(structural: &SemanticDrawing) -> (Canvas, Canvas) {
    let y = extract_canvas(&architectural_view(structural)).expect("no shear walls left");
    (line_drawing(structural), y)
}

/// Original, vertical flip, horizontal flip, 180° rotation.
pub fn augment(drawing: &SemanticDrawing) -> [SemanticDrawing; 4] {
    [
        drawing.clone(),
        drawing.flip_vertical(),
        drawing.flip_horizontal(),
        drawing.rotate180(),
    ]
}

pub const AUGMENT_SUFFIXES: [&str; 4] = ["orig", "vflip", "hflip", "rot180"];
