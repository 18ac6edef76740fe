//! Tabular wall segments, one axis-aligned thick segment per CSV row.
//!
//! Coordinates are pixel indices with inclusive endpoints. A segment of
//! thickness `k` covers `k` rows (horizontal) or columns (vertical) centred
//! on its axis, rounding the extra line towards the origin for even `k`.

use std::path::Path;

use serde::Deserialize;

use super::{Class, SemanticDrawing};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Infill,
    Window,
    Gate,
}

impl SegmentKind {
    pub fn class(self) -> Class {
        match self {
            SegmentKind::Infill => Class::InfillWall,
            SegmentKind::Window => Class::Window,
            SegmentKind::Gate => Class::Gate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct WallSegment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub thickness: f64,
    pub kind: SegmentKind,
}

pub fn parse_segments(csv_text: &str) -> Result<Vec<WallSegment>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != ["x0", "y0", "x1", "y1", "thickness", "kind"] {
        return Err(Error::Data(format!(
            "segment table header must be x0,y0,x1,y1,thickness,kind, got {}",
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize().enumerate() {
        let s: WallSegment = r.map_err(|e| Error::Data(format!("segment row {}: {e}", i + 1)))?;
        if !(s.thickness > 0.0) {
            return Err(Error::Data(format!(
                "segment row {}: thickness must be positive, got {}",
                i + 1,
                s.thickness
            )));
        }
        rows.push(s);
    }
    Ok(rows)
}

pub fn read_segments(path: &Path) -> Result<Vec<WallSegment>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    parse_segments(&std::fs::read_to_string(path)?)
}

fn pixel(v: f64, extent: usize, axis: &str, row: usize) -> Result<usize> {
    if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && (v as usize) < extent) {
        return Err(Error::Data(format!(
            "segment row {row}: {axis} = {v} is outside 0..{extent} or not a pixel index"
        )));
    }
    Ok(v as usize)
}

/// Paints the segments on a white raster, infill first, then windows, then
/// gates, so openings win where they overlap walls.
pub fn rasterize_segments(
    table: &[WallSegment],
    width: usize,
    height: usize,
) -> Result<SemanticDrawing> {
    let mut d = SemanticDrawing::new(width, height, vec![Class::Background; width * height])?;
    let mut boxes = Vec::with_capacity(table.len());
    for (i, s) in table.iter().enumerate() {
        let row = i + 1;
        let (x0, x1) = (
            pixel(s.x0, width, "x0", row)?,
            pixel(s.x1, width, "x1", row)?,
        );
        let (y0, y1) = (
            pixel(s.y0, height, "y0", row)?,
            pixel(s.y1, height, "y1", row)?,
        );
        let k = s.thickness.round().max(1.0) as usize;
        let band = |c: usize, n: usize| -> (usize, usize) {
            let lo = c.saturating_sub((k - 1) / 2);
            (lo, (lo + k - 1).min(n - 1))
        };
        let (xs, ys) = if y0 == y1 {
            ((x0.min(x1), x0.max(x1)), band(y0, height))
        } else if x0 == x1 {
            (band(x0, width), (y0.min(y1), y0.max(y1)))
        } else {
            return Err(Error::Data(format!(
                "segment row {row}: ({x0}, {y0})-({x1}, {y1}) is not axis-aligned"
            )));
        };
        boxes.push((s.kind, xs, ys));
    }
    for kind in [SegmentKind::Infill, SegmentKind::Window, SegmentKind::Gate] {
        for (_, xs, ys) in boxes.iter().filter(|b| b.0 == kind) {
            for y in ys.0..=ys.1 {
                for x in xs.0..=xs.1 {
                    d.set(x, y, kind.class());
                }
            }
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "x0,y0,x1,y1,thickness,kind\n";

    #[test]
    fn empty_table() {
        let t = parse_segments(HEADER).unwrap();
        let d = rasterize_segments(&t, 5, 4).unwrap();
        assert_eq!(d.count(Class::Background), 20);
    }

    #[test]
    fn three_pixel_line() {
        let t = parse_segments(&format!("{HEADER}0,1,2,1,1,infill\n")).unwrap();
        let d = rasterize_segments(&t, 5, 4).unwrap();
        assert_eq!(d.count(Class::InfillWall), 3);
        assert_eq!(d.get(2, 1), Class::InfillWall);
    }

    #[test]
    fn thick_vertical_and_priority() {
        let t = parse_segments(&format!("{HEADER}2,0,2,3,3,infill\n0,1,4,1,1,window\n")).unwrap();
        let d = rasterize_segments(&t, 5, 4).unwrap();
        // 3x4 wall band minus the 3 pixels the window crosses
        assert_eq!(d.count(Class::InfillWall), 9);
        assert_eq!(d.count(Class::Window), 5);
        assert_eq!(d.get(2, 1), Class::Window);
    }

    #[test]
    fn faults() {
        let t = parse_segments(&format!("{HEADER}0,0,9,0,1,infill\n")).unwrap();
        assert!(matches!(rasterize_segments(&t, 5, 4), Err(Error::Data(_))));
        let t = parse_segments(&format!("{HEADER}0,0,2,2,1,infill\n")).unwrap();
        assert!(matches!(rasterize_segments(&t, 5, 4), Err(Error::Data(_))));
        assert!(parse_segments(&format!("{HEADER}0,0,2,0,0,infill\n")).is_err());
        assert!(parse_segments(&format!("{HEADER}0,0,2,0,1,door\n")).is_err());
        assert!(parse_segments("a,b\n1,2\n").is_err());
    }
}
