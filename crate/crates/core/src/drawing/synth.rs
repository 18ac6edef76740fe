//! Procedural structural layouts for smoke runs and benchmarks.
//!
//! A layout is a walled rectangle split by one horizontal corridor wall and
//! a few vertical partitions. Horizontal walls are shear walls, vertical
//! partitions are infill; under the strongest group the two end walls are
//! shear walls as well. The top wall carries windows and each partition a
//! gate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Class, GroupTag, SemanticDrawing};
use crate::error::{dim_err, Result};

const WALL: usize = 2;

fn paint(d: &mut SemanticDrawing, xs: (usize, usize), ys: (usize, usize), c: Class) {
    for y in ys.0..ys.1 {
        for x in xs.0..xs.1 {
            d.set(x, y, c);
        }
    }
}

/// One layout; the same `(width, height, seed, group)` always yields the
/// same drawing.
pub fn synth_layout(
    width: usize,
    height: usize,
    seed: u64,
    group: GroupTag,
) -> Result<SemanticDrawing> {
    if width < 24 || height < 16 {
        return dim_err(format!(
            "synthetic layouts need at least 24x16, got {width}x{height}"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = SemanticDrawing::filled(width, height, Class::Background);
    let (left, right) = (1, width - 1 - WALL);
    let (top, bottom) = (1, height - 1 - WALL);
    let mid = rng.gen_range(height / 3..=2 * height / 3 - WALL);

    let mut cols = Vec::new();
    let mut x = left + WALL + rng.gen_range(5..9);
    while x + WALL + 5 < right {
        cols.push(x);
        x += WALL + rng.gen_range(6..14);
    }
    for &c in &cols {
        let ends_mid = rng.gen_bool(0.5);
        let y_end = if ends_mid { mid } else { bottom };
        paint(&mut d, (c, c + WALL), (top, y_end), Class::InfillWall);
    }
    let end_wall = if group == GroupTag::Group8 {
        Class::ShearWall
    } else {
        Class::InfillWall
    };
    for c in [left, right] {
        paint(&mut d, (c, c + WALL), (top, bottom + WALL), end_wall);
    }
    for r in [top, mid, bottom] {
        paint(
            &mut d,
            (left, right + WALL),
            (r, r + WALL),
            Class::ShearWall,
        );
    }

    for _ in 0..rng.gen_range(1..=2) {
        let len = rng.gen_range(4..=6);
        let x0 = rng.gen_range(left + WALL + 1..right - len);
        paint(&mut d, (x0, x0 + len), (top, top + WALL), Class::Window);
    }
    for &c in &cols {
        let len = rng.gen_range(3..=4);
        let lo = top + WALL + 1;
        let hi = mid.saturating_sub(len + 1).max(lo + 1);
        let y0 = rng.gen_range(lo..hi);
        paint(&mut d, (c, c + WALL), (y0, y0 + len), Class::Gate);
    }

    Ok(d.with_condition(Some(group.condition()))
        .with_origin(format!("synth{seed:04}__{}", group.tag())))
}

/// `n` layouts cycling through the three groups, seeded `seed, seed+1, …`.
pub fn synth_dataset(
    n: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Vec<SemanticDrawing>> {
    (0..n)
        .map(|i| synth_layout(width, height, seed + i as u64, GroupTag::ALL[i % 3]))
        .collect()
}
