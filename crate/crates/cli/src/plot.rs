//! Reference-vs-predicted scatter rendered straight into an RGB raster.

use image::{Rgb, RgbImage};

pub const SIZE: u32 = 600;
pub const MARGIN: u32 = 60;
pub const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
pub const AXIS: Rgb<u8> = Rgb([0, 0, 0]);
pub const POINT: Rgb<u8> = Rgb([31, 119, 180]);
const DIAGONAL: Rgb<u8> = Rgb([200, 200, 200]);
const TICK_M: f64 = 5.0;

/// Axis extent in meters: the largest value rounded up to a tick, at least one tick.
pub fn extent(points: &[(f32, f32)]) -> f64 {
    let max = points.iter().map(|&(r, p)| r.max(p) as f64).fold(0.0, f64::max);
    ((max / TICK_M).ceil() * TICK_M).max(TICK_M)
}

/// Pixel position of a (reference, predicted) pair, both in meters.
pub fn to_pixel(r: f64, p: f64, extent: f64) -> (u32, u32) {
    let span = (SIZE - 2 * MARGIN - 1) as f64;
    let x = MARGIN as f64 + (r / extent).clamp(0.0, 1.0) * span;
    let y = (SIZE - MARGIN - 1) as f64 - (p / extent).clamp(0.0, 1.0) * span;
    (x.round() as u32, y.round() as u32)
}

// 3×5 glyphs for tick labels, one row per u8, top row first.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'm' => [0, 0, 7, 7, 5],
        _ => [0; 5],
    }
}

fn text(img: &mut RgbImage, s: &str, x0: u32, y0: u32, scale: u32) {
    for (i, c) in s.chars().enumerate() {
        let g = glyph(c);
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let x = x0 + (i as u32 * 4 + col) * scale + dx;
                            let y = y0 + row as u32 * scale + dy;
                            if x < img.width() && y < img.height() {
                                img.put_pixel(x, y, AXIS);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn render(points: &[(f32, f32)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, BACKGROUND);
    let ext = extent(points);
    let (x_lo, y_lo) = to_pixel(0.0, 0.0, ext);
    let (x_hi, y_hi) = to_pixel(ext, ext, ext);
    // 1:1 line under the points
    for x in x_lo..=x_hi {
        let y = y_lo - (x - x_lo) * (y_lo - y_hi) / (x_hi - x_lo);
        img.put_pixel(x, y, DIAGONAL);
    }
    for &(r, p) in points {
        let (x, y) = to_pixel(r as f64, p as f64, ext);
        for (dx, dy) in [(0i32, 0i32), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (px, py) = (x as i32 + dx, y as i32 + dy);
            if px >= 0 && py >= 0 && (px as u32) < SIZE && (py as u32) < SIZE {
                img.put_pixel(px as u32, py as u32, POINT);
            }
        }
    }
    for x in x_lo..=x_hi {
        img.put_pixel(x, y_lo, AXIS);
    }
    for y in y_hi..=y_lo {
        img.put_pixel(x_lo, y, AXIS);
    }
    let ticks = (ext / TICK_M).round() as u32;
    let step = (ticks / 8).max(1);
    for k in (0..=ticks).step_by(step as usize) {
        let v = k as f64 * TICK_M;
        let (tx, _) = to_pixel(v, 0.0, ext);
        let (_, ty) = to_pixel(0.0, v, ext);
        for d in 1..6 {
            img.put_pixel(tx, y_lo + d, AXIS);
            img.put_pixel(x_lo - d, ty, AXIS);
        }
        let label = format!("{}", v as u32);
        let w = label.len() as u32 * 8;
        text(&mut img, &label, tx.saturating_sub(w / 2), y_lo + 10, 2);
        text(&mut img, &label, (x_lo - 10).saturating_sub(w), ty.saturating_sub(5), 2);
    }
    text(&mut img, "m", x_hi - 10, y_lo + 30, 2);
    text(&mut img, "m", 8, y_hi, 2);
    img
}
