//! Small raster helpers shared by the renderers.

use attn_core::RgbImage;

pub(crate) fn fill_disc(img: &mut RgbImage, cx: f64, cy: f64, radius: f64, rgb: [u8; 3]) {
    let x0 = (cx - radius).floor().max(0.0) as usize;
    let y0 = (cy - radius).floor().max(0.0) as usize;
    let x1 = ((cx + radius).ceil() as i64).clamp(0, img.width() as i64) as usize;
    let y1 = ((cy + radius).ceil() as i64).clamp(0, img.height() as i64) as usize;
    let r2 = radius * radius;
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r2 {
                img.put_pixel(x, y, rgb);
            }
        }
    }
}

/// Adds `offset` (in unit intensity) to every channel, clamped to `[0, 255]`.
pub(crate) fn shift_color(rgb: [u8; 3], offset: f64) -> [u8; 3] {
    rgb.map(|c| (c as f64 + offset * 255.0).round().clamp(0.0, 255.0) as u8)
}

const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;

fn glyph(c: char) -> [u8; GLYPH_H] {
    // rows of 3 bits, msb on the left
    match c.to_ascii_uppercase() {
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'H' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'N' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'O' => [0b111, 0b101, 0b101, 0b101, 0b111],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'S' => [0b111, 0b100, 0b111, 0b001, 0b111],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'W' => [0b101, 0b101, 0b111, 0b111, 0b101],
        ' ' => [0; GLYPH_H],
        _ => [0b111, 0b111, 0b111, 0b111, 0b111],
    }
}

/// Width in pixels of `text` drawn by [`draw_text`].
pub(crate) fn text_width(text: &str) -> usize {
    let n = text.chars().count();
    if n == 0 {
        0
    } else {
        n * (GLYPH_W + 1) - 1
    }
}

pub(crate) fn draw_text(img: &mut RgbImage, x: usize, y: usize, text: &str, rgb: [u8; 3]) {
    for (i, c) in text.chars().enumerate() {
        let gx = x + i * (GLYPH_W + 1);
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                    let (px, py) = (gx + col, y + row);
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, rgb);
                    }
                }
            }
        }
    }
}
