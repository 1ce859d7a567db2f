//! Built-in seven-segment digit glyphs on a 28x28 canvas.
//!
//! Segment layout (rows and columns inclusive):
//!
//! ```text
//!   bars (a, g, d):   cols 8..=19, rows 2..=5 / 12..=15 / 22..=25
//!   left verticals:   cols 3..=7     (f: rows 2..=15, e: rows 12..=25)
//!   right verticals:  cols 20..=24   (b: rows 2..=15, c: rows 12..=25)
//! ```
//!
//! Bars never overlap the verticals, so any two digits that differ by a
//! single segment still differ in at least 48 pixels. Rows and columns 0, 1,
//! 26 and 27 stay dark.

use crate::data::{LabeledImage, IMAGE_DIM, IMAGE_SIDE, NUM_CLASSES};
use crate::linalg::Vector;

/// Bumped whenever a glyph changes; golden tests key off it.
pub const TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl Segment {
    /// (row_start, row_end, col_start, col_end), inclusive.
    fn rect(self) -> (usize, usize, usize, usize) {
        match self {
            Segment::A => (2, 5, 8, 19),
            Segment::G => (12, 15, 8, 19),
            Segment::D => (22, 25, 8, 19),
            Segment::F => (2, 15, 3, 7),
            Segment::E => (12, 25, 3, 7),
            Segment::B => (2, 15, 20, 24),
            Segment::C => (12, 25, 20, 24),
        }
    }
}

fn segments(digit: usize) -> &'static [Segment] {
    use Segment::*;
    match digit {
        0 => &[A, B, C, D, E, F],
        1 => &[B, C],
        2 => &[A, B, G, E, D],
        3 => &[A, B, G, C, D],
        4 => &[F, G, B, C],
        5 => &[A, F, G, C, D],
        6 => &[A, F, G, E, C, D],
        7 => &[A, B, C],
        8 => &[A, B, C, D, E, F, G],
        9 => &[A, B, C, D, F, G],
        _ => unreachable!("digit out of range"),
    }
}

/// The ten binary glyphs, one per numeral.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: Vec<LabeledImage>,
}

impl TemplateSet {
    pub fn get(&self, digit: usize) -> &LabeledImage {
        &self.templates[digit]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledImage> {
        self.templates.iter()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Number of pixels in which glyphs `a` and `b` differ.
    pub fn hamming(&self, a: usize, b: usize) -> usize {
        self.templates[a]
            .pixels
            .iter()
            .zip(self.templates[b].pixels.iter())
            .filter(|(x, y)| x != y)
            .count()
    }

    /// One line per row, `#` for lit and `.` for dark pixels.
    pub fn ascii(&self, digit: usize) -> String {
        let px = self.templates[digit].pixels.as_slice();
        let mut out = String::with_capacity(IMAGE_SIDE * (IMAGE_SIDE + 1));
        for row in px.chunks(IMAGE_SIDE) {
            out.extend(row.iter().map(|&v| if v > 0.5 { '#' } else { '.' }));
            out.push('\n');
        }
        out
    }
}

pub fn builtin_templates() -> TemplateSet {
    let templates = (0..NUM_CLASSES)
        .map(|digit| {
            let mut px = vec![0.0; IMAGE_DIM];
            for seg in segments(digit) {
                let (r0, r1, c0, c1) = seg.rect();
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        px[r * IMAGE_SIDE + c] = 1.0;
                    }
                }
            }
            LabeledImage {
                pixels: Vector::from_vec_unchecked(px),
                label: digit,
            }
        })
        .collect();
    TemplateSet { templates }
}
