//! Rasterization of TTY screens into `[3, H, W]` images with values in `[0, 1]`.

pub mod font;

use serde::{Deserialize, Serialize};

use crate::dataset::{SCREEN_CELLS, SCREEN_COLS, SCREEN_ROWS};
use crate::exec::Exec;
use crate::loader::SequenceBatch;

pub const CHANNELS: usize = 3;

/// Standard 16-color terminal palette.
pub const DEFAULT_PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [170, 0, 0],
    [0, 170, 0],
    [170, 85, 0],
    [0, 0, 170],
    [170, 0, 170],
    [0, 170, 170],
    [170, 170, 170],
    [85, 85, 85],
    [255, 85, 85],
    [85, 255, 85],
    [255, 255, 85],
    [85, 85, 255],
    [255, 85, 255],
    [85, 255, 255],
    [255, 255, 255],
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("glyph dimensions must be at least 1, got {0}x{1}")]
    GlyphSize(usize, usize),
    #[error("crop dimensions must be odd or zero, got {0}x{1}")]
    EvenCrop(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub glyph_width: usize,
    pub glyph_height: usize,
    /// Character rows of the cursor-centered crop; 0 renders all 24 rows.
    pub crop_rows: usize,
    /// Character columns of the crop; 0 renders all 80 columns.
    pub crop_cols: usize,
    pub palette: [[u8; 3]; 16],
    pub cursor_highlight: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            glyph_width: font::GLYPH_WIDTH,
            glyph_height: font::GLYPH_HEIGHT,
            crop_rows: 0,
            crop_cols: 0,
            palette: DEFAULT_PALETTE,
            cursor_highlight: true,
        }
    }
}

impl RenderSpec {
    pub fn crop(rows: usize, cols: usize) -> Self {
        RenderSpec {
            crop_rows: rows,
            crop_cols: cols,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.glyph_width == 0 || self.glyph_height == 0 {
            return Err(RenderError::GlyphSize(self.glyph_height, self.glyph_width));
        }
        let odd_or_zero = |d: usize| d == 0 || d % 2 == 1;
        if !odd_or_zero(self.crop_rows) || !odd_or_zero(self.crop_cols) {
            return Err(RenderError::EvenCrop(self.crop_rows, self.crop_cols));
        }
        Ok(())
    }

    pub fn cell_rows(&self) -> usize {
        if self.crop_rows == 0 { SCREEN_ROWS } else { self.crop_rows }
    }

    pub fn cell_cols(&self) -> usize {
        if self.crop_cols == 0 { SCREEN_COLS } else { self.crop_cols }
    }

    pub fn height(&self) -> usize {
        self.cell_rows() * self.glyph_height
    }

    pub fn width(&self) -> usize {
        self.cell_cols() * self.glyph_width
    }

    /// `[channels, H, W]`
    pub fn image_shape(&self) -> [usize; 3] {
        [CHANNELS, self.height(), self.width()]
    }

    pub fn image_len(&self) -> usize {
        CHANNELS * self.height() * self.width()
    }

    /// Screen cell shown at crop position `(i, j)`, or `None` when it lies off-screen.
    fn source_cell(&self, cursor: [i16; 2], i: usize, j: usize) -> Option<(usize, usize)> {
        let r = if self.crop_rows == 0 {
            i as i64
        } else {
            cursor[0] as i64 - (self.crop_rows / 2) as i64 + i as i64
        };
        let c = if self.crop_cols == 0 {
            j as i64
        } else {
            cursor[1] as i64 - (self.crop_cols / 2) as i64 + j as i64
        };
        ((0..SCREEN_ROWS as i64).contains(&r) && (0..SCREEN_COLS as i64).contains(&c))
            .then_some((r as usize, c as usize))
    }
}

/// Pixel element types the renderer can write into.
pub trait Pixel: Copy + Send {
    fn from_unit(v: f32) -> Self;
}

impl Pixel for f32 {
    #[inline]
    fn from_unit(v: f32) -> Self {
        v
    }
}

impl Pixel for f64 {
    #[inline]
    fn from_unit(v: f32) -> Self {
        v as f64
    }
}

/// Renders one screen into `out`, which must hold `spec.image_len()` values.
///
/// Panics when the input arrays are not `24×80` or `out` has the wrong length.
pub fn render_screen_into<P: Pixel>(chars: &[u8], colors: &[i8], cursor: [i16; 2], spec: &RenderSpec, out: &mut [P]) {
    assert_eq!(chars.len(), SCREEN_CELLS);
    assert_eq!(colors.len(), SCREEN_CELLS);
    assert_eq!(out.len(), spec.image_len());
    let (gh, gw) = (spec.glyph_height, spec.glyph_width);
    let (h, w) = (spec.height(), spec.width());
    let plane = h * w;
    let unit = |rgb: [u8; 3]| rgb.map(|v| P::from_unit(v as f32 / 255.0));
    let background = unit(spec.palette[0]);

    for i in 0..spec.cell_rows() {
        for j in 0..spec.cell_cols() {
            let (glyph, mut fg, bg) = match spec.source_cell(cursor, i, j) {
                Some((r, c)) => {
                    let k = r * SCREEN_COLS + c;
                    let fg = unit(spec.palette[(colors[k] as u8 & 15) as usize]);
                    let is_cursor = spec.cursor_highlight && cursor == [r as i16, c as i16];
                    let (fg, bg) = if is_cursor { (background, fg) } else { (fg, background) };
                    (chars[k], fg, bg)
                }
                None => (b' ', background, background),
            };
            if font::glyph(glyph).is_none() {
                // Non-printable bytes paint as an empty cell.
                fg = bg;
            }
            for y in 0..gh {
                let row = (i * gh + y) * w + j * gw;
                for x in 0..gw {
                    let px = if font::pixel(glyph, y, x, gh, gw) { fg } else { bg };
                    for (ch, v) in px.iter().enumerate() {
                        out[ch * plane + row + x] = *v;
                    }
                }
            }
        }
    }
}

/// Renders one screen as a fresh `[3, H, W]` buffer.
pub fn render_screen(chars: &[u8], colors: &[i8], cursor: [i16; 2], spec: &RenderSpec) -> Vec<f32> {
    let mut out = vec![0.0f32; spec.image_len()];
    render_screen_into(chars, colors, cursor, spec, &mut out);
    out
}

/// Renders every observation of a batch into `[B, L+1, 3, H, W]`.
pub fn render_batch(batch: &SequenceBatch, spec: &RenderSpec) -> Vec<f32> {
    render_batch_with(batch, spec, Exec::default())
}

pub fn render_batch_with(batch: &SequenceBatch, spec: &RenderSpec, exec: Exec) -> Vec<f32> {
    let steps = batch.obs_len();
    let n = batch.batch_size * steps;
    let mut out = vec![0.0f32; n * spec.image_len()];
    exec.for_each_chunk_mut(&mut out, spec.image_len(), |k, img| {
        let (b, t) = (k / steps, k % steps);
        render_screen_into(batch.chars_at(b, t), batch.colors_at(b, t), batch.cursor_at(b, t), spec, img);
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank() -> (Vec<u8>, Vec<i8>) {
        (vec![b' '; SCREEN_CELLS], vec![7; SCREEN_CELLS])
    }

    fn bbox(img: &[f32], spec: &RenderSpec) -> Option<(usize, usize, usize, usize)> {
        let (h, w) = (spec.height(), spec.width());
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for ch in 0..CHANNELS {
            for y in 0..h {
                for x in 0..w {
                    if img[ch * h * w + y * w + x] != 0.0 {
                        b = Some(match b {
                            None => (y, x, y, x),
                            Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                        });
                    }
                }
            }
        }
        b
    }

    #[test]
    fn default_shape() {
        let spec = RenderSpec::default();
        assert_eq!(spec.image_shape(), [3, 144, 320]);
        let (c, k) = blank();
        assert_eq!(render_screen(&c, &k, [5, 5], &spec).len(), 3 * 144 * 320);
    }

    #[test]
    fn all_space_is_constant_background() {
        let spec = RenderSpec {
            cursor_highlight: false,
            ..RenderSpec::default()
        };
        let (c, k) = blank();
        assert!(render_screen(&c, &k, [3, 3], &spec).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_glyph_stays_in_top_left_block() {
        let spec = RenderSpec {
            glyph_width: 3,
            glyph_height: 3,
            ..RenderSpec::default()
        };
        let (mut c, k) = blank();
        c[0] = b'@';
        let img = render_screen(&c, &k, [0, 0], &spec);
        let (_, _, y1, x1) = bbox(&img, &spec).expect("glyph is visible");
        assert!(y1 < 3 && x1 < 3);
    }

    #[test]
    fn non_printable_is_background() {
        let spec = RenderSpec {
            cursor_highlight: false,
            ..RenderSpec::default()
        };
        let (mut c, k) = blank();
        c[100] = 7;
        c[101] = 200;
        assert!(render_screen(&c, &k, [0, 0], &spec).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cursor_cell_is_inverted() {
        let spec = RenderSpec::default();
        let (c, k) = blank();
        let img = render_screen(&c, &k, [0, 0], &spec);
        // A blank cursor cell becomes a solid block of the foreground color.
        let v = 170.0 / 255.0;
        assert_eq!(img[0], v);
        assert_eq!(img[5 * 320 + 3], v);
        assert_eq!(img[6 * 320], 0.0);
    }

    #[test]
    fn locality_in_full_screen_mode() {
        let spec = RenderSpec::default();
        let (mut c, k) = blank();
        let before = render_screen(&c, &k, [0, 0], &spec);
        c[3 * SCREEN_COLS + 17] = b'#';
        let after = render_screen(&c, &k, [0, 0], &spec);
        for ch in 0..3 {
            for y in 0..144 {
                for x in 0..320 {
                    let i = ch * 144 * 320 + y * 320 + x;
                    let inside = y / 6 == 3 && x / 4 == 17;
                    if !inside {
                        assert_eq!(before[i], after[i]);
                    }
                }
            }
        }
        assert_ne!(before, after);
    }

    #[test]
    fn crop_matches_padded_full_render() {
        let ep = crate::synth::synthetic_episode(3, 4);
        let full_spec = RenderSpec::default();
        for cursor in [[0i16, 0i16], [12, 40], [23, 79], [1, 78]] {
            let chars = ep.chars_at(1);
            let colors = ep.colors_at(1);
            let full = render_screen(chars, colors, cursor, &full_spec);
            let spec = RenderSpec::crop(9, 11);
            let crop = render_screen(chars, colors, cursor, &spec);
            let (h, w) = (spec.height(), spec.width());
            for ch in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let sy = cursor[0] as i64 * 6 - 4 * 6 + y as i64;
                        let sx = cursor[1] as i64 * 4 - 5 * 4 + x as i64;
                        let expect = if (0..144).contains(&sy) && (0..320).contains(&sx) {
                            full[ch * 144 * 320 + sy as usize * 320 + sx as usize]
                        } else {
                            0.0
                        };
                        assert_eq!(crop[ch * h * w + y * w + x], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(RenderSpec::default().validate().is_ok());
        assert_eq!(RenderSpec::crop(8, 9).validate(), Err(RenderError::EvenCrop(8, 9)));
        let bad = RenderSpec {
            glyph_width: 0,
            ..RenderSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
