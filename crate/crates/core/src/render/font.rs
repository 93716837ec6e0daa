//! Embedded 4×6 bitmap font for printable ASCII 32..=127.
//!
//! Each glyph is six rows; bit 3 of a row is the leftmost pixel. Glyphs use a
//! 3×5 box in the top-left of the cell, leaving a one-pixel gutter.

pub const GLYPH_WIDTH: usize = 4;
pub const GLYPH_HEIGHT: usize = 6;

#[rustfmt::skip]
static GLYPHS: [[u8; GLYPH_HEIGHT]; 96] = [
    [0x0, 0x0, 0x0, 0x0, 0x0, 0x0], // ' '
    [0x4, 0x4, 0x4, 0x0, 0x4, 0x0], // '!'
    [0xA, 0xA, 0x0, 0x0, 0x0, 0x0], // '"'
    [0xA, 0xE, 0xA, 0xE, 0xA, 0x0], // '#'
    [0x6, 0xC, 0x4, 0x6, 0xC, 0x0], // '$'
    [0x8, 0x2, 0x4, 0x8, 0x2, 0x0], // '%'
    [0x4, 0xA, 0x4, 0xA, 0x6, 0x0], // '&'
    [0x4, 0x4, 0x0, 0x0, 0x0, 0x0], // "'"
    [0x2, 0x4, 0x4, 0x4, 0x2, 0x0], // '('
    [0x8, 0x4, 0x4, 0x4, 0x8, 0x0], // ')'
    [0x0, 0xA, 0x4, 0xA, 0x0, 0x0], // '*'
    [0x0, 0x4, 0xE, 0x4, 0x0, 0x0], // '+'
    [0x0, 0x0, 0x0, 0x4, 0x8, 0x0], // ','
    [0x0, 0x0, 0xE, 0x0, 0x0, 0x0], // '-'
    [0x0, 0x0, 0x0, 0x0, 0x4, 0x0], // '.'
    [0x2, 0x2, 0x4, 0x8, 0x8, 0x0], // '/'
    [0x6, 0xA, 0xA, 0xA, 0xC, 0x0], // '0'
    [0x4, 0xC, 0x4, 0x4, 0x4, 0x0], // '1'
    [0xC, 0x2, 0x4, 0x8, 0xE, 0x0], // '2'
    [0xC, 0x2, 0x4, 0x2, 0xC, 0x0], // '3'
    [0xA, 0xA, 0xE, 0x2, 0x2, 0x0], // '4'
    [0xE, 0x8, 0xC, 0x2, 0xC, 0x0], // '5'
    [0x6, 0x8, 0xE, 0xA, 0xE, 0x0], // '6'
    [0xE, 0x2, 0x4, 0x8, 0x8, 0x0], // '7'
    [0xE, 0xA, 0xE, 0xA, 0xE, 0x0], // '8'
    [0xE, 0xA, 0xE, 0x2, 0xC, 0x0], // '9'
    [0x0, 0x4, 0x0, 0x4, 0x0, 0x0], // ':'
    [0x0, 0x4, 0x0, 0x4, 0x8, 0x0], // ';'
    [0x2, 0x4, 0x8, 0x4, 0x2, 0x0], // '<'
    [0x0, 0xE, 0x0, 0xE, 0x0, 0x0], // '='
    [0x8, 0x4, 0x2, 0x4, 0x8, 0x0], // '>'
    [0xE, 0x2, 0x4, 0x0, 0x4, 0x0], // '?'
    [0x4, 0xA, 0xE, 0x8, 0x6, 0x0], // '@'
    [0x4, 0xA, 0xE, 0xA, 0xA, 0x0], // 'A'
    [0xC, 0xA, 0xC, 0xA, 0xC, 0x0], // 'B'
    [0x6, 0x8, 0x8, 0x8, 0x6, 0x0], // 'C'
    [0xC, 0xA, 0xA, 0xA, 0xC, 0x0], // 'D'
    [0xE, 0x8, 0xE, 0x8, 0xE, 0x0], // 'E'
    [0xE, 0x8, 0xE, 0x8, 0x8, 0x0], // 'F'
    [0x6, 0x8, 0xE, 0xA, 0x6, 0x0], // 'G'
    [0xA, 0xA, 0xE, 0xA, 0xA, 0x0], // 'H'
    [0xE, 0x4, 0x4, 0x4, 0xE, 0x0], // 'I'
    [0x2, 0x2, 0x2, 0xA, 0x4, 0x0], // 'J'
    [0xA, 0xA, 0xC, 0xA, 0xA, 0x0], // 'K'
    [0x8, 0x8, 0x8, 0x8, 0xE, 0x0], // 'L'
    [0xA, 0xE, 0xE, 0xA, 0xA, 0x0], // 'M'
    [0xA, 0xE, 0xE, 0xE, 0xA, 0x0], // 'N'
    [0x4, 0xA, 0xA, 0xA, 0x4, 0x0], // 'O'
    [0xC, 0xA, 0xC, 0x8, 0x8, 0x0], // 'P'
    [0x4, 0xA, 0xA, 0xE, 0x6, 0x0], // 'Q'
    [0xC, 0xA, 0xE, 0xC, 0xA, 0x0], // 'R'
    [0x6, 0x8, 0x4, 0x2, 0xC, 0x0], // 'S'
    [0xE, 0x4, 0x4, 0x4, 0x4, 0x0], // 'T'
    [0xA, 0xA, 0xA, 0xA, 0x6, 0x0], // 'U'
    [0xA, 0xA, 0xA, 0x4, 0x4, 0x0], // 'V'
    [0xA, 0xA, 0xE, 0xE, 0xA, 0x0], // 'W'
    [0xA, 0xA, 0x4, 0xA, 0xA, 0x0], // 'X'
    [0xA, 0xA, 0x4, 0x4, 0x4, 0x0], // 'Y'
    [0xE, 0x2, 0x4, 0x8, 0xE, 0x0], // 'Z'
    [0xE, 0x8, 0x8, 0x8, 0xE, 0x0], // '['
    [0x0, 0x8, 0x4, 0x2, 0x0, 0x0], // '\\'
    [0xE, 0x2, 0x2, 0x2, 0xE, 0x0], // ']'
    [0x4, 0xA, 0x0, 0x0, 0x0, 0x0], // '^'
    [0x0, 0x0, 0x0, 0x0, 0xE, 0x0], // '_'
    [0x8, 0x4, 0x0, 0x0, 0x0, 0x0], // '`'
    [0x0, 0xC, 0x6, 0xA, 0xE, 0x0], // 'a'
    [0x8, 0xC, 0xA, 0xA, 0xC, 0x0], // 'b'
    [0x0, 0x6, 0x8, 0x8, 0x6, 0x0], // 'c'
    [0x2, 0x6, 0xA, 0xA, 0x6, 0x0], // 'd'
    [0x0, 0x6, 0xA, 0xC, 0x6, 0x0], // 'e'
    [0x2, 0x4, 0xE, 0x4, 0x4, 0x0], // 'f'
    [0x0, 0x6, 0xA, 0x6, 0xC, 0x0], // 'g'
    [0x8, 0xC, 0xA, 0xA, 0xA, 0x0], // 'h'
    [0x4, 0x0, 0x4, 0x4, 0x4, 0x0], // 'i'
    [0x2, 0x0, 0x2, 0xA, 0x4, 0x0], // 'j'
    [0x8, 0xA, 0xC, 0xC, 0xA, 0x0], // 'k'
    [0xC, 0x4, 0x4, 0x4, 0xE, 0x0], // 'l'
    [0x0, 0xE, 0xE, 0xE, 0xA, 0x0], // 'm'
    [0x0, 0xC, 0xA, 0xA, 0xA, 0x0], // 'n'
    [0x0, 0x4, 0xA, 0xA, 0x4, 0x0], // 'o'
    [0x0, 0xC, 0xA, 0xC, 0x8, 0x0], // 'p'
    [0x0, 0x6, 0xA, 0x6, 0x2, 0x0], // 'q'
    [0x0, 0x6, 0x8, 0x8, 0x8, 0x0], // 'r'
    [0x0, 0x6, 0xC, 0x6, 0xC, 0x0], // 's'
    [0x4, 0xE, 0x4, 0x4, 0x6, 0x0], // 't'
    [0x0, 0xA, 0xA, 0xA, 0x6, 0x0], // 'u'
    [0x0, 0xA, 0xA, 0x4, 0x4, 0x0], // 'v'
    [0x0, 0xA, 0xE, 0xE, 0xE, 0x0], // 'w'
    [0x0, 0xA, 0x4, 0x4, 0xA, 0x0], // 'x'
    [0x0, 0xA, 0xA, 0x6, 0xC, 0x0], // 'y'
    [0x0, 0xE, 0x6, 0xC, 0xE, 0x0], // 'z'
    [0x6, 0x4, 0xC, 0x4, 0x6, 0x0], // '{'
    [0x4, 0x4, 0x4, 0x4, 0x4, 0x0], // '|'
    [0xC, 0x4, 0x6, 0x4, 0xC, 0x0], // '}'
    [0x0, 0x6, 0xC, 0x0, 0x0, 0x0], // '~'
    [0xE, 0xE, 0xE, 0xE, 0xE, 0x0], // '\x7f'
];

/// Bitmap rows for byte `c`, or `None` for non-printable bytes.
pub fn glyph(c: u8) -> Option<&'static [u8; GLYPH_HEIGHT]> {
    if (32..=127).contains(&c) {
        Some(&GLYPHS[(c - 32) as usize])
    } else {
        None
    }
}

/// Whether the font pixel at `(row, col)` of glyph `c` is set. Rows and columns
/// outside the native cell size are scaled by nearest-neighbour.
#[inline]
pub fn pixel(c: u8, row: usize, col: usize, cell_h: usize, cell_w: usize) -> bool {
    match glyph(c) {
        Some(g) => {
            let r = row * GLYPH_HEIGHT / cell_h;
            let k = col * GLYPH_WIDTH / cell_w;
            (g[r] >> (GLYPH_WIDTH - 1 - k)) & 1 == 1
        }
        None => false,
    }
}
