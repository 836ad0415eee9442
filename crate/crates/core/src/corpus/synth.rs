//! Synthetic word-image rendering.
//!
//! A small stroke-based glyph set (a-z, 0-9) rendered as anti-aliased
//! polylines stands in for scanned handwriting at desk scale. The style seed
//! deterministically controls slant (±15 degrees), stroke thickness (1-3 px),
//! per-letter baseline jitter (±3 px) and inter-letter spacing, so the same
//! `(word, style_seed)` pair always produces byte-identical rasters.

use ndarray::Array2;

use crate::error::{Result, ScribeError};
use crate::raster::GrayRaster;
use crate::rng::RandomSource;

/// Canvas height in pixels; matches the downstream normalization height.
pub const CANVAS_HEIGHT: usize = 64;

/// Height of the glyph band inside the canvas.
const BAND: f64 = 44.0;
/// Vertical reference lines inside a glyph cell (0 = band top, 1 = band bottom).
const BASELINE: f64 = 0.75;

type Stroke = Vec<(f64, f64)>;

/// Stroke set and advance width (in band-height units) for one character.
struct Glyph {
    strokes: Vec<Stroke>,
    width: f64,
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, deg0: f64, deg1: f64, n: usize) -> Stroke {
    // y grows downward; angle 0 points east, 90 points down.
    (0..=n)
        .map(|i| {
            let t = deg0 + (deg1 - deg0) * i as f64 / n as f64;
            let r = t.to_radians();
            (cx + rx * r.cos(), cy + ry * r.sin())
        })
        .collect()
}

fn line(points: &[(f64, f64)]) -> Stroke {
    points.to_vec()
}

fn glyph(c: char) -> Option<Glyph> {
    let g = |strokes: Vec<Stroke>, width: f64| Some(Glyph { strokes, width });
    // Reference heights: ascender 0.02, x-height 0.30, baseline 0.75, descender 0.98.
    match c {
        'a' => g(
            vec![arc(0.27, 0.52, 0.24, 0.23, 0.0, 360.0, 14), line(&[(0.51, 0.30), (0.51, 0.75)])],
            0.58,
        ),
        'b' => g(
            vec![line(&[(0.04, 0.02), (0.04, 0.75)]), arc(0.28, 0.52, 0.24, 0.23, 90.0, 450.0, 14)],
            0.58,
        ),
        'c' => g(vec![arc(0.30, 0.52, 0.26, 0.23, 40.0, 320.0, 12)], 0.56),
        'd' => g(
            vec![line(&[(0.52, 0.02), (0.52, 0.75)]), arc(0.28, 0.52, 0.24, 0.23, 90.0, 450.0, 14)],
            0.58,
        ),
        'e' => g(
            vec![line(&[(0.05, 0.53), (0.53, 0.53)]), arc(0.29, 0.52, 0.24, 0.23, 0.0, 305.0, 12)],
            0.58,
        ),
        'f' => g(
            vec![
                arc(0.42, 0.16, 0.16, 0.14, 180.0, 300.0, 5),
                line(&[(0.26, 0.16), (0.26, 0.75)]),
                line(&[(0.06, 0.32), (0.48, 0.32)]),
            ],
            0.52,
        ),
        'g' => g(
            vec![
                arc(0.27, 0.52, 0.24, 0.22, 0.0, 360.0, 14),
                line(&[(0.51, 0.30), (0.51, 0.86)]),
                arc(0.27, 0.84, 0.24, 0.14, 0.0, 140.0, 6),
            ],
            0.58,
        ),
        'h' => g(
            vec![
                line(&[(0.04, 0.02), (0.04, 0.75)]),
                arc(0.28, 0.47, 0.24, 0.17, 180.0, 360.0, 8),
                line(&[(0.52, 0.47), (0.52, 0.75)]),
            ],
            0.58,
        ),
        'i' => g(
            vec![line(&[(0.10, 0.30), (0.10, 0.75)]), line(&[(0.10, 0.13), (0.10, 0.17)])],
            0.22,
        ),
        'j' => g(
            vec![
                line(&[(0.24, 0.30), (0.24, 0.88)]),
                arc(0.10, 0.86, 0.14, 0.12, 0.0, 120.0, 5),
                line(&[(0.24, 0.13), (0.24, 0.17)]),
            ],
            0.36,
        ),
        'k' => g(
            vec![
                line(&[(0.04, 0.02), (0.04, 0.75)]),
                line(&[(0.46, 0.30), (0.04, 0.54)]),
                line(&[(0.20, 0.45), (0.48, 0.75)]),
            ],
            0.54,
        ),
        'l' => g(vec![line(&[(0.10, 0.02), (0.10, 0.75)])], 0.22),
        'm' => g(
            vec![
                line(&[(0.04, 0.30), (0.04, 0.75)]),
                arc(0.23, 0.47, 0.19, 0.17, 180.0, 360.0, 8),
                line(&[(0.42, 0.47), (0.42, 0.75)]),
                arc(0.61, 0.47, 0.19, 0.17, 180.0, 360.0, 8),
                line(&[(0.80, 0.47), (0.80, 0.75)]),
            ],
            0.86,
        ),
        'n' => g(
            vec![
                line(&[(0.04, 0.30), (0.04, 0.75)]),
                arc(0.28, 0.47, 0.24, 0.17, 180.0, 360.0, 8),
                line(&[(0.52, 0.47), (0.52, 0.75)]),
            ],
            0.58,
        ),
        'o' => g(vec![arc(0.28, 0.52, 0.25, 0.23, 0.0, 360.0, 14)], 0.58),
        'p' => g(
            vec![line(&[(0.04, 0.30), (0.04, 0.98)]), arc(0.28, 0.52, 0.24, 0.23, 90.0, 450.0, 14)],
            0.58,
        ),
        'q' => g(
            vec![line(&[(0.52, 0.30), (0.52, 0.98)]), arc(0.28, 0.52, 0.24, 0.23, 90.0, 450.0, 14)],
            0.58,
        ),
        'r' => g(
            vec![line(&[(0.04, 0.30), (0.04, 0.75)]), arc(0.28, 0.50, 0.24, 0.20, 180.0, 320.0, 7)],
            0.48,
        ),
        's' => g(
            vec![line(&[
                (0.48, 0.36),
                (0.28, 0.30),
                (0.08, 0.38),
                (0.28, 0.52),
                (0.48, 0.65),
                (0.26, 0.75),
                (0.04, 0.68),
            ])],
            0.54,
        ),
        't' => g(
            vec![
                line(&[(0.22, 0.08), (0.22, 0.66)]),
                arc(0.36, 0.66, 0.14, 0.09, 120.0, 180.0, 4),
                line(&[(0.04, 0.30), (0.46, 0.30)]),
            ],
            0.50,
        ),
        'u' => g(
            vec![
                line(&[(0.04, 0.30), (0.04, 0.58)]),
                arc(0.28, 0.58, 0.24, 0.17, 0.0, 180.0, 8),
                line(&[(0.52, 0.30), (0.52, 0.75)]),
            ],
            0.58,
        ),
        'v' => g(vec![line(&[(0.04, 0.30), (0.28, 0.75), (0.52, 0.30)])], 0.58),
        'w' => g(
            vec![line(&[
                (0.04, 0.30),
                (0.20, 0.75),
                (0.38, 0.42),
                (0.56, 0.75),
                (0.72, 0.30),
            ])],
            0.78,
        ),
        'x' => g(
            vec![line(&[(0.04, 0.30), (0.50, 0.75)]), line(&[(0.50, 0.30), (0.04, 0.75)])],
            0.56,
        ),
        'y' => g(
            vec![line(&[(0.04, 0.30), (0.28, 0.75)]), line(&[(0.52, 0.30), (0.12, 0.98)])],
            0.58,
        ),
        'z' => g(
            vec![line(&[(0.04, 0.30), (0.48, 0.30), (0.04, 0.75), (0.48, 0.75)])],
            0.54,
        ),
        '0' => g(vec![arc(0.27, 0.40, 0.23, 0.34, 0.0, 360.0, 16)], 0.56),
        '1' => g(
            vec![line(&[(0.10, 0.22), (0.28, 0.06), (0.28, 0.75)]), line(&[(0.10, 0.75), (0.46, 0.75)])],
            0.54,
        ),
        '2' => g(
            vec![
                arc(0.26, 0.22, 0.22, 0.16, 160.0, 360.0, 8),
                line(&[(0.48, 0.22), (0.04, 0.75), (0.50, 0.75)]),
            ],
            0.56,
        ),
        '3' => g(
            vec![
                arc(0.26, 0.22, 0.21, 0.17, 150.0, 420.0, 9),
                arc(0.26, 0.57, 0.23, 0.19, 270.0, 570.0, 10),
            ],
            0.56,
        ),
        '4' => g(
            vec![line(&[(0.38, 0.06), (0.04, 0.52), (0.52, 0.52)]), line(&[(0.38, 0.06), (0.38, 0.75)])],
            0.58,
        ),
        '5' => g(
            vec![
                line(&[(0.48, 0.06), (0.08, 0.06), (0.08, 0.38)]),
                arc(0.27, 0.55, 0.22, 0.20, 250.0, 520.0, 10),
            ],
            0.56,
        ),
        '6' => g(
            vec![
                arc(0.44, 0.20, 0.42, 0.52, 180.0, 245.0, 7),
                arc(0.27, 0.56, 0.22, 0.19, 0.0, 360.0, 12),
            ],
            0.56,
        ),
        '7' => g(
            vec![line(&[(0.04, 0.06), (0.50, 0.06), (0.18, 0.75)])],
            0.56,
        ),
        '8' => g(
            vec![arc(0.27, 0.23, 0.19, 0.17, 0.0, 360.0, 12), arc(0.27, 0.58, 0.23, 0.18, 0.0, 360.0, 12)],
            0.56,
        ),
        '9' => g(
            vec![
                arc(0.27, 0.24, 0.22, 0.19, 0.0, 360.0, 12),
                line(&[(0.49, 0.26), (0.40, 0.75)]),
            ],
            0.56,
        ),
        _ => None,
    }
}

/// Characters the built-in renderer supports.
pub fn supported_chars() -> impl Iterator<Item = char> {
    ('a'..='z').chain('0'..='9')
}

struct Style {
    slant: f64,      // radians, applied as x-shear about the baseline
    thickness: f64,  // stroke thickness in pixels
    spacing: f64,    // extra pixels between letters
    jitters: Vec<f64>, // per-letter baseline offset in pixels
}

fn draw_style(word: &str, seed: u64) -> Style {
    let mut rng = RandomSource::from_seed(seed);
    let slant = rng.uniform_in(-15.0, 15.0).to_radians();
    let thickness = 1.0 + rng.below(3) as f64; // 1..=3 px
    let spacing = rng.uniform_in(10.0, 16.0);
    let jitters = word.chars().map(|_| rng.uniform_in(-3.0, 3.0)).collect();
    Style { slant, thickness, spacing, jitters }
}

/// Distance from point `p` to segment `a`-`b`.
fn seg_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Render `word` as an 8-bit raster; deterministic in `(word, style_seed)`.
pub fn synth_word(word: &str, style_seed: u64) -> Result<(GrayRaster, String)> {
    if word.is_empty() {
        return Err(ScribeError::InvalidInput("empty word".into()));
    }
    for c in word.chars() {
        if glyph(c).is_none() {
            return Err(ScribeError::UnsupportedCharacter { ch: c, word: word.to_string() });
        }
    }
    let style = draw_style(word, style_seed);

    let top_margin = 8.0;
    let left_margin = 10.0;
    let baseline_y = top_margin + BAND * BASELINE;

    // Collect strokes in canvas coordinates.
    let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
    let mut pen_x = left_margin;
    for (i, c) in word.chars().enumerate() {
        let g = glyph(c).unwrap();
        let jitter = style.jitters[i];
        for stroke in &g.strokes {
            for pair in stroke.windows(2) {
                let map = |(gx, gy): (f64, f64)| {
                    let y = top_margin + gy * BAND + jitter;
                    // shear about the baseline so letters lean consistently
                    let x = pen_x + gx * BAND + style.slant * (baseline_y - y);
                    (x, y)
                };
                segments.push((map(pair[0]), map(pair[1])));
            }
        }
        pen_x += g.width * BAND + style.spacing;
    }

    let max_x = segments
        .iter()
        .flat_map(|(a, b)| [a.0, b.0])
        .fold(0.0f64, f64::max);
    let width = (max_x + left_margin).ceil() as usize;
    let width = width.max(1);

    // Rasterize with a coarse bucket grid so we only test nearby segments.
    let mut canvas = Array2::from_elem((CANVAS_HEIGHT, width), 255u8);
    let half = style.thickness / 2.0;
    let reach = half + 1.0;
    for &(a, b) in &segments {
        let x0 = ((a.0.min(b.0) - reach).floor().max(0.0)) as usize;
        let x1 = ((a.0.max(b.0) + reach).ceil().min((width - 1) as f64)) as usize;
        let y0 = ((a.1.min(b.1) - reach).floor().max(0.0)) as usize;
        let y1 = ((a.1.max(b.1) + reach).ceil().min((CANVAS_HEIGHT - 1) as f64)) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = seg_distance((x as f64, y as f64), a, b);
                let coverage = (half + 0.5 - d).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    let v = (255.0 * (1.0 - coverage)).round() as u8;
                    let cell = &mut canvas[[y, x]];
                    *cell = (*cell).min(v);
                }
            }
        }
    }

    Ok((GrayRaster::new(canvas), word.to_string()))
}

/// Generate `n` distinct pseudo-words over the glyph alphabet.
pub fn generate_words(n: usize, min_len: usize, max_len: usize, rng: &mut RandomSource) -> Vec<String> {
    assert!(min_len >= 1 && max_len >= min_len);
    let letters: Vec<char> = ('a'..='z').collect();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = min_len + rng.below(max_len - min_len + 1);
        let w: String = (0..len).map(|_| letters[rng.below(letters.len())]).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_equal_args() {
        let (a, _) = synth_word("cat", 7).unwrap();
        let (b, _) = synth_word("cat", 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seed_changes_raster() {
        let (a, _) = synth_word("cat", 7).unwrap();
        let (b, _) = synth_word("cat", 8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn width_monotone_in_length() {
        for seed in [1u64, 9, 42] {
            let (short, _) = synth_word("a", seed).unwrap();
            let (long, _) = synth_word("aaaa", seed).unwrap();
            assert!(short.width() < long.width(), "seed {seed}");
        }
    }

    #[test]
    fn unsupported_char_named_in_error() {
        let err = synth_word("caT", 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('T'), "error should name the character: {msg}");
    }

    #[test]
    fn all_glyphs_render_ink() {
        for c in supported_chars() {
            let (r, _) = synth_word(&c.to_string(), 3).unwrap();
            assert_eq!(r.height(), CANVAS_HEIGHT);
            assert!(r.data.iter().any(|&v| v < 128), "glyph {c:?} rendered no ink");
        }
    }

    #[test]
    fn generated_words_distinct() {
        let mut rng = RandomSource::from_seed(5);
        let ws = generate_words(200, 3, 6, &mut rng);
        let set: std::collections::HashSet<_> = ws.iter().collect();
        assert_eq!(set.len(), 200);
    }
}
