//! Silhouette normalization to a fixed 64x44 binary frame.
//!
//! Binarize at half intensity, crop rows to the foreground's vertical
//! extent, rescale to height 64 keeping the aspect ratio, shift so the
//! foreground column centroid lands on the frame center, then pad or crop
//! the width to 44.

use super::pgm::GrayImage;

pub const FRAME_HEIGHT: usize = 64;
pub const FRAME_WIDTH: usize = 44;

/// Source span `[lo, hi)` covered by output cell `i` of `n_out` when
/// resampling `n_in` cells. Spans tile the source and are never empty.
fn span(i: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = i * n_in / n_out;
    let hi = ((i + 1) * n_in).div_ceil(n_out).max(lo + 1).min(n_in);
    (lo, hi)
}

/// Binary resample where an output cell is foreground iff any source cell
/// in its span is. Thin structures survive downscaling and the first and
/// last rows stay occupied, which makes the whole pipeline idempotent.
fn resize_any(mask: &[bool], h0: usize, w0: usize, h1: usize, w1: usize) -> Vec<bool> {
    let col_spans: Vec<(usize, usize)> = (0..w1).map(|c| span(c, w0, w1)).collect();
    let mut out = vec![false; h1 * w1];
    for r in 0..h1 {
        let (r0, r1) = span(r, h0, h1);
        for (c, &(c0, c1)) in col_spans.iter().enumerate() {
            out[r * w1 + c] = (r0..r1).any(|sr| mask[sr * w0 + c0..sr * w0 + c1].iter().any(|&v| v));
        }
    }
    out
}

/// Normalizes one raw frame. Returns `None` when it has no foreground.
/// Output values are 0 or 1, row-major `FRAME_HEIGHT x FRAME_WIDTH`.
pub fn preprocess_frame(img: &GrayImage) -> Option<Vec<u8>> {
    let (h, w) = (img.height, img.width);
    let mask: Vec<bool> = (0..h * w).map(|i| img.is_foreground(i / w, i % w)).collect();
    let rows_with_fg: Vec<usize> = (0..h).filter(|&r| mask[r * w..(r + 1) * w].contains(&true)).collect();
    let (&top, &bottom) = (rows_with_fg.first()?, rows_with_fg.last()?);
    let h0 = bottom - top + 1;
    let cropped = &mask[top * w..(bottom + 1) * w];

    let w1 = ((w * FRAME_HEIGHT) as f64 / h0 as f64).round().max(1.0) as usize;
    let scaled = resize_any(cropped, h0, w, FRAME_HEIGHT, w1);

    // Round-half-up of (22 - centroid), with the centroid taken at pixel
    // centers; computed in integers so repeated application is exact.
    let mut n = 0i64;
    let mut twice_sum = 0i64;
    let (mut min_c, mut max_c) = (usize::MAX, 0usize);
    for r in 0..FRAME_HEIGHT {
        for c in 0..w1 {
            if scaled[r * w1 + c] {
                n += 1;
                twice_sum += 2 * c as i64 + 1;
                min_c = min_c.min(c);
                max_c = max_c.max(c);
            }
        }
    }
    let half = FRAME_WIDTH as i64 / 2;
    let mut shift = (2 * half * n - twice_sum + n).div_euclid(2 * n);
    // When the silhouette fits, keep it whole rather than centering exactly.
    if max_c - min_c < FRAME_WIDTH {
        shift = shift.clamp(-(min_c as i64), FRAME_WIDTH as i64 - 1 - max_c as i64);
    }

    let mut out = vec![0u8; FRAME_HEIGHT * FRAME_WIDTH];
    for r in 0..FRAME_HEIGHT {
        for c in 0..w1 {
            let dst = c as i64 + shift;
            if scaled[r * w1 + c] && (0..FRAME_WIDTH as i64).contains(&dst) {
                out[r * FRAME_WIDTH + dst as usize] = 1;
            }
        }
    }
    Some(out)
}

/// Foreground column centroid (pixel-center convention) of a normalized frame.
pub fn centroid_column(frame: &[u8], width: usize) -> Option<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for (i, &v) in frame.iter().enumerate() {
        if v != 0 {
            n += 1;
            sum += (i % width) as f64 + 0.5;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Wraps a normalized 0/1 frame as a white-on-black image.
pub fn frame_to_image(frame: &[u8]) -> GrayImage {
    GrayImage::new(FRAME_WIDTH, FRAME_HEIGHT, frame.iter().map(|&v| v * 255).collect())
        .expect("normalized frame size")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> GrayImage {
        let mut img = GrayImage::blank(w, h);
        for r in r0..r1 {
            for c in c0..c1 {
                img.set(r, c, 255);
            }
        }
        img
    }

    #[test]
    fn blank_frame_is_dropped() {
        assert!(preprocess_frame(&GrayImage::blank(10, 10)).is_none());
        let mut dim = GrayImage::blank(4, 4);
        dim.set(1, 1, 127);
        assert!(preprocess_frame(&dim).is_none());
    }

    #[test]
    fn full_white_rectangle_is_centered_block() {
        let out = preprocess_frame(&rect(20, 40, 0, 40, 0, 20)).unwrap();
        // Width 20 * 64 / 40 = 32 columns, centered on 22.
        for r in 0..FRAME_HEIGHT {
            let row = &out[r * FRAME_WIDTH..(r + 1) * FRAME_WIDTH];
            assert_eq!(row.iter().filter(|&&v| v == 1).count(), 32);
            assert_eq!(row[6], 1);
            assert_eq!(row[37], 1);
            assert_eq!(row[5], 0);
            assert_eq!(row[38], 0);
        }
        assert_eq!(centroid_column(&out, FRAME_WIDTH), Some(22.0));
    }

    #[test]
    fn canonical_frame_is_a_fixed_point() {
        let once = preprocess_frame(&rect(100, 80, 10, 70, 30, 50)).unwrap();
        let twice = preprocess_frame(&frame_to_image(&once)).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn values_are_binary() {
        let mut img = GrayImage::blank(30, 30);
        for i in 0..30 {
            img.set(i, (i * 7) % 30, 200);
            img.set(i, 15, 130);
        }
        let out = preprocess_frame(&img).unwrap();
        assert_eq!(out.len(), FRAME_HEIGHT * FRAME_WIDTH);
        assert!(out.iter().all(|&v| v <= 1));
        assert!(out[..FRAME_WIDTH].contains(&1));
        assert!(out[(FRAME_HEIGHT - 1) * FRAME_WIDTH..].contains(&1));
    }

    #[test]
    fn spans_tile_the_source() {
        for n_in in 1..40 {
            for n_out in 1..70 {
                let mut next = 0;
                for i in 0..n_out {
                    let (lo, hi) = span(i, n_in, n_out);
                    assert!(lo < hi && hi <= n_in);
                    assert!(lo <= next, "gap at {n_in}->{n_out}");
                    next = next.max(hi);
                }
                assert_eq!(next, n_in);
            }
        }
    }
}
