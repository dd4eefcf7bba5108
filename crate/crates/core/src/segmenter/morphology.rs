//! Binary morphology with square structuring elements.
//!
//! Pixels outside the image count as background for both operators: dilation
//! never pulls foreground in from outside, and erosion fails wherever the
//! element leaves the image.

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};

use crate::data_io::Mask;

pub const CLOSING_SIZE: usize = 5;
pub const OPENING_SIZE: usize = 7;

/// Foreground counts over the `2r+1` window centred on each position,
/// with zero padding.
fn window_counts(line: ArrayView1<bool>, r: usize, counts: &mut Vec<usize>) {
    let n = line.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &v in line {
        prefix.push(prefix.last().unwrap() + usize::from(v));
    }
    counts.clear();
    counts.extend((0..n).map(|i| prefix[(i + r + 1).min(n)] - prefix[i.saturating_sub(r)]));
}

fn pass(mask: &Mask, axis: Axis, size: usize, erode: bool) -> Mask {
    assert!(size % 2 == 1, "structuring element must have odd size");
    let r = size / 2;
    let mut out = Array2::from_elem(mask.dim(), false);
    let mut counts = Vec::new();
    for (src, mut dst) in mask.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        window_counts(src, r, &mut counts);
        write_lane(&mut dst, &counts, size, erode);
    }
    out
}

fn write_lane(dst: &mut ArrayViewMut1<bool>, counts: &[usize], size: usize, erode: bool) {
    for (d, &c) in dst.iter_mut().zip(counts) {
        *d = if erode { c == size } else { c > 0 };
    }
}

pub fn dilate(mask: &Mask, size: usize) -> Mask {
    pass(&pass(mask, Axis(1), size, false), Axis(0), size, false)
}

pub fn erode(mask: &Mask, size: usize) -> Mask {
    pass(&pass(mask, Axis(1), size, true), Axis(0), size, true)
}

pub fn close(mask: &Mask, size: usize) -> Mask {
    erode(&dilate(mask, size), size)
}

pub fn open(mask: &Mask, size: usize) -> Mask {
    dilate(&erode(mask, size), size)
}

/// Closing with a 5×5 square followed by opening with a 7×7 square.
pub fn morph_close_open(mask: &Mask) -> Mask {
    open(&close(mask, CLOSING_SIZE), OPENING_SIZE)
}
