use std::ops::Range;

use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayViewMut2, Axis};

use super::matmul::{matmul, matmul_into};
use rand::Rng;

/// Square kernel geometry shared by the forward and transposed convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Taps {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Taps {
    /// Range of grid positions `g` whose tap `t` lands inside `0..extent`,
    /// where the tap reads `g * stride + t - padding`.
    fn valid(&self, tap: usize, extent: usize, grid: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let offset = tap as isize - self.padding as isize;
        // smallest g with g*s + offset >= 0
        let lo = if offset >= 0 {
            0
        } else {
            ((-offset) + s - 1) / s
        };
        // largest g with g*s + offset <= extent - 1, exclusive bound
        let last = extent as isize - 1 - offset;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        let lo = lo.max(0) as usize;
        let hi = (hi.max(0) as usize).min(grid);
        (lo, hi.max(lo))
    }
}

pub fn conv_output_size(input: usize, taps: Taps) -> usize {
    (input + 2 * taps.padding - taps.kernel) / taps.stride + 1
}

/// For each tap `(ky, kx)`, the `(grid offset, pixel offset)` pairs within
/// one `(channel, batch)` plane where the tap lands inside the image.
fn tap_tables(taps: Taps, image: (usize, usize), grid: (usize, usize)) -> Vec<Vec<(u32, u32)>> {
    let (h, w) = image;
    let (gh, gw) = grid;
    let k = taps.kernel;
    let mut tables = Vec::with_capacity(k * k);
    for ky in 0..k {
        let (gy_lo, gy_hi) = taps.valid(ky, h, gh);
        for kx in 0..k {
            let (gx_lo, gx_hi) = taps.valid(kx, w, gw);
            let mut t = Vec::with_capacity((gy_hi - gy_lo) * (gx_hi - gx_lo));
            for gy in gy_lo..gy_hi {
                let iy = gy * taps.stride + ky - taps.padding;
                for gx in gx_lo..gx_hi {
                    let ix = gx * taps.stride + kx - taps.padding;
                    t.push(((gy * gw + gx) as u32, (iy * w + ix) as u32));
                }
            }
            tables.push(t);
        }
    }
    tables
}

/// Column blocks are capped near this many elements so that the gathered
/// taps stay in cache between the product and the scatter.
const BLOCK_ELEMENTS: usize = 1 << 20;

/// Batch items per column block for `rows` taps over `cells` grid cells.
fn block_items(rows: usize, cells: usize, batch: usize) -> usize {
    (BLOCK_ELEMENTS / (rows * cells).max(1)).clamp(1, batch.max(1))
}

fn batch_blocks(batch: usize, items: usize) -> impl Iterator<Item = Range<usize>> {
    (0..batch)
        .step_by(items.max(1))
        .map(move |b| b..(b + items).min(batch))
}

/// Columns for the batch items in `batches`; see [`im2col`].
fn gather(
    src: &[f32],
    dim: (usize, usize, usize, usize),
    tables: &[Vec<(u32, u32)>],
    cells: usize,
    batches: Range<usize>,
) -> Array2<f32> {
    let (channels, batch, h, w) = dim;
    let taps = tables.len();
    let ncols = batches.len() * cells;
    let mut col = Array2::<f32>::zeros((channels * taps, ncols));
    let dst = col.as_slice_mut().expect("standard layout");
    for (c, rows) in dst.chunks_exact_mut(taps * ncols).enumerate() {
        for (row, table) in rows.chunks_exact_mut(ncols).zip(tables) {
            for (b, out) in batches.clone().zip(row.chunks_exact_mut(cells)) {
                let plane = &src[(c * batch + b) * h * w..(c * batch + b + 1) * h * w];
                for &(g, i) in table {
                    out[g as usize] = plane[i as usize];
                }
            }
        }
    }
    col
}

/// Adds columns for the batch items in `batches` back onto `dst`.
fn scatter(
    col: &[f32],
    dst: &mut [f32],
    dim: (usize, usize, usize, usize),
    tables: &[Vec<(u32, u32)>],
    cells: usize,
    batches: Range<usize>,
) {
    let (_, batch, h, w) = dim;
    let taps = tables.len();
    let ncols = batches.len() * cells;
    for (c, rows) in col.chunks_exact(taps * ncols).enumerate() {
        for (row, table) in rows.chunks_exact(ncols).zip(tables) {
            for (b, from) in batches.clone().zip(row.chunks_exact(cells)) {
                let plane = &mut dst[(c * batch + b) * h * w..(c * batch + b + 1) * h * w];
                for &(g, i) in table {
                    plane[i as usize] += from[g as usize];
                }
            }
        }
    }
}

/// Gathers kernel taps into columns. Row `(c, ky, kx)` and column
/// `(b, gy, gx)` hold `src[c, b, gy*s + ky - p, gx*s + kx - p]`, zero when the
/// tap falls outside the source.
pub fn im2col(src: &Array4<f32>, taps: Taps, grid: (usize, usize)) -> Array2<f32> {
    let (_, batch, h, w) = src.dim();
    let src_std = src.as_standard_layout();
    let tables = tap_tables(taps, (h, w), grid);
    gather(
        src_std.as_slice().expect("standard layout"),
        src.dim(),
        &tables,
        grid.0 * grid.1,
        0..batch,
    )
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlapping taps.
pub fn col2im(
    col: ArrayView2<f32>,
    dim: (usize, usize, usize, usize),
    taps: Taps,
    grid: (usize, usize),
) -> Array4<f32> {
    let (channels, batch, h, w) = dim;
    let k = taps.kernel;
    assert_eq!(
        col.dim(),
        (channels * k * k, batch * grid.0 * grid.1),
        "col2im shape"
    );
    let col = col.as_standard_layout();
    let mut out = Array4::<f32>::zeros(dim);
    let tables = tap_tables(taps, (h, w), grid);
    scatter(
        col.as_slice().expect("standard layout"),
        out.as_slice_mut().expect("standard layout"),
        dim,
        &tables,
        grid.0 * grid.1,
        0..batch,
    );
    out
}

fn add_bias(y: &mut Array4<f32>, bias: &Array1<f32>) {
    for (mut plane, &b) in y.axis_iter_mut(Axis(0)).zip(bias) {
        plane += b;
    }
}

fn bias_grad(dy: &Array4<f32>) -> Array1<f32> {
    dy.axis_iter(Axis(0))
        .map(|plane| plane.iter().map(|&v| v as f64).sum::<f64>() as f32)
        .collect()
}

fn flat(x: &Array4<f32>) -> ArrayView2<'_, f32> {
    let (c, b, h, w) = x.dim();
    x.view()
        .into_shape_with_order((c, b * h * w))
        .expect("contiguous activation")
}

fn flat_mut(x: &mut Array4<f32>) -> ArrayViewMut2<'_, f32> {
    let (c, b, h, w) = x.dim();
    x.view_mut()
        .into_shape_with_order((c, b * h * w))
        .expect("contiguous activation")
}

fn columns(cells: usize, batches: &Range<usize>) -> Range<usize> {
    batches.start * cells..batches.end * cells
}

/// Strided 2-d convolution. Weight rows are output channels, columns are
/// `(input channel, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub taps: Taps,
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Conv2d {
    /// Uniform initialization in `±1/sqrt(fan_in)`.
    pub fn new(in_channels: usize, out_channels: usize, taps: Taps, rng: &mut impl Rng) -> Self {
        let k2 = taps.kernel * taps.kernel;
        let bound = 1.0 / ((in_channels * k2) as f32).sqrt();
        let weight = Array2::from_shape_fn((out_channels, in_channels * k2), |_| {
            rng.random_range(-bound..bound)
        });
        let bias = Array1::from_shape_fn(out_channels, |_| rng.random_range(-bound..bound));
        Conv2d {
            in_channels,
            out_channels,
            taps,
            weight,
            bias,
        }
    }

    pub fn output_dim(&self, input: (usize, usize)) -> (usize, usize) {
        (
            conv_output_size(input.0, self.taps),
            conv_output_size(input.1, self.taps),
        )
    }

    fn block(&self, x: &Array4<f32>) -> usize {
        let (oh, ow) = self.output_dim((x.dim().2, x.dim().3));
        block_items(self.weight.ncols(), oh * ow, x.dim().1)
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        self.forward_blocked(x, self.block(x))
    }

    fn forward_blocked(&self, x: &Array4<f32>, items: usize) -> Array4<f32> {
        let (c, batch, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_dim((h, w));
        let cells = oh * ow;
        let tables = tap_tables(self.taps, (h, w), (oh, ow));
        let src = x.as_slice().expect("standard layout");
        let mut y = Array4::<f32>::zeros((self.out_channels, batch, oh, ow));
        let mut y2 = flat_mut(&mut y);
        for blk in batch_blocks(batch, items) {
            let col = gather(src, x.dim(), &tables, cells, blk.clone());
            let out = y2.slice_mut(s![.., columns(cells, &blk)]);
            matmul_into(self.weight.view(), col.view(), out, false);
        }
        add_bias(&mut y, &self.bias);
        y
    }

    /// Returns `(dx, dweight, dbias)`; `dx` is skipped when not needed.
    pub fn backward(
        &self,
        x: &Array4<f32>,
        dy: &Array4<f32>,
        need_input_grad: bool,
    ) -> (Option<Array4<f32>>, Array2<f32>, Array1<f32>) {
        self.backward_blocked(x, dy, need_input_grad, self.block(x))
    }

    fn backward_blocked(
        &self,
        x: &Array4<f32>,
        dy: &Array4<f32>,
        need_input_grad: bool,
        items: usize,
    ) -> (Option<Array4<f32>>, Array2<f32>, Array1<f32>) {
        let (_, batch, oh, ow) = dy.dim();
        let (_, _, h, w) = x.dim();
        let cells = oh * ow;
        let tables = tap_tables(self.taps, (h, w), (oh, ow));
        let src = x.as_slice().expect("standard layout");
        let dy2 = flat(dy);
        let mut dweight = Array2::<f32>::zeros(self.weight.dim());
        let mut dx = need_input_grad.then(|| Array4::<f32>::zeros(x.dim()));
        for (n, blk) in batch_blocks(batch, items).enumerate() {
            let col = gather(src, x.dim(), &tables, cells, blk.clone());
            let dy_blk = dy2.slice(s![.., columns(cells, &blk)]);
            // Accumulating the transpose keeps both operands row-major.
            matmul_into(
                col.view(),
                dy_blk.t(),
                dweight.view_mut().reversed_axes(),
                n > 0,
            );
            if let Some(dx) = dx.as_mut() {
                let dcol = matmul(self.weight.t(), dy_blk);
                let dst = dx.as_slice_mut().expect("standard layout");
                scatter(
                    dcol.as_slice().expect("fresh product"),
                    dst,
                    x.dim(),
                    &tables,
                    cells,
                    blk,
                );
            }
        }
        (dx, dweight, bias_grad(dy))
    }
}

/// Transposed convolution with an explicit output size. Output pixel
/// `iy*s + ky - p` receives input pixel `iy` through tap `ky`; rows beyond the
/// natural output extent only receive the bias, rows before zero are cropped.
/// Weight rows are input channels, columns are `(output channel, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub taps: Taps,
    pub output_size: (usize, usize),
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl ConvTranspose2d {
    /// Uniform initialization in `±1/sqrt(out_channels * k * k)`.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        taps: Taps,
        output_size: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let k2 = taps.kernel * taps.kernel;
        let bound = 1.0 / ((out_channels * k2) as f32).sqrt();
        let weight = Array2::from_shape_fn((in_channels, out_channels * k2), |_| {
            rng.random_range(-bound..bound)
        });
        let bias = Array1::from_shape_fn(out_channels, |_| rng.random_range(-bound..bound));
        ConvTranspose2d {
            in_channels,
            out_channels,
            taps,
            output_size,
            weight,
            bias,
        }
    }

    /// Output extent without any size adjustment: `(n - 1) * s - 2p + k`.
    pub fn natural_size(&self, input: (usize, usize)) -> (isize, isize) {
        let f = |n: usize| {
            (n as isize - 1) * self.taps.stride as isize - 2 * self.taps.padding as isize
                + self.taps.kernel as isize
        };
        (f(input.0), f(input.1))
    }

    fn block(&self, x: &Array4<f32>) -> usize {
        block_items(self.weight.ncols(), x.dim().2 * x.dim().3, x.dim().1)
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        self.forward_blocked(x, self.block(x))
    }

    fn forward_blocked(&self, x: &Array4<f32>, items: usize) -> Array4<f32> {
        let (c, batch, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "transposed conv input channels");
        let (oh, ow) = self.output_size;
        let cells = h * w;
        let tables = tap_tables(self.taps, (oh, ow), (h, w));
        let x2 = flat(x);
        let dim = (self.out_channels, batch, oh, ow);
        let mut y = Array4::<f32>::zeros(dim);
        let dst = y.as_slice_mut().expect("standard layout");
        for blk in batch_blocks(batch, items) {
            let col = matmul(self.weight.t(), x2.slice(s![.., columns(cells, &blk)]));
            scatter(
                col.as_slice().expect("fresh product"),
                dst,
                dim,
                &tables,
                cells,
                blk,
            );
        }
        add_bias(&mut y, &self.bias);
        y
    }

    pub fn backward(
        &self,
        x: &Array4<f32>,
        dy: &Array4<f32>,
        need_input_grad: bool,
    ) -> (Option<Array4<f32>>, Array2<f32>, Array1<f32>) {
        self.backward_blocked(x, dy, need_input_grad, self.block(x))
    }

    fn backward_blocked(
        &self,
        x: &Array4<f32>,
        dy: &Array4<f32>,
        need_input_grad: bool,
        items: usize,
    ) -> (Option<Array4<f32>>, Array2<f32>, Array1<f32>) {
        let (_, batch, h, w) = x.dim();
        let cells = h * w;
        let (oh, ow) = self.output_size;
        let tables = tap_tables(self.taps, (oh, ow), (h, w));
        let src = dy.as_slice().expect("standard layout");
        let x2 = flat(x);
        let mut dweight = Array2::<f32>::zeros(self.weight.dim());
        let mut dx = need_input_grad.then(|| Array4::<f32>::zeros(x.dim()));
        for (n, blk) in batch_blocks(batch, items).enumerate() {
            let dcol = gather(src, dy.dim(), &tables, cells, blk.clone());
            let cols = columns(cells, &blk);
            matmul_into(
                x2.slice(s![.., cols.clone()]),
                dcol.t(),
                dweight.view_mut(),
                n > 0,
            );
            if let Some(dx) = dx.as_mut() {
                let out = flat_mut(dx);
                matmul_into(
                    self.weight.view(),
                    dcol.view(),
                    out.slice_move(s![.., cols]),
                    false,
                );
            }
        }
        (dx, dweight, bias_grad(dy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(dim: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f32> {
        Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution in f64.
    fn conv_oracle(layer: &Conv2d, x: &Array4<f32>) -> Array4<f64> {
        let (cin, b, h, w) = x.dim();
        let (oh, ow) = layer.output_dim((h, w));
        let k = layer.taps.kernel;
        let mut y = Array4::zeros((layer.out_channels, b, oh, ow));
        for o in 0..layer.out_channels {
            for n in 0..b {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = layer.bias[o] as f64;
                        for c in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * layer.taps.stride + ky) as isize
                                        - layer.taps.padding as isize;
                                    let ix = (ox * layer.taps.stride + kx) as isize
                                        - layer.taps.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += layer.weight[[o, (c * k + ky) * k + kx]] as f64
                                        * x[[c, n, iy as usize, ix as usize]] as f64;
                                }
                            }
                        }
                        y[[o, n, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    fn conv_t_oracle(layer: &ConvTranspose2d, x: &Array4<f32>) -> Array4<f64> {
        let (cin, b, h, w) = x.dim();
        let (oh, ow) = layer.output_size;
        let k = layer.taps.kernel;
        let mut y = Array4::zeros((layer.out_channels, b, oh, ow));
        for o in 0..layer.out_channels {
            y.index_axis_mut(Axis(0), o).fill(layer.bias[o] as f64);
        }
        for c in 0..cin {
            for n in 0..b {
                for iy in 0..h {
                    for ix in 0..w {
                        for o in 0..layer.out_channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let oy = (iy * layer.taps.stride + ky) as isize
                                        - layer.taps.padding as isize;
                                    let ox = (ix * layer.taps.stride + kx) as isize
                                        - layer.taps.padding as isize;
                                    if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                        continue;
                                    }
                                    y[[o, n, oy as usize, ox as usize]] +=
                                        layer.weight[[c, (o * k + ky) * k + kx]] as f64
                                            * x[[c, n, iy, ix]] as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn max_diff(a: &Array4<f32>, b: &Array4<f64>) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y).abs())
            .fold(0.0, f64::max)
    }

    const STRIDE3: Taps = Taps {
        kernel: 5,
        stride: 3,
        padding: 2,
    };

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Conv2d::new(4, 3, STRIDE3, &mut rng);
        let x = random((4, 2, 10, 13), &mut rng);
        let y = layer.forward(&x);
        assert_eq!(y.dim(), (3, 2, 4, 5));
        assert!(max_diff(&y, &conv_oracle(&layer, &x)) < 1e-5);
    }

    #[test]
    fn transposed_conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for target in [(10, 13), (11, 12), (12, 14)] {
            let layer = ConvTranspose2d::new(3, 2, STRIDE3, target, &mut rng);
            let x = random((3, 2, 4, 5), &mut rng);
            let y = layer.forward(&x);
            assert_eq!(y.dim(), (2, 2, target.0, target.1));
            assert!(max_diff(&y, &conv_t_oracle(&layer, &x)) < 1e-5);
        }
    }

    /// `<col2im(c), x> == <c, im2col(x)>` for random inputs.
    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let taps = Taps {
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        let dim = (2, 3, 7, 6);
        let grid = (conv_output_size(7, taps), conv_output_size(6, taps));
        let x = random(dim, &mut rng);
        let col = im2col(&x, taps, grid);
        let c = Array2::from_shape_fn(col.dim(), |_| rng.random_range(-1.0f32..1.0));
        let back = col2im(c.view(), dim, taps, grid);
        let lhs: f64 = back
            .iter()
            .zip(&x)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let rhs: f64 = c.iter().zip(&col).map(|(&a, &b)| a as f64 * b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn block_size_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conv = Conv2d::new(3, 4, STRIDE3, &mut rng);
        let x = random((3, 5, 11, 9), &mut rng);
        let y = conv.forward_blocked(&x, 5);
        let dy = random(y.dim(), &mut rng);
        let (dx, dw, _) = conv.backward_blocked(&x, &dy, true, 5);
        for items in [1, 2, 4] {
            assert!(max_diff(&conv.forward_blocked(&x, items), &y.mapv(f64::from)) < 1e-5);
            let (dx_b, dw_b, _) = conv.backward_blocked(&x, &dy, true, items);
            assert!(max_diff(&dx_b.unwrap(), &dx.clone().unwrap().mapv(f64::from)) < 1e-5);
            assert!((&dw_b - &dw).iter().all(|v| v.abs() < 1e-4));
        }

        let tconv = ConvTranspose2d::new(3, 2, STRIDE3, (11, 9), &mut rng);
        let x = random((3, 5, 4, 3), &mut rng);
        let y = tconv.forward_blocked(&x, 5);
        let dy = random(y.dim(), &mut rng);
        let (dx, dw, _) = tconv.backward_blocked(&x, &dy, true, 5);
        for items in [1, 2, 3] {
            assert!(max_diff(&tconv.forward_blocked(&x, items), &y.mapv(f64::from)) < 1e-5);
            let (dx_b, dw_b, _) = tconv.backward_blocked(&x, &dy, true, items);
            assert!(max_diff(&dx_b.unwrap(), &dx.clone().unwrap().mapv(f64::from)) < 1e-5);
            assert!((&dw_b - &dw).iter().all(|v| v.abs() < 1e-4));
        }
    }

    fn check_gradients<F>(params: &mut [f32], analytic: &[f32], mut loss: F)
    where
        F: FnMut(&[f32]) -> f64,
    {
        let h = 1e-2f32;
        for i in (0..params.len()).step_by(7) {
            let orig = params[i];
            params[i] = orig + h;
            let plus = loss(params);
            params[i] = orig - h;
            let minus = loss(params);
            params[i] = orig;
            let fd = (plus - minus) / (2.0 * h as f64);
            let a = analytic[i] as f64;
            assert!(
                (fd - a).abs() <= 1e-3 * (1.0 + a.abs()),
                "index {i}: fd {fd} analytic {a}"
            );
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = Conv2d::new(3, 2, STRIDE3, &mut rng);
        let x = random((3, 2, 8, 7), &mut rng);
        let y = layer.forward(&x);
        let dy = Array4::from_shape_fn(y.dim(), |_| rng.random_range(-1.0f32..1.0));
        let objective = |y: &Array4<f32>| -> f64 {
            y.iter().zip(&dy).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let (dx, dw, db) = layer.backward(&x, &dy, true);

        let mut xs = x.clone().into_raw_vec_and_offset().0;
        check_gradients(&mut xs, dx.unwrap().as_slice().unwrap(), |v| {
            let x = Array4::from_shape_vec(x.dim(), v.to_vec()).unwrap();
            objective(&layer.forward(&x))
        });
        let mut ws = layer.weight.as_slice().unwrap().to_vec();
        check_gradients(&mut ws, dw.as_slice().unwrap(), |v| {
            let mut l = layer.clone();
            l.weight = Array2::from_shape_vec(l.weight.dim(), v.to_vec()).unwrap();
            objective(&l.forward(&x))
        });
        let mut bs = layer.bias.to_vec();
        check_gradients(&mut bs, db.as_slice().unwrap(), |v| {
            let mut l = layer.clone();
            l.bias = Array1::from_vec(v.to_vec());
            objective(&l.forward(&x))
        });
    }

    #[test]
    fn transposed_conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = ConvTranspose2d::new(3, 2, STRIDE3, (8, 7), &mut rng);
        let x = random((3, 2, 3, 3), &mut rng);
        let y = layer.forward(&x);
        let dy = Array4::from_shape_fn(y.dim(), |_| rng.random_range(-1.0f32..1.0));
        let objective = |y: &Array4<f32>| -> f64 {
            y.iter().zip(&dy).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let (dx, dw, db) = layer.backward(&x, &dy, true);

        let mut xs = x.clone().into_raw_vec_and_offset().0;
        check_gradients(&mut xs, dx.unwrap().as_slice().unwrap(), |v| {
            let x = Array4::from_shape_vec(x.dim(), v.to_vec()).unwrap();
            objective(&layer.forward(&x))
        });
        let mut ws = layer.weight.as_slice().unwrap().to_vec();
        check_gradients(&mut ws, dw.as_slice().unwrap(), |v| {
            let mut l = layer.clone();
            l.weight = Array2::from_shape_vec(l.weight.dim(), v.to_vec()).unwrap();
            objective(&l.forward(&x))
        });
        let mut bs = layer.bias.to_vec();
        check_gradients(&mut bs, db.as_slice().unwrap(), |v| {
            let mut l = layer.clone();
            l.bias = Array1::from_vec(v.to_vec());
            objective(&l.forward(&x))
        });
    }
}
