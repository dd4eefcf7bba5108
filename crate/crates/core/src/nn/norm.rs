use ndarray::{Array1, Array2, Array4};

/// Group normalization over `[channels, batch, h, w]` activations with a
/// per-channel affine transform.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub eps: f32,
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
}

#[derive(Debug, Clone)]
pub struct GroupNormCache {
    normalized: Array4<f32>,
    /// `[batch, groups]`
    inv_std: Array2<f32>,
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize) -> Self {
        assert!(
            groups >= 1 && channels % groups == 0,
            "groups must divide channels"
        );
        GroupNorm {
            channels,
            groups,
            eps: 1e-5,
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
        }
    }

    pub fn forward(&self, x: &Array4<f32>) -> (Array4<f32>, GroupNormCache) {
        let (c, batch, h, w) = x.dim();
        assert_eq!(c, self.channels, "group norm channels");
        let per_group = c / self.groups;
        let plane = h * w;
        let count = (per_group * plane) as f64;
        let src = x.as_slice().expect("standard layout");
        let at = |ch: usize, b: usize| (ch * batch + b) * plane..(ch * batch + b + 1) * plane;

        let mut normalized = Array4::<f32>::zeros(x.dim());
        let mut y = Array4::<f32>::zeros(x.dim());
        let mut inv_std = Array2::<f32>::zeros((batch, self.groups));
        {
            let norm = normalized.as_slice_mut().expect("standard layout");
            let out = y.as_slice_mut().expect("standard layout");
            for b in 0..batch {
                for g in 0..self.groups {
                    let channels = g * per_group..(g + 1) * per_group;
                    let sum: f64 = channels
                        .clone()
                        .map(|ch| lane_sum(&src[at(ch, b)], |v| v))
                        .sum();
                    let mean = sum / count;
                    let m = mean as f32;
                    let sq: f64 = channels
                        .clone()
                        .map(|ch| lane_sum(&src[at(ch, b)], |v| (v - m) * (v - m)))
                        .sum();
                    let istd = (1.0 / (sq / count + self.eps as f64).sqrt()) as f32;
                    inv_std[[b, g]] = istd;
                    for ch in channels {
                        let (gm, bt) = (self.gamma[ch], self.beta[ch]);
                        let range = at(ch, b);
                        for ((n, o), &v) in norm[range.clone()]
                            .iter_mut()
                            .zip(&mut out[range.clone()])
                            .zip(&src[range])
                        {
                            *n = (v - m) * istd;
                            *o = *n * gm + bt;
                        }
                    }
                }
            }
        }

        (
            y,
            GroupNormCache {
                normalized,
                inv_std,
            },
        )
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(
        &self,
        cache: &GroupNormCache,
        dy: &Array4<f32>,
    ) -> (Array4<f32>, Array1<f32>, Array1<f32>) {
        let (c, batch, h, w) = dy.dim();
        let per_group = c / self.groups;
        let plane = h * w;
        let count = (per_group * plane) as f64;
        let xhat = cache.normalized.as_slice().expect("standard layout");
        let dys = dy.as_slice().expect("standard layout");
        let at = |ch: usize, b: usize| (ch * batch + b) * plane..(ch * batch + b + 1) * plane;

        // Per-plane sums of dy and dy * xhat, shared by all three gradients.
        let mut sum_d = Array2::<f64>::zeros((c, batch));
        let mut sum_dx = Array2::<f64>::zeros((c, batch));
        for ch in 0..c {
            for b in 0..batch {
                let (d, n) = (&dys[at(ch, b)], &xhat[at(ch, b)]);
                sum_d[[ch, b]] = lane_sum(d, |v| v);
                sum_dx[[ch, b]] = lane_dot(d, n);
            }
        }
        let dgamma: Array1<f32> = sum_dx.rows().into_iter().map(|r| r.sum() as f32).collect();
        let dbeta: Array1<f32> = sum_d.rows().into_iter().map(|r| r.sum() as f32).collect();

        let mut dx = Array4::<f32>::zeros(dy.dim());
        let out = dx.as_slice_mut().expect("standard layout");
        for b in 0..batch {
            for g in 0..self.groups {
                let channels = g * per_group..(g + 1) * per_group;
                let (mut gd, mut gdx) = (0.0f64, 0.0f64);
                for ch in channels.clone() {
                    let gm = self.gamma[ch] as f64;
                    gd += gm * sum_d[[ch, b]];
                    gdx += gm * sum_dx[[ch, b]];
                }
                let istd = cache.inv_std[[b, g]];
                let mean_d = (gd / count) as f32;
                let mean_dx = (gdx / count) as f32;
                for ch in channels {
                    let range = at(ch, b);
                    let gm = self.gamma[ch];
                    for ((o, &d), &n) in out[range.clone()]
                        .iter_mut()
                        .zip(&dys[range.clone()])
                        .zip(&xhat[range])
                    {
                        *o = istd * (d * gm - mean_d - n * mean_dx);
                    }
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

const LANES: usize = 16;

/// Sum of `f(v)` using independent f32 lanes, so the loop vectorizes, with
/// the lanes combined in f64.
fn lane_sum(xs: &[f32], f: impl Fn(f32) -> f32) -> f64 {
    let mut acc = [0.0f32; LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().map(|&v| f(v) as f64).sum();
    for chunk in chunks {
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a += f(v);
        }
    }
    acc.iter().map(|&a| a as f64).sum::<f64>() + tail
}

fn lane_dot(xs: &[f32], ys: &[f32]) -> f64 {
    let mut acc = [0.0f32; LANES];
    let xc = xs.chunks_exact(LANES);
    let yc = ys.chunks_exact(LANES);
    let tail: f64 = xc
        .remainder()
        .iter()
        .zip(yc.remainder())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    for (a, b) in xc.zip(yc) {
        for ((s, &x), &y) in acc.iter_mut().zip(a).zip(b) {
            *s += x * y;
        }
    }
    acc.iter().map(|&a| a as f64).sum::<f64>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_groups_have_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array4::from_shape_fn((4, 2, 3, 3), |_| rng.random_range(-3.0f32..5.0));
        let norm = GroupNorm::new(4, 2);
        let (y, _) = norm.forward(&x);
        for b in 0..2 {
            for g in 0..2 {
                let vals: Vec<f64> = (g * 2..g * 2 + 2)
                    .flat_map(|c| y.slice(ndarray::s![c, b, .., ..]).to_owned().into_iter())
                    .map(|v| v as f64)
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                assert!(mean.abs() < 1e-5);
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array4::from_shape_fn((4, 2, 3, 2), |_| rng.random_range(-1.0f32..1.0));
        let mut norm = GroupNorm::new(4, 2);
        norm.gamma = Array1::from_shape_fn(4, |_| rng.random_range(0.5f32..1.5));
        norm.beta = Array1::from_shape_fn(4, |_| rng.random_range(-0.5f32..0.5));
        let dy = Array4::from_shape_fn(x.dim(), |_| rng.random_range(-1.0f32..1.0));
        let objective = |x: &Array4<f32>, n: &GroupNorm| -> f64 {
            let (y, _) = n.forward(x);
            y.iter().zip(&dy).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let (_, cache) = norm.forward(&x);
        let (dx, dgamma, dbeta) = norm.backward(&cache, &dy);
        let h = 1e-2f32;
        for idx in [(0, 0, 0, 0), (1, 1, 2, 1), (3, 0, 1, 1), (2, 1, 0, 0)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (objective(&xp, &norm) - objective(&xm, &norm)) / (2.0 * h as f64);
            assert!(
                (fd - dx[idx] as f64).abs() < 2e-3,
                "{idx:?}: {fd} vs {}",
                dx[idx]
            );
        }
        for ch in 0..4 {
            let mut np = norm.clone();
            np.gamma[ch] += h;
            let mut nm = norm.clone();
            nm.gamma[ch] -= h;
            let fd = (objective(&x, &np) - objective(&x, &nm)) / (2.0 * h as f64);
            assert!((fd - dgamma[ch] as f64).abs() < 1e-3);
            let mut np = norm.clone();
            np.beta[ch] += h;
            let mut nm = norm.clone();
            nm.beta[ch] -= h;
            let fd = (objective(&x, &np) - objective(&x, &nm)) / (2.0 * h as f64);
            assert!((fd - dbeta[ch] as f64).abs() < 1e-3);
        }
    }
}
