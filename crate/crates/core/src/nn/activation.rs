use ndarray::{Array4, Zip};

const LOG2E: f32 = std::f32::consts::LOG2_E;
const LN2_HI: f32 = 0.693_359_4;
const LN2_LO: f32 = -2.121_944_4e-4;
/// Adding and subtracting this rounds an f32 of magnitude below 2^22 to
/// the nearest integer, which is then readable from the low mantissa bits.
const ROUND: f32 = 12_582_912.0;

/// `exp(x)` to within about 2 ulp, written without branches so that loops
/// over it vectorize. Inputs are clamped to the finite, normal range.
#[inline(always)]
pub fn fast_exp(x: f32) -> f32 {
    let x = x.clamp(-87.0, 88.0);
    let shifted = x * LOG2E + ROUND;
    let n = shifted - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_2e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 0.5;
    let e = p * r * r + r + 1.0;
    let bits = shifted.to_bits().wrapping_sub(ROUND.to_bits()) as i32;
    e * f32::from_bits(((bits + 127) << 23) as u32)
}

/// `exp(x) - 1`, with a Taylor branch near zero to avoid cancellation.
#[inline(always)]
pub fn fast_exp_m1(x: f32) -> f32 {
    let mut t = 1.0f32 / 5040.0;
    t = t * x + 1.0 / 720.0;
    t = t * x + 1.0 / 120.0;
    t = t * x + 1.0 / 24.0;
    t = t * x + 1.0 / 6.0;
    t = t * x + 0.5;
    let small = (t * x + 1.0) * x;
    let large = fast_exp(x) - 1.0;
    if x.abs() < 0.25 {
        small
    } else {
        large
    }
}

/// CELU with alpha = 1, in place.
pub fn celu(x: &mut Array4<f32>) {
    let apply = |v: f32| if v > 0.0 { v } else { fast_exp_m1(v) };
    match x.as_slice_mut() {
        Some(s) => s.iter_mut().for_each(|v| *v = apply(*v)),
        None => x.mapv_inplace(apply),
    }
}

/// Gradient through CELU given its output; `y > 0` iff the input was positive.
pub fn celu_backward(y: &Array4<f32>, dy: &mut Array4<f32>) {
    Zip::from(dy).and(y).for_each(|d, &y| {
        let scale = if y > 0.0 { 1.0 } else { y + 1.0 };
        *d *= scale;
    });
}

pub fn sigmoid(x: &mut Array4<f32>) {
    x.mapv_inplace(|v| 1.0 / (1.0 + fast_exp(-v)));
}

pub fn sigmoid_backward(y: &Array4<f32>, dy: &mut Array4<f32>) {
    Zip::from(dy).and(y).for_each(|d, &s| *d *= s * (1.0 - s));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_tracks_libm() {
        let mut x = -87.0f32;
        while x < 88.0 {
            let want = (x as f64).exp();
            let got = fast_exp(x) as f64;
            assert!(((got - want) / want).abs() < 4e-7, "x={x}: {got} vs {want}");
            x += 0.0137;
        }
        assert_eq!(fast_exp(-1000.0), fast_exp(-87.0));
        assert!(fast_exp(1000.0).is_finite());
    }

    #[test]
    fn fast_exp_m1_tracks_libm() {
        let mut x = -30.0f32;
        while x < 3.0 {
            let want = (x as f64).exp_m1();
            let got = fast_exp_m1(x) as f64;
            let tol = 3e-7 * want.abs().max(1e-3);
            assert!((got - want).abs() < tol.max(1e-9), "x={x}: {got} vs {want}");
            x += 0.00713;
        }
        assert_eq!(fast_exp_m1(0.0), 0.0);
    }

    #[test]
    fn celu_gradient_matches_finite_difference() {
        let xs = [-2.0f32, -0.5, 0.3, 1.7];
        for &x0 in &xs {
            let mut y = Array4::from_elem((1, 1, 1, 1), x0);
            celu(&mut y);
            let mut d = Array4::from_elem((1, 1, 1, 1), 1.0f32);
            celu_backward(&y, &mut d);
            let h = 1e-3f64;
            let f = |x: f64| if x > 0.0 { x } else { x.exp_m1() };
            let fd = (f(x0 as f64 + h) - f(x0 as f64 - h)) / (2.0 * h);
            assert!((d[[0, 0, 0, 0]] as f64 - fd).abs() < 1e-4, "x={x0}");
        }
    }

    #[test]
    fn sigmoid_is_bounded() {
        let mut y = Array4::from_shape_vec((1, 1, 1, 3), vec![-30.0f32, 0.0, 30.0]).unwrap();
        sigmoid(&mut y);
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(y[[0, 0, 0, 1]], 0.5);
    }
}
