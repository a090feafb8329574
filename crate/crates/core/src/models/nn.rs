//! Small dense/convolution primitives with hand-derived backward passes.
//!
//! Kernels are odd-length and same-padded with zeros. The input-gradient of a
//! convolution is again a convolution with the kernel flipped along its tap
//! axis, which the tests check against a direct oracle.

use ndarray::{Array1, Array2, Array3};

/// `y[o, t] = b[o] + sum_{i,k} w[o, i, k] * x[i, t + k - pad]`, zero padded.
pub fn conv1d_forward(w: &Array3<f64>, b: &Array1<f64>, x: &Array2<f64>) -> Array2<f64> {
    let (out_ch, in_ch, k) = w.dim();
    let (xc, len) = x.dim();
    debug_assert_eq!(xc, in_ch);
    debug_assert_eq!(b.len(), out_ch);
    let pad = (k - 1) / 2;
    let mut y = Array2::<f64>::zeros((out_ch, len));
    for o in 0..out_ch {
        let mut row = y.row_mut(o);
        let yo = row.as_slice_mut().expect("contiguous row");
        yo.fill(b[o]);
        for i in 0..in_ch {
            let xi = x.row(i);
            let xi = xi.to_slice().expect("contiguous row");
            for kk in 0..k {
                let wv = w[[o, i, kk]];
                if wv == 0.0 {
                    continue;
                }
                shifted_axpy(yo, xi, kk as isize - pad as isize, wv);
            }
        }
    }
    y
}

/// Input cotangent of [`conv1d_forward`]: convolution of the output cotangent
/// with the tap-flipped kernel.
pub fn conv1d_grad_input(w: &Array3<f64>, y_cot: &Array2<f64>) -> Array2<f64> {
    let (out_ch, in_ch, k) = w.dim();
    let (yc, len) = y_cot.dim();
    debug_assert_eq!(yc, out_ch);
    let pad = (k - 1) / 2;
    let mut x_cot = Array2::<f64>::zeros((in_ch, len));
    for i in 0..in_ch {
        let mut row = x_cot.row_mut(i);
        let xi = row.as_slice_mut().expect("contiguous row");
        for o in 0..out_ch {
            let go = y_cot.row(o);
            let go = go.to_slice().expect("contiguous row");
            for kk in 0..k {
                let wv = w[[o, i, kk]];
                if wv == 0.0 {
                    continue;
                }
                shifted_axpy(xi, go, pad as isize - kk as isize, wv);
            }
        }
    }
    x_cot
}

/// Weight and bias cotangents of [`conv1d_forward`].
pub fn conv1d_grad_weights(
    w_shape: (usize, usize, usize),
    x: &Array2<f64>,
    y_cot: &Array2<f64>,
) -> (Array3<f64>, Array1<f64>) {
    let (out_ch, in_ch, k) = w_shape;
    let len = x.ncols();
    let pad = (k - 1) / 2;
    let mut w_grad = Array3::<f64>::zeros(w_shape);
    let mut b_grad = Array1::<f64>::zeros(out_ch);
    for o in 0..out_ch {
        let go = y_cot.row(o);
        let go = go.to_slice().expect("contiguous row");
        b_grad[o] = go.iter().sum();
        for i in 0..in_ch {
            let xi = x.row(i);
            let xi = xi.to_slice().expect("contiguous row");
            for kk in 0..k {
                let shift = kk as isize - pad as isize;
                w_grad[[o, i, kk]] = shifted_dot(go, xi, shift, len);
            }
        }
    }
    (w_grad, b_grad)
}

// dst[t] += scale * src[t + shift] over the valid overlap.
fn shifted_axpy(dst: &mut [f64], src: &[f64], shift: isize, scale: f64) {
    let len = dst.len();
    let (d0, s0, n) = overlap(shift, len);
    let d = &mut dst[d0..d0 + n];
    let s = &src[s0..s0 + n];
    for (dv, sv) in d.iter_mut().zip(s.iter()) {
        *dv += scale * sv;
    }
}

// sum_t a[t] * b[t + shift] over the valid overlap.
fn shifted_dot(a: &[f64], b: &[f64], shift: isize, len: usize) -> f64 {
    let (a0, b0, n) = overlap(shift, len);
    a[a0..a0 + n]
        .iter()
        .zip(b[b0..b0 + n].iter())
        .map(|(x, y)| x * y)
        .sum()
}

// Index ranges so that dst[d0..d0+n] aligns with src[d0+shift..].
fn overlap(shift: isize, len: usize) -> (usize, usize, usize) {
    let d0 = (-shift).max(0) as usize;
    let s0 = shift.max(0) as usize;
    if d0 >= len || s0 >= len {
        return (0, 0, 0);
    }
    let n = len - d0.max(s0);
    (d0, s0, n)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn kernel3(taps: [f64; 3]) -> Array3<f64> {
        Array3::from_shape_vec((1, 1, 3), taps.to_vec()).unwrap()
    }

    #[test]
    fn conv_hand_example() {
        // y[t] = 1*x[t-1] + 2*x[t] + 3*x[t+1], zero padded
        let w = kernel3([1.0, 2.0, 3.0]);
        let b = Array1::zeros(1);
        let x = arr2(&[[1.0, 0.0, 0.0, 2.0]]);
        let y = conv1d_forward(&w, &b, &x);
        assert_eq!(
            y.row(0).to_vec(),
            vec![
                2.0 * 1.0,             // 1*pad + 2*1 + 3*0
                1.0 * 1.0,             // 1*1 + 2*0 + 3*0
                3.0 * 2.0,             // 1*0 + 2*0 + 3*2
                2.0 * 2.0              // 1*0 + 2*2 + 3*pad
            ]
        );
    }

    #[test]
    fn grad_input_is_flipped_kernel_convolution() {
        // Direct oracle: convolve the cotangent with the flipped kernel.
        let w = kernel3([0.5, -1.0, 2.0]);
        let flipped = kernel3([2.0, -1.0, 0.5]);
        let b = Array1::zeros(1);
        let g = arr2(&[[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]]);
        let got = conv1d_grad_input(&w, &g);
        let oracle = conv1d_forward(&flipped, &b, &g);
        for (a, e) in got.iter().zip(oracle.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_vjp_matches_inner_product_identity() {
        // <conv(x), g> == <x, grad_input(g)> and weight grads match finite
        // differences on a multi-channel case.
        use crate::rng::StreamSeed;
        use rand::Rng;
        let mut rng = StreamSeed::new(5).derive("nn-test").rng();
        let mut rnd = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (out_ch, in_ch, k, len) = (3usize, 2usize, 5usize, 40usize);
        let w = Array3::from_shape_vec((out_ch, in_ch, k), rnd(out_ch * in_ch * k)).unwrap();
        let b = Array1::from_vec(rnd(out_ch));
        let x = Array2::from_shape_vec((in_ch, len), rnd(in_ch * len)).unwrap();
        let g = Array2::from_shape_vec((out_ch, len), rnd(out_ch * len)).unwrap();

        let y = conv1d_forward(&w, &b, &x);
        let x_cot = conv1d_grad_input(&w, &g);
        let lhs: f64 = y.iter().zip(g.iter()).map(|(a, c)| a * c).sum::<f64>()
            - b.iter()
                .enumerate()
                .map(|(o, bo)| bo * g.row(o).sum())
                .sum::<f64>();
        let rhs: f64 = x.iter().zip(x_cot.iter()).map(|(a, c)| a * c).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");

        // weight gradient against central differences on a few taps
        let (w_grad, b_grad) = conv1d_grad_weights((out_ch, in_ch, k), &x, &g);
        let loss = |w: &Array3<f64>, b: &Array1<f64>| -> f64 {
            conv1d_forward(w, b, &x)
                .iter()
                .zip(g.iter())
                .map(|(a, c)| a * c)
                .sum()
        };
        let h = 1e-6;
        for idx in [(0, 0, 0), (1, 1, 2), (2, 0, 4)] {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fd = (loss(&wp, &b) - loss(&wm, &b)) / (2.0 * h);
            assert!((fd - w_grad[idx]).abs() < 1e-6, "tap {idx:?}");
        }
        for o in 0..out_ch {
            let mut bp = b.clone();
            bp[o] += h;
            let mut bm = b.clone();
            bm[o] -= h;
            let fd = (loss(&w, &bp) - loss(&w, &bm)) / (2.0 * h);
            assert!((fd - b_grad[o]).abs() < 1e-6);
        }
    }
}
