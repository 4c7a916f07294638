//! Layer kernels with explicit backward passes.
//!
//! Activations use the `[batch, channel, height, width]` layout in standard
//! (row-major) order. Every backward function takes the cache its forward
//! function produced.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView4, ArrayViewMut2, Axis};

pub const BN_EPS: f64 = 1e-5;

fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

fn weight_matrix(w: ArrayView4<f64>) -> Array2<f64> {
    let (co, ci, _, _) = w.dim();
    w.as_standard_layout()
        .into_owned()
        .into_shape_with_order((co, ci * 9))
        .expect("contiguous weight")
}

/// 3x3 convolution, stride 1, zero padding 1. `w` is `[out, in, 3, 3]`.
pub fn conv3x3_forward(x: &Array4<f64>, w: ArrayView4<f64>, b: ArrayView1<f64>) -> Array4<f64> {
    let (n, c, h, wd) = x.dim();
    let co = w.dim().0;
    let hw = h * wd;
    let wm = weight_matrix(w);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((n, co, h, wd));
    let mut cols = vec![0.0; c * 9 * hw];
    for (bi, mut ob) in out.axis_iter_mut(Axis(0)).enumerate() {
        im2col(&xs[bi * c * hw..(bi + 1) * c * hw], c, h, wd, &mut cols);
        let cv = ArrayView2::from_shape((c * 9, hw), &cols).expect("cols shape");
        let mut om: ArrayViewMut2<f64> = ob
            .view_mut()
            .into_shape_with_order((co, hw))
            .expect("contiguous output");
        for (mut row, &bias) in om.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row.fill(bias);
        }
        general_mat_mul(1.0, &wm, &cv, 1.0, &mut om);
    }
    out
}

pub struct ConvGrads {
    pub dx: Option<Array4<f64>>,
    pub dw: Array4<f64>,
    pub db: Array1<f64>,
}

pub fn conv3x3_backward(x: &Array4<f64>, w: ArrayView4<f64>, dy: &Array4<f64>, need_dx: bool) -> ConvGrads {
    let (n, c, h, wd) = x.dim();
    let co = w.dim().0;
    let hw = h * wd;
    let wm = weight_matrix(w);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let dy = dy.as_standard_layout();
    let mut dwm = Array2::<f64>::zeros((co, c * 9));
    let mut db = Array1::<f64>::zeros(co);
    let mut dx = need_dx.then(|| Array4::<f64>::zeros((n, c, h, wd)));
    let mut cols = vec![0.0; c * 9 * hw];
    let mut dcols = Array2::<f64>::zeros((c * 9, hw));
    for bi in 0..n {
        im2col(&xs[bi * c * hw..(bi + 1) * c * hw], c, h, wd, &mut cols);
        let cv = ArrayView2::from_shape((c * 9, hw), &cols).expect("cols shape");
        let g = dy
            .index_axis(Axis(0), bi)
            .into_shape_with_order((co, hw))
            .expect("contiguous gradient");
        general_mat_mul(1.0, &g, &cv.t(), 1.0, &mut dwm);
        db += &g.sum_axis(Axis(1));
        if let Some(dx) = dx.as_mut() {
            general_mat_mul(1.0, &wm.t(), &g, 0.0, &mut dcols);
            let dxs = dx.as_slice_mut().expect("fresh array");
            col2im(
                dcols.as_slice().expect("fresh array"),
                c,
                h,
                wd,
                &mut dxs[bi * c * hw..(bi + 1) * c * hw],
            );
        }
    }
    ConvGrads {
        dx,
        dw: dwm.into_shape_with_order((co, c, 3, 3)).expect("weight shape"),
        db,
    }
}

/// Where batch normalisation takes its statistics from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Statistics of the current batch (training).
    Batch,
    /// Stored running statistics (inference).
    Running,
}

pub struct BnCache {
    pub mode: BnMode,
    pub xhat: Array4<f64>,
    pub inv_std: Array1<f64>,
    /// Population mean and variance of the batch (batch mode only).
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

/// Batch normalisation over `(batch, height, width)` per channel, then ReLU.
pub fn bn_relu_forward(
    x: &Array4<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    running_mean: ArrayView1<f64>,
    running_var: ArrayView1<f64>,
    mode: BnMode,
) -> (Array4<f64>, BnCache) {
    let (n, c, h, w) = x.dim();
    let hw = h * w;
    let m = (n * hw) as f64;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut batch_mean = Array1::<f64>::zeros(c);
    let mut batch_var = Array1::<f64>::zeros(c);
    if mode == BnMode::Batch {
        for ci in 0..c {
            let mut sum = 0.0;
            for bi in 0..n {
                sum += xs[(bi * c + ci) * hw..][..hw].iter().sum::<f64>();
            }
            let mean = sum / m;
            let mut ss = 0.0;
            for bi in 0..n {
                ss += xs[(bi * c + ci) * hw..][..hw]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            batch_mean[ci] = mean;
            batch_var[ci] = ss / m;
        }
    }
    let (mean, var) = match mode {
        BnMode::Batch => (batch_mean.view(), batch_var.view()),
        BnMode::Running => (running_mean, running_var),
    };
    let inv_std: Array1<f64> = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut xhat = Array4::<f64>::zeros((n, c, h, w));
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    {
        let xh = xhat.as_slice_mut().expect("fresh array");
        let os = out.as_slice_mut().expect("fresh array");
        for bi in 0..n {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                let (mu, is, g, bt) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                for k in base..base + hw {
                    let v = (xs[k] - mu) * is;
                    xh[k] = v;
                    os[k] = (g * v + bt).max(0.0);
                }
            }
        }
    }
    (
        out,
        BnCache {
            mode,
            xhat,
            inv_std,
            batch_mean,
            batch_var,
        },
    )
}

pub struct BnGrads {
    pub dx: Array4<f64>,
    pub dgamma: Array1<f64>,
    pub dbeta: Array1<f64>,
}

pub fn bn_relu_backward(dy: &Array4<f64>, cache: &BnCache, gamma: ArrayView1<f64>, beta: ArrayView1<f64>) -> BnGrads {
    let (n, c, h, w) = cache.xhat.dim();
    let hw = h * w;
    let m = (n * hw) as f64;
    let dy = dy.as_standard_layout();
    let dys = dy.as_slice().expect("standard layout");
    let xh = cache.xhat.as_slice().expect("fresh array");
    // gradient through the ReLU, recomputing its mask from xhat
    let mut dz = vec![0.0; dys.len()];
    for bi in 0..n {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            let (g, bt) = (gamma[ci], beta[ci]);
            for k in base..base + hw {
                if g * xh[k] + bt > 0.0 {
                    dz[k] = dys[k];
                }
            }
        }
    }
    let mut dgamma = Array1::<f64>::zeros(c);
    let mut dbeta = Array1::<f64>::zeros(c);
    for bi in 0..n {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            for k in base..base + hw {
                dbeta[ci] += dz[k];
                dgamma[ci] += dz[k] * xh[k];
            }
        }
    }
    let mut dx = Array4::<f64>::zeros((n, c, h, w));
    let dxs = dx.as_slice_mut().expect("fresh array");
    for bi in 0..n {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            let scale = gamma[ci] * cache.inv_std[ci];
            match cache.mode {
                BnMode::Batch => {
                    let (sb, sg) = (dbeta[ci], dgamma[ci]);
                    for k in base..base + hw {
                        dxs[k] = scale / m * (m * dz[k] - sb - xh[k] * sg);
                    }
                }
                BnMode::Running => {
                    for k in base..base + hw {
                        dxs[k] = scale * dz[k];
                    }
                }
            }
        }
    }
    BnGrads { dx, dgamma, dbeta }
}

pub struct PoolCache {
    pub input_dim: (usize, usize, usize, usize),
    /// Winning position (0..4, row-major in the 2x2 window) per output cell.
    pub argmax: Vec<u8>,
}

/// 2x2 max-pool, stride 2; odd trailing rows/columns are dropped.
pub fn maxpool2_forward(x: &Array4<f64>) -> (Array4<f64>, PoolCache) {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((n, c, ho, wo));
    let mut argmax = vec![0u8; n * c * ho * wo];
    let os = out.as_slice_mut().expect("fresh array");
    for plane in 0..n * c {
        let src = &xs[plane * h * w..(plane + 1) * h * w];
        for y in 0..ho {
            for x0 in 0..wo {
                let cands = [
                    src[2 * y * w + 2 * x0],
                    src[2 * y * w + 2 * x0 + 1],
                    src[(2 * y + 1) * w + 2 * x0],
                    src[(2 * y + 1) * w + 2 * x0 + 1],
                ];
                let mut best = 0;
                for k in 1..4 {
                    if cands[k] > cands[best] {
                        best = k;
                    }
                }
                let o = plane * ho * wo + y * wo + x0;
                os[o] = cands[best];
                argmax[o] = best as u8;
            }
        }
    }
    (
        out,
        PoolCache {
            input_dim: (n, c, h, w),
            argmax,
        },
    )
}

pub fn maxpool2_backward(dy: &Array4<f64>, cache: &PoolCache) -> Array4<f64> {
    let (n, c, h, w) = cache.input_dim;
    let (ho, wo) = (h / 2, w / 2);
    let dy = dy.as_standard_layout();
    let dys = dy.as_slice().expect("standard layout");
    let mut dx = Array4::<f64>::zeros((n, c, h, w));
    let dxs = dx.as_slice_mut().expect("fresh array");
    for plane in 0..n * c {
        for y in 0..ho {
            for x0 in 0..wo {
                let o = plane * ho * wo + y * wo + x0;
                let k = cache.argmax[o] as usize;
                let (yy, xx) = (2 * y + k / 2, 2 * x0 + k % 2);
                dxs[plane * h * w + yy * w + xx] += dys[o];
            }
        }
    }
    dx
}

/// `x · wᵀ + b` for `x: [batch, in]`, `w: [out, in]`.
pub fn linear_forward(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    (dy.dot(&w), dy.t().dot(&x), dy.sum_axis(Axis(0)))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub struct GruStep {
    h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    ghn: Array2<f64>,
}

pub struct GruCache {
    pub input: Array3<f64>,
    steps: Vec<GruStep>,
}

pub struct GruParams<'a> {
    /// `[3H, D]`, gate blocks in reset, update, candidate order.
    pub w_ih: ArrayView2<'a, f64>,
    /// `[3H, H]`
    pub w_hh: ArrayView2<'a, f64>,
    pub b_ih: ArrayView1<'a, f64>,
    pub b_hh: ArrayView1<'a, f64>,
}

/// Single-layer GRU over `x: [time, batch, features]` from a zero state.
/// Returns every hidden state, `[time, batch, hidden]`.
pub fn gru_forward(x: &Array3<f64>, p: &GruParams) -> (Array3<f64>, GruCache) {
    let (t_len, n, _) = x.dim();
    let hd = p.w_hh.dim().1;
    let mut h = Array2::<f64>::zeros((n, hd));
    let mut hs = Array3::<f64>::zeros((t_len, n, hd));
    let mut steps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let gi = linear_forward(x.index_axis(Axis(0), t), p.w_ih, p.b_ih);
        let gh = linear_forward(h.view(), p.w_hh, p.b_hh);
        let r = (&gi.slice(s![.., 0..hd]) + &gh.slice(s![.., 0..hd])).mapv(sigmoid);
        let z = (&gi.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..2 * hd])).mapv(sigmoid);
        let ghn = gh.slice(s![.., 2 * hd..]).to_owned();
        let nn = (&gi.slice(s![.., 2 * hd..]) + &(&r * &ghn)).mapv(f64::tanh);
        let h_new = &nn + &(&z * &(&h - &nn));
        hs.index_axis_mut(Axis(0), t).assign(&h_new);
        steps.push(GruStep {
            h_prev: std::mem::replace(&mut h, h_new),
            r,
            z,
            n: nn,
            ghn,
        });
    }
    (
        hs,
        GruCache {
            input: x.clone(),
            steps,
        },
    )
}

pub struct GruGrads {
    pub dx: Array3<f64>,
    pub dw_ih: Array2<f64>,
    pub dw_hh: Array2<f64>,
    pub db_ih: Array1<f64>,
    pub db_hh: Array1<f64>,
}

/// `dhs` holds the loss gradient with respect to every returned hidden state.
pub fn gru_backward(dhs: &Array3<f64>, cache: &GruCache, p: &GruParams) -> GruGrads {
    let (t_len, n, d) = cache.input.dim();
    let hd = p.w_hh.dim().1;
    let mut g = GruGrads {
        dx: Array3::zeros((t_len, n, d)),
        dw_ih: Array2::zeros(p.w_ih.raw_dim()),
        dw_hh: Array2::zeros(p.w_hh.raw_dim()),
        db_ih: Array1::zeros(3 * hd),
        db_hh: Array1::zeros(3 * hd),
    };
    let mut dh_next = Array2::<f64>::zeros((n, hd));
    let mut dgi = Array2::<f64>::zeros((n, 3 * hd));
    let mut dgh = Array2::<f64>::zeros((n, 3 * hd));
    for t in (0..t_len).rev() {
        let st = &cache.steps[t];
        let dh = &dhs.index_axis(Axis(0), t) + &dh_next;
        let dn = &dh * &st.z.mapv(|z| 1.0 - z);
        let dz = &dh * &(&st.h_prev - &st.n);
        let dn_pre = &dn * &st.n.mapv(|v| 1.0 - v * v);
        let dr = &dn_pre * &st.ghn;
        let dr_pre = &dr * &st.r.mapv(|r| r * (1.0 - r));
        let dz_pre = &dz * &st.z.mapv(|z| z * (1.0 - z));
        dgi.slice_mut(s![.., 0..hd]).assign(&dr_pre);
        dgi.slice_mut(s![.., hd..2 * hd]).assign(&dz_pre);
        dgi.slice_mut(s![.., 2 * hd..]).assign(&dn_pre);
        dgh.slice_mut(s![.., 0..hd]).assign(&dr_pre);
        dgh.slice_mut(s![.., hd..2 * hd]).assign(&dz_pre);
        dgh.slice_mut(s![.., 2 * hd..]).assign(&(&dn_pre * &st.r));

        let xt = cache.input.index_axis(Axis(0), t);
        general_mat_mul(1.0, &dgi.t(), &xt, 1.0, &mut g.dw_ih);
        general_mat_mul(1.0, &dgh.t(), &st.h_prev, 1.0, &mut g.dw_hh);
        g.db_ih += &dgi.sum_axis(Axis(0));
        g.db_hh += &dgh.sum_axis(Axis(0));
        g.dx.index_axis_mut(Axis(0), t).assign(&dgi.dot(&p.w_ih));
        dh_next = &(&dh * &st.z) + &dgh.dot(&p.w_hh);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    /// Direct 3x3 same-padding convolution.
    fn conv_naive(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let co = w.dim().0;
        Array4::from_shape_fn((n, co, h, wd), |(bi, o, y, xx)| {
            let mut acc = b[o];
            for ci in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                            acc += w[[o, ci, ky, kx]] * x[[bi, ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    fn ramp(shape: (usize, usize, usize, usize), k: f64) -> Array4<f64> {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        Array::from_shape_vec(shape, (0..n).map(|i| ((i as f64) * k).sin()).collect()).unwrap()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = ramp((2, 3, 5, 7), 0.37);
        let w = ramp((4, 3, 3, 3), 0.91);
        let b = array![0.1, -0.2, 0.3, 0.0];
        let fast = conv3x3_forward(&x, w.view(), b.view());
        let slow = conv_naive(&x, &w, &b);
        assert!((&fast - &slow).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn conv_single_column_and_row() {
        let x = ramp((1, 2, 1, 4), 0.5);
        let w = ramp((3, 2, 3, 3), 0.3);
        let b = Array1::zeros(3);
        let slow = conv_naive(&x, &w, &b);
        assert!((&conv3x3_forward(&x, w.view(), b.view()) - &slow)
            .iter()
            .all(|v| v.abs() < 1e-12));
        let x = ramp((1, 2, 4, 1), 0.5);
        let slow = conv_naive(&x, &w, &b);
        assert!((&conv3x3_forward(&x, w.view(), b.view()) - &slow)
            .iter()
            .all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), dy> is linear in x and w, so its gradients are exact adjoints
        let x = ramp((2, 2, 4, 5), 0.7);
        let w = ramp((3, 2, 3, 3), 0.2);
        let dy = ramp((2, 3, 4, 5), 1.3);
        let g = conv3x3_backward(&x, w.view(), &dy, true);
        let dx = g.dx.unwrap();
        let zero_b = Array1::zeros(3);
        let f = |x: &Array4<f64>, w: &Array4<f64>| (conv_naive(x, w, &zero_b) * &dy).sum();
        // linearity: f(x, w) = <dx, x> = <dw, w>
        assert!((f(&x, &w) - (&dx * &x).sum()).abs() < 1e-9);
        assert!((f(&x, &w) - (&g.dw * &w).sum()).abs() < 1e-9);
        assert!((g.db.sum() - dy.sum()).abs() < 1e-9);
    }

    #[test]
    fn pool_floor_and_routing() {
        let x = Array4::from_shape_vec((1, 1, 3, 5), (0..15).map(|v| v as f64).collect()).unwrap();
        let (y, cache) = maxpool2_forward(&x);
        assert_eq!(y.dim(), (1, 1, 1, 2));
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![6.0, 8.0]);
        let dx = maxpool2_backward(&Array4::ones((1, 1, 1, 2)), &cache);
        assert_eq!(dx[[0, 0, 1, 1]], 1.0);
        assert_eq!(dx[[0, 0, 1, 3]], 1.0);
        assert_eq!(dx.sum(), 2.0);
    }

    #[test]
    fn bn_batch_output_is_standardised() {
        let x = ramp((3, 2, 4, 4), 0.77) * 5.0 + 2.0;
        let ones = Array1::ones(2);
        let zeros = Array1::zeros(2);
        let (_, cache) = bn_relu_forward(&x, ones.view(), zeros.view(), zeros.view(), ones.view(), BnMode::Batch);
        for c in 0..2 {
            let v = cache.xhat.index_axis(Axis(1), c);
            assert!(v.mean().unwrap().abs() < 1e-12);
            let var = v.mapv(|a| a * a).mean().unwrap();
            assert!((var - cache.batch_var[c] / (cache.batch_var[c] + BN_EPS)).abs() < 1e-9);
        }
    }

    #[test]
    fn gru_zero_weights_average_toward_zero() {
        let (t, n, d, h) = (3, 2, 4, 5);
        let w_ih = Array2::zeros((3 * h, d));
        let w_hh = Array2::zeros((3 * h, h));
        let b = Array1::zeros(3 * h);
        let p = GruParams {
            w_ih: w_ih.view(),
            w_hh: w_hh.view(),
            b_ih: b.view(),
            b_hh: b.view(),
        };
        let (hs, _) = gru_forward(&Array3::ones((t, n, d)), &p);
        assert!(hs.iter().all(|v| *v == 0.0));
    }
}
