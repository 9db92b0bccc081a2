//! Layer kernels with explicit backward passes. Activations are
//! `(freq, time, channels)` arrays in standard layout.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, ArrayViewMut3, Axis, Zip};

use super::{Pool, Real};
use crate::error::{Error, Result};

/// Kernel taps `dt0..dt1` that land inside `0..nt` around frame `t`.
fn time_span(t: usize, nt: usize, k: usize) -> (usize, usize) {
    let pad = k / 2;
    (pad.saturating_sub(t), k.min(nt + pad - t))
}

/// Same-padded patches of a `(F, T, C)` tensor. Row `f * T + t` holds the
/// `k x k x C` neighbourhood ordered `(df, dt, c)`.
pub(crate) fn im2col<R: Real>(x: ArrayView3<R>, k: usize) -> Array2<R> {
    let (nf, nt, c) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let width = k * k * c;
    let mut cols = Array2::zeros((nf * nt, width));
    let dst = cols.as_slice_mut().expect("fresh array");
    let pad = (k / 2) as isize;
    for f in 0..nf {
        for t in 0..nt {
            let row = &mut dst[(f * nt + t) * width..(f * nt + t + 1) * width];
            for df in 0..k {
                let ff = f as isize + df as isize - pad;
                if ff < 0 || ff >= nf as isize {
                    continue;
                }
                let (dt0, dt1) = time_span(t, nt, k);
                let tt = t + dt0 - pad as usize;
                let from = (ff as usize * nt + tt) * c;
                let to = (df * k + dt0) * c;
                let n = (dt1 - dt0) * c;
                row[to..to + n].copy_from_slice(&src[from..from + n]);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im<R: Real>(dcols: ArrayView2<R>, dims: (usize, usize, usize), k: usize) -> Array3<R> {
    let (nf, nt, c) = dims;
    let width = k * k * c;
    let dcols = dcols.as_standard_layout();
    let src = dcols.as_slice().expect("standard layout");
    let mut dx = Array3::zeros(dims);
    let dst = dx.as_slice_mut().expect("fresh array");
    let pad = (k / 2) as isize;
    for f in 0..nf {
        for t in 0..nt {
            let row = &src[(f * nt + t) * width..(f * nt + t + 1) * width];
            for df in 0..k {
                let ff = f as isize + df as isize - pad;
                if ff < 0 || ff >= nf as isize {
                    continue;
                }
                let (dt0, dt1) = time_span(t, nt, k);
                let tt = t + dt0 - pad as usize;
                let to = (ff as usize * nt + tt) * c;
                let from = (df * k + dt0) * c;
                let n = (dt1 - dt0) * c;
                for (d, s) in dst[to..to + n].iter_mut().zip(&row[from..from + n]) {
                    *d += *s;
                }
            }
        }
    }
    dx
}

/// `out = a·w + b` for row-major `a` of width `w.len() / b.len()`. Faster
/// than a general matmul for the narrow outputs used here.
fn affine_rows<R: Real>(a: &[R], w: &[R], b: &[R], out: &mut [R]) {
    let n = b.len();
    let k = w.len() / n;
    for (row, o) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        o.copy_from_slice(b);
        for (&v, wr) in row.iter().zip(w.chunks_exact(n)) {
            for (oj, &wj) in o.iter_mut().zip(wr) {
                *oj += v * wj;
            }
        }
    }
}

fn to3<R: Real>(a: Array2<R>, nf: usize, nt: usize) -> Array3<R> {
    let c = a.ncols();
    a.into_shape_with_order((nf, nt, c)).expect("row count is nf * nt")
}

fn as2<R: Real>(a: &Array3<R>) -> ArrayView2<'_, R> {
    let (nf, nt, c) = a.dim();
    a.view().into_shape_with_order((nf * nt, c)).expect("standard layout")
}

/// Standard same-padded convolution. `w` is `(k*k*Cin, Cout)`.
pub(crate) fn conv_forward<R: Real>(x: ArrayView3<R>, w: ArrayView2<R>, b: ArrayView1<R>, k: usize) -> (Array3<R>, Array2<R>) {
    let (nf, nt, _) = x.dim();
    let cols = im2col(x, k);
    let mut y = Array2::zeros((nf * nt, b.len()));
    let (w, b) = (w.as_standard_layout(), b.to_vec());
    affine_rows(
        cols.as_slice().expect("fresh array"),
        w.as_slice().expect("standard layout"),
        &b,
        y.as_slice_mut().expect("fresh array"),
    );
    (to3(y, nf, nt), cols)
}

pub(crate) fn conv_backward<R: Real>(
    cols: &Array2<R>,
    dy: &Array3<R>,
    w: ArrayView2<R>,
    in_dims: (usize, usize, usize),
    k: usize,
    mut gw: ArrayViewMut2<R>,
    mut gb: ArrayViewMut1<R>,
) -> Array3<R> {
    let dy2 = as2(dy);
    gw += &cols.t().dot(&dy2);
    gb += &dy2.sum_axis(Axis(0));
    col2im(dy2.dot(&w.t()).view(), in_dims, k)
}

/// Weights of one frequency-dynamic convolution.
///
/// `kernels` is `(K, k*k*Cin, Cout)` with patch rows ordered `(df, dt, c)`;
/// `biases` is `(K, Cout)`. The attention map is `(Cin, K)` plus a bias; it
/// may be omitted when `K == 1`.
#[derive(Debug, Clone)]
pub struct FdyParams<'a, R> {
    pub kernels: ArrayView3<'a, R>,
    pub biases: ArrayView2<'a, R>,
    pub attention: Option<(ArrayView2<'a, R>, ArrayView1<'a, R>)>,
    pub kernel: usize,
    pub temperature: f64,
}

pub(crate) struct FdyCache<R> {
    cols: Array2<R>,
    pooled: Array2<R>,
    attention: Array2<R>,
    in_dims: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct FdyOutput<R> {
    pub output: Array3<R>,
    /// Per-frequency mixing weights, `(F, K)`.
    pub attention: Array2<R>,
}

impl<R: Real> FdyParams<'_, R> {
    fn basis(&self) -> usize {
        self.kernels.dim().0
    }

    fn check(&self, cin: usize) -> Result<()> {
        let (nk, rows, cout) = self.kernels.dim();
        if nk < 1 {
            return Err(Error::invalid("FDY convolution needs K >= 1 basis kernels"));
        }
        if rows != self.kernel * self.kernel * cin {
            return Err(Error::Shape(format!(
                "kernel rows {rows} != {k}x{k}x{cin}",
                k = self.kernel
            )));
        }
        if self.biases.dim() != (nk, cout) {
            return Err(Error::Shape(format!("bias shape {:?} != ({nk}, {cout})", self.biases.dim())));
        }
        match &self.attention {
            Some((w, b)) if w.dim() != (cin, nk) || b.len() != nk => {
                Err(Error::Shape(format!("attention shape {:?} != ({cin}, {nk})", w.dim())))
            }
            None if nk > 1 => Err(Error::Shape("attention weights required when K > 1".into())),
            _ => Ok(()),
        }
    }

    fn effective(&self, a: ArrayView1<R>) -> (Array2<R>, Array1<R>) {
        let (_, rows, cout) = self.kernels.dim();
        let mut w = Array2::zeros((rows, cout));
        let mut b = Array1::zeros(cout);
        for (k, &ak) in a.iter().enumerate() {
            w.scaled_add(ak, &self.kernels.index_axis(Axis(0), k));
            b.scaled_add(ak, &self.biases.row(k));
        }
        (w, b)
    }
}

/// Frequency-dynamic convolution: at every frequency row the kernel is a
/// softmax-weighted mix of `K` basis kernels, with weights computed from the
/// time-averaged input at that frequency.
pub fn fdy_conv<R: Real>(x: ArrayView3<R>, p: &FdyParams<R>) -> Result<FdyOutput<R>> {
    p.check(x.dim().2)?;
    let (output, cache) = fdy_forward(x, p);
    Ok(FdyOutput {
        output,
        attention: cache.attention,
    })
}

/// Gradients of a scalar loss through one [`fdy_conv`] call.
#[derive(Debug, Clone)]
pub struct FdyGradients<R> {
    pub kernels: Array3<R>,
    pub biases: Array2<R>,
    pub attention: Option<(Array2<R>, Array1<R>)>,
    pub input: Array3<R>,
}

/// Backpropagates `dy` (gradient with respect to the output) through
/// [`fdy_conv`], recomputing the forward pass.
pub fn fdy_conv_backward<R: Real>(x: ArrayView3<R>, p: &FdyParams<R>, dy: &Array3<R>) -> Result<FdyGradients<R>> {
    p.check(x.dim().2)?;
    let (y, cache) = fdy_forward(x, p);
    if y.dim() != dy.dim() {
        return Err(Error::Shape(format!("output gradient {:?} != output {:?}", dy.dim(), y.dim())));
    }
    let mut kernels = Array3::zeros(p.kernels.dim());
    let mut biases = Array2::zeros(p.biases.dim());
    let mut attention = p.attention.as_ref().map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.len())));
    let input = {
        let mut g = FdyGrads {
            kernels: kernels.view_mut(),
            biases: biases.view_mut(),
            attention: attention.as_mut().map(|(w, b)| (w.view_mut(), b.view_mut())),
        };
        fdy_backward(p, &cache, dy, &mut g)
    };
    Ok(FdyGradients {
        kernels,
        biases,
        attention,
        input,
    })
}

fn softmax_rows<R: Real>(logits: &mut Array2<R>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(R::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub(crate) fn fdy_forward<R: Real>(x: ArrayView3<R>, p: &FdyParams<R>) -> (Array3<R>, FdyCache<R>) {
    let (nf, nt, cin) = x.dim();
    let nk = p.basis();
    let cout = p.kernels.dim().2;
    let pooled = x.mean_axis(Axis(1)).expect("time axis nonempty");
    let attention = match &p.attention {
        Some((w, b)) => {
            let mut logits = (pooled.dot(w) + b) * R::of(1.0 / p.temperature);
            softmax_rows(&mut logits);
            logits
        }
        None => Array2::ones((nf, nk)),
    };
    let cols = im2col(x, p.kernel);
    let width = cols.ncols();
    let mut y = Array3::zeros((nf, nt, cout));
    {
        let src = cols.as_slice().expect("fresh array");
        let dst = y.as_slice_mut().expect("fresh array");
        for f in 0..nf {
            let (w, b) = p.effective(attention.row(f));
            let (w, b) = (w.as_slice().expect("fresh array"), b.as_slice().expect("fresh array"));
            let rows = &src[f * nt * width..(f + 1) * nt * width];
            affine_rows(rows, w, b, &mut dst[f * nt * cout..(f + 1) * nt * cout]);
        }
    }
    let cache = FdyCache {
        cols,
        pooled,
        attention,
        in_dims: (nf, nt, cin),
    };
    (y, cache)
}

pub(crate) struct FdyGrads<'a, R> {
    pub kernels: ArrayViewMut3<'a, R>,
    pub biases: ArrayViewMut2<'a, R>,
    pub attention: Option<(ArrayViewMut2<'a, R>, ArrayViewMut1<'a, R>)>,
}

pub(crate) fn fdy_backward<R: Real>(p: &FdyParams<R>, cache: &FdyCache<R>, dy: &Array3<R>, g: &mut FdyGrads<R>) -> Array3<R> {
    let (nf, nt, cin) = cache.in_dims;
    let nk = p.basis();
    let rows = p.kernels.dim().1;
    let mut dcols = Array2::zeros((nf * nt, rows));
    let mut dpooled = Array2::<R>::zeros((nf, cin));
    for f in 0..nf {
        let a = cache.attention.row(f);
        let (w, _) = p.effective(a);
        let cols_f = cache.cols.slice(s![f * nt..(f + 1) * nt, ..]);
        let dy_f = dy.index_axis(Axis(0), f);
        let dw = cols_f.t().dot(&dy_f);
        let db = dy_f.sum_axis(Axis(0));
        dcols.slice_mut(s![f * nt..(f + 1) * nt, ..]).assign(&dy_f.dot(&w.t()));
        let mut da = Array1::<R>::zeros(nk);
        for k in 0..nk {
            g.kernels.index_axis_mut(Axis(0), k).scaled_add(a[k], &dw);
            g.biases.row_mut(k).scaled_add(a[k], &db);
            let wk = p.kernels.index_axis(Axis(0), k);
            da[k] = Zip::from(&wk).and(&dw).fold(R::zero(), |acc, &x, &y| acc + x * y) + p.biases.row(k).dot(&db);
        }
        if let (Some((aw, _)), Some((gw, gb))) = (&p.attention, g.attention.as_mut()) {
            let inner = a.dot(&da);
            let scale = R::of(1.0 / p.temperature);
            let dlogits = Zip::from(&a).and(&da).map_collect(|&ai, &di| ai * (di - inner) * scale);
            for (c, &pc) in cache.pooled.row(f).iter().enumerate() {
                gw.row_mut(c).scaled_add(pc, &dlogits);
            }
            *gb += &dlogits;
            dpooled.row_mut(f).assign(&aw.dot(&dlogits));
        }
    }
    let mut dx = col2im(dcols.view(), cache.in_dims, p.kernel);
    let inv_t = R::of(1.0 / nt as f64);
    for f in 0..nf {
        let dp = dpooled.row(f).mapv(|v| v * inv_t);
        for mut cell in dx.index_axis_mut(Axis(0), f).rows_mut() {
            cell += &dp;
        }
    }
    dx
}

pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

/// SiLU, `z * sigmoid(z)`.
pub(crate) fn silu_forward<R: Real>(z: &Array3<R>) -> Array3<R> {
    z.mapv(|v| v * sigmoid(v))
}

pub(crate) fn silu_backward<R: Real>(z: &Array3<R>, dy: &Array3<R>) -> Array3<R> {
    Zip::from(z).and(dy).map_collect(|&v, &d| {
        let s = sigmoid(v);
        d * s * (R::one() + v * (R::one() - s))
    })
}

fn pool_windows(len: usize, factor: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len.div_ceil(factor)).map(move |i| (i * factor, ((i + 1) * factor).min(len)))
}

/// Average pooling with ceil semantics; partial edge windows average only
/// the cells they cover.
pub(crate) fn avg_pool<R: Real>(x: &Array3<R>, pool: Pool) -> Array3<R> {
    let (nf, nt, c) = x.dim();
    let (of, ot) = (nf.div_ceil(pool.freq), nt.div_ceil(pool.time));
    let mut y = Array3::zeros((of, ot, c));
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let dst = y.as_slice_mut().expect("fresh array");
    for f in 0..nf {
        for t in 0..nt {
            let to = ((f / pool.freq) * ot + t / pool.time) * c;
            let from = (f * nt + t) * c;
            for (d, &v) in dst[to..to + c].iter_mut().zip(&src[from..from + c]) {
                *d += v;
            }
        }
    }
    for (i, (f0, f1)) in pool_windows(nf, pool.freq).enumerate() {
        for (j, (t0, t1)) in pool_windows(nt, pool.time).enumerate() {
            let inv = R::of(1.0 / ((f1 - f0) * (t1 - t0)) as f64);
            let at = (i * ot + j) * c;
            dst[at..at + c].iter_mut().for_each(|v| *v *= inv);
        }
    }
    y
}

pub(crate) fn avg_pool_backward<R: Real>(dy: &Array3<R>, in_dims: (usize, usize, usize), pool: Pool) -> Array3<R> {
    let (nf, nt, c) = in_dims;
    let (of, ot, _) = dy.dim();
    let mut scaled = dy.as_standard_layout().into_owned();
    {
        let g = scaled.as_slice_mut().expect("standard layout");
        for (i, (f0, f1)) in pool_windows(nf, pool.freq).enumerate().take(of) {
            for (j, (t0, t1)) in pool_windows(nt, pool.time).enumerate().take(ot) {
                let inv = R::of(1.0 / ((f1 - f0) * (t1 - t0)) as f64);
                let at = (i * ot + j) * c;
                g[at..at + c].iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    let g = scaled.as_slice().expect("standard layout");
    let mut dx = Array3::zeros(in_dims);
    let dst = dx.as_slice_mut().expect("fresh array");
    for f in 0..nf {
        for t in 0..nt {
            let from = ((f / pool.freq) * ot + t / pool.time) * c;
            let to = (f * nt + t) * c;
            dst[to..to + c].copy_from_slice(&g[from..from + c]);
        }
    }
    dx
}

/// `(F, T, C)` to a `(T, F*C)` sequence, frequency-major within a frame.
pub(crate) fn to_sequence<R: Real>(x: &Array3<R>) -> Array2<R> {
    let (nf, nt, c) = x.dim();
    let mut seq = Array2::zeros((nt, nf * c));
    for f in 0..nf {
        seq.slice_mut(s![.., f * c..(f + 1) * c]).assign(&x.index_axis(Axis(0), f));
    }
    seq
}

pub(crate) fn from_sequence<R: Real>(seq: &Array2<R>, nf: usize) -> Array3<R> {
    let (nt, width) = seq.dim();
    let c = width / nf;
    let mut x = Array3::zeros((nf, nt, c));
    for f in 0..nf {
        x.index_axis_mut(Axis(0), f).assign(&seq.slice(s![.., f * c..(f + 1) * c]));
    }
    x
}

/// One direction of a GRU layer, gates ordered `[r | z | n]`:
///
/// r = σ(x·Wr + br + h·Ur + cr), z = σ(x·Wz + bz + h·Uz + cz),
/// n = tanh(x·Wn + bn + r ⊙ (h·Un + cn)), h' = (1 - z) ⊙ n + z ⊙ h.
pub(crate) struct GruWeights<'a, R> {
    /// `(I, 3H)`
    pub w_ih: ArrayView2<'a, R>,
    /// `(H, 3H)`
    pub w_hh: ArrayView2<'a, R>,
    pub b_ih: ArrayView1<'a, R>,
    pub b_hh: ArrayView1<'a, R>,
}

pub(crate) struct GruGrads<'a, R> {
    pub w_ih: ArrayViewMut2<'a, R>,
    pub w_hh: ArrayViewMut2<'a, R>,
    pub b_ih: ArrayViewMut1<'a, R>,
    pub b_hh: ArrayViewMut1<'a, R>,
}

pub(crate) struct GruCache<R> {
    x: Array2<R>,
    /// Gate activations `[r | z | n]` per step.
    gates: Array2<R>,
    /// Recurrent part of the candidate pre-activation, `h·Un + cn`.
    hn: Array2<R>,
    h_prev: Array2<R>,
    reverse: bool,
}

fn step_order(len: usize, reverse: bool) -> impl DoubleEndedIterator<Item = usize> {
    (0..len).map(move |i| if reverse { len - 1 - i } else { i })
}

pub(crate) fn gru_forward<R: Real>(x: Array2<R>, w: &GruWeights<R>, reverse: bool) -> (Array2<R>, GruCache<R>) {
    let nt = x.nrows();
    let h3 = w.w_hh.ncols();
    let nh = h3 / 3;
    let gi = x.dot(&w.w_ih) + &w.b_ih;
    let mut out = Array2::zeros((nt, nh));
    let mut gates = Array2::zeros((nt, h3));
    let mut hn = Array2::zeros((nt, nh));
    let mut h_prev = Array2::zeros((nt, nh));
    let mut h = Array1::<R>::zeros(nh);
    let w_hh = w.w_hh.as_standard_layout();
    let w_hh = w_hh.as_slice().expect("standard layout");
    let b_hh = w.b_hh.to_vec();
    let mut gh = vec![R::zero(); h3];
    for t in step_order(nt, reverse) {
        affine_rows(h.as_slice().expect("fresh array"), w_hh, &b_hh, &mut gh);
        h_prev.row_mut(t).assign(&h);
        for j in 0..nh {
            let r = sigmoid(gi[[t, j]] + gh[j]);
            let z = sigmoid(gi[[t, nh + j]] + gh[nh + j]);
            let n = (gi[[t, 2 * nh + j]] + r * gh[2 * nh + j]).tanh();
            gates[[t, j]] = r;
            gates[[t, nh + j]] = z;
            gates[[t, 2 * nh + j]] = n;
            hn[[t, j]] = gh[2 * nh + j];
            h[j] = (R::one() - z) * n + z * h[j];
        }
        out.row_mut(t).assign(&h);
    }
    let cache = GruCache {
        x,
        gates,
        hn,
        h_prev,
        reverse,
    };
    (out, cache)
}

pub(crate) fn gru_backward<R: Real>(w: &GruWeights<R>, cache: &GruCache<R>, dout: &Array2<R>, g: &mut GruGrads<R>) -> Array2<R> {
    let (nt, nh) = dout.dim();
    let mut dgi = Array2::<R>::zeros((nt, 3 * nh));
    let mut dgh = Array1::<R>::zeros(3 * nh);
    let mut dh = Array1::<R>::zeros(nh);
    for t in step_order(nt, cache.reverse).rev() {
        dh += &dout.row(t);
        let mut dh_prev = Array1::<R>::zeros(nh);
        for j in 0..nh {
            let (r, z, n) = (cache.gates[[t, j]], cache.gates[[t, nh + j]], cache.gates[[t, 2 * nh + j]]);
            let hp = cache.h_prev[[t, j]];
            let dn = dh[j] * (R::one() - z);
            let dz = dh[j] * (hp - n);
            dh_prev[j] = dh[j] * z;
            let dn_pre = dn * (R::one() - n * n);
            let dr = dn_pre * cache.hn[[t, j]];
            let dr_pre = dr * r * (R::one() - r);
            let dz_pre = dz * z * (R::one() - z);
            dgi[[t, j]] = dr_pre;
            dgi[[t, nh + j]] = dz_pre;
            dgi[[t, 2 * nh + j]] = dn_pre;
            dgh[j] = dr_pre;
            dgh[nh + j] = dz_pre;
            dgh[2 * nh + j] = dn_pre * r;
        }
        let hp = cache.h_prev.row(t);
        for (i, &h) in hp.iter().enumerate() {
            g.w_hh.row_mut(i).scaled_add(h, &dgh);
        }
        g.b_hh += &dgh;
        dh = dh_prev + w.w_hh.dot(&dgh);
    }
    g.w_ih += &cache.x.t().dot(&dgi);
    g.b_ih += &dgi.sum_axis(Axis(0));
    dgi.dot(&w.w_ih.t())
}

/// Linear-softmax clip pooling, `Σp² / Σp` per class over frames.
pub(crate) fn linear_softmax<R: Real>(p: &Array2<R>) -> Array1<R> {
    let s1 = p.sum_axis(Axis(0));
    let s2 = p.mapv(|v| v * v).sum_axis(Axis(0));
    s2 / s1
}

/// Adds the clip-level gradient onto frame probabilities:
/// ∂c/∂p_t = (2 p_t − c) / Σp.
pub(crate) fn linear_softmax_backward<R: Real>(p: &Array2<R>, clip: &Array1<R>, dclip: ArrayView1<R>, dframe: &mut Array2<R>) {
    let s1 = p.sum_axis(Axis(0));
    for (t, row) in p.rows().into_iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            dframe[[t, k]] += dclip[k] * (R::of(2.0) * v - clip[k]) / s1[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array, Array4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random3(dims: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct nested-loop same-padded convolution; `w` indexed `[df][dt][c][o]`.
    fn direct_conv(x: &Array3<f64>, w: &Array4<f64>, b: &Array1<f64>) -> Array3<f64> {
        let (nf, nt, _) = x.dim();
        let (k, _, cin, cout) = w.dim();
        let p = (k / 2) as isize;
        Array3::from_shape_fn((nf, nt, cout), |(f, t, o)| {
            let mut acc = b[o];
            for df in 0..k {
                for dt in 0..k {
                    let (ff, tt) = (f as isize + df as isize - p, t as isize + dt as isize - p);
                    if ff < 0 || tt < 0 || ff >= nf as isize || tt >= nt as isize {
                        continue;
                    }
                    for c in 0..cin {
                        acc += x[[ff as usize, tt as usize, c]] * w[[df, dt, c, o]];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_loops() {
        let x = random3((5, 7, 3), 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let w4 = Array4::from_shape_fn((3, 3, 3, 4), |_| rng.gen_range(-1.0..1.0));
        let b = array![0.1, -0.2, 0.3, 0.0];
        let w = w4.clone().into_shape_with_order((27, 4)).unwrap();
        let (y, _) = conv_forward(x.view(), w.view(), b.view(), 3);
        let oracle = direct_conv(&x, &w4, &b);
        for (a, e) in y.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let x = random3((4, 6, 2), 3);
        let cols = im2col(x.view(), 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let c = Array2::from_shape_fn(cols.dim(), |_| rng.gen_range(-1.0..1.0));
        let lhs = (&cols * &c).sum();
        let rhs = (&x * &col2im(c.view(), x.dim(), 3)).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    fn fdy_params<'a>(
        kernels: &'a Array3<f64>,
        biases: &'a Array2<f64>,
        attn: Option<(&'a Array2<f64>, &'a Array1<f64>)>,
        temperature: f64,
    ) -> FdyParams<'a, f64> {
        FdyParams {
            kernels: kernels.view(),
            biases: biases.view(),
            attention: attn.map(|(w, b)| (w.view(), b.view())),
            kernel: 3,
            temperature,
        }
    }

    #[test]
    fn single_basis_is_standard_convolution() {
        let x = random3((4, 5, 2), 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let w = Array2::from_shape_fn((18, 3), |_| rng.gen_range(-1.0..1.0));
        let b = array![0.5, -0.5, 0.25];
        let kernels = w.clone().insert_axis(Axis(0));
        let biases = b.clone().insert_axis(Axis(0));
        let aw = Array2::from_elem((2, 1), 0.7);
        let ab = array![0.3];
        let plain = conv_forward(x.view(), w.view(), b.view(), 3).0;
        for attn in [None, Some((&aw, &ab))] {
            let out = fdy_conv(x.view(), &fdy_params(&kernels, &biases, attn, 1.0)).unwrap();
            assert!(out.attention.iter().all(|&a| a == 1.0));
            for (a, e) in out.output.iter().zip(plain.iter()) {
                assert_abs_diff_eq!(a, e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn infinite_temperature_uses_the_mean_kernel() {
        let x = random3((3, 4, 2), 7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let kernels = Array3::from_shape_fn((3, 18, 2), |_| rng.gen_range(-1.0..1.0));
        let biases = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
        let aw = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-3.0..3.0));
        let ab = array![1.0, -2.0, 0.5];
        let out = fdy_conv(x.view(), &fdy_params(&kernels, &biases, Some((&aw, &ab)), f64::INFINITY)).unwrap();
        let mean_w = kernels.mean_axis(Axis(0)).unwrap();
        let mean_b = biases.mean_axis(Axis(0)).unwrap();
        let plain = conv_forward(x.view(), mean_w.view(), mean_b.view(), 3).0;
        for (a, e) in out.output.iter().zip(plain.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_single_row() {
        // One frequency bin, three frames, one channel: x = [1, 2, 3].
        // Only the centre frequency row of each 3x3 kernel sees data.
        let x = Array3::from_shape_vec((1, 3, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let mut kernels = Array3::zeros((2, 9, 1));
        // basis 0: taps (left, centre, right) = (1, 0, 0); basis 1: (0, 0, 2)
        kernels[[0, 3, 0]] = 1.0;
        kernels[[1, 5, 0]] = 2.0;
        let biases = array![[0.5], [-1.0]];
        // logits = mean(x) * w + b = 2 * [0, 1] + [0, 0] = [0, 2]
        let aw = array![[0.0, 1.0]];
        let ab = array![0.0, 0.0];
        let out = fdy_conv(x.view(), &fdy_params(&kernels, &biases, Some((&aw, &ab)), 1.0)).unwrap();
        let a1 = 2f64.exp() / (1.0 + 2f64.exp());
        let a0 = 1.0 - a1;
        // t=0: left=0, right=2 ; t=1: left=1, right=3 ; t=2: left=2, right=0
        let expected = [
            a0 * (0.0 + 0.5) + a1 * (2.0 * 2.0 - 1.0),
            a0 * (1.0 + 0.5) + a1 * (2.0 * 3.0 - 1.0),
            a0 * (2.0 + 0.5) + a1 * (0.0 - 1.0),
        ];
        for (got, want) in out.output.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn pooling_is_ceil_mode_average() {
        let x = Array::from_shape_vec((1, 5, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = avg_pool(&x, Pool::new(2, 1));
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![1.5, 3.5, 5.0]);
        let dx = avg_pool_backward(&Array3::<f64>::ones((1, 3, 1)), (1, 5, 1), Pool::new(2, 1));
        assert_eq!(dx.iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn sequence_reshape_round_trips() {
        let x = random3((3, 4, 2), 9);
        let seq = to_sequence(&x);
        assert_eq!(seq[[1, 2 * 2 + 1]], x[[2, 1, 1]]);
        assert_eq!(from_sequence(&seq, 3), x);
    }

    #[test]
    fn constant_frames_pool_to_the_constant() {
        let p = Array2::from_shape_fn((9, 3), |(_, k)| 0.2 + 0.3 * k as f64);
        let c = linear_softmax(&p);
        for k in 0..3 {
            assert_abs_diff_eq!(c[k], 0.2 + 0.3 * k as f64, epsilon = 1e-15);
        }
    }

    #[test]
    fn fdy_backward_matches_finite_differences() {
        use crate::model::grad_check_params;
        let (nf, nt, cin, cout, nk) = (4, 5, 2, 3, 3);
        let sizes = [nk * 9 * cin * cout, nk * cout, cin * nk, nk, nf * nt * cin];
        let total: usize = sizes.iter().sum();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let theta: Vec<f64> = (0..total).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights = Array3::from_shape_fn((nf, nt, cout), |_| rng.gen_range(-1.0..1.0));
        let unpack = |t: &[f64]| {
            let mut off = 0;
            let mut take = |n: usize| {
                let v = t[off..off + n].to_vec();
                off += n;
                v
            };
            (
                Array3::from_shape_vec((nk, 9 * cin, cout), take(sizes[0])).unwrap(),
                Array2::from_shape_vec((nk, cout), take(sizes[1])).unwrap(),
                Array2::from_shape_vec((cin, nk), take(sizes[2])).unwrap(),
                Array1::from(take(sizes[3])),
                Array3::from_shape_vec((nf, nt, cin), take(sizes[4])).unwrap(),
            )
        };
        let run = |t: &[f64], want_grad: bool| {
            let (k, b, aw, ab, x) = unpack(t);
            let p = fdy_params(&k, &b, Some((&aw, &ab)), 0.7);
            let y = fdy_conv(x.view(), &p).unwrap().output;
            let loss = 0.5 * (&weights * &y * &y).sum();
            if !want_grad {
                return (loss, Vec::new());
            }
            let g = fdy_conv_backward(x.view(), &p, &(&weights * &y)).unwrap();
            let (gaw, gab) = g.attention.unwrap();
            let flat = g.kernels.iter().chain(g.biases.iter()).chain(gaw.iter()).chain(gab.iter()).chain(g.input.iter()).copied().collect();
            (loss, flat)
        };
        let report = grad_check_params(&theta, |t| Ok(run(t, false).0), |t| Ok(run(t, true).1), 1e-5, 3).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    proptest! {
        #[test]
        fn attention_rows_are_on_the_simplex(seed in 0u64..500, nk in 1usize..5) {
            let x = random3((6, 5, 2), seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 1);
            let kernels = Array3::from_shape_fn((nk, 18, 2), |_| rng.gen_range(-1.0..1.0));
            let biases = Array2::zeros((nk, 2));
            let aw = Array2::from_shape_fn((2, nk), |_| rng.gen_range(-5.0..5.0));
            let ab = Array1::from_shape_fn(nk, |_| rng.gen_range(-5.0..5.0));
            let out = fdy_conv(x.view(), &fdy_params(&kernels, &biases, Some((&aw, &ab)), 0.5)).unwrap();
            for row in out.attention.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&a| (0.0..=1.0).contains(&a)));
            }
        }
    }
}

