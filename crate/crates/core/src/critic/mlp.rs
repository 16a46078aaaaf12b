//! Two-tower MLP critic: a state encoder and an action encoder, each
//! `Linear -> ReLU -> Linear`, joined by a `Linear -> ReLU -> Linear` head
//! whose output passes through `-softplus`, so every value is negative like
//! a log-probability.
//!
//! Training runs in f64 with hand-written backpropagation. Inference uses
//! [`FusedMlp`], an f32 snapshot in which the linear action-encoder output is
//! folded into the head so that each putative action costs one `h x h`
//! product.

use matrixmultiply::{dgemm, sgemm};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};

pub const DEFAULT_HIDDEN: usize = 64;
const CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    offset: usize,
    inputs: usize,
    outputs: usize,
}

// Indices into `MlpShape::layers`.
const S1: usize = 0;
const S2: usize = 1;
const A1: usize = 2;
const A2: usize = 3;
const H1: usize = 4;
const H2: usize = 5;

impl MlpShape {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self { state_dim, action_dim, hidden: DEFAULT_HIDDEN }
    }

    fn layers(&self) -> [Linear; 6] {
        let h = self.hidden;
        let dims = [(self.state_dim, h), (h, h), (self.action_dim, h), (h, h), (2 * h, h), (h, 1)];
        let mut offset = 0;
        dims.map(|(inputs, outputs)| {
            let layer = Linear { offset, inputs, outputs };
            offset += inputs * outputs + outputs;
            layer
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Linear::len).sum()
    }
}

impl Linear {
    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.inputs * self.outputs]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.inputs * self.outputs;
        &p[start..start + self.outputs]
    }

    /// `z = x W^T + b` for `rows` input rows.
    fn forward(&self, p: &[f64], x: &[f64], rows: usize, z: &mut Vec<f64>) {
        let (k, n) = (self.inputs, self.outputs);
        debug_assert_eq!(x.len(), rows * k);
        z.clear();
        for _ in 0..rows {
            z.extend_from_slice(self.bias(p));
        }
        if rows == 0 {
            return;
        }
        let w = self.weights(p);
        // SAFETY: dimensions and strides describe the row-major buffers above.
        unsafe {
            dgemm(
                rows,
                k,
                n,
                1.0,
                x.as_ptr(),
                k as isize,
                1,
                w.as_ptr(),
                1,
                k as isize,
                1.0,
                z.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    /// Accumulates `dL/dW` and `dL/db` into `grad` and optionally writes
    /// `dL/dx`.
    fn backward(&self, p: &[f64], x: &[f64], dz: &[f64], rows: usize, grad: &mut [f64], dx: Option<&mut Vec<f64>>) {
        let (k, n) = (self.inputs, self.outputs);
        if rows == 0 {
            return;
        }
        let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(k * n);
        // SAFETY: as in `forward`.
        unsafe {
            dgemm(
                n,
                rows,
                k,
                1.0,
                dz.as_ptr(),
                1,
                n as isize,
                x.as_ptr(),
                k as isize,
                1,
                1.0,
                gw.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        for row in dz.chunks_exact(n) {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(rows * k, 0.0);
            let w = self.weights(p);
            // SAFETY: as in `forward`.
            unsafe {
                dgemm(
                    rows,
                    n,
                    k,
                    1.0,
                    dz.as_ptr(),
                    n as isize,
                    1,
                    w.as_ptr(),
                    k as isize,
                    1,
                    0.0,
                    dx.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

#[inline(always)]
fn neg_softplus(z: f64) -> f64 {
    -(z.max(0.0) + (-z.abs()).exp().ln_1p())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mask_relu(d: &mut [f64], activated: &[f64]) {
    d.iter_mut().zip(activated).for_each(|(d, &a)| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Activations kept for the backward pass.
#[derive(Default)]
struct Cache {
    rows: usize,
    hs1: Vec<f64>,
    ha1: Vec<f64>,
    cat: Vec<f64>,
    hh1: Vec<f64>,
    logit: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCritic {
    pub shape: MlpShape,
    pub params: Vec<f64>,
}

impl MlpCritic {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(shape: MlpShape, rng: &mut R) -> Self {
        let mut params = vec![0.0; shape.param_count()];
        for layer in shape.layers() {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            params[layer.offset..layer.offset + layer.len()]
                .iter_mut()
                .for_each(|p| *p = rng.random_range(-bound..bound));
        }
        Self { shape, params }
    }

    pub fn from_params(shape: MlpShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(SmcError::ShapeMismatch { expected: shape.param_count(), got: params.len() });
        }
        Ok(Self { shape, params })
    }

    fn run(&self, xs: &[f64], us: &[f64]) -> Cache {
        let s = &self.shape;
        let rows = xs.len() / s.state_dim;
        assert_eq!(xs.len(), rows * s.state_dim, "state batch has the wrong width");
        assert_eq!(us.len(), rows * s.action_dim, "action batch has the wrong width");
        let l = s.layers();
        let p = &self.params;
        let h = s.hidden;
        let mut c = Cache { rows, ..Cache::default() };
        let mut es = Vec::new();
        let mut ea = Vec::new();
        l[S1].forward(p, xs, rows, &mut c.hs1);
        relu_in_place(&mut c.hs1);
        l[S2].forward(p, &c.hs1, rows, &mut es);
        l[A1].forward(p, us, rows, &mut c.ha1);
        relu_in_place(&mut c.ha1);
        l[A2].forward(p, &c.ha1, rows, &mut ea);
        c.cat.reserve(rows * 2 * h);
        for r in 0..rows {
            c.cat.extend_from_slice(&es[r * h..(r + 1) * h]);
            c.cat.extend_from_slice(&ea[r * h..(r + 1) * h]);
        }
        l[H1].forward(p, &c.cat, rows, &mut c.hh1);
        relu_in_place(&mut c.hh1);
        l[H2].forward(p, &c.hh1, rows, &mut c.logit);
        c
    }

    /// Outputs for row-major state features `xs` and action features `us`.
    pub fn forward(&self, xs: &[f64], us: &[f64]) -> Vec<f64> {
        self.run(xs, us).logit.into_iter().map(neg_softplus).collect()
    }

    /// Zeroes the final weights and sets its bias, so that every input maps
    /// to `-softplus(bias)`.
    pub fn constant_output(&mut self, bias: f64) {
        let l = self.shape.layers()[H2];
        self.params[l.offset..l.offset + l.len()].iter_mut().for_each(|p| *p = 0.0);
        let b = l.offset + l.len() - 1;
        self.params[b] = bias;
    }

    /// Accumulates `Σ_i dout[i] ∂q_i/∂params` into `grad`.
    pub fn backward(&self, xs: &[f64], us: &[f64], dout: &[f64], grad: &mut [f64]) {
        let c = self.run(xs, us);
        assert_eq!(dout.len(), c.rows);
        assert_eq!(c.logit.len(), c.rows);
        assert_eq!(grad.len(), self.params.len());
        let l = self.shape.layers();
        let p = &self.params;
        let h = self.shape.hidden;
        let rows = c.rows;

        let d_logit: Vec<f64> = dout.iter().zip(&c.logit).map(|(d, &z)| -d * sigmoid(z)).collect();
        let mut d_hh1 = Vec::new();
        l[H2].backward(p, &c.hh1, &d_logit, rows, grad, Some(&mut d_hh1));
        mask_relu(&mut d_hh1, &c.hh1);
        let mut d_cat = Vec::new();
        l[H1].backward(p, &c.cat, &d_hh1, rows, grad, Some(&mut d_cat));
        let mut d_es = Vec::with_capacity(rows * h);
        let mut d_ea = Vec::with_capacity(rows * h);
        for row in d_cat.chunks_exact(2 * h) {
            d_es.extend_from_slice(&row[..h]);
            d_ea.extend_from_slice(&row[h..]);
        }
        let mut d_hidden = Vec::new();
        l[S2].backward(p, &c.hs1, &d_es, rows, grad, Some(&mut d_hidden));
        mask_relu(&mut d_hidden, &c.hs1);
        l[S1].backward(p, xs, &d_hidden, rows, grad, None);
        l[A2].backward(p, &c.ha1, &d_ea, rows, grad, Some(&mut d_hidden));
        mask_relu(&mut d_hidden, &c.ha1);
        l[A1].backward(p, us, &d_hidden, rows, grad, None);
    }

    pub fn fused(&self) -> FusedMlp {
        FusedMlp::new(self)
    }
}

/// f32 inference snapshot of an [`MlpCritic`].
#[derive(Clone, Debug)]
pub struct FusedMlp {
    shape: MlpShape,
    s1_w: Vec<f32>,
    s1_b: Vec<f32>,
    s2_w: Vec<f32>,
    s2_b: Vec<f32>,
    /// First action layer, transposed to `action_dim x h`.
    a1_wt: Vec<f32>,
    a1_b: Vec<f32>,
    /// State half of the first head layer.
    head_state: Vec<f32>,
    /// `W_head_action · W_a2`.
    mixed: Vec<f32>,
    /// `W_head_action · b_a2 + b_head`.
    head_bias: Vec<f32>,
    out_w: Vec<f32>,
    out_b: f32,
}

fn to_f32(xs: &[f64]) -> Vec<f32> {
    xs.iter().map(|&x| x as f32).collect()
}

fn matvec(w: &[f32], x: &[f32], b: &[f32], out: &mut [f32]) {
    let k = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(k).zip(b)) {
        *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>();
    }
}

impl FusedMlp {
    pub fn new(mlp: &MlpCritic) -> Self {
        let s = mlp.shape;
        let h = s.hidden;
        let l = s.layers();
        let p = &mlp.params;
        let hw = l[H1].weights(p);
        let a2w = l[A2].weights(p);
        let a2b = l[A2].bias(p);
        let mut mixed = vec![0.0f64; h * h];
        // SAFETY: the action half of the head weights is an `h x h` block
        // with row stride `2h`; `a2w` and `mixed` are `h x h` row-major.
        unsafe {
            dgemm(
                h,
                h,
                h,
                1.0,
                hw.as_ptr().add(h),
                2 * h as isize,
                1,
                a2w.as_ptr(),
                h as isize,
                1,
                0.0,
                mixed.as_mut_ptr(),
                h as isize,
                1,
            );
        }
        let mut head_state = Vec::with_capacity(h * h);
        let mut head_bias = Vec::with_capacity(h);
        for o in 0..h {
            let row = &hw[o * 2 * h..(o + 1) * 2 * h];
            head_state.extend(row[..h].iter().map(|&w| w as f32));
            let b: f64 = row[h..].iter().zip(a2b).map(|(w, b)| w * b).sum();
            head_bias.push((b + l[H1].bias(p)[o]) as f32);
        }
        let mixed = to_f32(&mixed);
        Self {
            shape: s,
            s1_w: to_f32(l[S1].weights(p)),
            s1_b: to_f32(l[S1].bias(p)),
            s2_w: to_f32(l[S2].weights(p)),
            s2_b: to_f32(l[S2].bias(p)),
            a1_wt: {
                let w = l[A1].weights(p);
                let da = s.action_dim;
                (0..da).flat_map(|d| (0..h).map(move |j| w[j * da + d] as f32)).collect()
            },
            a1_b: to_f32(l[A1].bias(p)),
            head_state,
            mixed,
            head_bias,
            out_w: to_f32(l[H2].weights(p)),
            out_b: l[H2].bias(p)[0] as f32,
        }
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    /// Appends the output for one state and every row of `us` to `out`.
    pub fn evaluate_into(&self, state: &[f64], us: &[f64], out: &mut Vec<f64>) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were just detected.
            return unsafe { self.evaluate_avx2(state, us, out) };
        }
        self.evaluate_generic(state, us, out)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn evaluate_avx2(&self, state: &[f64], us: &[f64], out: &mut Vec<f64>) {
        self.evaluate_generic(state, us, out)
    }

    #[inline(always)]
    fn evaluate_generic(&self, state: &[f64], us: &[f64], out: &mut Vec<f64>) {
        let h = self.shape.hidden;
        let da = self.shape.action_dim;
        assert_eq!(state.len(), self.shape.state_dim);
        let rows = us.len() / da;
        assert_eq!(us.len(), rows * da);

        let x = to_f32(state);
        let mut hidden = vec![0.0f32; h];
        matvec(&self.s1_w, &x, &self.s1_b, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut es = vec![0.0f32; h];
        matvec(&self.s2_w, &hidden, &self.s2_b, &mut es);
        let mut base = vec![0.0f32; h];
        matvec(&self.head_state, &es, &self.head_bias, &mut base);

        let chunk = rows.min(CHUNK);
        let mut z = vec![0.0f32; chunk * h];
        let mut pre = vec![0.0f32; chunk * h];
        out.reserve(rows);
        for block in us.chunks(CHUNK * da) {
            let n = block.len() / da;
            for (u, zr) in block.chunks_exact(da).zip(z.chunks_exact_mut(h)) {
                zr.copy_from_slice(&self.a1_b);
                for (d, &ud) in u.iter().enumerate() {
                    let ud = ud as f32;
                    for (zj, w) in zr.iter_mut().zip(&self.a1_wt[d * h..(d + 1) * h]) {
                        *zj += w * ud;
                    }
                }
                zr.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            for row in pre[..n * h].chunks_exact_mut(h) {
                row.copy_from_slice(&base);
            }
            // SAFETY: `z` holds `n` rows of width `h`, `mixed` is `h x h`
            // row-major and read transposed, `pre` holds `n` rows of width `h`.
            unsafe {
                sgemm(
                    n,
                    h,
                    h,
                    1.0,
                    z.as_ptr(),
                    h as isize,
                    1,
                    self.mixed.as_ptr(),
                    1,
                    h as isize,
                    1.0,
                    pre.as_mut_ptr(),
                    h as isize,
                    1,
                );
            }
            for row in pre[..n * h].chunks_exact(h) {
                out.push(neg_softplus((self.out_b + relu_dot(row, &self.out_w)) as f64));
            }
        }
    }
}

/// `sum_j max(v_j, 0) w_j` with independent lanes so it vectorizes.
#[inline(always)]
fn relu_dot(v: &[f32], w: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let mut vc = v.chunks_exact(8);
    let mut wc = w.chunks_exact(8);
    for (a, b) in (&mut vc).zip(&mut wc) {
        for i in 0..8 {
            lanes[i] += a[i].max(0.0) * b[i];
        }
    }
    let tail: f32 = vc.remainder().iter().zip(wc.remainder()).map(|(a, b)| a.max(0.0) * b).sum();
    lanes.iter().sum::<f32>() + tail
}
