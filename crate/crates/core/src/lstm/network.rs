//! Stacked LSTM: weights, a per-sample reference cell, and batched
//! forward/backward passes over time-major buffers.
//!
//! Each layer holds one `4H x (H + D)` matrix with gate blocks ordered
//! forget, input, candidate, output, acting on the concatenation `[h, x]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{LstmSpec, NormStats};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    pub spec: LstmSpec,
    pub params: Vec<f64>,
    pub norm: NormStats,
}

/// Borrowed parameters of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerView<'a> {
    pub hidden: usize,
    pub input: usize,
    /// Row-major `4H x (H + input)`.
    pub w: &'a [f64],
    pub b: &'a [f64],
}

impl LstmWeights {
    /// Uniform(-1/sqrt(H), 1/sqrt(H)) initialization.
    pub fn init(spec: &LstmSpec, norm: NormStats, seed: u64) -> Result<Self> {
        spec.validate()?;
        norm.validate(spec.input_size)?;
        let k = 1.0 / (spec.hidden_size as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..spec.param_count()).map(|_| rng.random_range(-k..k)).collect();
        Ok(LstmWeights {
            spec: spec.clone(),
            params,
            norm,
        })
    }

    pub fn zeros(spec: &LstmSpec) -> Result<Self> {
        spec.validate()?;
        Ok(LstmWeights {
            spec: spec.clone(),
            params: vec![0.0; spec.param_count()],
            norm: NormStats::identity(spec.input_size),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.norm.validate(self.spec.input_size)?;
        if self.params.len() != self.spec.param_count() {
            return Err(invalid("parameter vector length does not match spec"));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("non-finite weight"));
        }
        Ok(())
    }

    pub fn layer(&self, l: usize) -> LayerView<'_> {
        let lay = self.spec.layout();
        let s = lay.layers[l];
        let h = self.spec.hidden_size;
        LayerView {
            hidden: h,
            input: self.spec.layer_input(l),
            w: &self.params[s.w..s.w + 4 * h * s.cols],
            b: &self.params[s.b..s.b + 4 * h],
        }
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let lay = self.spec.layout();
        let s = lay.layers[l];
        let h = self.spec.hidden_size;
        let (head, tail) = self.params.split_at_mut(s.b);
        (&mut head[s.w..], &mut tail[..4 * h])
    }

    /// Readout `(W, b)` mapping the last hidden state to the output.
    pub fn readout(&self) -> (&[f64], &[f64]) {
        let lay = self.spec.layout();
        (
            &self.params[lay.readout_w..lay.readout_b],
            &self.params[lay.readout_b..lay.total],
        )
    }

    /// Apply the stored normalization to a raw feature row in place.
    pub fn normalize(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.norm.mean).zip(&self.norm.scale) {
            *v = (*v - m) / s;
        }
    }
}

/// Branch-free `exp` built from arithmetic and bit operations only, so gate
/// loops vectorize. Within a few ulp of `f64::exp`; NaN propagates.
#[inline(always)]
fn exp(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    #[allow(clippy::excessive_precision)]
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.clamp(-708.0, 709.0);
    // x = n ln2 + r with |r| <= ln2 / 2; n sits in the low mantissa bits of t.
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let n = t - SHIFT;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor series to degree 13; truncation error is below 1e-17 here.
    const C: [f64; 14] = [
        1.0 / 6_227_020_800.0,
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ];
    let mut p = C[0];
    for c in &C[1..] {
        p = p * r + c;
    }
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

#[inline(always)]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// `tanh` through a single `exp`.
#[inline(always)]
fn tanh(x: f64) -> f64 {
    let e = exp(-2.0 * x.abs());
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// One LSTM cell step for a single sample.
pub fn cell_forward(x: &[f64], h_prev: &[f64], c_prev: &[f64], layer: &LayerView<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = layer.hidden;
    let cols = h + layer.input;
    if x.len() != layer.input || h_prev.len() != h || c_prev.len() != h {
        return Err(invalid(format!(
            "cell dims: x {} (want {}), h {} c {} (want {h})",
            x.len(),
            layer.input,
            h_prev.len(),
            c_prev.len()
        )));
    }
    if layer.w.len() != 4 * h * cols || layer.b.len() != 4 * h {
        return Err(invalid("layer parameter shapes do not match"));
    }
    let pre = |r: usize| -> f64 {
        let row = &layer.w[r * cols..(r + 1) * cols];
        let mut acc = layer.b[r];
        for j in 0..h {
            acc += row[j] * h_prev[j];
        }
        for j in 0..layer.input {
            acc += row[h + j] * x[j];
        }
        acc
    };
    let mut h_out = vec![0.0; h];
    let mut c_out = vec![0.0; h];
    for u in 0..h {
        let f = sigmoid(pre(u));
        let i = sigmoid(pre(h + u));
        let g = tanh(pre(2 * h + u));
        let o = sigmoid(pre(3 * h + u));
        c_out[u] = f * c_prev[u] + i * g;
        h_out[u] = o * tanh(c_out[u]);
    }
    Ok((h_out, c_out))
}

/// Below this many rows of A, packing the whole of B costs more than the
/// product itself, which matters for single-sample inference.
const SMALL_M: usize = 4;

/// Row-by-column dot products for short A with k-contiguous rows of A and
/// columns of B. Four interleaved partial sums keep the loop vectorizable.
#[allow(clippy::too_many_arguments)]
fn small_gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    b: &[f64],
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    for i in 0..m {
        let ar = &a[i * rsa..i * rsa + k];
        for j in 0..n {
            let bc = &b[j * csb..j * csb + k];
            let mut acc = [0.0f64; 4];
            let (a4, at) = ar.split_at(k - k % 4);
            let (b4, bt) = bc.split_at(k - k % 4);
            for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
                for l in 0..4 {
                    acc[l] += x[l] * y[l];
                }
            }
            let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            for (x, y) in at.iter().zip(bt) {
                s += x * y;
            }
            let cij = &mut c[i * rsc + j * csc];
            *cij = if beta == 0.0 { alpha * s } else { beta * *cij + alpha * s };
        }
    }
}

/// `C = alpha * A B + beta * C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, rs: usize, cc: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    if k > 0 {
        assert!(last(m, rsa, k, csa) < a.len(), "gemm: A out of bounds");
        assert!(last(k, rsb, n, csb) < b.len(), "gemm: B out of bounds");
    }
    assert!(last(m, rsc, n, csc) < c.len(), "gemm: C out of bounds");
    if m <= SMALL_M && k > 0 && csa == 1 && rsb == 1 {
        small_gemm(m, k, n, alpha, a, rsa, b, csb, beta, c, rsc, csc);
        return;
    }
    // SAFETY: all extents were bounds-checked above and the slices do not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Normalized inputs and targets for a batch, inputs time-major
/// (`T x B x input_size`), targets `B x output_size`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub steps: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Inverted-dropout masks between stacked layers: one `T x B x H` buffer per
/// layer boundary, entries 0 or 1/(1 - rate).
#[derive(Clone, Debug)]
pub struct DropoutMasks {
    pub masks: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub fn sample(spec: &LstmSpec, batch: usize, rng: &mut impl Rng) -> Option<Self> {
        if spec.dropout_rate == 0.0 || spec.num_layers < 2 {
            return None;
        }
        let keep = 1.0 - spec.dropout_rate;
        let n = spec.history_len * batch * spec.hidden_size;
        let masks = (0..spec.num_layers - 1)
            .map(|_| {
                (0..n)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            })
            .collect();
        Some(DropoutMasks { masks })
    }
}

/// Activations kept for backpropagation.
struct LayerCache {
    /// `T x B x D` layer input after dropout.
    x: Vec<f64>,
    /// `T x B x 4H` post-activation gates.
    gates: Vec<f64>,
    /// `(T + 1) x B x H`, slot 0 is the zero initial state.
    c: Vec<f64>,
    /// `T x B x H` tanh of the cell state.
    tc: Vec<f64>,
    /// `(T + 1) x B x H`.
    h: Vec<f64>,
}

struct ForwardPass {
    caches: Vec<LayerCache>,
    /// `B x out` unclamped readout.
    y: Vec<f64>,
}

// Each layer's weight block is `4H x (H + D)`: recurrent columns first,
// then input columns. The input projection of all time steps is one GEMM;
// only the recurrent half runs per step.
fn forward_pass(w: &LstmWeights, inputs: &[f64], batch: usize, steps: usize, dropout: Option<&DropoutMasks>) -> ForwardPass {
    let spec = &w.spec;
    let hd = spec.hidden_size;
    let g4 = 4 * hd;
    let lay = spec.layout();
    let mut x: Vec<f64> = inputs.to_vec();
    let mut caches = Vec::with_capacity(spec.num_layers);
    let tb = steps * batch;
    for l in 0..spec.num_layers {
        let d = spec.layer_input(l);
        let cols = hd + d;
        let slot = lay.layers[l];
        let wm = &w.params[slot.w..slot.w + g4 * cols];
        let bias = &w.params[slot.b..slot.b + g4];
        let mut gates = vec![0.0; tb * g4];
        for row in gates.chunks_exact_mut(g4) {
            row.copy_from_slice(bias);
        }
        // G (TB x 4H) += X (TB x D) * W_x^T
        gemm(tb, d, g4, 1.0, &x, d, 1, &wm[hd..], 1, cols, 1.0, &mut gates, g4, 1);
        let mut cache = LayerCache {
            x,
            gates,
            c: vec![0.0; (steps + 1) * batch * hd],
            tc: vec![0.0; tb * hd],
            h: vec![0.0; (steps + 1) * batch * hd],
        };
        for t in 0..steps {
            let g = &mut cache.gates[t * batch * g4..(t + 1) * batch * g4];
            if t > 0 {
                // G_t (B x 4H) += H_{t-1} (B x H) * W_h^T
                let hp = &cache.h[t * batch * hd..(t + 1) * batch * hd];
                gemm(batch, hd, g4, 1.0, hp, hd, 1, wm, 1, cols, 1.0, g, g4, 1);
            }
            for b in 0..batch {
                let gr = &mut g[b * g4..(b + 1) * g4];
                let cp = (t * batch + b) * hd;
                let cn = ((t + 1) * batch + b) * hd;
                let (fi, rest) = gr.split_at_mut(2 * hd);
                let (gg, o) = rest.split_at_mut(hd);
                for v in fi.iter_mut() {
                    *v = sigmoid(*v);
                }
                for v in o.iter_mut() {
                    *v = sigmoid(*v);
                }
                for v in gg.iter_mut() {
                    *v = tanh(*v);
                }
                let (f, i) = fi.split_at(hd);
                let (c_prev, c_next) = cache.c.split_at_mut(cn);
                let (c_prev, c_next) = (&c_prev[cp..cp + hd], &mut c_next[..hd]);
                for u in 0..hd {
                    c_next[u] = f[u] * c_prev[u] + i[u] * gg[u];
                }
                let tc = &mut cache.tc[cp..cp + hd];
                for u in 0..hd {
                    tc[u] = tanh(c_next[u]);
                }
                let h = &mut cache.h[cn..cn + hd];
                for u in 0..hd {
                    h[u] = o[u] * tc[u];
                }
            }
        }
        x = if l + 1 < spec.num_layers {
            let mut next = cache.h[batch * hd..].to_vec();
            if let Some(m) = dropout {
                for (v, k) in next.iter_mut().zip(&m.masks[l]) {
                    *v *= k;
                }
            }
            next
        } else {
            Vec::new()
        };
        caches.push(cache);
    }
    let out = spec.output_size;
    let (rw, rb) = (&w.params[lay.readout_w..lay.readout_b], &w.params[lay.readout_b..lay.total]);
    let last = caches.last().expect("at least one layer");
    let h_t = &last.h[steps * batch * hd..];
    let mut y = vec![0.0; batch * out];
    for b in 0..batch {
        y[b * out..(b + 1) * out].copy_from_slice(rb);
    }
    // y (B x out) += h_T (B x H) * R^T
    gemm(batch, hd, out, 1.0, h_t, hd, 1, rw, 1, hd, 1.0, &mut y, out, 1);
    ForwardPass { caches, y }
}

/// Unclamped network outputs for a normalized batch, `B x out`.
pub fn forward_batch(w: &LstmWeights, inputs: &[f64], batch: usize) -> Vec<f64> {
    let steps = w.spec.history_len;
    assert_eq!(inputs.len(), steps * batch * w.spec.input_size, "input buffer shape");
    forward_pass(w, inputs, batch, steps, None).y
}

/// Sum of squared errors over the batch and its gradient, both divided by
/// `denom`. With `denom = total_batch * out` the chunk results of a split
/// batch add up to the mean-squared-error of the whole batch.
pub fn loss_and_gradient(w: &LstmWeights, batch: &Batch, dropout: Option<&DropoutMasks>, denom: f64) -> (f64, Vec<f64>) {
    let spec = &w.spec;
    let (bs, steps) = (batch.size, batch.steps);
    let hd = spec.hidden_size;
    let out = spec.output_size;
    let lay = spec.layout();
    let fp = forward_pass(w, &batch.inputs, bs, steps, dropout);
    let mut grad = vec![0.0; lay.total];

    let mut loss = 0.0;
    let mut dy = vec![0.0; bs * out];
    for (i, (y, t)) in fp.y.iter().zip(&batch.targets).enumerate() {
        let e = y - t;
        loss += e * e;
        dy[i] = 2.0 * e / denom;
    }
    loss /= denom;

    // readout
    let top = fp.caches.last().unwrap();
    let h_t = &top.h[steps * bs * hd..];
    {
        let (gw, gb) = grad[lay.readout_w..lay.total].split_at_mut(out * hd);
        // dR (out x H) = dy^T (out x B) * h_T (B x H)
        gemm(out, bs, hd, 1.0, &dy, 1, out, h_t, hd, 1, 0.0, gw, hd, 1);
        for b in 0..bs {
            for o in 0..out {
                gb[o] += dy[b * out + o];
            }
        }
    }
    // gradient reaching the top layer's hidden outputs, T x B x H
    let mut dh_above = vec![0.0; steps * bs * hd];
    {
        let rw = &w.params[lay.readout_w..lay.readout_b];
        let slot = &mut dh_above[(steps - 1) * bs * hd..];
        gemm(bs, out, hd, 1.0, &dy, out, 1, rw, hd, 1, 0.0, slot, hd, 1);
    }

    for l in (0..spec.num_layers).rev() {
        let cache = &fp.caches[l];
        let d = spec.layer_input(l);
        let cols = hd + d;
        let g4 = 4 * hd;
        let tb = steps * bs;
        let slot = lay.layers[l];
        let wm = &w.params[slot.w..slot.w + g4 * cols];
        let mut dg_all = vec![0.0; tb * g4];
        let mut dh_next = vec![0.0; bs * hd];
        let mut dc_next = vec![0.0; bs * hd];
        for t in (0..steps).rev() {
            let g = &cache.gates[t * bs * g4..(t + 1) * bs * g4];
            let dg = &mut dg_all[t * bs * g4..(t + 1) * bs * g4];
            for b in 0..bs {
                let gr = &g[b * g4..(b + 1) * g4];
                let dgr = &mut dg[b * g4..(b + 1) * g4];
                for u in 0..hd {
                    let k = b * hd + u;
                    let dh = dh_above[(t * bs + b) * hd + u] + dh_next[k];
                    let (f, i, gg, o) = (gr[u], gr[hd + u], gr[2 * hd + u], gr[3 * hd + u]);
                    let tc = cache.tc[(t * bs + b) * hd + u];
                    let c_prev = cache.c[(t * bs + b) * hd + u];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                    dgr[u] = dc * c_prev * f * (1.0 - f);
                    dgr[hd + u] = dc * gg * i * (1.0 - i);
                    dgr[2 * hd + u] = dc * i * (1.0 - gg * gg);
                    dgr[3 * hd + u] = dh * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
            }
            if t > 0 {
                // dH_{t-1} (B x H) = dG_t (B x 4H) * W_h (4H x H)
                gemm(bs, g4, hd, 1.0, dg, g4, 1, wm, cols, 1, 0.0, &mut dh_next, hd, 1);
            }
        }
        {
            let gw = &mut grad[slot.w..slot.w + g4 * cols];
            // dW_h (4H x H) = dG_all^T (4H x TB) * H_prev (TB x H); H_prev starts at the zero state.
            gemm(g4, tb, hd, 1.0, &dg_all, 1, g4, &cache.h[..tb * hd], hd, 1, 0.0, gw, cols, 1);
            // dW_x (4H x D) = dG_all^T (4H x TB) * X (TB x D)
            gemm(g4, tb, d, 1.0, &dg_all, 1, g4, &cache.x, d, 1, 0.0, &mut gw[hd..], cols, 1);
        }
        {
            let gb = &mut grad[slot.b..slot.b + g4];
            for row in dg_all.chunks_exact(g4) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if l > 0 {
            // dX (TB x D) = dG_all (TB x 4H) * W_x (4H x D)
            let mut dx = vec![0.0; tb * d];
            gemm(tb, g4, d, 1.0, &dg_all, g4, 1, &wm[hd..], cols, 1, 0.0, &mut dx, d, 1);
            if let Some(m) = dropout {
                for (v, k) in dx.iter_mut().zip(&m.masks[l - 1]) {
                    *v *= k;
                }
            }
            dh_above = dx;
        }
    }
    (loss, grad)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_weights(spec: &LstmSpec, seed: u64, scale: f64) -> LstmWeights {
        let mut w = LstmWeights::zeros(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in w.params.iter_mut() {
            *p = rng.random_range(-scale..scale);
        }
        w
    }

    #[test]
    fn small_gemm_matches_packed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(m, k, n) in &[(1, 128, 512), (3, 7, 5), (4, 1, 9), (2, 0, 3)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            // B stored column-contiguous, as the transposed weight blocks are.
            let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c0: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for beta in [0.0, 1.0] {
                let mut small = c0.clone();
                gemm(m, k, n, 0.5, &a, k.max(1), 1, &b, 1, k.max(1), beta, &mut small, n, 1);
                let mut packed = c0.clone();
                // SAFETY: shapes match the buffers above.
                unsafe {
                    matrixmultiply::dgemm(
                        m,
                        k,
                        n,
                        0.5,
                        a.as_ptr(),
                        k.max(1) as isize,
                        1,
                        b.as_ptr(),
                        1,
                        k.max(1) as isize,
                        beta,
                        packed.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
                for (x, y) in small.iter().zip(&packed) {
                    assert!((x - y).abs() < 1e-12, "{m}x{k}x{n}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn exp_matches_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let x: f64 = rng.random_range(-700.0..700.0);
            let (a, b) = (exp(x), x.exp());
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b, "{x}: {a} vs {b}");
        }
        assert!(exp(f64::NAN).is_nan());
        assert_eq!(exp(0.0), 1.0);
        assert!(exp(-1e6) < 1e-300 && exp(1e6).is_finite());
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let spec = LstmSpec::planar(1, 3, 5, 0.0);
        let w = LstmWeights::zeros(&spec).unwrap();
        let (h, c) = cell_forward(&[0.3; 6], &[0.0; 5], &[0.0; 5], &w.layer(0)).unwrap();
        assert!(h.iter().chain(&c).all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let spec = LstmSpec::planar(1, 3, 4, 0.0);
        let mut w = LstmWeights::zeros(&spec).unwrap();
        {
            let (_, b) = w.layer_mut(0);
            for v in b[..4].iter_mut() {
                *v = 20.0;
            }
        }
        let c_prev = [0.5, -1.0, 2.0, 0.25];
        let (_, c) = cell_forward(&[1.0; 6], &[0.0; 4], &c_prev, &w.layer(0)).unwrap();
        for (a, b) in c.iter().zip(&c_prev) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let spec = LstmSpec::planar(1, 3, 4, 0.0);
        let w = LstmWeights::zeros(&spec).unwrap();
        assert!(cell_forward(&[0.0; 5], &[0.0; 4], &[0.0; 4], &w.layer(0)).is_err());
        assert!(cell_forward(&[0.0; 6], &[0.0; 3], &[0.0; 4], &w.layer(0)).is_err());
    }

    #[test]
    fn batched_forward_matches_cell_loop() {
        let spec = LstmSpec::planar(3, 4, 7, 0.0);
        let w = random_weights(&spec, 3, 0.4);
        let bsz = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs: Vec<f64> = (0..spec.history_len * bsz * spec.input_size).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = forward_batch(&w, &inputs, bsz);
        for b in 0..bsz {
            let mut hs = vec![vec![0.0; 7]; 3];
            let mut cs = vec![vec![0.0; 7]; 3];
            for t in 0..spec.history_len {
                let mut x = inputs[(t * bsz + b) * 6..(t * bsz + b + 1) * 6].to_vec();
                for l in 0..3 {
                    let (h, c) = cell_forward(&x, &hs[l], &cs[l], &w.layer(l)).unwrap();
                    hs[l] = h.clone();
                    cs[l] = c;
                    x = h;
                }
            }
            let (rw, rb) = w.readout();
            for o in 0..2 {
                let v: f64 = rb[o] + (0..7).map(|u| rw[o * 7 + u] * hs[2][u]).sum::<f64>();
                assert!((v - y[b * 2 + o]).abs() < 1e-12);
            }
        }
    }

    fn fd_check(spec: &LstmSpec, with_dropout: bool) {
        let mut w = random_weights(spec, 11, 0.5);
        w.norm = NormStats::identity(spec.input_size);
        let bsz = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = Batch {
            size: bsz,
            steps: spec.history_len,
            inputs: (0..spec.history_len * bsz * spec.input_size).map(|_| rng.random_range(-1.0..1.0)).collect(),
            targets: (0..bsz * spec.output_size).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let masks = if with_dropout { DropoutMasks::sample(spec, bsz, &mut rng) } else { None };
        assert_eq!(masks.is_some(), with_dropout);
        let denom = (bsz * spec.output_size) as f64;
        let (_, g) = loss_and_gradient(&w, &batch, masks.as_ref(), denom);
        // Fourth-order central stencil keeps rounding noise near 1e-12, well
        // below the smallest gradients compared here.
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..w.params.len() {
            let orig = w.params[i];
            let mut at = |d: f64| {
                w.params[i] = orig + d;
                loss_and_gradient(&w, &batch, masks.as_ref(), denom).0
            };
            let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            w.params[i] = orig;
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-7);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences_two_layers_with_dropout() {
        fd_check(&LstmSpec::planar(2, 3, 3, 0.3), true);
    }

    #[test]
    fn gradient_matches_finite_differences_one_dim() {
        fd_check(&LstmSpec::for_dim(1, 2, 4, 3, 0.0), false);
    }

    #[test]
    fn chunk_gradients_sum_to_batch_gradient() {
        let spec = LstmSpec::planar(2, 3, 4, 0.0);
        let w = random_weights(&spec, 1, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6;
        let inputs: Vec<f64> = (0..3 * n * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let full = Batch { size: n, steps: 3, inputs: inputs.clone(), targets: targets.clone() };
        let (lf, gf) = loss_and_gradient(&w, &full, None, 12.0);
        let sub = |lo: usize, hi: usize| {
            let mut x = Vec::new();
            for t in 0..3 {
                x.extend_from_slice(&inputs[(t * n + lo) * 6..(t * n + hi) * 6]);
            }
            Batch { size: hi - lo, steps: 3, inputs: x, targets: targets[lo * 2..hi * 2].to_vec() }
        };
        let (l1, g1) = loss_and_gradient(&w, &sub(0, 4), None, 12.0);
        let (l2, g2) = loss_and_gradient(&w, &sub(4, 6), None, 12.0);
        assert!((lf - l1 - l2).abs() < 1e-12);
        for i in 0..gf.len() {
            assert!((gf[i] - g1[i] - g2[i]).abs() < 1e-12);
        }
    }
}
