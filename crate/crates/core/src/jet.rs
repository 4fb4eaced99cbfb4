//! Batched network evaluation carrying nested first derivatives, with a
//! hand-written reverse sweep.
//!
//! A jet has `(O + 1)(I + 1)` components indexed `(o, i)`: component `(0, 0)`
//! is the value, `(0, i)` the derivative along inner direction `i`, `(o, 0)`
//! along outer direction `o` and `(o, i)` the mixed second derivative. This
//! is the flattening of `Dual<Dual<R, I>, O>` used by
//! [`Scalar::from_parts`](crate::autodiff::Scalar::from_parts).
//!
//! Activations of one layer are stored as a row-major `width × (C·n)` matrix
//! whose column `c·n + p` holds component `c` at point `p`, so every affine
//! layer is a single matrix product.

use std::cell::RefCell;

use crate::network::NetLayout;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// A zeroed buffer, recycled from earlier batches on this thread when possible.
fn take(len: usize) -> Vec<f64> {
    let mut v = POOL.with(|p| p.borrow_mut().pop()).unwrap_or_default();
    v.clear();
    v.resize(len, 0.0);
    v
}

fn give(v: Vec<f64>) {
    POOL.with(|p| {
        let mut p = p.borrow_mut();
        if p.len() < 64 {
            p.push(v);
        }
    });
}

/// Input coordinates that seed the inner and outer directions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JetSpec {
    pub inner: Vec<usize>,
    pub outer: Vec<usize>,
}

impl JetSpec {
    /// Plain values, no derivatives.
    pub fn values() -> Self {
        Self {
            inner: Vec::new(),
            outer: Vec::new(),
        }
    }

    pub fn n_components(&self) -> usize {
        (self.outer.len() + 1) * (self.inner.len() + 1)
    }

    fn index(&self, o: usize, i: usize) -> usize {
        o * (self.inner.len() + 1) + i
    }
}

/// Row-major `c = a·b` with explicit strides on `a` and `b`.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: (usize, usize), b: &[f64], b_strides: (usize, usize), c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the assertion above bounds every index reached through the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward pass of a batch with everything the reverse sweep needs.
#[derive(Clone, Debug)]
pub struct JetBatch {
    layout: NetLayout,
    spec: JetSpec,
    n: usize,
    /// Layer inputs: the seeded coordinates, then each hidden activation.
    hs: Vec<Vec<f64>>,
    /// Hidden pre-activations.
    zs: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl JetBatch {
    /// Evaluates the network on `n = points.len() / layout.n_inputs` points
    /// stored row by row.
    pub fn forward(layout: NetLayout, params: &[f64], spec: JetSpec, points: &[f64]) -> Self {
        assert_eq!(params.len(), layout.n_params());
        let d = layout.n_inputs;
        assert_eq!(points.len() % d, 0);
        let n = points.len() / d;
        let nc = spec.n_components();
        let cols = nc * n;
        let mut h0 = take(d * cols);
        for k in 0..d {
            let row = &mut h0[k * cols..(k + 1) * cols];
            for p in 0..n {
                row[p] = points[p * d + k];
            }
            for (i, &dir) in spec.inner.iter().enumerate() {
                if dir == k {
                    row[spec.index(0, i + 1) * n..][..n].fill(1.0);
                }
            }
            for (o, &dir) in spec.outer.iter().enumerate() {
                if dir == k {
                    row[spec.index(o + 1, 0) * n..][..n].fill(1.0);
                }
            }
        }
        let shapes = layout.layer_shapes();
        let last = shapes.len() - 1;
        let mut hs = vec![h0];
        let mut zs = Vec::with_capacity(last);
        let mut off = 0;
        let mut out = Vec::new();
        for (l, (fan_in, fan_out)) in shapes.into_iter().enumerate() {
            let w = &params[off..off + fan_in * fan_out];
            let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut z = take(fan_out * cols);
            gemm(fan_out, fan_in, cols, w, (fan_in, 1), &hs[l], (cols, 1), &mut z);
            for (j, &bj) in b.iter().enumerate() {
                z[j * cols..j * cols + n].iter_mut().for_each(|v| *v += bj);
            }
            if l == last {
                out = z;
            } else {
                let mut h = take(fan_out * cols);
                for j in 0..fan_out {
                    tanh_jet(&spec, n, &z[j * cols..(j + 1) * cols], &mut h[j * cols..(j + 1) * cols]);
                }
                zs.push(z);
                hs.push(h);
            }
        }
        Self {
            layout,
            spec,
            n,
            hs,
            zs,
            out,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spec(&self) -> &JetSpec {
        &self.spec
    }

    /// Component `c` of output `k` at every point.
    pub fn output(&self, k: usize, c: usize) -> &[f64] {
        let cols = self.spec.n_components() * self.n;
        &self.out[k * cols + c * self.n..][..self.n]
    }

    /// Gradient with respect to the parameters of `Σ d_out · output`, where
    /// `d_out` has the layout of the outputs (`n_outputs × C·n`).
    pub fn backward(&self, params: &[f64], d_out: &[f64]) -> Vec<f64> {
        let cols = self.spec.n_components() * self.n;
        assert_eq!(d_out.len(), self.layout.n_outputs * cols);
        let shapes = self.layout.layer_shapes();
        let mut grad = vec![0.0; params.len()];
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for &(fan_in, fan_out) in &shapes {
            offsets.push(off);
            off += fan_in * fan_out + fan_out;
        }
        let mut dz = take(d_out.len());
        dz.copy_from_slice(d_out);
        for l in (0..shapes.len()).rev() {
            let (fan_in, fan_out) = shapes[l];
            let off = offsets[l];
            let h = &self.hs[l];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            // dW = dZ · Hᵀ
            gemm(fan_out, cols, fan_in, &dz, (cols, 1), h, (1, cols), gw);
            for (j, g) in gb.iter_mut().enumerate() {
                *g = dz[j * cols..j * cols + self.n].iter().sum();
            }
            if l == 0 {
                break;
            }
            let w = &params[off..off + fan_in * fan_out];
            let mut dh = take(fan_in * cols);
            // dH = Wᵀ · dZ
            gemm(fan_in, fan_out, cols, w, (1, fan_in), &dz, (cols, 1), &mut dh);
            let (z, h) = (&self.zs[l - 1], &self.hs[l]);
            let mut next = take(fan_in * cols);
            for j in 0..fan_in {
                let r = j * cols..(j + 1) * cols;
                tanh_jet_backward(&self.spec, self.n, &z[r.clone()], &h[r.clone()], &dh[r.clone()], &mut next[r]);
            }
            give(dh);
            give(std::mem::replace(&mut dz, next));
        }
        give(dz);
        grad
    }
}

/// Network values at many points (rows of `n_inputs` coordinates), one
/// column per output, evaluated in blocks of `block` points.
pub fn predict_columns(layout: NetLayout, params: &[f64], points: &[f64], block: usize) -> Vec<Vec<f64>> {
    let d = layout.n_inputs;
    let mut cols = vec![Vec::with_capacity(points.len() / d); layout.n_outputs];
    for chunk in points.chunks(block.max(1) * d) {
        let b = JetBatch::forward(layout, params, JetSpec::values(), chunk);
        for (k, col) in cols.iter_mut().enumerate() {
            col.extend_from_slice(b.output(k, 0));
        }
    }
    cols
}

impl Drop for JetBatch {
    fn drop(&mut self) {
        for v in self.hs.drain(..).chain(self.zs.drain(..)) {
            give(v);
        }
        give(std::mem::take(&mut self.out));
    }
}

/// `tanh` applied to one neuron's jets.
fn tanh_jet(spec: &JetSpec, n: usize, z: &[f64], h: &mut [f64]) {
    let (ni, no) = (spec.inner.len(), spec.outer.len());
    let (z0, zr) = z.split_at(n);
    let (h0, hr) = h.split_at_mut(n);
    for (hv, &zv) in h0.iter_mut().zip(z0) {
        *hv = zv.tanh();
    }
    let block = |c: usize| (c - 1) * n..c * n;
    for i in 1..=ni {
        let (zi, hi) = (&zr[block(i)], &mut hr[block(i)]);
        for p in 0..n {
            hi[p] = (1.0 - h0[p] * h0[p]) * zi[p];
        }
    }
    for o in 1..=no {
        let co = spec.index(o, 0);
        let zo = &zr[block(co)];
        for p in 0..n {
            hr[block(co)][p] = (1.0 - h0[p] * h0[p]) * zo[p];
        }
        for i in 1..=ni {
            let (zoi, zi) = (&zr[block(co + i)], &zr[block(i)]);
            let hoi = &mut hr[block(co + i)];
            for p in 0..n {
                let s = h0[p];
                let s1 = 1.0 - s * s;
                hoi[p] = s1 * zoi[p] - 2.0 * s * s1 * zo[p] * zi[p];
            }
        }
    }
}

/// Reverse of [`tanh_jet`]; `h` is its output.
fn tanh_jet_backward(spec: &JetSpec, n: usize, z: &[f64], h: &[f64], dh: &[f64], dz: &mut [f64]) {
    let (ni, no) = (spec.inner.len(), spec.outer.len());
    let s = &h[..n];
    let s1: Vec<f64> = s.iter().map(|v| 1.0 - v * v).collect();
    let s2: Vec<f64> = s.iter().zip(&s1).map(|(v, d)| -2.0 * v * d).collect();
    let block = |c: usize| c * n..(c + 1) * n;
    let (d0, dr) = dz.split_at_mut(n);
    for p in 0..n {
        d0[p] = dh[p] * s1[p];
    }
    let dr_block = |c: usize| (c - 1) * n..c * n;
    for i in 1..=ni {
        let (g, zi) = (&dh[block(i)], &z[block(i)]);
        let di = &mut dr[dr_block(i)];
        for p in 0..n {
            d0[p] += s2[p] * g[p] * zi[p];
            di[p] = s1[p] * g[p];
        }
    }
    for o in 1..=no {
        let co = spec.index(o, 0);
        let (go, zo) = (&dh[block(co)], &z[block(co)]);
        for p in 0..n {
            d0[p] += s2[p] * go[p] * zo[p];
            dr[dr_block(co)][p] = s1[p] * go[p];
        }
        for i in 1..=ni {
            let (g, zoi, zi) = (&dh[block(co + i)], &z[block(co + i)], &z[block(i)]);
            for p in 0..n {
                let s3 = -2.0 * (s1[p] * s1[p] + s[p] * s2[p]);
                d0[p] += g[p] * (s2[p] * zoi[p] + s3 * zo[p] * zi[p]);
                dr[dr_block(i)][p] += s2[p] * g[p] * zo[p];
                dr[dr_block(co)][p] += s2[p] * g[p] * zi[p];
                dr[dr_block(co + i)][p] = s1[p] * g[p];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{DiffContext, Dual, Scalar, Var};
    use crate::network::{forward, init_params};

    type Jet = Dual<Dual<f64, 2>, 3>;

    fn points(n: usize, d: usize) -> Vec<f64> {
        (0..n * d).map(|i| ((i as f64) * 0.37).sin() * 0.5 + 0.5).collect()
    }

    fn biot_spec() -> JetSpec {
        JetSpec {
            inner: vec![0, 1],
            outer: vec![0, 1, 2],
        }
    }

    fn seed(x: &[f64]) -> [Jet; 3] {
        std::array::from_fn(|k| {
            let mut inner = Dual::constant(x[k]);
            if k < 2 {
                inner.d[k] = 1.0;
            }
            let mut j = Jet::constant(inner);
            j.d[k] = Dual::lift(1.0);
            j
        })
    }

    #[test]
    fn outputs_match_nested_duals() {
        let layout = NetLayout::new(3, 3, 3, 4).unwrap();
        let params = init_params(layout, 5).unwrap().values;
        let pts = points(7, 3);
        let batch = JetBatch::forward(layout, &params, biot_spec(), &pts);
        for p in 0..7 {
            let out = forward(&layout, &params, &seed(&pts[p * 3..p * 3 + 3])).unwrap();
            for (k, o) in out.iter().enumerate() {
                let mut flat = vec![o.v.v, o.v.d[0], o.v.d[1]];
                for d in o.d {
                    flat.extend([d.v, d.d[0], d.d[1]]);
                }
                for (c, want) in flat.iter().enumerate() {
                    let got = batch.output(k, c)[p];
                    assert!((got - want).abs() < 1e-14, "k={k} c={c}: {got} vs {want}");
                }
                assert_eq!(Jet::from_parts(&flat), *o);
            }
        }
    }

    #[test]
    fn backward_matches_tape() {
        let layout = NetLayout::new(3, 3, 2, 5).unwrap();
        let params = init_params(layout, 9).unwrap().values;
        let n = 6;
        let pts = points(n, 3);
        let spec = biot_spec();
        let nc = spec.n_components();
        let batch = JetBatch::forward(layout, &params, spec, &pts);
        let d_out: Vec<f64> = (0..3 * nc * n).map(|i| ((i as f64) * 0.11).cos()).collect();
        let got = batch.backward(&params, &d_out);

        let ctx = DiffContext::new();
        let vars: Vec<Var> = params.iter().map(|&v| ctx.variable(v)).collect();
        let mut total = Var::constant(0.0);
        for p in 0..n {
            let x = seed(&pts[p * 3..p * 3 + 3]);
            let inputs: [Dual<Dual<Var, 2>, 3>; 3] = std::array::from_fn(|k| {
                let lift = |d: Dual<f64, 2>| Dual::new(Var::constant(d.v), d.d.map(Var::constant));
                Dual::new(lift(x[k].v), x[k].d.map(lift))
            });
            let out = forward(&layout, &vars, &inputs).unwrap();
            for (k, o) in out.iter().enumerate() {
                let mut flat = vec![o.v.v, o.v.d[0], o.v.d[1]];
                for d in o.d {
                    flat.extend([d.v, d.d[0], d.d[1]]);
                }
                for (c, v) in flat.into_iter().enumerate() {
                    total = total + v.scale(Var::constant(d_out[k * nc * n + c * n + p]));
                }
            }
        }
        let g = ctx.backward(total);
        for (i, v) in vars.iter().enumerate() {
            let want = g.scalar(*v);
            assert!((got[i] - want).abs() < 1e-12 * want.abs().max(1.0), "param {i}: {} vs {want}", got[i]);
        }
    }

    #[test]
    fn blocked_prediction_matches_single_batch() {
        let layout = NetLayout::new(3, 3, 2, 4).unwrap();
        let params = init_params(layout, 2).unwrap().values;
        let pts = points(23, 3);
        let whole = predict_columns(layout, &params, &pts, 100);
        let blocked = predict_columns(layout, &params, &pts, 5);
        assert_eq!(whole.len(), 3);
        for (a, b) in whole.iter().zip(&blocked) {
            assert_eq!(a.len(), 23);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn value_only_batch_is_plain_forward() {
        let layout = NetLayout::new(2, 1, 2, 3).unwrap();
        let params = init_params(layout, 1).unwrap().values;
        let pts = points(5, 2);
        let batch = JetBatch::forward(layout, &params, JetSpec::values(), &pts);
        for p in 0..5 {
            let want = forward::<f64>(&layout, &params, &pts[p * 2..p * 2 + 2]).unwrap()[0];
            assert!((batch.output(0, 0)[p] - want).abs() < 1e-15);
        }
    }
}
