use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{matmul_dytx, matmul_dyw, matmul_xwt, normal, sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

/// Dense layer `y = x Wᵀ + b`. Parameters live in a shared flat vector:
/// `W` (out×in, row-major) at `offset`, then `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub inp: usize,
    pub out: usize,
    pub offset: usize,
}

impl Linear {
    pub fn new(inp: usize, out: usize, offset: usize) -> Self {
        Self { inp, out, offset }
    }

    pub fn num_params(&self) -> usize {
        self.out * self.inp + self.out
    }

    pub fn end(&self) -> usize {
        self.offset + self.num_params()
    }

    pub fn weight<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.offset..self.offset + self.out * self.inp]
    }

    pub fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.offset + self.out * self.inp..self.end()]
    }

    /// Gaussian weights with std `gain / sqrt(in)`, zero bias.
    pub fn init<T: Scalar, R: Rng>(&self, p: &mut [T], gain: f64, rng: &mut R) {
        let std = gain / (self.inp as f64).sqrt();
        let (w, b) = p[self.offset..self.end()].split_at_mut(self.out * self.inp);
        for v in w.iter_mut() {
            *v = normal(rng, std);
        }
        b.fill(T::zero());
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], batch: usize, y: &mut [T]) {
        debug_assert_eq!(x.len(), batch * self.inp);
        debug_assert_eq!(y.len(), batch * self.out);
        let b = self.bias(p);
        for row in y.chunks_exact_mut(self.out) {
            row.copy_from_slice(b);
        }
        matmul_xwt(x, self.weight(p), y, batch, self.inp, self.out, T::one());
    }

    /// Accumulate parameter gradients into `g`; write the input gradient to
    /// `dx` when requested.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        x: &[T],
        dy: &[T],
        batch: usize,
        g: &mut [T],
        dx: Option<&mut [T]>,
    ) {
        let (gw, gb) = g[self.offset..self.end()].split_at_mut(self.out * self.inp);
        matmul_dytx(dy, x, gw, batch, self.inp, self.out);
        for row in dy.chunks_exact(self.out) {
            for (acc, v) in gb.iter_mut().zip(row) {
                *acc = *acc + *v;
            }
        }
        if let Some(dx) = dx {
            matmul_dyw(dy, self.weight(p), dx, batch, self.inp, self.out, T::zero());
        }
    }
}

/// Stack of dense layers with tanh between them and a chosen activation on
/// the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub out_act: Activation,
}

/// Activations saved by [`Mlp::forward`]: the input followed by every layer's
/// activated output.
#[derive(Debug, Clone, Default)]
pub struct MlpCache<T> {
    pub acts: Vec<Vec<T>>,
    pub batch: usize,
}

impl<T: Scalar> MlpCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl Mlp {
    /// Layers for `sizes = [in, h1, ..., out]` starting at `offset`.
    pub fn new(sizes: &[usize], out_act: Activation, offset: usize) -> Self {
        let mut layers = Vec::with_capacity(sizes.len().saturating_sub(1));
        let mut off = offset;
        for w in sizes.windows(2) {
            let l = Linear::new(w[0], w[1], off);
            off = l.end();
            layers.push(l);
        }
        Self { layers, out_act }
    }

    pub fn inp(&self) -> usize {
        self.layers[0].inp
    }

    pub fn out(&self) -> usize {
        self.layers.last().map(|l| l.out).unwrap_or(0)
    }

    pub fn end(&self) -> usize {
        self.layers.last().map(|l| l.end()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    /// Hidden layers get gain sqrt(2); the output layer gets `out_gain`.
    pub fn init<T: Scalar, R: Rng>(&self, p: &mut [T], out_gain: f64, rng: &mut R) {
        let n = self.layers.len();
        for (k, l) in self.layers.iter().enumerate() {
            let gain = if k + 1 == n { out_gain } else { 2f64.sqrt() };
            l.init(p, gain, rng);
        }
    }

    fn activates(&self, k: usize) -> bool {
        k + 1 < self.layers.len() || self.out_act == Activation::Tanh
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], batch: usize) -> MlpCache<T> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (k, l) in self.layers.iter().enumerate() {
            let mut y = vec![T::zero(); batch * l.out];
            l.forward(p, &acts[k], batch, &mut y);
            if self.activates(k) {
                for v in y.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(y);
        }
        MlpCache { acts, batch }
    }

    /// Backpropagate `dy` (gradient w.r.t. the activated output). Returns the
    /// input gradient when `want_dx`.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        cache: &MlpCache<T>,
        dy: &[T],
        g: &mut [T],
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let batch = cache.batch;
        let mut grad = dy.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            if self.activates(k) {
                for (d, y) in grad.iter_mut().zip(&cache.acts[k + 1]) {
                    *d = *d * (T::one() - *y * *y);
                }
            }
            if k > 0 || want_dx {
                let mut dx = vec![T::zero(); batch * l.inp];
                l.backward(p, &cache.acts[k], &grad, batch, g, Some(&mut dx));
                grad = dx;
            } else {
                l.backward(p, &cache.acts[k], &grad, batch, g, None);
            }
        }
        if want_dx {
            Some(grad)
        } else {
            None
        }
    }
}

/// Gated recurrent cell with reset, update and candidate gates (in that
/// order within each 3H block):
///
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gru {
    pub inp: usize,
    pub hid: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GruCache<T> {
    pub x: Vec<T>,
    pub h: Vec<T>,
    pub r: Vec<T>,
    pub z: Vec<T>,
    pub n: Vec<T>,
    /// W_hn h + b_hn.
    pub hn: Vec<T>,
    pub batch: usize,
}

impl Gru {
    pub fn new(inp: usize, hid: usize, offset: usize) -> Self {
        Self { inp, hid, offset }
    }

    fn ih(&self) -> Linear {
        Linear::new(self.inp, 3 * self.hid, self.offset)
    }

    fn hh(&self) -> Linear {
        Linear::new(self.hid, 3 * self.hid, self.ih().end())
    }

    pub fn num_params(&self) -> usize {
        self.ih().num_params() + self.hh().num_params()
    }

    pub fn end(&self) -> usize {
        self.offset + self.num_params()
    }

    /// Uniform init in ±1/sqrt(H).
    pub fn init<T: Scalar, R: Rng>(&self, p: &mut [T], rng: &mut R) {
        let k = 1.0 / (self.hid as f64).sqrt();
        for v in p[self.offset..self.end()].iter_mut() {
            *v = T::from_f64_lossy(rng.gen_range(-k..k));
        }
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], h: &[T], batch: usize) -> (Vec<T>, GruCache<T>) {
        let hd = self.hid;
        let mut gi = vec![T::zero(); batch * 3 * hd];
        let mut gh = vec![T::zero(); batch * 3 * hd];
        self.ih().forward(p, x, batch, &mut gi);
        self.hh().forward(p, h, batch, &mut gh);
        let mut r = vec![T::zero(); batch * hd];
        let mut z = vec![T::zero(); batch * hd];
        let mut n = vec![T::zero(); batch * hd];
        let mut hn = vec![T::zero(); batch * hd];
        let mut out = vec![T::zero(); batch * hd];
        for b in 0..batch {
            let gi = &gi[b * 3 * hd..(b + 1) * 3 * hd];
            let gh = &gh[b * 3 * hd..(b + 1) * 3 * hd];
            for j in 0..hd {
                let k = b * hd + j;
                let rj = sigmoid(gi[j] + gh[j]);
                let zj = sigmoid(gi[hd + j] + gh[hd + j]);
                let hnj = gh[2 * hd + j];
                let nj = (gi[2 * hd + j] + rj * hnj).tanh();
                r[k] = rj;
                z[k] = zj;
                n[k] = nj;
                hn[k] = hnj;
                out[k] = (T::one() - zj) * nj + zj * h[k];
            }
        }
        let cache = GruCache {
            x: x.to_vec(),
            h: h.to_vec(),
            r,
            z,
            n,
            hn,
            batch,
        };
        (out, cache)
    }

    /// Backpropagate `dh_new`; accumulates parameter gradients and returns
    /// (dx, dh_prev).
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        c: &GruCache<T>,
        dh_new: &[T],
        g: &mut [T],
    ) -> (Vec<T>, Vec<T>) {
        let hd = self.hid;
        let batch = c.batch;
        let mut dgi = vec![T::zero(); batch * 3 * hd];
        let mut dgh = vec![T::zero(); batch * 3 * hd];
        let mut dh_prev = vec![T::zero(); batch * hd];
        for b in 0..batch {
            for j in 0..hd {
                let k = b * hd + j;
                let d = dh_new[k];
                let (r, z, n) = (c.r[k], c.z[k], c.n[k]);
                let dn = d * (T::one() - z);
                let dz = d * (c.h[k] - n);
                dh_prev[k] = d * z;
                let dan = dn * (T::one() - n * n);
                let dr = dan * c.hn[k];
                let dar = dr * r * (T::one() - r);
                let daz = dz * z * (T::one() - z);
                let o = b * 3 * hd;
                dgi[o + j] = dar;
                dgi[o + hd + j] = daz;
                dgi[o + 2 * hd + j] = dan;
                dgh[o + j] = dar;
                dgh[o + hd + j] = daz;
                dgh[o + 2 * hd + j] = dan * r;
            }
        }
        let mut dx = vec![T::zero(); batch * self.inp];
        self.ih().backward(p, &c.x, &dgi, batch, g, Some(&mut dx));
        let mut dh_mat = vec![T::zero(); batch * hd];
        self.hh().backward(p, &c.h, &dgh, batch, g, Some(&mut dh_mat));
        for (a, v) in dh_prev.iter_mut().zip(&dh_mat) {
            *a = *a + *v;
        }
        (dx, dh_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_outputs() {
        let mlp = Mlp::new(&[3, 4, 2], Activation::Tanh, 0);
        let p = vec![0f32; mlp.num_params()];
        let c = mlp.forward(&p, &[1.0, -2.0, 0.5], 1);
        assert!(c.output().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_linear_passes_input() {
        let l = Linear::new(3, 3, 0);
        let mut p = vec![0f64; l.num_params()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let mut y = vec![0.0; 6];
        let x = [1.0, 2.0, 3.0, -1.0, 0.5, 0.25];
        l.forward(&p, &x, 2, &mut y);
        assert_eq!(y, x);
    }

    #[test]
    fn scalar_quadratic_gradient() {
        // L = (w x)^2 → dL/dw = 2 w x^2.
        let l = Linear::new(1, 1, 0);
        let p = vec![0.7f64, 0.0];
        let x = [1.3];
        let mut y = [0.0];
        l.forward(&p, &x, 1, &mut y);
        let mut g = vec![0.0; 2];
        l.backward(&p, &x, &[2.0 * y[0]], 1, &mut g, None);
        assert_eq!(g[0], 2.0 * 0.7 * 1.3 * 1.3);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let mlp = Mlp::new(&[3, 5, 2], Activation::Identity, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = vec![0f64; mlp.num_params()];
        mlp.init(&mut p, 1.0, &mut rng);
        let c = mlp.forward(&p, &[0.1, 0.2, 0.3], 1);
        let mut g = vec![0.0; p.len()];
        mlp.backward(&p, &c, &[0.0, 0.0], &mut g, false);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_matches_hand_rolled_oracle() {
        let mlp = Mlp::new(&[4, 6, 3], Activation::Identity, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = vec![0f32; mlp.num_params()];
        mlp.init(&mut p, 1.0, &mut rng);
        let x: Vec<f32> = (0..8).map(|i| (i as f32 * 0.3).sin()).collect();
        let c = mlp.forward(&p, &x, 2);
        let (l0, l1) = (mlp.layers[0], mlp.layers[1]);
        for b in 0..2 {
            let mut h = [0f64; 6];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut s = p[l0.offset + 24 + j] as f64;
                for k in 0..4 {
                    s += p[l0.offset + j * 4 + k] as f64 * x[b * 4 + k] as f64;
                }
                *hj = s.tanh();
            }
            for o in 0..3 {
                let mut s = p[l1.offset + 18 + o] as f64;
                for (j, hj) in h.iter().enumerate() {
                    s += p[l1.offset + o * 6 + j] as f64 * hj;
                }
                assert!((c.output()[b * 3 + o] as f64 - s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gru_forward_matches_scalar_oracle() {
        let gru = Gru::new(2, 3, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = vec![0f64; gru.num_params()];
        gru.init(&mut p, &mut rng);
        let x = [0.3, -0.7];
        let h = [0.1, -0.2, 0.5];
        let (out, _) = gru.forward(&p, &x, &h, 1);
        let wih = |r: usize, c: usize| p[r * 2 + c];
        let bih = |r: usize| p[18 + r];
        let whh = |r: usize, c: usize| p[27 + r * 3 + c];
        let bhh = |r: usize| p[54 + r];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..3 {
            let gi = |g: usize| bih(g * 3 + j) + (0..2).map(|c| wih(g * 3 + j, c) * x[c]).sum::<f64>();
            let gh = |g: usize| bhh(g * 3 + j) + (0..3).map(|c| whh(g * 3 + j, c) * h[c]).sum::<f64>();
            let r = sig(gi(0) + gh(0));
            let z = sig(gi(1) + gh(1));
            let n = (gi(2) + r * gh(2)).tanh();
            let e = (1.0 - z) * n + z * h[j];
            assert!((out[j] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mlp = Mlp::new(&[4, 7, 5, 3], Activation::Tanh, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = vec![0f64; mlp.num_params()];
            mlp.init(&mut p, 1.0, &mut rng);
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |p: &[f64]| -> f64 {
                let c = mlp.forward(p, &x, 2);
                c.output().iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let c = mlp.forward(&p, &x, 2);
            let mut g = vec![0.0; p.len()];
            mlp.backward(&p, &c, &w, &mut g, false);
            let r: GradCheck = check_gradients(&p, &g, loss, None);
            assert!(r.max_rel_error <= 1e-4, "{r:?}");
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        for seed in 0..3 {
            let gru = Gru::new(3, 4, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = vec![0f64; gru.num_params()];
            gru.init(&mut p, &mut rng);
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |p: &[f64]| -> f64 {
                let (o, _) = gru.forward(p, &x, &h, 2);
                o.iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let (_, c) = gru.forward(&p, &x, &h, 2);
            let mut g = vec![0.0; p.len()];
            let (dx, dh) = gru.backward(&p, &c, &w, &mut g);
            let r = check_gradients(&p, &g, loss, None);
            assert!(r.max_rel_error <= 1e-4, "{r:?}");
            // Input and hidden-state gradients.
            let lx = |xx: &[f64]| -> f64 {
                let (o, _) = gru.forward(&p, xx, &h, 2);
                o.iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            assert!(check_gradients(&x, &dx, lx, None).max_rel_error <= 1e-4);
            let lh = |hh: &[f64]| -> f64 {
                let (o, _) = gru.forward(&p, &x, hh, 2);
                o.iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            assert!(check_gradients(&h, &dh, lh, None).max_rel_error <= 1e-4);
        }
    }
}
