//! Layers: dense, GRU and bidirectional GRU, additive attention pooling and a
//! bank of 1-D character convolutions.
//!
//! Parameters live in a [`ParamStore`] under `<model>.<layer>.<tensor>` names.
//! Weight matrices are initialized Glorot-uniform from a caller-supplied RNG
//! and are subject to weight decay; biases start at zero and are not.

use std::ops::Range;

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};

pub const CONV_WIDTHS: [usize; 3] = [3, 6, 9];

type Result<T> = std::result::Result<T, AutodiffError>;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

fn weight(store: &mut ParamStore, rng: &mut impl Rng, name: String, rows: usize, cols: usize) -> Result<ParamId> {
    store.add(name, glorot(rng, &[rows, cols], rows, cols), true)
}

fn bias(store: &mut ParamStore, name: String, n: usize) -> Result<ParamId> {
    store.add(name, Tensor::zeros(&[n]), false)
}

/// `y = xW + b` for `x` of shape `(d_in,)` or `(n, d_in)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let w = weight(store, rng, format!("{prefix}.W"), d_in, d_out)?;
        let b = bias(store, format!("{prefix}.b"), d_out)?;
        Ok(Dense { w, b, d_in, d_out })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

/// GRU cell with separate input, recurrent and bias tensors per gate.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, d_in: usize, d_h: usize) -> Result<Self> {
        let mut gate = |g: &str| -> Result<(ParamId, ParamId, ParamId)> {
            Ok((
                weight(store, rng, format!("{prefix}.W_{g}"), d_in, d_h)?,
                weight(store, rng, format!("{prefix}.U_{g}"), d_h, d_h)?,
                bias(store, format!("{prefix}.b_{g}"), d_h)?,
            ))
        };
        let (w_z, u_z, b_z) = gate("z")?;
        let (w_r, u_r, b_r) = gate("r")?;
        let (w_h, u_h, b_h) = gate("h")?;
        Ok(GruCell { w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h, d_in, d_h })
    }

    fn affine(&self, tape: &mut Tape, x: Var, w: ParamId, h: Var, u: ParamId, b: ParamId) -> Result<Var> {
        let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    }

    /// One step for a single row (`x: (d_in,)`, `h: (d_h,)`) or a batch of rows.
    ///
    /// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
    /// `h̃ = tanh(xW_h + (r∘h)U_h + b_h)`, `h' = (1 − z)∘h + z∘h̃`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let z_in = self.affine(tape, x, self.w_z, h, self.u_z, self.b_z)?;
        let z = tape.sigmoid(z_in)?;
        let r_in = self.affine(tape, x, self.w_r, h, self.u_r, self.b_r)?;
        let r = tape.sigmoid(r_in)?;
        let rh = tape.mul(r, h)?;
        let c_in = self.affine(tape, x, self.w_h, rh, self.u_h, self.b_h)?;
        let cand = tape.tanh(c_in)?;
        let keep = tape.one_minus(z)?;
        let old = tape.mul(keep, h)?;
        let new = tape.mul(z, cand)?;
        tape.add(old, new)
    }

    /// Runs over `steps` time steps of `n` rows each. `inputs` is time-major
    /// `(steps·n, d_in)` and `mask` marks real positions in the same order. A
    /// masked row carries its previous state through unchanged. Returns the
    /// state after every step, each `(n, d_h)`.
    fn run(&self, tape: &mut Tape, inputs: Var, n: usize, mask: &[u8], reverse: bool) -> Result<Vec<Var>> {
        let steps = mask.len() / n;
        let mut h = tape.constant(Tensor::zeros(&[n, self.d_h]));
        let mut states = vec![h; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let m = &mask[t * n..(t + 1) * n];
            let real = m.iter().filter(|&&v| v != 0).count();
            if real > 0 {
                let ids: Vec<usize> = (t * n..(t + 1) * n).collect();
                let x = tape.gather_rows(inputs, &ids)?;
                let h_new = self.step(tape, x, h)?;
                h = if real == n {
                    h_new
                } else {
                    let keep: Vec<f64> = m.iter().flat_map(|&v| std::iter::repeat_n(f64::from(v), self.d_h)).collect();
                    let carry: Vec<f64> = keep.iter().map(|v| 1.0 - v).collect();
                    let keep = tape.constant(Tensor::matrix(n, self.d_h, keep));
                    let carry = tape.constant(Tensor::matrix(n, self.d_h, carry));
                    let a = tape.mul(h_new, keep)?;
                    let b = tape.mul(h, carry)?;
                    tape.add(a, b)?
                };
            }
            states[t] = h;
        }
        Ok(states)
    }
}

/// Forward and backward GRUs whose states are concatenated per step.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

impl BiGru {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, d_in: usize, d_h: usize) -> Result<Self> {
        let fwd = GruCell::new(store, rng, &format!("{prefix}.fwd"), d_in, d_h)?;
        let bwd = GruCell::new(store, rng, &format!("{prefix}.bwd"), d_in, d_h)?;
        Ok(BiGru { fwd, bwd })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.d_h
    }

    /// One sequence `xs: (T, d_in)` with mask `(T,)`; returns `(T, 2·d_h)`.
    pub fn encode(&self, tape: &mut Tape, xs: Var, mask: &[u8]) -> Result<Var> {
        self.encode_batch(tape, xs, 1, mask)
    }

    /// `n` sequences at once. `inputs` is time-major `(T·n, d_in)`: row
    /// `t·n + i` is step `t` of sequence `i`. The result uses the same layout
    /// with `2·d_h` columns, `[h_fwd; h_bwd]`.
    pub fn encode_batch(&self, tape: &mut Tape, inputs: Var, n: usize, mask: &[u8]) -> Result<Var> {
        let rows = tape.value(inputs).rows();
        if n == 0 || mask.len() != rows || rows % n != 0 || tape.value(inputs).cols() != self.fwd.d_in {
            return Err(AutodiffError::shape(
                "bigru_encode",
                format!("inputs {:?}, {n} sequences, mask of {}", tape.value(inputs).shape(), mask.len()),
            ));
        }
        if mask.iter().all(|&m| m == 0) {
            return Err(AutodiffError::AllMasked { op: "bigru_encode" });
        }
        let f = self.fwd.run(tape, inputs, n, mask, false)?;
        let b = self.bwd.run(tape, inputs, n, mask, true)?;
        let mut per_step = Vec::with_capacity(f.len());
        for (hf, hb) in f.into_iter().zip(b) {
            per_step.push(tape.concat(&[hf, hb], 1)?);
        }
        if per_step.len() == 1 {
            return Ok(per_step[0]);
        }
        tape.concat(&per_step, 0)
    }
}

/// Additive attention: `A = tanh(t·W_α + b)`, `score = A·w`, weights are the
/// softmax of the scores over unmasked items, and the pooled vector is the
/// weighted sum of the items.
#[derive(Clone, Debug)]
pub struct Attention {
    pub w_alpha: ParamId,
    pub b: ParamId,
    pub w: ParamId,
    pub d: usize,
    pub d_a: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, d: usize, d_a: usize) -> Result<Self> {
        let w_alpha = weight(store, rng, format!("{prefix}.W_alpha"), d, d_a)?;
        let b = bias(store, format!("{prefix}.b"), d_a)?;
        let w = store.add(format!("{prefix}.w"), glorot(rng, &[d_a], d_a, 1), true)?;
        Ok(Attention { w_alpha, b, w, d, d_a })
    }

    fn scores(&self, tape: &mut Tape, items: Var) -> Result<Var> {
        let n = tape.value(items).rows();
        let wa = tape.param(self.w_alpha);
        let b = tape.param(self.b);
        let w = tape.param(self.w);
        let proj = tape.matmul(items, wa)?;
        let shifted = tape.add(proj, b)?;
        let a = tape.tanh(shifted)?;
        let w_col = tape.reshape(w, &[self.d_a, 1])?;
        let s = tape.matmul(a, w_col)?;
        tape.reshape(s, &[n])
    }

    /// Pools `items: (n, d)` into `(d,)`; also returns the weights `(n,)`,
    /// exactly zero where `mask` is 0.
    pub fn pool(&self, tape: &mut Tape, items: Var, mask: &[f64]) -> Result<(Var, Var)> {
        let t = tape.value(items);
        if t.rank() != 2 || t.cols() != self.d || mask.len() != t.rows() {
            return Err(AutodiffError::shape("attention_pool", format!("{:?} with mask {}", t.shape(), mask.len())));
        }
        let s = self.scores(tape, items)?;
        let v = tape.masked_softmax(s, mask)?;
        let k = tape.weighted_sum(items, v)?;
        Ok((k, v))
    }

    /// Pools consecutive row ranges of `items` independently, giving one row
    /// per segment, plus the concatenated weights of all items.
    pub fn pool_segments(&self, tape: &mut Tape, items: Var, segments: &[Range<usize>]) -> Result<(Var, Var)> {
        let s = self.scores(tape, items)?;
        let v = tape.segment_softmax(s, segments)?;
        let o = tape.scale_rows(items, v)?;
        let k = tape.segment_sum(o, segments)?;
        Ok((k, v))
    }
}

/// Convolutions of widths 3, 6 and 9 spanning the full character embedding,
/// each followed by ReLU and a max over valid window positions.
#[derive(Clone, Debug)]
pub struct ConvBank {
    /// `(w·d_char, n_filters)`; row `o·d_char + c` is offset `o`, channel `c`.
    pub kernels: [ParamId; 3],
    pub biases: [ParamId; 3],
    pub d_char: usize,
    pub n_filters: usize,
}

impl ConvBank {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, d_char: usize, n_filters: usize) -> Result<Self> {
        let mut kernels = Vec::with_capacity(3);
        let mut biases = Vec::with_capacity(3);
        for w in CONV_WIDTHS {
            kernels.push(weight(store, rng, format!("{prefix}.w{w}.kernel"), w * d_char, n_filters)?);
            biases.push(bias(store, format!("{prefix}.w{w}.b"), n_filters)?);
        }
        Ok(ConvBank {
            kernels: kernels.try_into().expect("three widths"),
            biases: biases.try_into().expect("three widths"),
            d_char,
            n_filters,
        })
    }

    pub fn out_dim(&self) -> usize {
        3 * self.n_filters
    }

    /// `chars: (T, d_char)` with `mask: (T,)`, `T ≥ 9`. Masked rows are zeroed
    /// first; a window is pooled when it starts on an unmasked position.
    pub fn encode(&self, tape: &mut Tape, chars: Var, mask: &[u8]) -> Result<Var> {
        let t = tape.value(chars);
        let max_w = CONV_WIDTHS[2];
        if t.rank() != 2 || t.cols() != self.d_char || mask.len() != t.rows() || t.rows() < max_w {
            return Err(AutodiffError::shape("conv_encode", format!("{:?} with mask {}", t.shape(), mask.len())));
        }
        let len = t.rows();
        let x = if mask.iter().all(|&m| m != 0) {
            chars
        } else {
            let m: Vec<f64> = mask.iter().flat_map(|&v| std::iter::repeat_n(f64::from(v), self.d_char)).collect();
            let m = tape.constant(Tensor::matrix(len, self.d_char, m));
            tape.mul(chars, m)?
        };
        let mut pooled = Vec::with_capacity(3);
        for (i, w) in CONV_WIDTHS.into_iter().enumerate() {
            let windows = len - w + 1;
            let valid: Vec<usize> = (0..windows).filter(|&s| mask[s] != 0).collect();
            if valid.is_empty() {
                return Err(AutodiffError::AllMasked { op: "conv_encode" });
            }
            let u = tape.unfold(x, w)?;
            let k = tape.param(self.kernels[i]);
            let b = tape.param(self.biases[i]);
            let uk = tape.matmul(u, k)?;
            let pre = tape.add(uk, b)?;
            let act = tape.relu(pre)?;
            let prefix = valid.iter().enumerate().all(|(j, &s)| j == s);
            let rows = if prefix { act } else { tape.gather_rows(act, &valid)? };
            pooled.push(tape.max_rows(rows, valid.len())?);
        }
        tape.concat(&pooled, 0)
    }
}

#[cfg(test)]
mod tests;
