//! Test-side oracles: finite differences, a scalar reverse-mode tape and a
//! straight-line SAC built on it.

#![allow(dead_code)]

pub mod sac;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct V(usize);

/// Scalar reverse-mode autodiff. Each node keeps up to two parents with the
/// local partial derivatives.
#[derive(Default)]
pub struct Tape {
    vals: Vec<f64>,
    parents: Vec<[(usize, f64); 2]>,
}

const NONE: (usize, f64) = (usize::MAX, 0.0);

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, v: f64, a: (usize, f64), b: (usize, f64)) -> V {
        self.vals.push(v);
        self.parents.push([a, b]);
        V(self.vals.len() - 1)
    }

    pub fn var(&mut self, v: f64) -> V {
        self.push(v, NONE, NONE)
    }

    pub fn val(&self, x: V) -> f64 {
        self.vals[x.0]
    }

    pub fn add(&mut self, a: V, b: V) -> V {
        self.push(self.val(a) + self.val(b), (a.0, 1.0), (b.0, 1.0))
    }

    pub fn sub(&mut self, a: V, b: V) -> V {
        self.push(self.val(a) - self.val(b), (a.0, 1.0), (b.0, -1.0))
    }

    pub fn mul(&mut self, a: V, b: V) -> V {
        let (x, y) = (self.val(a), self.val(b));
        self.push(x * y, (a.0, y), (b.0, x))
    }

    pub fn scale(&mut self, a: V, k: f64) -> V {
        self.push(self.val(a) * k, (a.0, k), NONE)
    }

    pub fn shift(&mut self, a: V, k: f64) -> V {
        self.push(self.val(a) + k, (a.0, 1.0), NONE)
    }

    pub fn tanh(&mut self, a: V) -> V {
        let t = self.val(a).tanh();
        self.push(t, (a.0, 1.0 - t * t), NONE)
    }

    pub fn exp(&mut self, a: V) -> V {
        let e = self.val(a).exp();
        self.push(e, (a.0, e), NONE)
    }

    pub fn ln(&mut self, a: V) -> V {
        let x = self.val(a);
        self.push(x.ln(), (a.0, 1.0 / x), NONE)
    }

    pub fn sqrt(&mut self, a: V) -> V {
        let s = self.val(a).sqrt();
        self.push(s, (a.0, 0.5 / s), NONE)
    }

    pub fn recip(&mut self, a: V) -> V {
        let x = self.val(a);
        self.push(1.0 / x, (a.0, -1.0 / (x * x)), NONE)
    }

    pub fn relu(&mut self, a: V) -> V {
        let x = self.val(a);
        if x > 0.0 {
            self.push(x, (a.0, 1.0), NONE)
        } else {
            self.push(0.0, NONE, NONE)
        }
    }

    pub fn clamp(&mut self, a: V, lo: f64, hi: f64) -> V {
        let x = self.val(a);
        if x < lo {
            self.push(lo, NONE, NONE)
        } else if x > hi {
            self.push(hi, NONE, NONE)
        } else {
            self.push(x, (a.0, 1.0), NONE)
        }
    }

    pub fn sum(&mut self, xs: &[V]) -> V {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    /// d out / d node for every node.
    pub fn grad(&self, out: V) -> Vec<f64> {
        let mut g = vec![0.0; self.vals.len()];
        g[out.0] = 1.0;
        for i in (0..=out.0).rev() {
            if g[i] == 0.0 {
                continue;
            }
            for &(p, d) in &self.parents[i] {
                if p != usize::MAX {
                    g[p] += g[i] * d;
                }
            }
        }
        g
    }
}

/// Dense ReLU network over tape variables. Layer parameters sit in one flat
/// vector: input-major weights, bias, then LayerNorm gain and shift on hidden
/// layers when enabled.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub layer_norm: bool,
}

pub const LN_EPS: f64 = 1e-5;

impl Mlp {
    pub fn num_params(&self) -> usize {
        let n = self.widths.len() - 1;
        (0..n)
            .map(|l| {
                let (i, o) = (self.widths[l], self.widths[l + 1]);
                i * o + o + if l + 1 < n && self.layer_norm { 2 * o } else { 0 }
            })
            .sum()
    }

    /// Raw outputs of the last linear layer for one input row.
    pub fn forward(&self, t: &mut Tape, p: &[V], x: &[V]) -> Vec<V> {
        assert_eq!(p.len(), self.num_params());
        let layers = self.widths.len() - 1;
        let mut off = 0;
        let mut h = x.to_vec();
        for l in 0..layers {
            let (ni, no) = (self.widths[l], self.widths[l + 1]);
            let w = &p[off..off + ni * no];
            let b = &p[off + ni * no..off + ni * no + no];
            off += ni * no + no;
            let mut z: Vec<V> = (0..no)
                .map(|j| {
                    let mut acc = b[j];
                    for i in 0..ni {
                        let m = t.mul(h[i], w[i * no + j]);
                        acc = t.add(acc, m);
                    }
                    acc
                })
                .collect();
            if l + 1 == layers {
                return z;
            }
            if self.layer_norm {
                let gain = &p[off..off + no];
                let shift = &p[off + no..off + 2 * no];
                off += 2 * no;
                let total = t.sum(&z);
                let mean = t.scale(total, 1.0 / no as f64);
                let centered: Vec<V> = z.iter().map(|&v| t.sub(v, mean)).collect();
                let squares: Vec<V> = centered.iter().map(|&c| t.mul(c, c)).collect();
                let ss = t.sum(&squares);
                let var = t.scale(ss, 1.0 / no as f64);
                let var_eps = t.shift(var, LN_EPS);
                let sd = t.sqrt(var_eps);
                let inv = t.recip(sd);
                z = centered
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| {
                        let xh = t.mul(c, inv);
                        let g = t.mul(gain[j], xh);
                        t.add(g, shift[j])
                    })
                    .collect();
            }
            h = z.into_iter().map(|v| t.relu(v)).collect();
        }
        unreachable!()
    }
}
