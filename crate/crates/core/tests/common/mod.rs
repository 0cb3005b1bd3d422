//! Plain-`Vec` reference implementations, written independently of the graph.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use memdec::autodiff::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn uniform_mat(r: usize, c: usize, scale: f64, rng: &mut ChaCha8Rng) -> Mat {
    (0..r).map(|_| uniform_vec(c, scale, rng)).collect()
}

pub fn tensor(m: &Mat) -> Tensor {
    let cols = m.first().map_or(0, |r| r.len());
    Tensor::matrix(m.len(), cols, m.concat()).unwrap()
}

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn matvec(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, x)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn tanh_v(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `Σ_i w_i rows_i`.
pub fn blend(w: &[f64], rows: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (wi, row) in w.iter().zip(rows) {
        for (o, r) in out.iter_mut().zip(row) {
            *o += wi * r;
        }
    }
    out
}

pub struct Gru {
    /// `[3h, in]`, rows ordered update, reset, candidate.
    pub w: Mat,
    pub b: Vec<f64>,
    pub u_z: Mat,
    pub u_r: Mat,
    pub u_h: Mat,
}

impl Gru {
    pub fn random(input: usize, h: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        Gru {
            w: uniform_mat(3 * h, input, scale, rng),
            b: uniform_vec(3 * h, scale, rng),
            u_z: uniform_mat(h, h, scale, rng),
            u_r: uniform_mat(h, h, scale, rng),
            u_h: uniform_mat(h, h, scale, rng),
        }
    }

    pub fn step(&self, prev: &[f64], x: &[f64]) -> Vec<f64> {
        let h = prev.len();
        let proj = add(&matvec(&self.w, x), &self.b);
        let z: Vec<f64> = (0..h).map(|i| sigmoid(proj[i] + dot(&self.u_z[i], prev))).collect();
        let r: Vec<f64> = (0..h).map(|i| sigmoid(proj[h + i] + dot(&self.u_r[i], prev))).collect();
        let rh: Vec<f64> = r.iter().zip(prev).map(|(a, b)| a * b).collect();
        (0..h)
            .map(|i| {
                let cand = (proj[2 * h + i] + dot(&self.u_h[i], &rh)).tanh();
                (1.0 - z[i]) * prev[i] + z[i] * cand
            })
            .collect()
    }
}

/// Bidirectional annotations `[fwd_j; bwd_j]` from zero initial states.
pub fn encode(embed: &Mat, fwd: &Gru, bwd: &Gru, ids: &[usize]) -> Mat {
    let d = fwd.b.len() / 3;
    let mut f = Vec::new();
    let mut h = vec![0.0; d];
    for &id in ids {
        h = fwd.step(&h, &embed[id]);
        f.push(h.clone());
    }
    let mut b = vec![vec![0.0; d]; ids.len()];
    let mut h = vec![0.0; d];
    for j in (0..ids.len()).rev() {
        h = bwd.step(&h, &embed[ids[j]]);
        b[j] = h.clone();
    }
    f.into_iter().zip(b).map(|(x, y)| [x, y].concat()).collect()
}

/// Attention weights and context for `query` over `annotations`.
pub fn attend(w: &Mat, u: &Mat, v: &[f64], query: &[f64], annotations: &Mat) -> (Vec<f64>, Vec<f64>) {
    let wq = matvec(w, query);
    let scores: Vec<f64> = annotations
        .iter()
        .map(|h| dot(v, &tanh_v(&add(&wq, &matvec(u, h)))))
        .collect();
    let alpha = softmax(&scores);
    let ctx = blend(&alpha, annotations);
    (alpha, ctx)
}

pub struct Addr {
    pub w: Mat,
    pub u: Mat,
    pub v: Vec<f64>,
    pub gate: Vec<f64>,
}

impl Addr {
    pub fn random(m: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        Addr {
            w: uniform_mat(m, m, scale, rng),
            u: uniform_mat(m, m, scale, rng),
            v: uniform_vec(m, scale, rng),
            gate: uniform_vec(m, scale, rng),
        }
    }

    /// `(weights, content, gate)`.
    pub fn address(&self, state: &[f64], cells: &Mat, prev: &[f64], tanh: bool) -> (Vec<f64>, Vec<f64>, f64) {
        let us = matvec(&self.u, state);
        let scores: Vec<f64> = cells
            .iter()
            .map(|c| {
                let k = add(&matvec(&self.w, c), &us);
                dot(&self.v, &if tanh { tanh_v(&k) } else { k })
            })
            .collect();
        let content = softmax(&scores);
        let g = sigmoid(dot(&self.gate, state));
        let w = content.iter().zip(prev).map(|(c, p)| (1.0 - g) * c + g * p).collect();
        (w, content, g)
    }
}

/// `(erased, written)` cells.
pub fn write(cells: &Mat, w: &[f64], mu_erase: &[f64], mu_add: &[f64]) -> (Mat, Mat) {
    let erased: Mat = cells
        .iter()
        .zip(w)
        .map(|(row, wi)| row.iter().zip(mu_erase).map(|(c, e)| c * (1.0 - wi * e)).collect())
        .collect();
    let written = erased
        .iter()
        .zip(w)
        .map(|(row, wi)| row.iter().zip(mu_add).map(|(c, a)| c + wi * a).collect())
        .collect();
    (erased, written)
}

pub fn sigmoid_v(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid(v)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    let d = max_abs_diff(a, b);
    assert!(d <= tol, "{what}: max diff {d:e} > {tol:e}\n{a:?}\n{b:?}");
}
