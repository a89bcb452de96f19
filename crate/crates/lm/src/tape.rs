//! A small reverse-mode tape over 2-D arrays. Ops are coarse (a whole GRU
//! cell, a whole causal attention block) so the tape stays short and the
//! backward passes are written out by hand.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, NdFloat, Zip};
use num_traits::FromPrimitive;

/// Scalar type the tape runs on (`f32` for training, `f64` for gradient checks).
pub trait Real: NdFloat + FromPrimitive + Default {}
impl<T: NdFloat + FromPrimitive + Default> Real for T {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<F> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    Rows {
        a: usize,
        start: usize,
    },
    ConcatRows(Vec<usize>),
    MaskScale {
        a: usize,
        mask: Array2<F>,
    },
    Relu(usize),
    LayerNorm {
        a: usize,
        gamma: usize,
        beta: usize,
        xhat: Array2<F>,
        inv_std: Array1<F>,
    },
    Gru {
        x: usize,
        h: usize,
        w_hh: usize,
        b_hh: usize,
        r: Array2<F>,
        z: Array2<F>,
        n: Array2<F>,
        hh_n: Array2<F>,
    },
    Attention {
        qkv: usize,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<Array2<F>>,
    },
    Xent {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Array2<F>,
        count: usize,
    },
}

struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
}

#[derive(Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    /// A leaf: a parameter or a constant input.
    pub fn leaf(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a.0, b.0))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a.0, row.0))
    }

    /// `a · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, a: Var, w: Var, b: Var) -> Var {
        let m = self.matmul(a, w);
        self.add_row(m, b)
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Array2::zeros((ids.len(), t.ncols()));
        for (mut row, &id) in v.rows_mut().into_iter().zip(ids) {
            row.assign(&t.row(id));
        }
        self.push(
            v,
            Op::Gather {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    /// Rows `start..start + len` of `a`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::Rows { a: a.0, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("matching widths");
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask_scale(&mut self, a: Var, mask: Array2<F>) -> Var {
        let v = self.value(a) * &mask;
        self.push(v, Op::MaskScale { a: a.0, mask })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > F::zero() { x } else { F::zero() });
        self.push(v, Op::Relu(a.0))
    }

    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Var {
        let eps = F::from_f64(1e-5).unwrap();
        let x = self.value(a);
        let width = F::from_usize(x.ncols()).unwrap();
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / width;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / width;
            *is = F::one() / (var + eps).sqrt();
            let k = *is;
            row.mapv_inplace(|v| v * k);
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            v,
            Op::LayerNorm {
                a: a.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
        )
    }

    /// One GRU step with PyTorch gate order `[r, z, n]`. `x` already holds
    /// `x·W_ih + b_ih`.
    pub fn gru_cell(&mut self, x: Var, h: Var, w_hh: Var, b_hh: Var) -> Var {
        let hh = self.value(h).dot(self.value(w_hh)) + self.value(b_hh);
        let xv = self.value(x);
        let hid = hh.ncols() / 3;
        let rows = hh.nrows();
        let mut r = Array2::zeros((rows, hid));
        let mut z = Array2::zeros((rows, hid));
        let mut n = Array2::zeros((rows, hid));
        let hh_n = hh.slice(s![.., 2 * hid..]).to_owned();
        Zip::from(&mut r)
            .and(&xv.slice(s![.., ..hid]))
            .and(&hh.slice(s![.., ..hid]))
            .for_each(|r, &a, &b| *r = sigmoid(a + b));
        Zip::from(&mut z)
            .and(&xv.slice(s![.., hid..2 * hid]))
            .and(&hh.slice(s![.., hid..2 * hid]))
            .for_each(|z, &a, &b| *z = sigmoid(a + b));
        Zip::from(&mut n)
            .and(&xv.slice(s![.., 2 * hid..]))
            .and(&r)
            .and(&hh_n)
            .for_each(|n, &a, &r, &b| *n = (a + r * b).tanh());
        let mut out = Array2::zeros((rows, hid));
        Zip::from(&mut out)
            .and(&z)
            .and(&n)
            .and(self.value(h))
            .for_each(|o, &z, &n, &h| *o = (F::one() - z) * n + z * h);
        self.push(
            out,
            Op::Gru {
                x: x.0,
                h: h.0,
                w_hh: w_hh.0,
                b_hh: b_hh.0,
                r,
                z,
                n,
                hh_n,
            },
        )
    }

    /// Multi-head causal self-attention over `batch` sequences of length
    /// `seq`, rows laid out as `b * seq + t`. `qkv` has width `3 · hidden`.
    pub fn causal_attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize) -> Var {
        let x = self.value(qkv);
        let hidden = x.ncols() / 3;
        let d = hidden / heads;
        let scale = F::one() / F::from_usize(d).unwrap().sqrt();
        let mut out = Array2::zeros((batch * seq, hidden));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let rows = s![b * seq..(b + 1) * seq, ..];
            let xb = x.slice(rows);
            for h in 0..heads {
                let q = xb.slice(s![.., h * d..(h + 1) * d]);
                let k = xb.slice(s![.., hidden + h * d..hidden + (h + 1) * d]);
                let v = xb.slice(s![.., 2 * hidden + h * d..2 * hidden + (h + 1) * d]);
                let mut p = q.dot(&k.t());
                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                    let mut max = F::neg_infinity();
                    for j in 0..=i {
                        row[j] = row[j] * scale;
                        max = max.max(row[j]);
                    }
                    let mut sum = F::zero();
                    for j in 0..=i {
                        row[j] = (row[j] - max).exp();
                        sum += row[j];
                    }
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = if j <= i { *r / sum } else { F::zero() };
                    }
                }
                out.slice_mut(s![b * seq..(b + 1) * seq, h * d..(h + 1) * d])
                    .assign(&p.dot(&v));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                qkv: qkv.0,
                batch,
                seq,
                heads,
                probs,
            },
        )
    }

    /// Mean cross-entropy of `softmax(logits)` against the targets; rows
    /// with `None` are ignored. Returns a `1 × 1` node.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let l = self.value(logits);
        let mut probs = l.clone();
        let mut loss = F::zero();
        let mut count = 0;
        for (mut row, t) in probs.rows_mut().into_iter().zip(targets) {
            let max = row.fold(F::neg_infinity(), |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
            if let Some(t) = *t {
                loss -= row[t].ln();
                count += 1;
            }
        }
        let loss = if count > 0 {
            loss / F::from_usize(count).unwrap()
        } else {
            F::zero()
        };
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::Xent {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
                count,
            },
        )
    }

    /// Gradients of the scalar node `loss` with respect to every node. Entry
    /// `i` is `None` when node `i` does not influence the loss.
    pub fn backward(&self, loss: Var) -> Vec<Option<Array2<F>>> {
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    fn backprop(&self, i: usize, g: &Array2<F>, grads: &mut [Option<Array2<F>>]) {
        let val = |j: usize| &self.nodes[j].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.dot(&val(*b).t()));
                accumulate(grads, *b, val(*a).t().dot(g));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Gather { table, ids } => {
                let mut gt = Array2::zeros(val(*table).raw_dim());
                for (row, &id) in g.rows().into_iter().zip(ids) {
                    let mut dst = gt.row_mut(id);
                    dst += &row;
                }
                accumulate(grads, *table, gt);
            }
            Op::Rows { a, start } => {
                let ga = grads[*a].get_or_insert_with(|| Array2::zeros(val(*a).raw_dim()));
                let mut dst = ga.slice_mut(s![*start..*start + g.nrows(), ..]);
                dst += g;
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let n = val(p).nrows();
                    accumulate(grads, p, g.slice(s![at..at + n, ..]).to_owned());
                    at += n;
                }
            }
            Op::MaskScale { a, mask } => accumulate(grads, *a, g * mask),
            Op::Relu(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(&self.nodes[i].value).for_each(|g, &y| {
                    if y <= F::zero() {
                        *g = F::zero();
                    }
                });
                accumulate(grads, *a, ga);
            }
            Op::LayerNorm {
                a,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let width = F::from_usize(g.ncols()).unwrap();
                let dxhat = g * val(*gamma);
                let mut dx = Array2::zeros(g.raw_dim());
                for ((mut dxr, (dh, xh)), &is) in dx
                    .rows_mut()
                    .into_iter()
                    .zip(dxhat.rows().into_iter().zip(xhat.rows()))
                    .zip(inv_std)
                {
                    let s1 = dh.sum();
                    let s2 = dh.iter().zip(xh).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                    Zip::from(&mut dxr)
                        .and(&dh)
                        .and(&xh)
                        .for_each(|d, &dh, &xh| *d = is / width * (width * dh - s1 - xh * s2));
                }
                accumulate(grads, *a, dx);
                accumulate(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Gru {
                x,
                h,
                w_hh,
                b_hh,
                r,
                z,
                n,
                hh_n,
            } => {
                let hid = r.ncols();
                let rows = r.nrows();
                let hv = val(*h);
                let mut dx = Array2::zeros((rows, 3 * hid));
                let mut dhh = Array2::zeros((rows, 3 * hid));
                let mut dh = Array2::zeros((rows, hid));
                for b in 0..rows {
                    for k in 0..hid {
                        let go = g[(b, k)];
                        let (rv, zv, nv) = (r[(b, k)], z[(b, k)], n[(b, k)]);
                        let dz = go * (hv[(b, k)] - nv);
                        let dn = go * (F::one() - zv);
                        dh[(b, k)] = go * zv;
                        let dan = dn * (F::one() - nv * nv);
                        let dr = dan * hh_n[(b, k)];
                        let dar = dr * rv * (F::one() - rv);
                        let daz = dz * zv * (F::one() - zv);
                        dx[(b, k)] = dar;
                        dx[(b, hid + k)] = daz;
                        dx[(b, 2 * hid + k)] = dan;
                        dhh[(b, k)] = dar;
                        dhh[(b, hid + k)] = daz;
                        dhh[(b, 2 * hid + k)] = dan * rv;
                    }
                }
                dh += &dhh.dot(&val(*w_hh).t());
                accumulate(grads, *w_hh, hv.t().dot(&dhh));
                accumulate(grads, *b_hh, dhh.sum_axis(Axis(0)).insert_axis(Axis(0)));
                accumulate(grads, *h, dh);
                accumulate(grads, *x, dx);
            }
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            } => {
                let x = val(*qkv);
                let hidden = x.ncols() / 3;
                let d = hidden / heads;
                let scale = F::one() / F::from_usize(d).unwrap().sqrt();
                let mut gx = Array2::zeros(x.raw_dim());
                for b in 0..*batch {
                    let rows = b * seq..(b + 1) * seq;
                    for h in 0..*heads {
                        let p = &probs[b * heads + h];
                        let cols = |off: usize| off + h * d..off + (h + 1) * d;
                        let q = x.slice(s![rows.clone(), cols(0)]);
                        let k = x.slice(s![rows.clone(), cols(hidden)]);
                        let v = x.slice(s![rows.clone(), cols(2 * hidden)]);
                        let go = g.slice(s![rows.clone(), cols(0)]);
                        let dp = go.dot(&v.t());
                        let dv = p.t().dot(&go);
                        let mut ds = dp;
                        for (mut dsr, pr) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let dot = dsr.iter().zip(pr).fold(F::zero(), |a, (&x, &y)| a + x * y);
                            Zip::from(&mut dsr).and(&pr).for_each(|d, &p| *d = p * (*d - dot) * scale);
                        }
                        let dq = ds.dot(&k);
                        let dk = ds.t().dot(&q);
                        gx.slice_mut(s![rows.clone(), cols(0)]).assign(&dq);
                        gx.slice_mut(s![rows.clone(), cols(hidden)]).assign(&dk);
                        gx.slice_mut(s![rows.clone(), cols(2 * hidden)]).assign(&dv);
                    }
                }
                accumulate(grads, *qkv, gx);
            }
            Op::Xent {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let scale = g[(0, 0)] / F::from_usize(*count).unwrap();
                let mut gl = probs.clone();
                for (mut row, t) in gl.rows_mut().into_iter().zip(targets) {
                    match t {
                        Some(t) => {
                            row[*t] -= F::one();
                            row.mapv_inplace(|v| v * scale);
                        }
                        None => row.fill(F::zero()),
                    }
                }
                accumulate(grads, *logits, gl);
            }
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Array2<F>>], idx: usize, g: Array2<F>) {
    match &mut grads[idx] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
