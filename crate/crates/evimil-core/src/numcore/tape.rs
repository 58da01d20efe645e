//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A `Tape` records every operation in execution order; `backward` walks the
//! list in reverse, feeding each node's accumulated gradient into a closure
//! that scatters local derivatives to its parents. Insertion order is a
//! topological order by construction, so no explicit sort is needed. A tape is
//! built per forward pass and dropped after the gradients are read; nothing
//! here supports differentiating through a backward pass (the losses need only
//! first-order gradients, their curvature terms are closed-form).
//!
//! Graphs are single-threaded by design; independent tapes on independent
//! threads do not share state.

use std::cell::RefCell;

use super::array::{broadcast_kind, broadcast_zip, reduce_to, Array};
use super::special;

type BackFn = Box<dyn Fn(&Array, &[Array], &mut [Array])>;

#[derive(Default)]
pub struct Tape {
    values: RefCell<Vec<Array>>,
    backs: RefCell<Vec<Option<BackFn>>>,
}

/// Handle to one node of a tape. Cheap to copy; tied to its tape's lifetime.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

/// Gradients of one scalar root with respect to every node of its tape.
pub struct Gradients {
    grads: Vec<Array>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> &Array {
        &self.grads[v.idx]
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enter a value as a leaf node. Leaves accumulate gradients; whether a
    /// leaf is a trainable parameter or a constant is the caller's concern
    /// (constants simply never have their gradient read).
    pub fn leaf(&self, value: Array) -> Var<'_> {
        self.push(value, None)
    }

    fn push(&self, value: Array, back: Option<BackFn>) -> Var<'_> {
        let mut values = self.values.borrow_mut();
        values.push(value);
        self.backs.borrow_mut().push(back);
        Var { tape: self, idx: values.len() - 1 }
    }

    /// Reverse sweep from a scalar root. Gradient slots of all nodes are
    /// zero-initialized, the root's is seeded with 1.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(root.tape, self), "root belongs to a different tape");
        let values = self.values.borrow();
        let backs = self.backs.borrow();
        assert_eq!(values[root.idx].len(), 1, "backward requires a scalar root");
        let mut grads: Vec<Array> = values.iter().map(|v| Array::zeros(v.shape())).collect();
        grads[root.idx] = Array::scalar(1.0);
        for i in (0..=root.idx).rev() {
            if let Some(back) = &backs[i] {
                let g = std::mem::take(&mut grads[i]);
                back(&g, &values, &mut grads);
                grads[i] = g;
            }
        }
        Gradients { grads }
    }
}

impl Default for Array {
    fn default() -> Array {
        Array::zeros(&[0])
    }
}

enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Array {
        self.tape.values.borrow()[self.idx].clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.values.borrow()[self.idx].shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.values.borrow()[self.idx].item()
    }

    fn binary(self, other: Var<'t>, op: BinOp) -> Var<'t> {
        let (a, b) = (self.idx, other.idx);
        let (out, kind, b_shape) = {
            let values = self.tape.values.borrow();
            let (va, vb) = (&values[a], &values[b]);
            let kind = broadcast_kind(va, vb);
            let out = match op {
                BinOp::Add => broadcast_zip(va, vb, kind, |x, y| x + y),
                BinOp::Sub => broadcast_zip(va, vb, kind, |x, y| x - y),
                BinOp::Mul => broadcast_zip(va, vb, kind, |x, y| x * y),
                BinOp::Div => broadcast_zip(va, vb, kind, |x, y| x / y),
            };
            (out, kind, vb.shape().to_vec())
        };
        let back: BackFn = match op {
            BinOp::Add => Box::new(move |g, _values, grads| {
                grads[a].add_assign(g);
                let gb = reduce_to(g, &b_shape, kind);
                grads[b].add_assign(&gb);
            }),
            BinOp::Sub => Box::new(move |g, _values, grads| {
                grads[a].add_assign(g);
                let mut gb = reduce_to(g, &b_shape, kind);
                gb.scale_assign(-1.0);
                grads[b].add_assign(&gb);
            }),
            BinOp::Mul => Box::new(move |g, values, grads| {
                let ga = broadcast_zip(g, &values[b], kind, |gv, bv| gv * bv);
                grads[a].add_assign(&ga);
                let gb_full = g.zip_map(&values[a], |gv, av| gv * av);
                grads[b].add_assign(&reduce_to(&gb_full, &b_shape, kind));
            }),
            BinOp::Div => Box::new(move |g, values, grads| {
                let ga = broadcast_zip(g, &values[b], kind, |gv, bv| gv / bv);
                grads[a].add_assign(&ga);
                let quot = broadcast_zip(&values[a], &values[b], kind, |av, bv| -av / (bv * bv));
                let gb_full = g.zip_map(&quot, |gv, qv| gv * qv);
                grads[b].add_assign(&reduce_to(&gb_full, &b_shape, kind));
            }),
        };
        self.tape.push(out, Some(back))
    }

    /// Elementwise sum; `other` may broadcast (row, column or scalar).
    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, BinOp::Div)
    }

    fn unary(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'t> {
        let a = self.idx;
        let out = self.tape.values.borrow()[a].map(f);
        let out_idx = self.tape.len();
        let back: BackFn = Box::new(move |g, values, grads| {
            let xa = &values[a];
            let ya = &values[out_idx];
            let mut ga = Array::zeros(xa.shape());
            for i in 0..ga.len() {
                ga.as_mut_slice()[i] = g.as_slice()[i] * df(xa.as_slice()[i], ya.as_slice()[i]);
            }
            grads[a].add_assign(&ga);
        });
        self.tape.push(out, Some(back))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_x, y| y)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(f64::ln, |x, _y| 1.0 / x)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, |_x, y| 1.0 - y * y)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _y| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _y| 2.0 * x)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(|x| 1.0 / x, |_x, y| -(y * y))
    }

    pub fn lgamma(self) -> Var<'t> {
        self.unary(special::lgamma, |x, _y| special::digamma(x))
    }

    pub fn digamma(self) -> Var<'t> {
        self.unary(special::digamma, |x, _y| special::trigamma(x))
    }

    pub fn trigamma(self) -> Var<'t> {
        self.unary(special::trigamma, |x, _y| special::tetragamma(x))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(move |x| x * s, move |_x, _y| s)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(move |x| x + s, |_x, _y| 1.0)
    }

    /// Matrix product; both operands 2-D.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.idx, other.idx);
        let out = {
            let values = self.tape.values.borrow();
            values[a].matmul(&values[b])
        };
        let back: BackFn = Box::new(move |g, values, grads| {
            grads[a].add_assign(&g.matmul_nt(&values[b]));
            grads[b].add_assign(&values[a].matmul_tn(g));
        });
        self.tape.push(out, Some(back))
    }

    /// Softmax along `axis` lanes; rows for axis 1, columns for axis 0.
    /// 1-D inputs use axis 0. Max-shifted for stability.
    pub fn softmax_axis(self, axis: usize) -> Var<'t> {
        let a = self.idx;
        let (out, lanes) = {
            let values = self.tape.values.borrow();
            let v = &values[a];
            let lanes = lane_index(v.shape(), axis, v.ndim());
            let mut out = Array::zeros(v.shape());
            for lane in &lanes {
                let m = lane.iter().map(|&i| v.as_slice()[i]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for &i in lane {
                    let e = (v.as_slice()[i] - m).exp();
                    out.as_mut_slice()[i] = e;
                    z += e;
                }
                for &i in lane {
                    out.as_mut_slice()[i] /= z;
                }
            }
            (out, lanes)
        };
        let out_idx = self.tape.len();
        let back: BackFn = Box::new(move |g, values, grads| {
            let s = &values[out_idx];
            let mut ga = Array::zeros(s.shape());
            for lane in &lanes {
                let dot: f64 = lane.iter().map(|&i| g.as_slice()[i] * s.as_slice()[i]).sum();
                for &i in lane {
                    ga.as_mut_slice()[i] = s.as_slice()[i] * (g.as_slice()[i] - dot);
                }
            }
            grads[a].add_assign(&ga);
        });
        self.tape.push(out, Some(back))
    }

    pub fn sum(self) -> Var<'t> {
        let a = self.idx;
        let out = Array::scalar(self.tape.values.borrow()[a].sum());
        let back: BackFn = Box::new(move |g, values, grads| {
            let gv = g.item();
            let add = Array::full(values[a].shape(), gv);
            grads[a].add_assign(&add);
        });
        self.tape.push(out, Some(back))
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.idx;
        let n = self.tape.values.borrow()[a].len();
        let out = Array::scalar(self.tape.values.borrow()[a].sum() / n as f64);
        let back: BackFn = Box::new(move |g, values, grads| {
            let gv = g.item() / n as f64;
            let add = Array::full(values[a].shape(), gv);
            grads[a].add_assign(&add);
        });
        self.tape.push(out, Some(back))
    }

    /// Sum a matrix along `axis` (0: down columns → [cols], 1: across rows → [rows]).
    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        self.reduce_axis(axis, false)
    }

    /// Mean along `axis`, same shapes as `sum_axis`.
    pub fn mean_axis(self, axis: usize) -> Var<'t> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(self, axis: usize, mean: bool) -> Var<'t> {
        let a = self.idx;
        let (out, rows, cols) = {
            let values = self.tape.values.borrow();
            let v = &values[a];
            assert_eq!(v.ndim(), 2, "sum_axis/mean_axis require a matrix");
            let (rows, cols) = (v.rows(), v.cols());
            let mut out = if axis == 0 { vec![0.0; cols] } else { vec![0.0; rows] };
            for r in 0..rows {
                for c in 0..cols {
                    let t = if axis == 0 { c } else { r };
                    out[t] += v.as_slice()[r * cols + c];
                }
            }
            let denom = if mean {
                if axis == 0 { rows as f64 } else { cols as f64 }
            } else {
                1.0
            };
            for o in out.iter_mut() {
                *o /= denom;
            }
            (Array::vector(out), rows, cols)
        };
        let denom = if mean {
            if axis == 0 { rows as f64 } else { cols as f64 }
        } else {
            1.0
        };
        let back: BackFn = Box::new(move |g, _values, grads| {
            let mut ga = Array::zeros(&[rows, cols]);
            for r in 0..rows {
                for c in 0..cols {
                    let t = if axis == 0 { c } else { r };
                    ga.as_mut_slice()[r * cols + c] = g.as_slice()[t] / denom;
                }
            }
            grads[a].add_assign(&ga);
        });
        self.tape.push(out, Some(back))
    }

    /// Max along `axis` of a matrix (0: per-column max → [cols], 1: per-row max
    /// → [rows]); 1-D input reduces to a scalar. Ties send the subgradient to
    /// the lowest index.
    pub fn max_axis(self, axis: usize) -> Var<'t> {
        let a = self.idx;
        let (out, winners, in_shape) = {
            let values = self.tape.values.borrow();
            let v = &values[a];
            let lanes = lane_index(v.shape(), axis, v.ndim());
            let mut out = Vec::with_capacity(lanes.len());
            let mut winners = Vec::with_capacity(lanes.len());
            for lane in &lanes {
                let mut best = lane[0];
                for &i in lane {
                    if v.as_slice()[i] > v.as_slice()[best] {
                        best = i;
                    }
                }
                out.push(v.as_slice()[best]);
                winners.push(best);
            }
            let arr = if v.ndim() == 1 { Array::scalar(out[0]) } else { Array::vector(out) };
            (arr, winners, v.shape().to_vec())
        };
        let back: BackFn = Box::new(move |g, _values, grads| {
            let mut ga = Array::zeros(&in_shape);
            for (lane, &w) in winners.iter().enumerate() {
                ga.as_mut_slice()[w] += g.as_slice()[lane];
            }
            grads[a].add_assign(&ga);
        });
        self.tape.push(out, Some(back))
    }

    /// Elementwise choice: where `mask` is nonzero take `self`, else `other`.
    /// The mask is plain data; gradients route to whichever branch was taken.
    pub fn select(self, mask: &Array, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.idx, other.idx);
        let mask = mask.clone();
        let out = {
            let values = self.tape.values.borrow();
            assert_eq!(values[a].shape(), mask.shape(), "select mask shape");
            assert_eq!(values[a].shape(), values[b].shape(), "select branch shapes");
            let mut out = values[a].clone();
            for i in 0..out.len() {
                if mask.as_slice()[i] == 0.0 {
                    out.as_mut_slice()[i] = values[b].as_slice()[i];
                }
            }
            out
        };
        let back: BackFn = Box::new(move |g, _values, grads| {
            let mut ga = Array::zeros(g.shape());
            let mut gb = Array::zeros(g.shape());
            for i in 0..g.len() {
                if mask.as_slice()[i] != 0.0 {
                    ga.as_mut_slice()[i] = g.as_slice()[i];
                } else {
                    gb.as_mut_slice()[i] = g.as_slice()[i];
                }
            }
            grads[a].add_assign(&ga);
            grads[b].add_assign(&gb);
        });
        self.tape.push(out, Some(back))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let a = self.idx;
        let shape = shape.to_vec();
        let out = self.tape.values.borrow()[a].reshaped(&shape);
        let back: BackFn = Box::new(move |g, values, grads| {
            let ga = g.reshaped(values[a].shape());
            grads[a].add_assign(&ga);
        });
        self.tape.push(out, Some(back))
    }
}

/// Flat indices of each lane along `axis` for a 1-D or 2-D shape.
fn lane_index(shape: &[usize], axis: usize, ndim: usize) -> Vec<Vec<usize>> {
    match ndim {
        1 => {
            assert_eq!(axis, 0, "1-D arrays only have axis 0");
            vec![(0..shape[0]).collect()]
        }
        2 => {
            let (rows, cols) = (shape[0], shape[1]);
            if axis == 0 {
                (0..cols).map(|c| (0..rows).map(|r| r * cols + c).collect()).collect()
            } else {
                (0..rows).map(|r| (r * cols..(r + 1) * cols).collect()).collect()
            }
        }
        _ => panic!("lane operations support 1-D and 2-D arrays only"),
    }
}
