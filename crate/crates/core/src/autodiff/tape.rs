//! Define-by-run reverse-mode graph over dense tensors.
//!
//! A `Tape` is an append-only arena of nodes; node indices are already a
//! topological order, so `backward` is a single reverse sweep. One tape is
//! built per training step and confined to one worker; heavy ops fan out
//! internally through the deterministic kernels in `gemm`.
//!
//! Shape mismatches are programming errors and panic with a diagnostic that
//! names the op and both shapes.

use std::cell::RefCell;
use std::sync::Arc;

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::num::{gelu, gelu_deriv, sigmoid, softplus, Real};
use crate::so3;

/// Handle to a node on the tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Value(pub(crate) usize);

/// Constant multi-channel grid sampled bilinearly by `Tape::bilinear_sample`.
/// Row-major `[h][w][channels]`; coordinates are (u, v) = (col, row) in cell
/// units where integer coordinates land on cell centers.
#[derive(Clone, Debug)]
pub struct SampleGrid<T: Real> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> SampleGrid<T> {
    pub fn cell(&self, row: usize, col: usize) -> &[T] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T: Real> {
    Leaf,
    Constant,
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    MatMul(Value, Value),
    Neg(Value),
    Recip(Value),
    Exp(Value),
    Ln(Value),
    Sin(Value),
    Cos(Value),
    Sqrt(Value),
    Sigmoid(Value),
    Gelu(Value),
    Softplus(Value),
    /// (softplus(beta x) - ln 2) / beta: the fused zero-at-zero activation.
    ScaledSoftplus(Value, T),
    Abs(Value),
    Relu(Value),
    Max2(Value, Value),
    Scale(Value, T),
    AddScalar(Value, T),
    SumAll(Value),
    MeanAll(Value),
    Norm2Rows(Value),
    SumSegments(Value, usize),
    TileRows(Value, usize),
    CumprodExclusive(Value, usize),
    ConcatCols(Vec<Value>),
    ConcatRows(Vec<Value>),
    SliceCols(Value, usize, usize),
    SliceRows(Value, usize, usize),
    GatherRows(Value, Arc<Vec<usize>>),
    Transpose(Value),
    Rodrigues(Value),
    BilinearSample(Value, Arc<SampleGrid<T>>),
}

pub(crate) struct Node<T: Real> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Tensor<T>>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

enum Bcast {
    Same,
    RhsScalar,
    LhsScalar,
    RhsRow,
    LhsRow,
    RhsCol,
    LhsCol,
    /// rhs is vertically tiled over the lhs rows (rhs.rows divides lhs.rows).
    RhsBlock,
    LhsBlock,
}

fn resolve_bcast(op: &str, a: &[usize], arc: (usize, usize), b: &[usize], brc: (usize, usize)) -> Bcast {
    if arc == brc {
        Bcast::Same
    } else if brc == (1, 1) {
        Bcast::RhsScalar
    } else if arc == (1, 1) {
        Bcast::LhsScalar
    } else if brc.0 == 1 && brc.1 == arc.1 {
        Bcast::RhsRow
    } else if arc.0 == 1 && arc.1 == brc.1 {
        Bcast::LhsRow
    } else if brc.1 == 1 && brc.0 == arc.0 {
        Bcast::RhsCol
    } else if arc.1 == 1 && arc.0 == brc.0 {
        Bcast::LhsCol
    } else if brc.1 == arc.1 && brc.0 > 0 && arc.0 % brc.0 == 0 && arc.0 > brc.0 {
        Bcast::RhsBlock
    } else if arc.1 == brc.1 && arc.0 > 0 && brc.0 % arc.0 == 0 && brc.0 > arc.0 {
        Bcast::LhsBlock
    } else {
        panic!("shape mismatch in {op}: {a:?} vs {b:?}");
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Value {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.borrow_mut().push(None);
        Value(nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Value {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable input; never accumulates gradient.
    pub fn constant(&self, value: Tensor<T>) -> Value {
        self.push(value, Op::Constant, false)
    }

    pub fn constant_scalar(&self, v: T) -> Value {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Value) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Value) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Value) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Gradient computed by the most recent `backward` (None if the node was
    /// not reached or does not require grad).
    pub fn grad(&self, v: Value) -> Option<Tensor<T>> {
        self.grads.borrow()[v.0].clone()
    }

    fn rg2(&self, a: Value, b: Value) -> bool {
        let n = self.nodes.borrow();
        n[a.0].requires_grad || n[b.0].requires_grad
    }

    // ---- elementwise binary with broadcast -------------------------------

    fn binary(
        &self,
        name: &str,
        a: Value,
        b: Value,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (arc, brc) = (va.rows_cols(), vb.rows_cols());
            let bc = resolve_bcast(name, va.shape(), arc, vb.shape(), brc);
            let out = match bc {
                Bcast::Same => Tensor::new(
                    va.shape().to_vec(),
                    va.data()
                        .iter()
                        .zip(vb.data())
                        .map(|(&x, &y)| f(x, y))
                        .collect(),
                ),
                Bcast::RhsScalar => {
                    let s = vb.data()[0];
                    va.map(|x| f(x, s))
                }
                Bcast::LhsScalar => {
                    let s = va.data()[0];
                    vb.map(|x| f(s, x))
                }
                Bcast::RhsRow => {
                    let (r, c) = arc;
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for j in 0..c {
                            data.push(f(va.data()[i * c + j], vb.data()[j]));
                        }
                    }
                    Tensor::new(va.shape().to_vec(), data)
                }
                Bcast::LhsRow => {
                    let (r, c) = brc;
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for j in 0..c {
                            data.push(f(va.data()[j], vb.data()[i * c + j]));
                        }
                    }
                    Tensor::new(vb.shape().to_vec(), data)
                }
                Bcast::RhsCol => {
                    let (r, c) = arc;
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let s = vb.data()[i];
                        for j in 0..c {
                            data.push(f(va.data()[i * c + j], s));
                        }
                    }
                    Tensor::new(va.shape().to_vec(), data)
                }
                Bcast::LhsCol => {
                    let (r, c) = brc;
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let s = va.data()[i];
                        for j in 0..c {
                            data.push(f(s, vb.data()[i * c + j]));
                        }
                    }
                    Tensor::new(vb.shape().to_vec(), data)
                }
                Bcast::RhsBlock => {
                    let (r, c) = arc;
                    let (pr, _) = brc;
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let brow = &vb.data()[(i % pr) * c..(i % pr + 1) * c];
                        let arow = &va.data()[i * c..(i + 1) * c];
                        for (x, y) in arow.iter().zip(brow) {
                            data.push(f(*x, *y));
                        }
                    }
                    Tensor::new(va.shape().to_vec(), data)
                }
                Bcast::LhsBlock => {
                    let (r, c) = brc;
                    let (pr, _) = arc;
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let arow = &va.data()[(i % pr) * c..(i % pr + 1) * c];
                        let brow = &vb.data()[i * c..(i + 1) * c];
                        for (x, y) in arow.iter().zip(brow) {
                            data.push(f(*x, *y));
                        }
                    }
                    Tensor::new(vb.shape().to_vec(), data)
                }
            };
            (out, self.rg2(a, b))
        };
        self.push(value, op, rg)
    }

    pub fn add(&self, a: Value, b: Value) -> Value {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Value, b: Value) -> Value {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Value, b: Value) -> Value {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn maximum(&self, a: Value, b: Value) -> Value {
        self.binary("max", a, b, |x, y| x.max(y), Op::Max2(a, b))
    }

    /// a / b as mul(a, recip(b)).
    pub fn div(&self, a: Value, b: Value) -> Value {
        let r = self.recip(b);
        self.mul(a, r)
    }

    // ---- elementwise unary ----------------------------------------------

    fn unary(&self, a: Value, f: impl Fn(T) -> T + Sync, op: Op<T>) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut out = vec![T::ZERO; x.numel()];
            par_map(x.data(), &mut out, &f);
            (
                Tensor::new(x.shape().to_vec(), out),
                nodes[a.0].requires_grad,
            )
        };
        self.push(value, op, rg)
    }

    pub fn neg(&self, a: Value) -> Value {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn recip(&self, a: Value) -> Value {
        self.unary(a, |x| T::ONE / x, Op::Recip(a))
    }

    pub fn exp(&self, a: Value) -> Value {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn ln(&self, a: Value) -> Value {
        self.unary(a, |x| x.ln(), Op::Ln(a))
    }

    pub fn sin(&self, a: Value) -> Value {
        self.unary(a, |x| x.sin(), Op::Sin(a))
    }

    pub fn cos(&self, a: Value) -> Value {
        self.unary(a, |x| x.cos(), Op::Cos(a))
    }

    pub fn sqrt(&self, a: Value) -> Value {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn sigmoid(&self, a: Value) -> Value {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn gelu(&self, a: Value) -> Value {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn softplus(&self, a: Value) -> Value {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Fused (softplus(beta x) - ln 2)/beta; equals x/... -> 0 at x = 0.
    pub fn scaled_softplus(&self, a: Value, beta: T) -> Value {
        let ln2 = T::from_f64(std::f64::consts::LN_2);
        self.unary(
            a,
            move |x| (softplus(beta * x) - ln2) / beta,
            Op::ScaledSoftplus(a, beta),
        )
    }

    pub fn abs(&self, a: Value) -> Value {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    /// max(x, 0)
    pub fn relu(&self, a: Value) -> Value {
        self.unary(a, |x| x.max(T::ZERO), Op::Relu(a))
    }

    pub fn scale(&self, a: Value, c: T) -> Value {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&self, a: Value, c: T) -> Value {
        self.unary(a, |x| x + c, Op::AddScalar(a, c))
    }

    // ---- reductions / structure ------------------------------------------

    pub fn matmul(&self, a: Value, b: Value) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let ((m, k), (k2, n)) = (va.rows_cols(), vb.rows_cols());
            assert!(
                k == k2 && va.shape().len() == 2 && vb.shape().len() == 2,
                "shape mismatch in matmul: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            );
            let mut out = vec![T::ZERO; m * n];
            gemm_nn(m, k, n, va.data(), vb.data(), &mut out);
            (Tensor::new(vec![m, n], out), self.rg2(a, b))
        };
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn sum_all(&self, a: Value) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let s: T = nodes[a.0].value.data().iter().copied().sum();
            (Tensor::scalar(s), nodes[a.0].requires_grad)
        };
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean_all(&self, a: Value) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let s: T = v.data().iter().copied().sum();
            (
                Tensor::scalar(s / T::from_usize(v.numel())),
                nodes[a.0].requires_grad,
            )
        };
        self.push(value, Op::MeanAll(a), rg)
    }

    /// L2 norm along the last axis: [r, c] -> [r, 1].
    pub fn norm2_rows(&self, a: Value) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (r, c) = v.rows_cols();
            let mut out = Vec::with_capacity(r);
            for i in 0..r {
                let row = &v.data()[i * c..(i + 1) * c];
                out.push(row.iter().map(|&x| x * x).sum::<T>().sqrt());
            }
            (Tensor::new(vec![r, 1], out), nodes[a.0].requires_grad)
        };
        self.push(value, Op::Norm2Rows(a), rg)
    }

    /// Sum groups of `seg` consecutive rows: [r*seg, c] -> [r, c].
    pub fn sum_segments(&self, a: Value, seg: usize) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (r, c) = v.rows_cols();
            assert!(
                seg > 0 && r % seg == 0,
                "shape mismatch in sum_segments: {:?} with segment {seg}",
                v.shape()
            );
            let out_rows = r / seg;
            let mut out = vec![T::ZERO; out_rows * c];
            for i in 0..r {
                let orow = &mut out[(i / seg) * c..(i / seg + 1) * c];
                let irow = &v.data()[i * c..(i + 1) * c];
                for (o, &x) in orow.iter_mut().zip(irow) {
                    *o += x;
                }
            }
            (Tensor::new(vec![out_rows, c], out), nodes[a.0].requires_grad)
        };
        self.push(value, Op::SumSegments(a, seg), rg)
    }

    /// Repeat each row `times` consecutive times: [r, c] -> [r*times, c].
    pub fn tile_rows(&self, a: Value, times: usize) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (r, c) = v.rows_cols();
            let mut out = Vec::with_capacity(r * times * c);
            for i in 0..r {
                let row = &v.data()[i * c..(i + 1) * c];
                for _ in 0..times {
                    out.extend_from_slice(row);
                }
            }
            (Tensor::new(vec![r * times, c], out), nodes[a.0].requires_grad)
        };
        self.push(value, Op::TileRows(a, times), rg)
    }

    /// Exclusive cumulative product within each segment of `seg` rows
    /// (per column): out[j] = prod_{i<j} x[i], out[0] = 1.
    pub fn cumprod_exclusive(&self, a: Value, seg: usize) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (r, c) = v.rows_cols();
            assert!(
                seg > 0 && r % seg == 0,
                "shape mismatch in cumprod_exclusive: {:?} with segment {seg}",
                v.shape()
            );
            let mut out = vec![T::ONE; r * c];
            for s in 0..r / seg {
                for j in 1..seg {
                    let prev = (s * seg + j - 1) * c;
                    let cur = (s * seg + j) * c;
                    for col in 0..c {
                        out[cur + col] = out[prev + col] * v.data()[prev + col];
                    }
                }
            }
            (Tensor::new(v.shape().to_vec(), out), nodes[a.0].requires_grad)
        };
        self.push(value, Op::CumprodExclusive(a, seg), rg)
    }

    pub fn concat_cols(&self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty(), "concat_cols of zero parts");
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let r = nodes[parts[0].0].value.rows_cols().0;
            let total_c: usize = parts
                .iter()
                .map(|p| {
                    let (pr, pc) = nodes[p.0].value.rows_cols();
                    assert!(
                        pr == r,
                        "shape mismatch in concat_cols: {:?} vs {} rows",
                        nodes[p.0].value.shape(),
                        r
                    );
                    pc
                })
                .sum();
            let mut out = Vec::with_capacity(r * total_c);
            for i in 0..r {
                for p in parts {
                    let v = &nodes[p.0].value;
                    let (_, pc) = v.rows_cols();
                    out.extend_from_slice(&v.data()[i * pc..(i + 1) * pc]);
                }
            }
            let rg = parts.iter().any(|p| nodes[p.0].requires_grad);
            (Tensor::new(vec![r, total_c], out), rg)
        };
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty(), "concat_rows of zero parts");
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let c = nodes[parts[0].0].value.rows_cols().1;
            let mut out = Vec::new();
            let mut rows = 0;
            for p in parts {
                let v = &nodes[p.0].value;
                let (pr, pc) = v.rows_cols();
                assert!(
                    pc == c,
                    "shape mismatch in concat_rows: {:?} vs {} cols",
                    v.shape(),
                    c
                );
                out.extend_from_slice(v.data());
                rows += pr;
            }
            let rg = parts.iter().any(|p| nodes[p.0].requires_grad);
            (Tensor::new(vec![rows, c], out), rg)
        };
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&self, a: Value, c0: usize, c1: usize) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (r, c) = v.rows_cols();
            assert!(
                c0 < c1 && c1 <= c,
                "shape mismatch in slice_cols: {:?} with range {c0}..{c1}",
                v.shape()
            );
            let mut out = Vec::with_capacity(r * (c1 - c0));
            for i in 0..r {
                out.extend_from_slice(&v.data()[i * c + c0..i * c + c1]);
            }
            (Tensor::new(vec![r, c1 - c0], out), nodes[a.0].requires_grad)
        };
        self.push(value, Op::SliceCols(a, c0, c1), rg)
    }

    pub fn slice_rows(&self, a: Value, r0: usize, r1: usize) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (r, c) = v.rows_cols();
            assert!(
                r0 < r1 && r1 <= r,
                "shape mismatch in slice_rows: {:?} with range {r0}..{r1}",
                v.shape()
            );
            let out = v.data()[r0 * c..r1 * c].to_vec();
            (Tensor::new(vec![r1 - r0, c], out), nodes[a.0].requires_grad)
        };
        self.push(value, Op::SliceRows(a, r0, r1), rg)
    }

    pub fn gather_rows(&self, a: Value, indices: Arc<Vec<usize>>) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (r, c) = v.rows_cols();
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices.iter() {
                assert!(i < r, "gather_rows index {i} out of {r} rows");
                out.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
            }
            (
                Tensor::new(vec![indices.len(), c], out),
                nodes[a.0].requires_grad,
            )
        };
        self.push(value, Op::GatherRows(a, indices), rg)
    }

    pub fn transpose(&self, a: Value) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (r, c) = v.rows_cols();
            let mut out = vec![T::ZERO; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = v.data()[i * c + j];
                }
            }
            (Tensor::new(vec![c, r], out), nodes[a.0].requires_grad)
        };
        self.push(value, Op::Transpose(a), rg)
    }

    /// Axis-angle [3] -> rotation matrix [3,3]; differentiable through the
    /// small-angle series branch.
    pub fn rodrigues(&self, a: Value) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            assert!(
                v.numel() == 3,
                "shape mismatch in rodrigues: {:?} (want 3 elements)",
                v.shape()
            );
            let d = v.data();
            let m = so3::rodrigues([d[0], d[1], d[2]]);
            let flat: Vec<T> = m.iter().flatten().copied().collect();
            (Tensor::new(vec![3, 3], flat), nodes[a.0].requires_grad)
        };
        self.push(value, Op::Rodrigues(a), rg)
    }

    /// Bilinear sample of a constant grid at continuous (u, v) cell
    /// coordinates: uv [k, 2] -> features [k, channels]. Coordinates are
    /// clamped to the valid interpolation square; out-of-bounds handling is
    /// the caller's concern. Differentiable w.r.t. uv.
    pub fn bilinear_sample(&self, uv: Value, grid: Arc<SampleGrid<T>>) -> Value {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[uv.0].value;
            let (k, c2) = v.rows_cols();
            assert!(
                c2 == 2,
                "shape mismatch in bilinear_sample: uv {:?} (want [k,2])",
                v.shape()
            );
            let mut out = Vec::with_capacity(k * grid.channels);
            for i in 0..k {
                let (u, vv) = (v.data()[i * 2], v.data()[i * 2 + 1]);
                let (vals, _, _) = bilinear_eval(&grid, u, vv);
                out.extend_from_slice(&vals);
            }
            (
                Tensor::new(vec![k, grid.channels], out),
                nodes[uv.0].requires_grad,
            )
        };
        self.push(value, Op::BilinearSample(uv, grid), rg)
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradients of this sweep are readable
    /// via `grad`; repeated calls overwrite the per-node slots (parameter
    /// accumulation lives in `ParameterSet`).
    pub fn backward(&self, root: Value) {
        let nodes = self.nodes.borrow();
        assert!(
            nodes[root.0].value.numel() == 1,
            "backward root must be scalar, got shape {:?}",
            nodes[root.0].value.shape()
        );
        let mut work: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        work[root.0] = Some(Tensor::new(
            nodes[root.0].value.shape().to_vec(),
            vec![T::ONE],
        ));

        let profile = std::env::var_os("SURFREC_BWD_PROF").is_some();
        let mut prof: std::collections::BTreeMap<&'static str, (f64, usize)> = Default::default();
        for i in (0..=root.0).rev() {
            let Some(g) = work[i].take() else { continue };
            if nodes[i].requires_grad {
                if profile {
                    let t0 = std::time::Instant::now();
                    backprop_node(&nodes, i, &g, &mut work);
                    let e = prof.entry(op_tag(&nodes[i].op)).or_insert((0.0, 0));
                    e.0 += t0.elapsed().as_secs_f64();
                    e.1 += 1;
                } else {
                    backprop_node(&nodes, i, &g, &mut work);
                }
            }
            // keep the node's gradient readable after the sweep
            work[i] = Some(g);
        }
        if profile {
            let mut rows: Vec<_> = prof.into_iter().collect();
            rows.sort_by(|a, b| b.1 .0.partial_cmp(&a.1 .0).unwrap());
            for (tag, (secs, count)) in rows.iter().take(10) {
                eprintln!("bwd {tag}: {:.1} ms over {count} nodes", secs * 1e3);
            }
        }

        let mut grads = self.grads.borrow_mut();
        for (slot, w) in grads.iter_mut().zip(work.into_iter()) {
            *slot = w;
        }
    }
}

/// Accumulate `delta`-producing closure results into an optional grad slot.
fn accumulate<T: Real>(
    slot: &mut Option<Tensor<T>>,
    shape: &[usize],
    write: impl FnOnce(&mut [T]),
) {
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shape.to_vec()));
    }
    write(slot.as_mut().unwrap().data_mut());
}

fn backprop_node<T: Real>(
    nodes: &[Node<T>],
    i: usize,
    g: &Tensor<T>,
    work: &mut [Option<Tensor<T>>],
) {
    let val = |v: Value| -> &Tensor<T> { &nodes[v.0].value };
    let rg = |v: Value| -> bool { nodes[v.0].requires_grad };

    match &nodes[i].op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            if rg(*a) {
                push_with_broadcast_reduce(&mut work[a.0], val(*a), g, |gi, _| gi);
            }
            if rg(*b) {
                push_with_broadcast_reduce(&mut work[b.0], val(*b), g, |gi, _| gi);
            }
        }
        Op::Sub(a, b) => {
            if rg(*a) {
                push_with_broadcast_reduce(&mut work[a.0], val(*a), g, |gi, _| gi);
            }
            if rg(*b) {
                push_with_broadcast_reduce(&mut work[b.0], val(*b), g, |gi, _| -gi);
            }
        }
        Op::Mul(a, b) => {
            // d a += g * b ; d b += g * a, each reduced over broadcast dims
            let (a, b) = (*a, *b);
            if rg(a) {
                let mul = PartnerView::new(&nodes[i].value, val(b));
                push_with_broadcast_reduce(&mut work[a.0], val(a), g, |gi, idx| gi * mul.at(idx));
            }
            if rg(b) {
                let mul = PartnerView::new(&nodes[i].value, val(a));
                push_with_broadcast_reduce(&mut work[b.0], val(b), g, |gi, idx| gi * mul.at(idx));
            }
        }
        Op::Max2(a, b) => {
            let (a, b) = (*a, *b);
            let out = &nodes[i].value;
            if rg(a) {
                let av = PartnerView::new(out, val(a));
                push_with_broadcast_reduce(&mut work[a.0], val(a), g, |gi, idx| {
                    if av.at(idx) >= out.data()[idx] {
                        gi
                    } else {
                        T::ZERO
                    }
                });
            }
            if rg(b) {
                let av = PartnerView::new(out, val(a));
                push_with_broadcast_reduce(&mut work[b.0], val(b), g, |gi, idx| {
                    if av.at(idx) >= out.data()[idx] {
                        T::ZERO
                    } else {
                        gi
                    }
                });
            }
        }
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let (m, k) = val(a).rows_cols();
            let n = val(b).rows_cols().1;
            if rg(a) {
                accumulate(&mut work[a.0], val(a).shape(), |da| {
                    gemm_nt(m, n, k, g.data(), val(b).data(), da);
                });
            }
            if rg(b) {
                accumulate(&mut work[b.0], val(b).shape(), |db| {
                    gemm_tn(m, k, n, val(a).data(), g.data(), db);
                });
            }
        }
        Op::Neg(a) => unary_bw(nodes, *a, g, work, |gi, _x, _y| -gi),
        Op::Recip(a) => {
            let y = &nodes[i].value;
            unary_bw_with(nodes, *a, g, work, y, |gi, _x, yi| -gi * yi * yi)
        }
        Op::Exp(a) => {
            let y = &nodes[i].value;
            unary_bw_with(nodes, *a, g, work, y, |gi, _x, yi| gi * yi)
        }
        Op::Ln(a) => unary_bw(nodes, *a, g, work, |gi, x, _| gi / x),
        Op::Sin(a) => unary_bw(nodes, *a, g, work, |gi, x, _| gi * x.cos()),
        Op::Cos(a) => unary_bw(nodes, *a, g, work, |gi, x, _| -gi * x.sin()),
        Op::Sqrt(a) => {
            let y = &nodes[i].value;
            unary_bw_with(nodes, *a, g, work, y, |gi, _x, yi| {
                gi / (T::from_f64(2.0) * yi)
            })
        }
        Op::Sigmoid(a) => {
            let y = &nodes[i].value;
            unary_bw_with(nodes, *a, g, work, y, |gi, _x, yi| gi * yi * (T::ONE - yi))
        }
        Op::Gelu(a) => unary_bw(nodes, *a, g, work, |gi, x, _| gi * gelu_deriv(x)),
        Op::Softplus(a) => unary_bw(nodes, *a, g, work, |gi, x, _| gi * sigmoid(x)),
        Op::ScaledSoftplus(a, beta) => {
            let beta = *beta;
            unary_bw(nodes, *a, g, work, move |gi, x, _| gi * sigmoid(beta * x))
        }
        Op::Abs(a) => unary_bw(nodes, *a, g, work, |gi, x, _| {
            if x >= T::ZERO {
                gi
            } else {
                -gi
            }
        }),
        Op::Relu(a) => unary_bw(nodes, *a, g, work, |gi, x, _| {
            if x > T::ZERO {
                gi
            } else {
                T::ZERO
            }
        }),
        Op::Scale(a, c) => {
            let c = *c;
            unary_bw(nodes, *a, g, work, move |gi, _x, _| gi * c)
        }
        Op::AddScalar(a, _) => unary_bw(nodes, *a, g, work, |gi, _x, _| gi),
        Op::SumAll(a) => {
            if rg(*a) {
                let gs = g.item();
                accumulate(&mut work[a.0], val(*a).shape(), |da| {
                    da.iter_mut().for_each(|d| *d += gs);
                });
            }
        }
        Op::MeanAll(a) => {
            if rg(*a) {
                let n = val(*a).numel();
                let gs = g.item() / T::from_usize(n);
                accumulate(&mut work[a.0], val(*a).shape(), |da| {
                    da.iter_mut().for_each(|d| *d += gs);
                });
            }
        }
        Op::Norm2Rows(a) => {
            if rg(*a) {
                let x = val(*a);
                let y = &nodes[i].value;
                let (r, c) = x.rows_cols();
                accumulate(&mut work[a.0], x.shape(), |da| {
                    for row in 0..r {
                        let yv = y.data()[row];
                        if yv <= T::ZERO {
                            continue;
                        }
                        let gv = g.data()[row] / yv;
                        for col in 0..c {
                            da[row * c + col] += gv * x.data()[row * c + col];
                        }
                    }
                });
            }
        }
        Op::SumSegments(a, seg) => {
            if rg(*a) {
                let x = val(*a);
                let (r, c) = x.rows_cols();
                accumulate(&mut work[a.0], x.shape(), |da| {
                    for row in 0..r {
                        let grow = &g.data()[(row / seg) * c..(row / seg + 1) * c];
                        for col in 0..c {
                            da[row * c + col] += grow[col];
                        }
                    }
                });
            }
        }
        Op::TileRows(a, times) => {
            if rg(*a) {
                let x = val(*a);
                let (r, c) = x.rows_cols();
                accumulate(&mut work[a.0], x.shape(), |da| {
                    for row in 0..r {
                        for t in 0..*times {
                            let grow = &g.data()[(row * times + t) * c..(row * times + t + 1) * c];
                            for col in 0..c {
                                da[row * c + col] += grow[col];
                            }
                        }
                    }
                });
            }
        }
        Op::CumprodExclusive(a, seg) => {
            if rg(*a) {
                let x = val(*a);
                let y = &nodes[i].value;
                let (r, c) = x.rows_cols();
                accumulate(&mut work[a.0], x.shape(), |da| {
                    // suffix recurrence: S_j = g_{j+1} + x_{j+1} * S_{j+1}
                    for s in 0..r / seg {
                        for col in 0..c {
                            let mut suffix = T::ZERO;
                            for j in (0..*seg).rev() {
                                let ridx = (s * seg + j) * c + col;
                                da[ridx] += y.data()[ridx] * suffix;
                                suffix = g.data()[ridx] + x.data()[ridx] * suffix;
                            }
                        }
                    }
                });
            }
        }
        Op::ConcatCols(parts) => {
            let mut off = 0;
            let total_c = nodes[i].value.rows_cols().1;
            let r = nodes[i].value.rows_cols().0;
            for p in parts {
                let pv = val(*p);
                let (_, pc) = pv.rows_cols();
                if rg(*p) {
                    accumulate(&mut work[p.0], pv.shape(), |dp| {
                        for row in 0..r {
                            for col in 0..pc {
                                dp[row * pc + col] += g.data()[row * total_c + off + col];
                            }
                        }
                    });
                }
                off += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            let c = nodes[i].value.rows_cols().1;
            for p in parts {
                let pv = val(*p);
                let (pr, _) = pv.rows_cols();
                if rg(*p) {
                    accumulate(&mut work[p.0], pv.shape(), |dp| {
                        for (d, &gv) in dp.iter_mut().zip(&g.data()[off * c..(off + pr) * c]) {
                            *d += gv;
                        }
                    });
                }
                off += pr;
            }
        }
        Op::SliceCols(a, c0, _c1) => {
            if rg(*a) {
                let x = val(*a);
                let (r, c) = x.rows_cols();
                let gc = g.rows_cols().1;
                accumulate(&mut work[a.0], x.shape(), |da| {
                    for row in 0..r {
                        for col in 0..gc {
                            da[row * c + c0 + col] += g.data()[row * gc + col];
                        }
                    }
                });
            }
        }
        Op::SliceRows(a, r0, _r1) => {
            if rg(*a) {
                let x = val(*a);
                let (_, c) = x.rows_cols();
                accumulate(&mut work[a.0], x.shape(), |da| {
                    for (d, &gv) in da[r0 * c..].iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                });
            }
        }
        Op::GatherRows(a, indices) => {
            if rg(*a) {
                let x = val(*a);
                let (_, c) = x.rows_cols();
                accumulate(&mut work[a.0], x.shape(), |da| {
                    for (k, &src) in indices.iter().enumerate() {
                        for col in 0..c {
                            da[src * c + col] += g.data()[k * c + col];
                        }
                    }
                });
            }
        }
        Op::Transpose(a) => {
            if rg(*a) {
                let x = val(*a);
                let (r, c) = x.rows_cols();
                accumulate(&mut work[a.0], x.shape(), |da| {
                    for row in 0..r {
                        for col in 0..c {
                            da[row * c + col] += g.data()[col * r + row];
                        }
                    }
                });
            }
        }
        Op::Rodrigues(a) => {
            if rg(*a) {
                let x = val(*a);
                let d = x.data();
                let jac = so3::rodrigues_jacobian([d[0], d[1], d[2]]);
                accumulate(&mut work[a.0], x.shape(), |da| {
                    for axis in 0..3 {
                        let mut s = T::ZERO;
                        for p in 0..3 {
                            for q in 0..3 {
                                s += g.data()[p * 3 + q] * jac[axis][p][q];
                            }
                        }
                        da[axis] += s;
                    }
                });
            }
        }
        Op::BilinearSample(uv, grid) => {
            if rg(*uv) {
                let x = val(*uv);
                let (k, _) = x.rows_cols();
                accumulate(&mut work[uv.0], x.shape(), |da| {
                    for row in 0..k {
                        let (u, vv) = (x.data()[row * 2], x.data()[row * 2 + 1]);
                        let (_, du, dv) = bilinear_eval(grid, u, vv);
                        let grow = &g.data()[row * grid.channels..(row + 1) * grid.channels];
                        let mut su = T::ZERO;
                        let mut sv = T::ZERO;
                        for ch in 0..grid.channels {
                            su += grow[ch] * du[ch];
                            sv += grow[ch] * dv[ch];
                        }
                        da[row * 2] += su;
                        da[row * 2 + 1] += sv;
                    }
                });
            }
        }
    }
}

/// Indexes a (possibly broadcast) partner operand by output-flat position;
/// the broadcast kind is resolved once, not per element.
struct PartnerView<'a, T: Real> {
    data: &'a [T],
    kind: u8, // 0 same, 1 scalar, 2 row, 3 col, 4 block
    oc: usize,
    pr: usize,
}

impl<'a, T: Real> PartnerView<'a, T> {
    fn new(out: &Tensor<T>, partner: &'a Tensor<T>) -> Self {
        let (or, oc) = out.rows_cols();
        let (pr, pc) = partner.rows_cols();
        let kind = if (pr, pc) == (or, oc) {
            0
        } else if (pr, pc) == (1, 1) {
            1
        } else if pr == 1 {
            2
        } else if pc == 1 {
            3
        } else {
            4 // vertically tiled block
        };
        PartnerView {
            data: partner.data(),
            kind,
            oc,
            pr,
        }
    }

    #[inline(always)]
    fn at(&self, idx: usize) -> T {
        match self.kind {
            0 => self.data[idx],
            1 => self.data[0],
            2 => self.data[idx % self.oc],
            3 => self.data[idx / self.oc],
            _ => self.data[(idx / self.oc % self.pr) * self.oc + idx % self.oc],
        }
    }
}

/// Accumulate the mapped output-gradient into a parent slot, summing over
/// any broadcast dimensions of the parent.
fn push_with_broadcast_reduce<T: Real>(
    slot: &mut Option<Tensor<T>>,
    target: &Tensor<T>,
    g: &Tensor<T>,
    map: impl Fn(T, usize) -> T + Sync,
) {
    let (gr, gc) = g.rows_cols();
    let (tr, tc) = target.rows_cols();
    crate::runtime::init_thread_fp();
    accumulate(slot, target.shape(), |dt| {
        if (tr, tc) == (gr, gc) {
            const CHUNK: usize = 256 * 1024;
            if dt.len() < CHUNK {
                for (idx, (d, &gv)) in dt.iter_mut().zip(g.data()).enumerate() {
                    *d += map(gv, idx);
                }
            } else {
                use rayon::prelude::*;
                dt.par_chunks_mut(CHUNK)
                    .zip(g.data().par_chunks(CHUNK))
                    .enumerate()
                    .for_each(|(ci, (dc, gc_))| {
                        crate::runtime::init_thread_fp();
                        let base = ci * CHUNK;
                        for (k, (d, &gv)) in dc.iter_mut().zip(gc_).enumerate() {
                            *d += map(gv, base + k);
                        }
                    });
            }
        } else if (tr, tc) == (1, 1) {
            let mut s = T::ZERO;
            for (idx, &gv) in g.data().iter().enumerate() {
                s += map(gv, idx);
            }
            dt[0] += s;
        } else if tr == 1 && tc == gc {
            for row in 0..gr {
                for col in 0..gc {
                    let idx = row * gc + col;
                    dt[col] += map(g.data()[idx], idx);
                }
            }
        } else if tc == 1 && tr == gr {
            for row in 0..gr {
                let mut s = T::ZERO;
                for col in 0..gc {
                    let idx = row * gc + col;
                    s += map(g.data()[idx], idx);
                }
                dt[row] += s;
            }
        } else if tc == gc && tr > 0 && gr % tr == 0 {
            // vertically tiled block: sum over repeats
            for row in 0..gr {
                let drow = &mut dt[(row % tr) * gc..(row % tr + 1) * gc];
                for col in 0..gc {
                    let idx = row * gc + col;
                    drow[col] += map(g.data()[idx], idx);
                }
            }
        } else {
            panic!(
                "internal: broadcast reduce mismatch {:?} vs {:?}",
                target.shape(),
                g.shape()
            );
        }
    });
}

/// Fixed-chunk parallel map; deterministic for any worker count (each output
/// position is written by exactly one closure invocation).
fn par_map<T: Real>(x: &[T], out: &mut [T], f: &(impl Fn(T) -> T + Sync)) {
    const CHUNK: usize = 256 * 1024;
    crate::runtime::init_thread_fp();
    if x.len() < CHUNK {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = f(v);
        }
    } else {
        use rayon::prelude::*;
        out.par_chunks_mut(CHUNK)
            .zip(x.par_chunks(CHUNK))
            .for_each(|(oc, xc)| {
                for (o, &v) in oc.iter_mut().zip(xc) {
                    *o = f(v);
                }
            });
    }
}

fn unary_bw<T: Real>(
    nodes: &[Node<T>],
    a: Value,
    g: &Tensor<T>,
    work: &mut [Option<Tensor<T>>],
    f: impl Fn(T, T, T) -> T + Sync,
) {
    if !nodes[a.0].requires_grad {
        return;
    }
    let x = &nodes[a.0].value;
    crate::runtime::init_thread_fp();
    accumulate(&mut work[a.0], x.shape(), |da| {
        const CHUNK: usize = 256 * 1024;
        if da.len() < CHUNK {
            for ((d, &gv), &xv) in da.iter_mut().zip(g.data()).zip(x.data()) {
                *d += f(gv, xv, T::ZERO);
            }
        } else {
            use rayon::prelude::*;
            da.par_chunks_mut(CHUNK)
                .zip(g.data().par_chunks(CHUNK).zip(x.data().par_chunks(CHUNK)))
                .for_each(|(dc, (gc, xc))| {
                    crate::runtime::init_thread_fp();
                    for ((d, &gv), &xv) in dc.iter_mut().zip(gc).zip(xc) {
                        *d += f(gv, xv, T::ZERO);
                    }
                });
        }
    });
}

fn unary_bw_with<T: Real>(
    nodes: &[Node<T>],
    a: Value,
    g: &Tensor<T>,
    work: &mut [Option<Tensor<T>>],
    y: &Tensor<T>,
    f: impl Fn(T, T, T) -> T,
) {
    if !nodes[a.0].requires_grad {
        return;
    }
    let x = &nodes[a.0].value;
    accumulate(&mut work[a.0], x.shape(), |da| {
        for (((d, &gv), &xv), &yv) in da.iter_mut().zip(g.data()).zip(x.data()).zip(y.data()) {
            *d += f(gv, xv, yv);
        }
    });
}

/// Bilinear value and (du, dv) partials at continuous cell coords.
fn bilinear_eval<T: Real>(grid: &SampleGrid<T>, u: T, v: T) -> (Vec<T>, Vec<T>, Vec<T>) {
    let wmax = T::from_usize(grid.width - 1);
    let hmax = T::from_usize(grid.height - 1);
    let uc = u.max(T::ZERO).min(wmax);
    let vc = v.max(T::ZERO).min(hmax);
    let u0 = uc.floor().to_f64() as usize;
    let v0 = vc.floor().to_f64() as usize;
    let u0 = u0.min(grid.width.saturating_sub(2));
    let v0 = v0.min(grid.height.saturating_sub(2));
    let fu = uc - T::from_usize(u0);
    let fv = vc - T::from_usize(v0);
    let c00 = grid.cell(v0, u0);
    let c01 = grid.cell(v0, u0 + 1);
    let c10 = grid.cell(v0 + 1, u0);
    let c11 = grid.cell(v0 + 1, u0 + 1);
    let mut vals = Vec::with_capacity(grid.channels);
    let mut du = Vec::with_capacity(grid.channels);
    let mut dv = Vec::with_capacity(grid.channels);
    for ch in 0..grid.channels {
        let top = c00[ch] * (T::ONE - fu) + c01[ch] * fu;
        let bot = c10[ch] * (T::ONE - fu) + c11[ch] * fu;
        vals.push(top * (T::ONE - fv) + bot * fv);
        du.push((c01[ch] - c00[ch]) * (T::ONE - fv) + (c11[ch] - c10[ch]) * fv);
        dv.push(bot - top);
    }
    (vals, du, dv)
}

fn op_tag<T: Real>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Constant => "constant",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::MatMul(..) => "matmul",
        Op::Neg(..) => "neg",
        Op::Recip(..) => "recip",
        Op::Exp(..) => "exp",
        Op::Ln(..) => "ln",
        Op::Sin(..) => "sin",
        Op::Cos(..) => "cos",
        Op::Sqrt(..) => "sqrt",
        Op::Sigmoid(..) => "sigmoid",
        Op::Gelu(..) => "gelu",
        Op::Softplus(..) => "softplus",
        Op::ScaledSoftplus(..) => "scaled_softplus",
        Op::Abs(..) => "abs",
        Op::Relu(..) => "relu",
        Op::Max2(..) => "max2",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::SumAll(..) => "sum_all",
        Op::MeanAll(..) => "mean_all",
        Op::Norm2Rows(..) => "norm2_rows",
        Op::SumSegments(..) => "sum_segments",
        Op::TileRows(..) => "tile_rows",
        Op::CumprodExclusive(..) => "cumprod_exclusive",
        Op::ConcatCols(..) => "concat_cols",
        Op::ConcatRows(..) => "concat_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::SliceRows(..) => "slice_rows",
        Op::GatherRows(..) => "gather_rows",
        Op::Transpose(..) => "transpose",
        Op::Rodrigues(..) => "rodrigues",
        Op::BilinearSample(..) => "bilinear_sample",
    }
}
