//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass; [`Graph::backward`]
//! replays the record in reverse and accumulates gradients into the
//! participating parameters. All tensors are `rows x cols` matrices
//! (batch x features); scalars are `1 x 1`.
//!
//! Broadcasting in binary ops is limited to: identical shapes, a `1 x 1`
//! scalar, a `1 x C` row against `R x C`, or an `R x 1` column against `R x C`.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use ndarray::{Array2, Axis, Zip};

use crate::error::{ClawError, Result};
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::scalar::Scalar;
use crate::numerics::special;

type NodeId = usize;

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Matmul(NodeId, NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Selu(NodeId),
    Square(NodeId),
    Lgamma(NodeId),
    Clamp(NodeId, f64, f64),
    Min(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumRows(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    Detach(NodeId),
    /// Pathwise Beta sample: forward inverts the CDF at frozen uniforms,
    /// backward applies the implicit derivative -dI/dparam / pdf.
    BetaSample(NodeId, NodeId, Array2<f64>),
}

struct Node<R: Scalar> {
    value: Array2<R>,
    op: Op,
    /// `(store uid, id)` for trainable parameter leaves.
    param: Option<(u64, ParamId)>,
}

/// Records one forward computation.
pub struct Graph<R: Scalar> {
    nodes: RefCell<Vec<Node<R>>>,
    mounted: RefCell<HashMap<(u64, ParamId, bool), NodeId>>,
    consumed: Cell<bool>,
}

/// Handle to a value in a [`Graph`]. Cheap to copy.
#[derive(Clone, Copy)]
pub struct Var<'g, R: Scalar> {
    id: NodeId,
    graph: &'g Graph<R>,
}

impl<R: Scalar> std::fmt::Debug for Var<'_, R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var(#{}, {r}x{c})", self.id)
    }
}

impl<R: Scalar> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Scalar> Graph<R> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            mounted: RefCell::new(HashMap::new()),
            consumed: Cell::new(false),
        }
    }

    fn push(&self, value: Array2<R>, op: Op, param: Option<(u64, ParamId)>) -> Var<'_, R> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, param });
        Var { id: nodes.len() - 1, graph: self }
    }

    pub fn constant(&self, value: Array2<R>) -> Var<'_, R> {
        self.push(value, Op::Leaf, None)
    }

    pub fn constant_f64(&self, value: &Array2<f64>) -> Var<'_, R> {
        self.constant(value.mapv(R::from_f64))
    }

    pub fn scalar(&self, v: f64) -> Var<'_, R> {
        self.constant(Array2::from_elem((1, 1), R::from_f64(v)))
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var<'_, R> {
        self.constant(Array2::zeros((rows, cols)))
    }

    /// Mount a trainable parameter. Idempotent per graph: repeated mounts of
    /// the same parameter return the same node, so gradients from all uses
    /// accumulate at one leaf.
    pub fn param(&self, store: &ParamStore<R>, id: ParamId) -> Var<'_, R> {
        self.mount(store, id, false)
    }

    /// Mount a parameter as a frozen constant: gradients flow *through* it to
    /// other nodes but are not accumulated into the store.
    pub fn frozen(&self, store: &ParamStore<R>, id: ParamId) -> Var<'_, R> {
        self.mount(store, id, true)
    }

    fn mount(&self, store: &ParamStore<R>, id: ParamId, frozen: bool) -> Var<'_, R> {
        let key = (store.uid(), id, frozen);
        if let Some(&nid) = self.mounted.borrow().get(&key) {
            return Var { id: nid, graph: self };
        }
        let link = (!frozen).then_some((store.uid(), id));
        let var = self.push(store.values(id).clone(), Op::Leaf, link);
        self.mounted.borrow_mut().insert(key, var.id);
        var
    }

    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g, R>]) -> Var<'g, R> {
        assert!(!parts.is_empty());
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].id].value.nrows();
        let total: usize = parts.iter().map(|p| nodes[p.id].value.ncols()).sum();
        let mut out = Array2::zeros((rows, total));
        let mut at = 0;
        for p in parts {
            let v = &nodes[p.id].value;
            assert_eq!(v.nrows(), rows, "concat_cols: row mismatch");
            out.slice_mut(ndarray::s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        drop(nodes);
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), None)
    }

    /// Pathwise Beta sample at frozen uniforms. `uniforms` must match the
    /// parameter shape; entries must lie in (0, 1).
    pub fn beta_sample<'g>(
        &'g self,
        alpha: Var<'g, R>,
        beta: Var<'g, R>,
        uniforms: Array2<f64>,
    ) -> Var<'g, R> {
        let nodes = self.nodes.borrow();
        let av = &nodes[alpha.id].value;
        let bv = &nodes[beta.id].value;
        assert_eq!(av.raw_dim(), bv.raw_dim(), "beta_sample: alpha/beta shape");
        assert_eq!(av.raw_dim(), uniforms.raw_dim(), "beta_sample: noise shape");
        let mut out = Array2::zeros(av.raw_dim());
        Zip::from(&mut out)
            .and(av)
            .and(bv)
            .and(&uniforms)
            .for_each(|o, &a, &b, &u| {
                *o = R::from_f64(special::inv_inc_beta(u, a.as_f64(), b.as_f64()));
            });
        drop(nodes);
        self.push(out, Op::BetaSample(alpha.id, beta.id, uniforms), None)
    }

    fn value_of(&self, id: NodeId) -> Array2<R> {
        self.nodes.borrow()[id].value.clone()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Reverse pass from `loss` (must be `1 x 1`). Accumulates d loss / d p
    /// into every trainable parameter mounted in this graph. A graph can be
    /// consumed only once.
    pub fn backward(&self, loss: Var<'_, R>, store: &mut ParamStore<R>) -> Result<()> {
        if self.consumed.replace(true) {
            return Err(ClawError::Usage(
                "backward called twice on the same graph".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.len() != 1 {
            return Err(ClawError::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv[[0, 0]].is_finite() {
            return Err(ClawError::Numerical(format!(
                "non-finite loss value {}",
                lv[[0, 0]]
            )));
        }

        let mut grads: Vec<Option<Array2<R>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Array2::from_elem((1, 1), R::one()));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    if let Some((uid, pid)) = node.param {
                        if uid != store.uid() {
                            return Err(ClawError::Usage(format!(
                                "gradient reached trainable parameter `{}` of a store not                                  passed to backward; mount other stores frozen",
                                pid.0
                            )));
                        }
                        store.accumulate_grad(pid, &g);
                    }
                }
                Op::Add(a, b) => {
                    let (sa, sb) = (shape(&nodes[*a].value), shape(&nodes[*b].value));
                    acc(&mut grads, *a, reduce_to(g.clone(), sa));
                    acc(&mut grads, *b, reduce_to(g, sb));
                }
                Op::Sub(a, b) => {
                    let (sa, sb) = (shape(&nodes[*a].value), shape(&nodes[*b].value));
                    acc(&mut grads, *a, reduce_to(g.clone(), sa));
                    acc(&mut grads, *b, reduce_to(g.mapv(|v| -v), sb));
                }
                Op::Mul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let da = broadcast_binary(&g, bv, |g, b| g * b);
                    let db = broadcast_binary(&g, av, |g, a| g * a);
                    acc(&mut grads, *a, reduce_to(da, shape(av)));
                    acc(&mut grads, *b, reduce_to(db, shape(bv)));
                }
                Op::Div(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let da = broadcast_binary(&g, bv, |g, b| g / b);
                    let out = &node.value; // a/b already broadcast to out shape
                    let mut db = g.clone();
                    Zip::from(&mut db).and(out).for_each(|d, &o| *d = *d * o);
                    let db = broadcast_binary(&db, bv, |gb, b| -gb / b);
                    acc(&mut grads, *a, reduce_to(da, shape(av)));
                    acc(&mut grads, *b, reduce_to(db, shape(bv)));
                }
                Op::Neg(a) => acc(&mut grads, *a, g.mapv(|v| -v)),
                Op::Matmul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    acc(&mut grads, *a, g.dot(&bv.t()));
                    acc(&mut grads, *b, av.t().dot(&g));
                }
                Op::Exp(a) => {
                    let mut da = g;
                    Zip::from(&mut da).and(&node.value).for_each(|d, &o| *d = *d * o);
                    acc(&mut grads, *a, da);
                }
                Op::Ln(a) => {
                    let av = &nodes[*a].value;
                    let mut da = g;
                    Zip::from(&mut da).and(av).for_each(|d, &x| *d = *d / x);
                    acc(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(&node.value)
                        .for_each(|d, &t| *d = *d * (R::one() - t * t));
                    acc(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(&node.value)
                        .for_each(|d, &s| *d = *d * s * (R::one() - s));
                    acc(&mut grads, *a, da);
                }
                Op::Softplus(a) => {
                    let av = &nodes[*a].value;
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(av)
                        .for_each(|d, &x| *d = *d * sigmoid_scalar(x));
                    acc(&mut grads, *a, da);
                }
                Op::Selu(a) => {
                    let av = &nodes[*a].value;
                    let lam = R::from_f64(SELU_LAMBDA);
                    let la = R::from_f64(SELU_LAMBDA * SELU_ALPHA);
                    let mut da = g;
                    Zip::from(&mut da).and(av).for_each(|d, &x| {
                        *d = *d * if x > R::zero() { lam } else { la * x.exp() };
                    });
                    acc(&mut grads, *a, da);
                }
                Op::Square(a) => {
                    let av = &nodes[*a].value;
                    let two = R::from_f64(2.0);
                    let mut da = g;
                    Zip::from(&mut da).and(av).for_each(|d, &x| *d = *d * two * x);
                    acc(&mut grads, *a, da);
                }
                Op::Lgamma(a) => {
                    let av = &nodes[*a].value;
                    let mut da = g;
                    Zip::from(&mut da).and(av).for_each(|d, &x| *d = *d * x.digamma());
                    acc(&mut grads, *a, da);
                }
                Op::Clamp(a, lo, hi) => {
                    let av = &nodes[*a].value;
                    let (lo, hi) = (R::from_f64(*lo), R::from_f64(*hi));
                    let mut da = g;
                    Zip::from(&mut da).and(av).for_each(|d, &x| {
                        if x < lo || x > hi {
                            *d = R::zero();
                        }
                    });
                    acc(&mut grads, *a, da);
                }
                Op::Min(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let mut da = g.clone();
                    let mut db = g;
                    Zip::from(&mut da).and(av).and(bv).for_each(|d, &x, &y| {
                        if x > y {
                            *d = R::zero();
                        }
                    });
                    Zip::from(&mut db).and(av).and(bv).for_each(|d, &x, &y| {
                        if x <= y {
                            *d = R::zero();
                        }
                    });
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::SumAll(a) => {
                    let s = shape(&nodes[*a].value);
                    acc(&mut grads, *a, Array2::from_elem(s, g[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let s = shape(&nodes[*a].value);
                    let n = R::from_f64((s.0 * s.1) as f64);
                    acc(&mut grads, *a, Array2::from_elem(s, g[[0, 0]] / n));
                }
                Op::SumRows(a) => {
                    let s = shape(&nodes[*a].value);
                    let mut da = Array2::zeros(s);
                    for i in 0..s.0 {
                        let gi = g[[i, 0]];
                        da.row_mut(i).fill(gi);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = nodes[*p].value.ncols();
                        let part = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        acc(&mut grads, *p, part);
                        at += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let s = shape(&nodes[*a].value);
                    let mut da = Array2::zeros(s);
                    da.slice_mut(ndarray::s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, da);
                }
                Op::Detach(_) => {}
                Op::BetaSample(a, b, _) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let x = &node.value;
                    let mut da = Array2::zeros(g.raw_dim());
                    let mut db = Array2::zeros(g.raw_dim());
                    Zip::from(&mut da)
                        .and(&mut db)
                        .and(av)
                        .and(bv)
                        .and(x)
                        .for_each(|da, db, &al, &be, &xv| {
                            let (al, be, xv) = (al.as_f64(), be.as_f64(), xv.as_f64());
                            let (_, dia, dib) = special::inc_beta_grad(xv, al, be);
                            let pdf = special::beta_ln_pdf(xv, al, be).exp();
                            // Implicit reparameterization: dx/dtheta = -dI/dtheta / pdf.
                            let inv = if pdf > 1e-300 { 1.0 / pdf } else { 0.0 };
                            *da = R::from_f64(-dia * inv);
                            *db = R::from_f64(-dib * inv);
                        });
                    Zip::from(&mut da).and(&g).for_each(|d, &gv| *d = *d * gv);
                    Zip::from(&mut db).and(&g).for_each(|d, &gv| *d = *d * gv);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
            }
        }
        Ok(())
    }
}

fn shape<R: Scalar>(a: &Array2<R>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

fn sigmoid_scalar<R: Scalar>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn acc<R: Scalar>(grads: &mut [Option<Array2<R>>], id: NodeId, delta: Array2<R>) {
    match &mut grads[id] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// Elementwise op of `a` against `b` broadcast to `a`'s shape.
fn broadcast_binary<R: Scalar>(
    a: &Array2<R>,
    b: &Array2<R>,
    f: impl Fn(R, R) -> R,
) -> Array2<R> {
    let bb = b
        .broadcast(a.raw_dim())
        .unwrap_or_else(|| panic!("broadcast {:?} -> {:?}", b.shape(), a.shape()));
    let mut out = Array2::zeros(a.raw_dim());
    Zip::from(&mut out)
        .and(a)
        .and(&bb)
        .for_each(|o, &x, &y| *o = f(x, y));
    out
}

/// Sum `g` down to `target` shape (undo broadcasting).
fn reduce_to<R: Scalar>(g: Array2<R>, target: (usize, usize)) -> Array2<R> {
    let mut g = g;
    if target.0 == 1 && g.nrows() > 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if target.1 == 1 && g.ncols() > 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    assert_eq!(shape(&g), target, "reduce_to: incompatible broadcast");
    g
}

/// Shape of the result of broadcasting `a` against `b`.
fn out_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let rows = match (a.0, b.0) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => panic!("incompatible row broadcast {a:?} vs {b:?}"),
    };
    let cols = match (a.1, b.1) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => panic!("incompatible col broadcast {a:?} vs {b:?}"),
    };
    (rows, cols)
}

impl<'g, R: Scalar> Var<'g, R> {
    pub fn value(&self) -> Array2<R> {
        self.graph.value_of(self.id)
    }

    pub fn value_f64(&self) -> Array2<f64> {
        self.graph.value_of(self.id).mapv(|v| v.as_f64())
    }

    pub fn scalar_value(&self) -> f64 {
        let v = self.graph.value_of(self.id);
        assert_eq!(v.len(), 1, "scalar_value on non-scalar");
        v[[0, 0]].as_f64()
    }

    pub fn shape(&self) -> (usize, usize) {
        let nodes = self.graph.nodes.borrow();
        shape(&nodes[self.id].value)
    }

    pub fn graph(&self) -> &'g Graph<R> {
        self.graph
    }

    fn binary(self, other: Var<'g, R>, make: impl FnOnce(NodeId, NodeId) -> Op) -> Var<'g, R> {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
        let nodes = self.graph.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        let os = out_shape(shape(a), shape(b));
        let op = make(self.id, other.id);
        let value = match &op {
            Op::Add(..) => bcast2(a, b, os, |x, y| x + y),
            Op::Sub(..) => bcast2(a, b, os, |x, y| x - y),
            Op::Mul(..) => bcast2(a, b, os, |x, y| x * y),
            Op::Div(..) => bcast2(a, b, os, |x, y| x / y),
            Op::Min(..) => {
                assert_eq!(shape(a), shape(b), "min: same shape required");
                bcast2(a, b, os, |x, y| if x <= y { x } else { y })
            }
            _ => unreachable!(),
        };
        drop(nodes);
        self.graph.push(value, op, None)
    }

    fn unary(self, op: impl FnOnce(NodeId) -> Op, f: impl Fn(R) -> R) -> Var<'g, R> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            nodes[self.id].value.mapv(f)
        };
        self.graph.push(value, op(self.id), None)
    }

    pub fn matmul(self, other: Var<'g, R>) -> Var<'g, R> {
        let nodes = self.graph.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        assert_eq!(
            a.ncols(),
            b.nrows(),
            "matmul: {:?} x {:?}",
            a.shape(),
            b.shape()
        );
        let value = a.dot(b);
        drop(nodes);
        self.graph.push(value, Op::Matmul(self.id, other.id), None)
    }

    pub fn exp(self) -> Var<'g, R> {
        self.unary(Op::Exp, |x| x.exp())
    }

    pub fn ln(self) -> Var<'g, R> {
        self.unary(Op::Ln, |x| x.ln())
    }

    pub fn tanh(self) -> Var<'g, R> {
        self.unary(Op::Tanh, |x| x.tanh())
    }

    pub fn sigmoid(self) -> Var<'g, R> {
        self.unary(Op::Sigmoid, sigmoid_scalar)
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(self) -> Var<'g, R> {
        self.unary(Op::Softplus, |x| {
            let zero = R::zero();
            let m = if x > zero { x } else { zero };
            m + ((x - m).exp() + (zero - m).exp()).ln()
        })
    }

    pub fn selu(self) -> Var<'g, R> {
        let lam = R::from_f64(SELU_LAMBDA);
        let la = R::from_f64(SELU_LAMBDA * SELU_ALPHA);
        self.unary(Op::Selu, move |x| {
            if x > R::zero() {
                lam * x
            } else {
                la * (x.exp() - R::one())
            }
        })
    }

    pub fn square(self) -> Var<'g, R> {
        self.unary(Op::Square, |x| x * x)
    }

    pub fn lgamma(self) -> Var<'g, R> {
        self.unary(Op::Lgamma, |x| x.lgamma())
    }

    pub fn clamp_const(self, lo: f64, hi: f64) -> Var<'g, R> {
        let (l, h) = (R::from_f64(lo), R::from_f64(hi));
        self.unary(
            move |id| Op::Clamp(id, lo, hi),
            move |x| {
                if x < l {
                    l
                } else if x > h {
                    h
                } else {
                    x
                }
            },
        )
    }

    pub fn min(self, other: Var<'g, R>) -> Var<'g, R> {
        self.binary(other, Op::Min)
    }

    pub fn sum_all(self) -> Var<'g, R> {
        let s = {
            let nodes = self.graph.nodes.borrow();
            nodes[self.id].value.sum()
        };
        self.graph
            .push(Array2::from_elem((1, 1), s), Op::SumAll(self.id), None)
    }

    pub fn mean_all(self) -> Var<'g, R> {
        let (s, n) = {
            let nodes = self.graph.nodes.borrow();
            let v = &nodes[self.id].value;
            (v.sum(), v.len())
        };
        let m = s / R::from_f64(n as f64);
        self.graph
            .push(Array2::from_elem((1, 1), m), Op::MeanAll(self.id), None)
    }

    /// Sum over columns: `R x C -> R x 1`.
    pub fn sum_rows(self) -> Var<'g, R> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            nodes[self.id].value.sum_axis(Axis(1)).insert_axis(Axis(1))
        };
        self.graph.push(v, Op::SumRows(self.id), None)
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'g, R> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            nodes[self.id].value.slice(ndarray::s![.., start..end]).to_owned()
        };
        self.graph.push(v, Op::SliceCols(self.id, start, end), None)
    }

    /// Stop gradient flow: same value, no backward contribution.
    pub fn detach(self) -> Var<'g, R> {
        let v = self.value();
        self.graph.push(v, Op::Detach(self.id), None)
    }

    pub fn scale(self, c: f64) -> Var<'g, R> {
        self * self.graph.scalar(c)
    }

    pub fn add_const(self, c: f64) -> Var<'g, R> {
        self + self.graph.scalar(c)
    }
}

fn bcast2<R: Scalar>(
    a: &Array2<R>,
    b: &Array2<R>,
    os: (usize, usize),
    f: impl Fn(R, R) -> R,
) -> Array2<R> {
    let ab = a.broadcast(os).expect("lhs broadcast");
    let bb = b.broadcast(os).expect("rhs broadcast");
    let mut out = Array2::zeros(os);
    Zip::from(&mut out)
        .and(&ab)
        .and(&bb)
        .for_each(|o, &x, &y| *o = f(x, y));
    out
}

impl<'g, R: Scalar> std::ops::Add for Var<'g, R> {
    type Output = Var<'g, R>;
    fn add(self, rhs: Self) -> Self::Output {
        self.binary(rhs, Op::Add)
    }
}

impl<'g, R: Scalar> std::ops::Sub for Var<'g, R> {
    type Output = Var<'g, R>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.binary(rhs, Op::Sub)
    }
}

impl<'g, R: Scalar> std::ops::Mul for Var<'g, R> {
    type Output = Var<'g, R>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.binary(rhs, Op::Mul)
    }
}

impl<'g, R: Scalar> std::ops::Div for Var<'g, R> {
    type Output = Var<'g, R>;
    fn div(self, rhs: Self) -> Self::Output {
        self.binary(rhs, Op::Div)
    }
}

impl<'g, R: Scalar> std::ops::Neg for Var<'g, R> {
    type Output = Var<'g, R>;
    fn neg(self) -> Self::Output {
        self.unary(Op::Neg, |x| R::zero() - x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store_with<R: Scalar>(vals: Array2<R>) -> (ParamStore<R>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", vals);
        (s, id)
    }

    #[test]
    fn linear_gradient() {
        // loss = sum(w * x), x = [1, 2], w = [0, 0] -> dloss/dw = [1, 2]
        let (mut store, w) = store_with::<f64>(array![[0.0, 0.0]]);
        let g = Graph::new();
        let wv = g.param(&store, w);
        let x = g.constant(array![[1.0, 2.0]]);
        let loss = (wv * x).sum_all();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w), &array![[1.0, 2.0]]);
    }

    #[test]
    fn quadratic_gradient() {
        // loss = (w - 3)^2 at w = 1 -> grad = -4
        let (mut store, w) = store_with::<f64>(array![[1.0]]);
        let g = Graph::new();
        let wv = g.param(&store, w);
        let loss = (wv - g.scalar(3.0)).square().sum_all();
        g.backward(loss, &mut store).unwrap();
        assert!((store.grad(w)[[0, 0]] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn backward_twice_is_a_usage_error() {
        let (mut store, w) = store_with::<f64>(array![[1.0]]);
        let g = Graph::new();
        let loss = g.param(&store, w).sum_all();
        g.backward(loss, &mut store).unwrap();
        let err = g.backward(loss, &mut store);
        assert!(matches!(err, Err(ClawError::Usage(_))));
    }

    #[test]
    fn repeated_mounts_share_one_leaf() {
        // loss = w + w -> grad 2, not 1+1 double-counted through two leaves.
        let (mut store, w) = store_with::<f64>(array![[5.0]]);
        let g = Graph::new();
        let a = g.param(&store, w);
        let b = g.param(&store, w);
        let loss = (a + b).sum_all();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w)[[0, 0]], 2.0);
    }

    #[test]
    fn frozen_mount_accumulates_nothing() {
        let (mut store, w) = store_with::<f64>(array![[2.0]]);
        let g = Graph::new();
        let loss = g.frozen(&store, w).square().sum_all();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w)[[0, 0]], 0.0);
    }

    #[test]
    fn matmul_and_broadcast_bias() {
        // y = x.W + b; loss = sum(y)
        let mut store: ParamStore<f64> = ParamStore::new();
        let w = store.add("w", array![[1.0, 2.0], [3.0, 4.0]]);
        let b = store.add("b", array![[0.5, -0.5]]);
        let g = Graph::new();
        let x = g.constant(array![[1.0, 1.0], [2.0, 0.0]]);
        let y = x.matmul(g.param(&store, w)) + g.param(&store, b);
        let loss = y.sum_all();
        g.backward(loss, &mut store).unwrap();
        // dW = x^T . ones = [[3,3],[1,1]]; db = column sums of ones = [2,2]
        assert_eq!(store.grad(w), &array![[3.0, 3.0], [1.0, 1.0]]);
        assert_eq!(store.grad(b), &array![[2.0, 2.0]]);
    }

    #[test]
    fn gradient_linearity() {
        // d(a*L1 + b*L2) = a dL1 + b dL2, exactly in f64.
        let vals = array![[0.3, -1.2, 0.7]];
        let (a, b) = (1.7, -0.6);

        let run = |coef1: f64, coef2: f64| -> Array2<f64> {
            let (mut store, w) = store_with::<f64>(vals.clone());
            let g = Graph::new();
            let wv = g.param(&store, w);
            let l1 = wv.square().sum_all();
            let l2 = (wv.tanh() * g.constant(array![[1.0, 2.0, 3.0]])).sum_all();
            let loss = l1.scale(coef1) + l2.scale(coef2);
            g.backward(loss, &mut store).unwrap();
            store.grad(w).clone()
        };

        let combined = run(a, b);
        let g1 = run(1.0, 0.0);
        let g2 = run(0.0, 1.0);
        for i in 0..3 {
            let expect = a * g1[[0, i]] + b * g2[[0, i]];
            assert!((combined[[0, i]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn min_routes_gradient_to_smaller_branch() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let a = store.add("a", array![[1.0, 5.0]]);
        let b = store.add("b", array![[2.0, 3.0]]);
        let g = Graph::new();
        let loss = g.param(&store, a).min(g.param(&store, b)).sum_all();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(a), &array![[1.0, 0.0]]);
        assert_eq!(store.grad(b), &array![[0.0, 1.0]]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let (mut store, w) = store_with::<f64>(array![[3.0]]);
        let g = Graph::new();
        let wv = g.param(&store, w);
        let loss = (wv.detach() * wv).sum_all(); // d/dw = detached value only
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w)[[0, 0]], 3.0);
    }

    #[test]
    fn slice_and_concat_round_trip_gradients() {
        let (mut store, w) = store_with::<f64>(array![[1.0, 2.0, 3.0, 4.0]]);
        let g = Graph::new();
        let wv = g.param(&store, w);
        let left = wv.slice_cols(0, 2);
        let right = wv.slice_cols(2, 4);
        let back = g.concat_cols(&[right, left]); // swapped halves
        let loss = (back * g.constant(array![[1.0, 2.0, 3.0, 4.0]])).sum_all();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w), &array![[3.0, 4.0, 1.0, 2.0]]);
    }

    #[test]
    fn beta_sample_gradients_match_finite_differences() {
        let check = |a0: f64, b0: f64, u: f64| {
            let mut store: ParamStore<f64> = ParamStore::new();
            let a = store.add("a", array![[a0]]);
            let b = store.add("b", array![[b0]]);
            let uniforms = array![[u]];

            let sample = |store: &ParamStore<f64>| -> f64 {
                let g: Graph<f64> = Graph::new();
                let x = g.beta_sample(g.param(store, a), g.param(store, b), uniforms.clone());
                x.scalar_value()
            };

            let g = Graph::new();
            let x = g.beta_sample(g.param(&store, a), g.param(&store, b), uniforms.clone());
            let loss = x.sum_all();
            let base = store.clone();
            g.backward(loss, &mut store).unwrap();

            let h = 1e-5;
            for (id, analytic) in [(a, store.grad(a)[[0, 0]]), (b, store.grad(b)[[0, 0]])] {
                let mut plus = base.clone();
                plus.get_mut(id).values[[0, 0]] += h;
                let mut minus = base.clone();
                minus.get_mut(id).values[[0, 0]] -= h;
                let fd = (sample(&plus) - sample(&minus)) / (2.0 * h);
                assert!(
                    (analytic - fd).abs() < 1e-5 * fd.abs().max(1.0),
                    "a={a0} b={b0} u={u}: analytic {analytic} vs fd {fd}"
                );
            }
        };
        check(2.0, 3.0, 0.3);
        check(1.2, 1.1, 0.77);
        check(5.0, 2.0, 0.5);
        check(1.01, 6.0, 0.12);
    }
}
