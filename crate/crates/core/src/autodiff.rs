//! Matrix-valued reverse-mode automatic differentiation.
//!
//! Every operation is recorded on a [`Tape`] as a node holding its value and
//! the indices of its inputs. [`Tape::grad`] walks the nodes in reverse and
//! expresses each adjoint with ordinary tape operations, so the returned
//! gradients are themselves differentiable: calling `grad` on a loss built
//! from an earlier gradient yields second-order terms.
//!
//! ```
//! use hrtf_field::autodiff::Tape;
//! use ndarray::array;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.var(array![[0.5]]);
//! let y = x.sin().sum();
//! let dx = tape.grad(y, &[x]).unwrap()[0];
//! let ddx = tape.grad(dx.sum(), &[x]).unwrap()[0];
//! assert!((dx.scalar() - 0.5f64.cos()).abs() < 1e-15);
//! assert!((ddx.scalar() + 0.5f64.sin()).abs() < 1e-15);
//! ```

use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{s, Array2, Axis, NdFloat};
use num_traits::{FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type usable on a tape.
pub trait Scalar: NdFloat + FromPrimitive + ToPrimitive + Debug {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, T),
    MatMul(usize, usize),
    Transpose(usize),
    Sin(usize),
    Cos(usize),
    /// `a + r` with the `1 x m` row `r` added to every row of `a`.
    AddRow(usize, usize),
    /// Column sums as a `1 x m` row.
    SumRows(usize),
    /// Repeats a `1 x m` row `n` times.
    BroadcastRows(usize),
    /// Sum of all entries as `1 x 1`.
    Sum(usize),
    /// Fills a matrix with a `1 x 1` value.
    Expand(usize),
    /// Columns starting at the given index.
    SliceCols(usize, usize),
    /// Embeds `a` at the given column of a wider zero matrix.
    PadCols(usize, usize),
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for later differentiation. Single-threaded by construction.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    idx: usize,
}

impl<T: Scalar> Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("idx", &self.idx).finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Array2<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Array2<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Array2<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn requires(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].requires_grad
    }

    fn unary(&self, a: usize, op: Op<T>, f: impl FnOnce(&Array2<T>) -> Array2<T>) -> Var<'_, T> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a].value), nodes[a].requires_grad)
        };
        self.push(value, op, rg)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op<T>,
        f: impl FnOnce(&Array2<T>, &Array2<T>) -> Array2<T>,
    ) -> Var<'_, T> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (
                f(&nodes[a].value, &nodes[b].value),
                nodes[a].requires_grad || nodes[b].requires_grad,
            )
        };
        self.push(value, op, rg)
    }

    /// Gradients of the `1 x 1` node `output` with respect to each of `wrt`.
    ///
    /// The adjoints are recorded on the tape, so the results can be fed into
    /// further computation and differentiated again. Inputs that `output`
    /// does not depend on get a zero matrix.
    pub fn grad<'t>(&'t self, output: Var<'t, T>, wrt: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        let out_shape = output.shape();
        if out_shape != (1, 1) {
            return Err(Error::Shape(format!(
                "gradient needs a scalar output, got {out_shape:?}"
            )));
        }
        let n = output.idx + 1;
        let mut adj: Vec<Option<Var<'t, T>>> = vec![None; n];
        adj[output.idx] = Some(self.constant(Array2::from_elem((1, 1), T::one())));

        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            let (op, requires) = {
                let nodes = self.nodes.borrow();
                (nodes[i].op, nodes[i].requires_grad)
            };
            if !requires {
                continue;
            }
            let v = |idx: usize| Var { tape: self, idx };
            let mut send = |target: usize, contrib: &dyn Fn() -> Var<'t, T>| {
                if !self.requires(target) {
                    return;
                }
                let c = contrib();
                adj[target] = Some(match adj[target] {
                    Some(prev) => prev + c,
                    None => c,
                });
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    send(a, &|| g);
                    send(b, &|| g);
                }
                Op::Sub(a, b) => {
                    send(a, &|| g);
                    send(b, &|| -g);
                }
                Op::Mul(a, b) => {
                    send(a, &|| g * v(b));
                    send(b, &|| g * v(a));
                }
                Op::Neg(a) => send(a, &|| -g),
                Op::Scale(a, c) => send(a, &|| g.scale(c)),
                Op::MatMul(a, b) => {
                    send(a, &|| g.matmul(v(b).t()));
                    send(b, &|| v(a).t().matmul(g));
                }
                Op::Transpose(a) => send(a, &|| g.t()),
                Op::Sin(a) => send(a, &|| g * v(a).cos()),
                Op::Cos(a) => send(a, &|| -(g * v(a).sin())),
                Op::AddRow(a, r) => {
                    send(a, &|| g);
                    send(r, &|| g.sum_rows());
                }
                Op::SumRows(a) => {
                    let rows = v(a).shape().0;
                    send(a, &|| g.broadcast_rows(rows));
                }
                Op::BroadcastRows(r) => send(r, &|| g.sum_rows()),
                Op::Sum(a) => {
                    let (r, c) = v(a).shape();
                    send(a, &|| g.expand(r, c));
                }
                Op::Expand(a) => send(a, &|| g.sum()),
                Op::SliceCols(a, start) => {
                    let total = v(a).shape().1;
                    send(a, &|| g.pad_cols(start, total));
                }
                Op::PadCols(a, start) => {
                    let width = v(a).shape().1;
                    send(a, &|| g.slice_cols(start, start + width));
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.idx).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = w.shape();
                    self.constant(Array2::zeros(shape))
                }
            })
            .collect())
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Array2<T> {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    /// The single entry of a `1 x 1` node.
    pub fn scalar(&self) -> T {
        self.tape.nodes.borrow()[self.idx].value[[0, 0]]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.idx)
    }

    fn check_same_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    pub fn matmul(self, rhs: Var<'t, T>) -> Var<'t, T> {
        self.check_same_tape(&rhs);
        self.tape
            .binary(self.idx, rhs.idx, Op::MatMul(self.idx, rhs.idx), |a, b| a.dot(b))
    }

    pub fn t(self) -> Var<'t, T> {
        self.tape
            .unary(self.idx, Op::Transpose(self.idx), |a| a.t().as_standard_layout().into_owned())
    }

    pub fn sin(self) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::Sin(self.idx), |a| a.mapv(T::sin))
    }

    pub fn cos(self) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::Cos(self.idx), |a| a.mapv(T::cos))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::Scale(self.idx, c), |a| a.mapv(|x| x * c))
    }

    pub fn add_row(self, row: Var<'t, T>) -> Var<'t, T> {
        self.check_same_tape(&row);
        self.tape
            .binary(self.idx, row.idx, Op::AddRow(self.idx, row.idx), |a, r| {
                assert_eq!(r.nrows(), 1, "add_row expects a single row");
                a + r
            })
    }

    pub fn sum_rows(self) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::SumRows(self.idx), |a| {
            a.sum_axis(Axis(0)).insert_axis(Axis(0))
        })
    }

    pub fn broadcast_rows(self, n: usize) -> Var<'t, T> {
        self.tape
            .unary(self.idx, Op::BroadcastRows(self.idx), |r| {
                assert_eq!(r.nrows(), 1, "broadcast_rows expects a single row");
                r.broadcast((n, r.ncols())).expect("row broadcast").to_owned()
            })
    }

    pub fn sum(self) -> Var<'t, T> {
        self.tape
            .unary(self.idx, Op::Sum(self.idx), |a| Array2::from_elem((1, 1), a.sum()))
    }

    pub fn expand(self, rows: usize, cols: usize) -> Var<'t, T> {
        self.tape
            .unary(self.idx, Op::Expand(self.idx), |a| {
                Array2::from_elem((rows, cols), a[[0, 0]])
            })
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t, T> {
        self.tape
            .unary(self.idx, Op::SliceCols(self.idx, start), |a| {
                a.slice(s![.., start..end]).to_owned()
            })
    }

    pub fn pad_cols(self, start: usize, total: usize) -> Var<'t, T> {
        self.tape
            .unary(self.idx, Op::PadCols(self.idx, start), |a| {
                let mut out = Array2::zeros((a.nrows(), total));
                out.slice_mut(s![.., start..start + a.ncols()]).assign(a);
                out
            })
    }
}

impl<'t, T: Scalar> Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self::Output {
        self.check_same_tape(&rhs);
        self.tape
            .binary(self.idx, rhs.idx, Op::Add(self.idx, rhs.idx), |a, b| a + b)
    }
}

impl<'t, T: Scalar> Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.check_same_tape(&rhs);
        self.tape
            .binary(self.idx, rhs.idx, Op::Sub(self.idx, rhs.idx), |a, b| a - b)
    }
}

impl<'t, T: Scalar> Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.check_same_tape(&rhs);
        self.tape
            .binary(self.idx, rhs.idx, Op::Mul(self.idx, rhs.idx), |a, b| a * b)
    }
}

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self::Output {
        self.tape.unary(self.idx, Op::Neg(self.idx), |a| a.mapv(|x| -x))
    }
}
