//! Reverse-mode tape whose nodes carry lane vectors.
//!
//! A [`Var`] is either a folded constant or a node on the tape of the active
//! [`DiffContext`]. A node holds one value per lane (one lane per sample
//! point) or a single broadcast value, so a full-batch PINN loss records one
//! node per network operation rather than one per operation per point.

use std::cell::RefCell;
use std::marker::PhantomData;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{AdError, Scalar};
use crate::numeric::pairwise_sum;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Repr {
    Const(f64),
    Node { idx: u32, gen: u32 },
}

/// Differentiable value recorded on the active [`DiffContext`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Var {
    repr: Repr,
}

#[derive(Clone, Copy, Debug)]
enum Operand {
    C(f64),
    N(u32),
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    AddC(u32),
    MulC(u32, f64),
    DivC(u32, f64),
    RDivC(u32),
    Tanh(u32),
    Exp(u32),
    Sin(u32),
    Cos(u32),
    Powi(u32, i32),
    Dot { start: u32, n: u32 },
    Sum(u32),
    Mean(u32),
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
    rg: bool,
}

#[derive(Default)]
struct Tape {
    gen: u32,
    nodes: Vec<Node>,
    vals: Vec<f64>,
    terms: Vec<(Operand, Operand)>,
    error: Option<AdError>,
}

impl Tape {
    fn clear(&mut self, gen: u32) {
        self.gen = gen;
        self.nodes.clear();
        self.vals.clear();
        self.terms.clear();
        self.error = None;
    }

    fn node(&self, i: u32) -> Node {
        self.nodes[i as usize]
    }

    fn slice(&self, i: u32) -> &[f64] {
        let n = self.nodes[i as usize];
        &self.vals[n.off..n.off + n.len]
    }

    fn flag(&mut self, err: AdError) {
        if self.error.is_none() {
            self.error = Some(err);
        }
    }

    fn push_leaf(&mut self, values: &[f64], rg: bool) -> u32 {
        assert!(!values.is_empty(), "a tape leaf needs at least one lane");
        let off = self.vals.len();
        self.vals.extend_from_slice(values);
        self.nodes.push(Node {
            op: Op::Leaf,
            off,
            len: values.len(),
            rg,
        });
        (self.nodes.len() - 1) as u32
    }

    /// Appends a node of `len` lanes and fills it with `f(output, vals)`.
    fn push_with(&mut self, op: Op, len: usize, rg: bool, f: impl FnOnce(&mut [f64], &[f64])) -> u32 {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        let (head, tail) = self.vals.split_at_mut(off);
        f(tail, head);
        self.nodes.push(Node { op, off, len, rg });
        (self.nodes.len() - 1) as u32
    }

    fn lanes2(&self, a: u32, b: u32) -> usize {
        let (la, lb) = (self.node(a).len, self.node(b).len);
        match (la, lb) {
            _ if la == lb => la,
            (1, _) => lb,
            (_, 1) => la,
            _ => panic!("lane mismatch: {la} vs {lb}"),
        }
    }

    fn binary(&mut self, op: Op, a: u32, b: u32, f: impl Fn(f64, f64) -> f64) -> u32 {
        let len = self.lanes2(a, b);
        let (na, nb) = (self.node(a), self.node(b));
        let rg = na.rg || nb.rg;
        self.push_with(op, len, rg, |out, vals| {
            let xa = &vals[na.off..na.off + na.len];
            let xb = &vals[nb.off..nb.off + nb.len];
            match (xa.len(), xb.len()) {
                (1, 1) => out[0] = f(xa[0], xb[0]),
                (1, _) => out.iter_mut().zip(xb).for_each(|(o, &y)| *o = f(xa[0], y)),
                (_, 1) => out.iter_mut().zip(xa).for_each(|(o, &x)| *o = f(x, xb[0])),
                _ => out
                    .iter_mut()
                    .zip(xa.iter().zip(xb))
                    .for_each(|(o, (&x, &y))| *o = f(x, y)),
            }
        })
    }

    fn unary(&mut self, op: Op, a: u32, f: impl Fn(f64) -> f64) -> u32 {
        let na = self.node(a);
        self.push_with(op, na.len, na.rg, |out, vals| {
            let xa = &vals[na.off..na.off + na.len];
            out.iter_mut().zip(xa).for_each(|(o, &x)| *o = f(x));
        })
    }

    fn dot(&mut self, terms: &[(Operand, Operand)]) -> u32 {
        let start = self.terms.len() as u32;
        let mut len = 1;
        let mut rg = false;
        for &(a, b) in terms {
            for o in [a, b] {
                if let Operand::N(i) = o {
                    let n = self.node(i);
                    rg |= n.rg;
                    if n.len != 1 {
                        assert!(len == 1 || len == n.len, "lane mismatch in dot: {len} vs {}", n.len);
                        len = n.len;
                    }
                }
            }
        }
        self.terms.extend_from_slice(terms);
        let src = |o: Operand| match o {
            Operand::C(c) => Src::C(c),
            Operand::N(i) => {
                let n = self.nodes[i as usize];
                if n.len == 1 {
                    Src::B(n.off)
                } else {
                    Src::V(n.off)
                }
            }
        };
        let desc: Vec<(Src, Src)> = terms.iter().map(|&(a, b)| (src(a), src(b))).collect();
        self.push_with(
            Op::Dot {
                start,
                n: terms.len() as u32,
            },
            len,
            rg,
            |out, vals| {
                let n = out.len();
                let get = |s: Src| match s {
                    Src::C(c) => Lane::Scalar(c),
                    Src::B(off) => Lane::Scalar(vals[off]),
                    Src::V(off) => Lane::Vector(&vals[off..off + n]),
                };
                for (k, &(a, b)) in desc.iter().enumerate() {
                    let first = k == 0;
                    match (get(a), get(b)) {
                        (Lane::Scalar(x), Lane::Scalar(y)) => accumulate(out, first, |_| x * y),
                        (Lane::Scalar(x), Lane::Vector(ys)) => accumulate(out, first, |l| x * ys[l]),
                        (Lane::Vector(xs), Lane::Scalar(y)) => accumulate(out, first, |l| xs[l] * y),
                        (Lane::Vector(xs), Lane::Vector(ys)) => accumulate(out, first, |l| xs[l] * ys[l]),
                    }
                }
            },
        )
    }

    fn reduce(&mut self, op: Op, a: u32) -> u32 {
        let na = self.node(a);
        let mean = matches!(op, Op::Mean(_));
        self.push_with(op, 1, na.rg, |out, vals| {
            let s = pairwise_sum(&vals[na.off..na.off + na.len]);
            out[0] = if mean { s / na.len as f64 } else { s };
        })
    }

    fn backward(&self, out: u32, mut grads: Vec<f64>) -> Vec<f64> {
        grads.clear();
        grads.resize(self.vals.len(), 0.0);
        let no = self.node(out);
        grads[no.off..no.off + no.len].fill(1.0);
        for idx in (0..=out as usize).rev() {
            let node = self.nodes[idx];
            if !node.rg {
                continue;
            }
            let (left, right) = grads.split_at_mut(node.off);
            let g = &right[..node.len];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let vals = &self.vals;
            let y = &vals[node.off..node.off + node.len];
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.scatter_coef(left, a, g, Coef::One);
                    self.scatter_coef(left, b, g, Coef::One);
                }
                Op::Sub(a, b) => {
                    self.scatter_coef(left, a, g, Coef::One);
                    self.scatter_coef(left, b, g, Coef::C(-1.0));
                }
                Op::Mul(a, b) => {
                    self.scatter_coef(left, a, g, Coef::lanes(self.slice(b)));
                    self.scatter_coef(left, b, g, Coef::lanes(self.slice(a)));
                }
                Op::Div(a, b) => {
                    let vb = self.slice(b);
                    self.scatter(left, a, g, |l, gi| gi / at(vb, l));
                    self.scatter(left, b, g, |l, gi| -gi * at(y, l) / at(vb, l));
                }
                Op::Neg(a) => self.scatter_coef(left, a, g, Coef::C(-1.0)),
                Op::AddC(a) => self.scatter_coef(left, a, g, Coef::One),
                Op::MulC(a, c) => self.scatter_coef(left, a, g, Coef::C(c)),
                Op::DivC(a, c) => self.scatter(left, a, g, |_, gi| gi / c),
                Op::RDivC(a) => {
                    let va = self.slice(a);
                    self.scatter(left, a, g, |l, gi| -gi * at(y, l) / at(va, l));
                }
                Op::Tanh(a) => self.scatter(left, a, g, |l, gi| {
                    let t = at(y, l);
                    gi * (1.0 - t * t)
                }),
                Op::Exp(a) => self.scatter_coef(left, a, g, Coef::lanes(y)),
                Op::Sin(a) => {
                    let va = self.slice(a);
                    self.scatter(left, a, g, |l, gi| gi * at(va, l).cos());
                }
                Op::Cos(a) => {
                    let va = self.slice(a);
                    self.scatter(left, a, g, |l, gi| -gi * at(va, l).sin());
                }
                Op::Powi(a, n) => {
                    let va = self.slice(a);
                    self.scatter(left, a, g, |l, gi| gi * n as f64 * at(va, l).powi(n - 1));
                }
                Op::Dot { start, n } => {
                    let terms = &self.terms[start as usize..(start + n) as usize];
                    for &(a, b) in terms {
                        let coef = |o: Operand| match o {
                            Operand::C(c) => Coef::C(c),
                            Operand::N(i) => Coef::lanes(self.slice(i)),
                        };
                        if let Operand::N(ia) = a {
                            self.scatter_coef(left, ia, g, coef(b));
                        }
                        if let Operand::N(ib) = b {
                            self.scatter_coef(left, ib, g, coef(a));
                        }
                    }
                }
                Op::Sum(a) => self.scatter_coef(left, a, g, Coef::One),
                Op::Mean(a) => {
                    let len = self.node(a).len as f64;
                    self.scatter(left, a, g, |_, gi| gi / len);
                }
            }
        }
        grads
    }

    /// Adds `g·coef` into the gradient of `target`, summing over lanes when
    /// the target is broadcast.
    #[inline]
    fn scatter_coef(&self, grads: &mut [f64], target: u32, g: &[f64], coef: Coef<'_>) {
        let t = self.node(target);
        if !t.rg {
            return;
        }
        let dst = &mut grads[t.off..t.off + t.len];
        if t.len == g.len() {
            match coef {
                Coef::One => dst.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi),
                Coef::C(c) => dst.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * c),
                Coef::V(v) => dst.iter_mut().zip(g.iter().zip(v)).for_each(|(d, (&gi, &vi))| *d += gi * vi),
            }
        } else if g.len() == 1 {
            let g0 = g[0];
            match coef {
                Coef::One => dst.iter_mut().for_each(|d| *d += g0),
                Coef::C(c) => dst.iter_mut().for_each(|d| *d += g0 * c),
                Coef::V(v) => dst.iter_mut().zip(v).for_each(|(d, &vi)| *d += g0 * vi),
            }
        } else {
            debug_assert_eq!(t.len, 1);
            dst[0] += match coef {
                Coef::One => g.iter().sum::<f64>(),
                Coef::C(c) => g.iter().map(|&gi| gi * c).sum::<f64>(),
                Coef::V(v) => g.iter().zip(v).map(|(&gi, &vi)| gi * vi).sum::<f64>(),
            };
        }
    }

    /// General form of [`Tape::scatter_coef`] for per-lane derivative rules.
    #[inline]
    fn scatter(&self, grads: &mut [f64], target: u32, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        let t = self.node(target);
        if !t.rg {
            return;
        }
        let dst = &mut grads[t.off..t.off + t.len];
        if t.len == g.len() {
            for (l, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
                *d += f(l, gi);
            }
        } else if g.len() == 1 {
            for (l, d) in dst.iter_mut().enumerate() {
                *d += f(l, g[0]);
            }
        } else {
            debug_assert_eq!(t.len, 1);
            let mut acc = 0.0;
            for (l, &gi) in g.iter().enumerate() {
                acc += f(l, gi);
            }
            dst[0] += acc;
        }
    }
}

/// Per-lane local derivative: one, a constant, or a lane vector.
#[derive(Clone, Copy)]
enum Coef<'a> {
    One,
    C(f64),
    V(&'a [f64]),
}

impl<'a> Coef<'a> {
    fn lanes(v: &'a [f64]) -> Self {
        if v.len() == 1 {
            Coef::C(v[0])
        } else {
            Coef::V(v)
        }
    }
}

#[derive(Clone, Copy)]
enum Src {
    C(f64),
    B(usize),
    V(usize),
}

enum Lane<'a> {
    Scalar(f64),
    Vector(&'a [f64]),
}

#[inline]
fn at(v: &[f64], l: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[l]
    }
}

#[inline]
fn accumulate(out: &mut [f64], first: bool, f: impl Fn(usize) -> f64) {
    if first {
        for (l, o) in out.iter_mut().enumerate() {
            *o = f(l);
        }
    } else {
        for (l, o) in out.iter_mut().enumerate() {
            *o += f(l);
        }
    }
}

struct Stack {
    active: Vec<Tape>,
    pool: Vec<Tape>,
    next_gen: u32,
    spare: Vec<f64>,
}

thread_local! {
    static STACK: RefCell<Stack> = const {
        RefCell::new(Stack {
            active: Vec::new(),
            pool: Vec::new(),
            next_gen: 1,
            spare: Vec::new(),
        })
    };
}

fn with_tape<R>(gen: u32, f: impl FnOnce(&mut Tape) -> R) -> R {
    STACK.with(|s| {
        let mut s = s.borrow_mut();
        let tape = s
            .active
            .last_mut()
            .expect("tape variable used outside of its DiffContext");
        assert_eq!(tape.gen, gen, "tape variable used outside of its DiffContext");
        f(tape)
    })
}

fn flag_error(err: AdError) {
    STACK.with(|s| {
        if let Some(t) = s.borrow_mut().active.last_mut() {
            t.flag(err);
        }
    });
}

/// Scope of one reverse-mode recording.
///
/// Contexts nest as a per-thread stack: only the innermost live context
/// accepts operations. Dropping a context invalidates its variables.
pub struct DiffContext {
    gen: u32,
    _not_send: PhantomData<*const ()>,
}

impl DiffContext {
    pub fn new() -> Self {
        let gen = STACK.with(|s| {
            let mut s = s.borrow_mut();
            let gen = s.next_gen;
            s.next_gen = s.next_gen.wrapping_add(1).max(1);
            let mut tape = s.pool.pop().unwrap_or_default();
            tape.clear(gen);
            s.active.push(tape);
            gen
        });
        Self {
            gen,
            _not_send: PhantomData,
        }
    }

    /// Forgets every recorded node, keeping the allocations.
    pub fn reset(&mut self) {
        let gen = STACK.with(|s| {
            let mut s = s.borrow_mut();
            let gen = s.next_gen;
            s.next_gen = s.next_gen.wrapping_add(1).max(1);
            let top = s.active.last_mut().expect("context stack is empty");
            assert_eq!(top.gen, self.gen, "only the innermost DiffContext can be reset");
            top.clear(gen);
            gen
        });
        self.gen = gen;
    }

    fn leaf(&self, values: &[f64], rg: bool) -> Var {
        let idx = with_tape(self.gen, |t| t.push_leaf(values, rg));
        Var::node(idx, self.gen)
    }

    /// Independent variable to differentiate with respect to.
    pub fn variable(&self, value: f64) -> Var {
        self.leaf(&[value], true)
    }

    /// Independent variable with one value per lane.
    pub fn variable_lanes(&self, values: &[f64]) -> Var {
        self.leaf(values, true)
    }

    /// Non-differentiated data, one value per lane.
    pub fn input(&self, values: &[f64]) -> Var {
        self.leaf(values, false)
    }

    /// Constant with zero derivative.
    pub fn lift(&self, c: f64) -> Var {
        Var::constant(c)
    }

    pub fn node_count(&self) -> usize {
        with_tape(self.gen, |t| t.nodes.len())
    }

    /// First division by zero or domain violation recorded since creation or reset.
    pub fn error(&self) -> Option<AdError> {
        with_tape(self.gen, |t| t.error.clone())
    }

    /// Reverse sweep from `output`; a multi-lane output is seeded with ones in
    /// every lane, i.e. the gradient of its lane sum.
    pub fn backward(&self, output: Var) -> Gradients {
        match output.repr {
            Repr::Const(_) => Gradients {
                gen: self.gen,
                grads: Vec::new(),
                slots: Vec::new(),
            },
            Repr::Node { idx, gen } => {
                assert_eq!(gen, self.gen, "output belongs to another context");
                let buf = STACK.with(|s| std::mem::take(&mut s.borrow_mut().spare));
                with_tape(self.gen, |t| Gradients {
                    gen: self.gen,
                    grads: t.backward(idx, buf),
                    slots: t.nodes.iter().map(|n| (n.off, n.len)).collect(),
                })
            }
        }
    }
}

impl Default for DiffContext {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for DiffContext {
    fn drop(&mut self) {
        STACK.with(|s| {
            let mut s = s.borrow_mut();
            let pos = s.active.iter().rposition(|t| t.gen == self.gen);
            if let Some(pos) = pos {
                let tape = s.active.remove(pos);
                s.pool.push(tape);
            }
        });
    }
}

/// Adjoints produced by [`DiffContext::backward`].
pub struct Gradients {
    gen: u32,
    grads: Vec<f64>,
    slots: Vec<(usize, usize)>,
}

impl Gradients {
    /// Per-lane derivative of the output with respect to `v`; zero for constants.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match v.repr {
            Repr::Const(_) => vec![0.0],
            Repr::Node { idx, gen } => {
                assert_eq!(gen, self.gen, "variable belongs to another context");
                match self.slots.get(idx as usize) {
                    Some(&(off, len)) => self.grads[off..off + len].to_vec(),
                    None => vec![0.0],
                }
            }
        }
    }

    /// Derivative with respect to a single-lane variable.
    pub fn scalar(&self, v: Var) -> f64 {
        match v.repr {
            Repr::Const(_) => 0.0,
            Repr::Node { idx, gen } => {
                assert_eq!(gen, self.gen, "variable belongs to another context");
                self.slots.get(idx as usize).map_or(0.0, |&(off, _)| self.grads[off])
            }
        }
    }
}

impl Drop for Gradients {
    fn drop(&mut self) {
        let grads = std::mem::take(&mut self.grads);
        STACK.with(|s| {
            if let Ok(mut s) = s.try_borrow_mut() {
                if s.spare.capacity() < grads.capacity() {
                    s.spare = grads;
                }
            }
        });
    }
}

impl Var {
    fn node(idx: u32, gen: u32) -> Self {
        Self {
            repr: Repr::Node { idx, gen },
        }
    }

    pub fn constant(c: f64) -> Self {
        Self { repr: Repr::Const(c) }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.repr, Repr::Const(_))
    }

    /// Lane values.
    pub fn values(&self) -> Vec<f64> {
        match self.repr {
            Repr::Const(c) => vec![c],
            Repr::Node { idx, gen } => with_tape(gen, |t| t.slice(idx).to_vec()),
        }
    }

    /// Value of the first lane.
    pub fn value(&self) -> f64 {
        match self.repr {
            Repr::Const(c) => c,
            Repr::Node { idx, gen } => with_tape(gen, |t| t.slice(idx)[0]),
        }
    }

    pub fn lanes(&self) -> usize {
        match self.repr {
            Repr::Const(_) => 1,
            Repr::Node { idx, gen } => with_tape(gen, |t| t.node(idx).len),
        }
    }

    /// Pairwise sum over lanes.
    pub fn sum(self) -> Var {
        match self.repr {
            Repr::Const(_) => self,
            Repr::Node { idx, gen } => Var::node(with_tape(gen, |t| t.reduce(Op::Sum(idx), idx)), gen),
        }
    }

    /// Pairwise mean over lanes.
    pub fn mean(self) -> Var {
        match self.repr {
            Repr::Const(_) => self,
            Repr::Node { idx, gen } => Var::node(with_tape(gen, |t| t.reduce(Op::Mean(idx), idx)), gen),
        }
    }

    fn unary(self, make: fn(u32) -> Op, f: fn(f64) -> f64) -> Var {
        match self.repr {
            Repr::Const(c) => Var::constant(f(c)),
            Repr::Node { idx, gen } => Var::node(with_tape(gen, |t| t.unary(make(idx), idx, f)), gen),
        }
    }
}

fn gen_of(a: Repr, b: Repr) -> u32 {
    match (a, b) {
        (Repr::Node { gen: ga, .. }, Repr::Node { gen: gb, .. }) => {
            assert_eq!(ga, gb, "variables from different contexts");
            ga
        }
        (Repr::Node { gen, .. }, _) | (_, Repr::Node { gen, .. }) => gen,
        _ => unreachable!(),
    }
}

impl Add for Var {
    type Output = Var;
    fn add(self, rhs: Var) -> Var {
        match (self.repr, rhs.repr) {
            (Repr::Const(a), Repr::Const(b)) => Var::constant(a + b),
            (Repr::Const(c), Repr::Node { .. }) if c == 0.0 => rhs,
            (Repr::Node { .. }, Repr::Const(c)) if c == 0.0 => self,
            (Repr::Const(c), Repr::Node { idx, gen }) | (Repr::Node { idx, gen }, Repr::Const(c)) => {
                Var::node(with_tape(gen, |t| t.unary(Op::AddC(idx), idx, |x| x + c)), gen)
            }
            (Repr::Node { idx: a, .. }, Repr::Node { idx: b, .. }) => {
                let gen = gen_of(self.repr, rhs.repr);
                Var::node(with_tape(gen, |t| t.binary(Op::Add(a, b), a, b, |x, y| x + y)), gen)
            }
        }
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, rhs: Var) -> Var {
        match (self.repr, rhs.repr) {
            (Repr::Const(a), Repr::Const(b)) => Var::constant(a - b),
            (Repr::Node { .. }, Repr::Const(c)) if c == 0.0 => self,
            (Repr::Node { idx, gen }, Repr::Const(c)) => {
                Var::node(with_tape(gen, |t| t.unary(Op::AddC(idx), idx, |x| x - c)), gen)
            }
            (Repr::Const(c), Repr::Node { .. }) => {
                let n = -rhs;
                if c == 0.0 {
                    n
                } else {
                    n + Var::constant(c)
                }
            }
            (Repr::Node { idx: a, .. }, Repr::Node { idx: b, .. }) => {
                let gen = gen_of(self.repr, rhs.repr);
                Var::node(with_tape(gen, |t| t.binary(Op::Sub(a, b), a, b, |x, y| x - y)), gen)
            }
        }
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, rhs: Var) -> Var {
        match (self.repr, rhs.repr) {
            (Repr::Const(a), Repr::Const(b)) => Var::constant(a * b),
            (Repr::Const(c), Repr::Node { idx, gen }) | (Repr::Node { idx, gen }, Repr::Const(c)) => {
                if c == 0.0 {
                    Var::constant(0.0)
                } else if c == 1.0 {
                    Var::node(idx, gen)
                } else {
                    Var::node(with_tape(gen, |t| t.unary(Op::MulC(idx, c), idx, |x| x * c)), gen)
                }
            }
            (Repr::Node { idx: a, .. }, Repr::Node { idx: b, .. }) => {
                let gen = gen_of(self.repr, rhs.repr);
                Var::node(with_tape(gen, |t| t.binary(Op::Mul(a, b), a, b, |x, y| x * y)), gen)
            }
        }
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, rhs: Var) -> Var {
        match (self.repr, rhs.repr) {
            (Repr::Const(a), Repr::Const(b)) => {
                if b == 0.0 {
                    flag_error(AdError::Domain { primitive: "div" });
                }
                Var::constant(a / b)
            }
            (Repr::Node { idx, gen }, Repr::Const(c)) => {
                if c == 0.0 {
                    flag_error(AdError::Domain { primitive: "div" });
                }
                Var::node(with_tape(gen, |t| t.unary(Op::DivC(idx, c), idx, |x| x / c)), gen)
            }
            (Repr::Const(c), Repr::Node { idx, gen }) => Var::node(
                with_tape(gen, |t| {
                    if t.slice(idx).contains(&0.0) {
                        t.flag(AdError::Domain { primitive: "div" });
                    }
                    t.unary(Op::RDivC(idx), idx, |x| c / x)
                }),
                gen,
            ),
            (Repr::Node { idx: a, .. }, Repr::Node { idx: b, .. }) => {
                let gen = gen_of(self.repr, rhs.repr);
                Var::node(
                    with_tape(gen, |t| {
                        if t.slice(b).contains(&0.0) {
                            t.flag(AdError::Domain { primitive: "div" });
                        }
                        t.binary(Op::Div(a, b), a, b, |x, y| x / y)
                    }),
                    gen,
                )
            }
        }
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(Op::Neg, |x| -x)
    }
}

impl Scalar for Var {
    type Real = Var;
    const PARTS: usize = 1;

    fn lift(c: f64) -> Self {
        Var::constant(c)
    }

    fn from_real(r: Var) -> Self {
        r
    }

    fn from_parts(parts: &[Var]) -> Self {
        parts[0]
    }

    fn tanh(self) -> Self {
        self.unary(Op::Tanh, f64::tanh)
    }

    fn exp(self) -> Self {
        self.unary(Op::Exp, f64::exp)
    }

    fn sin(self) -> Self {
        self.unary(Op::Sin, f64::sin)
    }

    fn cos(self) -> Self {
        self.unary(Op::Cos, f64::cos)
    }

    fn powi(self, n: i32) -> Self {
        match self.repr {
            Repr::Const(c) => {
                if c == 0.0 && n < 0 {
                    flag_error(AdError::Domain { primitive: "powi" });
                }
                Var::constant(c.powi(n))
            }
            Repr::Node { idx, gen } => {
                if n == 0 {
                    return Var::constant(1.0);
                }
                if n == 1 {
                    return self;
                }
                Var::node(
                    with_tape(gen, |t| {
                        if n < 0 && t.slice(idx).contains(&0.0) {
                            t.flag(AdError::Domain { primitive: "powi" });
                        }
                        t.unary(Op::Powi(idx, n), idx, move |x| x.powi(n))
                    }),
                    gen,
                )
            }
        }
    }

    fn dot_real(w: &[Var], h: &[Var]) -> Self {
        assert_eq!(w.len(), h.len());
        let mut terms = Vec::with_capacity(w.len());
        let mut gen = None;
        let mut folded = true;
        let mut acc = 0.0;
        for (a, b) in w.iter().zip(h) {
            let oa = match a.repr {
                Repr::Const(c) => Operand::C(c),
                Repr::Node { idx, gen: g } => {
                    gen = Some(g);
                    Operand::N(idx)
                }
            };
            let ob = match b.repr {
                Repr::Const(c) => Operand::C(c),
                Repr::Node { idx, gen: g } => {
                    gen = Some(g);
                    Operand::N(idx)
                }
            };
            match (oa, ob) {
                (Operand::C(x), _) | (_, Operand::C(x)) if x == 0.0 => {}
                (Operand::C(x), Operand::C(y)) => {
                    acc += x * y;
                    terms.push((oa, ob));
                }
                _ => {
                    folded = false;
                    terms.push((oa, ob));
                }
            }
        }
        if folded {
            return Var::constant(acc);
        }
        let gen = gen.expect("non-constant dot has a node");
        Var::node(with_tape(gen, |t| t.dot(&terms)), gen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_never_touch_the_tape() {
        let ctx = DiffContext::new();
        let a = Var::constant(2.5) * Var::constant(4.0);
        assert_eq!(a.value(), 10.0);
        assert_eq!(ctx.node_count(), 0);
    }

    #[test]
    fn lane_gradient_of_mean_square() {
        let ctx = DiffContext::new();
        let w = ctx.variable(2.0);
        let x = ctx.input(&[1.0, 2.0, 3.0]);
        let loss = (w * x).square().mean();
        assert!((loss.value() - 4.0 * 14.0 / 3.0).abs() < 1e-12);
        let g = ctx.backward(loss);
        // d/dw mean(w^2 x^2) = 2 w mean(x^2)
        assert!((g.scalar(w) - 2.0 * 2.0 * 14.0 / 3.0).abs() < 1e-12);
        assert_eq!(g.wrt(x), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn dot_matches_fold_bitwise() {
        let ctx = DiffContext::new();
        let w: Vec<Var> = [0.3, -1.7, 2.2].iter().map(|&v| ctx.variable(v)).collect();
        let h: Vec<Var> = [vec![1.0, 2.0], vec![0.5, -0.5], vec![3.0, 0.1]]
            .iter()
            .map(|v| ctx.input(v))
            .collect();
        let d = Var::dot_real(&w, &h).values();
        let expected: Vec<f64> = (0..2)
            .map(|l| {
                let xs = [[1.0, 2.0], [0.5, -0.5], [3.0, 0.1]];
                0.3 * xs[0][l] + -1.7 * xs[1][l] + 2.2 * xs[2][l]
            })
            .collect();
        assert_eq!(d, expected);
        let g = ctx.backward(Var::dot_real(&w, &h).sum());
        assert_eq!(g.scalar(w[0]), 3.0);
        assert_eq!(g.scalar(w[1]), 0.0);
        assert!((g.scalar(w[2]) - 3.1).abs() < 1e-15);
    }

    #[test]
    fn division_by_zero_is_flagged() {
        let ctx = DiffContext::new();
        let x = ctx.variable(0.0);
        let _ = Var::constant(1.0) / x;
        assert_eq!(ctx.error(), Some(AdError::Domain { primitive: "div" }));
    }

    #[test]
    fn nested_contexts_are_independent() {
        let outer = DiffContext::new();
        let a = outer.variable(3.0);
        let b = a * a;
        {
            let inner = DiffContext::new();
            let x = inner.variable(5.0);
            let y = x * x * x;
            assert_eq!(inner.backward(y).scalar(x), 75.0);
        }
        assert_eq!(outer.backward(b).scalar(a), 6.0);
    }

    #[test]
    fn reset_reuses_the_tape() {
        let mut ctx = DiffContext::new();
        let x = ctx.variable(1.0);
        let _ = x.exp();
        assert_eq!(ctx.node_count(), 2);
        ctx.reset();
        assert_eq!(ctx.node_count(), 0);
        let y = ctx.variable(2.0);
        assert_eq!(ctx.backward(y.powi(2)).scalar(y), 4.0);
    }
}
