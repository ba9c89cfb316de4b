use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// The closed set of recordable primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Affine,
    Tanh,
    Exp,
    Log,
    Neg,
    Add,
    Sub,
    Mul,
    Scale,
    Square,
    Sum,
    Mean,
    Minimum,
    Concat,
    Softplus,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Neg(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Minimum(Var, Var),
    Concat(Var, Var),
    Softplus(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Affine { .. } => OpKind::Affine,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Neg(_) => OpKind::Neg,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Square(_) => OpKind::Square,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Minimum(..) => OpKind::Minimum,
            Op::Concat(..) => OpKind::Concat,
            Op::Softplus(_) => OpKind::Softplus,
        }
    }

    fn inputs(&self) -> [Option<Var>; 3] {
        match *self {
            Op::Leaf => [None, None, None],
            Op::Affine { x, w, b } => [Some(x), Some(w), Some(b)],
            Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Softplus(a) => [Some(a), None, None],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Minimum(a, b) | Op::Concat(a, b) => {
                [Some(a), Some(b), None]
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of a forward pass.
///
/// Nodes are appended in evaluation order, so every op's inputs precede it
/// and a single reverse sweep visits each node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the root does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn wrt(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.get(v)).collect()
    }
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> AutodiffError {
    AutodiffError::Shape {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, AutodiffError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: op_name(op.kind()) });
        }
        let requires_grad = op.inputs().iter().flatten().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Tensor::from_parts(shape, data), op, requires_grad))
    }

    /// `x · W + b` for `x: [rows, in]`, `W: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(shape_err("affine", &[xs, ws, bs]));
        }
        let (rows, inner, out) = (xs[0], ws[0], ws[1]);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        let mut data = Vec::with_capacity(rows * out);
        for r in 0..rows {
            data.extend_from_slice(bd);
            let acc = &mut data[r * out..(r + 1) * out];
            for (i, &xv) in xd[r * inner..(r + 1) * inner].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (a, &wv) in acc.iter_mut().zip(&wd[i * out..(i + 1) * out]) {
                    *a += xv * wv;
                }
            }
        }
        self.record(Op::Affine { x, w, b }, vec![rows, out], data)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|&v| f(v)).collect();
        self.record(op, shape, data)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Scale(x, k), |v| k * v)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, &[ta.shape(), tb.shape()]));
        }
        let shape = ta.shape().to_vec();
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        self.record(op, shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Elementwise minimum; on ties the gradient flows to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Minimum(a, b), "minimum", f64::min)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).data().iter().sum();
        self.record(Op::Sum(x), Vec::new(), vec![s])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(shape_err("mean", &[t.shape()]));
        }
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.record(Op::Mean(x), Vec::new(), vec![m])
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sb.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat", &[sa, sb]));
        }
        let (ca, cb) = (ta.last_dim(), tb.last_dim());
        let rows = ta.leading();
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(ta.row_slice(r));
            data.extend_from_slice(tb.row_slice(r));
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        self.record(Op::Concat(a, b), shape, data)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            for inp in node.op.inputs().iter().flatten() {
                assert!(inp.0 < i, "tape is not topologically ordered");
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (g, node) in grads.iter().zip(&self.nodes) {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(AutodiffError::NonFinite {
                        op: op_name(node.op.kind()),
                    });
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xs = self.nodes[x.0].value.shape();
                let (rows, inner) = (xs[0], xs[1]);
                let out = self.nodes[b.0].value.numel();
                let (xd, wd) = (val(x), val(w));
                if self.wants(x) {
                    let gx = slot(grads, x, rows * inner);
                    for r in 0..rows {
                        let gr = &g[r * out..(r + 1) * out];
                        for i in 0..inner {
                            let wr = &wd[i * out..(i + 1) * out];
                            gx[r * inner + i] += dot(gr, wr);
                        }
                    }
                }
                if self.wants(w) {
                    let gw = slot(grads, w, inner * out);
                    for r in 0..rows {
                        let gr = &g[r * out..(r + 1) * out];
                        for i in 0..inner {
                            let xv = xd[r * inner + i];
                            if xv == 0.0 {
                                continue;
                            }
                            for (a, &gv) in gw[i * out..(i + 1) * out].iter_mut().zip(gr) {
                                *a += xv * gv;
                            }
                        }
                    }
                }
                if self.wants(b) {
                    let gb = slot(grads, b, out);
                    for r in 0..rows {
                        for (a, &gv) in gb.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                            *a += gv;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.accum(grads, x, g, |i, gi| gi * (1.0 - y[i] * y[i]));
            }
            Op::Exp(x) => {
                let y = node.value.data();
                self.accum(grads, x, g, |i, gi| gi * y[i]);
            }
            Op::Log(x) => {
                let xd = val(x);
                self.accum(grads, x, g, |i, gi| gi / xd[i]);
            }
            Op::Neg(x) => self.accum(grads, x, g, |_, gi| -gi),
            Op::Scale(x, k) => self.accum(grads, x, g, |_, gi| k * gi),
            Op::Square(x) => {
                let xd = val(x);
                self.accum(grads, x, g, |i, gi| 2.0 * xd[i] * gi);
            }
            Op::Softplus(x) => {
                let xd = val(x);
                self.accum(grads, x, g, |i, gi| gi * sigmoid(xd[i]));
            }
            Op::Add(a, b) => {
                self.accum(grads, a, g, |_, gi| gi);
                self.accum(grads, b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.accum(grads, a, g, |_, gi| gi);
                self.accum(grads, b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(a), val(b));
                self.accum(grads, a, g, |i, gi| gi * bd[i]);
                self.accum(grads, b, g, |i, gi| gi * ad[i]);
            }
            Op::Minimum(a, b) => {
                let (ad, bd) = (val(a), val(b));
                self.accum(grads, a, g, |i, gi| if ad[i] <= bd[i] { gi } else { 0.0 });
                self.accum(grads, b, g, |i, gi| if ad[i] <= bd[i] { 0.0 } else { gi });
            }
            Op::Sum(x) => self.accum(grads, x, &[], |_, _| g[0]),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel() as f64;
                self.accum(grads, x, &[], |_, _| g[0] / n);
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (self.nodes[a.0].value.last_dim(), self.nodes[b.0].value.last_dim());
                let rows = self.nodes[a.0].value.leading();
                if self.wants(a) {
                    let ga = slot(grads, a, rows * ca);
                    for r in 0..rows {
                        for (d, s) in ga[r * ca..(r + 1) * ca].iter_mut().zip(&g[r * (ca + cb)..]) {
                            *d += s;
                        }
                    }
                }
                if self.wants(b) {
                    let gb = slot(grads, b, rows * cb);
                    for r in 0..rows {
                        for (d, s) in gb[r * cb..(r + 1) * cb].iter_mut().zip(&g[r * (ca + cb) + ca..]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    /// Adds `f(i, g[i])` into the gradient slot of `x`. An empty `g` means the
    /// upstream gradient is a broadcast scalar already captured by `f`.
    fn accum(&self, grads: &mut [Option<Vec<f64>>], x: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        if !self.wants(x) {
            return;
        }
        let n = self.nodes[x.0].value.numel();
        let gx = slot(grads, x, n);
        if g.is_empty() {
            for (i, d) in gx.iter_mut().enumerate() {
                *d += f(i, 0.0);
            }
        } else {
            for (i, d) in gx.iter_mut().enumerate() {
                *d += f(i, g[i]);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn op_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Leaf => "leaf",
        OpKind::Affine => "affine",
        OpKind::Tanh => "tanh",
        OpKind::Exp => "exp",
        OpKind::Log => "log",
        OpKind::Neg => "neg",
        OpKind::Add => "add",
        OpKind::Sub => "sub",
        OpKind::Mul => "mul",
        OpKind::Scale => "scale",
        OpKind::Square => "square",
        OpKind::Sum => "sum",
        OpKind::Mean => "mean",
        OpKind::Minimum => "minimum",
        OpKind::Concat => "concat",
        OpKind::Softplus => "softplus",
    }
}
