use super::Tensor2;
use crate::{Error, Real, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScaleRows(usize, usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(usize),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    UnitNormalizeRows(usize, Vec<f64>),
    GatherRows(usize, Vec<usize>),
    RepeatRows(usize, usize),
    SumRowGroups(usize, usize),
    RowSum(usize),
    Reshape(usize),
    SumAll(usize),
}

struct Node<T> {
    value: Tensor2<T>,
    op: Op,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Rows with a smaller norm normalize to zero.
pub const UNIT_NORM_FLOOR: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Records a computation for one reverse sweep. Backward arithmetic is plain
/// array math, so nothing recorded during a sweep ever lands on a tape.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    checked: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Error {
    Error::Shape { op, lhs, rhs }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), checked: false }
    }

    /// A tape that rejects any op producing a non-finite value.
    pub fn checked() -> Self {
        Tape { nodes: Vec::new(), checked: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor2<T>, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::Numerical {
                scene_id: "tape".into(),
                step: self.nodes.len(),
                msg: format!("{name} produced a non-finite value"),
            });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor2<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor2<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Same value, cut from the graph.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a.0, b.0), rg, "matmul")
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(&[a, b]);
        self.push(Tensor2 { rows: sa.0, cols: sa.1, data }, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(shape_err("add_row", sa, sr));
        }
        let r = self.value(row).data.clone();
        let mut v = self.value(a).clone();
        for row in v.data.chunks_exact_mut(sa.1) {
            for (x, b) in row.iter_mut().zip(&r) {
                *x += *b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(v, Op::AddRow(a.0, row.0), rg, "add_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let st = T::lit(s);
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= st);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a.0, s), rg, "scale")
    }

    /// Multiplies row `i` of `a` by `s[i]`, where `s` is `rows × 1`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (sa, ss) = (self.shape(a), self.shape(s));
        if ss != (sa.0, 1) {
            return Err(shape_err("scale_rows", sa, ss));
        }
        let sv = self.value(s).data.clone();
        let mut v = self.value(a).clone();
        for (row, k) in v.data.chunks_exact_mut(sa.1.max(1)).zip(&sv) {
            row.iter_mut().for_each(|x| *x *= *k);
        }
        let rg = self.rg(&[a, s]);
        self.push(v, Op::ScaleRows(a.0, s.0), rg, "scale_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        for p in parts {
            if self.shape(*p).0 != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut v = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                v.data[r * cols + off..r * cols + off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = self.rg(parts);
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), rg, "concat_cols")
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a);
        if start > end || end > sa.1 {
            return Err(shape_err("slice_cols", sa, (start, end)));
        }
        let src = self.value(a);
        let v = Tensor2::from_fn(sa.0, end - start, |r, c| src.get(r, start + c));
        let rg = self.rg(&[a]);
        self.push(v, Op::SliceCols(a.0, start), rg, "slice_cols")
    }

    /// Row-wise layer normalization with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        for p in [gain, bias] {
            if self.shape(p) != (1, sx.1) {
                return Err(shape_err("layer_norm", sx, self.shape(p)));
            }
        }
        let n = sx.1 as f64;
        let xv = self.value(x);
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let mut out = Tensor2::zeros(sx.0, sx.1);
        let mut xhat = vec![0.0; sx.0 * sx.1];
        let mut rstd = vec![0.0; sx.0];
        for r in 0..sx.0 {
            let row = xv.row(r);
            let mean = row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
            let var = row.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..sx.1 {
                let h = (row[c].to_f64_lossy() - mean) * rs;
                xhat[r * sx.1 + c] = h;
                out.data[r * sx.1 + c] = T::lit(h) * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push(out, Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, rstd }, rg, "layer_norm")
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op, name: &'static str) -> Result<Var> {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = f(*x));
        let rg = self.rg(&[a]);
        self.push(v, op, rg, name)
    }

    /// GeLU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.map(a, gelu, Op::Gelu(a.0), "gelu")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, |x| x.max(T::zero()), Op::Relu(a.0), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a.0), "sigmoid")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut v = self.value(a).clone();
        let cols = v.cols.max(1);
        for row in v.data.chunks_exact_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::SoftmaxRows(a.0), rg, "softmax_rows")
    }

    /// Scales each row to unit length; rows with norm below
    /// [`UNIT_NORM_FLOOR`] become zero and pass no gradient.
    pub fn unit_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let mut v = self.value(a).clone();
        let cols = v.cols.max(1);
        let mut inv = Vec::with_capacity(v.rows);
        for row in v.data.chunks_exact_mut(cols) {
            let n = row.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
            if n < UNIT_NORM_FLOOR {
                row.iter_mut().for_each(|x| *x = T::zero());
                inv.push(0.0);
            } else {
                let s = T::lit(1.0 / n);
                row.iter_mut().for_each(|x| *x *= s);
                inv.push(1.0 / n);
            }
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::UnitNormalizeRows(a.0, inv), rg, "unit_normalize_rows")
    }

    /// Row `r` of the output is row `indices[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= sa.0) {
            return Err(shape_err("gather_rows", sa, (bad, 0)));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * sa.1);
        for &i in indices {
            data.extend_from_slice(src.row(i));
        }
        let v = Tensor2 { rows: indices.len(), cols: sa.1, data };
        let rg = self.rg(&[a]);
        self.push(v, Op::GatherRows(a.0, indices.to_vec()), rg, "gather_rows")
    }

    /// Each row repeated `k` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Result<Var> {
        let sa = self.shape(a);
        let src = self.value(a);
        let mut data = Vec::with_capacity(sa.0 * k * sa.1);
        for r in 0..sa.0 {
            for _ in 0..k {
                data.extend_from_slice(src.row(r));
            }
        }
        let v = Tensor2 { rows: sa.0 * k, cols: sa.1, data };
        let rg = self.rg(&[a]);
        self.push(v, Op::RepeatRows(a.0, k), rg, "repeat_rows")
    }

    /// Sums consecutive groups of `k` rows: `(n·k) × c → n × c`.
    pub fn sum_row_groups(&mut self, a: Var, k: usize) -> Result<Var> {
        let sa = self.shape(a);
        if k == 0 || !sa.0.is_multiple_of(k) {
            return Err(shape_err("sum_row_groups", sa, (k, 0)));
        }
        let src = self.value(a);
        let mut v = Tensor2::zeros(sa.0 / k, sa.1);
        for r in 0..sa.0 {
            let dst = r / k;
            for c in 0..sa.1 {
                v.data[dst * sa.1 + c] += src.get(r, c);
            }
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::SumRowGroups(a.0, k), rg, "sum_row_groups")
    }

    /// Sum over columns: `r × c → r × 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        let src = self.value(a);
        let v = Tensor2::from_fn(sa.0, 1, |r, _| src.row(r).iter().copied().sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::RowSum(a.0), rg, "row_sum")
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let sa = self.shape(a);
        if sa.0 * sa.1 != rows * cols {
            return Err(shape_err("reshape", sa, (rows, cols)));
        }
        let mut v = self.value(a).clone();
        v.rows = rows;
        v.cols = cols;
        let rg = self.rg(&[a]);
        self.push(v, Op::Reshape(a.0), rg, "reshape")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data.iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor2::filled(1, 1, s), Op::SumAll(a.0), rg, "sum_all")
    }

    /// Reverse sweep from the given output adjoints.
    pub fn backward(&self, seeds: &[(Var, Tensor2<T>)]) -> Result<Gradients<T>> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor2<T>>> = vec![None; n];
        let mut visits = vec![0u32; n];
        let mut top = 0;
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(shape_err("backward seed", self.shape(*v), g.shape()));
            }
            if !self.nodes[v.0].requires_grad {
                continue;
            }
            accumulate(&mut grads[v.0], g.clone());
            top = top.max(v.0 + 1);
        }
        for i in (0..top).rev() {
            let Some(g) = grads[i].take() else { continue };
            visits[i] += 1;
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, visits })
    }

    fn send(&self, grads: &mut [Option<Tensor2<T>>], to: usize, g: Tensor2<T>) {
        if self.nodes[to].requires_grad {
            accumulate(&mut grads[to], g);
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor2<T>, grads: &mut [Option<Tensor2<T>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.send(grads, *a, g.matmul_t(val(*b)));
                }
                if self.wants(*b) {
                    self.send(grads, *b, val(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                if self.wants(*b) {
                    let mut n = g.clone();
                    n.data.iter_mut().for_each(|x| *x = -*x);
                    self.send(grads, *b, n);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = g.data.iter().zip(&val(*b).data).map(|(x, y)| *x * *y).collect();
                    self.send(grads, *a, Tensor2 { data: d, ..g.clone() });
                }
                if self.wants(*b) {
                    let d = g.data.iter().zip(&val(*a).data).map(|(x, y)| *x * *y).collect();
                    self.send(grads, *b, Tensor2 { data: d, ..g.clone() });
                }
            }
            Op::AddRow(a, r) => {
                self.send(grads, *a, g.clone());
                if self.wants(*r) {
                    let mut s = Tensor2::zeros(1, g.cols);
                    for row in g.data.chunks_exact(g.cols.max(1)) {
                        for (d, x) in s.data.iter_mut().zip(row) {
                            *d += *x;
                        }
                    }
                    self.send(grads, *r, s);
                }
            }
            Op::Scale(a, s) => {
                let st = T::lit(*s);
                let mut d = g.clone();
                d.data.iter_mut().for_each(|x| *x *= st);
                self.send(grads, *a, d);
            }
            Op::ScaleRows(a, s) => {
                let cols = g.cols.max(1);
                let sv = &val(*s).data;
                if self.wants(*a) {
                    let mut d = g.clone();
                    for (row, k) in d.data.chunks_exact_mut(cols).zip(sv) {
                        row.iter_mut().for_each(|x| *x *= *k);
                    }
                    self.send(grads, *a, d);
                }
                if self.wants(*s) {
                    let av = val(*a);
                    let d =
                        Tensor2::from_fn(g.rows, 1, |r, _| g.row(r).iter().zip(av.row(r)).map(|(x, y)| *x * *y).sum());
                    self.send(grads, *s, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols;
                    if self.wants(p) {
                        self.send(grads, p, Tensor2::from_fn(g.rows, w, |r, c| g.get(r, off + c)));
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let mut d = Tensor2::zeros(src.rows, src.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        d.set(r, start + c, g.get(r, c));
                    }
                }
                self.send(grads, *a, d);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (rows, cols) = g.shape();
                let gv = &val(*gain).data;
                if self.wants(*x) {
                    let mut d = Tensor2::zeros(rows, cols);
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let dh = (g.get(r, c) * gv[c]).to_f64_lossy();
                            mean_d += dh;
                            mean_dx += dh * xhat[r * cols + c];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for c in 0..cols {
                            let dh = (g.get(r, c) * gv[c]).to_f64_lossy();
                            let h = xhat[r * cols + c];
                            d.set(r, c, T::lit(rstd[r] * (dh - mean_d - h * mean_dx)));
                        }
                    }
                    self.send(grads, *x, d);
                }
                if self.wants(*gain) {
                    let mut d = Tensor2::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            d.data[c] += g.get(r, c) * T::lit(xhat[r * cols + c]);
                        }
                    }
                    self.send(grads, *gain, d);
                }
                if self.wants(*bias) {
                    let mut d = Tensor2::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            d.data[c] += g.get(r, c);
                        }
                    }
                    self.send(grads, *bias, d);
                }
            }
            Op::Gelu(a) => {
                let d = g.data.iter().zip(&val(*a).data).map(|(gg, x)| *gg * gelu_grad(*x)).collect();
                self.send(grads, *a, Tensor2 { data: d, ..g.clone() });
            }
            Op::Relu(a) => {
                let d = g
                    .data
                    .iter()
                    .zip(&val(*a).data)
                    .map(|(gg, x)| if *x > T::zero() { *gg } else { T::zero() })
                    .collect();
                self.send(grads, *a, Tensor2 { data: d, ..g.clone() });
            }
            Op::Sigmoid(a) => {
                let d = g.data.iter().zip(&node.value.data).map(|(gg, y)| *gg * *y * (T::one() - *y)).collect();
                self.send(grads, *a, Tensor2 { data: d, ..g.clone() });
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = g.clone();
                for r in 0..g.rows {
                    let dot: T = g.row(r).iter().zip(y.row(r)).map(|(p, q)| *p * *q).sum();
                    for c in 0..g.cols {
                        d.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                self.send(grads, *a, d);
            }
            Op::UnitNormalizeRows(a, inv) => {
                let y = &node.value;
                let mut d = g.clone();
                for r in 0..g.rows {
                    let s = T::lit(inv[r]);
                    let dot: T = g.row(r).iter().zip(y.row(r)).map(|(p, q)| *p * *q).sum();
                    for c in 0..g.cols {
                        d.set(r, c, s * (g.get(r, c) - y.get(r, c) * dot));
                    }
                }
                self.send(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let src = val(*a);
                let mut d = Tensor2::zeros(src.rows, src.cols);
                for (r, &i) in idx.iter().enumerate() {
                    for (dst, s) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *dst += *s;
                    }
                }
                self.send(grads, *a, d);
            }
            Op::RepeatRows(a, k) => {
                let src = val(*a);
                let mut d = Tensor2::zeros(src.rows, src.cols);
                for r in 0..g.rows {
                    for (dst, s) in d.row_mut(r / k).iter_mut().zip(g.row(r)) {
                        *dst += *s;
                    }
                }
                self.send(grads, *a, d);
            }
            Op::SumRowGroups(a, k) => {
                let src = val(*a);
                let d = Tensor2::from_fn(src.rows, src.cols, |r, c| g.get(r / k, c));
                self.send(grads, *a, d);
            }
            Op::RowSum(a) => {
                let src = val(*a);
                let d = Tensor2::from_fn(src.rows, src.cols, |r, _| g.get(r, 0));
                self.send(grads, *a, d);
            }
            Op::Reshape(a) => {
                let src = val(*a);
                self.send(grads, *a, Tensor2 { rows: src.rows, cols: src.cols, data: g.data.clone() });
            }
            Op::SumAll(a) => {
                let src = val(*a);
                self.send(grads, *a, Tensor2::filled(src.rows, src.cols, g.data[0]));
            }
        }
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor2<T>>, g: Tensor2<T>) {
    match slot {
        Some(s) => s.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[inline]
fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// Adjoints produced by one [`Tape::backward`] sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor2<T>>>,
    visits: Vec<u32>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor2<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` if nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor2<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor2::zeros(shape.0, shape.1))
    }

    /// How many times each node was expanded during the sweep.
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }
}
