//! Define-by-run reverse-mode automatic differentiation.
//!
//! Nodes are evaluated eagerly as they are added, so node order is a
//! topological order. Parameters live in a [`ParamStore`] that the graph
//! borrows immutably; [`Graph::backward`] accumulates their gradients into
//! a separate [`Gradients`] buffer.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type ParamId = usize;

/// Dense row-major matrix; vectors are `n x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.trainable.push(trainable);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> std::ops::Range<ParamId> {
        0..self.tensors.len()
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

/// Gradient buffers with the layout of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients {
            grads: params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id]
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Lookup(ParamId, usize),
    MatVec(Value, Value),
    Add(Value, Value),
    Mul(Value, Value),
    Tanh(Value),
    Sigmoid(Value),
    Concat(Vec<Value>),
    Slice(Value, usize),
    Pick(Value, Vec<usize>),
    LogSoftmax(Value),
    LogSumExp(Value),
    Neg(Value),
    Sum(Vec<Value>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "parameter",
            Op::Lookup(..) => "lookup",
            Op::MatVec(..) => "matvec",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::Pick(..) => "pick",
            Op::LogSoftmax(_) => "log-softmax",
            Op::LogSumExp(_) => "log-sum-exp",
            Op::Neg(_) => "neg",
            Op::Sum(_) => "sum",
        }
    }

    fn parents(&self) -> Vec<Value> {
        match self {
            Op::Input | Op::Param(_) | Op::Lookup(..) => Vec::new(),
            Op::MatVec(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Slice(a, _)
            | Op::Pick(a, _)
            | Op::LogSoftmax(a)
            | Op::LogSumExp(a)
            | Op::Neg(a) => vec![*a],
            Op::Concat(xs) | Op::Sum(xs) => xs.clone(),
        }
    }
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Value>,
    first_non_finite: Option<usize>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            first_non_finite: None,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Value {
        debug_assert_eq!(rows * cols, value.len());
        if self.first_non_finite.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        Value(self.nodes.len() - 1)
    }

    fn node(&self, v: Value) -> &Node {
        &self.nodes[v.0]
    }

    /// Value of a node without checking for non-finite ancestors.
    pub fn value(&self, v: Value) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Value) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn dim(&self, v: Value) -> usize {
        self.node(v).value.len()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Value) -> f64 {
        self.node(v).value[0]
    }

    /// Evaluated value of `v`, failing if any node it depends on is not finite.
    pub fn forward(&self, v: Value) -> Result<&[f64]> {
        if let Some(first) = self.first_non_finite {
            if first <= v.0 {
                let mut reach = vec![false; v.0 + 1];
                reach[v.0] = true;
                for i in (0..=v.0).rev() {
                    if !reach[i] {
                        continue;
                    }
                    let node = &self.nodes[i];
                    for p in node.op.parents() {
                        reach[p.0] = true;
                    }
                }
                if let Some(i) = (0..=v.0)
                    .find(|&i| reach[i] && self.nodes[i].value.iter().any(|x| !x.is_finite()))
                {
                    return Err(Error::NonFinite(self.nodes[i].op.name()));
                }
            }
        }
        Ok(self.value(v))
    }

    pub fn input(&mut self, data: Vec<f64>) -> Value {
        let n = data.len();
        self.push(Op::Input, n, 1, data)
    }

    pub fn matrix_input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Value {
        assert_eq!(rows * cols, data.len());
        self.push(Op::Input, rows, cols, data)
    }

    pub fn scalar_input(&mut self, x: f64) -> Value {
        self.input(vec![x])
    }

    /// Node for a whole parameter tensor, created once per graph.
    pub fn param(&mut self, id: ParamId) -> Value {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let t = self.params.get(id);
        let v = self.push(Op::Param(id), t.rows, t.cols, t.data.clone());
        self.param_nodes.insert(id, v);
        v
    }

    /// Row `row` of a parameter matrix, as a column vector.
    pub fn lookup(&mut self, id: ParamId, row: usize) -> Value {
        let t = self.params.get(id);
        let data = t.row(row).to_vec();
        self.push(Op::Lookup(id, row), t.cols, 1, data)
    }

    pub fn matvec(&mut self, a: Value, x: Value) -> Result<Value> {
        let (r, c) = self.shape(a);
        if self.shape(x) != (c, 1) {
            return Err(Error::Shape {
                op: "matvec",
                detail: format!("{}x{} times {:?}", r, c, self.shape(x)),
            });
        }
        let av = &self.node(a).value;
        let xv = &self.node(x).value;
        let out = (0..r)
            .map(|i| {
                av[i * c..(i + 1) * c]
                    .iter()
                    .zip(xv)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect();
        Ok(self.push(Op::MatVec(a, x), r, 1, out))
    }

    fn same_shape(&self, op: &'static str, a: Value, b: Value) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let (r, c) = self.shape(a);
        Ok(self.push(Op::Add(a, b), r, c, out))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = self.shape(a);
        Ok(self.push(Op::Mul(a, b), r, c, out))
    }

    /// `bias + sum_i weights_i * inputs_i`.
    pub fn affine(&mut self, bias: Value, terms: &[(Value, Value)]) -> Result<Value> {
        let mut acc = bias;
        for &(w, x) in terms {
            let wx = self.matvec(w, x)?;
            acc = self.add(acc, wx)?;
        }
        Ok(acc)
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Tanh(a), r, c, out)
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Sigmoid(a), r, c, out)
    }

    pub fn neg(&mut self, a: Value) -> Value {
        let out = self.value(a).iter().map(|x| -x).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Neg(a), r, c, out)
    }

    pub fn concat(&mut self, parts: &[Value]) -> Result<Value> {
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).1 != 1 {
                return Err(Error::Shape {
                    op: "concat",
                    detail: format!("part of shape {:?} is not a vector", self.shape(p)),
                });
            }
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        Ok(self.push(Op::Concat(parts.to_vec()), n, 1, out))
    }

    /// Elements `start..start + len` of a vector.
    pub fn slice(&mut self, a: Value, start: usize, len: usize) -> Result<Value> {
        if start + len > self.dim(a) || self.shape(a).1 != 1 {
            return Err(Error::Shape {
                op: "slice",
                detail: format!("{}..{} of {:?}", start, start + len, self.shape(a)),
            });
        }
        let out = self.value(a)[start..start + len].to_vec();
        Ok(self.push(Op::Slice(a, start), len, 1, out))
    }

    /// Elements of a vector at `indices`, in the given order.
    pub fn pick(&mut self, a: Value, indices: &[usize]) -> Result<Value> {
        let n = self.dim(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Shape {
                op: "pick",
                detail: format!("index {} of {} elements", bad, n),
            });
        }
        let v = self.value(a);
        let out: Vec<f64> = indices.iter().map(|&i| v[i]).collect();
        Ok(self.push(Op::Pick(a, indices.to_vec()), indices.len(), 1, out))
    }

    pub fn log_softmax(&mut self, a: Value) -> Result<Value> {
        if self.dim(a) == 0 {
            return Err(Error::EmptyActionSet);
        }
        let lse = log_sum_exp(self.value(a));
        let out = self.value(a).iter().map(|x| x - lse).collect();
        let (r, c) = self.shape(a);
        Ok(self.push(Op::LogSoftmax(a), r, c, out))
    }

    pub fn log_sum_exp(&mut self, a: Value) -> Result<Value> {
        if self.dim(a) == 0 {
            return Err(Error::EmptyActionSet);
        }
        let lse = log_sum_exp(self.value(a));
        Ok(self.push(Op::LogSumExp(a), 1, 1, vec![lse]))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[Value]) -> Result<Value> {
        let first = *parts.first().ok_or(Error::Shape {
            op: "sum",
            detail: "no operands".into(),
        })?;
        let mut out = vec![0.0; self.dim(first)];
        for &p in parts {
            self.same_shape("sum", first, p)?;
            for (o, x) in out.iter_mut().zip(self.value(p)) {
                *o += x;
            }
        }
        let (r, c) = self.shape(first);
        Ok(self.push(Op::Sum(parts.to_vec()), r, c, out))
    }

    /// Back-propagate from a scalar `loss`, adding parameter gradients to `grads`.
    pub fn backward(&self, loss: Value, grads: &mut Gradients) -> Result<()> {
        let (rows, cols) = self.shape(loss);
        if rows * cols != 1 {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        self.forward(loss)?;

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Value, len: usize) -> &mut [f64] {
            adj[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    if self.params.is_trainable(*id) {
                        for (t, x) in grads.get_mut(*id).iter_mut().zip(&g) {
                            *t += x;
                        }
                    }
                }
                Op::Lookup(id, row) => {
                    if self.params.is_trainable(*id) {
                        let cols = self.params.get(*id).cols;
                        let dst = &mut grads.get_mut(*id)[row * cols..(row + 1) * cols];
                        for (t, x) in dst.iter_mut().zip(&g) {
                            *t += x;
                        }
                    }
                }
                Op::MatVec(a, x) => {
                    let (r, c) = self.shape(*a);
                    let av = self.value(*a);
                    let xv = self.value(*x);
                    {
                        let ga = acc(&mut adj, *a, r * c);
                        for (row, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            for (t, xj) in ga[row * c..(row + 1) * c].iter_mut().zip(xv) {
                                *t += gi * xj;
                            }
                        }
                    }
                    let gx = acc(&mut adj, *x, c);
                    for (row, gi) in g.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        for (t, w) in gx.iter_mut().zip(&av[row * c..(row + 1) * c]) {
                            *t += gi * w;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        for (t, x) in acc(&mut adj, v, g.len()).iter_mut().zip(&g) {
                            *t += x;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    for (t, (x, y)) in acc(&mut adj, *a, g.len()).iter_mut().zip(g.iter().zip(bv)) {
                        *t += x * y;
                    }
                    for (t, (x, y)) in acc(&mut adj, *b, g.len()).iter_mut().zip(g.iter().zip(av)) {
                        *t += x * y;
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for ((t, x), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *t += x * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for ((t, x), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *t += x * y * (1.0 - y);
                    }
                }
                Op::Neg(a) => {
                    for (t, x) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *t -= x;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.dim(p);
                        for (t, x) in acc(&mut adj, p, n).iter_mut().zip(&g[offset..offset + n]) {
                            *t += x;
                        }
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.dim(*a);
                    let ga = acc(&mut adj, *a, n);
                    for (t, x) in ga[*start..*start + g.len()].iter_mut().zip(&g) {
                        *t += x;
                    }
                }
                Op::Pick(a, indices) => {
                    let n = self.dim(*a);
                    let ga = acc(&mut adj, *a, n);
                    for (&k, x) in indices.iter().zip(&g) {
                        ga[k] += x;
                    }
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.iter().sum();
                    let ga = acc(&mut adj, *a, g.len());
                    for ((t, x), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *t += x - y.exp() * total;
                    }
                }
                Op::LogSumExp(a) => {
                    let lse = node.value[0];
                    let av = self.value(*a);
                    let ga = acc(&mut adj, *a, av.len());
                    for (t, x) in ga.iter_mut().zip(av) {
                        *t += g[0] * (x - lse).exp();
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        for (t, x) in acc(&mut adj, p, g.len()).iter_mut().zip(&g) {
                            *t += x;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(data: &[(usize, usize, Vec<f64>)]) -> ParamStore {
        let mut s = ParamStore::default();
        for (i, (r, c, d)) in data.iter().enumerate() {
            s.add(
                format!("p{}", i),
                Tensor {
                    rows: *r,
                    cols: *c,
                    data: d.clone(),
                },
                true,
            );
        }
        s
    }

    #[test]
    fn constants_and_sums() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let a = g.scalar_input(1.5);
        assert_eq!(g.forward(a).unwrap(), &[1.5]);
        let b = g.scalar_input(2.5);
        let s = g.add(a, b).unwrap();
        assert_eq!(g.forward(s).unwrap(), &[4.0]);
    }

    #[test]
    fn affine_tanh_by_hand() {
        let store = store_with(&[(2, 2, vec![0.5, -1.0, 0.25, 2.0]), (2, 1, vec![0.1, -0.2])]);
        let mut g = Graph::new(&store);
        let w = g.param(0);
        let b = g.param(1);
        let x = g.input(vec![2.0, 0.5]);
        let y = g.affine(b, &[(w, x)]).unwrap();
        let y = g.tanh(y);
        let expect = [
            (0.5f64 * 2.0 - 1.0 * 0.5 + 0.1).tanh(),
            (0.25f64 * 2.0 + 2.0 * 0.5 - 0.2).tanh(),
        ];
        for (got, want) in g.forward(y).unwrap().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn product_rule() {
        let store = store_with(&[(1, 1, vec![3.0]), (1, 1, vec![2.0])]);
        let mut g = Graph::new(&store);
        let x = g.param(0);
        let y = g.param(1);
        let p = g.mul(x, y).unwrap();
        let mut grads = Gradients::zeros_like(&store);
        g.backward(p, &mut grads).unwrap();
        assert_eq!(grads.get(0), &[2.0]);
        assert_eq!(grads.get(1), &[3.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let scores = vec![0.3, -1.2, 2.0, 0.7];
        let store = store_with(&[(4, 1, scores.clone())]);
        let mut g = Graph::new(&store);
        let s = g.param(0);
        let lp = g.log_softmax(s).unwrap();
        let target = g.pick(lp, &[2]).unwrap();
        let loss = g.neg(target);
        let mut grads = Gradients::zeros_like(&store);
        g.backward(loss, &mut grads).unwrap();
        let z: f64 = scores.iter().map(|x| x.exp()).sum();
        for (i, s) in scores.iter().enumerate() {
            let p = s.exp() / z;
            let expect = p - if i == 2 { 1.0 } else { 0.0 };
            assert!((grads.get(0)[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let v = g.input(vec![1.0, 2.0]);
        let mut grads = Gradients::zeros_like(&store);
        assert!(matches!(
            g.backward(v, &mut grads),
            Err(Error::NonScalarLoss { rows: 2, cols: 1 })
        ));
    }

    #[test]
    fn non_finite_is_reported_with_node_kind() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let big = g.input(vec![1e308, 1e308]);
        let ok = g.input(vec![1.0]);
        let s = g.add(big, big).unwrap();
        let t = g.tanh(s);
        assert!(matches!(g.forward(t), Err(Error::NonFinite("add"))));
        assert!(g.forward(ok).is_ok());
    }

    #[test]
    fn shape_errors() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let a = g.matrix_input(2, 3, vec![0.0; 6]);
        let x = g.input(vec![1.0, 2.0]);
        assert!(g.matvec(a, x).is_err());
        assert!(g.add(a, x).is_err());
        assert!(g.slice(x, 1, 2).is_err());
        assert!(g.pick(x, &[2]).is_err());
    }
}
