//! Scalar reverse-mode differentiation over an explicit node arena.
//!
//! Graphs are append-only: operands must already exist when an op node is
//! pushed, so the arena order is a topological order. Values are computed
//! eagerly at construction; [`DiffGraph::forward`] re-evaluates the whole
//! graph (used after rebinding inputs) with domain checks, and
//! [`DiffGraph::backward`] propagates adjoints in reverse arena order.
//!
//! Stated derivative conventions:
//! - `relu'(0) = 0`
//! - `min2`/`max2` route the full adjoint to the first argument on ties
//! - `abs'(0) = 0`
//! - `sqrt'` at exactly zero produces an infinite adjoint; callers keep
//!   `sqrt` arguments positive.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Graph node handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub u32);

/// Registry key for differentiable point inputs: which voxel, which point
/// slot within the voxel, which feature channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InputKey {
    pub voxel: [i32; 3],
    pub slot: u16,
    pub channel: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum OpKind {
    Input,
    Const,
    Add,
    Mul,
    Sub,
    Div,
    Neg,
    Exp,
    Log,
    Tanh,
    Relu,
    Square,
    Sqrt,
    Min2,
    Max2,
    Abs,
}

/// Scalar computational graph with reverse-mode differentiation.
pub struct DiffGraph {
    kinds: Vec<OpKind>,
    args: Vec<[u32; 2]>,
    vals: Vec<f64>,
    /// Lazily sized by the backward pass.
    adjs: Vec<f64>,
    inputs: HashMap<InputKey, NodeId>,
    unbound: std::collections::BTreeSet<u32>,
    loss: Option<NodeId>,
}

/// Central-difference comparison for one registered input.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckEntry {
    pub key: InputKey,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Outcome of [`DiffGraph::grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    /// Keys whose relative error exceeded the tolerance.
    pub failures: Vec<InputKey>,
}

impl Default for DiffGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl DiffGraph {
    pub fn new() -> DiffGraph {
        DiffGraph {
            kinds: Vec::new(),
            args: Vec::new(),
            vals: Vec::new(),
            adjs: Vec::new(),
            inputs: HashMap::new(),
            unbound: Default::default(),
            loss: None,
        }
    }

    pub fn with_capacity(nodes: usize) -> DiffGraph {
        DiffGraph {
            kinds: Vec::with_capacity(nodes),
            args: Vec::with_capacity(nodes),
            vals: Vec::with_capacity(nodes),
            adjs: Vec::new(),
            inputs: HashMap::new(),
            unbound: Default::default(),
            loss: None,
        }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn value(&self, id: NodeId) -> f64 {
        self.vals[id.0 as usize]
    }

    pub fn adjoint(&self, id: NodeId) -> f64 {
        self.adjs.get(id.0 as usize).copied().unwrap_or(0.0)
    }

    /// Adjoints of a contiguous node range; used to read parameter gradients
    /// in bulk.
    pub fn adjoint_slice(&self, start: NodeId, len: usize) -> &[f64] {
        &self.adjs[start.0 as usize..start.0 as usize + len]
    }

    pub fn input_node(&self, key: InputKey) -> Option<NodeId> {
        self.inputs.get(&key).copied()
    }

    pub fn input_keys(&self) -> impl Iterator<Item = (&InputKey, &NodeId)> {
        self.inputs.iter()
    }

    #[inline(always)]
    fn push(&mut self, kind: OpKind, a: u32, b: u32, val: f64) -> NodeId {
        let id = self.kinds.len() as u32;
        self.kinds.push(kind);
        self.args.push([a, b]);
        self.vals.push(val);
        NodeId(id)
    }

    /// Anonymous differentiable leaf (used for detector parameters).
    pub fn leaf(&mut self, value: f64) -> NodeId {
        self.push(OpKind::Input, 0, 0, value)
    }

    /// Registered differentiable input.
    pub fn input(&mut self, key: InputKey, value: f64) -> Result<NodeId> {
        if self.inputs.contains_key(&key) {
            return Err(Error::Contract(format!("duplicate input key {key:?}")));
        }
        let id = self.push(OpKind::Input, 0, 0, value);
        self.inputs.insert(key, id);
        Ok(id)
    }

    /// Registered input with no value yet; [`DiffGraph::forward`] fails until
    /// it is bound.
    pub fn input_unbound(&mut self, key: InputKey) -> Result<NodeId> {
        let id = self.input(key, f64::NAN)?;
        self.unbound.insert(id.0);
        Ok(id)
    }

    /// Binds or rebinds an input node value. Values of downstream nodes are
    /// stale until the next forward pass.
    pub fn set_value(&mut self, id: NodeId, value: f64) -> Result<()> {
        let i = id.0 as usize;
        if self.kinds.get(i) != Some(&OpKind::Input) {
            return Err(Error::Contract(format!(
                "set_value on non-input node {}",
                id.0
            )));
        }
        self.unbound.remove(&id.0);
        self.vals[i] = value;
        Ok(())
    }

    pub fn bind(&mut self, key: InputKey, value: f64) -> Result<()> {
        let id = self
            .input_node(key)
            .ok_or_else(|| Error::Contract(format!("bind of unknown input key {key:?}")))?;
        self.set_value(id, value)
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(OpKind::Const, 0, 0, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.vals[a.0 as usize] + self.vals[b.0 as usize];
        self.push(OpKind::Add, a.0, b.0, v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.vals[a.0 as usize] * self.vals[b.0 as usize];
        self.push(OpKind::Mul, a.0, b.0, v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.vals[a.0 as usize] - self.vals[b.0 as usize];
        self.push(OpKind::Sub, a.0, b.0, v)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.vals[a.0 as usize] / self.vals[b.0 as usize];
        self.push(OpKind::Div, a.0, b.0, v)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = -self.vals[a.0 as usize];
        self.push(OpKind::Neg, a.0, 0, v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0 as usize].exp();
        self.push(OpKind::Exp, a.0, 0, v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0 as usize].ln();
        self.push(OpKind::Log, a.0, 0, v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0 as usize].tanh();
        self.push(OpKind::Tanh, a.0, 0, v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let x = self.vals[a.0 as usize];
        self.push(OpKind::Relu, a.0, 0, if x > 0.0 { x } else { 0.0 })
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let x = self.vals[a.0 as usize];
        self.push(OpKind::Square, a.0, 0, x * x)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0 as usize].sqrt();
        self.push(OpKind::Sqrt, a.0, 0, v)
    }

    pub fn min2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.vals[a.0 as usize], self.vals[b.0 as usize]);
        self.push(OpKind::Min2, a.0, b.0, if va <= vb { va } else { vb })
    }

    pub fn max2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.vals[a.0 as usize], self.vals[b.0 as usize]);
        self.push(OpKind::Max2, a.0, b.0, if va >= vb { va } else { vb })
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0 as usize].abs();
        self.push(OpKind::Abs, a.0, 0, v)
    }

    /// Marks the scalar output that forward returns and backward seeds.
    pub fn set_loss(&mut self, id: NodeId) {
        self.loss = Some(id);
    }

    pub fn loss_node(&self) -> Option<NodeId> {
        self.loss
    }

    fn loss_or_err(&self) -> Result<NodeId> {
        self.loss
            .ok_or_else(|| Error::Contract("no loss node designated".into()))
    }

    /// Re-evaluates every node in topological (arena) order with domain
    /// checks; returns the loss value.
    pub fn forward(&mut self) -> Result<f64> {
        let loss = self.loss_or_err()?;
        if let Some(node) = self.unbound.iter().next() {
            return Err(Error::Eval {
                node: *node,
                reason: "unbound input".into(),
            });
        }
        for i in 0..self.kinds.len() {
            let [a, b] = self.args[i];
            let (va, vb) = (self.vals[a as usize], self.vals[b as usize]);
            self.vals[i] = match self.kinds[i] {
                OpKind::Input | OpKind::Const => continue,
                OpKind::Add => va + vb,
                OpKind::Mul => va * vb,
                OpKind::Sub => va - vb,
                OpKind::Div => {
                    if vb == 0.0 {
                        return Err(Error::Eval {
                            node: i as u32,
                            reason: "division by zero".into(),
                        });
                    }
                    va / vb
                }
                OpKind::Neg => -va,
                OpKind::Exp => va.exp(),
                OpKind::Log => {
                    if va <= 0.0 {
                        return Err(Error::Eval {
                            node: i as u32,
                            reason: format!("log of non-positive value {va}"),
                        });
                    }
                    va.ln()
                }
                OpKind::Tanh => va.tanh(),
                OpKind::Relu => {
                    if va > 0.0 {
                        va
                    } else {
                        0.0
                    }
                }
                OpKind::Square => va * va,
                OpKind::Sqrt => {
                    if va < 0.0 {
                        return Err(Error::Eval {
                            node: i as u32,
                            reason: format!("sqrt of negative value {va}"),
                        });
                    }
                    va.sqrt()
                }
                OpKind::Min2 => {
                    if va <= vb {
                        va
                    } else {
                        vb
                    }
                }
                OpKind::Max2 => {
                    if va >= vb {
                        va
                    } else {
                        vb
                    }
                }
                OpKind::Abs => va.abs(),
            };
        }
        Ok(self.vals[loss.0 as usize])
    }

    /// Forward pass without domain checks; NaN/inf propagate.
    pub fn forward_unchecked(&mut self) -> f64 {
        for i in 0..self.kinds.len() {
            let [a, b] = self.args[i];
            let (va, vb) = (self.vals[a as usize], self.vals[b as usize]);
            self.vals[i] = match self.kinds[i] {
                OpKind::Input | OpKind::Const => continue,
                OpKind::Add => va + vb,
                OpKind::Mul => va * vb,
                OpKind::Sub => va - vb,
                OpKind::Div => va / vb,
                OpKind::Neg => -va,
                OpKind::Exp => va.exp(),
                OpKind::Log => va.ln(),
                OpKind::Tanh => va.tanh(),
                OpKind::Relu => {
                    if va > 0.0 {
                        va
                    } else {
                        0.0
                    }
                }
                OpKind::Square => va * va,
                OpKind::Sqrt => va.sqrt(),
                OpKind::Min2 => {
                    if va <= vb {
                        va
                    } else {
                        vb
                    }
                }
                OpKind::Max2 => {
                    if va >= vb {
                        va
                    } else {
                        vb
                    }
                }
                OpKind::Abs => va.abs(),
            };
        }
        self.loss.map_or(f64::NAN, |l| self.vals[l.0 as usize])
    }

    /// Propagates adjoints from the loss node down to every input and
    /// returns the gradient map over registered inputs.
    pub fn backward(&mut self) -> Result<HashMap<InputKey, f64>> {
        self.loss_or_err()?;
        // Same domain conditions as forward; stale/invalid values would
        // silently corrupt adjoints otherwise.
        for i in 0..self.kinds.len() {
            let [a, _] = self.args[i];
            let va = self.vals[a as usize];
            match self.kinds[i] {
                OpKind::Div => {
                    let vb = self.vals[self.args[i][1] as usize];
                    if vb == 0.0 {
                        return Err(Error::Eval {
                            node: i as u32,
                            reason: "division by zero".into(),
                        });
                    }
                }
                OpKind::Log if va <= 0.0 => {
                    return Err(Error::Eval {
                        node: i as u32,
                        reason: format!("log of non-positive value {va}"),
                    });
                }
                OpKind::Sqrt if va < 0.0 => {
                    return Err(Error::Eval {
                        node: i as u32,
                        reason: format!("sqrt of negative value {va}"),
                    });
                }
                _ => {}
            }
        }
        self.backward_unchecked();
        Ok(self
            .inputs
            .iter()
            .map(|(k, id)| (*k, self.adjs[id.0 as usize]))
            .collect())
    }

    /// Adjoint propagation without domain checks.
    pub fn backward_unchecked(&mut self) {
        let Some(loss) = self.loss else { return };
        self.adjs.clear();
        self.adjs.resize(self.kinds.len(), 0.0);
        self.adjs[loss.0 as usize] = 1.0;
        for i in (0..self.kinds.len()).rev() {
            let adj = self.adjs[i];
            if adj == 0.0 {
                continue;
            }
            let [a, b] = self.args[i];
            let (a, b) = (a as usize, b as usize);
            match self.kinds[i] {
                OpKind::Input | OpKind::Const => {}
                OpKind::Add => {
                    self.adjs[a] += adj;
                    self.adjs[b] += adj;
                }
                OpKind::Mul => {
                    let (va, vb) = (self.vals[a], self.vals[b]);
                    self.adjs[a] += adj * vb;
                    self.adjs[b] += adj * va;
                }
                OpKind::Sub => {
                    self.adjs[a] += adj;
                    self.adjs[b] -= adj;
                }
                OpKind::Div => {
                    let (va, vb) = (self.vals[a], self.vals[b]);
                    self.adjs[a] += adj / vb;
                    self.adjs[b] -= adj * va / (vb * vb);
                }
                OpKind::Neg => self.adjs[a] -= adj,
                OpKind::Exp => self.adjs[a] += adj * self.vals[i],
                OpKind::Log => self.adjs[a] += adj / self.vals[a],
                OpKind::Tanh => {
                    let t = self.vals[i];
                    self.adjs[a] += adj * (1.0 - t * t);
                }
                OpKind::Relu => {
                    if self.vals[a] > 0.0 {
                        self.adjs[a] += adj;
                    }
                }
                OpKind::Square => self.adjs[a] += adj * 2.0 * self.vals[a],
                OpKind::Sqrt => self.adjs[a] += adj / (2.0 * self.vals[i]),
                OpKind::Min2 => {
                    if self.vals[a] <= self.vals[b] {
                        self.adjs[a] += adj;
                    } else {
                        self.adjs[b] += adj;
                    }
                }
                OpKind::Max2 => {
                    if self.vals[a] >= self.vals[b] {
                        self.adjs[a] += adj;
                    } else {
                        self.adjs[b] += adj;
                    }
                }
                OpKind::Abs => {
                    let x = self.vals[a];
                    if x > 0.0 {
                        self.adjs[a] += adj;
                    } else if x < 0.0 {
                        self.adjs[a] -= adj;
                    }
                }
            }
        }
    }

    /// Compares analytic gradients of every registered input against central
    /// finite differences with step `h`, flagging entries whose relative
    /// error exceeds `tol`.
    ///
    /// Relative error uses a small floor so near-zero gradient pairs compare
    /// by absolute difference.
    pub fn grad_check(&mut self, h: f64, tol: f64) -> Result<GradCheckReport> {
        self.forward()?;
        let analytic = self.backward()?;
        let mut keys: Vec<InputKey> = self.inputs.keys().copied().collect();
        keys.sort_unstable();
        let mut entries = Vec::with_capacity(keys.len());
        let mut max_rel = 0.0f64;
        let mut failures = Vec::new();
        for key in keys {
            let id = self.inputs[&key];
            let x0 = self.vals[id.0 as usize];
            self.set_value(id, x0 + h)?;
            let plus = self.forward_unchecked();
            self.set_value(id, x0 - h)?;
            let minus = self.forward_unchecked();
            self.set_value(id, x0)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[&key];
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel_error > tol {
                failures.push(key);
            }
            max_rel = max_rel.max(rel_error);
            entries.push(GradCheckEntry {
                key,
                analytic: a,
                numeric,
                rel_error,
            });
        }
        // Restore downstream values.
        self.forward_unchecked();
        Ok(GradCheckReport {
            entries,
            max_rel_error: max_rel,
            failures,
        })
    }

    /// Values of every relu pre-activation in the graph; lets callers widen
    /// finite-difference tolerances near kinks.
    pub fn relu_preactivations(&self) -> Vec<f64> {
        (0..self.kinds.len())
            .filter(|&i| self.kinds[i] == OpKind::Relu)
            .map(|i| self.vals[self.args[i][0] as usize])
            .collect()
    }

    /// Graphviz DOT rendering for debugging.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph g {\n");
        for i in 0..self.kinds.len() {
            out.push_str(&format!(
                "  n{} [label=\"{:?}\\n{:.4}\"];\n",
                i, self.kinds[i], self.vals[i]
            ));
            let [a, b] = self.args[i];
            match self.kinds[i] {
                OpKind::Input | OpKind::Const => {}
                OpKind::Neg
                | OpKind::Exp
                | OpKind::Log
                | OpKind::Tanh
                | OpKind::Relu
                | OpKind::Square
                | OpKind::Sqrt
                | OpKind::Abs => out.push_str(&format!("  n{a} -> n{i};\n")),
                _ => {
                    out.push_str(&format!("  n{a} -> n{i};\n"));
                    out.push_str(&format!("  n{b} -> n{i};\n"));
                }
            }
        }
        out.push_str("}\n");
        out
    }
}
