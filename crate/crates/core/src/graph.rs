//! Static compute graph with reverse-mode automatic differentiation.
//!
//! The op catalogue is the minimal set needed for a U-Net-style
//! encoder-decoder: 2D convolution (stride 1, zero "same" padding), ReLU,
//! sigmoid, 2x2 max-pool, 2x nearest-neighbor upsample, channel
//! concatenation, elementwise add/multiply, full reductions, and a focal
//! loss head. Nodes are appended in topological order by construction:
//! every builder takes already-existing node ids.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub type NodeId = usize;

/// Operation kinds. `Input` and `Param` are leaves; everything else
/// references earlier nodes.
#[derive(Clone, Debug)]
pub enum Op {
    Input,
    Param,
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    MaxPool2(NodeId),
    Upsample2(NodeId),
    ConcatC(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MaxReduce(NodeId),
    /// Masked-mean focal loss over `pred`; `target` and `mask` are treated
    /// as constants (no gradient flows into them).
    FocalLoss {
        pred: NodeId,
        target: NodeId,
        mask: NodeId,
        gamma: f64,
        alpha: f64,
    },
}

/// Clamp bound keeping log() finite inside the focal loss.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    shapes: Vec<Shape>,
    inputs: Vec<NodeId>,
    params: Vec<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn shape(&self, node: NodeId) -> Shape {
        self.shapes[node]
    }

    pub fn input_ids(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn param_ids(&self) -> &[NodeId] {
        &self.params
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        self.ops.push(op);
        self.shapes.push(shape);
        self.ops.len() - 1
    }

    fn check_node(&self, node: NodeId) -> Result<()> {
        if node >= self.ops.len() {
            return Err(Error::ShapeMismatch {
                node,
                msg: "references a node that does not exist yet".into(),
            });
        }
        Ok(())
    }

    pub fn input(&mut self, shape: Shape) -> NodeId {
        let id = self.push(Op::Input, shape);
        self.inputs.push(id);
        id
    }

    pub fn param(&mut self, shape: Shape) -> NodeId {
        let id = self.push(Op::Param, shape);
        self.params.push(id);
        id
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        self.check_node(weight)?;
        self.check_node(bias)?;
        let si = self.shapes[input];
        let sw = self.shapes[weight];
        let sb = self.shapes[bias];
        let next = self.ops.len();
        if sw.c != si.c {
            return Err(Error::ShapeMismatch {
                node: next,
                msg: format!("conv weight channels {} vs input channels {}", sw.c, si.c),
            });
        }
        if sw.h != sw.w || sw.h % 2 == 0 {
            return Err(Error::ShapeMismatch {
                node: next,
                msg: format!("conv kernel must be odd square, got {}x{}", sw.h, sw.w),
            });
        }
        if sb.n != 1 || sb.c != sw.n || sb.h != 1 || sb.w != 1 {
            return Err(Error::ShapeMismatch {
                node: next,
                msg: format!("conv bias shape {sb} does not match {} output channels", sw.n),
            });
        }
        let out = Shape::new(si.n, sw.n, si.h, si.w);
        Ok(self.push(Op::Conv2d { input, weight, bias }, out))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        let s = self.shapes[input];
        Ok(self.push(Op::Relu(input), s))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        let s = self.shapes[input];
        Ok(self.push(Op::Sigmoid(input), s))
    }

    pub fn max_pool2(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        let s = self.shapes[input];
        let next = self.ops.len();
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(Error::ShapeMismatch {
                node: next,
                msg: format!("max-pool needs even spatial dims, got {s}"),
            });
        }
        let out = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
        Ok(self.push(Op::MaxPool2(input), out))
    }

    pub fn upsample2(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        let s = self.shapes[input];
        let out = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
        Ok(self.push(Op::Upsample2(input), out))
    }

    pub fn concat_c(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_node(a)?;
        self.check_node(b)?;
        let sa = self.shapes[a];
        let sb = self.shapes[b];
        let next = self.ops.len();
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::ShapeMismatch {
                node: next,
                msg: format!("concat operands {sa} vs {sb}"),
            });
        }
        let out = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        Ok(self.push(Op::ConcatC(a, b), out))
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, make: fn(NodeId, NodeId) -> Op) -> Result<NodeId> {
        self.check_node(a)?;
        self.check_node(b)?;
        let sa = self.shapes[a];
        let sb = self.shapes[b];
        let next = self.ops.len();
        if sa != sb {
            return Err(Error::ShapeMismatch {
                node: next,
                msg: format!("elementwise operands {sa} vs {sb}"),
            });
        }
        Ok(self.push(make(a, b), sa))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, Op::Add)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, Op::Mul)
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        Ok(self.push(Op::Sum(input), Shape::scalar()))
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        Ok(self.push(Op::Mean(input), Shape::scalar()))
    }

    pub fn max_reduce(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        Ok(self.push(Op::MaxReduce(input), Shape::scalar()))
    }

    pub fn focal_loss(
        &mut self,
        pred: NodeId,
        target: NodeId,
        mask: NodeId,
        gamma: f64,
        alpha: f64,
    ) -> Result<NodeId> {
        self.check_node(pred)?;
        self.check_node(target)?;
        self.check_node(mask)?;
        let sp = self.shapes[pred];
        let next = self.ops.len();
        if self.shapes[target] != sp || self.shapes[mask] != sp {
            return Err(Error::ShapeMismatch {
                node: next,
                msg: format!(
                    "focal loss operands: pred {sp}, target {}, mask {}",
                    self.shapes[target], self.shapes[mask]
                ),
            });
        }
        if gamma < 0.0 || !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!(
                "focal loss needs gamma >= 0 and alpha in [0,1], got gamma={gamma}, alpha={alpha}"
            )));
        }
        Ok(self.push(Op::FocalLoss { pred, target, mask, gamma, alpha }, Shape::scalar()))
    }

    /// Run the graph forward. `inputs` and `params` are given in declaration
    /// order. Returns the materialized value of every node.
    pub fn forward(&self, params: &[Tensor], inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        if params.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} params, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.ops.len());
        let mut next_input = 0usize;
        let mut next_param = 0usize;
        for (id, op) in self.ops.iter().enumerate() {
            let out = match op {
                Op::Input => {
                    let t = &inputs[next_input];
                    next_input += 1;
                    if t.shape() != self.shapes[id] {
                        return Err(Error::ShapeMismatch {
                            node: id,
                            msg: format!("bound input {} vs declared {}", t.shape(), self.shapes[id]),
                        });
                    }
                    if !t.is_finite() {
                        return Err(Error::NonFinite(format!("input node {id}")));
                    }
                    t.clone()
                }
                Op::Param => {
                    let t = &params[next_param];
                    next_param += 1;
                    if t.shape() != self.shapes[id] {
                        return Err(Error::ShapeMismatch {
                            node: id,
                            msg: format!("bound param {} vs declared {}", t.shape(), self.shapes[id]),
                        });
                    }
                    t.clone()
                }
                Op::Conv2d { input, weight, bias } => {
                    conv2d_forward(&values[*input], &values[*weight], &values[*bias])
                }
                Op::Relu(a) => {
                    let mut t = values[*a].clone();
                    for v in t.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    t
                }
                Op::Sigmoid(a) => {
                    let mut t = values[*a].clone();
                    for v in t.data_mut() {
                        *v = sigmoid(*v);
                    }
                    t
                }
                Op::MaxPool2(a) => max_pool2_forward(&values[*a]),
                Op::Upsample2(a) => upsample2_forward(&values[*a]),
                Op::ConcatC(a, b) => concat_c_forward(&values[*a], &values[*b]),
                Op::Add(a, b) => {
                    let mut t = values[*a].clone();
                    for (v, u) in t.data_mut().iter_mut().zip(values[*b].data()) {
                        *v += u;
                    }
                    t
                }
                Op::Mul(a, b) => {
                    let mut t = values[*a].clone();
                    for (v, u) in t.data_mut().iter_mut().zip(values[*b].data()) {
                        *v *= u;
                    }
                    t
                }
                Op::Sum(a) => Tensor::scalar(values[*a].data().iter().sum()),
                Op::Mean(a) => {
                    let d = values[*a].data();
                    Tensor::scalar(d.iter().sum::<f64>() / d.len() as f64)
                }
                Op::MaxReduce(a) => Tensor::scalar(values[*a].max_value()),
                Op::FocalLoss { pred, target, mask, gamma, alpha } => {
                    focal_loss_forward(&values[*pred], &values[*target], &values[*mask], *gamma, *alpha)?
                }
            };
            values.push(out);
        }
        Ok(values)
    }

    /// Reverse pass: gradient of the scalar `loss` node with respect to every
    /// node. Untouched nodes get zero gradients.
    pub fn backward(&self, values: &[Tensor], loss: NodeId) -> Result<Gradients> {
        if values.len() != self.ops.len() {
            return Err(Error::StaleValues(format!(
                "{} values for {} nodes; run forward first",
                values.len(),
                self.ops.len()
            )));
        }
        if self.shapes[loss].numel() != 1 {
            return Err(Error::LossNotScalar(loss));
        }
        let mut grads: Vec<Tensor> = self.shapes.iter().map(|&s| Tensor::zeros(s)).collect();
        grads[loss].data_mut()[0] = 1.0;

        for id in (0..=loss).rev() {
            if grads[id].data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let g_out = grads[id].clone();
            match &self.ops[id] {
                Op::Input | Op::Param => {}
                Op::Conv2d { input, weight, bias } => {
                    let (gi, gw, gb) =
                        conv2d_backward(&values[*input], &values[*weight], &g_out);
                    accumulate(&mut grads[*input], &gi);
                    accumulate(&mut grads[*weight], &gw);
                    accumulate(&mut grads[*bias], &gb);
                }
                Op::Relu(a) => {
                    let x = values[*a].data();
                    let ga = grads[*a].data_mut();
                    for i in 0..x.len() {
                        if x[i] > 0.0 {
                            ga[i] += g_out.data()[i];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = values[id].data();
                    let ga = grads[*a].data_mut();
                    for i in 0..y.len() {
                        ga[i] += g_out.data()[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::MaxPool2(a) => {
                    let gi = max_pool2_backward(&values[*a], &g_out);
                    accumulate(&mut grads[*a], &gi);
                }
                Op::Upsample2(a) => {
                    let gi = upsample2_backward(&values[*a].shape(), &g_out);
                    accumulate(&mut grads[*a], &gi);
                }
                Op::ConcatC(a, b) => {
                    let (ga, gb) = concat_c_backward(
                        values[*a].shape(),
                        values[*b].shape(),
                        &g_out,
                    );
                    accumulate(&mut grads[*a], &ga);
                    accumulate(&mut grads[*b], &gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], &g_out);
                    accumulate(&mut grads[*b], &g_out);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (values[*a].data().to_vec(), values[*b].data().to_vec());
                    {
                        let ga = grads[*a].data_mut();
                        for i in 0..vb.len() {
                            ga[i] += g_out.data()[i] * vb[i];
                        }
                    }
                    let gb = grads[*b].data_mut();
                    for i in 0..va.len() {
                        gb[i] += g_out.data()[i] * va[i];
                    }
                }
                Op::Sum(a) => {
                    let g = g_out.item();
                    for v in grads[*a].data_mut() {
                        *v += g;
                    }
                }
                Op::Mean(a) => {
                    let n = values[*a].data().len() as f64;
                    let g = g_out.item() / n;
                    for v in grads[*a].data_mut() {
                        *v += g;
                    }
                }
                Op::MaxReduce(a) => {
                    // Subgradient: all mass to the first argmax in scan order.
                    let d = values[*a].data();
                    let mut best = 0usize;
                    for i in 1..d.len() {
                        if d[i] > d[best] {
                            best = i;
                        }
                    }
                    grads[*a].data_mut()[best] += g_out.item();
                }
                Op::FocalLoss { pred, target, mask, gamma, alpha } => {
                    let gp = focal_loss_backward(
                        &values[*pred],
                        &values[*target],
                        &values[*mask],
                        *gamma,
                        *alpha,
                        g_out.item(),
                    );
                    accumulate(&mut grads[*pred], &gp);
                }
            }
        }
        Ok(Gradients { nodes: grads })
    }

    /// Maximum relative error between analytic and central-finite-difference
    /// gradients over all parameter elements. Non-finite comparisons report
    /// as +inf.
    pub fn finite_diff_check(
        &self,
        params: &[Tensor],
        inputs: &[Tensor],
        loss: NodeId,
        eps: f64,
    ) -> Result<f64> {
        let values = self.forward(params, inputs)?;
        let grads = self.backward(&values, loss)?;
        let analytic = grads.params(self);

        let mut params = params.to_vec();
        let mut max_err = 0.0f64;
        for pi in 0..params.len() {
            for ei in 0..params[pi].data().len() {
                let orig = params[pi].data()[ei];
                params[pi].data_mut()[ei] = orig + eps;
                let lp = self.forward(&params, inputs)?[loss].item();
                params[pi].data_mut()[ei] = orig - eps;
                let lm = self.forward(&params, inputs)?[loss].item();
                params[pi].data_mut()[ei] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                let a = analytic[pi].data()[ei];
                let err = if a.is_finite() && numeric.is_finite() {
                    (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12)
                } else {
                    f64::INFINITY
                };
                max_err = max_err.max(err);
            }
        }
        Ok(max_err)
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Tensor>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> &Tensor {
        &self.nodes[id]
    }

    /// Gradients of the parameters, in declaration order.
    pub fn params(&self, graph: &Graph) -> Vec<Tensor> {
        graph.param_ids().iter().map(|&id| self.nodes[id].clone()).collect()
    }
}

fn accumulate(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let si = input.shape();
    let sw = weight.shape();
    let k = sw.h;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(Shape::new(si.n, sw.n, si.h, si.w));
    for n in 0..si.n {
        for oc in 0..sw.n {
            let b = bias.data()[oc];
            for oy in 0..si.h {
                for ox in 0..si.w {
                    let mut acc = b;
                    for ic in 0..si.c {
                        for ky in 0..k {
                            let iy = oy as isize + ky as isize - pad;
                            if iy < 0 || iy >= si.h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize + kx as isize - pad;
                                if ix < 0 || ix >= si.w as isize {
                                    continue;
                                }
                                acc += input.at(n, ic, iy as usize, ix as usize)
                                    * weight.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    out.set(n, oc, oy, ox, acc);
                }
            }
        }
    }
    out
}

fn conv2d_backward(input: &Tensor, weight: &Tensor, g_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let si = input.shape();
    let sw = weight.shape();
    let k = sw.h;
    let pad = (k / 2) as isize;
    let mut g_in = Tensor::zeros(si);
    let mut g_w = Tensor::zeros(sw);
    let mut g_b = Tensor::zeros(Shape::new(1, sw.n, 1, 1));
    for n in 0..si.n {
        for oc in 0..sw.n {
            for oy in 0..si.h {
                for ox in 0..si.w {
                    let g = g_out.at(n, oc, oy, ox);
                    if g == 0.0 {
                        continue;
                    }
                    g_b.data_mut()[oc] += g;
                    for ic in 0..si.c {
                        for ky in 0..k {
                            let iy = oy as isize + ky as isize - pad;
                            if iy < 0 || iy >= si.h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize + kx as isize - pad;
                                if ix < 0 || ix >= si.w as isize {
                                    continue;
                                }
                                let iv = input.at(n, ic, iy as usize, ix as usize);
                                let widx = weight.idx(oc, ic, ky, kx);
                                g_w.data_mut()[widx] += g * iv;
                                let iidx = input.idx(n, ic, iy as usize, ix as usize);
                                g_in.data_mut()[iidx] += g * weight.data()[widx];
                            }
                        }
                    }
                }
            }
        }
    }
    (g_in, g_w, g_b)
}

fn max_pool2_forward(input: &Tensor) -> Tensor {
    let s = input.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.h / 2, s.w / 2));
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..s.h / 2 {
                for ox in 0..s.w / 2 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(input.at(n, c, oy * 2 + dy, ox * 2 + dx));
                        }
                    }
                    out.set(n, c, oy, ox, m);
                }
            }
        }
    }
    out
}

fn max_pool2_backward(input: &Tensor, g_out: &Tensor) -> Tensor {
    let s = input.shape();
    let mut g_in = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..s.h / 2 {
                for ox in 0..s.w / 2 {
                    // First max in scan order wins ties, matching forward.
                    let (mut by, mut bx) = (oy * 2, ox * 2);
                    let mut m = input.at(n, c, by, bx);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = input.at(n, c, oy * 2 + dy, ox * 2 + dx);
                            if v > m {
                                m = v;
                                by = oy * 2 + dy;
                                bx = ox * 2 + dx;
                            }
                        }
                    }
                    let idx = g_in.idx(n, c, by, bx);
                    g_in.data_mut()[idx] += g_out.at(n, c, oy, ox);
                }
            }
        }
    }
    g_in
}

fn upsample2_forward(input: &Tensor) -> Tensor {
    let s = input.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.h * 2, s.w * 2));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h * 2 {
                for x in 0..s.w * 2 {
                    out.set(n, c, y, x, input.at(n, c, y / 2, x / 2));
                }
            }
        }
    }
    out
}

fn upsample2_backward(input_shape: &Shape, g_out: &Tensor) -> Tensor {
    let s = *input_shape;
    let mut g_in = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h * 2 {
                for x in 0..s.w * 2 {
                    let idx = g_in.idx(n, c, y / 2, x / 2);
                    g_in.data_mut()[idx] += g_out.at(n, c, y, x);
                }
            }
        }
    }
    g_in
}

fn concat_c_forward(a: &Tensor, b: &Tensor) -> Tensor {
    let sa = a.shape();
    let sb = b.shape();
    let mut out = Tensor::zeros(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w));
    for n in 0..sa.n {
        for c in 0..sa.c {
            for y in 0..sa.h {
                for x in 0..sa.w {
                    out.set(n, c, y, x, a.at(n, c, y, x));
                }
            }
        }
        for c in 0..sb.c {
            for y in 0..sb.h {
                for x in 0..sb.w {
                    out.set(n, sa.c + c, y, x, b.at(n, c, y, x));
                }
            }
        }
    }
    out
}

fn concat_c_backward(sa: Shape, sb: Shape, g_out: &Tensor) -> (Tensor, Tensor) {
    let mut ga = Tensor::zeros(sa);
    let mut gb = Tensor::zeros(sb);
    for n in 0..sa.n {
        for c in 0..sa.c {
            for y in 0..sa.h {
                for x in 0..sa.w {
                    ga.set(n, c, y, x, g_out.at(n, c, y, x));
                }
            }
        }
        for c in 0..sb.c {
            for y in 0..sb.h {
                for x in 0..sb.w {
                    gb.set(n, c, y, x, g_out.at(n, sa.c + c, y, x));
                }
            }
        }
    }
    (ga, gb)
}

/// Pointwise focal term at clamped probability `p` for target `t`:
/// -a*t*(1-p)^g*ln(p) - (1-a)*(1-t)*p^g*ln(1-p).
pub fn focal_term(p: f64, t: f64, gamma: f64, alpha: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -alpha * t * (1.0 - p).powf(gamma) * p.ln()
        - (1.0 - alpha) * (1.0 - t) * p.powf(gamma) * (1.0 - p).ln()
}

fn focal_loss_forward(
    pred: &Tensor,
    target: &Tensor,
    mask: &Tensor,
    gamma: f64,
    alpha: f64,
) -> Result<Tensor> {
    let mut acc = 0.0;
    let mut count = 0.0;
    for i in 0..pred.data().len() {
        let m = mask.data()[i];
        if m == 0.0 {
            continue;
        }
        acc += m * focal_term(pred.data()[i], target.data()[i], gamma, alpha);
        count += m;
    }
    if count == 0.0 {
        return Err(Error::EmptyMask);
    }
    Ok(Tensor::scalar(acc / count))
}

fn focal_loss_backward(
    pred: &Tensor,
    target: &Tensor,
    mask: &Tensor,
    gamma: f64,
    alpha: f64,
    g: f64,
) -> Tensor {
    let count: f64 = mask.data().iter().sum();
    let mut g_pred = Tensor::zeros(pred.shape());
    for i in 0..pred.data().len() {
        let m = mask.data()[i];
        if m == 0.0 {
            continue;
        }
        let p_raw = pred.data()[i];
        // Zero subgradient outside the clamp interval.
        if p_raw <= PROB_EPS || p_raw >= 1.0 - PROB_EPS {
            continue;
        }
        let p = p_raw;
        let t = target.data()[i];
        let d_pos = if t != 0.0 {
            let q = 1.0 - p;
            let corr = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * p.ln() };
            -alpha * t * (q.powf(gamma) / p - corr)
        } else {
            0.0
        };
        let d_neg = if t != 1.0 {
            let corr = if gamma == 0.0 { 0.0 } else { gamma * p.powf(gamma - 1.0) * (1.0 - p).ln() };
            -(1.0 - alpha) * (1.0 - t) * (corr - p.powf(gamma) / (1.0 - p))
        } else {
            0.0
        };
        g_pred.data_mut()[i] = g * m * (d_pos + d_neg) / count;
    }
    g_pred
}
