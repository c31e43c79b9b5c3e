//! Tiny U-Net-style encoder-decoder with a sigmoid head and a focal-loss
//! training output, plus flat-binary checkpoint serialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::grid::{Grid, Mask};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    /// Encoder levels (pool steps).
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec { depth: 2, base_channels: 8, in_channels: 1, out_channels: 1 }
    }
}

/// A built network: static graph, parameter tensors, and the node ids of
/// its bound inputs and outputs.
#[derive(Clone, Debug)]
pub struct NetworkState {
    pub spec: NetworkSpec,
    pub height: usize,
    pub width: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub graph: Graph,
    pub params: Vec<Tensor>,
    pub input: NodeId,
    pub target: NodeId,
    pub mask: NodeId,
    pub pred: NodeId,
    pub loss: NodeId,
}

fn glorot_conv(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, k: usize) -> Tensor {
    let fan_in = (in_c * k * k) as f64;
    let fan_out = (out_c * k * k) as f64;
    let s = (6.0 / (fan_in + fan_out)).sqrt();
    let shape = Shape::new(out_c, in_c, k, k);
    let data = (0..shape.numel()).map(|_| rng.gen_range(-s..=s)).collect();
    Tensor::from_vec(shape, data).expect("init data matches shape")
}

/// Build the segmentation network for HxW single-channel inputs. The focal
/// head (gamma, alpha) is baked into the graph; `target` and `mask` inputs
/// feed it. Initialization is Glorot-uniform for kernels, zero for biases,
/// fully determined by `seed`.
pub fn build_network(
    spec: NetworkSpec,
    height: usize,
    width: usize,
    gamma: f64,
    alpha: f64,
    seed: u64,
) -> Result<NetworkState> {
    if spec.depth < 1 || spec.base_channels < 1 {
        return Err(Error::InvalidArgument("network needs depth >= 1 and channels >= 1".into()));
    }
    let div = 1 << spec.depth;
    if height % div != 0 || width % div != 0 {
        return Err(Error::InvalidArgument(format!(
            "input {height}x{width} not divisible by 2^depth = {div}; pad to {}x{}",
            height.next_multiple_of(div),
            width.next_multiple_of(div)
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let mut params: Vec<Tensor> = Vec::new();
    let input = g.input(Shape::new(1, spec.in_channels, height, width));
    let target = g.input(Shape::new(1, 1, height, width));
    let mask = g.input(Shape::new(1, 1, height, width));

    let conv_relu = |g: &mut Graph,
                         params: &mut Vec<Tensor>,
                         rng: &mut ChaCha8Rng,
                         x: NodeId,
                         in_c: usize,
                         out_c: usize,
                         k: usize,
                         relu: bool|
     -> Result<NodeId> {
        let w = g.param(Shape::new(out_c, in_c, k, k));
        params.push(glorot_conv(rng, out_c, in_c, k));
        let b = g.param(Shape::new(1, out_c, 1, 1));
        params.push(Tensor::zeros(Shape::new(1, out_c, 1, 1)));
        let y = g.conv2d(x, w, b)?;
        if relu {
            g.relu(y)
        } else {
            Ok(y)
        }
    };

    // Encoder
    let mut x = input;
    let mut in_c = spec.in_channels;
    let mut skips: Vec<(NodeId, usize)> = Vec::new();
    for level in 0..spec.depth {
        let ch = spec.base_channels << level;
        x = conv_relu(&mut g, &mut params, &mut rng, x, in_c, ch, 3, true)?;
        x = conv_relu(&mut g, &mut params, &mut rng, x, ch, ch, 3, true)?;
        skips.push((x, ch));
        x = g.max_pool2(x)?;
        in_c = ch;
    }

    // Bottleneck
    let bottleneck_c = spec.base_channels << spec.depth;
    x = conv_relu(&mut g, &mut params, &mut rng, x, in_c, bottleneck_c, 3, true)?;
    x = conv_relu(&mut g, &mut params, &mut rng, x, bottleneck_c, bottleneck_c, 3, true)?;
    in_c = bottleneck_c;

    // Decoder
    for (skip, skip_c) in skips.into_iter().rev() {
        x = g.upsample2(x)?;
        x = g.concat_c(skip, x)?;
        let ch = skip_c;
        x = conv_relu(&mut g, &mut params, &mut rng, x, skip_c + in_c, ch, 3, true)?;
        x = conv_relu(&mut g, &mut params, &mut rng, x, ch, ch, 3, true)?;
        in_c = ch;
    }

    // Head: 1x1 conv to a single channel, sigmoid probabilities.
    let logits = conv_relu(&mut g, &mut params, &mut rng, x, in_c, spec.out_channels, 1, false)?;
    let pred = g.sigmoid(logits)?;
    let loss = g.focal_loss(pred, target, mask, gamma, alpha)?;

    Ok(NetworkState {
        spec,
        height,
        width,
        gamma,
        alpha,
        graph: g,
        params,
        input,
        target,
        mask,
        pred,
        loss,
    })
}

impl NetworkState {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data().len()).sum()
    }

    /// Zero every parameter (test mode: the sigmoid head then emits a
    /// uniform 0.5 map).
    pub fn zero_parameters(&mut self) {
        for p in &mut self.params {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
    }

    /// Inference: prediction map for one image.
    pub fn predict(&self, image: &Grid) -> Result<Grid> {
        let values = self.forward(image, &Grid::zeros(self.height, self.width), &Mask::filled(self.height, self.width, true))?;
        Grid::from_tensor(&values[self.pred])
    }

    /// Full forward pass with bound training inputs; returns all node values.
    pub fn forward(&self, image: &Grid, label: &Grid, mask: &Mask) -> Result<Vec<Tensor>> {
        let inputs = vec![
            image.to_tensor(),
            label.to_tensor(),
            mask.to_grid().to_tensor(),
        ];
        self.graph.forward(&self.params, &inputs)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PSEG";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialize a network to the documented flat binary layout: magic,
/// version, spec fields, then parameter tensors in declaration order as
/// little-endian doubles.
pub fn save_checkpoint(net: &NetworkState, path: &std::path::Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        net.spec.depth as u32,
        net.spec.base_channels as u32,
        net.spec.in_channels as u32,
        net.spec.out_channels as u32,
        net.height as u32,
        net.width as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&net.gamma.to_le_bytes());
    buf.extend_from_slice(&net.alpha.to_le_bytes());
    buf.extend_from_slice(&(net.params.len() as u32).to_le_bytes());
    for p in &net.params {
        let s = p.shape();
        for d in [s.n as u32, s.c as u32, s.h as u32, s.w as u32] {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Rebuild a network from a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &std::path::Path) -> Result<NetworkState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let fmt_err =
        |msg: &str| Error::Format { path: path.display().to_string(), msg: msg.into() };

    struct Cursor<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Option<&'a [u8]> {
            let s = self.bytes.get(self.pos..self.pos + n)?;
            self.pos += n;
            Some(s)
        }
        fn u32(&mut self) -> Option<u32> {
            Some(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
        fn f64(&mut self) -> Option<f64> {
            Some(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
    }
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let trunc = || fmt_err("truncated checkpoint");

    if cur.take(4).ok_or_else(trunc)? != CHECKPOINT_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    if cur.u32().ok_or_else(trunc)? != CHECKPOINT_VERSION {
        return Err(fmt_err("unsupported version"));
    }
    let depth = cur.u32().ok_or_else(trunc)? as usize;
    let base_channels = cur.u32().ok_or_else(trunc)? as usize;
    let in_channels = cur.u32().ok_or_else(trunc)? as usize;
    let out_channels = cur.u32().ok_or_else(trunc)? as usize;
    let height = cur.u32().ok_or_else(trunc)? as usize;
    let width = cur.u32().ok_or_else(trunc)? as usize;
    let gamma = cur.f64().ok_or_else(trunc)?;
    let alpha = cur.f64().ok_or_else(trunc)?;
    let n_params = cur.u32().ok_or_else(trunc)? as usize;

    let spec = NetworkSpec { depth, base_channels, in_channels, out_channels };
    let mut net = build_network(spec, height, width, gamma, alpha, 0)?;
    if net.params.len() != n_params {
        return Err(fmt_err("parameter count does not match the stored spec"));
    }
    for (i, slot) in net.params.iter_mut().enumerate() {
        let n = cur.u32().ok_or_else(trunc)? as usize;
        let c = cur.u32().ok_or_else(trunc)? as usize;
        let h = cur.u32().ok_or_else(trunc)? as usize;
        let w = cur.u32().ok_or_else(trunc)? as usize;
        let shape = Shape::new(n, c, h, w);
        if shape != slot.shape() {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: format!("parameter {i}: stored shape {shape} vs expected {}", slot.shape()),
            });
        }
        for v in slot.data_mut() {
            *v = cur.f64().ok_or_else(trunc)?;
        }
    }
    Ok(net)
}
