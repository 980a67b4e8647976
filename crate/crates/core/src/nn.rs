//! The patch classifier: a small CNN with exact backprop and plain SGD.
//!
//! Default architecture: 28x28x1 input, one valid 3x3 convolution with 4
//! kernels and ReLU (optionally followed by 2x2 max pooling), flatten, a
//! dense ReLU layer of 100 units with inverted dropout during training, and
//! a dense softmax output over the document classes.
//!
//! Everything runs in f64 so finite-difference gradient checks are
//! meaningful; trained models are quantized to f32 before serialization.
//! Training is deterministic for a given seed: one generator drives weight
//! initialization, another (seeded by the config) drives batch sampling and
//! dropout masks, and all arithmetic happens in a fixed order.

use crate::dataset::PatchSet;
use crate::error::{Error, Result};
use crate::tensor::{fill_uniform, SplitMix64, Tensor};

pub const KERNEL_SIDE: usize = 3;
pub const POOL_SIDE: usize = 2;
/// Validation accuracy is logged every this many batches when a validation
/// set is supplied.
pub const VAL_INTERVAL: usize = 500;
/// Floor inside the log of the cross-entropy loss.
const PROB_EPSILON: f64 = 1e-12;

/// 3x3 valid convolution bank: kernels `[K, C_in, 3, 3]`, biases `[K]`.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub kernels: Tensor,
    pub biases: Tensor,
}

/// Fully connected layer: weights `[out, in]`, biases `[out]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub biases: Tensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Kernel count per conv layer, in order; may be empty for a dense-only
    /// network.
    pub conv_kernel_counts: Vec<usize>,
    /// Apply 2x2 max pooling after each conv layer's ReLU.
    pub use_max_pool: bool,
    pub dense_width: usize,
    pub num_classes: usize,
    pub input_side: usize,
}

impl NetworkConfig {
    pub fn with_defaults(num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            conv_kernel_counts: vec![4],
            use_max_pool: false,
            dense_width: 100,
            num_classes,
            input_side: 28,
        }
    }

    /// Depth sweep helper: `depth` conv layers with kernel counts starting
    /// at 4 and growing by 2 per layer (4, 6, 8, ...).
    pub fn for_depth(depth: usize, num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            conv_kernel_counts: (0..depth).map(|i| 4 + 2 * i).collect(),
            ..NetworkConfig::with_defaults(num_classes)
        }
    }

    /// (channels, side) after each stage: the input, then each conv layer
    /// with its optional pooling. Errors when a stage underflows.
    pub fn shape_chain(&self) -> Result<Vec<(usize, usize)>> {
        let mut chain = vec![(1usize, self.input_side)];
        let mut side = self.input_side;
        for &k in &self.conv_kernel_counts {
            if side < KERNEL_SIDE {
                return Err(Error::ConvInputTooSmall {
                    height: side,
                    width: side,
                });
            }
            side -= KERNEL_SIDE - 1;
            if self.use_max_pool {
                if side < POOL_SIDE {
                    return Err(Error::PoolInputTooSmall {
                        height: side,
                        width: side,
                    });
                }
                side /= POOL_SIDE;
            }
            chain.push((k, side));
        }
        Ok(chain)
    }

    /// Length of the flattened vector feeding the dense hidden layer.
    pub fn flattened_len(&self) -> Result<usize> {
        let &(channels, side) = self.shape_chain()?.last().unwrap();
        Ok(channels * side * side)
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    conv_layers: Vec<ConvLayer>,
    hidden: DenseLayer,
    output: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub num_batches: usize,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 128,
            num_batches: 5000,
            dropout_p: 0.5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogEntry {
    pub batch: usize,
    pub mean_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    /// CSV with header `batch,mean_loss,val_accuracy`; the accuracy column
    /// is empty on batches where it was not measured.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch,mean_loss,val_accuracy\n");
        for e in &self.entries {
            let val = e
                .val_accuracy
                .map(|v| format!("{v}"))
                .unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.batch, e.mean_loss, val));
        }
        out
    }
}

/// Per-sample activations recorded by the forward pass for backprop.
struct Trace {
    conv_inputs: Vec<Tensor>,
    conv_preact: Vec<Tensor>,
    pool_argmax: Vec<Vec<usize>>,
    /// Shape of the tensor that was flattened.
    flat_shape: Vec<usize>,
    flat: Vec<f64>,
    hidden_pre: Vec<f64>,
    /// Post-ReLU, post-mask hidden activations.
    hidden_out: Vec<f64>,
    probs: Vec<f64>,
}

impl Network {
    /// Initializes weights uniformly in `+/-sqrt(6/(fan_in+fan_out))` per
    /// layer and biases to zero, drawing from a single seeded generator in
    /// layer order.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Network> {
        config.shape_chain()?; // validate early
        if config.num_classes < 2 || config.dense_width == 0 || config.input_side == 0 {
            return Err(Error::ShapeMismatch {
                op: "network config",
                left: vec![config.num_classes, config.dense_width],
                right: vec![2, 1],
            });
        }
        let mut rng = SplitMix64::new(seed);
        let mut init = |shape: &[usize], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut t = Tensor::zeros(shape);
            fill_uniform(&mut t, -limit, limit, &mut rng);
            t
        };
        let mut conv_layers = Vec::new();
        let mut in_channels = 1usize;
        for &k in &config.conv_kernel_counts {
            let fan_in = in_channels * KERNEL_SIDE * KERNEL_SIDE;
            let fan_out = k * KERNEL_SIDE * KERNEL_SIDE;
            conv_layers.push(ConvLayer {
                kernels: init(&[k, in_channels, KERNEL_SIDE, KERNEL_SIDE], fan_in, fan_out),
                biases: Tensor::zeros(&[k]),
            });
            in_channels = k;
        }
        let flat = config.flattened_len()?;
        let hidden = DenseLayer {
            weights: init(&[config.dense_width, flat], flat, config.dense_width),
            biases: Tensor::zeros(&[config.dense_width]),
        };
        let output = DenseLayer {
            weights: init(
                &[config.num_classes, config.dense_width],
                config.dense_width,
                config.num_classes,
            ),
            biases: Tensor::zeros(&[config.num_classes]),
        };
        Ok(Network {
            config,
            conv_layers,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn conv_layers(&self) -> &[ConvLayer] {
        &self.conv_layers
    }

    pub fn hidden(&self) -> &DenseLayer {
        &self.hidden
    }

    pub fn output(&self) -> &DenseLayer {
        &self.output
    }

    fn param_blocks(&self) -> Vec<&[f64]> {
        let mut blocks = Vec::new();
        for layer in &self.conv_layers {
            blocks.push(layer.kernels.data());
            blocks.push(layer.biases.data());
        }
        blocks.push(self.hidden.weights.data());
        blocks.push(self.hidden.biases.data());
        blocks.push(self.output.weights.data());
        blocks.push(self.output.biases.data());
        blocks
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.conv_layers {
            blocks.push(layer.kernels.data_mut());
            blocks.push(layer.biases.data_mut());
        }
        blocks.push(self.hidden.weights.data_mut());
        blocks.push(self.hidden.biases.data_mut());
        blocks.push(self.output.weights.data_mut());
        blocks.push(self.output.biases.data_mut());
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    /// All parameters as one flat vector. Order: per conv layer kernels
    /// then biases, then hidden weights/biases, then output
    /// weights/biases. Gradients use the same order.
    pub fn params(&self) -> Vec<f64> {
        self.param_blocks().concat()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                op: "set_params",
                left: vec![params.len()],
                right: vec![self.param_count()],
            });
        }
        let mut offset = 0;
        for block in self.param_blocks_mut() {
            block.copy_from_slice(&params[offset..offset + block.len()]);
            offset += block.len();
        }
        Ok(())
    }

    /// Rounds every parameter through f32, the precision used on disk, so
    /// in-memory inference matches a saved-and-reloaded model exactly.
    pub fn quantize_f32(&mut self) {
        for block in self.param_blocks_mut() {
            for v in block.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn forward(&self, values: &[f64], mask: Option<&[f64]>) -> Result<Trace> {
        let side = self.config.input_side;
        if values.len() != side * side {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: vec![values.len()],
                right: vec![side, side],
            });
        }
        let mut conv_inputs = Vec::with_capacity(self.conv_layers.len());
        let mut conv_preact = Vec::with_capacity(self.conv_layers.len());
        let mut pool_argmax = Vec::new();
        let mut cur = Tensor::from_vec(&[1, side, side], values.to_vec())?;
        for layer in &self.conv_layers {
            let pre = conv_forward(layer, &cur)?;
            let act = relu(&pre);
            conv_inputs.push(cur);
            conv_preact.push(pre);
            cur = if self.config.use_max_pool {
                let (pooled, argmax) = maxpool_forward(&act)?;
                pool_argmax.push(argmax);
                pooled
            } else {
                act
            };
        }
        let flat_shape = cur.shape().to_vec();
        let flat = cur.data().to_vec();

        let hidden_pre = dense_forward(&self.hidden, &flat);
        if let Some(mask) = mask {
            if mask.len() != hidden_pre.len() {
                return Err(Error::ShapeMismatch {
                    op: "dropout mask",
                    left: vec![mask.len()],
                    right: vec![hidden_pre.len()],
                });
            }
        }
        let hidden_out: Vec<f64> = hidden_pre
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let a = v.max(0.0);
                match mask {
                    Some(m) => a * m[i],
                    None => a,
                }
            })
            .collect();
        let logits = dense_forward(&self.output, &hidden_out);
        let probs = softmax_slice(&logits);
        Ok(Trace {
            conv_inputs,
            conv_preact,
            pool_argmax,
            flat_shape,
            flat,
            hidden_pre,
            hidden_out,
            probs,
        })
    }

    /// Class with the highest probability (ties to the lowest index) plus
    /// the full probability vector. Pure forward pass, no dropout.
    pub fn predict(&self, values: &[f64]) -> Result<(usize, Vec<f64>)> {
        let trace = self.forward(values, None)?;
        Ok((argmax(&trace.probs), trace.probs))
    }

    /// Mean cross-entropy over a batch, with optional fixed per-sample
    /// dropout masks (for training and gradient checking).
    pub fn loss_batch(
        &self,
        batch: &[(&[f64], usize)],
        masks: Option<&[Vec<f64>]>,
    ) -> Result<f64> {
        self.check_batch(batch, masks)?;
        let mut total = 0.0;
        for (i, &(values, label)) in batch.iter().enumerate() {
            let trace = self.forward(values, masks.map(|m| m[i].as_slice()))?;
            total += cross_entropy_slice(&trace.probs, label);
        }
        Ok(total / batch.len() as f64)
    }

    /// Analytic gradients of the mean batch cross-entropy with respect to
    /// every parameter, flattened in [`Network::params`] order, plus the
    /// loss itself.
    pub fn backward(
        &self,
        batch: &[(&[f64], usize)],
        masks: Option<&[Vec<f64>]>,
    ) -> Result<(Vec<f64>, f64)> {
        self.check_batch(batch, masks)?;
        let mut grads = vec![0.0; self.param_count()];
        let mut total_loss = 0.0;
        let inv_batch = 1.0 / batch.len() as f64;

        // Gradient block offsets in params() order.
        let mut offsets = Vec::new();
        let mut off = 0;
        for block in self.param_blocks() {
            offsets.push(off);
            off += block.len();
        }

        for (i, &(values, label)) in batch.iter().enumerate() {
            let mask = masks.map(|m| m[i].as_slice());
            let trace = self.forward(values, mask)?;
            total_loss += cross_entropy_slice(&trace.probs, label);

            // softmax + cross-entropy: dL/dlogit = (p - onehot) / batch
            let m = self.config.num_classes;
            let mut dlogits = vec![0.0; m];
            for (j, dl) in dlogits.iter_mut().enumerate() {
                *dl = (trace.probs[j] - if j == label { 1.0 } else { 0.0 }) * inv_batch;
            }

            // output dense layer
            let n_hidden = self.config.dense_width;
            let out_w = self.output.weights.data();
            let (ow_off, ob_off) = (offsets[offsets.len() - 2], offsets[offsets.len() - 1]);
            let mut dhidden_out = vec![0.0; n_hidden];
            for j in 0..m {
                let g = dlogits[j];
                let row = &out_w[j * n_hidden..(j + 1) * n_hidden];
                let grow = &mut grads[ow_off + j * n_hidden..ow_off + (j + 1) * n_hidden];
                for (idx, (&h, gslot)) in trace.hidden_out.iter().zip(grow).enumerate() {
                    *gslot += g * h;
                    dhidden_out[idx] += g * row[idx];
                }
                grads[ob_off + j] += g;
            }

            // dropout mask then ReLU gate
            let mut dhidden_pre = dhidden_out;
            for (idx, d) in dhidden_pre.iter_mut().enumerate() {
                if let Some(m) = mask {
                    *d *= m[idx];
                }
                if trace.hidden_pre[idx] <= 0.0 {
                    *d = 0.0;
                }
            }

            // hidden dense layer
            let n_flat = trace.flat.len();
            let hid_w = self.hidden.weights.data();
            let (hw_off, hb_off) = (offsets[offsets.len() - 4], offsets[offsets.len() - 3]);
            let mut dflat = vec![0.0; n_flat];
            for j in 0..n_hidden {
                let g = dhidden_pre[j];
                grads[hb_off + j] += g;
                if g == 0.0 {
                    continue;
                }
                let row = &hid_w[j * n_flat..(j + 1) * n_flat];
                let grow = &mut grads[hw_off + j * n_flat..hw_off + (j + 1) * n_flat];
                for idx in 0..n_flat {
                    grow[idx] += g * trace.flat[idx];
                    dflat[idx] += g * row[idx];
                }
            }

            // conv stack, last layer first
            let mut dstage = Tensor::from_vec(&trace.flat_shape, dflat)?;
            for (l, layer) in self.conv_layers.iter().enumerate().rev() {
                let act_shape = trace.conv_preact[l].shape().to_vec();
                let dact = if self.config.use_max_pool {
                    // route pooled gradients back to the recorded argmax
                    let mut dact = vec![0.0; trace.conv_preact[l].len()];
                    for (o, &src) in trace.pool_argmax[l].iter().enumerate() {
                        dact[src] += dstage.data()[o];
                    }
                    Tensor::from_vec(&act_shape, dact)?
                } else {
                    dstage
                };
                // ReLU gate
                let mut dpre = dact;
                for (d, &pre) in dpre.data_mut().iter_mut().zip(trace.conv_preact[l].data()) {
                    if pre <= 0.0 {
                        *d = 0.0;
                    }
                }
                let want_dinput = l > 0;
                // kernel and bias gradient blocks are adjacent in the flat
                // vector, so one region split gives both
                let dk_off = offsets[2 * l];
                let region =
                    &mut grads[dk_off..dk_off + layer.kernels.len() + layer.biases.len()];
                let (dkernels, dbiases) = region.split_at_mut(layer.kernels.len());
                let dinput = conv_backward(
                    layer,
                    &trace.conv_inputs[l],
                    &dpre,
                    dkernels,
                    dbiases,
                    want_dinput,
                )?;
                if let Some(dinput) = dinput {
                    dstage = dinput;
                } else {
                    break;
                }
            }
        }
        Ok((grads, total_loss * inv_batch))
    }

    fn check_batch(&self, batch: &[(&[f64], usize)], masks: Option<&[Vec<f64>]>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(masks) = masks {
            if masks.len() != batch.len() {
                return Err(Error::ListLengthMismatch {
                    context: "batch vs dropout masks",
                    left: batch.len(),
                    right: masks.len(),
                });
            }
        }
        for &(_, label) in batch {
            if label >= self.config.num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.config.num_classes,
                });
            }
        }
        Ok(())
    }
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}

fn dense_forward(layer: &DenseLayer, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    layer
        .weights
        .data()
        .chunks_exact(n)
        .zip(layer.biases.data())
        .map(|(row, &b)| b + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<f64>())
        .collect()
}

/// Valid 3x3 cross-correlation, stride 1:
/// `out[k,i,j] = b_k + sum over c,u,v of kernel[k,c,u,v] * input[c,i+u,j+v]`.
pub fn conv_forward(layer: &ConvLayer, input: &Tensor) -> Result<Tensor> {
    let &[c_in, h, w] = input.shape() else {
        return Err(Error::ShapeMismatch {
            op: "conv_forward input",
            left: input.shape().to_vec(),
            right: vec![0, 0, 0],
        });
    };
    let kshape = layer.kernels.shape();
    if kshape.len() != 4
        || kshape[1] != c_in
        || kshape[2] != KERNEL_SIDE
        || kshape[3] != KERNEL_SIDE
    {
        return Err(Error::ShapeMismatch {
            op: "conv_forward kernels",
            left: kshape.to_vec(),
            right: vec![layer.biases.len(), c_in, KERNEL_SIDE, KERNEL_SIDE],
        });
    }
    let k_out = kshape[0];
    if h < KERNEL_SIDE || w < KERNEL_SIDE {
        return Err(Error::ConvInputTooSmall {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h - KERNEL_SIDE + 1, w - KERNEL_SIDE + 1);
    let x = input.data();
    let kern = layer.kernels.data();
    let mut out = vec![0.0; k_out * oh * ow];
    for k in 0..k_out {
        let bias = layer.biases.data()[k];
        for c in 0..c_in {
            let kbase = (k * c_in + c) * KERNEL_SIDE * KERNEL_SIDE;
            let xbase = c * h * w;
            for i in 0..oh {
                let obase = (k * oh + i) * ow;
                for u in 0..KERNEL_SIDE {
                    let xrow = xbase + (i + u) * w;
                    let krow = kbase + u * KERNEL_SIDE;
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for v in 0..KERNEL_SIDE {
                            acc += kern[krow + v] * x[xrow + j + v];
                        }
                        out[obase + j] += acc;
                    }
                }
            }
        }
        // add bias once per output cell
        for slot in &mut out[k * oh * ow..(k + 1) * oh * ow] {
            *slot += bias;
        }
    }
    Tensor::from_vec(&[k_out, oh, ow], out)
}

/// Gradients of a conv layer: accumulates kernel/bias gradients into the
/// given slices and optionally returns the gradient w.r.t. the input.
fn conv_backward(
    layer: &ConvLayer,
    input: &Tensor,
    dpre: &Tensor,
    dkernels: &mut [f64],
    dbiases: &mut [f64],
    want_dinput: bool,
) -> Result<Option<Tensor>> {
    let &[c_in, h, w] = input.shape() else {
        unreachable!("conv input shape validated on forward");
    };
    let &[k_out, oh, ow] = dpre.shape() else {
        unreachable!("conv output shape validated on forward");
    };
    let x = input.data();
    let kern = layer.kernels.data();
    let d = dpre.data();
    let mut dx = vec![0.0; if want_dinput { c_in * h * w } else { 0 }];
    for (k, dbias) in dbiases.iter_mut().enumerate().take(k_out) {
        let mut bias_sum = 0.0;
        for i in 0..oh {
            let obase = (k * oh + i) * ow;
            for j in 0..ow {
                bias_sum += d[obase + j];
            }
        }
        *dbias += bias_sum;
        for c in 0..c_in {
            let kbase = (k * c_in + c) * KERNEL_SIDE * KERNEL_SIDE;
            let xbase = c * h * w;
            for i in 0..oh {
                let obase = (k * oh + i) * ow;
                for u in 0..KERNEL_SIDE {
                    let xrow = xbase + (i + u) * w;
                    let krow = kbase + u * KERNEL_SIDE;
                    for j in 0..ow {
                        let g = d[obase + j];
                        if g == 0.0 {
                            continue;
                        }
                        for v in 0..KERNEL_SIDE {
                            dkernels[krow + v] += g * x[xrow + j + v];
                            if want_dinput {
                                dx[xrow + j + v] += g * kern[krow + v];
                            }
                        }
                    }
                }
            }
        }
    }
    if want_dinput {
        Ok(Some(Tensor::from_vec(&[c_in, h, w], dx)?))
    } else {
        Ok(None)
    }
}

/// Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped.
/// Also returns, per output cell, the flat input index of the maximum (ties
/// to the first in row-major scan) for backprop routing.
pub fn maxpool_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::ShapeMismatch {
            op: "maxpool_forward input",
            left: input.shape().to_vec(),
            right: vec![0, 0, 0],
        });
    };
    if h < POOL_SIDE || w < POOL_SIDE {
        return Err(Error::PoolInputTooSmall {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / POOL_SIDE, w / POOL_SIDE);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let base = ch * h * w + i * POOL_SIDE * w + j * POOL_SIDE;
                let mut best = (x[base], base);
                for u in 0..POOL_SIDE {
                    for v in 0..POOL_SIDE {
                        let idx = base + u * w + v;
                        if x[idx] > best.0 {
                            best = (x[idx], idx);
                        }
                    }
                }
                out.push(best.0);
                argmax.push(best.1);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, argmax))
}

fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable softmax: `p_i = exp(z_i - max z) / sum`.
pub fn softmax(logits: &Tensor) -> Tensor {
    Tensor::from_vec(logits.shape(), softmax_slice(logits.data())).unwrap()
}

fn cross_entropy_slice(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_EPSILON).ln()
}

/// `-ln(max(probs[label], 1e-12))`; batch losses are the mean over samples.
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(cross_entropy_slice(probs.data(), label))
}

/// Index of the largest value; ties break to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverted dropout: zeroes each unit with probability `p` and scales
/// survivors by `1/(1-p)`, so the expected activation is unchanged and
/// inference can run the network as-is. Returns the masked activations and
/// the mask itself (entries 0 or `1/(1-p)`).
pub fn apply_dropout(
    activations: &Tensor,
    p: f64,
    rng: &mut SplitMix64,
) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::BadRange { lo: p, hi: 1.0 });
    }
    let mask = dropout_mask(activations.len(), p, rng);
    let data = activations
        .data()
        .iter()
        .zip(&mask)
        .map(|(&a, &m)| a * m)
        .collect();
    Ok((Tensor::from_vec(activations.shape(), data)?, mask))
}

fn dropout_mask(len: usize, p: f64, rng: &mut SplitMix64) -> Vec<f64> {
    if p == 0.0 {
        return vec![1.0; len];
    }
    let scale = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.next_f64() < p { 0.0 } else { scale })
        .collect()
}

/// One SGD update: `theta <- theta - lr * grad`, elementwise over the flat
/// parameter vector.
pub fn sgd_step(net: &mut Network, grads: &[f64], learning_rate: f64) -> Result<()> {
    if grads.len() != net.param_count() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            left: vec![grads.len()],
            right: vec![net.param_count()],
        });
    }
    let mut offset = 0;
    for block in net.param_blocks_mut() {
        let len = block.len();
        for (p, &g) in block.iter_mut().zip(&grads[offset..offset + len]) {
            *p -= learning_rate * g;
        }
        offset += len;
    }
    Ok(())
}

/// Fraction of labeled patches the network classifies correctly.
pub fn accuracy(net: &Network, set: &PatchSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyPatchSet);
    }
    let mut correct = 0usize;
    let mut labeled = 0usize;
    for patch in set.patches() {
        if let Some(label) = patch.label {
            labeled += 1;
            let (class, _) = net.predict(&patch.values)?;
            if class == label as usize {
                correct += 1;
            }
        }
    }
    if labeled == 0 {
        return Err(Error::EmptyPatchSet);
    }
    Ok(correct as f64 / labeled as f64)
}

/// SGD training loop: `num_batches` iterations, each drawing `batch_size`
/// patches uniformly with replacement from `set` and fresh dropout masks
/// for the hidden layer. Per batch, the sample indices are drawn first and
/// then the masks, all from one generator seeded with `cfg.seed`, so runs
/// are bit-reproducible. When a validation set is given, patch accuracy on
/// it is logged every [`VAL_INTERVAL`] batches.
pub fn train(
    net: &mut Network,
    set: &PatchSet,
    cfg: &TrainConfig,
    validation: Option<&PatchSet>,
) -> Result<TrainLog> {
    if set.is_empty() {
        return Err(Error::EmptyPatchSet);
    }
    if set.classes() != net.config.num_classes {
        return Err(Error::ClassCountMismatch {
            net: net.config.num_classes,
            data: set.classes(),
        });
    }
    if !(0.0..1.0).contains(&cfg.dropout_p) {
        return Err(Error::BadRange {
            lo: cfg.dropout_p,
            hi: 1.0,
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut samples = Vec::with_capacity(set.len());
    for (i, patch) in set.patches().iter().enumerate() {
        let Some(label) = patch.label else {
            return Err(Error::UnlabeledPatch { index: i });
        };
        samples.push((patch.values.as_slice(), label as usize));
    }

    let mut rng = SplitMix64::new(cfg.seed);
    let mut log = TrainLog::default();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut masks: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    for b in 0..cfg.num_batches {
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(samples[rng.below(set.len())]);
        }
        let use_masks = cfg.dropout_p > 0.0;
        if use_masks {
            masks.clear();
            for _ in 0..cfg.batch_size {
                masks.push(dropout_mask(net.config.dense_width, cfg.dropout_p, &mut rng));
            }
        }
        let (grads, mean_loss) =
            net.backward(&batch, if use_masks { Some(&masks) } else { None })?;
        sgd_step(net, &grads, cfg.learning_rate)?;

        let val_accuracy = match validation {
            Some(val) if (b + 1) % VAL_INTERVAL == 0 => Some(accuracy(net, val)?),
            _ => None,
        };
        log.entries.push(TrainLogEntry {
            batch: b,
            mean_loss,
            val_accuracy,
        });
    }
    Ok(log)
}
