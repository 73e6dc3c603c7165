//! Three-stage convolutional classifier with hand-written backpropagation.
//!
//! Each stage is a 3x3 same-padded convolution, ReLU and 2x2 max-pool. The pooled output
//! is flattened channel by channel and fed through a ReLU dense layer and a softmax layer.
//! Activations are stored per image as `[channel][row][col]`.

mod io;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::{ClassLabel, Image};
use crate::error::{Error, Result};

pub use io::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use train::{
    evaluate, predict, rmsprop_step, train, EpochRecord, RmsState, TrainConfig, TrainHistory,
};

/// Images per parallel work item; partial gradients are summed in chunk order.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvNetArch {
    pub height: usize,
    pub width: usize,
    pub conv_channels: [usize; 3],
    pub dense_hidden: usize,
    pub output_classes: usize,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b", "dense1.w", "dense1.b",
    "dense2.w", "dense2.b",
];

impl ConvNetArch {
    pub fn new(
        height: usize,
        width: usize,
        conv_channels: [usize; 3],
        dense_hidden: usize,
        output_classes: usize,
    ) -> Result<Self> {
        let arch = ConvNetArch {
            height,
            width,
            conv_channels,
            dense_hidden,
            output_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Channels (32, 64, 64) and 128 hidden units.
    pub fn default_for(height: usize, width: usize, output_classes: usize) -> Result<Self> {
        Self::new(height, width, [32, 64, 64], 128, output_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(8)
            || !self.width.is_multiple_of(8)
        {
            return Err(Error::Config(format!(
                "input {}x{} must be a positive multiple of 8 in both directions",
                self.height, self.width
            )));
        }
        if self.conv_channels.contains(&0) || self.dense_hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.output_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 output classes, got {}",
                self.output_classes
            )));
        }
        Ok(())
    }

    /// Parses `c1,c2,c3,hidden`.
    pub fn parse_layers(text: &str) -> Result<([usize; 3], usize)> {
        let parts: Vec<usize> = text
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                Error::Config(format!(
                    "bad architecture {text:?}, expected c1,c2,c3,hidden"
                ))
            })?;
        match parts[..] {
            [a, b, c, h] => Ok(([a, b, c], h)),
            _ => Err(Error::Config(format!(
                "bad architecture {text:?}, expected c1,c2,c3,hidden"
            ))),
        }
    }

    pub fn flatten_len(&self) -> usize {
        (self.height / 8) * (self.width / 8) * self.conv_channels[2]
    }

    fn stage_inputs(&self) -> [usize; 3] {
        [1, self.conv_channels[0], self.conv_channels[1]]
    }

    /// Element count of each parameter tensor, in [`TENSOR_NAMES`] order.
    pub fn tensor_lens(&self) -> [usize; 10] {
        let [c1, c2, c3] = self.conv_channels;
        let (h, f, c) = (self.dense_hidden, self.flatten_len(), self.output_classes);
        [
            c1 * 9,
            c1,
            c2 * c1 * 9,
            c2,
            c3 * c2 * 9,
            c3,
            h * f,
            h,
            c * h,
            c,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_lens().iter().sum()
    }

    fn fan_ins(&self) -> [usize; 10] {
        let [c1, c2, _] = self.conv_channels;
        let f = self.flatten_len();
        let h = self.dense_hidden;
        [9, 0, c1 * 9, 0, c2 * 9, 0, f, 0, h, 0]
    }
}

/// Parameter (or gradient) tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tensors: Vec<Vec<f64>>,
}

impl Params {
    pub fn zeros(arch: &ConvNetArch) -> Self {
        Params {
            tensors: arch.tensor_lens().iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for x in self.tensors.iter_mut().flatten() {
            *x *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetModel {
    pub arch: ConvNetArch,
    pub params: Params,
    pub seed: u64,
}

/// Zero biases and normal weights with variance `2 / fan_in`, drawn in declaration order.
pub fn init_model(arch: ConvNetArch, seed: u64) -> ConvNetModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::zeros(&arch);
    for (tensor, fan_in) in params.tensors.iter_mut().zip(arch.fan_ins()) {
        if fan_in == 0 {
            continue;
        }
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        for x in tensor.iter_mut() {
            *x = normal.sample(&mut rng);
        }
    }
    ConvNetModel { arch, params, seed }
}

/// `out[y][x] += weight * input[y + dy][x + dx]` over the rows and columns where both exist.
#[inline]
fn shift_add(
    out: &mut [f64],
    input: &[f64],
    h: usize,
    w: usize,
    dy: isize,
    dx: isize,
    weight: f64,
) {
    let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx.max(0)) as usize);
    let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy.max(0)) as usize);
    for y in y0..y1 {
        let src = ((y as isize + dy) as usize) * w;
        let o = &mut out[y * w + x0..y * w + x1];
        let i = &input[(src as isize + x0 as isize + dx) as usize
            ..(src as isize + x1 as isize + dx) as usize];
        for (a, b) in o.iter_mut().zip(i) {
            *a += weight * b;
        }
    }
}

/// `sum_y sum_x a[y][x] * input[y + dy][x + dx]` over the same overlap as [`shift_add`].
#[inline]
fn shift_dot(a: &[f64], input: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx.max(0)) as usize);
    let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy.max(0)) as usize);
    let mut acc = 0.0;
    for y in y0..y1 {
        let src = ((y as isize + dy) as usize) * w;
        let ra = &a[y * w + x0..y * w + x1];
        let ri = &input[(src as isize + x0 as isize + dx) as usize
            ..(src as isize + x1 as isize + dx) as usize];
        for (p, q) in ra.iter().zip(ri) {
            acc += p * q;
        }
    }
    acc
}

fn conv_forward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let out_c = bias.len();
    let plane = h * w;
    let mut out = vec![0.0; out_c * plane];
    for o in 0..out_c {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for i in 0..in_c {
            let src = &input[i * plane..(i + 1) * plane];
            for k in 0..9 {
                let wv = weights[(o * in_c + i) * 9 + k];
                shift_add(dst, src, h, w, k as isize / 3 - 1, k as isize % 3 - 1, wv);
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    grad_out: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let out_c = grad_b.len();
    let plane = h * w;
    let mut grad_in = want_input.then(|| vec![0.0; in_c * plane]);
    for o in 0..out_c {
        let g = &grad_out[o * plane..(o + 1) * plane];
        grad_b[o] += g.iter().sum::<f64>();
        for i in 0..in_c {
            let src = &input[i * plane..(i + 1) * plane];
            for k in 0..9 {
                let (dy, dx) = (k as isize / 3 - 1, k as isize % 3 - 1);
                grad_w[(o * in_c + i) * 9 + k] += shift_dot(g, src, h, w, dy, dx);
                if let Some(gi) = grad_in.as_mut() {
                    let wv = weights[(o * in_c + i) * 9 + k];
                    // adjoint of shift_add: input[y+dy][x+dx] receives w * g[y][x]
                    shift_add(&mut gi[i * plane..(i + 1) * plane], g, h, w, -dy, -dx, wv);
                }
            }
        }
    }
    grad_in
}

/// ReLU then 2x2 max-pool; returns pooled values and the argmax offset of each window.
fn relu_pool(pre: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (h2, w2) = (h / 2, w / 2);
    let mut pooled = Vec::with_capacity(channels * h2 * w2);
    let mut argmax = Vec::with_capacity(channels * h2 * w2);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..h2 {
            for x in 0..w2 {
                let first = base + 2 * y * w + 2 * x;
                let candidates = [first, first + 1, first + w, first + w + 1];
                let mut best = candidates[0];
                let mut best_value = pre[best].max(0.0);
                for &idx in &candidates[1..] {
                    let v = pre[idx].max(0.0);
                    if v > best_value {
                        best = idx;
                        best_value = v;
                    }
                }
                pooled.push(best_value);
                argmax.push(best as u32);
            }
        }
    }
    (pooled, argmax)
}

struct Stage {
    input: Vec<f64>,
    pre: Vec<f64>,
    argmax: Vec<u32>,
}

struct Trace {
    stages: Vec<Stage>,
    flat: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    log_probs: Vec<f64>,
}

fn check_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite activation at layer {layer}"
        )));
    }
    Ok(())
}

fn dense(weights: &[f64], bias: &[f64], input: &[f64]) -> Vec<f64> {
    bias.iter()
        .enumerate()
        .map(|(j, b)| {
            let row = &weights[j * input.len()..(j + 1) * input.len()];
            b + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
        })
        .collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl ConvNetModel {
    fn check_image(&self, image: &Image) -> Result<()> {
        if image.shape() != (self.arch.height, self.arch.width) {
            return Err(Error::Format(format!(
                "image is {:?} but the network expects {}x{}",
                image.shape(),
                self.arch.height,
                self.arch.width
            )));
        }
        Ok(())
    }

    fn trace(&self, image: &Image) -> Result<Trace> {
        self.check_image(image)?;
        let t = &self.params.tensors;
        let (mut h, mut w) = (self.arch.height, self.arch.width);
        let mut activation = image.pixels().to_vec();
        let mut stages = Vec::with_capacity(3);
        for (s, in_c) in self.arch.stage_inputs().into_iter().enumerate() {
            let pre = conv_forward(&activation, in_c, h, w, &t[2 * s], &t[2 * s + 1]);
            let (pooled, argmax) = relu_pool(&pre, self.arch.conv_channels[s], h, w);
            check_finite(&pooled, s + 1)?;
            stages.push(Stage {
                input: std::mem::replace(&mut activation, pooled),
                pre,
                argmax,
            });
            h /= 2;
            w /= 2;
        }
        let flat = activation;
        let hidden_pre = dense(&t[6], &t[7], &flat);
        let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
        check_finite(&hidden, 4)?;
        let logits = dense(&t[8], &t[9], &hidden);
        check_finite(&logits, 5)?;
        Ok(Trace {
            stages,
            flat,
            hidden_pre,
            hidden,
            log_probs: log_softmax(&logits),
        })
    }

    /// Log-probabilities for one image.
    pub fn log_probabilities(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(self.trace(image)?.log_probs)
    }

    /// Adds the gradient of `-log p[label]` for one image into `grads`; returns that loss
    /// and the predicted class index.
    fn backprop(&self, image: &Image, label: usize, grads: &mut Params) -> Result<(f64, usize)> {
        let tr = self.trace(image)?;
        let t = &self.params.tensors;
        let g = &mut grads.tensors;
        let loss = -tr.log_probs[label];
        let predicted = argmax(&tr.log_probs);

        let mut d_logits: Vec<f64> = tr.log_probs.iter().map(|l| l.exp()).collect();
        d_logits[label] -= 1.0;

        let hidden_n = tr.hidden.len();
        let mut d_hidden = vec![0.0; hidden_n];
        for (c, &dl) in d_logits.iter().enumerate() {
            g[9][c] += dl;
            let row = c * hidden_n;
            for j in 0..hidden_n {
                g[8][row + j] += dl * tr.hidden[j];
                d_hidden[j] += t[8][row + j] * dl;
            }
        }

        let flat_n = tr.flat.len();
        let mut d_flat = vec![0.0; flat_n];
        for j in 0..hidden_n {
            if tr.hidden_pre[j] <= 0.0 {
                continue;
            }
            let dh = d_hidden[j];
            g[7][j] += dh;
            let row = j * flat_n;
            let (gw, wr) = (&mut g[6][row..row + flat_n], &t[6][row..row + flat_n]);
            for k in 0..flat_n {
                gw[k] += dh * tr.flat[k];
                d_flat[k] += wr[k] * dh;
            }
        }

        let mut d_pooled = d_flat;
        let in_channels = self.arch.stage_inputs();
        for s in (0..3).rev() {
            let stage = &tr.stages[s];
            let scale = 1 << s;
            let (h, w) = (self.arch.height / scale, self.arch.width / scale);
            let mut d_pre = vec![0.0; stage.pre.len()];
            for (&idx, &dp) in stage.argmax.iter().zip(&d_pooled) {
                let idx = idx as usize;
                if stage.pre[idx] > 0.0 {
                    d_pre[idx] += dp;
                }
            }
            let (head, tail) = g.split_at_mut(2 * s + 1);
            let d_input = conv_backward(
                &stage.input,
                &d_pre,
                in_channels[s],
                h,
                w,
                &t[2 * s],
                &mut head[2 * s],
                &mut tail[0],
                s > 0,
            );
            if let Some(d) = d_input {
                d_pooled = d;
            }
        }
        Ok((loss, predicted))
    }
}

/// Class probabilities, one row per image.
pub fn forward(model: &ConvNetModel, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
    if images.is_empty() {
        return Err(Error::Capacity("forward pass over an empty batch".into()));
    }
    images
        .par_iter()
        .map(|img| {
            Ok(model
                .log_probabilities(img)?
                .iter()
                .map(|l| l.exp())
                .collect())
        })
        .collect()
}

/// Mean cross-entropy of a batch against class indices and its gradient.
pub fn loss_and_grad(
    model: &ConvNetModel,
    images: &[&Image],
    labels: &[usize],
) -> Result<(f64, Params)> {
    let (loss, grads, _) = loss_grad_predictions(model, images, labels)?;
    Ok((loss, grads))
}

/// [`loss_and_grad`] plus the class each image was predicted as under the same parameters.
pub(crate) fn loss_grad_predictions(
    model: &ConvNetModel,
    images: &[&Image],
    labels: &[usize],
) -> Result<(f64, Params, Vec<usize>)> {
    check_batch(model, images, labels)?;
    let partials: Vec<(f64, Params, Vec<usize>)> = images
        .par_chunks(CHUNK)
        .zip(labels.par_chunks(CHUNK))
        .map(|(imgs, labs)| {
            let mut grads = Params::zeros(&model.arch);
            let mut loss = 0.0;
            let mut predicted = Vec::with_capacity(imgs.len());
            for (img, &lab) in imgs.iter().zip(labs) {
                let (l, p) = model.backprop(img, lab, &mut grads)?;
                loss += l;
                predicted.push(p);
            }
            Ok((loss, grads, predicted))
        })
        .collect::<Result<_>>()?;
    let mut total = Params::zeros(&model.arch);
    let mut loss = 0.0;
    let mut predicted = Vec::with_capacity(images.len());
    for (l, g, p) in &partials {
        loss += l;
        total.add_assign(g);
        predicted.extend_from_slice(p);
    }
    let n = images.len() as f64;
    total.scale(1.0 / n);
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((loss, total, predicted))
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy without gradients.
pub fn batch_loss(model: &ConvNetModel, images: &[&Image], labels: &[usize]) -> Result<f64> {
    check_batch(model, images, labels)?;
    let losses: Vec<f64> = images
        .par_iter()
        .zip(labels)
        .map(|(img, &lab)| Ok(-model.log_probabilities(img)?[lab]))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / images.len() as f64)
}

fn check_batch(model: &ConvNetModel, images: &[&Image], labels: &[usize]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Capacity("empty batch".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.arch.output_classes) {
        return Err(Error::Roster(format!(
            "label index {bad} outside {} classes",
            model.arch.output_classes
        )));
    }
    Ok(())
}

/// Position of `label` in the roster, which is the network's output index.
pub fn class_index(roster: &[ClassLabel], label: &ClassLabel) -> Result<usize> {
    roster
        .iter()
        .position(|l| l.id == label.id)
        .ok_or_else(|| Error::Roster(format!("label {label} is not in the class roster")))
}
