//! Miniature fully-convolutional change-detection networks.
//!
//! Two architectures:
//!
//! * `fcef-mini` — early fusion: the bitemporal pair is concatenated into a
//!   6-channel input before the encoder.
//! * `fcsiam-diff-mini` — a shared-weight siamese encoder runs on each
//!   image separately; the decoder consumes absolute feature differences
//!   `|f1 - f2|` at every stage, which makes the whole network invariant
//!   under swapping the two inputs.
//!
//! Both use a two-stage encoder (widths w, 2w; two 3x3 conv-relu per
//! stage), a 4w bottleneck, a mirrored decoder with nearest upsampling and
//! skip connections, and a 1x1 conv + sigmoid head producing a per-pixel
//! change probability.

mod checkpoint;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{conv2d, Scalar, Tensor};
use crate::rng;

/// Architecture identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Arch {
    FcefMini,
    FcsiamDiffMini,
}

impl Arch {
    pub fn id(&self) -> &'static str {
        match self {
            Arch::FcefMini => "fcef-mini",
            Arch::FcsiamDiffMini => "fcsiam-diff-mini",
        }
    }

    /// Channels entering the first encoder conv.
    fn encoder_in_channels(&self) -> usize {
        match self {
            Arch::FcefMini => 6,
            Arch::FcsiamDiffMini => 3,
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcef-mini" => Ok(Arch::FcefMini),
            "fcsiam-diff-mini" => Ok(Arch::FcsiamDiffMini),
            other => Err(Error::arg(format!(
                "unknown architecture '{other}' (expected 'fcef-mini' or 'fcsiam-diff-mini')"
            ))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// One conv layer's place in the architecture: name and weight shape.
struct LayerSpec {
    name: &'static str,
    out_ch: usize,
    in_ch: usize,
    k: usize,
}

/// The fixed layer table for an architecture at width `w`.
fn layer_table(arch: Arch, w: usize) -> Vec<LayerSpec> {
    let cin = arch.encoder_in_channels();
    vec![
        LayerSpec { name: "enc1.conv1", out_ch: w, in_ch: cin, k: 3 },
        LayerSpec { name: "enc1.conv2", out_ch: w, in_ch: w, k: 3 },
        LayerSpec { name: "enc2.conv1", out_ch: 2 * w, in_ch: w, k: 3 },
        LayerSpec { name: "enc2.conv2", out_ch: 2 * w, in_ch: 2 * w, k: 3 },
        LayerSpec { name: "bottleneck.conv1", out_ch: 4 * w, in_ch: 2 * w, k: 3 },
        LayerSpec { name: "bottleneck.conv2", out_ch: 4 * w, in_ch: 4 * w, k: 3 },
        LayerSpec { name: "dec2.conv1", out_ch: 2 * w, in_ch: 6 * w, k: 3 },
        LayerSpec { name: "dec2.conv2", out_ch: 2 * w, in_ch: 2 * w, k: 3 },
        LayerSpec { name: "dec1.conv1", out_ch: w, in_ch: 3 * w, k: 3 },
        LayerSpec { name: "dec1.conv2", out_ch: w, in_ch: w, k: 3 },
        LayerSpec { name: "head.conv", out_ch: 1, in_ch: w, k: 1 },
    ]
}

/// A named, ordered set of parameter tensors for one model instance.
pub struct ModelParams<T: Scalar> {
    arch: Arch,
    width: usize,
    params: Vec<(String, Tensor<T>)>,
}

/// Plain-data snapshot of model parameters; `Send + Sync`, used to rebuild
/// graphs on worker threads and to freeze checkpoints.
#[derive(Clone)]
pub struct ParamSnapshot<T: Scalar> {
    pub arch: Arch,
    pub width: usize,
    pub tensors: Vec<(String, Vec<usize>, Vec<T>)>,
}

impl<T: Scalar> ParamSnapshot<T> {
    /// Bit-level equality of all parameter payloads.
    pub fn bits_equal(&self, other: &ParamSnapshot<T>) -> bool {
        self.arch == other.arch
            && self.width == other.width
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((na, sa, da), (nb, sb, db))| {
                    na == nb
                        && sa == sb
                        && da.len() == db.len()
                        && da
                            .iter()
                            .zip(db.iter())
                            .all(|(a, b)| a.to_f64().to_bits() == b.to_f64().to_bits())
                })
    }
}

/// He-uniform initialization of a fresh model. Deterministic in
/// (arch, width, seed); biases start at zero.
pub fn build_model<T: Scalar>(arch: Arch, width: usize, seed: u64) -> Result<ModelParams<T>> {
    if width < 4 {
        return Err(Error::arg(format!(
            "model width must be at least 4, got {width}"
        )));
    }
    let mut rng = rng::stream(seed, "model-init");
    let mut params = Vec::new();
    for layer in layer_table(arch, width) {
        let fan_in = layer.in_ch * layer.k * layer.k;
        let limit = (6.0 / fan_in as f64).sqrt();
        let n = layer.out_ch * fan_in;
        let weights: Vec<T> = (0..n)
            .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
            .collect();
        params.push((
            format!("{}.weight", layer.name),
            Tensor::param(&[layer.out_ch, layer.in_ch, layer.k, layer.k], weights)?,
        ));
        params.push((
            format!("{}.bias", layer.name),
            Tensor::param(&[layer.out_ch], vec![T::ZERO; layer.out_ch])?,
        ));
    }
    Ok(ModelParams { arch, width, params })
}

/// Total parameter count implied by the layer table, without building
/// tensors.
pub fn expected_param_count(arch: Arch, width: usize) -> usize {
    layer_table(arch, width)
        .iter()
        .map(|l| l.out_ch * l.in_ch * l.k * l.k + l.out_ch)
        .sum()
}

impl<T: Scalar> ModelParams<T> {
    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Parameter tensors in fixed architecture order.
    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn named(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.elem_count()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.params {
            t.zero_grad();
        }
    }

    pub fn snapshot(&self) -> ParamSnapshot<T> {
        ParamSnapshot {
            arch: self.arch,
            width: self.width,
            tensors: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.to_vec()))
                .collect(),
        }
    }

    /// Rebuild live tensors from a snapshot. `trainable` controls whether
    /// the parameters accumulate gradients (frozen teachers do not).
    pub fn from_snapshot(snap: &ParamSnapshot<T>, trainable: bool) -> Result<Self> {
        let expected = layer_table(snap.arch, snap.width);
        if snap.tensors.len() != expected.len() * 2 {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors for {} width {}, got {}",
                expected.len() * 2,
                snap.arch,
                snap.width,
                snap.tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(snap.tensors.len());
        for (i, layer) in expected.iter().enumerate() {
            for (j, suffix) in ["weight", "bias"].iter().enumerate() {
                let (name, shape, data) = &snap.tensors[2 * i + j];
                let want_name = format!("{}.{}", layer.name, suffix);
                if *name != want_name {
                    return Err(Error::Checkpoint(format!(
                        "parameter {i} is named '{name}', expected '{want_name}'"
                    )));
                }
                let want_shape: Vec<usize> = if j == 0 {
                    vec![layer.out_ch, layer.in_ch, layer.k, layer.k]
                } else {
                    vec![layer.out_ch]
                };
                if *shape != want_shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter '{name}' has shape {shape:?}, expected {want_shape:?}"
                    )));
                }
                let t = if trainable {
                    Tensor::param(shape, data.clone())?
                } else {
                    Tensor::from_vec(shape, data.clone())?
                };
                params.push((name.clone(), t));
            }
        }
        Ok(ModelParams {
            arch: snap.arch,
            width: snap.width,
            params,
        })
    }

    /// Fresh trainable copy with identical values (e.g. student init).
    pub fn deep_clone(&self) -> Result<Self> {
        Self::from_snapshot(&self.snapshot(), true)
    }

    fn tensor(&self, name: &str) -> &Tensor<T> {
        // Names come from the fixed layer table; lookup cannot fail.
        &self
            .params
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
            .1
    }

    fn conv_relu_pair(&self, prefix: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c1 = conv2d(
            x,
            self.tensor(&format!("{prefix}.conv1.weight")),
            self.tensor(&format!("{prefix}.conv1.bias")),
            1,
            1,
        )?
        .relu();
        Ok(conv2d(
            &c1,
            self.tensor(&format!("{prefix}.conv2.weight")),
            self.tensor(&format!("{prefix}.conv2.bias")),
            1,
            1,
        )?
        .relu())
    }

    fn decode(&self, bottleneck: &Tensor<T>, skip2: &Tensor<T>, skip1: &Tensor<T>) -> Result<ModelOutput<T>> {
        let u2 = bottleneck.upsample2x_nearest()?;
        let d2 = self.conv_relu_pair("dec2", &u2.concat_channels(skip2)?)?;
        let u1 = d2.upsample2x_nearest()?;
        let d1 = self.conv_relu_pair("dec1", &u1.concat_channels(skip1)?)?;
        let logits = conv2d(
            &d1,
            self.tensor("head.conv.weight"),
            self.tensor("head.conv.bias"),
            1,
            0,
        )?;
        let prob = logits.sigmoid();
        Ok(ModelOutput { logits, prob })
    }

    /// Run the network on a bitemporal pair. Inputs are `[3, H, W]` (or
    /// `[1, 3, H, W]`) with H and W divisible by 4.
    pub fn forward(&self, x1: &Tensor<T>, x2: &Tensor<T>) -> Result<ModelOutput<T>> {
        let a = as_batched(x1)?;
        let b = as_batched(x2)?;
        let [_, _, h, w] = a.dims4("forward")?;
        if b.shape() != a.shape() {
            return Err(Error::shape(
                "forward",
                format!("x1 {:?} vs x2 {:?}", x1.shape(), x2.shape()),
            ));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::arg(format!(
                "input spatial dims must be divisible by 4, got {h}x{w}"
            )));
        }
        match self.arch {
            Arch::FcefMini => {
                let x = a.concat_channels(&b)?;
                let s1 = self.conv_relu_pair("enc1", &x)?;
                let s2 = self.conv_relu_pair("enc2", &s1.maxpool2x2()?)?;
                let bt = self.conv_relu_pair("bottleneck", &s2.maxpool2x2()?)?;
                self.decode(&bt, &s2, &s1)
            }
            Arch::FcsiamDiffMini => {
                let (a1, a2, ap) = self.encode_stream(&a)?;
                let (b1, b2, bp) = self.encode_stream(&b)?;
                let d1 = a1.sub(&b1)?.abs();
                let d2 = a2.sub(&b2)?.abs();
                let dp = ap.sub(&bp)?.abs();
                let bt = self.conv_relu_pair("bottleneck", &dp)?;
                self.decode(&bt, &d2, &d1)
            }
        }
    }

    fn encode_stream(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let s1 = self.conv_relu_pair("enc1", x)?;
        let s2 = self.conv_relu_pair("enc2", &s1.maxpool2x2()?)?;
        let pooled = s2.maxpool2x2()?;
        Ok((s1, s2, pooled))
    }
}

fn as_batched<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    match x.shape() {
        [c, h, w] => x.reshape(&[1, *c, *h, *w]),
        [1, _, _, _] => Ok(x.clone()),
        other => Err(Error::shape(
            "forward",
            format!("expected [3,H,W] or [1,3,H,W] input, got {other:?}"),
        )),
    }
}

/// Result of a forward pass: pre-sigmoid logits and the change probability
/// field, both `[1, 1, H, W]` nodes in the same graph.
pub struct ModelOutput<T: Scalar> {
    pub logits: Tensor<T>,
    pub prob: Tensor<T>,
}

impl<T: Scalar> ModelOutput<T> {
    /// Detached per-pixel change probabilities.
    pub fn change_map(&self) -> ChangeMap {
        let shape = self.prob.shape();
        let (h, w) = (shape[2], shape[3]);
        ChangeMap {
            h,
            w,
            values: self.prob.data().iter().map(|v| v.to_f64()).collect(),
        }
    }
}

/// Per-pixel change probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl ChangeMap {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::shape(
                "ChangeMap",
                format!("{}x{} wants {} values, got {}", h, w, h * w, values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!(
                "change map value {v} outside [0, 1]"
            )));
        }
        Ok(ChangeMap { h, w, values })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Strictly binary H x W mask; 1 marks a changed pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::shape(
                "BinaryMask",
                format!("{}x{} wants {} values, got {}", h, w, h * w, values.len()),
            ));
        }
        if values.iter().any(|v| *v > 1) {
            return Err(Error::arg("mask values must be 0 or 1".to_string()));
        }
        Ok(BinaryMask { h, w, values })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            values: vec![0; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|v| **v == 1).count()
    }
}

/// Threshold a change map into a binary mask: `1` where the probability is
/// strictly greater than `threshold`.
pub fn predict_mask(cm: &ChangeMap, threshold: f64) -> BinaryMask {
    BinaryMask {
        h: cm.h,
        w: cm.w,
        values: cm
            .values
            .iter()
            .map(|&v| if v > threshold { 1 } else { 0 })
            .collect(),
    }
}

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
