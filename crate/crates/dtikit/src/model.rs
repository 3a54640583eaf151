//! Dense patch estimator: flattened P x P x 7 input through tanh hidden
//! layers to a linear P x P x 3 output clamped to [0, 1.5].
//!
//! Checkpoint format: a text header (one `key=value` per line, terminated
//! by a blank line) followed by all weights and biases as little-endian
//! f64, layer by layer, weights row-major then biases. Save/load round
//! trips are bitwise stable.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::Patch;
use crate::mat::Mat;

pub const INPUT_CHANNELS: usize = 7;
pub const OUTPUT_CHANNELS: usize = 3;
/// Final-layer outputs are clamped to this interval; targets live in [0, 1].
pub const OUTPUT_CLAMP: (f64, f64) = (0.0, 1.5);

const CHECKPOINT_MAGIC: &str = "dtikit-checkpoint-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::format(format!("unknown activation tag {other:?}"))),
        }
    }

    #[inline]
    fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// out x in weight matrix.
    pub w: Mat,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorModel {
    pub patch_size: usize,
    pub activation: Activation,
    pub layers: Vec<DenseLayer>,
    /// Regularizer weight in effect when training finished.
    pub lambda: f64,
    /// Training seed, kept for provenance.
    pub seed: u64,
    pub epochs_trained: usize,
}

impl EstimatorModel {
    /// Widths of every layer boundary, input first, output last.
    pub fn layer_widths(patch_size: usize, hidden: &[usize]) -> Vec<usize> {
        let mut widths = vec![patch_size * patch_size * INPUT_CHANNELS];
        widths.extend_from_slice(hidden);
        widths.push(patch_size * patch_size * OUTPUT_CHANNELS);
        widths
    }

    /// Fresh model with Glorot-uniform weights. Biases start at zero except
    /// the output layer, which starts mid-range so the clamp does not
    /// silence half the outputs at initialization.
    pub fn new(patch_size: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::validation("patch size must be positive"));
        }
        let widths = Self::layer_widths(patch_size, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Mat::zeros(fan_out, fan_in);
            for v in w.data_mut() {
                *v = rng.gen_range(-limit..limit);
            }
            layers.push(DenseLayer {
                w,
                b: vec![0.0; fan_out],
            });
        }
        if let Some(last) = layers.last_mut() {
            for b in last.b.iter_mut() {
                *b = 0.25;
            }
        }
        Ok(EstimatorModel {
            patch_size,
            activation: Activation::Tanh,
            layers,
            lambda: 0.0,
            seed,
            epochs_trained: 0,
        })
    }

    pub fn input_width(&self) -> usize {
        self.patch_size * self.patch_size * INPUT_CHANNELS
    }

    pub fn output_width(&self) -> usize {
        self.patch_size * self.patch_size * OUTPUT_CHANNELS
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.rows() * l.w.cols() + l.b.len())
            .sum()
    }

    fn check_shapes(&self) -> Result<()> {
        let mut width = self.input_width();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.w.cols() != width {
                return Err(Error::validation(format!(
                    "layer {i} expects input width {}, got {width}",
                    layer.w.cols()
                )));
            }
            if layer.b.len() != layer.w.rows() {
                return Err(Error::validation(format!("layer {i} bias length mismatch")));
            }
            width = layer.w.rows();
        }
        if width != self.output_width() {
            return Err(Error::validation(format!(
                "network output width {width} does not match {}",
                self.output_width()
            )));
        }
        Ok(())
    }

    /// Forward pass returning the activations after every layer; index 0 is
    /// the flattened input, the last entry is the clamped output.
    pub(crate) fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.input_width() {
            return Err(Error::validation(format!(
                "input width {} does not match model ({})",
                input.len(),
                self.input_width()
            )));
        }
        self.check_shapes()?;
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.matvec(trace.last().unwrap())?;
            for (zv, bv) in z.iter_mut().zip(layer.b.iter()) {
                *zv += bv;
            }
            let last = i + 1 == self.layers.len();
            if last {
                for v in z.iter_mut() {
                    *v = v.clamp(OUTPUT_CLAMP.0, OUTPUT_CLAMP.1);
                }
            } else {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            trace.push(z);
        }
        Ok(trace)
    }

    /// Maps a 7-channel input patch to a 3-channel metric patch.
    pub fn forward(&self, input: &Patch) -> Result<Patch> {
        if input.size() != self.patch_size || input.channels() != INPUT_CHANNELS {
            return Err(Error::validation(format!(
                "input patch {}x{}x{} does not match model (P={}, C={})",
                input.size(),
                input.size(),
                input.channels(),
                self.patch_size,
                INPUT_CHANNELS
            )));
        }
        let trace = self.forward_trace(input.data())?;
        Patch::from_vec(
            self.patch_size,
            OUTPUT_CHANNELS,
            trace.last().unwrap().clone(),
        )
    }

    /// Backpropagates an output-space gradient through the trace produced
    /// by [`forward_trace`], accumulating parameter gradients.
    ///
    /// The clamp at the output contributes a zero subgradient outside the
    /// open interval.
    pub(crate) fn backprop(
        &self,
        trace: &[Vec<f64>],
        grad_out: &[f64],
        grads: &mut [DenseLayer],
    ) -> Result<()> {
        let n_layers = self.layers.len();
        let mut delta: Vec<f64> = grad_out.to_vec();
        // Clamp subgradient at the final layer.
        for (d, &y) in delta.iter_mut().zip(trace[n_layers].iter()) {
            if y <= OUTPUT_CLAMP.0 || y >= OUTPUT_CLAMP.1 {
                *d = 0.0;
            }
        }
        for li in (0..n_layers).rev() {
            let input = &trace[li];
            let grad = &mut grads[li];
            for (o, &d) in delta.iter().enumerate() {
                grad.b[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row_start = o * input.len();
                let row = &mut grad.w.data_mut()[row_start..row_start + input.len()];
                for (wv, &x) in row.iter_mut().zip(input.iter()) {
                    *wv += d * x;
                }
            }
            if li == 0 {
                break;
            }
            // delta for the previous layer: W^T delta composed with the
            // activation derivative at its output.
            let w = &self.layers[li].w;
            let mut prev = vec![0.0; w.cols()];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = w.row(o);
                for (p, &wv) in prev.iter_mut().zip(row.iter()) {
                    *p += d * wv;
                }
            }
            for (p, &y) in prev.iter_mut().zip(trace[li].iter()) {
                *p *= self.activation.derivative_from_output(y);
            }
            delta = prev;
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> Vec<DenseLayer> {
        self.layers
            .iter()
            .map(|l| DenseLayer {
                w: Mat::zeros(l.w.rows(), l.w.cols()),
                b: vec![0.0; l.b.len()],
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let widths: Vec<String> = {
            let mut w = vec![self.layers[0].w.cols().to_string()];
            w.extend(self.layers.iter().map(|l| l.w.rows().to_string()));
            w
        };
        let param_count = self.parameter_count();
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        out.push_str(&format!("patch={}\n", self.patch_size));
        out.push_str(&format!("in_channels={INPUT_CHANNELS}\n"));
        out.push_str(&format!("out_channels={OUTPUT_CHANNELS}\n"));
        out.push_str(&format!("activation={}\n", self.activation.as_str()));
        out.push_str(&format!("widths={}\n", widths.join(",")));
        out.push_str(&format!("lambda={:e}\n", self.lambda));
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("epochs={}\n", self.epochs_trained));
        out.push_str(&format!("params_f64le={param_count}\n"));
        out.push('\n');
        let mut bytes = out.into_bytes();
        bytes.reserve(param_count * 8);
        for layer in &self.layers {
            for v in layer.w.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            for v in &layer.b {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        // Header = everything up to the first blank line, ASCII text.
        let sep = find_blank_line(bytes)
            .ok_or_else(|| Error::format("checkpoint header terminator not found"))?;
        let header = std::str::from_utf8(&bytes[..sep])
            .map_err(|_| Error::format("checkpoint header is not UTF-8"))?;
        let payload = &bytes[sep + 2..];

        let mut lines = header.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::format("not a dtikit checkpoint"));
        }
        let mut patch = None;
        let mut activation = None;
        let mut widths: Option<Vec<usize>> = None;
        let mut lambda = 0.0f64;
        let mut seed = 0u64;
        let mut epochs = 0usize;
        let mut params = None;
        for line in lines {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("bad checkpoint header line {line:?}")))?;
            match key {
                "patch" => patch = Some(parse_usize(value)?),
                "in_channels" => {
                    if parse_usize(value)? != INPUT_CHANNELS {
                        return Err(Error::format("checkpoint input channel count mismatch"));
                    }
                }
                "out_channels" => {
                    if parse_usize(value)? != OUTPUT_CHANNELS {
                        return Err(Error::format("checkpoint output channel count mismatch"));
                    }
                }
                "activation" => activation = Some(Activation::parse(value)?),
                "widths" => {
                    widths = Some(
                        value
                            .split(',')
                            .map(parse_usize)
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "lambda" => {
                    lambda = value
                        .parse()
                        .map_err(|_| Error::format("bad lambda in checkpoint"))?
                }
                "seed" => {
                    seed = value
                        .parse()
                        .map_err(|_| Error::format("bad seed in checkpoint"))?
                }
                "epochs" => epochs = parse_usize(value)?,
                "params_f64le" => params = Some(parse_usize(value)?),
                other => return Err(Error::format(format!("unknown checkpoint key {other:?}"))),
            }
        }
        let patch = patch.ok_or_else(|| Error::format("checkpoint missing patch size"))?;
        let activation = activation.ok_or_else(|| Error::format("checkpoint missing activation"))?;
        let widths = widths.ok_or_else(|| Error::format("checkpoint missing widths"))?;
        let params = params.ok_or_else(|| Error::format("checkpoint missing parameter count"))?;
        if patch == 0 || widths.len() < 2 {
            return Err(Error::format("degenerate checkpoint architecture"));
        }
        if widths[0] != patch * patch * INPUT_CHANNELS
            || *widths.last().unwrap() != patch * patch * OUTPUT_CHANNELS
        {
            return Err(Error::format("checkpoint widths disagree with patch size"));
        }
        let mut expect = 0usize;
        for pair in widths.windows(2) {
            expect = expect
                .checked_add(
                    pair[0]
                        .checked_mul(pair[1])
                        .and_then(|p| p.checked_add(pair[1]))
                        .ok_or_else(|| Error::format("checkpoint widths overflow"))?,
                )
                .ok_or_else(|| Error::format("checkpoint widths overflow"))?;
        }
        if expect != params {
            return Err(Error::format(format!(
                "checkpoint declares {params} parameters, architecture needs {expect}"
            )));
        }
        let expected_bytes = params
            .checked_mul(8)
            .ok_or_else(|| Error::format("checkpoint payload overflow"))?;
        if payload.len() != expected_bytes {
            return Err(Error::format(format!(
                "checkpoint payload is {} bytes, expected {expected_bytes}",
                payload.len()
            )));
        }
        let mut cursor = 0usize;
        let mut read_f64s = |count: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let chunk = &payload[cursor..cursor + 8];
                out.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                cursor += 8;
            }
            out
        };
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = Mat::from_vec(fan_out, fan_in, read_f64s(fan_out * fan_in))?;
            let b = read_f64s(fan_out);
            layers.push(DenseLayer { w, b });
        }
        let model = EstimatorModel {
            patch_size: patch,
            activation,
            layers,
            lambda,
            seed,
            epochs_trained: epochs,
        };
        if model.layers.iter().any(|l| !l.w.is_finite() || l.b.iter().any(|v| !v.is_finite())) {
            return Err(Error::validation("checkpoint weights contain non-finite values"));
        }
        model.check_shapes()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(format!("bad integer {s:?} in checkpoint")))
}

/// Index of the first byte of the `\n\n` header terminator.
fn find_blank_line(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n")
}
