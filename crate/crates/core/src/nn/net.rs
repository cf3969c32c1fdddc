use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward, relu_in_place, Conv, Dense, InputLayout};
use super::tensor::Tensor;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Convolutional pipeline for stacked semantic views.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualConfig {
    pub channels: usize,
    /// Side of the square input in pixels.
    pub size: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub fc: usize,
}

impl Default for VisualConfig {
    fn default() -> Self {
        Self {
            channels: 12,
            size: 84,
            conv1: ConvSpec {
                filters: 16,
                kernel: 8,
                stride: 4,
            },
            conv2: ConvSpec {
                filters: 32,
                kernel: 4,
                stride: 2,
            },
            fc: 256,
        }
    }
}

/// Two input pipelines merged into one trunk feeding a policy and a value head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub visual: Option<VisualConfig>,
    pub numeric_inputs: usize,
    pub numeric_hidden: usize,
    pub merge_hidden: usize,
    pub actions: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            visual: Some(VisualConfig::default()),
            numeric_inputs: 4,
            numeric_hidden: 64,
            merge_hidden: 256,
            actions: 3,
        }
    }
}

impl NetConfig {
    /// A net without the convolutional pipeline.
    pub fn numeric_only(inputs: usize, hidden: usize, merge: usize, actions: usize) -> Self {
        Self {
            visual: None,
            numeric_inputs: inputs,
            numeric_hidden: hidden,
            merge_hidden: merge,
            actions,
        }
    }

    pub fn visual_len(&self) -> usize {
        self.visual
            .as_ref()
            .map_or(0, |v| v.channels * v.size * v.size)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Resolved layer geometry and the flat parameter layout.
#[derive(Debug, PartialEq)]
pub struct Architecture {
    pub config: NetConfig,
    pub params: Vec<ParamSpec>,
    pub total: usize,
    conv1: Option<Conv>,
    conv2: Option<Conv>,
    fc_visual: Option<Dense>,
    num1: Dense,
    num2: Dense,
    merge: Dense,
    policy: Dense,
    value: Dense,
}

impl Architecture {
    pub fn new(config: NetConfig) -> Result<Self, NnError> {
        let bad = |msg: String| Err(NnError::Config(msg));
        if config.numeric_inputs == 0
            || config.numeric_hidden == 0
            || config.merge_hidden == 0
            || config.actions == 0
        {
            return bad("layer widths must be positive".into());
        }
        let mut params = Vec::new();
        let mut offset = 0;
        let mut push = |name: &str, shape: Vec<usize>| {
            let spec = ParamSpec {
                name: name.to_string(),
                shape,
                offset,
            };
            offset += spec.len();
            params.push(spec);
            offset - params.last().unwrap().len()
        };
        let dense = |name: &str, n_in: usize, n_out: usize, push: &mut dyn FnMut(&str, Vec<usize>) -> usize| {
            let w = push(&format!("{name}.weight"), vec![n_out, n_in]);
            let b = push(&format!("{name}.bias"), vec![n_out]);
            Dense { n_in, n_out, w, b }
        };

        let (conv1, conv2, fc_visual) = match &config.visual {
            Some(v) => {
                for c in [v.conv1, v.conv2] {
                    if c.filters == 0 || c.kernel == 0 || c.stride == 0 {
                        return bad("convolution sizes must be positive".into());
                    }
                }
                if v.channels == 0 || v.fc == 0 || v.size < v.conv1.kernel {
                    return bad(format!("visual input of size {} is too small", v.size));
                }
                let h1 = (v.size - v.conv1.kernel) / v.conv1.stride + 1;
                if h1 < v.conv2.kernel {
                    return bad("first convolution output smaller than the second kernel".into());
                }
                let c1w = push(
                    "conv1.weight",
                    vec![v.channels, v.conv1.kernel, v.conv1.kernel, v.conv1.filters],
                );
                let c1b = push("conv1.bias", vec![v.conv1.filters]);
                let conv1 = Conv {
                    in_c: v.channels,
                    out_c: v.conv1.filters,
                    kernel: v.conv1.kernel,
                    stride: v.conv1.stride,
                    in_h: v.size,
                    in_w: v.size,
                    layout: InputLayout::Chw,
                    w: c1w,
                    b: c1b,
                };
                let c2w = push(
                    "conv2.weight",
                    vec![v.conv1.filters, v.conv2.kernel, v.conv2.kernel, v.conv2.filters],
                );
                let c2b = push("conv2.bias", vec![v.conv2.filters]);
                let conv2 = Conv {
                    in_c: v.conv1.filters,
                    out_c: v.conv2.filters,
                    kernel: v.conv2.kernel,
                    stride: v.conv2.stride,
                    in_h: h1,
                    in_w: h1,
                    layout: InputLayout::Hwc,
                    w: c2w,
                    b: c2b,
                };
                let fc = dense("fc_visual", conv2.out_len(), v.fc, &mut push);
                (Some(conv1), Some(conv2), Some(fc))
            }
            None => (None, None, None),
        };
        let num1 = dense("fc_num1", config.numeric_inputs, config.numeric_hidden, &mut push);
        let num2 = dense("fc_num2", config.numeric_hidden, config.numeric_hidden, &mut push);
        let merged_in = config.numeric_hidden + fc_visual.map_or(0, |d| d.n_out);
        let merge = dense("fc_merge", merged_in, config.merge_hidden, &mut push);
        let policy = dense("policy_head", config.merge_hidden, config.actions, &mut push);
        let value = dense("value_head", config.merge_hidden, 1, &mut push);
        Ok(Self {
            config,
            params,
            total: offset,
            conv1,
            conv2,
            fc_visual,
            num1,
            num2,
            merge,
            policy,
            value,
        })
    }

    fn fan_in(spec: &ParamSpec) -> usize {
        if spec.name.starts_with("conv") {
            spec.shape[0] * spec.shape[1] * spec.shape[2]
        } else {
            spec.shape[1]
        }
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Shared-trunk policy/value network with all parameters in one flat buffer.
#[derive(Debug)]
pub struct PolicyValueNet {
    arch: Arc<Architecture>,
    params: Vec<f64>,
    generation: u64,
}

impl Clone for PolicyValueNet {
    fn clone(&self) -> Self {
        Self {
            arch: Arc::clone(&self.arch),
            params: self.params.clone(),
            generation: self.generation,
        }
    }
}

impl PartialEq for PolicyValueNet {
    fn eq(&self, other: &Self) -> bool {
        self.arch.config == other.arch.config && self.params == other.params
    }
}

/// Gradient buffer congruent with a net's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    arch: Arc<Architecture>,
    data: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &PolicyValueNet) -> Self {
        Self {
            arch: Arc::clone(&net.arch),
            data: vec![0.0; net.arch.total],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Gradient of one named parameter tensor.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let spec = self.arch.params.iter().find(|p| p.name == name)?;
        Some(&self.data[spec.offset..spec.offset + spec.len()])
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<(), NnError> {
        if self.data.len() != other.data.len() {
            return Err(NnError::Shape {
                what: "gradient buffer",
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.data {
            *g *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    visual: Vec<f64>,
    conv1: Vec<f64>,
    conv2: Vec<f64>,
    numeric: Vec<f64>,
    num1: Vec<f64>,
    /// `[fc_visual output, fc_num2 output]`
    merged_in: Vec<f64>,
    merge: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub value: f64,
    pub cache: ForwardCache,
}

impl PolicyValueNet {
    /// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self, NnError> {
        let arch = Architecture::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.total];
        for spec in arch.params.iter().filter(|p| p.name.ends_with(".weight")) {
            let bound = 1.0 / (Architecture::fan_in(spec) as f64).sqrt();
            for w in &mut params[spec.offset..spec.offset + spec.len()] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            arch: Arc::new(arch),
            params,
            generation: next_generation(),
        })
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self, NnError> {
        let arch = Architecture::new(config)?;
        if params.len() != arch.total {
            return Err(NnError::Shape {
                what: "parameter buffer",
                expected: arch.total,
                got: params.len(),
            });
        }
        Ok(Self {
            arch: Arc::new(arch),
            params,
            generation: next_generation(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.arch.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.arch.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access invalidates every cache taken before it.
    /// Whether `cache` was taken with the current parameters.
    pub fn is_current(&self, cache: &ForwardCache) -> bool {
        cache.generation == self.generation
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    /// Copies another net's parameters; configurations must match.
    pub fn copy_from(&mut self, other: &[f64]) -> Result<(), NnError> {
        if other.len() != self.params.len() {
            return Err(NnError::Shape {
                what: "parameter buffer",
                expected: self.params.len(),
                got: other.len(),
            });
        }
        self.params_mut().copy_from_slice(other);
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let spec = self.arch.params.iter().find(|p| p.name == name)?;
        Tensor::from_vec(&spec.shape, self.params[spec.offset..spec.offset + spec.len()].to_vec()).ok()
    }

    pub fn forward(&self, visual: &[f64], numeric: &[f64]) -> Result<Forward, NnError> {
        let a = &*self.arch;
        let p = &self.params;
        if visual.len() != a.config.visual_len() {
            return Err(NnError::Shape {
                what: "visual input",
                expected: a.config.visual_len(),
                got: visual.len(),
            });
        }
        if numeric.len() != a.config.numeric_inputs {
            return Err(NnError::Shape {
                what: "numeric input",
                expected: a.config.numeric_inputs,
                got: numeric.len(),
            });
        }
        let visual_out = a.fc_visual.map_or(0, |d| d.n_out);
        let mut merged_in = vec![0.0; visual_out + a.num2.n_out];
        let (mut c1, mut c2) = (Vec::new(), Vec::new());
        if let (Some(conv1), Some(conv2), Some(fc)) = (a.conv1, a.conv2, a.fc_visual) {
            c1 = vec![0.0; conv1.out_len()];
            conv1.forward(p, visual, &mut c1);
            relu_in_place(&mut c1);
            c2 = vec![0.0; conv2.out_len()];
            conv2.forward(p, &c1, &mut c2);
            relu_in_place(&mut c2);
            fc.forward(p, &c2, &mut merged_in[..visual_out]);
        }
        let mut n1 = vec![0.0; a.num1.n_out];
        a.num1.forward(p, numeric, &mut n1);
        relu_in_place(&mut n1);
        a.num2.forward(p, &n1, &mut merged_in[visual_out..]);
        relu_in_place(&mut merged_in);
        let mut m = vec![0.0; a.merge.n_out];
        a.merge.forward(p, &merged_in, &mut m);
        relu_in_place(&mut m);
        let mut logits = vec![0.0; a.policy.n_out];
        a.policy.forward(p, &m, &mut logits);
        let mut value = [0.0];
        a.value.forward(p, &m, &mut value);
        Ok(Forward {
            logits,
            value: value[0],
            cache: ForwardCache {
                generation: self.generation,
                visual: visual.to_vec(),
                conv1: c1,
                conv2: c2,
                numeric: numeric.to_vec(),
                num1: n1,
                merged_in,
                merge: m,
            },
        })
    }

    /// Adds the gradient of `dlogits·logits + dvalue·value` into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        dlogits: &[f64],
        dvalue: f64,
        grads: &mut Gradients,
    ) -> Result<(), NnError> {
        if cache.generation != self.generation {
            return Err(NnError::StaleCache);
        }
        if dlogits.len() != self.arch.config.actions {
            return Err(NnError::Shape {
                what: "logit gradient",
                expected: self.arch.config.actions,
                got: dlogits.len(),
            });
        }
        if grads.data.len() != self.arch.total {
            return Err(NnError::Shape {
                what: "gradient buffer",
                expected: self.arch.total,
                got: grads.data.len(),
            });
        }
        let a = &*self.arch;
        let p = &self.params;
        let g = &mut grads.data;

        let mut dm = vec![0.0; a.merge.n_out];
        let mut tmp = vec![0.0; a.merge.n_out];
        a.policy.backward(p, &cache.merge, dlogits, g, Some(&mut dm));
        a.value.backward(p, &cache.merge, &[dvalue], g, Some(&mut tmp));
        for (d, t) in dm.iter_mut().zip(&tmp) {
            *d += t;
        }
        relu_backward(&cache.merge, &mut dm);

        let mut dmerged = vec![0.0; cache.merged_in.len()];
        a.merge.backward(p, &cache.merged_in, &dm, g, Some(&mut dmerged));
        relu_backward(&cache.merged_in, &mut dmerged);
        let visual_out = a.fc_visual.map_or(0, |d| d.n_out);

        let mut dn1 = vec![0.0; a.num1.n_out];
        a.num2.backward(p, &cache.num1, &dmerged[visual_out..], g, Some(&mut dn1));
        relu_backward(&cache.num1, &mut dn1);
        a.num1.backward(p, &cache.numeric, &dn1, g, None);

        if let (Some(conv1), Some(conv2), Some(fc)) = (a.conv1, a.conv2, a.fc_visual) {
            let mut dc2 = vec![0.0; conv2.out_len()];
            fc.backward(p, &cache.conv2, &dmerged[..visual_out], g, Some(&mut dc2));
            relu_backward(&cache.conv2, &mut dc2);
            let mut dc1 = vec![0.0; conv1.out_len()];
            conv2.backward(p, &cache.conv1, &dc2, g, Some(&mut dc1));
            relu_backward(&cache.conv1, &mut dc1);
            conv1.backward(p, &cache.visual, &dc1, g, None);
        }
        Ok(())
    }

    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &[f64],
        dvalue: f64,
    ) -> Result<Gradients, NnError> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, dlogits, dvalue, &mut grads)?;
        Ok(grads)
    }
}
