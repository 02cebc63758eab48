use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One stage of a feed-forward network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Stage {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Flatten,
    SoftmaxLogits,
}

/// Shape of the activation flowing between stages.
///
/// Spatial activations are stored height-major, channel-last (`h, w, c`);
/// `flatten` keeps that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActShape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Spatial { h, w, c } => h * w * c,
            ActShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
}

/// A parameter tensor implied by the architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub stage: usize,
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Standard deviation of the He-normal initialisation for this tensor.
    /// Depends only on the architecture.
    pub fn init_std(&self) -> f64 {
        (2.0 / self.fan_in as f64).sqrt()
    }
}

/// Architecture descriptor: fixes the hypothesis class before any data is seen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Input shape as `[c, h, w]` for images or `[d]` for vectors.
    pub input: Vec<usize>,
    pub stages: Vec<Stage>,
    pub classes: usize,
}

impl ArchSpec {
    pub fn input_shape(&self) -> Result<ActShape> {
        match self.input.as_slice() {
            [d] if *d > 0 => Ok(ActShape::Flat(*d)),
            [c, h, w] if *c > 0 && *h > 0 && *w > 0 => Ok(ActShape::Spatial {
                h: *h,
                w: *w,
                c: *c,
            }),
            other => Err(Error::InvalidArch(format!("bad input shape {other:?}"))),
        }
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Type-checks the stage chain and returns the activation shape after each stage.
    pub fn shapes(&self) -> Result<Vec<ActShape>> {
        let mut cur = self.input_shape()?;
        let mut out = Vec::with_capacity(self.stages.len());
        let last = self.stages.len().saturating_sub(1);
        for (i, stage) in self.stages.iter().enumerate() {
            cur = stage_output(i, stage, cur)?;
            if matches!(stage, Stage::SoftmaxLogits) && i != last {
                return Err(Error::InvalidArch(format!(
                    "stage {i}: softmax-logits must be the final stage"
                )));
            }
            out.push(cur);
        }
        match cur {
            ActShape::Flat(n) if n == self.classes && n > 0 => Ok(out),
            other => Err(Error::InvalidArch(format!(
                "network output {other:?} does not match {} classes",
                self.classes
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Parameter tensors in storage order: weight then bias for each
    /// parametrised stage. Convolutions are named `conv1, conv2, ...`,
    /// dense layers `fc1, fc2, ...`.
    pub fn params(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let (mut convs, mut fcs) = (0, 0);
        for (i, stage) in self.stages.iter().enumerate() {
            match *stage {
                Stage::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    convs += 1;
                    let fan_in = in_channels * kernel_h * kernel_w;
                    specs.push(ParamSpec {
                        name: format!("conv{convs}.weight"),
                        shape: vec![out_channels, in_channels, kernel_h, kernel_w],
                        role: ParamRole::Weight,
                        stage: i,
                        fan_in,
                    });
                    specs.push(ParamSpec {
                        name: format!("conv{convs}.bias"),
                        shape: vec![out_channels],
                        role: ParamRole::Bias,
                        stage: i,
                        fan_in,
                    });
                }
                Stage::Dense { inputs, outputs } => {
                    fcs += 1;
                    specs.push(ParamSpec {
                        name: format!("fc{fcs}.weight"),
                        shape: vec![outputs, inputs],
                        role: ParamRole::Weight,
                        stage: i,
                        fan_in: inputs,
                    });
                    specs.push(ParamSpec {
                        name: format!("fc{fcs}.bias"),
                        shape: vec![outputs],
                        role: ParamRole::Bias,
                        stage: i,
                        fan_in: inputs,
                    });
                }
                _ => {}
            }
        }
        specs
    }

    /// Weight tensors only (the ones that enter the compressed triplet).
    pub fn weight_params(&self) -> Vec<ParamSpec> {
        self.params()
            .into_iter()
            .filter(|p| p.role == ParamRole::Weight)
            .collect()
    }

    pub fn weight_count(&self) -> usize {
        self.weight_params().iter().map(ParamSpec::len).sum()
    }

    /// LeNet-5 in its common 431k-parameter form:
    /// conv(1→20, 5×5) · pool · conv(20→50, 5×5) · pool · fc(800→500) · fc(500→10).
    pub fn lenet5() -> Self {
        ArchSpec {
            input: vec![1, 28, 28],
            stages: vec![
                conv(1, 20, 5),
                Stage::Relu,
                Stage::MaxPool2d { size: 2, stride: 2 },
                conv(20, 50, 5),
                Stage::Relu,
                Stage::MaxPool2d { size: 2, stride: 2 },
                Stage::Flatten,
                Stage::Dense {
                    inputs: 800,
                    outputs: 500,
                },
                Stage::Relu,
                Stage::Dense {
                    inputs: 500,
                    outputs: 10,
                },
                Stage::SoftmaxLogits,
            ],
            classes: 10,
        }
    }

    /// Small single-convolution network used for label-randomization sweeps.
    pub fn small_conv() -> Self {
        ArchSpec {
            input: vec![1, 28, 28],
            stages: vec![
                conv(1, 16, 5),
                Stage::Relu,
                Stage::MaxPool2d { size: 2, stride: 2 },
                Stage::Flatten,
                Stage::Dense {
                    inputs: 16 * 12 * 12,
                    outputs: 256,
                },
                Stage::Relu,
                Stage::Dense {
                    inputs: 256,
                    outputs: 10,
                },
                Stage::SoftmaxLogits,
            ],
            classes: 10,
        }
    }

    /// Fully connected network `d → hidden... → classes` with ReLU activations.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Self {
        let mut stages = Vec::new();
        let mut width = input;
        for &h in hidden {
            stages.push(Stage::Dense {
                inputs: width,
                outputs: h,
            });
            stages.push(Stage::Relu);
            width = h;
        }
        stages.push(Stage::Dense {
            inputs: width,
            outputs: classes,
        });
        stages.push(Stage::SoftmaxLogits);
        ArchSpec {
            input: vec![input],
            stages,
            classes,
        }
    }

    /// Looks up one of the built-in architectures by name.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "lenet5" => Some(Self::lenet5()),
            "small-conv" => Some(Self::small_conv()),
            _ => None,
        }
    }
}

fn conv(cin: usize, cout: usize, k: usize) -> Stage {
    Stage::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel_h: k,
        kernel_w: k,
        stride: 1,
        padding: 0,
    }
}

fn stage_output(i: usize, stage: &Stage, input: ActShape) -> Result<ActShape> {
    let mismatch = |what: &str| Error::InvalidArch(format!("stage {i} ({stage:?}): {what}, got {input:?}"));
    match *stage {
        Stage::Dense { inputs, outputs } => match input {
            ActShape::Flat(n) if n == inputs && outputs > 0 => Ok(ActShape::Flat(outputs)),
            _ => Err(mismatch(&format!("expects flat input of {inputs}"))),
        },
        Stage::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        } => match input {
            ActShape::Spatial { h, w, c } if c == in_channels => {
                if stride == 0 || kernel_h == 0 || kernel_w == 0 || out_channels == 0 {
                    return Err(mismatch("degenerate kernel"));
                }
                let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                if ph < kernel_h || pw < kernel_w {
                    return Err(mismatch("kernel larger than padded input"));
                }
                Ok(ActShape::Spatial {
                    h: (ph - kernel_h) / stride + 1,
                    w: (pw - kernel_w) / stride + 1,
                    c: out_channels,
                })
            }
            _ => Err(mismatch(&format!("expects spatial input with {in_channels} channels"))),
        },
        Stage::Relu => Ok(input),
        Stage::MaxPool2d { size, stride } => match input {
            ActShape::Spatial { h, w, c } if size > 0 && stride > 0 && h >= size && w >= size => {
                Ok(ActShape::Spatial {
                    h: (h - size) / stride + 1,
                    w: (w - size) / stride + 1,
                    c,
                })
            }
            _ => Err(mismatch("pooling window does not fit")),
        },
        Stage::Flatten => Ok(ActShape::Flat(input.len())),
        Stage::SoftmaxLogits => match input {
            ActShape::Flat(_) => Ok(input),
            _ => Err(mismatch("logits must be flat")),
        },
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Stage::Dense { inputs, outputs } => write!(f, "dense {inputs} {outputs}"),
            Stage::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => write!(
                f,
                "conv2d {in_channels} {out_channels} {kernel_h} {kernel_w} {stride} {padding}"
            ),
            Stage::Relu => f.write_str("relu"),
            Stage::MaxPool2d { size, stride } => write!(f, "maxpool2d {size} {stride}"),
            Stage::Flatten => f.write_str("flatten"),
            Stage::SoftmaxLogits => f.write_str("softmax-logits"),
        }
    }
}

/// Text descriptor: one stage per line, framed by `input ...` and `classes N`.
///
/// ```text
/// input 1 28 28
/// conv2d 1 20 5 5 1 0
/// relu
/// maxpool2d 2 2
/// flatten
/// dense 2880 10
/// softmax-logits
/// classes 10
/// ```
impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input")?;
        for d in &self.input {
            write!(f, " {d}")?;
        }
        writeln!(f)?;
        for s in &self.stages {
            writeln!(f, "{s}")?;
        }
        writeln!(f, "classes {}", self.classes)
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut input = None;
        let mut classes = None;
        let mut stages = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or_default();
            let nums: Vec<usize> = words
                .map(|w| w.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArch(format!("line {}: {e}", lineno + 1)))?;
            let want = |n: usize| -> Result<()> {
                if nums.len() == n {
                    Ok(())
                } else {
                    Err(Error::InvalidArch(format!(
                        "line {}: `{head}` takes {n} integers, got {}",
                        lineno + 1,
                        nums.len()
                    )))
                }
            };
            match head {
                "input" => {
                    if nums.len() != 1 && nums.len() != 3 {
                        return Err(Error::InvalidArch(format!(
                            "line {}: input takes 1 or 3 dims",
                            lineno + 1
                        )));
                    }
                    input = Some(nums);
                }
                "classes" => {
                    want(1)?;
                    classes = Some(nums[0]);
                }
                "dense" => {
                    want(2)?;
                    stages.push(Stage::Dense {
                        inputs: nums[0],
                        outputs: nums[1],
                    });
                }
                "conv2d" => {
                    want(6)?;
                    stages.push(Stage::Conv2d {
                        in_channels: nums[0],
                        out_channels: nums[1],
                        kernel_h: nums[2],
                        kernel_w: nums[3],
                        stride: nums[4],
                        padding: nums[5],
                    });
                }
                "relu" => {
                    want(0)?;
                    stages.push(Stage::Relu);
                }
                "maxpool2d" => {
                    want(2)?;
                    stages.push(Stage::MaxPool2d {
                        size: nums[0],
                        stride: nums[1],
                    });
                }
                "flatten" => {
                    want(0)?;
                    stages.push(Stage::Flatten);
                }
                "softmax-logits" => {
                    want(0)?;
                    stages.push(Stage::SoftmaxLogits);
                }
                other => {
                    return Err(Error::InvalidArch(format!(
                        "line {}: unknown stage `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        let arch = ArchSpec {
            input: input.ok_or_else(|| Error::InvalidArch("missing `input` line".into()))?,
            stages,
            classes: classes.ok_or_else(|| Error::InvalidArch("missing `classes` line".into()))?,
        };
        arch.validate()?;
        Ok(arch)
    }
}
