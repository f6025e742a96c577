//! Model architecture description and shape planning.
//!
//! A [`ModelSpec`] is the serialisable recipe for a model: input image shape,
//! class count, init seed and an ordered list of layers. Planning walks the
//! layer list once, checks dimensional consistency (reporting the *first*
//! offending layer) and assigns every parameterised layer its slice of the
//! flat parameter vector.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Fully connected layer; accepts flat input (spatial input of matching
    /// total size is flattened implicitly, row-major H,W,C).
    Dense { inputs: usize, outputs: usize },
    /// 3x3-style valid convolution, stride 1, square kernel.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input: InputShape,
    pub classes: u32,
    /// Seed for deterministic parameter initialisation.
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
}

/// Activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Spatial { h, w, c } => h * w * c,
            Shape::Flat(d) => d,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Spatial { h, w, c } => write!(f, "{h}x{w}x{c}"),
            Shape::Flat(d) => write!(f, "flat {d}"),
        }
    }
}

/// One planned layer: its spec, resolved shapes and parameter slice.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    /// Offset into the flat parameter vector; `params` values long.
    pub offset: usize,
    pub params: usize,
}

impl LayerPlan {
    /// Fan-in used for Kaiming-uniform initialisation.
    pub fn fan_in(&self) -> usize {
        match self.spec {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }
}

fn mismatch(index: usize, spec: &LayerSpec, expected: String, found: &Shape) -> Error {
    Error::ShapeMismatch {
        index,
        kind: spec.kind().to_string(),
        expected,
        found: found.to_string(),
    }
}

/// Validates the spec and lays out parameters. Errors name the first
/// inconsistent layer.
pub fn plan_layers(spec: &ModelSpec) -> Result<Vec<LayerPlan>> {
    if spec.classes < 2 {
        return Err(Error::Config("model needs at least 2 classes".into()));
    }
    if spec.input.height == 0 || spec.input.width == 0 || spec.input.channels == 0 {
        return Err(Error::Config("model input shape has a zero dimension".into()));
    }
    if spec.layers.is_empty() {
        return Err(Error::Config("model has no layers".into()));
    }
    let mut shape = Shape::Spatial {
        h: spec.input.height,
        w: spec.input.width,
        c: spec.input.channels,
    };
    let mut plans = Vec::with_capacity(spec.layers.len());
    let mut offset = 0usize;
    for (index, layer) in spec.layers.iter().enumerate() {
        let (output, params) = match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Config(format!(
                        "layer {index} (dense): zero-sized dimension"
                    )));
                }
                if shape.size() != inputs {
                    return Err(mismatch(index, layer, format!("flat {inputs}"), &shape));
                }
                (Shape::Flat(outputs), inputs * outputs + outputs)
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 {
                    return Err(Error::Config(format!(
                        "layer {index} (conv2d): zero-sized dimension"
                    )));
                }
                match shape {
                    Shape::Spatial { h, w, c }
                        if c == in_channels && h >= kernel && w >= kernel =>
                    {
                        (
                            Shape::Spatial {
                                h: h - kernel + 1,
                                w: w - kernel + 1,
                                c: out_channels,
                            },
                            out_channels * in_channels * kernel * kernel + out_channels,
                        )
                    }
                    _ => {
                        return Err(mismatch(
                            index,
                            layer,
                            format!(">= {kernel}x{kernel} spatial with {in_channels} channels"),
                            &shape,
                        ))
                    }
                }
            }
            LayerSpec::Relu => (shape, 0),
            LayerSpec::Flatten => (Shape::Flat(shape.size()), 0),
        };
        plans.push(LayerPlan {
            spec: layer.clone(),
            input: shape,
            output,
            offset,
            params,
        });
        offset += params;
        shape = output;
    }
    if shape.size() != spec.classes as usize || !matches!(shape, Shape::Flat(_)) {
        return Err(Error::Config(format!(
            "model output is {shape}, expected flat {} (one logit per class)",
            spec.classes
        )));
    }
    Ok(plans)
}

pub fn param_count(plans: &[LayerPlan]) -> usize {
    plans.last().map_or(0, |p| p.offset + p.params)
}
