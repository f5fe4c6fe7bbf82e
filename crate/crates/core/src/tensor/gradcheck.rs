//! Single-input layer wrappers and a central finite-difference checker for
//! their hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    concat_channels, conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward,
    maxpool2d, maxpool2d_backward, relu, relu_backward, separable_conv2d,
    separable_conv2d_backward, split_channels, Padding, Param, Scalar, Tensor,
};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared in absolute terms.
const REL_FLOOR: f64 = 1e-4;

/// A differentiable map from one tensor to another with owned parameters.
pub trait Layer<T: Scalar> {
    fn name(&self) -> &str;

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>>;

    /// Returns the input gradient and adds parameter gradients into the
    /// parameters' accumulators.
    fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Which coordinate produced `max_rel_error`.
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = e;
            self.worst = format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", what());
        }
    }
}

/// Compares analytic gradients of `⟨layer(x), r⟩` (with a seeded random
/// probe `r`) against central differences with step [`FD_STEP`], over every
/// input element and every parameter element.
pub fn grad_check<L: Layer<f64> + ?Sized>(layer: &mut L, input: &Tensor<f64>, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = layer.forward(input)?;
    let probe = Tensor::from_fn(out.dims(), |_, _, _, _| rng.gen_range(-1.0..1.0));

    for p in layer.params_mut() {
        p.zero_grad();
    }
    let grad_in = layer.backward(input, &probe)?;
    let param_grads: Vec<Tensor<f64>> = layer.params_mut().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let name = layer.name().to_string();

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let plus = layer.forward(&x)?.dot(&probe)?;
        x.data_mut()[i] = orig - FD_STEP;
        let minus = layer.forward(&x)?.dot(&probe)?;
        x.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        report.record(|| format!("{name}: input[{i}]"), grad_in.data()[i], numeric);
    }

    for (pi, analytic) in param_grads.iter().enumerate() {
        for j in 0..analytic.len() {
            let orig = layer.params_mut()[pi].value.data()[j];
            layer.params_mut()[pi].value.data_mut()[j] = orig + FD_STEP;
            let plus = layer.forward(input)?.dot(&probe)?;
            layer.params_mut()[pi].value.data_mut()[j] = orig - FD_STEP;
            let minus = layer.forward(input)?.dot(&probe)?;
            layer.params_mut()[pi].value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            report.record(|| format!("{name}: param{pi}[{j}]"), analytic.data()[j], numeric);
        }
    }
    Ok(report)
}

pub struct ConvLayer<T> {
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: Padding,
}

impl<T: Scalar> Layer<T> for ConvLayer<T> {
    fn name(&self) -> &str {
        "conv2d"
    }
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(input, &self.kernel.value, &self.bias.value, self.stride, self.padding)
    }
    fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = conv2d_backward(input, &self.kernel.value, grad_out, self.stride, self.padding)?;
        self.kernel.accumulate(&g.kernel)?;
        self.bias.accumulate(&g.bias)?;
        Ok(g.input)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

pub struct SeparableLayer<T> {
    pub depthwise: Param<T>,
    pub pointwise: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: Padding,
}

impl<T: Scalar> Layer<T> for SeparableLayer<T> {
    fn name(&self) -> &str {
        "separable_conv2d"
    }
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        separable_conv2d(
            input,
            &self.depthwise.value,
            &self.pointwise.value,
            &self.bias.value,
            self.stride,
            self.padding,
        )
    }
    fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = separable_conv2d_backward(
            input,
            &self.depthwise.value,
            &self.pointwise.value,
            grad_out,
            self.stride,
            self.padding,
        )?;
        self.depthwise.accumulate(&g.depthwise)?;
        self.pointwise.accumulate(&g.pointwise)?;
        self.bias.accumulate(&g.bias)?;
        Ok(g.input)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.depthwise, &mut self.pointwise, &mut self.bias]
    }
}

pub struct TransposeLayer<T> {
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub out_hw: Option<(usize, usize)>,
}

impl<T: Scalar> Layer<T> for TransposeLayer<T> {
    fn name(&self) -> &str {
        "conv2d_transpose"
    }
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_transpose(input, &self.kernel.value, &self.bias.value, self.stride, self.out_hw)
    }
    fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (gi, gk, gb) = conv2d_transpose_backward(input, &self.kernel.value, grad_out, self.stride)?;
        self.kernel.accumulate(&gk)?;
        self.bias.accumulate(&gb)?;
        Ok(gi)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

pub struct MaxPoolLayer;

impl<T: Scalar> Layer<T> for MaxPoolLayer {
    fn name(&self) -> &str {
        "maxpool2d"
    }
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(maxpool2d(input)?.output)
    }
    fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let p = maxpool2d(input)?;
        maxpool2d_backward(input.dims(), &p.argmax, grad_out)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

pub struct ReluLayer;

impl<T: Scalar> Layer<T> for ReluLayer {
    fn name(&self) -> &str {
        "relu"
    }
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu(input))
    }
    fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        relu_backward(input, grad_out)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

/// Concatenates the input with a second operand held as a parameter, so
/// both halves of the gradient split get checked.
pub struct ConcatLayer<T> {
    pub other: Param<T>,
}

impl<T: Scalar> Layer<T> for ConcatLayer<T> {
    fn name(&self) -> &str {
        "concat_channels"
    }
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        concat_channels(input, &self.other.value)
    }
    fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (ga, gb) = split_channels(grad_out, input.dims().c)?;
        self.other.accumulate(&gb)?;
        Ok(ga)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.other]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_pointwise_conv_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = ConvLayer {
            kernel: Param::new(Tensor::from_fn([1, 1, 2, 3], |_, _, _, _| rng.gen_range(-1.0..1.0))),
            bias: Param::new(Tensor::zeros([1, 1, 1, 3])),
            stride: 1,
            padding: Padding::Same,
        };
        let x = Tensor::from_fn([1, 3, 3, 2], |_, _, _, _| rng.gen_range(-1.0..1.0));
        let r = grad_check(&mut layer, &x, 5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.1, 1.0) - 0.1 / 1.1).abs() < 1e-12);
    }
}
