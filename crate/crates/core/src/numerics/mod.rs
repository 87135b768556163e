//! Dense numeric core: tensors, affine/activation kernels, batch
//! normalization, Adam, Xavier initialization and gradient checking.

mod adam;
mod batchnorm;
mod gradcheck;
mod init;
mod layers;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, Param};
pub use batchnorm::{batch_norm, BatchNorm, BatchNormCache, BatchNormMode, BatchNormState};
pub use gradcheck::{check_module_gradients, grad_check, jitter_params};
pub use init::{xavier_init, xavier_uniform};
pub use layers::{
    affine_backward, affine_forward, relu, relu_backward, sigmoid, softmax, softmax_rows,
    softmax_rows_backward, Linear,
};
pub use tensor::Tensor2;

use crate::error::Result;

pub type ParamSink<'a> = Vec<(String, &'a mut Param)>;
pub type BufferSink<'a> = Vec<(String, &'a mut Tensor2)>;

/// Anything owning trainable parameters.
///
/// Parameter names are dotted paths and must be stable: checkpoints key on them.
pub trait Module {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>);

    /// Non-trainable state that still belongs in a checkpoint.
    fn visit_buffers<'a>(&'a mut self, _prefix: &str, _sink: &mut BufferSink<'a>) {}

    fn params(&mut self) -> ParamSink<'_> {
        let mut sink = Vec::new();
        self.visit_params("", &mut sink);
        sink
    }

    fn buffers(&mut self) -> BufferSink<'_> {
        let mut sink = Vec::new();
        self.visit_buffers("", &mut sink);
        sink
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }

    fn adam_step(&mut self) -> Result<()> {
        for (_, p) in self.params() {
            p.step()?;
        }
        Ok(())
    }

    fn set_adam_config(&mut self, config: AdamConfig) {
        for (_, p) in self.params() {
            p.set_adam_config(config);
        }
    }

    fn param_count(&mut self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }
}
