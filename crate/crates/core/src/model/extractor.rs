use std::fmt;

use crate::nn::{Activation, ConvLayer, FanInUniform, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

/// Per-frame semantic embedding of an `H×W×1` luminance frame.
///
/// Implementations must be deterministic. The trainer only supports frozen
/// extractors (`trainable() == false`); their parameters are stored in
/// checkpoints but never updated.
pub trait GlobalExtractor: Send + Sync + fmt::Debug {
    fn output_dim(&self) -> usize;

    fn trainable(&self) -> bool {
        false
    }

    fn extract(&self, frame: &Tensor) -> Result<Tensor>;

    fn parameters(&self) -> &ParamStore;

    fn parameters_mut(&mut self) -> &mut ParamStore;

    fn clone_box(&self) -> Box<dyn GlobalExtractor>;
}

impl Clone for Box<dyn GlobalExtractor> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Frozen random-projection CNN: three stride-4 5×5 convolutions, global
/// average pooling and a dense projection to `output_dim`.
#[derive(Debug, Clone)]
pub struct RandomProjectionExtractor {
    params: ParamStore,
    convs: Vec<ConvLayer>,
    dense_w: ParamId,
    dense_b: ParamId,
    output_dim: usize,
}

const WIDTHS: [usize; 3] = [8, 16, 32];

impl RandomProjectionExtractor {
    pub fn new(output_dim: usize, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut init = FanInUniform::new(seed);
        let mut cin = 1;
        let convs = WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let layer = ConvLayer::new(
                    &mut params,
                    &mut init,
                    &format!("extractor.conv{i}"),
                    5,
                    cin,
                    cout,
                    4,
                    Activation::Relu,
                    true,
                );
                cin = cout;
                layer
            })
            .collect();
        let dense_w = params.add(
            "extractor.dense.weight",
            init.sample(&[cin, output_dim], cin),
            true,
        );
        let dense_b = params.add("extractor.dense.bias", Tensor::zeros(&[output_dim]), true);
        RandomProjectionExtractor {
            params,
            convs,
            dense_w,
            dense_b,
            output_dim,
        }
    }
}

impl GlobalExtractor for RandomProjectionExtractor {
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn extract(&self, frame: &Tensor) -> Result<Tensor> {
        if frame.ndim() != 3 || frame.shape()[2] != 1 {
            return Err(TensorError::InvalidArgument {
                op: "extract",
                msg: format!("expected an H×W×1 frame, got {:?}", frame.shape()),
            });
        }
        let p = self.params.values();
        let mut x = frame.detach();
        for conv in &self.convs {
            x = conv.forward(&p, &x)?;
        }
        let pooled = x.global_avg_pool()?;
        let n = pooled.numel();
        pooled
            .reshape(&[1, n])?
            .matmul(&p[self.dense_w.index()])?
            .reshape(&[self.output_dim])?
            .add(&p[self.dense_b.index()])
    }

    fn parameters(&self) -> &ParamStore {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn clone_box(&self) -> Box<dyn GlobalExtractor> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dim_and_determinism() {
        let e = RandomProjectionExtractor::new(1000, 3);
        let frame = FanInUniform::new(2).sample(&[64, 64, 1], 1);
        let a = e.extract(&frame).unwrap();
        assert_eq!(a.shape(), &[1000]);
        assert_eq!(a, e.extract(&frame).unwrap());
        assert!(e.parameters().iter().all(|p| p.frozen));
    }

    #[test]
    fn rejects_colour_frames() {
        let e = RandomProjectionExtractor::new(4, 3);
        assert!(e.extract(&Tensor::zeros(&[8, 8, 3])).is_err());
    }
}
