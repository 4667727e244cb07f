//! The recurrent colorization network.
//!
//! A `T×H×W×1` luminance window flows through five components:
//!
//! 1. a six-layer convolutional encoder applied to each frame (`T×H/8×W/8×C`),
//! 2. a frozen global extractor giving one embedding per frame (`T×G`),
//! 3. a two-layer LSTM over the spatially pooled encodings (`T×S`),
//! 4. a fusion layer that tiles the global and temporal vectors over the
//!    `H/8×W/8` grid, concatenates them with the encoding (`C+G+S` channels)
//!    and projects back to `C` channels with a 1×1 convolution,
//! 5. a decoder of three conv + 2× upsample stages and a final `tanh` conv
//!    producing normalized a*b* (`T×H×W×2`).
//!
//! Encoder, extractor, fusion and decoder see one frame at a time; only the
//! LSTM mixes information across frames.

mod checkpoint;
mod config;
mod extractor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use extractor::{GlobalExtractor, RandomProjectionExtractor};

use crate::nn::{Activation, ConvLayer, FanInUniform, ParamStore, StackedLstm};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("luminance input must lie in [0, 1], found {0}")]
    InputRange(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

const LSTM_DEPTH: usize = 2;

/// Intermediate shapes and values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoded: Tensor,
    pub global: Tensor,
    pub temporal: Tensor,
    /// Concatenated fusion input for each frame.
    pub fusion_inputs: Vec<Tensor>,
    pub fused: Tensor,
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct FlowChromaModel {
    config: ModelConfig,
    params: ParamStore,
    encoder: Vec<ConvLayer>,
    lstm: StackedLstm,
    fusion: ConvLayer,
    decoder: Vec<ConvLayer>,
    extractor: Box<dyn GlobalExtractor>,
}

impl FlowChromaModel {
    /// Builds a model with fan-in uniform weights from `config.init_seed` and
    /// the random-projection extractor seeded by `config.extractor_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let extractor =
            RandomProjectionExtractor::new(config.global_dim, u64::from(config.extractor_seed));
        Self::with_extractor(config, Box::new(extractor))
    }

    pub fn with_extractor(
        config: ModelConfig,
        extractor: Box<dyn GlobalExtractor>,
    ) -> Result<Self> {
        config.validate()?;
        if extractor.output_dim() != config.global_dim {
            return Err(ModelError::Config(format!(
                "extractor produces {} features but global_dim is {}",
                extractor.output_dim(),
                config.global_dim
            )));
        }
        let mut params = ParamStore::new();
        let mut init = FanInUniform::new(u64::from(config.init_seed));
        let strides = [2, 1, 2, 1, 2, 1];
        let mut cin = 1;
        let encoder = config
            .encoder_widths()
            .iter()
            .zip(strides)
            .enumerate()
            .map(|(i, (&cout, stride))| {
                let layer = ConvLayer::new(
                    &mut params,
                    &mut init,
                    &format!("encoder.{i}"),
                    3,
                    cin,
                    cout,
                    stride,
                    Activation::Relu,
                    false,
                );
                cin = cout;
                layer
            })
            .collect();
        let lstm = StackedLstm::new(
            &mut params,
            &mut init,
            "lstm",
            config.encoder_channels,
            config.lstm_hidden,
            LSTM_DEPTH,
        );
        let fusion = ConvLayer::new(
            &mut params,
            &mut init,
            "fusion",
            1,
            config.fusion_channels(),
            config.encoder_channels,
            1,
            Activation::Relu,
            false,
        );
        let mut cin = config.encoder_channels;
        let mut decoder: Vec<ConvLayer> = config
            .decoder_widths()
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let layer = ConvLayer::new(
                    &mut params,
                    &mut init,
                    &format!("decoder.{i}"),
                    3,
                    cin,
                    cout,
                    1,
                    Activation::Relu,
                    false,
                );
                cin = cout;
                layer
            })
            .collect();
        decoder.push(ConvLayer::new(
            &mut params,
            &mut init,
            "decoder.3",
            3,
            cin,
            2,
            1,
            Activation::Tanh,
            false,
        ));
        Ok(FlowChromaModel {
            config,
            params,
            encoder,
            lstm,
            fusion,
            decoder,
            extractor,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn extractor(&self) -> &dyn GlobalExtractor {
        self.extractor.as_ref()
    }

    pub fn extractor_mut(&mut self) -> &mut dyn GlobalExtractor {
        self.extractor.as_mut()
    }

    /// Trainable plus frozen extractor scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count() + self.extractor.parameters().scalar_count()
    }

    fn check_input(&self, lum: &Tensor) -> Result<()> {
        let s = lum.shape();
        let ok = s.len() == 4
            && s[0] >= 1
            && s[1] == self.config.height
            && s[2] == self.config.width
            && s[3] == 1;
        if !ok {
            return Err(ModelError::Shape {
                what: "luminance input",
                expected: vec![self.config.window, self.config.height, self.config.width, 1],
                got: s.to_vec(),
            });
        }
        if let Some(v) = lum.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ModelError::InputRange(*v));
        }
        Ok(())
    }

    fn per_frame(x: &Tensor, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
        let frames = (0..x.shape()[0])
            .map(|t| f(&x.select(t)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&frames)?)
    }

    /// `T×H×W×1 → T×H/8×W/8×C`, same weights for every frame.
    pub fn encode_frames(&self, params: &[Tensor], lum: &Tensor) -> Result<Tensor> {
        self.check_input(lum)?;
        Self::per_frame(lum, |frame| {
            let mut x = frame.clone();
            for layer in &self.encoder {
                x = layer.forward(params, &x)?;
            }
            Ok(x)
        })
    }

    /// `T×H×W×1 → T×G` through the frozen extractor.
    pub fn extract_global(&self, lum: &Tensor) -> Result<Tensor> {
        self.check_input(lum)?;
        let g = self.config.global_dim;
        Self::per_frame(lum, |frame| {
            let e = self.extractor.extract(&frame.detach())?;
            if e.shape() != [g] {
                return Err(ModelError::Shape {
                    what: "global extractor output",
                    expected: vec![g],
                    got: e.shape().to_vec(),
                });
            }
            Ok(e)
        })
    }

    /// Pools each encoding to a `C` vector and runs the stacked LSTM.
    /// The ablated model returns the pooled vectors unchanged.
    pub fn temporal_features(&self, params: &[Tensor], encoded: &Tensor) -> Result<Tensor> {
        let (fh, fw) = self.config.feature_size();
        let c = self.config.encoder_channels;
        let s = encoded.shape();
        if s.len() != 4 || s[1..] != [fh, fw, c] {
            return Err(ModelError::Shape {
                what: "encoded sequence",
                expected: vec![self.config.window, fh, fw, c],
                got: s.to_vec(),
            });
        }
        let pooled = Self::per_frame(encoded, |e| Ok(e.global_avg_pool()?))?;
        if self.config.ablate_lstm {
            return Ok(pooled);
        }
        Ok(self.lstm.forward(params, &pooled)?)
    }

    /// Encoder features with the global and temporal vectors tiled over every position.
    pub fn fusion_input(
        &self,
        encoded: &Tensor,
        global: &Tensor,
        temporal: &Tensor,
    ) -> Result<Tensor> {
        let (fh, fw) = self.config.feature_size();
        let expect = |what, t: &Tensor, shape: Vec<usize>| {
            if t.shape() == shape.as_slice() {
                Ok(())
            } else {
                Err(ModelError::Shape {
                    what,
                    expected: shape,
                    got: t.shape().to_vec(),
                })
            }
        };
        expect(
            "fusion encoder input",
            encoded,
            vec![fh, fw, self.config.encoder_channels],
        )?;
        expect("fusion global input", global, vec![self.config.global_dim])?;
        expect(
            "fusion temporal input",
            temporal,
            vec![self.config.lstm_hidden],
        )?;
        Ok(Tensor::concat(
            &[
                encoded.clone(),
                global.replicate_spatial(fh, fw)?,
                temporal.replicate_spatial(fh, fw)?,
            ],
            2,
        )?)
    }

    /// One frame's fusion: concatenate, then 1×1 projection to `C` channels with ReLU.
    pub fn fuse(
        &self,
        params: &[Tensor],
        encoded: &Tensor,
        global: &Tensor,
        temporal: &Tensor,
    ) -> Result<Tensor> {
        let stacked = self.fusion_input(encoded, global, temporal)?;
        Ok(self.fusion.forward(params, &stacked)?)
    }

    /// `T×H/8×W/8×C → T×H×W×2` in `(-1, 1)`.
    pub fn decode(&self, params: &[Tensor], fused: &Tensor) -> Result<Tensor> {
        let (fh, fw) = self.config.feature_size();
        let s = fused.shape();
        if s.len() != 4 || s[1..] != [fh, fw, self.config.encoder_channels] {
            return Err(ModelError::Shape {
                what: "decoder input",
                expected: vec![self.config.window, fh, fw, self.config.encoder_channels],
                got: s.to_vec(),
            });
        }
        let (last, stages) = self.decoder.split_last().expect("decoder has layers");
        Self::per_frame(fused, |frame| {
            let mut x = frame.clone();
            for layer in stages {
                x = layer.forward(params, &x)?.upsample_nearest2x()?;
            }
            Ok(last.forward(params, &x)?)
        })
    }

    pub fn trace_with(&self, params: &[Tensor], lum: &Tensor) -> Result<ForwardTrace> {
        let encoded = self.encode_frames(params, lum)?;
        let global = self.extract_global(lum)?;
        let temporal = self.temporal_features(params, &encoded)?;
        let mut fusion_inputs = Vec::new();
        let mut fused = Vec::new();
        for t in 0..lum.shape()[0] {
            let (e, g, s) = (encoded.select(t)?, global.select(t)?, temporal.select(t)?);
            let stacked = self.fusion_input(&e, &g, &s)?;
            fused.push(self.fusion.forward(params, &stacked)?);
            fusion_inputs.push(stacked);
        }
        let fused = Tensor::stack(&fused)?;
        let output = self.decode(params, &fused)?;
        Ok(ForwardTrace {
            encoded,
            global,
            temporal,
            fusion_inputs,
            fused,
            output,
        })
    }

    /// Luminance window to normalized chroma, using the given parameter values
    /// (plain for inference, tape-bound for training).
    pub fn forward_with(&self, params: &[Tensor], lum: &Tensor) -> Result<Tensor> {
        let encoded = self.encode_frames(params, lum)?;
        let global = self.extract_global(lum)?;
        let temporal = self.temporal_features(params, &encoded)?;
        let fused = (0..lum.shape()[0])
            .map(|t| {
                self.fuse(
                    params,
                    &encoded.select(t)?,
                    &global.select(t)?,
                    &temporal.select(t)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        self.decode(params, &Tensor::stack(&fused)?)
    }

    pub fn forward(&self, lum: &Tensor) -> Result<Tensor> {
        self.forward_with(&self.params.values(), lum)
    }

    pub fn trace(&self, lum: &Tensor) -> Result<ForwardTrace> {
        self.trace_with(&self.params.values(), lum)
    }
}
