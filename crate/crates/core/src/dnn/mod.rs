//! Distilled policy: a small MLP imitating the NMPC torque output.

pub mod dataset;
pub mod mlp;
pub mod model_io;
pub mod rprop;
pub mod scaler;

use nalgebra::DMatrix;

pub use dataset::{generate_dataset, Dataset, DatasetGrid, DatasetHeader, TrainingSample};
pub use mlp::{Activation, Gradient, MlpNetwork, PackedMlp, DEFAULT_LAYERS};
pub use rprop::{rprop_epoch, train, RpropConfig, RpropState, TrainingReport};
pub use scaler::{MinMax, Scaler};

use crate::controller::Measurements;
use crate::dynamics::Vec3;
use crate::error::{Error, Result};

pub const INPUTS: usize = 12;
pub const OUTPUTS: usize = 3;

/// Scaled training matrices, one sample per column.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(samples: &[TrainingSample], scaler: &Scaler) -> Result<Self> {
        scaler.validate()?;
        if scaler.inputs.len() != INPUTS || scaler.targets.len() != OUTPUTS {
            return Err(Error::InvalidArgument("scaler width does not match samples".into()));
        }
        let n = samples.len();
        let inputs = DMatrix::from_fn(INPUTS, n, |r, c| scaler.inputs.scale_value(r, samples[c].inputs[r]));
        let targets =
            DMatrix::from_fn(OUTPUTS, n, |r, c| scaler.targets.scale_value(r, samples[c].targets[r]));
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Network plus the scaling it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    net: MlpNetwork,
    scaler: Scaler,
    packed: PackedMlp,
}

impl Policy {
    pub fn new(net: MlpNetwork, scaler: Scaler) -> Result<Self> {
        scaler.validate()?;
        if net.input_size() != scaler.inputs.len() || net.output_size() != scaler.targets.len() {
            return Err(Error::InvalidArgument(format!(
                "network {:?} does not match scaler widths {}/{}",
                net.layer_sizes(),
                scaler.inputs.len(),
                scaler.targets.len()
            )));
        }
        let packed = PackedMlp::new(&net);
        Ok(Self { net, scaler, packed })
    }

    pub fn net(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    /// Unscaled network torque for the given measurements.
    pub fn predict(&self, m: &Measurements) -> Vec3 {
        let mut x = m.features();
        for (i, v) in x.iter_mut().enumerate() {
            *v = self.scaler.inputs.scale_value(i, *v);
        }
        let mut y = [0.0; OUTPUTS];
        self.packed.forward_into(&x, &mut y);
        Vec3::from_fn(|i, _| self.scaler.targets.unscale_value(i, y[i]))
    }
}
