use ndarray::{Array2, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => super::sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn apply_inplace(self, z: &mut Array2<f64>) {
        if self != Activation::Identity {
            z.mapv_inplace(|v| self.apply(v));
        }
    }

    /// `dout ⊙ act'(out)`.
    pub fn backprop(self, out: &Array2<f64>, dout: &Array2<f64>) -> Array2<f64> {
        if self == Activation::Identity {
            return dout.clone();
        }
        let mut dz = dout.clone();
        Zip::from(&mut dz)
            .and(out)
            .for_each(|d, &y| *d *= self.grad_from_output(y));
        dz
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}
