use crate::error::{Error, Result};

/// One training observation of a scalar function.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub input: Vec<f64>,
    pub value: f64,
    /// Gradient with respect to the input, when it was measured.
    pub gradient: Option<Vec<f64>>,
    /// Noise variance of this observation; `None` uses the kernel's `noise_var`.
    pub noise_var: Option<f64>,
}

impl Observation {
    pub fn rows(&self) -> usize {
        1 + self.gradient.as_ref().map_or(0, Vec::len)
    }
}

/// Heterogeneous training set: value-only rows and value+gradient rows.
///
/// The selection of observed components is implicit in the row tags,
/// no selection matrix is stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GpDataset {
    input_dim: usize,
    observations: Vec<Observation>,
}

impl GpDataset {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            observations: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of scalar rows of the Gram matrix.
    pub fn rows(&self) -> usize {
        self.observations.iter().map(Observation::rows).sum()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if obs.input.len() != self.input_dim {
            return Err(Error::InvalidArgument(format!(
                "observation input has dimension {}, dataset expects {}",
                obs.input.len(),
                self.input_dim
            )));
        }
        if let Some(g) = &obs.gradient {
            if g.len() != self.input_dim {
                return Err(Error::InvalidArgument(format!(
                    "gradient has length {}, expected {}",
                    g.len(),
                    self.input_dim
                )));
            }
        }
        if let Some(nv) = obs.noise_var {
            if !(nv >= 0.0) {
                return Err(Error::InvalidArgument(format!("negative noise variance {nv}")));
            }
        }
        let finite = obs.input.iter().chain(std::iter::once(&obs.value)).all(|v| v.is_finite())
            && obs.gradient.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite observation".into()));
        }
        self.observations.push(obs);
        Ok(())
    }

    pub fn push_value(&mut self, input: Vec<f64>, value: f64) -> Result<()> {
        self.push(Observation {
            input,
            value,
            gradient: None,
            noise_var: None,
        })
    }

    pub fn push_value_gradient(&mut self, input: Vec<f64>, value: f64, gradient: Vec<f64>) -> Result<()> {
        self.push(Observation {
            input,
            value,
            gradient: Some(gradient),
            noise_var: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_count_mixes_value_and_gradient_rows() {
        let mut d = GpDataset::new(2);
        d.push_value(vec![0.0, 0.0], 1.0).unwrap();
        d.push_value_gradient(vec![1.0, 0.0], 2.0, vec![0.5, -0.5]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.rows(), 4);
    }

    #[test]
    fn gradient_length_is_checked() {
        let mut d = GpDataset::new(2);
        assert!(d.push_value_gradient(vec![1.0, 0.0], 2.0, vec![0.5]).is_err());
        assert!(d.push_value(vec![1.0], 2.0).is_err());
        assert!(d.push_value(vec![1.0, f64::NAN], 2.0).is_err());
    }
}
