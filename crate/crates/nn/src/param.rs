use serde::{Deserialize, Serialize};

/// A named parameter or state buffer.
///
/// Buffers (batch-norm running statistics) carry `trainable == false` and are
/// skipped by the optimizer but stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub trainable: bool,
    #[serde(skip)]
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param {
            name: name.into(),
            shape,
            value,
            trainable: true,
            grad,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        Param {
            trainable: false,
            grad: Vec::new(),
            ..Param::new(name, shape, value)
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub(crate) fn ensure_grad(&mut self) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
    }

    pub fn zero_grad(&mut self) {
        if self.grad.len() != self.value.len() && self.trainable {
            self.grad = vec![0.0; self.value.len()];
        }
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Access to every parameter and buffer of a module, in a stable order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_trainable(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.len())
            .sum()
    }

    /// Snapshot of all values, suitable for serialization.
    fn state_dict(&self) -> Vec<Param> {
        self.params()
            .into_iter()
            .map(|p| Param {
                grad: Vec::new(),
                ..p.clone()
            })
            .collect()
    }

    fn load_state_dict(&mut self, state: &[Param]) -> crate::Result<()> {
        let mut targets = self.params_mut();
        if targets.len() != state.len() {
            return Err(crate::NnError::Shape(format!(
                "state dict has {} entries, module has {}",
                state.len(),
                targets.len()
            )));
        }
        for (dst, src) in targets.iter_mut().zip(state) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(crate::NnError::Shape(format!(
                    "state entry {} {:?} does not match {} {:?}",
                    src.name, src.shape, dst.name, dst.shape
                )));
            }
            dst.value.copy_from_slice(&src.value);
        }
        Ok(())
    }
}
