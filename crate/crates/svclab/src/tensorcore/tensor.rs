use serde::{Deserialize, Serialize};

/// Dense row-major tensor. `grad`, when present, has the same length as
/// `values`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "tensor values length must equal the product of its shape"
        );
        Tensor { shape, values, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, values: vec![0.0; len], grad: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Lazily allocates the gradient buffer and returns it.
    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        let len = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_matches_shape() {
        let t = Tensor::zeros(vec![3, 4]);
        assert_eq!(t.len(), 12);
    }

    #[test]
    #[should_panic(expected = "length must equal")]
    fn rejects_inconsistent_shape() {
        Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]);
    }
}
