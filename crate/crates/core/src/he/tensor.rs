use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::HeError;

/// Layout of an encrypted payload. Vectors and matrices are stored row-major,
/// one independent slot per scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of `self * rhs` under the supported products: scalar scaling,
    /// matrix·vector, matrix·matrix and vector·vector (dot).
    pub fn product(self, rhs: Shape) -> Result<Shape, HeError> {
        let mismatch = || HeError::ShapeMismatch {
            op: "mul",
            left: self,
            right: rhs,
        };
        match (self, rhs) {
            (Shape::Scalar, s) | (s, Shape::Scalar) => Ok(s),
            (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => Ok(Shape::Vector(r)),
            (Shape::Matrix(r, c), Shape::Matrix(n, k)) if c == n => Ok(Shape::Matrix(r, k)),
            (Shape::Vector(a), Shape::Vector(b)) if a == b => Ok(Shape::Scalar),
            _ => Err(mismatch()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, HeError> {
        if shape.len() != data.len() {
            return Err(HeError::ShapeMismatch {
                op: "construct",
                left: shape,
                right: Shape::Vector(data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: Shape::Scalar,
            data: vec![x],
        }
    }

    pub fn vector(v: &[f64]) -> Self {
        Self {
            shape: Shape::Vector(v.len()),
            data: v.to_vec(),
        }
    }

    pub fn matrix(rows: usize, cols: usize, row_major: &[f64]) -> Result<Self, HeError> {
        Self::new(Shape::Matrix(rows, cols), row_major.to_vec())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn as_scalar(&self) -> Option<f64> {
        (self.shape == Shape::Scalar).then(|| self.data[0])
    }

    pub fn as_vec2(&self) -> Option<Vector2<f64>> {
        (self.shape == Shape::Vector(2)).then(|| Vector2::from_row_slice(&self.data))
    }

    pub fn as_vec3(&self) -> Option<Vector3<f64>> {
        (self.shape == Shape::Vector(3)).then(|| Vector3::from_row_slice(&self.data))
    }

    pub fn as_mat3(&self) -> Option<Matrix3<f64>> {
        (self.shape == Shape::Matrix(3, 3)).then(|| Matrix3::from_row_slice(&self.data))
    }

    pub fn as_mat2x3(&self) -> Option<Matrix2x3<f64>> {
        (self.shape == Shape::Matrix(2, 3)).then(|| Matrix2x3::from_row_slice(&self.data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, HeError> {
        if self.shape != rhs.shape {
            return Err(HeError::ShapeMismatch {
                op: "add",
                left: self.shape,
                right: rhs.shape,
            });
        }
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor, HeError> {
        let shape = self.shape.product(rhs.shape)?;
        let data = match (self.shape, rhs.shape) {
            (Shape::Scalar, _) => rhs.data.iter().map(|x| self.data[0] * x).collect(),
            (_, Shape::Scalar) => self.data.iter().map(|x| x * rhs.data[0]).collect(),
            (Shape::Vector(_), Shape::Vector(_)) => {
                vec![self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).sum()]
            }
            (Shape::Matrix(r, c), Shape::Vector(_)) => (0..r)
                .map(|i| (0..c).map(|k| self.data[i * c + k] * rhs.data[k]).sum())
                .collect(),
            (Shape::Matrix(r, c), Shape::Matrix(_, m)) => {
                let mut out = Vec::with_capacity(r * m);
                for i in 0..r {
                    for j in 0..m {
                        out.push((0..c).map(|k| self.data[i * c + k] * rhs.data[k * m + j]).sum());
                    }
                }
                out
            }
            _ => unreachable!("shape checked above"),
        };
        Ok(Tensor { shape, data })
    }
}

impl From<Vector3<f64>> for Tensor {
    fn from(v: Vector3<f64>) -> Self {
        Tensor::vector(v.as_slice())
    }
}

impl From<Vector2<f64>> for Tensor {
    fn from(v: Vector2<f64>) -> Self {
        Tensor::vector(v.as_slice())
    }
}

impl From<Matrix3<f64>> for Tensor {
    fn from(m: Matrix3<f64>) -> Self {
        Tensor {
            shape: Shape::Matrix(3, 3),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl From<Matrix2x3<f64>> for Tensor {
    fn from(m: Matrix2x3<f64>) -> Self {
        Tensor {
            shape: Shape::Matrix(2, 3),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl From<f64> for Tensor {
    fn from(x: f64) -> Self {
        Tensor::scalar(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nalgebra_roundtrip_is_row_major() {
        let m = Matrix2x3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        let t = Tensor::from(m);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.as_mat2x3(), Some(m));
    }

    #[test]
    fn products() {
        let m = Tensor::matrix(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Tensor::vector(&[4.0, 5.0, 6.0]);
        assert_eq!(m.mul(&v).unwrap(), Tensor::vector(&[4.0, 6.0]));
        assert_eq!(v.mul(&v).unwrap(), Tensor::scalar(77.0));
        assert_eq!(Tensor::scalar(2.0).mul(&v).unwrap(), Tensor::vector(&[8.0, 10.0, 12.0]));
        assert!(v.mul(&m).is_err());
        assert!(Tensor::vector(&[1.0, 2.0]).mul(&v).is_err());
    }
}
