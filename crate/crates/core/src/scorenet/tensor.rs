//! Multichannel complex feature maps and the named real-parameter store the
//! network trains over.

use indexmap::IndexMap;
use num_complex::Complex64;

use crate::{Error, Result, SpecGrid};

/// A (channels, n_freq, n_frames) complex feature map, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub n_freq: usize,
    pub n_frames: usize,
    pub data: Vec<Complex64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, n_freq: usize, n_frames: usize) -> Self {
        Self {
            channels,
            n_freq,
            n_frames,
            data: vec![Complex64::ZERO; channels * n_freq * n_frames],
        }
    }

    /// Stacks single-channel grids of equal shape into one map.
    pub fn from_grids(grids: &[&SpecGrid]) -> Result<Self> {
        let first = grids[0];
        let mut map = Self::zeros(grids.len(), first.n_freq(), first.n_frames());
        for (c, g) in grids.iter().enumerate() {
            first.check_same_shape(g)?;
            let base = c * first.len();
            map.data[base..base + first.len()].copy_from_slice(g.data());
        }
        Ok(map)
    }

    /// Extracts one channel as a grid.
    pub fn channel_to_grid(&self, c: usize) -> SpecGrid {
        let plane = self.n_freq * self.n_frames;
        SpecGrid::from_vec(
            self.n_freq,
            self.n_frames,
            self.data[c * plane..(c + 1) * plane].to_vec(),
        )
        .expect("channel plane always forms a valid grid")
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.n_freq * self.n_frames
    }

    #[inline]
    pub fn idx(&self, c: usize, f: usize, t: usize) -> usize {
        (c * self.n_freq + f) * self.n_frames + t
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        (self.n_freq, self.n_frames)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Concatenates two maps of equal spatial shape along the channel axis.
    pub fn concat_channels(&self, other: &FeatureMap) -> Result<Self> {
        if self.spatial_shape() != other.spatial_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.spatial_shape(),
                got: other.spatial_shape(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self {
            channels: self.channels + other.channels,
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            data,
        })
    }

    /// Splits the channel axis at `at`, inverse of [`Self::concat_channels`].
    pub fn split_channels(&self, at: usize) -> (Self, Self) {
        let plane = self.plane();
        let head = Self {
            channels: at,
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            data: self.data[..at * plane].to_vec(),
        };
        let tail = Self {
            channels: self.channels - at,
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            data: self.data[at * plane..].to_vec(),
        };
        (head, tail)
    }
}

/// A named real tensor. Complex parameters use a trailing dimension of 2
/// holding (re, im).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Views consecutive (re, im) pairs as complex values.
    pub fn as_complex(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.data.chunks_exact(2).map(|p| Complex64::new(p[0], p[1]))
    }

    pub fn complex_vec(&self) -> Vec<Complex64> {
        self.as_complex().collect()
    }
}

/// Ordered collection of named tensors; iteration order is insertion order,
/// which keeps optimizer updates, checkpoints and gradient checks
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        let prior = self.tensors.insert(name.clone(), tensor);
        assert!(prior.is_none(), "duplicate parameter name `{name}`");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of real scalars across all tensors.
    pub fn total_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// A store of zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (name, t) in &self.tensors {
            out.insert(name.clone(), Tensor::zeros(t.shape.clone()));
        }
        out
    }

    /// Accumulates `other` into `self` elementwise (shapes must match).
    pub fn add_assign(&mut self, other: &ParamStore) {
        for (name, t) in self.tensors.iter_mut() {
            let o = other.get(name);
            debug_assert_eq!(t.shape, o.shape);
            for (a, b) in t.data.iter_mut().zip(&o.data) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors.values_mut() {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    /// l2 norm over every scalar in the store.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_roundtrip() {
        let mut a = FeatureMap::zeros(2, 3, 4);
        let mut b = FeatureMap::zeros(1, 3, 4);
        a.data[5] = Complex64::new(1.0, -1.0);
        b.data[7] = Complex64::new(2.0, 0.5);
        let cat = a.concat_channels(&b).unwrap();
        assert_eq!(cat.channels, 3);
        let (a2, b2) = cat.split_channels(2);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn param_store_preserves_insertion_order() {
        let mut p = ParamStore::new();
        p.insert("b", Tensor::zeros(vec![2]));
        p.insert("a", Tensor::zeros(vec![3]));
        let names: Vec<&String> = p.names().collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(p.total_scalars(), 5);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_panic() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::zeros(vec![1]));
        p.insert("w", Tensor::zeros(vec![1]));
    }
}
