use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Index of a trainable array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Named trainable arrays. Registration order is stable and defines the
/// checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape(
                "param",
                format!("{name}: shape {shape:?} holds {numel} values, got {}", values.len()),
            ));
        }
        if self.by_name.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Uniform fan-in initialization in `±sqrt(1 / fan_in)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let values = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, shape, values)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].values
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Copies every array whose name and shape match from `other`.
    /// Returns the number of arrays copied.
    pub fn copy_matching(&mut self, other: &ParamStore, prefix_from: &str, prefix_to: &str) -> usize {
        let mut copied = 0;
        for entry in &mut self.entries {
            let Some(rest) = entry.name.strip_prefix(prefix_to) else {
                continue;
            };
            let source = format!("{prefix_from}{rest}");
            if let Some(src) = other.id(&source) {
                if other.shape(src) == entry.shape.as_slice() {
                    entry.values.copy_from_slice(other.values(src));
                    copied += 1;
                }
            }
        }
        copied
    }
}

/// Gradient buffers keyed by parameter, accumulated across shapes in a batch.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub(crate) fn from_parts(grads: Vec<Option<Vec<f64>>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            let Some(src) = src else { continue };
            match dst {
                Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
                None => *dst = Some(src.clone()),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .entries
            .iter()
            .map(|e| vec![0.0; e.values.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let w = store.values_mut(id);
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let id = store.add_uniform("w", &[8, 16], 16, &mut rng).unwrap();
        let bound = 0.25;
        assert!(store.values(id).iter().all(|v| v.abs() <= bound));
        assert_eq!(store.num_scalars(), 128);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("a", &[1], vec![0.0]).unwrap();
        assert!(store.add("a", &[1], vec![0.0]).is_err());
        assert!(store.add("b", &[2], vec![0.0]).is_err());
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", &[2], vec![3.0, -2.0]).unwrap();
        let mut adam = Adam::new(&store, 0.05);
        for _ in 0..2000 {
            let x = store.values(id).to_vec();
            let g = ParamGrads::from_parts(vec![Some(vec![2.0 * (x[0] - 1.0), 2.0 * x[1]])]);
            adam.step(&mut store, &g);
        }
        let x = store.values(id);
        assert!((x[0] - 1.0).abs() < 1e-3 && x[1].abs() < 1e-3, "{x:?}");
    }
}
