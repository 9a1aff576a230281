//! Named parameter sets shared by assembled blocks, reference blocks and TAFF.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// How a parameter starts out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Uniform { fan_in },
        }
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Ones,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Zeros,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered map from parameter name to tensor. Iteration follows insertion
/// order, so enumeration is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockParams {
    entries: IndexMap<String, Tensor>,
}

impl BlockParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Draw every spec in order from a ChaCha8 stream seeded with `seed`.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::new();
        for spec in specs {
            let t = match spec.init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    Tensor::uniform(&spec.shape, -bound, bound, &mut rng)
                }
                Init::Ones => Tensor::ones(&spec.shape),
                Init::Zeros => Tensor::zeros(&spec.shape),
            };
            params.insert(spec.name.clone(), t)?;
        }
        Ok(params)
    }

    /// Fails on duplicate names.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    /// Replace an existing entry, keeping its position.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("no parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter `{name}` is {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Every entry replaced by `U(-scale, scale)` noise from `seed`, shapes
    /// kept. Used to exercise blocks away from their initialisation (unit
    /// norm gains, zero biases).
    pub fn randomized(&self, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::uniform(v.shape(), -scale, scale, &mut rng)))
            .collect();
        Self { entries }
    }

    /// Put every entry on `tape` as a differentiable leaf.
    pub fn leaves(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Put every entry on `tape` as a constant.
    pub fn constants(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }
}

/// Tape-side view of a [`BlockParams`].
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    entries: IndexMap<String, Var>,
}

impl ParamVars {
    /// Build from `(name, var)` pairs, e.g. leaves created by the caller.
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Var)>,
        S: Into<String>,
    {
        Self {
            entries: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    /// Like [`ParamVars::get`], additionally checking the shape.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&Var> {
        let v = self.get(name)?;
        if v.shape() != shape {
            return Err(Error::config(format!(
                "parameter `{name}` has shape {:?}, expected {shape:?}",
                v.shape()
            )));
        }
        Ok(v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Collect gradients back into a [`BlockParams`] with the same layout.
    pub fn gradients(&self, grads: &Gradients) -> BlockParams {
        BlockParams {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), grads.wrt(v)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::uniform("w", &[4, 3], 4),
            ParamSpec::zeros("b", &[3]),
            ParamSpec::ones("g", &[3]),
        ]
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = BlockParams::init(&specs(), 9).unwrap();
        let b = BlockParams::init(&specs(), 9).unwrap();
        let c = BlockParams::init(&specs(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.names().collect::<Vec<_>>(), ["w", "b", "g"]);
        assert_eq!(a.numel(), 18);
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let p = BlockParams::init(&specs(), 1).unwrap();
        assert!(p.get("w").unwrap().data().iter().all(|v| v.abs() <= 0.5));
        assert_eq!(p.get("b").unwrap(), &Tensor::zeros(&[3]));
        assert_eq!(p.get("g").unwrap(), &Tensor::ones(&[3]));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = BlockParams::new();
        p.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(p.insert("a", Tensor::zeros(&[1])).is_err());
        assert!(p.set("a", Tensor::zeros(&[2])).is_err());
        assert!(p.set("missing", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn shape_checked_lookup() {
        let tape = Tape::inference();
        let vars = BlockParams::init(&specs(), 1).unwrap().constants(&tape);
        assert!(vars.get_shaped("w", &[4, 3]).is_ok());
        assert!(matches!(vars.get_shaped("w", &[3, 4]), Err(Error::Config(_))));
        assert!(matches!(vars.get("nope"), Err(Error::Config(_))));
    }
}
