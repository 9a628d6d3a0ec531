//! Named trainable tensors and their binding onto a tape.

use std::collections::HashMap;

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Ordered collection of named tensors. Names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
    init_seed: u64,
}

impl ParameterSet {
    pub fn new(init_seed: u64) -> Self {
        ParameterSet {
            init_seed,
            ..ParameterSet::default()
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.values[i] = value,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.values.push(value);
            }
        }
    }

    /// Glorot-uniform tensor drawn from the `(init_seed, name)` stream.
    pub fn insert_glorot(&mut self, name: &str, rows: usize, cols: usize) {
        let value = glorot(self.init_seed, name, rows, cols);
        self.insert(name, value);
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Tensor::zeros(rows, cols));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Adds every entry of `other`, replacing same-named entries.
    pub fn extend(&mut self, other: &ParameterSet) {
        for (name, value) in other.iter() {
            self.insert(name, value.clone());
        }
    }

    /// Puts every tensor on `tape`, as parameters or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> VarMap {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        VarMap {
            index: self.index.clone(),
            vars,
        }
    }
}

/// Tape handles of a bound [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct VarMap {
    index: HashMap<String, usize>,
    vars: Vec<Var>,
}

impl VarMap {
    /// Builds a map from explicit `(name, var)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        let mut index = HashMap::new();
        let mut vars = Vec::new();
        for (name, v) in pairs {
            index.insert(name, vars.len());
            vars.push(v);
        }
        VarMap { index, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::ParamMismatch {
                arch: name.split('.').next().unwrap_or(name).to_string(),
                detail: format!("missing parameter {name:?}"),
            })
    }

    /// Handles in the order of the bound parameter set.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(seed: u64, name: &str, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut r = rng::stream(seed, name);
    let data = (0..rows * cols)
        .map(|_| r.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}
