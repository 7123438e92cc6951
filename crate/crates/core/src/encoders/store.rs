use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::io::binary::{read_file, Reader, Writer};
use crate::nn::{Adam, Cell, Real, Tensor};
use crate::{Error, Result};

pub const PARAM_MAGIC: &[u8; 8] = b"KWSPARAM";
pub const PARAM_VERSION: u32 = 1;
const ADAM_MAGIC: &[u8; 8] = b"KWSADAM\0";
const ADAM_VERSION: u32 = 1;

/// Named tensors for both encoders, tied to the config that shaped them.
///
/// Names follow `{query,doc}.l{i}.{bn,fwd,bwd}.*`, `query.embedding` and
/// `{query,doc}.proj.{weight,bias}`. Batch-norm running statistics live
/// here too but are not trainable.
#[derive(Clone, Debug)]
pub struct ParameterStore<T = f32> {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParameterStore<T> {
    /// Fresh parameters: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights,
    /// zero biases except an LSTM forget-gate bias of 1, N(0, 0.1)
    /// embeddings, identity batch norm.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, 0.1).expect("valid sigma");
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in layout(config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Normal => (0..n).map(|_| T::of(normal.sample(rng))).collect(),
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
                }
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::ForgetBias(h) => (0..n)
                    .map(|i| if (h..2 * h).contains(&i) { T::one() } else { T::zero() })
                    .collect(),
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Wraps existing tensors after checking every expected name and shape.
    pub fn from_tensors(config: &ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &expected {
            match tensors.get(name) {
                None => return Err(Error::Config(format!("missing tensor {name}"))),
                Some(v) if v.shape() != shape.as_slice() => {
                    return Err(Error::shape(
                        "parameters",
                        format!("{name} has shape {:?}, expected {shape:?}", v.shape()),
                    ))
                }
                _ => {}
            }
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))
    }

    /// Whether the optimizer updates this tensor.
    pub fn is_trainable(name: &str) -> bool {
        !name.ends_with(".running_mean") && !name.ends_with(".running_var")
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

impl ParameterStore<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(PARAM_MAGIC);
        w.u32(PARAM_VERSION);
        w.bytes(&self.config.fingerprint());
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.tensor(name, t);
        }
        w.finish()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write(path, &self.to_bytes())
    }

    /// Loads a parameter file written for exactly `config`.
    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path, config)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut r = Reader::new(bytes, path);
        r.header(PARAM_MAGIC, PARAM_VERSION, &config.fingerprint())?;
        let mut expected = layout(config);
        expected.sort_by(|a, b| a.0.cmp(&b.0));
        let count = r.u32("tensor count")? as usize;
        if count != expected.len() {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                detail: format!("{count} tensors declared, {} expected", expected.len()),
            });
        }
        let mut tensors = BTreeMap::new();
        for (name, shape, _) in expected {
            let t = r.named_tensor(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::BadHeader {
                    path: path.to_path_buf(),
                    detail: format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
                });
            }
            tensors.insert(name, t);
        }
        if !r.at_end() {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                detail: "trailing bytes after last tensor".into(),
            });
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }
}

enum Init {
    Normal,
    Uniform(usize),
    Zeros,
    Ones,
    /// LSTM input bias: ones on the forget-gate block of width `h`.
    ForgetBias(usize),
}

/// Every parameter name with its shape and initializer.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = vec![(
        "query.embedding".to_string(),
        vec![config.inventory_size, config.embedding_dim],
        Init::Normal,
    )];
    for (side, cell, input, layers) in [
        ("query", Cell::Gru, config.embedding_dim, &config.query_layers),
        ("doc", Cell::Lstm, config.feature_dim, &config.doc_layers),
    ] {
        let mut inp = input;
        for (l, &h) in layers.iter().enumerate() {
            let p = format!("{side}.l{l}");
            out.push((format!("{p}.bn.gamma"), vec![inp], Init::Ones));
            out.push((format!("{p}.bn.beta"), vec![inp], Init::Zeros));
            out.push((format!("{p}.bn.running_mean"), vec![inp], Init::Zeros));
            out.push((format!("{p}.bn.running_var"), vec![inp], Init::Ones));
            let g = cell.gates() * h;
            for dir in ["fwd", "bwd"] {
                out.push((format!("{p}.{dir}.w_ih"), vec![g, inp], Init::Uniform(h)));
                out.push((format!("{p}.{dir}.w_hh"), vec![g, h], Init::Uniform(h)));
                let bias = if cell == Cell::Lstm { Init::ForgetBias(h) } else { Init::Zeros };
                out.push((format!("{p}.{dir}.b_ih"), vec![g], bias));
                out.push((format!("{p}.{dir}.b_hh"), vec![g], Init::Zeros));
            }
            inp = 2 * h;
        }
        out.push((format!("{side}.proj.weight"), vec![config.joint_dim, inp], Init::Uniform(inp)));
        out.push((format!("{side}.proj.bias"), vec![config.joint_dim], Init::Zeros));
    }
    out
}

/// Persists optimizer moments and step counter next to a parameter file.
pub fn save_adam(path: &Path, adam: &Adam<f32>, config: &ModelConfig) -> Result<()> {
    let mut w = Writer::default();
    w.bytes(ADAM_MAGIC);
    w.u32(ADAM_VERSION);
    w.bytes(&config.fingerprint());
    w.u64(adam.step_count());
    w.f64(adam.lr);
    w.u32(adam.first_moments().len() as u32);
    for (name, t) in adam.first_moments() {
        w.tensor(&format!("m:{name}"), t);
        w.tensor(&format!("v:{name}"), &adam.second_moments()[name]);
    }
    crate::io::atomic_write(path, &w.finish())
}

pub fn load_adam(path: &Path, config: &ModelConfig) -> Result<Adam<f32>> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.header(ADAM_MAGIC, ADAM_VERSION, &config.fingerprint())?;
    let step = r.u64("step counter")?;
    let lr = r.f64("learning rate")?;
    let n = r.u32("moment count")? as usize;
    let (mut first, mut second) = (BTreeMap::new(), BTreeMap::new());
    for _ in 0..n {
        let (name, m) = r.tensor("first moment")?;
        let key = name
            .strip_prefix("m:")
            .ok_or_else(|| Error::BadHeader {
                path: path.to_path_buf(),
                detail: format!("unexpected record {name}"),
            })?
            .to_string();
        second.insert(key.clone(), r.named_tensor(&format!("v:{key}"))?);
        first.insert(key, m);
    }
    Ok(Adam::restore(lr, step, first, second))
}
