use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Gradients, Tape, Tensor2, Var};
use crate::optim::{adam_direction, AdamHyper};
use crate::{Error, Real, Result};

/// How a leaf is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `N(0, 2 / fan_in)` with `fan_in` the row count.
    Kaiming,
    Zeros,
    Ones,
}

/// Named leaves in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<T = f32> {
    tensors: IndexMap<String, Tensor2<T>>,
}

impl<T: Real> Default for ModelParameters<T> {
    fn default() -> Self {
        ModelParameters { tensors: IndexMap::new() }
    }
}

impl<T: Real> ModelParameters<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Deterministic initialization of the given `(name, rows, cols, init)` layout.
    pub fn init(layout: &[(String, usize, usize, Init)], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParameters::new();
        for (name, rows, cols, init) in layout {
            let t = match init {
                Init::Zeros => Tensor2::zeros(*rows, *cols),
                Init::Ones => Tensor2::filled(*rows, *cols, T::one()),
                Init::Kaiming => {
                    let normal = Normal::new(0.0f64, (2.0 / *rows as f64).sqrt()).unwrap();
                    Tensor2::from_fn(*rows, *cols, |_, _| T::lit(normal.sample(&mut rng) as f32 as f64))
                }
            };
            p.insert(name.clone(), t);
        }
        p
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor2<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2<T>> {
        self.tensors.get(name).ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor2<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ModelParameters {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor2::zeros(v.rows, v.cols))).collect(),
        }
    }

    /// Concatenation of every leaf in name order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors.values().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten) using this instance's layout.
    pub fn unflatten(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape { op: "unflatten", lhs: (self.num_scalars(), 1), rhs: (flat.len(), 1) });
        }
        let mut off = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let n = v.data.len();
                let t = Tensor2 { rows: v.rows, cols: v.cols, data: flat[off..off + n].to_vec() };
                off += n;
                (k.clone(), t)
            })
            .collect();
        Ok(ModelParameters { tensors })
    }

    pub fn cast<U: Real>(&self) -> ModelParameters<U> {
        ModelParameters { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor2::all_finite)
    }

    /// Registers every leaf on `tape` as differentiable.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars { vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect() }
    }

    pub fn add_assign(&mut self, other: &ModelParameters<T>) {
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            a.add_assign(b);
        }
    }
}

/// Tape handles for a registered [`ModelParameters`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: IndexMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::UnknownParam(name.into()))
    }

    /// Collects the adjoint of every leaf, zeros where none arrived.
    pub fn gradients<T: Real>(&self, params: &ModelParameters<T>, grads: &Gradients<T>) -> ModelParameters<T> {
        let mut out = params.zeros_like();
        for (name, var) in &self.vars {
            if let Some(g) = grads.get(*var) {
                out.tensors[name.as_str()].add_assign(g);
            }
        }
        out
    }
}

/// Adam moments over model leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamAdamState<T = f32> {
    pub m: ModelParameters<T>,
    pub v: ModelParameters<T>,
    pub step: u64,
}

impl<T: Real> ParamAdamState<T> {
    pub fn new(params: &ModelParameters<T>) -> Self {
        ParamAdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One Adam step on every leaf, using the same recurrence as the scene
/// optimizer.
pub fn adam_step_params<T: Real>(
    params: &mut ModelParameters<T>,
    grads: &ModelParameters<T>,
    state: &mut ParamAdamState<T>,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    state.step += 1;
    let step = state.step;
    let lr = T::lit(lr);
    for (name, p) in params.tensors.iter_mut() {
        let g = grads.get(name)?;
        let m = state.m.tensors.get_mut(name.as_str()).ok_or_else(|| Error::UnknownParam(name.clone()))?;
        let v = state.v.tensors.get_mut(name.as_str()).ok_or_else(|| Error::UnknownParam(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape { op: "adam_step_params", lhs: p.shape(), rhs: g.shape() });
        }
        for i in 0..p.data.len() {
            let d = adam_direction(g.data[i], &mut m.data[i], &mut v.data[i], step, hyper);
            p.data[i] -= lr * d;
        }
    }
    Ok(())
}

const MODEL_MAGIC: &[u8; 4] = b"L2SM";
const MODEL_VERSION: u32 = 1;

/// Everything a model checkpoint file carries.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    /// Free-form JSON describing the architecture.
    pub config_json: String,
    pub params: ModelParameters<f32>,
    pub meta_adam: Option<ParamAdamState<f32>>,
    pub meta_step: u64,
    pub tau_a_position: u64,
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_tensors(w: &mut impl Write, prefix: &str, p: &ModelParameters<f32>) -> std::io::Result<()> {
    for (name, t) in p.iter() {
        let full = format!("{prefix}{name}");
        write_u32(w, full.len() as u32)?;
        w.write_all(full.as_bytes())?;
        write_u32(w, t.rows as u32)?;
        write_u32(w, t.cols as u32)?;
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

const ADAM_M: &str = "meta_adam.m/";
const ADAM_V: &str = "meta_adam.v/";

impl ModelCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        write_u32(&mut buf, MODEL_VERSION)?;
        write_u64(&mut buf, self.meta_step)?;
        write_u64(&mut buf, self.tau_a_position)?;
        write_u64(&mut buf, self.meta_adam.as_ref().map_or(0, |a| a.step))?;
        write_u32(&mut buf, self.config_json.len() as u32)?;
        buf.extend_from_slice(self.config_json.as_bytes());
        let n = self.params.len() + self.meta_adam.as_ref().map_or(0, |a| a.m.len() + a.v.len());
        write_u32(&mut buf, n as u32)?;
        write_tensors(&mut buf, "", &self.params)?;
        if let Some(a) = &self.meta_adam {
            write_tensors(&mut buf, ADAM_M, &a.m)?;
            write_tensors(&mut buf, ADAM_V, &a.v)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)?.write_all(&buf)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, pos: 0, path };
        if r.take(4)? != MODEL_MAGIC {
            return Err(r.err(0, "bad magic, expected L2SM"));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(r.err(4, &format!("unsupported version {version}")));
        }
        let meta_step = r.u64()?;
        let tau_a_position = r.u64()?;
        let adam_step = r.u64()?;
        let clen = r.u32()? as usize;
        let at = r.pos;
        let config_json = String::from_utf8(r.take(clen)?.to_vec()).map_err(|_| r.err(at, "config is not UTF-8"))?;
        let count = r.u32()?;
        let mut params = ModelParameters::new();
        let mut m = ModelParameters::new();
        let mut v = ModelParameters::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| r.err(at, "name is not UTF-8"))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let at = r.pos;
            let raw = r.take(
                rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(|| r.err(at, "tensor too large"))?,
            )?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if let Some(i) = data.iter().position(|x| !x.is_finite()) {
                return Err(r.err(at + 4 * i, &format!("non-finite value in {name}")));
            }
            let t = Tensor2 { rows, cols, data };
            if let Some(n) = name.strip_prefix(ADAM_M) {
                m.insert(n, t);
            } else if let Some(n) = name.strip_prefix(ADAM_V) {
                v.insert(n, t);
            } else {
                params.insert(name, t);
            }
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes"));
        }
        let meta_adam = (!m.is_empty()).then_some(ParamAdamState { m, v, step: adam_step });
        Ok(ModelCheckpoint { config_json, params, meta_adam, meta_step, tau_a_position })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: &str) -> Error {
        Error::Parse { path: self.path.to_path_buf(), offset: offset as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(self.bytes.len(), "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
