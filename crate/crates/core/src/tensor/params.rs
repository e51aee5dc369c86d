use std::cell::RefCell;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{numel, Gradients, Graph, Result, Tensor, TensorError, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Registers a new parameter. Panics on a duplicate name, which is a
    /// construction bug rather than a runtime condition.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter `{name}`");
        let n = numel(shape);
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Uniform(b) => (0..n).map(|_| self.rng.random_range(-b..=b)).collect(),
        };
        let t = Tensor::new(shape, data)
            .expect("parameter shape")
            .with_requires_grad();
        self.lookup.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    /// Zero-filled gradient buffers, one per parameter.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.numel()]).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(&str, &Tensor)> = self
            .names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
            .collect();
        let file = std::fs::File::create(path).map_err(io_err)?;
        write_checkpoint(std::io::BufWriter::new(file), &entries)
    }

    /// Overwrites every parameter from a checkpoint with identical names and shapes.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path).map_err(io_err)?;
        let entries = read_checkpoint(std::io::BufReader::new(file))?;
        if entries.len() != self.tensors.len() {
            return Err(TensorError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.tensors.len(),
                entries.len()
            )));
        }
        for (name, t) in entries {
            let id = self
                .find(&name)
                .ok_or_else(|| TensorError::Checkpoint(format!("unknown parameter `{name}`")))?;
            let slot = &mut self.tensors[id.0];
            if slot.shape() != t.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "`{name}`: shape {:?} does not match {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"GCTCKPT1";

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Checkpoint(e.to_string())
}

/// Layout: `GCTCKPT1`, u32 count, then per parameter: u32 name length, UTF-8
/// name, u32 rank, rank × u64 dims, numel × f64. All integers and floats are
/// little-endian.
pub fn write_checkpoint<W: Write>(mut w: W, entries: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(entries.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(t.rank() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    let mut read_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u32buf).map_err(io_err)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let mut data = Vec::with_capacity(numel(&shape));
        for _ in 0..numel(&shape) {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

/// Binds parameters of a store onto one graph, lazily and at most once each.
pub struct Session<'g> {
    graph: &'g Graph,
    store: &'g ParamStore,
    bound: RefCell<Vec<Option<Var<'g>>>>,
    trainable: bool,
}

impl<'g> Session<'g> {
    /// Parameters enter the graph as differentiable leaves.
    pub fn new(graph: &'g Graph, store: &'g ParamStore) -> Self {
        Self {
            graph,
            store,
            bound: RefCell::new(vec![None; store.len()]),
            trainable: true,
        }
    }

    /// Parameters enter as constants; nothing is recorded for backward.
    pub fn frozen(graph: &'g Graph, store: &'g ParamStore) -> Self {
        Self {
            trainable: false,
            ..Self::new(graph, store)
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn store(&self) -> &'g ParamStore {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var<'g> {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.trainable {
            self.graph.leaf(t)
        } else {
            self.graph.constant(t)
        };
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Ids of the parameters this session touched.
    pub fn used(&self) -> Vec<ParamId> {
        self.bound
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|_| ParamId(i)))
            .collect()
    }

    /// Adds this session's parameter gradients into `into` (one buffer per parameter).
    pub fn accumulate_grads(&self, grads: &Gradients, into: &mut [Vec<f64>]) {
        for (i, v) in self.bound.borrow().iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.get(*v) {
                    for (d, s) in into[i].iter_mut().zip(&g) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::new(7);
        store.add("a.w", &[2, 3], Init::Uniform(1.0));
        store.add("a.b", &[3], Init::Constant(0.5));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        store.save(&path).unwrap();
        let mut other = ParamStore::new(99);
        other.add("a.w", &[2, 3], Init::Zeros);
        other.add("a.b", &[3], Init::Zeros);
        other.load(&path).unwrap();
        for id in store.ids() {
            assert_eq!(store.get(id).data(), other.get(id).data());
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"GCTCKPT1");
        // header + names + shapes + 9 floats
        assert_eq!(bytes.len(), 8 + 4 + (4 + 3 + 4 + 16) + (4 + 3 + 4 + 8) + 9 * 8);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut store = ParamStore::new(1);
        store.add("w", &[2], Init::Zeros);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        store.save(&path).unwrap();
        let mut other = ParamStore::new(1);
        other.add("w", &[3], Init::Zeros);
        assert!(other.load(&path).is_err());
    }

    #[test]
    fn session_binds_once() {
        let mut store = ParamStore::new(1);
        let id = store.add("w", &[2], Init::Constant(1.0));
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let a = s.param(id);
        let b = s.param(id);
        assert_eq!(a.id(), b.id());
        assert_eq!(s.used(), vec![id]);
    }
}
