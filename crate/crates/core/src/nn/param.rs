use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{NnError, Tensor};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Buffers (non-trainable tensors stored alongside weights) have this unset.
    pub trainable: bool,
    pub frozen: bool,
}

impl Parameter {
    /// Whether the optimizer may change this parameter.
    pub fn updatable(&self) -> bool {
        self.trainable && !self.frozen
    }
}

/// Named, ordered collection of parameters. Insertion order is the
/// checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            trainable,
            frozen: false,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false)
    }

    /// Kaiming-normal weight of shape `shape` with the given fan-in.
    pub fn add_kaiming<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        self.add(name, kaiming_normal(shape, fan_in, rng))
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Freezes every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for p in self
            .params
            .iter_mut()
            .filter(|p| p.name.starts_with(prefix))
        {
            p.frozen = true;
        }
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds gradients produced by a backward pass into the accumulators of
    /// updatable parameters.
    pub fn accumulate(&mut self, grads: &super::Gradients) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            if !p.updatable() {
                continue;
            }
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// FNV-1a over names and value bits of the selected parameters.
    pub fn checksum_where(&self, mut keep: impl FnMut(&Parameter) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for p in self.params.iter().filter(|p| keep(p)) {
            feed(p.name.as_bytes());
            for v in p.value.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn checksum(&self) -> u64 {
        self.checksum_where(|_| true)
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), NnError> {
        write_checkpoint(
            writer,
            self.params.iter().map(|p| (p.name.as_str(), &p.value)),
        )
    }

    /// Overwrites values by name. Every stored parameter must be present in
    /// the checkpoint with a matching shape; extra records are an error too.
    pub fn load<R: Read>(&mut self, reader: R) -> Result<(), NnError> {
        let records = read_checkpoint(reader)?;
        if records.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint holds {} records, model expects {}",
                records.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in records {
            let id = self
                .id(&name)
                .ok_or_else(|| NnError::Checkpoint(format!("unexpected record {name}")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != tensor.shape() {
                return Err(NnError::Checkpoint(format!(
                    "record {name} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    p.value.shape()
                )));
            }
            p.value = tensor;
        }
        Ok(())
    }
}

pub fn kaiming_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape/product agree")
}

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FDNN1";

/// Writes the "FDNN1" container: magic, u32 record count, then per record
/// u32 name length, name bytes, u32 rank, u64 extents, little-endian f64s.
pub fn write_checkpoint<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), NnError> {
    let records: Vec<_> = records.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, tensor) in records {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &e in tensor.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(5)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic, expected FDNN1".into()));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(NnError::Checkpoint(
            "trailing bytes after last record".into(),
        ));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_layout_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(&[1, 2], vec![1.0, -2.5]).unwrap());
        let mut bytes = Vec::new();
        store.save(&mut bytes).unwrap();

        let mut expected = b"FDNN1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(b'w');
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::new();
        a.add_kaiming("layer/w", &[4, 3], 4, &mut rng);
        a.add_zeros("layer/b", &[3]);
        a.add_buffer("meta", Tensor::vector(vec![0.5, 1.5]));
        let mut bytes = Vec::new();
        a.save(&mut bytes).unwrap();

        let mut b = ParamStore::new();
        b.add_zeros("layer/w", &[4, 3]);
        b.add_zeros("layer/b", &[3]);
        b.add_buffer("meta", Tensor::zeros(&[2]));
        b.load(bytes.as_slice()).unwrap();
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        assert!(read_checkpoint(&b"FDNN2\0\0\0\0"[..]).is_err());
        let mut store = ParamStore::new();
        store.add_zeros("w", &[3]);
        let mut bytes = Vec::new();
        store.save(&mut bytes).unwrap();
        bytes.pop();
        assert!(read_checkpoint(bytes.as_slice()).is_err());

        let mut other = ParamStore::new();
        other.add_zeros("w", &[4]);
        let mut good = Vec::new();
        store.save(&mut good).unwrap();
        assert!(other.load(good.as_slice()).is_err());
    }
}
