//! Binary model file.
//!
//! ```text
//! "HSMX"            4 bytes
//! format version    u32
//! vocab_size        u64
//! depth             u64
//! inner_size        u64
//! hidden_size       u64
//! float width       u8   (4 or 8)
//! node vectors      max(inner_size, 1) × hidden_size floats, row-major
//! tree length       u64
//! tree document     JSON, as written by `huffman::serialize_tree`
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{self, Read, Write};

use ndarray::Array2;

use super::HSoftmaxModel;
use crate::error::{Error, Result};
use crate::huffman::{deserialize_tree, serialize_tree};

pub const MODEL_MAGIC: [u8; 4] = *b"HSMX";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Storage precision for node vectors. `F64` round-trips bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatWidth {
    F32,
    F64,
}

impl FloatWidth {
    fn bytes(self) -> u8 {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }
}

pub fn save_model<W: Write>(model: &HSoftmaxModel, mut out: W, width: FloatWidth) -> Result<()> {
    let tree = model.tree();
    out.write_all(&MODEL_MAGIC)?;
    out.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    for v in [
        tree.vocab_size(),
        tree.depth(),
        tree.inner_size(),
        model.hidden_size(),
    ] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&[width.bytes()])?;
    // iter() walks in logical (row-major) order regardless of memory layout
    for &x in model.node_vectors().iter() {
        match width {
            FloatWidth::F64 => out.write_all(&x.to_le_bytes())?,
            FloatWidth::F32 => out.write_all(&(x as f32).to_le_bytes())?,
        }
    }
    let doc = serialize_tree(tree);
    out.write_all(&(doc.len() as u64).to_le_bytes())?;
    out.write_all(&doc)?;
    out.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| truncated(e, what))?;
    Ok(buf)
}

fn truncated(e: io::Error, what: &str) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Malformed(format!("model file truncated while reading {what}"))
    } else {
        Error::Io(e)
    }
}

fn read_len<R: Read>(input: &mut R, what: &str) -> Result<usize> {
    let v = u64::from_le_bytes(read_array(input, what)?);
    usize::try_from(v).map_err(|_| Error::Malformed(format!("{what} {v} does not fit in memory")))
}

pub fn load_model<R: Read>(mut input: R) -> Result<HSoftmaxModel> {
    let magic: [u8; 4] = read_array(&mut input, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::Malformed("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input, "version")?);
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let vocab_size = read_len(&mut input, "vocab_size")?;
    let depth = read_len(&mut input, "depth")?;
    let inner_size = read_len(&mut input, "inner_size")?;
    let hidden_size = read_len(&mut input, "hidden_size")?;
    let [width] = read_array::<1, _>(&mut input, "float width")?;
    let width = match width {
        4 => FloatWidth::F32,
        8 => FloatWidth::F64,
        other => return Err(Error::Malformed(format!("unsupported float width {other}"))),
    };

    let rows = inner_size.max(1);
    let count = rows
        .checked_mul(hidden_size)
        .ok_or_else(|| Error::Malformed("node vector size overflows".into()))?;
    let mut values = Vec::new();
    values
        .try_reserve_exact(count)
        .map_err(|_| Error::Malformed(format!("cannot allocate {count} node values")))?;
    for _ in 0..count {
        let x = match width {
            FloatWidth::F64 => f64::from_le_bytes(read_array(&mut input, "node vectors")?),
            FloatWidth::F32 => f32::from_le_bytes(read_array(&mut input, "node vectors")?) as f64,
        };
        values.push(x);
    }
    let vectors = Array2::from_shape_vec((rows, hidden_size), values)
        .map_err(|e| Error::Malformed(e.to_string()))?;

    let doc_len = read_len(&mut input, "tree length")?;
    let mut doc = Vec::new();
    (&mut input)
        .take(doc_len as u64)
        .read_to_end(&mut doc)
        .map_err(|e| truncated(e, "tree"))?;
    if doc.len() != doc_len {
        return Err(Error::Malformed("model file truncated while reading tree".into()));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Malformed("trailing bytes after tree".into()));
    }

    let tree = deserialize_tree(&doc)?;
    if tree.vocab_size() != vocab_size || tree.depth() != depth || tree.inner_size() != inner_size
    {
        return Err(Error::Malformed("header disagrees with embedded tree".into()));
    }
    HSoftmaxModel::new(tree, vectors)
}
