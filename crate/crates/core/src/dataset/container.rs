use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"CRNS";
pub const CONTAINER_VERSION: u16 = 1;
pub const ALIGNMENT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    U16,
    U32,
    U64,
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 => 2,
            DType::U32 | DType::F32 => 4,
            DType::U64 | DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    U32(Vec<u32>),
    U64(Vec<u64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

macro_rules! le_bytes {
    ($v:expr, $n:expr) => {{
        let mut out = Vec::with_capacity($v.len() * $n);
        for x in $v {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }};
}

macro_rules! from_le {
    ($bytes:expr, $t:ty, $n:expr) => {
        $bytes
            .chunks_exact($n)
            .map(|c| <$t>::from_le_bytes(c.try_into().expect("exact chunk")))
            .collect()
    };
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::U8(_) => DType::U8,
            ArrayData::U16(_) => DType::U16,
            ArrayData::U32(_) => DType::U32,
            ArrayData::U64(_) => DType::U64,
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::U8(v) => v.len(),
            ArrayData::U16(v) => v.len(),
            ArrayData::U32(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::U8(v) => v.clone(),
            ArrayData::U16(v) => le_bytes!(v, 2),
            ArrayData::U32(v) => le_bytes!(v, 4),
            ArrayData::U64(v) => le_bytes!(v, 8),
            ArrayData::F32(v) => le_bytes!(v, 4),
            ArrayData::F64(v) => le_bytes!(v, 8),
        }
    }

    fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::U8 => ArrayData::U8(bytes.to_vec()),
            DType::U16 => ArrayData::U16(from_le!(bytes, u16, 2)),
            DType::U32 => ArrayData::U32(from_le!(bytes, u32, 4)),
            DType::U64 => ArrayData::U64(from_le!(bytes, u64, 8)),
            DType::F32 => ArrayData::F32(from_le!(bytes, f32, 4)),
            DType::F64 => ArrayData::F64(from_le!(bytes, f64, 8)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

/// Directory entry; `offset` is relative to the 64-byte aligned start of
/// the data section that follows the JSON directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directory {
    pub arrays: Vec<DirEntry>,
    pub metadata: serde_json::Value,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGNMENT) * ALIGNMENT
}

/// Named arrays plus a JSON metadata block, stored as one file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub metadata: serde_json::Value,
    arrays: Vec<NamedArray>,
}

macro_rules! typed_getter {
    ($fn:ident, $variant:ident, $t:ty) => {
        pub fn $fn(&self, name: &str) -> Result<(&[usize], &[$t])> {
            let a = self.array(name)?;
            match &a.data {
                ArrayData::$variant(v) => Ok((&a.shape, v)),
                other => Err(Error::Format(format!(
                    "array `{name}` has dtype {:?}, expected {:?}",
                    other.dtype(),
                    DType::$variant
                ))),
            }
        }
    };
}

impl Container {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: ArrayData) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "array `{name}` shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(Error::Format(format!("duplicate array `{name}`")));
        }
        self.arrays.push(NamedArray {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    }

    typed_getter!(u8_array, U8, u8);
    typed_getter!(u32_array, U32, u32);
    typed_getter!(f32_array, F32, f32);
    typed_getter!(f64_array, F64, f64);

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blobs: Vec<Vec<u8>> = self.arrays.iter().map(|a| a.data.to_le_bytes()).collect();
        let mut offset = 0usize;
        let mut entries = Vec::with_capacity(blobs.len());
        for (a, b) in self.arrays.iter().zip(&blobs) {
            entries.push(DirEntry {
                name: a.name.clone(),
                dtype: a.data.dtype(),
                shape: a.shape.clone(),
                offset: offset as u64,
                length: b.len() as u64,
                crc32: crc32fast::hash(b),
            });
            offset = align(offset + b.len());
        }
        let dir = serde_json::to_vec(&Directory {
            arrays: entries.clone(),
            metadata: self.metadata.clone(),
        })?;
        let data_start = align(10 + dir.len());
        let mut out = Vec::with_capacity(data_start + offset);
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(dir.len() as u32).to_le_bytes());
        out.extend_from_slice(&dir);
        for (e, b) in entries.iter().zip(&blobs) {
            out.resize(data_start + e.offset as usize, 0);
            out.extend_from_slice(b);
        }
        out.resize(align(out.len()), 0);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != CONTAINER_MAGIC {
            return Err(Error::Format("not a CRNS container (bad magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let dir_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        if 10 + dir_len > bytes.len() {
            return Err(Error::Format("directory overruns the file".into()));
        }
        let dir: Directory = serde_json::from_slice(&bytes[10..10 + dir_len])
            .map_err(|e| Error::Format(format!("unreadable directory: {e}")))?;
        let data_start = align(10 + dir_len);

        let mut names = HashSet::new();
        let mut spans: Vec<(u64, u64, &str)> = Vec::new();
        let mut arrays = Vec::with_capacity(dir.arrays.len());
        for e in &dir.arrays {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Format(format!("duplicate array `{}`", e.name)));
            }
            let count: usize = e.shape.iter().product();
            if (count * e.dtype.size()) as u64 != e.length {
                return Err(Error::Format(format!(
                    "array `{}`: shape {:?} of {:?} disagrees with byte length {}",
                    e.name, e.shape, e.dtype, e.length
                )));
            }
            if e.offset as usize % ALIGNMENT != 0 {
                return Err(Error::Format(format!(
                    "array `{}` is not 64-byte aligned",
                    e.name
                )));
            }
            let start = data_start as u64 + e.offset;
            let end = start
                .checked_add(e.length)
                .filter(|&end| end <= bytes.len() as u64)
                .ok_or_else(|| {
                    Error::Format(format!(
                        "array `{}` extends past the end of the file",
                        e.name
                    ))
                })?;
            spans.push((start, end, &e.name));
            let blob = &bytes[start as usize..end as usize];
            if crc32fast::hash(blob) != e.crc32 {
                return Err(Error::Checksum(format!(
                    "array `{}` failed its CRC32 check",
                    e.name
                )));
            }
            arrays.push(NamedArray {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: ArrayData::from_le_bytes(e.dtype, blob),
            });
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Format(format!(
                    "arrays `{}` and `{}` overlap",
                    w[0].2, w[1].2
                )));
            }
        }
        Ok(Self {
            metadata: dir.metadata,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
