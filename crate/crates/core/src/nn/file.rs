//! Model file layout. All integers are little-endian `u32`, all weights
//! little-endian IEEE-754 `f64`.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SLXM"
//! 4       4     format version (1)
//! 8       4     input side length
//! 12      4     layer count L
//! 16      16·L  layer table, one record per layer:
//!                 u32 kind (1 conv, 2 max-pool, 3 dense+ReLU, 4 dense+softmax)
//!                 u32 a, u32 b, u32 c
//!                   conv:    in channels, out channels, kernel side
//!                   pool:    window side (2), 0, 0
//!                   dense:   inputs, outputs, 0
//!                   softmax: inputs, classes, 0
//! ...     ...   weight blobs for each conv/dense layer in table order:
//!               weights then biases, sizes implied by the table
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Architecture, ConvSpec, Model};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SLXM";
const VERSION: u32 = 1;

const KIND_CONV: u32 = 1;
const KIND_POOL: u32 = 2;
const KIND_DENSE: u32 = 3;
const KIND_SOFTMAX: u32 = 4;

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.param_count() * 8);
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, VERSION);
        push_u32(&mut out, self.arch.input_side as u32);
        let mut table: Vec<[u32; 4]> = Vec::new();
        for conv in &self.convs {
            table.push([
                KIND_CONV,
                conv.in_ch as u32,
                conv.out_ch as u32,
                conv.kernel as u32,
            ]);
            table.push([KIND_POOL, 2, 0, 0]);
        }
        table.push([
            KIND_DENSE,
            self.hidden.inputs as u32,
            self.hidden.outputs as u32,
            0,
        ]);
        table.push([
            KIND_SOFTMAX,
            self.output.inputs as u32,
            self.output.outputs as u32,
            0,
        ]);
        push_u32(&mut out, table.len() as u32);
        for record in &table {
            for &v in record {
                push_u32(&mut out, v);
            }
        }
        for slice in self.param_slices() {
            for &v in slice {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Model> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        if r.take(4)? != MAGIC {
            return Err(r.error(0, "not a model file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(4, &format!("unsupported model version {version}")));
        }
        let input_side = r.u32()? as usize;
        let layers = r.u32()? as usize;
        let mut records = Vec::with_capacity(layers);
        for _ in 0..layers {
            records.push([r.u32()?, r.u32()?, r.u32()?, r.u32()?]);
        }
        let arch = architecture_from_table(input_side, &records)
            .ok_or_else(|| r.error(16, "inconsistent layer table"))?;
        arch.validate()
            .map_err(|e| r.error(16, &e.to_string()))?;
        let mut model = Model::zeros(arch);
        if !table_matches(&model, &records) {
            return Err(r.error(16, "layer table does not describe a valid network"));
        }
        for slice in model.param_slices_mut() {
            for v in slice.iter_mut() {
                let b = r.take(8)?;
                *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(r.error(r.pos, "trailing bytes after weights"));
        }
        Ok(model)
    }
}

fn architecture_from_table(input_side: usize, records: &[[u32; 4]]) -> Option<Architecture> {
    let mut convs = Vec::new();
    let mut hidden = None;
    let mut classes = None;
    for rec in records {
        match rec[0] {
            KIND_CONV => convs.push(ConvSpec {
                filters: rec[2] as usize,
                kernel: rec[3] as usize,
            }),
            KIND_POOL if rec[1] == 2 => {}
            KIND_DENSE => hidden = Some(rec[2] as usize),
            KIND_SOFTMAX => classes = Some(rec[2] as usize),
            _ => return None,
        }
    }
    Some(Architecture {
        input_side,
        convs,
        hidden: hidden?,
        classes: classes?,
    })
}

fn table_matches(model: &Model, records: &[[u32; 4]]) -> bool {
    let rebuilt = model.to_bytes();
    let table_len = 16 + 16 * records.len();
    let mut expected = Vec::with_capacity(16 * records.len());
    for rec in records {
        for &v in rec {
            push_u32(&mut expected, v);
        }
    }
    rebuilt.len() >= table_len && rebuilt[16..table_len] == expected[..]
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.error(self.pos, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn error(&self, offset: usize, message: &str) -> Error {
        Error::Format {
            path: self.origin.to_path_buf(),
            offset,
            message: message.to_string(),
        }
    }
}
