//! Binary tensor files: one UTF-8 JSON header line
//! (`{"shape":[...],"dtype":"f32"}`) followed by the raw little-endian `f32`
//! payload in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
}

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> std::io::Result<()> {
    let header = Header {
        shape: t.shape().to_vec(),
        dtype: "f32".to_string(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_tensor<R: BufRead>(mut r: R) -> Result<Tensor> {
    let mut line = String::new();
    r.read_line(&mut line)
        .map_err(|e| Error::parse(None, Some(1), e))?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::parse(None, Some(1), e))?;
    if header.dtype != "f32" {
        return Err(Error::parse(
            None,
            Some(1),
            format!("unsupported dtype `{}`", header.dtype),
        ));
    }
    let numel: usize = header.shape.iter().product();
    let mut bytes = vec![0u8; numel * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::parse(None, None, format!("truncated payload: {e}")))?;
    if r.read(&mut [0u8; 1]).map_err(|e| Error::parse(None, None, e))? != 0 {
        return Err(Error::parse(None, None, "trailing bytes after payload"));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(header.shape, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensor(BufWriter::new(f), t).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor(BufReader::new(f)).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::parse(Some(path.to_path_buf()), line, message),
        other => other,
    })
}
