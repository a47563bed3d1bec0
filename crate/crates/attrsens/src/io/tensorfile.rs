//! ATNS tensor container: magic "ATNS", u16 LE version, u8 dtype
//! (0 = f32, 1 = f64), u8 ndim, ndim u32 LE extents, then the payload
//! in little-endian row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"ATNS";
const VERSION: u16 = 1;

pub fn write_tensor<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + tensor.dims().len() * 4 + tensor.data().len() * T::BYTES);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(T::DTYPE);
    buf.push(tensor.dims().len() as u8);
    for &d in tensor.dims() {
        if d > u32::MAX as usize {
            return Err(Error::Format(format!("extent {d} exceeds u32 range")));
        }
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut buf);
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 8 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let dtype = bytes[6];
    if dtype != T::DTYPE {
        return Err(fail(&format!("dtype {dtype} does not match requested {}", T::DTYPE)));
    }
    let ndim = bytes[7] as usize;
    let dims_end = 8 + ndim * 4;
    if bytes.len() < dims_end {
        return Err(fail("truncated dims"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let o = 8 + i * 4;
        dims.push(u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize);
    }
    let count: usize = dims.iter().product();
    let expected = dims_end + count * T::BYTES;
    if bytes.len() != expected {
        return Err(fail(&format!("payload length {} != expected {}", bytes.len(), expected)));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let o = dims_end + i * T::BYTES;
        data.push(T::read_le(&bytes[o..o + T::BYTES]));
    }
    Tensor::new(dims, data)
}
