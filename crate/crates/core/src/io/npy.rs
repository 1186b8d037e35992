//! Minimal NPY v1.0 array container.
//!
//! Exactly one layout is produced and accepted: magic `\x93NUMPY`, version
//! 1.0, a header dict with `descr` `<f8` or `<c16`, `fortran_order: False`,
//! and C-order little-endian payload. Write-then-read is bit-identical.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

pub trait NpyElement: Copy {
    const DESCR: &'static str;
    fn write_le(&self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn size() -> usize;
}

impl NpyElement for f64 {
    const DESCR: &'static str = "<f8";
    fn write_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    fn size() -> usize {
        8
    }
}

impl NpyElement for Complex64 {
    const DESCR: &'static str = "<c16";
    fn write_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re.to_le_bytes());
        out.extend_from_slice(&self.im.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        Complex64::new(
            f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")),
            f64::from_le_bytes(bytes[8..].try_into().expect("8 bytes")),
        )
    }
    fn size() -> usize {
        16
    }
}

fn header_dict(descr: &str, shape: &[usize]) -> String {
    let shape_str = match shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_str}, }}")
}

/// Serialize an array (C-order data slice plus shape) to NPY bytes.
pub fn to_bytes<T: NpyElement>(data: &[T], shape: &[usize]) -> Vec<u8> {
    assert_eq!(data.len(), shape.iter().product::<usize>());
    let mut dict = header_dict(T::DESCR, shape);
    // pad with spaces so the full preamble is a multiple of 64, ending in \n
    let preamble = MAGIC.len() + 2 + 2;
    let total = (preamble + dict.len() + 1).div_ceil(64) * 64;
    while preamble + dict.len() + 1 < total {
        dict.push(' ');
    }
    dict.push('\n');

    let mut out = Vec::with_capacity(total + data.len() * T::size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[0x01, 0x00]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    for v in data {
        v.write_le(&mut out);
    }
    out
}

/// Parse NPY bytes into a flat C-order vector plus shape.
pub fn from_bytes<T: NpyElement>(bytes: &[u8]) -> Result<(Vec<T>, Vec<usize>)> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("not an NPY file".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::Format(format!(
            "unsupported NPY version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header_end = 10 + header_len;
    if bytes.len() < header_end {
        return Err(Error::Format("truncated NPY header".into()));
    }
    let header = std::str::from_utf8(&bytes[10..header_end])
        .map_err(|_| Error::Format("NPY header is not UTF-8".into()))?;

    let descr = extract_quoted(header, "descr")?;
    if descr != T::DESCR {
        return Err(Error::Format(format!(
            "dtype mismatch: file has '{descr}', expected '{}'",
            T::DESCR
        )));
    }
    let order = extract_field(header, "fortran_order")?;
    if !order.starts_with("False") {
        return Err(Error::Format("only C-order arrays are supported".into()));
    }
    let shape_src = extract_field(header, "shape")?;
    let open = shape_src
        .find('(')
        .ok_or_else(|| Error::Format("malformed shape".into()))?;
    let close = shape_src
        .find(')')
        .ok_or_else(|| Error::Format("malformed shape".into()))?;
    let shape: Vec<usize> = shape_src[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad shape entry '{s}'")))
        })
        .collect::<Result<_>>()?;

    let count: usize = shape.iter().product();
    let payload = &bytes[header_end..];
    if payload.len() != count * T::size() {
        return Err(Error::Format(format!(
            "payload size {} does not match shape {:?}",
            payload.len(),
            shape
        )));
    }
    let data = payload
        .chunks_exact(T::size())
        .map(T::read_le)
        .collect();
    Ok((data, shape))
}

fn extract_quoted(header: &str, key: &str) -> Result<String> {
    let field = extract_field(header, key)?;
    let trimmed = field.trim_start_matches(['\'', '"']);
    let end = trimmed
        .find(['\'', '"'])
        .ok_or_else(|| Error::Format(format!("malformed '{key}'")))?;
    Ok(trimmed[..end].to_string())
}

fn extract_field(header: &str, key: &str) -> Result<String> {
    let pattern = format!("'{key}':");
    let at = header
        .find(&pattern)
        .ok_or_else(|| Error::Format(format!("missing '{key}' in NPY header")))?;
    Ok(header[at + pattern.len()..].trim_start().to_string())
}

pub fn save<T: NpyElement>(path: impl AsRef<Path>, data: &[T], shape: &[usize]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&to_bytes(data, shape))?;
    Ok(())
}

pub fn load<T: NpyElement>(path: impl AsRef<Path>) -> Result<(Vec<T>, Vec<usize>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn save_array1_f64(path: impl AsRef<Path>, a: &Array1<f64>) -> Result<()> {
    save(path, a.as_slice().expect("standard layout"), &[a.len()])
}

pub fn save_array2_f64(path: impl AsRef<Path>, a: &Array2<f64>) -> Result<()> {
    let (h, w) = a.dim();
    save(path, a.as_slice().expect("standard layout"), &[h, w])
}

pub fn save_array3_f64(path: impl AsRef<Path>, a: &Array3<f64>) -> Result<()> {
    let (c, h, w) = a.dim();
    save(path, a.as_slice().expect("standard layout"), &[c, h, w])
}

pub fn save_array2_c128(path: impl AsRef<Path>, a: &Array2<Complex64>) -> Result<()> {
    let (h, w) = a.dim();
    save(path, a.as_slice().expect("standard layout"), &[h, w])
}

/// Store a coil stack as one `(c, H, W)` complex array.
pub fn save_coil_stack(path: impl AsRef<Path>, coils: &[Array2<Complex64>]) -> Result<()> {
    let (h, w) = coils[0].dim();
    let mut flat = Vec::with_capacity(coils.len() * h * w);
    for coil in coils {
        flat.extend(coil.iter().copied());
    }
    save(path, &flat, &[coils.len(), h, w])
}

pub fn load_array1_f64(path: impl AsRef<Path>) -> Result<Array1<f64>> {
    let (data, shape) = load::<f64>(path)?;
    if shape.len() != 1 {
        return Err(Error::Format(format!("expected 1-D array, got {shape:?}")));
    }
    Ok(Array1::from_vec(data))
}

pub fn load_array2_f64(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let (data, shape) = load::<f64>(path)?;
    if shape.len() != 2 {
        return Err(Error::Format(format!("expected 2-D array, got {shape:?}")));
    }
    Array2::from_shape_vec((shape[0], shape[1]), data)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn load_array3_f64(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    let (data, shape) = load::<f64>(path)?;
    if shape.len() != 3 {
        return Err(Error::Format(format!("expected 3-D array, got {shape:?}")));
    }
    Array3::from_shape_vec((shape[0], shape[1], shape[2]), data)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn load_array2_c128(path: impl AsRef<Path>) -> Result<Array2<Complex64>> {
    let (data, shape) = load::<Complex64>(path)?;
    if shape.len() != 2 {
        return Err(Error::Format(format!("expected 2-D array, got {shape:?}")));
    }
    Array2::from_shape_vec((shape[0], shape[1]), data)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn load_coil_stack(path: impl AsRef<Path>) -> Result<Vec<Array2<Complex64>>> {
    let (data, shape) = load::<Complex64>(path)?;
    if shape.len() != 3 {
        return Err(Error::Format(format!("expected 3-D array, got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    Ok((0..c)
        .map(|k| {
            Array2::from_shape_vec((h, w), data[k * h * w..(k + 1) * h * w].to_vec())
                .expect("consistent chunking")
        })
        .collect())
}
