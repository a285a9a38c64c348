//! QSHT: little-endian container for dense real, dense complex and sparse 4D tensors.
//!
//! Layout: magic `QSHT`, version byte, dtype byte, two reserved zero bytes,
//! four u64 dims, pitch1/pitch2 as f64, flags u64, then the payload.
//! Grid origins are not stored; every stored grid is centered.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{ComplexField4, GridSpec, RealField4, SparseJpd};
use crate::{Error, FormatError, Result};

pub const QSHT_MAGIC: [u8; 4] = *b"QSHT";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 64;

const DTYPE_REAL: u8 = 1;
const DTYPE_COMPLEX: u8 = 2;
const DTYPE_SPARSE: u8 = 3;

const FLAG_SYMMETRIC: u64 = 1;
const FLAG_NONNEGATIVE: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Real(RealField4),
    Complex(ComplexField4),
    Sparse(SparseJpd),
}

impl Tensor {
    fn dtype_name(&self) -> &'static str {
        match self {
            Tensor::Real(_) => "real",
            Tensor::Complex(_) => "complex",
            Tensor::Sparse(_) => "sparse",
        }
    }

    pub fn into_real(self) -> Result<RealField4> {
        match self {
            Tensor::Real(f) => Ok(f),
            other => Err(mismatch("real", other.dtype_name())),
        }
    }

    pub fn into_complex(self) -> Result<ComplexField4> {
        match self {
            Tensor::Complex(f) => Ok(f),
            other => Err(mismatch("complex", other.dtype_name())),
        }
    }

    pub fn into_sparse(self) -> Result<SparseJpd> {
        match self {
            Tensor::Sparse(f) => Ok(f),
            other => Err(mismatch("sparse", other.dtype_name())),
        }
    }
}

fn mismatch(expected: &'static str, found: &'static str) -> Error {
    FormatError::DtypeMismatch { expected, found, offset: 5 }.into()
}

impl From<RealField4> for Tensor {
    fn from(f: RealField4) -> Self {
        Tensor::Real(f)
    }
}

impl From<ComplexField4> for Tensor {
    fn from(f: ComplexField4) -> Self {
        Tensor::Complex(f)
    }
}

impl From<SparseJpd> for Tensor {
    fn from(f: SparseJpd) -> Self {
        Tensor::Sparse(f)
    }
}

fn header(dtype: u8, g1: &GridSpec, g2: &GridSpec, flags: u64) -> Result<[u8; HEADER_LEN]> {
    for g in [g1, g2] {
        if !g.is_centered() {
            return Err(Error::GridMismatch("QSHT stores no grid origin; only centered grids can be written".into()));
        }
    }
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&QSHT_MAGIC);
    h[4] = VERSION;
    h[5] = dtype;
    for (n, d) in [g1.nx, g1.ny, g2.nx, g2.ny].iter().enumerate() {
        h[8 + 8 * n..16 + 8 * n].copy_from_slice(&(*d as u64).to_le_bytes());
    }
    h[40..48].copy_from_slice(&g1.pitch.to_le_bytes());
    h[48..56].copy_from_slice(&g2.pitch.to_le_bytes());
    h[56..64].copy_from_slice(&flags.to_le_bytes());
    Ok(h)
}

fn flags(symmetric: bool, nonnegative: bool) -> u64 {
    (if symmetric { FLAG_SYMMETRIC } else { 0 }) | (if nonnegative { FLAG_NONNEGATIVE } else { 0 })
}

/// Writes a tensor and returns the number of bytes emitted.
pub fn write_tensor<W: Write>(tensor: &Tensor, sink: &mut W) -> Result<u64> {
    let mut written = HEADER_LEN as u64;
    match tensor {
        Tensor::Real(f) => {
            sink.write_all(&header(DTYPE_REAL, f.grid1(), f.grid2(), flags(f.is_symmetric(), f.is_nonnegative()))?)?;
            let mut buf = Vec::with_capacity(f.data().len() * 8);
            for v in f.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            sink.write_all(&buf)?;
            written += buf.len() as u64;
        }
        Tensor::Complex(f) => {
            sink.write_all(&header(DTYPE_COMPLEX, f.grid1(), f.grid2(), flags(f.is_symmetric(), false))?)?;
            let mut buf = Vec::with_capacity(f.data().len() * 16);
            for v in f.data() {
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
            sink.write_all(&buf)?;
            written += buf.len() as u64;
        }
        Tensor::Sparse(s) => {
            let g = s.pixel_grid();
            sink.write_all(&header(DTYPE_SPARSE, g, g, 0)?)?;
            let mut buf = Vec::with_capacity(8 + s.len() * 16);
            buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
            for &(k, v) in s.entries() {
                buf.extend_from_slice(&k.to_le_bytes());
                buf.extend_from_slice(&v.to_le_bytes());
            }
            sink.write_all(&buf)?;
            written += buf.len() as u64;
        }
    }
    Ok(written)
}

fn read_exact_counted<R: Read>(source: &mut R, len: u64, offset: u64) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    source.take(len).read_to_end(&mut buf)?;
    if (buf.len() as u64) < len {
        return Err(FormatError::Truncated { expected: len, actual: buf.len() as u64, offset }.into());
    }
    Ok(buf)
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn grid_from(nx: u64, ny: u64, pitch: f64, offset: u64) -> Result<GridSpec> {
    GridSpec::centered(nx as usize, ny as usize, pitch)
        .map_err(|e| FormatError::InvalidHeader { reason: e.to_string(), offset }.into())
}

pub fn read_tensor<R: Read>(source: &mut R) -> Result<Tensor> {
    let h = read_exact_counted(source, HEADER_LEN as u64, 0)?;
    let magic: [u8; 4] = h[0..4].try_into().unwrap();
    if magic != QSHT_MAGIC {
        return Err(FormatError::BadMagic { expected: QSHT_MAGIC, found: magic }.into());
    }
    if h[4] != VERSION {
        return Err(FormatError::UnsupportedVersion { found: h[4], offset: 4 }.into());
    }
    let dtype = h[5];
    if !(DTYPE_REAL..=DTYPE_SPARSE).contains(&dtype) {
        return Err(FormatError::UnknownDtype { found: dtype, offset: 5 }.into());
    }
    if h[6] != 0 || h[7] != 0 {
        return Err(FormatError::InvalidHeader { reason: "reserved bytes must be zero".into(), offset: 6 }.into());
    }
    let dims = [u64_at(&h, 8), u64_at(&h, 16), u64_at(&h, 24), u64_at(&h, 32)];
    let g1 = grid_from(dims[0], dims[1], f64_at(&h, 40), 8)?;
    let g2 = grid_from(dims[2], dims[3], f64_at(&h, 48), 24)?;
    let flag_bits = u64_at(&h, 56);
    if flag_bits & !(FLAG_SYMMETRIC | FLAG_NONNEGATIVE) != 0 {
        return Err(
            FormatError::InvalidHeader { reason: format!("unknown flag bits {flag_bits:#x}"), offset: 56 }.into()
        );
    }
    let n = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::InvalidHeader { reason: "dimension product overflows".into(), offset: 8 })?;
    let payload_at = HEADER_LEN as u64;
    let invalid = |reason: String, offset: u64| -> Error { FormatError::InvalidPayload { reason, offset }.into() };

    match dtype {
        DTYPE_REAL => {
            let b = read_exact_counted(source, n * 8, payload_at)?;
            let data: Vec<f64> = b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let mut f = RealField4::new(g1, g2, data).map_err(|e| invalid(e.to_string(), payload_at))?;
            if flag_bits & FLAG_SYMMETRIC != 0 {
                f = f.with_symmetric().map_err(|e| invalid(e.to_string(), 56))?;
            }
            if flag_bits & FLAG_NONNEGATIVE != 0 {
                f = f.with_nonnegative().map_err(|e| invalid(e.to_string(), 56))?;
            }
            Ok(Tensor::Real(f))
        }
        DTYPE_COMPLEX => {
            let b = read_exact_counted(source, n * 16, payload_at)?;
            let data: Vec<Complex64> = b.chunks_exact(16).map(|c| Complex64::new(f64_at(c, 0), f64_at(c, 8))).collect();
            let mut f = ComplexField4::new(g1, g2, data).map_err(|e| invalid(e.to_string(), payload_at))?;
            if flag_bits & FLAG_SYMMETRIC != 0 {
                f = f.with_symmetric().map_err(|e| invalid(e.to_string(), 56))?;
            }
            Ok(Tensor::Complex(f))
        }
        _ => {
            if g1 != g2 {
                return Err(FormatError::InvalidHeader {
                    reason: "sparse tensor needs identical pixel grids".into(),
                    offset: 8,
                }
                .into());
            }
            let count = u64_at(&read_exact_counted(source, 8, payload_at)?, 0);
            let len = count.checked_mul(16).ok_or_else(|| invalid("entry count overflows".into(), payload_at))?;
            let b = read_exact_counted(source, len, payload_at + 8)?;
            let entries = b.chunks_exact(16).map(|c| (u64_at(c, 0), f64_at(c, 8))).collect();
            let s = SparseJpd::from_sorted(g1, entries).map_err(|e| invalid(e.to_string(), payload_at + 8))?;
            Ok(Tensor::Sparse(s))
        }
    }
}

pub fn write_tensor_file(tensor: &Tensor, path: &Path) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = write_tensor(tensor, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(n: usize, m: usize, p: f64) -> GridSpec {
        GridSpec::centered(n, m, p).unwrap()
    }

    fn bytes(t: &Tensor) -> Vec<u8> {
        let mut v = Vec::new();
        let n = write_tensor(t, &mut v).unwrap();
        assert_eq!(n as usize, v.len());
        v
    }

    #[test]
    fn minimal_real_tensor_is_72_bytes() {
        let t = Tensor::Real(RealField4::new(g(1, 1, 1.0), g(1, 1, 1.0), vec![0.0]).unwrap());
        assert_eq!(bytes(&t).len(), 64 + 8);
    }

    #[test]
    fn complex_payload_length() {
        let grid = g(2, 2, 3.75e-5);
        let data = (0..16).map(|n| Complex64::new(n as f64, -(n as f64) / 3.0)).collect();
        let t = Tensor::Complex(ComplexField4::new(grid, grid, data).unwrap());
        let b = bytes(&t);
        assert_eq!(b.len() - 64, 256);
        assert_eq!(read_tensor(&mut b.as_slice()).unwrap(), t);
    }

    #[test]
    fn bad_magic_truncation_and_dtype_are_distinct() {
        let t = Tensor::Real(RealField4::new(g(1, 1, 1.0), g(1, 2, 1.0), vec![1.0, 2.0]).unwrap());
        let b = bytes(&t);

        let mut bad = b.clone();
        bad[0] = b'X';
        let e = read_tensor(&mut bad.as_slice()).unwrap_err();
        assert!(e.to_string().contains("bad magic"), "{e}");

        let short = &b[..b.len() - 3];
        match read_tensor(&mut &short[..]).unwrap_err() {
            Error::Format(FormatError::Truncated { expected, actual, offset }) => {
                assert_eq!((expected, actual, offset), (16, 13, 64));
            }
            other => panic!("unexpected {other}"),
        }

        let e = read_tensor(&mut b.as_slice()).unwrap().into_complex().unwrap_err();
        assert!(matches!(e, Error::Format(FormatError::DtypeMismatch { .. })));

        let mut dt = b.clone();
        dt[5] = 9;
        assert!(matches!(
            read_tensor(&mut dt.as_slice()).unwrap_err(),
            Error::Format(FormatError::UnknownDtype { .. })
        ));
    }

    #[test]
    fn refuses_uncentered_grid() {
        let grid = GridSpec::new(2, 2, 1.0, 0.0, 0.0).unwrap();
        let t = Tensor::Real(RealField4::zeros(grid, grid));
        assert!(write_tensor(&t, &mut Vec::new()).is_err());
    }

    #[test]
    fn flags_survive() {
        let grid = g(2, 1, 1.0);
        let f = RealField4::new(grid, grid, vec![1.0, 2.0, 2.0, 3.0])
            .unwrap()
            .with_symmetric()
            .unwrap()
            .with_nonnegative()
            .unwrap();
        let back = read_tensor(&mut bytes(&Tensor::Real(f)).as_slice()).unwrap().into_real().unwrap();
        assert!(back.is_symmetric() && back.is_nonnegative());
    }

    proptest! {
        #[test]
        fn real_round_trip(nx in 1usize..4, ny in 1usize..4, mx in 1usize..4, my in 1usize..4, seed in any::<u64>()) {
            let g1 = g(nx, ny, 1.5e-5);
            let g2 = g(mx, my, 2.5e-4);
            let mut s = seed;
            let f = RealField4::from_fn(g1, g2, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits((s >> 2) & 0x7fef_ffff_ffff_ffff) * if s & 1 == 0 { 1.0 } else { -1.0 }
            }).unwrap();
            let t = Tensor::Real(f);
            prop_assert_eq!(read_tensor(&mut bytes(&t).as_slice()).unwrap(), t);
        }

        #[test]
        fn complex_round_trip(n in 1usize..4, vals in proptest::collection::vec((-1e9f64..1e9, -1e-9f64..1e-9), 81)) {
            let grid = g(n, n, 3.0e-4);
            let len = grid.len() * grid.len();
            let data = vals[..len].iter().map(|&(a, b)| Complex64::new(a, b)).collect();
            let t = Tensor::Complex(ComplexField4::new(grid, grid, data).unwrap());
            prop_assert_eq!(read_tensor(&mut bytes(&t).as_slice()).unwrap(), t);
        }

        #[test]
        fn sparse_round_trip(vals in proptest::collection::vec((0usize..6, 0usize..3, 0usize..6, 0usize..3, -5.0f64..5.0), 0..50)) {
            let s = SparseJpd::new(g(6, 3, 1.6e-5), vals.into_iter().map(|(a, b, c, d, v)| ([a, b, c, d], v))).unwrap();
            let t = Tensor::Sparse(s);
            prop_assert_eq!(read_tensor(&mut bytes(&t).as_slice()).unwrap(), t);
        }
    }
}
