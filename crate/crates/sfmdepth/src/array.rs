//! Per-frame binary arrays.
//!
//! Layout, little-endian: 4-byte magic `SFDA`, `u16` dtype code, `u32`
//! height, `u32` width, `u16` channels, then `height * width * channels`
//! elements in row-major, channel-last order.

use std::fs;
use std::path::Path;

use sfmdepth_core::grid::Grid;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SFDA";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum DType {
    U8 = 1,
    F32 = 2,
    F64 = 3,
}

impl DType {
    fn from_code(code: u16) -> Option<Self> {
        match code {
            1 => Some(DType::U8),
            2 => Some(DType::F32),
            3 => Some(DType::F64),
            _ => None,
        }
    }
}

pub trait Element: Copy + Sized {
    const DTYPE: DType;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl Element for u8 {
    const DTYPE: DType = DType::U8;
    const SIZE: usize = 1;
    fn put(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn take(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    const SIZE: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    const SIZE: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Element> Array<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * T::SIZE);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(T::DTYPE as u16).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u16).to_le_bytes());
        for v in &self.data {
            v.put(&mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN || bytes[..4] != MAGIC {
            return Err(Error::format(path, "not an array file"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let dtype = DType::from_code(u16_at(4)).ok_or_else(|| Error::format(path, "unknown dtype code"))?;
        if dtype != T::DTYPE {
            return Err(Error::format(
                path,
                format!("dtype is {dtype:?}, expected {:?}", T::DTYPE),
            ));
        }
        let height = u32_at(6) as usize;
        let width = u32_at(10) as usize;
        let channels = u16_at(14) as usize;
        let n = height * width * channels;
        let body = &bytes[HEADER_LEN..];
        if body.len() != n * T::SIZE {
            return Err(Error::format(
                path,
                format!("expected {} data bytes, found {}", n * T::SIZE, body.len()),
            ));
        }
        let data = body.chunks_exact(T::SIZE).map(T::take).collect();
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

impl Array<f64> {
    pub fn from_grid(grid: &Grid<f64>) -> Self {
        Self::new(grid.height(), grid.width(), 1, grid.as_slice().to_vec())
    }

    pub fn into_grid(self, path: &Path) -> Result<Grid<f64>> {
        if self.channels != 1 {
            return Err(Error::format(path, "expected a single-channel array"));
        }
        Ok(Grid::from_vec(self.height, self.width, self.data)?)
    }
}

pub fn write_grid(path: impl AsRef<Path>, grid: &Grid<f64>) -> Result<()> {
    Array::from_grid(grid).write(path)
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid<f64>> {
    let path = path.as_ref();
    Array::<f64>::read(path)?.into_grid(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_sixteen_bytes() {
        let a = Array::new(2, 3, 2, vec![0.5f32; 12]);
        let bytes = a.encode();
        assert_eq!(bytes.len(), 16 + 48);
        assert_eq!(&bytes[..4], b"SFDA");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 2);
        assert_eq!(Array::<f32>::decode(&bytes, Path::new("x")).unwrap(), a);
    }

    #[test]
    fn wrong_dtype_or_length_is_rejected() {
        let bytes = Array::new(1, 2, 1, vec![1.0f64, 2.0]).encode();
        assert!(Array::<f32>::decode(&bytes, Path::new("x")).is_err());
        assert!(Array::<f64>::decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(Array::<f64>::decode(b"nope", Path::new("x")).is_err());
    }
}
