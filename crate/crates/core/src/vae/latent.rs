//! `.ltv` latent container: magic `LTVX`, version (u32), channels (u32), then
//! a sparse grid whose payload is `channels` little-endian f64 values.

use thiserror::Error;

use crate::nn::Tensor;
use crate::sparse_grid::{read_grid, write_grid, GridError, SparseGrid};

use super::TVoxels;

pub const MAGIC: &[u8; 4] = b"LTVX";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum LatentError {
    #[error("not a latent file (bad magic)")]
    BadMagic,
    #[error("unsupported latent version {0}")]
    Version(u32),
    #[error("latent has {found} channels but {expected} were expected")]
    Channels { expected: usize, found: usize },
    #[error("trailing bytes after latent grid")]
    Trailing,
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn to_bytes(latent: &TVoxels) -> Vec<u8> {
    let c = latent.channels();
    let grid = SparseGrid::from_entries(
        latent.resolution,
        latent
            .coords
            .iter()
            .enumerate()
            .map(|(i, &coord)| (coord, i)),
    );
    let mut out = MAGIC.to_vec();
    out.extend(VERSION.to_le_bytes());
    out.extend((c as u32).to_le_bytes());
    out.extend(write_grid(&grid, 8 * c, |&row, buf| {
        for v in latent.z.row(row) {
            buf.extend(v.to_le_bytes());
        }
    }));
    out
}

/// Parses a latent; `expected_channels` rejects width mismatches up front.
pub fn from_bytes(bytes: &[u8], expected_channels: Option<usize>) -> Result<TVoxels, LatentError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(LatentError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(LatentError::Version(version));
    }
    let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if let Some(expected) = expected_channels {
        if expected != c {
            return Err(LatentError::Channels { expected, found: c });
        }
    }
    let (grid, used) = read_grid(&bytes[12..], Some(8 * c), |raw| {
        raw.chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect::<Vec<f64>>()
    })?;
    if 12 + used != bytes.len() {
        return Err(LatentError::Trailing);
    }
    let coords = grid.coords();
    let data = grid.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    Ok(TVoxels {
        resolution: grid.resolution(),
        z: Tensor::from_vec(coords.len(), c, data),
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TVoxels {
        TVoxels {
            resolution: 16,
            coords: vec![[0, 0, 1], [3, 2, 1], [15, 15, 15]],
            z: Tensor::from_vec(3, 2, vec![0.5, -1.0, 1e-300, f64::MAX, -0.0, 3.25]),
        }
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let bytes = to_bytes(&t);
        assert_eq!(&bytes[..4], b"LTVX");
        assert_eq!(from_bytes(&bytes, Some(2)).unwrap(), t);
        assert_eq!(to_bytes(&from_bytes(&bytes, None).unwrap()), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = to_bytes(&sample());
        assert_eq!(
            from_bytes(&bytes, Some(4)),
            Err(LatentError::Channels {
                expected: 4,
                found: 2
            })
        );
        bytes.push(0);
        assert_eq!(from_bytes(&bytes, None), Err(LatentError::Trailing));
        bytes[0] = b'Z';
        assert_eq!(from_bytes(&bytes, None), Err(LatentError::BadMagic));
    }
}
