//! Little-endian binary snapshot format.
//!
//! Layout: magic `CKNF`, version `u32 = 1`, `n_per_axis: u32`,
//! `box_length: f64`, `time: f64`, then `3 n³` velocity values (component
//! major, x fastest) and `n³` pressure values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::fields::FieldSnapshot;
use crate::grid::TorusGrid;

pub const MAGIC: &[u8; 4] = b"CKNF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

pub fn encode(snapshot: &FieldSnapshot) -> Vec<u8> {
    let grid = snapshot.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 32 * grid.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.n() as u32).to_le_bytes());
    out.extend_from_slice(&grid.box_length().to_le_bytes());
    out.extend_from_slice(&snapshot.time().to_le_bytes());
    for c in snapshot.velocity() {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in snapshot.pressure() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FieldSnapshot> {
    let format = |offset: usize, message: String| CoreError::Format { offset, message };
    if bytes.len() < HEADER_LEN {
        return Err(format(
            bytes.len(),
            format!("truncated header: expected {HEADER_LEN} bytes, got {}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let box_length = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let time = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let grid = TorusGrid::new(n, box_length).map_err(|e| format(8, e.to_string()))?;
    let len = grid.len();
    let expected = HEADER_LEN + 4 * len * 8;
    if bytes.len() != expected {
        return Err(format(
            bytes.len().min(expected),
            format!("payload length mismatch: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let velocity = [
        values[0..len].to_vec(),
        values[len..2 * len].to_vec(),
        values[2 * len..3 * len].to_vec(),
    ];
    let pressure = values[3 * len..].to_vec();
    FieldSnapshot::new(grid, time, velocity, pressure).map_err(|e| format(20, e.to_string()))
}

pub fn write_snapshot<W: Write>(mut writer: W, snapshot: &FieldSnapshot) -> Result<()> {
    writer.write_all(&encode(snapshot))?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut reader: R) -> Result<FieldSnapshot> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save(path: &Path, snapshot: &FieldSnapshot) -> Result<()> {
    std::fs::write(path, encode(snapshot)).map_err(|e| CoreError::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<FieldSnapshot> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FieldSnapshot {
        let grid = TorusGrid::new(8, 1.5).unwrap();
        let u = grid.sample_vector(|p| [p[0].sin(), -p[1], p[2] * p[0]]);
        let p = grid.sample(|p| p[0] - p[2]);
        FieldSnapshot::new(grid, 0.125, u, p).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let back = decode(&encode(&s)).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode(&back), encode(&s));
    }

    #[test]
    fn corrupted_magic_reports_offset_zero() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(CoreError::Format { offset: 0, .. })));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(&sample());
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(CoreError::Format { offset: 4, .. })));
    }

    #[test]
    fn truncation_names_lengths() {
        let bytes = encode(&sample());
        let cut = &bytes[..bytes.len() - 3];
        match decode(cut) {
            Err(CoreError::Format { offset, message }) => {
                assert_eq!(offset, cut.len());
                assert!(message.contains(&bytes.len().to_string()));
                assert!(message.contains(&cut.len().to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
