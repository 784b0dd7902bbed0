//! Binary serialization of photon record sets.
//!
//! Fixed little-endian layout, one file per source:
//!
//! ```text
//! magic   4 bytes  "FDRS"
//! version u32      1
//! source  u32
//! launched, n_records, escaped, expired   u64 each
//! then per record:
//!   launch_counter u64, detector u32, time_of_flight f64,
//!   count u32, count x (voxel u32, length f64)
//! ```
//!
//! The in-memory `total_length` is not stored; it is recomputed as the sum
//! of the stored chord lengths on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::transport::{PhotonRecord, PhotonRecordSet};

const MAGIC: &[u8; 4] = b"FDRS";
const VERSION: u32 = 1;

pub fn write_record_set(path: &Path, set: &PhotonRecordSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(set.source_index)?;
    w.write_u64::<LittleEndian>(set.launched_count)?;
    w.write_u64::<LittleEndian>(set.records.len() as u64)?;
    w.write_u64::<LittleEndian>(set.escape_count)?;
    w.write_u64::<LittleEndian>(set.expired_count)?;
    for record in &set.records {
        w.write_u64::<LittleEndian>(record.launch_counter)?;
        w.write_u32::<LittleEndian>(record.detector_index)?;
        w.write_f64::<LittleEndian>(record.time_of_flight)?;
        w.write_u32::<LittleEndian>(record.pathlengths.len() as u32)?;
        for &(voxel, length) in &record.pathlengths {
            w.write_u32::<LittleEndian>(voxel)?;
            w.write_f64::<LittleEndian>(length)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_record_set(path: &Path) -> Result<PhotonRecordSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a photon record file",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported record version {version}",
            path.display()
        )));
    }
    let source_index = r.read_u32::<LittleEndian>()?;
    let launched_count = r.read_u64::<LittleEndian>()?;
    let n_records = r.read_u64::<LittleEndian>()?;
    let escape_count = r.read_u64::<LittleEndian>()?;
    let expired_count = r.read_u64::<LittleEndian>()?;
    let mut records = Vec::with_capacity(n_records as usize);
    for _ in 0..n_records {
        let launch_counter = r.read_u64::<LittleEndian>()?;
        let detector_index = r.read_u32::<LittleEndian>()?;
        let time_of_flight = r.read_f64::<LittleEndian>()?;
        let count = r.read_u32::<LittleEndian>()?;
        let mut pathlengths = Vec::with_capacity(count as usize);
        let mut total_length = 0.0;
        for _ in 0..count {
            let voxel = r.read_u32::<LittleEndian>()?;
            let length = r.read_f64::<LittleEndian>()?;
            total_length += length;
            pathlengths.push((voxel, length));
        }
        records.push(PhotonRecord {
            detector_index,
            launch_counter,
            time_of_flight,
            pathlengths,
            total_length,
        });
    }
    Ok(PhotonRecordSet {
        source_index,
        launched_count,
        records,
        escape_count,
        expired_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> PhotonRecordSet {
        PhotonRecordSet {
            source_index: 2,
            launched_count: 10,
            records: vec![
                PhotonRecord {
                    detector_index: 0,
                    launch_counter: 3,
                    time_of_flight: 1.25e-10,
                    pathlengths: vec![(5, 0.5), (9, 1.25)],
                    total_length: 1.75,
                },
                PhotonRecord {
                    detector_index: 1,
                    launch_counter: 7,
                    time_of_flight: 2.5e-10,
                    pathlengths: vec![(5, 2.0)],
                    total_length: 2.0,
                },
            ],
            escape_count: 7,
            expired_count: 1,
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("source_2.fdrs");
        let set = sample_set();
        write_record_set(&path, &set).unwrap();
        let back = read_record_set(&path).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.bin");
        std::fs::write(&path, b"not a record file").unwrap();
        assert!(matches!(read_record_set(&path), Err(Error::Format(_))));
    }
}
