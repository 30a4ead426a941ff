//! Recorded muon tracks and their on-disk formats.
//!
//! Each event stores the exact crossing state at the top and bottom tracking
//! planes. The binary container is little-endian: an 8-byte magic "MUTOMO01",
//! format version (u32), drum orientation in radians (f64), event count (u64)
//! and 12 reserved zero bytes, followed by 13 f64 values per event in the
//! order t, x1, y1, z1, cx1, cy1, cz1, x2, y2, z2, cx2, cy2, cz2.

use crate::geometry::{rotate_about_x, rotate_point_about_x, Ray};
use nalgebra::{Point3, Vector3};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const EVENT_MAGIC: &[u8; 8] = b"MUTOMO01";
pub const EVENT_FORMAT_VERSION: u32 = 1;
pub const EVENT_HEADER_BYTES: u64 = 40;
pub const EVENT_RECORD_BYTES: u64 = 104;
pub const CSV_HEADER: &str = "t,x1,y1,z1,cx1,cy1,cz1,x2,y2,z2,cx2,cy2,cz2";

/// One muon crossing both tracking planes: timestamp (s), position (cm) and
/// unit direction cosines at each plane, in laboratory coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuonEvent {
    pub time: f64,
    pub top_pos: Point3<f64>,
    pub top_dir: Vector3<f64>,
    pub bottom_pos: Point3<f64>,
    pub bottom_dir: Vector3<f64>,
}

impl MuonEvent {
    fn to_values(self) -> [f64; 13] {
        [
            self.time,
            self.top_pos.x,
            self.top_pos.y,
            self.top_pos.z,
            self.top_dir.x,
            self.top_dir.y,
            self.top_dir.z,
            self.bottom_pos.x,
            self.bottom_pos.y,
            self.bottom_pos.z,
            self.bottom_dir.x,
            self.bottom_dir.y,
            self.bottom_dir.z,
        ]
    }

    fn from_values(v: [f64; 13]) -> Self {
        Self {
            time: v[0],
            top_pos: Point3::new(v[1], v[2], v[3]),
            top_dir: Vector3::new(v[4], v[5], v[6]),
            bottom_pos: Point3::new(v[7], v[8], v[9]),
            bottom_dir: Vector3::new(v[10], v[11], v[12]),
        }
    }
}

/// Events recorded at one drum orientation (radians). Provenance (seed and
/// generator build) travels in the run manifest, not in the binary container,
/// so a file round-trip reproduces orientation and events only.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDataset {
    pub orientation: f64,
    pub events: Vec<MuonEvent>,
}

pub const FIELD_NAMES: [&str; 13] = [
    "t", "x1", "y1", "z1", "cx1", "cy1", "cz1", "x2", "y2", "z2", "cx2", "cy2", "cz2",
];

#[derive(Debug, thiserror::Error)]
pub enum EventFileError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected MUTOMO01")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: expected {expected} events, file ends inside event {index}")]
    Truncated { expected: u64, index: u64 },
    #[error("count mismatch: header says {expected} events but payload holds more")]
    CountMismatch { expected: u64 },
    #[error("NaN in event {index} field {field}")]
    NanField { index: u64, field: &'static str },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Angle (rad) between the entry and exit directions, the total scattering
/// deflection of a track. The normalized dot product is clamped to [-1, 1]
/// before the arccosine so antiparallel/parallel pairs stay finite.
pub fn scattering_angle(v1: &Vector3<f64>, v2: &Vector3<f64>) -> f64 {
    let denom = v1.norm() * v2.norm();
    assert!(denom > 0.0, "scattering_angle got a zero-length direction");
    (v1.dot(v2) / denom).clamp(-1.0, 1.0).acos()
}

/// Continues a straight track from `pos` along `dir` to the plane z = `target_z`.
pub fn project_track(pos: &Point3<f64>, dir: &Vector3<f64>, target_z: f64) -> Point3<f64> {
    assert!(dir.z.abs() > 0.0, "cannot project a track parallel to a z plane");
    let s = (target_z - pos.z) / dir.z;
    pos + dir * s
}

/// Event as seen from the drum's rest frame: positions and directions rotated
/// about +x by the negated orientation. Applying it with the dataset's own
/// orientation undoes the physical drum rotation.
pub fn to_drum_frame(event: &MuonEvent, orientation: f64) -> MuonEvent {
    let a = -orientation;
    MuonEvent {
        time: event.time,
        top_pos: rotate_point_about_x(&event.top_pos, a),
        top_dir: rotate_about_x(&event.top_dir, a),
        bottom_pos: rotate_point_about_x(&event.bottom_pos, a),
        bottom_dir: rotate_about_x(&event.bottom_dir, a),
    }
}

/// Straight-line ray along the top-plane track, used to carry the measured
/// deflection through the reconstruction volume.
pub fn incoming_ray(event: &MuonEvent) -> Ray {
    Ray { origin: event.top_pos, dir: event.top_dir }
}

pub fn write_events(path: &Path, dataset: &EventDataset) -> Result<(), EventFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EVENT_MAGIC)?;
    w.write_all(&EVENT_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&dataset.orientation.to_le_bytes())?;
    w.write_all(&(dataset.events.len() as u64).to_le_bytes())?;
    w.write_all(&[0u8; 12])?;
    for ev in &dataset.events {
        for v in ev.to_values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<EventDataset, EventFileError> {
    let mut reader = BufReader::new(File::open(path)?);
    let (orientation, count) = read_event_header(&mut reader)?;
    let mut events = Vec::with_capacity(count as usize);
    let mut buf = [0u8; EVENT_RECORD_BYTES as usize];
    for index in 0..count {
        read_exact_or(&mut reader, &mut buf, || EventFileError::Truncated {
            expected: count,
            index,
        })?;
        events.push(decode_event(&buf, index)?);
    }
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(EventFileError::CountMismatch { expected: count });
    }
    Ok(EventDataset { orientation, events })
}

pub(crate) fn read_event_header<R: Read>(r: &mut R) -> Result<(f64, u64), EventFileError> {
    let mut magic = [0u8; 8];
    read_exact_or(r, &mut magic, || EventFileError::Truncated { expected: 0, index: 0 })?;
    if &magic != EVENT_MAGIC {
        return Err(EventFileError::BadMagic);
    }
    let mut head = [0u8; 32];
    read_exact_or(r, &mut head, || EventFileError::Truncated { expected: 0, index: 0 })?;
    let version = u32::from_le_bytes(head[0..4].try_into().unwrap());
    if version != EVENT_FORMAT_VERSION {
        return Err(EventFileError::UnsupportedVersion(version));
    }
    let orientation = f64::from_le_bytes(head[4..12].try_into().unwrap());
    let count = u64::from_le_bytes(head[12..20].try_into().unwrap());
    Ok((orientation, count))
}

pub(crate) fn decode_event(
    buf: &[u8; EVENT_RECORD_BYTES as usize],
    index: u64,
) -> Result<MuonEvent, EventFileError> {
    let mut values = [0f64; 13];
    for (k, v) in values.iter_mut().enumerate() {
        *v = f64::from_le_bytes(buf[k * 8..k * 8 + 8].try_into().unwrap());
        if v.is_nan() {
            return Err(EventFileError::NanField { index, field: FIELD_NAMES[k] });
        }
    }
    Ok(MuonEvent::from_values(values))
}

fn read_exact_or<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    err: impl Fn() -> EventFileError,
) -> Result<(), EventFileError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(err());
        }
        filled += n;
    }
    Ok(())
}

/// Reads events from an open file sequentially, `chunk` events at a time,
/// without holding the whole dataset in memory.
pub struct EventFileReader {
    reader: BufReader<File>,
    pub orientation: f64,
    pub count: u64,
    cursor: u64,
}

impl EventFileReader {
    pub fn open(path: &Path) -> Result<Self, EventFileError> {
        let mut reader = BufReader::new(File::open(path)?);
        let (orientation, count) = read_event_header(&mut reader)?;
        Ok(Self { reader, orientation, count, cursor: 0 })
    }

    pub fn remaining(&self) -> u64 {
        self.count - self.cursor
    }

    pub fn next_chunk(&mut self, chunk: usize) -> Result<Vec<MuonEvent>, EventFileError> {
        let take = (self.remaining() as usize).min(chunk);
        let mut events = Vec::with_capacity(take);
        let mut buf = [0u8; EVENT_RECORD_BYTES as usize];
        for _ in 0..take {
            read_exact_or(&mut self.reader, &mut buf, || EventFileError::Truncated {
                expected: self.count,
                index: self.cursor,
            })?;
            events.push(decode_event(&buf, self.cursor)?);
            self.cursor += 1;
        }
        Ok(events)
    }
}

/// Text mirror of the event list: one header line, then one line per event
/// with shortest round-trip decimal formatting, so parsing reproduces every
/// f64 bit pattern.
pub fn write_events_csv(path: &Path, dataset: &EventDataset) -> Result<(), EventFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    for ev in &dataset.events {
        let vals = ev.to_values();
        let line: Vec<String> = vals.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the CSV mirror. The orientation is not representable in the text
/// format; the caller supplies it.
pub fn read_events_csv(path: &Path, orientation: f64) -> Result<EventDataset, EventFileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != CSV_HEADER {
                return Err(EventFileError::Csv {
                    line: 1,
                    message: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(EventFileError::Csv {
                line: lineno + 1,
                message: format!("expected 13 fields, got {}", fields.len()),
            });
        }
        let mut values = [0f64; 13];
        for (k, f) in fields.iter().enumerate() {
            values[k] = f.trim().parse::<f64>().map_err(|e| EventFileError::Csv {
                line: lineno + 1,
                message: format!("field {}: {e}", FIELD_NAMES[k]),
            })?;
        }
        events.push(MuonEvent::from_values(values));
    }
    Ok(EventDataset { orientation, events })
}
