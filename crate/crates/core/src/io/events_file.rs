//! Event stream serialization: the binary "EVT1" container and a plain CSV
//! form for interoperability.
//!
//! EVT1 layout, all little-endian: a 16-byte header (magic `EVT1`, u32
//! width, u32 height, u32 count) followed by `count` 16-byte records of
//! (f64 t, u16 x, u16 y, i8 polarity, 3 pad bytes). Neither format stores
//! thresholds, so readers take them as an argument.

use super::io_error;
use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Thresholds};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"EVT1";
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 16;

/// Writes `stream` as an EVT1 file.
pub fn write_evt1(path: &Path, stream: &EventStream) -> Result<()> {
    let events = stream.events();
    let count = u32::try_from(events.len())
        .map_err(|_| Error::argument(format!("{} events exceed u32 count field", events.len())))?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + events.len() * RECORD_LEN);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&stream.width.to_le_bytes());
    bytes.extend_from_slice(&stream.height.to_le_bytes());
    bytes.extend_from_slice(&count.to_le_bytes());
    for e in events {
        bytes.extend_from_slice(&e.t.to_le_bytes());
        bytes.extend_from_slice(&e.x.to_le_bytes());
        bytes.extend_from_slice(&e.y.to_le_bytes());
        bytes.push(e.p as u8);
        bytes.extend_from_slice(&[0u8; 3]);
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// Reads an EVT1 file. Malformed input is reported with the byte offset at
/// which parsing failed.
pub fn read_evt1(path: &Path, thresholds: Thresholds) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let name = path.display();
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!(
            "{name}: header truncated at byte offset {}, need {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(format!(
            "{name}: bad magic at byte offset 0, expected \"EVT1\", found {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let le_u32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let width = le_u32(4);
    let height = le_u32(8);
    let count = le_u32(12) as usize;
    let expected = HEADER_LEN + count * RECORD_LEN;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "{name}: {count} records need {expected} bytes, file ends at byte offset {}",
            bytes.len()
        )));
    }
    let mut events = Vec::with_capacity(count);
    for i in 0..count {
        let o = HEADER_LEN + i * RECORD_LEN;
        events.push(Event {
            t: f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()),
            x: u16::from_le_bytes(bytes[o + 8..o + 10].try_into().unwrap()),
            y: u16::from_le_bytes(bytes[o + 10..o + 12].try_into().unwrap()),
            p: bytes[o + 12] as i8,
        });
    }
    EventStream::new(width, height, thresholds, events)
}

/// Writes `stream` as CSV with a `t,x,y,p` header line.
pub fn write_events_csv(path: &Path, stream: &EventStream) -> Result<()> {
    let mut text = String::from("t,x,y,p\n");
    for e in stream.events() {
        // 17 significant digits round-trip any f64 exactly.
        text.push_str(&format!("{:.17e},{},{},{}\n", e.t, e.x, e.y, e.p));
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Reads `t,x,y,p` CSV events. The sensor dimensions are not part of the
/// format, so the caller provides them along with the thresholds.
pub fn read_events_csv(
    path: &Path,
    width: u32,
    height: u32,
    thresholds: Thresholds,
) -> Result<EventStream> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let name = path.display();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "t,x,y,p" => {}
        Some((_, header)) => {
            return Err(Error::format(format!(
                "{name}: expected header \"t,x,y,p\", found {header:?}"
            )))
        }
        None => return Err(Error::format(format!("{name}: empty file"))),
    }
    let mut events = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::format(format!(
                "{name}: line {}: expected 4 fields, found {}",
                idx + 1,
                fields.len()
            )));
        }
        let bad = |what: &str| {
            Error::format(format!("{name}: line {}: bad {what} {:?}", idx + 1, line))
        };
        events.push(Event {
            t: fields[0].trim().parse().map_err(|_| bad("timestamp"))?,
            x: fields[1].trim().parse().map_err(|_| bad("x"))?,
            y: fields[2].trim().parse().map_err(|_| bad("y"))?,
            p: fields[3].trim().parse().map_err(|_| bad("polarity"))?,
        });
    }
    EventStream::new(width, height, thresholds, events)
}
