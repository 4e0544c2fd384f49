//! On-disk formats for event streams and point clouds.
//!
//! Native event binary (all little-endian):
//!
//! ```text
//! header, 16 bytes:  magic "EVS1" | version u32 = 1 | width u32 | height u32
//! record, 16 bytes:  t u64 (microseconds) | x u16 | y u16 | polarity u8 | pad [0u8; 3]
//! ```
//!
//! Event CSV: header `t_us,x,y,polarity`, one event per line, polarity 0/1.
//!
//! Point text: one `x y z` triple per line, shortest round-trip float
//! formatting. Point binary: packed little-endian f64 triples, no header
//! (record count = file size / 24).

use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use stream_core::geometry::{validate_events, EventRecord, Point3, Sensor};

pub const EVENT_MAGIC: [u8; 4] = *b"EVS1";
pub const EVENT_VERSION: u32 = 1;
pub const EVENT_HEADER_LEN: usize = 16;
pub const EVENT_RECORD_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a native event file")]
    BadMagic,
    #[error("unsupported event file version {0}")]
    BadVersion(u32),
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("line {line}: {msg}")]
    BadLine { line: usize, msg: String },
    #[error("record {index}: {msg}")]
    BadRecord { index: usize, msg: String },
    #[error("{0}")]
    Geometry(stream_core::geometry::GeometryError),
}

/// An event stream together with its sensor geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    pub sensor: Sensor,
    pub events: Vec<EventRecord>,
}

pub fn encode_event_record(e: &EventRecord) -> [u8; EVENT_RECORD_LEN] {
    let mut buf = [0u8; EVENT_RECORD_LEN];
    buf[0..8].copy_from_slice(&e.t.to_le_bytes());
    buf[8..10].copy_from_slice(&e.x.to_le_bytes());
    buf[10..12].copy_from_slice(&e.y.to_le_bytes());
    buf[12] = e.polarity as u8;
    buf
}

pub fn decode_event_record(buf: &[u8; EVENT_RECORD_LEN], index: usize) -> Result<EventRecord, FormatError> {
    let polarity = match buf[12] {
        0 => false,
        1 => true,
        other => {
            return Err(FormatError::BadRecord { index, msg: format!("polarity byte {other} not 0/1") })
        }
    };
    if buf[13..16] != [0, 0, 0] {
        return Err(FormatError::BadRecord { index, msg: "nonzero padding".into() });
    }
    Ok(EventRecord {
        t: u64::from_le_bytes(buf[0..8].try_into().expect("8 bytes")),
        x: u16::from_le_bytes(buf[8..10].try_into().expect("2 bytes")),
        y: u16::from_le_bytes(buf[10..12].try_into().expect("2 bytes")),
        polarity,
    })
}

pub fn write_events_binary(mut w: impl Write, file: &EventFile) -> Result<(), FormatError> {
    let mut header = [0u8; EVENT_HEADER_LEN];
    header[0..4].copy_from_slice(&EVENT_MAGIC);
    header[4..8].copy_from_slice(&EVENT_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(file.sensor.width as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(file.sensor.height as u32).to_le_bytes());
    w.write_all(&header)?;
    for e in &file.events {
        w.write_all(&encode_event_record(e))?;
    }
    Ok(())
}

pub fn read_events_binary(mut r: impl Read) -> Result<EventFile, FormatError> {
    let mut header = [0u8; EVENT_HEADER_LEN];
    r.read_exact(&mut header).map_err(|_| FormatError::Truncated("header"))?;
    if header[0..4] != EVENT_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != EVENT_VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let width = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    let height = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes"));
    let sensor = Sensor::new(width as u16, height as u16);
    let mut events = Vec::new();
    let mut buf = [0u8; EVENT_RECORD_LEN];
    let mut index = 0usize;
    loop {
        match r.read_exact(&mut buf) {
            Ok(()) => {
                events.push(decode_event_record(&buf, index)?);
                index += 1;
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(FormatError::Io(e)),
        }
    }
    let file = EventFile { sensor, events };
    validate_events(&file.events, file.sensor).map_err(FormatError::Geometry)?;
    Ok(file)
}

pub const EVENT_CSV_HEADER: &str = "t_us,x,y,polarity";

pub fn write_events_csv(mut w: impl Write, file: &EventFile) -> Result<(), FormatError> {
    writeln!(w, "# sensor {}x{}", file.sensor.width, file.sensor.height)?;
    writeln!(w, "{EVENT_CSV_HEADER}")?;
    for e in &file.events {
        writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.polarity as u8)?;
    }
    Ok(())
}

/// Parses the canonical CSV form. A missing sensor comment infers the
/// sensor from the max coordinates (+1).
pub fn read_events_csv(r: impl BufRead) -> Result<EventFile, FormatError> {
    let mut sensor: Option<Sensor> = None;
    let mut events = Vec::new();
    let mut saw_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let number = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(dims) = rest.strip_prefix("sensor ") {
                let (w, h) = dims
                    .split_once('x')
                    .ok_or_else(|| FormatError::BadLine { line: number, msg: "bad sensor comment".into() })?;
                let parse = |s: &str| -> Result<u16, FormatError> {
                    s.trim().parse().map_err(|_| FormatError::BadLine {
                        line: number,
                        msg: format!("bad sensor dimension {s:?}"),
                    })
                };
                sensor = Some(Sensor::new(parse(w)?, parse(h)?));
            }
            continue;
        }
        if !saw_header {
            if trimmed != EVENT_CSV_HEADER {
                return Err(FormatError::BadLine {
                    line: number,
                    msg: format!("expected header {EVENT_CSV_HEADER:?}"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(FormatError::BadLine { line: number, msg: format!("expected 4 fields, got {}", fields.len()) });
        }
        let t: u64 = fields[0].trim().parse().map_err(|_| FormatError::BadLine {
            line: number,
            msg: format!("bad timestamp {:?}", fields[0]),
        })?;
        let x: u16 = fields[1].trim().parse().map_err(|_| FormatError::BadLine {
            line: number,
            msg: format!("bad x {:?}", fields[1]),
        })?;
        let y: u16 = fields[2].trim().parse().map_err(|_| FormatError::BadLine {
            line: number,
            msg: format!("bad y {:?}", fields[2]),
        })?;
        let polarity = match fields[3].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(FormatError::BadLine { line: number, msg: format!("bad polarity {other:?}") })
            }
        };
        events.push(EventRecord { t, x, y, polarity });
    }
    if !saw_header {
        return Err(FormatError::Truncated("csv header"));
    }
    let sensor = sensor.unwrap_or_else(|| {
        let w = events.iter().map(|e| e.x).max().map_or(1, |m| m + 1);
        let h = events.iter().map(|e| e.y).max().map_or(1, |m| m + 1);
        Sensor::new(w, h)
    });
    let file = EventFile { sensor, events };
    validate_events(&file.events, file.sensor).map_err(FormatError::Geometry)?;
    Ok(file)
}

pub fn write_points_text(mut w: impl Write, points: &[Point3]) -> Result<(), FormatError> {
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

pub fn read_points_text(r: impl BufRead) -> Result<Vec<Point3>, FormatError> {
    let mut points = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let number = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut coords = trimmed.split_whitespace();
        let mut next = |what: &str| -> Result<f64, FormatError> {
            coords
                .next()
                .ok_or_else(|| FormatError::BadLine { line: number, msg: format!("missing {what}") })?
                .parse()
                .map_err(|_| FormatError::BadLine { line: number, msg: format!("bad {what}") })
        };
        let p = Point3::new(next("x")?, next("y")?, next("z")?);
        if coords.next().is_some() {
            return Err(FormatError::BadLine { line: number, msg: "extra fields".into() });
        }
        points.push(p);
    }
    Ok(points)
}

pub fn write_points_binary(mut w: impl Write, points: &[Point3]) -> Result<(), FormatError> {
    for p in points {
        w.write_all(&p.x.to_le_bytes())?;
        w.write_all(&p.y.to_le_bytes())?;
        w.write_all(&p.z.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_points_binary(mut r: impl Read) -> Result<Vec<Point3>, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 24 != 0 {
        return Err(FormatError::Truncated("point triples"));
    }
    Ok(bytes
        .chunks_exact(24)
        .map(|c| {
            Point3::new(
                f64::from_le_bytes(c[0..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..16].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[16..24].try_into().expect("8 bytes")),
            )
        })
        .collect())
}

/// File kinds understood by the converter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    EventCsv,
    EventBin,
    PointText,
    PointBin,
}

impl FileKind {
    pub fn parse(s: &str) -> Option<FileKind> {
        match s {
            "event-csv" => Some(FileKind::EventCsv),
            "event-bin" => Some(FileKind::EventBin),
            "point-text" => Some(FileKind::PointText),
            "point-bin" => Some(FileKind::PointBin),
            _ => None,
        }
    }

    pub fn infer(path: &Path) -> Option<FileKind> {
        match path.extension()?.to_str()? {
            "csv" => Some(FileKind::EventCsv),
            "evs" => Some(FileKind::EventBin),
            "txt" | "xyz" => Some(FileKind::PointText),
            "pbin" => Some(FileKind::PointBin),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FileKind::EventCsv => "event-csv",
            FileKind::EventBin => "event-bin",
            FileKind::PointText => "point-text",
            FileKind::PointBin => "point-bin",
        }
    }

    pub fn is_event(&self) -> bool {
        matches!(self, FileKind::EventCsv | FileKind::EventBin)
    }
}

/// Lossless conversion between the formats of one data kind.
pub fn convert(
    input: &Path,
    output: &Path,
    from: FileKind,
    to: FileKind,
) -> Result<usize, FormatError> {
    let reader = std::io::BufReader::new(std::fs::File::open(input)?);
    let writer = BufWriter::new(std::fs::File::create(output)?);
    match (from, to) {
        (FileKind::EventCsv | FileKind::EventBin, FileKind::EventCsv | FileKind::EventBin) => {
            let file = match from {
                FileKind::EventCsv => read_events_csv(reader)?,
                _ => read_events_binary(reader)?,
            };
            match to {
                FileKind::EventCsv => write_events_csv(writer, &file)?,
                _ => write_events_binary(writer, &file)?,
            }
            Ok(file.events.len())
        }
        (FileKind::PointText | FileKind::PointBin, FileKind::PointText | FileKind::PointBin) => {
            let points = match from {
                FileKind::PointText => read_points_text(reader)?,
                _ => read_points_binary(reader)?,
            };
            match to {
                FileKind::PointText => write_points_text(writer, &points)?,
                _ => write_points_binary(writer, &points)?,
            }
            Ok(points.len())
        }
        _ => Err(FormatError::BadLine {
            line: 0,
            msg: format!("cannot convert {} to {}", from.name(), to.name()),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file() -> EventFile {
        EventFile {
            sensor: Sensor::new(8, 8),
            events: vec![
                EventRecord { t: 10, x: 1, y: 2, polarity: true },
                EventRecord { t: 12, x: 7, y: 0, polarity: false },
                EventRecord { t: 12, x: 3, y: 3, polarity: true },
            ],
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let file = sample_file();
        let mut bytes = Vec::new();
        write_events_binary(&mut bytes, &file).unwrap();
        assert_eq!(bytes.len(), EVENT_HEADER_LEN + 3 * EVENT_RECORD_LEN);
        let back = read_events_binary(bytes.as_slice()).unwrap();
        assert_eq!(back, file);
        let mut again = Vec::new();
        write_events_binary(&mut again, &back).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn single_event_layout_matches_documented_bytes() {
        let file = EventFile {
            sensor: Sensor::new(640, 480),
            events: vec![EventRecord { t: 0x0102030405060708, x: 0x1122, y: 0x3344, polarity: true }],
        };
        let mut bytes = Vec::new();
        write_events_binary(&mut bytes, &file).unwrap();
        let expected: Vec<u8> = [
            b"EVS1".as_slice(),
            &1u32.to_le_bytes(),
            &640u32.to_le_bytes(),
            &480u32.to_le_bytes(),
            &0x0102030405060708u64.to_le_bytes(),
            &0x1122u16.to_le_bytes(),
            &0x3344u16.to_le_bytes(),
            &[1, 0, 0, 0],
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn csv_round_trip_is_canonical() {
        let file = sample_file();
        let mut csv = Vec::new();
        write_events_csv(&mut csv, &file).unwrap();
        let back = read_events_csv(csv.as_slice()).unwrap();
        assert_eq!(back, file);
        let mut csv2 = Vec::new();
        write_events_csv(&mut csv2, &back).unwrap();
        assert_eq!(csv2, csv);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = "# sensor 4x4\nt_us,x,y,polarity\n1,2,3,1\noops\n";
        match read_events_csv(text.as_bytes()) {
            Err(FormatError::BadLine { line: 4, .. }) => {}
            other => panic!("expected line-4 error, got {other:?}"),
        }
    }

    #[test]
    fn csv_out_of_bounds_pixel_is_rejected() {
        let text = "# sensor 2x2\nt_us,x,y,polarity\n1,5,0,1\n";
        assert!(matches!(read_events_csv(text.as_bytes()), Err(FormatError::Geometry(_))));
    }

    #[test]
    fn corrupt_padding_is_rejected() {
        let file = sample_file();
        let mut bytes = Vec::new();
        write_events_binary(&mut bytes, &file).unwrap();
        bytes[EVENT_HEADER_LEN + 13] = 7;
        assert!(matches!(
            read_events_binary(bytes.as_slice()),
            Err(FormatError::BadRecord { index: 0, .. })
        ));
    }

    #[test]
    fn point_text_and_binary_round_trip() {
        let points = vec![
            Point3::new(0.125, -3.5, 7.0),
            Point3::new(1.0 / 3.0, 2e-13, -0.0),
        ];
        let mut text = Vec::new();
        write_points_text(&mut text, &points).unwrap();
        let from_text = read_points_text(text.as_slice()).unwrap();
        assert_eq!(from_text, points);

        let mut bin = Vec::new();
        write_points_binary(&mut bin, &points).unwrap();
        assert_eq!(bin.len(), 48);
        let from_bin = read_points_binary(bin.as_slice()).unwrap();
        for (a, b) in from_bin.iter().zip(&points) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }

    #[test]
    fn point_text_errors_name_the_line() {
        let text = "0 0 0\n1 2\n";
        match read_points_text(text.as_bytes()) {
            Err(FormatError::BadLine { line: 2, .. }) => {}
            other => panic!("expected line-2 error, got {other:?}"),
        }
    }
}
