//! Address-event representation (AER) records and their on-disk codec.
//!
//! Each event is a headerless 40-bit big-endian record:
//!
//! ```text
//! byte 0      x (8 bits)
//! byte 1      y (8 bits)
//! byte 2      bit 7: polarity (1 = ON), bits 6..0: timestamp bits 22..16
//! byte 3      timestamp bits 15..8
//! byte 4      timestamp bits 7..0
//! ```
//!
//! Timestamps are microseconds since the start of the recording.

use thiserror::Error;

/// Size of one encoded event in bytes.
pub const RECORD_LEN: usize = 5;

/// Exclusive upper bound of the 23-bit timestamp field.
pub const TIMESTAMP_LIMIT: u32 = 1 << 23;

/// Largest coordinate representable in the 8-bit address fields.
pub const MAX_ENCODED_COORD: u16 = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed record: expected {RECORD_LEN} bytes, got {0}")]
    MalformedRecord(usize),
    #[error("truncated stream: {0} bytes is not a multiple of {RECORD_LEN}")]
    TruncatedStream(usize),
    #[error("event {index} at ({x}, {y}) lies outside {width}x{height}")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u32,
        height: u32,
    },
    #[error("event {index} overflows the {field} field")]
    EncodeOverflow { index: usize, field: &'static str },
    #[error("stream dimensions must be at least 1x1, got {0}x{1}")]
    EmptyDims(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Off,
    On,
}

/// A single decoded spike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
    /// Microseconds since stream start; must stay below [`TIMESTAMP_LIMIT`] to be encodable.
    pub timestamp: u32,
}

impl Event {
    pub fn new(x: u16, y: u16, polarity: Polarity, timestamp: u32) -> Self {
        Event {
            x,
            y,
            polarity,
            timestamp,
        }
    }
}

/// An ordered sequence of events recorded from one pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub width: u32,
    pub height: u32,
    pub source_id: String,
}

impl EventStream {
    /// Builds a stream with explicit dimensions, rejecting events outside them.
    pub fn new(events: Vec<Event>, width: u32, height: u32) -> Result<Self, CodecError> {
        if width == 0 || height == 0 {
            return Err(CodecError::EmptyDims(width, height));
        }
        if let Some((index, e)) = events
            .iter()
            .enumerate()
            .find(|(_, e)| u32::from(e.x) >= width || u32::from(e.y) >= height)
        {
            return Err(CodecError::OutOfBounds {
                index,
                x: e.x,
                y: e.y,
                width,
                height,
            });
        }
        Ok(EventStream {
            events,
            width,
            height,
            source_id: String::new(),
        })
    }

    /// Builds a stream whose dimensions are the bounding box of its events
    /// (1x1 when empty).
    pub fn with_inferred_dims(events: Vec<Event>) -> Self {
        let width = events.iter().map(|e| u32::from(e.x) + 1).max().unwrap_or(1);
        let height = events.iter().map(|e| u32::from(e.y) + 1).max().unwrap_or(1);
        EventStream {
            events,
            width,
            height,
            source_id: String::new(),
        }
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Same dimensions and source, different events.
    pub fn derive(&self, events: Vec<Event>) -> Self {
        EventStream {
            events,
            width: self.width,
            height: self.height,
            source_id: self.source_id.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Largest timestamp in the stream, 0 when empty.
    pub fn max_timestamp(&self) -> u32 {
        self.events.iter().map(|e| e.timestamp).max().unwrap_or(0)
    }
}

pub fn decode_event(record: &[u8]) -> Result<Event, CodecError> {
    let r: &[u8; RECORD_LEN] = record
        .try_into()
        .map_err(|_| CodecError::MalformedRecord(record.len()))?;
    let polarity = if r[2] & 0x80 != 0 {
        Polarity::On
    } else {
        Polarity::Off
    };
    let timestamp =
        (u32::from(r[2] & 0x7f) << 16) | (u32::from(r[3]) << 8) | u32::from(r[4]);
    Ok(Event {
        x: u16::from(r[0]),
        y: u16::from(r[1]),
        polarity,
        timestamp,
    })
}

fn encode_event(index: usize, e: &Event) -> Result<[u8; RECORD_LEN], CodecError> {
    let overflow = |field| CodecError::EncodeOverflow { index, field };
    if e.x > MAX_ENCODED_COORD {
        return Err(overflow("x"));
    }
    if e.y > MAX_ENCODED_COORD {
        return Err(overflow("y"));
    }
    if e.timestamp >= TIMESTAMP_LIMIT {
        return Err(overflow("timestamp"));
    }
    let pol = match e.polarity {
        Polarity::On => 0x80,
        Polarity::Off => 0x00,
    };
    let t = e.timestamp;
    Ok([
        e.x as u8,
        e.y as u8,
        pol | ((t >> 16) as u8 & 0x7f),
        (t >> 8) as u8,
        t as u8,
    ])
}

/// Decodes a headerless run of 5-byte records.
///
/// With `dims` absent the stream takes the bounding box of its events.
pub fn decode_stream(bytes: &[u8], dims: Option<(u32, u32)>) -> Result<EventStream, CodecError> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(CodecError::TruncatedStream(bytes.len()));
    }
    let events = bytes
        .chunks_exact(RECORD_LEN)
        .map(decode_event)
        .collect::<Result<Vec<_>, _>>()?;
    match dims {
        Some((w, h)) => EventStream::new(events, w, h),
        None => Ok(EventStream::with_inferred_dims(events)),
    }
}

pub fn encode_stream(stream: &EventStream) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(stream.events.len() * RECORD_LEN);
    for (i, e) in stream.events.iter().enumerate() {
        out.extend_from_slice(&encode_event(i, e)?);
    }
    Ok(out)
}

/// Summary statistics of a stream. Problems are counted, never raised.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub event_count: usize,
    /// `t_last - t_first` in file order, 0 for fewer than two events.
    pub duration: u64,
    /// Adjacent pairs whose timestamp decreases.
    pub inversions: usize,
    pub on_count: usize,
    pub off_count: usize,
    pub bounds_violations: usize,
}

pub fn validate_stream(stream: &EventStream) -> ValidationReport {
    let ev = &stream.events;
    let duration = match (ev.first(), ev.last()) {
        (Some(a), Some(b)) if ev.len() >= 2 => {
            (i64::from(b.timestamp) - i64::from(a.timestamp)).unsigned_abs()
        }
        _ => 0,
    };
    let on_count = ev.iter().filter(|e| e.polarity == Polarity::On).count();
    ValidationReport {
        event_count: ev.len(),
        duration,
        inversions: ev
            .windows(2)
            .filter(|w| w[1].timestamp < w[0].timestamp)
            .count(),
        on_count,
        off_count: ev.len() - on_count,
        bounds_violations: ev
            .iter()
            .filter(|e| u32::from(e.x) >= stream.width || u32::from(e.y) >= stream.height)
            .count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_reference_records() {
        assert_eq!(
            decode_event(&[0x05, 0x0A, 0x80, 0x00, 0x64]).unwrap(),
            Event::new(5, 10, Polarity::On, 100)
        );
        assert_eq!(
            decode_event(&[0; 5]).unwrap(),
            Event::new(0, 0, Polarity::Off, 0)
        );
        assert_eq!(
            decode_event(&[0xFF; 5]).unwrap(),
            Event::new(255, 255, Polarity::On, 8_388_607)
        );
        assert_eq!(decode_event(&[1, 2, 3]), Err(CodecError::MalformedRecord(3)));
    }

    #[test]
    fn stream_decoding() {
        let mut bytes = vec![0x05, 0x0A, 0x80, 0x00, 0x64];
        bytes.extend_from_slice(&[0; 5]);
        let s = decode_stream(&bytes, None).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s.width, s.height), (6, 11));

        let empty = decode_stream(&[], None).unwrap();
        assert!(empty.is_empty());
        assert_eq!((empty.width, empty.height), (1, 1));

        assert_eq!(decode_stream(&[0; 7], None), Err(CodecError::TruncatedStream(7)));
        assert!(matches!(
            decode_stream(&bytes, Some((4, 4))),
            Err(CodecError::OutOfBounds { index: 0, .. })
        ));
    }

    #[test]
    fn encoding() {
        let s = EventStream::with_inferred_dims(vec![Event::new(5, 10, Polarity::On, 100)]);
        assert_eq!(encode_stream(&s).unwrap(), vec![0x05, 0x0A, 0x80, 0x00, 0x64]);
        assert!(encode_stream(&EventStream::with_inferred_dims(vec![]))
            .unwrap()
            .is_empty());

        let bad = EventStream::with_inferred_dims(vec![
            Event::new(1, 1, Polarity::On, 0),
            Event::new(300, 1, Polarity::On, 0),
        ]);
        assert_eq!(
            encode_stream(&bad),
            Err(CodecError::EncodeOverflow { index: 1, field: "x" })
        );
        let late = EventStream::with_inferred_dims(vec![Event::new(0, 0, Polarity::Off, TIMESTAMP_LIMIT)]);
        assert_eq!(
            encode_stream(&late),
            Err(CodecError::EncodeOverflow { index: 0, field: "timestamp" })
        );
    }

    #[test]
    fn validation_report() {
        let two = EventStream::with_inferred_dims(vec![
            Event::new(0, 0, Polarity::On, 100),
            Event::new(0, 0, Polarity::On, 50),
        ]);
        assert_eq!(validate_stream(&two).inversions, 1);

        let empty = validate_stream(&EventStream::with_inferred_dims(vec![]));
        assert_eq!((empty.event_count, empty.duration), (0, 0));

        let three = EventStream::with_inferred_dims(
            [0, 10, 20].iter().map(|&t| Event::new(0, 0, Polarity::On, t)).collect(),
        );
        let r = validate_stream(&three);
        assert_eq!((r.duration, r.on_count, r.off_count, r.inversions), (20, 3, 0, 0));

        let mut broken = three.clone();
        broken.width = 1;
        broken.events.push(Event::new(3, 0, Polarity::Off, 30));
        assert_eq!(validate_stream(&broken).bounds_violations, 1);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(records in proptest::collection::vec(any::<[u8; 5]>(), 0..64)) {
            let bytes: Vec<u8> = records.concat();
            let s = decode_stream(&bytes, None).unwrap();
            prop_assert_eq!(s.len(), bytes.len() / RECORD_LEN);
            for (i, e) in s.events.iter().enumerate() {
                prop_assert_eq!(*e, decode_event(&bytes[i * 5..i * 5 + 5]).unwrap());
            }
            prop_assert_eq!(encode_stream(&s).unwrap(), bytes);
        }
    }
}
