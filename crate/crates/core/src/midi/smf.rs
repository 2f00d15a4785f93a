//! Standard MIDI File reading and writing (formats 0 and 1).

use std::collections::{BTreeMap, HashMap, VecDeque};

use super::{
    MidiError, MidiPiece, NoteEvent, TempoChange, Track, TrackRole, DEFAULT_MICROS_PER_QUARTER,
    PERCUSSION_CHANNEL,
};

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn eof(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| MidiError::parse(self.pos, "unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn peek(&self) -> Result<u8, MidiError> {
        self.data
            .get(self.pos)
            .copied()
            .ok_or_else(|| MidiError::parse(self.pos, "unexpected end of data"))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.pos + n > self.data.len() {
            return Err(MidiError::parse(
                self.pos,
                format!("need {n} bytes, data truncated"),
            ));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.bytes(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::parse(
            start,
            "variable-length quantity longer than 4 bytes",
        ))
    }
}

/// Raw content of one `MTrk` chunk after note matching.
#[derive(Default)]
struct ChunkContent {
    notes: Vec<NoteEvent>,
    /// First program change seen per channel.
    programs: BTreeMap<u8, u8>,
    channels_used: Vec<u8>,
    has_channel_events: bool,
    name: Option<String>,
}

/// Parses an SMF byte stream (format 0 or 1) into a [`MidiPiece`].
///
/// Format 0 files are split into one track per channel. Note-on with
/// velocity 0 is a note-off; overlapping same-pitch notes on one channel
/// are closed first-in first-out; notes still open at end-of-track are
/// closed there.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiPiece, MidiError> {
    let mut r = Reader::new(bytes);
    if r.bytes(4)
        .map_err(|_| MidiError::parse(0, "missing MThd"))?
        != b"MThd"
    {
        return Err(MidiError::parse(0, "expected MThd chunk"));
    }
    let len_offset = r.pos;
    let header_len = r.u32()?;
    if header_len != 6 {
        return Err(MidiError::parse(
            len_offset,
            format!("MThd length must be 6, found {header_len}"),
        ));
    }
    let format_offset = r.pos;
    let format = r.u16()?;
    let ntracks = r.u16()?;
    let division = r.u16()?;
    match format {
        0 | 1 => {}
        2 => return Err(MidiError::UnsupportedFormat(2)),
        other => {
            return Err(MidiError::parse(
                format_offset,
                format!("invalid SMF format {other}"),
            ));
        }
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::SmpteDivision);
    }
    if division == 0 {
        return Err(MidiError::parse(format_offset + 4, "time division is zero"));
    }

    let mut tempo_events: BTreeMap<u64, u32> = BTreeMap::new();
    let mut chunks = Vec::new();
    let mut seen = 0u16;
    while !r.eof() && seen < ntracks {
        let id_offset = r.pos;
        let id = r.bytes(4)?;
        let len = r.u32()? as usize;
        let body = r
            .bytes(len)
            .map_err(|_| MidiError::parse(id_offset, "chunk length exceeds data"))?;
        if id == b"MTrk" {
            chunks.push(parse_track_chunk(body, r.pos - len, &mut tempo_events)?);
            seen += 1;
        }
        // unknown chunk types are skipped
    }

    let mut tracks = Vec::new();
    if format == 0 {
        for chunk in chunks {
            tracks.extend(split_by_channel(chunk));
        }
    } else {
        for chunk in chunks {
            if chunk.has_channel_events {
                tracks.push(chunk_to_track(chunk));
            }
        }
    }

    let mut tempo_map: Vec<TempoChange> = tempo_events
        .into_iter()
        .map(|(tick, micros_per_quarter)| TempoChange {
            tick,
            micros_per_quarter,
        })
        .collect();
    if tempo_map.first().map(|t| t.tick) != Some(0) {
        tempo_map.insert(
            0,
            TempoChange {
                tick: 0,
                micros_per_quarter: DEFAULT_MICROS_PER_QUARTER,
            },
        );
    }

    Ok(MidiPiece {
        ticks_per_quarter: division,
        tempo_map,
        tracks,
    })
}

fn parse_track_chunk(
    body: &[u8],
    base_offset: usize,
    tempo_events: &mut BTreeMap<u64, u32>,
) -> Result<ChunkContent, MidiError> {
    let mut r = Reader::new(body);
    let mut content = ChunkContent::default();
    let mut open: OpenNotes = HashMap::new();
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let err_at = |r: &Reader, msg: &str| MidiError::parse(base_offset + r.pos, msg.to_string());

    while !r.eof() {
        tick += r.vlq().map_err(|e| shift_offset(e, base_offset))? as u64;
        let first = r.peek().map_err(|e| shift_offset(e, base_offset))?;
        let status = if first & 0x80 != 0 {
            r.pos += 1;
            first
        } else {
            running.ok_or_else(|| err_at(&r, "data byte without running status"))?
        };

        match status {
            0xff => {
                running = None;
                let kind = r.u8().map_err(|e| shift_offset(e, base_offset))?;
                let len = r.vlq().map_err(|e| shift_offset(e, base_offset))? as usize;
                let data = r.bytes(len).map_err(|e| shift_offset(e, base_offset))?;
                match kind {
                    0x2f => break,
                    0x51 => {
                        if len != 3 {
                            return Err(err_at(&r, "tempo meta event must carry 3 bytes"));
                        }
                        let micros =
                            ((data[0] as u32) << 16) | ((data[1] as u32) << 8) | data[2] as u32;
                        if micros > 0 {
                            tempo_events.insert(tick, micros);
                        }
                    }
                    0x03 => {
                        content.name = Some(String::from_utf8_lossy(data).into_owned());
                    }
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq().map_err(|e| shift_offset(e, base_offset))? as usize;
                r.bytes(len).map_err(|e| shift_offset(e, base_offset))?;
            }
            0x80..=0xef => {
                running = Some(status);
                let kind = status & 0xf0;
                let ch = status & 0x0f;
                content.has_channel_events = true;
                if !content.channels_used.contains(&ch) {
                    content.channels_used.push(ch);
                }
                let d1 = r.u8().map_err(|e| shift_offset(e, base_offset))?;
                if d1 & 0x80 != 0 {
                    return Err(err_at(&r, "status byte where data byte expected"));
                }
                let d2 = if matches!(kind, 0xc0 | 0xd0) {
                    0
                } else {
                    let d = r.u8().map_err(|e| shift_offset(e, base_offset))?;
                    if d & 0x80 != 0 {
                        return Err(err_at(&r, "status byte where data byte expected"));
                    }
                    d
                };
                match kind {
                    0x90 if d2 > 0 => open.entry((ch, d1)).or_default().push_back((tick, d2)),
                    0x80 | 0x90 => close(&mut content.notes, &mut open, ch, d1, tick),
                    0xc0 => {
                        content.programs.entry(ch).or_insert(d1);
                    }
                    _ => {}
                }
            }
            _ => return Err(err_at(&r, &format!("invalid status byte {status:#04x}"))),
        }
    }

    // close dangling notes at end-of-track
    let mut dangling: Vec<((u8, u8), u64, u8)> = open
        .into_iter()
        .flat_map(|(key, q)| q.into_iter().map(move |(onset, vel)| (key, onset, vel)))
        .collect();
    dangling.sort_unstable();
    for ((ch, pitch), onset, velocity) in dangling {
        content.notes.push(NoteEvent {
            pitch,
            onset,
            duration: (tick.saturating_sub(onset)).max(1),
            velocity,
            channel: ch,
        });
    }
    Ok(content)
}

type OpenNotes = HashMap<(u8, u8), VecDeque<(u64, u8)>>;

fn close(notes: &mut Vec<NoteEvent>, open: &mut OpenNotes, channel: u8, pitch: u8, tick: u64) {
    if let Some((onset, velocity)) = open
        .get_mut(&(channel, pitch))
        .and_then(VecDeque::pop_front)
    {
        if tick > onset {
            notes.push(NoteEvent {
                pitch,
                onset,
                duration: tick - onset,
                velocity,
                channel,
            });
        }
    }
}

fn shift_offset(e: MidiError, base: usize) -> MidiError {
    match e {
        MidiError::Parse { offset, message } => MidiError::Parse {
            offset: offset + base,
            message,
        },
        other => other,
    }
}

fn role_from_name(name: &Option<String>) -> Option<TrackRole> {
    name.as_deref().and_then(TrackRole::from_name)
}

fn chunk_to_track(chunk: ChunkContent) -> Track {
    let primary = chunk
        .notes
        .iter()
        .min_by_key(|n| (n.onset, n.pitch))
        .map(|n| n.channel)
        .or_else(|| chunk.programs.keys().next().copied())
        .unwrap_or(0);
    let program = chunk
        .programs
        .get(&primary)
        .or_else(|| chunk.programs.values().next())
        .copied()
        .unwrap_or(0);
    let is_percussion = chunk.channels_used.contains(&PERCUSSION_CHANNEL);
    let mut track = Track::new(program, is_percussion).with_notes(chunk.notes);
    track.role = role_from_name(&chunk.name);
    track
}

fn split_by_channel(chunk: ChunkContent) -> Vec<Track> {
    let mut channels = chunk.channels_used.clone();
    channels.sort_unstable();
    channels
        .into_iter()
        .map(|ch| {
            let notes: Vec<NoteEvent> = chunk
                .notes
                .iter()
                .filter(|n| n.channel == ch)
                .copied()
                .collect();
            let program = chunk.programs.get(&ch).copied().unwrap_or(0);
            Track::new(program, ch == PERCUSSION_CHANNEL).with_notes(notes)
        })
        .collect()
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

fn write_chunk(out: &mut Vec<u8>, id: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(id);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
}

/// Emits timed events as an `MTrk` body with end-of-track.
fn encode_events(events: &mut [(u64, u8, Vec<u8>)]) -> Result<Vec<u8>, MidiError> {
    events.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then_with(|| a.2.cmp(&b.2)));
    let mut body = Vec::new();
    let mut last = 0u64;
    for (tick, _, bytes) in events.iter() {
        let delta = tick - last;
        if delta > 0x0fff_ffff {
            return Err(MidiError::Serialize(format!(
                "delta time {delta} exceeds VLQ range"
            )));
        }
        write_vlq(&mut body, delta as u32);
        body.extend_from_slice(bytes);
        last = *tick;
    }
    body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
    Ok(body)
}

fn is_default_tempo(piece: &MidiPiece) -> bool {
    piece.tempo_map.len() == 1
        && piece.tempo_map[0].micros_per_quarter == DEFAULT_MICROS_PER_QUARTER
}

/// Serializes a piece as SMF format 1: a conductor track holding the tempo
/// map followed by one `MTrk` per track. An empty piece at the default tempo
/// becomes a header-only file.
pub fn write_midi(piece: &MidiPiece) -> Result<Vec<u8>, MidiError> {
    for (i, track) in piece.tracks.iter().enumerate() {
        if let Some(n) = track.notes.iter().find(|n| n.channel > 15) {
            return Err(MidiError::Serialize(format!(
                "track {i}: channel {} out of range",
                n.channel
            )));
        }
    }
    piece.validate()?;

    let with_conductor = !(piece.tracks.is_empty() && is_default_tempo(piece));
    let ntracks = piece.tracks.len() + usize::from(with_conductor);
    if ntracks > u16::MAX as usize {
        return Err(MidiError::Serialize("too many tracks".into()));
    }

    let mut out = Vec::new();
    let mut header = Vec::with_capacity(6);
    header.extend_from_slice(&1u16.to_be_bytes());
    header.extend_from_slice(&(ntracks as u16).to_be_bytes());
    header.extend_from_slice(&piece.ticks_per_quarter.to_be_bytes());
    write_chunk(&mut out, b"MThd", &header);

    if with_conductor {
        let mut events: Vec<(u64, u8, Vec<u8>)> = piece
            .tempo_map
            .iter()
            .map(|t| {
                let m = t.micros_per_quarter;
                (
                    t.tick,
                    0,
                    vec![0xff, 0x51, 0x03, (m >> 16) as u8, (m >> 8) as u8, m as u8],
                )
            })
            .collect();
        write_chunk(&mut out, b"MTrk", &encode_events(&mut events)?);
    }

    for track in &piece.tracks {
        let channel = track
            .notes
            .first()
            .map(|n| n.channel)
            .unwrap_or(if track.is_percussion {
                PERCUSSION_CHANNEL
            } else {
                0
            });
        // order key: 0 meta, 1 program, 2 note-off, 3 note-on
        let mut events: Vec<(u64, u8, Vec<u8>)> = Vec::with_capacity(track.notes.len() * 2 + 2);
        if let Some(role) = track.role {
            let name = role.as_str().as_bytes();
            let mut bytes = vec![0xff, 0x03];
            write_vlq(&mut bytes, name.len() as u32);
            bytes.extend_from_slice(name);
            events.push((0, 0, bytes));
        }
        events.push((0, 1, vec![0xc0 | channel, track.program]));
        for n in &track.notes {
            events.push((n.onset, 3, vec![0x90 | n.channel, n.pitch, n.velocity]));
            events.push((n.end(), 2, vec![0x80 | n.channel, n.pitch, 0]));
        }
        write_chunk(&mut out, b"MTrk", &encode_events(&mut events)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smf(format: u16, division: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut header = Vec::new();
        header.extend_from_slice(&format.to_be_bytes());
        header.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        header.extend_from_slice(&division.to_be_bytes());
        write_chunk(&mut out, b"MThd", &header);
        for t in tracks {
            write_chunk(&mut out, b"MTrk", t);
        }
        out
    }

    #[test]
    fn single_note_pair() {
        let body = vec![
            0x00, 0x90, 60, 100, // note on
            0x83, 0x60, 0x80, 60, 0, // delta 480, note off
            0x00, 0xff, 0x2f, 0x00,
        ];
        let piece = parse_midi(&smf(0, 480, &[body])).unwrap();
        assert_eq!(piece.tracks.len(), 1);
        assert_eq!(piece.tracks[0].notes, vec![NoteEvent::new(60, 0, 480, 100)]);
        assert_eq!(
            piece.tempo_map[0].micros_per_quarter,
            DEFAULT_MICROS_PER_QUARTER
        );
    }

    #[test]
    fn running_status_and_zero_velocity_off() {
        let body = vec![
            0x00, 0x91, 60, 90, // on ch1
            0x00, 64, 80, // running status on
            0x81, 0x70, 60, 0, // delta 240, velocity-0 off
            0x00, 64, 0, // off
            0x00, 0xff, 0x2f, 0x00,
        ];
        let piece = parse_midi(&smf(1, 480, &[body])).unwrap();
        let notes = &piece.tracks[0].notes;
        assert_eq!(notes.len(), 2);
        assert!(notes.iter().all(|n| n.duration == 240 && n.channel == 1));
    }

    #[test]
    fn overlapping_same_pitch_is_fifo() {
        let body = vec![
            0x00, 0x90, 60, 100, //
            0x10, 0x90, 60, 90, // second on at 16
            0x10, 0x80, 60, 0, // off at 32 closes first
            0x10, 0x80, 60, 0, // off at 48 closes second
            0x00, 0xff, 0x2f, 0x00,
        ];
        let piece = parse_midi(&smf(1, 96, &[body])).unwrap();
        let notes = &piece.tracks[0].notes;
        assert_eq!(notes[0], NoteEvent::new(60, 0, 32, 100));
        assert_eq!(notes[1], NoteEvent::new(60, 16, 32, 90));
    }

    #[test]
    fn unmatched_note_closed_at_end_of_track() {
        let body = vec![0x00, 0x90, 62, 70, 0x60, 0xff, 0x2f, 0x00];
        let piece = parse_midi(&smf(1, 96, &[body])).unwrap();
        assert_eq!(piece.tracks[0].notes, vec![NoteEvent::new(62, 0, 0x60, 70)]);
    }

    #[test]
    fn percussion_flagged_from_channel_ten() {
        let body = vec![
            0x00, 0x99, 36, 100, 0x10, 0x89, 36, 0, 0x00, 0xff, 0x2f, 0x00,
        ];
        let piece = parse_midi(&smf(1, 96, &[body])).unwrap();
        assert!(piece.tracks[0].is_percussion);
    }

    #[test]
    fn bad_header_length_is_parse_error() {
        let mut bytes = smf(1, 480, &[]);
        bytes[7] = 7;
        bytes.push(0);
        match parse_midi(&bytes) {
            Err(MidiError::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn format_two_unsupported() {
        assert!(matches!(
            parse_midi(&smf(2, 480, &[])),
            Err(MidiError::UnsupportedFormat(2))
        ));
    }

    #[test]
    fn truncated_track_reports_offset() {
        let mut bytes = smf(
            1,
            480,
            &[vec![
                0x00, 0x90, 60, 100, 0x10, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00,
            ]],
        );
        bytes.truncate(bytes.len() - 6);
        assert!(matches!(parse_midi(&bytes), Err(MidiError::Parse { .. })));
    }

    #[test]
    fn empty_piece_is_header_only() {
        let piece = MidiPiece::new(480, DEFAULT_MICROS_PER_QUARTER);
        let bytes = write_midi(&piece).unwrap();
        assert_eq!(bytes.len(), 14);
        assert_eq!(parse_midi(&bytes).unwrap(), piece);
    }

    #[test]
    fn single_note_round_trip() {
        let mut piece = MidiPiece::new(480, DEFAULT_MICROS_PER_QUARTER);
        piece
            .tracks
            .push(Track::new(5, false).with_notes(vec![NoteEvent::new(60, 0, 480, 100)]));
        assert_eq!(parse_midi(&write_midi(&piece).unwrap()).unwrap(), piece);
    }

    #[test]
    fn tempo_changes_round_trip() {
        let mut piece = MidiPiece::new(480, 500_000);
        piece.tempo_map.push(TempoChange {
            tick: 960,
            micros_per_quarter: 400_000,
        });
        piece.tempo_map.push(TempoChange {
            tick: 1920,
            micros_per_quarter: 600_000,
        });
        let mut track = Track::new(0, false).with_notes(vec![NoteEvent::new(60, 0, 3000, 100)]);
        track.role = Some(TrackRole::Melody);
        piece.tracks.push(track);
        assert_eq!(parse_midi(&write_midi(&piece).unwrap()).unwrap(), piece);
    }

    #[test]
    fn vlq_encoding_matches_reference_values() {
        for (value, expected) in [
            (0u32, vec![0x00]),
            (0x7f, vec![0x7f]),
            (0x80, vec![0x81, 0x00]),
            (0x3fff, vec![0xff, 0x7f]),
            (0x0fff_ffff, vec![0xff, 0xff, 0xff, 0x7f]),
        ] {
            let mut out = Vec::new();
            write_vlq(&mut out, value);
            assert_eq!(out, expected);
            assert_eq!(Reader::new(&out).vlq().unwrap(), value);
        }
    }

    #[test]
    fn invalid_channel_rejected() {
        let mut piece = MidiPiece::new(480, DEFAULT_MICROS_PER_QUARTER);
        piece.tracks.push(
            Track::new(0, false).with_notes(vec![NoteEvent::new(60, 0, 10, 100).with_channel(16)]),
        );
        assert!(write_midi(&piece).is_err());
    }
}
