//! On-disk formats.
//!
//! **Binned series** (text). A `#`-prefixed header of `key = value` lines
//! followed by one comma-separated row per bin:
//!
//! ```text
//! # noon-gyro series v1
//! # photon_number = 2
//! # seed = 42
//! # bin_duration = 0.02
//! # start_time = 0
//! # config_hash = 1f0c55e2a9b3d417
//! # kind = rate-model
//! # columns = mid_time,count,reference_omega,target_omega
//! 0.01,225,0,0
//! ```
//!
//! `photon_number`, `seed`, `config_hash` and `kind` are optional; header
//! keys appear in the order shown. Numbers use the shortest representation
//! that parses back to the same `f64`.
//!
//! **Events** (binary, little-endian). A 16-byte header — magic `NTAG`,
//! `u32` version (1), `u64` tick length in femtoseconds — then 12-byte
//! records: `u8` channel (1 or 2), three zero bytes, `u64` tick. Records are
//! ordered by tick, channel 1 first on ties.
//!
//! **Events** (text). `# resolution_fs = <u64>` on the first line, then one
//! `channel,timestamp_ticks` record per line in the same order.
//!
//! Fit results and precision reports are JSON documents.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{FitResult, ParameterSpread};
use crate::rotsim::{Bin, BinnedSeries, SeriesMeta, TagStreams};
use crate::tagproc::TickResolution;

pub const SERIES_MAGIC: &str = "noon-gyro series v1";
pub const SERIES_COLUMNS: &str = "mid_time,count,reference_omega,target_omega";
pub const EVENT_MAGIC: &[u8; 4] = b"NTAG";
pub const EVENT_VERSION: u32 = 1;
pub const EVENT_HEADER_LEN: usize = 16;
pub const EVENT_RECORD_LEN: usize = 12;

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn format_series(series: &BinnedSeries) -> String {
    let mut out = String::with_capacity(32 * series.len() + 256);
    let m = &series.meta;
    writeln!(out, "# {SERIES_MAGIC}").unwrap();
    if let Some(n) = m.photon_number {
        writeln!(out, "# photon_number = {n}").unwrap();
    }
    if let Some(s) = m.seed {
        writeln!(out, "# seed = {s}").unwrap();
    }
    writeln!(out, "# bin_duration = {}", series.bin_duration()).unwrap();
    writeln!(out, "# start_time = {}", series.start_time()).unwrap();
    if let Some(h) = &m.config_hash {
        writeln!(out, "# config_hash = {h}").unwrap();
    }
    if let Some(k) = &m.kind {
        writeln!(out, "# kind = {k}").unwrap();
    }
    writeln!(out, "# columns = {SERIES_COLUMNS}").unwrap();
    for b in series.bins() {
        writeln!(out, "{},{},{},{}", b.mid_time, b.count, b.reference_omega, b.target_omega).unwrap();
    }
    out
}

pub fn write_series(path: &Path, series: &BinnedSeries) -> Result<()> {
    let text = format_series(series);
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

pub fn parse_series(text: &str, path: &Path) -> Result<BinnedSeries> {
    let mut meta = SeriesMeta::default();
    let mut bin_duration = None;
    let mut start_time = None;
    let mut columns_seen = false;
    let mut bins = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if line_no == 1 {
                if rest != SERIES_MAGIC {
                    return Err(parse_error(path, 1, format!("expected header '# {SERIES_MAGIC}'")));
                }
                continue;
            }
            if !bins.is_empty() {
                return Err(parse_error(path, line_no, "header line after data"));
            }
            let (key, value) = rest
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| parse_error(path, line_no, "expected 'key = value'"))?;
            let num = |what: &str| -> Result<f64> { value.parse::<f64>().map_err(|e| parse_error(path, line_no, format!("{what}: {e}"))) };
            match key {
                "photon_number" => {
                    meta.photon_number = Some(
                        value
                            .parse()
                            .map_err(|e| parse_error(path, line_no, format!("photon_number: {e}")))?,
                    )
                }
                "seed" => meta.seed = Some(value.parse().map_err(|e| parse_error(path, line_no, format!("seed: {e}")))?),
                "bin_duration" => bin_duration = Some(num("bin_duration")?),
                "start_time" => start_time = Some(num("start_time")?),
                "config_hash" => meta.config_hash = Some(value.to_string()),
                "kind" => meta.kind = Some(value.to_string()),
                "columns" => {
                    if value != SERIES_COLUMNS {
                        return Err(parse_error(path, line_no, format!("columns must be {SERIES_COLUMNS}")));
                    }
                    columns_seen = true;
                }
                other => return Err(parse_error(path, line_no, format!("unknown header key '{other}'"))),
            }
            continue;
        }
        if line_no == 1 {
            return Err(parse_error(path, 1, format!("expected header '# {SERIES_MAGIC}'")));
        }
        if !columns_seen {
            return Err(parse_error(path, line_no, "data before the columns header"));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_error(path, line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_error(path, line_no, format!("'{f}': {e}")))?;
        }
        bins.push(Bin {
            mid_time: v[0],
            count: v[1],
            reference_omega: v[2],
            target_omega: v[3],
        });
    }
    if text.trim().is_empty() {
        return Err(parse_error(path, 1, "empty file"));
    }
    let bin_duration = bin_duration.ok_or_else(|| parse_error(path, 0, "missing bin_duration header"))?;
    let start_time = start_time.ok_or_else(|| parse_error(path, 0, "missing start_time header"))?;
    if !columns_seen {
        return Err(parse_error(path, 0, "missing columns header"));
    }
    BinnedSeries::new(bin_duration, start_time, bins, meta).map_err(|e| parse_error(path, 0, e.to_string()))
}

pub fn read_series(path: &Path) -> Result<BinnedSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_series(&text, path)
}

/// Events of both channels in file order.
fn merged_events(streams: &TagStreams) -> Vec<(u8, u64)> {
    let mut out = Vec::with_capacity(streams.len());
    let (a, b) = (&streams.channel1, &streams.channel2);
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] <= b[j]) {
            out.push((1, a[i]));
            i += 1;
        } else {
            out.push((2, b[j]));
            j += 1;
        }
    }
    out
}

/// Splits records into channels, checking each channel stays sorted.
struct StreamBuilder {
    streams: TagStreams,
}

impl StreamBuilder {
    fn new(resolution: TickResolution) -> Self {
        Self {
            streams: TagStreams {
                resolution,
                channel1: Vec::new(),
                channel2: Vec::new(),
            },
        }
    }

    fn push(&mut self, channel: u8, tick: u64) -> std::result::Result<(), String> {
        let stream = match channel {
            1 => &mut self.streams.channel1,
            2 => &mut self.streams.channel2,
            c => return Err(format!("channel {c} is not 1 or 2")),
        };
        if stream.last().is_some_and(|&last| tick < last) {
            return Err(format!("channel {channel} timestamp {tick} precedes the previous one"));
        }
        stream.push(tick);
        Ok(())
    }
}

pub fn write_events_binary(path: &Path, streams: &TagStreams) -> Result<()> {
    let events = merged_events(streams);
    write_atomic(path, |w| {
        w.write_all(EVENT_MAGIC)?;
        w.write_all(&EVENT_VERSION.to_le_bytes())?;
        w.write_all(&streams.resolution.femtoseconds().to_le_bytes())?;
        for (channel, tick) in events {
            w.write_all(&[channel, 0, 0, 0])?;
            w.write_all(&tick.to_le_bytes())?;
        }
        Ok(())
    })
}

/// Parse errors report the byte offset of the offending record in the
/// `message` (the `line` field holds the record index, 1-based).
pub fn parse_events_binary(bytes: &[u8], path: &Path) -> Result<TagStreams> {
    if bytes.len() < EVENT_HEADER_LEN || &bytes[..4] != EVENT_MAGIC {
        return Err(parse_error(path, 0, "offset 0: missing NTAG header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EVENT_VERSION {
        return Err(parse_error(path, 0, format!("offset 4: unsupported version {version}")));
    }
    let fs = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let resolution = TickResolution::from_femtoseconds(fs).map_err(|e| parse_error(path, 0, format!("offset 8: {e}")))?;
    let body = &bytes[EVENT_HEADER_LEN..];
    if !body.len().is_multiple_of(EVENT_RECORD_LEN) {
        let offset = EVENT_HEADER_LEN + body.len() / EVENT_RECORD_LEN * EVENT_RECORD_LEN;
        return Err(parse_error(
            path,
            body.len() / EVENT_RECORD_LEN + 1,
            format!("offset {offset}: truncated record"),
        ));
    }
    let mut builder = StreamBuilder::new(resolution);
    for (k, rec) in body.chunks_exact(EVENT_RECORD_LEN).enumerate() {
        let offset = EVENT_HEADER_LEN + k * EVENT_RECORD_LEN;
        if rec[1..4] != [0, 0, 0] {
            return Err(parse_error(path, k + 1, format!("offset {}: reserved bytes not zero", offset + 1)));
        }
        let tick = u64::from_le_bytes(rec[4..12].try_into().unwrap());
        builder
            .push(rec[0], tick)
            .map_err(|m| parse_error(path, k + 1, format!("offset {offset}: {m}")))?;
    }
    Ok(builder.streams)
}

pub fn write_events_text(path: &Path, streams: &TagStreams) -> Result<()> {
    let events = merged_events(streams);
    write_atomic(path, |w| {
        writeln!(w, "# resolution_fs = {}", streams.resolution.femtoseconds())?;
        for (channel, tick) in events {
            writeln!(w, "{channel},{tick}")?;
        }
        Ok(())
    })
}

pub fn parse_events_text<R: BufRead>(reader: R, path: &Path) -> Result<TagStreams> {
    let mut lines = reader.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    let fs = first
        .trim()
        .strip_prefix('#')
        .and_then(|r| r.split_once('='))
        .filter(|(k, _)| k.trim() == "resolution_fs")
        .and_then(|(_, v)| v.trim().parse::<u64>().ok())
        .ok_or_else(|| parse_error(path, 1, "expected '# resolution_fs = <integer>'"))?;
    let resolution = TickResolution::from_femtoseconds(fs).map_err(|e| parse_error(path, 1, e.to_string()))?;
    let mut builder = StreamBuilder::new(resolution);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (c, t) = line
            .split_once(',')
            .ok_or_else(|| parse_error(path, line_no, "expected 'channel,timestamp_ticks'"))?;
        let channel: u8 = c
            .trim()
            .parse()
            .map_err(|e| parse_error(path, line_no, format!("channel '{c}': {e}")))?;
        let tick: u64 = t
            .trim()
            .parse()
            .map_err(|e| parse_error(path, line_no, format!("timestamp '{t}': {e}")))?;
        builder.push(channel, tick).map_err(|m| parse_error(path, line_no, m))?;
    }
    Ok(builder.streams)
}

/// Whether `path` names the text event form (`.csv` or `.txt`).
pub fn is_text_event_path(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("csv") | Some("txt"))
}

pub fn write_events(path: &Path, streams: &TagStreams) -> Result<()> {
    if is_text_event_path(path) {
        write_events_text(path, streams)
    } else {
        write_events_binary(path, streams)
    }
}

pub fn read_events(path: &Path) -> Result<TagStreams> {
    let file = File::open(path)?;
    if is_text_event_path(path) {
        parse_events_text(BufReader::new(file), path)
    } else {
        let mut bytes = Vec::new();
        BufReader::new(file).read_to_end(&mut bytes)?;
        parse_events_binary(&bytes, path)
    }
}

/// Fit output written by `noon-gyro fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDocument {
    pub photon_number: u32,
    pub series: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub fit: FitResult,
    pub bootstrap: Option<ParameterSpread>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Mismatch(e.to_string()))?;
    write_atomic(path, |w| {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: format!("column {}: {e}", e.column()),
    })
}

/// A plot-ready table: `#`-prefixed description lines, a column header, and
/// comma-separated rows.
pub fn write_table(path: &Path, description: &[String], columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_atomic(path, |w| {
        for d in description {
            writeln!(w, "# {d}")?;
        }
        writeln!(w, "{}", columns.join(","))?;
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::RateModelParams;
    use crate::rotsim::{simulate_binned_counts, RotationProfile};

    fn p() -> &'static Path {
        Path::new("test")
    }

    fn sample_series() -> BinnedSeries {
        let prof = RotationProfile::reference_sweep(2).unwrap().truncated(3.0).unwrap();
        let mut s = simulate_binned_counts(&RateModelParams::two_photon_reference(), &prof, 5).unwrap();
        s.meta.config_hash = Some("abc123".into());
        s
    }

    #[test]
    fn series_round_trip_is_exact() {
        let s = sample_series();
        let back = parse_series(&format_series(&s), p()).unwrap();
        assert_eq!(back, s);
        let noiseless = crate::rotsim::noiseless_series(
            &RateModelParams::one_photon_reference(),
            &RotationProfile::constant(0.3, 0.1).unwrap(),
        )
        .unwrap();
        assert_eq!(parse_series(&format_series(&noiseless), p()).unwrap(), noiseless);
    }

    #[test]
    fn series_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/s.txt");
        let s = sample_series();
        write_series(&path, &s).unwrap();
        assert_eq!(read_series(&path).unwrap(), s);
    }

    #[test]
    fn series_errors_carry_line_numbers() {
        let good = format_series(&sample_series());
        let mut lines: Vec<&str> = good.lines().collect();
        lines[10] = "0.21,abc,0,0";
        let e = parse_series(&lines.join("\n"), p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 11, .. }), "{e:?}");
        let e = parse_series("hello\n", p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_series(&good.replace("# kind", "# knd"), p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 7, .. }), "{e:?}");
        assert!(parse_series("", p()).is_err());
    }

    fn sample_streams() -> TagStreams {
        TagStreams {
            resolution: TickResolution::from_femtoseconds(156_250).unwrap(),
            channel1: vec![0, 5, 5, 90],
            channel2: vec![5, 7, u64::MAX],
        }
    }

    #[test]
    fn binary_events_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ntag");
        let s = sample_streams();
        write_events(&path, &s).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), EVENT_HEADER_LEN + 7 * EVENT_RECORD_LEN);
        assert_eq!(&bytes[..4], b"NTAG");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 156_250);
        // third record: channel 1 at tick 5 precedes channel 2 at tick 5
        assert_eq!(bytes[16 + 24], 1);
        assert_eq!(bytes[16 + 36], 2);
        assert_eq!(read_events(&path).unwrap(), s);
    }

    #[test]
    fn text_events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let s = sample_streams();
        write_events(&path, &s).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# resolution_fs = 156250\n1,0\n"));
        assert_eq!(read_events(&path).unwrap(), s);
    }

    #[test]
    fn corrupted_events_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ntag");
        write_events(&path, &sample_streams()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[16 + 12] = 3;
        let e = parse_events_binary(&bytes, &path).unwrap_err();
        assert!(e.to_string().contains("offset 28"), "{e}");
        bytes[16 + 12] = 1;
        bytes.pop();
        assert!(parse_events_binary(&bytes, &path).is_err());
        assert!(parse_events_binary(b"NTAX", &path).is_err());

        let text = "# resolution_fs = 1000\n1,5\n1,4\n";
        let e = parse_events_text(text.as_bytes(), p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = parse_events_text("# resolution_fs = 1000\n1;5\n".as_bytes(), p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_event_files_parse() {
        let s = parse_events_text("# resolution_fs = 1000\n".as_bytes(), p()).unwrap();
        assert!(s.is_empty());
    }
}
