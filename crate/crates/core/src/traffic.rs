//! Constant-bitrate voice streams and the per-packet trace they produce.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::codec::CodecProfile;
use crate::error::{Error, Result};
use crate::simnet::DropReason;
use crate::types::{Direction, SimTime};

/// RTP (12) + UDP (8) + IPv4 (20).
pub const DEFAULT_HEADER_OVERHEAD: u32 = 40;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaPacket {
    pub stream_id: String,
    pub seq: u64,
    pub gen_time: SimTime,
    pub size_bytes: u32,
    pub direction: Direction,
}

/// Fixed-cadence packet source covering `[start, end]`.
#[derive(Debug, Clone)]
pub struct StreamSource {
    stream_id: String,
    direction: Direction,
    start: SimTime,
    end: SimTime,
    interval_us: u64,
    size_bytes: u32,
    next_seq: u64,
}

impl StreamSource {
    pub fn start_stream(
        stream_id: impl Into<String>,
        codec: &CodecProfile,
        direction: Direction,
        t_start: SimTime,
        t_end: SimTime,
        header_overhead: u32,
    ) -> Self {
        StreamSource {
            stream_id: stream_id.into(),
            direction,
            start: t_start,
            end: t_end.max(t_start),
            interval_us: codec.packet_interval_us(),
            size_bytes: codec.payload_bytes + header_overhead,
            next_seq: 0,
        }
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn packet_count(&self) -> u64 {
        self.end.since(self.start) / self.interval_us + 1
    }

    pub fn next_gen_time(&self) -> Option<SimTime> {
        (self.next_seq < self.packet_count()).then(|| self.start.plus_us(self.next_seq * self.interval_us))
    }

    pub fn next_packet(&mut self) -> Option<MediaPacket> {
        let gen_time = self.next_gen_time()?;
        let pkt = MediaPacket {
            stream_id: self.stream_id.clone(),
            seq: self.next_seq,
            gen_time,
            size_bytes: self.size_bytes,
            direction: self.direction,
        };
        self.next_seq += 1;
        Some(pkt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketOutcome {
    Delivered(SimTime),
    Lost(DropReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub stream_id: String,
    pub direction: Direction,
    pub seq: u64,
    pub gen_time: SimTime,
    /// Mobile-node interface the packet was routed over (source for uplink,
    /// destination for downlink).
    pub send_iface: String,
    pub outcome: PacketOutcome,
}

impl PacketRecord {
    pub fn is_lost(&self) -> bool {
        matches!(self.outcome, PacketOutcome::Lost(_))
    }

    pub fn delay_us(&self) -> Option<u64> {
        match self.outcome {
            PacketOutcome::Delivered(t) => Some(t.since(self.gen_time)),
            PacketOutcome::Lost(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PacketTrace {
    pub run_id: String,
    records: BTreeMap<(String, u64), PacketRecord>,
}

pub const TRACE_HEADER: [&str; 8] =
    ["run_id", "stream_id", "direction", "seq", "gen_time_us", "send_iface", "arrival_time_us", "loss_cause"];

impl PacketTrace {
    pub fn new(run_id: impl Into<String>) -> Self {
        PacketTrace { run_id: run_id.into(), records: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&mut self, rec: PacketRecord) -> Result<()> {
        if let PacketOutcome::Delivered(t) = rec.outcome {
            if t < rec.gen_time {
                return Err(Error::Invariant(format!(
                    "stream `{}` seq {} arrives at {t} before generation at {}",
                    rec.stream_id, rec.seq, rec.gen_time
                )));
            }
        }
        let key = (rec.stream_id.clone(), rec.seq);
        if self.records.contains_key(&key) {
            return Err(Error::DuplicateRecord { stream: key.0, seq: key.1 });
        }
        self.records.insert(key, rec);
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &PacketRecord> {
        self.records.values()
    }

    /// All records of one direction ordered by sequence number.
    pub fn direction_records(&self, direction: Direction) -> Vec<PacketRecord> {
        let mut v: Vec<PacketRecord> = self.records.values().filter(|r| r.direction == direction).cloned().collect();
        v.sort_by(|a, b| (&a.stream_id, a.seq).cmp(&(&b.stream_id, b.seq)));
        v
    }

    pub fn lost(&self, direction: Direction) -> usize {
        self.records.values().filter(|r| r.direction == direction && r.is_lost()).count()
    }

    pub fn generated(&self, direction: Direction) -> usize {
        self.records.values().filter(|r| r.direction == direction).count()
    }

    /// Every sequence number `0..count` of `stream_id` is present exactly once.
    pub fn check_conservation(&self, stream_id: &str, count: u64) -> Result<()> {
        let present = self.records.range((stream_id.to_string(), 0)..=(stream_id.to_string(), u64::MAX)).count() as u64;
        if present != count {
            return Err(Error::Invariant(format!("stream `{stream_id}`: generated {count}, traced {present}")));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(TRACE_HEADER)?;
        for r in self.records.values() {
            let (arrival, cause) = match r.outcome {
                PacketOutcome::Delivered(t) => (t.as_us().to_string(), String::new()),
                PacketOutcome::Lost(c) => (String::new(), c.as_str().to_string()),
            };
            wr.write_record([
                self.run_id.as_str(),
                &r.stream_id,
                r.direction.as_str(),
                &r.seq.to_string(),
                &r.gen_time.as_us().to_string(),
                &r.send_iface,
                &arrival,
                &cause,
            ])?;
        }
        wr.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().ne(TRACE_HEADER.iter().copied()) {
            return Err(Error::TraceFormat { line: 1, message: format!("unexpected header {headers:?}") });
        }
        let mut trace: Option<PacketTrace> = None;
        for row in rd.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::TraceFormat { line, message };
            let num = |i: usize| row[i].parse::<u64>().map_err(|e| bad(format!("column {}: {e}", TRACE_HEADER[i])));
            let outcome = match (&row[6], &row[7]) {
                (a, "") if !a.is_empty() => PacketOutcome::Delivered(SimTime::from_us(num(6)?)),
                ("", c) if !c.is_empty() => PacketOutcome::Lost(c.parse().map_err(bad)?),
                _ => return Err(bad("exactly one of arrival_time_us and loss_cause must be set".into())),
            };
            let rec = PacketRecord {
                stream_id: row[1].to_string(),
                direction: row[2].parse().map_err(bad)?,
                seq: num(3)?,
                gen_time: SimTime::from_us(num(4)?),
                send_iface: row[5].to_string(),
                outcome,
            };
            let t = trace.get_or_insert_with(|| PacketTrace::new(&row[0]));
            if t.run_id != row[0] {
                return Err(bad(format!("mixed run ids `{}` and `{}`", t.run_id, &row[0])));
            }
            t.record(rec)?;
        }
        Ok(trace.unwrap_or_default())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
