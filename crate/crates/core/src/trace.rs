//! Packet-length traces: the trace-CSV format and per-device statistics.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::{Error, Result};

pub const TRACE_CSV_HEADER: &str = "device_id,device_name,packet_index,length_bytes";

/// Ordered packet lengths (bytes) observed for one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketTrace {
    pub device_id: usize,
    pub device_name: String,
    lengths: Vec<u32>,
}

impl PacketTrace {
    pub fn new(device_id: usize, device_name: impl Into<String>, lengths: Vec<u32>) -> Result<Self> {
        let device_name = device_name.into();
        if lengths.is_empty() {
            return Err(Error::validation(format!("device {device_id} has no packets")));
        }
        if let Some(i) = lengths.iter().position(|&l| l == 0) {
            return Err(Error::validation(format!(
                "device {device_id}: packet {i} has length 0"
            )));
        }
        if device_name.contains(',') || device_name.contains('\n') {
            return Err(Error::validation(format!(
                "device name `{device_name}` may not contain commas or newlines"
            )));
        }
        Ok(Self {
            device_id,
            device_name,
            lengths,
        })
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    pub fn count(&self) -> usize {
        self.lengths.len()
    }

    /// Trace restricted to packets `[start, end)`, keeping the device identity.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.lengths.len() {
            return Err(Error::validation(format!(
                "slice {start}..{end} outside trace of {} packets",
                self.lengths.len()
            )));
        }
        Ok(Self {
            device_id: self.device_id,
            device_name: self.device_name.clone(),
            lengths: self.lengths[start..end].to_vec(),
        })
    }
}

/// Descriptive statistics of one trace (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStats {
    pub mean_bytes: f64,
    pub std_bytes: f64,
    pub cv: f64,
    pub min_bytes: u32,
    pub max_bytes: u32,
}

pub fn trace_stats(trace: &PacketTrace) -> Result<TraceStats> {
    let n = trace.count();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "device {} has {n} packet(s), need at least 2",
            trace.device_id
        )));
    }
    let xs = trace.lengths();
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    Ok(TraceStats {
        mean_bytes: mean,
        std_bytes: std,
        cv: std / mean,
        min_bytes: *xs.iter().min().unwrap(),
        max_bytes: *xs.iter().max().unwrap(),
    })
}

/// Checks that device ids are exactly `0..n`.
pub fn check_dense(traces: &[PacketTrace]) -> Result<()> {
    let mut ids: Vec<usize> = traces.iter().map(|t| t.device_id).collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(i, &id)| i != id) {
        return Err(Error::validation(format!("device ids not dense: {ids:?}")));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str, line: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("{name} `{}` is not a valid integer", field.trim())))
}

/// Parses a trace-CSV stream into one trace per device, ordered by device id.
pub fn parse_traces<R: BufRead>(source: R) -> Result<Vec<PacketTrace>> {
    struct Acc {
        name: String,
        last_index: Option<u64>,
        lengths: Vec<u32>,
    }

    let mut by_device: BTreeMap<usize, Acc> = BTreeMap::new();
    let mut saw_header = false;

    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading line {lineno}"), e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if !saw_header {
            if line != TRACE_CSV_HEADER {
                return Err(Error::parse(
                    lineno,
                    format!("expected header `{TRACE_CSV_HEADER}`"),
                ));
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let device_id: usize = parse_field(fields[0], "device_id", lineno)?;
        let name = fields[1].trim();
        let index: u64 = parse_field(fields[2], "packet_index", lineno)?;
        let length: u32 = parse_field(fields[3], "length_bytes", lineno)?;
        if length < 1 {
            return Err(Error::parse(lineno, "length_bytes must be >= 1"));
        }

        let acc = by_device.entry(device_id).or_insert_with(|| Acc {
            name: name.to_string(),
            last_index: None,
            lengths: Vec::new(),
        });
        if acc.name != name {
            return Err(Error::parse(
                lineno,
                format!(
                    "device {device_id} named `{name}` but earlier rows say `{}`",
                    acc.name
                ),
            ));
        }
        if let Some(prev) = acc.last_index {
            if index <= prev {
                return Err(Error::parse(
                    lineno,
                    format!("packet_index {index} not ascending (previous {prev})"),
                ));
            }
        }
        acc.last_index = Some(index);
        acc.lengths.push(length);
    }

    if !saw_header {
        return Err(Error::parse(1, "empty input, missing header"));
    }

    let traces = by_device
        .into_iter()
        .map(|(id, acc)| PacketTrace::new(id, acc.name, acc.lengths))
        .collect::<Result<Vec<_>>>()?;
    if traces.is_empty() {
        return Err(Error::validation("no devices in trace file"));
    }
    check_dense(&traces)?;
    Ok(traces)
}

pub fn write_traces<W: Write>(traces: &[PacketTrace], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for t in traces {
        for (i, len) in t.lengths().iter().enumerate() {
            writeln!(out, "{},{},{},{}", t.device_id, t.device_name, i, len)?;
        }
    }
    Ok(())
}

pub fn write_stats_csv<W: Write>(traces: &[PacketTrace], mut out: W) -> Result<()> {
    let io = |e| Error::io("writing stats csv", e);
    writeln!(out, "device_id,device_name,packets,mean_bytes,std_bytes,cv,min_bytes,max_bytes")
        .map_err(io)?;
    for t in traces {
        let s = trace_stats(t)?;
        writeln!(
            out,
            "{},{},{},{:.1},{:.1},{:.3},{},{}",
            t.device_id,
            t.device_name,
            t.count(),
            s.mean_bytes,
            s.std_bytes,
            s.cv,
            s.min_bytes,
            s.max_bytes
        )
        .map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Vec<PacketTrace>> {
        parse_traces(s.as_bytes())
    }

    #[test]
    fn three_rows_one_device() {
        let t = parse("device_id,device_name,packet_index,length_bytes\n0,cam,0,100\n0,cam,1,200\n0,cam,2,300")
            .unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].lengths(), &[100, 200, 300]);
        assert_eq!(t[0].count(), 3);
    }

    #[test]
    fn zero_length_names_line() {
        let err = parse("device_id,device_name,packet_index,length_bytes\n0,cam,0,100\n0,cam,1,0\n")
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn non_integer_length_is_parse_error() {
        let err = parse("device_id,device_name,packet_index,length_bytes\n0,cam,0,12.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn sparse_ids_rejected() {
        let err = parse("device_id,device_name,packet_index,length_bytes\n0,a,0,100\n2,b,0,100\n")
            .unwrap_err();
        assert!(err.to_string().contains("device ids not dense"), "{err}");
    }

    #[test]
    fn bad_header_and_descending_index() {
        assert!(matches!(parse("id,len\n0,1\n"), Err(Error::Parse { line: 1, .. })));
        let err = parse("device_id,device_name,packet_index,length_bytes\n0,a,5,100\n0,a,4,100\n")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn empty_device_rejected() {
        assert!(PacketTrace::new(0, "x", vec![]).is_err());
    }

    #[test]
    fn crlf_and_interleaved_devices() {
        let t = parse("device_id,device_name,packet_index,length_bytes\r\n1,b,0,7\r\n0,a,0,5\r\n1,b,1,8\r\n")
            .unwrap();
        assert_eq!(t[0].lengths(), &[5]);
        assert_eq!(t[1].lengths(), &[7, 8]);
    }

    #[test]
    fn stats_examples() {
        let t = PacketTrace::new(0, "c", vec![100; 10]).unwrap();
        let s = trace_stats(&t).unwrap();
        assert_eq!((s.mean_bytes, s.std_bytes, s.cv), (100.0, 0.0, 0.0));

        let t = PacketTrace::new(0, "c", vec![100, 200]).unwrap();
        let s = trace_stats(&t).unwrap();
        assert_eq!(s.mean_bytes, 150.0);
        assert_eq!(s.std_bytes, 50.0);
        assert!((s.cv - 1.0 / 3.0).abs() < 1e-15);

        let t = PacketTrace::new(0, "c", vec![100]).unwrap();
        assert!(matches!(trace_stats(&t), Err(Error::InsufficientData(_))));
    }

    fn arb_trace() -> impl Strategy<Value = PacketTrace> {
        proptest::collection::vec(1u32..1600, 2..64)
            .prop_map(|v| PacketTrace::new(0, "dev", v).unwrap())
    }

    proptest! {
        #[test]
        fn csv_round_trip(t in arb_trace()) {
            let mut buf = Vec::new();
            write_traces(std::slice::from_ref(&t), &mut buf).unwrap();
            let back = parse_traces(buf.as_slice()).unwrap();
            prop_assert_eq!(back, vec![t]);
        }

        #[test]
        fn stats_permutation_and_scaling(t in arb_trace(), c in 1u32..5, rot in 0usize..64) {
            let s = trace_stats(&t).unwrap();
            let mut v = t.lengths().to_vec();
            let r = rot % v.len();
            v.rotate_left(r);
            v.reverse();
            let p = trace_stats(&PacketTrace::new(0, "dev", v).unwrap()).unwrap();
            prop_assert!((s.mean_bytes - p.mean_bytes).abs() < 1e-9);
            prop_assert!((s.std_bytes - p.std_bytes).abs() < 1e-9);

            let scaled = PacketTrace::new(0, "dev", t.lengths().iter().map(|x| x * c).collect()).unwrap();
            let q = trace_stats(&scaled).unwrap();
            prop_assert!((q.mean_bytes - c as f64 * s.mean_bytes).abs() < 1e-9 * q.mean_bytes);
            prop_assert!((q.std_bytes - c as f64 * s.std_bytes).abs() < 1e-9 * q.mean_bytes);
            prop_assert!((q.cv - s.cv).abs() < 1e-12);
            prop_assert!(s.min_bytes as f64 <= s.mean_bytes && s.mean_bytes <= s.max_bytes as f64);
        }
    }
}
