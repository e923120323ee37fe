//! Byte-stable report serialization.

use std::io;

use anyhow::{anyhow, Result};
use robustmed::sim::ExperimentReport;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

/// Pretty JSON whose floats are written with 17 significant digits, so every
/// value parses back to the identical double.
struct ReportFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for ReportFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{value:.8e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Any serializable value as pretty JSON with exact floats and a trailing
/// newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ReportFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format<'a> {
    Json,
    /// The histogram of the named series.
    Csv(&'a str),
}

pub fn serialize_report(report: &ExperimentReport, format: Format<'_>) -> Result<Vec<u8>> {
    match format {
        Format::Json => to_json_bytes(report),
        Format::Csv(name) => {
            let hist = report
                .histograms
                .get(name)
                .ok_or_else(|| anyhow!("report has no histogram named {name:?}"))?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["bin_left", "bin_right", "count"])?;
            for (i, count) in hist.counts.iter().enumerate() {
                w.write_record([
                    format!("{:.16e}", hist.edges[i]),
                    format!("{:.16e}", hist.edges[i + 1]),
                    count.to_string(),
                ])?;
            }
            Ok(w.into_inner().map_err(|e| anyhow!("csv flush failed: {e}"))?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0, 9.41536640754157e-3];
        let bytes = to_json_bytes(&values).unwrap();
        let back: Vec<f64> = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(values, back);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
    }
}
