//! Per-client Gantt export as CSV rows or a standalone SVG.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::schedule::Schedule;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanttFormat {
    Svg,
    Csv,
}

impl FromStr for GanttFormat {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "svg" => Ok(GanttFormat::Svg),
            "csv" => Ok(GanttFormat::Csv),
            _ => Err(SimError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Prefill,
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub client: usize,
    pub kind: SegmentKind,
    pub start_ms: f64,
    pub end_ms: f64,
    pub request: u32,
}

/// One bar per prefill membership and per decode share, in bin order.
pub fn segments_us(schedule: &Schedule) -> Vec<(usize, SegmentKind, u64, u64, u32)> {
    let mut out = Vec::new();
    for bin in &schedule.bins {
        for m in &bin.prefill.members {
            out.push((m.client, SegmentKind::Prefill, bin.prefill.start_us, bin.prefill.end_us(), m.request));
        }
        for s in &bin.decode.shares {
            out.push((s.client, SegmentKind::Decode, bin.decode.start_us, bin.decode.offset_end_us(s.tokens), s.request));
        }
    }
    out
}

fn ms(us: u64) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

pub fn export_gantt(schedule: &Schedule, format: GanttFormat) -> String {
    match format {
        GanttFormat::Csv => to_csv(schedule),
        GanttFormat::Svg => to_svg(schedule),
    }
}

fn to_csv(schedule: &Schedule) -> String {
    let mut out = String::from("client,kind,start_ms,end_ms,request\n");
    for (client, kind, s, e, request) in segments_us(schedule) {
        let kind = match kind {
            SegmentKind::Prefill => "prefill",
            SegmentKind::Decode => "decode",
        };
        let _ = writeln!(out, "{client},{kind},{},{},{request}", ms(s), ms(e));
    }
    out
}

const ROW: f64 = 6.0;
const LEFT: f64 = 60.0;
const WIDTH: f64 = 1200.0;

fn to_svg(schedule: &Schedule) -> String {
    let span = schedule.makespan_us.max(1) as f64;
    let height = ROW * schedule.clients as f64 + 40.0;
    let x = |us: u64| LEFT + WIDTH * us as f64 / span;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" viewBox="0 0 {} {height}">"#,
        LEFT + WIDTH + 20.0,
        LEFT + WIDTH + 20.0
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="{LEFT}" y="14" font-family="sans-serif" font-size="12">clients: {} makespan: {} ms</text>"#,
        schedule.clients,
        ms(schedule.makespan_us)
    );
    for (client, kind, s, e, request) in segments_us(schedule) {
        let fill = match kind {
            SegmentKind::Prefill => "#d9822b",
            SegmentKind::Decode => "#2b7bd9",
        };
        let y = 24.0 + ROW * client as f64;
        let _ = writeln!(
            out,
            r#"<rect class="{}" x="{:.3}" y="{y:.1}" width="{:.3}" height="{:.1}" fill="{fill}"><title>client {client} request {request}</title></rect>"#,
            match kind {
                SegmentKind::Prefill => "prefill",
                SegmentKind::Decode => "decode",
            },
            x(s),
            (x(e) - x(s)).max(0.0),
            ROW - 1.0,
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Parses the CSV written by [`export_gantt`].
pub fn read_gantt_csv(source: &str) -> Result<Vec<Segment>, SimError> {
    let mut rdr = csv::Reader::from_reader(source.as_bytes());
    let mut segs = Vec::new();
    for row in rdr.deserialize() {
        segs.push(row.map_err(|e| SimError::Parse(e.to_string()))?);
    }
    Ok(segs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::schedule::{Bin, DecodeShare, DecodeStage, Member, PrefillStage};

    fn sample() -> Schedule {
        Schedule {
            clients: 2,
            bins: vec![Bin {
                index: 1,
                prefill: PrefillStage {
                    start_us: 0,
                    length_us: 91_560,
                    level: 1,
                    members: vec![Member { request: 0, client: 0 }, Member { request: 1, client: 1 }],
                },
                decode: DecodeStage {
                    start_us: 91_560,
                    length_us: 29_420 + 29_210,
                    round_lengths_us: vec![29_420, 29_210],
                    shares: vec![
                        DecodeShare { client: 0, request: 0, tokens: 1 },
                        DecodeShare { client: 1, request: 1, tokens: 2 },
                    ],
                },
            }],
            makespan_us: 91_560 + 29_420 + 29_210,
        }
    }

    #[test]
    fn csv_round_trips() {
        let csv = export_gantt(&sample(), GanttFormat::Csv);
        assert!(csv.starts_with("client,kind,start_ms,end_ms,request\n"));
        assert!(csv.contains("1,decode,91.560,150.190,1\n"));
        let segs = read_gantt_csv(&csv).unwrap();
        assert_eq!(segs.len(), 4);
        assert_eq!(segs[2], Segment { client: 0, kind: SegmentKind::Decode, start_ms: 91.56, end_ms: 120.98, request: 0 });
    }

    #[test]
    fn format_names() {
        assert_eq!("SVG".parse::<GanttFormat>().unwrap(), GanttFormat::Svg);
        assert!("png".parse::<GanttFormat>().is_err());
    }

    #[test]
    fn svg_has_one_bar_per_segment() {
        let svg = export_gantt(&sample(), GanttFormat::Svg);
        assert_eq!(svg.matches("class=\"prefill\"").count(), 2);
        assert_eq!(svg.matches("class=\"decode\"").count(), 2);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
