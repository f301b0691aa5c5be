use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Event, EventStream, GroundTruth, GtBox};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EVST";
const VERSION: u16 = 1;

pub fn write_events<W: Write>(mut w: W, stream: &EventStream) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&stream.width.to_le_bytes())?;
    w.write_all(&stream.height.to_le_bytes())?;
    w.write_all(&stream.duration.to_le_bytes())?;
    w.write_all(&(stream.events.len() as u64).to_le_bytes())?;
    for e in &stream.events {
        w.write_all(&e.t.to_le_bytes())?;
        w.write_all(&e.x.to_le_bytes())?;
        w.write_all(&e.y.to_le_bytes())?;
        w.write_all(&[e.p, 0])?;
    }
    w.flush()?;
    Ok(())
}

fn fill(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

pub fn read_events<R: Read>(mut r: R) -> Result<EventStream> {
    let mut head = [0u8; 4];
    fill(&mut r, &mut head, "header")?;
    if &head != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut h = [0u8; 22];
    fill(&mut r, &mut h, "header")?;
    let version = u16::from_le_bytes([h[0], h[1]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let width = u16::from_le_bytes([h[2], h[3]]);
    let height = u16::from_le_bytes([h[4], h[5]]);
    let duration = u64::from_le_bytes(h[6..14].try_into().expect("8 bytes"));
    let count = u64::from_le_bytes(h[14..22].try_into().expect("8 bytes"));
    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; 14];
    for i in 0..count {
        fill(&mut r, &mut rec, &format!("record {i} of {count}"))?;
        events.push(Event {
            t: u64::from_le_bytes(rec[0..8].try_into().expect("8 bytes")),
            x: u16::from_le_bytes([rec[8], rec[9]]),
            y: u16::from_le_bytes([rec[10], rec[11]]),
            p: rec[12],
        });
    }
    EventStream::new(events, width, height, duration)
}

pub fn write_event_file(stream: &EventStream, path: &Path) -> Result<()> {
    write_events(BufWriter::new(File::create(path)?), stream)
}

pub fn read_event_file(path: &Path) -> Result<EventStream> {
    read_events(BufReader::new(File::open(path)?))
}

/// One line per record: `class`, or `t_start t_end class x y w h`.
pub fn write_gt<W: Write>(mut w: W, gt: &GroundTruth) -> Result<()> {
    match gt {
        GroundTruth::Class(c) => writeln!(w, "{c}")?,
        GroundTruth::Boxes(boxes) => {
            for b in boxes {
                writeln!(w, "{} {} {} {} {} {} {}", b.t_start, b.t_end, b.class, b.x, b.y, b.w, b.h)?;
            }
        }
    }
    Ok(())
}

pub fn parse_gt<R: BufRead>(r: R) -> Result<GroundTruth> {
    let mut boxes = Vec::new();
    let mut class = None;
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::Parse(format!("ground truth line {}: {what}", ln + 1));
        match f.len() {
            0 => continue,
            1 => {
                if class.is_some() || !boxes.is_empty() {
                    return Err(bad("mixed or repeated class records"));
                }
                class = Some(f[0].parse().map_err(|_| bad("class"))?);
            }
            7 => {
                if class.is_some() {
                    return Err(bad("mixed class and box records"));
                }
                let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad("number"));
                boxes.push(GtBox {
                    t_start: f[0].parse().map_err(|_| bad("t_start"))?,
                    t_end: f[1].parse().map_err(|_| bad("t_end"))?,
                    class: f[2].parse().map_err(|_| bad("class"))?,
                    x: num(3)?,
                    y: num(4)?,
                    w: num(5)?,
                    h: num(6)?,
                });
            }
            n => return Err(bad(&format!("expected 1 or 7 fields, got {n}"))),
        }
    }
    Ok(match class {
        Some(c) => GroundTruth::Class(c),
        None => GroundTruth::Boxes(boxes),
    })
}

pub fn write_gt_file(gt: &GroundTruth, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_gt(&mut w, gt)?;
    w.flush()?;
    Ok(())
}

pub fn read_gt_file(path: &Path) -> Result<GroundTruth> {
    parse_gt(BufReader::new(File::open(path)?))
}
