//! Observation and trajectory files.
//!
//! Binary layout (little-endian) after the 8-byte magic `TMPMOBS1`, repeated
//! per frame until end of file:
//!
//! ```text
//! u64 frame index
//! u64 point count, then x y z as f64 per point
//! u64 tracked count, then (u64 id, f64 x, f64 y, f64 z, u8 valid) each
//! u32 mask count, then per mask:
//!     u32 width, u32 height, f64 fx fy cx cy, 12 f64 extrinsic (row-major 3x4),
//!     ceil(w*h/8) bytes of row-major pixels, least significant bit first
//! u32 controller count, then f64 offset xyz and velocity xyz each
//! ```
//!
//! The text layout carries the same records, starting with the line
//! `tmpm-obs-text 1`. Floats are written in shortest round-trip form.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3x4, Vector3};

use crate::controller::ControllerSample;
use crate::error::{Error, Result};
use crate::observation::{validate_sequence, CameraMask, ObservationFrame, PinholeCamera, TrackedPoint};

pub const BINARY_MAGIC: &[u8; 8] = b"TMPMOBS1";
pub const TEXT_HEADER: &str = "tmpm-obs-text 1";

/// Upper bound for preallocation from untrusted counts.
const PREALLOC_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsFormat {
    Binary,
    Text,
}

impl std::str::FromStr for ObsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(ObsFormat::Binary),
            "text" | "txt" => Ok(ObsFormat::Text),
            _ => Err(Error::validation("format", format!("unknown observation format `{s}`"))),
        }
    }
}

fn short(what: &str) -> Error {
    Error::Format(format!("truncated file while reading {what}"))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => short(what),
        _ => Error::Io(e),
    })
}

fn u64_le<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn u32_le<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn f64_le<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    Ok(f64::from_bits(u64_le(r, what)?))
}

fn vec3_le<R: Read>(r: &mut R, what: &str) -> Result<Vector3<f64>> {
    Ok(Vector3::new(f64_le(r, what)?, f64_le(r, what)?, f64_le(r, what)?))
}

fn count(n: u64, what: &str) -> Result<usize> {
    usize::try_from(n).map_err(|_| Error::Format(format!("{what} count {n} too large")))
}

fn packed_len(pixels: usize) -> usize {
    pixels.div_ceil(8)
}

fn pack_bits(pixels: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(pixels.len())];
    for (i, &p) in pixels.iter().enumerate() {
        if p != 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], pixels: usize) -> Result<Vec<u8>> {
    let out: Vec<u8> = (0..pixels).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect();
    if pixels % 8 != 0 && bytes[bytes.len() - 1] >> (pixels % 8) != 0 {
        return Err(Error::Format("mask padding bits must be zero".into()));
    }
    Ok(out)
}

fn camera_with(width: u32, height: u32, intr: [f64; 4], ext: &[f64]) -> PinholeCamera {
    PinholeCamera {
        width,
        height,
        fx: intr[0],
        fy: intr[1],
        cx: intr[2],
        cy: intr[3],
        extrinsic: Matrix3x4::from_row_slice(ext),
    }
}

fn extrinsic_rows(c: &PinholeCamera) -> [f64; 12] {
    let mut e = [0.0; 12];
    for r in 0..3 {
        for col in 0..4 {
            e[r * 4 + col] = c.extrinsic[(r, col)];
        }
    }
    e
}

fn read_binary_frame<R: Read>(r: &mut R) -> Result<Option<ObservationFrame>> {
    let mut first = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        match r.read(&mut first[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(short("frame index")),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let index = u64::from_le_bytes(first);
    let n = count(u64_le(r, "point count")?, "point")?;
    let mut points = Vec::with_capacity(n.min(PREALLOC_LIMIT));
    for _ in 0..n {
        points.push(vec3_le(r, "points")?);
    }
    let n = count(u64_le(r, "tracked count")?, "tracked")?;
    let mut tracked = Vec::with_capacity(n.min(PREALLOC_LIMIT));
    for _ in 0..n {
        let id = u64_le(r, "tracked id")?;
        let position = vec3_le(r, "tracked position")?;
        let mut v = [0u8; 1];
        read_exact(r, &mut v, "tracked valid flag")?;
        if v[0] > 1 {
            return Err(Error::Format(format!("tracked valid flag {} must be 0 or 1", v[0])));
        }
        tracked.push(TrackedPoint {
            id,
            position,
            valid: v[0] == 1,
        });
    }
    let n = u32_le(r, "mask count")?;
    let mut masks = Vec::new();
    for _ in 0..n {
        let width = u32_le(r, "mask width")?;
        let height = u32_le(r, "mask height")?;
        let mut intr = [0.0; 4];
        for v in &mut intr {
            *v = f64_le(r, "camera intrinsics")?;
        }
        let mut ext = [0.0; 12];
        for v in &mut ext {
            *v = f64_le(r, "camera extrinsic")?;
        }
        let npix = width as usize * height as usize;
        let mut bytes = vec![0u8; packed_len(npix)];
        read_exact(r, &mut bytes, "mask pixels")?;
        masks.push(CameraMask {
            camera: camera_with(width, height, intr, &ext),
            pixels: unpack_bits(&bytes, npix)?,
        });
    }
    let n = u32_le(r, "controller count")?;
    let mut controllers = Vec::new();
    for _ in 0..n {
        controllers.push(ControllerSample {
            offset: vec3_le(r, "controller offset")?,
            velocity: vec3_le(r, "controller velocity")?,
        });
    }
    Ok(Some(ObservationFrame {
        index,
        points,
        tracked,
        masks,
        controllers,
    }))
}

fn write_binary_frame<W: Write>(w: &mut W, f: &ObservationFrame) -> Result<()> {
    let mut put = |b: &[u8]| w.write_all(b);
    let v3 = |put: &mut dyn FnMut(&[u8]) -> io::Result<()>, v: &Vector3<f64>| -> io::Result<()> {
        for c in v.iter() {
            put(&c.to_le_bytes())?;
        }
        Ok(())
    };
    put(&f.index.to_le_bytes())?;
    put(&(f.points.len() as u64).to_le_bytes())?;
    for p in &f.points {
        v3(&mut put, p)?;
    }
    put(&(f.tracked.len() as u64).to_le_bytes())?;
    for t in &f.tracked {
        put(&t.id.to_le_bytes())?;
        v3(&mut put, &t.position)?;
        put(&[t.valid as u8])?;
    }
    put(&(f.masks.len() as u32).to_le_bytes())?;
    for m in &f.masks {
        m.validate()?;
        let c = &m.camera;
        put(&c.width.to_le_bytes())?;
        put(&c.height.to_le_bytes())?;
        for v in [c.fx, c.fy, c.cx, c.cy].iter().chain(extrinsic_rows(c).iter()) {
            put(&v.to_le_bytes())?;
        }
        put(&pack_bits(&m.pixels))?;
    }
    put(&(f.controllers.len() as u32).to_le_bytes())?;
    for c in &f.controllers {
        v3(&mut put, &c.offset)?;
        v3(&mut put, &c.velocity)?;
    }
    Ok(())
}

struct TextLines<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> TextLines<R> {
    /// Next non-empty line split into tokens, or `None` at end of file.
    fn next_tokens(&mut self) -> Result<Option<Vec<String>>> {
        loop {
            self.buf.clear();
            if self.inner.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            let t: Vec<String> = self.buf.split_whitespace().map(String::from).collect();
            if !t.is_empty() {
                return Ok(Some(t));
            }
        }
    }

    fn expect(&mut self, what: &str) -> Result<Vec<String>> {
        self.next_tokens()?.ok_or_else(|| short(what))
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Format(format!("line {}: {msg}", self.line))
    }

    fn keyword(&mut self, key: &str) -> Result<Vec<String>> {
        let t = self.expect(key)?;
        if t[0] != key {
            return Err(self.err(format!("expected `{key}`, found `{}`", t[0])));
        }
        Ok(t)
    }

    fn counted(&mut self, key: &str) -> Result<usize> {
        let t = self.keyword(key)?;
        if t.len() != 2 {
            return Err(self.err(format!("`{key}` takes one count")));
        }
        self.parse(&t[1])
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        s.parse().map_err(|e| self.err(format!("`{s}`: {e}")))
    }

    fn floats(&self, t: &[String], n: usize) -> Result<Vec<f64>> {
        if t.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", t.len())));
        }
        t.iter().map(|s| self.parse(s)).collect()
    }
}

fn read_text_frame<R: BufRead>(r: &mut TextLines<R>) -> Result<Option<ObservationFrame>> {
    let Some(t) = r.next_tokens()? else {
        return Ok(None);
    };
    if t[0] != "frame" || t.len() != 2 {
        return Err(r.err("expected `frame <index>`"));
    }
    let index: u64 = r.parse(&t[1])?;
    let n = r.counted("points")?;
    let mut points = Vec::with_capacity(n.min(PREALLOC_LIMIT));
    for _ in 0..n {
        let t = r.expect("points")?;
        let v = r.floats(&t, 3)?;
        points.push(Vector3::new(v[0], v[1], v[2]));
    }
    let n = r.counted("tracked")?;
    let mut tracked = Vec::with_capacity(n.min(PREALLOC_LIMIT));
    for _ in 0..n {
        let t = r.expect("tracked")?;
        if t.len() != 5 {
            return Err(r.err("tracked entries are `id x y z valid`"));
        }
        let v = r.floats(&t[1..4], 3)?;
        let valid = match t[4].as_str() {
            "0" => false,
            "1" => true,
            s => return Err(r.err(format!("valid flag `{s}` must be 0 or 1"))),
        };
        tracked.push(TrackedPoint {
            id: r.parse(&t[0])?,
            position: Vector3::new(v[0], v[1], v[2]),
            valid,
        });
    }
    let n = r.counted("masks")?;
    let mut masks = Vec::new();
    for _ in 0..n {
        let t = r.keyword("mask")?;
        if t.len() != 19 {
            return Err(r.err("`mask` takes width, height, fx, fy, cx, cy and 12 extrinsic values"));
        }
        let (width, height): (u32, u32) = (r.parse(&t[1])?, r.parse(&t[2])?);
        let intr = r.floats(&t[3..7], 4)?;
        let ext = r.floats(&t[7..19], 12)?;
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for _ in 0..height {
            let row = r.expect("mask rows")?;
            if row.len() != 1 || row[0].len() != width as usize {
                return Err(r.err(format!("mask rows are {width} characters of 0/1")));
            }
            for c in row[0].bytes() {
                match c {
                    b'0' => pixels.push(0),
                    b'1' => pixels.push(1),
                    _ => return Err(r.err("mask pixels must be 0 or 1")),
                }
            }
        }
        masks.push(CameraMask {
            camera: camera_with(width, height, [intr[0], intr[1], intr[2], intr[3]], &ext),
            pixels,
        });
    }
    let n = r.counted("controllers")?;
    let mut controllers = Vec::new();
    for _ in 0..n {
        let t = r.expect("controllers")?;
        let v = r.floats(&t, 6)?;
        controllers.push(ControllerSample {
            offset: Vector3::new(v[0], v[1], v[2]),
            velocity: Vector3::new(v[3], v[4], v[5]),
        });
    }
    let t = r.expect("end")?;
    if t != ["end"] {
        return Err(r.err("expected `end`"));
    }
    Ok(Some(ObservationFrame {
        index,
        points,
        tracked,
        masks,
        controllers,
    }))
}

fn write_text_frame<W: Write>(w: &mut W, f: &ObservationFrame) -> Result<()> {
    writeln!(w, "frame {}", f.index)?;
    writeln!(w, "points {}", f.points.len())?;
    for p in &f.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    writeln!(w, "tracked {}", f.tracked.len())?;
    for t in &f.tracked {
        let p = &t.position;
        writeln!(w, "{} {} {} {} {}", t.id, p.x, p.y, p.z, t.valid as u8)?;
    }
    writeln!(w, "masks {}", f.masks.len())?;
    for m in &f.masks {
        m.validate()?;
        let c = &m.camera;
        write!(w, "mask {} {} {} {} {} {}", c.width, c.height, c.fx, c.fy, c.cx, c.cy)?;
        for e in extrinsic_rows(c) {
            write!(w, " {e}")?;
        }
        writeln!(w)?;
        for row in m.pixels.chunks(c.width.max(1) as usize) {
            let s: String = row.iter().map(|&p| if p == 1 { '1' } else { '0' }).collect();
            writeln!(w, "{s}")?;
        }
    }
    writeln!(w, "controllers {}", f.controllers.len())?;
    for c in &f.controllers {
        let (o, v) = (&c.offset, &c.velocity);
        writeln!(w, "{} {} {} {} {} {}", o.x, o.y, o.z, v.x, v.y, v.z)?;
    }
    writeln!(w, "end")?;
    Ok(())
}

enum Decoder<R> {
    Binary(R),
    Text(TextLines<R>),
}

/// Streaming frame reader; the format is detected from the file header.
pub struct FrameReader<R> {
    decoder: Decoder<R>,
    done: bool,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let head = inner.fill_buf()?;
        let decoder = if head.starts_with(BINARY_MAGIC) {
            inner.consume(BINARY_MAGIC.len());
            Decoder::Binary(inner)
        } else if head.starts_with(&BINARY_MAGIC[..head.len().min(8)]) && head.len() < 8 {
            // the magic was split across buffer fills
            let mut magic = [0u8; 8];
            read_exact(&mut inner, &mut magic, "header")?;
            if &magic != BINARY_MAGIC {
                return Err(Error::Format("unrecognized observation header".into()));
            }
            Decoder::Binary(inner)
        } else {
            let mut lines = TextLines {
                inner,
                line: 0,
                buf: String::new(),
            };
            match lines.next_tokens()? {
                Some(t) if t.join(" ") == TEXT_HEADER => Decoder::Text(lines),
                _ => return Err(Error::Format("unrecognized observation header".into())),
            }
        };
        Ok(FrameReader { decoder, done: false })
    }

    pub fn format(&self) -> ObsFormat {
        match self.decoder {
            Decoder::Binary(_) => ObsFormat::Binary,
            Decoder::Text(_) => ObsFormat::Text,
        }
    }
}

impl FrameReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<ObservationFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = match &mut self.decoder {
            Decoder::Binary(r) => read_binary_frame(r),
            Decoder::Text(t) => read_text_frame(t),
        };
        match r {
            Ok(Some(f)) => Some(Ok(f)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Reads and validates a whole observation sequence.
pub fn read_frames(path: &Path) -> Result<Vec<ObservationFrame>> {
    let frames = FrameReader::open(path)?.collect::<Result<Vec<_>>>()?;
    validate_sequence(&frames)?;
    Ok(frames)
}

pub fn decode_frames(bytes: &[u8]) -> Result<Vec<ObservationFrame>> {
    FrameReader::new(bytes)?.collect()
}

pub fn encode_frames(frames: &[ObservationFrame], format: ObsFormat) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut w = FrameWriter::new(&mut out, format)?;
    for f in frames {
        w.write_frame(f)?;
    }
    Ok(out)
}

/// Incremental writer producing the same bytes as [`encode_frames`].
pub struct FrameWriter<W: Write> {
    inner: W,
    format: ObsFormat,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(mut inner: W, format: ObsFormat) -> Result<Self> {
        match format {
            ObsFormat::Binary => inner.write_all(BINARY_MAGIC)?,
            ObsFormat::Text => writeln!(inner, "{TEXT_HEADER}")?,
        }
        Ok(FrameWriter { inner, format })
    }

    pub fn write_frame(&mut self, f: &ObservationFrame) -> Result<()> {
        match self.format {
            ObsFormat::Binary => write_binary_frame(&mut self.inner, f),
            ObsFormat::Text => write_text_frame(&mut self.inner, f),
        }
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let res = (|| -> Result<()> {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    })();
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    res
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

pub fn write_frames(path: &Path, frames: &[ObservationFrame], format: ObsFormat) -> Result<()> {
    validate_sequence(frames)?;
    write_atomic(path, &encode_frames(frames, format)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn camera(w: u32, h: u32) -> PinholeCamera {
        PinholeCamera {
            width: w,
            height: h,
            fx: 120.5,
            fy: 119.25,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            extrinsic: Matrix3x4::new(1.0, 0.0, 0.0, 0.1, 0.0, 0.0, -1.0, 0.2, 0.0, 1.0, 0.0, 1.5),
        }
    }

    fn sample_frame(index: u64) -> ObservationFrame {
        let w = 5;
        let h = 3;
        ObservationFrame {
            index,
            points: vec![Vector3::new(0.1, -0.2, 1.0 / 3.0), Vector3::new(1e-300, 5e300, -0.0)],
            tracked: vec![
                TrackedPoint {
                    id: 4,
                    position: Vector3::new(0.5, 0.25, 0.125),
                    valid: true,
                },
                TrackedPoint {
                    id: 9,
                    position: Vector3::new(f64::MIN_POSITIVE, 2.0, 3.0),
                    valid: false,
                },
            ],
            masks: vec![CameraMask {
                camera: camera(w, h),
                pixels: (0..w * h).map(|i| (i % 3 == 0) as u8).collect(),
            }],
            controllers: vec![ControllerSample {
                offset: Vector3::new(0.01, 0.0, -0.02),
                velocity: Vector3::new(0.3, 0.0, 0.0),
            }],
        }
    }

    #[test]
    fn both_formats_round_trip() {
        let frames = vec![sample_frame(1), sample_frame(2), ObservationFrame { index: 5, ..Default::default() }];
        for fmt in [ObsFormat::Binary, ObsFormat::Text] {
            let bytes = encode_frames(&frames, fmt).unwrap();
            let back = decode_frames(&bytes).unwrap();
            assert_eq!(back, frames);
            assert_eq!(encode_frames(&back, fmt).unwrap(), bytes);
            assert_eq!(FrameReader::new(&bytes[..]).unwrap().format(), fmt);
        }
    }

    #[test]
    fn binary_layout_is_little_endian() {
        let f = ObservationFrame {
            index: 3,
            points: vec![Vector3::new(1.0, 2.0, 3.0)],
            ..Default::default()
        };
        let bytes = encode_frames(&[f], ObsFormat::Binary).unwrap();
        assert_eq!(&bytes[..8], BINARY_MAGIC);
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 8 + 8 + 24 + 8 + 4 + 4);
    }

    #[test]
    fn mask_bits_are_lsb_first() {
        assert_eq!(pack_bits(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 1]), vec![0b0000_0001, 0b0000_0010]);
        assert!(unpack_bits(&[0, 0b100], 10).is_err());
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode_frames(&[sample_frame(1)], ObsFormat::Binary).unwrap();
        for cut in [9, 20, bytes.len() - 1] {
            let err = decode_frames(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "{err}");
        }
        let text = encode_frames(&[sample_frame(1)], ObsFormat::Text).unwrap();
        let s = String::from_utf8(text).unwrap();
        let cut = s.rfind("end").unwrap();
        assert!(decode_frames(&s.as_bytes()[..cut]).is_err());
    }

    #[test]
    fn count_mismatch_rejected() {
        let s = format!("{TEXT_HEADER}\nframe 1\npoints 2\n0 0 0\ntracked 0\nmasks 0\ncontrollers 0\nend\n");
        assert!(decode_frames(s.as_bytes()).is_err());
    }

    #[test]
    fn unknown_header_rejected() {
        assert!(decode_frames(b"hello world\n").is_err());
        assert!(decode_frames(b"").is_err());
    }

    #[test]
    fn file_round_trip_and_sequence_check() {
        let dir = std::env::temp_dir().join(format!("obs-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("o.bin");
        let frames = vec![sample_frame(1), sample_frame(2)];
        write_frames(&path, &frames, ObsFormat::Binary).unwrap();
        assert_eq!(read_frames(&path).unwrap(), frames);
        let bad = vec![sample_frame(2), sample_frame(2)];
        assert!(write_frames(&path, &bad, ObsFormat::Binary).is_err());
        // failed write leaves the previous file intact
        assert_eq!(read_frames(&path).unwrap(), frames);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    fn arb_vec3() -> impl Strategy<Value = Vector3<f64>> {
        proptest::array::uniform3(any::<f64>()).prop_map(Vector3::from)
    }

    fn arb_frame() -> impl Strategy<Value = ObservationFrame> {
        (
            any::<u64>(),
            proptest::collection::vec(arb_vec3(), 0..6),
            proptest::collection::vec((any::<u64>(), arb_vec3(), any::<bool>()), 0..4),
            proptest::collection::vec((1u32..7, 1u32..5, proptest::collection::vec(0u8..2, 48)), 0..2),
            proptest::collection::vec((arb_vec3(), arb_vec3()), 0..3),
        )
            .prop_map(|(index, points, tracked, masks, ctrl)| ObservationFrame {
                index,
                points,
                tracked: tracked
                    .into_iter()
                    .map(|(id, position, valid)| TrackedPoint { id, position, valid })
                    .collect(),
                masks: masks
                    .into_iter()
                    .map(|(w, h, bits)| CameraMask {
                        camera: camera(w, h),
                        pixels: bits[..(w * h) as usize].to_vec(),
                    })
                    .collect(),
                controllers: ctrl
                    .into_iter()
                    .map(|(offset, velocity)| ControllerSample { offset, velocity })
                    .collect(),
            })
    }

    /// Bitwise equality, so NaN payloads and signed zeros count.
    fn bits(frames: &[ObservationFrame]) -> Vec<u8> {
        encode_frames(frames, ObsFormat::Binary).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn binary_round_trip_is_bit_identical(frames in proptest::collection::vec(arb_frame(), 0..4)) {
            let bytes = bits(&frames);
            let back = decode_frames(&bytes).unwrap();
            prop_assert_eq!(bits(&back), bytes);
        }

        #[test]
        fn text_round_trip_is_bit_identical(frames in proptest::collection::vec(arb_frame(), 0..4)) {
            let text = encode_frames(&frames, ObsFormat::Text).unwrap();
            let back = decode_frames(&text).unwrap();
            prop_assert_eq!(encode_frames(&back, ObsFormat::Text).unwrap(), text);
            // text preserves values bit-exactly except NaN payloads
            let finite = frames.iter().all(|f| f.points.iter().all(|p| !p.iter().any(|v| v.is_nan())));
            if finite {
                let orig: Vec<u64> = frames.iter().flat_map(|f| f.points.iter().flat_map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>())).collect();
                let got: Vec<u64> = back.iter().flat_map(|f| f.points.iter().flat_map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>())).collect();
                prop_assert_eq!(orig, got);
            }
        }
    }
}
