//! Versioned binary file formats.
//!
//! Adapter files (magic `PLPA`) and task files (magic `PLPT`) use fixed
//! little-endian layouts so save/load round-trips are bit-exact; text floats
//! could not guarantee that. Task files store generation parameters plus a
//! checksum of the regenerated base map instead of raw matrices.
//!
//! Adapter file layout, version 1:
//!
//! ```text
//! magic            4 bytes  "PLPA"
//! version          u32
//! kind             u8       0 plp | 1 plain | 2 up-half | 3 down-half
//! init_mode        u8       0 exact-disjoint | 1 approximate-random | 255 n/a
//! m, n, r, d       u64 x4   (d = 0 for plain)
//! frozen_seed      u64      (0 for plain)
//! eps_orth         f64
//! tag              u32 length + utf-8 bytes
//! blocks           u32 count, then per block:
//!                  id u8, rows u64, cols u64, len u64, len x f64 (row-major)
//! history          u32 count, then per entry: u32 length + utf-8 bytes
//! ```
//!
//! The loader re-validates everything the constructors guarantee: block
//! shapes, finiteness, the declared mode's AC-orthogonality bound, and
//! bit-identity of frozen blocks against their seed regeneration. Files
//! violating the orthogonality or regeneration checks are refused as corrupt
//! or tampered.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matcore::Matrix;
use crate::plp::{DownHalf, InitMode, PlainLoraAdapter, PlpAdapter, UpHalf};
use crate::synth::SynthTask;
use crate::train::TraceRecord;

const ADAPTER_MAGIC: &[u8; 4] = b"PLPA";
const TASK_MAGIC: &[u8; 4] = b"PLPT";
const FORMAT_VERSION: u32 = 1;

const KIND_PLP: u8 = 0;
const KIND_PLAIN: u8 = 1;
const KIND_UP: u8 = 2;
const KIND_DOWN: u8 = 3;

const MODE_EXACT: u8 = 0;
const MODE_APPROX: u8 = 1;
const MODE_NONE: u8 = 255;

const BLOCK_A: u8 = 0;
const BLOCK_B: u8 = 1;
const BLOCK_C: u8 = 2;
const BLOCK_D: u8 = 3;
const BLOCK_W_UP: u8 = 4;
const BLOCK_W_DOWN: u8 = 5;

/// Any adapter shape the format can carry.
#[derive(Debug, Clone)]
pub enum AdapterPayload {
    Plp(PlpAdapter),
    Plain(PlainLoraAdapter),
    Up(UpHalf),
    Down(DownHalf),
}

impl AdapterPayload {
    pub fn tag(&self) -> &str {
        match self {
            AdapterPayload::Plp(a) => crate::plp::Adapter::tag(a),
            AdapterPayload::Plain(a) => crate::plp::Adapter::tag(a),
            AdapterPayload::Up(h) => &h.tag,
            AdapterPayload::Down(h) => &h.tag,
        }
    }
}

/// An adapter plus its free-form provenance records.
#[derive(Debug, Clone)]
pub struct AdapterFile {
    pub payload: AdapterPayload,
    pub history: Vec<String>,
}

impl AdapterFile {
    pub fn new(payload: AdapterPayload) -> AdapterFile {
        AdapterFile {
            payload,
            history: Vec::new(),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn corrupt(path: &Path, details: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.display().to_string(),
        details: details.into(),
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    fn matrix(&mut self, id: u8, m: &Matrix) {
        self.u8(id);
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        self.u64(m.data().len() as u64);
        for v in m.data() {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, buf: &'a [u8]) -> Reader<'a> {
        Reader { path, buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(corrupt(self.path, "unexpected end of file"));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(corrupt(self.path, "unreasonable string length"));
        }
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| corrupt(self.path, "string is not valid utf-8"))
    }

    fn matrix(&mut self, expect_id: u8) -> Result<Matrix> {
        let id = self.u8()?;
        if id != expect_id {
            return Err(corrupt(
                self.path,
                format!("block id {id} where {expect_id} expected"),
            ));
        }
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let len = self.u64()? as usize;
        if rows == 0 || cols == 0 || len != rows * cols || len > 1 << 28 {
            return Err(corrupt(
                self.path,
                format!("block {id}: bad shape {rows}x{cols} with length {len}"),
            ));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64()?);
        }
        let m = Matrix::from_vec(rows, cols, data).expect("length checked");
        if !m.all_finite() {
            return Err(corrupt(self.path, format!("block {id} has non-finite entries")));
        }
        Ok(m)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(corrupt(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }
}

fn mode_to_byte(mode: InitMode) -> u8 {
    match mode {
        InitMode::ExactDisjoint => MODE_EXACT,
        InitMode::ApproximateRandom => MODE_APPROX,
    }
}

fn mode_from_byte(path: &Path, byte: u8) -> Result<InitMode> {
    match byte {
        MODE_EXACT => Ok(InitMode::ExactDisjoint),
        MODE_APPROX => Ok(InitMode::ApproximateRandom),
        other => Err(corrupt(path, format!("unknown init mode {other}"))),
    }
}

/// Serializes an adapter file; the write is bit-deterministic.
pub fn save_adapter(path: impl AsRef<Path>, file: &AdapterFile) -> Result<()> {
    let path = path.as_ref();
    let mut w = Writer::new();
    w.bytes(ADAPTER_MAGIC);
    w.u32(FORMAT_VERSION);
    match &file.payload {
        AdapterPayload::Plp(a) => {
            use crate::plp::Adapter as _;
            w.u8(KIND_PLP);
            w.u8(mode_to_byte(a.init_mode()));
            w.u64(a.out_dim() as u64);
            w.u64(a.in_dim() as u64);
            w.u64(a.rank() as u64);
            w.u64(a.frozen_dim() as u64);
            w.u64(a.frozen_seed());
            w.f64(a.eps_orth());
            w.string(a.tag());
            w.u32(4);
            w.matrix(BLOCK_A, a.a());
            w.matrix(BLOCK_B, a.b());
            w.matrix(BLOCK_C, a.c());
            w.matrix(BLOCK_D, a.d());
        }
        AdapterPayload::Plain(a) => {
            use crate::plp::Adapter as _;
            w.u8(KIND_PLAIN);
            w.u8(MODE_NONE);
            w.u64(a.out_dim() as u64);
            w.u64(a.in_dim() as u64);
            w.u64(a.rank() as u64);
            w.u64(0);
            w.u64(0);
            w.f64(0.0);
            w.string(a.tag());
            w.u32(2);
            w.matrix(BLOCK_W_UP, a.w_up_ref());
            w.matrix(BLOCK_W_DOWN, a.w_down_ref());
        }
        AdapterPayload::Up(h) => {
            w.u8(KIND_UP);
            w.u8(mode_to_byte(h.init_mode));
            w.u64(h.out_dim as u64);
            w.u64(h.in_dim as u64);
            w.u64(h.rank as u64);
            w.u64(h.frozen_dim as u64);
            w.u64(h.frozen_seed);
            w.f64(h.eps_orth);
            w.string(&h.tag);
            w.u32(2);
            w.matrix(BLOCK_A, &h.a);
            w.matrix(BLOCK_B, &h.b);
        }
        AdapterPayload::Down(h) => {
            w.u8(KIND_DOWN);
            w.u8(mode_to_byte(h.init_mode));
            w.u64(h.out_dim as u64);
            w.u64(h.in_dim as u64);
            w.u64(h.rank as u64);
            w.u64(h.frozen_dim as u64);
            w.u64(h.frozen_seed);
            w.f64(h.eps_orth);
            w.string(&h.tag);
            w.u32(2);
            w.matrix(BLOCK_C, &h.c);
            w.matrix(BLOCK_D, &h.d);
        }
    }
    w.u32(file.history.len() as u32);
    for entry in &file.history {
        w.string(entry);
    }
    fs::write(path, &w.buf).map_err(|e| io_err(path, e))
}

/// Loads and fully re-validates an adapter file.
pub fn load_adapter(path: impl AsRef<Path>) -> Result<AdapterFile> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader::new(path, &buf);
    if r.take(4)? != ADAPTER_MAGIC {
        return Err(corrupt(path, "bad magic, not an adapter file"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let kind = r.u8()?;
    let mode_byte = r.u8()?;
    let m = r.u64()? as usize;
    let n = r.u64()? as usize;
    let rank = r.u64()? as usize;
    let frozen_dim = r.u64()? as usize;
    let frozen_seed = r.u64()?;
    let eps_orth = r.f64()?;
    let tag = r.string()?;
    let block_count = r.u32()?;

    let check_dims = |rows: usize, cols: usize, expect: (usize, usize), what: &str| -> Result<()> {
        if (rows, cols) != expect {
            return Err(corrupt(
                path,
                format!(
                    "{what} shaped {rows}x{cols}, header implies {}x{}",
                    expect.0, expect.1
                ),
            ));
        }
        Ok(())
    };

    let payload = match kind {
        KIND_PLP => {
            if block_count != 4 {
                return Err(corrupt(path, format!("plp kind carries {block_count} blocks")));
            }
            let mode = mode_from_byte(path, mode_byte)?;
            let a = r.matrix(BLOCK_A)?;
            let b = r.matrix(BLOCK_B)?;
            let c = r.matrix(BLOCK_C)?;
            let d = r.matrix(BLOCK_D)?;
            check_dims(a.rows(), a.cols(), (frozen_dim, rank), "block A")?;
            check_dims(b.rows(), b.cols(), (m - frozen_dim, rank), "block B")?;
            check_dims(c.rows(), c.cols(), (rank, frozen_dim), "block C")?;
            check_dims(d.rows(), d.cols(), (rank, n - frozen_dim), "block D")?;
            let adapter = PlpAdapter::from_parts(a, b, c, d, mode, frozen_seed, eps_orth, tag)
                .map_err(|e| match e {
                    Error::OrthBound { measured, bound } => Error::FrozenTamper(format!(
                        "{}: corrupt or tampered frozen blocks, AC leakage {measured:.3e} \
                         above declared bound {bound:.3e}",
                        path.display()
                    )),
                    other => other,
                })?;
            AdapterPayload::Plp(adapter)
        }
        KIND_PLAIN => {
            if block_count != 2 {
                return Err(corrupt(path, format!("plain kind carries {block_count} blocks")));
            }
            let w_up = r.matrix(BLOCK_W_UP)?;
            let w_down = r.matrix(BLOCK_W_DOWN)?;
            check_dims(w_up.rows(), w_up.cols(), (m, rank), "W_up")?;
            check_dims(w_down.rows(), w_down.cols(), (rank, n), "W_down")?;
            AdapterPayload::Plain(PlainLoraAdapter::from_parts(w_up, w_down, tag)?)
        }
        KIND_UP => {
            if block_count != 2 {
                return Err(corrupt(path, format!("up-half carries {block_count} blocks")));
            }
            let mode = mode_from_byte(path, mode_byte)?;
            let a = r.matrix(BLOCK_A)?;
            let b = r.matrix(BLOCK_B)?;
            check_dims(a.rows(), a.cols(), (frozen_dim, rank), "block A")?;
            check_dims(b.rows(), b.cols(), (m - frozen_dim, rank), "block B")?;
            let half = UpHalf {
                out_dim: m,
                in_dim: n,
                rank,
                frozen_dim,
                init_mode: mode,
                frozen_seed,
                eps_orth,
                a,
                b,
                tag,
            };
            half.verify_frozen()?;
            AdapterPayload::Up(half)
        }
        KIND_DOWN => {
            if block_count != 2 {
                return Err(corrupt(path, format!("down-half carries {block_count} blocks")));
            }
            let mode = mode_from_byte(path, mode_byte)?;
            let c = r.matrix(BLOCK_C)?;
            let d = r.matrix(BLOCK_D)?;
            check_dims(c.rows(), c.cols(), (rank, frozen_dim), "block C")?;
            check_dims(d.rows(), d.cols(), (rank, n - frozen_dim), "block D")?;
            let half = DownHalf {
                out_dim: m,
                in_dim: n,
                rank,
                frozen_dim,
                init_mode: mode,
                frozen_seed,
                eps_orth,
                c,
                d,
                tag,
            };
            half.verify_frozen()?;
            AdapterPayload::Down(half)
        }
        other => return Err(corrupt(path, format!("unknown adapter kind {other}"))),
    };

    let history_count = r.u32()?;
    if history_count > 1 << 16 {
        return Err(corrupt(path, "unreasonable history length"));
    }
    let mut history = Vec::with_capacity(history_count as usize);
    for _ in 0..history_count {
        history.push(r.string()?);
    }
    r.done()?;
    Ok(AdapterFile { payload, history })
}

/// Writes a task file: parameters plus the base-map checksum.
pub fn save_task(path: impl AsRef<Path>, task: &SynthTask) -> Result<()> {
    let path = path.as_ref();
    let mut w = Writer::new();
    w.bytes(TASK_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(task.m() as u64);
    w.u64(task.n() as u64);
    w.u64(task.num_contents() as u64);
    w.u64(task.num_styles() as u64);
    w.u64(task.gt_rank() as u64);
    w.u64(task.seed());
    w.u64(task.w0_checksum());
    fs::write(path, &w.buf).map_err(|e| io_err(path, e))
}

/// Regenerates a task from a task file, failing when the stored checksum
/// does not match the regeneration.
pub fn load_task(path: impl AsRef<Path>) -> Result<SynthTask> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader::new(path, &buf);
    if r.take(4)? != TASK_MAGIC {
        return Err(corrupt(path, "bad magic, not a task file"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let m = r.u64()? as usize;
    let n = r.u64()? as usize;
    let contents = r.u64()? as usize;
    let styles = r.u64()? as usize;
    let gt_rank = r.u64()? as usize;
    let seed = r.u64()?;
    let checksum = r.u64()?;
    r.done()?;
    let task = SynthTask::generate(m, n, contents, styles, gt_rank, seed)?;
    if task.w0_checksum() != checksum {
        return Err(corrupt(
            path,
            format!(
                "regeneration checksum {:#018x} does not match stored {checksum:#018x}",
                task.w0_checksum()
            ),
        ));
    }
    Ok(task)
}

/// Renders trace records as line-delimited `key=value` text.
pub fn trace_lines(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        out.push_str(&format!("step={} loss={}", rec.step, rec.loss));
        if let Some(content) = rec.content_term {
            out.push_str(&format!(" content={content}"));
        }
        if let Some(style) = rec.style_term {
            out.push_str(&format!(" style={style}"));
        }
        out.push_str(&format!(" probe={}", rec.probe_loss));
        if let Some(profile) = rec.block_profile {
            out.push_str(&format!(
                " norm_ul={} norm_ur={} norm_dl={} norm_dr={}",
                profile.norm_ul, profile.norm_ur, profile.norm_dl, profile.norm_dr
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::SeededRng;
    use crate::plp::{Adapter as _, PlpSpec, TrainableInit};

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn sample_plp() -> PlpAdapter {
        PlpAdapter::new(8, 8, &PlpSpec::exact(4, 4), 7, &mut SeededRng::new(9))
            .unwrap()
            .with_tag("content:vase")
    }

    #[test]
    fn plp_round_trip_is_bit_exact() {
        let dir = tmp();
        let path = dir.path().join("a.plpa");
        let adapter = sample_plp();
        let file = AdapterFile {
            payload: AdapterPayload::Plp(adapter.clone()),
            history: vec!["created".to_string()],
        };
        save_adapter(&path, &file).unwrap();
        let loaded = load_adapter(&path).unwrap();
        match loaded.payload {
            AdapterPayload::Plp(b) => {
                assert!(b.a().bits_eq(adapter.a()));
                assert!(b.b().bits_eq(adapter.b()));
                assert!(b.c().bits_eq(adapter.c()));
                assert!(b.d().bits_eq(adapter.d()));
                assert_eq!(b.tag(), adapter.tag());
                assert_eq!(b.frozen_seed(), adapter.frozen_seed());
                assert_eq!(b.eps_orth().to_bits(), adapter.eps_orth().to_bits());
            }
            _ => panic!("wrong kind"),
        }
        assert_eq!(loaded.history, vec!["created".to_string()]);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tmp();
        let p1 = dir.path().join("a.plpa");
        let p2 = dir.path().join("b.plpa");
        let file = AdapterFile::new(AdapterPayload::Plp(sample_plp()));
        save_adapter(&p1, &file).unwrap();
        save_adapter(&p2, &file).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn plain_and_half_round_trips() {
        let dir = tmp();
        let plain =
            PlainLoraAdapter::new(6, 5, 3, TrainableInit::GaussianBoth, &mut SeededRng::new(3))
                .unwrap()
                .with_tag("plain");
        let path = dir.path().join("plain.plpa");
        save_adapter(&path, &AdapterFile::new(AdapterPayload::Plain(plain.clone()))).unwrap();
        match load_adapter(&path).unwrap().payload {
            AdapterPayload::Plain(b) => {
                assert!(b.w_up_ref().bits_eq(plain.w_up_ref()));
                assert!(b.w_down_ref().bits_eq(plain.w_down_ref()));
            }
            _ => panic!("wrong kind"),
        }

        let (up, down) = sample_plp().break_adapter();
        let up_path = dir.path().join("up.plpa");
        let down_path = dir.path().join("down.plpa");
        save_adapter(&up_path, &AdapterFile::new(AdapterPayload::Up(up.clone()))).unwrap();
        save_adapter(&down_path, &AdapterFile::new(AdapterPayload::Down(down.clone()))).unwrap();
        match load_adapter(&up_path).unwrap().payload {
            AdapterPayload::Up(h) => {
                assert!(h.a.bits_eq(&up.a));
                assert!(h.b.bits_eq(&up.b));
            }
            _ => panic!("wrong kind"),
        }
        match load_adapter(&down_path).unwrap().payload {
            AdapterPayload::Down(h) => {
                assert!(h.c.bits_eq(&down.c));
                assert!(h.d.bits_eq(&down.d));
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn loader_rejects_tampered_frozen_block() {
        let dir = tmp();
        let path = dir.path().join("a.plpa");
        save_adapter(&path, &AdapterFile::new(AdapterPayload::Plp(sample_plp()))).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // First f64 of block A sits after: magic 4, version 4, kind 1,
        // mode 1, dims 32, seed 8, eps 8, tag (4 + 12), block count 4,
        // block header (1 + 24).
        let offset = 4 + 4 + 1 + 1 + 32 + 8 + 8 + 4 + 12 + 4 + 25;
        let original = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        let tampered = if original == 0.0 { 0.5 } else { original * 1.5 };
        bytes[offset..offset + 8].copy_from_slice(&tampered.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = load_adapter(&path).unwrap_err();
        assert!(
            matches!(err, Error::FrozenTamper(_)),
            "unexpected error {err}"
        );
    }

    #[test]
    fn loader_rejects_bad_magic_and_truncation() {
        let dir = tmp();
        let path = dir.path().join("bad.plpa");
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            load_adapter(&path),
            Err(Error::CorruptFile { .. })
        ));

        let good = dir.path().join("good.plpa");
        save_adapter(&good, &AdapterFile::new(AdapterPayload::Plp(sample_plp()))).unwrap();
        let bytes = fs::read(&good).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_adapter(&path),
            Err(Error::CorruptFile { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_adapter("/nonexistent/nope.plpa"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn task_round_trip_and_checksum_guard() {
        let dir = tmp();
        let path = dir.path().join("t.plpt");
        let task = SynthTask::generate(16, 16, 3, 5, 2, 42).unwrap();
        save_task(&path, &task).unwrap();
        let loaded = load_task(&path).unwrap();
        assert!(loaded.w0().bits_eq(task.w0()));
        assert_eq!(loaded.seed(), task.seed());

        // Corrupt the stored checksum.
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_task(&path), Err(Error::CorruptFile { .. })));
    }

    #[test]
    fn trace_lines_include_terms_when_present() {
        let records = vec![TraceRecord {
            step: 3,
            loss: 1.5,
            content_term: Some(1.0),
            style_term: None,
            probe_loss: 2.0,
            block_profile: None,
        }];
        let text = trace_lines(&records);
        assert_eq!(text, "step=3 loss=1.5 content=1 probe=2\n");
    }
}
