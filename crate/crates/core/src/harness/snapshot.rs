//! Binary snapshot of a [`SpatialStore`].
//!
//! Layout, all integers and floats little-endian fixed width:
//!
//! ```text
//! magic "STVR" | u32 version | section* where section = u64 byte length + body
//! sections in order: schema, window state, manifests, records
//! ```
//!
//! The index is not stored; restore rebuilds it from the live records in
//! ingest order, which is deterministic for a given configuration.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::ann::AnnConfig;
use crate::encoding::{GeoCoordinate, Modality, Schema};
use crate::error::{Error, Result};
use crate::store::{MaintenanceMode, SpatialStore, StoreConfig};
use crate::window::{BucketManifest, WindowConfig, WindowState};
use crate::SpatRecord;

pub const MAGIC: [u8; 4] = *b"STVR";
pub const VERSION: u32 = 1;

fn load_err(msg: impl Into<String>) -> Error {
    Error::Load(msg.into())
}

fn put_opt_f64(w: &mut Vec<u8>, v: Option<f64>) {
    w.push(v.is_some() as u8);
    w.write_f64::<LE>(v.unwrap_or(0.0)).unwrap();
}

fn put_opt_i64(w: &mut Vec<u8>, v: Option<i64>) {
    w.push(v.is_some() as u8);
    w.write_i64::<LE>(v.unwrap_or(0)).unwrap();
}

fn put_section(out: &mut Vec<u8>, body: &[u8]) {
    out.write_u64::<LE>(body.len() as u64).unwrap();
    out.extend_from_slice(body);
}

pub fn encode_snapshot(store: &SpatialStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.write_u32::<LE>(VERSION).unwrap();

    let mut s = Vec::new();
    let mods = store.schema().modalities();
    s.write_u32::<LE>(mods.len() as u32).unwrap();
    for m in mods {
        let (kind, dim) = match m {
            Modality::Content(d) => (0u8, *d),
            Modality::Time => (1, 2),
            Modality::Geo => (2, 3),
        };
        s.push(kind);
        s.write_u32::<LE>(dim as u32).unwrap();
    }
    put_section(&mut out, &s);

    let cfg = store.config();
    let win = store.window();
    let wc = win.config();
    let mut s = Vec::new();
    s.write_f64::<LE>(wc.tau).unwrap();
    s.write_u32::<LE>(wc.buckets as u32).unwrap();
    s.write_f64::<LE>(wc.t0).unwrap();
    s.push(wc.lenient as u8);
    s.write_u64::<LE>(win.shift_step()).unwrap();
    put_opt_i64(&mut s, win.current_interval());
    put_opt_f64(&mut s, win.last_advance_time());
    put_opt_f64(&mut s, win.last_ingest_time());
    s.push(match cfg.mode {
        MaintenanceMode::Circular => 0,
        MaintenanceMode::Naive => 1,
    });
    s.write_f64::<LE>(store.time_origin()).unwrap();
    let a = &cfg.ann;
    s.write_u32::<LE>(a.max_neighbors as u32).unwrap();
    s.write_u32::<LE>(a.ef_construction as u32).unwrap();
    s.write_u32::<LE>(a.default_ef_search as u32).unwrap();
    s.write_u64::<LE>(a.seed).unwrap();
    put_opt_f64(&mut s, a.compaction_threshold);
    put_section(&mut out, &s);

    let mut s = Vec::new();
    s.write_u32::<LE>(win.buckets().len() as u32).unwrap();
    for b in win.buckets() {
        s.write_u32::<LE>(b.bucket_index as u32).unwrap();
        put_opt_i64(&mut s, b.interval);
        s.write_u64::<LE>(b.record_ids.len() as u64).unwrap();
        for id in &b.record_ids {
            s.write_u64::<LE>(*id).unwrap();
        }
    }
    put_section(&mut out, &s);

    let mut s = Vec::new();
    let live = store.live_records();
    s.write_u64::<LE>(live.len() as u64).unwrap();
    for r in live {
        let r = &r.record;
        s.write_u64::<LE>(r.id).unwrap();
        s.write_f64::<LE>(r.timestamp).unwrap();
        s.write_f64::<LE>(r.location.lat()).unwrap();
        s.write_f64::<LE>(r.location.lon()).unwrap();
        s.write_u32::<LE>(r.content.len() as u32).unwrap();
        for c in &r.content {
            s.write_u32::<LE>(c.len() as u32).unwrap();
            for x in c {
                s.write_f64::<LE>(*x).unwrap();
            }
        }
    }
    put_section(&mut out, &s);
    out
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn err(&self, e: std::io::Error) -> Error {
        load_err(format!(
            "{} section truncated at byte {}: {e}",
            self.what,
            self.cur.position()
        ))
    }
    fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|e| self.err(e))
    }
    fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LE>().map_err(|e| self.err(e))
    }
    fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LE>().map_err(|e| self.err(e))
    }
    fn i64(&mut self) -> Result<i64> {
        self.cur.read_i64::<LE>().map_err(|e| self.err(e))
    }
    fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LE>().map_err(|e| self.err(e))
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(load_err(format!(
                "{} section: bad flag byte {b}",
                self.what
            ))),
        }
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        let some = self.flag()?;
        let v = self.f64()?;
        Ok(some.then_some(v))
    }
    fn opt_i64(&mut self) -> Result<Option<i64>> {
        let some = self.flag()?;
        let v = self.i64()?;
        Ok(some.then_some(v))
    }
    /// Guards allocations against corrupt counts.
    fn count(&mut self, per_item: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        let left = self.cur.get_ref().len() - self.cur.position() as usize;
        if n.saturating_mul(per_item) > left {
            return Err(load_err(format!(
                "{} section claims {n} entries but only {left} bytes remain",
                self.what
            )));
        }
        Ok(n)
    }
    fn finish(self) -> Result<()> {
        let left = self.cur.get_ref().len() - self.cur.position() as usize;
        if left != 0 {
            return Err(load_err(format!(
                "{} section has {left} trailing bytes",
                self.what
            )));
        }
        Ok(())
    }
}

fn sections(bytes: &[u8]) -> Result<Vec<&[u8]>> {
    if bytes.len() < 8 {
        return Err(load_err(format!(
            "file is {} bytes, too short for a header",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(load_err(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[..4],
            MAGIC
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(load_err(format!(
            "unsupported snapshot version {version}, expected {VERSION}"
        )));
    }
    let names = ["schema", "window state", "manifests", "records"];
    let mut pos = 8;
    let mut out = Vec::with_capacity(4);
    for name in names {
        let Some(len) = bytes.get(pos..pos + 8) else {
            return Err(load_err(format!("missing {name} section header")));
        };
        let len = u64::from_le_bytes(len.try_into().unwrap()) as usize;
        pos += 8;
        let body = bytes.get(pos..pos.saturating_add(len)).ok_or_else(|| {
            load_err(format!(
                "{name} section claims {len} bytes, file ends early"
            ))
        })?;
        out.push(body);
        pos += len;
    }
    if pos != bytes.len() {
        return Err(load_err(format!(
            "{} trailing bytes after records",
            bytes.len() - pos
        )));
    }
    Ok(out)
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<SpatialStore> {
    let secs = sections(bytes)?;
    let rd = |i: usize, what: &'static str| Reader {
        cur: Cursor::new(secs[i]),
        what,
    };

    let mut r = rd(0, "schema");
    let n = r.u32()? as usize;
    let mut mods = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let kind = r.u8()?;
        let dim = r.u32()? as usize;
        mods.push(match (kind, dim) {
            (0, d) => Modality::Content(d),
            (1, 2) => Modality::Time,
            (2, 3) => Modality::Geo,
            _ => return Err(load_err(format!("bad modality kind {kind} with dim {dim}"))),
        });
    }
    r.finish()?;
    let schema = Schema::new(mods).map_err(|e| load_err(format!("schema section: {e}")))?;
    let content_dims = schema.content_dims();
    if Schema::spatiotemporal(&content_dims).ok().as_ref() != Some(&schema) {
        return Err(load_err(
            "schema is not content blocks followed by time and geo",
        ));
    }

    let mut r = rd(1, "window state");
    let tau = r.f64()?;
    let buckets = r.u32()? as usize;
    let t0 = r.f64()?;
    let lenient = r.flag()?;
    let shift_step = r.u64()?;
    let current_interval = r.opt_i64()?;
    let last_advance = r.opt_f64()?;
    let last_ingest = r.opt_f64()?;
    let mode = match r.u8()? {
        0 => MaintenanceMode::Circular,
        1 => MaintenanceMode::Naive,
        b => return Err(load_err(format!("unknown maintenance mode {b}"))),
    };
    let time_origin = r.f64()?;
    let ann = AnnConfig {
        max_neighbors: r.u32()? as usize,
        ef_construction: r.u32()? as usize,
        default_ef_search: r.u32()? as usize,
        seed: r.u64()?,
        compaction_threshold: r.opt_f64()?,
        ..AnnConfig::new(schema.dim())
    };
    r.finish()?;
    let window_cfg = WindowConfig::new(tau, buckets, t0)
        .map_err(|e| load_err(format!("window state: {e}")))?
        .lenient(lenient);

    let mut r = rd(2, "manifests");
    let n = r.u32()? as usize;
    if n != buckets {
        return Err(load_err(format!("{n} manifests for {buckets} buckets")));
    }
    let mut manifests = Vec::with_capacity(n);
    for _ in 0..n {
        let bucket_index = r.u32()? as usize;
        let interval = r.opt_i64()?;
        let len = r.count(8)?;
        let record_ids = (0..len).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        manifests.push(BucketManifest {
            bucket_index,
            interval,
            record_ids,
            start_offset: None,
            end_offset: None,
        });
    }
    r.finish()?;
    let window = WindowState::from_parts(
        window_cfg,
        shift_step,
        current_interval,
        manifests,
        last_advance,
        last_ingest,
    )
    .map_err(|e| load_err(format!("manifests: {e}")))?;

    let mut r = rd(3, "records");
    let n = r.count(36)?;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64()?;
        let timestamp = r.f64()?;
        let lat = r.f64()?;
        let lon = r.f64()?;
        let blocks = r.u32()? as usize;
        let mut content = Vec::with_capacity(blocks.min(64));
        for _ in 0..blocks {
            let d = r.u32()? as usize;
            if d.saturating_mul(8) > secs[3].len() {
                return Err(load_err(format!(
                    "record {id}: block of {d} dims exceeds section"
                )));
            }
            content.push((0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        let location =
            GeoCoordinate::new(lat, lon).map_err(|e| load_err(format!("record {id}: {e}")))?;
        records.push(SpatRecord {
            id,
            content,
            timestamp,
            location,
        });
    }
    r.finish()?;

    let config = StoreConfig {
        content_dims,
        window: window_cfg,
        ann,
        mode,
    };
    SpatialStore::from_parts(config, window, time_origin, records).map_err(|e| match e {
        Error::Load(_) => e,
        other => load_err(format!("records: {other}")),
    })
}

pub fn snapshot(store: &SpatialStore, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_snapshot(store))?;
    f.sync_all()?;
    Ok(())
}

pub fn restore(path: &Path) -> Result<SpatialStore> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| load_err(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    decode_snapshot(&bytes)
}
