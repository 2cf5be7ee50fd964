//! Node persistence: an in-memory arena for tests and a single-file
//! append-only segment log with a root record per committed version.
//!
//! Log layout, all integers little-endian:
//!
//! ```text
//! header:  "GPTSLOG1" (8 bytes) | format u32 | reserved u32
//! record:  type u8 | payload_len u32 | payload
//!   type 1 leaf:     pw u8 | start u64 | count u32 | count * (t i64, bits u64)
//!   type 2 internal: pw u8 | start u64 | bitmap u64
//!                    | per set bit: ref u64, count u64, min f64, max f64, sum f64
//!   type 3 root:     version u64 | root u64 (MAX = empty) | keylen u16 | key utf8
//! ```
//!
//! Node references are byte offsets of the record's type byte. Nodes are
//! immutable once written; a version becomes visible only after its root
//! record is appended, so a truncated tail never corrupts committed data.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Read;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use super::tree::{Agg, ChildEntry, Node, FANOUT};
use super::StoreError;

const MAGIC: &[u8; 8] = b"GPTSLOG1";
const FORMAT: u32 = 1;
const HEADER_LEN: u64 = 16;

pub(crate) const NO_ROOT: u64 = u64::MAX;

pub(crate) trait NodeStore: Send + Sync {
    fn put(&self, node: &Node) -> Result<u64, StoreError>;
    fn get(&self, r: u64) -> Result<Arc<Node>, StoreError>;
    /// Durably record `(stream, version, root)`.
    fn commit_root(&self, stream: &str, version: u64, root: Option<u64>) -> Result<(), StoreError>;
}

#[derive(Default)]
pub(crate) struct MemBackend {
    nodes: RwLock<Vec<Arc<Node>>>,
}

impl NodeStore for MemBackend {
    fn put(&self, node: &Node) -> Result<u64, StoreError> {
        let mut nodes = self.nodes.write().expect("node arena poisoned");
        nodes.push(Arc::new(node.clone()));
        Ok(nodes.len() as u64 - 1)
    }

    fn get(&self, r: u64) -> Result<Arc<Node>, StoreError> {
        let nodes = self.nodes.read().expect("node arena poisoned");
        nodes
            .get(r as usize)
            .cloned()
            .ok_or_else(|| StoreError::Corrupt(format!("dangling node reference {r}")))
    }

    fn commit_root(&self, _stream: &str, _version: u64, _root: Option<u64>) -> Result<(), StoreError> {
        Ok(())
    }
}

pub(crate) struct FileBackend {
    file: File,
    /// Logical end of file; appends reserve space under this lock.
    len: Mutex<u64>,
    cache: Mutex<HashMap<u64, Arc<Node>>>,
}

impl FileBackend {
    /// Open or create the log, returning the backend plus the committed
    /// `(stream, version, root)` records in file order.
    pub fn open(path: &Path) -> Result<(Self, Vec<(String, u64, Option<u64>)>), StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let meta = file.metadata()?;
        let mut roots = Vec::new();
        let len;
        if meta.len() == 0 {
            let mut header = Vec::with_capacity(HEADER_LEN as usize);
            header.extend_from_slice(MAGIC);
            header.extend_from_slice(&FORMAT.to_le_bytes());
            header.extend_from_slice(&0u32.to_le_bytes());
            file.write_all_at(&header, 0)?;
            file.sync_data()?;
            len = HEADER_LEN;
        } else {
            let mut header = [0u8; HEADER_LEN as usize];
            file.read_exact(&mut header)?;
            if &header[..8] != MAGIC {
                return Err(StoreError::Corrupt("bad magic bytes".into()));
            }
            let format = u32::from_le_bytes(header[8..12].try_into().unwrap());
            if format != FORMAT {
                return Err(StoreError::Corrupt(format!("unsupported format {format}")));
            }
            // Scan record headers; stop cleanly at a truncated tail.
            let file_len = meta.len();
            let mut off = HEADER_LEN;
            let mut committed = HEADER_LEN;
            while off + 5 <= file_len {
                let mut head = [0u8; 5];
                file.read_exact_at(&mut head, off)?;
                let ty = head[0];
                let plen = u32::from_le_bytes(head[1..5].try_into().unwrap()) as u64;
                if off + 5 + plen > file_len {
                    break;
                }
                if ty == 3 {
                    let mut payload = vec![0u8; plen as usize];
                    file.read_exact_at(&mut payload, off + 5)?;
                    roots.push(decode_root(&payload)?);
                    committed = off + 5 + plen;
                } else if ty == 1 || ty == 2 {
                    // node payloads decoded lazily on demand
                } else {
                    return Err(StoreError::Corrupt(format!("unknown record type {ty}")));
                }
                off += 5 + plen;
            }
            // Anything after the last committed root is an interrupted
            // insert; appending over it is safe because no root points there.
            len = if off == file_len { file_len } else { committed };
        }
        Ok((
            Self {
                file,
                len: Mutex::new(len),
                cache: Mutex::new(HashMap::new()),
            },
            roots,
        ))
    }
}

fn encode_node(node: &Node) -> Vec<u8> {
    match node {
        Node::Leaf { pointwidth, start, points } => {
            let mut out = Vec::with_capacity(13 + points.len() * 16);
            out.push(*pointwidth);
            out.extend_from_slice(&start.to_le_bytes());
            out.extend_from_slice(&(points.len() as u32).to_le_bytes());
            for (t, v) in points {
                out.extend_from_slice(&t.to_le_bytes());
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            out
        }
        Node::Internal { pointwidth, start, children } => {
            let mut bitmap = 0u64;
            for (i, c) in children.iter().enumerate() {
                if c.is_some() {
                    bitmap |= 1 << i;
                }
            }
            let mut out = Vec::new();
            out.push(*pointwidth);
            out.extend_from_slice(&start.to_le_bytes());
            out.extend_from_slice(&bitmap.to_le_bytes());
            for c in children.iter().flatten() {
                out.extend_from_slice(&c.node.to_le_bytes());
                out.extend_from_slice(&c.agg.count.to_le_bytes());
                out.extend_from_slice(&c.agg.min.to_bits().to_le_bytes());
                out.extend_from_slice(&c.agg.max.to_bits().to_le_bytes());
                out.extend_from_slice(&c.agg.sum.to_bits().to_le_bytes());
            }
            out
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.pos + n > self.buf.len() {
            return Err(StoreError::Corrupt("short record".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, StoreError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, StoreError> {
        Ok(f64::from_bits(self.u64()?))
    }
}

fn decode_node(ty: u8, payload: &[u8]) -> Result<Node, StoreError> {
    let mut c = Cursor { buf: payload, pos: 0 };
    match ty {
        1 => {
            let pointwidth = c.u8()?;
            let start = c.u64()?;
            let count = c.u32()? as usize;
            let mut points = Vec::with_capacity(count);
            for _ in 0..count {
                let t = c.i64()?;
                let v = c.f64()?;
                points.push((t, v));
            }
            Ok(Node::Leaf { pointwidth, start, points })
        }
        2 => {
            let pointwidth = c.u8()?;
            let start = c.u64()?;
            let bitmap = c.u64()?;
            let mut children = vec![None; FANOUT];
            for (i, slot) in children.iter_mut().enumerate() {
                if bitmap & (1 << i) != 0 {
                    let node = c.u64()?;
                    let count = c.u64()?;
                    let min = c.f64()?;
                    let max = c.f64()?;
                    let sum = c.f64()?;
                    *slot = Some(ChildEntry {
                        node,
                        agg: Agg { count, min, max, sum },
                    });
                }
            }
            Ok(Node::Internal { pointwidth, start, children })
        }
        other => Err(StoreError::Corrupt(format!("record type {other} is not a node"))),
    }
}

fn decode_root(payload: &[u8]) -> Result<(String, u64, Option<u64>), StoreError> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let version = c.u64()?;
    let root = c.u64()?;
    let klen = c.u16()? as usize;
    let key = std::str::from_utf8(c.take(klen)?)
        .map_err(|_| StoreError::Corrupt("root record key is not utf8".into()))?
        .to_string();
    Ok((key, version, (root != NO_ROOT).then_some(root)))
}

impl NodeStore for FileBackend {
    fn put(&self, node: &Node) -> Result<u64, StoreError> {
        let ty: u8 = match node {
            Node::Leaf { .. } => 1,
            Node::Internal { .. } => 2,
        };
        let payload = encode_node(node);
        let mut rec = Vec::with_capacity(5 + payload.len());
        rec.push(ty);
        rec.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        rec.extend_from_slice(&payload);
        let off = {
            let mut len = self.len.lock().expect("len lock poisoned");
            let off = *len;
            self.file.write_all_at(&rec, off)?;
            *len += rec.len() as u64;
            off
        };
        self.cache
            .lock()
            .expect("cache lock poisoned")
            .insert(off, Arc::new(node.clone()));
        Ok(off)
    }

    fn get(&self, r: u64) -> Result<Arc<Node>, StoreError> {
        if let Some(n) = self.cache.lock().expect("cache lock poisoned").get(&r) {
            return Ok(n.clone());
        }
        let mut head = [0u8; 5];
        self.file.read_exact_at(&mut head, r)?;
        let plen = u32::from_le_bytes(head[1..5].try_into().unwrap()) as usize;
        let mut payload = vec![0u8; plen];
        self.file.read_exact_at(&mut payload, r + 5)?;
        let node = Arc::new(decode_node(head[0], &payload)?);
        self.cache
            .lock()
            .expect("cache lock poisoned")
            .insert(r, node.clone());
        Ok(node)
    }

    fn commit_root(&self, stream: &str, version: u64, root: Option<u64>) -> Result<(), StoreError> {
        let key = stream.as_bytes();
        let mut payload = Vec::with_capacity(18 + key.len());
        payload.extend_from_slice(&version.to_le_bytes());
        payload.extend_from_slice(&root.unwrap_or(NO_ROOT).to_le_bytes());
        payload.extend_from_slice(&(key.len() as u16).to_le_bytes());
        payload.extend_from_slice(key);
        let mut rec = Vec::with_capacity(5 + payload.len());
        rec.push(3u8);
        rec.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        rec.extend_from_slice(&payload);
        let mut len = self.len.lock().expect("len lock poisoned");
        self.file.write_all_at(&rec, *len)?;
        *len += rec.len() as u64;
        self.file.sync_data()?;
        Ok(())
    }
}
