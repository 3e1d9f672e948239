//! Run traces: every local visit plus a snapshot of the server tables at each
//! sync, enough to rebuild the episode weights of a run after the fact.
//!
//! File layout (little-endian):
//!
//! ```text
//! "FLCQT1"
//! 'H' u32 len  <json TraceHeader>
//! 'V' u32 k  u32 m  u32 h  u32 s  u32 a  f64 r  u32 s'  f64 eta     (repeated)
//! 'S' u32 len  <json SyncSnapshot>                                  (one per sync)
//! 'E'
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{AlphaGate, SyncSchedule};
use crate::error::{Error, Result};
use crate::mdp::Dims;

pub const TRACE_MAGIC: &[u8; 6] = b"FLCQT1";
const VISIT_BODY_BYTES: usize = 5 * 4 + 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub dims: Dims,
    pub agents: usize,
    pub episodes: usize,
    pub schedule: SyncSchedule,
    pub delta: f64,
    pub c_b: f64,
    pub zeta1: f64,
    pub alpha_gate: AlphaGate,
    pub clip: bool,
    /// Initial value of every Q entry.
    pub initial_q: f64,
    pub dataset_seeds: Vec<u64>,
}

/// One local update: episode `k` (1-based), agent `m`, step `h` (0-based).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub k: usize,
    pub m: usize,
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub next: usize,
    pub eta: f64,
}

/// Server tables right after the `sync_index`-th aggregation (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncSnapshot {
    pub sync_index: usize,
    pub episode: usize,
    /// `[h][s][a]`
    pub global_q: Vec<f64>,
    /// `[h][s]` for `h ∈ [0, H]`
    pub global_v: Vec<f64>,
    pub policy: Vec<usize>,
    /// `N_{t_u}`
    pub n_global: Vec<u64>,
    /// `n_{t_u}`
    pub n_round: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub visits: Vec<VisitRecord>,
    pub snapshots: Vec<SyncSnapshot>,
}

impl RunTrace {
    /// Snapshot taken at sync episode `k`.
    pub fn snapshot_at(&self, k: usize) -> Option<&SyncSnapshot> {
        self.snapshots.iter().find(|s| s.episode == k)
    }

    /// Structural completeness: one snapshot per sync point, `K·M·H` visits
    /// in episode order, table sizes consistent with the header.
    pub fn check_complete(&self) -> Result<()> {
        let hd = &self.header;
        let d = hd.dims;
        let points = &hd.schedule.points;
        if self.snapshots.len() != points.len() {
            return Err(Error::validation(format!(
                "trace has {} snapshots for {} sync points",
                self.snapshots.len(),
                points.len()
            )));
        }
        for (u, (snap, &t)) in self.snapshots.iter().zip(points).enumerate() {
            if snap.episode != t || snap.sync_index != u + 1 {
                return Err(Error::validation(format!(
                    "snapshot {} is for episode {} (sync {}), expected episode {t} (sync {})",
                    u, snap.episode, snap.sync_index, u + 1
                )));
            }
            if snap.global_q.len() != d.cells()
                || snap.global_v.len() != (d.horizon + 1) * d.states
                || snap.policy.len() != d.horizon * d.states
                || snap.n_global.len() != d.cells()
                || snap.n_round.len() != d.cells()
            {
                return Err(Error::validation(format!("snapshot {} has tables of the wrong size", u + 1)));
            }
        }
        let expected = hd.episodes * hd.agents * d.horizon;
        if self.visits.len() != expected {
            return Err(Error::validation(format!(
                "trace has {} visit records, expected K*M*H = {expected}",
                self.visits.len()
            )));
        }
        for (i, v) in self.visits.iter().enumerate() {
            let k = i / (hd.agents * d.horizon) + 1;
            let m = (i / d.horizon) % hd.agents;
            let h = i % d.horizon;
            if (v.k, v.m, v.h) != (k, m, h) {
                return Err(Error::validation(format!(
                    "visit record {i} is (k={}, m={}, h={}), expected (k={k}, m={m}, h={h})",
                    v.k, v.m, v.h
                )));
            }
            if v.s >= d.states || v.next >= d.states || v.a >= d.actions {
                return Err(Error::validation(format!("visit record {i} has an out-of-range index")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64 + self.visits.len() * (1 + VISIT_BODY_BYTES));
        out.extend_from_slice(TRACE_MAGIC);
        write_json_block(&mut out, b'H', &self.header)?;
        let mut snaps = self.snapshots.iter().peekable();
        for v in &self.visits {
            // snapshots go right after the last visit of their episode
            while let Some(s) = snaps.peek() {
                if s.episode < v.k {
                    write_json_block(&mut out, b'S', *s)?;
                    snaps.next();
                } else {
                    break;
                }
            }
            out.push(b'V');
            for x in [v.k, v.m, v.h, v.s, v.a] {
                out.extend_from_slice(&(x as u32).to_le_bytes());
            }
            out.extend_from_slice(&v.r.to_le_bytes());
            out.extend_from_slice(&(v.next as u32).to_le_bytes());
            out.extend_from_slice(&v.eta.to_le_bytes());
        }
        for s in snaps {
            write_json_block(&mut out, b'S', s)?;
        }
        out.push(b'E');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(TRACE_MAGIC.len())? != TRACE_MAGIC {
            return Err(Error::parse(0, "missing FLCQT1 magic"));
        }
        let tag_pos = rd.pos;
        if rd.u8()? != b'H' {
            return Err(Error::parse(tag_pos as u64, "expected header block"));
        }
        let header: TraceHeader = rd.json_block()?;
        let mut visits = Vec::new();
        let mut snapshots = Vec::new();
        loop {
            let tag_pos = rd.pos;
            match rd.u8()? {
                b'V' => {
                    let k = rd.u32()? as usize;
                    let m = rd.u32()? as usize;
                    let h = rd.u32()? as usize;
                    let s = rd.u32()? as usize;
                    let a = rd.u32()? as usize;
                    let r = rd.f64()?;
                    let next = rd.u32()? as usize;
                    let eta = rd.f64()?;
                    visits.push(VisitRecord { k, m, h, s, a, r, next, eta });
                }
                b'S' => snapshots.push(rd.json_block()?),
                b'E' => break,
                other => return Err(Error::parse(tag_pos as u64, format!("unknown record tag 0x{other:02x}"))),
            }
        }
        if rd.pos != bytes.len() {
            return Err(Error::parse(rd.pos as u64, "trailing bytes after end marker"));
        }
        Ok(RunTrace {
            header,
            visits,
            snapshots,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        RunTrace::from_bytes(&std::fs::read(path)?)
    }
}

fn write_json_block<T: Serialize>(out: &mut Vec<u8>, tag: u8, value: &T) -> Result<()> {
    let body = serde_json::to_vec(value)?;
    out.push(tag);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(
                self.bytes.len() as u64,
                format!("unexpected end of file: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn json_block<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let len = self.u32()? as usize;
        let start = self.pos;
        let body = self.take(len)?;
        serde_json::from_slice(body).map_err(|e| Error::parse(start as u64 + e.column().saturating_sub(1) as u64, format!("bad JSON block: {e}")))
    }
}
