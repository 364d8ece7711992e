//! Binary knowledge-base files.
//!
//! Layout, all integers little-endian:
//! `"ETCL" | version u32 | total length u64 | seed u64 | config JSON (u64 length + bytes) | body | CRC-32 u32`.
//! The checksum covers every byte before it.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::masks::{AccumulatedMask, BitMatrix, TaskMask};
use crate::nn::{Network, TaskHead};
use crate::numerics::Matrix;
use crate::similarity::{BasisSource, PriorVerdict, RepresentationBasis, SimilarityVerdict};
use crate::transfer::{AlignmentRecord, GpmMemory};

use super::{KnowledgeBase, TaskRecord, TrainConfig};

pub const MAGIC: &[u8; 4] = b"ETCL";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
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

    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }

    fn bytes(&mut self, b: &[u8]) {
        self.len(b.len());
        self.buf.extend_from_slice(b);
    }

    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }

    fn ids(&mut self, v: &[u32]) {
        self.len(v.len());
        v.iter().for_each(|x| self.u32(*x));
    }

    fn matrix(&mut self, m: &Matrix) {
        self.len(m.rows());
        self.len(m.cols());
        m.as_slice().iter().for_each(|x| self.f64(*x));
    }

    fn bits(&mut self, b: &BitMatrix) {
        self.len(b.rows());
        self.len(b.cols());
        b.words().iter().for_each(|w| self.u64(*w));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Malformed(format!("record overruns body at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Malformed(format!("invalid flag byte {v}"))),
        }
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

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::Malformed(format!("length {n} too large")))?;
        if n > self.buf.len() * 8 {
            return Err(Error::Malformed(format!("implausible length {n}")));
        }
        Ok(n)
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn ids(&mut self) -> Result<Vec<u32>> {
        let n = self.len()?;
        (0..n).map(|_| self.u32()).collect()
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.len()?;
        let cols = self.len()?;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Malformed("matrix size overflow".into()))?;
        let values = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Matrix::new(rows, cols, values).map_err(|e| Error::Malformed(e.to_string()))
    }

    fn bits(&mut self) -> Result<BitMatrix> {
        let rows = self.len()?;
        let cols = self.len()?;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Malformed("mask size overflow".into()))?;
        let words = (0..n.div_ceil(64)).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        BitMatrix::from_words(rows, cols, words).map_err(|e| Error::Malformed(e.to_string()))
    }
}

fn write_verdict(w: &mut Writer, v: &SimilarityVerdict) {
    w.u32(v.new_task);
    w.len(v.per_prior.len());
    for p in &v.per_prior {
        w.u32(p.prior);
        w.f64(p.raw_prime);
        w.f64(p.raw);
        w.f64(p.dis_prime);
        w.f64(p.dis);
        w.u8(p.similar as u8);
    }
    w.ids(&v.sim_set);
    w.ids(&v.dis_set);
    match v.most_similar {
        Some(id) => {
            w.u8(1);
            w.u32(id);
        }
        None => w.u8(0),
    }
    w.u8(v.normalized as u8);
    w.u8(v.degenerate as u8);
}

fn read_verdict(r: &mut Reader<'_>) -> Result<SimilarityVerdict> {
    let new_task = r.u32()?;
    let n = r.len()?;
    let per_prior = (0..n)
        .map(|_| {
            Ok(PriorVerdict {
                prior: r.u32()?,
                raw_prime: r.f64()?,
                raw: r.f64()?,
                dis_prime: r.f64()?,
                dis: r.f64()?,
                similar: r.flag()?,
            })
        })
        .collect::<Result<_>>()?;
    let sim_set = r.ids()?;
    let dis_set = r.ids()?;
    let most_similar = if r.flag()? { Some(r.u32()?) } else { None };
    Ok(SimilarityVerdict {
        new_task,
        per_prior,
        sim_set,
        dis_set,
        most_similar,
        normalized: r.flag()?,
        degenerate: r.flag()?,
    })
}

fn read_basis(r: &mut Reader<'_>, task_id: u32, source: BasisSource) -> Result<RepresentationBasis> {
    Ok(RepresentationBasis {
        task_id,
        source,
        vectors: r.matrix()?,
    })
}

fn encode(kb: &KnowledgeBase) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(0);
    w.u64(kb.config.seed);
    w.bytes(&serde_json::to_vec(&kb.config)?);

    let net = &kb.net;
    w.len(net.weights.len());
    for (wm, sm) in net.weights.iter().zip(&net.scores) {
        w.matrix(wm);
        w.matrix(sm);
    }
    w.len(net.heads.len());
    for h in &net.heads {
        w.matrix(&h.weight);
        w.f64s(&h.bias);
        w.len(h.hidden_bias.len());
        h.hidden_bias.iter().for_each(|b| w.f64s(b));
    }
    w.ids(&kb.accum.tasks);
    w.len(kb.accum.layers.len());
    kb.accum.layers.iter().for_each(|b| w.bits(b));

    w.len(kb.tasks.len());
    for rec in &kb.tasks {
        w.u32(rec.task_id);
        w.f64(rec.mask.capacity);
        w.len(rec.mask.layers.len());
        rec.mask.layers.iter().for_each(|b| w.bits(b));
        w.matrix(&rec.basis_original.vectors);
        w.matrix(&rec.basis_continual.vectors);
        w.matrix(&rec.memory.basis);
        write_verdict(&mut w, &rec.verdict);
        match rec.alignment {
            Some(a) => {
                w.u8(1);
                w.u32(a.donor_task);
                w.u8(a.applied as u8);
            }
            None => w.u8(0),
        }
    }

    let total = w.buf.len() as u64 + 4;
    w.buf[8..16].copy_from_slice(&total.to_le_bytes());
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    Ok(w.buf)
}

fn decode(bytes: &[u8]) -> Result<KnowledgeBase> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::BadMagic(format!("expected \"ETCL\", found {shown:?}")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let total = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if (bytes.len() as u64) < total {
        return Err(Error::Truncated(format!("expected {total} bytes, found {}", bytes.len())));
    }
    if bytes.len() as u64 != total {
        return Err(Error::Malformed(format!("expected {total} bytes, found {}", bytes.len())));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader {
        buf: payload,
        pos: HEADER_LEN,
    };
    let seed = r.u64()?;
    let config: TrainConfig = serde_json::from_slice(r.bytes()?)?;
    if config.seed != seed {
        return Err(Error::Malformed("header seed disagrees with config".into()));
    }
    config.validate().map_err(|e| Error::Malformed(e.to_string()))?;

    let n_layers = r.len()?;
    let mut weights = Vec::with_capacity(n_layers);
    let mut scores = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        weights.push(r.matrix()?);
        scores.push(r.matrix()?);
    }
    let n_heads = r.len()?;
    let mut heads = Vec::with_capacity(n_heads);
    for _ in 0..n_heads {
        let weight = r.matrix()?;
        let bias = r.f64s()?;
        let n = r.len()?;
        let hidden_bias = (0..n).map(|_| r.f64s()).collect::<Result<_>>()?;
        heads.push(TaskHead {
            weight,
            bias,
            hidden_bias,
        });
    }
    let accum_tasks = r.ids()?;
    let n = r.len()?;
    let accum_layers = (0..n).map(|_| r.bits()).collect::<Result<_>>()?;

    let n_tasks = r.len()?;
    let mut tasks = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        let task_id = r.u32()?;
        let capacity = r.f64()?;
        let n = r.len()?;
        let layers = (0..n).map(|_| r.bits()).collect::<Result<_>>()?;
        let basis_original = read_basis(&mut r, task_id, BasisSource::Original)?;
        let basis_continual = read_basis(&mut r, task_id, BasisSource::Continual)?;
        let memory = GpmMemory {
            owner_task: task_id,
            basis: r.matrix()?,
        };
        let verdict = read_verdict(&mut r)?;
        let alignment = if r.flag()? {
            Some(AlignmentRecord {
                new_task: task_id,
                donor_task: r.u32()?,
                applied: r.flag()?,
            })
        } else {
            None
        };
        tasks.push(TaskRecord {
            task_id,
            mask: TaskMask {
                task_id,
                capacity,
                layers,
            },
            basis_original,
            basis_continual,
            memory,
            verdict,
            alignment,
        });
    }
    if r.pos != payload.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", payload.len() - r.pos)));
    }

    let kb = KnowledgeBase {
        net: Network {
            config: config.network.clone(),
            weights,
            scores,
            heads,
        },
        config,
        accum: AccumulatedMask {
            layers: accum_layers,
            tasks: accum_tasks,
        },
        tasks,
    };
    let shapes = kb.net.layer_shapes();
    let shapes_ok = kb.net.weights.iter().map(Matrix::shape).eq(shapes.iter().copied())
        && kb.net.scores.iter().map(Matrix::shape).eq(shapes.iter().copied())
        && kb.accum.layers.iter().map(BitMatrix::shape).eq(shapes.iter().copied())
        && kb.tasks.iter().all(|t| t.mask.layers.iter().map(BitMatrix::shape).eq(shapes.iter().copied()));
    if !shapes_ok {
        return Err(Error::Malformed("stored shapes disagree with the network config".into()));
    }
    Ok(kb)
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_kb(kb: &KnowledgeBase, path: &Path) -> Result<()> {
    let bytes = encode(kb)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "kb".into());
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
pub(crate) fn to_bytes(kb: &KnowledgeBase) -> Vec<u8> {
    encode(kb).unwrap()
}
