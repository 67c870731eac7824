//! Per-chunk inverted indexes from bucket to the labels hashed there.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::codes::{CodeConfig, LabelCodebook, LabelId};
use crate::error::{check_index, Result, SolarError};

const INDEX_MAGIC: &[u8; 4] = b"SLRX";
const INDEX_VERSION: u32 = 1;

/// CSR postings for one chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ChunkTable {
    /// `B + 1` offsets into `labels`.
    offsets: Vec<u32>,
    /// All `N` labels grouped by bucket, ascending within each bucket.
    labels: Vec<LabelId>,
}

impl ChunkTable {
    fn build(cb: &LabelCodebook, chunk: usize) -> Self {
        let b = cb.buckets_per_chunk();
        let n = cb.num_labels();
        let mut offsets = vec![0u32; b + 1];
        for label in 0..n {
            offsets[cb.code(label, chunk) as usize + 1] += 1;
        }
        for i in 0..b {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor: Vec<u32> = offsets[..b].to_vec();
        let mut labels = vec![0 as LabelId; n];
        // labels are visited in increasing order so every bucket ends up sorted
        for label in 0..n {
            let bucket = cb.code(label, chunk) as usize;
            labels[cursor[bucket] as usize] = label as LabelId;
            cursor[bucket] += 1;
        }
        Self { offsets, labels }
    }

    #[inline]
    fn postings(&self, bucket: usize) -> &[LabelId] {
        let lo = self.offsets[bucket] as usize;
        let hi = self.offsets[bucket + 1] as usize;
        &self.labels[lo..hi]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedIndex {
    config: CodeConfig,
    tables: Vec<ChunkTable>,
}

impl InvertedIndex {
    pub fn build(cb: &LabelCodebook) -> Self {
        let tables = (0..cb.num_chunks())
            .into_par_iter()
            .map(|k| ChunkTable::build(cb, k))
            .collect();
        Self {
            config: *cb.config(),
            tables,
        }
    }

    pub fn config(&self) -> &CodeConfig {
        &self.config
    }

    /// Labels in `bucket` of `chunk`, ascending.
    pub fn lookup(&self, chunk: usize, bucket: usize) -> Result<&[LabelId]> {
        check_index("chunk", chunk, self.config.num_chunks)?;
        check_index("bucket", bucket, self.config.buckets_per_chunk)?;
        Ok(self.tables[chunk].postings(bucket))
    }

    /// Unchecked variant of [`lookup`](Self::lookup) for the hot path.
    #[inline]
    pub fn postings(&self, chunk: usize, bucket: usize) -> &[LabelId] {
        self.tables[chunk].postings(bucket)
    }

    #[inline]
    pub fn load(&self, chunk: usize, bucket: usize) -> usize {
        let offsets = &self.tables[chunk].offsets;
        (offsets[bucket + 1] - offsets[bucket]) as usize
    }

    /// Map from bucket load to the number of buckets carrying that load.
    pub fn load_histogram(&self, chunk: usize) -> Result<BTreeMap<usize, usize>> {
        check_index("chunk", chunk, self.config.num_chunks)?;
        let mut hist = BTreeMap::new();
        for bucket in 0..self.config.buckets_per_chunk {
            *hist.entry(self.load(chunk, bucket)).or_insert(0) += 1;
        }
        Ok(hist)
    }

    pub fn max_load(&self, chunk: usize) -> Result<usize> {
        check_index("chunk", chunk, self.config.num_chunks)?;
        Ok((0..self.config.buckets_per_chunk)
            .map(|b| self.load(chunk, b))
            .max()
            .unwrap_or(0))
    }

    /// Checks the partition and ordering invariants against a codebook.
    pub fn is_consistent_with(&self, cb: &LabelCodebook) -> bool {
        if self.config != *cb.config() {
            return false;
        }
        self.tables.iter().enumerate().all(|(k, table)| {
            (0..self.config.buckets_per_chunk).all(|b| {
                let post = table.postings(b);
                post.windows(2).all(|w| w[0] < w[1])
                    && post.iter().all(|&l| cb.code(l as usize, k) as usize == b)
            }) && table.labels.len() == cb.num_labels()
        })
    }

    /// Binary form: magic, version, `N K B` as u32, base seed as u64, then
    /// per chunk `B + 1` offsets and `N` labels. Everything little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        for v in [
            self.config.num_labels,
            self.config.num_chunks,
            self.config.buckets_per_chunk,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.config.base_seed.to_le_bytes())?;
        for table in &self.tables {
            for &o in &table.offsets {
                w.write_all(&o.to_le_bytes())?;
            }
            for &l in &table.labels {
                w.write_all(&l.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |msg: &str| SolarError::Format(format!("inverted index: {msg}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != INDEX_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
        if version != INDEX_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
        }
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed).map_err(|_| bad("truncated header"))?;
        let config = CodeConfig::new(dims[0], dims[1], dims[2], u64::from_le_bytes(seed));
        config.validate()?;

        let (n, b) = (config.num_labels, config.buckets_per_chunk);
        let mut tables = Vec::with_capacity(config.num_chunks);
        for _ in 0..config.num_chunks {
            let offsets = read_u32s(&mut r, b + 1).map_err(|_| bad("truncated body"))?;
            let labels = read_u32s(&mut r, n).map_err(|_| bad("truncated body"))?;
            let monotone = offsets.windows(2).all(|w| w[0] <= w[1]);
            if offsets[0] != 0 || offsets[b] as usize != n || !monotone {
                return Err(bad("offsets do not partition the label set"));
            }
            tables.push(ChunkTable { offsets, labels });
        }
        Ok(Self { config, tables })
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u32s<R: Read>(r: &mut R, count: usize) -> std::io::Result<Vec<u32>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
