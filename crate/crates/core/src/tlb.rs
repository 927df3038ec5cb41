//! Fixed TLB entry sequences: decomposition of resolved blocks into
//! power-of-two entries, the five-word entry encoding and the `MLTC` artifact.
//!
//! Word layout (little-endian `u32`s):
//!
//! | word | bits |
//! |------|------|
//! | 0 | `vaddr[31:12] << 12`, valid at 11, `log2_size` in 5..0 |
//! | 1 | `paddr[31:12] << 12`, `paddr[35:32]` in 3..0 |
//! | 2 | UR, UW, UX, KR, KW, KX in bits 0..=5 |
//! | 3 | cache code in 2..0, coherent flag at 3 |
//! | 4 | pid in 13..0, global flag at 31 |
//!
//! Every other bit is reserved and must be zero.

use serde::Serialize;
use thiserror::Error;

use crate::doc::hex;
use crate::layout::{MemoryLayout, ResolvedBlock};
use crate::model::*;

pub const MLTC_MAGIC: &[u8; 4] = b"MLTC";
pub const MLTC_VERSION: u16 = 1;

pub const VALID_BIT: u32 = 1 << 11;
pub const GLOBAL_BIT: u32 = 1 << 31;
pub const COHERENT_BIT: u32 = 1 << 3;
pub const PID_MASK: u32 = 0x3FFF;
const PHYS_LIMIT: u64 = 1 << 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TlbEntry {
    pub virtual_base: Addr,
    pub physical_base: Addr,
    pub log2_size: u32,
    pub permissions: Permissions,
    pub cache_policy: CachePolicy,
    /// Zero marks a global entry.
    pub pid: u32,
    pub valid: bool,
}

impl TlbEntry {
    pub fn size(&self) -> u64 {
        1u64 << self.log2_size
    }

    pub fn is_global(&self) -> bool {
        self.pid == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodedTlbEntry {
    pub words: [u32; 5],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlbSequence {
    pub space: Owner,
    pub pid: u32,
    pub entries: Vec<TlbEntry>,
    pub encoded: Vec<EncodedTlbEntry>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TlbError {
    #[error("block {block}: range [{base:#x}, +{size:#x}) cannot be covered by entries of at least {min:#x} bytes")]
    Alignment { block: String, base: Addr, size: u64, min: u64 },
    #[error("space {space}: {needed} entries needed, {budget} available")]
    Budget { space: String, needed: usize, budget: usize },
    #[error("entry out of encodable range: {0}")]
    Range(String),
    #[error("unsupported TLB model: {0}")]
    Unsupported(String),
    #[error("layout targets a page-table MMU")]
    WrongBackend,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("word {word}: reserved bits {bits:#010x} set")]
    Reserved { word: usize, bits: u32 },
    #[error("log2 size {0} below the 4 KiB minimum")]
    TooSmall(u32),
    #[error("reserved cache encoding {0:#x}")]
    Cache(u32),
    #[error("global flag does not match pid {0}")]
    Global(u32),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic")]
    Magic,
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("artifact truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

/// Greedy largest-aligned-first cover of `[v, v+size)` → `[p, p+size)` by
/// power-of-two entries. Each triple is `(vbase, pbase, log2_size)`.
pub fn decompose_range(v: Addr, p: Addr, size: u64, t: &TlbModel) -> Result<Vec<(Addr, Addr, u32)>, TlbError> {
    let fail = || TlbError::Alignment {
        block: String::new(),
        base: v,
        size,
        min: t.min_entry_size,
    };
    let mut out = Vec::new();
    let mut done = 0u64;
    while done < size {
        let rem = size - done;
        let (va, pa) = (v.wrapping_add(done), p.wrapping_add(done));
        let mut s = t.max_entry_size.min(1u64 << (63 - rem.leading_zeros()));
        while s >= t.min_entry_size && (va | pa) & (s - 1) != 0 {
            s >>= 1;
        }
        if s < t.min_entry_size {
            return Err(fail());
        }
        out.push((va, pa, s.trailing_zeros()));
        done += s;
    }
    Ok(out)
}

pub fn decompose_block(block: &ResolvedBlock, mmu: &MmuModel) -> Result<Vec<TlbEntry>, TlbError> {
    let MmuModel::TlbFixed(t) = mmu else {
        return Err(TlbError::WrongBackend);
    };
    let parts = decompose_range(block.virtual_address, block.physical_address, block.size, t).map_err(|e| match e {
        TlbError::Alignment { base, size, min, .. } => TlbError::Alignment {
            block: block.id().to_string(),
            base,
            size,
            min,
        },
        other => other,
    })?;
    Ok(parts
        .into_iter()
        .map(|(v, p, log2)| TlbEntry {
            virtual_base: v,
            physical_base: p,
            log2_size: log2,
            permissions: block.permissions,
            cache_policy: block.cache_policy,
            pid: 0,
            valid: true,
        })
        .collect())
}

/// One sequence per partition: global kernel entries first, then the
/// partition's own and shared-in entries, each group ordered by virtual base.
pub fn build_sequences(layout: &MemoryLayout) -> Result<Vec<TlbSequence>, TlbError> {
    let MmuModel::TlbFixed(t) = &layout.mmu else {
        return Err(TlbError::WrongBackend);
    };
    if let Associativity::SetAssociative { .. } = t.associativity {
        return Err(TlbError::Unsupported(
            "static sequences need a fully associative variable-size entry class".into(),
        ));
    }
    let mut kernel = Vec::new();
    for b in &layout.kernel_plan().blocks {
        kernel.extend(decompose_block(b, &layout.mmu)?);
    }
    kernel.sort_by_key(|e| e.virtual_base);

    let mut out = Vec::new();
    for plan in layout.partition_plans() {
        let pid = layout.space_id(&plan.space).expect("plan space is a partition");
        if pid >= 1 << t.pid_bits {
            return Err(TlbError::Range(format!(
                "pid {pid} for {} needs more than {} bits",
                plan.space, t.pid_bits
            )));
        }
        let mut own = Vec::new();
        for b in plan.blocks.iter().filter(|b| !b.owner.is_kernel()) {
            own.extend(decompose_block(b, &layout.mmu)?.into_iter().map(|e| TlbEntry { pid, ..e }));
        }
        own.sort_by_key(|e| e.virtual_base);
        let mut entries = kernel.clone();
        entries.extend(own);
        if entries.len() > t.entry_count as usize {
            return Err(TlbError::Budget {
                space: plan.space.to_string(),
                needed: entries.len(),
                budget: t.entry_count as usize,
            });
        }
        let encoded = entries.iter().map(encode_entry).collect::<Result<Vec<_>, _>>()?;
        out.push(TlbSequence {
            space: plan.space.clone(),
            pid,
            entries,
            encoded,
        });
    }
    Ok(out)
}

fn cache_bits(c: CachePolicy) -> u32 {
    match c {
        CachePolicy::Normal => 0,
        CachePolicy::IO => 1,
        CachePolicy::WriteThrough => 2,
        CachePolicy::Uncached => 3,
        CachePolicy::NormalCoherent => COHERENT_BIT,
    }
}

pub fn encode_entry(e: &TlbEntry) -> Result<EncodedTlbEntry, TlbError> {
    if !(12..=63).contains(&e.log2_size) {
        return Err(TlbError::Range(format!("log2 size {}", e.log2_size)));
    }
    let mask = e.size() - 1;
    if e.virtual_base & mask != 0 || e.physical_base & mask != 0 {
        return Err(TlbError::Range("entry bases are not aligned by their size".into()));
    }
    if e.virtual_base > u32::MAX as u64 || (e.virtual_base as u128 + e.size() as u128) > 1 << 32 {
        return Err(TlbError::Range(format!("virtual base {} exceeds 32 bits", hex(e.virtual_base))));
    }
    if e.physical_base as u128 + e.size() as u128 > PHYS_LIMIT as u128 {
        return Err(TlbError::Range(format!("physical base {} exceeds 36 bits", hex(e.physical_base))));
    }
    if e.pid > PID_MASK {
        return Err(TlbError::Range(format!("pid {} exceeds 14 bits", e.pid)));
    }
    let w0 = (e.virtual_base as u32 & 0xFFFF_F000) | if e.valid { VALID_BIT } else { 0 } | e.log2_size;
    let w1 = (e.physical_base as u32 & 0xFFFF_F000) | (e.physical_base >> 32) as u32;
    let w2 = e.permissions.bits() as u32;
    let w3 = cache_bits(e.cache_policy);
    let w4 = e.pid | if e.pid == 0 { GLOBAL_BIT } else { 0 };
    Ok(EncodedTlbEntry {
        words: [w0, w1, w2, w3, w4],
    })
}

pub fn decode_entry(w: &EncodedTlbEntry) -> Result<TlbEntry, DecodeError> {
    let [w0, w1, w2, w3, w4] = w.words;
    for (word, bits) in [
        (0, w0 & 0x7C0),
        (1, w1 & 0xFF0),
        (2, w2 & !0x3F),
        (3, w3 & !0xF),
        (4, w4 & !(GLOBAL_BIT | PID_MASK)),
    ] {
        if bits != 0 {
            return Err(DecodeError::Reserved { word, bits });
        }
    }
    let log2_size = w0 & 0x3F;
    if log2_size < 12 {
        return Err(DecodeError::TooSmall(log2_size));
    }
    let cache_policy = match w3 {
        0 => CachePolicy::Normal,
        1 => CachePolicy::IO,
        2 => CachePolicy::WriteThrough,
        3 => CachePolicy::Uncached,
        COHERENT_BIT => CachePolicy::NormalCoherent,
        other => return Err(DecodeError::Cache(other)),
    };
    let pid = w4 & PID_MASK;
    if (w4 & GLOBAL_BIT != 0) != (pid == 0) {
        return Err(DecodeError::Global(pid));
    }
    Ok(TlbEntry {
        virtual_base: (w0 & 0xFFFF_F000) as u64,
        physical_base: (w1 & 0xFFFF_F000) as u64 | ((w1 & 0xF) as u64) << 32,
        log2_size,
        permissions: Permissions::from_bits(w2 as u8),
        cache_policy,
        pid,
        valid: w0 & VALID_BIT != 0,
    })
}

/// Raw contents of an `MLTC` artifact: `(owner id, entry words)` per sequence.
pub type RawSequences = Vec<(u16, Vec<[u32; 5]>)>;

pub fn write_mltc(sequences: &[TlbSequence]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MLTC_MAGIC);
    out.extend_from_slice(&MLTC_VERSION.to_le_bytes());
    out.extend_from_slice(&(sequences.len() as u16).to_le_bytes());
    for s in sequences {
        out.extend_from_slice(&(s.pid as u16).to_le_bytes());
        out.extend_from_slice(&(s.encoded.len() as u16).to_le_bytes());
        for e in &s.encoded {
            for w in e.words {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    out
}

pub fn read_mltc(bytes: &[u8]) -> Result<RawSequences, FormatError> {
    let mut r = crate::bytes::Reader::new(bytes);
    let magic = r.take(4).ok_or(FormatError::Truncated(r.pos()))?;
    if magic != MLTC_MAGIC {
        return Err(FormatError::Magic);
    }
    let version = r.u16().ok_or(FormatError::Truncated(r.pos()))?;
    if version != MLTC_VERSION {
        return Err(FormatError::Version(version));
    }
    let count = r.u16().ok_or(FormatError::Truncated(r.pos()))?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = r.u16().ok_or(FormatError::Truncated(r.pos()))?;
        let n = r.u16().ok_or(FormatError::Truncated(r.pos()))?;
        let mut entries = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let mut words = [0u32; 5];
            for w in &mut words {
                *w = r.u32().ok_or(FormatError::Truncated(r.pos()))?;
            }
            entries.push(words);
        }
        out.push((id, entries));
    }
    if r.remaining() != 0 {
        return Err(FormatError::Trailing(r.remaining()));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u16,
    entry_budget: u32,
    sequences: Vec<ManifestSequence<'a>>,
}

#[derive(Serialize)]
struct ManifestSequence<'a> {
    space: &'a str,
    pid: u32,
    spare: u32,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    virtual_base: String,
    physical_base: String,
    size: String,
    perms: String,
    cache: String,
    pid: u32,
    global: bool,
    words: Vec<String>,
}

/// Human-auditable companion of the binary artifact.
pub fn manifest_json(sequences: &[TlbSequence], model: &TlbModel) -> String {
    let m = Manifest {
        format: "MLTC",
        version: MLTC_VERSION,
        entry_budget: model.entry_count,
        sequences: sequences
            .iter()
            .map(|s| ManifestSequence {
                space: s.space.name(),
                pid: s.pid,
                spare: model.entry_count.saturating_sub(s.entries.len() as u32),
                entries: s
                    .entries
                    .iter()
                    .zip(&s.encoded)
                    .map(|(e, w)| ManifestEntry {
                        virtual_base: hex(e.virtual_base),
                        physical_base: hex(e.physical_base),
                        size: hex(e.size()),
                        perms: e.permissions.to_string(),
                        cache: e.cache_policy.name().to_string(),
                        pid: e.pid,
                        global: e.is_global(),
                        words: w.words.iter().map(|x| format!("{x:#010x}")).collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&m).expect("manifest serializes")
}
