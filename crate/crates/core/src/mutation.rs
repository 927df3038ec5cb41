//! Single-bit mutation harness for MMU configuration artifacts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamic::{build_matrix, run_matrix, AccessMatrix, SimAgent};
use crate::layout::MemoryLayout;
use crate::model::{Addr, PageTableGeometry};
use crate::pagetable::{self, DESC_GLOBAL, DESC_TABLE, DESC_VALID, PERM_SHIFT};
use crate::sim::{load, CostModel, SimMode};
use crate::tlb::{self, FormatError, GLOBAL_BIT, VALID_BIT};
use crate::verify::{verify_mmu_config, ArtifactError};

/// How a flipped bit can be observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Observability {
    /// Changes which addresses translate, where, or with which rights.
    Access,
    /// Changes attributes only the artifact reveals (cache policy, sharing tags).
    StaticOnly,
    /// Alters table structure while every space keeps the same mappings,
    /// e.g. a pointer redirected to an identical subtree of another space.
    Equivalent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MutationSite {
    pub offset: usize,
    pub bit: u8,
    pub field: String,
    pub observability: Observability,
}

#[derive(Debug, thiserror::Error)]
pub enum MutationError {
    #[error("{0}")]
    Format(#[from] FormatError),
    #[error("{0}")]
    Artifact(#[from] ArtifactError),
    #[error("unknown artifact magic")]
    UnknownFormat,
    #[error("the unmutated configuration does not pass: {0}")]
    Baseline(String),
}

pub fn flip(artifact: &[u8], site: &MutationSite) -> Vec<u8> {
    let mut out = artifact.to_vec();
    out[site.offset] ^= 1 << site.bit;
    out
}

fn word_site(sites: &mut Vec<MutationSite>, at: usize, width: usize, bit: u32, field: String, obs: Observability) {
    debug_assert!((bit as usize) < width * 8);
    sites.push(MutationSite {
        offset: at + bit as usize / 8,
        bit: (bit % 8) as u8,
        field,
        observability: obs,
    });
}

fn tlb_sites(artifact: &[u8]) -> Result<Vec<MutationSite>, MutationError> {
    use Observability::*;
    let seqs = tlb::read_mltc(artifact)?;
    let mut sites = Vec::new();
    let mut pos = 8;
    for (pid, entries) in &seqs {
        pos += 4;
        for (i, w) in entries.iter().enumerate() {
            let word = |k: usize| pos + 20 * i + 4 * k;
            let name = |what: &str| format!("seq {pid} entry {i} {what}");
            let log2 = w[0] & 0x3F;
            let global = w[4] & GLOBAL_BIT != 0;
            word_site(&mut sites, word(0), 4, VALID_BIT.trailing_zeros(), name("valid"), Access);
            if w[0] & VALID_BIT == 0 {
                continue;
            }
            for b in log2.max(12)..32 {
                word_site(&mut sites, word(0), 4, b, name(&format!("vaddr bit {b}")), Access);
            }
            for b in 0..6 {
                word_site(&mut sites, word(0), 4, b, name(&format!("size bit {b}")), Access);
            }
            for b in log2.max(12)..36 {
                let bit = if b < 32 { b } else { b - 32 };
                word_site(&mut sites, word(1), 4, bit, name(&format!("paddr bit {b}")), Access);
            }
            for b in 0..6 {
                word_site(&mut sites, word(2), 4, b, name(&format!("permission bit {b}")), Access);
            }
            for b in 0..4 {
                word_site(&mut sites, word(3), 4, b, name(&format!("cache bit {b}")), StaticOnly);
            }
            // A global entry matches in every space, so its pid is never consulted.
            let pid_obs = if global { StaticOnly } else { Access };
            for b in 0..14 {
                word_site(&mut sites, word(4), 4, b, name(&format!("pid bit {b}")), pid_obs);
            }
            let global_obs = if global { Access } else { StaticOnly };
            word_site(&mut sites, word(4), 4, 31, name("global"), global_obs);
        }
        pos += 20 * entries.len();
    }
    Ok(sites)
}

fn pt_sites(artifact: &[u8]) -> Result<Vec<MutationSite>, MutationError> {
    use Observability::*;
    let raw = pagetable::read_mlpt(artifact)?;
    let g = &raw.geometry;
    let mut sites = Vec::new();
    let mut pos = 20 + g.levels as usize;
    for space in &raw.spaces {
        pos += 26;
        let image = pos;
        let mut stack = vec![(space.root_offset, 1u32)];
        while let Some((table, level)) = stack.pop() {
            for i in 0..g.entries_at(level) as u64 {
                let rel = (table + 8 * i) as usize;
                let desc = u64::from_le_bytes(space.bytes[rel..rel + 8].try_into().expect("8 bytes"));
                if desc & DESC_VALID == 0 {
                    continue;
                }
                let at = image + rel;
                let name = |what: &str| format!("asid {} level {level} index {i} {what}", space.asid);
                word_site(&mut sites, at, 8, 0, name("valid"), Access);
                word_site(&mut sites, at, 8, 1, name("table"), Access);
                if desc & DESC_TABLE != 0 {
                    for b in 12..48 {
                        word_site(&mut sites, at, 8, b, name(&format!("next-table bit {b}")), Access);
                    }
                    let next = (desc & pagetable::ADDR_MASK) - space.base_physical;
                    stack.push((next, level + 1));
                } else {
                    for b in g.level_shift(level)..48 {
                        word_site(&mut sites, at, 8, b, name(&format!("output bit {b}")), Access);
                    }
                    for b in 0..6 {
                        word_site(&mut sites, at, 8, PERM_SHIFT + b, name(&format!("permission bit {b}")), Access);
                    }
                    for b in 60..63 {
                        word_site(&mut sites, at, 8, b, name(&format!("cache bit {}", b - 60)), StaticOnly);
                    }
                    let global_at = DESC_GLOBAL.trailing_zeros();
                    word_site(&mut sites, at, 8, global_at, name("global"), StaticOnly);
                }
            }
        }
        pos += space.bytes.len() + 4 + 8 * space.warmup.len();
    }
    Ok(sites)
}

type Mapping = (Addr, Addr, u64, u8);

/// Mappings a hardware walker reaches from each space's root, reading any
/// image's memory and zero elsewhere.
fn reachable_mappings(raw: &pagetable::RawPageTables) -> Vec<Vec<Mapping>> {
    let g = &raw.geometry;
    let read = |addr: Addr| -> u64 {
        raw.spaces
            .iter()
            .find_map(|s| {
                let off = addr.checked_sub(s.base_physical)? as usize;
                let b = s.bytes.get(off..off.checked_add(8)?)?;
                Some(u64::from_le_bytes(b.try_into().expect("8 bytes")))
            })
            .unwrap_or(0)
    };
    fn walk(g: &PageTableGeometry, read: &dyn Fn(Addr) -> u64, table: Addr, level: u32, prefix: Addr, out: &mut Vec<Mapping>) {
        for i in 0..g.entries_at(level) as u64 {
            let d = read(table.wrapping_add(8 * i));
            if d & DESC_VALID == 0 {
                continue;
            }
            let va = prefix | i << g.level_shift(level);
            let addr = d & pagetable::ADDR_MASK;
            if d & DESC_TABLE != 0 {
                if level < g.levels {
                    walk(g, read, addr, level + 1, va, out);
                }
            } else if g.leaf_allowed(level) {
                let size = g.leaf_size(level);
                out.push((va, addr & !(size - 1), size, ((d >> PERM_SHIFT) & 0x3F) as u8));
            }
        }
    }
    raw.spaces
        .iter()
        .map(|s| {
            let mut out = Vec::new();
            walk(g, &read, s.base_physical.wrapping_add(s.root_offset), 1, 0, &mut out);
            out
        })
        .collect()
}

fn translation_preserved(original: &[u8], mutated: &[u8]) -> bool {
    match (pagetable::read_mlpt(original), pagetable::read_mlpt(mutated)) {
        (Ok(a), Ok(b)) => a.spaces.iter().map(|s| s.asid).eq(b.spaces.iter().map(|s| s.asid)) && reachable_mappings(&a) == reachable_mappings(&b),
        _ => false,
    }
}

/// Every bit position whose flip changes the configured mappings.
pub fn meaningful_sites(artifact: &[u8]) -> Result<Vec<MutationSite>, MutationError> {
    match artifact.get(..4) {
        Some(m) if m == tlb::MLTC_MAGIC => tlb_sites(artifact),
        Some(m) if m == pagetable::MLPT_MAGIC => pt_sites(artifact),
        _ => Err(MutationError::UnknownFormat),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MutationOutcome {
    pub site: MutationSite,
    pub static_detected: bool,
    /// `None` for static-only sites.
    pub dynamic_detected: Option<bool>,
}

impl MutationOutcome {
    pub fn detected(&self) -> bool {
        self.static_detected && self.dynamic_detected.unwrap_or(true)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MutationReport {
    pub sites_total: usize,
    pub sites_tested: usize,
    pub static_detected: usize,
    pub dynamic_tested: usize,
    pub dynamic_detected: usize,
    /// Structure-only flips that leave every translation unchanged.
    pub equivalent: usize,
    pub missed: Vec<MutationOutcome>,
}

impl MutationReport {
    pub fn complete(&self) -> bool {
        self.missed.is_empty()
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for m in &self.missed {
            s.push_str(&format!(
                "UNDETECTED {} (byte {:#x} bit {}): static {}, dynamic {}\n",
                m.site.field,
                m.site.offset,
                m.site.bit,
                if m.static_detected { "detected" } else { "missed" },
                match m.dynamic_detected {
                    Some(true) => "detected",
                    Some(false) => "missed",
                    None => "n/a",
                }
            ));
        }
        s.push_str(&format!(
            "mutations: {} of {} sites tested, static {}/{}, dynamic {}/{}, {} translation-equivalent\n",
            self.sites_tested,
            self.sites_total,
            self.static_detected,
            self.sites_tested,
            self.dynamic_detected,
            self.dynamic_tested,
            self.equivalent
        ));
        s
    }
}

fn statically_detected(artifact: &[u8], layout: &MemoryLayout) -> bool {
    match verify_mmu_config(artifact, layout) {
        Ok(r) => !r.passed,
        Err(_) => true,
    }
}

// Each space starts from a cold TLB so that global entries cached from one
// space's tables cannot mask a corrupted copy in another.
fn dynamically_detected(artifact: &[u8], layout: &MemoryLayout, per_space: &[AccessMatrix]) -> bool {
    per_space.iter().any(|m| match load(artifact, layout, SimMode::Static, CostModel::default()) {
        Ok(mmu) => !run_matrix(m, &mut SimAgent::new(mmu)).passed,
        Err(_) => true,
    })
}

/// Flips each meaningful bit (or `limit` of them, sampled with `seed`) and
/// checks both verification paths.
pub fn run_harness(layout: &MemoryLayout, artifact: &[u8], limit: Option<usize>, seed: u64) -> Result<MutationReport, MutationError> {
    let matrix = build_matrix(layout).per_space();
    let baseline = verify_mmu_config(artifact, layout)?;
    if !baseline.passed {
        return Err(MutationError::Baseline(baseline.render_text()));
    }
    if dynamically_detected(artifact, layout, &matrix) {
        return Err(MutationError::Baseline("the access matrix fails on the unmutated configuration".into()));
    }
    let mut sites = meaningful_sites(artifact)?;
    let mut report = MutationReport {
        sites_total: sites.len(),
        ..Default::default()
    };
    if let Some(n) = limit.filter(|&n| n < sites.len()) {
        sites.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        sites.truncate(n);
        sites.sort_by_key(|s| (s.offset, s.bit));
    }
    let page_tables = artifact.starts_with(pagetable::MLPT_MAGIC);
    for mut site in sites {
        let mutated = flip(artifact, &site);
        if page_tables && site.observability == Observability::Access && translation_preserved(artifact, &mutated) {
            site.observability = Observability::Equivalent;
            report.equivalent += 1;
        }
        let static_detected = statically_detected(&mutated, layout);
        let dynamic_detected = (site.observability == Observability::Access).then(|| dynamically_detected(&mutated, layout, &matrix));
        report.sites_tested += 1;
        report.static_detected += static_detected as usize;
        if let Some(d) = dynamic_detected {
            report.dynamic_tested += 1;
            report.dynamic_detected += d as usize;
        }
        let outcome = MutationOutcome {
            site,
            static_detected,
            dynamic_detected,
        };
        if !outcome.detected() {
            report.missed.push(outcome);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::plan_layout;
    use crate::model::*;

    fn project(mmu: MmuModel) -> MemoryLayout {
        let reqs = RequirementSet {
            partitions: vec!["P1".into(), "P2".into()],
            blocks: vec![
                MemoryBlockRequirement::new(Owner::Kernel, "text", 0x2000, Permissions::parse("KR|KX").unwrap(), CachePolicy::Normal),
                MemoryBlockRequirement::new(Owner::partition("P1"), "data", 0x5000, Permissions::parse("UR|UW|KR|KW").unwrap(), CachePolicy::Normal),
                MemoryBlockRequirement::new(Owner::partition("P2"), "code", 0x1000, Permissions::parse("UR|UX|KR").unwrap(), CachePolicy::Normal),
            ],
        };
        let map = SystemMemoryMap {
            regions: vec![
                PhysicalRegion {
                    base: 0x1000_0000,
                    size: 0x10_0000,
                    class: RegionClass::InternalRam,
                    access_cost: 4,
                },
                PhysicalRegion {
                    base: 0x8000_0000,
                    size: 0x100_0000,
                    class: RegionClass::ExternalRam,
                    access_cost: 20,
                },
            ],
            min_page_size: 4096,
        };
        plan_layout(&reqs, &map, &mmu).unwrap()
    }

    fn tlb_model() -> MmuModel {
        MmuModel::TlbFixed(TlbModel {
            entry_count: 16,
            min_entry_size: 4096,
            max_entry_size: 1 << 24,
            associativity: Associativity::FullyAssociative,
            pid_bits: 8,
        })
    }

    fn pt_model() -> MmuModel {
        MmuModel::PageTable(PageTableModel {
            geometry: PageTableGeometry::default_4k(),
            tlb_capacity: 64,
            asid_bits: 8,
            has_global_bit: true,
            zero_miss: false,
        })
    }

    #[test]
    fn tlb_sites_cover_permission_word() {
        let l = project(tlb_model());
        let bytes = tlb::write_mltc(&tlb::build_sequences(&l).unwrap());
        let sites = meaningful_sites(&bytes).unwrap();
        assert!(sites.iter().any(|s| s.field.ends_with("permission bit 4")));
        assert!(sites.iter().all(|s| s.offset >= 8 && s.offset < bytes.len()));
    }

    #[test]
    fn every_tlb_mutation_detected() {
        let l = project(tlb_model());
        let bytes = tlb::write_mltc(&tlb::build_sequences(&l).unwrap());
        let r = run_harness(&l, &bytes, None, 1).unwrap();
        assert!(r.complete(), "{}", r.render_text());
        assert!(r.dynamic_tested > 0);
    }

    #[test]
    fn every_page_table_mutation_detected() {
        let l = project(pt_model());
        let bytes = pagetable::write_mlpt(&pagetable::build_config(&l).unwrap());
        let r = run_harness(&l, &bytes, None, 1).unwrap();
        assert!(r.complete(), "{}", r.render_text());
        assert!(r.sites_total > 100);
    }

    #[test]
    fn pointer_to_identical_subtree_is_equivalent() {
        let mut l = project(pt_model());
        // Give P2 exactly P1's view so their trees coincide.
        let p1 = l.plans[1].blocks.clone();
        l.plans[2].blocks = p1;
        let cfg = pagetable::build_config(&l).unwrap();
        let bytes = pagetable::write_mlpt(&cfg);
        let raw = pagetable::read_mlpt(&bytes).unwrap();
        let (a, b) = (&raw.spaces[0], &raw.spaces[1]);
        let root = |s: &pagetable::RawSpace| u64::from_le_bytes(s.bytes[s.root_offset as usize..][..8].try_into().unwrap());
        let target = (root(a) & pagetable::ADDR_MASK) - a.base_physical + b.base_physical;
        let diff = (root(a) & pagetable::ADDR_MASK) ^ target;
        let mut mutated = bytes.clone();
        let at = 20 + raw.geometry.levels as usize + 26 + a.root_offset as usize;
        mutated[at..at + 8].copy_from_slice(&(root(a) ^ diff).to_le_bytes());
        assert!(translation_preserved(&bytes, &mutated));
        assert!(!translation_preserved(&bytes, &flip(&bytes, &MutationSite { offset: at + 1, bit: 4, field: String::new(), observability: Observability::Access })));
    }

    #[test]
    fn sampling_is_seeded() {
        let l = project(tlb_model());
        let bytes = tlb::write_mltc(&tlb::build_sequences(&l).unwrap());
        let a = run_harness(&l, &bytes, Some(10), 7).unwrap();
        assert_eq!(a.sites_tested, 10);
        assert_eq!(a, run_harness(&l, &bytes, Some(10), 7).unwrap());
    }

    #[test]
    fn broken_baseline_rejected() {
        let l = project(tlb_model());
        let mut bytes = tlb::write_mltc(&tlb::build_sequences(&l).unwrap());
        let sites = meaningful_sites(&bytes).unwrap();
        bytes = flip(&bytes, &sites[3]);
        assert!(matches!(run_harness(&l, &bytes, None, 1), Err(MutationError::Baseline(_))));
    }
}
