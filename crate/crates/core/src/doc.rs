//! Project documents: parsing the `memory_map` / `mmu` / `blocks[]` schema and
//! the canonical interchange form.
//!
//! Input documents may be TOML or JSON (detected by a leading `{`). Integers
//! are accepted as plain numbers or as strings with a `0x` prefix or a
//! `K`/`M`/`G` suffix. The canonical form is JSON with every address and size
//! written as a hex string, so consumers never round through doubles.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub file: String,
    pub line: Option<usize>,
    pub path: String,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}", self.file, line)?,
            None => f.write_str(&self.file)?,
        }
        if !self.path.is_empty() {
            write!(f, " ({})", self.path)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{location}: schema error: {message}")]
    Schema { location: Location, message: String },
    #[error("{location}: semantic error: {message}")]
    Semantic { location: Location, message: String },
}

/// A named document handed to [`parse_project`].
#[derive(Debug, Clone, Copy)]
pub struct SourceDoc<'a> {
    pub name: &'a str,
    pub text: &'a str,
}

impl<'a> SourceDoc<'a> {
    pub fn new(name: &'a str, text: &'a str) -> Self {
        SourceDoc { name, text }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Project {
    pub requirements: RequirementSet,
    pub memmap: SystemMemoryMap,
    pub mmu: MmuModel,
}

/// Integer field as written by humans: a number, or a string with hex
/// prefix or binary size suffix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Int(u64),
    Text(String),
}

impl Num {
    pub fn hex(value: u64) -> Num {
        Num::Text(hex(value))
    }

    pub fn value(&self) -> Result<u64, String> {
        match self {
            Num::Int(v) => Ok(*v),
            Num::Text(s) => parse_number(s),
        }
    }
}

pub fn hex(value: u64) -> String {
    format!("{value:#x}")
}

/// Parses `0x1000`, `4096`, `64K`, `1M`, `2G` (binary multiples). Underscores
/// are ignored.
pub fn parse_number(text: &str) -> Result<u64, String> {
    let cleaned: String = text.trim().chars().filter(|&c| c != '_').collect();
    let bad = || format!("invalid number `{text}`");
    if let Some(hex) = cleaned.strip_prefix("0x").or_else(|| cleaned.strip_prefix("0X")) {
        return u64::from_str_radix(hex, 16).map_err(|_| bad());
    }
    let (digits, shift) = match cleaned.chars().last() {
        Some('K') | Some('k') => (&cleaned[..cleaned.len() - 1], 10),
        Some('M') | Some('m') => (&cleaned[..cleaned.len() - 1], 20),
        Some('G') | Some('g') => (&cleaned[..cleaned.len() - 1], 30),
        _ => (cleaned.as_str(), 0),
    };
    let base: u64 = digits.parse().map_err(|_| bad())?;
    base.checked_mul(1u64 << shift).ok_or_else(bad)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawProject {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_map: Option<RawMemoryMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmu: Option<RawMmu>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<RawBlock>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawMemoryMap {
    pub min_page_size: Num,
    pub regions: Vec<RawRegion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawRegion {
    pub base: Num,
    pub size: Num,
    pub class: String,
    #[serde(default = "default_cost")]
    pub access_cost: u32,
}

fn default_cost() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub(crate) enum RawMmu {
    TlbFixed(RawTlbModel),
    PageTable(RawPageTableModel),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawTlbModel {
    pub entry_count: u32,
    pub min_entry_size: Num,
    pub max_entry_size: Num,
    #[serde(default = "default_assoc")]
    pub associativity: RawAssociativity,
    pub pid_bits: u32,
}

fn default_assoc() -> RawAssociativity {
    RawAssociativity::Fully("fully_associative".into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum RawAssociativity {
    Fully(String),
    Set {
        ways: u32,
        sets: u32,
        index_hook: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawPageTableModel {
    pub page_size: Num,
    pub levels: u32,
    pub index_bits: Vec<u32>,
    #[serde(default)]
    pub large_page_levels: Vec<u32>,
    pub tlb_capacity: u32,
    pub asid_bits: u32,
    #[serde(default = "yes")]
    pub has_global_bit: bool,
    #[serde(default)]
    pub zero_miss: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawBlock {
    pub owner: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtual_address: Option<Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical_address: Option<Num>,
    pub size: Num,
    pub perms: String,
    pub cache: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Num>,
    #[serde(default)]
    pub contiguous: bool,
    #[serde(default)]
    pub shared_with: Vec<String>,
}

struct DocCtx<'a> {
    doc: SourceDoc<'a>,
}

impl DocCtx<'_> {
    fn loc(&self, line: Option<usize>, path: impl Into<String>) -> Location {
        Location {
            file: self.doc.name.to_string(),
            line,
            path: path.into(),
        }
    }

    fn schema(&self, line: Option<usize>, path: impl Into<String>, message: impl Into<String>) -> ParseError {
        ParseError::Schema {
            location: self.loc(line, path),
            message: message.into(),
        }
    }

    fn semantic(&self, line: Option<usize>, path: impl Into<String>, message: impl Into<String>) -> ParseError {
        ParseError::Semantic {
            location: self.loc(line, path),
            message: message.into(),
        }
    }

    fn is_json(&self) -> bool {
        self.doc.text.trim_start().starts_with('{')
    }

    /// Line of the `index`-th `[[header]]` table in a TOML document.
    fn table_line(&self, header: &str, index: usize) -> Option<usize> {
        if self.is_json() {
            return None;
        }
        let wanted = format!("[[{header}]]");
        self.doc
            .text
            .lines()
            .enumerate()
            .filter(|(_, l)| l.trim() == wanted)
            .nth(index)
            .map(|(i, _)| i + 1)
    }

    fn line_of_offset(&self, offset: usize) -> usize {
        self.doc.text[..offset.min(self.doc.text.len())]
            .bytes()
            .filter(|&b| b == b'\n')
            .count()
            + 1
    }

    fn parse_raw(&self) -> Result<RawProject, ParseError> {
        if self.is_json() {
            serde_json::from_str(self.doc.text)
                .map_err(|e| self.schema(Some(e.line()), "", e.to_string()))
        } else {
            toml::from_str(self.doc.text).map_err(|e| {
                let line = e.span().map(|s| self.line_of_offset(s.start));
                self.schema(line, "", e.message().to_string())
            })
        }
    }

    fn num(&self, n: &Num, line: Option<usize>, path: &str) -> Result<u64, ParseError> {
        n.value().map_err(|m| self.schema(line, path, m))
    }
}

/// Parses the three project documents. The same document may be passed for
/// all three; each contributes only its own sections.
pub fn parse_project(
    requirements: SourceDoc<'_>,
    memmap: SourceDoc<'_>,
    mmu: SourceDoc<'_>,
) -> Result<Project, ParseError> {
    let req_ctx = DocCtx { doc: requirements };
    let map_ctx = DocCtx { doc: memmap };
    let mmu_ctx = DocCtx { doc: mmu };

    let raw_map = map_ctx
        .parse_raw()?
        .memory_map
        .ok_or_else(|| map_ctx.schema(None, "memory_map", "missing `memory_map` section"))?;
    let memmap = convert_memmap(&map_ctx, &raw_map)?;

    let raw_mmu = mmu_ctx
        .parse_raw()?
        .mmu
        .ok_or_else(|| mmu_ctx.schema(None, "mmu", "missing `mmu` section"))?;
    let mmu = convert_mmu(&mmu_ctx, &raw_mmu)?;

    let raw_req = req_ctx.parse_raw()?;
    if raw_req.blocks.is_none() && raw_req.partitions.is_none() {
        return Err(req_ctx.schema(None, "blocks", "missing `blocks` section"));
    }
    let requirements = convert_requirements(&req_ctx, &raw_req)?;

    Ok(Project {
        requirements,
        memmap,
        mmu,
    })
}

/// Parses a single document holding all three sections.
pub fn parse_project_str(name: &str, text: &str) -> Result<Project, ParseError> {
    let doc = SourceDoc::new(name, text);
    parse_project(doc, doc, doc)
}

fn convert_memmap(ctx: &DocCtx<'_>, raw: &RawMemoryMap) -> Result<SystemMemoryMap, ParseError> {
    let min_page_size = ctx.num(&raw.min_page_size, None, "memory_map.min_page_size")?;
    if !min_page_size.is_power_of_two() || min_page_size < 1024 {
        return Err(ctx.semantic(
            None,
            "memory_map.min_page_size",
            format!("min_page_size {min_page_size:#x} must be a power of two >= 1 KiB"),
        ));
    }
    if raw.regions.is_empty() {
        return Err(ctx.semantic(None, "memory_map.regions", "memory map has no regions"));
    }
    let mut regions = Vec::with_capacity(raw.regions.len());
    for (i, r) in raw.regions.iter().enumerate() {
        let line = ctx.table_line("memory_map.regions", i);
        let path = format!("memory_map.regions[{i}]");
        let base = ctx.num(&r.base, line, &path)?;
        let size = ctx.num(&r.size, line, &path)?;
        let class = RegionClass::parse(&r.class).map_err(|m| ctx.schema(line, &path, m))?;
        if size == 0 {
            return Err(ctx.semantic(line, &path, "region size must be positive"));
        }
        if base.checked_add(size - 1).is_none() {
            return Err(ctx.semantic(line, &path, "region wraps the address space"));
        }
        if r.access_cost == 0 {
            return Err(ctx.semantic(line, &path, "access_cost must be positive"));
        }
        regions.push(PhysicalRegion {
            base,
            size,
            class,
            access_cost: r.access_cost,
        });
    }
    for i in 0..regions.len() {
        for j in 0..i {
            let (a, b) = (&regions[i], &regions[j]);
            if (a.base as u128) < b.end() && (b.base as u128) < a.end() {
                return Err(ctx.semantic(
                    ctx.table_line("memory_map.regions", i),
                    format!("memory_map.regions[{i}]"),
                    format!(
                        "region [{:#x}, {:#x}) overlaps region [{:#x}, {:#x})",
                        a.base,
                        a.end(),
                        b.base,
                        b.end()
                    ),
                ));
            }
        }
    }
    Ok(SystemMemoryMap {
        regions,
        min_page_size,
    })
}

fn convert_mmu(ctx: &DocCtx<'_>, raw: &RawMmu) -> Result<MmuModel, ParseError> {
    let model = match raw {
        RawMmu::TlbFixed(t) => {
            let associativity = match &t.associativity {
                RawAssociativity::Fully(s) if s == "fully_associative" => Associativity::FullyAssociative,
                RawAssociativity::Fully(s) => {
                    return Err(ctx.schema(None, "mmu.associativity", format!("unknown associativity `{s}`")))
                }
                RawAssociativity::Set { ways, sets, index_hook } => Associativity::SetAssociative {
                    ways: *ways,
                    sets: *sets,
                    index_hook: index_hook.clone(),
                },
            };
            MmuModel::TlbFixed(TlbModel {
                entry_count: t.entry_count,
                min_entry_size: ctx.num(&t.min_entry_size, None, "mmu.min_entry_size")?,
                max_entry_size: ctx.num(&t.max_entry_size, None, "mmu.max_entry_size")?,
                associativity,
                pid_bits: t.pid_bits,
            })
        }
        RawMmu::PageTable(p) => {
            let mut large = p.large_page_levels.clone();
            large.sort_unstable();
            large.dedup();
            MmuModel::PageTable(PageTableModel {
                geometry: PageTableGeometry {
                    page_size: ctx.num(&p.page_size, None, "mmu.page_size")?,
                    levels: p.levels,
                    index_bits_per_level: p.index_bits.clone(),
                    large_page_levels: large,
                },
                tlb_capacity: p.tlb_capacity,
                asid_bits: p.asid_bits,
                has_global_bit: p.has_global_bit,
                zero_miss: p.zero_miss,
            })
        }
    };
    model.check().map_err(|m| ctx.semantic(None, "mmu", m))?;
    Ok(model)
}

fn convert_requirements(ctx: &DocCtx<'_>, raw: &RawProject) -> Result<RequirementSet, ParseError> {
    let raw_blocks = raw.blocks.clone().unwrap_or_default();
    let partitions = match &raw.partitions {
        Some(list) => list.clone(),
        None => {
            let mut seen = Vec::new();
            for b in &raw_blocks {
                if b.owner != Owner::KERNEL_NAME && !seen.contains(&b.owner) {
                    seen.push(b.owner.clone());
                }
            }
            seen
        }
    };
    let mut names = HashSet::new();
    for p in &partitions {
        if !is_valid_partition_name(p) {
            return Err(ctx.semantic(None, "partitions", format!("invalid partition name `{p}`")));
        }
        if !names.insert(p.as_str()) {
            return Err(ctx.semantic(None, "partitions", format!("duplicate partition `{p}`")));
        }
    }

    let mut blocks = Vec::with_capacity(raw_blocks.len());
    let mut ids = HashSet::new();
    for (i, b) in raw_blocks.iter().enumerate() {
        let line = ctx.table_line("blocks", i);
        let path = format!("blocks[{i}]");
        if b.owner != Owner::KERNEL_NAME && !is_valid_partition_name(&b.owner) {
            return Err(ctx.semantic(line, &path, format!("invalid owner name `{}`", b.owner)));
        }
        if b.name.is_empty() || b.name.chars().any(char::is_whitespace) {
            return Err(ctx.semantic(line, &path, format!("invalid block name `{}`", b.name)));
        }
        let opt = |n: &Option<Num>| -> Result<Option<u64>, ParseError> {
            n.as_ref().map(|n| ctx.num(n, line, &path)).transpose()
        };
        let req = MemoryBlockRequirement {
            owner: Owner::from_name(&b.owner),
            logical_name: b.name.clone(),
            virtual_address: opt(&b.virtual_address)?,
            physical_address: opt(&b.physical_address)?,
            size: ctx.num(&b.size, line, &path)?,
            permissions: Permissions::parse(&b.perms).map_err(|m| ctx.schema(line, &path, m))?,
            cache_policy: CachePolicy::parse(&b.cache).map_err(|m| ctx.schema(line, &path, m))?,
            alignment: opt(&b.alignment)?,
            physically_contiguous: b.contiguous,
            shared_with: b.shared_with.iter().map(|s| Owner::from_name(s)).collect(),
        };
        if !ids.insert(req.id()) {
            return Err(ctx.semantic(
                line,
                &path,
                format!("duplicate block `{}` for owner `{}`", b.name, b.owner),
            ));
        }
        blocks.push(req);
    }
    Ok(RequirementSet { partitions, blocks })
}

pub(crate) fn raw_memmap(map: &SystemMemoryMap) -> RawMemoryMap {
    RawMemoryMap {
        min_page_size: Num::hex(map.min_page_size),
        regions: map
            .regions
            .iter()
            .map(|r| RawRegion {
                base: Num::hex(r.base),
                size: Num::hex(r.size),
                class: r.class.name().to_string(),
                access_cost: r.access_cost,
            })
            .collect(),
    }
}

pub(crate) fn raw_mmu(mmu: &MmuModel) -> RawMmu {
    match mmu {
        MmuModel::TlbFixed(t) => RawMmu::TlbFixed(RawTlbModel {
            entry_count: t.entry_count,
            min_entry_size: Num::hex(t.min_entry_size),
            max_entry_size: Num::hex(t.max_entry_size),
            associativity: match &t.associativity {
                Associativity::FullyAssociative => default_assoc(),
                Associativity::SetAssociative { ways, sets, index_hook } => RawAssociativity::Set {
                    ways: *ways,
                    sets: *sets,
                    index_hook: index_hook.clone(),
                },
            },
            pid_bits: t.pid_bits,
        }),
        MmuModel::PageTable(p) => RawMmu::PageTable(RawPageTableModel {
            page_size: Num::hex(p.geometry.page_size),
            levels: p.geometry.levels,
            index_bits: p.geometry.index_bits_per_level.clone(),
            large_page_levels: p.geometry.large_page_levels.clone(),
            tlb_capacity: p.tlb_capacity,
            asid_bits: p.asid_bits,
            has_global_bit: p.has_global_bit,
            zero_miss: p.zero_miss,
        }),
    }
}

pub(crate) fn raw_block(b: &MemoryBlockRequirement) -> RawBlock {
    RawBlock {
        owner: b.owner.name().to_string(),
        name: b.logical_name.clone(),
        virtual_address: b.virtual_address.map(Num::hex),
        physical_address: b.physical_address.map(Num::hex),
        size: Num::hex(b.size),
        perms: b.permissions.to_string(),
        cache: b.cache_policy.name().to_string(),
        alignment: b.alignment.map(Num::hex),
        contiguous: b.physically_contiguous,
        shared_with: b.shared_with.iter().map(|o| o.name().to_string()).collect(),
    }
}

/// Canonical interchange form of a whole project.
pub fn serialize_project(project: &Project) -> String {
    let raw = RawProject {
        memory_map: Some(raw_memmap(&project.memmap)),
        mmu: Some(raw_mmu(&project.mmu)),
        partitions: Some(project.requirements.partitions.clone()),
        blocks: Some(project.requirements.blocks.iter().map(raw_block).collect()),
    };
    serde_json::to_string_pretty(&raw).expect("project serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[memory_map]
min_page_size = "4K"

[[memory_map.regions]]
base = "0x0"
size = "1M"
class = "external_ram"

[mmu]
kind = "tlb_fixed"
entry_count = 16
min_entry_size = "4K"
max_entry_size = "256M"
pid_bits = 8

[[blocks]]
owner = "kernel"
name = "code"
size = "64K"
perms = "KR|KX"
cache = "normal"
"#;

    #[test]
    fn numbers_accept_hex_and_suffixes() {
        assert_eq!(parse_number("0x1000").unwrap(), 0x1000);
        assert_eq!(parse_number("64K").unwrap(), 65536);
        assert_eq!(parse_number("1M").unwrap(), 1 << 20);
        assert_eq!(parse_number("0x1000_0000").unwrap(), 0x1000_0000);
        assert_eq!(parse_number("12").unwrap(), 12);
        assert!(parse_number("12Q").is_err());
        assert!(parse_number("99999999999999999999G").is_err());
    }

    #[test]
    fn minimal_project_parses() {
        let p = parse_project_str("minimal.toml", MINIMAL).unwrap();
        assert_eq!(p.requirements.blocks.len(), 1);
        assert_eq!(p.memmap.regions.len(), 1);
        assert!(p.requirements.partitions.is_empty());
        let b = &p.requirements.blocks[0];
        assert_eq!(b.size, 64 * 1024);
        assert_eq!(b.permissions, Permissions::parse("KR|KX").unwrap());
    }

    #[test]
    fn same_block_name_in_two_partitions() {
        let text = format!(
            "{MINIMAL}\n[[blocks]]\nowner = \"P1\"\nname = \"heap\"\nsize = \"4K\"\nperms = \"UR|UW|KR|KW\"\ncache = \"normal\"\n\
             \n[[blocks]]\nowner = \"P2\"\nname = \"heap\"\nsize = \"4K\"\nperms = \"UR|UW|KR|KW\"\ncache = \"normal\"\n"
        );
        let p = parse_project_str("two.toml", &text).unwrap();
        assert_eq!(p.requirements.partitions, vec!["P1", "P2"]);
        assert_eq!(p.requirements.blocks.len(), 3);
    }

    #[test]
    fn duplicate_block_reports_line() {
        let text = format!(
            "{MINIMAL}\n[[blocks]]\nowner = \"kernel\"\nname = \"code\"\nsize = \"4K\"\nperms = \"KR\"\ncache = \"normal\"\n"
        );
        match parse_project_str("dup.toml", &text) {
            Err(ParseError::Semantic { location, .. }) => {
                let expected = text.lines().enumerate().filter(|(_, l)| l.trim() == "[[blocks]]").nth(1).unwrap().0 + 1;
                assert_eq!(location.line, Some(expected));
            }
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_regions_rejected() {
        let text = MINIMAL.replace(
            "class = \"external_ram\"\n",
            "class = \"external_ram\"\n\n[[memory_map.regions]]\nbase = \"0x8000\"\nsize = \"0x10000\"\nclass = \"external_ram\"\n",
        )
        .replace("size = \"1M\"", "size = \"0x10000\"");
        let err = parse_project_str("overlap.toml", &text).unwrap_err();
        assert!(matches!(err, ParseError::Semantic { .. }), "{err}");
        assert!(err.to_string().contains("overlaps"));
    }

    #[test]
    fn unknown_field_is_schema_error_with_line() {
        let text = MINIMAL.replace("cache = \"normal\"", "cache = \"normal\"\ncolour = \"red\"");
        match parse_project_str("unknown.toml", &text).unwrap_err() {
            ParseError::Schema { location, message } => {
                assert!(message.contains("colour"), "{message}");
                assert!(location.line.is_some());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_type_is_schema_error() {
        let text = MINIMAL.replace("entry_count = 16", "entry_count = \"many\"");
        assert!(matches!(
            parse_project_str("t.toml", &text),
            Err(ParseError::Schema { .. })
        ));
    }

    #[test]
    fn canonical_form_round_trips() {
        let p = parse_project_str("minimal.toml", MINIMAL).unwrap();
        let text = serialize_project(&p);
        assert!(text.contains("\"0x10000\""));
        assert_eq!(parse_project_str("canonical.json", &text).unwrap(), p);
    }

    #[test]
    fn separate_documents() {
        let map = "[memory_map]\nmin_page_size = 4096\n[[memory_map.regions]]\nbase = 0\nsize = \"1M\"\nclass = \"ram\"\n";
        let mmu = "[mmu]\nkind = \"page_table\"\npage_size = \"4K\"\nlevels = 4\nindex_bits = [9, 9, 9, 9]\nlarge_page_levels = [2, 3]\ntlb_capacity = 512\nasid_bits = 16\n";
        let req = "partitions = [\"P1\"]\n";
        let p = parse_project(
            SourceDoc::new("req.toml", req),
            SourceDoc::new("map.toml", map),
            SourceDoc::new("mmu.toml", mmu),
        )
        .unwrap();
        assert_eq!(p.requirements.partitions, vec!["P1"]);
        assert!(matches!(p.mmu, MmuModel::PageTable(ref m) if m.has_global_bit && !m.zero_miss));
        let err = parse_project(
            SourceDoc::new("req.toml", req),
            SourceDoc::new("mmu.toml", mmu),
            SourceDoc::new("mmu.toml", mmu),
        )
        .unwrap_err();
        assert!(err.to_string().contains("mmu.toml"));
    }
}
