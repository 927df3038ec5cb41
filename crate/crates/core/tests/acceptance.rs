//! Acceptance criteria 1 to 8. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use memlayout::dynamic::{build_matrix, run_matrix, SimAgent};
use memlayout::layout::MemoryLayout;
use memlayout::mutation::run_harness;
use memlayout::pagetable::{self, decode_page_tables, zero_miss_budget};
use memlayout::sim::{self, compare_static_vs_naive, replay, AccessRequest, CostModel, SimMode, TraceRecord, WalkCosts};
use memlayout::synth::{self, random_feasible_project, SynthOptions};
use memlayout::tlb::{self, TlbEntry};
use memlayout::verify::{verify_layout, verify_mmu_config};
use memlayout::*;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn project_file(name: &str) -> doc::Project {
    let path = format!("{}/../../projects/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    doc::parse_project_str(name, &text).unwrap_or_else(|e| panic!("{e}"))
}

fn artifact(layout: &MemoryLayout) -> Result<Vec<u8>, String> {
    match &layout.mmu {
        MmuModel::TlbFixed(_) => tlb::build_sequences(layout).map(|s| tlb::write_mltc(&s)).map_err(|e| e.to_string()),
        MmuModel::PageTable(_) => pagetable::build_config(layout).map(|c| pagetable::write_mlpt(&c)).map_err(|e| e.to_string()),
    }
}

/// First (op, privilege) the permissions allow.
fn allowed(perms: Permissions) -> (AccessOp, Privilege) {
    for op in AccessOp::ALL {
        for privilege in Privilege::ALL {
            if perms.allows(op, privilege) {
                return (op, privilege);
            }
        }
    }
    panic!("block with no permissions")
}

fn access(space: &Owner, vaddr: Addr, perms: Permissions) -> TraceRecord {
    let (op, privilege) = allowed(perms);
    TraceRecord::Access(AccessRequest {
        space: space.clone(),
        vaddr,
        size: 4,
        op,
        privilege,
    })
}

// Criterion 1 ---------------------------------------------------------------

fn p1010_budget() -> Outcome {
    let p = project_file("p1010.toml");
    let layout = plan_layout(&p.requirements, &p.memmap, &p.mmu).map_err(|e| e.to_string())?;
    let seqs = tlb::build_sequences(&layout).map_err(|e| e.to_string())?;
    let MmuModel::TlbFixed(t) = &p.mmu else { return Err("not a TLB model".into()) };
    ensure(seqs.len() == 1, || format!("{} sequences", seqs.len()))?;
    let used = seqs[0].entries.len() as u32;
    let spare = t.entry_count - used;
    ensure(used == 4 && spare == 12, || format!("{used} used, {spare} spare"))?;
    Ok(format!("{used} entries used, {spare} spare of {}", t.entry_count))
}

// Criterion 2 ---------------------------------------------------------------

fn random_entry<R: Rng>(rng: &mut R) -> TlbEntry {
    let log2 = rng.gen_range(12..=31);
    let mask = !((1u64 << log2) - 1);
    let pid = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..=0x3FFF) };
    TlbEntry {
        virtual_base: rng.gen::<u32>() as u64 & mask,
        physical_base: rng.gen_range(0..1u64 << 36) & mask,
        log2_size: log2,
        permissions: Permissions::from_bits(rng.gen_range(0..64)),
        cache_policy: *CachePolicy::ALL.choose(rng).unwrap(),
        pid,
        valid: rng.gen_bool(0.9),
    }
}

/// Page-granular view of what a plan should map: vpage -> (ppage, perms, cache, global).
fn expected_pages(layout: &MemoryLayout, space: &Owner, global_kernel: bool) -> BTreeMap<Addr, (Addr, u8, CachePolicy, bool)> {
    let mut out = BTreeMap::new();
    for b in &layout.plan(space).unwrap().blocks {
        for off in (0..b.size).step_by(0x1000) {
            let g = global_kernel && b.owner.is_kernel();
            out.insert(b.virtual_address + off, (b.physical_address + off, b.permissions.bits(), b.cache_policy, g));
        }
    }
    out
}

fn round_trips() -> Outcome {
    let mut rng = synth::rng(synth::seed_from_env(2));
    let mut seqs = Vec::new();
    for s in 0..100u32 {
        let mut entries = Vec::new();
        let mut encoded = Vec::new();
        for _ in 0..100 {
            let e = random_entry(&mut rng);
            let w = tlb::encode_entry(&e).map_err(|err| format!("{e:?}: {err}"))?;
            let back = tlb::decode_entry(&w).map_err(|err| format!("{e:?}: {err}"))?;
            ensure(back == e, || format!("{e:?} decoded as {back:?}"))?;
            entries.push(e);
            encoded.push(w);
        }
        seqs.push(tlb::TlbSequence {
            space: Owner::partition(format!("S{s}")),
            pid: s + 1,
            entries,
            encoded,
        });
    }
    let raw = tlb::read_mltc(&tlb::write_mltc(&seqs)).map_err(|e| e.to_string())?;
    for (s, (pid, words)) in seqs.iter().zip(&raw) {
        ensure(*pid as u32 == s.pid && words.iter().eq(s.encoded.iter().map(|e| &e.words)), || format!("sequence {pid} differs"))?;
    }

    let opts = SynthOptions::new(MmuKind::PageTable);
    for _ in 0..200 {
        let (_, layout) = random_feasible_project(&mut rng, &opts);
        let cfg = pagetable::build_config(&layout).map_err(|e| e.to_string())?;
        let MmuModel::PageTable(m) = &layout.mmu else { unreachable!() };
        for image in &cfg.images {
            let mut got = BTreeMap::new();
            for pm in decode_page_tables(image, &m.geometry).map_err(|e| e.to_string())? {
                for off in (0..pm.size).step_by(0x1000) {
                    got.insert(pm.virtual_base + off, (pm.physical_base + off, pm.permissions.bits(), pm.cache_policy, pm.global));
                }
            }
            let want = expected_pages(&layout, &image.space, m.has_global_bit);
            ensure(got == want, || format!("space {} decodes to a different mapping", image.space))?;
        }
        let raw = pagetable::read_mlpt(&pagetable::write_mlpt(&cfg)).map_err(|e| e.to_string())?;
        ensure(raw.geometry == m.geometry && raw.flush_on_switch == cfg.asids.flush_on_switch, || "header differs".into())?;
        for ((space, image), warm) in raw.spaces.iter().zip(&cfg.images).zip(&cfg.warmups) {
            ensure(
                space.asid as u32 == image.asid
                    && space.base_physical == image.base_physical
                    && space.root_offset == image.root_offset
                    && space.bytes == image.bytes
                    && space.warmup == warm.addresses,
                || format!("space {} differs after MLPT round trip", image.space),
            )?;
        }
    }
    Ok("10000 TLB entries and 200 page-table configurations round-tripped".into())
}

// Criterion 3 ---------------------------------------------------------------

fn pipeline() -> Outcome {
    let mut rng = synth::rng(synth::seed_from_env(3));
    let mut cases = 0usize;
    for i in 0..500 {
        let kind = if i % 2 == 0 { MmuKind::TlbFixed } else { MmuKind::PageTable };
        let (p, layout) = random_feasible_project(&mut rng, &SynthOptions::new(kind));
        let ctx = |what: &str, text: String| format!("project {i}: {what}\n{text}\n{}", doc::serialize_project(&p));
        let feas = feasibility_check(&layout);
        ensure(feas.passed, || ctx("feasibility", feas.render_text()))?;
        let vl = verify_layout(&layout, &p.requirements);
        ensure(vl.passed, || ctx("layout verification", vl.render_text()))?;
        let back = MemoryLayout::from_json(&layout.to_json()).map_err(|e| ctx("layout json", e.to_string()))?;
        ensure(back == layout, || ctx("layout json", "round trip differs".into()))?;
        let bytes = artifact(&layout).map_err(|e| ctx("generate", e))?;
        let vc = verify_mmu_config(&bytes, &layout).map_err(|e| ctx("config", e.to_string()))?;
        ensure(vc.passed, || ctx("config verification", vc.render_text()))?;
        let mmu = sim::load(&bytes, &layout, SimMode::Static, CostModel::default()).map_err(|e| ctx("load", e.to_string()))?;
        let matrix = build_matrix(&layout);
        let r = run_matrix(&matrix, &mut SimAgent::new(mmu));
        ensure(r.passed, || ctx("dynamic", r.render_text()))?;
        cases += r.cases_run;
    }
    Ok(format!("500 projects, 0 findings, {cases} dynamic cases"))
}

// Criterion 4 ---------------------------------------------------------------

fn mutations() -> Outcome {
    let (mut sites, mut dynamic, mut equivalent) = (0, 0, 0);
    for i in 0..20u64 {
        let kind = if i < 10 { MmuKind::TlbFixed } else { MmuKind::PageTable };
        let (_, layout) = random_feasible_project(&mut synth::rng(4000 + i), &SynthOptions::desk(kind));
        let bytes = artifact(&layout)?;
        let r = run_harness(&layout, &bytes, None, 0).map_err(|e| format!("project {i}: {e}"))?;
        ensure(r.complete(), || format!("project {i}:\n{}", r.render_text()))?;
        sites += r.sites_tested;
        dynamic += r.dynamic_tested;
        equivalent += r.equivalent;
    }
    Ok(format!(
        "{sites} mutations detected statically, {dynamic} access-observable ones also dynamically ({equivalent} translation-equivalent, {} cache/global-only)",
        sites - dynamic - equivalent
    ))
}

// Criterion 5 ---------------------------------------------------------------

fn window_trace<R: Rng>(layout: &MemoryLayout, rng: &mut R, rounds: usize) -> Vec<TraceRecord> {
    let mut trace = Vec::new();
    for _ in 0..rounds {
        let mut plans: Vec<_> = layout.partition_plans().iter().collect();
        plans.shuffle(rng);
        for plan in plans {
            trace.push(TraceRecord::Switch(plan.space.clone()));
            let mut touches: Vec<TraceRecord> = plan
                .blocks
                .iter()
                .flat_map(|b| (0..b.size).step_by(0x1000).map(move |off| access(&plan.space, b.virtual_address + off, b.permissions)))
                .collect();
            touches.shuffle(rng);
            trace.extend(touches);
        }
    }
    trace
}

fn zero_miss_layouts() -> Vec<MemoryLayout> {
    let mut rng = synth::rng(synth::seed_from_env(5));
    let mut out = Vec::new();
    let sample = project_file("pagetable.toml");
    out.push(plan_layout(&sample.requirements, &sample.memmap, &sample.mmu).expect("sample plans"));
    while out.len() < 50 {
        let (mut p, _) = random_feasible_project(&mut rng, &SynthOptions::new(MmuKind::PageTable));
        if let MmuModel::PageTable(m) = &mut p.mmu {
            m.zero_miss = true;
        }
        if let Ok(l) = plan_layout(&p.requirements, &p.memmap, &p.mmu) {
            out.push(l);
        }
    }
    out
}

fn zero_miss() -> Outcome {
    let mut rng = synth::rng(synth::seed_from_env(55));
    let mut windows = 0;
    for (i, layout) in zero_miss_layouts().iter().enumerate() {
        let budget = zero_miss_budget(layout, &layout.mmu);
        ensure(budget.passed, || format!("layout {i}: {}", budget.render_text()))?;
        let bytes = artifact(layout)?;
        let mut mmu = sim::load(&bytes, layout, SimMode::Static, CostModel::default()).map_err(|e| e.to_string())?;
        let stats = replay(&mut mmu, &window_trace(layout, &mut rng, 3)).map_err(|e| e.to_string())?;
        for w in &stats.windows {
            ensure(
                w.accesses.walk_memory_accesses == 0 && w.accesses.interrupts == 0 && w.faults.is_empty(),
                || format!("layout {i} window {}: {:?} faults {:?}", w.space, w.accesses, w.faults),
            )?;
            windows += 1;
        }
    }
    Ok(format!("50 layouts, {windows} partition windows with 0 walks and 0 interrupts"))
}

// Criterion 6 ---------------------------------------------------------------

fn coverage_trace<R: Rng>(layout: &MemoryLayout, seqs: &[tlb::TlbSequence], rng: &mut R) -> Vec<TraceRecord> {
    let mut trace = Vec::new();
    let mut order: Vec<&tlb::TlbSequence> = seqs.iter().collect();
    for _ in 0..rng.gen_range(0..4) {
        order.push(seqs.choose(rng).unwrap());
    }
    order.shuffle(rng);
    for seq in order {
        let plan = layout.plan(&seq.space).unwrap();
        let touch = |e: &TlbEntry, rng: &mut R| {
            let off = rng.gen_range(0..e.size() / 4) * 4;
            let b = plan.block_at(e.virtual_base + off).expect("entry inside a block");
            access(&seq.space, e.virtual_base + off, b.permissions)
        };
        trace.push(TraceRecord::Switch(seq.space.clone()));
        let mut window: Vec<TraceRecord> = seq.entries.iter().map(|e| touch(e, rng)).collect();
        for _ in 0..rng.gen_range(0..20) {
            let e = seq.entries.choose(rng).unwrap();
            window.push(touch(e, rng));
        }
        window.shuffle(rng);
        trace.extend(window);
    }
    trace
}

fn random_cost<R: Rng>(rng: &mut R) -> CostModel {
    CostModel {
        tlb_hit_cost: rng.gen_range(1..=10),
        tlb_write_cost: rng.gen_range(1..=100),
        walk_access_cost: WalkCosts {
            external_ram: rng.gen_range(1..=100),
            internal_ram: rng.gen_range(1..=100),
            device: rng.gen_range(1..=100),
        },
        interrupt_overhead: rng.gen_range(1..=1000),
    }
}

fn batch_vs_lazy() -> Outcome {
    let mut rng = synth::rng(synth::seed_from_env(6));
    let costs: Vec<CostModel> = (0..10).map(|_| random_cost(&mut rng)).collect();
    let mut checked = 0;
    for t in 0..100 {
        let (_, layout) = random_feasible_project(&mut rng, &SynthOptions::new(MmuKind::TlbFixed));
        let seqs = tlb::build_sequences(&layout).map_err(|e| e.to_string())?;
        let bytes = tlb::write_mltc(&seqs);
        let trace = coverage_trace(&layout, &seqs, &mut rng);
        for cm in &costs {
            let c = compare_static_vs_naive(&bytes, &layout, *cm, &trace).map_err(|e| e.to_string())?;
            ensure(c.static_total < c.naive_total, || format!("trace {t} cost {cm:?}: static {} naive {}", c.static_total, c.naive_total))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} comparisons, static strictly cheaper in all"))
}

// Criterion 7 ---------------------------------------------------------------

fn walk_bound() -> Outcome {
    let mut rng = synth::rng(synth::seed_from_env(7));
    let geometries = [
        PageTableGeometry::default_4k(),
        PageTableGeometry {
            page_size: 4096,
            levels: 3,
            index_bits_per_level: vec![9, 9, 9],
            large_page_levels: vec![2],
        },
        PageTableGeometry {
            page_size: 4096,
            levels: 2,
            index_bits_per_level: vec![10, 10],
            large_page_levels: vec![1],
        },
    ];
    let (mut pages, mut walks) = (0u64, 0u64);
    for (gi, g) in geometries.iter().enumerate() {
        for _ in 0..15 {
            let (mut p, _) = random_feasible_project(&mut rng, &SynthOptions::new(MmuKind::PageTable));
            if let MmuModel::PageTable(m) = &mut p.mmu {
                m.geometry = g.clone();
            }
            let Ok(layout) = plan_layout(&p.requirements, &p.memmap, &p.mmu) else { continue };
            let bytes = artifact(&layout)?;
            for plan in layout.partition_plans() {
                let mut mmu = sim::load(&bytes, &layout, SimMode::NaiveRefill, CostModel::default()).map_err(|e| e.to_string())?;
                mmu.switch_space(&plan.space).map_err(|e| e.to_string())?;
                for b in &plan.blocks {
                    for off in (0..b.size).step_by(0x1000) {
                        let TraceRecord::Access(req) = access(&plan.space, b.virtual_address + off, b.permissions) else { unreachable!() };
                        let out = mmu.access(&req).map_err(|e| e.to_string())?;
                        ensure(out.cost.walk_memory_accesses <= g.levels as u64, || {
                            format!("geometry {gi}: {} accesses for {:#x}", out.cost.walk_memory_accesses, req.vaddr)
                        })?;
                        pages += 1;
                        walks += out.cost.walk_memory_accesses;
                    }
                }
            }
        }
    }
    ensure(walks > 0, || "no walks happened".into())?;
    Ok(format!("{pages} mapped pages over 3 geometries, every walk within the level count"))
}

// Criterion 8 ---------------------------------------------------------------

/// Fewest naturally aligned power-of-two pieces in `sizes` covering
/// `[v, v+len)` with the same offset into each piece on `p`.
fn oracle_min_pieces(v: u64, p: u64, len: u64, sizes: &[u64]) -> Option<usize> {
    let unit = *sizes.iter().min().unwrap();
    let n = (len / unit) as usize;
    let mut best = vec![None; n + 1];
    best[0] = Some(0usize);
    for i in 0..n {
        let Some(b) = best[i] else { continue };
        let (va, pa) = (v + i as u64 * unit, p + i as u64 * unit);
        for &s in sizes {
            let j = i + (s / unit) as usize;
            if j <= n && va % s == 0 && pa % s == 0 {
                best[j] = Some(best[j].map_or(b + 1, |x: usize| x.min(b + 1)));
            }
        }
    }
    best[n]
}

fn decomposition_minimality() -> Result<usize, String> {
    let t = TlbModel {
        entry_count: 64,
        min_entry_size: 0x1000,
        max_entry_size: 0x10_0000,
        associativity: Associativity::FullyAssociative,
        pid_bits: 8,
    };
    let tlb_sizes: Vec<u64> = (12..=20).map(|k| 1u64 << k).collect();
    let g = PageTableGeometry {
        page_size: 0x1000,
        levels: 3,
        index_bits_per_level: vec![2, 2, 2],
        large_page_levels: vec![1, 2],
    };
    let pt_sizes = [0x1000, 0x4000, 0x1_0000];
    let mut n = 0;
    for pages in 1..=64u64 {
        let len = pages * 0x1000;
        for vo in 0..32u64 {
            for po in [vo, vo ^ 1, vo ^ 4, (vo + 16) % 32] {
                let (v, p) = (0x40_0000 + vo * 0x1000, 0x80_0000 + po * 0x1000);
                let got = tlb::decompose_range(v, p, len, &t).map_err(|e| e.to_string())?;
                let want = oracle_min_pieces(v, p, len, &tlb_sizes).unwrap();
                ensure(got.len() == want, || format!("TLB {v:#x}->{p:#x} +{len:#x}: {} vs {want}", got.len()))?;
                let (pv, pp) = (vo * 0x1000, po * 0x1000);
                let leaves = pagetable::leaf_decompose(pv, pp, len, &g).map_err(|e| e.to_string())?;
                let want = oracle_min_pieces(pv, pp, len, &pt_sizes).unwrap();
                ensure(leaves.len() == want, || format!("leaves {pv:#x}->{pp:#x} +{len:#x}: {} vs {want}", leaves.len()))?;
                n += 2;
            }
        }
    }
    Ok(n)
}

/// Pages, alignment in pages, contiguous.
type BlockSpec = (u64, u64, bool);

struct PlacementCase {
    map: SystemMemoryMap,
    blocks: Vec<BlockSpec>,
}

const BASE: Addr = 0x1000_0000;
const PG: u64 = 0x1000;

fn random_placement<R: Rng>(rng: &mut R) -> PlacementCase {
    let mut regions = Vec::new();
    let mut at = BASE;
    for _ in 0..rng.gen_range(1..=3) {
        at += rng.gen_range(0..3) * PG;
        let size = rng.gen_range(2..=12) * PG;
        regions.push(PhysicalRegion {
            base: at,
            size,
            class: if rng.gen_bool(0.7) { RegionClass::ExternalRam } else { RegionClass::InternalRam },
            access_cost: 1,
        });
        at += size;
    }
    let blocks = (0..rng.gen_range(1..=6))
        .map(|_| (rng.gen_range(1..=6), *[1, 1, 2, 4, 8].choose(rng).unwrap(), rng.gen_bool(0.3)))
        .collect();
    PlacementCase {
        map: SystemMemoryMap {
            regions,
            min_page_size: PG,
        },
        blocks,
    }
}

/// Exhaustive search: decide each page from the bottom up, either leaving it
/// empty or starting an unplaced block there.
fn oracle_placeable(c: &PlacementCase) -> bool {
    let top = c.map.regions.iter().map(|r| r.end() as u64).max().unwrap();
    let n = ((top - BASE) / PG) as usize;
    // Interval id per page: region index for contiguous blocks, class-run id otherwise.
    let region_of: Vec<Option<usize>> = (0..n)
        .map(|i| c.map.regions.iter().position(|r| r.contains_range(BASE + i as u64 * PG, PG)))
        .collect();
    let mut run_of = vec![None; n];
    let mut run = 0;
    for i in 0..n {
        if let Some(r) = region_of[i] {
            let joins = i > 0 && region_of[i - 1].is_some_and(|q| c.map.regions[q].class == c.map.regions[r].class);
            if !joins {
                run += 1;
            }
            run_of[i] = Some(run);
        }
    }
    let fits = |page: usize, b: &BlockSpec| {
        let (len, align, contiguous) = *b;
        let end = page + len as usize;
        if end > n || !(BASE / PG + page as u64).is_multiple_of(align) {
            return false;
        }
        let ids = if contiguous { &region_of } else { &run_of };
        ids[page].is_some() && (page..end).all(|q| ids[q] == ids[page])
    };
    let all = (1usize << c.blocks.len()) - 1;
    let mut memo: HashMap<(usize, usize), bool> = HashMap::new();
    fn go(page: usize, left: usize, n: usize, c: &PlacementCase, fits: &dyn Fn(usize, &BlockSpec) -> bool, memo: &mut HashMap<(usize, usize), bool>) -> bool {
        if left == 0 {
            return true;
        }
        if page >= n {
            return false;
        }
        if let Some(&r) = memo.get(&(page, left)) {
            return r;
        }
        let mut ok = go(page + 1, left, n, c, fits, memo);
        for (i, b) in c.blocks.iter().enumerate() {
            if ok {
                break;
            }
            if left & (1 << i) != 0 && fits(page, b) {
                ok = go(page + b.0 as usize, left & !(1 << i), n, c, fits, memo);
            }
        }
        memo.insert((page, left), ok);
        ok
    }
    go(0, all, n, c, &fits, &mut memo)
}

fn planner_places(c: &PlacementCase) -> bool {
    let blocks = c
        .blocks
        .iter()
        .enumerate()
        .map(|(i, &(pages, align, contiguous))| {
            let mut b = MemoryBlockRequirement::new(
                if i % 2 == 0 { Owner::Kernel } else { Owner::partition("P1") },
                format!("b{i}"),
                pages * PG,
                Permissions::parse("KR|KW").unwrap(),
                CachePolicy::Normal,
            );
            b.alignment = Some(align * PG);
            b.physically_contiguous = contiguous;
            b
        })
        .collect();
    let reqs = RequirementSet {
        partitions: vec!["P1".into()],
        blocks,
    };
    let mmu = MmuModel::PageTable(PageTableModel {
        geometry: PageTableGeometry::default_4k(),
        tlb_capacity: 64,
        asid_bits: 8,
        has_global_bit: true,
        zero_miss: false,
    });
    plan_layout(&reqs, &c.map, &mmu).is_ok()
}

fn placement_feasibility() -> Result<(usize, usize), String> {
    let mut rng = synth::rng(synth::seed_from_env(8));
    let mut feasible = 0;
    for i in 0..2000 {
        let c = random_placement(&mut rng);
        let want = oracle_placeable(&c);
        let got = planner_places(&c);
        ensure(got == want, || format!("case {i}: planner {got}, oracle {want}: {:?} {:?}", c.map.regions, c.blocks))?;
        feasible += want as usize;
    }
    Ok((2000, feasible))
}

fn oracles() -> Outcome {
    let n = decomposition_minimality()?;
    let (cases, feasible) = placement_feasibility()?;
    Ok(format!("{n} decompositions minimal; {cases} placements agree ({feasible} feasible)"))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 8] = [
        ("P1010 entry budget", Duration::from_secs(1), p1010_budget),
        ("encode/decode round trips", Duration::from_secs(30), round_trips),
        ("random project pipeline", Duration::from_secs(300), pipeline),
        ("mutation detection", Duration::from_secs(300), mutations),
        ("zero-miss determinism", Duration::from_secs(60), zero_miss),
        ("batch vs lazy inequality", Duration::from_secs(60), batch_vs_lazy),
        ("walk length bound", Duration::from_secs(60), walk_bound),
        ("decomposition and placement oracles", Duration::from_secs(120), oracles),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= *limit => (true, d),
            Ok(d) => (false, format!("{d}; exceeded {limit:?}")),
            Err(e) => (false, e),
        };
        failed += !ok as usize;
        println!("criterion {}: {} {name} ({:.2?}): {detail}", i + 1, if ok { "PASS" } else { "FAIL" }, took);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
