//! Half-open address interval sets.

/// Sorted, coalesced set of `[start, end)` intervals over a 65-bit space.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntervalSet {
    ranges: Vec<(u128, u128)>,
}

impl IntervalSet {
    pub fn new() -> Self {
        IntervalSet::default()
    }

    pub fn ranges(&self) -> &[(u128, u128)] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn insert(&mut self, start: u128, end: u128) {
        if start >= end {
            return;
        }
        let mut s = start;
        let mut e = end;
        let mut out = Vec::with_capacity(self.ranges.len() + 1);
        let mut placed = false;
        for &(a, b) in &self.ranges {
            if b < s {
                out.push((a, b));
            } else if e < a {
                if !placed {
                    out.push((s, e));
                    placed = true;
                }
                out.push((a, b));
            } else {
                s = s.min(a);
                e = e.max(b);
            }
        }
        if !placed {
            out.push((s, e));
        }
        self.ranges = out;
    }

    pub fn intersects(&self, start: u128, end: u128) -> bool {
        if start >= end {
            return false;
        }
        let idx = self.ranges.partition_point(|&(_, b)| b <= start);
        self.ranges.get(idx).is_some_and(|&(a, _)| a < end)
    }

    pub fn contains(&self, start: u128, end: u128) -> bool {
        let idx = self.ranges.partition_point(|&(_, b)| b <= start);
        self.ranges
            .get(idx)
            .is_some_and(|&(a, b)| a <= start && end <= b)
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = self.clone();
        for &(a, b) in &other.ranges {
            out.insert(a, b);
        }
        out
    }

    /// Lowest `addr >= lo` aligned to `align` with `[addr, addr+size)` free
    /// of this set and ending at or before `hi`.
    pub fn first_fit(&self, lo: u128, hi: u128, size: u64, align: u64) -> Option<u128> {
        let size = size as u128;
        let mut cand = crate::model::align_up(lo, align);
        loop {
            if cand + size > hi {
                return None;
            }
            let idx = self.ranges.partition_point(|&(_, b)| b <= cand);
            match self.ranges.get(idx) {
                Some(&(a, b)) if a < cand + size => cand = crate::model::align_up(b, align),
                _ => return Some(cand),
            }
        }
    }
}
