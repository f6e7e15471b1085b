//! Accounting of training memory in units of retained state vectors.
//!
//! The headline count ("paper units") charges one unit per retained step per
//! level (its hidden vector) and one per stored restricted gradient, because
//! those are the quantities the k + 2T/k bound speaks about. Cell states and
//! buffered up-sent inputs ride along uncounted in paper units but are
//! tracked in the exact scalar tally.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum VecKind {
    /// Hidden state of a retained step.
    StateH,
    /// Cell state of a retained step.
    StateC,
    /// Up-sent input buffered for decoder targets / cell inputs.
    Upsent,
    /// Accumulated restricted gradient w.r.t. an injected superior state.
    StoredGrad,
}

impl VecKind {
    fn paper_units(self) -> usize {
        match self {
            VecKind::StateH | VecKind::StoredGrad => 1,
            VecKind::StateC | VecKind::Upsent => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LedgerEvent {
    pub retain: bool,
    pub level: usize,
    pub kind: VecKind,
    pub elems: usize,
}

/// Running and peak counts of retained vectors, per level and total.
#[derive(Clone, Debug, Default)]
pub struct MemoryLedger {
    paper_current: usize,
    paper_peak: usize,
    exact_current: usize,
    exact_peak: usize,
    level_current: Vec<usize>,
    level_peak: Vec<usize>,
    counts: std::collections::BTreeMap<(usize, u8), usize>,
    events: Vec<LedgerEvent>,
}

impl MemoryLedger {
    pub fn new(levels: usize) -> Self {
        MemoryLedger {
            level_current: vec![0; levels],
            level_peak: vec![0; levels],
            ..Default::default()
        }
    }

    fn kind_tag(kind: VecKind) -> u8 {
        match kind {
            VecKind::StateH => 0,
            VecKind::StateC => 1,
            VecKind::Upsent => 2,
            VecKind::StoredGrad => 3,
        }
    }

    pub fn retain(&mut self, level: usize, kind: VecKind, elems: usize) {
        let units = kind.paper_units();
        self.paper_current += units;
        self.paper_peak = self.paper_peak.max(self.paper_current);
        self.exact_current += elems;
        self.exact_peak = self.exact_peak.max(self.exact_current);
        self.level_current[level] += units;
        self.level_peak[level] = self.level_peak[level].max(self.level_current[level]);
        *self.counts.entry((level, Self::kind_tag(kind))).or_insert(0) += 1;
        self.events.push(LedgerEvent {
            retain: true,
            level,
            kind,
            elems,
        });
    }

    pub fn release(&mut self, level: usize, kind: VecKind, elems: usize) -> Result<()> {
        let slot = self.counts.entry((level, Self::kind_tag(kind))).or_insert(0);
        if *slot == 0 {
            return Err(Error::Ledger(format!(
                "release of non-retained vector (level {level}, {kind:?})"
            )));
        }
        *slot -= 1;
        self.paper_current -= kind.paper_units();
        self.exact_current -= elems;
        self.level_current[level] -= kind.paper_units();
        self.events.push(LedgerEvent {
            retain: false,
            level,
            kind,
            elems,
        });
        Ok(())
    }

    /// Peak count in paper units (one per live step vector or stored grad).
    pub fn paper_peak(&self) -> usize {
        self.paper_peak
    }

    pub fn paper_current(&self) -> usize {
        self.paper_current
    }

    /// Peak in raw scalars across every tracked vector kind.
    pub fn exact_peak_scalars(&self) -> usize {
        self.exact_peak
    }

    pub fn level_peak(&self, level: usize) -> usize {
        self.level_peak[level]
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }
}

/// Predicted peak paper-unit count of the streaming backward.
///
/// Two levels: k live lower states plus ceil(T/k) upper states and as many
/// stored gradients. Deeper: live states and stored gradients at each of the
/// l-1 lower levels (2k each) plus the top level's 2 ceil(T/k^(l-1)).
pub fn memory_formula(levels: usize, k: usize, t: usize) -> Result<usize> {
    if levels < 2 || k == 0 || t < k {
        return Err(Error::Config(format!(
            "memory_formula needs levels >= 2, k >= 1, T >= k (got {levels}, {k}, {t})"
        )));
    }
    if levels == 2 {
        Ok(k + 2 * t.div_ceil(k))
    } else {
        let top_period = k.pow((levels - 1) as u32);
        Ok(2 * (levels - 1) * k + 2 * t.div_ceil(top_period))
    }
}

/// Vectors a full unrolled backward retains, in the same units: every lower
/// step plus every upper state.
pub fn full_tbptt_count(levels: usize, k: usize, t: usize) -> usize {
    let mut total = t;
    let mut period = 1usize;
    for _ in 1..levels {
        period *= k;
        total += t.div_ceil(period);
    }
    total
}
