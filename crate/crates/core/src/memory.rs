//! Paged memory image of a stateful network function and the process that
//! dirties it while the function runs.
//!
//! Page bookkeeping is always relative to the migration target: a page is
//! either not yet copied, copied and unchanged, or copied and modified since.
//! Only pages that are clean at the target can become dirty; the other two
//! states already imply a pending transfer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::rng::{rng_stream, RngStream};
use crate::sim::{Micros, MICROS_PER_SEC};

pub type PageId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PageState {
    NeverCopied,
    CleanAtTarget,
    DirtySinceCopy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchFilter {
    All,
    DirtyOnly,
    WorkingSetOnly,
    NeverCopiedOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PageCounts {
    pub never_copied: usize,
    pub clean: usize,
    pub dirty: usize,
}

impl PageCounts {
    pub fn total(&self) -> usize {
        self.never_copied + self.clean + self.dirty
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryImage {
    page_size: u64,
    pages: Vec<PageState>,
    working_set: BTreeSet<PageId>,
    counts: PageCounts,
}

impl MemoryImage {
    /// Fresh image with every page not yet copied and an empty working set.
    pub fn new(num_pages: u32, page_size: u64) -> Self {
        Self {
            page_size,
            pages: vec![PageState::NeverCopied; num_pages as usize],
            working_set: BTreeSet::new(),
            counts: PageCounts {
                never_copied: num_pages as usize,
                ..PageCounts::default()
            },
        }
    }

    /// Replaces the working set. Page ids outside the image are rejected.
    pub fn with_working_set<I>(mut self, pages: I) -> Result<Self, PageId>
    where
        I: IntoIterator<Item = PageId>,
    {
        let set: BTreeSet<PageId> = pages.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&p| p as usize >= self.pages.len()) {
            return Err(bad);
        }
        self.working_set = set;
        Ok(self)
    }

    /// Working set made of the lowest `floor(fraction * S)` page ids.
    pub fn with_working_set_fraction(self, fraction: f64) -> Self {
        let fraction = fraction.clamp(0.0, 1.0);
        let k = (fraction * self.pages.len() as f64).floor() as PageId;
        self.with_working_set(0..k)
            .expect("prefix of the image is always in range")
    }

    pub fn num_pages(&self) -> u32 {
        self.pages.len() as u32
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn total_bytes(&self) -> u64 {
        self.pages.len() as u64 * self.page_size
    }

    pub fn working_set(&self) -> &BTreeSet<PageId> {
        &self.working_set
    }

    pub fn state(&self, page: PageId) -> PageState {
        self.pages[page as usize]
    }

    pub fn counts(&self) -> PageCounts {
        self.counts
    }

    pub fn dirty_count(&self) -> usize {
        self.counts.dirty
    }

    pub fn is_fully_transferred(&self) -> bool {
        self.counts.clean == self.pages.len()
    }

    /// Forgets everything known about the target: a new migration starts
    /// from an empty destination.
    pub fn begin_migration(&mut self) {
        self.pages.fill(PageState::NeverCopied);
        self.counts = PageCounts {
            never_copied: self.pages.len(),
            ..PageCounts::default()
        };
    }

    /// Matching page ids in ascending order. Does not mutate the image.
    pub fn take_transfer_batch(&self, filter: BatchFilter) -> Vec<PageId> {
        match filter {
            BatchFilter::All => (0..self.num_pages()).collect(),
            BatchFilter::WorkingSetOnly => self.working_set.iter().copied().collect(),
            BatchFilter::DirtyOnly => self.ids_in_state(PageState::DirtySinceCopy),
            BatchFilter::NeverCopiedOnly => self.ids_in_state(PageState::NeverCopied),
        }
    }

    fn ids_in_state(&self, wanted: PageState) -> Vec<PageId> {
        self.pages
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == wanted)
            .map(|(i, _)| i as PageId)
            .collect()
    }

    fn set_state(&mut self, page: PageId, next: PageState) {
        let slot = &mut self.pages[page as usize];
        let prev = std::mem::replace(slot, next);
        for (state, delta) in [(prev, -1isize), (next, 1)] {
            let counter = match state {
                PageState::NeverCopied => &mut self.counts.never_copied,
                PageState::CleanAtTarget => &mut self.counts.clean,
                PageState::DirtySinceCopy => &mut self.counts.dirty,
            };
            *counter = counter.wrapping_add_signed(delta);
        }
    }

    /// Marks pages as received by the target.
    pub fn mark_copied(&mut self, pages: &[PageId]) {
        for &p in pages {
            self.set_state(p, PageState::CleanAtTarget);
        }
    }

    /// Marks a clean page dirty. Returns false if it was not clean.
    pub fn mark_dirty(&mut self, page: PageId) -> bool {
        if self.pages[page as usize] == PageState::CleanAtTarget {
            self.set_state(page, PageState::DirtySinceCopy);
            true
        } else {
            false
        }
    }
}

/// How a running function modifies its memory.
#[derive(Debug, Clone, PartialEq)]
pub enum DirtyModel<T> {
    /// Deterministic: `rate` pages per second, lowest clean page ids first.
    ConstantRate { pages_per_sec: T },
    /// Each clean page is dirtied independently with this probability per
    /// millisecond of execution.
    Bernoulli { p_per_page_per_ms: f64 },
}

#[derive(Debug, Clone)]
pub struct DirtyProcess<T> {
    model: DirtyModel<T>,
    carry: T,
    rng: RngStream,
}

impl<T: Scalar> DirtyProcess<T> {
    pub fn constant_rate(pages_per_sec: T) -> Self {
        Self::new(DirtyModel::ConstantRate { pages_per_sec }, "dirty", 0)
    }

    pub fn bernoulli(p_per_page_per_ms: f64, label: &str, seed: u64) -> Self {
        Self::new(DirtyModel::Bernoulli { p_per_page_per_ms }, label, seed)
    }

    /// A process that never dirties anything.
    pub fn idle() -> Self {
        Self::constant_rate(T::zero())
    }

    pub fn new(model: DirtyModel<T>, label: &str, seed: u64) -> Self {
        Self {
            model,
            carry: T::zero(),
            rng: rng_stream(label, seed),
        }
    }

    pub fn model(&self) -> &DirtyModel<T> {
        &self.model
    }

    /// Fractional page carried over from previous calls (ConstantRate only).
    pub fn carry(&self) -> T {
        self.carry
    }

    /// Runs the process for `duration` of execution time and returns the
    /// number of newly dirtied pages.
    pub fn advance(&mut self, image: &mut MemoryImage, duration: Micros) -> usize {
        if duration == 0 {
            return 0;
        }
        match self.model {
            DirtyModel::ConstantRate { pages_per_sec } => {
                let due = pages_per_sec * T::ratio(duration, MICROS_PER_SEC) + self.carry;
                let whole = due.floor();
                self.carry = due - whole;
                let wanted = whole.floor_u64() as usize;
                let mut dirtied = 0;
                for page in 0..image.num_pages() {
                    if dirtied == wanted {
                        break;
                    }
                    if image.mark_dirty(page) {
                        dirtied += 1;
                    }
                }
                dirtied
            }
            DirtyModel::Bernoulli { p_per_page_per_ms } => {
                let ms = duration as f64 / 1_000.0;
                let p = 1.0 - (1.0 - p_per_page_per_ms.clamp(0.0, 1.0)).powf(ms);
                let mut dirtied = 0;
                for page in 0..image.num_pages() {
                    if image.state(page) == PageState::CleanAtTarget && self.rng.next_unit() < p {
                        image.mark_dirty(page);
                        dirtied += 1;
                    }
                }
                dirtied
            }
        }
    }
}

/// Free-function form of [`DirtyProcess::advance`].
pub fn advance_dirty<T: Scalar>(
    image: &mut MemoryImage,
    process: &mut DirtyProcess<T>,
    duration: Micros,
) -> usize {
    process.advance(image, duration)
}
