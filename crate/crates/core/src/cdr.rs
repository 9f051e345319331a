//! Call-detail records, the six-month timeline and churn labelling.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::Result;

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_WEEK: i64 = 7 * SECONDS_PER_DAY;
/// Months are fixed 30-day blocks counted from the epoch.
pub const MONTH_DAYS: i64 = 30;
pub const MONTHS: usize = 6;
/// Length of the inactivity run that makes a customer a churner.
pub const CHURN_GAP_DAYS: i64 = 30;
/// Calls shorter than this many seconds are treated as unintentional.
pub const DEFAULT_MIN_DURATION: u32 = 4;

/// Dense index into a [`CdrStore`]'s customer directory.
pub type CustomerId = u32;

/// One call event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CdrRecord {
    pub caller: CustomerId,
    pub callee: CustomerId,
    /// UTC seconds.
    pub start: i64,
    /// Seconds.
    pub duration: u32,
}

impl CdrRecord {
    pub fn new(caller: CustomerId, callee: CustomerId, start: i64, duration: u32) -> Self {
        CdrRecord { caller, callee, start, duration }
    }

    fn sort_key(&self) -> (i64, CustomerId, CustomerId, u32) {
        (self.start, self.caller, self.callee, self.duration)
    }
}

/// Half-open interval of UTC seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn new(start: i64, end: i64) -> Self {
        TimeRange { start, end }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn len_seconds(&self) -> i64 {
        (self.end - self.start).max(0)
    }

    pub fn len_days(&self) -> i64 {
        self.len_seconds() / SECONDS_PER_DAY
    }

    pub fn overlaps(&self, other: &TimeRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Maps the epoch onto six consecutive 30-day months M1..M6.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timeline {
    epoch: i64,
}

impl Timeline {
    pub fn new(epoch: i64) -> Self {
        Timeline { epoch }
    }

    pub fn epoch(&self) -> i64 {
        self.epoch
    }

    /// Interval of month `m`, 1-based (`month(1)` is M1).
    pub fn month(&self, m: usize) -> TimeRange {
        assert!((1..=MONTHS).contains(&m), "month index {m} outside 1..=6");
        let len = MONTH_DAYS * SECONDS_PER_DAY;
        let start = self.epoch + (m as i64 - 1) * len;
        TimeRange::new(start, start + len)
    }

    /// Interval spanning months `first..=last`.
    pub fn months(&self, first: usize, last: usize) -> TimeRange {
        assert!(first <= last, "empty month range M{first}..M{last}");
        TimeRange::new(self.month(first).start, self.month(last).end)
    }

    /// The whole six-month observation window.
    pub fn observation(&self) -> TimeRange {
        self.months(1, MONTHS)
    }

    /// 1-based month containing `t`, if any.
    pub fn month_of(&self, t: i64) -> Option<usize> {
        if !self.observation().contains(t) {
            return None;
        }
        Some(((t - self.epoch) / (MONTH_DAYS * SECONDS_PER_DAY)) as usize + 1)
    }
}

/// Immutable, time-ordered collection of call records over a customer directory.
///
/// Customer names are kept sorted so that index order equals id order; ties
/// in score rankings are broken by that order.
#[derive(Clone, Debug, PartialEq)]
pub struct CdrStore {
    customers: Vec<String>,
    records: Vec<CdrRecord>,
    timeline: Timeline,
}

impl CdrStore {
    /// Validates and sorts `records`.
    ///
    /// Fails with a range error when a record lies outside M1..M6 or refers
    /// to an unknown customer, and with an argument error on self-calls or an
    /// unsorted directory.
    pub fn new(customers: Vec<String>, mut records: Vec<CdrRecord>, epoch: i64) -> Result<Self> {
        if customers.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Argument, "customer directory must be strictly sorted");
        }
        let timeline = Timeline::new(epoch);
        let window = timeline.observation();
        let n = customers.len() as u64;
        for r in &records {
            if r.caller == r.callee {
                bail!(Argument, "self-call by customer {}", r.caller);
            }
            if u64::from(r.caller) >= n || u64::from(r.callee) >= n {
                bail!(Range, "record references customer outside directory of {n}");
            }
            if !window.contains(r.start) {
                bail!(Range, "record at {} outside observation window [{}, {})", r.start, window.start, window.end);
            }
        }
        records.sort_unstable_by_key(CdrRecord::sort_key);
        Ok(CdrStore { customers, records, timeline })
    }

    pub fn records(&self) -> &[CdrRecord] {
        &self.records
    }

    pub fn customers(&self) -> &[String] {
        &self.customers
    }

    pub fn num_customers(&self) -> usize {
        self.customers.len()
    }

    pub fn timeline(&self) -> Timeline {
        self.timeline
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records whose start lies in `range`, as a contiguous slice.
    pub fn view(&self, range: TimeRange) -> &[CdrRecord] {
        let lo = self.records.partition_point(|r| r.start < range.start);
        let hi = self.records.partition_point(|r| r.start < range.end);
        &self.records[lo..hi.max(lo)]
    }

    /// Records of month `m` (1-based).
    pub fn month_view(&self, m: usize) -> &[CdrRecord] {
        self.view(self.timeline.month(m))
    }

    /// Disjoint per-month views M1..M6.
    pub fn partition_months(&self) -> [&[CdrRecord]; MONTHS] {
        core::array::from_fn(|i| self.month_view(i + 1))
    }

    /// Drops calls shorter than `min_duration` seconds.
    pub fn filter_short_calls(&self, min_duration: u32) -> CdrStore {
        CdrStore {
            customers: self.customers.clone(),
            records: self.records.iter().copied().filter(|r| r.duration >= min_duration).collect(),
            timeline: self.timeline,
        }
    }
}

/// Splits arbitrary records into the six month buckets of `timeline`.
///
/// Unlike [`CdrStore::partition_months`] the input is unchecked, so a record
/// outside M1..M6 is reported as a range error.
pub fn partition_records(records: &[CdrRecord], timeline: Timeline) -> Result<[Vec<CdrRecord>; MONTHS]> {
    let mut out: [Vec<CdrRecord>; MONTHS] = Default::default();
    for r in records {
        match timeline.month_of(r.start) {
            Some(m) => out[m - 1].push(*r),
            None => bail!(Range, "record at {} outside M1..M6", r.start),
        }
    }
    Ok(out)
}

/// Binary churn label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Class {
    NonChurner,
    Churner,
}

/// Churn labels for one labelling window: `churndate[i]` is present iff
/// customer `i` is a churner, and holds the first day of its inactivity run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChurnLabels {
    window: TimeRange,
    churndate: Vec<Option<i64>>,
}

impl ChurnLabels {
    pub fn from_churndates(window: TimeRange, churndate: Vec<Option<i64>>) -> Self {
        ChurnLabels { window, churndate }
    }

    pub fn window(&self) -> TimeRange {
        self.window
    }

    pub fn len(&self) -> usize {
        self.churndate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.churndate.is_empty()
    }

    pub fn churndate(&self, customer: CustomerId) -> Option<i64> {
        self.churndate[customer as usize]
    }

    pub fn churndates(&self) -> &[Option<i64>] {
        &self.churndate
    }

    pub fn class(&self, customer: CustomerId) -> Class {
        if self.churndate[customer as usize].is_some() {
            Class::Churner
        } else {
            Class::NonChurner
        }
    }

    pub fn is_churner(&self, customer: CustomerId) -> bool {
        self.churndate[customer as usize].is_some()
    }

    pub fn num_churners(&self) -> usize {
        self.churndate.iter().filter(|d| d.is_some()).count()
    }

    /// Customers whose churndate falls in `range`.
    pub fn churned_in(&self, range: TimeRange) -> Vec<bool> {
        self.churndate.iter().map(|d| d.is_some_and(|t| range.contains(t))).collect()
    }

    /// Customers that churned strictly before `t`.
    pub fn churned_before(&self, t: i64) -> Vec<bool> {
        self.churndate.iter().map(|d| d.is_some_and(|c| c < t)).collect()
    }
}

/// Labels churners whose first 30-day inactivity run starts inside `window`.
///
/// Activity is any appearance as caller or callee. The scan starts at
/// `window.start` and may run past `window.end` up to the end of the store's
/// observation period, so a run starting late in the window is confirmed by
/// later data. A run truncated by the end of observation counts only when it
/// already spans 30 days.
pub fn label_churn(store: &CdrStore, window: TimeRange) -> Result<ChurnLabels> {
    if window.len_seconds() < CHURN_GAP_DAYS * SECONDS_PER_DAY {
        bail!(Config, "labelling window of {} days is shorter than {CHURN_GAP_DAYS}", window.len_days());
    }
    let observed_end = store.timeline().observation().end.max(window.end);
    let window_days = window.len_days();
    let total_days = (observed_end - window.start).div_euclid(SECONDS_PER_DAY);

    let mut active: Vec<(CustomerId, i64)> = Vec::new();
    for r in store.view(TimeRange::new(window.start, observed_end)) {
        let day = (r.start - window.start).div_euclid(SECONDS_PER_DAY);
        active.push((r.caller, day));
        active.push((r.callee, day));
    }
    active.sort_unstable();
    active.dedup();

    let n = store.num_customers();
    let mut churndate = vec![None; n];
    let mut cursor = 0;
    for (customer, slot) in churndate.iter_mut().enumerate() {
        let mut prev = -1i64;
        let mut found = None;
        while cursor < active.len() && active[cursor].0 as usize == customer {
            let day = active[cursor].1;
            cursor += 1;
            if found.is_none() && day - prev > CHURN_GAP_DAYS && prev + 1 < window_days {
                found = Some(prev + 1);
            }
            prev = day;
        }
        if found.is_none() && total_days - prev > CHURN_GAP_DAYS && prev + 1 < window_days {
            found = Some(prev + 1);
        }
        *slot = found.map(|d| window.start + d * SECONDS_PER_DAY);
    }
    Ok(ChurnLabels { window, churndate })
}
