use serde::{Deserialize, Serialize};

/// Lengths of runs of consecutive dropped frames, binned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GapHistogram {
    pub one_frame: usize,
    pub two_to_thirty: usize,
    pub over_thirty: usize,
}

impl GapHistogram {
    pub fn total(&self) -> usize {
        self.one_frame + self.two_to_thirty + self.over_thirty
    }

    /// Fraction of gaps no longer than 30 frames; 1 when there are no gaps.
    pub fn fraction_up_to_30(&self) -> f64 {
        match self.total() {
            0 => 1.0,
            t => (self.one_frame + self.two_to_thirty) as f64 / t as f64,
        }
    }
}

/// Bins runs of consecutive frame indices. Order and duplicates in the input are ignored.
pub fn gap_statistics(dropped: &[i64]) -> GapHistogram {
    let mut f = dropped.to_vec();
    f.sort_unstable();
    f.dedup();
    let mut h = GapHistogram::default();
    let mut i = 0;
    while i < f.len() {
        let mut j = i;
        while j + 1 < f.len() && f[j + 1] == f[j] + 1 {
            j += 1;
        }
        match j - i + 1 {
            1 => h.one_frame += 1,
            2..=30 => h.two_to_thirty += 1,
            _ => h.over_thirty += 1,
        }
        i = j + 1;
    }
    h
}
