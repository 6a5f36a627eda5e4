use crate::error::{Error, Result};
use crate::readout::FrameStack;

/// Contiguous histogram of pixel values.
///
/// Bin `k` spans `[first_edge + k·bin_width, first_edge + (k+1)·bin_width)`
/// on the continuous counts axis. Histograms built from integer counts put
/// their edges on half-integers so that bin `k` holds exactly the pixels
/// whose un-rounded value fell inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    first_edge: f64,
    bin_width: f64,
    bin_counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn from_bins(first_edge: f64, bin_width: f64, bin_counts: Vec<u64>) -> Result<Self> {
        if !(bin_width > 0.0) || !first_edge.is_finite() {
            return Err(Error::invalid(
                "histogram needs a finite origin and a positive bin width",
            ));
        }
        let total = bin_counts.iter().sum();
        Ok(Histogram {
            first_edge,
            bin_width,
            bin_counts,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.bin_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_counts.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn bin_counts(&self) -> &[u64] {
        &self.bin_counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn edge(&self, k: usize) -> f64 {
        self.first_edge + k as f64 * self.bin_width
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.len()).map(|k| self.edge(k)).collect()
    }

    pub fn center(&self, k: usize) -> f64 {
        self.edge(k) + 0.5 * self.bin_width
    }

    pub fn span(&self) -> (f64, f64) {
        (self.edge(0), self.edge(self.len()))
    }

    /// Index of the most populated bin (first one on ties).
    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.bin_counts.iter().enumerate() {
            if c > self.bin_counts[best] {
                best = k;
            }
        }
        best
    }

    /// Value below which a fraction `q` of the entries lies, interpolated
    /// linearly inside the bin.
    pub fn quantile(&self, q: f64) -> f64 {
        let target = q.clamp(0.0, 1.0) * self.total as f64;
        let mut acc = 0.0;
        for (k, &c) in self.bin_counts.iter().enumerate() {
            let next = acc + c as f64;
            if next >= target && c > 0 {
                return self.edge(k) + (target - acc) / c as f64 * self.bin_width;
            }
            acc = next;
        }
        self.edge(self.len())
    }

    /// Bin-wise difference; `other` must share the binning and be contained in `self`.
    pub fn minus(&self, other: &Histogram) -> Result<Histogram> {
        if self.first_edge != other.first_edge
            || self.bin_width != other.bin_width
            || self.len() != other.len()
        {
            return Err(Error::invalid("histograms have different binnings"));
        }
        let bins = self
            .bin_counts
            .iter()
            .zip(&other.bin_counts)
            .map(|(a, b)| {
                a.checked_sub(*b)
                    .ok_or_else(|| Error::invalid("subtracted histogram is not contained"))
            })
            .collect::<Result<Vec<u64>>>()?;
        Histogram::from_bins(self.first_edge, self.bin_width, bins)
    }

    /// Mean of the binned values (bin centres).
    pub fn mean(&self) -> f64 {
        let s: f64 = self
            .bin_counts
            .iter()
            .enumerate()
            .map(|(k, &c)| c as f64 * self.center(k))
            .sum();
        s / self.total as f64
    }
}

/// Histogram of every pixel in a counts stack, `bin_width` counts per bin.
pub fn build_histogram(stack: &FrameStack, bin_width: u32) -> Result<Histogram> {
    if bin_width < 1 {
        return Err(Error::invalid("bin_width must be >= 1"));
    }
    let counts = stack.counts()?;
    let (Some(&lo), Some(&hi)) = (counts.iter().min(), counts.iter().max()) else {
        return Err(Error::EmptyStack);
    };
    let w = bin_width as usize;
    let n_bins = (hi - lo) as usize / w + 1;
    let mut bins = vec![0u64; n_bins];
    for &c in counts {
        bins[(c - lo) as usize / w] += 1;
    }
    Histogram::from_bins(lo as f64 - 0.5, bin_width as f64, bins)
}

/// Histograms of consecutive groups of frames on the binning of the whole
/// stack; `groups` are frame ranges.
pub fn build_group_histograms(
    stack: &FrameStack,
    bin_width: u32,
    groups: &[std::ops::Range<usize>],
) -> Result<(Histogram, Vec<Histogram>)> {
    let whole = build_histogram(stack, bin_width)?;
    let counts = stack.counts()?;
    let len = stack.frame_len();
    let lo = (whole.first_edge + 0.5) as usize;
    let w = bin_width as usize;
    let parts = groups
        .iter()
        .map(|r| {
            if r.end > stack.n_frames() {
                return Err(Error::invalid("frame group beyond the stack"));
            }
            let mut bins = vec![0u64; whole.len()];
            for &c in &counts[r.start * len..r.end * len] {
                bins[(c as usize - lo) / w] += 1;
            }
            Histogram::from_bins(whole.first_edge, whole.bin_width, bins)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((whole, parts))
}
