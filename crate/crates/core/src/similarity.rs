//! Dynamic time warping and DTW-based source selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{standardize, RttTrace};
use crate::transfer::{LibraryEntry, ModelLibrary};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    pub cost: f64,
    /// Cells on the optimal warping path. Ties prefer the shorter path.
    pub path_length: usize,
    /// `cost / (len a + len b)`.
    pub normalized: f64,
}

/// Full-grid DTW with local cost `|a_i - b_j|` and unit steps.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<DtwResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("DTW needs two non-empty series".into()));
    }
    let m = b.len();
    let mut prev: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); m];
    let mut cur: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); m];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            let local = (x - y).abs();
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                if i > 0 {
                    best = min_step(best, prev[j]);
                }
                if j > 0 {
                    best = min_step(best, cur[j - 1]);
                }
                if i > 0 && j > 0 {
                    best = min_step(best, prev[j - 1]);
                }
                best
            };
            cur[j] = (best.0 + local, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, path_length) = prev[m - 1];
    Ok(DtwResult {
        cost,
        path_length,
        normalized: cost / (a.len() + b.len()) as f64,
    })
}

fn min_step(best: (f64, usize), cand: (f64, usize)) -> (f64, usize) {
    if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
        cand
    } else {
        best
    }
}

/// Chosen library entry and the distances to every entry, in library order.
#[derive(Clone, Debug)]
pub struct Selection<'a> {
    pub entry: &'a LibraryEntry,
    pub index: usize,
    pub distance: DtwResult,
    pub distances: Vec<(String, DtwResult)>,
}

/// Picks the entry whose standardized fingerprint is closest to the standardized
/// target under normalized DTW. The earliest entry wins ties.
pub fn select_source<'a>(library: &'a ModelLibrary, target: &RttTrace) -> Result<Selection<'a>> {
    if library.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let (z, _) = standardize(target.samples())?;
    let mut distances = Vec::with_capacity(library.len());
    let mut best: Option<(usize, DtwResult)> = None;
    for (index, entry) in library.entries().iter().enumerate() {
        let d = dtw(&z, &entry.fingerprint)?;
        if best.is_none_or(|(_, b)| d.normalized < b.normalized) {
            best = Some((index, d));
        }
        distances.push((entry.label().to_string(), d));
    }
    let (index, distance) = best.expect("library is non-empty");
    Ok(Selection {
        entry: &library.entries()[index],
        index,
        distance,
        distances,
    })
}
