use super::FmIndex;
use crate::error::{Error, Result};

/// Row correspondence between the index of `R` and the index of `reverse(R)`.
///
/// `r2f[i]` is the forward row whose suffix starts at the same character of
/// `R` as the reverse suffix at row `i` (the reverse suffix at position `q`
/// starts with `R[n - 1 - q]`). The two terminator rows map to each other.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrespondenceTables {
    r2f: Vec<u32>,
    f2r: Vec<u32>,
}

impl CorrespondenceTables {
    pub fn build(fm: &FmIndex, fm_rev: &FmIndex) -> Result<Self> {
        let n = fm.text_len();
        if fm_rev.text_len() != n {
            return Err(Error::InvalidArgument(format!(
                "reference index lengths differ: {n} vs {}",
                fm_rev.text_len()
            )));
        }
        let fwd = rows_by_position(fm);
        let rev = rows_by_position(fm_rev);
        let mut r2f = vec![0u32; n + 1];
        let mut f2r = vec![0u32; n + 1];
        for q in 0..n {
            r2f[rev[q] as usize] = fwd[n - 1 - q];
            f2r[fwd[n - 1 - q] as usize] = rev[q];
        }
        Ok(CorrespondenceTables { r2f, f2r })
    }

    pub(crate) fn from_parts(r2f: Vec<u32>, f2r: Vec<u32>) -> Result<Self> {
        let t = CorrespondenceTables { r2f, f2r };
        if t.r2f.len() != t.f2r.len() || t.r2f.iter().enumerate().any(|(i, &f)| t.f2r.get(f as usize) != Some(&(i as u32))) {
            return Err(Error::corrupt("correspondence tables are not mutually inverse"));
        }
        Ok(t)
    }

    #[inline]
    pub fn r2f(&self, rev_row: usize) -> usize {
        self.r2f[rev_row] as usize
    }

    #[inline]
    pub fn f2r(&self, fwd_row: usize) -> usize {
        self.f2r[fwd_row] as usize
    }

    pub fn len(&self) -> usize {
        self.r2f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r2f.is_empty()
    }

    pub fn r2f_table(&self) -> &[u32] {
        &self.r2f
    }

    pub fn f2r_table(&self) -> &[u32] {
        &self.f2r
    }
}

/// Inverse suffix array computed by an LF walk from the terminator row.
fn rows_by_position(fm: &FmIndex) -> Vec<u32> {
    let n = fm.text_len();
    let mut rows = vec![0u32; n + 1];
    let mut row = 0usize;
    for p in (0..n).rev() {
        row = fm.lf(row);
        rows[p] = row as u32;
    }
    rows
}
