//! Suffix array construction by prefix doubling with counting sorts.

/// Suffix array of `text` followed by a virtual terminator that sorts before
/// every symbol. The result has `text.len() + 1` entries; entry 0 is always
/// `text.len()`, the terminator suffix.
pub fn build_suffix_array(text: &[u8]) -> Vec<u32> {
    let n = text.len() + 1;
    assert!(n <= u32::MAX as usize, "text too long for 32-bit suffix array");

    // rank 0 is reserved for the terminator
    let mut rank: Vec<u32> = text.iter().map(|&b| b as u32 + 1).chain(std::iter::once(0)).collect();
    let mut sa: Vec<u32> = Vec::with_capacity(n);
    {
        let mut counts = vec![0usize; 258];
        for &r in &rank {
            counts[r as usize + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        sa.resize(n, 0);
        for (i, &r) in rank.iter().enumerate() {
            sa[counts[r as usize]] = i as u32;
            counts[r as usize] += 1;
        }
    }
    let mut max_rank = relabel(&sa, &mut rank, |a, b, rank| rank[a] == rank[b]);

    let mut tmp = vec![0u32; n];
    let mut counts = vec![0usize; n + 1];
    let mut k = 1usize;
    while (max_rank as usize) < n - 1 {
        // order by the second key (rank[i + k]); suffixes running past the end come first
        let mut w = 0;
        for i in (n - k.min(n))..n {
            tmp[w] = i as u32;
            w += 1;
        }
        for &j in &sa {
            if j as usize >= k {
                tmp[w] = j - k as u32;
                w += 1;
            }
        }
        // stable counting sort by the first key
        counts[..=max_rank as usize + 1].iter_mut().for_each(|c| *c = 0);
        for &r in &rank {
            counts[r as usize + 1] += 1;
        }
        for i in 1..=max_rank as usize + 1 {
            counts[i] += counts[i - 1];
        }
        for &i in &tmp {
            let r = rank[i as usize] as usize;
            sa[counts[r]] = i;
            counts[r] += 1;
        }
        let kk = k;
        max_rank = relabel(&sa, &mut rank, |a, b, rank| {
            rank[a] == rank[b] && second(rank, a, kk) == second(rank, b, kk)
        });
        k *= 2;
    }
    sa
}

fn second(rank: &[u32], i: usize, k: usize) -> Option<u32> {
    rank.get(i + k).copied()
}

/// Reassigns dense ranks in `sa` order; returns the largest rank.
fn relabel(sa: &[u32], rank: &mut [u32], same: impl Fn(usize, usize, &[u32]) -> bool) -> u32 {
    let mut fresh = vec![0u32; sa.len()];
    let mut r = 0u32;
    for w in 1..sa.len() {
        let (a, b) = (sa[w - 1] as usize, sa[w] as usize);
        if !same(a, b, rank) {
            r += 1;
        }
        fresh[b] = r;
    }
    fresh[sa[0] as usize] = 0;
    rank.copy_from_slice(&fresh);
    r
}

#[cfg(test)]
pub(crate) fn naive_suffix_array(text: &[u8]) -> Vec<u32> {
    let n = text.len();
    let mut sa: Vec<u32> = (0..=n as u32).collect();
    // the terminator compares smaller than any symbol, so a proper prefix sorts first
    sa.sort_by(|&a, &b| text[a as usize..].cmp(&text[b as usize..]));
    sa
}
