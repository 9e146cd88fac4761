//! Affine-gap global alignment (Gotoh) over an abstract column score.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    Match,
    /// Item of the first sequence against a gap.
    GapInB,
    /// Item of the second sequence against a gap.
    GapInA,
}

const NEG: f64 = f64::NEG_INFINITY;

/// Returns the optimal score and the edit path. Ties resolve in the order
/// match, gap-in-b, gap-in-a so results are reproducible.
pub(crate) fn gotoh(
    n: usize,
    m: usize,
    sub: impl Fn(usize, usize) -> f64,
    open: f64,
    extend: f64,
) -> (f64, Vec<Op>) {
    let w = m + 1;
    let idx = |i: usize, j: usize| i * w + j;
    let size = (n + 1) * w;
    let mut mm = vec![NEG; size];
    let mut xg = vec![NEG; size];
    let mut yg = vec![NEG; size];
    // Best predecessor state for each of the three matrices.
    let mut tm = vec![0u8; size];
    let mut tx = vec![0u8; size];
    let mut ty = vec![0u8; size];
    mm[0] = 0.0;
    for i in 1..=n {
        xg[idx(i, 0)] = open + (i as f64 - 1.0) * extend;
        tx[idx(i, 0)] = if i == 1 { 0 } else { 1 };
    }
    for j in 1..=m {
        yg[idx(0, j)] = open + (j as f64 - 1.0) * extend;
        ty[idx(0, j)] = if j == 1 { 0 } else { 2 };
    }
    for i in 1..=n {
        for j in 1..=m {
            let here = idx(i, j);
            let d = idx(i - 1, j - 1);
            let (v, from) = argmax3(mm[d], xg[d], yg[d]);
            mm[here] = sub(i - 1, j - 1) + v;
            tm[here] = from;
            let u = idx(i - 1, j);
            let (v, from) = argmax3(mm[u] + open, xg[u] + extend, yg[u] + open);
            xg[here] = v;
            tx[here] = from;
            let l = idx(i, j - 1);
            let (v, from) = argmax3(mm[l] + open, xg[l] + open, yg[l] + extend);
            yg[here] = v;
            ty[here] = from;
        }
    }

    let end = idx(n, m);
    let (best, mut state) = argmax3(mm[end], xg[end], yg[end]);
    let (mut i, mut j) = (n, m);
    let mut ops = Vec::with_capacity(n + m);
    while i > 0 || j > 0 {
        let here = idx(i, j);
        match state {
            0 => {
                ops.push(Op::Match);
                state = tm[here];
                i -= 1;
                j -= 1;
            }
            1 => {
                ops.push(Op::GapInB);
                state = tx[here];
                i -= 1;
            }
            _ => {
                ops.push(Op::GapInA);
                state = ty[here];
                j -= 1;
            }
        }
    }
    ops.reverse();
    (best, ops)
}

/// Maximum of (match, gap-in-b, gap-in-a) with that tie order.
#[inline]
fn argmax3(m: f64, x: f64, y: f64) -> (f64, u8) {
    if m >= x && m >= y {
        (m, 0)
    } else if x >= y {
        (x, 1)
    } else {
        (y, 2)
    }
}
