//! Plain loop kernels shared by the forward and backward passes.

/// `out[r×c] += a[r×k] · b[k×c]`
pub(crate) fn mm_nn(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let o = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (ov, &bv) in o.iter_mut().zip(&b[p * c..(p + 1) * c]) {
                *ov += av * bv;
            }
        }
    }
}

/// `out[r×c] += a[r×k] · b[c×k]ᵀ`
pub(crate) fn mm_nt(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    // Transposing b first keeps the inner loop a contiguous axpy.
    let mut bt = vec![0.0; k * c];
    for j in 0..c {
        for p in 0..k {
            bt[p * c + j] = b[j * k + p];
        }
    }
    mm_nn(a, &bt, out, r, k, c);
}

/// `out[k×c] += a[r×k]ᵀ · b[r×c]`
pub(crate) fn mm_tn(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let br = &b[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (ov, &bv) in out[p * c..(p + 1) * c].iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Moves between the merged `[batch·seq, heads·dh]` layout and the split
/// `[batch·heads, seq, dh]` layout. `split` selects the direction.
pub(crate) fn permute_heads(
    src: &[f64],
    dst: &mut [f64],
    batch: usize,
    seq: usize,
    heads: usize,
    dh: usize,
    split: bool,
) {
    let d = heads * dh;
    for b in 0..batch {
        for t in 0..seq {
            for h in 0..heads {
                let merged = (b * seq + t) * d + h * dh;
                let per_head = ((b * heads + h) * seq + t) * dh;
                let (from, to) = if split {
                    (merged, per_head)
                } else {
                    (per_head, merged)
                };
                dst[to..to + dh].copy_from_slice(&src[from..from + dh]);
            }
        }
    }
}
