//! Slice-level compute kernels shared by the graph ops.
//!
//! Inner loops are written in axpy form or with a fixed 8-lane
//! accumulator so results do not depend on vector width.

use crate::tensor::Element;

#[inline]
pub(crate) fn axpy<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}

#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] = acc[j] + xa[j] * xb[j];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s = s + x * y;
    }
    s
}

/// Four axpys sharing one `x`: `ys[j] += w[j] * x`.
#[inline]
pub(crate) fn axpy4<T: Element>(w: [T; 4], x: &[T], ys: &mut [T]) {
    let len = x.len();
    debug_assert_eq!(ys.len(), 4 * len);
    let (y0, rest) = ys.split_at_mut(len);
    let (y1, rest) = rest.split_at_mut(len);
    let (y2, y3) = rest.split_at_mut(len);
    for t in 0..len {
        let xv = x[t];
        y0[t] = y0[t] + w[0] * xv;
        y1[t] = y1[t] + w[1] * xv;
        y2[t] = y2[t] + w[2] * xv;
        y3[t] = y3[t] + w[3] * xv;
    }
}

/// `a` dotted with four consecutive rows of `bs`; each result is bitwise
/// equal to [`dot`] on that row.
#[inline]
pub(crate) fn dot4<T: Element>(a: &[T], bs: &[T]) -> [T; 4] {
    let len = a.len();
    debug_assert_eq!(bs.len(), 4 * len);
    let rows = [&bs[..len], &bs[len..2 * len], &bs[2 * len..3 * len], &bs[3 * len..]];
    let mut acc = [[T::zero(); 8]; 4];
    let full = len - len % 8;
    let mut t = 0;
    while t < full {
        for (r, row) in rows.iter().enumerate() {
            for j in 0..8 {
                acc[r][j] = acc[r][j] + a[t + j] * row[t + j];
            }
        }
        t += 8;
    }
    let mut out = [T::zero(); 4];
    for (r, row) in rows.iter().enumerate() {
        let c = &acc[r];
        let mut s = ((c[0] + c[1]) + (c[2] + c[3])) + ((c[4] + c[5]) + (c[6] + c[7]));
        for t in full..len {
            s = s + a[t] * row[t];
        }
        out[r] = s;
    }
    out
}

#[inline]
pub(crate) fn sum<T: Element>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let c = a.chunks_exact(8);
    let r = c.remainder();
    for x in c {
        for j in 0..8 {
            acc[j] = acc[j] + x[j];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for &x in r {
        s = s + x;
    }
    s
}

/// Mirror index without repeating the edge sample; valid for `len >= 2`.
#[inline]
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    if (0..n).contains(&i) {
        return i as usize;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Source index for padded position `j`, or `None` for a zero sample.
#[inline]
pub(crate) fn pad_source(j: usize, pad: usize, len: usize, reflect: bool) -> Option<usize> {
    let s = j as isize - pad as isize;
    if (0..len as isize).contains(&s) {
        Some(s as usize)
    } else if reflect {
        Some(reflect_index(s, len))
    } else {
        None
    }
}

pub(crate) fn fill_padded<T: Element>(row: &[T], pad: usize, reflect: bool, out: &mut [T]) {
    debug_assert_eq!(out.len(), row.len() + 2 * pad);
    let len = row.len();
    out[pad..pad + len].copy_from_slice(row);
    for j in (0..pad).chain(pad + len..len + 2 * pad) {
        out[j] = pad_source(j, pad, len, reflect).map_or(T::zero(), |s| row[s]);
    }
}

/// Adds the gradient of a padded row back onto the unpadded row.
pub(crate) fn fold_padded<T: Element>(gpad: &[T], pad: usize, reflect: bool, drow: &mut [T]) {
    let len = drow.len();
    for (d, &g) in drow.iter_mut().zip(&gpad[pad..pad + len]) {
        *d = *d + g;
    }
    for j in (0..pad).chain(pad + len..len + 2 * pad) {
        if let Some(s) = pad_source(j, pad, len, reflect) {
            drow[s] = drow[s] + gpad[j];
        }
    }
}
