use alloc::vec;
use alloc::vec::Vec;

use super::tensor::numel;

/// Index mapping from an output element to the two operand elements of a
/// broadcasting binary op.
#[derive(Clone, Debug)]
pub(crate) enum Broadcast {
    Same,
    /// `a` repeats with period `numel(a)` (trailing-dims match).
    RepeatA,
    RepeatB,
    /// Each element of `a` covers `inner` consecutive outputs.
    SpreadA(usize),
    SpreadB(usize),
    General {
        out: Vec<usize>,
        a_strides: Vec<usize>,
        b_strides: Vec<usize>,
    },
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn strip_leading_ones(s: &[usize]) -> &[usize] {
    let k = s.iter().take_while(|&&d| d == 1).count();
    &s[k..]
}

fn strip_trailing_ones(s: &[usize]) -> &[usize] {
    let k = s.iter().rev().take_while(|&&d| d == 1).count();
    &s[..s.len() - k]
}

/// `s` (right-aligned against `out`) equals the trailing dims of `out`.
fn is_trailing(s: &[usize], out: &[usize]) -> bool {
    let s = strip_leading_ones(s);
    s.len() <= out.len() && out[out.len() - s.len()..] == *s
}

/// `s` equals leading dims of `out` followed by ones; returns the inner size.
fn leading_inner(s: &[usize], out: &[usize]) -> Option<usize> {
    if s.len() != out.len() {
        return None;
    }
    let core = strip_trailing_ones(s);
    if out[..core.len()] == *core {
        Some(numel(&out[core.len()..]))
    } else {
        None
    }
}

fn aligned_strides(s: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let mut strides = vec![0; nd];
    let mut acc = 1;
    for i in (0..s.len()).rev() {
        let o = i + nd - s.len();
        strides[o] = if s[i] == 1 { 0 } else { acc };
        acc *= s[i];
    }
    strides
}

impl Broadcast {
    pub(crate) fn plan(a: &[usize], b: &[usize], out: &[usize]) -> Broadcast {
        let (na, nb, no) = (numel(a), numel(b), numel(out));
        if na == no && nb == no {
            return Broadcast::Same;
        }
        if na == no {
            if is_trailing(b, out) {
                return Broadcast::RepeatB;
            }
            if let Some(inner) = leading_inner(b, out) {
                return Broadcast::SpreadB(inner);
            }
        }
        if nb == no {
            if is_trailing(a, out) {
                return Broadcast::RepeatA;
            }
            if let Some(inner) = leading_inner(a, out) {
                return Broadcast::SpreadA(inner);
            }
        }
        Broadcast::General {
            out: out.to_vec(),
            a_strides: aligned_strides(a, out),
            b_strides: aligned_strides(b, out),
        }
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element, in order.
    #[inline]
    pub(crate) fn for_each(&self, na: usize, nb: usize, no: usize, mut f: impl FnMut(usize, usize, usize)) {
        match self {
            Broadcast::Same => (0..no).for_each(|o| f(o, o, o)),
            Broadcast::RepeatA => (0..no).for_each(|o| f(o, o % na, o)),
            Broadcast::RepeatB => (0..no).for_each(|o| f(o, o, o % nb)),
            Broadcast::SpreadA(inner) => (0..no).for_each(|o| f(o, o / inner, o)),
            Broadcast::SpreadB(inner) => (0..no).for_each(|o| f(o, o, o / inner)),
            Broadcast::General {
                out,
                a_strides,
                b_strides,
            } => {
                let nd = out.len();
                let mut idx = vec![0usize; nd];
                let (mut ia, mut ib) = (0usize, 0usize);
                for o in 0..no {
                    f(o, ia, ib);
                    // odometer increment
                    let mut d = nd;
                    while d > 0 {
                        d -= 1;
                        idx[d] += 1;
                        ia += a_strides[d];
                        ib += b_strides[d];
                        if idx[d] < out[d] {
                            break;
                        }
                        ia -= a_strides[d] * out[d];
                        ib -= b_strides[d] * out[d];
                        idx[d] = 0;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(a: &[usize], b: &[usize]) -> Vec<(usize, usize, usize)> {
        let out = broadcast_shape(a, b).unwrap();
        let plan = Broadcast::plan(a, b, &out);
        let general = Broadcast::General {
            out: out.clone(),
            a_strides: aligned_strides(a, &out),
            b_strides: aligned_strides(b, &out),
        };
        let mut fast = Vec::new();
        plan.for_each(numel(a), numel(b), numel(&out), |o, x, y| fast.push((o, x, y)));
        let mut slow = Vec::new();
        general.for_each(numel(a), numel(b), numel(&out), |o, x, y| slow.push((o, x, y)));
        assert_eq!(fast, slow);
        fast
    }

    #[test]
    fn fast_paths_agree_with_general_strides() {
        pairs(&[2, 3], &[2, 3]);
        pairs(&[4, 2, 3], &[2, 3]);
        pairs(&[2, 3], &[1, 3]);
        pairs(&[5, 1], &[5, 4]);
        pairs(&[3, 1, 2], &[4, 1]);
        pairs(&[], &[3, 2]);
    }

    #[test]
    fn incompatible_shapes_have_no_broadcast() {
        assert!(broadcast_shape(&[2, 3], &[3, 2]).is_none());
        assert_eq!(broadcast_shape(&[3, 1, 2], &[4, 1]).unwrap(), vec![3, 4, 2]);
    }
}
