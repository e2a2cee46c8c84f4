//! Backward rules, one per recorded [`Op`].

use alloc::vec;
use alloc::vec::Vec;

use super::ops::{inverse_permutation, permute_data, sigmoid};
use super::tape::{Node, Op};

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn elementwise(nodes: &[Node], grads: &mut [Option<Vec<f64>>], a: usize, g: &[f64], d: impl Fn(usize) -> f64) {
    if let Some(ga) = slot(grads, nodes, a) {
        ga.iter_mut()
            .zip(g)
            .enumerate()
            .for_each(|(i, (x, gi))| *x += gi * d(i));
    }
}

pub(crate) fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b, plan) | Op::Sub(a, b, plan) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let (na, nb) = (nodes[*a].value.len(), nodes[*b].value.len());
            if let Some(ga) = slot(grads, nodes, *a) {
                plan.for_each(na, nb, g.len(), |o, i, _| ga[i] += g[o]);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                plan.for_each(na, nb, g.len(), |o, _, j| gb[j] += sign * g[o]);
            }
        }
        Op::Mul(a, b, plan) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if let Some(ga) = slot(grads, nodes, *a) {
                plan.for_each(av.len(), bv.len(), g.len(), |o, i, j| ga[i] += g[o] * bv[j]);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                plan.for_each(av.len(), bv.len(), g.len(), |o, i, j| gb[j] += g[o] * av[i]);
            }
        }
        Op::Div(a, b, plan) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if let Some(ga) = slot(grads, nodes, *a) {
                plan.for_each(av.len(), bv.len(), g.len(), |o, i, j| ga[i] += g[o] / bv[j]);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                plan.for_each(av.len(), bv.len(), g.len(), |o, i, j| {
                    gb[j] -= g[o] * av[i] / (bv[j] * bv[j])
                });
            }
        }
        Op::Scale(a, f) => elementwise(nodes, grads, *a, g, |_| *f),
        Op::Offset(a) | Op::Reshape(a) => elementwise(nodes, grads, *a, g, |_| 1.0),
        Op::Exp(a) => elementwise(nodes, grads, *a, g, |i| y[i]),
        Op::Log(a) => {
            let x = &nodes[*a].value;
            elementwise(nodes, grads, *a, g, |i| 1.0 / x[i])
        }
        Op::Sigmoid(a) => elementwise(nodes, grads, *a, g, |i| y[i] * (1.0 - y[i])),
        Op::Softplus(a) => {
            let x = &nodes[*a].value;
            elementwise(nodes, grads, *a, g, |i| sigmoid(x[i]))
        }
        Op::Tanh(a) => elementwise(nodes, grads, *a, g, |i| 1.0 - y[i] * y[i]),
        Op::Relu(a) => {
            let x = &nodes[*a].value;
            elementwise(nodes, grads, *a, g, |i| if x[i] > 0.0 { 1.0 } else { 0.0 })
        }
        Op::LeakyRelu(a, slope) => {
            let x = &nodes[*a].value;
            elementwise(nodes, grads, *a, g, |i| if x[i] > 0.0 { 1.0 } else { *slope })
        }
        Op::Sqrt(a) => elementwise(nodes, grads, *a, g, |i| 0.5 / y[i]),
        Op::Sum(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::SumAxis { a, outer, len, inner } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for o in 0..*outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for l in 0..*len {
                        let dst = &mut ga[(o * len + l) * inner..(o * len + l + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
            }
        }
        Op::MatMul(d) => {
            let (av, bv) = (&nodes[d.a].value, &nodes[d.b].value);
            let (m, k, n) = (d.m, d.k, d.n);
            if let Some(ga) = slot(grads, nodes, d.a) {
                for bi in 0..d.batch {
                    let ao = if d.a_batched { bi * m * k } else { 0 };
                    let bo = if d.b_batched { bi * k * n } else { 0 };
                    let gc = &g[bi * m * n..(bi + 1) * m * n];
                    for i in 0..m {
                        let grow = &gc[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[bo + p * n..bo + (p + 1) * n];
                            ga[ao + i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, d.b) {
                for bi in 0..d.batch {
                    let ao = if d.a_batched { bi * m * k } else { 0 };
                    let bo = if d.b_batched { bi * k * n } else { 0 };
                    let gc = &g[bi * m * n..(bi + 1) * m * n];
                    for i in 0..m {
                        let grow = &gc[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[ao + i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[bo + p * n..bo + (p + 1) * n];
                            dst.iter_mut().zip(grow).for_each(|(d, x)| *d += aip * x);
                        }
                    }
                }
            }
        }
        Op::Softmax(a) => {
            let w = node.shape.last().copied().unwrap_or(1).max(1);
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((yr, gr), dst) in y.chunks(w).zip(g.chunks(w)).zip(ga.chunks_mut(w)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, yi), gi) in dst.iter_mut().zip(yr).zip(gr) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        }
        Op::LogSoftmax(a) => {
            let w = node.shape.last().copied().unwrap_or(1).max(1);
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((yr, gr), dst) in y.chunks(w).zip(g.chunks(w)).zip(ga.chunks_mut(w)) {
                    let total: f64 = gr.iter().sum();
                    for ((d, yi), gi) in dst.iter_mut().zip(yr).zip(gr) {
                        *d += gi - libm::exp(*yi) * total;
                    }
                }
            }
        }
        Op::LogSumExp(a) => {
            let x = &nodes[*a].value;
            let w = nodes[*a].shape.last().copied().unwrap_or(1).max(1);
            if let Some(ga) = slot(grads, nodes, *a) {
                for (r, (xr, dst)) in x.chunks(w).zip(ga.chunks_mut(w)).enumerate() {
                    for (d, xi) in dst.iter_mut().zip(xr) {
                        *d += g[r] * libm::exp(xi - y[r]);
                    }
                }
            }
        }
        Op::LayerNorm { a, inv_std } => {
            let w = node.shape.last().copied().unwrap_or(1).max(1);
            if let Some(ga) = slot(grads, nodes, *a) {
                for (r, ((yr, gr), dst)) in y.chunks(w).zip(g.chunks(w)).zip(ga.chunks_mut(w)).enumerate() {
                    let mg = gr.iter().sum::<f64>() / w as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                    for ((d, yi), gi) in dst.iter_mut().zip(yr).zip(gr) {
                        *d += inv_std[r] * (gi - mg - yi * mgy);
                    }
                }
            }
        }
        Op::Concat { inputs, outer, widths } => {
            let row: usize = widths.iter().sum();
            let mut offset = 0;
            for (&inp, &w) in inputs.iter().zip(widths) {
                if let Some(gi) = slot(grads, nodes, inp) {
                    for o in 0..*outer {
                        let src = &g[o * row + offset..o * row + offset + w];
                        gi[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                offset += w;
            }
        }
        Op::Slice {
            a,
            outer,
            width_in,
            start,
            width,
        } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for o in 0..*outer {
                    let src = &g[o * width..(o + 1) * width];
                    let base = o * width_in + start;
                    ga[base..base + width].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
        }
        Op::Permute { a, perm } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                let back = permute_data(g, &node.shape, &inverse_permutation(perm));
                ga.iter_mut().zip(&back).for_each(|(d, s)| *d += s);
            }
        }
        Op::MaskedFill { a, mask } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for (i, (d, gi)) in ga.iter_mut().zip(g).enumerate() {
                    if !mask[i % mask.len()] {
                        *d += gi;
                    }
                }
            }
        }
        Op::Gather {
            a,
            outer,
            len,
            inner,
            index,
        } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                let count = index.len() / outer.max(&1);
                for o in 0..*outer {
                    for (c, &i) in index[o * count..(o + 1) * count].iter().enumerate() {
                        let src = &g[(o * count + c) * inner..(o * count + c + 1) * inner];
                        let base = (o * len + i) * inner;
                        ga[base..base + inner].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
            }
        }
    }
}
