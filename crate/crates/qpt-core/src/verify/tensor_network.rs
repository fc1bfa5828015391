//! Dense tensor networks, their contraction, and the Frobenius product bound.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{complex_gaussian, C64};

/// Dense complex tensor stored row-major over its index dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<C64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: data.len() });
        }
        Ok(Self { dims, data })
    }

    /// Rank-0 tensor holding `value`.
    pub fn scalar(value: C64) -> Self {
        Self { dims: Vec::new(), data: vec![value] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    fn strides(dims: &[usize]) -> Vec<usize> {
        let mut s = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * dims[k + 1];
        }
        s
    }

    /// Reorders indices so that new index `k` is old index `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor {
        let old_strides = Self::strides(&self.dims);
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0; dims.len()];
        for _ in 0..self.data.len() {
            let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
            increment(&mut idx, &dims);
        }
        Tensor { dims, data }
    }

    /// Sums over the diagonal of indices `a` and `b`.
    fn trace_pair(&self, a: usize, b: usize) -> Tensor {
        let keep: Vec<usize> = (0..self.order()).filter(|&k| k != a && k != b).collect();
        let strides = Self::strides(&self.dims);
        let dims: Vec<usize> = keep.iter().map(|&k| self.dims[k]).collect();
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0; dims.len()];
        for _ in 0..len {
            let base: usize = idx.iter().zip(&keep).map(|(i, &k)| i * strides[k]).sum();
            let mut acc = C64::new(0.0, 0.0);
            for d in 0..self.dims[a] {
                acc += self.data[base + d * (strides[a] + strides[b])];
            }
            data.push(acc);
            increment(&mut idx, &dims);
        }
        Tensor { dims, data }
    }
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Contracts index `pairs[k].0` of `a` with index `pairs[k].1` of `b`. The
/// result carries the free indices of `a` followed by those of `b`.
pub fn tensordot(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
    for &(i, j) in pairs {
        if i >= a.order() || j >= b.order() {
            return Err(invalid("tensordot index out of range"));
        }
        if a.dims[i] != b.dims[j] {
            return Err(Error::DimensionMismatch { expected: a.dims[i], found: b.dims[j] });
        }
    }
    let free_a: Vec<usize> = (0..a.order()).filter(|k| !pairs.iter().any(|p| p.0 == *k)).collect();
    let free_b: Vec<usize> = (0..b.order()).filter(|k| !pairs.iter().any(|p| p.1 == *k)).collect();
    let con_a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let con_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    // Bring both operands into matrix form and multiply.
    let perm_a: Vec<usize> = free_a.iter().chain(&con_a).copied().collect();
    let perm_b: Vec<usize> = con_b.iter().chain(&free_b).copied().collect();
    let at = a.permute(&perm_a);
    let bt = b.permute(&perm_b);
    let rows: usize = free_a.iter().map(|&k| a.dims[k]).product();
    let inner: usize = con_a.iter().map(|&k| a.dims[k]).product();
    let cols: usize = free_b.iter().map(|&k| b.dims[k]).product();
    let mut data = vec![C64::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        let out = &mut data[r * cols..(r + 1) * cols];
        for s in 0..inner {
            let x = at.data[r * inner + s];
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            for (o, y) in out.iter_mut().zip(&bt.data[s * cols..(s + 1) * cols]) {
                *o += x * y;
            }
        }
    }
    let dims = free_a.iter().map(|&k| a.dims[k]).chain(free_b.iter().map(|&k| b.dims[k])).collect();
    Tensor::new(dims, data)
}

/// Address of an index: `(tensor, index)`.
pub type Leg = (usize, usize);

/// Tensors plus a pairing of their indices.
#[derive(Clone, Debug)]
pub struct TensorNetwork {
    tensors: Vec<Tensor>,
    pairs: Vec<(Leg, Leg)>,
    allow_self_contractions: bool,
}

impl TensorNetwork {
    /// Validates that paired dimensions agree, each index is used at most once,
    /// and self-contractions appear only when allowed.
    pub fn new(tensors: Vec<Tensor>, pairs: Vec<(Leg, Leg)>, allow_self_contractions: bool) -> Result<Self> {
        let mut used: Vec<Vec<bool>> = tensors.iter().map(|t| vec![false; t.order()]).collect();
        for &(a, b) in &pairs {
            for &(t, i) in &[a, b] {
                if t >= tensors.len() || i >= tensors[t].order() {
                    return Err(invalid(format!("leg ({t}, {i}) does not exist")));
                }
                if used[t][i] {
                    return Err(invalid(format!("leg ({t}, {i}) appears in more than one pair")));
                }
                used[t][i] = true;
            }
            if tensors[a.0].dims[a.1] != tensors[b.0].dims[b.1] {
                return Err(Error::DimensionMismatch { expected: tensors[a.0].dims[a.1], found: tensors[b.0].dims[b.1] });
            }
            if a.0 == b.0 && !allow_self_contractions {
                return Err(invalid(format!("self-contraction on tensor {}", a.0)));
            }
        }
        Ok(Self { tensors, pairs, allow_self_contractions })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn pairs(&self) -> &[(Leg, Leg)] {
        &self.pairs
    }

    pub fn has_self_contractions(&self) -> bool {
        self.pairs.iter().any(|(a, b)| a.0 == b.0)
    }

    pub fn allows_self_contractions(&self) -> bool {
        self.allow_self_contractions
    }

    /// Open legs in `(tensor, index)` order.
    pub fn open_legs(&self) -> Vec<Leg> {
        let mut out = Vec::new();
        for (t, tensor) in self.tensors.iter().enumerate() {
            for i in 0..tensor.order() {
                if !self.pairs.iter().any(|&(a, b)| a == (t, i) || b == (t, i)) {
                    out.push((t, i));
                }
            }
        }
        out
    }
}

/// Contracts the network by absorbing one tensor at a time, preferring tensors
/// connected to what has been absorbed. Open indices of the result are ordered
/// as in [`TensorNetwork::open_legs`].
pub fn contract_network(tn: &TensorNetwork) -> Result<Tensor> {
    let k = tn.tensors.len();
    if k == 0 {
        return Ok(Tensor::scalar(C64::new(1.0, 0.0)));
    }
    let partner = |leg: Leg| -> Option<Leg> {
        tn.pairs.iter().find_map(|&(a, b)| if a == leg { Some(b) } else if b == leg { Some(a) } else { None })
    };

    // Apply self-contractions tensor by tensor, tracking surviving legs.
    let mut pieces: Vec<(Tensor, Vec<Leg>)> = Vec::with_capacity(k);
    for (t, tensor) in tn.tensors.iter().enumerate() {
        let mut cur = tensor.clone();
        let mut legs: Vec<Leg> = (0..tensor.order()).map(|i| (t, i)).collect();
        while let Some(pos) = legs.iter().position(|&l| partner(l).is_some_and(|p| p.0 == t)) {
            let other = legs.iter().position(|&l| Some(l) == partner(legs[pos])).expect("paired leg present");
            cur = cur.trace_pair(pos, other);
            let (hi, lo) = (pos.max(other), pos.min(other));
            legs.remove(hi);
            legs.remove(lo);
        }
        pieces.push((cur, legs));
    }

    let mut absorbed = vec![false; k];
    absorbed[0] = true;
    let (mut cur, mut legs) = pieces[0].clone();
    for _ in 1..k {
        let next = (0..k)
            .find(|&t| !absorbed[t] && legs.iter().any(|&l| partner(l).is_some_and(|p| p.0 == t)))
            .or_else(|| (0..k).find(|&t| !absorbed[t]))
            .expect("an unabsorbed tensor remains");
        absorbed[next] = true;
        let (ref t_next, ref legs_next) = pieces[next];
        let mut dot = Vec::new();
        for (i, &l) in legs.iter().enumerate() {
            if let Some(p) = partner(l) {
                if let Some(j) = legs_next.iter().position(|&q| q == p) {
                    dot.push((i, j));
                }
            }
        }
        cur = tensordot(&cur, t_next, &dot)?;
        let mut new_legs: Vec<Leg> =
            legs.iter().enumerate().filter(|(i, _)| !dot.iter().any(|d| d.0 == *i)).map(|(_, &l)| l).collect();
        new_legs.extend(legs_next.iter().enumerate().filter(|(j, _)| !dot.iter().any(|d| d.1 == *j)).map(|(_, &l)| l));
        legs = new_legs;
    }
    let mut order: Vec<usize> = (0..legs.len()).collect();
    order.sort_by_key(|&i| legs[i]);
    Ok(cur.permute(&order))
}

/// `Π ‖tⱼ‖_F`, which bounds the Frobenius norm of the contraction.
pub fn tn_bound(tn: &TensorNetwork) -> Result<f64> {
    if tn.tensors.len() < 2 {
        return Err(invalid("tn_bound needs at least two tensors"));
    }
    if tn.allow_self_contractions || tn.has_self_contractions() {
        return Err(invalid("tn_bound does not apply to networks with self-contractions"));
    }
    Ok(tn.tensors.iter().map(Tensor::frobenius_norm).product())
}

/// Random network with `3..=5` tensors of order `1..=3`, index dimensions
/// `2..=4`, complex Gaussian entries, random pairings between distinct
/// tensors, and at most three open indices.
pub fn random_network<R: Rng + ?Sized>(rng: &mut R) -> TensorNetwork {
    const MAX_OPEN: usize = 3;
    let k = rng.random_range(3..=5);
    let orders: Vec<usize> = (0..k).map(|_| rng.random_range(1..=3)).collect();
    let mut slots: Vec<Leg> = orders.iter().enumerate().flat_map(|(t, &o)| (0..o).map(move |i| (t, i))).collect();
    slots.shuffle(rng);
    let mut used = vec![false; slots.len()];
    let mut pairs = Vec::new();
    for s in 0..slots.len() {
        if used[s] {
            continue;
        }
        let remaining = used.iter().filter(|u| !**u).count();
        let force = remaining > MAX_OPEN;
        if !force && rng.random_bool(0.3) {
            continue;
        }
        if let Some(p) = (s + 1..slots.len()).find(|&p| !used[p] && slots[p].0 != slots[s].0) {
            used[s] = true;
            used[p] = true;
            pairs.push((slots[s], slots[p]));
        }
    }
    let mut dims: Vec<Vec<usize>> = orders.iter().map(|&o| vec![0; o]).collect();
    for &(a, b) in &pairs {
        let d = rng.random_range(2..=4);
        dims[a.0][a.1] = d;
        dims[b.0][b.1] = d;
    }
    for row in dims.iter_mut() {
        for d in row.iter_mut().filter(|d| **d == 0) {
            *d = rng.random_range(2..=4);
        }
    }
    let tensors = dims
        .into_iter()
        .map(|d| {
            let len = d.iter().product();
            let data = (0..len).map(|_| complex_gaussian(rng)).collect();
            Tensor::new(d, data).expect("lengths agree")
        })
        .collect();
    TensorNetwork::new(tensors, pairs, false).expect("generated network is valid")
}
