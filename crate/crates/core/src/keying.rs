//! Passphrase-derived key material and the key-driven encode operation.
//!
//! A passphrase is hashed with SHA-256. The first eight digest bytes
//! (big-endian) seed a root SplitMix64 generator; its `i`-th output seeds the
//! private SplitMix64 stream of block `i`. Each block stream first drives a
//! Fisher–Yates shuffle of the patch grid, then supplies one bit per tensor
//! element for the ±1 mask (bit `e % 64` of draw `e / 64`, least significant
//! first, set bit meaning −1).
//!
//! Encoding shuffles whole `p×p` patches (shared by every channel) so that
//! output patch `j` is input patch `perm[j]`, then multiplies by the mask.
//! Both steps are exact in floating point, so decoding is bit-exact.

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::diffcore::{Eager, Element, Ops, Shape, Tensor};
use crate::error::{geometry_err, shape_err, Result};

pub const DEFAULT_PATCH_SIZE: usize = 4;

/// SHA-256 digest of a passphrase.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Seed256([u8; 32]);

impl Seed256 {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// The root PRNG seed: first eight digest bytes, big-endian.
    pub fn root_seed(&self) -> u64 {
        let mut head = [0u8; 8];
        head.copy_from_slice(&self.0[..8]);
        u64::from_be_bytes(head)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Seed256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Seed256(<redacted>)")
    }
}

pub fn derive_seed(passphrase: &[u8]) -> Seed256 {
    Seed256(Sha256::digest(passphrase).into())
}

/// Vigna's SplitMix64.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..bound` by multiply-high.
    pub fn below(&mut self, bound: u64) -> u64 {
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }
}

/// Key material of one block: a patch permutation (`k_s`) and a ±1 mask
/// (`k_m`) shaped like one item of the secret-pipeline tensor.
#[derive(Clone, PartialEq)]
pub struct BlockKey {
    perm: Arc<Vec<u32>>,
    signs: Arc<Vec<i8>>,
    item: Shape,
    patch_size: usize,
}

impl fmt::Debug for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockKey")
            .field("item", &self.item)
            .field("patch_size", &self.patch_size)
            .finish_non_exhaustive()
    }
}

fn check_grid(item: Shape, patch_size: usize) -> Result<()> {
    if patch_size == 0 || !item.h.is_multiple_of(patch_size) || !item.w.is_multiple_of(patch_size) {
        return Err(geometry_err!(
            "spatial size {}×{} is not divisible into {patch_size}×{patch_size} patches",
            item.h,
            item.w
        ));
    }
    Ok(())
}

impl BlockKey {
    /// Builds a key from explicit material.
    pub fn new(perm: Vec<u32>, signs: Vec<i8>, item: (usize, usize, usize), patch_size: usize) -> Result<Self> {
        let item = Shape::new(1, item.0, item.1, item.2);
        check_grid(item, patch_size)?;
        let n_patches = item.plane() / (patch_size * patch_size);
        if perm.len() != n_patches {
            return Err(shape_err!(
                "permutation of length {} for {n_patches} patches",
                perm.len()
            ));
        }
        let mut seen = vec![false; n_patches];
        for &p in &perm {
            let slot = seen
                .get_mut(p as usize)
                .ok_or_else(|| shape_err!("permutation entry {p} out of range"))?;
            if std::mem::replace(slot, true) {
                return Err(shape_err!("permutation repeats index {p}"));
            }
        }
        if signs.len() != item.len() || signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(shape_err!("mask must hold {} entries of ±1", item.len()));
        }
        Ok(Self {
            perm: Arc::new(perm),
            signs: Arc::new(signs),
            item,
            patch_size,
        })
    }

    /// Identity permutation and all-ones mask.
    pub fn identity(item: (usize, usize, usize), patch_size: usize) -> Result<Self> {
        let shape = Shape::new(1, item.0, item.1, item.2);
        check_grid(shape, patch_size)?;
        let n = shape.plane() / (patch_size * patch_size);
        Self::new((0..n as u32).collect(), vec![1; shape.len()], item, patch_size)
    }

    fn from_stream(rng: &mut SplitMix64, item: Shape, patch_size: usize) -> Self {
        let n = item.plane() / (patch_size * patch_size);
        let mut perm: Vec<u32> = (0..n as u32).collect();
        for j in (1..n).rev() {
            let r = rng.below(j as u64 + 1) as usize;
            perm.swap(j, r);
        }
        let mut signs = Vec::with_capacity(item.len());
        let mut bits = 0u64;
        for e in 0..item.len() {
            if e % 64 == 0 {
                bits = rng.next_u64();
            }
            signs.push(if (bits >> (e % 64)) & 1 == 1 { -1 } else { 1 });
        }
        Self {
            perm: Arc::new(perm),
            signs: Arc::new(signs),
            item,
            patch_size,
        }
    }

    /// `k_s`: output patch `j` takes input patch `permutation()[j]`.
    pub fn permutation(&self) -> &[u32] {
        &self.perm
    }

    /// `k_m` entries, each exactly −1 or +1.
    pub fn mask(&self) -> &[i8] {
        &self.signs
    }

    pub fn item_shape(&self) -> (usize, usize, usize) {
        (self.item.c, self.item.h, self.item.w)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p as usize) && self.signs.iter().all(|&s| s == 1)
    }

    fn check(&self, shape: Shape) -> Result<()> {
        if shape.with_batch(1) != self.item {
            return Err(shape_err!(
                "key is shaped for {}, tensor is {shape}",
                self.item
            ));
        }
        Ok(())
    }

    /// Flat gather index realising a patch permutation over `n` items.
    fn index_for(&self, perm: &[u32], n: usize) -> Arc<Vec<u32>> {
        let s = self.item;
        let p = self.patch_size;
        let grid_w = s.w / p;
        let mut within = Vec::with_capacity(s.item_len());
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let j = (y / p) * grid_w + x / p;
                    let src = perm[j] as usize;
                    let sy = (src / grid_w) * p + y % p;
                    let sx = (src % grid_w) * p + x % p;
                    within.push(((c * s.h + sy) * s.w + sx) as u32);
                }
            }
        }
        let item = s.item_len() as u32;
        let mut index = Vec::with_capacity(within.len() * n);
        for b in 0..n as u32 {
            index.extend(within.iter().map(|&i| i + b * item));
        }
        Arc::new(index)
    }

    fn inverse_perm(&self) -> Vec<u32> {
        let mut inv = vec![0u32; self.perm.len()];
        for (j, &s) in self.perm.iter().enumerate() {
            inv[s as usize] = j as u32;
        }
        inv
    }

    fn mask_tensor<T: Element>(&self, n: usize) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.signs.len() * n);
        for _ in 0..n {
            data.extend(self.signs.iter().map(|&s| if s < 0 { -T::one() } else { T::one() }));
        }
        Tensor::new(self.item.with_batch(n), data).expect("mask shape")
    }
}

/// One [`BlockKey`] per coupling block.
#[derive(Clone, Debug, PartialEq)]
pub struct KeySchedule {
    blocks: Vec<BlockKey>,
    patch_size: usize,
}

impl KeySchedule {
    pub fn new(blocks: Vec<BlockKey>, patch_size: usize) -> Result<Self> {
        if blocks.iter().any(|b| b.patch_size != patch_size) {
            return Err(shape_err!("all block keys must use patch size {patch_size}"));
        }
        Ok(Self { blocks, patch_size })
    }

    pub fn identity(n_blocks: usize, item: (usize, usize, usize), patch_size: usize) -> Result<Self> {
        let key = BlockKey::identity(item, patch_size)?;
        Ok(Self {
            blocks: vec![key; n_blocks],
            patch_size,
        })
    }

    pub fn from_passphrase(
        passphrase: &[u8],
        n_blocks: usize,
        item: (usize, usize, usize),
        patch_size: usize,
    ) -> Result<Self> {
        generate_schedule(&derive_seed(passphrase), n_blocks, item, patch_size)
    }

    pub fn blocks(&self) -> &[BlockKey] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }
}

/// Deterministic per-block key material for tensors of item shape
/// `(channels, height, width)`.
pub fn generate_schedule(
    seed: &Seed256,
    n_blocks: usize,
    item: (usize, usize, usize),
    patch_size: usize,
) -> Result<KeySchedule> {
    let shape = Shape::new(1, item.0, item.1, item.2);
    check_grid(shape, patch_size)?;
    let mut root = SplitMix64::new(seed.root_seed());
    let blocks = (0..n_blocks)
        .map(|_| {
            let mut stream = SplitMix64::new(root.next_u64());
            BlockKey::from_stream(&mut stream, shape, patch_size)
        })
        .collect();
    Ok(KeySchedule { blocks, patch_size })
}

/// Encode inside any backend: patch shuffle, then mask.
pub fn encode_with<T: Element, O: Ops<T>>(ops: &mut O, x: &O::Value, key: &BlockKey) -> Result<O::Value> {
    let shape = ops.value(x).shape();
    key.check(shape)?;
    let index = key.index_for(&key.perm, shape.n);
    let shuffled = ops.gather(x, &index)?;
    let mask = ops.constant(key.mask_tensor(shape.n));
    ops.mul(&shuffled, &mask)
}

/// Exact inverse of [`encode_with`]: mask (self-inverse), then unshuffle.
pub fn decode_with<T: Element, O: Ops<T>>(ops: &mut O, x: &O::Value, key: &BlockKey) -> Result<O::Value> {
    let shape = ops.value(x).shape();
    key.check(shape)?;
    let mask = ops.constant(key.mask_tensor(shape.n));
    let unmasked = ops.mul(x, &mask)?;
    let index = key.index_for(&key.inverse_perm(), shape.n);
    ops.gather(&unmasked, &index)
}

pub fn encode<T: Element>(x: &Tensor<T>, key: &BlockKey) -> Result<Tensor<T>> {
    encode_with(&mut Eager, x, key)
}

pub fn decode<T: Element>(x: &Tensor<T>, key: &BlockKey) -> Result<Tensor<T>> {
    decode_with(&mut Eager, x, key)
}
