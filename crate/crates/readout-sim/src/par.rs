//! Shard helpers: data-parallel via rayon when the `parallel` feature is on,
//! plain iteration otherwise. Seeds for Monte Carlo shards are derived
//! deterministically from a root seed so both paths produce identical output.

/// SplitMix64 step; used to derive independent per-shard / per-shot seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index.wrapping_add(0xa076_1d64_78bd_642f)))
}

#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Always-sequential variant, kept so benchmarks can compare against the
/// parallel path without rebuilding with different features.
pub fn map_indexed_serial<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Caps the rayon worker count; no-op (Err on n == 0) without `parallel`.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: usize) -> std::result::Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(n: usize) -> std::result::Result<(), String> {
    if n == 0 {
        return Err("thread count must be positive".into());
    }
    Ok(())
}
