//! Seed derivation, environment knobs, and atomic file writes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Once;

/// FNV-1a 64-bit hash. Stable across platforms and toolchain versions,
/// unlike `DefaultHasher`, so derived seeds are reproducible forever.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives an independent stream seed from a base seed, a purpose tag, and
/// positional indices (epoch, sample id, ...).
pub fn stream_seed(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(8 + tag.len() + 8 * indices.len());
    buf.extend_from_slice(&base.to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    for ix in indices {
        buf.extend_from_slice(&ix.to_le_bytes());
    }
    fnv1a64(&buf)
}

/// A ChaCha8 generator on the derived substream.
pub fn rng_for(base: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base, tag, indices))
}

/// Parallelism bound from `RDL_THREADS`; `None` leaves the default.
pub fn thread_bound() -> Option<usize> {
    std::env::var("RDL_THREADS").ok()?.parse().ok()
}

/// Whether `RDL_DETERMINISTIC=1` is set. Kernels are deterministic by
/// construction regardless; the flag is accepted for interface parity.
pub fn deterministic() -> bool {
    std::env::var("RDL_DETERMINISTIC").map(|v| v == "1").unwrap_or(false)
}

static POOL_INIT: Once = Once::new();

/// Applies the `RDL_THREADS` bound to the global rayon pool. Safe to call
/// repeatedly; only the first call configures the pool.
pub fn init_parallelism() {
    POOL_INIT.call_once(|| {
        if let Some(n) = thread_bound() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    });
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to `path` atomically: a temp file in the same directory is
/// written, flushed, and renamed over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp_name = format!(
        ".{}.tmp-{}-{}",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default(),
        std::process::id(),
        n
    );
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => std::path::PathBuf::from(tmp_name),
    };
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn stream_seeds_differ_by_tag_and_index() {
        let a = stream_seed(7, "shuffle", &[0]);
        let b = stream_seed(7, "shuffle", &[1]);
        let c = stream_seed(7, "dropout", &[0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stream_seed(7, "shuffle", &[0]));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name() != "out.txt")
            .collect();
        assert!(leftovers.is_empty());
    }
}
