//! On-disk layout:
//!
//! ```text
//! <dir>/oracle.idx           AEORACLE1<TAB><tag>, then pair_id<TAB>method<TAB>score<TAB>sha256(pgm)
//! <dir>/oracle.candidates    AECANDS1, then pair_id<TAB>method<TAB>version<TAB>score
//! <dir>/<pair_id>.optimal.pgm
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{validate_pair_id, OptimalSolution, OracleCache, OracleError};
use crate::fusion::FusionMethodId;
use crate::image::{decode_pgm, encode_pgm};

pub const INDEX_FILE: &str = "oracle.idx";
pub const INDEX_MAGIC: &str = "AEORACLE1";
const CANDIDATES_FILE: &str = "oracle.candidates";
const CANDIDATES_MAGIC: &str = "AECANDS1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OracleError + '_ {
    move |e| OracleError::Io(path.display().to_string(), e)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), OracleError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn cache_store(cache: &OracleCache, dir: impl AsRef<Path>) -> Result<(), OracleError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut index = format!("{INDEX_MAGIC}\t{}\n", cache.evaluator_tag);
    let mut cands = format!("{CANDIDATES_MAGIC}\n");
    for sol in cache.optima.values() {
        let bytes = encode_pgm(&sol.fused);
        let digest = hex::encode(Sha256::digest(&bytes));
        let path = dir.join(format!("{}.optimal.pgm", sol.pair_id));
        write_atomic(&path, &bytes)?;
        index.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            sol.pair_id, sol.method.name, sol.score, digest
        ));
        for (id, score) in &cache.candidates[&sol.pair_id] {
            cands.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                sol.pair_id, id.name, id.version, score
            ));
        }
    }
    write_atomic(&dir.join(CANDIDATES_FILE), cands.as_bytes())?;
    write_atomic(&dir.join(INDEX_FILE), index.as_bytes())
}

fn corrupt(file: &str, line: usize, what: impl std::fmt::Display) -> OracleError {
    OracleError::CorruptIndex(format!("{file}:{line}: {what}"))
}

fn parse_score(s: &str, file: &str, line: usize) -> Result<f64, OracleError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| !v.is_nan())
        .ok_or_else(|| corrupt(file, line, format!("bad score '{s}'")))
}

pub fn cache_load(dir: impl AsRef<Path>) -> Result<OracleCache, OracleError> {
    let dir = dir.as_ref();
    let index_path = dir.join(INDEX_FILE);
    let index = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    let mut lines = index.lines();
    let header = lines
        .next()
        .ok_or_else(|| corrupt(INDEX_FILE, 1, "empty index"))?;
    let tag = match header.split_once('\t') {
        Some((INDEX_MAGIC, tag)) if !tag.is_empty() => tag,
        _ => return Err(corrupt(INDEX_FILE, 1, "bad header")),
    };

    let cand_path = dir.join(CANDIDATES_FILE);
    let cand_text = fs::read_to_string(&cand_path).map_err(io_err(&cand_path))?;
    let mut cand_lines = cand_text.lines();
    if cand_lines.next() != Some(CANDIDATES_MAGIC) {
        return Err(corrupt(CANDIDATES_FILE, 1, "bad header"));
    }
    let mut lists: std::collections::BTreeMap<String, Vec<(FusionMethodId, f64)>> =
        Default::default();
    for (i, line) in cand_lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(corrupt(CANDIDATES_FILE, i + 2, "expected 4 fields"));
        }
        let version = f[2]
            .parse()
            .map_err(|_| corrupt(CANDIDATES_FILE, i + 2, "bad version"))?;
        let score = parse_score(f[3], CANDIDATES_FILE, i + 2)?;
        lists
            .entry(f[0].to_string())
            .or_default()
            .push((FusionMethodId::new(f[1], version), score));
    }

    let mut cache = OracleCache::new(tag);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(corrupt(INDEX_FILE, lineno, "expected 4 fields"));
        }
        let (pair_id, method, score) = (f[0], f[1], parse_score(f[2], INDEX_FILE, lineno)?);
        validate_pair_id(pair_id).map_err(|e| corrupt(INDEX_FILE, lineno, e))?;
        if cache.optima.contains_key(pair_id) {
            return Err(corrupt(
                INDEX_FILE,
                lineno,
                format!("duplicate pair '{pair_id}'"),
            ));
        }
        let pgm_path = dir.join(format!("{pair_id}.optimal.pgm"));
        let bytes = fs::read(&pgm_path).map_err(io_err(&pgm_path))?;
        if hex::encode(Sha256::digest(&bytes)) != f[3] {
            return Err(corrupt(
                INDEX_FILE,
                lineno,
                format!("checksum mismatch for {}", pgm_path.display()),
            ));
        }
        let fused = decode_pgm(&bytes)?;
        let mut list = lists
            .remove(pair_id)
            .ok_or_else(|| corrupt(CANDIDATES_FILE, 0, format!("no candidates for '{pair_id}'")))?;
        list.sort_by(|a, b| a.0.name.cmp(&b.0.name));
        let (max_name, max_score) =
            list.iter()
                .fold((None::<&str>, f64::NEG_INFINITY), |acc, (id, s)| {
                    if acc.0.is_none()
                        || *s > acc.1
                        || (*s == acc.1 && id.name.as_str() < acc.0.unwrap())
                    {
                        (Some(id.name.as_str()), *s)
                    } else {
                        acc
                    }
                });
        if max_name != Some(method) || max_score != score {
            return Err(corrupt(
                INDEX_FILE,
                lineno,
                format!("optimum of '{pair_id}' disagrees with its candidate list"),
            ));
        }
        let version = list
            .iter()
            .find(|(id, _)| id.name == method)
            .unwrap()
            .0
            .version;
        cache.insert_raw(
            OptimalSolution {
                pair_id: pair_id.to_string(),
                fused,
                method: FusionMethodId::new(method, version),
                score,
                evaluator_tag: tag.to_string(),
            },
            list,
        );
    }
    if let Some(orphan) = lists.keys().next() {
        return Err(corrupt(
            CANDIDATES_FILE,
            0,
            format!("candidates for unindexed pair '{orphan}'"),
        ));
    }
    Ok(cache)
}

/// Loads a cache and rejects it when it was built under another evaluator.
pub fn cache_load_expecting(
    dir: impl AsRef<Path>,
    evaluator_tag: &str,
) -> Result<OracleCache, OracleError> {
    let cache = cache_load(dir)?;
    if cache.evaluator_tag != evaluator_tag {
        return Err(OracleError::TagMismatch {
            cached: cache.evaluator_tag,
            current: evaluator_tag.to_string(),
        });
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;

    fn sample_cache() -> OracleCache {
        let mut cache = OracleCache::new("E2-0123456789abcdef");
        for (k, pid) in ["p0", "p1", "p2"].iter().enumerate() {
            let scored = vec![
                (
                    FusionMethodId::new("avg", 1),
                    GrayImage::constant(5, 4, 0.1 * k as f64),
                    0.3 + 0.1 * k as f64,
                ),
                (
                    FusionMethodId::new("lp", 2),
                    GrayImage::from_fn(5, 4, |x, y| (x + y) as f64 / 7.0),
                    0.55 + 1e-7 * k as f64,
                ),
            ];
            cache.insert_scored(pid, &scored).unwrap();
        }
        cache
    }

    #[test]
    fn empty_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = OracleCache::new("E1-aaaa");
        cache_store(&cache, dir.path()).unwrap();
        let idx = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(idx, "AEORACLE1\tE1-aaaa\n");
        assert_eq!(cache_load(dir.path()).unwrap(), cache);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = sample_cache();
        cache_store(&cache, dir.path()).unwrap();
        let idx = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(idx.lines().count() - 1, 3);
        let back = cache_load(dir.path()).unwrap();
        assert_eq!(back.evaluator_tag(), cache.evaluator_tag());
        for sol in cache.optima() {
            let b = back.get(&sol.pair_id).unwrap();
            assert_eq!(b.method, sol.method);
            assert!((b.score - sol.score).abs() <= 1e-9);
            assert!(b.fused.max_abs_diff(&sol.fused) <= 1.0 / 510.0 + 1e-12);
            assert_eq!(
                back.candidate_scores(&sol.pair_id),
                cache.candidate_scores(&sol.pair_id)
            );
        }
    }

    #[test]
    fn checksum_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        cache_store(&sample_cache(), dir.path()).unwrap();
        let pgm = dir.path().join("p1.optimal.pgm");
        let mut bytes = fs::read(&pgm).unwrap();
        *bytes.last_mut().unwrap() ^= 0xff;
        fs::write(&pgm, bytes).unwrap();
        assert!(matches!(
            cache_load(dir.path()),
            Err(OracleError::CorruptIndex(_))
        ));
    }

    #[test]
    fn tag_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        cache_store(&sample_cache(), dir.path()).unwrap();
        assert!(cache_load_expecting(dir.path(), "E2-0123456789abcdef").is_ok());
        assert!(matches!(
            cache_load_expecting(dir.path(), "E2-ffff"),
            Err(OracleError::TagMismatch { .. })
        ));
    }
}
