//! Text persistence for records and galleries, feature-file parsing, and
//! exhaustive top-k search.
//!
//! Every document is a line-oriented `key: value` block. Floats are written
//! as shortest-roundtrip decimal strings, so parsing reproduces the stored
//! vector bit for bit; ciphertexts travel as decimal strings. Documents are
//! canonical: serializing a parsed document reproduces the writer's bytes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use rayon::prelude::*;

use crate::enroll::{params_fingerprint, EnrolledRecord};
use crate::error::{Error, Result};
use crate::matching::match_pair;
use crate::paillier::{Ciphertext, KeyPair};
use crate::params::{MetricMode, ParamSet};

const DOC_VERSION: &str = "1";
const KIND_RECORD: &str = "securevector-record";
const KIND_GALLERY: &str = "securevector-gallery";
const ENTRY_SEPARATOR: &str = "---";

/// A gallery: shared header (parameter set and fingerprint) plus enrolled
/// entries, all bound to the same configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryFile {
    pub params: ParamSet,
    pub fingerprint: String,
    pub entries: Vec<EnrolledRecord>,
}

impl GalleryFile {
    pub fn new(params: ParamSet, fingerprint: String) -> Self {
        GalleryFile {
            params,
            fingerprint,
            entries: Vec::new(),
        }
    }

    /// Appends a record, rejecting entries from a different configuration.
    pub fn push(&mut self, record: EnrolledRecord) -> Result<()> {
        if record.fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        self.entries.push(record);
        Ok(())
    }

    pub fn write_document(&self) -> String {
        let mut out = String::new();
        push_header(&mut out, KIND_GALLERY, &self.params, &self.fingerprint);
        out.push_str(&format!("entries: {}\n", self.entries.len()));
        for entry in &self.entries {
            out.push_str(ENTRY_SEPARATOR);
            out.push('\n');
            push_entry(&mut out, entry);
        }
        out
    }

    pub fn parse_document(text: &str) -> Result<GalleryFile> {
        let mut blocks = split_blocks(text);
        if blocks.is_empty() {
            return Err(Error::Parse("empty gallery document".into()));
        }
        let header = blocks.remove(0);
        let fields = parse_kv_block(&header)?;
        let (params, fingerprint) = parse_header_fields(&fields, KIND_GALLERY)?;
        let declared: usize = require(&fields, "entries")?
            .parse()
            .map_err(|_| Error::Parse("entries field is not an integer".into()))?;
        if declared != blocks.len() {
            return Err(Error::Parse(format!(
                "gallery declares {declared} entries but contains {}",
                blocks.len()
            )));
        }
        let mut gallery = GalleryFile::new(params, fingerprint.clone());
        for block in blocks {
            let fields = parse_kv_block(&block)?;
            let mut record = parse_entry_fields(&fields)?;
            record.fingerprint = fingerprint.clone();
            gallery.entries.push(record);
        }
        Ok(gallery)
    }
}

/// Renders a single enrolled record as a standalone document.
pub fn write_record_document(record: &EnrolledRecord, params: &ParamSet) -> String {
    let mut out = String::new();
    push_header(&mut out, KIND_RECORD, params, &record.fingerprint);
    push_entry(&mut out, record);
    out
}

/// Parses a standalone record document back into its parameter echo and
/// record.
pub fn parse_record_document(text: &str) -> Result<(ParamSet, EnrolledRecord)> {
    let fields = parse_kv_block(text)?;
    let (params, fingerprint) = parse_header_fields(&fields, KIND_RECORD)?;
    let mut record = parse_entry_fields(&fields)?;
    record.fingerprint = fingerprint;
    Ok((params, record))
}

fn push_header(out: &mut String, kind: &str, params: &ParamSet, fingerprint: &str) {
    out.push_str(&format!("version: {DOC_VERSION}\n"));
    out.push_str(&format!("kind: {kind}\n"));
    out.push_str(&format!("key-bits: {}\n", params.key_bits));
    out.push_str(&format!("segments: {}\n", params.segments));
    out.push_str(&format!("scale-bound: {}\n", params.scale_bound));
    out.push_str(&format!("lm-ratio: {}\n", params.lm_ratio));
    out.push_str(&format!("dim: {}\n", params.dim));
    out.push_str(&format!("metric: {}\n", params.metric));
    out.push_str(&format!("fingerprint: {fingerprint}\n"));
}

fn push_entry(out: &mut String, record: &EnrolledRecord) {
    if let Some(label) = &record.label {
        out.push_str(&format!("label: {label}\n"));
    }
    // shortest-roundtrip scientific notation: parses back bit-exactly and
    // keeps heavily scaled components compact
    let floats: Vec<String> = record.sanitized.iter().map(|v| format!("{v:e}")).collect();
    out.push_str(&format!("sanitized: {}\n", floats.join(" ")));
    out.push_str(&format!("token: {}\n", record.token.value()));
}

fn split_blocks(text: &str) -> Vec<String> {
    let mut blocks = vec![String::new()];
    for line in text.lines() {
        if line.trim() == ENTRY_SEPARATOR {
            blocks.push(String::new());
        } else {
            let block = blocks.last_mut().expect("at least one block");
            block.push_str(line);
            block.push('\n');
        }
    }
    blocks
}

fn parse_kv_block(block: &str) -> Result<HashMap<String, String>> {
    let mut fields = HashMap::new();
    for line in block.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected `key: value`, got `{line}`")))?;
        if fields
            .insert(key.trim().to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(Error::Parse(format!("duplicate field `{}`", key.trim())));
        }
    }
    Ok(fields)
}

fn require<'a>(fields: &'a HashMap<String, String>, name: &str) -> Result<&'a str> {
    fields
        .get(name)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::Parse(format!("missing {name} field")))
}

fn parse_header_fields(
    fields: &HashMap<String, String>,
    expected_kind: &str,
) -> Result<(ParamSet, String)> {
    let version = require(fields, "version")?;
    if version != DOC_VERSION {
        return Err(Error::VersionMismatch {
            found: version.to_string(),
        });
    }
    let kind = require(fields, "kind")?;
    if kind != expected_kind {
        return Err(Error::Parse(format!(
            "expected a {expected_kind} document, found `{kind}`"
        )));
    }
    let parse_int = |name: &str| -> Result<u64> {
        require(fields, name)?
            .parse()
            .map_err(|_| Error::Parse(format!("field {name} is not an integer")))
    };
    let lm_ratio: f64 = require(fields, "lm-ratio")?
        .parse()
        .map_err(|_| Error::Parse("field lm-ratio is not a number".into()))?;
    let metric: MetricMode = require(fields, "metric")?.parse()?;
    let params = ParamSet::new(
        parse_int("key-bits")? as u32,
        parse_int("segments")? as u32,
        parse_int("scale-bound")?,
        lm_ratio,
        parse_int("dim")? as usize,
        metric,
    )?;
    let fingerprint = require(fields, "fingerprint")?.to_string();
    Ok((params, fingerprint))
}

fn parse_entry_fields(fields: &HashMap<String, String>) -> Result<EnrolledRecord> {
    let sanitized_raw = require(fields, "sanitized")?;
    let mut sanitized = Vec::new();
    for piece in sanitized_raw.split_whitespace() {
        let value: f64 = piece
            .parse()
            .map_err(|_| Error::Parse(format!("`{piece}` is not a decimal float")))?;
        if !value.is_finite() {
            return Err(Error::Parse("sanitized vector contains a non-finite value".into()));
        }
        sanitized.push(value);
    }
    if sanitized.is_empty() {
        return Err(Error::Parse("empty sanitized vector".into()));
    }
    let token: BigUint = require(fields, "token")?
        .parse()
        .map_err(|_| Error::Parse("token is not a decimal integer".into()))?;
    Ok(EnrolledRecord {
        sanitized,
        token: Ciphertext::from_value(token),
        fingerprint: String::new(), // bound to the header by the caller
        label: fields.get("label").cloned(),
    })
}

/// Exhaustively scores the probe against every entry and returns the `k`
/// best `(label, score)` pairs, highest first; ties keep insertion order.
/// Entries are scanned in parallel (scoring is pure).
pub fn gallery_topk(
    probe: &EnrolledRecord,
    gallery: &GalleryFile,
    k: usize,
    keys: &KeyPair,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidParams("top-k requires k >= 1".into()));
    }
    if probe.fingerprint != gallery.fingerprint {
        return Err(Error::FingerprintMismatch);
    }
    if gallery.entries.is_empty() {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(String, f64)> = gallery
        .entries
        .par_iter()
        .enumerate()
        .map(|(index, entry)| {
            match_pair(probe, entry, keys, &gallery.params).map(|result| {
                let label = entry
                    .label
                    .clone()
                    .unwrap_or_else(|| index.to_string());
                (label, result.score)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    scored.truncate(k);
    Ok(scored)
}

/// One parsed feature-file row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    /// 1-based line number in the source file.
    pub line: usize,
    /// Leading non-numeric token, when present.
    pub label: Option<String>,
    pub values: Vec<f64>,
}

/// Parses a plain-text feature file: one vector per line, comma- or
/// whitespace-separated decimal floats, optionally preceded by a label
/// token. Blank lines and `#` comments are skipped; the dimension is fixed
/// by the first data row.
pub fn parse_features(text: &str) -> Result<Vec<FeatureRow>> {
    let mut rows: Vec<FeatureRow> = Vec::new();
    let mut dim: Option<usize> = None;
    for (index, raw_line) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        let (label, value_tokens) = match tokens[0].parse::<f64>() {
            Ok(_) => (None, &tokens[..]),
            Err(_) => (Some(tokens[0].to_string()), &tokens[1..]),
        };
        let mut values = Vec::with_capacity(value_tokens.len());
        for token in value_tokens {
            let value: f64 = token.parse().map_err(|_| {
                Error::Parse(format!("line {line_no}: `{token}` is not a decimal float"))
            })?;
            values.push(value);
        }
        if values.is_empty() {
            return Err(Error::Parse(format!("line {line_no}: no feature values")));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Parse(format!(
                    "line {line_no}: expected {d} values, got {}",
                    values.len()
                )));
            }
            _ => {}
        }
        rows.push(FeatureRow {
            line: line_no,
            label,
            values,
        });
    }
    Ok(rows)
}

/// Reads and parses a feature file from disk.
pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    parse_features(&std::fs::read_to_string(path)?)
}

/// Writes via a sibling temp file and renames into place, so failures never
/// leave a partial document behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp_name);
    std::fs::write(&tmp, contents)?;
    if let Err(err) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(err.into());
    }
    Ok(())
}

/// Fingerprint helper for callers assembling galleries.
pub fn expected_fingerprint(params: &ParamSet, modulus: &BigUint) -> String {
    params_fingerprint(params, modulus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enroll::{enroll, FeatureVector};
    use crate::paillier::keygen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn test_params() -> ParamSet {
        ParamSet::new(128, 16, 2, 128.0, 32, MetricMode::CosineNormalized).unwrap()
    }

    fn random_unit(dim: usize, r: &mut ChaCha12Rng) -> FeatureVector {
        let values: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        FeatureVector::new(values).unwrap().normalized()
    }

    #[test]
    fn record_documents_round_trip_bit_exactly() {
        let mut r = rng(1);
        let params = test_params();
        let keys = keygen(params.key_bits, &mut r).unwrap();
        for i in 0..100 {
            let x = random_unit(32, &mut r);
            let mut record = enroll(&x, &params, &keys.public, &mut r).unwrap();
            if i % 2 == 0 {
                record.label = Some(format!("subject-{i}"));
            }
            let doc = write_record_document(&record, &params);
            let (params2, record2) = parse_record_document(&doc).unwrap();
            assert_eq!(params2, params);
            assert_eq!(record2, record);
        }
    }

    #[test]
    fn serialization_is_canonical() {
        let mut r = rng(2);
        let params = test_params();
        let keys = keygen(params.key_bits, &mut r).unwrap();
        let x = random_unit(32, &mut r);
        let mut record = enroll(&x, &params, &keys.public, &mut r).unwrap();
        record.label = Some("alice".into());
        let doc = write_record_document(&record, &params);
        let (p2, r2) = parse_record_document(&doc).unwrap();
        assert_eq!(write_record_document(&r2, &p2), doc);

        let mut gallery = GalleryFile::new(
            params.clone(),
            expected_fingerprint(&params, keys.public.modulus()),
        );
        gallery.push(record).unwrap();
        let gdoc = gallery.write_document();
        let g2 = GalleryFile::parse_document(&gdoc).unwrap();
        assert_eq!(g2.write_document(), gdoc);
    }

    #[test]
    fn tampered_ciphertext_parses_but_fails_matching() {
        let mut r = rng(3);
        let params = test_params();
        let keys = keygen(params.key_bits, &mut r).unwrap();
        let x = random_unit(32, &mut r);
        let record = enroll(&x, &params, &keys.public, &mut r).unwrap();
        let doc = write_record_document(&record, &params);

        // flip one digit inside the token line
        let tampered: String = doc
            .lines()
            .map(|line| {
                if let Some(value) = line.strip_prefix("token: ") {
                    let mut chars: Vec<char> = value.chars().collect();
                    let mid = chars.len() / 2;
                    chars[mid] = if chars[mid] == '7' { '8' } else { '7' };
                    format!("token: {}", chars.into_iter().collect::<String>())
                } else {
                    line.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n";
        let (_, bad) = parse_record_document(&tampered).unwrap();
        let good = enroll(&x, &params, &keys.public, &mut r).unwrap();
        assert!(matches!(
            match_pair(&good, &bad, &keys, &params),
            Err(Error::CorruptToken)
        ));
    }

    #[test]
    fn records_refuse_foreign_parameter_sets() {
        let mut r = rng(4);
        let params = test_params();
        let keys = keygen(params.key_bits, &mut r).unwrap();
        let x = random_unit(32, &mut r);
        let record = enroll(&x, &params, &keys.public, &mut r).unwrap();
        let doc = write_record_document(&record, &params);
        let (_, parsed) = parse_record_document(&doc).unwrap();

        let other = ParamSet::new(128, 8, 2, 128.0, 32, MetricMode::CosineNormalized).unwrap();
        assert_ne!(
            parsed.fingerprint,
            expected_fingerprint(&other, keys.public.modulus())
        );
        assert!(matches!(
            match_pair(&parsed, &record, &keys, &other),
            Err(Error::FingerprintMismatch)
        ));
    }

    #[test]
    fn record_parse_rejects_missing_fields_and_versions() {
        let mut r = rng(5);
        let params = test_params();
        let keys = keygen(params.key_bits, &mut r).unwrap();
        let x = random_unit(32, &mut r);
        let record = enroll(&x, &params, &keys.public, &mut r).unwrap();
        let doc = write_record_document(&record, &params);

        let no_fingerprint: String = doc
            .lines()
            .filter(|l| !l.starts_with("fingerprint:"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(parse_record_document(&no_fingerprint).is_err());

        let bad_version = doc.replace("version: 1", "version: 3");
        assert!(matches!(
            parse_record_document(&bad_version),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn gallery_push_enforces_fingerprints() {
        let mut r = rng(6);
        let params = test_params();
        let keys = keygen(params.key_bits, &mut r).unwrap();
        let other_keys = keygen(params.key_bits, &mut r).unwrap();
        let mut gallery = GalleryFile::new(
            params.clone(),
            expected_fingerprint(&params, keys.public.modulus()),
        );
        let x = random_unit(32, &mut r);
        gallery
            .push(enroll(&x, &params, &keys.public, &mut r).unwrap())
            .unwrap();
        let foreign = enroll(&x, &params, &other_keys.public, &mut r).unwrap();
        assert!(matches!(
            gallery.push(foreign),
            Err(Error::FingerprintMismatch)
        ));
    }

    #[test]
    fn topk_basics() {
        let mut r = rng(7);
        let params = test_params();
        let keys = keygen(params.key_bits, &mut r).unwrap();
        let fingerprint = expected_fingerprint(&params, keys.public.modulus());
        let mut gallery = GalleryFile::new(params.clone(), fingerprint);

        let features: Vec<FeatureVector> = (0..3).map(|_| random_unit(32, &mut r)).collect();
        for (i, x) in features.iter().enumerate() {
            let mut record = enroll(x, &params, &keys.public, &mut r).unwrap();
            record.label = Some(format!("entry-{i}"));
            gallery.push(record).unwrap();
        }

        // probe identical to entry 1 ranks it first with score ≈ 1
        let probe = enroll(&features[1], &params, &keys.public, &mut r).unwrap();
        let ranked = gallery_topk(&probe, &gallery, 10, &keys).unwrap();
        assert_eq!(ranked.len(), 3); // k beyond size returns the full ranking
        assert_eq!(ranked[0].0, "entry-1");
        assert!((ranked[0].1 - 1.0).abs() <= 1e-4);

        assert!(gallery_topk(&probe, &gallery, 0, &keys).is_err());

        let empty = GalleryFile::new(gallery.params.clone(), gallery.fingerprint.clone());
        assert!(gallery_topk(&probe, &empty, 5, &keys).unwrap().is_empty());
    }

    #[test]
    fn topk_agrees_with_plaintext_ranking() {
        let mut r = rng(8);
        let params = test_params();
        let keys = keygen(params.key_bits, &mut r).unwrap();
        let fingerprint = expected_fingerprint(&params, keys.public.modulus());
        let mut gallery = GalleryFile::new(params.clone(), fingerprint);

        let entries: Vec<FeatureVector> = (0..50).map(|_| random_unit(32, &mut r)).collect();
        for (i, x) in entries.iter().enumerate() {
            let mut record = enroll(x, &params, &keys.public, &mut r).unwrap();
            record.label = Some(i.to_string());
            gallery.push(record).unwrap();
        }

        for _ in 0..10 {
            let probe_feature = random_unit(32, &mut r);
            let probe = enroll(&probe_feature, &params, &keys.public, &mut r).unwrap();
            let ranked = gallery_topk(&probe, &gallery, 50, &keys).unwrap();

            let mut oracle: Vec<(usize, f64)> = entries
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let dot: f64 = x
                        .values()
                        .iter()
                        .zip(probe_feature.values())
                        .map(|(a, b)| a * b)
                        .sum();
                    (i, dot)
                })
                .collect();
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

            // wherever adjacent plaintext scores are separated by more than
            // 2e-4 the protected order must agree
            for window in oracle.windows(2) {
                if window[0].1 - window[1].1 > 2e-4 {
                    let pos_hi = ranked
                        .iter()
                        .position(|(l, _)| l == &window[0].0.to_string())
                        .unwrap();
                    let pos_lo = ranked
                        .iter()
                        .position(|(l, _)| l == &window[1].0.to_string())
                        .unwrap();
                    assert!(pos_hi < pos_lo);
                }
            }
        }
    }

    #[test]
    fn feature_files_parse_labels_and_dimensions() {
        let text = "\
# synthetic fixture
alice 0.6 0.8
bob,0.0,1.0

0.8 0.6
";
        let rows = parse_features(text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].label.as_deref(), Some("alice"));
        assert_eq!(rows[0].line, 2);
        assert_eq!(rows[1].label.as_deref(), Some("bob"));
        assert_eq!(rows[1].values, vec![0.0, 1.0]);
        assert_eq!(rows[2].label, None);
        assert_eq!(rows[2].line, 5);

        let jagged = "0.1 0.2\n0.3 0.4 0.5\n";
        let err = parse_features(jagged).unwrap_err();
        assert!(err.to_string().contains("line 2"));

        let garbage = "0.1 zzz\n";
        assert!(parse_features(garbage).is_err());

        assert!(parse_features("").unwrap().is_empty());
    }

    #[test]
    fn atomic_write_replaces_files() {
        let dir = std::env::temp_dir().join(format!("svstore-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("out.txt");
        write_atomic(&path, "first\n").unwrap();
        write_atomic(&path, "second\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second\n");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
