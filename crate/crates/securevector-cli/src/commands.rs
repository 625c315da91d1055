use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use securevector::enroll::{enroll as enroll_feature, permute, sample_permutation};
use securevector::paillier::{
    keygen as generate_keys, parse_key_document, write_private_key_document,
    write_public_key_document, KeyPair, PublicKey,
};
use securevector::store::{
    expected_fingerprint, gallery_topk, read_features, write_atomic, write_record_document,
    FeatureRow, GalleryFile,
};
use securevector::{
    match_pair, max_scale_bound, optimal_params, EnrolledRecord, FeatureVector, MetricMode,
    ParamSet,
};

pub struct Context {
    pub seed: Option<u64>,
    pub porcelain: bool,
}

impl Context {
    fn rng(&self) -> ChaCha12Rng {
        match self.seed {
            Some(seed) => ChaCha12Rng::seed_from_u64(seed),
            None => ChaCha12Rng::from_entropy(),
        }
    }
}

#[derive(Args)]
pub struct KeygenArgs {
    /// Key size in bits (even, at least 64).
    #[arg(long)]
    pub size: u32,
    /// Output prefix; writes PREFIX.pub and PREFIX.key.
    #[arg(long)]
    pub out: PathBuf,
    /// Feature dimension used for the printed parameter recommendation.
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
}

pub fn keygen(ctx: &Context, args: KeygenArgs) -> Result<ExitCode> {
    let mut rng = ctx.rng();
    let keys = generate_keys(args.size, &mut rng)?;
    let pub_path = suffixed(&args.out, ".pub");
    let key_path = suffixed(&args.out, ".key");
    write_atomic(&pub_path, &write_public_key_document(&keys.public))?;
    write_atomic(&key_path, &write_private_key_document(&keys))?;
    if ctx.porcelain {
        println!("public\t{}", pub_path.display());
        println!("private\t{}", key_path.display());
    } else {
        println!("wrote {} (public key, {} bits)", pub_path.display(), args.size);
        println!("wrote {} (private key)", key_path.display());
    }
    match optimal_params(args.size, args.dim) {
        Ok(params) => {
            if ctx.porcelain {
                println!("segments\t{}", params.segments);
                println!("scale-bound\t{}", params.scale_bound);
                println!("lm-ratio\t{}", params.lm_ratio);
                println!("security-bits\t{}", params.security_bits());
            } else {
                println!(
                    "recommended parameters (dim {}): segments={} scale-bound={} lm-ratio={} security-bits={}",
                    args.dim,
                    params.segments,
                    params.scale_bound,
                    params.lm_ratio,
                    params.security_bits()
                );
            }
        }
        Err(err) => println!("no parameter recommendation for dim {}: {err}", args.dim),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct EnrollArgs {
    /// Feature file: one vector per line, optional leading label token.
    #[arg(long)]
    pub features: PathBuf,
    /// Public key document (a private key document works too).
    #[arg(long = "pub")]
    pub public: PathBuf,
    /// Output gallery file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Rescale every feature to unit norm before enrolling.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args)]
pub struct ParamArgs {
    /// Segment count; defaults to the recommended value for the key size.
    #[arg(long)]
    pub segments: Option<u32>,
    /// Scale bound; defaults to the largest value the key size admits.
    #[arg(long)]
    pub scale_bound: Option<u64>,
    /// Permutation-strength ratio.
    #[arg(long, default_value_t = ParamSet::DEFAULT_LM_RATIO)]
    pub lm_ratio: f64,
    /// Metric mode: cosine-normalized, euclidean-normalized,
    /// dot-unnormalized or euclidean-unnormalized.
    #[arg(long, default_value = "cosine-normalized")]
    pub metric: MetricMode,
}

impl ParamArgs {
    fn build(&self, key_bits: u32, dim: usize) -> Result<ParamSet> {
        let params = match (self.segments, self.scale_bound) {
            (None, None) => {
                let mut params = optimal_params(key_bits, dim)?;
                params.lm_ratio = self.lm_ratio;
                params.metric = self.metric;
                params.validate()?;
                params
            }
            (Some(segments), None) => {
                let scale_bound = max_scale_bound(key_bits, segments)?;
                ParamSet::new(key_bits, segments, scale_bound, self.lm_ratio, dim, self.metric)?
            }
            (Some(segments), Some(scale_bound)) => {
                ParamSet::new(key_bits, segments, scale_bound, self.lm_ratio, dim, self.metric)?
            }
            (None, Some(_)) => bail!("--scale-bound requires --segments"),
        };
        Ok(params)
    }
}

pub fn enroll(ctx: &Context, args: EnrollArgs) -> Result<ExitCode> {
    let mut rng = ctx.rng();
    let rows = read_features(&args.features)
        .with_context(|| format!("reading {}", args.features.display()))?;
    if rows.is_empty() {
        bail!("{}: no feature rows", args.features.display());
    }
    let text = std::fs::read_to_string(&args.public)
        .with_context(|| format!("reading {}", args.public.display()))?;
    let (public, _) = parse_key_document(&text)?;
    let params = args.params.build(public.bits(), rows[0].values.len())?;
    let mut gallery = GalleryFile::new(
        params.clone(),
        expected_fingerprint(&params, public.modulus()),
    );
    for row in &rows {
        let record = enroll_row(row, &params, &public, args.normalize, &mut rng)?;
        gallery.push(record)?;
    }
    write_atomic(&args.out, &gallery.write_document())?;
    if ctx.porcelain {
        println!("gallery\t{}", args.out.display());
        println!("entries\t{}", gallery.entries.len());
    } else {
        println!(
            "enrolled {} features into {} ({params})",
            gallery.entries.len(),
            args.out.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct SearchArgs {
    /// Probe feature file.
    #[arg(long)]
    pub probe: PathBuf,
    /// Gallery to scan.
    #[arg(long)]
    pub gallery: PathBuf,
    /// Key prefix; reads PREFIX.key (private material required).
    #[arg(long)]
    pub keys: PathBuf,
    /// Number of results per probe.
    #[arg(long, default_value_t = 5)]
    pub topk: usize,
    /// Rescale probes to unit norm before enrolling.
    #[arg(long)]
    pub normalize: bool,
    /// Worker threads for the scan (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn search(ctx: &Context, args: SearchArgs) -> Result<ExitCode> {
    let mut rng = ctx.rng();
    let gallery = GalleryFile::parse_document(
        &std::fs::read_to_string(&args.gallery)
            .with_context(|| format!("reading {}", args.gallery.display()))?,
    )?;
    let keys = load_keypair(&args.keys)?;
    if gallery.fingerprint != expected_fingerprint(&gallery.params, keys.public.modulus()) {
        bail!("gallery was not produced under the supplied keys");
    }
    let rows = read_features(&args.probe)
        .with_context(|| format!("reading {}", args.probe.display()))?;
    if rows.is_empty() {
        bail!("{}: no probe rows", args.probe.display());
    }
    let probes: Vec<(String, EnrolledRecord)> = rows
        .iter()
        .map(|row| {
            let record = enroll_row(row, &gallery.params, &keys.public, args.normalize, &mut rng)?;
            Ok((label_for(row), record))
        })
        .collect::<Result<_>>()?;

    let rankings: Vec<(String, Vec<(String, f64)>)> = in_pool(args.workers, || {
        probes
            .iter()
            .map(|(label, probe)| {
                let ranked = gallery_topk(probe, &gallery, args.topk, &keys)?;
                Ok((label.clone(), ranked))
            })
            .collect::<Result<_>>()
    })?;

    for (probe_label, ranked) in rankings {
        if ctx.porcelain {
            for (rank, (label, score)) in ranked.iter().enumerate() {
                println!("{probe_label}\t{}\t{label}\t{score:.6}", rank + 1);
            }
        } else {
            println!("probe {probe_label}");
            for (rank, (label, score)) in ranked.iter().enumerate() {
                println!("  {:>3}. {label}  {score:.6}", rank + 1);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Feature file (at least two rows).
    #[arg(long)]
    pub features: PathBuf,
    /// Number of random pairs to score.
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    /// Key prefix; reads PREFIX.key.
    #[arg(long)]
    pub keys: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Largest tolerated |protected − plaintext| before failing.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Rescale features to unit norm before enrolling.
    #[arg(long)]
    pub normalize: bool,
    /// Worker threads for scoring (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn verify(ctx: &Context, args: VerifyArgs) -> Result<ExitCode> {
    let mut rng = ctx.rng();
    let keys = load_keypair(&args.keys)?;
    let rows = read_features(&args.features)
        .with_context(|| format!("reading {}", args.features.display()))?;
    if args.pairs == 0 {
        report_verify(ctx, 0, 0.0, 0.0, args.tol, true);
        return Ok(ExitCode::SUCCESS);
    }
    if rows.len() < 2 {
        bail!("verification needs at least two features");
    }
    let params = args.params.build(keys.public.bits(), rows[0].values.len())?;

    let mut features = Vec::with_capacity(rows.len());
    let mut records = Vec::with_capacity(rows.len());
    for row in &rows {
        let feature = feature_from_row(row, args.normalize)?;
        records.push(enroll_feature(&feature, &params, &keys.public, &mut rng)?);
        features.push(feature);
    }
    let pairs: Vec<(usize, usize)> = (0..args.pairs)
        .map(|_| {
            let i = rng.gen_range(0..records.len());
            let j = loop {
                let j = rng.gen_range(0..records.len());
                if j != i {
                    break j;
                }
            };
            (i, j)
        })
        .collect();

    let errors: Vec<f64> = in_pool(args.workers, || {
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let result = match_pair(&records[i], &records[j], &keys, &params)?;
                let oracle = plaintext_score(params.metric, &features[i], &features[j]);
                Ok((result.score - oracle).abs())
            })
            .collect::<Result<_>>()
    })?;

    let max = errors.iter().cloned().fold(0.0f64, f64::max);
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let pass = max <= args.tol;
    report_verify(ctx, args.pairs, max, mean, args.tol, pass);
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn report_verify(ctx: &Context, pairs: usize, max: f64, mean: f64, tol: f64, pass: bool) {
    let status = if pass { "pass" } else { "fail" };
    if ctx.porcelain {
        println!("pairs\t{pairs}");
        if pairs > 0 {
            println!("max_error\t{max:e}");
            println!("mean_error\t{mean:e}");
        }
        println!("tolerance\t{tol:e}");
        println!("status\t{status}");
    } else {
        println!("pairs: {pairs}");
        if pairs > 0 {
            println!("max |protected − plaintext|: {max:.3e}");
            println!("mean |protected − plaintext|: {mean:.3e}");
        }
        println!("tolerance: {tol:.3e}");
        println!("status: {status}");
    }
}

#[derive(Args)]
pub struct BenchArgs {
    /// Feature dimension for the synthetic workload.
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    /// Key size in bits.
    #[arg(long, default_value_t = 512)]
    pub size: u32,
    /// Timed trials for each operation.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
}

const BENCH_WARMUP: usize = 10;
// Reference timings from the original measurement campaign for this scheme
// (Xeon E5-2630 @ 2.20 GHz); aspirational, not a gate.
const STRETCH_ENROLL_MS: f64 = 0.59;
const STRETCH_MATCH_MS: f64 = 0.30;

pub fn bench(ctx: &Context, args: BenchArgs) -> Result<ExitCode> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let mut rng = ctx.rng();
    let params = optimal_params(args.size, args.dim)?;
    let keys = generate_keys(args.size, &mut rng)?;

    let features: Vec<FeatureVector> = (0..args.trials + BENCH_WARMUP)
        .map(|_| random_unit_feature(args.dim, &mut rng))
        .collect();

    let mut records = Vec::with_capacity(features.len());
    for feature in features.iter().take(BENCH_WARMUP) {
        records.push(enroll_feature(feature, &params, &keys.public, &mut rng)?);
    }
    let started = Instant::now();
    for feature in features.iter().skip(BENCH_WARMUP) {
        records.push(enroll_feature(feature, &params, &keys.public, &mut rng)?);
    }
    let enroll_ms = started.elapsed().as_secs_f64() * 1000.0 / args.trials as f64;

    let pairs: Vec<(usize, usize)> = (0..args.trials + BENCH_WARMUP)
        .map(|_| {
            let i = rng.gen_range(0..records.len());
            let j = (i + 1 + rng.gen_range(0..records.len() - 1)) % records.len();
            (i, j)
        })
        .collect();
    for &(i, j) in pairs.iter().take(BENCH_WARMUP) {
        match_pair(&records[i], &records[j], &keys, &params)?;
    }
    let started = Instant::now();
    for &(i, j) in pairs.iter().skip(BENCH_WARMUP) {
        match_pair(&records[i], &records[j], &keys, &params)?;
    }
    let match_ms = started.elapsed().as_secs_f64() * 1000.0 / args.trials as f64;

    let record_bytes = write_record_document(&records[0], &params).len();
    let key_bytes = write_private_key_document(&keys).len();

    if ctx.porcelain {
        println!("trials\t{}", args.trials);
        println!("enroll_ms_avg\t{enroll_ms:.4}");
        println!("match_ms_avg\t{match_ms:.4}");
        println!("record_bytes\t{record_bytes}");
        println!("key_bytes\t{key_bytes}");
        println!("params\t{params}");
        println!("stretch_enroll_ms\t{STRETCH_ENROLL_MS}");
        println!("stretch_match_ms\t{STRETCH_MATCH_MS}");
    } else {
        println!("trials: {}", args.trials);
        println!("enroll: {enroll_ms:.3} ms avg");
        println!("match: {match_ms:.3} ms avg");
        println!("record: {record_bytes} bytes");
        println!("private key: {key_bytes} bytes");
        println!("params: {params}");
        println!(
            "stretch target: {STRETCH_ENROLL_MS} ms enroll / {STRETCH_MATCH_MS} ms match"
        );
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct StudyArgs {
    /// Unit-norm feature file.
    #[arg(long)]
    pub features: PathBuf,
    /// Comma-separated list of permutation-strength ratios to sweep.
    #[arg(long = "lm-ratios", value_delimiter = ',', default_values_t = [4.0, 128.0])]
    pub lm_ratios: Vec<f64>,
    /// Permutations drawn per feature and ratio.
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    /// Segment count.
    #[arg(long, default_value_t = 64)]
    pub segments: u32,
    /// Scale bound.
    #[arg(long, default_value_t = 3)]
    pub scale_bound: u64,
    /// Rescale features to unit norm first.
    #[arg(long)]
    pub normalize: bool,
}

const HISTOGRAM_BINS: usize = 20;

#[derive(Clone, Copy)]
enum PermutationMode {
    ScaleOnly,
    SignOnly,
    Both,
}

impl PermutationMode {
    const ALL: [PermutationMode; 3] = [
        PermutationMode::ScaleOnly,
        PermutationMode::SignOnly,
        PermutationMode::Both,
    ];

    fn label(self) -> &'static str {
        match self {
            PermutationMode::ScaleOnly => "scale-only",
            PermutationMode::SignOnly => "sign-only",
            PermutationMode::Both => "both",
        }
    }
}

pub fn study_permutation(ctx: &Context, args: StudyArgs) -> Result<ExitCode> {
    if args.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    for &ratio in &args.lm_ratios {
        if !(ratio > 0.0) || !ratio.is_finite() {
            bail!("lm-ratio {ratio} is not positive");
        }
    }
    let mut rng = ctx.rng();
    let rows = read_features(&args.features)
        .with_context(|| format!("reading {}", args.features.display()))?;
    if rows.is_empty() {
        bail!("{}: no feature rows", args.features.display());
    }
    let dim = rows[0].values.len();
    let features: Vec<FeatureVector> = rows
        .iter()
        .map(|row| {
            let feature = feature_from_row(row, args.normalize)?;
            if (feature.norm() - 1.0).abs() > 1e-6 {
                bail!(
                    "line {}: feature norm {} is not 1 (pass --normalize to rescale)",
                    row.line,
                    feature.norm()
                );
            }
            Ok(feature)
        })
        .collect::<Result<_>>()?;

    for &ratio in &args.lm_ratios {
        // a key size large enough to make the parameter set well-formed;
        // the study never touches encryption
        let min_bits = securevector::min_key_size(args.segments, args.scale_bound)?;
        let key_bits = min_bits.next_multiple_of(2).max(64);
        let params = ParamSet::new(
            key_bits,
            args.segments,
            args.scale_bound,
            ratio,
            dim,
            MetricMode::CosineNormalized,
        )?;
        for mode in PermutationMode::ALL {
            let mut histogram = [0usize; HISTOGRAM_BINS];
            let mut total = 0.0f64;
            let mut count = 0usize;
            for feature in &features {
                for _ in 0..args.repeats {
                    let (scale_indices, signs) = draw_permutation(mode, &params, &mut rng);
                    let (permuted, _) = permute(feature, &scale_indices, &signs, &params)?;
                    let value = cosine(feature.values(), &permuted);
                    let bin = (((value + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor() as isize)
                        .clamp(0, HISTOGRAM_BINS as isize - 1)
                        as usize;
                    histogram[bin] += 1;
                    total += value;
                    count += 1;
                }
            }
            let mean = total / count as f64;
            if ctx.porcelain {
                println!("mean\t{ratio}\t{}\t{mean:.4}", mode.label());
                for (bin, &n) in histogram.iter().enumerate() {
                    let lo = -1.0 + 2.0 * bin as f64 / HISTOGRAM_BINS as f64;
                    let hi = lo + 2.0 / HISTOGRAM_BINS as f64;
                    println!("hist\t{ratio}\t{}\t{lo:.2}\t{hi:.2}\t{n}", mode.label());
                }
            } else {
                println!(
                    "lm-ratio {ratio}, permuted with {}: n={count} mean={mean:.4}",
                    mode.label()
                );
                for (bin, &n) in histogram.iter().enumerate() {
                    let lo = -1.0 + 2.0 * bin as f64 / HISTOGRAM_BINS as f64;
                    let hi = lo + 2.0 / HISTOGRAM_BINS as f64;
                    println!("  [{lo:+.2}, {hi:+.2})  {n}");
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn draw_permutation(
    mode: PermutationMode,
    params: &ParamSet,
    rng: &mut ChaCha12Rng,
) -> (Vec<u64>, Vec<i8>) {
    let (scale_indices, signs) = sample_permutation(params.segments, params.scale_bound, rng);
    match mode {
        PermutationMode::ScaleOnly => {
            (scale_indices, vec![1; params.segments as usize])
        }
        // scale index L is the identity factor e⁰
        PermutationMode::SignOnly => {
            (vec![params.scale_bound; params.segments as usize], signs)
        }
        PermutationMode::Both => (scale_indices, signs),
    }
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn load_keypair(prefix: &Path) -> Result<KeyPair> {
    let path = suffixed(prefix, ".key");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("missing private key {}", path.display()))?;
    let (public, private) = parse_key_document(&text)?;
    let private =
        private.ok_or_else(|| anyhow!("{} contains no private material", path.display()))?;
    Ok(KeyPair { public, private })
}

fn feature_from_row(row: &FeatureRow, normalize: bool) -> Result<FeatureVector> {
    let feature = FeatureVector::new(row.values.clone())
        .map_err(|err| anyhow!("line {}: {err}", row.line))?;
    Ok(if normalize { feature.normalized() } else { feature })
}

fn label_for(row: &FeatureRow) -> String {
    row.label.clone().unwrap_or_else(|| row.line.to_string())
}

fn enroll_row(
    row: &FeatureRow,
    params: &ParamSet,
    public: &PublicKey,
    normalize: bool,
    rng: &mut ChaCha12Rng,
) -> Result<EnrolledRecord> {
    let feature = feature_from_row(row, normalize)?;
    let mut record = enroll_feature(&feature, params, public, rng)
        .map_err(|err| anyhow!("line {}: {err}", row.line))?;
    record.label = Some(label_for(row));
    Ok(record)
}

fn plaintext_score(metric: MetricMode, x: &FeatureVector, y: &FeatureVector) -> f64 {
    let dot: f64 = x.values().iter().zip(y.values()).map(|(a, b)| a * b).sum();
    match metric {
        MetricMode::CosineNormalized | MetricMode::DotUnnormalized => dot,
        MetricMode::EuclideanNormalized => 2.0 - 2.0 * dot,
        MetricMode::EuclideanUnnormalized => x
            .values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum(),
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn random_unit_feature(dim: usize, rng: &mut ChaCha12Rng) -> FeatureVector {
    loop {
        let values: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Ok(feature) = FeatureVector::new(values) {
            return feature.normalized();
        }
    }
}

fn in_pool<T: Send>(workers: Option<usize>, run: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building worker pool")?
            .install(run),
        None => run(),
    }
}
