use std::fs;
use std::path::{Path, PathBuf};

use attn_core::{AgentConfig, RgbImage, Scalar};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};
use crate::rollout::EpisodeTrace;
use crate::train::atomic_write;

pub const DEFAULT_ANALYSIS_EPISODES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisOptions {
    /// Upper tail of importance values that goes into the histogram.
    pub top_fraction: f64,
    pub bins: usize,
    /// Exemplar ranges as quantiles `(lo, hi)` of all importance values.
    pub ranges: Vec<(f64, f64)>,
    pub samples_per_range: usize,
    pub seed: u64,
    /// Exemplar patches are written upscaled by this factor.
    pub patch_scale: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            top_fraction: 0.05,
            bins: 20,
            ranges: vec![(0.99, 1.0), (0.94, 0.96), (0.0, 0.05)],
            samples_per_range: 8,
            seed: 0,
            patch_scale: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RangeExemplars {
    pub quantiles: (f64, f64),
    /// Importance bounds the quantiles resolved to.
    pub bounds: (f64, f64),
    /// Patches whose importance fell in the bounds.
    pub candidates: usize,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceReport {
    pub values: usize,
    pub threshold: f64,
    pub histogram: Vec<HistogramBin>,
    pub ranges: Vec<RangeExemplars>,
}

/// Value at quantile `q` by linear interpolation over sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Equal-width histogram. Values that all coincide give one bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let Some(&first) = values.first() else {
        return Vec::new();
    };
    let (lo, hi) = values.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi || bins <= 1 {
        return vec![HistogramBin {
            lower: lo,
            upper: hi,
            count: values.len(),
        }];
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<_> = (0..bins)
        .map(|b| HistogramBin {
            lower: lo + width * b as f64,
            upper: if b + 1 == bins { hi } else { lo + width * (b + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

/// Histogram of the most important patches and exemplar patch images per
/// importance range, written to `out_dir` (`histogram.tsv`, `exemplars/`).
/// The traces must carry frames.
pub fn importance_analysis<T: Scalar>(
    traces: &[EpisodeTrace<T>],
    config: &AgentConfig,
    options: &AnalysisOptions,
    out_dir: &Path,
) -> Result<ImportanceReport> {
    if traces.iter().flat_map(|t| &t.steps).any(|s| s.frame.is_none()) {
        return Err(HarnessError::MissingFrames);
    }
    importance_analysis_with(traces, config, options, out_dir, |t, steps| {
        Ok(steps
            .iter()
            .map(|&s| traces[t].steps[s].frame.clone().expect("frames checked above"))
            .collect())
    })
}

/// Like [`importance_analysis`], but exemplar frames come from `frames`,
/// called once per trace with the step indices needed from it. This lets a
/// caller replay an episode instead of keeping every frame in memory.
pub fn importance_analysis_with<T, F>(
    traces: &[EpisodeTrace<T>],
    config: &AgentConfig,
    options: &AnalysisOptions,
    out_dir: &Path,
    mut frames: F,
) -> Result<ImportanceReport>
where
    T: Scalar,
    F: FnMut(usize, &[usize]) -> Result<Vec<RgbImage>>,
{
    if !(options.top_fraction > 0.0 && options.top_fraction <= 1.0) {
        return Err(HarnessError::Config(format!("top fraction {} not in (0, 1]", options.top_fraction)));
    }
    if options.ranges.iter().any(|&(lo, hi)| !(0.0 <= lo && lo <= hi && hi <= 1.0)) {
        return Err(HarnessError::Config("importance ranges must be quantile pairs 0 ≤ lo ≤ hi ≤ 1".into()));
    }
    if traces.iter().all(|t| t.steps.is_empty()) {
        return Err(HarnessError::EmptyReport);
    }
    let grid = config.grid()?;

    // (importance, trace, step, patch) for every patch of every step
    let mut entries: Vec<(f64, usize, usize, usize)> = Vec::new();
    for (t, trace) in traces.iter().enumerate() {
        for (s, step) in trace.steps.iter().enumerate() {
            entries.extend(step.importance.iter().enumerate().map(|(p, v)| (v.to_f64_lossy(), t, s, p)));
        }
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    let sorted: Vec<f64> = entries.iter().map(|e| e.0).collect();

    let threshold = quantile(&sorted, 1.0 - options.top_fraction);
    let top: Vec<f64> = sorted.iter().copied().filter(|&v| v >= threshold).collect();
    let hist = histogram(&top, options.bins);

    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut tsv = String::from("lower\tupper\tcount\n");
    for b in &hist {
        tsv.push_str(&format!("{}\t{}\t{}\n", b.lower, b.upper, b.count));
    }
    atomic_write(&out_dir.join("histogram.tsv"), tsv.as_bytes())?;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut picked = Vec::new();
    let mut ranges = Vec::new();
    for (r, &(qlo, qhi)) in options.ranges.iter().enumerate() {
        let bounds = (quantile(&sorted, qlo), quantile(&sorted, qhi));
        let start = sorted.partition_point(|&v| v < bounds.0);
        let end = sorted.partition_point(|&v| v <= bounds.1);
        let pool = &entries[start..end];
        let n = options.samples_per_range.min(pool.len());
        let mut picks: Vec<usize> = sample(&mut rng, pool.len(), n).into_vec();
        picks.sort_unstable();
        picked.extend(picks.iter().enumerate().map(|(j, &k)| (r, j, pool[k])));
        ranges.push(RangeExemplars {
            quantiles: (qlo, qhi),
            bounds,
            candidates: pool.len(),
            files: Vec::new(),
        });
    }

    let exemplar_dir = out_dir.join("exemplars");
    fs::create_dir_all(&exemplar_dir).map_err(|e| HarnessError::io(&exemplar_dir, e))?;
    let l = config.input_size;
    let m = config.window_size;
    let mut by_trace: Vec<usize> = picked.iter().map(|p| p.2 .1).collect();
    by_trace.sort_unstable();
    by_trace.dedup();
    for t in by_trace {
        let mut steps: Vec<usize> = picked.iter().filter(|p| p.2 .1 == t).map(|p| p.2 .2).collect();
        steps.sort_unstable();
        steps.dedup();
        let images = frames(t, &steps)?;
        if images.len() != steps.len() {
            return Err(HarnessError::MissingFrames);
        }
        for &(r, j, (_, _, s, p)) in picked.iter().filter(|p| p.2 .1 == t) {
            let frame = &images[steps.binary_search(&s).expect("step was requested")];
            let input = frame.resize_nearest(l, l);
            let (oy, ox) = grid.origin(p);
            let mut patch = RgbImage::new(m, m);
            for y in 0..m {
                for x in 0..m {
                    patch.put_pixel(x, y, input.pixel(ox + x, oy + y));
                }
            }
            let path = exemplar_dir.join(format!("range{r}_{j:03}.ppm"));
            atomic_write(&path, &patch.upscale(options.patch_scale.max(1)).to_ppm_bytes())?;
            ranges[r].files.push(path);
        }
    }
    for range in &mut ranges {
        range.files.sort();
    }

    Ok(ImportanceReport {
        values: sorted.len(),
        threshold,
        histogram: hist,
        ranges,
    })
}
