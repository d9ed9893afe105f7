//! Flat genotype layout and the codec between genomes and agent parameters.
//!
//! Segment order is frozen: query weight, query bias, key weight, key bias,
//! then the LSTM input weights, recurrent weights, both bias sets and the
//! linear head. Matrices are filled row-major. Checkpoints carry a hash of
//! the layout so a genome is never decoded against a different one.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::attention::AttentionParams;
use crate::config::AgentConfig;
use crate::controller::{ActionSpec, LstmParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Flat vector of every trainable value.
#[derive(Clone, Debug, PartialEq)]
pub struct Genome(Vec<f64>);

impl Genome {
    pub fn new(values: Vec<f64>) -> Self {
        Genome(values)
    }

    pub fn zeros(len: usize) -> Self {
        Genome(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Genome {
    fn from(v: Vec<f64>) -> Self {
        Genome(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenomeLayout {
    segments: Vec<Segment>,
}

const LAYOUT_TAG: &[u8] = b"attn-genome-layout/v1";

impl GenomeLayout {
    pub fn for_config(config: &AgentConfig) -> Self {
        let d_in = config.patch_dim();
        let d = config.key_dim;
        let h = config.hidden_size;
        let input = config.feature_dim();
        let actions = config.action.dim();
        let shapes: [(&'static str, usize, usize); 10] = [
            ("query.weight", d_in, d),
            ("query.bias", 1, d),
            ("key.weight", d_in, d),
            ("key.bias", 1, d),
            ("lstm.weight_ih", 4 * h, input),
            ("lstm.weight_hh", 4 * h, h),
            ("lstm.bias_ih", 1, 4 * h),
            ("lstm.bias_hh", 1, 4 * h),
            ("head.weight", actions, h),
            ("head.bias", 1, actions),
        ];
        let mut offset = 0;
        let segments = shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let s = Segment {
                    name,
                    offset,
                    rows,
                    cols,
                };
                offset += s.len();
                s
            })
            .collect();
        GenomeLayout { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Total parameter count `P`.
    pub fn total(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    /// FNV-1a over the segment table; stable across platforms and runs.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(LAYOUT_TAG);
        for s in &self.segments {
            h.write(s.name.as_bytes());
            h.write(&[0]);
            for v in [s.offset, s.rows, s.cols] {
                h.write(&(v as u64).to_le_bytes());
            }
        }
        h.finish()
    }
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Parameter counts per group, in the three-row accounting used for reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub query: usize,
    pub key: usize,
    /// LSTM plus its linear output head.
    pub lstm: usize,
    pub total: usize,
}

impl ParamCounts {
    /// Counts from raw dimensions: patch length `d_in`, key dim `d`, `K`,
    /// hidden size and action dimension.
    pub fn from_dims(patch_dim: usize, key_dim: usize, top_k: usize, hidden: usize, actions: usize) -> Self {
        let projection = AttentionParams::<f64>::projection_param_count(patch_dim, key_dim);
        let lstm = LstmParams::<f64>::param_count(2 * top_k, hidden, actions);
        ParamCounts {
            query: projection,
            key: projection,
            lstm,
            total: 2 * projection + lstm,
        }
    }
}

pub fn count_params(config: &AgentConfig) -> ParamCounts {
    ParamCounts::from_dims(
        config.patch_dim(),
        config.key_dim,
        config.top_k,
        config.hidden_size,
        config.action.dim(),
    )
}

pub fn decode<T: Scalar>(
    genome: &Genome,
    config: &AgentConfig,
) -> Result<(AttentionParams<T>, LstmParams<T>)> {
    let layout = GenomeLayout::for_config(config);
    if genome.len() != layout.total() {
        return Err(Error::GenomeLength {
            expected: layout.total(),
            actual: genome.len(),
        });
    }
    let values = genome.values();
    let mut parts = layout.segments().iter().map(|s| {
        let data: Vec<T> = values[s.range()].iter().map(|&v| T::of(v)).collect();
        Matrix::from_vec(s.rows, s.cols, data).expect("segment sizes come from the layout")
    });
    let mut next = || parts.next().expect("layout has ten segments");

    let query_weight = next();
    let query_bias = next().into_vec();
    let key_weight = next();
    let key_bias = next().into_vec();
    let attention = AttentionParams::new(query_weight, query_bias, key_weight, key_bias)?;

    let lstm = LstmParams {
        weight_ih: next(),
        weight_hh: next(),
        bias_ih: next().into_vec(),
        bias_hh: next().into_vec(),
        weight_out: next(),
        bias_out: next().into_vec(),
    };
    Ok((attention, lstm))
}

pub fn encode<T: Scalar>(
    attention: &AttentionParams<T>,
    lstm: &LstmParams<T>,
    config: &AgentConfig,
) -> Result<Genome> {
    let layout = GenomeLayout::for_config(config);
    let pieces: [&[T]; 10] = [
        attention.query_weight.as_slice(),
        &attention.query_bias,
        attention.key_weight.as_slice(),
        &attention.key_bias,
        lstm.weight_ih.as_slice(),
        lstm.weight_hh.as_slice(),
        &lstm.bias_ih,
        &lstm.bias_hh,
        lstm.weight_out.as_slice(),
        &lstm.bias_out,
    ];
    let shapes = [
        attention.query_weight.shape(),
        (1, attention.query_bias.len()),
        attention.key_weight.shape(),
        (1, attention.key_bias.len()),
        lstm.weight_ih.shape(),
        lstm.weight_hh.shape(),
        (1, lstm.bias_ih.len()),
        (1, lstm.bias_hh.len()),
        lstm.weight_out.shape(),
        (1, lstm.bias_out.len()),
    ];
    let mut values = Vec::with_capacity(layout.total());
    for ((segment, piece), shape) in layout.segments().iter().zip(pieces).zip(shapes) {
        if shape != (segment.rows, segment.cols) {
            return Err(Error::shape(
                segment.name,
                format!("{}x{}", segment.rows, segment.cols),
                format!("{}x{}", shape.0, shape.1),
            ));
        }
        values.extend(piece.iter().map(|v| v.to_f64_lossy()));
    }
    Ok(Genome(values))
}

const GENOME_MAGIC: &[u8; 8] = b"ATTNGEN\0";
const GENOME_VERSION: u32 = 1;

pub(crate) fn write_config<W: Write>(w: &mut W, config: &AgentConfig) -> Result<()> {
    for v in [
        config.input_size,
        config.window_size,
        config.stride,
        config.key_dim,
        config.top_k,
        config.hidden_size,
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    match &config.action {
        ActionSpec::Continuous { bounds } => {
            w.write_u8(0)?;
            w.write_u32::<LittleEndian>(bounds.len() as u32)?;
            for &(lo, hi) in bounds {
                w.write_f64::<LittleEndian>(lo)?;
                w.write_f64::<LittleEndian>(hi)?;
            }
        }
        ActionSpec::Discrete { n } => {
            w.write_u8(1)?;
            w.write_u32::<LittleEndian>(*n as u32)?;
        }
    }
    Ok(())
}

pub(crate) fn read_config<R: Read>(r: &mut R) -> Result<AgentConfig> {
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let kind = r.read_u8()?;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let action = match kind {
        0 => {
            let bounds = (0..dim)
                .map(|_| Ok((r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?)))
                .collect::<Result<Vec<_>>>()?;
            ActionSpec::Continuous { bounds }
        }
        1 => ActionSpec::Discrete { n: dim },
        other => return Err(Error::Checkpoint(format!("unknown action kind {other}"))),
    };
    let config = AgentConfig {
        input_size: dims[0],
        window_size: dims[1],
        stride: dims[2],
        key_dim: dims[3],
        top_k: dims[4],
        hidden_size: dims[5],
        action,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored agent config is invalid: {e}")))?;
    Ok(config)
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    w.write_u64::<LittleEndian>(values.len() as u64)?;
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, limit: usize) -> Result<Vec<f64>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    if len > limit {
        return Err(Error::Checkpoint(format!("vector of {len} values exceeds limit {limit}")));
    }
    let mut out = vec![0.0; len];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

/// Writes a genome checkpoint.
///
/// Layout (all little-endian): magic `ATTNGEN\0`, `u32` version, `u64` layout
/// hash, the agent config, `u64` parameter count, then the raw `f64` values.
pub fn write_genome<W: Write>(mut w: W, genome: &Genome, config: &AgentConfig) -> Result<()> {
    let layout = GenomeLayout::for_config(config);
    if genome.len() != layout.total() {
        return Err(Error::GenomeLength {
            expected: layout.total(),
            actual: genome.len(),
        });
    }
    w.write_all(GENOME_MAGIC)?;
    w.write_u32::<LittleEndian>(GENOME_VERSION)?;
    w.write_u64::<LittleEndian>(layout.hash())?;
    write_config(&mut w, config)?;
    write_f64s(&mut w, genome.values())?;
    Ok(())
}

pub fn read_genome<R: Read>(mut r: R) -> Result<(Genome, AgentConfig)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != GENOME_MAGIC {
        return Err(Error::Checkpoint("not a genome checkpoint".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != GENOME_VERSION {
        return Err(Error::Checkpoint(format!("unsupported genome version {version}")));
    }
    let stored_hash = r.read_u64::<LittleEndian>()?;
    let config = read_config(&mut r)?;
    let layout = GenomeLayout::for_config(&config);
    if layout.hash() != stored_hash {
        return Err(Error::LayoutMismatch {
            expected: layout.hash(),
            found: stored_hash,
        });
    }
    let values = read_f64s(&mut r, layout.total())?;
    if values.len() != layout.total() {
        return Err(Error::GenomeLength {
            expected: layout.total(),
            actual: values.len(),
        });
    }
    Ok((Genome(values), config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard() -> AgentConfig {
        AgentConfig::standard(ActionSpec::Continuous {
            bounds: vec![(-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
        })
    }

    #[test]
    fn standard_segments() {
        let layout = GenomeLayout::for_config(&standard());
        let sizes: Vec<usize> = layout.segments().iter().map(Segment::len).collect();
        assert_eq!(sizes, vec![588, 4, 588, 4, 1280, 1024, 64, 64, 48, 3]);
        assert_eq!(layout.total(), 3667);
    }

    #[test]
    fn segments_tile_the_genome() {
        let layout = GenomeLayout::for_config(&standard());
        let mut next = 0;
        for s in layout.segments() {
            assert_eq!(s.offset, next, "{}", s.name);
            next += s.len();
        }
        assert_eq!(next, layout.total());
    }

    #[test]
    fn layout_hash_is_pinned() {
        // Changing this value breaks every existing checkpoint.
        let layout = GenomeLayout::for_config(&standard());
        assert_eq!(layout.hash(), GenomeLayout::for_config(&standard()).hash());
        let mut other = standard();
        other.hidden_size = 8;
        assert_ne!(layout.hash(), GenomeLayout::for_config(&other).hash());
    }

    #[test]
    fn unit_dims_count() {
        let counts = ParamCounts::from_dims(1, 1, 1, 1, 1);
        assert_eq!(
            counts,
            ParamCounts {
                query: 2,
                key: 2,
                lstm: 22,
                total: 26
            }
        );
    }

    #[test]
    fn single_pixel_config_counts() {
        let config = AgentConfig {
            input_size: 1,
            window_size: 1,
            stride: 1,
            key_dim: 1,
            top_k: 1,
            hidden_size: 1,
            action: ActionSpec::Discrete { n: 1 },
        };
        // d_in is M·M·3 = 3 here, so a projection holds 3·1 + 1 values
        let counts = count_params(&config);
        assert_eq!(counts.query, 4);
        assert_eq!(counts.lstm, 22);
        assert_eq!(counts.total, counts.query + counts.key + counts.lstm);
        assert_eq!(counts.total, GenomeLayout::for_config(&config).total());
    }

    #[test]
    fn wrong_length_names_both_sizes() {
        let err = decode::<f64>(&Genome::zeros(10), &standard()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3667") && msg.contains("10"), "{msg}");
    }

    #[test]
    fn zero_genome_decodes_to_zero_params() {
        let config = standard();
        let (attn, lstm) = decode::<f32>(&Genome::zeros(3667), &config).unwrap();
        assert_eq!(attn, AttentionParams::zeros(147, 4));
        assert_eq!(lstm, LstmParams::zeros(20, 16, 3));
        assert_eq!(encode(&attn, &lstm, &config).unwrap(), Genome::zeros(3667));
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(read_genome(&b"NOTAGENOME______"[..]).is_err());
    }
}
