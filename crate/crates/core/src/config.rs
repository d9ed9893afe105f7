use crate::attention::PatchGrid;
use crate::controller::ActionSpec;
use crate::error::{Error, Result};
use crate::image::CHANNELS;

/// Architecture hyper-parameters of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    /// Side length `L` of the square input image.
    pub input_size: usize,
    /// Window size `M`.
    pub window_size: usize,
    /// Stride `S`.
    pub stride: usize,
    /// Key/query dimension `d`.
    pub key_dim: usize,
    /// Number of patches kept, `K`.
    pub top_k: usize,
    /// LSTM hidden size.
    pub hidden_size: usize,
    pub action: ActionSpec,
}

impl AgentConfig {
    pub const DEFAULT_INPUT_SIZE: usize = 96;
    pub const DEFAULT_WINDOW_SIZE: usize = 7;
    pub const DEFAULT_STRIDE: usize = 4;
    pub const DEFAULT_KEY_DIM: usize = 4;
    pub const DEFAULT_TOP_K: usize = 10;
    pub const DEFAULT_HIDDEN_SIZE: usize = 16;

    /// The full-size architecture: 96px input, 7px windows at stride 4,
    /// `d = 4`, `K = 10`, 16 LSTM units.
    pub fn standard(action: ActionSpec) -> Self {
        AgentConfig {
            input_size: Self::DEFAULT_INPUT_SIZE,
            window_size: Self::DEFAULT_WINDOW_SIZE,
            stride: Self::DEFAULT_STRIDE,
            key_dim: Self::DEFAULT_KEY_DIM,
            top_k: Self::DEFAULT_TOP_K,
            hidden_size: Self::DEFAULT_HIDDEN_SIZE,
            action,
        }
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.input_size, self.window_size, self.stride)
    }

    /// `d_in = M·M·3`.
    pub fn patch_dim(&self) -> usize {
        self.window_size * self.window_size * CHANNELS
    }

    /// Controller input length, two coordinates per selected patch.
    pub fn feature_dim(&self) -> usize {
        2 * self.top_k
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if self.key_dim == 0 {
            return Err(Error::Config("key_dim must be at least 1".into()));
        }
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be at least 1".into()));
        }
        if self.top_k == 0 || self.top_k > grid.num_patches() {
            return Err(Error::Config(format!(
                "top_k {} must be in 1..={}",
                self.top_k,
                grid.num_patches()
            )));
        }
        self.action.validate()
    }
}
