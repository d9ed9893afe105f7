//! The complete policy: attention bottleneck feeding the LSTM controller.

use crate::attention::{Glimpse, SelfAttention};
use crate::config::AgentConfig;
use crate::controller::{step_controller, Action, ControllerState, LstmParams};
use crate::error::{Error, Result};
use crate::genome::{decode, Genome};
use crate::image::Frame;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct AttentionAgent<T> {
    config: AgentConfig,
    attention: SelfAttention<T>,
    controller: LstmParams<T>,
}

impl<T: Scalar> AttentionAgent<T> {
    pub fn from_genome(genome: &Genome, config: &AgentConfig) -> Result<Self> {
        config.validate()?;
        let (attention, controller) = decode::<T>(genome, config)?;
        Ok(AttentionAgent {
            attention: SelfAttention::new(config.grid()?, attention, config.top_k)?,
            controller,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn attention(&self) -> &SelfAttention<T> {
        &self.attention
    }

    pub fn controller(&self) -> &LstmParams<T> {
        &self.controller
    }

    pub fn initial_state(&self) -> ControllerState<T> {
        ControllerState::reset(self.config.hidden_size)
    }

    /// One decision: vote over patches, keep the top K, step the controller.
    /// `frame` must already be `L × L`.
    pub fn act(&self, frame: &Frame<T>, state: &mut ControllerState<T>) -> Result<(Action, Glimpse<T>)> {
        if frame.width() != self.config.input_size || frame.height() != self.config.input_size {
            return Err(Error::Config(format!(
                "agent expects {0}x{0} frames, got {1}x{2}",
                self.config.input_size,
                frame.height(),
                frame.width()
            )));
        }
        let glimpse = self.attention.glimpse(frame)?;
        let (action, next) = step_controller(&glimpse.features(), state, &self.controller, &self.config.action)?;
        *state = next;
        Ok((action, glimpse))
    }
}
