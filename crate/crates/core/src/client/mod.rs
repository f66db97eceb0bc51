//! Uniform model interface: prompt rendering, an OpenAI-compatible wire
//! client, a deterministic position-bias simulator, and answer parsing.

mod parse;
mod prompt;
mod sim;
mod wire;

pub use parse::{parse_answer, AnswerMode, AnswerParser};
pub use prompt::{
    render_prompt, render_video_prompt, render_with_demonstrations, Demonstration, ImageSource,
    Prompt, PromptSegment, DEFAULT_TEMPLATE,
};
pub use sim::{simulate_response, BiasProfile};
pub use wire::{
    prompt_from_wire, ChatClient, DecodingParams, ModelEndpoint, RateLimiter, WireFailure,
    WireResponse,
};
