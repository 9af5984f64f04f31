//! Embedding and chat-completion backends.

pub mod embed;
pub mod http;
pub mod llm;

pub use embed::{cosine_sim, text_similarity, EmbeddingProvider, HashEmbedder, HttpEmbedClient};
pub use http::{FixtureMode, HttpClient, HttpEndpoint, RetryPolicy, UreqTransport};
pub use llm::{CompletionRequest, HttpChatClient, LlmClient, OfflineLlm, ResponseFormat, ScriptedLlm};
