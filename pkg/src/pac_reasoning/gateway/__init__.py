from .cache import CachedCompletion, CompletionCache, cache_key
from .client import ChatClient
from .config import EndpointConfig, Endpoints, load_endpoints, nonthinking_defaults, thinking_defaults
from .data import PromptItem, ingest_dataset, read_prompts, read_records, write_jsonl, write_records
from .pipeline import EXTRACTORS, ExpertOracle, boxed_extractor, score_prompt, score_prompts
from .prompts import VERBALIZED_SYSTEM_PROMPT, VERBALIZED_USER_TEMPLATE, verbalized_messages

__all__ = [
    "CachedCompletion",
    "ChatClient",
    "CompletionCache",
    "EXTRACTORS",
    "EndpointConfig",
    "Endpoints",
    "ExpertOracle",
    "PromptItem",
    "VERBALIZED_SYSTEM_PROMPT",
    "VERBALIZED_USER_TEMPLATE",
    "boxed_extractor",
    "cache_key",
    "ingest_dataset",
    "load_endpoints",
    "nonthinking_defaults",
    "read_prompts",
    "read_records",
    "score_prompt",
    "score_prompts",
    "thinking_defaults",
    "verbalized_messages",
    "write_jsonl",
    "write_records",
]
