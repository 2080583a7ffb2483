"""Sentence refinement through an OpenAI-compatible chat-completions API.

Applied at inference only: each decoded sentence is sent with a fixed
reconstruction prompt; a "[False]" reply or any request failure keeps the
original sentence.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import requests

log = logging.getLogger(__name__)

PROMPT_PREFIX = (
    "As a text reconstructor, your task is to restore corrupted sentences to their "
    "original form while making minimum changes. You should adjust the spaces and "
    "punctuation marks as necessary. Do not introduce any additional information. "
    "If you are unable to reconstruct the text, respond with [False]. "
    "Reconstruct the following text: "
)

REFUSAL_MARKER = "[False]"


@dataclass
class RefinementConfig:
    enabled: bool = False
    endpoint_url: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    model_name: str = "gpt-4"
    max_in_flight: int = 4
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 0.5


def build_request_body(sentence: str, model_name: str) -> dict:
    return {
        "model": model_name,
        "messages": [{"role": "user", "content": PROMPT_PREFIX + sentence}],
    }


def refine_one(sentence: str, config: RefinementConfig, session=None) -> str:
    """Refine a single sentence; falls back to the original on any failure."""
    http = session if session is not None else requests
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(config.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = build_request_body(sentence, config.model_name)
    delay = config.backoff_s
    for attempt in range(config.max_retries):
        try:
            resp = http.post(config.endpoint_url, json=body, headers=headers, timeout=config.timeout_s)
            if resp.status_code >= 500:
                raise requests.RequestException(f"server error {resp.status_code}")
            resp.raise_for_status()
            content = resp.json()["choices"][0]["message"]["content"]
            if not isinstance(content, str):
                raise ValueError("content is not a string")
            if content.strip() == REFUSAL_MARKER:
                log.info("refinement declined for %r; keeping original", sentence)
                return sentence
            return content.strip()
        except (requests.RequestException, ValueError, KeyError, IndexError) as e:
            if attempt + 1 < config.max_retries:
                time.sleep(delay)
                delay *= 2.0
            else:
                log.warning("refinement failed for %r after %d attempts (%s); keeping original",
                            sentence, config.max_retries, e)
    return sentence


def refine_sentences(decoded: list, config: RefinementConfig) -> list:
    """Refine every decoded sentence with a bounded number of in-flight requests."""
    if not config.enabled or not decoded:
        return list(decoded)
    with ThreadPoolExecutor(max_workers=max(1, config.max_in_flight)) as pool:
        return list(pool.map(lambda s: refine_one(s, config), decoded))
