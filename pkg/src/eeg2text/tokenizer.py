"""Word-level tokenizer shared by the LM, the metrics, and the corpus loader.

Whitespace words with leading/trailing punctuation split off as separate
tokens; case is preserved. Detokenization joins tokens with single spaces
and attaches punctuation tokens without a preceding space, so
detokenize(tokenize(t)) == t up to whitespace normalization for text whose
punctuation follows words directly.
"""

from __future__ import annotations

import string

_PUNCT = set(string.punctuation)


def is_punct_token(token: str) -> bool:
    return len(token) > 0 and all(ch in _PUNCT for ch in token)


def tokenize_text(text: str) -> list:
    tokens = []
    for chunk in text.split():
        head = []
        while chunk and chunk[0] in _PUNCT:
            head.append(chunk[0])
            chunk = chunk[1:]
        tail = []
        while chunk and chunk[-1] in _PUNCT:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(head)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(tail))
    return tokens


def detokenize(tokens: list) -> str:
    parts = []
    for tok in tokens:
        if parts and is_punct_token(tok):
            parts[-1] = parts[-1] + tok
        else:
            parts.append(tok)
    return " ".join(parts)


def content_words(text: str) -> list:
    """Non-punctuation tokens of `text`, in reading order."""
    return [t for t in tokenize_text(text) if not is_punct_token(t)]
