"""Text-generation metrics: per-order BLEU, ROUGE-1, and BERTScore.

BLEU-N is reported per n-gram order (clipped corpus-level precision times
the brevity penalty), not as a cumulative geometric mean, so the four
orders are independent columns. ROUGE-1 and BERTScore are macro-averaged
over sentence pairs. BERTScore takes a pluggable embedding provider and
applies no IDF weighting or baseline rescaling.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError
from .tokenizer import tokenize_text

log = logging.getLogger(__name__)


def _ngrams(tokens: list, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidates: list, references: list, n: int) -> float:
    """Corpus-level clipped n-gram precision with brevity penalty."""
    if not 1 <= n <= 4:
        raise MetricError(f"BLEU order must be 1..4, got {n}")
    if not candidates:
        raise MetricError("empty candidate corpus")
    if len(candidates) != len(references):
        raise MetricError(f"{len(candidates)} candidates vs {len(references)} references")
    matched = 0
    total = 0
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        ct = tokenize_text(cand)
        rt = tokenize_text(ref)
        cand_len += len(ct)
        ref_len += len(rt)
        cn = _ngrams(ct, n)
        rn = _ngrams(rt, n)
        total += sum(cn.values())
        matched += sum(min(count, rn[g]) for g, count in cn.items())
    if total == 0 or matched == 0:
        return 0.0
    precision = matched / total
    bp = 1.0 if cand_len >= ref_len else float(np.exp(1.0 - ref_len / cand_len))
    return precision * bp


def _prf(overlap: int, cand_count: int, ref_count: int) -> tuple:
    p = overlap / cand_count if cand_count else 0.0
    r = overlap / ref_count if ref_count else 0.0
    f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f


def rouge1(candidates: list, references: list) -> dict:
    """Clipped unigram overlap, macro-averaged P/R/F over sentence pairs."""
    if not candidates:
        raise MetricError("empty candidate corpus")
    if len(candidates) != len(references):
        raise MetricError(f"{len(candidates)} candidates vs {len(references)} references")
    ps, rs, fs = [], [], []
    for cand, ref in zip(candidates, references):
        ct = Counter(tokenize_text(cand))
        rt = Counter(tokenize_text(ref))
        overlap = sum(min(c, rt[tok]) for tok, c in ct.items())
        p, r, f = _prf(overlap, sum(ct.values()), sum(rt.values()))
        ps.append(p)
        rs.append(r)
        fs.append(f)
    return {"p": float(np.mean(ps)), "r": float(np.mean(rs)), "f": float(np.mean(fs))}


class OneHotProvider:
    """Identity embeddings: cosine similarity 1 for equal tokens, else 0.

    Built from the texts it will embed so that equal tokens share an axis
    across calls; greedy matching then reduces to exact token matching.
    """

    def __init__(self, texts: list):
        self.index = {}
        for text in texts:
            for tok in tokenize_text(text):
                self.index.setdefault(tok, len(self.index))

    def __call__(self, tokens: list) -> np.ndarray:
        out = np.zeros((len(tokens), max(len(self.index), 1)))
        for i, t in enumerate(tokens):
            out[i, self.index[t]] = 1.0
        return out


class LMEncoderProvider:
    """Contextual embeddings from the mini LM encoder's final hidden states.

    Token sequences beyond the encoder's position table are truncated; the
    tail then reuses the last row so the output still has one row per token.
    """

    def __init__(self, lm, vocab):
        self.lm = lm
        self.vocab = vocab

    def __call__(self, tokens: list) -> np.ndarray:
        from .lm import UNK

        cap = self.lm.config.max_positions
        ids = [self.vocab.index.get(t, UNK) for t in tokens[:cap]]
        emb = self.lm.embed_tokens(np.asarray(ids, dtype=np.int64))
        states = self.lm.encode_source(emb).data
        if len(tokens) > cap:
            states = np.vstack([states, np.repeat(states[-1:], len(tokens) - cap, axis=0)])
        return states


def _greedy_cosine(cand_emb: np.ndarray, ref_emb: np.ndarray) -> tuple:
    def normalize(x):
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        return x / np.maximum(norms, 1e-12)

    sim = normalize(cand_emb) @ normalize(ref_emb).T
    p = float(sim.max(axis=1).mean())
    r = float(sim.max(axis=0).mean())
    f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f


def bertscore(candidates: list, references: list, provider) -> dict:
    """Greedy cosine matching between token embeddings, macro-averaged P/R/F.

    Pairs with an empty side are skipped with a warning and excluded from
    the average.
    """
    if not candidates:
        raise MetricError("empty candidate corpus")
    if len(candidates) != len(references):
        raise MetricError(f"{len(candidates)} candidates vs {len(references)} references")
    ps, rs, fs = [], [], []
    skipped = 0
    for cand, ref in zip(candidates, references):
        ct = tokenize_text(cand)
        rt = tokenize_text(ref)
        if not ct or not rt:
            skipped += 1
            log.warning("bertscore: skipping pair with empty side (cand=%r, ref=%r)", cand, ref)
            continue
        p, r, f = _greedy_cosine(provider(ct), provider(rt))
        ps.append(p)
        rs.append(r)
        fs.append(f)
    if not ps:
        raise MetricError(f"all {skipped} pairs were empty-sided")
    return {"p": float(np.mean(ps)), "r": float(np.mean(rs)), "f": float(np.mean(fs))}


@dataclass
class MetricsReport:
    bleu: dict = field(default_factory=dict)  # {1: score, ..., 4: score}
    rouge1: dict = field(default_factory=dict)  # {p, r, f}
    bertscore: dict = field(default_factory=dict)  # {p, r, f}
    per_subject: dict = field(default_factory=dict)
    num_pairs: int = 0

    def to_dict(self) -> dict:
        return {
            "bleu": {str(k): v for k, v in self.bleu.items()},
            "rouge1": self.rouge1,
            "bertscore": self.bertscore,
            "per_subject": self.per_subject,
            "num_pairs": self.num_pairs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self, label: str = "run") -> str:
        header = (
            f"{'method':<24} {'BLEU-1':>7} {'BLEU-2':>7} {'BLEU-3':>7} {'BLEU-4':>7} "
            f"{'R1-R':>7} {'R1-P':>7} {'R1-F':>7} {'BS-P':>7} {'BS-R':>7} {'BS-F':>7}"
        )
        rows = [header, "-" * len(header), self._row(label, self.bleu, self.rouge1, self.bertscore)]
        for subject in sorted(self.per_subject):
            d = self.per_subject[subject]
            rows.append(self._row(f"  {subject}", {int(k): v for k, v in d["bleu"].items()}, d["rouge1"], d["bertscore"]))
        return "\n".join(rows)

    @staticmethod
    def _row(label, bleu, rouge, bert) -> str:
        pct = lambda x: f"{100.0 * x:7.2f}"
        return (
            f"{label:<24} {pct(bleu.get(1, 0.0))} {pct(bleu.get(2, 0.0))} {pct(bleu.get(3, 0.0))} {pct(bleu.get(4, 0.0))} "
            f"{pct(rouge.get('r', 0.0))} {pct(rouge.get('p', 0.0))} {pct(rouge.get('f', 0.0))} "
            f"{pct(bert.get('p', 0.0))} {pct(bert.get('r', 0.0))} {pct(bert.get('f', 0.0))}"
        )


def evaluate(candidates: list, references: list, provider, subjects: list = None) -> MetricsReport:
    """Full metric battery; optional per-subject breakdown."""
    report = MetricsReport(
        bleu={n: bleu_n(candidates, references, n) for n in range(1, 5)},
        rouge1=rouge1(candidates, references),
        bertscore=bertscore(candidates, references, provider),
        num_pairs=len(candidates),
    )
    if subjects is not None:
        if len(subjects) != len(candidates):
            raise MetricError("subjects list length mismatch")
        for subject in sorted(set(subjects)):
            idx = [i for i, s in enumerate(subjects) if s == subject]
            cs = [candidates[i] for i in idx]
            rs = [references[i] for i in idx]
            report.per_subject[subject] = {
                "bleu": {str(n): bleu_n(cs, rs, n) for n in range(1, 5)},
                "rouge1": rouge1(cs, rs),
                "bertscore": bertscore(cs, rs, provider),
            }
    return report
