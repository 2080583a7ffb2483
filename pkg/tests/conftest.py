import numpy as np
import pytest

from eeg2text.brain import BrainConfig, BrainEncoder
from eeg2text.dataset import SynthSpec, synthesize_corpus
from eeg2text.lm import MiniLM, MiniLMConfig, Vocabulary

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Two subjects, six short sentences; enough for split/train smoke tests."""
    spec = SynthSpec(num_subjects=2, num_sentences=6, vocab_words=10, channels=4,
                     t_range=(3, 6), sentence_len_range=(2, 4), seed=7)
    return synthesize_corpus(spec)


@pytest.fixture(scope="session")
def micro_setup():
    """Micro config used for gradient checks: <= 5k parameters total."""
    spec = SynthSpec(num_subjects=2, num_sentences=4, vocab_words=6, channels=4,
                     t_range=(2, 3), sentence_len_range=(2, 3), seed=1)
    manifest, records = synthesize_corpus(spec)
    vocab = Vocabulary.build([r.text for r in records])
    brain_cfg = BrainConfig(in_channels=4, gru_hidden=3, fc_dim=6, conv_channels=4,
                            bte_layers=1, bte_heads=2, bte_ffn_dim=12, d_model=8,
                            out_dim=8, max_positions=8, dropout_rate=0.0)
    lm_cfg = MiniLMConfig(vocab_size=len(vocab), emb_dim=8, enc_layers=1, dec_layers=1,
                          heads=2, ffn_dim=12, head_hidden=8, max_positions=10,
                          dropout_rate=0.0)
    return manifest, records, vocab, brain_cfg, lm_cfg


@pytest.fixture()
def micro_models(micro_setup):
    manifest, records, vocab, brain_cfg, lm_cfg = micro_setup
    brain = BrainEncoder(brain_cfg, manifest.subjects, seed=0)
    lm = MiniLM(lm_cfg, seed=0)
    return manifest, records, vocab, brain, lm


def rng_for(seed):
    return np.random.default_rng(seed)
