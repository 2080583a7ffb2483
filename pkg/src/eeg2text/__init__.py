"""Open-vocabulary EEG-to-text decoding at desk scale."""

from .brain import BrainConfig, BrainEncoder, LatentSequence, desk_brain_config, paper_brain_config
from .dataset import (
    CorpusManifest,
    EEGSegment,
    SentenceRecord,
    SplitAssignment,
    SynthSpec,
    load_corpus,
    normalize_channels,
    split_by_sentence,
    synthesize_corpus,
    write_corpus,
)
from .lm import MiniLM, MiniLMConfig, Vocabulary, desk_lm_config, paper_lm_config
from .metrics import MetricsReport, OneHotProvider, bertscore, bleu_n, evaluate, rouge1
from .pipeline import AblationFlags, RunConfig, export_embeddings, run_ablation, run_pipeline
from .refine import PROMPT_PREFIX, RefinementConfig, refine_sentences
from .trainer import TrainPlan, cyclical_lr, finite_diff_check, pretrain_lm, stage1_align, stage2_finetune

__version__ = "0.1.0"
