"""Distribution-aligned adversarial text attacks and detection-aware evaluation.

The package covers the full pipeline: fitting training-distribution
statistics and calibrating MSP / Mahalanobis-distance detectors, fine-tuning
low-rank adapters on a masked LM so its substitutions stay in-distribution,
running the greedy word-substitution search, and scoring any adversarial
corpus with detection-aware metrics.
"""

from .core import (AttackRecord, CampaignConfig, Example, load_dataset,
                   load_records, persist_records)
from .distribution import (DetectorCalibration, DetectorSuite, GaussianStats,
                           calibrate_threshold, detect, fit_gaussian, md, msp,
                           neg_msp)
from .losses import (BatchLossInputs, LossTrace, loss_dal, loss_fce, loss_md,
                     loss_msp, loss_nce)
from .finetune import (AdapterConfig, AdapterTrainState, MaskingPolicy,
                       finetune_dala, mask_batch, soft_adversarial_embedding)
from .attack import (CandidateList, MaskedLMCandidateGenerator, RankedToken,
                     attack_example, generate_candidates, rank_token_importance)
from .metrics import (CampaignSummary, HashingSentenceEncoder, compute_asr,
                      compute_dr, compute_nasr, percent_words,
                      semantic_similarity, summarize_records,
                      transfer_evaluate)
from .reporting import (BaselineImport, Campaign, StageError,
                        export_histograms, import_baseline, run_campaign)
from .victim import (BlackBoxVictim, PromptTemplate, TransportError,
                     WhiteBoxVictim, parse_label_completion,
                     templates_for_task)

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig", "AdapterTrainState", "AttackRecord", "BaselineImport",
    "BatchLossInputs", "BlackBoxVictim", "Campaign", "CampaignConfig",
    "CampaignSummary", "CandidateList", "DetectorCalibration", "DetectorSuite",
    "Example", "GaussianStats", "HashingSentenceEncoder", "LossTrace",
    "MaskedLMCandidateGenerator", "MaskingPolicy", "PromptTemplate",
    "RankedToken", "StageError", "TransportError", "WhiteBoxVictim",
    "attack_example", "calibrate_threshold", "compute_asr", "compute_dr",
    "compute_nasr", "detect", "export_histograms", "finetune_dala",
    "fit_gaussian", "generate_candidates", "import_baseline", "load_dataset",
    "load_records", "loss_dal", "loss_fce", "loss_md", "loss_msp", "loss_nce",
    "mask_batch", "md", "msp", "neg_msp", "parse_label_completion",
    "percent_words", "persist_records", "rank_token_importance",
    "run_campaign", "semantic_similarity", "soft_adversarial_embedding",
    "summarize_records", "templates_for_task", "transfer_evaluate",
]
