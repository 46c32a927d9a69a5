"""Goal encoder, skill codebook, skill decoder and their training phases."""
from .classes import (
    SkillClassDataset,
    SkillClassSampler,
    SkillEnhancer,
    UsageReport,
    assign_skill_classes,
    codebook_usage_report,
    enhancement_step,
)
from .codebook import SkillCodebook, quantize, vq_loss
from .decoder import SkillDecoder, decode_actions
from .encoder import GoalEncoder, encode_goal
from .model import (
    SegmentBatch,
    SkillExtractor,
    SkillModel,
    aligned_windows,
    build_skill_model,
    extraction_step,
    sample_windows,
)

__all__ = [
    "SkillClassDataset",
    "SkillClassSampler",
    "SkillEnhancer",
    "UsageReport",
    "assign_skill_classes",
    "codebook_usage_report",
    "enhancement_step",
    "SkillCodebook",
    "quantize",
    "vq_loss",
    "SkillDecoder",
    "decode_actions",
    "GoalEncoder",
    "encode_goal",
    "SegmentBatch",
    "SkillExtractor",
    "SkillModel",
    "aligned_windows",
    "build_skill_model",
    "extraction_step",
    "sample_windows",
]
