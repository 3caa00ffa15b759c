"""Training-free class-expert template selection and fusion for dense segmentation."""

import json

from ._core import (
    IoError,
    ValidationError,
    average_classifier,
    cosine_logits,
    entropy,
    expert_quality,
    fuse,
    miou,
    read_tensor,
    select_experts,
    subset_classifier,
    templates,
    write_tensor,
)
from . import _core, extractor

__all__ = [
    "IoError",
    "ValidationError",
    "average_classifier",
    "cosine_logits",
    "entropy",
    "evaluate",
    "expert_quality",
    "extractor",
    "fuse",
    "generate_synthetic",
    "miou",
    "read_tensor",
    "select",
    "select_experts",
    "subset_classifier",
    "templates",
    "write_tensor",
]


def select(manifest, metric="entropy", top_n=4, logit_scale=100.0, resolution="grid",
           subsample=None, seed=0, threads=0):
    """Run expert selection over a manifest; returns the ExpertSet as a dict."""
    return json.loads(_core.select_json(str(manifest), metric, top_n, logit_scale, resolution,
                                        subsample, seed, threads))


def evaluate(manifest, experts=None, strategy="highest", logit_scale=100.0, resolution="label", threads=0):
    """Baseline mIoU and, when an ExpertSet dict is given, the fused mIoU."""
    payload = None if experts is None else json.dumps(experts)
    return json.loads(_core.evaluate_json(str(manifest), payload, strategy, logit_scale, resolution, threads))


def generate_synthetic(out_dir, **spec):
    """Write a synthetic dataset; keyword arguments follow the synth spec JSON fields."""
    return json.loads(_core.generate_synthetic_json(json.dumps(spec), str(out_dir)))
