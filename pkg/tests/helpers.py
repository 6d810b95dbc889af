import os
from typing import Any, Dict

from base.run_config import RunConfig


def tiny_config(workdir: str, **sections: Dict[str, Any]) -> RunConfig:
    """Small clips and a narrow network so that whole runs take seconds on a CPU"""
    data = {"root": os.path.join(workdir, "data"), "image_size": [16, 16], "clip_length": 8,
            "num_studies": 12, "cines_per_study": 1, "clips_per_cine": 2, "noise_scale": 0.05}
    model = {"num_prototypes_per_class": 2, "feature_dim": 8, "trunk_widths": [4, 8],
             "spatial_strides": [2, 2], "temporal_strides": [1, 2]}
    train = {"epochs": 2, "batch_size": 4, "push_period": 1, "runs_root": os.path.join(workdir, "runs"),
             "deterministic": True}
    document = {"data": data, "model": model, "train": train, "eval": {"batch_size": 4}}
    for name, values in sections.items():
        document.setdefault(name, {}).update(values)
    return RunConfig.from_dict(document)
