"""Noisy-label training laboratory.

Thin python surface over the C++ core: glyph dataset generation, label-noise
injection, weak/strong augmentation policies, mixture-model loss analysis and
the full experiment harness.
"""

from _nlab import (
    BmmFit2,
    Dataset,
    GmmFit2,
    NlabError,
    augment_strong,
    augment_weak,
    bmm_posterior,
    co_divide,
    fit_bmm2,
    fit_gmm2,
    generate_glyphs,
    gmm_posterior,
    inject_asymmetric,
    inject_symmetric,
    load_idx,
    normalize_losses,
    r_schedule,
    refine_label,
    run_experiment,
    save_idx,
    separation_auc,
    sharpen,
    warmup_probe,
)

__all__ = [
    "BmmFit2",
    "Dataset",
    "GmmFit2",
    "NlabError",
    "augment_strong",
    "augment_weak",
    "bmm_posterior",
    "co_divide",
    "fit_bmm2",
    "fit_gmm2",
    "generate_glyphs",
    "gmm_posterior",
    "inject_asymmetric",
    "inject_symmetric",
    "load_idx",
    "normalize_losses",
    "r_schedule",
    "refine_label",
    "run_experiment",
    "save_idx",
    "separation_auc",
    "sharpen",
    "warmup_probe",
]
