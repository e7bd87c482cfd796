"""Counting kernels used by the rule miner and the bootstrap test.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Set ``LLMFEAT_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("LLMFEAT_PURE_PYTHON"):
    from ._kernels_py import bootstrap_counts, chi2_batch, extension_tally

    BACKEND = "python"
else:
    try:
        from ._kernels import bootstrap_counts, chi2_batch, extension_tally

        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import bootstrap_counts, chi2_batch, extension_tally

        BACKEND = "python"

__all__ = ["BACKEND", "bootstrap_counts", "chi2_batch", "extension_tally"]
