"""Builds the optional compiled kernel extension.

The package works without it (a pure-Python/numpy fallback is selected at
import time), so a failed extension build is downgraded to a warning.
"""

import sys

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "npicost.kernels._speedups",
                ["src/npicost/kernels/_speedups.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no FMA contraction: compiled results must be bit-identical
                # to the pure-Python lane
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"npicost: skipping compiled kernels ({exc!r})", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
