"""Build script: compiles the optional Cython kernel core.

The package works without the extension (pure-numpy fallback is selected
at import time), so any build failure here downgrades to a warning.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "pdrlm.kernels._ckernels",
                ["src/pdrlm/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"warning: skipping compiled kernels ({exc}); "
          "pure-python fallback will be used", file=sys.stderr)

setup(ext_modules=ext_modules)
