import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # sdist consumers without Cython get the pure-Python kernel
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("NUOTDR_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "nuotdr._kernel",
                ["src/nuotdr/_kernel.pyx"],
                include_dirs=[np.get_include()],
                # fp contraction would break bit-equality with the Python fallback
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
