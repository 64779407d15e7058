import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("FLUIDQ_NO_EXT", "") in ("", "0"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension(
            "fluidq._kernels",
            ["src/fluidq/_kernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O2", "-ffp-contract=off"],
        )],
        language_level=3,
    )

setup(ext_modules=ext_modules)
