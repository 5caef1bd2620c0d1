import os

import numpy as np
from setuptools import Extension, setup

# PERHEAT_NO_EXT=1 skips the compiled core; the package then runs on the
# pure-Python kernels in perheat._pycore.
ext_modules = []
if not os.environ.get("PERHEAT_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "perheat._core",
                    ["src/perheat/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
