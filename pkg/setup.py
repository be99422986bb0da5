import os

import numpy as np
from setuptools import Extension, setup

# KLRSC_NO_EXT=1 installs the pure-Python package only
ext_modules = []
if os.environ.get("KLRSC_NO_EXT", "") not in ("1", "true", "yes"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("klrsc._ckernels", ["src/klrsc/_ckernels.pyx"],
                   include_dirs=[np.get_include()],
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                   extra_compile_args=["-O2"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
