"""Build script: compiles the optional Cython warp kernels.

The package works without the extension (a pure-numpy fallback is selected
at import time); the extension is only a speedup for the per-pixel
interpolation loops.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "diffeometer._kernels.warp_cy",
                ["src/diffeometer/_kernels/warp_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
