"""Build shim for the compiled risk-kernel core.

The extension is optional: if Cython or a C compiler is unavailable the
package installs pure, and riskpath.kernels selects the numpy backend at
import time.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "riskpath._riskcore",
                ["src/riskpath/_riskcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
