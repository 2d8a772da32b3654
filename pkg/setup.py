"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile downgrades to a warning instead of
aborting the install.
"""

import sys

from setuptools import setup
from setuptools.errors import CCompilerError, ExecError, PlatformError


def cython_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "aircomm.kernels._compiled",
        ["src/aircomm/kernels/_compiled.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )


def run_setup(with_ext):
    setup(ext_modules=cython_extensions() if with_ext else [])


try:
    run_setup(with_ext=True)
except (CCompilerError, ExecError, PlatformError, SystemExit) as exc:
    sys.stderr.write(
        f"warning: compiled kernels unavailable ({exc}); "
        "installing with the pure-python fallback\n"
    )
    run_setup(with_ext=False)
