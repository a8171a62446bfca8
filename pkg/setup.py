"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed.  Set GRAPHDRO_PURE=1
to skip the extension build entirely.
"""

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Degrade to a pure-Python install when the extension cannot build."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"WARNING: building graphdro._kernels failed ({exc!r}); "
            "installing with the pure-Python kernels only.",
            file=sys.stderr,
        )


ext_modules = []
cmdclass = {}
if os.environ.get("GRAPHDRO_PURE") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "graphdro._kernels",
                    ["src/graphdro/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "language_level": "3",
            },
        )
        cmdclass = {"build_ext": optional_build_ext}
    except ImportError as exc:
        print(f"WARNING: Cython/numpy unavailable ({exc}); skipping extension.", file=sys.stderr)

setup(ext_modules=ext_modules, cmdclass=cmdclass)
