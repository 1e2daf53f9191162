"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a pure-numpy
fallback is selected at import time), so a missing compiler or Cython
only costs speed, never the install.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible; warn and continue if not."""

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
        print(f"WARNING: shgt.kernels._compiled not built ({exc}); "
              "falling back to pure-numpy kernels")


def extensions():
    if os.environ.get("SHGT_NO_EXT") == "1":
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("WARNING: Cython not available; building without compiled kernels")
        return []
    ext = Extension(
        "shgt.kernels._compiled",
        ["src/shgt/kernels/_compiled.pyx"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
