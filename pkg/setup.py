"""Build script: compiles the optional Cython kernel extension.

The extension is a pure speedup; if the build toolchain is missing the
package installs anyway and falls back to the numpy/scipy kernels.
"""

import warnings

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, otherwise install without it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # toolchain missing: fall back to pure python
            warnings.warn(f"skipping compiled kernels ({exc}); "
                          "mdgraph will use the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"skipping {ext.name} ({exc}); "
                          "mdgraph will use the numpy fallback")


def make_extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "mdgraph._kernels._hot",
        sources=["src/mdgraph/_kernels/_hot.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
