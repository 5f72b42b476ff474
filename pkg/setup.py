"""Build script for the optional compiled chain-simulation kernel.

The package works without the extension (a pure-Python backend is selected
at import time), so a failed Cython build only costs speed.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ssmd._chains_fast",
                ["src/ssmd/_chains_fast.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"warning: building without compiled kernel ({exc})")

setup(ext_modules=ext_modules)
