import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

NUMPY = dict(include_dirs=[np.get_include()],
             define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])

extensions = [
    # strict IEEE arithmetic so the recurrence matches the numpy fallback bit for bit
    Extension("scno._kernels._lif", ["src/scno/_kernels/_lif.pyx"],
              extra_compile_args=["-O3", "-ffp-contract=off"], optional=True, **NUMPY),
    Extension("scno._kernels._gelu", ["src/scno/_kernels/_gelu.pyx"],
              extra_compile_args=["-O3", "-march=native", "-ffast-math"],
              extra_link_args=["-lmvec", "-lm"], optional=True, **NUMPY),
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
