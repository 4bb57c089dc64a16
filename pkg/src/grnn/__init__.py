"""Frame-recurrent video super-resolution with Ghost-feature fusion, in plain numpy.

Submodules: ``tensor`` (conv kernels, resampling), ``autodiff`` (tape AD),
``ghost`` (Ghost blocks), ``cell`` (recurrent cell), ``data``, ``metrics``,
``train``, ``archive``, ``config`` and ``cli``.
"""

__version__ = "0.1.0"
