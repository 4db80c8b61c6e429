"""Video classification with spatio-temporal focal modulation, written on numpy.

Modules: ``tensor`` (tape autodiff), ``focal`` (the modulation layer),
``network`` (four-stage backbone), ``distill`` (KD losses), ``training``,
``data`` (synthetic corpus and sampling), ``evaluate`` and ``cli``.
"""

__version__ = "0.1.0"
