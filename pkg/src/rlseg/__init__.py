"""Chan-Vese level sets, a recurrent level-set segmenter and an FCN baseline."""

__version__ = "0.1.0"
