"""seglens: a workbench for studying subword tokenization effects in
biomedical entity and relation extraction.

The package covers corpus handling with cross-validation folds, WordPiece
tokenization over pre-split words, subword-to-word embedding aggregation,
tokenization length statistics, character n-gram morphology profiles,
entity-representation similarity analysis, strict span-level scoring with
significance testing, and a small trainable joint tagger over frozen
embeddings.
"""

__version__ = "0.1.0"
