"""Cross-lingual contextualized phrase retrieval.

Pipeline stages: parallel-corpus ingestion, Model 1 word alignment with
symmetrization, consistent phrase-pair extraction, a contrastive phrase
encoder with a span-segmentation head, an exact inner-product index, and
retrieval-augmented translation prompt assembly.
"""

__version__ = "0.1.0"
