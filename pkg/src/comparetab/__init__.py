"""comparetab: build product comparison tables from catalogs and session logs.

The toolkit covers the full batch flow: behavioral (session) and textual
embeddings, cosine kNN candidate retrieval, unsupervised pair mining with
image-based cleaning and cluster-based augmentation, a Siamese substitute
classifier, diversity-aware property/display selection, and agreement
metrics for human preference studies.
"""

__version__ = "0.1.0"
