"""Local HTTP model service: sentence embeddings, three-way NLI judgments,
and pairwise similarity matrices over the qeleak provider wire protocol.
"""

__version__ = "0.1.0"
