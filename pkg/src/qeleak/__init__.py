"""qeleak: knowledge-leakage audit for LLM-based query expansion in fact
verification. Expands claims into pseudo-documents, retrieves evidence
lexically and densely, detects generated sentences entailed by gold
evidence, and reports metrics stratified by that match condition.
"""

__version__ = "0.1.0"
