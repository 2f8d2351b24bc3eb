"""Multitask explanation of cyberbullying memes.

Generates a textual rationale (the meme tokens that justify the bully
judgment) together with a binary visual-evidence mask, from a shared
cross-modal neck over frozen dual-encoder features. Ships the corpus
tooling, evaluation metrics and annotator-agreement toolkit that go
with the model.
"""

__version__ = "0.1.0"
