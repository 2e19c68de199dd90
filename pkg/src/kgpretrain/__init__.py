"""Knowledge-guided language-model pre-training at desk scale.

Subpackages cover the full path from a Wikipedia-style dump to a probed
model: span extraction (corpus), a byte-level BPE codec (tokenizer),
seeded mask/replace corruption (corruption), a small autodiff engine and
AdamW (autodiff, optim), the shared transformer encoder with its three
heads (model), the joint training schemes (trainer), and cloze/QA
evaluation (evaluator).
"""

__version__ = "0.1.0"
