"""Instruction alignment scoring and autonomous instruction optimization
for multi-modal language models, with a desk-scale toy backend."""

__version__ = "0.1.0"
