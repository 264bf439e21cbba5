"""Code-mixed English-Spanish tweet sentiment classification with a small
BERT-style encoder, MLM pre-training and ULMFiT fine-tuning."""

__version__ = "0.1.0"
