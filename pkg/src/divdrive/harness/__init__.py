"""Collection, training, evaluation, interpretability and sweep orchestration."""
