"""Two-stage radiology report generation over a synthetic radiograph corpus:
contrastive vision-text pretraining, disease-clue injection, cross-modal
clue interaction, and joint consistency + language-modeling fine-tuning,
with NLG and clinical-efficacy evaluation harnesses.
"""

__version__ = "0.1.0"

from .autograd import Tensor, grad_check  # noqa: F401
from .config import ModelConfig  # noqa: F401
