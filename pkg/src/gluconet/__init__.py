"""Blood-glucose forecasting with frequency-split decomposition, sparse-input
reconstruction and teacher-student distillation."""

__version__ = "0.1.0"
