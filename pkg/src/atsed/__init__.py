"""Two-stage semi-supervised sound event detection built on a small numpy autodiff core.

Stage 1 trains an audio-tagging network whose clip-level outputs become
pseudo-weak labels for unlabeled clips; stage 2 trains a frequency dynamic
CRNN on strong, weak and pseudo-weak labels. Evaluation uses PSDS.
"""

__version__ = "0.1.0"
