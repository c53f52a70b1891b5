"""Label-efficient freezing-of-gait detection from a single triaxial accelerometer.

Masked-reconstruction pretraining of a 1D-CNN encoder, class-balancing
differential-hop windowing, frozen-encoder fine-tuning, subject-independent
evaluation and activity-gated streaming inference.
"""

__version__ = "0.1.0"
